//! Lexing of expression conditions and infix → postfix conversion.

use super::token::{Operator, Token, TokenKind};
use super::{DslError, Field};

/// A token together with the character offset it started at.
pub(crate) type Spanned = (usize, Token);

/// Lexes an expression condition into infix-ordered tokens.
pub fn tokenize(text: &str) -> Result<Vec<Token>, DslError> {
    Ok(tokenize_spanned(text)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

pub(crate) fn tokenize_spanned(text: &str) -> Result<Vec<Spanned>, DslError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (offset, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let lexeme: String = chars[start..i].iter().map(|(_, c)| c).collect();
            out.push((offset, Token::variable(lexeme)));
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            let lexeme: String = chars[start..i].iter().map(|(_, c)| c).collect();
            let token = Token::number(lexeme.clone()).ok_or_else(|| {
                DslError::syntax(
                    Field::Condition,
                    offset,
                    format!("malformed number `{lexeme}`"),
                )
            })?;
            out.push((offset, token));
            continue;
        }
        match c {
            '(' => {
                out.push((offset, Token::left_bracket()));
                i += 1;
            }
            ')' => {
                out.push((offset, Token::right_bracket()));
                i += 1;
            }
            _ => {
                let next = chars.get(i + 1).map(|(_, c)| *c);
                let two: Option<String> = next.map(|n| [c, n].iter().collect());
                if let Some(op) = two.as_deref().and_then(Operator::from_symbol) {
                    out.push((offset, Token::operator(op)));
                    i += 2;
                } else if let Some(op) = Operator::from_symbol(c.encode_utf8(&mut [0; 4])) {
                    out.push((offset, Token::operator(op)));
                    i += 1;
                } else {
                    return Err(DslError::syntax(
                        Field::Condition,
                        offset,
                        format!("unexpected character `{c}`"),
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Converts an infix token list to postfix order with the shunting-yard
/// algorithm. Error offsets refer to token positions in `tokens`.
pub fn infix_to_postfix(tokens: &[Token]) -> Result<Vec<Token>, DslError> {
    let spanned: Vec<Spanned> = tokens.iter().cloned().enumerate().collect();
    postfix_spanned(&spanned, tokens.len())
}

pub(crate) fn postfix_spanned(
    tokens: &[Spanned],
    end_offset: usize,
) -> Result<Vec<Token>, DslError> {
    let err =
        |offset: usize, msg: &str| DslError::syntax(Field::Condition, offset, msg.to_string());
    let mut output: Vec<Token> = Vec::with_capacity(tokens.len());
    let mut stack: Vec<(usize, Token)> = Vec::new();
    // true when the next token must start an operand (value or '(')
    let mut expect_operand = true;

    for (offset, token) in tokens {
        match token.kind {
            TokenKind::Variable | TokenKind::Number | TokenKind::Text => {
                if !expect_operand {
                    return Err(err(*offset, "expected an operator"));
                }
                output.push(token.clone());
                expect_operand = false;
            }
            TokenKind::LeftBracket => {
                if !expect_operand {
                    return Err(err(*offset, "expected an operator before `(`"));
                }
                stack.push((*offset, token.clone()));
            }
            TokenKind::RightBracket => {
                if expect_operand {
                    return Err(err(*offset, "expected an operand before `)`"));
                }
                loop {
                    match stack.pop() {
                        Some((_, t)) if t.kind == TokenKind::LeftBracket => break,
                        Some((_, t)) => output.push(t),
                        None => return Err(err(*offset, "unbalanced `)`")),
                    }
                }
            }
            TokenKind::Operator => {
                if expect_operand {
                    return Err(err(*offset, "expected an operand"));
                }
                let op = token
                    .as_operator()
                    .ok_or_else(|| err(*offset, "unknown operator"))?;
                while let Some((_, top)) = stack.last() {
                    match top.as_operator() {
                        Some(top_op) if top_op.precedence() >= op.precedence() => {
                            output.push(stack.pop().unwrap().1);
                        }
                        _ => break,
                    }
                }
                stack.push((*offset, token.clone()));
                expect_operand = true;
            }
        }
    }
    if expect_operand {
        return Err(err(end_offset, "expression ends without an operand"));
    }
    while let Some((offset, t)) = stack.pop() {
        if t.kind == TokenKind::LeftBracket {
            return Err(err(offset, "unbalanced `(`"));
        }
        output.push(t);
    }
    Ok(output)
}

/// Checks that `program` is a well-formed postfix sequence: running depth
/// never drops below one after the first token and ends at exactly one.
pub fn is_well_formed_postfix(program: &[Token]) -> bool {
    let mut depth: i64 = 0;
    for token in program {
        match token.kind {
            TokenKind::Operator => depth -= 1,
            TokenKind::LeftBracket | TokenKind::RightBracket => return false,
            _ => depth += 1,
        }
        if depth < 1 {
            return false;
        }
    }
    depth == 1
}

/// Renders a postfix program back to a fully bracketed infix string.
pub fn postfix_to_infix(program: &[Token]) -> Option<String> {
    let mut stack: Vec<String> = Vec::new();
    for token in program {
        match token.kind {
            TokenKind::Operator => {
                let rhs = stack.pop()?;
                let lhs = stack.pop()?;
                stack.push(format!("({lhs} {} {rhs})", token.value));
            }
            TokenKind::LeftBracket | TokenKind::RightBracket => return None,
            _ => stack.push(token.value.clone()),
        }
    }
    if stack.len() == 1 {
        stack.pop()
    } else {
        None
    }
}
