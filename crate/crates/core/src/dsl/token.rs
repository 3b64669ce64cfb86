use std::fmt;

use serde::{Deserialize, Serialize};

/// Lexical category of a [`Token`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Variable,
    Number,
    Operator,
    LeftBracket,
    RightBracket,
    Text,
}

/// A typed lexical unit of a condition.
///
/// `value` keeps the lexeme verbatim. `real_num` is only ever set for
/// numbers (at lex time) and variables (once resolved against an inner
/// symbol table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub value: String,
    pub real_num: Option<f64>,
}

impl Token {
    pub fn variable(name: impl Into<String>) -> Self {
        Token {
            kind: TokenKind::Variable,
            value: name.into(),
            real_num: None,
        }
    }

    /// Builds a number token from its lexeme. Returns `None` if the lexeme
    /// is not a finite decimal.
    pub fn number(lexeme: impl Into<String>) -> Option<Self> {
        let value = lexeme.into();
        let n = parse_decimal(&value)?;
        Some(Token {
            kind: TokenKind::Number,
            value,
            real_num: Some(n),
        })
    }

    pub fn operator(op: Operator) -> Self {
        Token {
            kind: TokenKind::Operator,
            value: op.symbol().to_string(),
            real_num: None,
        }
    }

    pub fn left_bracket() -> Self {
        Token {
            kind: TokenKind::LeftBracket,
            value: "(".into(),
            real_num: None,
        }
    }

    pub fn right_bracket() -> Self {
        Token {
            kind: TokenKind::RightBracket,
            value: ")".into(),
            real_num: None,
        }
    }

    pub fn text(value: impl Into<String>) -> Self {
        Token {
            kind: TokenKind::Text,
            value: value.into(),
            real_num: None,
        }
    }

    /// The operator this token denotes, if it is an operator token.
    pub fn as_operator(&self) -> Option<Operator> {
        match self.kind {
            TokenKind::Operator => Operator::from_symbol(&self.value),
            _ => None,
        }
    }

    /// A copy of this variable token with its value filled in.
    pub fn resolved(&self, value: f64) -> Self {
        Token {
            kind: self.kind,
            value: self.value.clone(),
            real_num: Some(value),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

/// Binary operators accepted in expression conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
    And,
    Or,
}

impl Operator {
    pub const ALL: [Operator; 12] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Gt,
        Operator::Lt,
        Operator::Ge,
        Operator::Le,
        Operator::Eq,
        Operator::Ne,
        Operator::And,
        Operator::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Div => "/",
            Operator::Gt => ">",
            Operator::Lt => "<",
            Operator::Ge => ">=",
            Operator::Le => "<=",
            Operator::Eq => "==",
            Operator::Ne => "!=",
            Operator::And => "&",
            Operator::Or => "|",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Operator::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Binding strength; higher binds tighter. All operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            Operator::Mul | Operator::Div => 5,
            Operator::Add | Operator::Sub => 4,
            Operator::Gt
            | Operator::Lt
            | Operator::Ge
            | Operator::Le
            | Operator::Eq
            | Operator::Ne => 3,
            Operator::And => 2,
            Operator::Or => 1,
        }
    }
}

/// Parses a finite decimal literal, rejecting `inf`/`nan` spellings.
pub(crate) fn parse_decimal(s: &str) -> Option<f64> {
    let t = s.trim();
    let body = t.strip_prefix(['-', '+']).unwrap_or(t);
    if body.is_empty() || !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    t.parse::<f64>().ok().filter(|n| n.is_finite())
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
