use std::fmt;

use crate::dsl::{Operator, Token, TokenKind};

use super::{Ist, MatchError};

/// Result of evaluating an expression program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Bool(bool),
    Number(f64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
        }
    }
}

/// Stack evaluation of a postfix program. Variables take their value from
/// `ist` as they are pushed.
pub fn eval_postfix(program: &[Token], ist: &Ist) -> Result<Value, MatchError> {
    let mut stack: Vec<Value> = Vec::with_capacity(program.len());
    for token in program {
        match token.kind {
            TokenKind::Number => {
                let n = token.real_num.ok_or(MatchError::MalformedProgram)?;
                stack.push(Value::Number(n));
            }
            TokenKind::Variable => {
                let sample = ist
                    .get(&token.value)
                    .ok_or_else(|| MatchError::UnresolvedVariable(token.value.clone()))?;
                stack.push(Value::Number(sample.value));
            }
            TokenKind::Operator => {
                let op = token.as_operator().ok_or(MatchError::MalformedProgram)?;
                let rhs = stack.pop().ok_or(MatchError::MalformedProgram)?;
                let lhs = stack.pop().ok_or(MatchError::MalformedProgram)?;
                stack.push(apply(op, lhs, rhs)?);
            }
            TokenKind::Text | TokenKind::LeftBracket | TokenKind::RightBracket => {
                return Err(MatchError::MalformedProgram);
            }
        }
    }
    match (stack.pop(), stack.is_empty()) {
        (Some(v), true) => Ok(v),
        _ => Err(MatchError::MalformedProgram),
    }
}

pub fn apply(op: Operator, lhs: Value, rhs: Value) -> Result<Value, MatchError> {
    use Operator::*;
    use Value::*;
    let mismatch = || MatchError::TypeMismatch {
        op: op.symbol(),
        lhs,
        rhs,
    };
    Ok(match (op, lhs, rhs) {
        (Add, Number(a), Number(b)) => Number(a + b),
        (Sub, Number(a), Number(b)) => Number(a - b),
        (Mul, Number(a), Number(b)) => Number(a * b),
        (Div, Number(_), Number(b)) if b == 0.0 => return Err(MatchError::DivisionByZero),
        (Div, Number(a), Number(b)) => Number(a / b),
        (Gt, Number(a), Number(b)) => Bool(a > b),
        (Lt, Number(a), Number(b)) => Bool(a < b),
        (Ge, Number(a), Number(b)) => Bool(a >= b),
        (Le, Number(a), Number(b)) => Bool(a <= b),
        (Eq, Number(a), Number(b)) => Bool(a == b),
        (Ne, Number(a), Number(b)) => Bool(a != b),
        (Eq, Bool(a), Bool(b)) => Bool(a == b),
        (Ne, Bool(a), Bool(b)) => Bool(a != b),
        (And, Bool(a), Bool(b)) => Bool(a && b),
        (Or, Bool(a), Bool(b)) => Bool(a || b),
        _ => return Err(mismatch()),
    })
}

/// Matcher for expression conditions: the program must evaluate to a
/// boolean.
pub fn fm_expression(ist: &Ist, program: &[Token]) -> Result<bool, MatchError> {
    match eval_postfix(program, ist)? {
        Value::Bool(b) => Ok(b),
        Value::Number(n) => Err(MatchError::NonBooleanCondition(n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{infix_to_postfix, tokenize};

    fn program(text: &str) -> Vec<Token> {
        infix_to_postfix(&tokenize(text).unwrap()).unwrap()
    }

    fn ist(pairs: &[(&str, f64)]) -> Ist {
        Ist::from_values(pairs.iter().map(|(k, v)| (k.to_string(), *v)))
    }

    #[test]
    fn threshold_strictly_greater() {
        let p = program("tem > 22.1");
        assert_eq!(
            eval_postfix(&p, &ist(&[("tem", 23.0)])).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(
            eval_postfix(&p, &ist(&[("tem", 22.1)])).unwrap(),
            Value::Bool(false)
        );
    }

    #[test]
    fn arithmetic() {
        assert_eq!(
            eval_postfix(&program("5 + 3"), &Ist::default()).unwrap(),
            Value::Number(8.0)
        );
        assert_eq!(
            eval_postfix(&program("(2 + 3) * 4 - 6 / 3"), &Ist::default()).unwrap(),
            Value::Number(18.0)
        );
    }

    #[test]
    fn linkage_condition_cells() {
        let p = program("(tem_2 > 25.3) & (tem_1 > tem_2 + 3)");
        let on = ist(&[("tem_2", 26.0), ("tem_1", 29.5)]);
        let off = ist(&[("tem_2", 26.0), ("tem_1", 28.0)]);
        assert_eq!(eval_postfix(&p, &on).unwrap(), Value::Bool(true));
        assert_eq!(eval_postfix(&p, &off).unwrap(), Value::Bool(false));
    }

    #[test]
    fn evaluation_errors() {
        assert!(matches!(
            eval_postfix(&program("1 & 2"), &Ist::default()),
            Err(MatchError::TypeMismatch { op: "&", .. })
        ));
        assert!(matches!(
            eval_postfix(&program("(1 > 0) + 2"), &Ist::default()),
            Err(MatchError::TypeMismatch { .. })
        ));
        assert_eq!(
            eval_postfix(&program("1 / 0"), &Ist::default()),
            Err(MatchError::DivisionByZero)
        );
        assert_eq!(
            eval_postfix(&program("x > 1"), &Ist::default()),
            Err(MatchError::UnresolvedVariable("x".into()))
        );
        assert_eq!(
            eval_postfix(&tokenize("1 2").unwrap(), &Ist::default()),
            Err(MatchError::MalformedProgram)
        );
        assert_eq!(
            eval_postfix(&[], &Ist::default()),
            Err(MatchError::MalformedProgram)
        );
    }

    #[test]
    fn expression_matcher_requires_boolean() {
        assert_eq!(
            fm_expression(&ist(&[("tem", 23.4)]), &program("tem > 22.1")),
            Ok(true)
        );
        assert_eq!(
            fm_expression(&Ist::default(), &program("5 + 3")),
            Err(MatchError::NonBooleanCondition(8.0))
        );
        let p = program("(a > 1) | (b > 1)");
        let truth = [
            ((0.0, 0.0), false),
            ((0.0, 2.0), true),
            ((2.0, 0.0), true),
            ((2.0, 2.0), true),
        ];
        for ((a, b), expected) in truth {
            assert_eq!(fm_expression(&ist(&[("a", a), ("b", b)]), &p), Ok(expected));
        }
    }

    #[test]
    fn boolean_equality() {
        let p = program("(a > 1) == (b > 1)");
        assert_eq!(fm_expression(&ist(&[("a", 0.0), ("b", 0.0)]), &p), Ok(true));
        assert_eq!(
            fm_expression(&ist(&[("a", 2.0), ("b", 0.0)]), &p),
            Ok(false)
        );
    }
}
