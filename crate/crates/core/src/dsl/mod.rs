//! The rule language.
//!
//! A rule is three text fields:
//!
//! ```text
//! Datasource: tem{1, Portable, temperature}
//! Condition:  tem > 22.1
//! Action:     WebSocket: 1,rule Matched, temperature is $tem!;Mqtt: localhost, 1883, admin, secret, test, control temperature
//! ```
//!
//! [`parse_rule`] turns them into a [`CompiledRule`]: the outer symbol table
//! (symbol → [`Index`]), a condition type plus token program, and the
//! action list. Everything here is pure.

mod expr;
mod token;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{infix_to_postfix, is_well_formed_postfix, postfix_to_infix, tokenize};
pub use token::{Operator, Token, TokenKind};

pub(crate) use token::is_identifier;

/// Parses a finite decimal value (`inf`/`nan` rejected).
pub fn parse_decimal_value(s: &str) -> Option<f64> {
    token::parse_decimal(s)
}

/// Condition type assigned to expression conditions.
pub const EXPRESSION_CONDITION: &str = "__expr";

/// Period used when a rule is submitted without one.
pub const DEFAULT_PERIOD_SECONDS: u64 = 5;

/// Which rule field an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Datasource,
    Condition,
    Action,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Datasource => "datasource",
            Field::Condition => "condition",
            Field::Action => "action",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error in {field} field at offset {offset}: {message}")]
    Syntax {
        field: Field,
        offset: usize,
        message: String,
    },
    #[error("undeclared symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
}

impl DslError {
    pub(crate) fn syntax(field: Field, offset: usize, message: impl Into<String>) -> Self {
        DslError::Syntax {
            field,
            offset,
            message: message.into(),
        }
    }
}

/// The raw text of a rule as submitted by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleText {
    pub datasource: String,
    pub condition: String,
    pub action: String,
}

impl RuleText {
    pub fn new(
        datasource: impl Into<String>,
        condition: impl Into<String>,
        action: impl Into<String>,
    ) -> Self {
        RuleText {
            datasource: datasource.into(),
            condition: condition.into(),
            action: action.into(),
        }
    }
}

/// Identity of one datasource: a single attribute of a single device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Index {
    pub device_id: String,
    pub device_type: String,
    pub attribute: String,
}

impl Index {
    pub fn new(
        device_id: impl Into<String>,
        device_type: impl Into<String>,
        attribute: impl Into<String>,
    ) -> Self {
        Index {
            device_id: device_id.into(),
            device_type: device_type.into(),
            attribute: attribute.into(),
        }
    }

    /// Key used by the attribute filter. Components are joined with the
    /// ASCII unit separator, which cannot appear in a parsed component.
    pub fn filter_key(&self) -> String {
        filter_key(&self.device_id, &self.device_type, &self.attribute)
    }
}

pub fn filter_key(device_id: &str, device_type: &str, attribute: &str) -> String {
    let mut key = String::with_capacity(device_id.len() + device_type.len() + attribute.len() + 2);
    key.push_str(device_id);
    key.push('\u{1f}');
    key.push_str(device_type);
    key.push('\u{1f}');
    key.push_str(attribute);
    key
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{}, {}, {}}}",
            self.device_id, self.device_type, self.attribute
        )
    }
}

/// One `symbol{device_id, device_type, attribute}` clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasourceDecl {
    pub symbol: String,
    pub index: Index,
}

/// One `action_type: params` clause. `params` is kept verbatim; `$symbol`
/// references are substituted at match time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub action_type: String,
    pub params: String,
}

impl Action {
    /// Symbols referenced with `$name` in the parameter string, in order of
    /// appearance.
    pub fn referenced_symbols(&self) -> Vec<&str> {
        symbol_references(&self.params)
            .map(|(_, name)| name)
            .collect()
    }
}

/// Yields `(byte offset of '$', name)` for every `$identifier` in `text`.
/// A `$` not followed by an identifier start is literal text.
pub(crate) fn symbol_references(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        while pos < bytes.len() {
            if bytes[pos] == b'$' {
                let start = pos + 1;
                let mut end = start;
                if end < bytes.len() && (bytes[end].is_ascii_alphabetic() || bytes[end] == b'_') {
                    while end < bytes.len()
                        && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                    {
                        end += 1;
                    }
                    let at = pos;
                    pos = end;
                    return Some((at, &text[start..end]));
                }
            }
            pos += 1;
        }
        None
    })
}

/// Result of [`classify_condition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionKind {
    Expression,
    Functional(String),
}

/// A rule ready for match-function generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledRule {
    /// Outer symbol table, in declaration order.
    pub ost: Vec<DatasourceDecl>,
    pub condition_type: String,
    /// Postfix program for expressions, flat argument list for functional
    /// conditions.
    pub program: Vec<Token>,
    pub actions: Vec<Action>,
    pub period_seconds: u64,
}

impl CompiledRule {
    pub fn with_period(mut self, period_seconds: u64) -> Self {
        self.period_seconds = period_seconds.max(1);
        self
    }

    pub fn is_expression(&self) -> bool {
        self.condition_type == EXPRESSION_CONDITION
    }

    pub fn index_of(&self, symbol: &str) -> Option<&Index> {
        self.ost
            .iter()
            .find(|d| d.symbol == symbol)
            .map(|d| &d.index)
    }

    /// Renders the rule back to canonical text. Expressions come back fully
    /// bracketed; re-parsing the result yields an equal `CompiledRule`.
    pub fn to_rule_text(&self) -> RuleText {
        let datasource = self
            .ost
            .iter()
            .map(|d| {
                format!(
                    "{}{{{}, {}, {}}}",
                    d.symbol, d.index.device_id, d.index.device_type, d.index.attribute
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        let condition = if self.is_expression() {
            postfix_to_infix(&self.program).unwrap_or_default()
        } else {
            let args = self
                .program
                .iter()
                .map(|t| t.value.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            format!("{}: {}", self.condition_type, args)
        };
        let action = self
            .actions
            .iter()
            .map(|a| format!("{}: {}", a.action_type, a.params))
            .collect::<Vec<_>>()
            .join(";");
        RuleText {
            datasource,
            condition,
            action,
        }
    }
}

/// Compiles the three rule fields. Rules get [`DEFAULT_PERIOD_SECONDS`];
/// use [`CompiledRule::with_period`] to override.
pub fn parse_rule(text: &RuleText) -> Result<CompiledRule, DslError> {
    let ost = parse_datasource_field(&text.datasource)?;
    let declared: HashSet<&str> = ost.iter().map(|d| d.symbol.as_str()).collect();

    let (condition_type, program) = match classify_condition(&text.condition) {
        ConditionKind::Expression => {
            if text.condition.trim().is_empty() {
                return Err(DslError::syntax(Field::Condition, 0, "empty condition"));
            }
            let infix = expr::tokenize_spanned(&text.condition)?;
            if let Some((offset, t)) = infix.iter().find(|(_, t)| t.kind == TokenKind::Text) {
                return Err(DslError::syntax(
                    Field::Condition,
                    *offset,
                    format!("unexpected `{t}`"),
                ));
            }
            let program = expr::postfix_spanned(&infix, text.condition.len())?;
            for token in &program {
                if token.kind == TokenKind::Variable && !declared.contains(token.value.as_str()) {
                    return Err(DslError::UndeclaredSymbol(token.value.clone()));
                }
            }
            (EXPRESSION_CONDITION.to_string(), program)
        }
        ConditionKind::Functional(_) => parse_functional_condition(&text.condition, &declared)?,
    };

    let actions = parse_action_field(&text.action)?;
    for action in &actions {
        for name in action.referenced_symbols() {
            if !declared.contains(name) {
                return Err(DslError::UndeclaredSymbol(name.to_string()));
            }
        }
    }

    Ok(CompiledRule {
        ost,
        condition_type,
        program,
        actions,
        period_seconds: DEFAULT_PERIOD_SECONDS,
    })
}

/// Parses `name{device_id, device_type, attribute}` clauses separated by
/// semicolons. A trailing semicolon is tolerated; at least one clause is
/// required.
pub fn parse_datasource_field(text: &str) -> Result<Vec<DatasourceDecl>, DslError> {
    let err = |offset: usize, msg: String| DslError::syntax(Field::Datasource, offset, msg);
    let mut decls: Vec<DatasourceDecl> = Vec::new();
    let mut clause_start = 0;
    for clause in text.split(';') {
        let base = clause_start;
        clause_start += clause.len() + 1;
        if clause.trim().is_empty() {
            continue;
        }
        let lead = clause.len() - clause.trim_start().len();
        let body = clause.trim();
        let open = body
            .find('{')
            .ok_or_else(|| err(base + lead, "expected `{` after datasource symbol".into()))?;
        let symbol = body[..open].trim();
        if !is_identifier(symbol) {
            return Err(err(
                base + lead,
                format!("invalid datasource symbol `{symbol}`"),
            ));
        }
        if !body.ends_with('}') {
            return Err(err(
                base + lead + body.len(),
                "expected `}` closing the datasource".into(),
            ));
        }
        let inner = &body[open + 1..body.len() - 1];
        if inner.contains(['{', '}']) {
            return Err(err(
                base + lead + open,
                "nested braces in datasource".into(),
            ));
        }
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(err(
                base + lead + open,
                format!(
                    "expected device_id, device_type, attribute; found {} component(s)",
                    parts.len()
                ),
            ));
        }
        if let Some(pos) = parts.iter().position(|p| p.is_empty()) {
            return Err(err(
                base + lead + open,
                format!("datasource component {} is empty", pos + 1),
            ));
        }
        if decls.iter().any(|d| d.symbol == symbol) {
            return Err(DslError::DuplicateSymbol(symbol.to_string()));
        }
        decls.push(DatasourceDecl {
            symbol: symbol.to_string(),
            index: Index::new(parts[0], parts[1], parts[2]),
        });
    }
    if decls.is_empty() {
        return Err(err(0, "at least one datasource is required".into()));
    }
    Ok(decls)
}

/// Decides whether a condition is an expression or a functional condition
/// (`Type: arg, arg, ...`).
pub fn classify_condition(text: &str) -> ConditionKind {
    if let Some(colon) = text.find(':') {
        let head = text[..colon].trim();
        if is_identifier(head) {
            return ConditionKind::Functional(head.to_string());
        }
    }
    ConditionKind::Expression
}

/// Parses `Type: arg, arg, ...`. Identifier arguments must be declared
/// symbols and become variables; decimals become numbers; anything else is
/// kept as text. Arity is checked later by the condition's matcher.
pub fn parse_functional_condition(
    text: &str,
    declared: &HashSet<&str>,
) -> Result<(String, Vec<Token>), DslError> {
    let err = |offset: usize, msg: String| DslError::syntax(Field::Condition, offset, msg);
    let colon = text
        .find(':')
        .ok_or_else(|| err(0, "expected `Type:` prefix".into()))?;
    let condition_type = text[..colon].trim();
    if !is_identifier(condition_type) {
        return Err(err(0, format!("invalid condition type `{condition_type}`")));
    }
    if condition_type == EXPRESSION_CONDITION {
        return Err(err(0, format!("`{EXPRESSION_CONDITION}` is reserved")));
    }
    let mut tokens = Vec::new();
    let mut offset = colon + 1;
    for raw in text[colon + 1..].split(',') {
        let arg = raw.trim();
        let arg_offset = offset + (raw.len() - raw.trim_start().len());
        offset += raw.len() + 1;
        if arg.is_empty() {
            return Err(err(arg_offset, "empty argument".into()));
        }
        let token = if is_identifier(arg) {
            if !declared.contains(arg) {
                return Err(DslError::UndeclaredSymbol(arg.to_string()));
            }
            Token::variable(arg)
        } else if let Some(number) = Token::number(arg) {
            number
        } else {
            Token::text(arg)
        };
        tokens.push(token);
    }
    Ok((condition_type.to_string(), tokens))
}

/// Parses `type: params` clauses separated by semicolons. Parameters are
/// trimmed and otherwise kept verbatim.
pub fn parse_action_field(text: &str) -> Result<Vec<Action>, DslError> {
    let err = |offset: usize, msg: String| DslError::syntax(Field::Action, offset, msg);
    let mut actions = Vec::new();
    let mut clause_start = 0;
    for clause in text.split(';') {
        let base = clause_start;
        clause_start += clause.len() + 1;
        if clause.trim().is_empty() {
            continue;
        }
        let lead = clause.len() - clause.trim_start().len();
        let colon = clause
            .find(':')
            .ok_or_else(|| err(base + lead, "expected `:` after action type".into()))?;
        let action_type = clause[..colon].trim();
        if !is_identifier(action_type) {
            return Err(err(
                base + lead,
                format!("invalid action type `{action_type}`"),
            ));
        }
        actions.push(Action {
            action_type: action_type.to_string(),
            params: clause[colon + 1..].trim().to_string(),
        });
    }
    if actions.is_empty() {
        return Err(err(0, "at least one action is required".into()));
    }
    Ok(actions)
}
