mod common;

use std::collections::HashMap;

use iotrule::dsb::{Dsb, DsbConfig, DsbError, Lookup, UpdateOutcome};
use iotrule::dsl::{infix_to_postfix, is_well_formed_postfix, tokenize, TokenKind};
use iotrule::matcher::{eval_postfix, Ist, MatchError, Value};
use iotrule::{parse_rule, Index, RuleText};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_expr, render, Oracle, OracleValue, VARIABLES};

const DATASOURCE: &str = "a{d1, T, x}; b{d2, T, x}; c{d3, T, y}; d{d4, U, z}; e{d5, U, w}";

fn rendered(seed: u64, depth: u32) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expr = random_expr(&mut rng, depth);
    render(&expr, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rule_text_round_trips(seed in any::<u64>(), depth in 1u32..=6) {
        let condition = rendered(seed, depth);
        let text = RuleText::new(DATASOURCE, condition.clone(), "log: a=$a b=$b");
        let compiled = parse_rule(&text).unwrap();
        let again = parse_rule(&compiled.to_rule_text()).unwrap();
        prop_assert_eq!(&compiled, &again, "condition {}", condition);
        prop_assert!(is_well_formed_postfix(&compiled.program));
    }

    #[test]
    fn postfix_conversion_is_well_formed(seed in any::<u64>(), depth in 0u32..=6) {
        let condition = rendered(seed, depth);
        let tokens = tokenize(&condition).unwrap();
        let postfix = infix_to_postfix(&tokens).unwrap();
        prop_assert!(is_well_formed_postfix(&postfix));
        let operands = tokens
            .iter()
            .filter(|t| matches!(t.kind, TokenKind::Number | TokenKind::Variable))
            .count();
        let operators = tokens.iter().filter(|t| t.as_operator().is_some()).count();
        prop_assert_eq!(postfix.len(), operands + operators);
    }

    #[test]
    fn parser_never_panics(condition in "[a-e0-9 ().+*/<>=!&|-]{0,40}", datasource in "\\PC{0,40}", action in "\\PC{0,30}") {
        let _ = parse_rule(&RuleText::new(DATASOURCE, condition, "log: x"));
        let _ = parse_rule(&RuleText::new(datasource, "a > 1", action));
    }

    #[test]
    fn unbalanced_brackets_are_rejected(seed in any::<u64>(), depth in 1u32..=6, pick in any::<prop::sample::Index>()) {
        let condition = rendered(seed, depth);
        let brackets: Vec<usize> = condition.char_indices().filter(|(_, c)| *c == '(' || *c == ')').map(|(i, _)| i).collect();
        prop_assume!(!brackets.is_empty());
        let at = brackets[pick.index(brackets.len())];
        let mut broken = condition.clone();
        broken.remove(at);
        let text = RuleText::new(DATASOURCE, broken.clone(), "log: x");
        prop_assert!(parse_rule(&text).is_err(), "accepted {}", broken);
        let mut doubled = condition.clone();
        doubled.insert(at, condition.as_bytes()[at] as char);
        prop_assert!(parse_rule(&RuleText::new(DATASOURCE, doubled.clone(), "log: x")).is_err(), "accepted {}", doubled);
    }

    #[test]
    fn evaluation_matches_oracle(seed in any::<u64>(), depth in 1u32..=6, values in prop::array::uniform5(-20.0f64..60.0)) {
        let condition = rendered(seed, depth);
        let compiled = parse_rule(&RuleText::new(DATASOURCE, condition.clone(), "log: x")).unwrap();
        let vars: HashMap<String, f64> = VARIABLES.iter().map(|v| v.to_string()).zip(values).collect();
        let ist = Ist::from_values(vars.clone());
        let ours = eval_postfix(&compiled.program, &ist);
        let oracle = Oracle::eval(&condition, &vars);
        match (ours, oracle) {
            (Ok(Value::Bool(a)), Ok(OracleValue::Bool(b))) => prop_assert_eq!(a, b, "{}", condition),
            (Ok(Value::Number(a)), Ok(OracleValue::Num(b))) => {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "{} gave {} vs {}", condition, a, b)
            }
            (Err(MatchError::TypeMismatch { .. } | MatchError::DivisionByZero), Err(_)) => {}
            (ours, oracle) => prop_assert!(false, "{}: engine {:?}, oracle {:?}", condition, ours, oracle),
        }
    }
}

#[derive(Debug, Clone)]
enum DsbOp {
    Register(usize),
    Unregister(usize),
    Update(usize, f64),
}

fn dsb_op() -> impl Strategy<Value = DsbOp> {
    prop_oneof![
        (0usize..6).prop_map(DsbOp::Register),
        (0usize..6).prop_map(DsbOp::Unregister),
        ((0usize..6), -100.0f64..100.0).prop_map(|(i, v)| DsbOp::Update(i, v)),
    ]
}

#[derive(Default, Clone, Copy)]
struct ModelEntry {
    reference: usize,
    data: Option<f64>,
    session: u64,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dsb_follows_reference_model(ops in prop::collection::vec(dsb_op(), 0..200)) {
        let indices: Vec<Index> = (0..6).map(|i| Index::new(format!("dev{i}"), "T", "attr")).collect();
        let dsb = Dsb::new(DsbConfig { filter_bits: 4096, filter_hashes: 3 });
        let mut model: HashMap<usize, ModelEntry> = HashMap::new();
        for op in ops {
            match op {
                DsbOp::Register(i) => {
                    dsb.register(&indices[i]);
                    model.entry(i).or_default().reference += 1;
                }
                DsbOp::Unregister(i) => {
                    let result = dsb.unregister(&indices[i]);
                    match model.get_mut(&i) {
                        None => prop_assert_eq!(result, Err(DsbError::UnknownDatasource(indices[i].clone()))),
                        Some(entry) => {
                            prop_assert_eq!(result, Ok(()));
                            entry.reference -= 1;
                            if entry.reference == 0 {
                                model.remove(&i);
                            }
                        }
                    }
                }
                DsbOp::Update(i, v) => {
                    let outcome = dsb.update(&indices[i], v);
                    match model.get_mut(&i) {
                        None => prop_assert_eq!(outcome, UpdateOutcome::NotRegistered),
                        Some(entry) => {
                            entry.session += 1;
                            entry.data = Some(v);
                            prop_assert_eq!(outcome, UpdateOutcome::Applied(entry.session));
                        }
                    }
                }
            }
            for (i, index) in indices.iter().enumerate() {
                let expected = model.get(&i).copied();
                prop_assert_eq!(dsb.reference(index), expected.map(|e| e.reference));
                let lookup = dsb.get(index);
                match expected {
                    None => prop_assert_eq!(lookup, Lookup::Absent),
                    Some(ModelEntry { data: None, .. }) => prop_assert_eq!(lookup, Lookup::NoDataYet),
                    Some(ModelEntry { data: Some(value), session, .. }) => {
                        prop_assert_eq!(lookup, Lookup::Value { value, session })
                    }
                }
                if expected.is_some() {
                    prop_assert!(dsb.maybe_relevant(&index.filter_key()));
                }
            }
            let stats = dsb.stats();
            prop_assert!(stats.stale_filter_keys <= stats.entries.max(1));
        }
    }
}
