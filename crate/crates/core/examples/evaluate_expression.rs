//! Tokenize, convert to postfix, and evaluate against an inner symbol table.

use iotrule::dsl::{infix_to_postfix, tokenize};
use iotrule::matcher::{eval_postfix, Ist};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let condition = "(tem_2 > 25.3) & (tem_1 > tem_2 + 3)";
    let program = infix_to_postfix(&tokenize(condition)?)?;

    for (tem_1, tem_2) in [(20.0, 20.0), (30.0, 20.0), (27.0, 26.0), (30.0, 26.0)] {
        let ist = Ist::from_values([("tem_1".to_string(), tem_1), ("tem_2".to_string(), tem_2)]);
        println!(
            "tem_1={tem_1:<4} tem_2={tem_2:<4} -> {}",
            eval_postfix(&program, &ist)?
        );
    }

    let arithmetic = infix_to_postfix(&tokenize("x * 2 + 1")?)?;
    let ist = Ist::from_values([("x".to_string(), 20.5)]);
    println!(
        "x * 2 + 1 with x=20.5 -> {}",
        eval_postfix(&arithmetic, &ist)?
    );

    let ist = Ist::from_values([("x".to_string(), 1.0)]);
    let bad = infix_to_postfix(&tokenize("x / 0 > 1")?)?;
    println!("x / 0 > 1 -> {:?}", eval_postfix(&bad, &ist));
    Ok(())
}
