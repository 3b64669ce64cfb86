//! Compile the three rule fields and look at what the matcher receives.

use iotrule::dsl::{parse_rule, postfix_to_infix, RuleText};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = RuleText::new(
        "tem_1{1, Portable, temperature}; tem_2{1, Fixed, temperature}",
        "(tem_2 > 25.3) & (tem_1 > tem_2 + 3)",
        "WebSocket: 1,rule Matched, temperature is $tem_2 and $tem_1!;Mqtt: localhost, 1883, admin, secret, command, open fan",
    );
    let rule = parse_rule(&text)?;

    println!("outer symbol table:");
    for decl in &rule.ost {
        println!("  {} -> {}", decl.symbol, decl.index);
    }
    println!("condition type: {}", rule.condition_type);
    let program: Vec<&str> = rule.program.iter().map(|t| t.value.as_str()).collect();
    println!("postfix program: {}", program.join(" "));
    println!(
        "back to infix:   {}",
        postfix_to_infix(&rule.program).unwrap_or_default()
    );
    for action in &rule.actions {
        println!(
            "action {} with params {:?} (uses {:?})",
            action.action_type,
            action.params,
            action.referenced_symbols()
        );
    }

    // errors carry the field and byte offset
    let broken = RuleText::new("t{1, Portable, temperature}", "t > (22.1", "Log: x");
    if let Err(e) = parse_rule(&broken) {
        println!("rejected: {e}");
    }
    Ok(())
}
