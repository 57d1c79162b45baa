//! Scores three key assignments against the same intent labels.

use canoncache::metrics::report;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let intents: Vec<String> = (0..400).map(|i| format!("intent_{}", i % 8)).collect();
    let candidates: [(&str, Vec<String>); 3] = [
        ("one key per intent", intents.iter().map(|i| format!("{i}:k")).collect()),
        ("single shared key", vec!["any:thing".into(); intents.len()]),
        ("one key per query", (0..intents.len()).map(|i| format!("q{i}:k")).collect()),
    ];
    println!("{:<20} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7}", "assignment", "h", "c", "V", "AMI", "FMI", "rate");
    for (name, keys) in &candidates {
        let r = report(&intents, keys, 1.0)?;
        println!(
            "{name:<20} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>7.2}",
            r.h, r.c, r.v, r.ami, r.fmi, r.rate_bits
        );
    }
    Ok(())
}
