//! Monthly cost of each caching strategy, a local-share sweep and a traffic scaling table.

use canoncache::cost::CostConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = CostConfig::default();
    for r in cfg.compare(50)? {
        println!("{:<10} ${:>8.2}/month  saves {:>5.1}%", r.strategy, r.monthly_cost_usd, r.savings_pct);
    }

    println!("\nlocal share sweep at 50 requests/day");
    for r in cfg.sensitivity(&[0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95], 50)? {
        println!("  {:>4.0}%  ${:.2}", r.local_share * 100.0, r.monthly_cost_usd);
    }

    println!("\n{:>8} {:>12} {:>12} {:>10}", "req/day", "no_cache", "gptcache", "w5h2");
    for row in cfg.scaling_table(&[50, 200, 1_000, 10_000, 100_000])? {
        let c = |s| row.cost_of(s).unwrap_or(f64::NAN);
        println!("{:>8} {:>12.2} {:>12.2} {:>10.2}", row.requests_per_day, c("no_cache"), c("gptcache"), c("w5h2"));
    }
    Ok(())
}
