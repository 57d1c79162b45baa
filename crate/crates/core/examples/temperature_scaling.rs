//! Fits a temperature on half of an overconfident log and reports held-out ECE.

use canoncache::calibration::{temperature_scale, DEFAULT_BINS};
use canoncache::harness::io::scored_examples;
use canoncache::harness::synthetic::{gen_synthetic, ConfidenceModel, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = gen_synthetic(&SyntheticSpec {
        n_per_class: 500,
        classifier_accuracy: 0.8,
        confidence_model: ConfidenceModel::Overconfident { scale: 5.0 },
        ..Default::default()
    })?;
    let scored = scored_examples(&data.dataset, &data.predictions)?;
    let (fit, eval) = scored.split_at(scored.len() / 2);
    let (before, after) = temperature_scale(fit, eval, DEFAULT_BINS)?;

    println!("fitted T = {:.3}", after.fitted_temperature.unwrap_or(1.0));
    println!("held-out ECE {:.4} -> {:.4} ({:.1}x)", before.ece, after.ece, before.ece / after.ece);
    println!("\n{:>12} {:>8} {:>8} {:>6}", "bin", "conf", "acc", "n");
    for b in after.bins.iter().filter(|b| b.count > 0) {
        println!("{:>5.2}-{:<6.2} {:>8.3} {:>8.3} {:>6}", b.lower, b.upper, b.mean_confidence, b.accuracy, b.count);
    }
    Ok(())
}
