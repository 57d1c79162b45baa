//! Certifies an abstention threshold with each bound and checks the guarantee by simulation.

use canoncache::risk::{
    select_threshold, trial_rng, validate_guarantee, BoundSpec, BoundVariant, CalibrationGenerator, CalibrationSet,
    GuaranteeConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let generator = CalibrationGenerator::default();
    let cal = CalibrationSet::new(&generator.sample(&mut trial_rng(1, 0), 2000))?;
    let (alpha, delta) = (0.10, 0.10);

    println!("n = {}, alpha = {alpha}, delta = {delta}\n", cal.len());
    for v in BoundVariant::ALL {
        let spec = BoundSpec::new(v, alpha, delta);
        let cert = select_threshold(&cal, &spec)?;
        let report = validate_guarantee(&generator, &spec, &GuaranteeConfig { trials: 200, ..Default::default() })?;
        match cert.tau_star {
            Some(t) => println!(
                "{v:<16} tau* {t:.2}  coverage {:.3}  true risk {:.4}  violations {}/{}",
                cert.calib_coverage,
                generator.population_risk(t),
                report.violations,
                report.trials
            ),
            None => println!("{v:<16} infeasible"),
        }
    }
    Ok(())
}
