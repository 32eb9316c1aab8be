//! Steps to a gradient threshold on a quadratic as gradient noise grows,
//! and the fitted `c1/T + c2/sqrt(T)` rate.

use pixstrat::trainer::{noise_controlled_descent, rate_fits, QuadraticConfig};

fn main() -> pixstrat::Result<()> {
    let cfg = QuadraticConfig::default();
    let sigmas = [0.0, 0.01, 0.02, 0.04];
    let seeds: Vec<u64> = (0..10).collect();
    for row in noise_controlled_descent(&cfg, &sigmas, &seeds)? {
        println!(
            "sigma {:<5} lr {:.3}  steps {:6.1} +- {:5.1}",
            row.sigma, row.lr, row.mean_steps, row.std_steps
        );
    }
    let fits = rate_fits(&cfg, &sigmas, &[100, 200, 400, 800, 1600], &seeds[..1])?;
    for (sigma, (c1, c2)) in sigmas.iter().zip(&fits[0]) {
        println!("sigma {sigma:<5} c1 {c1:9.4}  c2 {c2:9.5}");
    }
    Ok(())
}
