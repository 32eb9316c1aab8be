//! SGD on the contrastive loss with NS and SG anchors from the same start.

use pixstrat::harness::{generate, SyntheticSpec};
use pixstrat::lattice::build_grid_stratification;
use pixstrat::sampling::SamplerKind;
use pixstrat::trainer::{plan_step_size, sgd_train, ConvergenceConfig, ModelShape, ToyModel, TrainData};

fn main() -> pixstrat::Result<()> {
    let lattice = generate(&SyntheticSpec {
        dims: vec![64, 64],
        smallest_fraction: 0.05,
        ..SyntheticSpec::default()
    })?;
    let strat = build_grid_stratification(&lattice, &[16, 16])?;
    let data = TrainData::new(lattice, strat, 128)?;
    let model = ToyModel::init(
        ModelShape {
            feat_dim: 4,
            hidden: 16,
            num_classes: 4,
            n_rep: 8,
        },
        0,
    )?;
    let cfg = ConvergenceConfig {
        steps: 60,
        checkpoints: 6,
        ..ConvergenceConfig::default()
    };
    for kind in [SamplerKind::Ns, SamplerKind::Sg] {
        let plan = plan_step_size(&model, &data, kind, &cfg)?;
        let log = sgd_train(&model, &data, kind, &cfg, &plan, 1)?;
        let trace: Vec<String> = log
            .records
            .iter()
            .step_by(10)
            .map(|r| format!("{:.3}", r.parts.contrast))
            .collect();
        println!(
            "{}: lr {:.4} (L {:.2}, sigma {:.3}); loss every 10 steps {}",
            kind.name(),
            plan.lr,
            plan.l_hat,
            plan.sigma_hat,
            trace.join(" ")
        );
        let evals: Vec<String> = log.evals.iter().map(|e| format!("{}:{:.3}", e.step, e.contrast)).collect();
        println!("    held-out pixels: {}", evals.join(" "));
    }
    Ok(())
}
