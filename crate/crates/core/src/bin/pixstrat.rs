use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pixstrat::error::{Error, Result};
use pixstrat::harness::{
    gen_data, report, run_convergence, run_sweep, run_train, run_variance_study,
    ExperimentConfig, LatticeSource, Outcome, SyntheticSpec,
};
use pixstrat::sampling::SamplerKind;

/// Stratified pixel sampling experiments.
#[derive(Parser)]
#[command(name = "pixstrat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic lattice (lattice.json + lattice.csv).
    GenData(Common),
    /// Analytic and Monte-Carlo sampler variances with theorem checks.
    Variance(Common),
    /// SGD trajectories per sampler; `--sweep` runs the noise sweep instead,
    /// `--with-sweep` runs both.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "with_sweep")]
        sweep: bool,
        #[arg(long)]
        with_sweep: bool,
    },
    /// Warm-up plus fine-tuning of the toy model.
    Train(Common),
    /// Summarize the checks found in a results directory.
    Report {
        /// Results directory; defaults to --out, then the config's `out`.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Ns,
    Sg,
    Sag,
    All,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(s) = self.sampler {
            cfg.samplers = match s {
                SamplerArg::Ns => vec![SamplerKind::Ns],
                SamplerArg::Sg => vec![SamplerKind::Sg],
                SamplerArg::Sag => vec![SamplerKind::Sag],
                SamplerArg::All => SamplerKind::ALL.to_vec(),
            };
            cfg.train.sampler = cfg.samplers[0];
        }
        if let Some(t) = self.trials {
            cfg.variance.trials = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(Error::InvalidInput("--jobs must be at least 1".into()));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

fn print_outcome(outcome: &Outcome) {
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    for c in &outcome.checks {
        println!("{} {}: {}", c.status.label(), c.name, c.detail);
    }
}

/// `Ok(true)` when every check passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.config()?;
            let mut spec = match cfg.lattice {
                LatticeSource::Synthetic(spec) => spec,
                LatticeSource::File { .. } => SyntheticSpec::default(),
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let path = gen_data(&spec, &cfg.out)?;
            println!("wrote {}", path.display());
            println!("wrote {}", path.with_extension("csv").display());
            Ok(true)
        }
        Command::Variance(common) => {
            let cfg = common.config()?;
            let outcome = common.pool()?.install(|| run_variance_study(&cfg, &cfg.out))?;
            print_outcome(&outcome);
            Ok(outcome.all_passed())
        }
        Command::Convergence {
            common,
            sweep,
            with_sweep,
        } => {
            let cfg = common.config()?;
            let pool = common.pool()?;
            let mut ok = true;
            if !sweep {
                let outcome = pool.install(|| run_convergence(&cfg, &cfg.out))?;
                print_outcome(&outcome);
                ok &= outcome.all_passed();
            }
            if sweep || with_sweep {
                let outcome = pool.install(|| run_sweep(&cfg, &cfg.out))?;
                print_outcome(&outcome);
                ok &= outcome.all_passed();
            }
            Ok(ok)
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            let outcome = common.pool()?.install(|| run_train(&cfg, &cfg.out))?;
            print_outcome(&outcome);
            Ok(outcome.all_passed())
        }
        Command::Report { dir, common } => {
            let dir = match dir {
                Some(d) => d,
                None => common.config()?.out,
            };
            let text = report(&dir)?;
            print!("{text}");
            Ok(!text.lines().any(|l| l.starts_with("FAIL")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
