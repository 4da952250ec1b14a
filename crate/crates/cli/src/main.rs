use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcsmc::harness::{dump_beliefs, run_experiment, EnvName, ExperimentConfig, Summary, VERSION};

#[derive(Parser)]
#[command(name = "vcsmc", version = VERSION, about = "Paired bootstrap-filter vs VC-SMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and compare both filters over paired trials.
    Run(Overrides),
    /// Dump particle clouds of both filters (500 particles, one trial by default).
    Beliefs(Overrides),
    /// Evidence calibration against the Kalman filter on the linear-Gaussian model.
    Check(Overrides),
}

/// Flags override the config file, which overrides the built-in defaults.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    env: Option<EnvName>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Filter particles at evaluation time.
    #[arg(long)]
    particles: Option<usize>,
    /// Particles per training gradient estimate.
    #[arg(long)]
    train_particles: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    inner_block: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock times (outputs are then no longer byte-reproducible).
    #[arg(long)]
    timing: bool,
}

impl Overrides {
    fn resolve(&self, base: impl Fn(EnvName) -> ExperimentConfig, fallback: EnvName) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
            None => base(self.env.unwrap_or(fallback)),
        };
        if let Some(env) = self.env {
            c.env = env;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            trials => trials, particles => particles, train_particles => train.particles,
            iterations => train.iterations, lr => train.learning_rate, inner_block => train.inner_block,
            seed => seed, out => out, workers => workers,
        );
        if self.timing {
            c.train.record_timing = true;
        }
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

fn print_summary(s: &Summary) {
    println!("{} on {}: {} trials, {} failed", s.version, s.env, s.trials, s.failed_trials.len());
    for c in &s.comparisons {
        println!(
            "  {:<14} median bpf {:>10.4}  vcsmc {:>10.4}  vcsmc better in {}/{}  sign-test p {:.3}",
            c.metric, c.median_bpf, c.median_vcsmc, c.vcsmc_wins, c.paired_trials, c.sign_test_p
        );
    }
    if let Some(reach) = s.medians.get("vcsmc").and_then(|m| m.get(vcsmc::harness::metric::TRAIN_REACH)) {
        println!("  median iteration reaching 90% of training improvement: {reach}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.command {
        Command::Run(o) => o.resolve(ExperimentConfig::for_env, EnvName::ThreeDoors),
        Command::Beliefs(o) => o.resolve(|env| ExperimentConfig { env, ..ExperimentConfig::for_beliefs() }, EnvName::ThreeDoors),
        Command::Check(o) => o.resolve(ExperimentConfig::for_env, EnvName::LinearGaussianCheck).and_then(|c| {
            if c.env == EnvName::LinearGaussianCheck {
                Ok(c)
            } else {
                Err(format!("check runs on linear_gaussian_check, not {}", c.env))
            }
        }),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let failed = match cli.command {
        Command::Beliefs(_) => dump_beliefs(&config).map(|r| {
            println!("wrote beliefs for {} trials to {}", r.trials - r.failures.len(), config.out.display());
            r.too_many_failures()
        }),
        Command::Run(_) | Command::Check(_) => run_experiment(&config).map(|r| {
            print_summary(&r.summary);
            r.too_many_failures()
        }),
    };
    match failed {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: more than 10% of trials failed; see {}", config.out.join("errors.log").display());
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
