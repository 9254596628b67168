use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dica_cli::benchmark::{
    results_table, run_classify, run_regress, write_bench, BenchOptions, ClassifySource, RegressSource,
};
use dica_cli::grid::GridAxis;
use dica_cli::toy::{run_toy, write_toy, ToyOptions};
use dica_cli::variance::{kernel_for, run_variance, write_variance};
use dica_core::dica::Mode;
use dica_core::downstream::Method;
use dica_core::io::{read_dataset, read_telemonitoring};
use dica_core::synthdata::{SynthClassConfig, SynthRegressionConfig};
use dica_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dica", version, about = "Domain-invariant component analysis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project the synthetic toy domains with kpca/udica/coir/dica.
    Toy(ToyArgs),
    /// Held-out-domain classification benchmark.
    Classify(ClassifyArgs),
    /// Two-target held-out-subject regression benchmark.
    Regress(RegressArgs),
    /// Distributional variance and domain Gram of a dataset.
    Variance(VarianceArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
}

#[derive(Args)]
struct ToyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of kpca,udica,coir,dica.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    n_domains: usize,
    #[arg(long, default_value_t = 3)]
    held_out: usize,
    #[arg(long, default_value_t = 200.0)]
    poisson_mean: f64,
    /// Fixed per-domain size instead of the Poisson draw.
    #[arg(long)]
    fixed_n: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of input,kpca,coir,udica,dica.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long)]
    sigma1: Option<f64>,
    /// Output-kernel bandwidth for regression; median of targets if absent.
    #[arg(long)]
    sigma3: Option<f64>,
    /// Ridge, relative to the mean diagonal of the training Gram.
    #[arg(long, default_value_t = 1e-2)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Cross-validation axis, e.g. `--grid m=2,5,10`; repeatable.
    #[arg(long)]
    grid: Vec<GridAxis>,
    #[arg(long)]
    per_domain_n: Option<usize>,
    /// CSV dataset instead of the synthetic generator.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, default_value_t = 10)]
    n_domains: usize,
    #[arg(long, default_value_t = 5)]
    n_test_domains: usize,
    /// Points per synthetic domain.
    #[arg(long, default_value_t = 200)]
    domain_n: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    class_separation: f64,
    #[arg(long, default_value_t = 1.0)]
    domain_shift_scale: f64,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, default_value_t = 30)]
    n_train_subjects: usize,
    /// Synthetic subjects when no dataset is given.
    #[arg(long, default_value_t = 42)]
    n_subjects: usize,
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl BenchArgs {
    fn options(&self) -> BenchOptions {
        let d = BenchOptions::default();
        BenchOptions {
            seed: self.common.seed,
            reps: self.reps,
            methods: if self.mode.is_empty() { d.methods } else { self.mode.clone() },
            m: self.m,
            epsilon: self.common.epsilon,
            lambda: self.common.lambda.unwrap_or(d.lambda),
            sigma_x: self.common.sigma_x,
            sigma_y: self.sigma3.or(self.common.sigma_y),
            sigma1: self.sigma1,
            eta: self.eta,
            grid: self.grid.clone(),
            per_domain_n: self.per_domain_n,
        }
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toy(a) => {
            let d = ToyOptions::default();
            let opts = ToyOptions {
                seed: a.common.seed,
                n_domains: a.n_domains,
                n_test_domains: a.held_out,
                m: a.m,
                sigma_x: a.common.sigma_x.unwrap_or(d.sigma_x),
                sigma_y: a.common.sigma_y.unwrap_or(d.sigma_y),
                lambda: a.common.lambda.unwrap_or(d.lambda),
                epsilon: a.common.epsilon.unwrap_or(d.epsilon),
                poisson_mean: a.poisson_mean,
                fixed_n: a.fixed_n,
                modes: if a.mode.is_empty() { d.modes } else { a.mode },
            };
            let run = run_toy(&opts)?;
            for m in &run.methods {
                println!(
                    "{:<6} held-out dispersion {:.6}  variance ratio {:.6}",
                    m.mode.name(),
                    m.dispersion,
                    m.variance_ratio
                );
            }
            print_written(&write_toy(&run, &a.common.out_dir)?);
        }
        Command::Classify(a) => {
            let opts = a.bench.options();
            let source = match &a.bench.dataset {
                Some(path) => ClassifySource::Dataset {
                    data: read_dataset(path)?,
                    n_test_domains: a.n_test_domains,
                },
                None => ClassifySource::Synthetic(SynthClassConfig {
                    n_domains: a.n_domains,
                    n_test_domains: a.n_test_domains,
                    per_domain_n: a.domain_n,
                    dim: a.dim,
                    class_separation: a.class_separation,
                    domain_shift_scale: a.domain_shift_scale,
                    seed: opts.seed,
                }),
            };
            let run = run_classify(&source, &opts)?;
            print!("{}", results_table(&run.report));
            let config = json!({
                "options": opts,
                "dataset": a.bench.dataset,
                "synthetic": match &source {
                    ClassifySource::Synthetic(c) => serde_json::to_value(c)?,
                    ClassifySource::Dataset { .. } => serde_json::Value::Null,
                },
                "n_test_domains": a.n_test_domains,
            });
            print_written(&write_bench(&run, config, &a.bench.common.out_dir)?);
        }
        Command::Regress(a) => {
            let opts = a.bench.options();
            let source = match &a.bench.dataset {
                Some(path) => RegressSource::Dataset {
                    data: read_telemonitoring(path)?,
                    n_train_domains: a.n_train_subjects,
                },
                None => RegressSource::Synthetic {
                    config: SynthRegressionConfig {
                        n_domains: a.n_subjects,
                        seed: opts.seed,
                        ..SynthRegressionConfig::default()
                    },
                    n_train_domains: a.n_train_subjects,
                },
            };
            let run = run_regress(&source, &opts)?;
            print!("{}", results_table(&run.report));
            let config = json!({
                "options": opts,
                "dataset": a.bench.dataset,
                "n_train_subjects": a.n_train_subjects,
                "n_subjects": a.n_subjects,
            });
            print_written(&write_bench(&run, config, &a.bench.common.out_dir)?);
        }
        Command::Variance(a) => {
            let data = read_dataset(&a.dataset)?;
            let kernel = kernel_for(&data, a.linear, a.sigma_x)?;
            let r = run_variance(&data, &kernel)?;
            println!("variance {}", dica_core::io::fmt_f64(r.variance));
            print!("{}", dica_cli::variance::domain_gram_csv(&r));
            if let Some(dir) = &a.out_dir {
                let config = json!({ "dataset": a.dataset, "kernel": kernel });
                print_written(&write_variance(&r, config, dir)?);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Input(_) | Error::Parse { .. } => 3,
        Error::Io { .. } | Error::Serde(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.class(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
