//! `deepcoda` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use deepcoda::coda::DEFAULT_DELTA_FRACTION;
use deepcoda::eval::{self, Dataset, Grid, Method};
use deepcoda::explain::{self, DEFAULT_MEMBERSHIP_THRESHOLD};
use deepcoda::lasso::{self, CvConfig, Transform};
use deepcoda::{io, synth, train, Error, Head, TrainConfig};

#[derive(Parser)]
#[command(name = "deepcoda", version, about = "Log-contrast networks for compositional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Toy,
    Cmyc,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    Clr,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study as absolute.csv and relative.csv.
    Simulate {
        #[arg(long, value_enum)]
        kind: SimKind,
        #[arg(long, default_value_t = synth::DEFAULT_SAMPLES)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.txt, train_report.csv and residuals.csv.
    Train {
        data: PathBuf,
        /// Flat `key = value` training config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_DELTA_FRACTION)]
        delta_fraction: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated 90/10 split benchmark; writes a results CSV.
    Benchmark {
        data: PathBuf,
        /// Comma-separated: deepcoda, deepcoda-linear, lasso, lasso-clr, constant.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Run the bottleneck x L1 x head grid in place of single DeepCoDA methods.
        #[arg(long)]
        grid: bool,
        /// Training settings for DeepCoDA methods.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = eval::DEFAULT_SPLITS)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DELTA_FRACTION)]
        delta_fraction: f64,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-configuration summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Per-sample explanations and log-contrast memberships for a trained model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA_FRACTION)]
        delta_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
        threshold: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// LASSO logistic regression with cross-validated penalty.
    Baseline {
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = TransformArg::None)]
        transform: TransformArg,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DELTA_FRACTION)]
        delta_fraction: f64,
        /// Optional coefficient CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::TrainingDiverged { .. } | Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Error> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            io::parse_config(&text).map_err(|e| e.context(p.display().to_string()))
        }
        None => Ok(TrainConfig::default()),
    }
}

fn parse_method(name: &str, base: &TrainConfig) -> Result<Method, Error> {
    Ok(match name {
        "deepcoda" => Method::DeepCoda(TrainConfig {
            head: Head::SelfExplain,
            ..base.clone()
        }),
        "deepcoda-linear" => Method::DeepCoda(TrainConfig {
            head: Head::Linear,
            ..base.clone()
        }),
        "lasso" => Method::Lasso(Transform::None, CvConfig::default()),
        "lasso-clr" => Method::Lasso(Transform::Clr, CvConfig::default()),
        "constant" => Method::Constant,
        other => return Err(Error::InvalidInput(format!("unknown method `{other}`"))),
    })
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Simulate { kind, n, seed, out } => {
            let ds = match kind {
                SimKind::Toy => synth::gen_toy(n, seed)?,
                SimKind::Cmyc => synth::gen_cmyc(n, seed)?,
            };
            create_dir(&out)?;
            write(&out.join("absolute.csv"), &io::format_dataset(&ds.absolute, &ds.labels))?;
            write(&out.join("relative.csv"), &io::format_dataset(&ds.relative, &ds.labels))?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train {
            data,
            config,
            seed,
            delta_fraction,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = io::load_dataset(&data, delta_fraction)?;
            let report = train::train(ds.data.values(), &ds.labels, &cfg)?;
            create_dir(&out)?;
            io::write_model(&out.join("model.txt"), &report.params)?;
            write(&out.join("train_report.csv"), &io::format_loss_history(&report))?;
            write(&out.join("residuals.csv"), &io::format_residuals(&report))?;
            let last = report.loss_history.last().copied().unwrap_or(f64::NAN);
            println!("final loss {}", io::fmt_f64(last));
            for (b, r) in report.final_constraint_residuals.iter().enumerate() {
                println!("residual {} {}", b + 1, io::fmt_f64(*r));
            }
        }
        Command::Benchmark {
            data,
            methods,
            grid,
            config,
            splits,
            seed,
            delta_fraction,
            out,
            summary,
        } => {
            let base = load_config(config.as_deref())?;
            let ds = io::load_dataset(&data, delta_fraction)?;
            let mut list = Vec::new();
            if grid {
                list.extend(
                    Grid {
                        base: base.clone(),
                        ..Grid::default()
                    }
                    .methods(),
                );
            }
            let names: Vec<String> = if methods.is_empty() && !grid {
                vec!["deepcoda".into()]
            } else {
                methods
            };
            for name in &names {
                let m = parse_method(name.trim(), &base)?;
                if grid && matches!(m, Method::DeepCoda(_)) {
                    continue;
                }
                list.push(m);
            }
            let rows = eval::benchmark(&ds, &list, splits, seed)?;
            let standardized = eval::standardize_scores(&rows);
            write(&out, &io::format_results(&standardized))?;
            if let Some(path) = summary {
                write(&path, &io::format_config_table(&eval::config_table(&standardized)))?;
            }
            for m in &list {
                let name = m.name();
                if let Some(med) = eval::median_auc(&rows, &name) {
                    println!("{name} median AUC {med:.4}");
                }
            }
        }
        Command::Explain {
            model,
            data,
            delta_fraction,
            threshold,
            out,
        } => {
            let params = io::read_model(&model)?;
            if params.head != Head::SelfExplain {
                return Err(Error::UnsupportedHead(format!(
                    "model uses the {} head; explanations need self_explain",
                    params.head
                )));
            }
            let ds: Dataset = io::load_dataset(&data, delta_fraction)?;
            let explanations =
                explain::explain_all(&params, ds.data.values(), ds.data.sample_ids())?;
            let memberships = (0..params.n_bottlenecks)
                .map(|b| explain::contrast_membership(&params, b, ds.data.feature_names(), threshold))
                .collect::<Result<Vec<_>, _>>()?;
            let (w, z) = explain::stack_wz(&explanations)?;
            let correlations = match explain::weight_contrast_correlation(&w, &z) {
                Ok(c) => Some(c),
                Err(Error::InsufficientSamples(msg)) => {
                    eprintln!("skipping correlations: {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            let report = explain::render_report(&explanations, &memberships, correlations.as_ref());
            create_dir(&out)?;
            write(&out.join("explanations.csv"), &report.explanations_csv)?;
            write(&out.join("memberships.csv"), &report.memberships_csv)?;
            write(&out.join("correlations.csv"), &report.correlations_csv)?;
            print!("{}", report.summary);
        }
        Command::Baseline {
            data,
            transform,
            folds,
            seed,
            delta_fraction,
            out,
        } => {
            let ds = io::load_dataset(&data, delta_fraction)?;
            let transform = match transform {
                TransformArg::None => Transform::None,
                TransformArg::Clr => Transform::Clr,
            };
            let cv = CvConfig {
                n_folds: folds,
                seed,
                ..CvConfig::default()
            };
            let model = lasso::fit_cv(&ds.data, &ds.labels, transform, &cv)?;
            let scaled = lasso::minmax_scaled_magnitudes(&model.coef);
            println!("lambda {}", io::fmt_f64(model.lambda));
            println!("intercept {}", io::fmt_f64(model.intercept));
            let mut csv = String::from("feature,coef,scaled_magnitude\n");
            for ((name, c), s) in ds.data.feature_names().iter().zip(&model.coef).zip(&scaled) {
                println!("{name} {} {s:.4}", io::fmt_f64(*c));
                csv.push_str(&format!("{name},{},{}\n", io::fmt_f64(*c), io::fmt_f64(*s)));
            }
            if let Some(path) = out {
                write(&path, &csv)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
