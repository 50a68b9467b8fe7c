use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decouple_hmm::baseline::{
    baum_welch, random_discrete_outputs, random_gaussian_outputs, random_transition_matrix,
    BaumWelchInit,
};
use decouple_hmm::estimators::{full_pipeline, PipelineOptions};
use decouple_hmm::io::{read_observations, save_observations, SequenceKind};
use decouple_hmm::mixture::{align_components, em_fit, MixtureConfig};
use decouple_hmm::model::{sample, stationary_distribution};
use decouple_hmm::{Error as CoreError, HmmSpec, Observations, OutputModel};
use decouple_hmm_bench::config::{ExperimentConfig, SpecSource};
use decouple_hmm_bench::experiment::run_experiment;
use decouple_hmm_bench::output::write_results;
use decouple_hmm_bench::BenchError;

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "decouple-hmm", version, about = "Decoupled estimation of hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an observation sequence from a model.
    Generate {
        /// Model file, or one of the built-ins: toy, toy-discrete, two-state.
        #[arg(long)]
        model: String,
        #[arg(long = "T")]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the hidden state path.
        #[arg(long)]
        states: Option<PathBuf>,
    },
    /// Fit a Gaussian mixture to a continuous sequence by EM.
    FitMixture {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the stationary distribution and transition matrix given output parameters.
    Estimate(EstimateArgs),
    /// Run Baum-Welch.
    BaumWelch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n: usize,
        /// Model file with the starting point; random when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the output parameters at their initial values.
        #[arg(long)]
        fix_outputs: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment sweep described by a JSON config.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output model file (a bare outputs object, a full model, or a mixture fit).
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long, conflicts_with = "unweighted")]
    weighted: bool,
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    no_stationarity_constraint: bool,
    /// Match density pairs through the kernel matrix instead of posterior pairs.
    #[arg(long)]
    eta_prime: bool,
    /// Model file with the true parameters; adds error metrics to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> BenchError {
    BenchError::InvalidConfig(msg.into())
}

fn read_text(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_outputs(path: &Path) -> Result<OutputModel, BenchError> {
    let text = read_text(path)?;
    if let Ok(o) = serde_json::from_str::<OutputModel>(&text) {
        return Ok(o);
    }
    HmmSpec::from_json(&text)
        .map(|s| s.outputs)
        .map_err(|e| invalid(format!("{}: not an outputs or model file ({e})", path.display())))
}

fn load_spec(path: &Path) -> Result<HmmSpec, BenchError> {
    HmmSpec::from_json(&read_text(path)?)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_data(path: &Path, kind: Option<SequenceKind>) -> Result<Observations, BenchError> {
    read_observations(path, kind).map_err(|e| match e {
        CoreError::Io(io) => invalid(format!("cannot read {}: {io}", path.display())),
        other => invalid(format!("{}: {other}", path.display())),
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), BenchError> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => {
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Generate {
            model,
            t,
            seed,
            out,
            states,
        } => {
            let spec = SpecSource(model).load(None)?;
            if t == 0 {
                return Err(invalid("--T must be positive"));
            }
            let path = sample(&spec, t, seed)?;
            save_observations(&out, &path.observations)?;
            if let Some(s) = states {
                save_observations(&s, &Observations::Discrete(path.states))?;
            }
        }
        Command::FitMixture {
            data,
            n,
            restarts,
            seed,
            out,
        } => {
            let Observations::Continuous(y) = read_data(&data, Some(SequenceKind::Continuous))?
            else {
                unreachable!("continuous kind requested")
            };
            let cfg = MixtureConfig {
                restarts,
                seed,
                ..Default::default()
            };
            let fit = em_fit(&y, n, &cfg)?;
            emit(&serde_json::to_string_pretty(&fit)?, out.as_deref())?;
        }
        Command::Estimate(args) => {
            let outputs = load_outputs(&args.outputs)?;
            let y = read_data(&args.data, Some(SequenceKind::of(&outputs)))?;
            let mut options = if args.unweighted {
                PipelineOptions::unweighted()
            } else {
                PipelineOptions::default()
            };
            if args.no_stationarity_constraint {
                options.a.stationarity_constraint = false;
            }
            options.a.eta_prime = args.eta_prime;
            let mut report = full_pipeline(&y, &outputs, options)?;
            if let Some(t) = &args.truth {
                let truth = load_spec(t)?;
                if truth.n() != outputs.n() {
                    return Err(invalid("truth and outputs disagree on the state count"));
                }
                let alignment = match (&outputs, &truth.outputs) {
                    (OutputModel::Gaussian(e), OutputModel::Gaussian(g)) => {
                        align_components(e.components(), g.components())
                    }
                    _ => (0..truth.n()).collect(),
                };
                report.attach_truth(&truth.a, alignment)?;
            }
            emit(&report.to_json(), args.out.as_deref())?;
        }
        Command::BaumWelch {
            data,
            n,
            init,
            iters,
            seed,
            fix_outputs,
            out,
        } => {
            let (y, start) = match init {
                Some(p) => {
                    let spec = load_spec(&p)?;
                    if spec.n() != n {
                        return Err(invalid(format!(
                            "--n {n} but the initial model has {} states",
                            spec.n()
                        )));
                    }
                    let y = read_data(&data, Some(SequenceKind::of(&spec.outputs)))?;
                    (y, spec)
                }
                None => {
                    let y = read_data(&data, None)?;
                    let outputs = match &y {
                        Observations::Continuous(v) => {
                            OutputModel::Gaussian(random_gaussian_outputs(v, n, seed)?)
                        }
                        Observations::Discrete(v) => {
                            let m = v.iter().max().map_or(0, |s| s + 1).max(n);
                            OutputModel::Discrete(random_discrete_outputs(m, n, seed)?)
                        }
                    };
                    let spec = HmmSpec::new(random_transition_matrix(n, seed), outputs, None)?;
                    (y, spec)
                }
            };
            let init = BaumWelchInit {
                a0: start.a,
                outputs0: start.outputs,
                initial0: start.initial,
                fix_outputs,
            };
            let res = baum_welch(&y, &init, iters)?;
            emit(&res.to_json(), out.as_deref())?;
        }
        Command::Benchmark { config } => {
            let (cfg, spec) = ExperimentConfig::from_file(&config)?;
            let _ = stationary_distribution(&spec.a)?;
            let results = run_experiment(&spec, &cfg)?;
            let files = write_results(&results, &cfg.output_dir)?;
            for s in results.summary() {
                println!(
                    "method {} T {:>8}: median ||A-A_hat||_F^2 = {:.4e}, median time {:.1} ms, failed {}/{}",
                    s.method, s.t, s.median_frobenius_sq_error, s.median_total_ms, s.failed, s.runs
                );
            }
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            if results.has_failures() {
                return Ok(ExitCode::from(EXIT_NUMERICAL));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &BenchError) -> u8 {
    match e {
        BenchError::InvalidConfig(_) | BenchError::Json(_) => EXIT_INVALID,
        BenchError::Core(c) => match c {
            CoreError::InvalidModel(_)
            | CoreError::SymbolOutOfRange { .. }
            | CoreError::SequenceTooShort { .. }
            | CoreError::Dimension(_)
            | CoreError::Parse(_)
            | CoreError::Json(_) => EXIT_INVALID,
            _ => EXIT_NUMERICAL,
        },
        BenchError::Io(_) | BenchError::Csv(_) => 1,
        BenchError::InsufficientData(_) => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
