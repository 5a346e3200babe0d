use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rdrnet_cli::commands::{self, BenchArgs, EvalArgs, InferArgs, VerifyArgs};
use rdrnet_core::blocks::Structure;
use rdrnet_core::model_io::resolve_config;
use rdrnet_core::{DType, NetworkDef};

/// Reparameterize, verify, benchmark and run dual-resolution segmentation
/// networks on the CPU.
#[derive(Parser)]
#[command(name = "rdrnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare training and deployment outputs on random inputs.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_parser = parse_hw, default_value = "64x128")]
        input_hw: (usize, usize),
        /// Fault injection: perturb one fused bias before comparing.
        #[arg(long, hide = true)]
        corrupt_block: Option<String>,
    },
    /// Time forward passes of either structure.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "both")]
        structure: StructureArg,
        #[arg(long, value_parser = parse_hw, default_value = "256x512")]
        input_hw: (usize, usize),
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Total runs per configuration; the first two are warmup.
        #[arg(long, default_value_t = 22)]
        runs: usize,
        /// Thread counts to measure, comma separated.
        #[arg(long, value_delimiter = ',', env = "RDRNET_THREADS")]
        threads: Vec<usize>,
        /// Also write the machine-readable rows to this file.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Segment one image.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        /// 8-bit RGB PNG or binary PPM.
        #[arg(long)]
        image: PathBuf,
        /// Class-index map (binary PGM).
        #[arg(long)]
        out: PathBuf,
        /// Colour overlay (.png or .ppm).
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Parameter and operation accounting.
    Count {
        #[arg(long, default_value = "rdrnet-s")]
        config: String,
        #[arg(long, value_enum, default_value = "deploy")]
        structure: StructureArg,
        #[arg(long, value_parser = parse_hw, default_value = "1024x2048")]
        input_hw: (usize, usize),
    },
    /// Convert a training checkpoint into deployment weights.
    Reparam {
        #[arg(long, default_value = "rdrnet-s")]
        config: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// mIoU and pixel accuracy over `images/<id>.{ppm,png}` and
    /// `labels/<id>.pgm`.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Print one JSON object instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Preset name or TOML file.
    #[arg(long, default_value = "rdrnet-s")]
    config: String,
    /// RDRW weight file; random weights from --seed when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl From<Precision> for DType {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum StructureArg {
    Train,
    Deploy,
    Both,
}

impl StructureArg {
    fn list(self) -> Vec<Structure> {
        match self {
            StructureArg::Train => vec![Structure::Train],
            StructureArg::Deploy => vec![Structure::Deploy],
            StructureArg::Both => vec![Structure::Train, Structure::Deploy],
        }
    }
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn config(name: &str) -> Result<NetworkDef> {
    resolve_config(name).with_context(|| format!("config `{name}`"))
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { model, trials, input_hw, corrupt_block } => {
            let out = commands::verify(&VerifyArgs {
                def: config(&model.config)?,
                weights: model.weights,
                seed: model.seed,
                precision: model.precision.into(),
                trials,
                input_hw,
                corrupt_block,
            })?;
            print!("{}", out.text);
            return Ok(if out.passed { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Bench { model, structure, input_hw, batch, runs, threads, rows } => {
            if model.weights.is_some() {
                anyhow::bail!("bench uses seeded random weights; --weights is not supported");
            }
            let threads = if threads.is_empty() { vec![default_threads()] } else { threads };
            let reports = commands::bench(&BenchArgs {
                def: config(&model.config)?,
                seed: model.seed,
                precision: model.precision.into(),
                structures: structure.list(),
                input_hw,
                batch,
                runs,
                threads,
            })?;
            let text = commands::bench_text(&reports);
            print!("{text}");
            if let Some(path) = rows {
                let mut csv = String::from(rdrnet_core::bench::ROW_HEADER);
                csv.push('\n');
                for r in &reports {
                    csv += &r.to_row();
                    csv.push('\n');
                }
                std::fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
        Command::Infer { model, image, out, overlay } => {
            print!(
                "{}",
                commands::infer(&InferArgs {
                    def: config(&model.config)?,
                    weights: model.weights,
                    seed: model.seed,
                    precision: model.precision.into(),
                    image,
                    out,
                    overlay,
                })?
            );
        }
        Command::Count { config: name, structure, input_hw } => {
            let structures = structure.list();
            for (i, s) in structures.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print!("{}", commands::count(&config(&name)?, *s, input_hw)?);
            }
        }
        Command::Reparam { config: name, weights, out } => {
            print!("{}", commands::reparam(&config(&name)?, &weights, &out)?);
        }
        Command::Eval { model, dataset, json } => {
            let result = commands::eval(&EvalArgs {
                def: config(&model.config)?,
                weights: model.weights,
                seed: model.seed,
                precision: model.precision.into(),
                dataset,
            })?;
            if json {
                println!("{}", result.to_json()?);
            } else {
                print!("{}", result.to_text()?);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("RDRNET_THREADS").ok().and_then(|v| v.split(',').next()?.trim().parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
