//! Command-line front end and HTTP service for the graph topic model.

pub mod service;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ngtm_core::data::{self, DatasetFormat, DatasetName, GraphSet, LobsterParams, SplitSpec};
use ngtm_core::eval::{ClassifierProbe, MetricReport, ProbeConfig};
use ngtm_core::generation::{self, Generator, DEFAULT_DELTAS, DEFAULT_PER_SETTING};
use ngtm_core::training::{self, Checkpoint, TrainConfig};
use ngtm_core::{Error, Graph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ngtm", version, about = "Train, sample, evaluate and serve graph topic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Graph file or TU bundle; synthetic datasets need none.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory, overriding the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample graphs and their generation traces.
    Generate {
        #[arg(long, env = "NGTM_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        /// Comma-separated topic mixture.
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two graph sets.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Shift one topic's weight over a grid and report structural effects.
    SweepTopic {
        #[arg(long, env = "NGTM_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long)]
        topic: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        deltas: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_PER_SETTING)]
        per_setting: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive one topic from absent to dominant and score classes with a probe.
    ClassSweep {
        #[arg(long, env = "NGTM_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        topic: usize,
        #[arg(long, default_value_t = DEFAULT_PER_SETTING)]
        per_setting: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the graph classifier used by class sweeps.
    TrainProbe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "NGTM_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn write_output(out: Option<&Path>, body: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, body)?;
        }
        None => println!("{body}"),
    }
    Ok(())
}

/// Loads graphs from a directory of graph JSON files, a JSON-lines file, or
/// a TU bundle.
pub fn load_graphs(path: &Path) -> Result<GraphSet, Error> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("graph"))
            })
            .collect();
        if files.is_empty() {
            return data::load_edge_list_dataset(path, DatasetFormat::TuBundle);
        }
        files.sort();
        let graphs = files
            .iter()
            .map(|f| Ok(serde_json::from_str::<Graph>(&fs::read_to_string(f)?)?))
            .collect::<Result<Vec<_>, Error>>()?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("graphs");
        return Ok(GraphSet::new(name, graphs));
    }
    let format = match path.extension().and_then(|x| x.to_str()) {
        Some("jsonl" | "json") => DatasetFormat::JsonLines,
        _ => DatasetFormat::TuBundle,
    };
    data::load_edge_list_dataset(path, format)
}

fn training_graphs(config: &TrainConfig, data_path: Option<&Path>) -> Result<GraphSet, Error> {
    if let Some(path) = data_path {
        return load_graphs(path);
    }
    match config.dataset.as_str() {
        "clique-path" => data::clique_path_corpus(100, 5, 8, config.seed),
        name => match name.parse::<DatasetName>()? {
            DatasetName::Lobster => data::generate_lobster_set(&LobsterParams::default()),
            other => Err(Error::InvalidConfig(format!("dataset {other:?} needs --data"))),
        },
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { config, data, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if out.is_some() {
                cfg.checkpoint_dir = out;
            }
            let set = training_graphs(&cfg, data.as_deref())?;
            let splits = data::split(&set, &SplitSpec { seed: cfg.seed, ..SplitSpec::default() })?;
            let outcome = training::train(&cfg, &splits.train, &splits.val)?;
            eprintln!(
                "trained {} epochs; best validation loss {:.4} at epoch {}",
                cfg.epochs, outcome.best.val_metric, outcome.best.epoch
            );
            Ok(())
        }
        Command::Generate {
            checkpoint,
            count,
            theta,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let gen = Generator::new(&ckpt.model, ckpt.config.threshold);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graphs = gen.generate(theta.as_deref(), None, count, &mut rng)?;
            fs::create_dir_all(&out)?;
            for (i, (g, trace)) in graphs.iter().enumerate() {
                fs::write(out.join(format!("graph_{i:05}.json")), serde_json::to_string(g)?)?;
                fs::write(out.join(format!("trace_{i:05}.json")), trace.to_json()?)?;
            }
            eprintln!("wrote {count} graphs to {}", out.display());
            Ok(())
        }
        Command::Eval {
            reference,
            gen,
            out,
            seed,
        } => {
            let r = load_graphs(&reference)?;
            let g = load_graphs(&gen)?;
            let report = MetricReport::compute(r.graphs(), g.graphs(), seed)?;
            write_output(Some(&out), &serde_json::to_string_pretty(&report)?)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::SweepTopic {
            checkpoint,
            topic,
            deltas,
            per_setting,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let gen = Generator::new(&ckpt.model, ckpt.config.threshold);
            let deltas = deltas.unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
            let report = generation::sweep_topic_weight(&gen, topic, &deltas, per_setting, seed)?;
            write_output(out.as_deref(), &report.to_json()?)
        }
        Command::ClassSweep {
            checkpoint,
            probe,
            topic,
            per_setting,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let probe = ClassifierProbe::from_json(&fs::read_to_string(&probe)?)?;
            let gen = Generator::new(&ckpt.model, ckpt.config.threshold);
            let report = generation::sweep_topic_to_dominance(&gen, topic, per_setting, seed, &probe)?;
            write_output(out.as_deref(), &report.to_json()?)
        }
        Command::TrainProbe {
            data,
            out,
            epochs,
            seed,
        } => {
            let set = load_graphs(&data)?;
            let probe = ClassifierProbe::train(
                set.graphs(),
                ProbeConfig {
                    epochs,
                    seed,
                    ..ProbeConfig::default()
                },
            )?;
            eprintln!("probe training accuracy {:.3}", probe.accuracy(set.graphs()));
            write_output(Some(&out), &probe.to_json()?)
        }
        Command::Serve { checkpoint, port } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let state = service::AppState::new(ckpt);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                eprintln!("serving checkpoint {} on port {port}", state.checkpoint_id());
                axum::serve(listener, service::router(state)).await
            })?;
            Ok(())
        }
    }
}
