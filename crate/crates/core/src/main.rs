use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use clipmil::config::AppConfig;
use clipmil::eval::{
    self, fleiss_kappa, generate_synthetic_corpus, learning_curve, productivity_simulate, productivity_theoretic,
    replicate, AgreementTable, Concept, ProductivityParams, SimulationMode, SyntheticSpec,
};
use clipmil::mil::{self, Algorithm, MilModel};
use clipmil::model::DatasetManifest;
use clipmil::pipeline::{self, Prepared};
use clipmil::serve::{run_server, SessionManager};
use clipmil::shots::shots_for_dataset;

#[derive(Parser)]
#[command(name = "clipmil", version, about = "Multiple-instance learning over video clips")]
struct Cli {
    /// JSON configuration; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract micro-clip features into a JSONL feature store.
    Ingest(DatasetArgs),
    /// Cluster micro-clips into principal shots.
    Shots {
        #[command(flatten)]
        data: DatasetArgs,
        /// Feature store from `ingest`; extracted afresh when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Train a model on one coder's labels.
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Rank every clip with a trained model.
    Predict {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Accuracy experiments.
    Eval {
        #[command(subcommand)]
        kind: EvalKind,
    },
    /// Fleiss' kappa over coder labels.
    Kappa {
        /// CSV with header clipId,coder1,...
        #[arg(long, conflicts_with = "manifest")]
        table: Option<PathBuf>,
        /// Use every coder's labels in a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Expected positives seen when viewing clips in model order.
    Productivity(ProductivityArgs),
    /// Write a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Run the labeling service.
    Serve {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Principal shots from `shots`; computed afresh when omitted.
    #[arg(long)]
    shots: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// miSvm or diverseDensity.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Coder whose labels are used; the first coder by default.
    #[arg(long)]
    coder: Option<String>,
}

#[derive(Subcommand)]
enum EvalKind {
    /// Repeated random half splits.
    Replications {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        learn: LearnArgs,
        #[arg(long, default_value_t = 20)]
        replications: usize,
    },
    /// Accuracy by training-set size.
    LearningCurve {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        learn: LearnArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,24")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        replications: usize,
    },
}

#[derive(Args)]
struct ProductivityArgs {
    /// Base rate of positives.
    #[arg(long)]
    f: f64,
    /// True positive rate.
    #[arg(long)]
    t: f64,
    /// True negative rate.
    #[arg(long)]
    n: f64,
    /// Clips viewed.
    #[arg(long)]
    k: f64,
    #[arg(long, conflicts_with = "simulate")]
    theoretic: bool,
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 100)]
    positives: usize,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    /// Average over viewing orders instead of sampling one.
    #[arg(long)]
    expected: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    positives: usize,
    #[arg(long, default_value_t = 20)]
    negatives: usize,
    /// motion, tone or both.
    #[arg(long, default_value = "both")]
    concept: Concept,
    #[arg(long)]
    noise: Option<f64>,
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

fn internal(e: impl Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, Failure> {
    let cfg = match &cli.config {
        Some(p) => AppConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => AppConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_manifest(p: &Path) -> Result<DatasetManifest, Failure> {
    DatasetManifest::load(p).map_err(|e| data(format!("{}: {e}", p.display())))
}

fn prepared(manifest: &DatasetManifest, args: &DatasetArgs, cfg: &AppConfig) -> Result<Prepared, Failure> {
    match &args.shots {
        Some(p) => Ok(Prepared { features: Vec::new(), shots: pipeline::load_shots(p).map_err(data)? }),
        None => pipeline::run(manifest, cfg).map_err(data),
    }
}

fn labeled_bags(
    manifest: &DatasetManifest,
    args: &DatasetArgs,
    learn: &LearnArgs,
    cfg: &mut AppConfig,
) -> Result<Vec<clipmil::model::Bag>, Failure> {
    if let Some(a) = learn.algorithm {
        cfg.mil.algorithm = a;
    }
    if let Some(l) = learn.lambda {
        cfg.mil.lambda = l;
    }
    cfg.mil.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let coder = match &learn.coder {
        Some(c) if manifest.coder_labels(c).is_none() => return Err(data(format!("no labels from coder {c:?}"))),
        Some(c) => c.clone(),
        None => pipeline::default_coder(manifest).ok_or_else(|| data("manifest has no labels"))?.to_string(),
    };
    log::info!("training on labels from coder {coder:?}");
    prepared(manifest, args, cfg)?.bags(manifest, Some(&coder)).map_err(data)
}

/// Writes `text` to `--out` when given, else to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| internal(format!("{}: {e}", p.display())))?;
            log::info!("wrote {}", p.display());
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(internal(e)),
                _ => {}
            }
        }
    }
    Ok(())
}

fn out_dir(cli_out: Option<&Path>, fallback: &str) -> Result<PathBuf, Failure> {
    let dir = cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn eval_err(e: eval::EvalError) -> Failure {
    match e {
        eval::EvalError::Io(e) => internal(e),
        other => data(other),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Ingest(args) => {
            let m = load_manifest(&args.manifest)?;
            let store = pipeline::extract_dataset_features(&m, &cfg).map_err(data)?;
            let path = out.unwrap_or(Path::new("features.jsonl"));
            pipeline::save_feature_store(path, &store).map_err(internal)?;
            log::info!("{} micro-clips written to {}", store.len(), path.display());
        }
        Command::Shots { data: args, features } => {
            let m = load_manifest(&args.manifest)?;
            let store = match features {
                Some(p) => pipeline::load_feature_store(p).map_err(data)?,
                None => pipeline::extract_dataset_features(&m, &cfg).map_err(data)?,
            };
            let shots = shots_for_dataset(&m, &store, &cfg.clustering).map_err(data)?;
            let path = out.unwrap_or(Path::new("shots.jsonl"));
            pipeline::save_shots(path, &shots).map_err(internal)?;
            log::info!("{} principal shots written to {}", shots.len(), path.display());
        }
        Command::Train { data: args, learn } => {
            let m = load_manifest(&args.manifest)?;
            let bags = labeled_bags(&m, args, learn, &mut cfg)?;
            let model = mil::train(&bags, &cfg.mil).map_err(data)?;
            let path = out.unwrap_or(Path::new("model.json"));
            model.save(path).map_err(internal)?;
            log::info!("{} model written to {}", model.algorithm(), path.display());
        }
        Command::Predict { data: args, model } => {
            let m = load_manifest(&args.manifest)?;
            let model = MilModel::load(model).map_err(data)?;
            let bags = prepared(&m, args, &cfg)?.bags(&m, None).map_err(data)?;
            let threshold = model.threshold();
            let rows: Vec<serde_json::Value> = mil::rank_bags(&model, &bags)
                .map_err(data)?
                .into_iter()
                .map(|(clip, score)| {
                    let label = if score > threshold { "pos" } else { "neg" };
                    serde_json::json!({ "clipId": clip, "score": score, "label": label })
                })
                .collect();
            emit(out, &eval::report::to_json(&rows))?;
        }
        Command::Eval { kind } => run_eval(kind, &mut cfg, out, cli.seed)?,
        Command::Kappa { table, manifest } => {
            let t = match (table, manifest) {
                (Some(p), _) => {
                    let f = std::fs::File::open(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
                    AgreementTable::from_csv(f).map_err(data)?
                }
                (None, Some(p)) => AgreementTable::from_coder_labels(load_manifest(p)?.labels()).map_err(data)?,
                (None, None) => return Err(Failure::Usage("give --table or --manifest".into())),
            };
            let kappa = fleiss_kappa(&t).map_err(data)?;
            let report = serde_json::json!({ "items": t.items(), "raters": t.raters(), "kappa": kappa });
            emit(out, &eval::report::to_json(&report))?;
        }
        Command::Productivity(a) => {
            let p = ProductivityParams::new(a.f, a.t, a.n, a.k).map_err(|e| Failure::Usage(e.to_string()))?;
            let theory = productivity_theoretic(&p).map_err(data)?;
            let mut report = serde_json::json!({ "params": p, "theoretic": theory });
            if a.simulate {
                let mode = if a.expected { SimulationMode::Expected } else { SimulationMode::Sampled };
                let seed = cli.seed.unwrap_or(0);
                let sim = productivity_simulate(&p, a.positives, a.negatives, a.replications, seed, mode)
                    .map_err(eval_err)?;
                report["simulation"] = serde_json::to_value(&sim).expect("report serializes");
            }
            emit(out, &eval::report::to_json(&report))?;
        }
        Command::Synth(a) => {
            let mut spec = SyntheticSpec {
                positives: a.positives,
                negatives: a.negatives,
                concept: a.concept,
                ..Default::default()
            };
            if let Some(n) = a.noise {
                spec.noise_level = n;
            }
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let dir = out_dir(out, "synthetic")?;
            let m = generate_synthetic_corpus(&spec, &dir).map_err(eval_err)?;
            let path = dir.join("manifest.json");
            m.save(&path).map_err(internal)?;
            log::info!("{} clips written, manifest at {}", m.clips().len(), path.display());
        }
        Command::Serve { root, host, port } => {
            if let Some(r) = root {
                cfg.serve.root = r.clone();
            }
            if let Some(h) = host {
                cfg.serve.host = h.clone();
            }
            if let Some(p) = port {
                cfg.serve.port = *p;
            }
            let addr: std::net::SocketAddr = format!("{}:{}", cfg.serve.host, cfg.serve.port)
                .parse()
                .map_err(|e| Failure::Usage(format!("bad listen address: {e}")))?;
            let root = cfg.serve.root.clone();
            let manager = SessionManager::open(&root, cfg).map_err(internal)?;
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            rt.block_on(run_server(Arc::new(manager), addr)).map_err(internal)?;
        }
    }
    Ok(())
}

fn run_eval(kind: &EvalKind, cfg: &mut AppConfig, out: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let seed = seed.unwrap_or(cfg.mil.seed);
    let dir = out_dir(out, "report")?;
    match kind {
        EvalKind::Replications { data: args, learn, replications } => {
            let m = load_manifest(&args.manifest)?;
            let bags = labeled_bags(&m, args, learn, cfg)?;
            let r = replicate(&bags, &cfg.mil, *replications, seed).map_err(eval_err)?;
            eval::report::write_json(&dir.join("replications.json"), &r).map_err(eval_err)?;
            eval::report::write_replication_csv(&dir.join("replications.csv"), &r).map_err(eval_err)?;
            println!("{} accuracy {:.4} ± {:.4} over {} replications", cfg.mil.algorithm, r.mean, r.std, replications);
        }
        EvalKind::LearningCurve { data: args, learn, sizes, replications } => {
            let m = load_manifest(&args.manifest)?;
            let bags = labeled_bags(&m, args, learn, cfg)?;
            let points = learning_curve(&bags, &cfg.mil, sizes, *replications, seed).map_err(eval_err)?;
            eval::report::write_json(&dir.join("learning_curve.json"), &points).map_err(eval_err)?;
            eval::report::write_curve_csv(&dir.join("learning_curve.csv"), &points).map_err(eval_err)?;
            for p in &points {
                println!("size {:>3}: {:.4} ± {:.4}", p.size, p.mean, p.std);
            }
        }
    }
    log::info!("reports written to {}", dir.display());
    Ok(())
}
