use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ser_duo_core::datasets::{
    build_iemocap_manifest, build_ravdess_manifest, Manifest, ManifestOptions, Split,
};
use ser_duo_core::metrics::EvaluationReport;
use ser_duo_core::{pipeline, synthetic, Error, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const THREADS_ENV: &str = "SER_DUO_THREADS";

#[derive(Parser)]
#[command(
    name = "ser-duo",
    version,
    about = "Dual-branch speech emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest CSV from a corpus, or generate the synthetic corpus.
    #[command(subcommand)]
    Prepare(Prepare),
    /// Train the text branch.
    #[command(subcommand)]
    Train(Train),
    /// Masked-prediction pretraining of the audio branch.
    #[command(subcommand)]
    Pretrain(Pretrain),
    /// Fine-tune a pretrained audio checkpoint for emotion.
    #[command(subcommand)]
    Finetune(Finetune),
    /// Score one split with a trained checkpoint of either branch.
    Score(ScoreArgs),
    /// Max-fuse two score files.
    Fuse(FuseArgs),
    /// Confusion matrix, per-class metrics, accuracies and ROC for a score file.
    Evaluate(EvaluateArgs),
}

#[derive(Subcommand)]
enum Prepare {
    Ravdess {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep emotions outside the four-class task.
        #[arg(long)]
        all_classes: bool,
        /// Actor ids routed to the test split.
        #[arg(long, value_delimiter = ',', default_values_t = [21u8, 22, 23, 24])]
        test_actors: Vec<u8>,
    },
    Iemocap {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        root: PathBuf,
        /// `utterance_id<TAB>text` lines.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        all_classes: bool,
        /// Keep `exc` separate instead of merging it into happy.
        #[arg(long)]
        no_merge_excited: bool,
        #[arg(long, default_value_t = 5)]
        test_session: u8,
        #[arg(long, default_value_t = 2)]
        min_agreement: u32,
    },
    /// Writes audio/, manifest.csv and embeddings.txt under --out.
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key=value` file applied before --set overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set gcn.hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> ser_duo_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        for kv in &self.overrides {
            cfg.apply_text(kv)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Train {
    Gcn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum Pretrain {
    Hubert {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum Finetune {
    Hubert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Needed for text-branch checkpoints.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Fused CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also evaluate the fused scores into this directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Directory for report.json and roc.csv.
    #[arg(long)]
    out: PathBuf,
}

fn print_accuracies(r: &EvaluationReport) {
    println!("overall accuracy: {:.4}", r.overall_accuracy);
    println!("balanced accuracy: {:.4}", r.balanced_accuracy);
}

fn prepare(cmd: Prepare) -> ser_duo_core::Result<()> {
    let (manifest, out): (Manifest, PathBuf) = match cmd {
        Prepare::Ravdess {
            dir,
            out,
            all_classes,
            test_actors,
        } => {
            // absolute paths keep the manifest valid wherever it is written
            let dir = dir.canonicalize().map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let opts = ManifestOptions {
                all_classes,
                ravdess_test_actors: test_actors,
                ..ManifestOptions::default()
            };
            (build_ravdess_manifest(&dir, &opts)?, out)
        }
        Prepare::Iemocap {
            metadata,
            root,
            transcripts,
            out,
            all_classes,
            no_merge_excited,
            test_session,
            min_agreement,
        } => {
            let root = root.canonicalize().map_err(|e| Error::Io {
                path: root.clone(),
                source: e,
            })?;
            let opts = ManifestOptions {
                merge_excited: !no_merge_excited,
                all_classes,
                min_agreement,
                test_session,
                ..ManifestOptions::default()
            };
            let m = build_iemocap_manifest(&metadata, &root, transcripts.as_deref(), &opts)?;
            (m, out)
        }
        Prepare::Synthetic {
            out,
            seed,
            per_class,
        } => {
            let c = synthetic::generate_synthetic(&out, seed, per_class)?;
            println!(
                "{} utterances -> {}",
                c.manifest.len(),
                c.manifest_path.display()
            );
            println!("embeddings -> {}", c.embeddings_path.display());
            return Ok(());
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    manifest.save(&out)?;
    let test = manifest.split(Split::Test).count();
    println!(
        "{} utterances ({} train, {test} test) -> {}",
        manifest.len(),
        manifest.len() - test,
        out.display()
    );
    Ok(())
}

fn with_paths(
    config: &ConfigArgs,
    manifest: &Path,
    embeddings: Option<&Path>,
    checkpoint: Option<&Path>,
) -> ser_duo_core::Result<RunConfig> {
    let mut cfg = config.resolve()?;
    cfg.manifest = Some(manifest.to_path_buf());
    if let Some(e) = embeddings {
        cfg.embeddings = Some(e.to_path_buf());
    }
    if let Some(c) = checkpoint {
        cfg.checkpoint = Some(c.to_path_buf());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> ser_duo_core::Result<()> {
    match cli.command {
        Command::Prepare(p) => prepare(p)?,
        Command::Train(Train::Gcn {
            manifest,
            embeddings,
            out,
            config,
        }) => {
            let cfg = with_paths(&config, &manifest, embeddings.as_deref(), None)?;
            let r = pipeline::train_gcn(&cfg, &out)?;
            println!(
                "best epoch {} of {}, test accuracy {:.4} -> {}",
                r.best_epoch,
                r.history.len(),
                r.history[r.best_epoch - 1].test_acc,
                out.display()
            );
        }
        Command::Pretrain(Pretrain::Hubert {
            manifest,
            iterations,
            out,
            config,
        }) => {
            let mut cfg = with_paths(&config, &manifest, None, None)?;
            if let Some(i) = iterations {
                cfg.pretrain.iterations = i;
            }
            let r = pipeline::pretrain_hubert(&cfg, &out)?;
            for it in 1..=cfg.pretrain.iterations {
                if let Some((first, last)) = r.loss_trend(it, 20) {
                    println!("iteration {it}: loss {first:.4} -> {last:.4}");
                }
            }
            println!("-> {}", out.display());
        }
        Command::Finetune(Finetune::Hubert {
            checkpoint,
            manifest,
            out,
            config,
        }) => {
            let cfg = with_paths(&config, &manifest, None, Some(&checkpoint))?;
            let r = pipeline::finetune_hubert(&cfg, &out)?;
            println!(
                "best epoch {} of {}, test accuracy {:.4} -> {}",
                r.best_epoch,
                r.history.len(),
                r.history[r.best_epoch - 1].test_acc,
                out.display()
            );
        }
        Command::Score(a) => {
            let cfg = with_paths(
                &a.config,
                &a.manifest,
                a.embeddings.as_deref(),
                Some(&a.checkpoint),
            )?;
            let t = pipeline::score(&cfg, a.split, &a.out)?;
            println!("{} rows -> {}", t.len(), a.out.display());
        }
        Command::Fuse(a) => {
            let t = pipeline::fuse_files(&a.a, &a.b, &a.out)?;
            println!("{} rows -> {}", t.len(), a.out.display());
            if let Some(dir) = a.report {
                print_accuracies(&pipeline::evaluate_file(&a.out, &dir)?);
            }
        }
        Command::Evaluate(a) => {
            print_accuracies(&pipeline::evaluate_file(&a.scores, &a.out)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Parse { context, .. } if context == "config" => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}")
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
