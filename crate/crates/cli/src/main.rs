//! `rawvox`: generate a synthetic corpus, build manifests, train the five
//! network stages, separate vocals from mixtures and score models with MCD.

mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rawvox::audio::{read_wav, write_wav};
use rawvox::dataset::synth::{generate_corpus, SynthConfig};
use rawvox::dataset::{build_manifest, Corpus, DatasetManifest, Split};
use rawvox::networks::Stage;
use rawvox::pipeline::{evaluate_mcd, separate, EvalModel, SeparationMode, SeparationModels};
use rawvox::training::{run_training_stage, ProjectConfig, StageDeps};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "rawvox", version, about = "Singing-voice extraction through distilled content embeddings")]
struct Cli {
    /// TOML project config (network and training settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in settings used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Overrides the seed of corpus generation, manifest splits and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "checkpoints")]
    checkpoint_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size networks and training schedule.
    Default,
    /// Narrow networks and short schedules for CPU runs on the synthetic corpus.
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic multi-singer corpus.
    MakeCorpus(MakeCorpusArgs),
    /// Scan a corpus directory and write a JSONL manifest.
    Manifest(ManifestArgs),
    /// Train one stage; its checkpoint and loss log go to the checkpoint dir.
    Train(TrainArgs),
    /// Extract the vocal from a mixture WAV.
    Separate(SeparateArgs),
    /// Score models on the test split with mel cepstral distortion.
    Evaluate(EvaluateArgs),
    /// Print the effective config as TOML.
    ShowConfig,
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    singers: usize,
    #[arg(long, default_value_t = 20)]
    clips_per_singer: usize,
    #[arg(long, default_value_t = 3)]
    test_per_singer: usize,
    #[arg(long, default_value_t = 2.5)]
    min_secs: f64,
    #[arg(long, default_value_t = 3.2)]
    max_secs: f64,
}

#[derive(Args, Debug)]
struct ManifestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Share of non-test songs held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// teacher, student_encoder, sdn, sin or f0.
    stage: Stage,
    #[arg(long)]
    manifest: PathBuf,
    /// Analysis cache; defaults to `.cache` next to the manifest.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SeparateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "sin")]
    mode: SeparationMode,
    /// Singer index (required for sdn).
    #[arg(long)]
    singer: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated subset of sin, sdn, mean, oracle.
    #[arg(long, value_delimiter = ',', default_value = "sin,sdn,mean")]
    models: Vec<EvalModel>,
    /// Writes `<out>.tsv` and `<out>.jsonl`; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn project_config(cli: &Cli) -> Result<ProjectConfig, CliError> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => ProjectConfig::load(path)?,
        (None, Preset::Default) => ProjectConfig::default(),
        (None, Preset::Desk) => ProjectConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cache_for(manifest: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join(".cache"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::MakeCorpus(a) => {
            let mut synth = SynthConfig {
                n_singers: a.singers,
                clips_per_singer: a.clips_per_singer,
                test_per_singer: a.test_per_singer,
                min_secs: a.min_secs,
                max_secs: a.max_secs,
                ..SynthConfig::default()
            };
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            if a.test_per_singer >= a.clips_per_singer || a.min_secs > a.max_secs || a.singers == 0 {
                return Err(CliError::Usage("need singers > 0, test-per-singer < clips-per-singer and min-secs <= max-secs".into()));
            }
            generate_corpus(&a.out, &synth)?;
            log::info!("wrote {} clips to {}", a.singers * a.clips_per_singer, a.out.display());
        }
        Command::Manifest(a) => {
            let m = build_manifest(&a.corpus, a.val_fraction, cli.seed.unwrap_or(0))?;
            m.write(&a.out)?;
            log::info!(
                "{} songs ({} train, {} val, {} test), {} singers",
                m.entries().len(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test),
                m.n_singers()
            );
        }
        Command::Train(a) => {
            let cfg = project_config(&cli)?;
            let deps = StageDeps::for_stage(a.stage, &cli.checkpoint_dir, &cfg.network)?;
            let manifest = DatasetManifest::read(&a.manifest)?;
            let cache = cache_for(&a.manifest, a.cache_dir.as_deref());
            let corpus = Corpus::load(manifest, &[Split::Train, Split::Val], Some(&cache))?;
            let (ck, report) = run_training_stage(a.stage, &corpus, &cfg.network, &cfg.for_stage(a.stage), &deps)?;
            let path = cli.checkpoint_dir.join(a.stage.file_name());
            ck.save(&path)?;
            report.write_jsonl(&cli.checkpoint_dir.join(format!("{}.train.jsonl", a.stage)))?;
            log::info!(
                "{}: {} steps, validation loss {:.5} -> {:.5}, saved {}",
                a.stage,
                report.steps(),
                report.initial_val_loss(),
                report.best().loss,
                path.display()
            );
        }
        Command::Separate(a) => {
            if a.mode == SeparationMode::Sdn && a.singer.is_none() {
                return Err(CliError::Usage("--mode sdn requires --singer".into()));
            }
            let models = SeparationModels::load(&cli.checkpoint_dir, &[a.mode], true)?;
            let mixture = read_wav(&a.input)?;
            let result = separate(&mixture, a.mode, a.singer, &models)?;
            write_wav(&a.output, &result.vocal_clip)?;
            log::info!("wrote {:.2} s of vocal to {}", result.vocal_clip.duration_secs(), a.output.display());
        }
        Command::Evaluate(a) => {
            let modes: Vec<SeparationMode> = a
                .models
                .iter()
                .filter_map(|m| match m {
                    EvalModel::Sin => Some(SeparationMode::Sin),
                    EvalModel::Sdn => Some(SeparationMode::Sdn),
                    _ => None,
                })
                .collect();
            let mut models = SeparationModels::load(&cli.checkpoint_dir, &modes, false)?;
            if a.models.contains(&EvalModel::Mean) && models.sin.is_none() && models.sdn.is_none() {
                // the baseline reads its mean from a decoder's feature statistics
                models = SeparationModels::load(&cli.checkpoint_dir, &[SeparationMode::Sin], false)?;
            }
            let manifest = DatasetManifest::read(&a.manifest)?;
            let cache = cache_for(&a.manifest, a.cache_dir.as_deref());
            let report = evaluate_mcd(&manifest, &models, &a.models, Some(&cache))?;
            print!("{}", report.to_tsv());
            if let Some(stem) = &a.out {
                report.write(stem)?;
            }
        }
        Command::ShowConfig => print!("{}", project_config(&cli)?.to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
