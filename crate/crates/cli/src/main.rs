//! `rim`: reference building, region classification, evaluation, synthetic
//! worlds and ablations from the command line.
//!
//! Exit codes: 0 success, 2 input or validation failure, 3 numeric failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rim_core::ablation::{default_configs, emit_ablation, run_ablation};
use rim_core::error::ErrorKind;
use rim_core::eval::emit_report;
use rim_core::interchange::{load_manifest, Manifest};
use rim_core::pipeline::{
    build_references, classify_images, evaluate, load_predictions, load_references, refs_dir, save_predictions,
    save_references, with_threads,
};
use rim_core::synth::{generate_world, WorldSpec};
use rim_core::Error;

use config::{ConfigLayer, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "rim", version, about = "Intra-modal region classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build category and background references from a manifest.
    BuildRefs(PipelineArgs),
    /// Classify every test region and write label maps and assignments.
    Classify(ClassifyArgs),
    /// Score predictions against the manifest's ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic world.
    Synth(SynthArgs),
    /// Evaluate the matcher ladder side by side.
    Ablate(PipelineArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Path to manifest.json.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file of configuration values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct Tuning {
    /// Number of category agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Subcategories per category.
    #[arg(long)]
    subcats: Option<usize>,
    /// Score candidates with holistic references only.
    #[arg(long)]
    no_subcats: bool,
    /// Nearest-reference cosine matching instead of relation-aware matching.
    #[arg(long)]
    naive: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    attn_threshold: Option<f32>,
    #[arg(long)]
    mask_threshold: Option<f32>,
    #[arg(long)]
    prompt_points: Option<usize>,
    /// Pool references over whole images rather than their foregrounds.
    #[arg(long)]
    no_fg_mask: bool,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tuning: Tuning,
    /// Reference bundle directory (default: <out>/refs).
    #[arg(long)]
    refs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding predictions/; reports are written here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Orthogonal,
    Confusable,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON WorldSpec; unspecified fields take their defaults.
    #[arg(long, conflicts_with = "preset")]
    world_spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Overrides the world spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn flag_layer(common: &Common, tuning: &Tuning) -> ConfigLayer {
    ConfigLayer {
        agents: tuning.agents,
        subcats: tuning.subcats,
        use_subcategories: tuning.no_subcats.then_some(false),
        naive: tuning.naive.then_some(true),
        epsilon: tuning.epsilon,
        attn_threshold: tuning.attn_threshold,
        mask_threshold: tuning.mask_threshold,
        prompt_points: tuning.prompt_points,
        use_foreground_mask: tuning.no_fg_mask.then_some(false),
        seed: common.seed,
        threads: common.threads,
    }
}

fn resolve(common: &Common, tuning: &Tuning) -> Result<RunConfig, Error> {
    let file = common.config.as_deref().map(ConfigLayer::read).transpose()?;
    RunConfig::resolve(file, flag_layer(common, tuning))
}

fn manifest(path: &Path) -> Result<Manifest, Error> {
    info!("loading {}", path.display());
    Ok(load_manifest(path)?)
}

fn cmd_build_refs(args: &PipelineArgs) -> Result<(), Error> {
    let cfg = resolve(&args.common, &args.tuning)?;
    let manifest = manifest(&args.common.manifest)?;
    let built = with_threads(cfg.threads, || build_references(&manifest, &cfg.build_options()))??;
    let dir = refs_dir(&args.common.out);
    save_references(&built, &dir)?;
    let refs = &built.refs;
    let images: usize = manifest.references.iter().map(Vec::len).sum();
    let subs = refs.categories().iter().map(|c| c.subcategories().len()).max().unwrap_or(0);
    println!(
        "C={} D={} K={} T={} -> {}",
        refs.category_count(),
        refs.dim(),
        images,
        subs,
        dir.display()
    );
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs) -> Result<(), Error> {
    let cfg = resolve(&args.common, &args.tuning)?;
    let manifest = manifest(&args.common.manifest)?;
    let dir = args.refs.clone().unwrap_or_else(|| refs_dir(&args.common.out));
    let refs = load_references(&dir)?;
    let matcher = cfg.matcher();
    let preds = with_threads(cfg.threads, || classify_images(&manifest, &refs, &matcher, cfg.mask_threshold))??;
    save_predictions(&args.common.out, &preds, &matcher, cfg.mask_threshold)?;
    let regions: usize = preds.iter().map(|p| p.regions.len()).sum();
    let skipped: usize = preds.iter().map(|p| p.skipped.len()).sum();
    println!(
        "classified {regions} regions in {} images ({skipped} skipped) -> {}",
        preds.len(),
        args.common.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let file = args.config.as_deref().map(ConfigLayer::read).transpose()?;
    let manifest = manifest(&args.manifest)?;
    let preds = load_predictions(&manifest, &args.out)?;
    let config = serde_json::json!({
        "manifest": args.manifest,
        "predictions": args.out,
        "config": file,
    });
    let report = evaluate(&manifest, &preds, config)?;
    emit_report(&report, &args.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let mut spec = match (&args.world_spec, args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
            serde_json::from_str::<WorldSpec>(&text).map_err(Error::json(path))?
        }
        (None, Some(Preset::Confusable)) => WorldSpec::confusable(0),
        (None, Some(Preset::Orthogonal) | None) => WorldSpec::orthogonal(0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let truth = generate_world(&spec, &args.out)?;
    println!(
        "C={} D={} K={} tests={} -> {}",
        spec.class_count,
        spec.feature_dim,
        spec.images_per_class,
        truth.tests.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_ablate(args: &PipelineArgs) -> Result<(), Error> {
    let cfg = resolve(&args.common, &args.tuning)?;
    let manifest = manifest(&args.common.manifest)?;
    let configs = default_configs(&cfg.match_config());
    let result = with_threads(cfg.threads, || {
        run_ablation(&manifest, &cfg.build_options(), &configs, cfg.mask_threshold)
    })??;
    emit_ablation(&result, &args.common.out)?;
    print!("{}", result.to_text());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::BuildRefs(a) => cmd_build_refs(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Input => ExitCode::from(2),
                ErrorKind::Numeric => ExitCode::from(3),
            }
        }
    }
}
