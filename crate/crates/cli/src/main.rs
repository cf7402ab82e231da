use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sonedit::config::{parse_thresholds, GlobalConfig};
use sonedit::dataset::{build_dataset, load_triplet, read_manifest, FilterThresholds, ManifestRecord, Subset};
use sonedit::diffusion::SamplerConfig;
use sonedit::eval::{evaluate_dataset, mos_aggregate, volume_sweep, CategoryTexts, EvalSample};
use sonedit::media::{load_png, load_wav, save_png};
use sonedit::pipeline::EditModel;
use sonedit::trainer::{run, Checkpoint, PreparedSample};
use sonedit::{Error, Result};

#[derive(Parser)]
#[command(name = "sonedit", version, about = "Audio-guided image editing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a filtered triplet manifest (media is written next to it).
    BuildDataset(BuildArgs),
    /// Train the mapping network and adapters on a manifest.
    Train(TrainArgs),
    /// Edit one image with one audio clip.
    Edit(EditArgs),
    /// Score a checkpoint on the kept records of a manifest.
    Eval(EvalArgs),
    /// Edit one image at several audio gains.
    SweepVolume(SweepArgs),
    /// Aggregate opinion-score responses.
    Mos(MosArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subset: String,
    /// Inline JSON object or path to a JSON file.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SamplerArgs {
    /// Sampler settings are taken from this config when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    s_cond: Option<f64>,
    #[arg(long)]
    s_img: Option<f64>,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma-separated ascending gains.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2")]
    gains: Vec<f64>,
    /// Output directory for per-gain images and sweep.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct MosArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn require_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<GlobalConfig> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::config("--config", "a config file is required"))?;
    Ok(GlobalConfig::load(path)?.seeded(seed))
}

fn sampler_config(args: &SamplerArgs) -> Result<SamplerConfig> {
    let mut cfg = match &args.config {
        Some(p) => GlobalConfig::load(p)?.seeded(args.seed).sampler,
        None => SamplerConfig::default(),
    };
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.s_cond {
        cfg.guidance.s_cond = s;
    }
    if let Some(s) = args.s_img {
        cfg.guidance.s_img = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thresholds_arg(arg: &str) -> Result<FilterThresholds> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::config("thresholds", format!("cannot read {arg}: {e}")))?
    };
    parse_thresholds(&text)
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn kept_records(manifest: &Path) -> Result<Vec<ManifestRecord>> {
    Ok(read_manifest(manifest)?.into_iter().filter(ManifestRecord::kept).collect())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_build(args: &BuildArgs) -> Result<()> {
    let mut cfg = require_config(&args.config, args.seed)?;
    cfg.dataset.subset = args.subset.parse::<Subset>().map_err(|e| Error::config("--subset", e.to_string()))?;
    if let Some(t) = &args.thresholds {
        cfg.thresholds = thresholds_arg(t)?;
    }
    let model = EditModel::new(&cfg.model())?;
    let summary = build_dataset(&cfg.dataset, &cfg.thresholds, &model.encoders, &args.out)?;
    for s in &summary.skipped {
        eprintln!("skipped: {s}");
    }
    print_json(&summary.stats)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = require_config(&args.config, args.seed)?;
    let model_cfg = cfg.model();
    let start = match &args.resume {
        Some(p) => Some(Checkpoint::load(p)?.restore()?),
        None => None,
    };
    let fresh;
    let model = match &start {
        Some(s) => &s.model,
        None => {
            fresh = EditModel::new(&model_cfg)?;
            &fresh
        }
    };
    let base = manifest_dir(&args.manifest);
    let mut samples = Vec::new();
    for r in kept_records(&args.manifest)? {
        let (before, after, audio) = load_triplet(&r, &base)?;
        samples.push(PreparedSample::new(model, &before, &after, &audio)?);
    }
    let outcome = run(&model_cfg, &cfg.train, &samples, start, Some(&args.out))?;
    print_json(&serde_json::json!({
        "steps": outcome.state.step,
        "stop": outcome.stop,
        "best_val_l_total": outcome.best_val,
        "checkpoint": args.out.join("checkpoint.json"),
    }))
}

fn cmd_edit(args: &EditArgs) -> Result<()> {
    let sampler = sampler_config(&args.sampler)?;
    let model = Checkpoint::load(&args.ckpt)?.restore_model()?;
    let src = load_png(&args.src)?;
    let audio = load_wav(&args.audio)?.at_gain(args.gain)?;
    let edited = model.edit(&src, &audio, &sampler)?;
    save_png(&edited, &args.out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let sampler = sampler_config(&args.sampler)?;
    let model = Checkpoint::load(&args.ckpt)?.restore_model()?;
    let base = manifest_dir(&args.manifest);
    let mut samples = Vec::new();
    for r in kept_records(&args.manifest)? {
        let (before, after, audio) = load_triplet(&r, &base)?;
        samples.push(EvalSample {
            before,
            after,
            audio,
            category: r.category.clone(),
            seed: r.seed,
        });
    }
    let texts = CategoryTexts::from_encoders(&model.encoders, samples.iter().map(|s| s.category.as_str()))?;
    let report = evaluate_dataset(&model, &samples, &texts, &sampler)?;
    write_json(&report, &args.out)?;
    print_json(&report)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let sampler = sampler_config(&args.sampler)?;
    let model = Checkpoint::load(&args.ckpt)?.restore_model()?;
    let src = load_png(&args.src)?;
    let audio = load_wav(&args.audio)?;
    let report = volume_sweep(&model, &src, &audio, &args.gains, &sampler)?;
    std::fs::create_dir_all(&args.out)?;
    for (g, img) in report.gains.iter().zip(&report.images) {
        save_png(img, &args.out.join(format!("gain_{g}.png")))?;
    }
    write_json(&report, &args.out.join("sweep.json"))?;
    print_json(&report)
}

fn cmd_mos(args: &MosArgs) -> Result<()> {
    let table = mos_aggregate(&args.csv)?;
    if let Some(out) = &args.out {
        write_json(&table, out)?;
    }
    print_json(&table)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::BuildDataset(a) => cmd_build(a),
        Command::Train(a) => cmd_train(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepVolume(a) => cmd_sweep(a),
        Command::Mos(a) => cmd_mos(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config { .. }) { 3 } else { 1 })
        }
    }
}
