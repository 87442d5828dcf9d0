//! `trackgen`: dataset generation, two-stage training, guided sampling,
//! grounding evaluation, and gradient verification from one binary.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 numeric
//! failure (diverged loss, failed gradient check).

mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::{Path, PathBuf};
use trackgen_core::checkpoint::ParamStore;
use trackgen_core::denoiser::{prepare_stage_params, sample_clip, train_stage};
use trackgen_core::diffusion::{
    make_schedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS,
};
use trackgen_core::evalkit::{grounding_miou, report_to_json, GroundingReport};
use trackgen_core::gradsuite;
use trackgen_core::trackdata::{
    encode_frames, gen_synthetic, load_clip_frames, parse_annotations, serialize_annotations,
    write_clip_frames,
};
use trackgen_core::{ClipAnnotation, Error, Result, Rng, Tensor};

#[derive(Parser)]
#[command(name = "trackgen", version, about = "tracklet-conditioned video generation at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic moving-shapes dataset
    Gen(GenArgs),
    /// Train one stage of the denoiser
    Train(TrainArgs),
    /// Sample clips for annotation files using a trained checkpoint
    Sample(SampleArgs),
    /// Score frames against their annotations
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradArgs),
}

/// Options shared by the config-carrying subcommands.
#[derive(Args)]
struct Common {
    /// Preset to start from: desk or mini
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Key-value config file applied on top of the preset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_file(&text)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Maximum instances per clip (each clip draws 1..=instances)
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory produced by `gen`
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// image or video
    #[arg(long)]
    stage: Option<String>,
    /// Image-stage checkpoint to initialize the video stage from
    #[arg(long)]
    init: Option<PathBuf>,
    /// Let the video stage start without an image-stage checkpoint
    #[arg(long)]
    allow_cold_start: bool,
    #[arg(long)]
    steps: Option<usize>,
    /// Examples averaged into each update
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate at the final step (half-cosine decay from --lr)
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    no_instance_emb: bool,
    #[arg(long)]
    no_enhancer: bool,
    /// Instance fusion: cross or self
    #[arg(long)]
    fusion: Option<String>,
    /// Fusion placement: encoder or decoder
    #[arg(long)]
    enhancer_pos: Option<String>,
    /// Motion fusion: concat or add
    #[arg(long)]
    motion_fusion: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Model config written at training time (default: config.kv next to ckpt)
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Annotation documents to condition on
    #[arg(required = true)]
    annotations: Vec<PathBuf>,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
    /// Guidance scale
    #[arg(long = "cfg")]
    cfg_scale: Option<f64>,
    /// Ancestral sampling steps
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of clip_* folders with annotation.json and frames/
    #[arg(long)]
    data: PathBuf,
    /// Report directory (default: the data directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail (exit 2) when mean IoU falls below min_miou
    #[arg(long)]
    self_check: bool,
    #[arg(long)]
    min_miou: Option<f64>,
}

#[derive(Args)]
struct GradArgs {
    /// First seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds to run
    #[arg(long, default_value_t = 10)]
    seeds: usize,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numeric(_) => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.kv"), cfg.to_kv())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.clips {
        cfg.clips = v;
    }
    if let Some(v) = args.frames {
        cfg.frames = v;
    }
    if let Some(v) = args.instances {
        cfg.instances = v;
    }
    if let Some(v) = args.width {
        cfg.width = v;
    }
    if let Some(v) = args.height {
        cfg.height = v;
    }
    if cfg.clips == 0 || cfg.instances == 0 {
        return Err(Error::Config("clips and instances must be at least 1".into()));
    }
    if cfg.instances > cfg.k_max {
        return Err(Error::Capacity {
            what: "instances per clip",
            requested: cfg.instances,
            max: cfg.k_max,
        });
    }

    write_config(&args.out, &cfg)?;
    let mut rng = Rng::seed_from(cfg.seed);
    for i in 0..cfg.clips {
        let n = 1 + rng.below(cfg.instances);
        let clip_seed = rng.next_u64();
        let (clip, frames) =
            gen_synthetic(clip_seed, n, cfg.frames, cfg.width as u32, cfg.height as u32)?;
        let dir = args.out.join(format!("clip_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("annotation.json"), serialize_annotations(&clip))?;
        write_clip_frames(&dir.join("frames"), &frames)?;
    }
    println!(
        "wrote {} clips ({} frames of {}x{}) to {}",
        cfg.clips,
        cfg.frames,
        cfg.width,
        cfg.height,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn clip_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("clip_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no clip_* directories under {}",
            data.display()
        )));
    }
    Ok(dirs)
}

fn load_dataset(data: &Path, cfg: &RunConfig) -> Result<Vec<(ClipAnnotation, Tensor)>> {
    let mut out = Vec::new();
    for dir in clip_dirs(data)? {
        let bytes = std::fs::read(dir.join("annotation.json"))?;
        let clip = parse_annotations(&bytes)?;
        if clip.frames != cfg.frames {
            return Err(Error::Config(format!(
                "{}: clip has {} frames, config expects {}",
                dir.display(),
                clip.frames,
                cfg.frames
            )));
        }
        let frames = load_clip_frames(&dir.join("frames"))?;
        if !frames.matches(&clip) {
            return Err(Error::Config(format!(
                "{}: frame extents do not match annotation",
                dir.display()
            )));
        }
        let z0 = encode_frames(&frames, cfg.patch)?;
        out.push((clip, z0));
    }
    Ok(out)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.stage {
        cfg.stage = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
        cfg.lr_final = cfg.lr_final.min(v);
    }
    if let Some(v) = args.lr_final {
        cfg.lr_final = v;
    }
    if let Some(v) = args.log_every {
        cfg.log_every = v;
    }
    if args.no_instance_emb {
        cfg.no_instance_emb = true;
    }
    if args.no_enhancer {
        cfg.no_enhancer = true;
    }
    if let Some(v) = args.fusion {
        cfg.fusion = v;
    }
    if let Some(v) = args.enhancer_pos {
        cfg.enhancer_pos = v;
    }
    if let Some(v) = args.motion_fusion {
        cfg.motion_fusion = v;
    }

    let dcfg = cfg.denoiser()?;
    let data = load_dataset(&args.data, &cfg)?;
    let image_ckpt = match &args.init {
        Some(path) => Some(ParamStore::load(path)?),
        None => None,
    };
    let mut init_rng = Rng::seed_from(cfg.seed);
    let params = prepare_stage_params(&dcfg, image_ckpt.as_ref(), args.allow_cold_start, &mut init_rng)?;

    let sched = make_schedule(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
    let tcfg = cfg.trainer()?;
    let started = std::time::Instant::now();
    let (trained, trace) = train_stage(&data, &dcfg, params, &sched, &tcfg)?;

    write_config(&args.out, &cfg)?;
    trained.save(&args.out.join("checkpoint.bin"))?;
    let mut csv = String::from("step,loss\n");
    for (step, loss) in &trace {
        csv.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(args.out.join("loss.csv"), csv)?;

    let first = trace.first().map(|(_, l)| *l);
    let last = trace.last().map(|(_, l)| *l);
    println!(
        "stage {} done: {} steps over {} clips in {:.1}s (loss {:?} -> {:?}), checkpoint at {}",
        cfg.stage,
        cfg.steps,
        data.len(),
        started.elapsed().as_secs_f64(),
        first,
        last,
        args.out.join("checkpoint.bin").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(args: SampleArgs) -> Result<()> {
    // architecture comes from the config written at training time
    let model_config = args
        .model_config
        .clone()
        .unwrap_or_else(|| {
            args.ckpt
                .parent()
                .unwrap_or(Path::new("."))
                .join("config.kv")
        });
    let mut cfg = RunConfig::preset(&args.common.preset)?;
    let text = std::fs::read_to_string(&model_config).map_err(|e| {
        Error::Config(format!(
            "cannot read model config {}: {e}",
            model_config.display()
        ))
    })?;
    cfg.apply_file(&text)?;
    if let Some(path) = &args.common.config {
        cfg.apply_file(&std::fs::read_to_string(path)?)?;
    }
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.cfg_scale {
        cfg.cfg_scale = v;
    }
    if let Some(v) = args.steps {
        cfg.sample_steps = v;
    }

    let dcfg = cfg.denoiser()?;
    let params = ParamStore::load(&args.ckpt)?;
    let sched = make_schedule(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
    write_config(&args.out, &cfg)?;

    for (i, path) in args.annotations.iter().enumerate() {
        let clip = parse_annotations(&std::fs::read(path)?)?;
        if clip.frames != cfg.frames {
            return Err(Error::Config(format!(
                "{}: clip has {} frames, model expects {}",
                path.display(),
                clip.frames,
                cfg.frames
            )));
        }
        let seed = cfg.seed.wrapping_add(i as u64);
        let (_, frames) = sample_clip(
            &clip,
            &dcfg,
            &params,
            &sched,
            cfg.sample_steps,
            cfg.cfg_scale,
            seed,
        )?;
        let dir = args.out.join(format!("clip_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("annotation.json"), serialize_annotations(&clip))?;
        write_clip_frames(&dir.join("frames"), &frames)?;
        println!("sampled {} -> {}", path.display(), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.min_miou {
        cfg.min_miou = v;
    }
    let out = args.out.clone().unwrap_or_else(|| args.data.clone());
    std::fs::create_dir_all(&out)?;

    let mut rows: Vec<(String, GroundingReport)> = Vec::new();
    for dir in clip_dirs(&args.data)? {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("clip")
            .to_string();
        let clip = parse_annotations(&std::fs::read(dir.join("annotation.json"))?)?;
        let frames = load_clip_frames(&dir.join("frames"))?;
        let report = grounding_miou(&clip, &frames)?;
        let echo = vec![
            ("data".to_string(), args.data.display().to_string()),
            ("clip".to_string(), name.clone()),
        ];
        std::fs::write(
            out.join(format!("report_{name}.json")),
            report_to_json(&report, &echo),
        )?;
        rows.push((name, report));
    }

    let n = rows.len() as f64;
    let mean_iou = rows.iter().map(|(_, r)| r.mean_iou).sum::<f64>() / n;
    let detection = rows.iter().map(|(_, r)| r.detection_rate).sum::<f64>() / n;
    let consistency = rows.iter().map(|(_, r)| r.identity_consistency).sum::<f64>() / n;

    let mut agg = String::from("{\n");
    agg.push_str(&format!("  \"clips\": {},\n", rows.len()));
    agg.push_str(&format!("  \"mean_iou\": {mean_iou:.6},\n"));
    agg.push_str(&format!("  \"detection_rate\": {detection:.6},\n"));
    agg.push_str(&format!("  \"identity_consistency\": {consistency:.6},\n"));
    agg.push_str("  \"per_clip\": [");
    for (i, (name, r)) in rows.iter().enumerate() {
        if i > 0 {
            agg.push(',');
        }
        agg.push_str(&format!(
            "\n    {{\"clip\": \"{name}\", \"mean_iou\": {:.6}, \"detection_rate\": {:.6}, \"identity_consistency\": {:.6}}}",
            r.mean_iou, r.detection_rate, r.identity_consistency
        ));
    }
    agg.push_str("\n  ]\n}\n");
    std::fs::write(out.join("report.json"), agg)?;

    println!(
        "{} clips: mean IoU {:.4}, detection {:.4}, consistency {:.4}",
        rows.len(),
        mean_iou,
        detection,
        consistency
    );
    if args.self_check && mean_iou < cfg.min_miou {
        return Err(Error::Config(format!(
            "self-check failed: mean IoU {mean_iou:.4} below threshold {}",
            cfg.min_miou
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck(args: GradArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for s in args.seed..args.seed + args.seeds as u64 {
        for r in gradsuite::run_all(s)? {
            match worst.iter_mut().find(|(n, _)| *n == r.name) {
                Some((_, w)) => *w = w.max(r.max_rel_err),
                None => worst.push((r.name, r.max_rel_err)),
            }
        }
    }
    let mut failed = 0usize;
    println!("{:<26} {:>12}  result (worst of {} seeds)", "check", "max rel err", args.seeds);
    for (name, err) in &worst {
        let ok = *err < gradsuite::TOLERANCE;
        if !ok {
            failed += 1;
        }
        println!("{name:<26} {err:>12.3e}  {}", if ok { "pass" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Error::Numeric(format!(
            "{failed} gradient checks exceeded {}",
            gradsuite::TOLERANCE
        )));
    }
    println!("all {} checks within {}", worst.len(), gradsuite::TOLERANCE);
    Ok(())
}
