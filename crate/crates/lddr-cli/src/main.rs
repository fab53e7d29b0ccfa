//! `lddr`: train, run, and inspect the cascaded landmark aligner.
//!
//! Exit codes: 0 success, 1 partial per-sample failures during `align`,
//! 2 configuration errors, 3 data/IO errors, 4 numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lddr_core::data::{load_image, load_manifest, save_pts, synth_generate, Sample, SynthSpec};
use lddr_core::net::{
    geometry_of, init_random_weights, load_weights, min_input_size, original_network_layers,
    receptive_field_table, save_weights, stage_config_with_plan, ChannelPlan, Engine, StageConfig,
    WeightSet,
};
use lddr_core::shape::{AugmentConfig, FaceFrame, PatchSchedule};
use lddr_core::{
    ced_curve, load_model, nme, predict, save_model, train_cascade, verify_model_engine,
    CascadeModel, Error, LambdaChoice, NmeProtocol, TrainConfig, TrainSample,
};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "lddr",
    about = "Cascaded facial landmark alignment over local convolutional descriptors",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a cascade model from a manifest of annotated images
    Train(TrainArgs),
    /// Predict landmarks for every image in a manifest
    Align(AlignArgs),
    /// Score predicted landmarks against ground truth
    Eval(EvalArgs),
    /// Print per-stage network geometry and receptive fields
    NetInfo(NetInfoArgs),
    /// Generate a deterministic synthetic face dataset
    Synth(SynthArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Worker threads (default: LDDR_THREADS or all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// key = value file supplying defaults for any long flag
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetPreset {
    /// Published channel widths (96/256/384/384/256, grouped)
    Standard,
    /// Narrow widths for fast training; descriptor stays 256-d
    Slim,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training manifest (image<TAB>pts<TAB>x<TAB>y<TAB>w<TAB>h)
    #[arg(long)]
    manifest: PathBuf,
    /// Descriptor network weight file (read, or written with --init-weights)
    #[arg(long)]
    weights: PathBuf,
    /// Create random weights with this seed at --weights before training
    #[arg(long)]
    init_weights: Option<u64>,
    #[arg(long, value_enum, default_value = "slim")]
    net_preset: NetPreset,
    /// Output model file
    #[arg(long)]
    model: PathBuf,
    /// Output training report (TSV); default: <model>.report.tsv
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fixed ridge strength; omit to select by cross-validation
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Seed for initial-shape perturbation, augmentation, and CV folds
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of cascade stages (patch sizes 92, 68, 42, 21)
    #[arg(long, default_value_t = 4)]
    stages: usize,
    #[arg(long)]
    no_augment: bool,
    /// Start training shapes at the exact mean shape instead of a random
    /// similarity of it (useful for interpolation checks)
    #[arg(long)]
    no_init_perturb: bool,
    /// Rotated copies per base sample during augmentation
    #[arg(long, default_value_t = 1)]
    rotations: usize,
    #[arg(long, default_value_t = 15.0)]
    max_rotation: f64,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory receiving one <id>.pts per sample
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Interpupil68,
    Interpupil49,
    EyeNose,
    FaceSize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of predicted <id>.pts files
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth manifest
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "interpupil68")]
    protocol: Protocol,
    /// Write a threshold<TAB>fraction cumulative-error file here
    #[arg(long)]
    ced: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    ced_max: f64,
    #[arg(long, default_value_t = 101)]
    ced_steps: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum InfoPreset {
    Standard,
    Slim,
    /// The unmodified base network, for receptive-field inspection
    Original,
}

#[derive(Args)]
struct NetInfoArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value = "standard")]
    preset: InfoPreset,
    /// Restrict to one stage (1-4); default: all
    #[arg(long)]
    stage: Option<usize>,
    #[arg(long, default_value_t = 3)]
    in_channels: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 160)]
    size: usize,
    #[arg(long, default_value_t = 12.0)]
    max_rotation: f64,
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Geometry(_) => 2,
        Error::Input(_) | Error::Parse { .. } | Error::Metric(_) | Error::Io { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

/// Reads a `key = value` config file and expands it into `--key value`
/// argument pairs.
fn config_file_args(path: &Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse_at(format!("config line is not `key = value`: {line:?}"), idx + 1)
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::parse_at("empty key or value in config file", idx + 1));
        }
        match value {
            // switches: `true` enables the flag, `false` omits it
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Injects config-file arguments right after the subcommand so explicit
/// flags, parsed later, win via args_override_self.
fn expand_args() -> Result<Vec<String>, Error> {
    let raw: Vec<String> = std::env::args().collect();
    let config_path = raw
        .iter()
        .position(|a| a == "--config")
        .and_then(|i| raw.get(i + 1))
        .map(PathBuf::from);
    let Some(path) = config_path else { return Ok(raw) };
    let injected = config_file_args(&path)?;
    const SUBCOMMANDS: [&str; 5] = ["train", "align", "eval", "net-info", "synth"];
    let sub_pos = raw.iter().position(|a| SUBCOMMANDS.contains(&a.as_str()));
    let mut out = raw.clone();
    let at = sub_pos.map(|i| i + 1).unwrap_or(raw.len());
    out.splice(at..at, injected);
    Ok(out)
}

fn init_threads(threads: Option<usize>) -> Result<(), Error> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("LDDR_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::config(format!("LDDR_THREADS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::config("thread count must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Reconstructs the channel plan a weight set was generated from, so engine
/// stage configs always agree with the stored layer shapes.
fn plan_from_weights(ws: &WeightSet) -> Result<ChannelPlan, Error> {
    let mut widths = [0usize; 5];
    let mut groups = [0usize; 5];
    for (i, name) in ["conv1", "conv2", "conv3", "conv4", "conv5"].iter().enumerate() {
        let w = ws
            .get(name)
            .ok_or_else(|| Error::config(format!("weight file has no layer {name}")))?;
        widths[i] = w.out_channels;
        groups[i] = w.groups;
    }
    Ok(ChannelPlan { in_channels: ws.in_channels(), widths, groups })
}

fn stage_configs(plan: &ChannelPlan, stages: usize) -> Result<Vec<StageConfig>, Error> {
    (1..=stages).map(|s| stage_config_with_plan(s, plan)).collect()
}

fn load_train_samples(samples: &[Sample]) -> Result<Vec<TrainSample>, Error> {
    samples
        .iter()
        .map(|s| {
            let shape = s.shape.clone().ok_or_else(|| {
                Error::input(format!("sample {} has no ground-truth pts file", s.id))
            })?;
            let (x, y, w, h) = s.face_box;
            Ok(TrainSample {
                image: load_image(&s.image_path)?,
                frame: FaceFrame::new(x, y, w, h)?,
                shape,
            })
        })
        .collect()
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let start = std::time::Instant::now();
    if !(1..=4).contains(&args.stages) {
        return Err(Error::config(format!("--stages must be 1-4, got {}", args.stages)));
    }
    let manifest = load_manifest(&args.manifest)?;
    let dataset = load_train_samples(&manifest)?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::input("empty training manifest"))?;
    let in_channels = first.image.channels();

    let weights = match args.init_weights {
        Some(seed) => {
            let plan = match args.net_preset {
                NetPreset::Standard => ChannelPlan::standard(in_channels),
                NetPreset::Slim => ChannelPlan::slim(in_channels),
            };
            // gain ~ sqrt(2) keeps activation magnitudes stable under relu;
            // a bit more compensates the response-normalization shrink
            let ws = init_random_weights(seed, 2.0, &plan)?;
            save_weights(&ws, &args.weights)?;
            ws
        }
        None => load_weights(&args.weights)?,
    };
    if weights.in_channels() != in_channels {
        return Err(Error::config(format!(
            "weights expect {} input channels, images have {in_channels}",
            weights.in_channels()
        )));
    }
    let plan = plan_from_weights(&weights)?;
    let engine = Engine::new(weights, stage_configs(&plan, args.stages)?)?;

    let schedule = PatchSchedule::new(
        PatchSchedule::standard().sizes()[..args.stages].to_vec(),
    )?;
    let config = TrainConfig {
        schedule,
        lambda: match args.lambda {
            Some(v) => LambdaChoice::Fixed(v),
            None => LambdaChoice::CrossValidate {
                folds: args.cv_folds,
                grid: vec![1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
                seed: args.seed,
            },
        },
        augment: if args.no_augment {
            None
        } else {
            Some(AugmentConfig {
                seed: args.seed,
                max_rotation_deg: args.max_rotation,
                rotations: args.rotations,
            })
        },
        init_seed: args.seed,
        init_scale_range: if args.no_init_perturb { (1.0, 1.0) } else { (0.9, 1.1) },
        init_translate_frac: if args.no_init_perturb { 0.0 } else { 0.05 },
        record_targets: false,
    };
    let (model, report) = train_cascade(&dataset, &engine, &config)?;
    save_model(&model, &args.model)?;

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.model.with_extension("report.tsv"));
    let mut out = String::new();
    out.push_str(&format!("seed\t{}\n", args.seed));
    out.push_str(&format!("weights_hash\t{}\n", model.weights_hash));
    out.push_str(&format!("samples\t{}\n", dataset.len()));
    out.push_str(&format!("initial_error\t{:.6}\n", report.initial_error));
    for (i, (err, lambda)) in report.stage_errors.iter().zip(&report.lambdas).enumerate() {
        out.push_str(&format!("stage_{}_error\t{err:.6}\n", i + 1));
        out.push_str(&format!("stage_{}_lambda\t{lambda}\n", i + 1));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning\t{w}\n"));
    }
    out.push_str(&format!("elapsed_s\t{:.1}\n", start.elapsed().as_secs_f64()));
    std::fs::write(&report_path, &out).map_err(|e| Error::io(&report_path, e))?;
    print!("{out}");
    Ok(())
}

fn engine_for_model(model: &CascadeModel, weights: WeightSet) -> Result<Engine, Error> {
    let plan = plan_from_weights(&weights)?;
    let engine = Engine::new(weights, stage_configs(&plan, model.stages())?)?;
    verify_model_engine(model, &engine)?;
    Ok(engine)
}

fn cmd_align(args: &AlignArgs) -> Result<bool, Error> {
    let model = load_model(&args.model)?;
    let engine = engine_for_model(&model, load_weights(&args.weights)?)?;
    let manifest = load_manifest(&args.manifest)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    // parallel predict, ordered writes: output bytes are identical for any
    // worker count
    let results: Vec<(String, Result<lddr_core::Shape, Error>)> = manifest
        .par_iter()
        .map(|s| {
            let run = || {
                let image = load_image(&s.image_path)?;
                let (x, y, w, h) = s.face_box;
                predict(&model, &image, &FaceFrame::new(x, y, w, h)?, &engine)
            };
            (s.id.clone(), run())
        })
        .collect();
    let mut failures = 0;
    for (id, result) in &results {
        match result {
            Ok(shape) => save_pts(shape, &args.out.join(format!("{id}.pts")))?,
            Err(e) => {
                eprintln!("align: sample {id} failed: {e}");
                failures += 1;
            }
        }
    }
    println!("aligned {}/{} samples", results.len() - failures, results.len());
    Ok(failures > 0)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    // the face-size normalizer depends on each sample's box dimensions
    let protocol_for = |s: &Sample| match args.protocol {
        Protocol::Interpupil68 => NmeProtocol::Interpupil68,
        Protocol::Interpupil49 => NmeProtocol::Interpupil49,
        Protocol::EyeNose => NmeProtocol::EyeNose3,
        Protocol::FaceSize => NmeProtocol::FaceSize { width: s.face_box.2, height: s.face_box.3 },
    };
    let protocol_name = match args.protocol {
        Protocol::Interpupil68 => "interpupil68",
        Protocol::Interpupil49 => "interpupil49",
        Protocol::EyeNose => "eye_nose_3pt",
        Protocol::FaceSize => "facesize",
    };
    let manifest = load_manifest(&args.manifest)?;
    let mut errors = Vec::new();
    let mut matched = 0;
    for s in &manifest {
        let Some(gt) = &s.shape else { continue };
        let pred_path = args.pred.join(format!("{}.pts", s.id));
        if !pred_path.is_file() {
            continue;
        }
        matched += 1;
        let pred = lddr_core::data::load_pts(&pred_path)?;
        if pred.len() != gt.len() {
            return Err(Error::input(format!(
                "sample {}: prediction has {} points, ground truth {}",
                s.id,
                pred.len(),
                gt.len()
            )));
        }
        errors.push(nme(&pred, gt, protocol_for(s))?);
    }
    if matched == 0 {
        return Err(Error::input(
            "no prediction/ground-truth identifier matches between --pred and --manifest",
        ));
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    println!("{protocol_name}\t{mean:.5}");
    if let Some(ced_path) = &args.ced {
        if args.ced_steps < 2 {
            return Err(Error::config("--ced-steps must be >= 2"));
        }
        let thresholds: Vec<f64> = (0..args.ced_steps)
            .map(|i| args.ced_max * i as f64 / (args.ced_steps - 1) as f64)
            .collect();
        let curve = ced_curve(&errors, &thresholds)?;
        let mut out = String::new();
        for (t, frac) in curve {
            out.push_str(&format!("{t:.6}\t{frac:.6}\n"));
        }
        std::fs::write(ced_path, out).map_err(|e| Error::io(ced_path, e))?;
    }
    Ok(())
}

fn print_stage_info(stage: usize, plan: &ChannelPlan) -> Result<(), Error> {
    let cfg = stage_config_with_plan(stage, plan)?;
    let geoms = geometry_of(&cfg.layers, cfg.input_size, cfg.input_size, cfg.in_channels)?;
    let rfs = receptive_field_table(&cfg.layers);
    println!("stage {stage}\tinput {}x{}x{}", cfg.input_size, cfg.input_size, cfg.in_channels);
    println!("layer\tout_h\tout_w\tout_c\trf\tjump");
    for (g, (name, rf, jump)) in geoms.iter().zip(&rfs) {
        println!("{name}\t{}\t{}\t{}\t{rf}\t{jump}", g.out_h, g.out_w, g.out_channels);
    }
    println!("min_input_size\t{}", min_input_size(&cfg));
    println!();
    Ok(())
}

fn cmd_net_info(args: &NetInfoArgs) -> Result<(), Error> {
    if let InfoPreset::Original = args.preset {
        let layers = original_network_layers();
        println!("layer\trf\tjump");
        for (name, rf, jump) in receptive_field_table(&layers) {
            println!("{name}\t{rf}\t{jump}");
        }
        println!(
            "note\tthe 195x195 receptive field arises at pool5; conv5 itself sees 163x163"
        );
        return Ok(());
    }
    let plan = match args.preset {
        InfoPreset::Standard => ChannelPlan::standard(args.in_channels),
        InfoPreset::Slim => ChannelPlan::slim(args.in_channels),
        InfoPreset::Original => unreachable!(),
    };
    match args.stage {
        Some(s) => print_stage_info(s, &plan)?,
        None => {
            for s in 1..=4 {
                print_stage_info(s, &plan)?;
            }
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        seed: args.seed,
        count: args.count,
        image_size: args.size,
        max_rotation_deg: args.max_rotation,
        noise: args.noise,
        ..SynthSpec::default()
    };
    let manifest = synth_generate(&spec, &args.out)?;
    println!("wrote {} samples, manifest {}", args.count, manifest.display());
    Ok(())
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse_from(expand_args()?);
    let common = match &cli.command {
        Command::Train(a) => &a.common,
        Command::Align(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::NetInfo(a) => &a.common,
        Command::Synth(a) => &a.common,
    };
    init_threads(common.threads)?;
    match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| false),
        Command::Align(a) => cmd_align(a),
        Command::Eval(a) => cmd_eval(a).map(|_| false),
        Command::NetInfo(a) => cmd_net_info(a).map(|_| false),
        Command::Synth(a) => cmd_synth(a).map(|_| false),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
