//! Command-line driver tying generation, training, evaluation, prediction
//! and attention inspection together.
//!
//! Results go to stdout (JSON or CSV); everything meant for humans,
//! including the reproducibility header, goes to stderr. Exit codes:
//! 0 success, 1 usage error, 2 data/format error, 3 numerical abort.

mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use config::{
    apply_scene_file, apply_scene_key, apply_train_file, apply_train_key, echo_scene_spec,
    echo_train_config,
};
use saan_core::data::manifest::{load_entry, DatasetManifest, Split, SplitCounts};
use saan_core::data::{generate_dataset, pnm, SceneSpec};
use saan_core::error::Error;
use saan_core::metrics::{compute_metrics_binary, MetricsReport};
use saan_core::model::export_attention_maps;
use saan_core::tensor::Tensor;
use saan_core::train::{
    ablation_grid, epoch_log_csv, epoch_record_csv, evaluate, load_dataset, predict_logits,
    train_with_progress, Checkpoint, StopReason, TrainConfig, EPOCH_LOG_HEADER,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "saan", version, about = "Bi-temporal change detection at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bi-temporal dataset with exact change masks.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or a directory of prediction masks) on a split.
    Eval(EvalArgs),
    /// Predict a change mask for one image pair.
    Predict(PredictArgs),
    /// Export per-stage attention maps for one image pair.
    InspectAttn(InspectAttnArgs),
    /// Train and score the component-ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset root directory.
    #[arg(long)]
    out: PathBuf,
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    /// Pairs in the train/val/test splits.
    #[arg(long, default_value_t = 512)]
    train: usize,
    #[arg(long, default_value_t = 128)]
    val: usize,
    #[arg(long, default_value_t = 128)]
    test: usize,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    p_keep: Option<f64>,
    #[arg(long)]
    p_remove: Option<f64>,
    #[arg(long)]
    p_add: Option<f64>,
    #[arg(long)]
    brightness_jitter: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the best checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV epoch log file (also printed to stdout).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    plateau_factor: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Auxiliary/contrastive loss weight.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Comma-separated encoder stage widths, e.g. 16,32,64,128.
    #[arg(long)]
    stage_channels: Option<String>,
    #[arg(long)]
    blocks_per_stage: Option<usize>,
    /// Encoder variant: mini or resnet18.
    #[arg(long)]
    variant: Option<String>,
    /// Validation metric: f1 or accuracy.
    #[arg(long)]
    val_metric: Option<String>,
    /// Disable the contrastive similarity loss.
    #[arg(long)]
    no_sim: bool,
    /// Disable deep supervision.
    #[arg(long)]
    no_ds: bool,
    /// Disable channel attention.
    #[arg(long)]
    no_sca: bool,
    /// Disable spatial attention.
    #[arg(long)]
    no_ssa: bool,
    /// Disable inter-stage attention flow.
    #[arg(long)]
    no_flow: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Which split to score: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Checkpoint to run inference with.
    #[arg(long, group = "source", required = true)]
    checkpoint: Option<PathBuf>,
    /// Directory of precomputed prediction masks `<index>.pgm` instead of
    /// a checkpoint.
    #[arg(long, group = "source")]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Emit per-tile reports alongside the aggregate.
    #[arg(long)]
    per_tile: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    t1: PathBuf,
    #[arg(long)]
    t2: PathBuf,
    /// Output change-mask PGM.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct InspectAttnArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    t1: PathBuf,
    #[arg(long)]
    t2: PathBuf,
    /// Output directory for the map images and their manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Optional CSV output file (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epoch budget per row.
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// quick = baseline/sim_ds/full; full = all eight combinations.
    #[arg(long, default_value = "quick")]
    grid: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn header(command: &str, body: &str) {
    eprintln!("# saan {} command={command}", env!("CARGO_PKG_VERSION"));
    for line in body.lines() {
        eprintln!("# {line}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Predict(args) => predict_cmd(args),
        Command::InspectAttn(args) => inspect_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn build_scene_spec(args: &GenDataArgs) -> Result<SceneSpec, Error> {
    let mut spec = SceneSpec::default();
    if let Some(path) = &args.config {
        apply_scene_file(&mut spec, path)?;
    }
    let overrides: [(&str, Option<String>); 9] = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("size", args.size.map(|v| v.to_string())),
        ("min_objects", args.min_objects.map(|v| v.to_string())),
        ("max_objects", args.max_objects.map(|v| v.to_string())),
        ("p_keep", args.p_keep.map(|v| v.to_string())),
        ("p_remove", args.p_remove.map(|v| v.to_string())),
        ("p_add", args.p_add.map(|v| v.to_string())),
        (
            "brightness_jitter",
            args.brightness_jitter.map(|v| v.to_string()),
        ),
        ("noise_sigma", args.noise_sigma.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            apply_scene_key(&mut spec, key, &value)?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode, Error> {
    let spec = build_scene_spec(&args)?;
    let counts = SplitCounts {
        train: args.train,
        val: args.val,
        test: args.test,
    };
    let mut echo = echo_scene_spec(&spec);
    echo.push_str(&format!(
        "train = {}\nval = {}\ntest = {}\n",
        counts.train, counts.val, counts.test
    ));
    header("gen-data", &echo);
    let manifest = generate_dataset(&spec, &counts, &args.out)?;
    eprintln!("wrote {} pairs under {}", manifest.entries.len(), args.out.display());
    println!("manifest={}", args.out.join("manifest.txt").display());
    Ok(ExitCode::SUCCESS)
}

fn build_train_config(args: &TrainArgs) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        apply_train_file(&mut cfg, path)?;
    }
    let overrides: [(&str, Option<String>); 14] = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("lr0", args.lr0.map(|v| v.to_string())),
        ("weight_decay", args.weight_decay.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        (
            "plateau_patience",
            args.plateau_patience.map(|v| v.to_string()),
        ),
        ("plateau_factor", args.plateau_factor.map(|v| v.to_string())),
        ("min_lr", args.min_lr.map(|v| v.to_string())),
        ("max_epochs", args.max_epochs.map(|v| v.to_string())),
        ("w", args.w.map(|v| v.to_string())),
        ("margin", args.margin.map(|v| v.to_string())),
        ("stage_channels", args.stage_channels.clone()),
        (
            "blocks_per_stage",
            args.blocks_per_stage.map(|v| v.to_string()),
        ),
        ("variant", args.variant.clone()),
        ("val_metric", args.val_metric.clone()),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            apply_train_key(&mut cfg, key, &value)?;
        }
    }
    if args.no_sim {
        cfg.flags.sim_loss = false;
    }
    if args.no_ds {
        cfg.flags.deep_supervision = false;
    }
    if args.no_sca {
        cfg.flags.sca = false;
    }
    if args.no_ssa {
        cfg.flags.ssa = false;
    }
    if args.no_flow {
        cfg.flags.flow = false;
    }
    if cfg.flags.flow && !(cfg.flags.sca || cfg.flags.ssa) {
        // flow has nothing to carry without an attention block
        cfg.flags.flow = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(args: TrainArgs) -> Result<ExitCode, Error> {
    let cfg = build_train_config(&args)?;
    header("train", &echo_train_config(&cfg));
    let dataset = load_dataset(&args.data)?;
    eprintln!(
        "dataset: {} train / {} val / {} test",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len()
    );
    eprintln!("{EPOCH_LOG_HEADER}");
    let outcome = train_with_progress(&cfg, &dataset, |r| {
        eprintln!("{}", epoch_record_csv(r));
    })?;
    outcome.best.save(&args.out)?;
    eprintln!(
        "best validation F1 {} at epoch {}; checkpoint {}",
        outcome.best.best_f1,
        outcome.best.epoch,
        args.out.display()
    );
    let csv = epoch_log_csv(&outcome.log);
    if let Some(log_path) = &args.log {
        std::fs::write(log_path, &csv)?;
    }
    print!("{csv}");
    if outcome.log.stop == StopReason::NonFinite {
        eprintln!("aborted on non-finite loss; checkpoint holds the last good state");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn load_split(
    manifest_path: &Path,
    split: Split,
) -> Result<(PathBuf, Vec<saan_core::data::manifest::ManifestEntry>), Error> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest_path
        .parent()
        .ok_or_else(|| Error::format(manifest_path.display().to_string(), "no parent directory", None))?
        .to_path_buf();
    let entries: Vec<_> = manifest.split_entries(split).cloned().collect();
    if entries.is_empty() {
        return Err(Error::value("eval", format!("split {split} is empty")));
    }
    Ok((root, entries))
}

fn eval_cmd(args: EvalArgs) -> Result<ExitCode, Error> {
    let split = Split::parse(&args.split)?;
    let (root, entries) = load_split(&args.data, split)?;
    let (aggregate, tiles);
    if let Some(ckpt_path) = &args.checkpoint {
        let ckpt = Checkpoint::load(ckpt_path)?;
        let threshold = args
            .threshold
            .unwrap_or(ckpt.config.loss.prediction_threshold);
        header(
            "eval",
            &format!(
                "checkpoint = {}\nsplit = {split}\nthreshold = {threshold}\n{}",
                ckpt_path.display(),
                echo_train_config(&ckpt.config)
            ),
        );
        let mut model = ckpt.restore_model()?;
        let samples: Vec<_> = entries
            .iter()
            .map(|e| load_entry(&root, e))
            .collect::<Result<_, _>>()?;
        let (agg, per) = evaluate(&mut model, &samples, threshold)?;
        aggregate = agg;
        tiles = per;
    } else {
        let dir = args.pred_dir.as_ref().expect("clap group");
        header(
            "eval",
            &format!("pred_dir = {}\nsplit = {split}", dir.display()),
        );
        let mut per = Vec::with_capacity(entries.len());
        for e in &entries {
            let sample = load_entry(&root, e)?;
            let pred_img = pnm::read_image(&dir.join(format!("{}.pgm", e.index)))?;
            let pred = pred_img.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            per.push(compute_metrics_binary(&pred, &sample.mask)?);
        }
        aggregate = MetricsReport::merge(&per);
        tiles = per;
    }
    if args.per_tile {
        let tiles_json: Vec<String> = tiles.iter().map(|t| t.to_json()).collect();
        println!(
            "{{\"aggregate\":{},\"per_tile\":[{}]}}",
            aggregate.to_json(),
            tiles_json.join(",")
        );
    } else {
        println!("{}", aggregate.to_json());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_pair(t1: &Path, t2: &Path) -> Result<(Tensor<f32>, Tensor<f32>), Error> {
    Ok((pnm::read_image(t1)?, pnm::read_image(t2)?))
}

fn predict_cmd(args: PredictArgs) -> Result<ExitCode, Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let threshold = args
        .threshold
        .unwrap_or(ckpt.config.loss.prediction_threshold);
    header(
        "predict",
        &format!(
            "checkpoint = {}\nthreshold = {threshold}\n{}",
            args.checkpoint.display(),
            echo_train_config(&ckpt.config)
        ),
    );
    let mut model = ckpt.restore_model()?;
    let (t1, t2) = load_pair(&args.t1, &args.t2)?;
    let logits = predict_logits(&mut model, &t1, &t2)?;
    let cut = ((threshold / (1.0 - threshold)).ln()) as f32;
    let (_, _, h, w) = logits.dims4()?;
    let mask = Tensor::from_vec(
        &[1, h, w],
        logits
            .data()
            .iter()
            .map(|&z| if z >= cut { 1.0f32 } else { 0.0 })
            .collect::<Vec<f32>>(),
    );
    pnm::write_image(&args.out, &mask)?;
    println!("mask={}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn inspect_cmd(args: InspectAttnArgs) -> Result<ExitCode, Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    header(
        "inspect-attn",
        &format!(
            "checkpoint = {}\n{}",
            args.checkpoint.display(),
            echo_train_config(&ckpt.config)
        ),
    );
    let mut model = ckpt.restore_model()?;
    let (t1, t2) = load_pair(&args.t1, &args.t2)?;
    let mut shape1 = vec![1usize];
    shape1.extend_from_slice(t1.shape());
    let t1b = Tensor::from_vec(&shape1, t1.data().to_vec());
    let mut shape2 = vec![1usize];
    shape2.extend_from_slice(t2.shape());
    let t2b = Tensor::from_vec(&shape2, t2.data().to_vec());
    let mut tape = saan_core::Tape::new();
    let out = model.forward(&mut tape, &t1b, &t2b, false)?;
    let written = export_attention_maps(&out.attention, &args.out)?;
    eprintln!("wrote {} map images under {}", written.len(), args.out.display());
    print!(
        "{}",
        std::fs::read_to_string(args.out.join("manifest.txt"))?
    );
    Ok(ExitCode::SUCCESS)
}

fn ablate_cmd(args: AblateArgs) -> Result<ExitCode, Error> {
    let full = match args.grid.as_str() {
        "quick" => false,
        "full" => true,
        other => {
            return Err(Error::value(
                "ablate",
                format!("grid must be quick or full, got {other:?}"),
            ))
        }
    };
    let mut base = TrainConfig::default();
    if let Some(path) = &args.config {
        apply_train_file(&mut base, path)?;
    }
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    base.max_epochs = args.epochs;
    header(
        "ablate",
        &format!(
            "grid = {}\nepochs_per_row = {}\n{}",
            args.grid,
            args.epochs,
            echo_train_config(&base)
        ),
    );
    let dataset = load_dataset(&args.data)?;
    let mut csv = String::from("label,f1,iou,params,sec_per_iter\n");
    for row in ablation_grid(full) {
        let mut cfg = base.clone();
        cfg.flags = row.flags;
        eprintln!("training {} ...", row.label);
        let outcome = train_with_progress(&cfg, &dataset, |r| {
            eprintln!("  {}", epoch_record_csv(r));
        })?;
        let mut model = outcome.best.restore_model()?;
        let (report, _) = evaluate(&mut model, &dataset.test, cfg.loss.prediction_threshold)?;
        let params = model.param_count().total;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.label, report.f1, report.iou, params, outcome.log.sec_per_iter
        ));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &csv)?;
    }
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}
