use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use uta_core::calib::{register_modalities, MotionParams, RigCalibration};
use uta_core::metrics::NiqeModel;
use uta_core::simgen::scene::SignScene;
use uta_core::Raster;
use uta_harness::cache::{build_cache, PseudoGtParams};
use uta_harness::dataset::load_dataset;
use uta_harness::evaluate::{evaluate_dir, Metric};
use uta_harness::infer::infer_scene;
use uta_harness::model::Model;
use uta_harness::scene::{load_frame_dir, simgen_scene, SceneDir};
use uta_harness::train::train;
use uta_harness::Config;

#[derive(Parser)]
#[command(name = "uta", version, about = "Thermal/event signage sketching pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a thermal/event scene from color frames or a synthetic sign.
    Simgen(SimgenArgs),
    /// Build the pseudo ground-truth cache of every scene under a root.
    PseudoGt(DatasetArgs),
    /// Train both networks.
    Train(TrainArgs),
    /// Run a checkpoint over a scene.
    Infer(InferArgs),
    /// Write a per-frame quality report.
    Eval(EvalArgs),
    /// Rig calibration tools.
    Calib {
        #[command(subcommand)]
        command: CalibCommand,
    },
}

#[derive(Args)]
struct SimgenArgs {
    /// Directory of PNG frames, or `sign-scene` for a generated road sign.
    #[arg(long = "in")]
    input: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cfg: Option<PathBuf>,
    /// Rig file; defaults to co-located cameras at the frame resolution.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Seed of the generated sign scene.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Text on the generated sign.
    #[arg(long, default_value = "60")]
    text: String,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    cfg: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cfg: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of PNG frames.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of en, sd, niqe.
    #[arg(long, default_value = "en,sd,niqe", value_delimiter = ',')]
    metrics: Vec<String>,
    /// NIQE model file; the built-in model is used otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CalibCommand {
    /// Estimate the thermal-to-event homography from one image of each camera.
    Register {
        #[arg(long)]
        ev: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    let cfg = match path {
        Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut c = Config::default();
            c.apply_env()?;
            c
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn simgen(args: SimgenArgs) -> Result<()> {
    let cfg = load_config(args.cfg.as_ref())?;
    let frames = if args.input == "sign-scene" {
        SignScene {
            seed: args.seed,
            text: args.text.clone(),
            ..SignScene::default()
        }
        .render()
    } else {
        load_frame_dir(&args.input).with_context(|| format!("reading frames from {}", args.input))?
    };
    let Some(first) = frames.first() else {
        bail!("no PNG frames in {}", args.input);
    };
    let rig = match &args.rig {
        Some(p) => RigCalibration::load(p)?,
        None => RigCalibration::identity(first.dims()),
    };
    simgen_scene(&frames, &cfg.sim, &rig, &SceneDir::new(&args.out))?;
    println!("wrote {} frames to {}", frames.len(), args.out.display());
    Ok(())
}

fn pseudo_gt(args: DatasetArgs) -> Result<()> {
    let cfg = load_config(args.cfg.as_ref())?;
    let ds = load_dataset(&args.root, cfg.sim.group_len, cfg.train.group_stride)?;
    let report = build_cache(&ds, &ds.groups, &PseudoGtParams::default())?;
    println!(
        "{} groups: {} files written, {} groups already cached, {} rejected",
        ds.group_count(),
        report.files_written,
        report.groups_skipped,
        ds.rejected.len()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(args.cfg.as_ref())?;
    let ds = load_dataset(&args.root, cfg.sim.group_len, cfg.train.group_stride)?;
    let (train_groups, val_groups) = ds.split(cfg.train.val_scenes);
    println!(
        "{} scenes, {} training groups, {} validation groups, {} rejected",
        ds.scenes.len(),
        train_groups.len(),
        val_groups.len(),
        ds.rejected.len()
    );
    std::fs::create_dir_all(&args.out)?;
    cfg.save(args.out.join("config.json"))?;
    let outcome = train(&ds, &train_groups, &cfg, &args.out)?;
    if let Some(last) = outcome.rows.last() {
        println!("step {} total {}", last.step, last.total);
    }
    println!("checkpoint {}", outcome.checkpoint.display());
    Ok(())
}

fn infer(args: InferArgs) -> Result<()> {
    let (model, _) = Model::load(&args.ckpt).with_context(|| format!("loading {}", args.ckpt.display()))?;
    let n = infer_scene(&model, &args.scene, &args.out)?;
    println!("wrote {n} frames to {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let metrics = args
        .metrics
        .iter()
        .map(|m| m.parse::<Metric>())
        .collect::<uta_harness::Result<Vec<_>>>()?;
    let loaded;
    let model = match &args.model {
        Some(p) => {
            loaded = NiqeModel::load(p)?;
            &loaded
        }
        None => NiqeModel::builtin(),
    };
    let report = evaluate_dir(&args.dir, &metrics, model)?;
    report.write_csv(BufWriter::new(File::create(&args.out)?))?;
    println!("scored {} frames", report.rows.len() - 1);
    Ok(())
}

fn calib(cmd: CalibCommand) -> Result<()> {
    match cmd {
        CalibCommand::Register { ev, ir, out } => {
            let ev_img = Raster::load_gray(&ev)?;
            let ir_img = Raster::load_gray(&ir)?;
            let h_ev_to_ir = register_modalities(&ev_img, &ir_img, &MotionParams::default())?;
            let rig = RigCalibration::new(h_ev_to_ir.inverse()?, ir_img.dims(), ev_img.dims())?;
            rig.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simgen(a) => simgen(a),
        Command::PseudoGt(a) => pseudo_gt(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Calib { command } => calib(command),
    }
}
