use std::path::Path;
use std::process::Command;

use uta_core::calib::RigCalibration;
use uta_core::metrics::NiqeModel;
use uta_core::simgen::scene::SignScene;
use uta_core::simgen::SimConfig;
use uta_core::Raster;
use uta_harness::dataset::load_dataset;
use uta_harness::evaluate::{evaluate_dir, evaluate_frames, Metric, MEAN_ROW};
use uta_harness::infer::{infer_frames, infer_scene};
use uta_harness::model::Model;
use uta_harness::scene::{simgen_scene, SceneDir};
use uta_harness::train::{read_loss_csv, train, LOSS_CSV};
use uta_harness::Config;
use uta_nn::sis::SisConfig;
use uta_nn::tcc::TccConfig;

fn sign_scene(root: &Path, name: &str, frames: usize, seed: u64, text: &str) -> SceneDir {
    let scene = SignScene {
        frames,
        seed,
        text: text.into(),
        ..SignScene::default()
    };
    let dir = SceneDir::new(root.join(name));
    simgen_scene(
        &scene.render(),
        &SimConfig::default(),
        &RigCalibration::identity((scene.width, scene.height)),
        &dir,
    )
    .unwrap();
    dir
}

fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.sis = SisConfig {
        levels: 2,
        base_channels: 4,
    };
    cfg.tcc = TccConfig {
        embed_dim: 6,
        heads: [1, 2, 2, 4],
        stage_depths: [2, 2, 2, 2],
        decoder_blocks: 1,
        decoder_heads: 1,
        ..TccConfig::default()
    };
    cfg.train.batch = 2;
    cfg.train.crop = Some([64, 64]);
    cfg.train.checkpoint_every_epochs = 0;
    cfg
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    sign_scene(root.path(), "a", 14, 1, "60");
    sign_scene(root.path(), "b", 14, 2, "35");
    let ds = load_dataset(root.path(), 7, 7).unwrap();
    assert_eq!(ds.group_count(), 4);

    let mut cfg = tiny_config();
    cfg.train.max_steps = Some(50);
    let out = tempfile::tempdir().unwrap();
    let run = train(&ds, &ds.groups, &cfg, out.path()).unwrap();

    let header = std::fs::read_to_string(out.path().join(LOSS_CSV)).unwrap();
    assert_eq!(header.lines().next(), Some("step,l_sis,l_tcc,l_per,l_grad,total"));
    let rows = read_loss_csv(&run.loss_csv).unwrap();
    assert_eq!(rows.len(), 50);
    assert_eq!(rows, run.rows);
    assert!(rows.last().unwrap().total < rows[0].total);
    assert!((run.lrs[0] - 5e-4).abs() < 1e-9);
    assert!((run.lrs[49] - 1e-6).abs() < 1e-9);

    let (restored, meta) = Model::load(&run.checkpoint).unwrap();
    assert_eq!(meta.step, 50);
    assert_eq!(restored.params, run.model.params);

    cfg.train.max_steps = Some(4);
    let a = train(&ds, &ds.groups, &cfg, &out.path().join("a")).unwrap();
    let b = train(&ds, &ds.groups, &cfg, &out.path().join("b")).unwrap();
    assert_eq!(std::fs::read(a.loss_csv).unwrap(), std::fs::read(b.loss_csv).unwrap());
}

#[test]
fn inference_emits_one_frame_per_input() {
    let cfg = tiny_config();
    let model = Model::init(cfg.sis, cfg.tcc.clone(), 5).unwrap();
    for n in 1..=8 {
        let thermal: Vec<Raster> = (0..n).map(|k| Raster::from_fn(20, 12, |x, y| ((x + y + k) % 9) as f64 / 9.0)).collect();
        let events: Vec<Raster> = (0..n).map(|k| Raster::from_fn(20, 12, |x, _| ((x + k) % 2) as f64)).collect();
        let out = infer_frames(&model, &thermal, &events).unwrap();
        assert_eq!(out.len(), n);
        assert!(out.iter().all(|r| r.dims() == (20, 12)));
        assert!(out.iter().all(|r| r.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
    assert!(infer_frames(&model, &[], &[]).unwrap().is_empty());
}

#[test]
fn scene_inference_and_evaluation() {
    let root = tempfile::tempdir().unwrap();
    let scene = sign_scene(root.path(), "a", 7, 3, "60");
    let cfg = tiny_config();
    let model = Model::init(cfg.sis, cfg.tcc.clone(), 6).unwrap();
    let out = root.path().join("out");
    assert_eq!(infer_scene(&model, scene.root(), &out).unwrap(), 7);

    let metrics = [Metric::Entropy, Metric::StdDev, Metric::Niqe];
    let report = evaluate_dir(&out, &metrics, NiqeModel::builtin()).unwrap();
    assert_eq!(report.rows.len(), 8);
    let mean = report.rows.last().unwrap();
    assert_eq!(mean.frame, MEAN_ROW);
    for j in 0..metrics.len() {
        let avg = report.rows[..7].iter().map(|r| r.values[j]).sum::<f64>() / 7.0;
        assert!((mean.values[j] - avg).abs() < 1e-9);
    }
}

#[test]
fn constant_frames_have_no_information() {
    let frames: Vec<(String, Raster)> = (0..3).map(|k| (format!("{k}"), Raster::filled(32, 32, 0.4))).collect();
    let report = evaluate_frames(&frames, &[Metric::Entropy, Metric::StdDev], NiqeModel::builtin()).unwrap();
    assert!(report.rows.iter().all(|r| r.values == [0.0, 0.0]));
}

#[test]
fn command_line_round_trip() {
    let bin = env!("CARGO_BIN_EXE_uta");
    let root = tempfile::tempdir().unwrap();
    let scene = root.path().join("scenes").join("sign");
    let status = Command::new(bin)
        .args(["simgen", "--in", "sign-scene", "--text", "42", "--out"])
        .arg(&scene)
        .status()
        .unwrap();
    assert!(status.success());
    let thermal = SceneDir::new(&scene).thermal_dir();
    assert_eq!(std::fs::read_dir(&thermal).unwrap().count(), SignScene::default().frames);

    let report = root.path().join("report.csv");
    let status = Command::new(bin)
        .args(["eval", "--metrics", "en,sd", "--dir"])
        .arg(&thermal)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some("frame,en,sd"));
    assert_eq!(text.lines().count(), SignScene::default().frames + 2);

    let bad = Command::new(bin)
        .args(["eval", "--metrics", "psnr", "--dir"])
        .arg(&thermal)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
