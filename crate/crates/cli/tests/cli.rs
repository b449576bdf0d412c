//! End-to-end tests of the `lpi` binary: tiny models, every subcommand,
//! the exit-code contract and determinism of emitted artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lpi_core::geom::PointCloud;
use lpi_core::io::write_xyz;
use lpi_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lpi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpi"))
}

fn sphere_xyz(dir: &Path, n: usize, r: f64, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized()
                * r
        })
        .collect();
    let cloud = PointCloud::new(pts, None).unwrap();
    let path = dir.join("sphere.xyz");
    write_xyz(&path, &cloud).unwrap();
    path
}

/// Small-but-real training flags shared by the pipeline tests.
fn fast_train_flags(cmd: &mut Command) {
    cmd.args([
        "--latent-dim",
        "8",
        "--regions",
        "4",
        "--batch",
        "128",
        "--per-point",
        "4",
        "--noise-knn",
        "12",
        "--lr",
        "1e-3",
        "--seed",
        "9",
    ]);
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_xyz(dir.path(), 300, 0.3, 1);
    let ckpt = dir.path().join("model.lpic");
    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&cloud)
        .arg("--out")
        .arg(&ckpt)
        .args(["--loss", "mse", "--gt", "sphere:0.3"]);
    fast_train_flags(&mut cmd);
    cmd.args(["--steps", "300"]);
    let out = cmd.output().unwrap();
    assert_ok(&out);
    assert!(ckpt.exists());
    let log = dir.path().join("model.lpic.log.jsonl");
    assert!(log.exists());
    let text = fs::read_to_string(&log).unwrap();
    let mut losses = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        losses.push(v["loss"].as_f64().unwrap());
        assert!(v["step"].as_u64().is_some());
        assert!(v["excluded"].as_u64().is_some());
        assert!(v["wall_ms"].as_u64().is_some());
    }
    assert!(losses.len() >= 2);
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.lpic");
    let out = lpi()
        .arg("train")
        .arg(dir.path().join("nope.xyz"))
        .arg("--out")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!ckpt.exists());
}

#[test]
fn malformed_cloud_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.xyz");
    fs::write(&bad, "1 2 x\n").unwrap();
    let out = lpi().arg("train").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mse_without_gt_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_xyz(dir.path(), 300, 0.3, 2);
    let out = lpi()
        .arg("train")
        .arg(&cloud)
        .args(["--loss", "mse", "--steps", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gt"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_xyz(dir.path(), 300, 0.3, 3);
    let cfg = dir.path().join("lpi.toml");
    fs::write(&cfg, "steps = 5\nbananas = 7\n").unwrap();
    let out = lpi()
        .arg("train")
        .arg(&cloud)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bananas"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_xyz(dir.path(), 300, 0.3, 4);
    let cfg = dir.path().join("lpi.toml");
    // file asks for an absurd region count; the flag must win
    fs::write(&cfg, "regions = 250\nsteps = 12\n").unwrap();
    let ckpt = dir.path().join("model.lpic");
    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&cloud)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&ckpt);
    fast_train_flags(&mut cmd);
    let out = cmd.output().unwrap();
    assert_ok(&out);
    let inspect = lpi().arg("inspect").arg(&ckpt).arg("--json").output().unwrap();
    assert_ok(&inspect);
    let v: serde_json::Value = serde_json::from_slice(&inspect.stdout).unwrap();
    assert_eq!(v["regions"], 4);
    // steps came from the file, untouched by flags
    assert_eq!(v["steps"], 12);
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    ckpt: PathBuf,
}

fn trained_pipeline(seed: u64) -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cloud = sphere_xyz(&root, 400, 0.3, seed);
    let ckpt = root.join("model.lpic");
    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&cloud)
        .arg("--out")
        .arg(&ckpt)
        .args(["--loss", "mse", "--gt", "sphere:0.3"]);
    fast_train_flags(&mut cmd);
    cmd.args(["--steps", "400"]);
    assert_ok(&cmd.output().unwrap());
    Pipeline { _dir: dir, root, ckpt }
}

#[test]
fn reconstruct_parts_relevel_abstract_eval() {
    let p = trained_pipeline(5);

    let rec = p.root.join("rec");
    assert_ok(
        &lpi()
            .arg("reconstruct")
            .arg(&p.ckpt)
            .arg("--out")
            .arg(&rec)
            .args(["--resolution", "40"])
            .output()
            .unwrap(),
    );
    let global = rec.join("global.obj");
    assert!(global.exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rec.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolution"], 40);
    assert_eq!(manifest["mode"], "euclidean");

    let parts = p.root.join("parts");
    assert_ok(
        &lpi()
            .arg("parts")
            .arg(&p.ckpt)
            .arg("--out")
            .arg(&parts)
            .args(["--resolution", "40"])
            .output()
            .unwrap(),
    );
    for i in 0..4 {
        assert!(parts.join(format!("part_{i:03}.obj")).exists());
    }

    let rel = p.root.join("rel");
    assert_ok(
        &lpi()
            .arg("relevel")
            .arg(&p.ckpt)
            .arg("--out")
            .arg(&rel)
            .args(["--levels", "2,4", "--resolution", "40"])
            .output()
            .unwrap(),
    );
    for (level, count) in [(2usize, 2usize), (4, 4)] {
        let dir = rel.join(format!("level_{level:03}"));
        let found = fs::read_dir(&dir)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("part_")
            })
            .count();
        assert_eq!(found, count, "level {level}");
    }

    let abs = p.root.join("abs");
    assert_ok(
        &lpi()
            .arg("abstract")
            .arg(&p.ckpt)
            .arg("--out")
            .arg(&abs)
            .args(["--level", "4", "--resolution", "40"])
            .output()
            .unwrap(),
    );
    let hulls = fs::read_dir(&abs)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("hull_")
        })
        .count();
    assert_eq!(hulls, 4);

    // mesh against itself: perfect scores
    let eval = lpi()
        .arg("eval")
        .arg(&global)
        .arg(&global)
        .args(["--samples", "2000", "--iou", "--resolution", "32"])
        .output()
        .unwrap();
    assert_ok(&eval);
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["l2cd"].as_f64().unwrap(), 0.0);
    assert_eq!(report["nc"].as_f64().unwrap(), 1.0);
    assert_eq!(report["fscore_mu"].as_f64().unwrap(), 1.0);
    assert_eq!(report["iou"].as_f64().unwrap(), 1.0);
    assert_eq!(report["mu"].as_f64().unwrap(), 0.002);
}

#[test]
fn eval_rejects_malformed_obj() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0 0\nf 1 2 9\n").unwrap();
    let out = lpi().arg("eval").arg(&bad).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_iou_on_open_mesh_exits_4_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let open = dir.path().join("open.obj");
    fs::write(&open, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let out = lpi()
        .arg("eval")
        .arg(&open)
        .arg(&open)
        .args(["--samples", "500", "--iou"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    // the other metrics still came out on stdout
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["l2cd"].as_f64().unwrap(), 0.0);
    assert!(report["iou"].is_null());
}

#[test]
fn inspect_fresh_checkpoint_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_xyz(dir.path(), 300, 0.3, 6);
    let ckpt = dir.path().join("model.lpic");
    let mut cmd = lpi();
    cmd.arg("train").arg(&cloud).arg("--out").arg(&ckpt);
    fast_train_flags(&mut cmd);
    cmd.args(["--steps", "0"]);
    assert_ok(&cmd.output().unwrap());

    let out = lpi().arg("inspect").arg(&ckpt).arg("--json").output().unwrap();
    assert_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["steps"], 0);
    assert_eq!(v["sigma"].as_f64().unwrap(), 1.0);

    // loading and re-saving must not change what inspect reports
    let ckpt2 = dir.path().join("copy.lpic");
    let loaded = lpi_core::checkpoint::Checkpoint::load(&ckpt).unwrap();
    loaded.save(&ckpt2).unwrap();
    let out2 = lpi().arg("inspect").arg(&ckpt2).arg("--json").output().unwrap();
    assert_eq!(out.stdout, out2.stdout);
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.lpic");
    fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
    for sub in ["inspect", "reconstruct", "parts"] {
        let out = lpi().arg(sub).arg(&bad).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{sub}");
    }
}

#[test]
fn intrinsic_training_stores_table_and_semantic_binds_segments() {
    let dir = tempfile::tempdir().unwrap();
    // labeled two-cluster cloud
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (li, cx) in [(-0.3f64, 0u32), (0.3, 1)].map(|(c, l)| (c, l)) {
        for _ in 0..150 {
            let v = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized()
                * 0.1;
            pts.push(v + Vec3::new(li, 0.0, 0.0));
            labels.push(cx);
        }
    }
    let cloud = PointCloud::new(pts, Some(labels)).unwrap();
    let path = dir.path().join("two.xyz");
    write_xyz(&path, &cloud).unwrap();

    let ckpt = dir.path().join("intrinsic.lpic");
    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&path)
        .arg("--out")
        .arg(&ckpt)
        .args(["--affinity", "intrinsic", "--knn", "8"]);
    fast_train_flags(&mut cmd);
    cmd.args(["--steps", "20"]);
    assert_ok(&cmd.output().unwrap());
    let v: serde_json::Value = serde_json::from_slice(
        &lpi().arg("inspect").arg(&ckpt).arg("--json").output().unwrap().stdout,
    )
    .unwrap();
    assert_eq!(v["geodesic_table"], true);

    let ckpt2 = dir.path().join("semantic.lpic");
    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&path)
        .arg("--out")
        .arg(&ckpt2)
        .args(["--affinity", "semantic"]);
    fast_train_flags(&mut cmd);
    cmd.args(["--steps", "20", "--regions", "4"]); // regions must be rejected: S=2
    let out = cmd.output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let mut cmd = lpi();
    cmd.arg("train")
        .arg(&path)
        .arg("--out")
        .arg(&ckpt2)
        .args(["--affinity", "semantic", "--latent-dim", "8", "--steps", "20"])
        .args(["--batch", "128", "--per-point", "4", "--noise-knn", "12", "--seed", "9"]);
    assert_ok(&cmd.output().unwrap());
    let v: serde_json::Value = serde_json::from_slice(
        &lpi().arg("inspect").arg(&ckpt2).arg("--json").output().unwrap().stdout,
    )
    .unwrap();
    assert_eq!(v["regions"], 2);
    assert_eq!(v["affinity"], "semantic");
}

#[test]
fn identical_seeds_identical_artifacts() {
    let a = trained_pipeline(7);
    let b = trained_pipeline(7);
    assert_eq!(fs::read(&a.ckpt).unwrap(), fs::read(&b.ckpt).unwrap());

    for (p, out) in [(&a, "rec_a"), (&b, "rec_b")] {
        assert_ok(
            &lpi()
                .arg("reconstruct")
                .arg(&p.ckpt)
                .arg("--out")
                .arg(p.root.join(out))
                .args(["--resolution", "36"])
                .output()
                .unwrap(),
        );
    }
    assert_eq!(
        fs::read(a.root.join("rec_a/global.obj")).unwrap(),
        fs::read(b.root.join("rec_b/global.obj")).unwrap()
    );
}

#[test]
fn threads_do_not_change_grid_output() {
    let p = trained_pipeline(11);
    for (threads, out) in [("1", "t1"), ("3", "t3")] {
        assert_ok(
            &lpi()
                .arg("reconstruct")
                .arg(&p.ckpt)
                .arg("--out")
                .arg(p.root.join(out))
                .args(["--resolution", "36", "--threads", threads])
                .output()
                .unwrap(),
        );
    }
    assert_eq!(
        fs::read(p.root.join("t1/global.obj")).unwrap(),
        fs::read(p.root.join("t3/global.obj")).unwrap()
    );

    // env fallback must behave like the flag
    let env_out = p.root.join("tenv");
    let mut cmd = lpi();
    cmd.arg("reconstruct")
        .arg(&p.ckpt)
        .arg("--out")
        .arg(&env_out)
        .args(["--resolution", "36"])
        .env("LPI_THREADS", "2");
    assert_ok(&cmd.output().unwrap());
    assert_eq!(
        fs::read(p.root.join("t1/global.obj")).unwrap(),
        fs::read(env_out.join("global.obj")).unwrap()
    );
}
