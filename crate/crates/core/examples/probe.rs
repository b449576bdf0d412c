// Scratch experiment: desk-scale training feasibility on analytic shapes.
use std::time::Instant;

use lpi_core::affinity::{AffinityConfig, AffinityMode};
use lpi_core::extract::{evaluate_grid, extract_part, marching_cubes, MaskMode};
use lpi_core::geom::{farthest_point_sample, normalize, PointCloud};
use lpi_core::metrics::{chamfer, f_score, sample_mesh, SampledSurface};
use lpi_core::net::NetConfig;
use lpi_core::train::{train, LossMode, TrainConfig, TrainInputs};
use lpi_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_cloud(n: usize, r: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let v = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            );
            v.normalized() * r
        })
        .collect();
    PointCloud::new(pts, None).unwrap()
}

fn torus_cloud(n: usize, major: f64, minor: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * std::f64::consts::TAU;
            let v = rng.gen::<f64>() * std::f64::consts::TAU;
            Vec3::new(
                (major + minor * v.cos()) * u.cos(),
                (major + minor * v.cos()) * u.sin(),
                minor * v.sin(),
            )
        })
        .collect();
    PointCloud::new(pts, None).unwrap()
}

fn torus_sdf(p: Vec3, major: f64, minor: f64) -> f64 {
    let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
    (ring * ring + p.z * p.z).sqrt() - minor
}

fn desk_net() -> NetConfig {
    let r: f64 = std::env::var("PROBE_R").ok().and_then(|v| v.parse().ok()).unwrap_or(0.3);
    NetConfig { latent_dim: 32, init_radius: r, ..NetConfig::default() }
}

fn probe_lr() -> f64 {
    std::env::var("PROBE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-4)
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "sphere".into());
    match which.as_str() {
        "sphere" => sphere_probe(),
        "torus" => torus_probe(),
        "dumbbell" => dumbbell_probe(),
        _ => eprintln!("unknown probe"),
    }
}

fn sphere_probe() {
    let t0 = Instant::now();
    let cloud = sphere_cloud(2000, 0.3, 1);
    let (norm_cloud, scale, offset) = normalize(&cloud).unwrap();
    let centers = farthest_point_sample(&norm_cloud, 16, 0).unwrap();
    println!("scale {scale} offset {offset:?}");
    let gt = move |q: Vec3| {
        // normalized-space sdf of the original r=0.3 sphere
        let orig = q * scale + offset;
        (orig.norm() - 0.3) / scale
    };
    let inputs = TrainInputs {
        cloud: &norm_cloud,
        centers: &centers,
        affinity: AffinityConfig::default(),
        table: None,
        scale,
        offset,
        gt: Some(&gt),
    };
    let cfg = TrainConfig {
        steps: 2000,
        loss: LossMode::Mse,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(&inputs, desk_net(), &cfg, None).unwrap();
    println!("train time {:?}", t0.elapsed());
    println!(
        "loss first {:.3e} last {:.3e}",
        out.loss_history[0],
        out.loss_history.last().unwrap()
    );

    // held-out queries around the surface
    let ckpt = &out.checkpoint;
    let eval = lpi_core::extract::FieldEvaluator::new(ckpt);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mae = 0.0;
    let n = 2000;
    for _ in 0..n {
        let dir = Vec3::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        )
        .normalized();
        let r = 0.3 + (rng.gen::<f64>() - 0.5) * 0.2;
        let q_orig = dir * r;
        let q_norm = (q_orig - offset) / scale;
        let f_orig = eval.value(q_norm).unwrap() * scale;
        mae += (f_orig - (q_orig.norm() - 0.3)).abs();
    }
    mae /= n as f64;
    println!("held-out MAE (original units) {mae:.5}  (target < 5e-3)");

    let t1 = Instant::now();
    let grid = evaluate_grid(ckpt, 64).unwrap();
    let mesh = marching_cubes(&grid, 0.0).unwrap();
    let mesh = mesh.denormalized(scale, offset);
    println!("grid+mc time {:?}", t1.elapsed());
    let h = grid.cell_diagonal() * scale;
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &mesh.vertices {
        rmin = rmin.min(v.norm());
        rmax = rmax.max(v.norm());
    }
    println!("vertex radii [{rmin:.4}, {rmax:.4}] target [{:.4},{:.4}]", 0.3 - h, 0.3 + h);
    let area = mesh.area();
    let expect = 4.0 * std::f64::consts::PI * 0.09;
    println!("area {area:.5} vs {expect:.5} rel {:.4}", (area - expect).abs() / expect);
    println!("total {:?}", t0.elapsed());
}

fn torus_probe() {
    let t0 = Instant::now();
    let cloud = torus_cloud(4000, 0.25, 0.1, 2);
    let (norm_cloud, scale, offset) = normalize(&cloud).unwrap();
    let centers = farthest_point_sample(&norm_cloud, 16, 0).unwrap();
    let inputs = TrainInputs {
        cloud: &norm_cloud,
        centers: &centers,
        affinity: AffinityConfig::default(),
        table: None,
        scale,
        offset,
        gt: None,
    };
    let knn: usize = std::env::var("PROBE_KNN").ok().and_then(|v| v.parse().ok()).unwrap_or(50);
    let batch: usize = std::env::var("PROBE_BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(512);
    let pp: usize = std::env::var("PROBE_PP").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
    let cfg = TrainConfig { steps: 2000, seed: 5, lr: probe_lr(), noise_knn: knn, batch, per_point: pp, ..TrainConfig::default() };
    let out = train(&inputs, desk_net(), &cfg, None).unwrap();
    println!("train time {:?}", t0.elapsed());
    let h = &out.loss_history;
    let med = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    };
    println!(
        "loss: steps0-100 median {:.4}  steps900-1000 median {:.4}  last {:.4}",
        med(&h[0..100]),
        med(&h[900..1000]),
        h.last().unwrap()
    );
    println!("excluded max {:?}", out.excluded_history.iter().max());

    let ckpt = &out.checkpoint;
    // field diagnostics in normalized space
    let eval0 = lpi_core::extract::FieldEvaluator::new(ckpt);
    for (label, q) in [
        ("origin", Vec3::ZERO),
        ("tube center", Vec3::new(0.25 / scale, 0.0, 0.0)),
        ("on surface", Vec3::new(0.35 / scale, 0.0, 0.0)),
        ("far corner", Vec3::new(0.5, 0.5, 0.5)),
    ] {
        println!("f({label}) = {:.4}", eval0.value((q * scale - offset) / scale * scale / scale).unwrap());
    }
    let probe_direct = |p_orig: Vec3| eval0.value((p_orig - offset) / scale).unwrap();
    println!(
        "direct: f(origin)={:.4} f(ring)={:.4} f(outside)={:.4}",
        probe_direct(Vec3::ZERO),
        probe_direct(Vec3::new(0.25, 0.0, 0.0)),
        probe_direct(Vec3::new(0.6, 0.6, 0.4))
    );
    let t1 = Instant::now();
    let grid = evaluate_grid(ckpt, 64).unwrap();
    let gmin = grid.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = grid.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("grid range [{gmin:.4}, {gmax:.4}]");
    let r = grid.resolution();
    let mut neg_boundary = 0usize;
    for iz in 0..r { for iy in 0..r { for ix in 0..r {
        if ix==0||iy==0||iz==0||ix==r-1||iy==r-1||iz==r-1 {
            if grid.value_at(ix,iy,iz) < 0.0 { neg_boundary += 1; }
        }
    }}}
    println!("negative boundary nodes: {neg_boundary}");
    let mesh = match marching_cubes(&grid, 0.0) {
        Ok(m) => m,
        Err(e) => {
            println!("marching cubes: {e}");
            return;
        }
    }
    .denormalized(scale, offset);
    println!("grid+mc time {:?}", t1.elapsed());
    println!("mesh: {} verts {} tris watertight {}", mesh.vertices.len(), mesh.triangles.len(), mesh.is_watertight());

    // analytic torus reference mesh via fine parametric triangulation
    let refmesh = {
        let (nu, nv) = (200usize, 80usize);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for i in 0..nu {
            for j in 0..nv {
                let u = std::f64::consts::TAU * i as f64 / nu as f64;
                let v = std::f64::consts::TAU * j as f64 / nv as f64;
                vertices.push(Vec3::new(
                    (0.25 + 0.1 * v.cos()) * u.cos(),
                    (0.25 + 0.1 * v.cos()) * u.sin(),
                    0.1 * v.sin(),
                ));
            }
        }
        for i in 0..nu {
            for j in 0..nv {
                let a = (i * nv + j) as u32;
                let b = (((i + 1) % nu) * nv + j) as u32;
                let c = (((i + 1) % nu) * nv + (j + 1) % nv) as u32;
                let d = (i * nv + (j + 1) % nv) as u32;
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        lpi_core::extract::TriangleMesh { vertices, triangles, part_id: None }
    };
    let sa = sample_mesh(&mesh, 10_000, 3).unwrap();
    let sb = sample_mesh(&refmesh, 10_000, 4).unwrap();
    let l2 = chamfer(&sa, &sb, 2).unwrap();
    let f = f_score(&sa, &sb, 0.01).unwrap();
    println!("L2CD {l2:.3e} (target < 1e-4)  F(0.01) {f:.4} (target > 0.95)");
    for mu in [0.012, 0.015, 0.02] {
        println!("  F({mu}) = {:.4}", f_score(&sa, &sb, mu).unwrap());
    }
    // precision/recall split and quantiles
    let idx_b = lpi_core::geom::SpatialIndex::build(&sb.points);
    let idx_a = lpi_core::geom::SpatialIndex::build(&sa.points);
    let mut da: Vec<f64> = sa.points.iter().map(|&p| idx_b.nearest(p).1).collect();
    let mut db: Vec<f64> = sb.points.iter().map(|&p| idx_a.nearest(p).1).collect();
    da.sort_by(|a,b| a.total_cmp(b));
    db.sort_by(|a,b| a.total_cmp(b));
    let q = |v: &Vec<f64>, f: f64| v[((v.len()-1) as f64 * f) as usize];
    println!("  recon->ref: p50 {:.4} p90 {:.4} p95 {:.4} p99 {:.4} max {:.4}", q(&da,0.5), q(&da,0.9), q(&da,0.95), q(&da,0.99), da[da.len()-1]);
    println!("  ref->recon: p50 {:.4} p90 {:.4} p95 {:.4} p99 {:.4} max {:.4}", q(&db,0.5), q(&db,0.9), q(&db,0.95), q(&db,0.99), db[db.len()-1]);
    // where are the worst reconstruction points?
    let worst: Vec<Vec3> = sa.points.iter().cloned().filter(|&p| idx_b.nearest(p).1 > 0.01).take(8).collect();
    for w in &worst { println!("  bad recon pt {:.3} {:.3} {:.3} (ring dist {:.4})", w.x, w.y, w.z, torus_sdf(*w, 0.25, 0.1)); }

    // sdf error probe
    let eval = lpi_core::extract::FieldEvaluator::new(ckpt);
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut mae = 0.0;
    for _ in 0..500 {
        let q = Vec3::new(
            (rng.gen::<f64>() - 0.5) * 0.8,
            (rng.gen::<f64>() - 0.5) * 0.8,
            (rng.gen::<f64>() - 0.5) * 0.4,
        );
        let f_orig = eval.value((q - offset) / scale).unwrap() * scale;
        mae += (f_orig - torus_sdf(q, 0.25, 0.1)).abs();
    }
    println!("sdf MAE near torus {:.4}", mae / 500.0);
    println!("total {:?}", t0.elapsed());
}

fn dumbbell_probe() {
    // two spheres r=0.12 centered +-0.3 on x
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts = Vec::new();
    for side in [-0.3f64, 0.3] {
        for _ in 0..1500 {
            let v = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized()
                * 0.12;
            pts.push(v + Vec3::new(side, 0.0, 0.0));
        }
    }
    let cloud = PointCloud::new(pts, None).unwrap();
    let (norm_cloud, scale, offset) = normalize(&cloud).unwrap();
    let centers = farthest_point_sample(&norm_cloud, 2, 0).unwrap();
    println!("centers: {:?}", centers.centers());
    let sdf = move |q: Vec3| {
        let orig = q * scale + offset;
        let a = (orig - Vec3::new(-0.3, 0.0, 0.0)).norm() - 0.12;
        let b = (orig - Vec3::new(0.3, 0.0, 0.0)).norm() - 0.12;
        a.min(b) / scale
    };
    let inputs = TrainInputs {
        cloud: &norm_cloud,
        centers: &centers,
        affinity: AffinityConfig { mode: AffinityMode::Euclidean, sigma: 1.0, semantic_own_weight: 0.8 },
        table: None,
        scale,
        offset,
        gt: Some(&sdf),
    };
    let cfg = TrainConfig { steps: 2000, loss: LossMode::Mse, seed: 11, ..TrainConfig::default() };
    let out = train(&inputs, desk_net(), &cfg, None).unwrap();
    println!("train time {:?}", t0.elapsed());
    let ckpt = &out.checkpoint;

    for (mode, name) in [(MaskMode::UnseenCode, "unseen"), (MaskMode::Clamp, "clamp")] {
        for part in 0..2 {
            match extract_part(ckpt, part, 64, mode) {
                Ok(mesh) => {
                    let mesh = mesh.denormalized(scale, offset);
                    // which lobe is this center's?
                    let cx = centers.center(part).x * scale + offset.x;
                    let lobe = if cx < 0.0 { -0.3 } else { 0.3 };
                    let mut sref = Vec::new();
                    let mut rng2 = ChaCha8Rng::seed_from_u64(55);
                    for _ in 0..4000 {
                        let v = Vec3::new(
                            rng2.gen::<f64>() - 0.5,
                            rng2.gen::<f64>() - 0.5,
                            rng2.gen::<f64>() - 0.5,
                        )
                        .normalized()
                            * 0.12;
                        sref.push(v + Vec3::new(lobe, 0.0, 0.0));
                    }
                    let sref = SampledSurface { normals: vec![Vec3::new(1.0, 0.0, 0.0); sref.len()], points: sref };
                    let smesh = sample_mesh(&mesh, 4000, 9).unwrap();
                    let l2 = chamfer(&smesh, &sref, 2).unwrap();
                    println!(
                        "{name} part {part}: verts {} tris {} L2CD-to-lobe {l2:.3e} (target < 2e-4)",
                        mesh.vertices.len(),
                        mesh.triangles.len()
                    );
                }
                Err(e) => println!("{name} part {part}: {e}"),
            }
        }
    }
    println!("total {:?}", t0.elapsed());
}
