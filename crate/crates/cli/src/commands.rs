//! Subcommand implementations; thin orchestration over the library.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use lpi_core::affinity::{AffinityConfig, AffinityMode};
use lpi_core::checkpoint::Checkpoint;
use lpi_core::error::{Error, Result};
use lpi_core::extract::{
    abstract_hulls, evaluate_grid_threads, marching_cubes, relevel_threads, MeshBundle,
};
use lpi_core::geom::{
    build_geodesic_table_threads, farthest_point_sample, normalize, segment_representatives,
};
use lpi_core::io::{read_cloud, read_obj, write_obj};
use lpi_core::metrics::{chamfer, f_score, normal_consistency, sample_mesh, volumetric_iou, EvalReport};
use lpi_core::train::{train, LossMode, TrainConfig, TrainInputs};
use lpi_core::Vec3;

use crate::config::Settings;
use crate::gt;

pub fn run_train(input: &Path, out: &Path, s: &Settings) -> Result<()> {
    let raw = read_cloud(input)?;
    let (cloud, scale, offset) = normalize(&raw)?;

    let centers = if s.affinity == AffinityMode::Semantic {
        let reps = segment_representatives(&cloud)?;
        if s.regions != Settings::full().regions && s.regions != reps.len() {
            return Err(Error::InvalidArgument(format!(
                "semantic mode binds one code per segment: {} segments, --regions {}",
                reps.len(),
                s.regions
            )));
        }
        reps
    } else {
        farthest_point_sample(&cloud, s.regions, s.seed)?
    };

    let table = if s.affinity == AffinityMode::Intrinsic {
        Some(build_geodesic_table_threads(&cloud, &centers, s.knn, s.threads)?)
    } else {
        None
    };

    let gt_fn = match (&s.gt, s.loss) {
        (Some(spec), _) => Some(gt::parse(spec)?),
        (None, LossMode::Mse) => {
            return Err(Error::InvalidArgument(
                "MSE loss needs an analytic distance source: pass --gt kind:params".into(),
            ))
        }
        (None, LossMode::Pulling) => None,
    };
    // ground truth acts in original coordinates; training runs normalized
    let gt_norm = gt_fn.map(|f| move |q: Vec3| f(q * scale + offset) / scale);
    let gt_ref: Option<&dyn Fn(Vec3) -> f64> = match &gt_norm {
        Some(f) => Some(f),
        None => None,
    };

    let affinity = AffinityConfig {
        mode: s.affinity,
        sigma: s.sigma,
        semantic_own_weight: s.own_weight,
    };
    let inputs = TrainInputs {
        cloud: &cloud,
        centers: &centers,
        affinity,
        table: table.as_ref(),
        scale,
        offset,
        gt: gt_ref,
    };
    let cfg = TrainConfig {
        steps: s.steps,
        batch: s.batch,
        lr: s.lr,
        loss: s.loss,
        per_point: s.per_point,
        noise_knn: s.noise_knn,
        seed: s.seed,
    };

    let log_path = log_path_for(out);
    let mut log_file = fs::File::create(&log_path)?;
    let outcome = train(&inputs, s.net_config(), &cfg, Some(&mut log_file))?;
    log_file.flush()?;
    outcome.checkpoint.save(out)?;
    println!(
        "trained {} steps on {} points ({} regions, {} affinity); checkpoint {} log {}",
        s.steps,
        cloud.len(),
        centers.len(),
        s.affinity.as_str(),
        out.display(),
        log_path.display()
    );
    Ok(())
}

pub fn log_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

#[derive(Serialize)]
struct Manifest<'a> {
    checkpoint: &'a str,
    resolution: usize,
    level: usize,
    mode: &'a str,
}

fn write_bundle(dir: &Path, bundle: &MeshBundle, ckpt: &Checkpoint, ckpt_path: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_obj(
        &dir.join("global.obj"),
        &bundle.global.denormalized(ckpt.scale, ckpt.offset),
    )?;
    for part in &bundle.parts {
        write_obj(
            &dir.join(format!("part_{:03}.obj", part.id)),
            &part.mesh.denormalized(ckpt.scale, ckpt.offset),
        )?;
    }
    for hull in &bundle.hulls {
        write_obj(
            &dir.join(format!("hull_{:03}.obj", hull.part_id.unwrap_or(0))),
            &hull.denormalized(ckpt.scale, ckpt.offset),
        )?;
    }
    let manifest = Manifest {
        checkpoint: &ckpt_path.display().to_string(),
        resolution: bundle.provenance.resolution,
        level: bundle.provenance.level,
        mode: &bundle.provenance.mode,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn run_reconstruct(ckpt_path: &Path, out: &Path, s: &Settings) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let grid = evaluate_grid_threads(&ckpt, s.resolution, s.threads)?;
    let mesh = marching_cubes(&grid, 0.0)?;
    fs::create_dir_all(out)?;
    write_obj(&out.join("global.obj"), &mesh.denormalized(ckpt.scale, ckpt.offset))?;
    let manifest = Manifest {
        checkpoint: &ckpt_path.display().to_string(),
        resolution: s.resolution,
        level: ckpt.centers.len(),
        mode: ckpt.affinity.mode.as_str(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    fs::write(out.join("manifest.json"), json + "\n")?;
    println!(
        "reconstructed {} ({} vertices, {} triangles)",
        out.join("global.obj").display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

pub fn run_parts(ckpt_path: &Path, out: &Path, s: &Settings) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let level = ckpt.centers.len();
    let bundle = relevel_threads(&ckpt, level, s.resolution, s.mask_mode, s.threads)?;
    write_bundle(out, &bundle, &ckpt, ckpt_path)?;
    println!("extracted {} parts into {}", bundle.parts.len(), out.display());
    Ok(())
}

pub fn run_relevel(ckpt_path: &Path, out: &Path, levels: &[usize], s: &Settings) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    for &level in levels {
        let bundle = relevel_threads(&ckpt, level, s.resolution, s.mask_mode, s.threads)?;
        let dir = out.join(format!("level_{level:03}"));
        write_bundle(&dir, &bundle, &ckpt, ckpt_path)?;
        println!("level {level}: {} parts into {}", bundle.parts.len(), dir.display());
    }
    Ok(())
}

pub fn run_abstract(ckpt_path: &Path, out: &Path, level: Option<usize>, s: &Settings) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let level = level.unwrap_or(ckpt.centers.len());
    let mut bundle = relevel_threads(&ckpt, level, s.resolution, s.mask_mode, s.threads)?;
    abstract_hulls(&mut bundle)?;
    write_bundle(out, &bundle, &ckpt, ckpt_path)?;
    if !bundle.degenerate_hulls.is_empty() {
        eprintln!(
            "warning: bounding-tetrahedron fallback for parts {:?}",
            bundle.degenerate_hulls
        );
    }
    println!("abstracted {} hulls into {}", bundle.hulls.len(), out.display());
    Ok(())
}

pub fn run_eval(
    mesh_path: &Path,
    reference_path: &Path,
    want_iou: bool,
    report_out: Option<&Path>,
    s: &Settings,
) -> Result<()> {
    let mesh = read_obj(mesh_path)?;
    let reference = read_obj(reference_path)?;
    let sa = sample_mesh(&mesh, s.samples, s.seed)?;
    let sb = sample_mesh(&reference, s.samples, s.seed.wrapping_add(1))?;
    let mut report = EvalReport {
        l1cd: chamfer(&sa, &sb, 1)?,
        l2cd: chamfer(&sa, &sb, 2)?,
        nc: normal_consistency(&sa, &sb)?,
        fscore_mu: f_score(&sa, &sb, s.mu)?,
        fscore_2mu: f_score(&sa, &sb, 2.0 * s.mu)?,
        iou: None,
        n_samples: s.samples,
        mu: s.mu,
        seed: s.seed,
    };
    let iou_result = if want_iou {
        Some(volumetric_iou(&mesh, &reference, s.resolution.min(64)))
    } else {
        None
    };
    if let Some(Ok(v)) = &iou_result {
        report.iou = Some(*v);
    }
    let json = serde_json::to_string(&report).map_err(|e| Error::Parse(format!("report: {e}")))?;
    println!("{json}");
    if let Some(path) = report_out {
        fs::write(path, json + "\n")?;
    }
    // metric-precondition failures surface after the partial report
    if let Some(Err(e)) = iou_result {
        return Err(e);
    }
    Ok(())
}

#[derive(Serialize)]
struct InspectSummary {
    steps: u64,
    regions: usize,
    latent_dim: usize,
    affinity: String,
    sigma: f64,
    semantic_own_weight: f64,
    layers: Vec<(usize, usize)>,
    activation_beta: f64,
    scale: f64,
    offset: [f64; 3],
    points: usize,
    labeled: bool,
    geodesic_table: bool,
}

pub fn run_inspect(ckpt_path: &Path, json: bool) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let summary = InspectSummary {
        steps: ckpt.steps,
        regions: ckpt.centers.len(),
        latent_dim: ckpt.codes.latent_dim(),
        affinity: ckpt.affinity.mode.as_str().to_string(),
        sigma: ckpt.affinity.sigma,
        semantic_own_weight: ckpt.affinity.semantic_own_weight,
        layers: ckpt.net.config().layer_dims(),
        activation_beta: ckpt.net.config().beta,
        scale: ckpt.scale,
        offset: ckpt.offset.to_array(),
        points: ckpt.cloud.len(),
        labeled: ckpt.cloud.segment_labels().is_some(),
        geodesic_table: ckpt.table.is_some(),
    };
    if json {
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Parse(format!("summary: {e}")))?;
        println!("{text}");
    } else {
        println!("checkpoint {}", ckpt_path.display());
        println!("  steps        {}", summary.steps);
        println!("  regions (I)  {}", summary.regions);
        println!("  latent (T)   {}", summary.latent_dim);
        println!("  affinity     {} (sigma {})", summary.affinity, summary.sigma);
        if summary.affinity == "semantic" {
            println!("  own weight   {}", summary.semantic_own_weight);
        }
        let dims: Vec<String> = summary
            .layers
            .iter()
            .map(|(i, o)| format!("{i}x{o}"))
            .collect();
        println!("  layers       {} (beta {})", dims.join(" "), summary.activation_beta);
        println!("  normalize    scale {} offset {:?}", summary.scale, summary.offset);
        println!(
            "  cloud        {} points{}{}",
            summary.points,
            if summary.labeled { ", labeled" } else { "" },
            if summary.geodesic_table { ", geodesic table" } else { "" }
        );
    }
    Ok(())
}
