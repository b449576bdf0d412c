//! Query sampling around the cloud, the two loss scenarios and the
//! optimization loop.
//!
//! The unsupervised objective projects every query onto the current zero
//! set, `q' = q - s * grad/|grad|`, and takes a symmetric Chamfer between
//! the projected queries and the surface points co-sampled with the
//! batch. The projection keeps the gradient on the tape, so the loss is
//! differentiated through the input gradient itself.

use std::io::Write;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::affinity::{AffinityConfig, AffinityContext, AffinityMode};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geom::{GeodesicTable, PointCloud, RegionCenters, SpatialIndex};
use crate::graph::{Graph, Tx};
use crate::net::{blend_codes, ImplicitNet, NetConfig, SurfaceCodes};
use crate::tensor::Tensor;
use crate::vec3::Vec3;

pub const VANISHING_GRAD_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Pulling,
    Mse,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pulling" => Ok(LossMode::Pulling),
            "mse" => Ok(LossMode::Mse),
            other => Err(Error::InvalidArgument(format!("unknown loss mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: LossMode,
    /// Queries drawn around each surface point.
    pub per_point: usize,
    /// The k-th nearest neighbor distance sets the noise scale.
    pub noise_knn: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch: 512,
            lr: 1e-4,
            loss: LossMode::Pulling,
            per_point: 20,
            noise_knn: 50,
            seed: 0,
        }
    }
}

/// Sampled queries with frozen affinities. Supervised runs also carry
/// ground-truth signed distances.
#[derive(Clone, Debug)]
pub struct QuerySet {
    queries: Vec<Vec3>,
    /// Q×I, rows sum to 1.
    affinities: Tensor,
    gt_sdf: Option<Vec<f64>>,
    /// Index of the surface point each query was drawn around.
    parent: Vec<usize>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Vec3] {
        &self.queries
    }

    pub fn affinities(&self) -> &Tensor {
        &self.affinities
    }

    pub fn gt_sdf(&self) -> Option<&[f64]> {
        self.gt_sdf.as_deref()
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    /// Draw `per_point` Gaussian queries around every surface point with
    /// the point's `noise_knn`-th neighbor distance as standard
    /// deviation, then freeze affinities (and optional ground truth).
    pub fn build(
        cloud: &PointCloud,
        per_point: usize,
        noise_knn: usize,
        seed: u64,
        ctx: &AffinityContext,
        gt: Option<&dyn Fn(Vec3) -> f64>,
    ) -> Result<QuerySet> {
        let n = cloud.len();
        if noise_knn >= n {
            return Err(Error::InvalidArgument(format!(
                "noise_knn {noise_knn} must be below the point count {n}"
            )));
        }
        let index = SpatialIndex::build(cloud.points());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut queries = Vec::with_capacity(n * per_point);
        let mut parent = Vec::with_capacity(n * per_point);
        for (i, &p) in cloud.points().iter().enumerate() {
            let nn = index.k_nearest(p, noise_knn, Some(i));
            let std = nn.last().map(|&(_, d)| d).unwrap_or(0.0);
            for _ in 0..per_point {
                let q = Vec3::new(
                    p.x + std * unit.sample(&mut rng),
                    p.y + std * unit.sample(&mut rng),
                    p.z + std * unit.sample(&mut rng),
                );
                queries.push(q);
                parent.push(i);
            }
        }
        let i_count = ctx.centers.len();
        let mut aff = Tensor::zeros(queries.len(), i_count);
        for (r, &q) in queries.iter().enumerate() {
            let a = ctx.affinity(q)?;
            for (c, &v) in a.values().iter().enumerate() {
                aff.set(r, c, v);
            }
        }
        let gt_sdf = gt.map(|f| queries.iter().map(|&q| f(q)).collect());
        Ok(QuerySet { queries, affinities: aff, gt_sdf, parent })
    }
}

/// `q' = q - s * grad/|grad|` for one query; the spec-level projection
/// used by tests and diagnostics. Training projects whole batches on the
/// tape instead.
pub fn project_query(
    net: &ImplicitNet,
    codes: &SurfaceCodes,
    q: Vec3,
    affinity: &[f64],
) -> Result<Vec3> {
    let w = blend_codes(affinity, codes);
    let s = net.eval(q, &w);
    let g = net.input_gradient(q, &w);
    let norm = g.norm();
    if norm < VANISHING_GRAD_THRESHOLD {
        return Err(Error::NumericalError(format!(
            "vanishing gradient |grad|={norm} at {q:?}"
        )));
    }
    Ok(q - g * (s / norm))
}

struct BatchLoss {
    loss: Tx,
    excluded: usize,
}

/// Pulling loss over one batch, built on `g`. Gradients flow to the bound
/// net parameters and `codes_tx`.
fn build_pulling_loss(
    g: &mut Graph,
    net: &ImplicitNet,
    bound: &crate::net::BoundNet,
    codes_tx: Tx,
    qs: &QuerySet,
    batch_idx: &[usize],
    cloud: &PointCloud,
) -> Result<BatchLoss> {
    let qb = batch_idx.len();
    let mut qdata = Vec::with_capacity(qb * 3);
    let i_count = qs.affinities.cols();
    let mut adata = Vec::with_capacity(qb * i_count);
    for &i in batch_idx {
        let p = qs.queries[i];
        qdata.extend_from_slice(&[p.x, p.y, p.z]);
        adata.extend_from_slice(qs.affinities.row(i));
    }
    let q = g.leaf(Tensor::from_vec(qb, 3, qdata));
    let aff = g.leaf(Tensor::from_vec(qb, i_count, adata));
    let w = g.matmul(aff, codes_tx);
    let s = net.forward(g, bound, q, w);
    let ssum = g.sum_all(s);
    let grad = g.backward(ssum, &[q])[0].expect("query feeds the field");

    // vanishing-gradient exclusion happens on values, off the tape
    let gv = g.value(grad);
    let mut keep = Vec::with_capacity(qb);
    for r in 0..qb {
        let row = gv.row(r);
        let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
        if norm >= VANISHING_GRAD_THRESHOLD {
            keep.push(r);
        }
    }
    let excluded = qb - keep.len();
    if keep.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let keep = Rc::new(keep);
    let qk = g.gather_rows(q, keep.clone());
    let sk = g.gather_rows(s, keep.clone());
    let gk = g.gather_rows(grad, keep.clone());

    let gsq = g.square(gk);
    let norm_sq = g.sum_cols(gsq);
    let norm = g.sqrt(norm_sq);
    let dir = g.div_col(gk, norm);
    let disp = g.mul_col(dir, sk);
    let projected = g.sub(qk, disp);

    // surface subset co-sampled with the batch: parents of kept queries
    let mut parents: Vec<usize> = keep.iter().map(|&r| qs.parent[batch_idx[r]]).collect();
    parents.sort_unstable();
    parents.dedup();
    let p_count = parents.len();
    let surf: Vec<Vec3> = parents.iter().map(|&i| cloud.point(i)).collect();

    // exact nearest pairs in both directions, selected on values
    let pv = g.value(projected).clone();
    let k_count = pv.rows();
    let mut sel_for_surface = vec![0usize; p_count];
    for (pi, x) in surf.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_j = 0usize;
        for j in 0..k_count {
            let row = pv.row(j);
            let d = (x.x - row[0]).powi(2) + (x.y - row[1]).powi(2) + (x.z - row[2]).powi(2);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        sel_for_surface[pi] = best_j;
    }
    let mut sel_for_query = vec![0usize; k_count];
    for j in 0..k_count {
        let row = pv.row(j);
        let mut best = f64::INFINITY;
        let mut best_p = 0usize;
        for (pi, x) in surf.iter().enumerate() {
            let d = (x.x - row[0]).powi(2) + (x.y - row[1]).powi(2) + (x.z - row[2]).powi(2);
            if d < best {
                best = d;
                best_p = pi;
            }
        }
        sel_for_query[j] = best_p;
    }

    let mut surf_data = Vec::with_capacity(p_count * 3);
    for x in &surf {
        surf_data.extend_from_slice(&[x.x, x.y, x.z]);
    }
    let surf_leaf = g.leaf(Tensor::from_vec(p_count, 3, surf_data));
    let qp_for_surface = g.gather_rows(projected, Rc::new(sel_for_surface));
    let d1 = g.sub(surf_leaf, qp_for_surface);
    let d1sq = g.square(d1);
    let term1 = g.sum_all(d1sq);

    let mut xsel_data = Vec::with_capacity(k_count * 3);
    for &pi in &sel_for_query {
        let x = surf[pi];
        xsel_data.extend_from_slice(&[x.x, x.y, x.z]);
    }
    let xsel = g.leaf(Tensor::from_vec(k_count, 3, xsel_data));
    let d2 = g.sub(xsel, projected);
    let d2sq = g.square(d2);
    let term2 = g.sum_all(d2sq);

    let loss = g.add(term1, term2);
    Ok(BatchLoss { loss, excluded })
}

fn build_mse_loss(
    g: &mut Graph,
    net: &ImplicitNet,
    bound: &crate::net::BoundNet,
    codes_tx: Tx,
    qs: &QuerySet,
    batch_idx: &[usize],
) -> Result<BatchLoss> {
    let gt_all = qs
        .gt_sdf
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("MSE loss requires ground-truth sdf".into()))?;
    let qb = batch_idx.len();
    let i_count = qs.affinities.cols();
    let mut qdata = Vec::with_capacity(qb * 3);
    let mut adata = Vec::with_capacity(qb * i_count);
    let mut gt = Vec::with_capacity(qb);
    for &i in batch_idx {
        let p = qs.queries[i];
        qdata.extend_from_slice(&[p.x, p.y, p.z]);
        adata.extend_from_slice(qs.affinities.row(i));
        gt.push(gt_all[i]);
    }
    let q = g.leaf(Tensor::from_vec(qb, 3, qdata));
    let aff = g.leaf(Tensor::from_vec(qb, i_count, adata));
    let gt = g.leaf(Tensor::from_vec(qb, 1, gt));
    let w = g.matmul(aff, codes_tx);
    let s = net.forward(g, bound, q, w);
    let diff = g.sub(s, gt);
    let sq = g.square(diff);
    let loss = g.mean_all(sq);
    Ok(BatchLoss { loss, excluded: 0 })
}

/// Value-only pulling loss for a prepared batch; the spec-level operation
/// used by tests and oracles.
pub fn pulling_loss(
    net: &ImplicitNet,
    codes: &SurfaceCodes,
    qs: &QuerySet,
    batch_idx: &[usize],
    cloud: &PointCloud,
) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let codes_tx = codes.bind(&mut g);
    let out = build_pulling_loss(&mut g, net, &bound, codes_tx, qs, batch_idx, cloud)?;
    Ok((g.value(out.loss).item(), out.excluded))
}

/// Value-only MSE loss for a prepared batch.
pub fn mse_loss(
    net: &ImplicitNet,
    codes: &SurfaceCodes,
    qs: &QuerySet,
    batch_idx: &[usize],
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let codes_tx = codes.bind(&mut g);
    let out = build_mse_loss(&mut g, net, &bound, codes_tx, qs, batch_idx)?;
    Ok(g.value(out.loss).item())
}

/// One line per log record: `{"step":..,"loss":..,"excluded":..,"wall_ms":..}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub excluded: usize,
    pub wall_ms: u64,
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub loss_history: Vec<f64>,
    pub excluded_history: Vec<usize>,
    pub log: Vec<LogRecord>,
}

pub struct TrainInputs<'a> {
    pub cloud: &'a PointCloud,
    pub centers: &'a RegionCenters,
    pub affinity: AffinityConfig,
    pub table: Option<&'a GeodesicTable>,
    /// Normalization that produced `cloud`, kept for provenance.
    pub scale: f64,
    pub offset: Vec3,
    /// Ground-truth signed distance for supervised runs.
    pub gt: Option<&'a dyn Fn(Vec3) -> f64>,
}

/// Full optimization: sample queries, then `cfg.steps` Adam steps over
/// shuffled batches. Aborts with the last good checkpoint if the loss
/// goes non-finite. `log_sink`, when given, receives one JSON line per
/// record.
pub fn train(
    inputs: &TrainInputs,
    net_cfg: NetConfig,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutput> {
    if cfg.batch == 0 || cfg.per_point == 0 {
        return Err(Error::InvalidArgument("batch and per_point must be positive".into()));
    }
    if cfg.loss == LossMode::Mse && inputs.gt.is_none() {
        return Err(Error::InvalidArgument(
            "MSE loss requires a ground-truth signed distance source".into(),
        ));
    }
    if inputs.affinity.mode == AffinityMode::Intrinsic && inputs.table.is_none() {
        return Err(Error::InvalidArgument(
            "intrinsic affinity requires a prebuilt geodesic table".into(),
        ));
    }
    inputs.affinity.validate()?;
    let index = SpatialIndex::build(inputs.cloud.points());
    let ctx = AffinityContext {
        config: inputs.affinity,
        centers: inputs.centers,
        cloud: inputs.cloud,
        index: &index,
        table: inputs.table,
    };
    let qs = QuerySet::build(
        inputs.cloud,
        cfg.per_point,
        cfg.noise_knn,
        cfg.seed,
        &ctx,
        inputs.gt,
    )?;

    let mut net = ImplicitNet::init(net_cfg.clone(), cfg.seed);
    let mut codes = SurfaceCodes::init(
        inputs.centers.len(),
        net_cfg.latent_dim,
        net_cfg.code_std,
        cfg.seed.wrapping_add(1),
    );
    let unseen = SurfaceCodes::draw_unseen(net_cfg.latent_dim, net_cfg.code_std, cfg.seed);

    let mut params = net.params();
    params.push(codes.tensor().clone());
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut adam = AdamState::new(&params, adam_cfg);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..qs.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut loss_history = Vec::with_capacity(cfg.steps);
    let mut excluded_history = Vec::with_capacity(cfg.steps);
    let mut log = Vec::new();
    let started = Instant::now();
    let mut prev_params: Option<Vec<Tensor>> = None;
    let mut prev_step = 0u64;

    let make_checkpoint = |net: &ImplicitNet, codes: &SurfaceCodes, steps: u64| Checkpoint {
        net: net.clone(),
        codes: codes.clone(),
        unseen_code: unseen.clone(),
        centers: inputs.centers.clone(),
        affinity: inputs.affinity,
        scale: inputs.scale,
        offset: inputs.offset,
        steps,
        cloud: inputs.cloud.clone(),
        table: inputs.table.cloned(),
    };

    for step in 1..=cfg.steps {
        if cursor + cfg.batch > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let take = cfg.batch.min(order.len());
        let batch_idx = &order[cursor..cursor + take];
        cursor += take;

        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let codes_tx = codes.bind(&mut g);
        let out = match cfg.loss {
            LossMode::Pulling => {
                build_pulling_loss(&mut g, &net, &bound, codes_tx, &qs, batch_idx, inputs.cloud)?
            }
            LossMode::Mse => build_mse_loss(&mut g, &net, &bound, codes_tx, &qs, batch_idx)?,
        };
        let loss_value = g.value(out.loss).item();
        if !loss_value.is_finite() {
            let (net_bad, codes_bad, steps_bad) = match prev_params {
                Some(ref prev) => {
                    let mut n = net.clone();
                    n.set_params(&prev[..prev.len() - 1]);
                    let c = SurfaceCodes::from_tensor(prev[prev.len() - 1].clone());
                    (n, c, prev_step)
                }
                None => (net.clone(), codes.clone(), 0),
            };
            let ckpt = make_checkpoint(&net_bad, &codes_bad, steps_bad);
            return Err(Error::NumericalError(format!(
                "loss became non-finite at step {step}; last good checkpoint at step {}",
                ckpt.steps
            )));
        }

        let mut wrt = bound.param_nodes();
        wrt.push(codes_tx);
        let grads = g.backward(out.loss, &wrt);

        let mut params = net.params();
        params.push(codes.tensor().clone());
        prev_params = Some(params.clone());
        prev_step = step as u64 - 1;

        let grad_refs: Vec<Option<&Tensor>> =
            grads.iter().map(|o| o.map(|tx| g.value(tx))).collect();
        adam.step(&mut params, &grad_refs)?;
        let codes_t = params.pop().unwrap();
        net.set_params(&params);
        codes = SurfaceCodes::from_tensor(codes_t);

        loss_history.push(loss_value);
        excluded_history.push(out.excluded);
        if step == 1 || step % 100 == 0 || step == cfg.steps {
            let rec = LogRecord {
                step,
                loss: loss_value,
                excluded: out.excluded,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            if let Some(sink) = log_sink.as_deref_mut() {
                let line = serde_json::to_string(&rec)
                    .map_err(|e| Error::Parse(format!("log serialization: {e}")))?;
                writeln!(sink, "{line}")?;
            }
            log.push(rec);
        }
    }

    let checkpoint = make_checkpoint(&net, &codes, cfg.steps as u64);
    Ok(TrainOutput { checkpoint, loss_history, excluded_history, log })
}
