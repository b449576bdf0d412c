//! The implicit network: a fully-connected MLP over `concat(q, w)` where
//! `q` is a query point and `w` the blended latent code, plus the
//! learnable per-region surface codes feeding `w`.
//!
//! The activation is softplus with a configurable sharpness so first and
//! second derivatives exist everywhere (projection gradients need them).
//! The last layer is initialized toward a sphere of `init_radius` so the
//! field starts out as a useful signed distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Tx};
use crate::tensor::Tensor;
use crate::vec3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Latent code width T.
    pub latent_dim: usize,
    pub hidden_width: usize,
    /// Number of weight layers, output layer included.
    pub layers: usize,
    /// Layers whose input is re-concatenated with `concat(q, w)`.
    pub skip_at: Vec<usize>,
    /// Softplus sharpness.
    pub beta: f64,
    /// Radius of the sphere the last layer is initialized toward.
    pub init_radius: f64,
    /// Standard deviation of freshly initialized surface codes.
    pub code_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 100,
            hidden_width: 256,
            layers: 8,
            skip_at: vec![4],
            beta: 100.0,
            init_radius: 0.3,
            code_std: 1e-2,
        }
    }
}

impl NetConfig {
    pub fn input_dim(&self) -> usize {
        3 + self.latent_dim
    }

    /// (in, out) of each weight layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let input = if l == 0 {
                self.input_dim()
            } else if self.skip_at.contains(&l) {
                self.hidden_width + self.input_dim()
            } else {
                self.hidden_width
            };
            let output = if l == self.layers - 1 { 1 } else { self.hidden_width };
            dims.push((input, output));
        }
        dims
    }
}

/// MLP parameters. Layout is `x * W + b` with row-major `in x out`
/// weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitNet {
    cfg: NetConfig,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Tape handles for one binding of the parameters.
pub struct BoundNet {
    pub weights: Vec<Tx>,
    pub biases: Vec<Tx>,
}

impl BoundNet {
    /// Canonical flat parameter order: per layer weight then bias.
    pub fn param_nodes(&self) -> Vec<Tx> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for i in 0..self.weights.len() {
            out.push(self.weights[i]);
            out.push(self.biases[i]);
        }
        out
    }
}

impl ImplicitNet {
    /// Geometric initialization: He-scaled hidden layers (skip rows that
    /// see the raw input are zeroed), last layer mean sqrt(pi/in) with a
    /// negative bias so the initial field approximates a sphere SDF.
    pub fn init(cfg: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(cfg.layers);
        let mut biases = Vec::with_capacity(cfg.layers);
        for (l, (din, dout)) in cfg.layer_dims().into_iter().enumerate() {
            let last = l == cfg.layers - 1;
            let (w, b) = if last {
                let mean = (std::f64::consts::PI / din as f64).sqrt();
                let noise = Normal::new(0.0, 1e-5).unwrap();
                let w = Tensor::from_fn(din, dout, |_, _| mean + noise.sample(&mut rng));
                let b = Tensor::filled(1, dout, -cfg.init_radius);
                (w, b)
            } else {
                let std = (2.0 / din as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                let skip_rows = if cfg.skip_at.contains(&l) && l > 0 {
                    din - cfg.hidden_width
                } else {
                    0
                };
                let w = Tensor::from_fn(din, dout, |r, _| {
                    let v = normal.sample(&mut rng);
                    if skip_rows > 0 && r >= din - skip_rows {
                        0.0
                    } else {
                        v
                    }
                });
                (w, Tensor::zeros(1, dout))
            };
            weights.push(w);
            biases.push(b);
        }
        ImplicitNet { cfg, weights, biases }
    }

    pub fn from_params(cfg: NetConfig, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Self {
        let dims = cfg.layer_dims();
        assert_eq!(weights.len(), dims.len());
        assert_eq!(biases.len(), dims.len());
        for (i, (din, dout)) in dims.into_iter().enumerate() {
            assert_eq!(weights[i].shape(), (din, dout), "layer {i} weight shape");
            assert_eq!(biases[i].shape(), (1, dout), "layer {i} bias shape");
        }
        ImplicitNet { cfg, weights, biases }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Flat parameter snapshot in the canonical order.
    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for i in 0..self.weights.len() {
            out.push(self.weights[i].clone());
            out.push(self.biases[i].clone());
        }
        out
    }

    /// Replace parameters from the canonical flat order.
    pub fn set_params(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.weights.len() * 2);
        for i in 0..self.weights.len() {
            self.weights[i] = params[2 * i].clone();
            self.biases[i] = params[2 * i + 1].clone();
        }
    }

    /// Insert the parameters as tape leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundNet {
        let weights = self.weights.iter().map(|w| g.leaf(w.clone())).collect();
        let biases = self.biases.iter().map(|b| g.leaf(b.clone())).collect();
        BoundNet { weights, biases }
    }

    /// Batched forward on the tape: `q` is B×3, `w` is B×T, result B×1.
    pub fn forward(&self, g: &mut Graph, bound: &BoundNet, q: Tx, w: Tx) -> Tx {
        assert_eq!(g.value(q).cols(), 3);
        assert_eq!(g.value(w).cols(), self.cfg.latent_dim);
        let x0 = g.concat_cols(q, w);
        let mut h = x0;
        for l in 0..self.cfg.layers {
            if l > 0 && self.cfg.skip_at.contains(&l) {
                h = g.concat_cols(h, x0);
            }
            let z = g.matmul(h, bound.weights[l]);
            let z = g.add_row(z, bound.biases[l]);
            h = if l + 1 < self.cfg.layers {
                g.softplus(z, self.cfg.beta)
            } else {
                z
            };
        }
        h
    }

    /// Tape-free batched evaluation for reconstruction-time queries.
    /// `q` B×3 and `w` B×T; returns the B signed distances.
    pub fn forward_batch(&self, q: &Tensor, w: &Tensor) -> Vec<f64> {
        assert_eq!(q.cols(), 3);
        assert_eq!(w.cols(), self.cfg.latent_dim);
        assert_eq!(q.rows(), w.rows());
        let b = q.rows();
        let mut x0 = Tensor::zeros(b, 3 + self.cfg.latent_dim);
        for r in 0..b {
            for c in 0..3 {
                x0.set(r, c, q.get(r, c));
            }
            for c in 0..self.cfg.latent_dim {
                x0.set(r, 3 + c, w.get(r, c));
            }
        }
        let beta = self.cfg.beta;
        let mut h = x0.clone();
        for l in 0..self.cfg.layers {
            if l > 0 && self.cfg.skip_at.contains(&l) {
                let mut cat = Tensor::zeros(b, h.cols() + x0.cols());
                for r in 0..b {
                    for c in 0..h.cols() {
                        cat.set(r, c, h.get(r, c));
                    }
                    for c in 0..x0.cols() {
                        cat.set(r, h.cols() + c, x0.get(r, c));
                    }
                }
                h = cat;
            }
            let mut z = h.matmul(&self.weights[l]);
            for r in 0..b {
                for c in 0..z.cols() {
                    let v = z.get(r, c) + self.biases[l].get(0, c);
                    z.set(r, c, v);
                }
            }
            if l + 1 < self.cfg.layers {
                for v in z.data_mut() {
                    let t = beta * *v;
                    *v = (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta;
                }
            }
            h = z;
        }
        h.data().to_vec()
    }

    /// Signed distance at a single query.
    pub fn eval(&self, q: Vec3, w: &[f64]) -> f64 {
        let qt = Tensor::from_vec(1, 3, vec![q.x, q.y, q.z]);
        let wt = Tensor::from_vec(1, w.len(), w.to_vec());
        self.forward_batch(&qt, &wt)[0]
    }

    /// Exact reverse-mode gradient of the signed distance w.r.t. the
    /// query position.
    pub fn input_gradient(&self, q: Vec3, w: &[f64]) -> Vec3 {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let qt = g.leaf(Tensor::from_vec(1, 3, vec![q.x, q.y, q.z]));
        let wt = g.leaf(Tensor::from_vec(1, w.len(), w.to_vec()));
        let s = self.forward(&mut g, &bound, qt, wt);
        let dq = g.backward(s, &[qt])[0].expect("query feeds the output");
        let d = g.value(dq);
        Vec3::new(d.get(0, 0), d.get(0, 1), d.get(0, 2))
    }
}

/// Learnable I×T latent codes, one row per region center.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceCodes {
    codes: Tensor,
}

impl SurfaceCodes {
    pub fn init(region_count: usize, latent_dim: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).unwrap();
        SurfaceCodes {
            codes: Tensor::from_fn(region_count, latent_dim, |_, _| normal.sample(&mut rng)),
        }
    }

    /// A code row from the same distribution that no query ever selects;
    /// used to blank out grid cells during part extraction.
    pub fn draw_unseen(latent_dim: usize, std: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x756e_7365_656e_u64);
        let normal = Normal::new(0.0, std).unwrap();
        (0..latent_dim).map(|_| normal.sample(&mut rng)).collect()
    }

    pub fn from_tensor(codes: Tensor) -> Self {
        SurfaceCodes { codes }
    }

    pub fn region_count(&self) -> usize {
        self.codes.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.codes
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.codes
    }

    pub fn bind(&self, g: &mut Graph) -> Tx {
        g.leaf(self.codes.clone())
    }
}

/// `w = sum_i a_i t_i` without a tape (reconstruction path). The training
/// path expresses the same contraction as a matmul of the affinity matrix
/// with the bound code tensor.
pub fn blend_codes(affinity: &[f64], codes: &SurfaceCodes) -> Vec<f64> {
    assert_eq!(affinity.len(), codes.region_count(), "affinity length != I");
    let t = codes.latent_dim();
    let mut w = vec![0.0; t];
    for (i, &a) in affinity.iter().enumerate() {
        let row = codes.tensor().row(i);
        for (j, wv) in w.iter_mut().enumerate() {
            *wv += a * row[j];
        }
    }
    w
}
