//! Trained-model state and its binary container.
//!
//! Layout (all little-endian): magic `LPIC`, version u32, then the
//! network config and layer shapes with parameters, surface codes, the
//! reserved unseen code, region centers, affinity config, normalization,
//! step count, the normalized cloud (with optional labels) and, when the
//! model was trained with intrinsic affinity, the geodesic table. The
//! cloud and table ride along because reconstruction-time affinities
//! need them; round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::affinity::{AffinityConfig, AffinityMode};
use crate::error::{Error, Result};
use crate::geom::{GeodesicTable, PointCloud, RegionCenters};
use crate::net::{ImplicitNet, NetConfig, SurfaceCodes};
use crate::tensor::Tensor;
use crate::vec3::Vec3;

const MAGIC: &[u8; 4] = b"LPIC";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: ImplicitNet,
    pub codes: SurfaceCodes,
    /// Reserved latent row used to blank out masked grid cells during
    /// part extraction; drawn at init, never optimized.
    pub unseen_code: Vec<f64>,
    pub centers: RegionCenters,
    pub affinity: AffinityConfig,
    /// Original coordinates = normalized * scale + offset.
    pub scale: f64,
    pub offset: Vec3,
    pub steps: u64,
    /// The normalized input cloud (labels included when present).
    pub cloud: PointCloud,
    pub table: Option<GeodesicTable>,
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.out.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inp.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn mode_tag(mode: AffinityMode) -> u8 {
    match mode {
        AffinityMode::Euclidean => 0,
        AffinityMode::Intrinsic => 1,
        AffinityMode::Semantic => 2,
        AffinityMode::Average => 3,
        AffinityMode::Nearest => 4,
    }
}

fn tag_mode(tag: u8) -> Result<AffinityMode> {
    Ok(match tag {
        0 => AffinityMode::Euclidean,
        1 => AffinityMode::Intrinsic,
        2 => AffinityMode::Semantic,
        3 => AffinityMode::Average,
        4 => AffinityMode::Nearest,
        other => return Err(Error::Parse(format!("unknown affinity mode tag {other}"))),
    })
}

impl Checkpoint {
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = Writer { out };
        w.out.write_all(MAGIC)?;
        w.u32(VERSION)?;

        let cfg = self.net.config();
        w.u32(cfg.latent_dim as u32)?;
        w.u32(cfg.hidden_width as u32)?;
        w.u32(cfg.layers as u32)?;
        w.u32(cfg.skip_at.len() as u32)?;
        for &s in &cfg.skip_at {
            w.u32(s as u32)?;
        }
        w.f64(cfg.beta)?;
        w.f64(cfg.init_radius)?;
        w.f64(cfg.code_std)?;

        for l in 0..cfg.layers {
            let wt = &self.net.weights()[l];
            w.u32(wt.rows() as u32)?;
            w.u32(wt.cols() as u32)?;
            w.f64s(wt.data())?;
            w.f64s(self.net.biases()[l].data())?;
        }

        w.u32(self.codes.region_count() as u32)?;
        w.u32(self.codes.latent_dim() as u32)?;
        w.f64s(self.codes.tensor().data())?;
        w.f64s(&self.unseen_code)?;

        w.u32(self.centers.len() as u32)?;
        for &c in self.centers.centers() {
            w.f64s(&c.to_array())?;
        }
        for &i in self.centers.source_indices() {
            w.u64(i as u64)?;
        }

        w.u8(mode_tag(self.affinity.mode))?;
        w.f64(self.affinity.sigma)?;
        w.f64(self.affinity.semantic_own_weight)?;

        w.f64(self.scale)?;
        w.f64s(&self.offset.to_array())?;
        w.u64(self.steps)?;

        w.u32(self.cloud.len() as u32)?;
        for &p in self.cloud.points() {
            w.f64s(&p.to_array())?;
        }
        match self.cloud.segment_labels() {
            Some(labels) => {
                w.u8(1)?;
                for &l in labels {
                    w.u32(l)?;
                }
            }
            None => w.u8(0)?,
        }

        match &self.table {
            Some(t) => {
                w.u8(1)?;
                w.u32(t.knn_k())?;
                w.u32(t.center_count() as u32)?;
                w.u32(t.point_count() as u32)?;
                w.f64s(t.raw())?;
            }
            None => w.u8(0)?,
        }
        Ok(())
    }

    pub fn read_from(inp: impl Read) -> Result<Checkpoint> {
        let mut r = Reader { inp };
        let mut magic = [0u8; 4];
        r.inp.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse(format!(
                "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {version}"
            )));
        }

        let latent_dim = r.u32()? as usize;
        let hidden_width = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let skip_count = r.u32()? as usize;
        if layers == 0 || layers > 1024 || skip_count > layers {
            return Err(Error::Parse("implausible layer counts".into()));
        }
        let mut skip_at = Vec::with_capacity(skip_count);
        for _ in 0..skip_count {
            skip_at.push(r.u32()? as usize);
        }
        let beta = r.f64()?;
        let init_radius = r.f64()?;
        let code_std = r.f64()?;
        let cfg = NetConfig {
            latent_dim,
            hidden_width,
            layers,
            skip_at,
            beta,
            init_radius,
            code_std,
        };

        let dims = cfg.layer_dims();
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (l, (din, dout)) in dims.into_iter().enumerate() {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if (rows, cols) != (din, dout) {
                return Err(Error::Parse(format!(
                    "layer {l} shape {rows}x{cols} does not match config {din}x{dout}"
                )));
            }
            weights.push(Tensor::from_vec(rows, cols, r.f64s(rows * cols)?));
            biases.push(Tensor::from_vec(1, cols, r.f64s(cols)?));
        }
        let net = ImplicitNet::from_params(cfg, weights, biases);

        let i_count = r.u32()? as usize;
        let t_dim = r.u32()? as usize;
        if t_dim != latent_dim {
            return Err(Error::Parse(format!(
                "code width {t_dim} does not match latent dim {latent_dim}"
            )));
        }
        let codes = SurfaceCodes::from_tensor(Tensor::from_vec(
            i_count,
            t_dim,
            r.f64s(i_count * t_dim)?,
        ));
        let unseen_code = r.f64s(t_dim)?;

        let center_count = r.u32()? as usize;
        if center_count != i_count {
            return Err(Error::Parse(format!(
                "{center_count} centers vs {i_count} codes"
            )));
        }
        let mut centers = Vec::with_capacity(center_count);
        for _ in 0..center_count {
            let v = r.f64s(3)?;
            centers.push(Vec3::new(v[0], v[1], v[2]));
        }
        let mut sources = Vec::with_capacity(center_count);
        for _ in 0..center_count {
            sources.push(r.u64()? as usize);
        }
        let centers = RegionCenters::new(centers, sources);

        let affinity = AffinityConfig {
            mode: tag_mode(r.u8()?)?,
            sigma: r.f64()?,
            semantic_own_weight: r.f64()?,
        };

        let scale = r.f64()?;
        let off = r.f64s(3)?;
        let offset = Vec3::new(off[0], off[1], off[2]);
        let steps = r.u64()?;

        let n = r.u32()? as usize;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.f64s(3)?;
            points.push(Vec3::new(v[0], v[1], v[2]));
        }
        let labels = if r.u8()? == 1 {
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                l.push(r.u32()?);
            }
            Some(l)
        } else {
            None
        };
        let cloud = PointCloud::new(points, labels)?;

        let table = if r.u8()? == 1 {
            let knn_k = r.u32()?;
            let ti = r.u32()? as usize;
            let tn = r.u32()? as usize;
            if ti != i_count || tn != n {
                return Err(Error::Parse(format!(
                    "geodesic table {ti}x{tn} does not match {i_count} centers x {n} points"
                )));
            }
            Some(GeodesicTable::new(ti, tn, knn_k, r.f64s(ti * tn)?))
        } else {
            None
        };

        Ok(Checkpoint {
            net,
            codes,
            unseen_code,
            centers,
            affinity,
            scale,
            offset,
            steps,
            cloud,
            table,
        })
    }

    /// Atomic save: write to a sibling temp file, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp)?;
            let mut buf = std::io::BufWriter::new(file);
            self.write_to(&mut buf)?;
            buf.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Map a normalized-space point back to original coordinates.
    pub fn denormalize(&self, p: Vec3) -> Vec3 {
        p * self.scale + self.offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::farthest_point_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint(with_table: bool, with_labels: bool) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let labels = with_labels.then(|| (0..30).map(|i| (i % 3) as u32).collect());
        let cloud = PointCloud::new(pts, labels).unwrap();
        let centers = farthest_point_sample(&cloud, 3, 0).unwrap();
        let table = with_table
            .then(|| crate::geom::build_geodesic_table(&cloud, &centers, 6).unwrap());
        let cfg = NetConfig {
            latent_dim: 5,
            hidden_width: 8,
            layers: 3,
            skip_at: vec![1],
            beta: 10.0,
            init_radius: 0.3,
            code_std: 1e-2,
        };
        Checkpoint {
            net: ImplicitNet::init(cfg, 1),
            codes: SurfaceCodes::init(3, 5, 1e-2, 2),
            unseen_code: SurfaceCodes::draw_unseen(5, 1e-2, 1),
            centers,
            affinity: AffinityConfig { mode: AffinityMode::Intrinsic, sigma: 0.7, semantic_own_weight: 0.8 },
            scale: 2.5,
            offset: Vec3::new(0.1, -0.2, 0.3),
            steps: 1234,
            cloud,
            table,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (with_table, with_labels) in [(false, false), (true, false), (false, true), (true, true)] {
            let ckpt = sample_checkpoint(with_table, with_labels);
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            let mut buf2 = Vec::new();
            back.write_to(&mut buf2).unwrap();
            assert_eq!(buf, buf2);
            assert_eq!(back.steps, ckpt.steps);
            assert_eq!(back.net.weights()[0].data(), ckpt.net.weights()[0].data());
            assert_eq!(back.table.is_some(), with_table);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let err = Checkpoint::read_from(&b"NOPE....."[..]);
        assert!(matches!(err, Err(Error::Parse(_))));
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lpic");
        let ckpt = sample_checkpoint(true, true);
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.codes.tensor().data(), ckpt.codes.tensor().data());
    }
}
