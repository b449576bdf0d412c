//! Per-query affinity vectors: the weights that blend surface codes into
//! one latent code. Euclidean and intrinsic modes pass center distances
//! through a normalized exponential decay; semantic mode copies the
//! segment label of the nearest labeled point; Average and Nearest are
//! the ablation baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GeodesicTable, PointCloud, RegionCenters, SpatialIndex};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    Euclidean,
    Intrinsic,
    Semantic,
    Average,
    Nearest,
}

impl AffinityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AffinityMode::Euclidean => "euclidean",
            AffinityMode::Intrinsic => "intrinsic",
            AffinityMode::Semantic => "semantic",
            AffinityMode::Average => "average",
            AffinityMode::Nearest => "nearest",
        }
    }
}

impl std::str::FromStr for AffinityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(AffinityMode::Euclidean),
            "intrinsic" => Ok(AffinityMode::Intrinsic),
            "semantic" => Ok(AffinityMode::Semantic),
            "average" => Ok(AffinityMode::Average),
            "nearest" => Ok(AffinityMode::Nearest),
            other => Err(Error::InvalidArgument(format!(
                "unknown affinity mode '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityConfig {
    pub mode: AffinityMode,
    /// Decay of the exponential kernel; larger blends codes over a wider
    /// range. Applied to both euclidean and intrinsic distances.
    pub sigma: f64,
    /// Weight a query gives its own segment in semantic mode.
    pub semantic_own_weight: f64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            mode: AffinityMode::Euclidean,
            sigma: 1.0,
            semantic_own_weight: 0.8,
        }
    }
}

impl AffinityConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            AffinityMode::Euclidean | AffinityMode::Intrinsic => {
                if !(self.sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "sigma must be positive, got {}",
                        self.sigma
                    )));
                }
            }
            AffinityMode::Semantic => {
                if !(self.semantic_own_weight > 0.0 && self.semantic_own_weight < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "semantic own weight must lie in (0,1), got {}",
                        self.semantic_own_weight
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Non-negative weights over the I regions, summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityVector(Vec<f64>);

impl AffinityVector {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument("empty affinity vector".into()));
        }
        let mut sum = 0.0;
        for &v in &a {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NumericalError(format!(
                    "affinity entry {v} is negative or non-finite"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NumericalError(format!(
                "affinity sums to {sum}, expected 1"
            )));
        }
        Ok(AffinityVector(a))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Euclidean distance from `q` to every region center.
pub fn euclid_dist(q: Vec3, centers: &RegionCenters) -> Vec<f64> {
    centers.centers().iter().map(|&c| q.dist(c)).collect()
}

/// Projection-plus-geodesic distance: straight-line hop to the nearest
/// surface point, then the precomputed graph distance to each center.
pub fn intrinsic_dist(
    q: Vec3,
    cloud: &PointCloud,
    index: &SpatialIndex,
    table: &GeodesicTable,
) -> Vec<f64> {
    debug_assert_eq!(index.len(), cloud.len());
    debug_assert_eq!(table.point_count(), cloud.len());
    let (nn, proj) = index.nearest(q);
    (0..table.center_count())
        .map(|i| proj + table.dist(i, nn))
        .collect()
}

/// `a_i = exp(-d_i / sigma)`, normalized to sum 1. Shifting by the minimum
/// distance first keeps the largest exponent at zero, so any finite input
/// is safe.
pub fn gaussian_normalize(d: &[f64], sigma: f64) -> Result<AffinityVector> {
    if d.is_empty() {
        return Err(Error::InvalidArgument("empty distance vector".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NumericalError("non-finite distance".into()));
    }
    let mut a: Vec<f64> = d.iter().map(|&v| (-(v - min) / sigma).exp()).collect();
    let sum: f64 = a.iter().sum();
    for v in &mut a {
        *v /= sum;
    }
    AffinityVector::new(a)
}

/// One weight per segment: the query's own segment (that of its nearest
/// labeled point) gets `own_weight`, the rest share the remainder evenly.
pub fn semantic_affinity(
    q: Vec3,
    labeled_cloud: &PointCloud,
    index: &SpatialIndex,
    segment_count: usize,
    own_weight: f64,
) -> Result<AffinityVector> {
    if segment_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "semantic affinity needs at least 2 segments, got {segment_count}"
        )));
    }
    let labels = labeled_cloud.segment_labels().ok_or_else(|| {
        Error::InvalidArgument("semantic affinity requires a labeled cloud".into())
    })?;
    let s = segment_count as f64;
    if !(own_weight > 1.0 / s && own_weight < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "own weight {own_weight} outside (1/{segment_count}, 1)"
        )));
    }
    let (nn, _) = index.nearest(q);
    let own = labels[nn] as usize;
    if own >= segment_count {
        return Err(Error::InvalidArgument(format!(
            "label {own} out of range for {segment_count} segments"
        )));
    }
    let rest = (1.0 - own_weight) / (s - 1.0);
    let mut a = vec![rest; segment_count];
    a[own] = own_weight;
    AffinityVector::new(a)
}

/// The no-distance-encoding baselines: a uniform vector, or a one-hot at
/// the nearest center (lowest index on ties).
pub fn ablation_affinity(q: Vec3, centers: &RegionCenters, mode: AffinityMode) -> Result<AffinityVector> {
    let i_count = centers.len();
    if i_count == 0 {
        return Err(Error::InvalidArgument("no region centers".into()));
    }
    match mode {
        AffinityMode::Average => {
            AffinityVector::new(vec![1.0 / i_count as f64; i_count])
        }
        AffinityMode::Nearest => {
            let mut a = vec![0.0; i_count];
            a[centers.nearest_center(q)] = 1.0;
            AffinityVector::new(a)
        }
        other => Err(Error::InvalidArgument(format!(
            "{} is not an ablation mode",
            other.as_str()
        ))),
    }
}

/// Everything needed to evaluate the affinity of an arbitrary query under
/// one configuration. Training and reconstruction both go through here so
/// the two stages cannot drift apart.
pub struct AffinityContext<'a> {
    pub config: AffinityConfig,
    pub centers: &'a RegionCenters,
    pub cloud: &'a PointCloud,
    pub index: &'a SpatialIndex,
    pub table: Option<&'a GeodesicTable>,
}

impl<'a> AffinityContext<'a> {
    pub fn affinity(&self, q: Vec3) -> Result<AffinityVector> {
        match self.config.mode {
            AffinityMode::Euclidean => {
                gaussian_normalize(&euclid_dist(q, self.centers), self.config.sigma)
            }
            AffinityMode::Intrinsic => {
                let table = self.table.ok_or_else(|| {
                    Error::InvalidArgument(
                        "intrinsic affinity requires a geodesic table".into(),
                    )
                })?;
                gaussian_normalize(
                    &intrinsic_dist(q, self.cloud, self.index, table),
                    self.config.sigma,
                )
            }
            AffinityMode::Semantic => {
                let s = self.cloud.segment_count().ok_or_else(|| {
                    Error::InvalidArgument("semantic affinity requires labels".into())
                })?;
                if s != self.centers.len() {
                    return Err(Error::InvalidArgument(format!(
                        "semantic mode binds one code per segment: {} centers vs {} segments",
                        self.centers.len(),
                        s
                    )));
                }
                semantic_affinity(q, self.cloud, self.index, s, self.config.semantic_own_weight)
            }
            AffinityMode::Average | AffinityMode::Nearest => {
                ablation_affinity(q, self.centers, self.config.mode)
            }
        }
    }
}
