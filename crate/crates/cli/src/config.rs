//! Option resolution: built-in defaults, then the profile, then the
//! config file, then explicit flags. Every flag has a config-file key of
//! the same name; unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use lpi_core::affinity::AffinityMode;
use lpi_core::error::{Error, Result};
use lpi_core::extract::MaskMode;
use lpi_core::net::NetConfig;
use lpi_core::train::LossMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Full,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::InvalidArgument(format!("unknown profile '{other}'"))),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Clone, Debug)]
pub struct Settings {
    pub regions: usize,
    pub affinity: AffinityMode,
    pub sigma: f64,
    pub own_weight: f64,
    pub latent_dim: usize,
    pub loss: LossMode,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub per_point: usize,
    pub noise_knn: usize,
    /// kNN graph degree for geodesic tables.
    pub knn: usize,
    pub seed: u64,
    pub resolution: usize,
    pub mu: f64,
    pub samples: usize,
    pub threads: usize,
    pub mask_mode: MaskMode,
    pub gt: Option<String>,
}

impl Settings {
    /// Built-in defaults (the "full" profile).
    pub fn full() -> Settings {
        Settings {
            regions: 100,
            affinity: AffinityMode::Euclidean,
            sigma: 1.0,
            own_weight: 0.8,
            latent_dim: 100,
            loss: LossMode::Pulling,
            steps: 20_000,
            batch: 512,
            lr: 1e-4,
            per_point: 20,
            noise_knn: 50,
            knn: 10,
            seed: 0,
            resolution: 128,
            mu: 0.002,
            samples: 10_000,
            threads: 1,
            mask_mode: MaskMode::UnseenCode,
            gt: None,
        }
    }

    /// Desk-scale profile: small latent space and region count, a short
    /// schedule, and the learning rate / query-noise settings that make
    /// the short schedule converge.
    pub fn desk() -> Settings {
        Settings {
            regions: 16,
            latent_dim: 32,
            steps: 2000,
            lr: 1e-3,
            per_point: 30,
            noise_knn: 80,
            batch: 1024,
            resolution: 64,
            ..Settings::full()
        }
    }

    pub fn for_profile(profile: Profile) -> Settings {
        match profile {
            Profile::Full => Settings::full(),
            Profile::Desk => Settings::desk(),
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            latent_dim: self.latent_dim,
            ..NetConfig::default()
        }
    }
}

/// The config file: every key optional, mirroring the flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    pub regions: Option<usize>,
    pub affinity: Option<String>,
    pub sigma: Option<f64>,
    pub own_weight: Option<f64>,
    pub latent_dim: Option<usize>,
    pub loss: Option<String>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub per_point: Option<usize>,
    pub noise_knn: Option<usize>,
    pub knn: Option<usize>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub mu: Option<f64>,
    pub samples: Option<usize>,
    pub threads: Option<usize>,
    pub mask_mode: Option<String>,
    pub gt: Option<String>,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Flag values as parsed; `None` means "not given on the command line".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub regions: Option<usize>,
    pub affinity: Option<AffinityMode>,
    pub sigma: Option<f64>,
    pub own_weight: Option<f64>,
    pub latent_dim: Option<usize>,
    pub loss: Option<LossMode>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub per_point: Option<usize>,
    pub noise_knn: Option<usize>,
    pub knn: Option<usize>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub mu: Option<f64>,
    pub samples: Option<usize>,
    pub threads: Option<usize>,
    pub mask_mode: Option<MaskMode>,
    pub gt: Option<String>,
}

/// defaults < profile < file < flags. The profile may come from either
/// the file or a flag (the flag wins).
pub fn resolve(file: Option<&FileConfig>, flags: &Overrides) -> Result<Settings> {
    let file_profile = match file.and_then(|f| f.profile.as_deref()) {
        Some(p) => Some(p.parse::<Profile>()?),
        None => None,
    };
    let profile = flags.profile.or(file_profile).unwrap_or(Profile::Full);
    let mut s = Settings::for_profile(profile);

    if let Some(f) = file {
        if let Some(v) = f.regions {
            s.regions = v;
        }
        if let Some(v) = &f.affinity {
            s.affinity = v.parse()?;
        }
        if let Some(v) = f.sigma {
            s.sigma = v;
        }
        if let Some(v) = f.own_weight {
            s.own_weight = v;
        }
        if let Some(v) = f.latent_dim {
            s.latent_dim = v;
        }
        if let Some(v) = &f.loss {
            s.loss = v.parse()?;
        }
        if let Some(v) = f.steps {
            s.steps = v;
        }
        if let Some(v) = f.batch {
            s.batch = v;
        }
        if let Some(v) = f.lr {
            s.lr = v;
        }
        if let Some(v) = f.per_point {
            s.per_point = v;
        }
        if let Some(v) = f.noise_knn {
            s.noise_knn = v;
        }
        if let Some(v) = f.knn {
            s.knn = v;
        }
        if let Some(v) = f.seed {
            s.seed = v;
        }
        if let Some(v) = f.resolution {
            s.resolution = v;
        }
        if let Some(v) = f.mu {
            s.mu = v;
        }
        if let Some(v) = f.samples {
            s.samples = v;
        }
        if let Some(v) = f.threads {
            s.threads = v;
        }
        if let Some(v) = &f.mask_mode {
            s.mask_mode = v.parse()?;
        }
        if let Some(v) = &f.gt {
            s.gt = Some(v.clone());
        }
    }

    if let Some(v) = flags.regions {
        s.regions = v;
    }
    if let Some(v) = flags.affinity {
        s.affinity = v;
    }
    if let Some(v) = flags.sigma {
        s.sigma = v;
    }
    if let Some(v) = flags.own_weight {
        s.own_weight = v;
    }
    if let Some(v) = flags.latent_dim {
        s.latent_dim = v;
    }
    if let Some(v) = flags.loss {
        s.loss = v;
    }
    if let Some(v) = flags.steps {
        s.steps = v;
    }
    if let Some(v) = flags.batch {
        s.batch = v;
    }
    if let Some(v) = flags.lr {
        s.lr = v;
    }
    if let Some(v) = flags.per_point {
        s.per_point = v;
    }
    if let Some(v) = flags.noise_knn {
        s.noise_knn = v;
    }
    if let Some(v) = flags.knn {
        s.knn = v;
    }
    if let Some(v) = flags.seed {
        s.seed = v;
    }
    if let Some(v) = flags.resolution {
        s.resolution = v;
    }
    if let Some(v) = flags.mu {
        s.mu = v;
    }
    if let Some(v) = flags.samples {
        s.samples = v;
    }
    if let Some(v) = flags.threads {
        s.threads = v;
    } else if flags.threads.is_none() && file.map_or(true, |f| f.threads.is_none()) {
        if let Ok(env) = std::env::var("LPI_THREADS") {
            s.threads = env.parse().map_err(|_| {
                Error::InvalidArgument(format!("LPI_THREADS='{env}' is not a thread count"))
            })?;
        }
    }
    if let Some(v) = flags.mask_mode {
        s.mask_mode = v;
    }
    if let Some(v) = &flags.gt {
        s.gt = Some(v.clone());
    }
    Ok(s)
}
