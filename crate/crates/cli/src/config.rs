//! Run configuration: JSON file plus flag overrides.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use poisson_malliavin::configuration::{MarkSet, TimeInterval, Window};
use poisson_malliavin::library::WindowSet;
use poisson_malliavin::measure::{Density, MarkSpace, ProductIntensity};
use poisson_malliavin::processes::{ExcitationKernel, HawkesConfig, HawkesModel};

pub const SEED_ENV: &str = "POISSON_MALLIAVIN_SEED";
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarksConfig {
    /// `[0, length]` with constant density `scale`.
    Uniform { length: f64, scale: f64 },
    /// `[0, length]` with density given by an expression in `x`.
    Density {
        length: f64,
        expr: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
    Discrete { points: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub marks: MarksConfig,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self { horizon: 1.0, marks: MarksConfig::Uniform { length: 1.0, scale: 5.0 } }
    }
}

impl IntensityConfig {
    pub fn build(&self) -> anyhow::Result<ProductIntensity> {
        let marks = match &self.marks {
            MarksConfig::Uniform { length, scale } => MarkSpace::uniform(*length, *scale)?,
            MarksConfig::Density { length, expr, mass } => {
                MarkSpace::with_density(*length, Density::parse_expr(expr)?, *mass)?
            }
            MarksConfig::Discrete { points, weights } => MarkSpace::discrete(points.clone(), weights.clone())?,
        };
        Ok(ProductIntensity::new(self.horizon, marks)?)
    }

    /// Largest mark value.
    pub fn mark_extent(&self) -> f64 {
        match &self.marks {
            MarksConfig::Uniform { length, .. } | MarksConfig::Density { length, .. } => *length,
            MarksConfig::Discrete { points, .. } => points.iter().copied().fold(0.0, f64::max),
        }
    }
}

fn default_sets() -> WindowSet {
    BTreeMap::from([
        ("A".to_owned(), Window::new(TimeInterval::half_open(0.0, 0.6), MarkSet::Interval { lo: 0.0, hi: 0.5 })),
        ("B".to_owned(), Window::new(TimeInterval::closed(0.3, 1.0), MarkSet::Interval { lo: 0.25, hi: 1.0 })),
    ])
}

fn default_hawkes() -> BTreeMap<String, HawkesConfig> {
    BTreeMap::from([(
        "default".to_owned(),
        HawkesConfig {
            mu: 1.0,
            kernel: ExcitationKernel::Exp { alpha: 0.5, beta: 1.0 },
            horizon: 10.0,
            theta_cap: Some(20.0),
        },
    )])
}

fn default_z_max() -> f64 {
    poisson_malliavin::montecarlo::DEFAULT_Z_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub intensity: IntensityConfig,
    /// Named windows. `X` always names the whole space.
    #[serde(default = "default_sets")]
    pub sets: WindowSet,
    #[serde(default = "default_hawkes")]
    pub hawkes: BTreeMap<String, HawkesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            intensity: IntensityConfig::default(),
            sets: default_sets(),
            hawkes: default_hawkes(),
            seed: None,
            samples: None,
            tolerance: None,
            z_max: default_z_max(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fills `X`, resolves the seed fallback chain and checks ranges.
    pub fn finish(mut self, seed_flag: Option<u64>) -> anyhow::Result<Self> {
        self.sets.entry("X".to_owned()).or_insert_with(|| Window::full(self.intensity.horizon));
        self.seed = Some(match (seed_flag, self.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not a u64"))?,
                Err(_) => DEFAULT_SEED,
            },
        });
        if !(self.z_max > 0.0) {
            bail!("z_max must be positive");
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                bail!("tolerance must be positive");
            }
        }
        if self.samples == Some(0) {
            bail!("samples must be positive");
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn hawkes_model(&self, name: &str) -> anyhow::Result<HawkesModel> {
        let Some(c) = self.hawkes.get(name) else {
            bail!("unknown hawkes model `{name}`");
        };
        Ok(HawkesModel::from_config(c)?)
    }
}
