use std::collections::BTreeMap;
use std::path::Path;

use panogeo::align::DEFAULT_ANCHOR_FACTOR;
use panogeo::geometry::DEFAULT_SKY_THRESHOLD;
use panogeo::io::SidecarMeta;
use panogeo::losses::LossWeights;
use panogeo::metrics::{DEFAULT_GAMMA, DEFAULT_RANGE, DEFAULT_TAU};
use panogeo::{Error, Result};

use crate::report::ReportMode;

pub const DEFAULT_SIDE: usize = 512;
pub const DEFAULT_WIDTH: usize = 1024;

/// Settings shared by all subcommands. Built from defaults, then the
/// `--config` file, then command-line flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub side: usize,
    pub width: usize,
    pub anchor_factor: usize,
    pub tau: f64,
    pub gamma: f64,
    pub range: (f64, f64),
    pub sky_threshold: f64,
    pub weights: LossWeights,
    /// `None` means all available cores.
    pub threads: Option<usize>,
    pub report: ReportMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            side: DEFAULT_SIDE,
            width: DEFAULT_WIDTH,
            anchor_factor: DEFAULT_ANCHOR_FACTOR,
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            range: DEFAULT_RANGE,
            sky_threshold: DEFAULT_SKY_THRESHOLD,
            weights: LossWeights::default(),
            threads: None,
            report: ReportMode::Kv,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Domain(format!("config key {key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let meta = SidecarMeta::read(path)?;
        let mut cfg = Self::default();
        let mut weights = BTreeMap::new();
        for (k, v) in meta.entries() {
            match k.as_str() {
                "side" => cfg.side = parse(k, v)?,
                "width" => cfg.width = parse(k, v)?,
                "anchor_factor" | "F" => cfg.anchor_factor = parse(k, v)?,
                "tau" => cfg.tau = parse(k, v)?,
                "gamma" => cfg.gamma = parse(k, v)?,
                "range_lo" => cfg.range.0 = parse(k, v)?,
                "range_hi" => cfg.range.1 = parse(k, v)?,
                "sky_threshold" => cfg.sky_threshold = parse(k, v)?,
                "threads" => cfg.threads = Some(parse(k, v)?),
                "report" => {
                    cfg.report = ReportMode::from_name(v)
                        .ok_or_else(|| Error::Domain(format!("config key report: unknown mode {v:?}")))?
                }
                _ if LossWeights::KEYS.contains(&k.as_str()) => {
                    weights.insert(k.clone(), v.clone());
                }
                _ => return Err(Error::Domain(format!("unknown config key {k:?}"))),
            }
        }
        cfg.weights = LossWeights::from_entries(&weights)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        if self.side < 2 {
            return fail(format!("side must be >= 2, got {}", self.side));
        }
        if self.width < 2 || self.width % 2 != 0 {
            return fail(format!("width must be even and >= 2, got {}", self.width));
        }
        if self.anchor_factor == 0 {
            return fail("F must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.gamma > 0.0) {
            return fail(format!("tau and gamma must be > 0, got {} and {}", self.tau, self.gamma));
        }
        if !(self.range.0 <= self.range.1) {
            return fail(format!("range [{}, {}] is empty", self.range.0, self.range.1));
        }
        if !(0.0..=1.0).contains(&self.sky_threshold) {
            return fail(format!("sky threshold must lie in [0, 1], got {}", self.sky_threshold));
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        self.weights.validate()
    }
}
