//! Key-value run configuration. A TOML file supplies defaults and command
//! flags override it; the merged values are echoed into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::TrainConfig;
use crate::geoclass::{DEFAULT_CELL_SIZE, DEFAULT_MIN_IMAGES};
use crate::pipeline::GraphSpec;
use crate::scenegraph::{GraphKind, RGB_ROLE};
use crate::teacher::ScoreKind;

pub const OUT_DIR_ENV: &str = "SELFLOC_OUT_DIR";
pub const THREADS_ENV: &str = "SELFLOC_THREADS";

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub cell_size: Option<f64>,
    pub min_images: Option<usize>,
    /// Teacher database roles.
    pub roles: Option<Vec<String>>,
    /// `"svsl"` or `"mvil"`.
    pub graph: Option<String>,
    pub variant: Option<ScoreKind>,
    pub edges: Option<bool>,
    pub attributes: Option<Vec<String>>,
    pub interval_m: Option<f64>,
    pub frames_per_seq: Option<usize>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub baseline_role: Option<String>,
    pub timing: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Flags shared by commands that build graphs and train.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ModelFlags {
    /// Graph family: svsl or mvil.
    #[arg(long, value_parser = ["svsl", "mvil"])]
    pub graph: Option<String>,
    /// Node feature: raw-descriptor, distance, rank or reciprocal-rank.
    #[arg(long)]
    pub variant: Option<ScoreKind>,
    /// Drop every edge (naive scene graph).
    #[arg(long)]
    pub no_edges: bool,
    /// Comma-separated MVIL attribute roles, rgb first.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Option<Vec<String>>,
    #[arg(long)]
    pub interval_m: Option<f64>,
    #[arg(long)]
    pub frames_per_seq: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelFlags {
    pub fn graph_spec(&self, cfg: &ConfigFile) -> Result<GraphSpec> {
        let base = GraphSpec::default();
        let multi_view = match self.graph.as_deref().or(cfg.graph.as_deref()) {
            None | Some("mvil") => true,
            Some("svsl") => false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "graph must be \"svsl\" or \"mvil\", got {other:?}"
                )))
            }
        };
        let edges = !self.no_edges && cfg.edges.unwrap_or(true);
        let spec = GraphSpec {
            kind: GraphKind::from_parts(multi_view, edges),
            variant: self.variant.or(cfg.variant).unwrap_or(base.variant),
            attributes: self
                .attributes
                .clone()
                .or_else(|| cfg.attributes.clone())
                .unwrap_or(base.attributes),
            interval_m: self.interval_m.or(cfg.interval_m).unwrap_or(base.interval_m),
            frames_per_seq: self
                .frames_per_seq
                .or(cfg.frames_per_seq)
                .unwrap_or(base.frames_per_seq),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self, cfg: &ConfigFile) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let tc = TrainConfig {
            layers: self.layers.or(cfg.layers).unwrap_or(d.layers),
            hidden: self.hidden.or(cfg.hidden).unwrap_or(d.hidden),
            epochs: self.epochs.or(cfg.epochs).unwrap_or(d.epochs),
            batch_size: self.batch_size.or(cfg.batch_size).unwrap_or(d.batch_size),
            learning_rate: self
                .learning_rate
                .or(cfg.learning_rate)
                .unwrap_or(d.learning_rate),
            beta1: cfg.beta1.unwrap_or(d.beta1),
            beta2: cfg.beta2.unwrap_or(d.beta2),
            epsilon: cfg.epsilon.unwrap_or(d.epsilon),
            seed: self.seed.or(cfg.seed).unwrap_or(d.seed),
        };
        tc.validate()?;
        Ok(tc)
    }
}

pub fn cell_size(flag: Option<f64>, cfg: &ConfigFile) -> f64 {
    flag.or(cfg.cell_size).unwrap_or(DEFAULT_CELL_SIZE)
}

pub fn min_images(flag: Option<usize>, cfg: &ConfigFile) -> usize {
    flag.or(cfg.min_images).unwrap_or(DEFAULT_MIN_IMAGES)
}

pub fn baseline_role(flag: Option<String>, cfg: &ConfigFile) -> String {
    flag.or_else(|| cfg.baseline_role.clone())
        .unwrap_or_else(|| RGB_ROLE.to_string())
}

/// Relative output paths land under `SELFLOC_OUT_DIR` when it is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Sizes the global thread pool from `SELFLOC_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A pool that already exists (repeated in-process runs) is kept.
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    Ok(())
}
