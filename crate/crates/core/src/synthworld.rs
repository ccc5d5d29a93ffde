//! Synthetic multi-season traversals.
//!
//! Every (role, class) pair gets a prototype descriptor. A frame of class
//! `c` in season `s` observes, per role, the prototype plus that season's
//! role offset plus isotropic Gaussian noise. The route visits classes in
//! order; each visit spans `frames_per_visit` frames, and class `c` sits in
//! its own 0.001-degree grid cell.
//!
//! Random streams: prototypes use stream 0 of the world seed, season `s`
//! uses stream `s + 1`, so seasons can be generated independently.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoclass::DEFAULT_CELL_SIZE;
use crate::numkit::Rng;
use crate::scenegraph::{FrameRecord, ATTRIBUTE_ROLES, SVSL_REGIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub dim: usize,
    /// Multiplies the season noise for this role.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonSpec {
    pub name: String,
    /// Norm of the season's additive offset, per role.
    pub shift: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub num_classes: usize,
    pub roles: Vec<RoleSpec>,
    pub seasons: Vec<SeasonSpec>,
    /// Class visit order; defaults to `0..num_classes`.
    #[serde(default)]
    pub route: Option<Vec<usize>>,
    pub frames_per_visit: usize,
    /// Mean travel per frame, meters.
    pub step_m: f64,
    /// Each step is `step_m * (1 + step_jitter * u)`, `u` uniform in [-1, 1).
    #[serde(default)]
    pub step_jitter: f64,
    /// Standard deviation of prototype coordinates.
    #[serde(default = "default_prototype_scale")]
    pub prototype_scale: f64,
    #[serde(default = "default_origin_lat")]
    pub origin_lat: f64,
    #[serde(default = "default_origin_lon")]
    pub origin_lon: f64,
    pub seed: u64,
}

fn default_prototype_scale() -> f64 {
    1.0
}

fn default_origin_lat() -> f64 {
    51.7505
}

fn default_origin_lon() -> f64 {
    -1.2575
}

/// Frame ids are `season_index * FRAME_ID_STRIDE + position`.
pub const FRAME_ID_STRIDE: u64 = 1_000_000;

/// Calibrated desk-scale instance: 25 classes, two seasons, 16-dimensional
/// descriptors for the four SVSL regions and the rgb/canny/depth/ss views.
/// The full-image region is less noisy than the crops.
pub fn reference_world(seed: u64) -> WorldSpec {
    let roles = SVSL_REGIONS
        .iter()
        .map(|(r, _)| *r)
        .chain(ATTRIBUTE_ROLES)
        .map(|name| RoleSpec {
            name: name.to_string(),
            dim: 16,
            noise_scale: match name {
                "region:FULL" => REFERENCE_FULL_NOISE_SCALE,
                n if n.starts_with("region:") => REFERENCE_CROP_NOISE_SCALE,
                _ => 1.0,
            },
        })
        .collect();
    WorldSpec {
        num_classes: 25,
        roles,
        seasons: vec![
            SeasonSpec {
                name: "summer".into(),
                shift: 0.0,
                noise: REFERENCE_NOISE,
            },
            SeasonSpec {
                name: "winter".into(),
                shift: REFERENCE_SHIFT,
                noise: REFERENCE_NOISE,
            },
        ],
        route: None,
        frames_per_visit: 24,
        step_m: 1.0,
        step_jitter: 0.2,
        prototype_scale: REFERENCE_PROTOTYPE_SCALE,
        origin_lat: default_origin_lat(),
        origin_lon: default_origin_lon(),
        seed,
    }
}

/// Pinned after calibrating teacher accuracy on the reference instance.
pub const REFERENCE_SHIFT: f64 = 2.0;
pub const REFERENCE_PROTOTYPE_SCALE: f64 = 0.5;
pub const REFERENCE_NOISE: f64 = 0.45;
pub const REFERENCE_FULL_NOISE_SCALE: f64 = 0.4;
pub const REFERENCE_CROP_NOISE_SCALE: f64 = 1.4;

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.num_classes < 2 {
            return bad(format!("world needs at least 2 classes, got {}", self.num_classes));
        }
        if self.roles.is_empty() {
            return bad("world needs at least one role".into());
        }
        for r in &self.roles {
            if r.dim == 0 {
                return bad(format!("role {:?} has zero dimension", r.name));
            }
            if !(r.noise_scale.is_finite() && r.noise_scale >= 0.0) {
                return bad(format!("role {:?} needs a finite, non-negative noise_scale", r.name));
            }
        }
        let mut names: Vec<&str> = self.roles.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate role names".into());
        }
        if self.seasons.is_empty() {
            return bad("world needs at least one season".into());
        }
        for s in &self.seasons {
            if !(s.shift.is_finite() && s.shift >= 0.0 && s.noise.is_finite() && s.noise >= 0.0) {
                return bad(format!(
                    "season {:?} needs finite, non-negative shift and noise",
                    s.name
                ));
            }
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return bad(format!("season name {:?} is not a valid file stem", s.name));
            }
        }
        if self.frames_per_visit == 0 {
            return bad("frames_per_visit must be positive".into());
        }
        if !(self.step_m.is_finite() && self.step_m > 0.0) {
            return bad(format!("step_m must be positive, got {}", self.step_m));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad(format!("step_jitter must be in [0, 1), got {}", self.step_jitter));
        }
        if !(self.prototype_scale.is_finite() && self.prototype_scale > 0.0) {
            return bad("prototype_scale must be positive".into());
        }
        if let Some(route) = &self.route {
            if route.is_empty() {
                return bad("route is empty".into());
            }
            if let Some(c) = route.iter().find(|&&c| c >= self.num_classes) {
                return bad(format!("route visits class {c} outside 0..{}", self.num_classes));
            }
        }
        let max_lat_index = (self.origin_lat / DEFAULT_CELL_SIZE).floor() + self.num_classes as f64;
        if !(self.origin_lat.is_finite() && self.origin_lon.is_finite())
            || max_lat_index * DEFAULT_CELL_SIZE > 90.0
            || self.origin_lat < -90.0
            || self.origin_lon.abs() > 180.0
        {
            return bad("origin places classes outside valid coordinates".into());
        }
        Ok(())
    }

    pub fn route(&self) -> Vec<usize> {
        self.route
            .clone()
            .unwrap_or_else(|| (0..self.num_classes).collect())
    }

    pub fn season_index(&self, name: &str) -> Option<usize> {
        self.seasons.iter().position(|s| s.name == name)
    }
}

fn random_vector(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.normal()).collect()
}

fn random_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = random_vector(rng, dim, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// One season's traversal.
pub fn generate_traversal(spec: &WorldSpec, season_index: usize) -> Result<Vec<FrameRecord>> {
    spec.validate()?;
    let season = spec.seasons.get(season_index).ok_or_else(|| {
        Error::Argument(format!(
            "season index {season_index} out of range for {} seasons",
            spec.seasons.len()
        ))
    })?;

    // prototypes[role][class]
    let mut proto_rng = Rng::with_stream(spec.seed, 0);
    let prototypes: Vec<Vec<Vec<f64>>> = spec
        .roles
        .iter()
        .map(|r| {
            (0..spec.num_classes)
                .map(|_| random_vector(&mut proto_rng, r.dim, spec.prototype_scale))
                .collect()
        })
        .collect();

    let mut rng = Rng::with_stream(spec.seed, season_index as u64 + 1);
    let offsets: Vec<Vec<f64>> = spec
        .roles
        .iter()
        .map(|r| {
            random_direction(&mut rng, r.dim)
                .into_iter()
                .map(|x| x * season.shift)
                .collect()
        })
        .collect();

    let base_lat_index = (spec.origin_lat / DEFAULT_CELL_SIZE).floor();
    let base_lon_index = (spec.origin_lon / DEFAULT_CELL_SIZE).floor();
    let mut frames = Vec::new();
    let mut odom = 0.0;
    for &class in &spec.route() {
        for _ in 0..spec.frames_per_visit {
            let position = frames.len() as u64;
            if !frames.is_empty() {
                odom += spec.step_m * (1.0 + spec.step_jitter * rng.uniform_range(-1.0, 1.0));
            }
            // Stay well inside the cell so floor division is unambiguous.
            let lat = (base_lat_index + class as f64 + rng.uniform_range(0.2, 0.8)) * DEFAULT_CELL_SIZE;
            let lon = (base_lon_index + rng.uniform_range(0.2, 0.8)) * DEFAULT_CELL_SIZE;
            let mut descriptors = BTreeMap::new();
            for (ri, role) in spec.roles.iter().enumerate() {
                let sigma = season.noise * role.noise_scale;
                let d: Vec<f64> = prototypes[ri][class]
                    .iter()
                    .zip(&offsets[ri])
                    .map(|(p, o)| p + o + sigma * rng.normal())
                    .collect();
                descriptors.insert(role.name.clone(), d);
            }
            frames.push(FrameRecord {
                frame_id: season_index as u64 * FRAME_ID_STRIDE + position,
                lat,
                lon,
                odom_m: odom,
                class_label: Some(class),
                descriptors,
            });
        }
    }
    Ok(frames)
}
