//! Place classes from a regular latitude/longitude grid.
//!
//! A class is one grid cell. A cell is admitted when it holds at least
//! `min_images` training images and appears in the test season as well.
//! Cells seen only in the test season are "unseen": their queries stay in
//! the evaluation and always count as errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CELL_SIZE: f64 = 0.001;
pub const DEFAULT_MIN_IMAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !latitude.is_finite() || !longitude.is_finite() {
            return Err(Error::Argument(format!(
                "non-finite coordinates ({latitude}, {longitude})"
            )));
        }
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::Argument(format!(
                "coordinates out of range ({latitude}, {longitude})"
            )));
        }
        Ok(GeoPoint {
            latitude,
            longitude,
        })
    }
}

/// Grid cell indices. Ordering is by latitude index, then longitude index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub lat_index: i64,
    pub lon_index: i64,
}

/// Floor division of both coordinates by `cell_size`. Points on a cell edge
/// land in the higher-index cell.
pub fn cell_of(p: GeoPoint, cell_size: f64) -> Result<CellId> {
    if !p.latitude.is_finite() || !p.longitude.is_finite() {
        return Err(Error::Argument(format!(
            "non-finite coordinates ({}, {})",
            p.latitude, p.longitude
        )));
    }
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::Argument(format!("cell size must be positive, got {cell_size}")));
    }
    Ok(CellId {
        lat_index: (p.latitude / cell_size).floor() as i64,
        lon_index: (p.longitude / cell_size).floor() as i64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    TooFewImages,
    TrainOnly,
}

/// How a single image location maps onto the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceLabel {
    Class(usize),
    /// Test-only cell: kept for evaluation, never predictable.
    Unseen,
    /// Dropped from both training and evaluation.
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub lat_index: i64,
    pub lon_index: i64,
    pub label: usize,
    pub train_count: usize,
    pub test_count: usize,
}

impl ClassEntry {
    pub fn cell(&self) -> CellId {
        CellId {
            lat_index: self.lat_index,
            lon_index: self.lon_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedEntry {
    pub lat_index: i64,
    pub lon_index: i64,
    pub reason: ExclusionReason,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnseenEntry {
    pub lat_index: i64,
    pub lon_index: i64,
    pub test_count: usize,
}

pub const PARTITION_FORMAT_VERSION: u32 = 1;

/// Serialized layout of a partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionDoc {
    format_version: u32,
    cell_size: f64,
    min_images: usize,
    min_images_applies_to: String,
    classes: Vec<ClassEntry>,
    excluded: Vec<ExcludedEntry>,
    unseen: Vec<UnseenEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    run_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionDoc", into = "PartitionDoc")]
pub struct PlacePartition {
    cell_size: f64,
    min_images: usize,
    classes: Vec<ClassEntry>,
    excluded: Vec<ExcludedEntry>,
    unseen: Vec<UnseenEntry>,
    label_of_cell: BTreeMap<CellId, usize>,
    run_config: serde_json::Value,
}

impl PlacePartition {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn min_images(&self) -> usize {
        self.min_images
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Admitted classes in label order.
    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn excluded(&self) -> &[ExcludedEntry] {
        &self.excluded
    }

    pub fn unseen(&self) -> &[UnseenEntry] {
        &self.unseen
    }

    /// Configuration that produced this partition, echoed on save.
    pub fn run_config(&self) -> &serde_json::Value {
        &self.run_config
    }

    pub fn with_run_config(mut self, config: serde_json::Value) -> Self {
        self.run_config = config;
        self
    }

    pub fn class_of(&self, cell: CellId) -> Option<usize> {
        self.label_of_cell.get(&cell).copied()
    }

    pub fn label_of(&self, p: GeoPoint) -> Result<PlaceLabel> {
        let cell = cell_of(p, self.cell_size)?;
        if let Some(label) = self.class_of(cell) {
            return Ok(PlaceLabel::Class(label));
        }
        let is_unseen = self
            .unseen
            .iter()
            .any(|u| u.lat_index == cell.lat_index && u.lon_index == cell.lon_index);
        Ok(if is_unseen {
            PlaceLabel::Unseen
        } else {
            PlaceLabel::Excluded
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl From<PlacePartition> for PartitionDoc {
    fn from(p: PlacePartition) -> Self {
        PartitionDoc {
            format_version: PARTITION_FORMAT_VERSION,
            cell_size: p.cell_size,
            min_images: p.min_images,
            min_images_applies_to: "train".into(),
            classes: p.classes,
            excluded: p.excluded,
            unseen: p.unseen,
            run_config: p.run_config,
        }
    }
}

impl TryFrom<PartitionDoc> for PlacePartition {
    type Error = Error;

    fn try_from(doc: PartitionDoc) -> Result<Self> {
        if doc.format_version != PARTITION_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported partition format version {}",
                doc.format_version
            )));
        }
        let mut label_of_cell = BTreeMap::new();
        for (i, c) in doc.classes.iter().enumerate() {
            if c.label != i {
                return Err(Error::Config(format!(
                    "partition labels must be contiguous; entry {i} has label {}",
                    c.label
                )));
            }
            if label_of_cell.insert(c.cell(), c.label).is_some() {
                return Err(Error::Config(format!("duplicate class cell {:?}", c.cell())));
            }
        }
        Ok(PlacePartition {
            cell_size: doc.cell_size,
            min_images: doc.min_images,
            classes: doc.classes,
            excluded: doc.excluded,
            unseen: doc.unseen,
            label_of_cell,
            run_config: doc.run_config,
        })
    }
}

/// Builds the class set from training and test image locations.
///
/// Admitted: present in both seasons with `>= min_images` training images.
/// Excluded: fewer training images than the minimum (checked first), or
/// present only in training. Unseen: present only in the test season.
pub fn build_partition(
    train_points: &[GeoPoint],
    test_points: &[GeoPoint],
    cell_size: f64,
    min_images: usize,
) -> Result<PlacePartition> {
    if train_points.is_empty() || test_points.is_empty() {
        return Err(Error::Argument(
            "partition needs non-empty training and test point lists".into(),
        ));
    }
    let mut counts: BTreeMap<CellId, (usize, usize)> = BTreeMap::new();
    for &p in train_points {
        counts.entry(cell_of(p, cell_size)?).or_default().0 += 1;
    }
    for &p in test_points {
        counts.entry(cell_of(p, cell_size)?).or_default().1 += 1;
    }

    let mut classes = Vec::new();
    let mut excluded = Vec::new();
    let mut unseen = Vec::new();
    let mut label_of_cell = BTreeMap::new();
    for (cell, (train_count, test_count)) in counts {
        if train_count == 0 {
            unseen.push(UnseenEntry {
                lat_index: cell.lat_index,
                lon_index: cell.lon_index,
                test_count,
            });
            continue;
        }
        let reason = if train_count < min_images {
            Some(ExclusionReason::TooFewImages)
        } else if test_count == 0 {
            Some(ExclusionReason::TrainOnly)
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(ExcludedEntry {
                lat_index: cell.lat_index,
                lon_index: cell.lon_index,
                reason,
                train_count,
                test_count,
            }),
            None => {
                let label = classes.len();
                label_of_cell.insert(cell, label);
                classes.push(ClassEntry {
                    lat_index: cell.lat_index,
                    lon_index: cell.lon_index,
                    label,
                    train_count,
                    test_count,
                });
            }
        }
    }

    if classes.is_empty() {
        return Err(Error::Config(
            "no cell qualifies as a place class".into(),
        ));
    }
    // RobotCar-scale workspaces at 0.001 deg produced 82-86 classes.
    if cell_size == DEFAULT_CELL_SIZE
        && train_points.len() >= 10_000
        && !(50..=120).contains(&classes.len())
    {
        log::warn!(
            "partition has {} classes; a route of this size usually yields 50-120",
            classes.len()
        );
    }

    Ok(PlacePartition {
        cell_size,
        min_images,
        classes,
        excluded,
        unseen,
        label_of_cell,
        run_config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn cell(lat_index: i64, lon_index: i64) -> CellId {
        CellId {
            lat_index,
            lon_index,
        }
    }

    fn points_in(c: CellId, n: usize) -> Vec<GeoPoint> {
        (0..n)
            .map(|i| {
                let frac = 0.2 + 0.05 * i as f64 / n as f64;
                pt(
                    (c.lat_index as f64 + frac) * 0.001,
                    (c.lon_index as f64 + frac) * 0.001,
                )
            })
            .collect()
    }

    #[test]
    fn cell_of_examples() {
        assert_eq!(cell_of(pt(0.0, 0.0), 0.001).unwrap(), cell(0, 0));
        assert_eq!(cell_of(pt(51.76051, -1.26149), 0.001).unwrap(), cell(51760, -1262));
        assert_eq!(cell_of(pt(0.0015, -0.0005), 0.001).unwrap(), cell(1, -1));
    }

    #[test]
    fn cell_of_rejects_bad_input() {
        let nan = GeoPoint {
            latitude: f64::NAN,
            longitude: 0.0,
        };
        assert!(cell_of(nan, 0.001).is_err());
        assert!(cell_of(pt(0.0, 0.0), 0.0).is_err());
        assert!(GeoPoint::new(91.0, 0.0).is_err());
    }

    #[test]
    fn edge_points_go_to_the_higher_cell() {
        assert_eq!(cell_of(pt(0.002, -0.002), 0.001).unwrap(), cell(2, -2));
    }

    #[test]
    fn two_shared_cells() {
        let (a, b) = (cell(0, 0), cell(0, 1));
        let train = [points_in(a, 6), points_in(b, 7)].concat();
        let test = [points_in(a, 2), points_in(b, 3)].concat();
        let p = build_partition(&train, &test, 0.001, 5).unwrap();
        assert_eq!(p.num_classes(), 2);
        assert_eq!(p.class_of(a), Some(0));
        assert_eq!(p.class_of(b), Some(1));
        assert_eq!(p.classes()[1].train_count, 7);
        assert_eq!(p.classes()[1].test_count, 3);
    }

    #[test]
    fn exclusions_and_unseen() {
        let ok = cell(0, 0);
        let sparse = cell(1, 0);
        let train_only = cell(2, 0);
        let test_only = cell(3, 0);
        let train = [points_in(ok, 5), points_in(sparse, 4), points_in(train_only, 9)].concat();
        let test = [points_in(ok, 1), points_in(sparse, 2), points_in(test_only, 3)].concat();
        let p = build_partition(&train, &test, 0.001, 5).unwrap();
        assert_eq!(p.num_classes(), 1);
        let reasons: Vec<_> = p.excluded().iter().map(|e| (e.lat_index, e.reason)).collect();
        assert_eq!(
            reasons,
            vec![(1, ExclusionReason::TooFewImages), (2, ExclusionReason::TrainOnly)]
        );
        assert_eq!(p.unseen().len(), 1);
        assert_eq!(p.unseen()[0].lat_index, 3);
        assert_eq!(p.class_of(test_only), None);

        let q = points_in(test_only, 1)[0];
        assert_eq!(p.label_of(q).unwrap(), PlaceLabel::Unseen);
        let q = points_in(sparse, 1)[0];
        assert_eq!(p.label_of(q).unwrap(), PlaceLabel::Excluded);
    }

    #[test]
    fn zero_classes_is_a_config_error() {
        let train = points_in(cell(0, 0), 3);
        let test = points_in(cell(0, 0), 3);
        let err = build_partition(&train, &test, 0.001, 5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(build_partition(&[], &test, 0.001, 5).is_err());
    }

    #[test]
    fn json_round_trip_and_fields() {
        let train = [points_in(cell(5, 5), 6), points_in(cell(5, 6), 2)].concat();
        let test = [points_in(cell(5, 5), 1), points_in(cell(9, 9), 1)].concat();
        let p = build_partition(&train, &test, 0.001, 5).unwrap();
        let text = p.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["cell_size"], 0.001);
        assert_eq!(value["classes"][0]["lat_index"], 5);
        assert_eq!(value["excluded"][0]["reason"], "too-few-images");
        assert_eq!(value["unseen"][0]["lon_index"], 9);
        assert_eq!(value["min_images_applies_to"], "train");
        assert_eq!(PlacePartition::from_json(&text).unwrap(), p);
    }

    #[test]
    fn gapped_labels_are_rejected_on_load() {
        let text = r#"{"format_version":1,"cell_size":0.001,"min_images":5,
            "min_images_applies_to":"train",
            "classes":[{"lat_index":0,"lon_index":0,"label":1,"train_count":5,"test_count":1}],
            "excluded":[],"unseen":[]}"#;
        assert!(PlacePartition::from_json(text).is_err());
    }

    proptest! {
        #[test]
        fn translation_by_whole_cells(
            base in -2000i64..2000,
            frac in 0u32..64,
            k in -500i64..500,
            cell_pow in 1u32..11,
        ) {
            // Dyadic cell sizes and offsets keep the arithmetic exact.
            let size = 1.0 / f64::from(1u32 << cell_pow);
            let lat0 = (base as f64 + f64::from(frac) / 64.0) * size;
            let lat1 = lat0 + k as f64 * size;
            prop_assume!(lat0.abs() <= 90.0 && lat1.abs() <= 90.0);
            let a = cell_of(pt(lat0, 0.0), size).unwrap();
            let b = cell_of(pt(lat1, 0.0), size).unwrap();
            prop_assert_eq!(b.lat_index - a.lat_index, k);
        }

        #[test]
        fn labels_are_a_bijection_and_deterministic(
            cells in prop::collection::vec((0i64..6, 0i64..6, 0usize..9, 0usize..3), 1..30)
        ) {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for &(la, lo, n_train, n_test) in &cells {
                train.extend(points_in(cell(la, lo), n_train));
                test.extend(points_in(cell(la, lo), n_test));
            }
            prop_assume!(!train.is_empty() && !test.is_empty());
            let Ok(p) = build_partition(&train, &test, 0.001, 5) else {
                return Ok(());
            };
            let mut seen = vec![false; p.num_classes()];
            for c in p.classes() {
                prop_assert!(c.train_count >= 5);
                let label = p.class_of(c.cell()).unwrap();
                prop_assert!(!seen[label]);
                seen[label] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            let again = build_partition(&train, &test, 0.001, 5).unwrap();
            prop_assert_eq!(again, p);
        }
    }
}
