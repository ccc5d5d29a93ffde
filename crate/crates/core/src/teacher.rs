//! Nearest-neighbor teacher.
//!
//! One descriptor database per node role. A query is scored against every
//! class by its L2 distance to that class's nearest database entry; the
//! distance vector is then turned into ranks (1 = closest) and reciprocal
//! ranks, which become the student's node features.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{argmax, argmin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    RawDescriptor,
    Distance,
    Rank,
    ReciprocalRank,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::RawDescriptor,
        ScoreKind::Distance,
        ScoreKind::Rank,
        ScoreKind::ReciprocalRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::RawDescriptor => "raw-descriptor",
            ScoreKind::Distance => "distance",
            ScoreKind::Rank => "rank",
            ScoreKind::ReciprocalRank => "reciprocal-rank",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown feature variant {s:?}")))
    }
}

/// Per-class score vector (or the raw descriptor, for that variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScoreVector {
    pub kind: ScoreKind,
    pub values: Vec<f64>,
}

impl ClassScoreVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn expect_kind(&self, kind: ScoreKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Argument(format!(
                "expected a {kind} vector, got {}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Rank 1 for the smallest distance; ties go to the lower class index.
    pub fn to_rank(&self) -> Result<ClassScoreVector> {
        self.expect_kind(ScoreKind::Distance)?;
        Ok(ClassScoreVector {
            kind: ScoreKind::Rank,
            values: ranks_from_distances(&self.values),
        })
    }

    pub fn to_reciprocal_rank(&self) -> Result<ClassScoreVector> {
        self.expect_kind(ScoreKind::Rank)?;
        Ok(ClassScoreVector {
            kind: ScoreKind::ReciprocalRank,
            values: self.values.iter().map(|r| 1.0 / r).collect(),
        })
    }
}

pub fn ranks_from_distances(distances: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    // Stable sort keeps ascending class index among equal distances.
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let mut ranks = vec![0.0; distances.len()];
    for (pos, &class) in order.iter().enumerate() {
        ranks[class] = (pos + 1) as f64;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub class_label: usize,
    pub descriptor: Vec<f64>,
    /// Source frame, used to leave a query's own image out of the search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u64>,
}

/// Descriptors of one node role, each tagged with its place class.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDb {
    role: String,
    dim: usize,
    entries: Vec<DbEntry>,
}

impl DescriptorDb {
    pub fn new(role: impl Into<String>, entries: Vec<DbEntry>) -> Result<Self> {
        let role = role.into();
        let dim = entries
            .first()
            .map(|e| e.descriptor.len())
            .ok_or_else(|| Error::Data(format!("descriptor database {role:?} is empty")))?;
        for (i, e) in entries.iter().enumerate() {
            if e.descriptor.len() != dim {
                return Err(Error::Data(format!(
                    "database {role:?} entry {i} has dimension {}, expected {dim}",
                    e.descriptor.len()
                )));
            }
            if e.descriptor.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "database {role:?} entry {i} has a non-finite value"
                )));
            }
        }
        Ok(DescriptorDb { role, dim, entries })
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_coverage(&self, num_classes: usize) -> Result<()> {
        let mut covered = vec![false; num_classes];
        for e in &self.entries {
            if e.class_label >= num_classes {
                return Err(Error::Config(format!(
                    "database {:?} has label {} but only {num_classes} classes exist",
                    self.role, e.class_label
                )));
            }
            covered[e.class_label] = true;
        }
        if let Some(c) = covered.iter().position(|&x| !x) {
            return Err(Error::Config(format!(
                "database {:?} has no entry for class {c}",
                self.role
            )));
        }
        Ok(())
    }
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// L2 distance from `query` to the nearest entry of each class.
pub fn class_distances(
    query: &[f64],
    db: &DescriptorDb,
    num_classes: usize,
) -> Result<ClassScoreVector> {
    class_distances_excluding(query, db, num_classes, None)
}

/// As [`class_distances`], ignoring entries recorded for `exclude_frame`.
pub fn class_distances_excluding(
    query: &[f64],
    db: &DescriptorDb,
    num_classes: usize,
    exclude_frame: Option<u64>,
) -> Result<ClassScoreVector> {
    if query.len() != db.dim {
        return Err(Error::Argument(format!(
            "query has dimension {} but database {:?} has {}",
            query.len(),
            db.role,
            db.dim
        )));
    }
    let mut best = vec![f64::INFINITY; num_classes];
    for e in &db.entries {
        if exclude_frame.is_some() && e.frame_id == exclude_frame {
            continue;
        }
        let slot = best.get_mut(e.class_label).ok_or_else(|| {
            Error::Config(format!(
                "database {:?} has label {} but only {num_classes} classes exist",
                db.role, e.class_label
            ))
        })?;
        let d = squared_l2(query, &e.descriptor);
        if d < *slot {
            *slot = d;
        }
    }
    if let Some(c) = best.iter().position(|d| d.is_infinite()) {
        return Err(Error::Config(format!(
            "database {:?} has no usable entry for class {c}",
            db.role
        )));
    }
    Ok(ClassScoreVector {
        kind: ScoreKind::Distance,
        values: best.into_iter().map(f64::sqrt).collect(),
    })
}

pub fn node_feature(
    query: &[f64],
    db: &DescriptorDb,
    num_classes: usize,
    variant: ScoreKind,
    exclude_frame: Option<u64>,
) -> Result<ClassScoreVector> {
    if variant == ScoreKind::RawDescriptor {
        return Ok(ClassScoreVector {
            kind: ScoreKind::RawDescriptor,
            values: query.to_vec(),
        });
    }
    let distances = class_distances_excluding(query, db, num_classes, exclude_frame)?;
    feature_from_distances(&distances, variant)
}

/// Derives a rank-family feature from an already computed distance vector.
pub fn feature_from_distances(
    distances: &ClassScoreVector,
    variant: ScoreKind,
) -> Result<ClassScoreVector> {
    match variant {
        ScoreKind::Distance => {
            distances.expect_kind(ScoreKind::Distance)?;
            Ok(distances.clone())
        }
        ScoreKind::Rank => distances.to_rank(),
        ScoreKind::ReciprocalRank => distances.to_rank()?.to_reciprocal_rank(),
        ScoreKind::RawDescriptor => Err(Error::Argument(
            "raw descriptors cannot be derived from distances".into(),
        )),
    }
}

/// Nearest-class prediction; ties go to the lower class index.
pub fn teacher_predict(query: &[f64], db: &DescriptorDb, num_classes: usize) -> Result<usize> {
    let d = class_distances(query, db, num_classes)?;
    argmin(&d.values).ok_or_else(|| Error::Argument("teacher has zero classes".into()))
}

/// The full teacher: one database per role over a fixed class count.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    num_classes: usize,
    dbs: BTreeMap<String, DescriptorDb>,
}

/// JSON Lines record for database import/export.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DbRecord {
    role: String,
    class_label: usize,
    descriptor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_id: Option<u64>,
}

impl TeacherModel {
    /// Every database must cover every class in `0..num_classes`.
    pub fn new(num_classes: usize, dbs: Vec<DescriptorDb>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("teacher needs at least one class".into()));
        }
        let mut map = BTreeMap::new();
        for db in dbs {
            db.check_coverage(num_classes)?;
            let role = db.role.clone();
            if map.insert(role.clone(), db).is_some() {
                return Err(Error::Config(format!("duplicate database for role {role:?}")));
            }
        }
        Ok(TeacherModel {
            num_classes,
            dbs: map,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.dbs.keys().map(String::as_str)
    }

    pub fn db(&self, role: &str) -> Result<&DescriptorDb> {
        self.dbs
            .get(role)
            .ok_or_else(|| Error::Data(format!("teacher has no database for role {role:?}")))
    }

    pub fn class_distances(&self, role: &str, query: &[f64]) -> Result<ClassScoreVector> {
        class_distances(query, self.db(role)?, self.num_classes)
    }

    pub fn node_feature(
        &self,
        role: &str,
        query: &[f64],
        variant: ScoreKind,
        exclude_frame: Option<u64>,
    ) -> Result<ClassScoreVector> {
        node_feature(query, self.db(role)?, self.num_classes, variant, exclude_frame)
    }

    pub fn predict(&self, role: &str, query: &[f64]) -> Result<usize> {
        teacher_predict(query, self.db(role)?, self.num_classes)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for db in self.dbs.values() {
            for e in &db.entries {
                let rec = DbRecord {
                    role: db.role.clone(),
                    class_label: e.class_label,
                    descriptor: e.descriptor.clone(),
                    frame_id: e.frame_id,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n").map_err(|e| Error::io("<teacher output>", e))?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, num_classes: usize) -> Result<Self> {
        let mut by_role: BTreeMap<String, Vec<DbEntry>> = BTreeMap::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<teacher input>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DbRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("teacher record {}: {e}", lineno + 1)))?;
            by_role.entry(rec.role).or_default().push(DbEntry {
                class_label: rec.class_label,
                descriptor: rec.descriptor,
                frame_id: rec.frame_id,
            });
        }
        let dbs = by_role
            .into_iter()
            .map(|(role, entries)| DescriptorDb::new(role, entries))
            .collect::<Result<Vec<_>>>()?;
        TeacherModel::new(num_classes, dbs)
    }

    pub fn load(path: &Path, num_classes: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        TeacherModel::read_jsonl(std::io::BufReader::new(file), num_classes)
    }
}

/// Sanity helper for tests and debug assertions.
pub fn is_rank_permutation(ranks: &[f64]) -> bool {
    let n = ranks.len();
    let mut seen = vec![false; n];
    for &r in ranks {
        if r.fract() != 0.0 || r < 1.0 || r > n as f64 {
            return false;
        }
        let i = r as usize - 1;
        if seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Class the reciprocal-rank vector points at (its maximum).
pub fn top_class(reciprocal_ranks: &[f64]) -> Option<usize> {
    argmax(reciprocal_ranks)
}
