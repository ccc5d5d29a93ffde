//! Scene graphs built from odometry-stamped frames.
//!
//! * SVSL: four region nodes of one frame, starred on the full-image node.
//! * MVIL: one node per (frame, attribute). Time edges chain each attribute
//!   across consecutive frames; attribute edges star each frame's attribute
//!   nodes on its RGB node.
//!
//! The edgeless kinds keep the nodes and drop every edge.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geoclass::GeoPoint;
use crate::teacher::{feature_from_distances, ClassScoreVector, ScoreKind, TeacherModel};

/// SVSL region roles in node order, with their pixel boxes `[x0, y0, x1, y1]`
/// on the 1080x800 crop. The boxes are metadata: cropping happens upstream.
pub const SVSL_REGIONS: [(&str, [u32; 4]); 4] = [
    ("region:FULL", [0, 0, 1080, 800]),
    ("region:CENTER", [270, 200, 810, 600]),
    ("region:RIGHT", [780, 0, 1080, 800]),
    ("region:LEFT", [0, 0, 300, 800]),
];

pub const RGB_ROLE: &str = "attr:rgb";
pub const ATTRIBUTE_ROLES: [&str; 4] = ["attr:rgb", "attr:canny", "attr:depth", "attr:ss"];

/// Attribute set of the main multi-view configuration (K = 3).
pub fn default_attributes() -> Vec<String> {
    vec!["attr:rgb".into(), "attr:canny".into(), "attr:ss".into()]
}

pub fn svsl_roles() -> impl Iterator<Item = &'static str> {
    SVSL_REGIONS.iter().map(|(r, _)| *r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub lat: f64,
    pub lon: f64,
    /// Cumulative travel distance in meters.
    pub odom_m: f64,
    pub class_label: Option<usize>,
    pub descriptors: BTreeMap<String, Vec<f64>>,
}

impl FrameRecord {
    pub fn point(&self) -> Result<GeoPoint> {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn descriptor(&self, role: &str) -> Result<&[f64]> {
        self.descriptors.get(role).map(Vec::as_slice).ok_or_else(|| {
            Error::Data(format!(
                "frame {} has no descriptor for role {role:?}",
                self.frame_id
            ))
        })
    }
}

/// Checks the traversal-level invariants: non-decreasing odometry and one
/// dimension per role.
pub fn validate_traversal(frames: &[FrameRecord]) -> Result<()> {
    let mut dims: HashMap<&str, usize> = HashMap::new();
    for pair in frames.windows(2) {
        if pair[1].odom_m < pair[0].odom_m {
            return Err(Error::Data(format!(
                "odometry decreases between frames {} and {}",
                pair[0].frame_id, pair[1].frame_id
            )));
        }
    }
    for f in frames {
        if !f.odom_m.is_finite() {
            return Err(Error::Data(format!("frame {} has non-finite odometry", f.frame_id)));
        }
        for (role, d) in &f.descriptors {
            let want = *dims.entry(role.as_str()).or_insert(d.len());
            if d.len() != want {
                return Err(Error::Data(format!(
                    "frame {} role {role:?} has dimension {}, expected {want}",
                    f.frame_id,
                    d.len()
                )));
            }
        }
    }
    Ok(())
}

pub fn read_frames<R: BufRead>(input: R) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<frames input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("frame record {}: {e}", lineno + 1)))?;
        frames.push(frame);
    }
    validate_traversal(&frames)?;
    Ok(frames)
}

pub fn load_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames(std::io::BufReader::new(file))
}

pub fn write_frames<W: Write>(frames: &[FrameRecord], mut out: W) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n").map_err(|e| Error::io("<frames output>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Svsl,
    Mvil,
    EdgelessSvsl,
    EdgelessMvil,
}

impl GraphKind {
    pub fn from_parts(multi_view: bool, edges: bool) -> Self {
        match (multi_view, edges) {
            (false, true) => GraphKind::Svsl,
            (true, true) => GraphKind::Mvil,
            (false, false) => GraphKind::EdgelessSvsl,
            (true, false) => GraphKind::EdgelessMvil,
        }
    }

    pub fn is_multi_view(self) -> bool {
        matches!(self, GraphKind::Mvil | GraphKind::EdgelessMvil)
    }

    pub fn has_edges(self) -> bool {
        matches!(self, GraphKind::Svsl | GraphKind::Mvil)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Svsl => "svsl",
            GraphKind::Mvil => "mvil",
            GraphKind::EdgelessSvsl => "edgeless-svsl",
            GraphKind::EdgelessMvil => "edgeless-mvil",
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            GraphKind::Svsl,
            GraphKind::Mvil,
            GraphKind::EdgelessSvsl,
            GraphKind::EdgelessMvil,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Argument(format!("unknown graph kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub role: String,
    pub feature: ClassScoreVector,
}

/// Undirected graph with per-node features. Edges are stored once, as
/// `(i, j)` with `i < j`, in sorted order. Self-inclusion is part of the
/// convolution, not an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
    /// `None` marks a query from an unseen class.
    pub label: Option<usize>,
    pub kind: GraphKind,
}

impl SceneGraph {
    pub fn new(
        nodes: Vec<GraphNode>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: Option<usize>,
        kind: GraphKind,
    ) -> Result<Self> {
        let n = nodes.len();
        if let Some(first) = nodes.first() {
            let dim = first.feature.len();
            if let Some(bad) = nodes.iter().find(|nd| nd.feature.len() != dim) {
                return Err(Error::Structure(format!(
                    "node {:?} has feature length {}, expected {dim}",
                    bad.role,
                    bad.feature.len()
                )));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Structure(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Structure(format!("self-loop on node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(SceneGraph {
            nodes,
            edges: set.into_iter().collect(),
            label,
            kind,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.feature.len())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first connectivity check.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Debug export: `{nodes:[{role, feature}], edges:[[i,j]], label, kind}`.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes.iter().map(|n| serde_json::json!({
                "role": n.role,
                "feature": n.feature.values,
            })).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
            "label": self.label,
            "kind": self.kind,
        })
    }
}

/// Supplies the feature vector of one node.
pub trait NodeFeaturizer {
    fn featurize(&self, frame: &FrameRecord, role: &str) -> Result<ClassScoreVector>;
}

/// Features from the teacher databases. With `leave_self_out`, database
/// entries recorded for the query's own frame are skipped, so training
/// queries are not matched against themselves.
#[derive(Debug, Clone, Copy)]
pub struct TeacherFeaturizer<'a> {
    pub teacher: &'a TeacherModel,
    pub variant: ScoreKind,
    pub leave_self_out: bool,
}

impl NodeFeaturizer for TeacherFeaturizer<'_> {
    fn featurize(&self, frame: &FrameRecord, role: &str) -> Result<ClassScoreVector> {
        let exclude = self.leave_self_out.then_some(frame.frame_id);
        self.teacher
            .node_feature(role, frame.descriptor(role)?, self.variant, exclude)
    }
}

/// Precomputed teacher distances for a set of frames and roles; every
/// rank-family variant derives from them. Overlapping subsequences share
/// frames, so this avoids repeating database scans.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    variant: ScoreKind,
    features: HashMap<(u64, String), ClassScoreVector>,
}

impl FeatureCache {
    pub fn build<'f>(
        teacher: &TeacherModel,
        frames: impl IntoIterator<Item = &'f FrameRecord>,
        roles: &[String],
        variant: ScoreKind,
        leave_self_out: bool,
    ) -> Result<Self> {
        let mut features = HashMap::new();
        for frame in frames {
            for role in roles {
                let key = (frame.frame_id, role.clone());
                if features.contains_key(&key) {
                    continue;
                }
                let query = frame.descriptor(role)?;
                let feature = if variant == ScoreKind::RawDescriptor {
                    ClassScoreVector {
                        kind: ScoreKind::RawDescriptor,
                        values: query.to_vec(),
                    }
                } else {
                    let exclude = leave_self_out.then_some(frame.frame_id);
                    let db = teacher.db(role)?;
                    let d = crate::teacher::class_distances_excluding(
                        query,
                        db,
                        teacher.num_classes(),
                        exclude,
                    )?;
                    feature_from_distances(&d, variant)?
                };
                features.insert(key, feature);
            }
        }
        Ok(FeatureCache { variant, features })
    }

    pub fn variant(&self) -> ScoreKind {
        self.variant
    }
}

impl NodeFeaturizer for FeatureCache {
    fn featurize(&self, frame: &FrameRecord, role: &str) -> Result<ClassScoreVector> {
        self.features
            .get(&(frame.frame_id, role.to_string()))
            .cloned()
            .ok_or_else(|| {
                Error::Data(format!(
                    "no cached feature for frame {} role {role:?}",
                    frame.frame_id
                ))
            })
    }
}

/// Single-view graph: nodes `[FULL, CENTER, RIGHT, LEFT]`, star on FULL.
pub fn build_svsl(
    frame: &FrameRecord,
    featurizer: &dyn NodeFeaturizer,
    edges: bool,
) -> Result<SceneGraph> {
    let mut nodes = Vec::with_capacity(4);
    for role in svsl_roles() {
        frame.descriptor(role)?;
        nodes.push(GraphNode {
            role: role.to_string(),
            feature: featurizer.featurize(frame, role)?,
        });
    }
    let star = [(0, 1), (0, 2), (0, 3)];
    let edge_list: &[(usize, usize)] = if edges { &star } else { &[] };
    SceneGraph::new(
        nodes,
        edge_list.iter().copied(),
        frame.class_label,
        GraphKind::from_parts(false, edges),
    )
}

/// Multi-view graph over `frames` (F) and `attributes` (K, hub first).
/// Node `f * K + a` is attribute `a` of frame `f`. The label is the first
/// frame's class.
pub fn build_mvil(
    frames: &[&FrameRecord],
    attributes: &[String],
    featurizer: &dyn NodeFeaturizer,
    edges: bool,
) -> Result<SceneGraph> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("multi-view graph needs at least one frame".into()))?;
    match attributes.first() {
        Some(a) if a == RGB_ROLE => {}
        Some(a) => {
            return Err(Error::Argument(format!(
                "attribute 0 must be {RGB_ROLE:?}, got {a:?}"
            )))
        }
        None => return Err(Error::Argument("multi-view graph needs at least one attribute".into())),
    }
    let k = attributes.len();
    let mut nodes = Vec::with_capacity(frames.len() * k);
    for frame in frames {
        for role in attributes {
            frame.descriptor(role)?;
            nodes.push(GraphNode {
                role: role.clone(),
                feature: featurizer.featurize(frame, role)?,
            });
        }
    }
    let edge_list = if edges {
        mvil_edges(frames.len(), k)
    } else {
        Vec::new()
    };
    SceneGraph::new(nodes, edge_list, first.class_label, GraphKind::from_parts(true, edges))
}

/// Time and attribute edges of a `frames` x `attributes` MVIL layout.
pub fn mvil_edges(frames: usize, attributes: usize) -> Vec<(usize, usize)> {
    let k = attributes;
    let mut edges = Vec::with_capacity(mvil_edge_count(frames, k));
    for f in 0..frames {
        if f + 1 < frames {
            for a in 0..k {
                edges.push((f * k + a, (f + 1) * k + a));
            }
        }
        for a in 1..k {
            edges.push((f * k, f * k + a));
        }
    }
    edges
}

/// Closed-form MVIL edge count: `(F - 1) K` time edges plus `F (K - 1)`
/// attribute edges.
pub fn mvil_edge_count(frames: usize, attributes: usize) -> usize {
    frames.saturating_sub(1) * attributes + frames * attributes.saturating_sub(1)
}

/// All overlapping subsequences of `frames_per_seq` frames spaced
/// `interval_m` apart by odometry.
///
/// For start frame `i`, target `k` picks the earliest frame at or after `i`
/// whose odometry is at least `odom[i] + k * interval_m`. A start is kept
/// only when all targets exist and the traversal extends at least
/// `frames_per_seq * interval_m` past it (the window's full travel distance).
pub fn sample_subsequences(
    traversal: &[FrameRecord],
    interval_m: f64,
    frames_per_seq: usize,
) -> Vec<Vec<u64>> {
    if traversal.is_empty() || frames_per_seq == 0 {
        return Vec::new();
    }
    let odom: Vec<f64> = traversal.iter().map(|f| f.odom_m).collect();
    let end = odom[odom.len() - 1];
    let span = frames_per_seq as f64 * interval_m;
    let mut out = Vec::new();
    for i in 0..traversal.len() {
        let start = odom[i];
        if end - start < span {
            break;
        }
        let mut ids = Vec::with_capacity(frames_per_seq);
        let mut from = i;
        for k in 0..frames_per_seq {
            let target = start + k as f64 * interval_m;
            from += odom[from..].partition_point(|&d| d < target);
            match traversal.get(from) {
                Some(f) => ids.push(f.frame_id),
                None => break,
            }
        }
        if ids.len() == frames_per_seq {
            out.push(ids);
        }
    }
    out
}

/// Single-view query of a subsequence: its first frame.
pub fn query_frame_of(subseq: &[u64]) -> Option<u64> {
    subseq.first().copied()
}
