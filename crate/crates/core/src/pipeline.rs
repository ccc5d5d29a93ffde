//! Glue between traversals, the partition, the teacher and graph builders.
//!
//! Frames are relabeled through the partition rather than trusting the
//! `class_label` stored in the input. Test queries are anchored on
//! subsequences: the MVIL query is the whole window, the single-view query
//! (SVSL graph or teacher lookup) is its first frame, so every method is
//! scored on the same locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::ModelTags;
use crate::geoclass::{PlaceLabel, PlacePartition};
use crate::scenegraph::{
    build_mvil, build_svsl, default_attributes, query_frame_of, sample_subsequences, svsl_roles,
    FeatureCache, FrameRecord, GraphKind, SceneGraph,
};
use crate::teacher::{DbEntry, DescriptorDb, ScoreKind, TeacherModel};

pub const DEFAULT_INTERVAL_M: f64 = 2.0;
pub const DEFAULT_FRAMES_PER_SEQ: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Every graph is labeled; teacher features skip the query's own entry.
    Train,
    /// Unseen-class queries are kept with no label.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub variant: ScoreKind,
    /// MVIL attribute roles, rgb first. Ignored for SVSL.
    #[serde(default = "default_attributes")]
    pub attributes: Vec<String>,
    #[serde(default = "default_interval")]
    pub interval_m: f64,
    #[serde(default = "default_frames_per_seq")]
    pub frames_per_seq: usize,
}

fn default_interval() -> f64 {
    DEFAULT_INTERVAL_M
}

fn default_frames_per_seq() -> usize {
    DEFAULT_FRAMES_PER_SEQ
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            kind: GraphKind::Mvil,
            variant: ScoreKind::ReciprocalRank,
            attributes: default_attributes(),
            interval_m: DEFAULT_INTERVAL_M,
            frames_per_seq: DEFAULT_FRAMES_PER_SEQ,
        }
    }
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_m > 0.0 && self.interval_m.is_finite()) {
            return Err(Error::Config(format!("invalid interval_m {}", self.interval_m)));
        }
        if self.frames_per_seq == 0 {
            return Err(Error::Config("frames_per_seq must be positive".into()));
        }
        if self.kind.is_multi_view() && self.attributes.is_empty() {
            return Err(Error::Config("multi-view graphs need at least one attribute".into()));
        }
        Ok(())
    }

    pub fn roles(&self) -> Vec<String> {
        if self.kind.is_multi_view() {
            self.attributes.clone()
        } else {
            svsl_roles().map(str::to_string).collect()
        }
    }

    pub fn model_tags(&self) -> ModelTags {
        ModelTags {
            feature_variant: self.variant,
            graph_kind: self.kind,
            attributes: if self.kind.is_multi_view() {
                self.attributes.clone()
            } else {
                Vec::new()
            },
            fc_bias: true,
        }
    }
}

/// Copies of `frames` whose `class_label` comes from the partition, plus
/// each frame's place label.
pub fn relabel(
    frames: &[FrameRecord],
    partition: &PlacePartition,
) -> Result<(Vec<FrameRecord>, Vec<PlaceLabel>)> {
    let mut out = Vec::with_capacity(frames.len());
    let mut labels = Vec::with_capacity(frames.len());
    for f in frames {
        let label = partition.label_of(f.point()?)?;
        let mut copy = f.clone();
        copy.class_label = match label {
            PlaceLabel::Class(c) => Some(c),
            _ => None,
        };
        out.push(copy);
        labels.push(label);
    }
    Ok((out, labels))
}

/// One nearest-neighbor database per role from the labeled training frames.
pub fn build_teacher(
    train: &[FrameRecord],
    partition: &PlacePartition,
    roles: &[String],
) -> Result<TeacherModel> {
    if roles.is_empty() {
        return Err(Error::Argument("teacher needs at least one role".into()));
    }
    let (frames, _) = relabel(train, partition)?;
    let mut dbs = Vec::with_capacity(roles.len());
    for role in roles {
        let mut entries = Vec::new();
        for f in &frames {
            if let Some(c) = f.class_label {
                entries.push(DbEntry {
                    class_label: c,
                    descriptor: f.descriptor(role)?.to_vec(),
                    frame_id: Some(f.frame_id),
                });
            }
        }
        dbs.push(DescriptorDb::new(role.clone(), entries)?);
    }
    TeacherModel::new(partition.num_classes(), dbs)
}

struct Queries {
    frames: Vec<FrameRecord>,
    /// Indices into `frames`; one entry per graph.
    windows: Vec<Vec<usize>>,
}

fn select_queries(
    traversal: &[FrameRecord],
    partition: &PlacePartition,
    spec: &GraphSpec,
    split: Split,
) -> Result<Queries> {
    let (frames, labels) = relabel(traversal, partition)?;
    let index: std::collections::HashMap<u64, usize> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.frame_id, i))
        .collect();
    let keep = |i: usize| match (split, &labels[i]) {
        (_, PlaceLabel::Class(_)) => true,
        (Split::Test, PlaceLabel::Unseen) => true,
        _ => false,
    };
    let windows = if split == Split::Train && !spec.kind.is_multi_view() {
        (0..frames.len()).filter(|&i| keep(i)).map(|i| vec![i]).collect()
    } else {
        let mut windows = Vec::new();
        for seq in sample_subsequences(&frames, spec.interval_m, spec.frames_per_seq) {
            let ids: Vec<u64> = if spec.kind.is_multi_view() {
                seq
            } else {
                query_frame_of(&seq).into_iter().collect()
            };
            let w: Vec<usize> = ids.iter().map(|id| index[id]).collect();
            if keep(w[0]) {
                windows.push(w);
            }
        }
        windows
    };
    Ok(Queries { frames, windows })
}

/// Scene graphs for one split. Training SVSL uses every labeled frame;
/// everything else is anchored on subsequences. Queries in excluded cells
/// are dropped.
pub fn build_graphs(
    traversal: &[FrameRecord],
    partition: &PlacePartition,
    teacher: &TeacherModel,
    spec: &GraphSpec,
    split: Split,
) -> Result<Vec<SceneGraph>> {
    spec.validate()?;
    let q = select_queries(traversal, partition, spec, split)?;
    let roles = spec.roles();
    let mut used: Vec<usize> = q.windows.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let cache = FeatureCache::build(
        teacher,
        used.iter().map(|&i| &q.frames[i]),
        &roles,
        spec.variant,
        split == Split::Train,
    )?;
    let edges = spec.kind.has_edges();
    q.windows
        .iter()
        .map(|w| {
            if spec.kind.is_multi_view() {
                let frames: Vec<&FrameRecord> = w.iter().map(|&i| &q.frames[i]).collect();
                build_mvil(&frames, &spec.attributes, &cache, edges)
            } else {
                build_svsl(&q.frames[w[0]], &cache, edges)
            }
        })
        .collect()
}

/// Single-view test queries (first frame of every kept subsequence),
/// relabeled through the partition. These are the teacher baseline inputs.
pub fn query_frames(
    traversal: &[FrameRecord],
    partition: &PlacePartition,
    spec: &GraphSpec,
) -> Result<Vec<FrameRecord>> {
    let single = GraphSpec {
        kind: GraphKind::Svsl,
        ..spec.clone()
    };
    let q = select_queries(traversal, partition, &single, Split::Test)?;
    Ok(q.windows.iter().map(|w| q.frames[w[0]].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoclass::build_partition;
    use crate::synthworld::{generate_traversal, reference_world};

    fn small_world() -> (Vec<FrameRecord>, Vec<FrameRecord>, PlacePartition) {
        let mut spec = reference_world(5);
        spec.num_classes = 4;
        let train = generate_traversal(&spec, 0).unwrap();
        let test = generate_traversal(&spec, 1).unwrap();
        let pts = |fs: &[FrameRecord]| fs.iter().map(|f| f.point().unwrap()).collect::<Vec<_>>();
        let partition = build_partition(&pts(&train), &pts(&test), 0.001, 5).unwrap();
        (train, test, partition)
    }

    #[test]
    fn graph_counts_and_labels() {
        let (train, test, partition) = small_world();
        let spec = GraphSpec::default();
        let roles: Vec<String> = crate::scenegraph::ATTRIBUTE_ROLES
            .iter()
            .chain(svsl_roles().collect::<Vec<_>>().iter())
            .map(|s| s.to_string())
            .collect();
        let teacher = build_teacher(&train, &partition, &roles).unwrap();

        let mvil = build_graphs(&test, &partition, &teacher, &spec, Split::Test).unwrap();
        let windows = sample_subsequences(&test, 2.0, 10);
        assert_eq!(mvil.len(), windows.len());
        assert!(mvil.iter().all(|g| g.num_nodes() == 30 && g.edges.len() == 47));

        let svsl_spec = GraphSpec {
            kind: GraphKind::Svsl,
            ..spec.clone()
        };
        let svsl_train = build_graphs(&train, &partition, &teacher, &svsl_spec, Split::Train).unwrap();
        assert_eq!(svsl_train.len(), train.len());
        let svsl_test = build_graphs(&test, &partition, &teacher, &svsl_spec, Split::Test).unwrap();
        let queries = query_frames(&test, &partition, &spec).unwrap();
        assert_eq!(svsl_test.len(), queries.len());
        for (g, f) in svsl_test.iter().zip(&queries) {
            assert_eq!(g.label, f.class_label);
        }
    }

    #[test]
    fn raw_descriptor_uses_descriptor_dim() {
        let (train, _, partition) = small_world();
        let spec = GraphSpec {
            kind: GraphKind::Svsl,
            variant: ScoreKind::RawDescriptor,
            ..GraphSpec::default()
        };
        let teacher = build_teacher(&train, &partition, &spec.roles()).unwrap();
        let g = build_graphs(&train, &partition, &teacher, &spec, Split::Train).unwrap();
        assert_eq!(g[0].feature_dim(), 16);
    }

    #[test]
    fn leave_self_out_changes_training_features() {
        let (train, _, partition) = small_world();
        let spec = GraphSpec {
            kind: GraphKind::Svsl,
            variant: ScoreKind::Distance,
            ..GraphSpec::default()
        };
        let teacher = build_teacher(&train, &partition, &spec.roles()).unwrap();
        let tr = build_graphs(&train, &partition, &teacher, &spec, Split::Train).unwrap();
        let te = build_graphs(&train, &partition, &teacher, &spec, Split::Test).unwrap();
        // A test-split query from the database itself has distance 0 to its own class.
        let own = te[0].label.unwrap();
        assert_eq!(te[0].nodes[0].feature.values[own], 0.0);
        assert!(tr[0].nodes[0].feature.values[own] > 0.0);
    }
}
