//! Top-1 evaluation and experiment orchestration.
//!
//! Unseen-class queries stay in the accuracy denominator and always count
//! as errors. Latency, when measured, covers only classification: graphs
//! and teacher features are built before the clock starts.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{train, GcnModel, GraphInput, TrainConfig};
use crate::geoclass::PlacePartition;
use crate::pipeline::{self, GraphSpec};
use crate::scenegraph::{FrameRecord, GraphKind, SceneGraph};
use crate::teacher::{ScoreKind, TeacherModel};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Something that assigns a place class to a query.
pub trait PlaceClassifier<Q: ?Sized>: Sync {
    fn classify(&self, query: &Q) -> Result<usize>;
}

/// Queries that know their ground truth (`None` = unseen class).
pub trait LabeledQuery: Sync {
    fn truth(&self) -> Option<usize>;
}

impl LabeledQuery for SceneGraph {
    fn truth(&self) -> Option<usize> {
        self.label
    }
}

impl LabeledQuery for FrameRecord {
    fn truth(&self) -> Option<usize> {
        self.class_label
    }
}

impl PlaceClassifier<SceneGraph> for GcnModel {
    fn classify(&self, g: &SceneGraph) -> Result<usize> {
        Ok(self.predict(g)?.0)
    }
}

/// GCN over pre-converted inputs, for latency runs.
impl PlaceClassifier<GraphInput> for GcnModel {
    fn classify(&self, g: &GraphInput) -> Result<usize> {
        Ok(self.predict_input(g)?.0)
    }
}

/// Single-view nearest-neighbor baseline on one role.
pub struct TeacherBaseline<'a> {
    pub teacher: &'a TeacherModel,
    pub role: String,
}

impl PlaceClassifier<FrameRecord> for TeacherBaseline<'_> {
    fn classify(&self, frame: &FrameRecord) -> Result<usize> {
        self.teacher.predict(&self.role, frame.descriptor(&self.role)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Time each query sequentially; otherwise queries may run in parallel
    /// and the report carries no latency.
    pub measure_latency: bool,
    /// Echoed verbatim into the report.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: usize,
    pub queries: u64,
    pub correct: u64,
    /// `None` when the class has no test query.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    /// Correct / all queries, unseen ones included.
    pub top1_accuracy: f64,
    pub num_queries: u64,
    pub num_correct: u64,
    pub unseen_queries: u64,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[truth][predicted]` over queries with a known class.
    pub confusion: Vec<Vec<u64>>,
    pub mean_latency_ms: Option<f64>,
    pub unseen_scoring: String,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported report format version {}",
                report.format_version
            )));
        }
        Ok(report)
    }
}

/// Builds a report from `(truth, predicted)` pairs.
pub fn report_from_predictions(
    pairs: &[(Option<usize>, usize)],
    num_classes: usize,
    mean_latency_ms: Option<f64>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let mut unseen = 0u64;
    let mut correct = 0u64;
    for &(truth, predicted) in pairs {
        if predicted >= num_classes {
            return Err(Error::Internal(format!(
                "prediction {predicted} outside 0..{num_classes}"
            )));
        }
        match truth {
            None => unseen += 1,
            Some(t) if t >= num_classes => {
                return Err(Error::Data(format!(
                    "query label {t} outside 0..{num_classes}"
                )))
            }
            Some(t) => {
                confusion[t][predicted] += 1;
                if t == predicted {
                    correct += 1;
                }
            }
        }
    }
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(label, row)| {
            let queries: u64 = row.iter().sum();
            let hits = row[label];
            ClassAccuracy {
                label,
                queries,
                correct: hits,
                accuracy: (queries > 0).then(|| hits as f64 / queries as f64),
            }
        })
        .collect();
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        top1_accuracy: correct as f64 / pairs.len() as f64,
        num_queries: pairs.len() as u64,
        num_correct: correct,
        unseen_queries: unseen,
        per_class,
        confusion,
        mean_latency_ms,
        unseen_scoring: "counted-as-error".into(),
        config,
    })
}

/// Scores every query once, in order.
pub fn evaluate<Q, M>(
    model: &M,
    queries: &[Q],
    num_classes: usize,
    opts: &EvalOptions,
) -> Result<EvalReport>
where
    Q: LabeledQuery,
    M: PlaceClassifier<Q>,
{
    if queries.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let (predictions, latency) = if opts.measure_latency {
        let mut preds = Vec::with_capacity(queries.len());
        let mut total = std::time::Duration::ZERO;
        for q in queries {
            let start = Instant::now();
            let p = model.classify(q)?;
            total += start.elapsed();
            preds.push(p);
        }
        let ms = total.as_secs_f64() * 1e3 / queries.len() as f64;
        (preds, Some(ms))
    } else {
        let preds = queries
            .par_iter()
            .map(|q| model.classify(q))
            .collect::<Result<Vec<_>>>()?;
        (preds, None)
    };
    let pairs: Vec<_> = queries.iter().map(|q| q.truth()).zip(predictions).collect();
    report_from_predictions(&pairs, num_classes, latency, opts.config.clone())
}

/// Mean of per-pair accuracies and the pooled accuracy over all queries.
pub fn summarize_pairs(reports: &[EvalReport]) -> Option<(f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let mean = reports.iter().map(|r| r.top1_accuracy).sum::<f64>() / reports.len() as f64;
    let correct: u64 = reports.iter().map(|r| r.num_correct).sum();
    let total: u64 = reports.iter().map(|r| r.num_queries).sum();
    Some((mean, correct as f64 / total as f64))
}

/// A train/test pair ready for graph construction.
pub struct Dataset<'a> {
    pub train: &'a [FrameRecord],
    pub test: &'a [FrameRecord],
    pub partition: &'a PlacePartition,
    pub teacher: &'a TeacherModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub multi_view: bool,
    pub variant: ScoreKind,
    pub edges: bool,
}

impl AblationCell {
    pub fn graph_kind(&self) -> GraphKind {
        GraphKind::from_parts(self.multi_view, self.edges)
    }
}

/// Cartesian grid over graph family, node feature and edge use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    /// `"svsl"` and/or `"mvil"`.
    pub graph: Vec<String>,
    pub variant: Vec<ScoreKind>,
    pub edges: Vec<bool>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "crate::scenegraph::default_attributes")]
    pub attributes: Vec<String>,
}

impl AblationGrid {
    pub fn cells(&self) -> Result<Vec<AblationCell>> {
        let mut out = Vec::new();
        for g in &self.graph {
            let multi_view = match g.as_str() {
                "svsl" => false,
                "mvil" => true,
                other => {
                    return Err(Error::Config(format!(
                        "grid graph entries must be \"svsl\" or \"mvil\", got {other:?}"
                    )))
                }
            };
            for &variant in &self.variant {
                for &edges in &self.edges {
                    out.push(AblationCell {
                        multi_view,
                        variant,
                        edges,
                    });
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("ablation grid has no cells".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub graph_kind: GraphKind,
    pub variant: ScoreKind,
    pub edges: bool,
    pub seed: u64,
    pub train_graphs: usize,
    pub test_queries: u64,
    pub unseen_queries: u64,
    pub top1_accuracy: f64,
    pub mean_latency_ms: Option<f64>,
}

/// Trains and evaluates one model per (cell, seed). All cells see the same
/// seeds so rows pair up across configurations.
pub fn run_ablation(
    data: &Dataset<'_>,
    grid: &AblationGrid,
    base: &TrainConfig,
    graph_spec: &GraphSpec,
    measure_latency: bool,
) -> Result<Vec<AblationRow>> {
    let cells = grid.cells()?;
    let seeds = if grid.seeds.is_empty() {
        vec![base.seed]
    } else {
        grid.seeds.clone()
    };
    let num_classes = data.partition.num_classes();
    let mut rows = Vec::new();
    for cell in &cells {
        let spec = GraphSpec {
            kind: cell.graph_kind(),
            variant: cell.variant,
            attributes: grid.attributes.clone(),
            ..graph_spec.clone()
        };
        let train_graphs = pipeline::build_graphs(
            data.train,
            data.partition,
            data.teacher,
            &spec,
            pipeline::Split::Train,
        )?;
        let test_graphs = pipeline::build_graphs(
            data.test,
            data.partition,
            data.teacher,
            &spec,
            pipeline::Split::Test,
        )?;
        for &seed in &seeds {
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            let tags = spec.model_tags();
            let outcome = train(&train_graphs, num_classes, tags, &cfg)?;
            let report = evaluate(
                &outcome.model,
                &test_graphs,
                num_classes,
                &EvalOptions {
                    measure_latency,
                    config: serde_json::Value::Null,
                },
            )?;
            rows.push(AblationRow {
                graph_kind: cell.graph_kind(),
                variant: cell.variant,
                edges: cell.edges,
                seed,
                train_graphs: train_graphs.len(),
                test_queries: report.num_queries,
                unseen_queries: report.unseen_queries,
                top1_accuracy: report.top1_accuracy,
                mean_latency_ms: report.mean_latency_ms,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Internal(format!("csv encoding failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    struct Fixed(Vec<usize>);

    struct Q(usize, Option<usize>);

    impl LabeledQuery for Q {
        fn truth(&self) -> Option<usize> {
            self.1
        }
    }

    impl PlaceClassifier<Q> for Fixed {
        fn classify(&self, q: &Q) -> Result<usize> {
            Ok(self.0[q.0])
        }
    }

    #[test]
    fn perfect_predictions() {
        let queries: Vec<Q> = (0..6).map(|i| Q(i, Some(i % 3))).collect();
        let model = Fixed((0..6).map(|i| i % 3).collect());
        let r = evaluate(&model, &queries, 3, &EvalOptions::default()).unwrap();
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.per_class[1].accuracy, Some(1.0));
    }

    #[test]
    fn all_unseen_scores_zero() {
        let queries: Vec<Q> = (0..4).map(|i| Q(i, None)).collect();
        let r = evaluate(&Fixed(vec![0; 4]), &queries, 2, &EvalOptions::default()).unwrap();
        assert_eq!(r.top1_accuracy, 0.0);
        assert_eq!(r.unseen_queries, 4);
        assert_eq!(r.confusion.iter().flatten().sum::<u64>(), 0);
    }

    #[test]
    fn accuracy_matches_recount() {
        let mut rng = Rng::new(8);
        let n = 200;
        let truths: Vec<Option<usize>> = (0..n)
            .map(|_| {
                let u = rng.uniform();
                (u > 0.1).then(|| (rng.uniform() * 5.0) as usize)
            })
            .collect();
        let preds: Vec<usize> = (0..n).map(|_| (rng.uniform() * 5.0) as usize).collect();
        let queries: Vec<Q> = truths.iter().enumerate().map(|(i, t)| Q(i, *t)).collect();
        let r = evaluate(&Fixed(preds.clone()), &queries, 5, &EvalOptions::default()).unwrap();

        let hand = truths
            .iter()
            .zip(&preds)
            .filter(|(t, p)| **t == Some(**p))
            .count();
        assert_eq!(r.top1_accuracy, hand as f64 / n as f64);
        let labeled = truths.iter().filter(|t| t.is_some()).count() as u64;
        assert_eq!(r.confusion.iter().flatten().sum::<u64>(), labeled);
        assert_eq!(labeled + r.unseen_queries, n as u64);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), r.per_class[c].queries);
        }
    }

    #[test]
    fn latency_and_errors() {
        let queries = vec![Q(0, Some(0))];
        let opts = EvalOptions {
            measure_latency: true,
            ..Default::default()
        };
        let r = evaluate(&Fixed(vec![0]), &queries, 1, &opts).unwrap();
        assert!(r.mean_latency_ms.unwrap() >= 0.0);
        let empty: Vec<Q> = Vec::new();
        assert!(evaluate(&Fixed(vec![]), &empty, 1, &opts).is_err());
    }

    #[test]
    fn report_round_trip() {
        let pairs = vec![(Some(0), 0), (Some(1), 0), (None, 1), (Some(1), 1)];
        let r = report_from_predictions(
            &pairs,
            2,
            Some(0.123456789012345),
            serde_json::json!({"seed": 3}),
        )
        .unwrap();
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pair_summary() {
        let a = report_from_predictions(&[(Some(0), 0)], 1, None, Default::default()).unwrap();
        let b = report_from_predictions(
            &[(Some(0), 0), (None, 0), (None, 0)],
            1,
            None,
            Default::default(),
        )
        .unwrap();
        let (mean, pooled) = summarize_pairs(&[a, b]).unwrap();
        assert!((mean - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((pooled - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_cells_and_csv() {
        let grid = AblationGrid {
            graph: vec!["svsl".into()],
            variant: vec![ScoreKind::ReciprocalRank],
            edges: vec![true, false],
            seeds: vec![],
            attributes: crate::scenegraph::default_attributes(),
        };
        let cells = grid.cells().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].graph_kind(), GraphKind::EdgelessSvsl);

        let row = |edges| AblationRow {
            graph_kind: GraphKind::from_parts(false, edges),
            variant: ScoreKind::ReciprocalRank,
            edges,
            seed: 1,
            train_graphs: 10,
            test_queries: 5,
            unseen_queries: 0,
            top1_accuracy: 0.4,
            mean_latency_ms: None,
        };
        let csv = ablation_csv(&[row(true), row(false)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("graph_kind,variant,edges,seed"));
        assert!(lines[2].starts_with("edgeless-svsl,reciprocal-rank,false,1"));

        let bad = AblationGrid {
            graph: vec!["tree".into()],
            ..grid
        };
        assert!(bad.cells().is_err());
    }
}
