use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{self, output_path, ConfigFile};
use super::{Cli, Command};
use crate::error::{Error, Result};
use crate::evalharness::{
    ablation_csv, evaluate, run_ablation, AblationGrid, Dataset, EvalOptions, TeacherBaseline,
};
use crate::gcn::{
    class_mapping, load_model, train, Checkpoint, GcnModel, ModelDims, ModelTags,
};
use crate::geoclass::{build_partition, PlacePartition};
use crate::io::{write_atomic, StagedWrites};
use crate::numkit::Rng;
use crate::pipeline::{self, GraphSpec, Split};
use crate::scenegraph::{
    load_frames, mvil_edges, write_frames, FrameRecord, GraphKind, GraphNode, SceneGraph,
};
use crate::synthworld::{generate_traversal, reference_world, WorldSpec};
use crate::teacher::{ClassScoreVector, ScoreKind, TeacherModel};

pub const META_FORMAT_VERSION: u32 = 1;

pub(super) fn dispatch(cli: &Cli, file: &ConfigFile) -> Result<()> {
    let config_path = cli.config.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::Synth {
            spec,
            reference,
            seed,
            out_dir,
        } => synth(spec.as_deref(), *reference, seed.or(file.seed), out_dir),
        Command::Partition {
            train,
            test,
            out,
            cell_size,
            min_images,
        } => {
            let cell_size = config::cell_size(*cell_size, file);
            let min_images = config::min_images(*min_images, file);
            let echo = json!({
                "command": "partition",
                "config_file": config_path,
                "train": train,
                "test": test,
                "cell_size": cell_size,
                "min_images": min_images,
            });
            cmd_partition(train, test, out, cell_size, min_images, echo)
        }
        Command::BuildTeacher {
            train,
            partition,
            out,
            roles,
        } => {
            let roles = roles.clone().or_else(|| file.roles.clone());
            cmd_build_teacher(train, partition, out, roles, config_path)
        }
        Command::Train {
            train: train_path,
            partition,
            teacher,
            out,
            model,
        } => {
            let spec = model.graph_spec(file)?;
            let tc = model.train_config(file)?;
            let echo = json!({
                "command": "train",
                "config_file": config_path,
                "train": train_path,
                "partition": partition,
                "teacher": teacher,
                "graph_spec": spec,
                "train_config": tc,
            });
            let partition = load_partition(partition)?;
            let teacher = load_teacher(teacher, &partition)?;
            let frames = load_frames(train_path)?;
            let graphs = pipeline::build_graphs(&frames, &partition, &teacher, &spec, Split::Train)?;
            log::info!("training on {} {} graphs", graphs.len(), spec.kind);
            let outcome = train(&graphs, partition.num_classes(), spec.model_tags(), &tc)?;
            let ckpt = Checkpoint::new(&outcome.model, tc.clone(), class_mapping(&partition), echo)?;

            let steps_per_epoch = graphs.len().div_ceil(tc.batch_size);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["step", "epoch", "loss"]).map_err(csv_err)?;
            for (step, loss) in outcome.loss_history.iter().enumerate() {
                w.serialize((step, step / steps_per_epoch, loss)).map_err(csv_err)?;
            }
            let loss_csv = w
                .into_inner()
                .map_err(|e| Error::Internal(format!("csv encoding failed: {}", e.error())))?;

            let out = output_path(out);
            let mut staged = StagedWrites::new();
            staged.stage(&out, ckpt.to_json()?.as_bytes())?;
            staged.stage(&loss_path(&out), &loss_csv)?;
            staged.commit()?;
            if let Some(last) = outcome.loss_history.last() {
                println!("trained {} graphs, final batch loss {last:.6}", graphs.len());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            test,
            partition,
            teacher,
            out,
            baseline_out,
            baseline_role,
            timing,
        } => {
            let timing = *timing || file.timing.unwrap_or(false);
            let role = config::baseline_role(baseline_role.clone(), file);
            let ckpt = load_model(checkpoint)?;
            let partition_doc = load_partition(partition)?;
            ckpt.check_partition(&partition_doc)?;
            let teacher_model = load_teacher(teacher, &partition_doc)?;
            let model = ckpt.model()?;
            let spec = spec_from_checkpoint(&ckpt)?;
            let frames = load_frames(test)?;
            let graphs =
                pipeline::build_graphs(&frames, &partition_doc, &teacher_model, &spec, Split::Test)?;
            let echo = json!({
                "command": "eval",
                "config_file": config_path,
                "checkpoint": checkpoint,
                "test": test,
                "partition": partition,
                "teacher": teacher,
                "graph_kind": spec.kind,
                "variant": spec.variant,
                "seed": ckpt.train_config.seed,
                "graph_spec": spec,
                "timing": timing,
            });
            let opts = EvalOptions {
                measure_latency: timing,
                config: echo.clone(),
            };
            let report = evaluate(&model, &graphs, partition_doc.num_classes(), &opts)?;
            let mut staged = StagedWrites::new();
            staged.stage(&output_path(out), report.to_json()?.as_bytes())?;
            println!(
                "gcn top-1 {:.4} ({} of {}, {} unseen)",
                report.top1_accuracy, report.num_correct, report.num_queries, report.unseen_queries
            );
            if let Some(bout) = baseline_out {
                let queries = pipeline::query_frames(&frames, &partition_doc, &spec)?;
                let baseline = TeacherBaseline {
                    teacher: &teacher_model,
                    role: role.clone(),
                };
                let mut becho = echo;
                becho["method"] = json!("teacher");
                becho["baseline_role"] = json!(role);
                let breport = evaluate(
                    &baseline,
                    &queries,
                    partition_doc.num_classes(),
                    &EvalOptions {
                        measure_latency: timing,
                        config: becho,
                    },
                )?;
                println!("teacher top-1 {:.4}", breport.top1_accuracy);
                staged.stage(&output_path(bout), breport.to_json()?.as_bytes())?;
            }
            staged.commit()
        }
        Command::Ablate {
            grid,
            train: train_path,
            test,
            partition,
            teacher,
            out,
            model,
            timing,
        } => {
            let timing = *timing || file.timing.unwrap_or(false);
            let grid_doc = load_grid(grid)?;
            let spec = model.graph_spec(file)?;
            let tc = model.train_config(file)?;
            let partition_doc = load_partition(partition)?;
            let teacher_model = load_teacher(teacher, &partition_doc)?;
            let train_frames = load_frames(train_path)?;
            let test_frames = load_frames(test)?;
            let data = Dataset {
                train: &train_frames,
                test: &test_frames,
                partition: &partition_doc,
                teacher: &teacher_model,
            };
            let rows = run_ablation(&data, &grid_doc, &tc, &spec, timing)?;
            let meta = json!({
                "format_version": META_FORMAT_VERSION,
                "run_config": {
                    "command": "ablate",
                    "config_file": config_path,
                    "grid_file": grid,
                    "grid": grid_doc,
                    "train": train_path,
                    "test": test,
                    "partition": partition,
                    "teacher": teacher,
                    "graph_spec": spec,
                    "train_config": tc,
                    "timing": timing,
                }
            });
            let out = output_path(out);
            let mut staged = StagedWrites::new();
            staged.stage(&out, ablation_csv(&rows)?.as_bytes())?;
            staged.stage(&sidecar(&out), pretty(&meta)?.as_bytes())?;
            staged.commit()?;
            for r in &rows {
                println!(
                    "{} {} seed {}: top-1 {:.4}",
                    r.graph_kind, r.variant, r.seed, r.top1_accuracy
                );
            }
            Ok(())
        }
        Command::BenchLatency {
            graphs,
            frames,
            attributes,
            classes,
            hidden,
            seed,
            out,
        } => {
            let bench = BenchSpec {
                graphs: *graphs,
                frames: *frames,
                attributes: *attributes,
                classes: *classes,
                hidden: *hidden,
                seed: *seed,
            };
            let result = bench_latency(&bench)?;
            let text = pretty(&result)?;
            println!("{text}");
            if let Some(path) = out {
                write_atomic(&output_path(path), text.as_bytes())?;
            }
            Ok(())
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv encoding failed: {e}"))
}

fn pretty(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// `<file>.config.json` next to a line-oriented artifact.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

/// `model.json` -> `model.loss.csv`.
pub fn loss_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.csv")
}

fn load_partition(path: &Path) -> Result<PlacePartition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PlacePartition::from_json(&text).map_err(|e| Error::load(path, e))
}

fn load_teacher(path: &Path, partition: &PlacePartition) -> Result<TeacherModel> {
    TeacherModel::load(path, partition.num_classes()).map_err(|e| match e {
        e @ Error::Io { .. } => e,
        e => Error::load(path, e),
    })
}

fn load_grid(path: &Path) -> Result<AblationGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let grid: AblationGrid = if has_extension(path, "json") {
        serde_json::from_str(&text).map_err(|e| Error::load(path, e))?
    } else {
        toml::from_str(&text).map_err(|e| Error::load(path, e))?
    };
    grid.cells()?;
    Ok(grid)
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Graph settings recorded at training time, falling back to the tags.
fn spec_from_checkpoint(ckpt: &Checkpoint) -> Result<GraphSpec> {
    let from_run = ckpt
        .run_config
        .get("graph_spec")
        .map(|v| serde_json::from_value::<GraphSpec>(v.clone()))
        .transpose()?;
    let spec = from_run.unwrap_or_else(|| GraphSpec {
        kind: ckpt.tags.graph_kind,
        variant: ckpt.tags.feature_variant,
        attributes: if ckpt.tags.attributes.is_empty() {
            GraphSpec::default().attributes
        } else {
            ckpt.tags.attributes.clone()
        },
        ..GraphSpec::default()
    });
    if spec.kind != ckpt.tags.graph_kind || spec.variant != ckpt.tags.feature_variant {
        return Err(Error::Config(
            "checkpoint graph settings disagree with its model tags".into(),
        ));
    }
    spec.validate()?;
    Ok(spec)
}

fn synth(spec_path: Option<&Path>, reference: bool, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let mut spec = match (spec_path, reference) {
        (_, true) => reference_world(seed.unwrap_or(0)),
        (Some(path), false) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: std::result::Result<WorldSpec, String> = if has_extension(path, "toml") {
                toml::from_str(&text).map_err(|e| e.to_string())
            } else {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, false) => return Err(Error::Argument("synth needs --spec or --reference".into())),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let dir = output_path(out_dir);
    let mut staged = StagedWrites::new();
    let mut files = Vec::new();
    for (i, season) in spec.seasons.iter().enumerate() {
        let frames = generate_traversal(&spec, i)?;
        let mut buf = Vec::new();
        write_frames(&frames, &mut buf)?;
        let name = format!("{}.jsonl", season.name);
        staged.stage(&dir.join(&name), &buf)?;
        files.push(name);
    }
    let meta = json!({
        "format_version": META_FORMAT_VERSION,
        "world": spec,
        "files": files,
        "svsl_regions": crate::scenegraph::SVSL_REGIONS
            .iter()
            .map(|(r, b)| json!({"role": r, "box": b}))
            .collect::<Vec<_>>(),
        "run_config": {
            "command": "synth",
            "spec": spec_path,
            "reference": reference,
            "seed": spec.seed,
        },
    });
    staged.stage(&dir.join("world.json"), pretty(&meta)?.as_bytes())?;
    staged.commit()?;
    println!("wrote {} seasons to {}", files.len(), dir.display());
    Ok(())
}

fn points(frames: &[FrameRecord]) -> Result<Vec<crate::geoclass::GeoPoint>> {
    frames.iter().map(FrameRecord::point).collect()
}

fn cmd_partition(
    train: &Path,
    test: &Path,
    out: &Path,
    cell_size: f64,
    min_images: usize,
    echo: Value,
) -> Result<()> {
    let train_frames = load_frames(train)?;
    let test_frames = load_frames(test)?;
    let partition = build_partition(
        &points(&train_frames)?,
        &points(&test_frames)?,
        cell_size,
        min_images,
    )?
    .with_run_config(echo);
    write_atomic(&output_path(out), partition.to_json()?.as_bytes())?;
    println!(
        "{} classes, {} excluded, {} unseen",
        partition.num_classes(),
        partition.excluded().len(),
        partition.unseen().len()
    );
    Ok(())
}

fn cmd_build_teacher(
    train: &Path,
    partition_path: &Path,
    out: &Path,
    roles: Option<Vec<String>>,
    config_path: Option<String>,
) -> Result<()> {
    let frames = load_frames(train)?;
    let partition = load_partition(partition_path)?;
    let roles = match roles {
        Some(r) => r,
        None => frames
            .first()
            .map(|f| f.descriptors.keys().cloned().collect())
            .unwrap_or_default(),
    };
    let teacher = pipeline::build_teacher(&frames, &partition, &roles)?;
    let mut buf = Vec::new();
    teacher.write_jsonl(&mut buf)?;
    let meta = json!({
        "format_version": META_FORMAT_VERSION,
        "num_classes": partition.num_classes(),
        "roles": roles,
        "run_config": {
            "command": "build-teacher",
            "config_file": config_path,
            "train": train,
            "partition": partition_path,
            "roles": roles,
        },
    });
    let out = output_path(out);
    let mut staged = StagedWrites::new();
    staged.stage(&out, &buf)?;
    staged.stage(&sidecar(&out), pretty(&meta)?.as_bytes())?;
    staged.commit()?;
    println!("teacher databases for {} roles", roles.len());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub graphs: usize,
    pub frames: usize,
    pub attributes: usize,
    pub classes: usize,
    pub hidden: usize,
    pub seed: u64,
}

/// Random reciprocal-rank MVIL graphs through a randomly initialized model.
/// Only classification is timed.
pub fn bench_latency(b: &BenchSpec) -> Result<Value> {
    if b.graphs == 0 || b.frames == 0 || b.attributes == 0 || b.classes < 2 || b.hidden == 0 {
        return Err(Error::Argument("benchmark sizes must be positive (classes >= 2)".into()));
    }
    let mut rng = Rng::new(b.seed);
    let dims = ModelDims {
        input: b.classes,
        hidden: b.hidden,
        classes: b.classes,
    };
    let tags = ModelTags {
        feature_variant: ScoreKind::ReciprocalRank,
        graph_kind: GraphKind::Mvil,
        attributes: (0..b.attributes).map(|a| format!("attr:{a}")).collect(),
        fc_bias: true,
    };
    let model = GcnModel::init(dims, tags, &mut rng)?;
    let edges = mvil_edges(b.frames, b.attributes);
    let mut graphs = Vec::with_capacity(b.graphs);
    for _ in 0..b.graphs {
        let nodes = (0..b.frames * b.attributes)
            .map(|i| {
                let mut ranks: Vec<f64> = (1..=b.classes).map(|r| r as f64).collect();
                rng.shuffle(&mut ranks);
                GraphNode {
                    role: format!("attr:{}", i % b.attributes),
                    feature: ClassScoreVector {
                        kind: ScoreKind::ReciprocalRank,
                        values: ranks.into_iter().map(|r| 1.0 / r).collect(),
                    },
                }
            })
            .collect();
        graphs.push(SceneGraph::new(nodes, edges.iter().copied(), None, GraphKind::Mvil)?);
    }
    // One untimed pass to fault in code and caches.
    model.predict(&graphs[0])?;
    let mut checksum = 0usize;
    let start = Instant::now();
    for g in &graphs {
        checksum += model.predict(g)?.0;
    }
    let total = start.elapsed().as_secs_f64() * 1e3;
    Ok(json!({
        "format_version": META_FORMAT_VERSION,
        "graphs": b.graphs,
        "frames": b.frames,
        "attributes": b.attributes,
        "nodes_per_graph": b.frames * b.attributes,
        "edges_per_graph": edges.len(),
        "classes": b.classes,
        "hidden": b.hidden,
        "seed": b.seed,
        "total_ms": total,
        "mean_latency_ms": total / b.graphs as f64,
        "prediction_checksum": checksum,
    }))
}
