//! Per-scene prediction text files and colored point export.
//!
//! For scene id `S` the output directory holds `S.semantic.txt` (one class
//! per line), `S.embeddings.txt` (one space-separated embedding per line),
//! `S.clusters.txt` (one cluster id per line, `-1` for discarded points) and
//! `S.instances.txt` (one instance per line: class, confidence, then member
//! point indices). Reals use shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use pcis_core::pipeline::SceneInference;
use pcis_core::{InstancePrediction, Scene};

use crate::error::{CliError, CliResult};

pub const SEMANTIC_SUFFIX: &str = ".semantic.txt";
pub const EMBEDDINGS_SUFFIX: &str = ".embeddings.txt";
pub const CLUSTERS_SUFFIX: &str = ".clusters.txt";
pub const INSTANCES_SUFFIX: &str = ".instances.txt";

pub fn prediction_path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}{suffix}"))
}

fn lines<T: ToString>(values: &[T]) -> String {
    values.iter().map(|v| format!("{}\n", v.to_string())).collect()
}

pub fn format_embeddings(e: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in e.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn format_instances(instances: &[InstancePrediction]) -> String {
    let mut s = String::new();
    for p in instances {
        write!(s, "{} {}", p.class_label, p.confidence).expect("write to string");
        for i in &p.point_indices {
            write!(s, " {i}").expect("write to string");
        }
        s.push('\n');
    }
    s
}

pub fn parse_instances(text: &str) -> CliResult<Vec<InstancePrediction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::data(format!("line {}: expected class, confidence and point indices", n + 1));
        let mut it = line.split_whitespace();
        let class_label = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let confidence: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let point_indices: Vec<usize> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
        if point_indices.is_empty() || !confidence.is_finite() {
            return Err(bad());
        }
        out.push(InstancePrediction { point_indices, class_label, confidence });
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> CliResult<Vec<usize>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| l.trim().parse().map_err(|_| CliError::data(format!("line {}: invalid class label", n + 1))))
        .collect()
}

fn write(path: PathBuf, text: &str) -> CliResult<()> {
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn write_inference(dir: &Path, id: &str, inf: &SceneInference) -> CliResult<()> {
    write(prediction_path(dir, id, SEMANTIC_SUFFIX), &lines(&inf.semantic))?;
    write(prediction_path(dir, id, EMBEDDINGS_SUFFIX), &format_embeddings(&inf.refined_embeddings))?;
    write(prediction_path(dir, id, CLUSTERS_SUFFIX), &lines(&inf.clusters.assignments))?;
    write(prediction_path(dir, id, INSTANCES_SUFFIX), &format_instances(&inf.instances))
}

/// Semantic labels and instances of a scene's prediction files.
pub fn read_predictions(dir: &Path, id: &str) -> CliResult<(Vec<usize>, Vec<InstancePrediction>)> {
    let read = |suffix: &str| {
        let p = prediction_path(dir, id, suffix);
        std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e)).map(|t| (p, t))
    };
    let (sp, semantic) = read(SEMANTIC_SUFFIX)?;
    let (ip, instances) = read(INSTANCES_SUFFIX)?;
    Ok((
        parse_labels(&semantic).map_err(|e| e.at(&sp))?,
        parse_instances(&instances).map_err(|e| e.at(&ip))?,
    ))
}

/// Scene ids with an instances file in `dir`, sorted.
pub fn prediction_ids(dir: &Path) -> CliResult<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(INSTANCES_SUFFIX)).map(String::from))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Distinct, stable color per cluster id; gray for `-1`.
fn palette(cluster: i32) -> [u8; 3] {
    if cluster < 0 {
        return [128, 128, 128];
    }
    let h = pcis_core::rng::splitmix64(cluster as u64);
    [(h & 0xff) as u8 | 0x30, ((h >> 8) & 0xff) as u8 | 0x30, ((h >> 16) & 0xff) as u8 | 0x30]
}

/// ASCII PLY point cloud colored by cluster assignment.
pub fn format_ply(scene: &Scene, assignments: &[i32]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\ncomment instances of {}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        scene.id,
        scene.len()
    );
    for (p, &a) in scene.coords.iter().zip(assignments) {
        let [r, g, b] = palette(a);
        writeln!(s, "{} {} {} {r} {g} {b}", p[0] as f32, p[1] as f32, p[2] as f32).expect("write to string");
    }
    s
}
