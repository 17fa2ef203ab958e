//! Binary scene files and their CSV twin.
//!
//! Binary layout, little-endian: `b"PCIS"`, `u32` version (1), `u32` point
//! count N, `u32` class count C, `u32` instance count M, then N records of
//! six `f32` (x, y, z, r, g, b), an `i32` semantic label and an `i32`
//! instance id. The scene id is the file stem.

use std::path::{Path, PathBuf};

use pcis_core::{validate_scene, Scene};

use crate::error::{CliError, CliResult};

pub const SCENE_MAGIC: &[u8; 4] = b"PCIS";
pub const SCENE_VERSION: u32 = 1;
pub const SCENE_EXTENSION: &str = "pcis";
const HEADER_LEN: usize = 20;
const RECORD_LEN: usize = 32;
pub const CSV_HEADER: &str = "x,y,z,r,g,b,semantic,instance";

pub fn encode_scene(scene: &Scene) -> CliResult<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| CliError::data(format!("{what} {v} exceeds the format limit")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * scene.len());
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(scene.len(), "point count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(scene.num_classes, "class count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(scene.num_instances(), "instance count")?.to_le_bytes());
    for i in 0..scene.len() {
        for v in scene.coords[i].iter().chain(&scene.colors[i]) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&scene.semantic_labels[i].to_le_bytes());
        out.extend_from_slice(&scene.instance_ids[i].to_le_bytes());
    }
    Ok(out)
}

fn word(bytes: &[u8], at: usize) -> [u8; 4] {
    bytes[at..at + 4].try_into().expect("4-byte slice")
}

pub fn decode_scene(id: &str, bytes: &[u8]) -> CliResult<Scene> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != SCENE_MAGIC {
        return Err(CliError::data("not a scene file (bad magic)"));
    }
    let version = u32::from_le_bytes(word(bytes, 4));
    if version != SCENE_VERSION {
        return Err(CliError::data(format!("unsupported scene format version {version}")));
    }
    let n = u32::from_le_bytes(word(bytes, 8)) as usize;
    let num_classes = u32::from_le_bytes(word(bytes, 12)) as usize;
    let m = u32::from_le_bytes(word(bytes, 16)) as usize;
    let expected = n.checked_mul(RECORD_LEN).and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(CliError::data(format!(
            "header declares {n} points but file holds {} bytes",
            bytes.len()
        )));
    }
    let mut scene = Scene {
        id: id.to_string(),
        coords: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        semantic_labels: Vec::with_capacity(n),
        instance_ids: Vec::with_capacity(n),
        num_classes,
    };
    for i in 0..n {
        let base = HEADER_LEN + i * RECORD_LEN;
        let f: [f64; 6] = std::array::from_fn(|k| f32::from_le_bytes(word(bytes, base + 4 * k)) as f64);
        scene.coords.push([f[0], f[1], f[2]]);
        scene.colors.push([f[3], f[4], f[5]]);
        scene.semantic_labels.push(i32::from_le_bytes(word(bytes, base + 24)));
        scene.instance_ids.push(i32::from_le_bytes(word(bytes, base + 28)));
    }
    check(&scene)?;
    if scene.num_instances() != m {
        return Err(CliError::data(format!(
            "header declares {m} instances, records hold {}",
            scene.num_instances()
        )));
    }
    Ok(scene)
}

fn check(scene: &Scene) -> CliResult<()> {
    match validate_scene(scene).first() {
        None => Ok(()),
        Some(v) => Err(CliError::data(format!("invalid scene: {v}"))),
    }
}

pub fn encode_csv(scene: &Scene) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for i in 0..scene.len() {
        let [x, y, z] = scene.coords[i];
        let [r, g, b] = scene.colors[i];
        s.push_str(&format!(
            "{x},{y},{z},{r},{g},{b},{},{}\n",
            scene.semantic_labels[i], scene.instance_ids[i]
        ));
    }
    s
}

/// Parses the CSV twin. The class count is `num_classes` when given,
/// otherwise one past the largest label.
pub fn decode_csv(id: &str, text: &str, num_classes: Option<usize>) -> CliResult<Scene> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(CliError::data(format!("missing CSV header {CSV_HEADER:?}"))),
    }
    let mut scene = Scene {
        id: id.to_string(),
        coords: Vec::new(),
        colors: Vec::new(),
        semantic_labels: Vec::new(),
        instance_ids: Vec::new(),
        num_classes: 0,
    };
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::data(format!("line {}: expected 8 numeric fields", n + 1));
        if fields.len() != 8 {
            return Err(bad());
        }
        let f: Vec<f64> = fields[..6]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        scene.coords.push([f[0], f[1], f[2]]);
        scene.colors.push([f[3], f[4], f[5]]);
        scene.semantic_labels.push(fields[6].parse().map_err(|_| bad())?);
        scene.instance_ids.push(fields[7].parse().map_err(|_| bad())?);
    }
    let max_label = scene.semantic_labels.iter().copied().max().unwrap_or(-1);
    scene.num_classes = num_classes.unwrap_or((max_label + 1).max(0) as usize);
    check(&scene)?;
    Ok(scene)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Reads a binary or CSV scene, chosen by extension.
pub fn read_scene(path: &Path, num_classes: Option<usize>) -> CliResult<Scene> {
    let id = stem(path);
    let result = if path.extension().is_some_and(|e| e == "csv") {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        decode_csv(&id, &text, num_classes)
    } else {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        decode_scene(&id, &bytes)
    };
    result.map_err(|e| e.at(path))
}

pub fn write_scene(path: &Path, scene: &Scene) -> CliResult<()> {
    let bytes = if path.extension().is_some_and(|e| e == "csv") {
        encode_csv(scene).into_bytes()
    } else {
        encode_scene(scene)?
    };
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn is_scene_path(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == SCENE_EXTENSION || e == "csv")
}

/// Scene files named by `inputs`: files are taken as given, directories
/// contribute their scene files in name order.
pub fn collect_scene_paths(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| CliError::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_scene_path(p))
                .collect();
            found.sort();
            out.extend(found);
        } else if input.is_file() {
            out.push(input.clone());
        } else {
            return Err(CliError::data(format!("{}: no such file or directory", input.display())));
        }
    }
    Ok(out)
}

pub fn read_scenes(inputs: &[PathBuf], num_classes: Option<usize>) -> CliResult<Vec<Scene>> {
    collect_scene_paths(inputs)?
        .iter()
        .map(|p| read_scene(p, num_classes))
        .collect()
}
