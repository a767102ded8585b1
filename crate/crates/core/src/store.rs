//! On-disk layout of scene sets:
//!
//! ```text
//! <dir>/scenes/<scene>.json   scene documents
//! <dir>/truth/<scene>.json    oracle program and mask per object (procgen only)
//! <dir>/cases/<case>.json     evaluation cases
//! <dir>/annotations/<case>/    annotation records written by the server
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{OracleMasks, SceneSet};
use crate::dsl::PlacementProgram;
use crate::eval::{AnnotationRecord, EvalCase, EvalError};
use crate::mask::{MaskError, MaskFile, PlacementMask};
use crate::procgen::{GeneratedScene, GroundTruth};
use crate::scene::{load_scene, serialize_scene, Scene, SceneConfig, SceneError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Scene { path: PathBuf, source: SceneError },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Write via a sibling temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

/// `*.json` files of a directory, sorted by name.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthEntry {
    object: String,
    program: PlacementProgram,
    mask: MaskFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    objects: Vec<TruthEntry>,
}

pub fn save_scene(dir: &Path, id: &str, scene: &Scene) -> Result<(), StoreError> {
    write_atomic(&dir.join("scenes").join(format!("{id}.json")), (serialize_scene(scene) + "\n").as_bytes())
}

pub fn save_generated(dir: &Path, scenes: &[(String, GeneratedScene)]) -> Result<(), StoreError> {
    for (id, g) in scenes {
        save_scene(dir, id, &g.scene)?;
        let truth = TruthFile {
            objects: g
                .truth
                .iter()
                .map(|t| TruthEntry {
                    object: t.object_id.clone(),
                    program: t.program.clone(),
                    mask: t.mask.to_file(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&truth).expect("truth serializes");
        write_atomic(&dir.join("truth").join(format!("{id}.json")), (text + "\n").as_bytes())?;
    }
    Ok(())
}

pub fn load_scenes(dir: &Path, cfg: &SceneConfig) -> Result<SceneSet, StoreError> {
    let mut out = SceneSet::new();
    for path in json_files(&dir.join("scenes"))? {
        let bytes = fs::read(&path).map_err(io(&path))?;
        let scene = load_scene(&bytes, cfg).map_err(|source| StoreError::Scene { path: path.clone(), source })?;
        out.insert(stem(&path), scene);
    }
    Ok(out)
}

/// Scenes with their oracle truth, in id order.
pub fn load_generated(dir: &Path, cfg: &SceneConfig) -> Result<Vec<(String, GeneratedScene)>, StoreError> {
    let scenes = load_scenes(dir, cfg)?;
    let mut out = Vec::with_capacity(scenes.len());
    for (id, scene) in scenes {
        let path = dir.join("truth").join(format!("{id}.json"));
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let file: TruthFile = serde_json::from_str(&text).map_err(|e| StoreError::Format { path: path.clone(), msg: e.to_string() })?;
        let mut truth = Vec::with_capacity(file.objects.len());
        for t in file.objects {
            truth.push(GroundTruth {
                object_id: t.object,
                program: t.program,
                mask: PlacementMask::from_file(&t.mask)?,
            });
        }
        out.push((id, GeneratedScene { scene, truth }));
    }
    Ok(out)
}

pub fn load_oracle(dir: &Path, cfg: &SceneConfig) -> Result<OracleMasks, StoreError> {
    let gens = load_generated(dir, cfg)?;
    Ok(crate::bootstrap::oracle_from_generated(gens.iter().map(|(id, g)| (id.as_str(), g))))
}

pub fn save_cases(dir: &Path, cases: &[EvalCase]) -> Result<(), StoreError> {
    for c in cases {
        write_atomic(&dir.join("cases").join(format!("{}.json", c.id)), (c.to_json() + "\n").as_bytes())?;
    }
    Ok(())
}

pub fn load_cases(dir: &Path, cfg: &SceneConfig) -> Result<Vec<EvalCase>, StoreError> {
    let mut out = Vec::new();
    for path in json_files(&dir.join("cases"))? {
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        out.push(EvalCase::from_json(&text, cfg)?);
    }
    Ok(out)
}

/// Annotation records stored under `dir/annotations/<case>/*.json`, in path order.
/// The rasterized mask kept next to each record is recomputed on use and ignored here.
pub fn load_annotations(dir: &Path) -> Result<Vec<AnnotationRecord>, StoreError> {
    let root = dir.join("annotations");
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut cases: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(io(&root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    cases.sort();
    let mut out = Vec::new();
    for case in cases {
        for path in json_files(&case)? {
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| StoreError::Format { path: path.clone(), msg: e.to_string() })?;
            if let Some(obj) = value.as_object_mut() {
                obj.remove("mask");
            }
            out.push(serde_json::from_value(value).map_err(|e| StoreError::Format { path: path.clone(), msg: e.to_string() })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecConfig;
    use crate::procgen::{generate_dataset, scene_id, Grammar};

    #[test]
    fn generated_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gens = generate_dataset(&Grammar::default_bedroom(), 2, 4, &SceneConfig::default(), &ExecConfig::default()).unwrap();
        let named: Vec<(String, GeneratedScene)> = gens.into_iter().enumerate().map(|(i, g)| (scene_id(i), g)).collect();
        save_generated(dir.path(), &named).unwrap();
        let back = load_generated(dir.path(), &SceneConfig::default()).unwrap();
        assert_eq!(back, named);
    }
}
