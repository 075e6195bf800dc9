//! Scene directories and scene-set layout.
//!
//! A scene lives in `scene_<id>/` with `manifest.json`, `lrms_00.sfim`, ...,
//! `pan.sfim` and `gt.sfim`. A scene set is a directory of scene directories
//! plus `set.json` listing them in order.

use std::fs;
use std::path::{Path, PathBuf};

use satfusion_core::wald::{BaseScene, FrameDraw, PerturbationSpec, Scene, SceneMeta, SceneSet, Split};
use serde::{Deserialize, Serialize};

use crate::error::{at, IoError, Result};
use crate::sfim;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub id: String,
    pub gamma: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub source_id: String,
    #[serde(default)]
    pub split: Option<Split>,
    pub lrms: Vec<String>,
    pub pan: String,
    pub gt: String,
    pub source_hw: (usize, usize),
    pub blur_sigma: f64,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub draws: Vec<FrameDraw>,
}

impl SceneManifest {
    fn meta(&self) -> SceneMeta {
        SceneMeta {
            gamma: self.gamma,
            frames: self.frames,
            epsilon: self.epsilon,
            seed: self.seed,
            source_id: self.source_id.clone(),
            source_hw: self.source_hw,
            blur_sigma: self.blur_sigma,
            perturbation: self.perturbation,
            draws: self.draws.clone(),
        }
    }
}

pub fn frame_name(t: usize) -> String {
    format!("lrms_{t:02}.sfim")
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::json(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

/// Writes `scene` to `parent/scene_<id>` and returns that directory.
pub fn save_scene(scene: &Scene, parent: &Path, id: &str, split: Option<Split>) -> Result<PathBuf> {
    let dir = parent.join(format!("scene_{id}"));
    create_dir(&dir)?;
    let m = &scene.meta;
    let manifest = SceneManifest {
        id: id.to_string(),
        gamma: m.gamma,
        frames: scene.lrms.len(),
        epsilon: m.epsilon,
        seed: m.seed,
        source_id: m.source_id.clone(),
        split,
        lrms: (0..scene.lrms.len()).map(frame_name).collect(),
        pan: String::from("pan.sfim"),
        gt: String::from("gt.sfim"),
        source_hw: m.source_hw,
        blur_sigma: m.blur_sigma,
        perturbation: m.perturbation,
        draws: m.draws.clone(),
    };
    for (f, name) in scene.lrms.iter().zip(&manifest.lrms) {
        sfim::write_tensor(f, &dir.join(name))?;
    }
    sfim::write_tensor(&scene.pan, &dir.join(&manifest.pan))?;
    sfim::write_tensor(&scene.gt, &dir.join(&manifest.gt))?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

/// Loads a scene directory, checking the manifest against the files present.
pub fn load_scene(dir: &Path) -> Result<(Scene, SceneManifest)> {
    let mpath = dir.join("manifest.json");
    let manifest: SceneManifest = read_json(&mpath)?;
    if manifest.lrms.len() != manifest.frames {
        return Err(IoError::format(&mpath, format!("T = {} but {} frame files listed", manifest.frames, manifest.lrms.len())));
    }
    let on_disk = fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name();
            let n = n.to_string_lossy();
            n.starts_with("lrms_") && n.ends_with(".sfim")
        })
        .count();
    if on_disk != manifest.frames {
        return Err(IoError::format(dir, format!("T = {} but {on_disk} frame files present", manifest.frames)));
    }
    let lrms = manifest.lrms.iter().map(|n| sfim::read_tensor(&dir.join(n))).collect::<Result<Vec<_>>>()?;
    let pan = sfim::read_tensor(&dir.join(&manifest.pan))?;
    let gt = sfim::read_tensor(&dir.join(&manifest.gt))?;
    let scene = Scene { lrms, pan, gt, meta: manifest.meta() };
    scene.validate().map_err(at(dir))?;
    Ok((scene, manifest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub dir: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    pub scenes: Vec<SetEntry>,
}

/// Writes every scene of `set` under `dir` with zero-padded ids.
pub fn save_set(set: &SceneSet, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, (scene, split)) in set.scenes.iter().zip(&set.splits).enumerate() {
        let id = format!("{i:04}");
        let path = save_scene(scene, dir, &id, Some(*split))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        entries.push(SetEntry { dir: name, split: *split });
    }
    write_json(&dir.join("set.json"), &SetManifest { scenes: entries })
}

/// Loads a scene set; without `set.json`, every `scene_*` directory in name
/// order, split taken from its manifest (train when absent).
pub fn load_set(dir: &Path) -> Result<SceneSet> {
    let list = dir.join("set.json");
    let entries: Vec<(PathBuf, Option<Split>)> = if list.exists() {
        let m: SetManifest = read_json(&list)?;
        m.scenes.into_iter().map(|e| (dir.join(e.dir), Some(e.split))).collect()
    } else {
        scene_dirs(dir)?.into_iter().map(|p| (p, None)).collect()
    };
    if entries.is_empty() {
        return Err(IoError::format(dir, "no scenes found"));
    }
    let mut scenes = Vec::with_capacity(entries.len());
    let mut splits = Vec::with_capacity(entries.len());
    for (path, split) in entries {
        let (scene, manifest) = load_scene(&path)?;
        splits.push(split.or(manifest.split).unwrap_or(Split::Train));
        scenes.push(scene);
    }
    SceneSet::new(scenes, splits).map_err(at(dir))
}

fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_")))
        .collect();
    out.sort();
    Ok(out)
}

/// Clean source pairs from `dir/<id>/{gt.sfim, pan.sfim}`, in id order.
pub fn load_bases(dir: &Path) -> Result<Vec<BaseScene>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("gt.sfim").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(IoError::format(dir, "no <id>/gt.sfim source scenes found"));
    }
    subdirs
        .iter()
        .map(|p| {
            let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(BaseScene { id, gt: sfim::read_tensor(&p.join("gt.sfim"))?, pan: sfim::read_tensor(&p.join("pan.sfim"))? })
        })
        .collect()
}
