//! Model checkpoints: a manifest plus one SFIM file per named tensor.

use std::path::Path;

use satfusion_core::model::{FusionConfig, FusionModel};
use serde::{Deserialize, Serialize};

use crate::error::{at, IoError, Result};
use crate::scene_io::{create_dir, read_json, write_json};
use crate::sfim;

pub const FORMAT: &str = "satfusion-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub fusion: FusionConfig,
    /// Tensor names in model order; each is stored as `<name>.sfim`.
    pub tensors: Vec<String>,
    /// Free-form run information (training config, best epoch, ...).
    #[serde(default)]
    pub info: serde_json::Value,
}

pub fn save_checkpoint(model: &FusionModel<f32>, dir: &Path, info: serde_json::Value) -> Result<()> {
    create_dir(dir)?;
    let named = model.named_tensors();
    for (name, t) in &named {
        sfim::write_tensor(t, &dir.join(format!("{name}.sfim")))?;
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        version: 1,
        fusion: model.config().clone(),
        tensors: named.into_iter().map(|(n, _)| n).collect(),
        info,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(FusionModel<f32>, CheckpointManifest)> {
    let mpath = dir.join("manifest.json");
    let manifest: CheckpointManifest = read_json(&mpath)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(IoError::format(&mpath, format!("not a version 1 checkpoint ({} v{})", manifest.format, manifest.version)));
    }
    let mut model = FusionModel::new(manifest.fusion.clone(), 0).map_err(at(&mpath))?;
    let named = manifest
        .tensors
        .iter()
        .map(|n| Ok((n.clone(), sfim::read_tensor(&dir.join(format!("{n}.sfim")))?)))
        .collect::<Result<Vec<_>>>()?;
    model.load_named(&named).map_err(at(dir))?;
    Ok((model, manifest))
}
