//! Parallel scene synthesis.

use rayon::prelude::*;
use satfusion_core::wald::{self, BaseScene, SceneSet, SetConfig};
use satfusion_core::Result;

/// Same result as [`wald::synthesize_set`], with scenes built concurrently.
///
/// Every scene draws from its own `(seed, index)` stream, so the output does
/// not depend on scheduling.
pub fn synthesize_set_parallel(bases: &[BaseScene], cfg: &SetConfig) -> Result<SceneSet> {
    let scenes = (0..bases.len()).into_par_iter().map(|i| wald::synthesize_indexed(bases, cfg, i)).collect::<Result<Vec<_>>>()?;
    let splits = wald::assign_splits(scenes.len(), cfg.seed, cfg.val_fraction, cfg.test_fraction)?;
    SceneSet::new(scenes, splits)
}
