//! File formats, scene and checkpoint storage, reports, visual exports and the
//! command-line driver around [`satfusion_core`].

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod export;
pub mod redundancy;
pub mod report;
pub mod scene_io;
pub mod sfim;
pub mod synth;

pub use error::{IoError, Result};
