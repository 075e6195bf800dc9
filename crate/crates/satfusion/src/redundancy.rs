//! Storage comparison between multi-frame inputs and the fused output.
//!
//! Sizes count pixel-channel cells. Inputs are `T` low-resolution frames of
//! `C_ms` bands plus one full-resolution pan band per scene; the output is one
//! full-resolution `C_ms`-band image per scene.

use serde::{Deserialize, Serialize};

use satfusion_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redundancy {
    pub d_input: u128,
    pub d_output: u128,
    /// `d_input - d_output`.
    pub difference: i128,
}

fn check(n: u64, h: u64, w: u64, gamma: u64, c_ms: u64) -> Result<(), Error> {
    if [n, h, w, gamma, c_ms].contains(&0) {
        return Err(Error::Parameter(String::from("redundancy: every count must be >= 1")));
    }
    if h % gamma != 0 || w % gamma != 0 {
        return Err(Error::Parameter(format!("redundancy: gamma {gamma} does not divide {h}x{w}")));
    }
    Ok(())
}

pub fn redundancy(n: u64, t: u64, h: u64, w: u64, gamma: u64, c_ms: u64) -> Result<Redundancy, Error> {
    check(n, h, w, gamma, c_ms)?;
    if t == 0 {
        return Err(Error::Parameter(String::from("redundancy: T must be >= 1")));
    }
    let (n, t, h, w, g, c) = (n as u128, t as u128, h as u128, w as u128, gamma as u128, c_ms as u128);
    let d_input = n * (t * (h / g) * (w / g) * c + h * w);
    let d_output = n * h * w * c;
    Ok(Redundancy { d_input, d_output, difference: d_input as i128 - d_output as i128 })
}

/// Smallest `T` for which the inputs take more cells than the output.
pub fn break_even_t(n: u64, h: u64, w: u64, gamma: u64, c_ms: u64) -> Result<u64, Error> {
    check(n, h, w, gamma, c_ms)?;
    let (h, w, g, c) = (h as u128, w as u128, gamma as u128, c_ms as u128);
    // T * (h/g) * (w/g) * c > h * w * (c - 1)
    let per_frame = (h / g) * (w / g) * c;
    let t = h * w * (c - 1) / per_frame + 1;
    u64::try_from(t).map_err(|_| Error::Parameter(String::from("break-even T overflows u64")))
}
