//! Full-reference image quality metrics.
//!
//! All metrics accumulate in `f64` regardless of the tensor scalar type. The
//! differentiable counterparts used for training live in [`crate::loss`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::ops;
use crate::real::Real;
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Bands whose ground-truth mean is below this magnitude are skipped by ERGAS.
pub const ERGAS_MIN_BAND_MEAN: f64 = 1e-6;

/// Structural-similarity window and stabilizer constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, peak: 1.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak) * (self.k1 * self.peak)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak) * (self.k2 * self.peak)
    }
}

fn pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    a.check_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Empty(String::from("metric on empty tensors")));
    }
    Ok(())
}

pub fn mae<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    pair(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs()).sum();
    Ok(s / a.len() as f64)
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    pair(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * libm::log10(peak * peak / mse)).min(PSNR_CAP_DB)
}

/// Mean structural similarity with the standard 11x11, sigma 1.5 Gaussian window.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean structural similarity over all valid window positions and channels.
pub fn ssim_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<f64> {
    pair(a, b)?;
    let (h, w, _) = a.hwc()?;
    if h < params.window || w < params.window {
        return Err(shape_err!("image {h}x{w} smaller than the {0}x{0} SSIM window", params.window));
    }
    let win = ops::gaussian_window::<f64>(params.window, params.sigma)?;
    let a: Tensor<f64> = a.cast();
    let b: Tensor<f64> = b.cast();
    let mu_a = ops::filter_valid(&a, &win)?;
    let mu_b = ops::filter_valid(&b, &win)?;
    let aa = ops::filter_valid(&a.zip_map(&a, |x, y| x * y)?, &win)?;
    let bb = ops::filter_valid(&b.zip_map(&b, |x, y| x * y)?, &win)?;
    let ab = ops::filter_valid(&a.zip_map(&b, |x, y| x * y)?, &win)?;
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = aa.data()[i] - ma * ma;
        let vb = bb.data()[i] - mb * mb;
        let cov = ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean per-pixel spectral angle in radians; zero-vector pixels count as 0.
pub fn sam_radians<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    pair(a, b)?;
    let (h, w, c) = a.hwc()?;
    let total: f64 = (0..h * w)
        .map(|p| pixel_spectral_angle(&a.data()[p * c..][..c], &b.data()[p * c..][..c]).unwrap_or(0.0))
        .sum();
    Ok(total / (h * w) as f64)
}

/// Angle between two spectra in radians, `None` if either is all zeros.
///
/// Uses `2 atan2(|u - v|, |u + v|)` on the unit vectors, which stays
/// accurate near 0 where `acos` of the cosine loses half its digits.
pub fn pixel_spectral_angle<T: Real>(a: &[T], b: &[T]) -> Option<f64> {
    let na = libm::sqrt(a.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (mut dif, mut sum) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (u, v) = (x.as_f64() / na, y.as_f64() / nb);
        dif += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * libm::atan2(libm::sqrt(dif), libm::sqrt(sum)))
}

/// Mean per-pixel spectral angle in degrees.
pub fn sam<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(sam_radians(a, b)?.to_degrees())
}

/// Relative dimensionless global error with resolution ratio `1 / gamma`.
pub fn ergas<T: Real>(sr: &Tensor<T>, gt: &Tensor<T>, gamma: usize) -> Result<f64> {
    pair(sr, gt)?;
    if gamma == 0 {
        return Err(param_err!("ergas needs gamma >= 1"));
    }
    let (h, w, c) = gt.hwc()?;
    let n = (h * w) as f64;
    let mut acc = 0.0;
    let mut used = 0usize;
    for k in 0..c {
        let (mut se, mut sum) = (0.0, 0.0);
        for p in 0..h * w {
            let (s, g) = (sr.data()[p * c + k].as_f64(), gt.data()[p * c + k].as_f64());
            se += (s - g) * (s - g);
            sum += g;
        }
        let mu = sum / n;
        if mu.abs() < ERGAS_MIN_BAND_MEAN {
            log::warn!("ergas: skipping band {k} with near-zero mean {mu:e}");
            continue;
        }
        acc += (se / n) / (mu * mu);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(String::from("every band has a near-zero mean")));
    }
    Ok(100.0 / gamma as f64 * libm::sqrt(acc / used as f64))
}

/// One row of a [`MetricReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
    pub mae: f64,
    pub mse: f64,
}

impl MetricRow {
    /// All metrics of `sr` against `gt`.
    pub fn compute<T: Real>(id: impl Into<String>, sr: &Tensor<T>, gt: &Tensor<T>, gamma: usize) -> Result<Self> {
        let m = mse(sr, gt)?;
        Ok(MetricRow {
            id: id.into(),
            psnr: psnr_from_mse(m, 1.0),
            ssim: ssim(sr, gt)?,
            sam: sam(sr, gt)?,
            ergas: ergas(sr, gt, gamma)?,
            mae: mae(sr, gt)?,
            mse: m,
        })
    }
}

/// Per-scene metric rows with their arithmetic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Unit of the `sam` column.
    pub sam_unit: String,
    pub rows: Vec<MetricRow>,
    pub aggregate: MetricRow,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty(String::from("metric report without rows")));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let aggregate = MetricRow {
            id: String::from("mean"),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            sam: mean(|r| r.sam),
            ergas: mean(|r| r.ergas),
            mae: mean(|r| r.mae),
            mse: mean(|r| r.mse),
        };
        Ok(MetricReport { sam_unit: String::from("degrees"), rows, aggregate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    #[test]
    fn mae_mse_hand_cases() {
        let a = Tensor::image(1, 2, 1, vec![0.0f64, 0.5]).unwrap();
        let b = Tensor::image(1, 2, 1, vec![0.5f64, 1.0]).unwrap();
        assert_eq!(mae(&a, &b).unwrap(), 0.5);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let z = Tensor::<f32>::zeros(Shape::image(2, 2, 2));
        let o = Tensor::full(Shape::image(2, 2, 2), 1.0f32);
        assert_eq!((mae(&z, &o).unwrap(), mse(&z, &o).unwrap()), (1.0, 1.0));
        assert!(mse(&z, &Tensor::zeros(Shape::image(2, 2, 1))).is_err());
    }

    #[test]
    fn psnr_cases() {
        let z = Tensor::<f32>::zeros(Shape::image(2, 2, 1));
        let o = Tensor::full(Shape::image(2, 2, 1), 1.0f32);
        assert_eq!(psnr(&z, &z, 1.0).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&z, &o, 1.0).unwrap(), 0.0);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sam_cases() {
        let a = Tensor::image(1, 1, 3, vec![1.0f64, 0.0, 0.0]).unwrap();
        let b = Tensor::image(1, 1, 3, vec![0.0f64, 1.0, 0.0]).unwrap();
        assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);
        let c = Tensor::image(1, 1, 2, vec![1.0f64, 1.0]).unwrap();
        let d = Tensor::image(1, 1, 2, vec![1.0f64, 0.0]).unwrap();
        assert!((sam(&c, &d).unwrap() - 45.0).abs() < 1e-12);
        let zero = Tensor::<f64>::zeros(Shape::image(1, 1, 2));
        assert_eq!(sam(&zero, &d).unwrap(), 0.0);
    }

    #[test]
    fn ergas_cases() {
        // RMSE equal to the band mean gives 100 / gamma.
        let gt = Tensor::image(1, 2, 1, vec![1.0f64, 1.0]).unwrap();
        let sr = Tensor::image(1, 2, 1, vec![2.0f64, 0.0]).unwrap();
        assert!((ergas(&sr, &gt, 4).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(ergas(&gt, &gt, 4).unwrap(), 0.0);
        let z = Tensor::<f64>::zeros(Shape::image(2, 2, 2));
        assert!(matches!(ergas(&z, &z, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f32>::zeros(Shape::image(8, 8, 1));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_aggregate_is_mean() {
        let row = |id: &str, p: f64| MetricRow { id: id.into(), psnr: p, ssim: 0.5, sam: 1.0, ergas: 2.0, mae: 0.1, mse: 0.01 };
        let r = MetricReport::from_rows(vec![row("a", 10.0), row("b", 20.0)]).unwrap();
        assert_eq!(r.aggregate.psnr, 15.0);
        assert!(MetricReport::from_rows(vec![]).is_err());
    }
}
