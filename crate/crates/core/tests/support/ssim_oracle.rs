//! Brute-force SSIM used as an independent oracle.

use satfusion_core::Tensor;

/// SSIM by explicit per-window weighted statistics (two-pass variance).
pub fn ssim_brute(a: &Tensor<f64>, b: &Tensor<f64>, win: usize, sigma: f64) -> f64 {
    let half = (win / 2) as f64;
    let raw: Vec<f64> = (0..win).map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    let g: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let (h, w, c) = a.hwc().unwrap();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for y in 0..=h - win {
        for x in 0..=w - win {
            for ch in 0..c {
                let wt = |i: usize, j: usize| g[i] * g[j];
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        ma += wt(i, j) * a.at(y + i, x + j, ch);
                        mb += wt(i, j) * b.at(y + i, x + j, ch);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let (da, db) = (a.at(y + i, x + j, ch) - ma, b.at(y + i, x + j, ch) - mb);
                        va += wt(i, j) * da * da;
                        vb += wt(i, j) * db * db;
                        cov += wt(i, j) * da * db;
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}
