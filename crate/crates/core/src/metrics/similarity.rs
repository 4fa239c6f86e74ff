use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::types::GrayImage;

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(MetricError::SsimParams(format!("window {} must be odd and >= 3", self.window)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(MetricError::SsimParams("k1, k2 and L must be positive".into()));
        }
        Ok(())
    }
}

/// Mean SSIM over every `window x window` position (stride 1, uniform
/// weights, population moments).
pub fn ssim(x: &GrayImage, y: &GrayImage, params: &SsimParams) -> Result<f64, MetricError> {
    params.validate()?;
    if x.height != y.height || x.width != y.width {
        return Err(MetricError::Shape(format!(
            "{}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let win = params.window;
    if x.height < win || x.width < win {
        return Err(MetricError::WindowTooLarge {
            height: x.height,
            width: x.width,
            window: win,
        });
    }
    let (c1, c2) = (params.c1(), params.c2());
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=x.height - win {
        for left in 0..=x.width - win {
            let (mut sx, mut sy) = (0.0, 0.0);
            for r in top..top + win {
                for c in left..left + win {
                    sx += x.get(r, c);
                    sy += y.get(r, c);
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for r in top..top + win {
                for c in left..left + win {
                    let dx = x.get(r, c) - mx;
                    let dy = y.get(r, c) - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cov += dx * dy;
                }
            }
            let (vx, vy, cov) = (vx / n, vy / n, cov / n);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform01};

    fn random_gray(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = seeded_rng(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| uniform01(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 1.0, 2.0], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch(1, 2)));
        let (a, b) = ([0.1, 0.9, 0.4], [0.3, 0.2, 0.4]);
        assert_eq!(mae(&a, &b), mae(&b, &a));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let x = random_gray(12, 10, 1);
        let y = random_gray(12, 10, 2);
        let p = SsimParams::default();
        assert!((ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ssim(&x, &y, &p).unwrap(), ssim(&y, &x, &p).unwrap());
        assert!(ssim(&x, &y, &p).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let p = SsimParams {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        };
        let c1 = p.c1();
        assert!((c1 - 6.5025).abs() < 1e-12);
        let v = ssim(&GrayImage::filled(7, 7, 0.0), &GrayImage::filled(7, 7, 1.0), &p).unwrap();
        assert!((v - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((v - 0.8667).abs() < 1e-3);
    }

    #[test]
    fn ssim_errors() {
        let p = SsimParams::default();
        let small = GrayImage::filled(5, 9, 0.0);
        assert!(matches!(ssim(&small, &small, &p), Err(MetricError::WindowTooLarge { .. })));
        let even = SsimParams { window: 4, ..p };
        assert!(ssim(&random_gray(8, 8, 1), &random_gray(8, 8, 1), &even).is_err());
    }
}
