//! Rigid augmentation: rotation, shift and scale about the image centre,
//! bilinear resampling with zero fill.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DataError, Image};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotation drawn from `±rotation_deg`.
    pub rotation_deg: f64,
    /// Shift per axis drawn from `±shift_frac` of the image size.
    pub shift_frac: f64,
    pub scale_range: (f64, f64),
    pub apply_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            shift_frac: 0.10,
            scale_range: (0.95, 1.05),
            apply_prob: 0.8,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            apply_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(DataError::config(
                "augment.apply_prob",
                format!("{} outside [0, 1]", self.apply_prob),
            ));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg <= 180.0) {
            return Err(DataError::config("augment.rotation_deg", "must lie in [0, 180]"));
        }
        if !(self.shift_frac >= 0.0 && self.shift_frac < 1.0) {
            return Err(DataError::config("augment.shift_frac", "must lie in [0, 1)"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(DataError::config("augment.scale_range", "must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// One sampled rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotation_deg: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
        scale: 1.0,
    };

    pub fn sample(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut Rng) -> Self {
        let sym = |rng: &mut Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        let rotation_deg = sym(rng, cfg.rotation_deg);
        let shift_x = sym(rng, cfg.shift_frac) * width as f64;
        let shift_y = sym(rng, cfg.shift_frac) * height as f64;
        let (lo, hi) = cfg.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Self {
            rotation_deg,
            shift_x,
            shift_y,
            scale,
        }
    }

    /// Resamples `img` under the transform. Output pixel `p` takes the input
    /// value at `R^-1 (p - c - t) / s + c`.
    pub fn apply(&self, img: &Image) -> Image {
        if *self == Transform::IDENTITY {
            return img.clone();
        }
        let (h, w) = (img.height, img.width);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx - self.shift_x) / self.scale;
                let dy = (y as f64 - cy - self.shift_y) / self.scale;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                out[y * w + x] = bilinear(img, sx, sy).clamp(0.0, 1.0);
            }
        }
        Image::new(h, w, out)
    }
}

fn bilinear(img: &Image, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= img.width as f64 || yi >= img.height as f64 {
            0.0
        } else {
            img.get(yi as usize, xi as usize) as f64
        }
    };
    let v = (1.0 - fx) * (1.0 - fy) * px(x0, y0)
        + fx * (1.0 - fy) * px(x0 + 1.0, y0)
        + (1.0 - fx) * fy * px(x0, y0 + 1.0)
        + fx * fy * px(x0 + 1.0, y0 + 1.0);
    v as f32
}

/// With probability `apply_prob`, applies one sampled transform. Returns
/// the image and whether a transform was applied.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut Rng) -> (Image, bool) {
    if cfg.apply_prob <= 0.0 || !rng.random_bool(cfg.apply_prob.min(1.0)) {
        return (img.clone(), false);
    }
    let t = Transform::sample(cfg, img.width, img.height, rng);
    (t.apply(img), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(seed: u64) -> Image {
        let mut r = rng::stream(seed, &[]);
        Image::new(16, 16, (0..256).map(|_| r.random::<f32>()).collect())
    }

    #[test]
    fn disabled_and_identity_are_exact() {
        let img = random_image(1);
        let mut r = rng::stream(2, &[]);
        for _ in 0..20 {
            assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut r), (img.clone(), false));
        }
        assert_eq!(Transform::IDENTITY.apply(&img), img);
        let cfg = AugmentConfig {
            rotation_deg: 0.0,
            shift_frac: 0.0,
            scale_range: (1.0, 1.0),
            apply_prob: 1.0,
        };
        let (out, applied) = augment(&img, &cfg, &mut r);
        assert!(applied);
        assert_eq!(out, img);
    }

    #[test]
    fn application_rate_matches_probability() {
        let img = Image::new(4, 4, vec![0.5; 16]);
        let mut r = rng::stream(3, &[]);
        let cfg = AugmentConfig::default();
        let applied = (0..10_000).filter(|_| augment(&img, &cfg, &mut r).1).count();
        let rate = applied as f64 / 10_000.0;
        assert!((rate - 0.8).abs() < 0.01, "{rate}");
    }

    #[test]
    fn shape_and_range_are_preserved() {
        let img = random_image(4);
        let mut r = rng::stream(5, &[]);
        let cfg = AugmentConfig {
            apply_prob: 1.0,
            ..AugmentConfig::default()
        };
        for _ in 0..50 {
            let (out, _) = augment(&img, &cfg, &mut r);
            assert_eq!((out.height, out.width), (16, 16));
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let img = random_image(6);
        let t = Transform {
            shift_x: 2.0,
            shift_y: -1.0,
            ..Transform::IDENTITY
        };
        let out = t.apply(&img);
        assert_eq!(out.get(5, 7), img.get(6, 5));
        assert_eq!(out.get(15, 0), 0.0);
    }

    #[test]
    fn quarter_turn_rotates_grid() {
        let img = random_image(7);
        let t = Transform {
            rotation_deg: 90.0,
            ..Transform::IDENTITY
        };
        let out = t.apply(&img);
        // p = R q about the centre: output (x, y) reads input (y, 15 - x)
        for (y, x) in [(0, 0), (3, 9), (15, 4)] {
            assert!((out.get(y, x) - img.get(15 - x, y)).abs() < 1e-5);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            apply_prob: 1.2,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
