//! Random rotation and translation of training images.

use rand::Rng;

use crate::nn::{Image28, IMAGE_PIXELS, IMAGE_SIDE};

/// Pixel-grid center used as the rotation pivot.
const CENTER: f64 = (IMAGE_SIDE as f64 - 1.0) / 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum integer shift per axis, in pixels.
    pub max_shift: i32,
    pub max_rotation_deg: f64,
    /// Chance that a given sample is augmented in a given epoch.
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { max_shift: 11, max_rotation_deg: 15.0, probability: 0.5 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { max_shift: 0, max_rotation_deg: 0.0, probability: 0.0 }
    }
}

/// Rotation (radians, counter-clockwise on screen) followed by an integer shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub angle: f64,
    pub dx: i32,
    pub dy: i32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { angle: 0.0, dx: 0, dy: 0 };
}

pub fn sample_transform<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Transform {
    let max = cfg.max_rotation_deg.abs().to_radians();
    let angle = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
    let s = cfg.max_shift.abs();
    Transform { angle, dx: rng.random_range(-s..=s), dy: rng.random_range(-s..=s) }
}

/// Applies `t` to `img`. Each source pixel is splatted onto its four
/// neighbours with bilinear weights at its rotated position; ink that lands
/// off the grid or is shifted out is lost, and the result is clipped to
/// `[0, 1]`. Total intensity therefore never increases.
pub fn apply_transform(img: &Image28, t: &Transform) -> Image28 {
    let src = img.pixels();
    let rotated: Box<[f64; IMAGE_PIXELS]> = if t.angle == 0.0 {
        Box::new(*src)
    } else {
        let mut out = Box::new([0.0; IMAGE_PIXELS]);
        let (sin, cos) = t.angle.sin_cos();
        let n = IMAGE_SIDE as isize;
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let v = src[y * IMAGE_SIDE + x];
                if v == 0.0 {
                    continue;
                }
                let (cx, cy) = (x as f64 - CENTER, y as f64 - CENTER);
                // y grows downward, so a screen-CCW rotation negates the angle.
                let rx = cos * cx + sin * cy + CENTER;
                let ry = -sin * cx + cos * cy + CENTER;
                let (x0, y0) = (rx.floor(), ry.floor());
                let (fx, fy) = (rx - x0, ry - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                for (ox, oy, w) in
                    [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)]
                {
                    let (px, py) = (x0 + ox, y0 + oy);
                    if (0..n).contains(&px) && (0..n).contains(&py) {
                        out[py as usize * IMAGE_SIDE + px as usize] += v * w;
                    }
                }
            }
        }
        out
    };

    let mut shifted = Box::new([0.0; IMAGE_PIXELS]);
    let n = IMAGE_SIDE as i32;
    for y in 0..n {
        let sy = y - t.dy;
        if !(0..n).contains(&sy) {
            continue;
        }
        for x in 0..n {
            let sx = x - t.dx;
            if (0..n).contains(&sx) {
                shifted[(y * n + x) as usize] = rotated[(sy * n + sx) as usize];
            }
        }
    }
    Image28::from_clipped(shifted)
}

pub fn augment<R: Rng + ?Sized>(img: &Image28, cfg: &AugmentConfig, rng: &mut R) -> Image28 {
    apply_transform(img, &sample_transform(cfg, rng))
}
