use super::{GrayPattern, PatternError};

const A: f64 = -0.5;

/// Catmull-Rom weight for a tap at distance `x`.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: the four clamped source indices and their weights.
fn taps(src_len: usize, k: usize) -> Vec<([usize; 4], [f64; 4])> {
    let last = src_len as isize - 1;
    (0..src_len * k)
        .map(|j| {
            let s = (j as f64 + 0.5) / k as f64 - 0.5;
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for n in 0..4 {
                idx[n] = (i0 - 1 + n as isize).clamp(0, last) as usize;
                w[n] = cubic(t - (n as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic upsampling by an integer ratio with clamp-to-edge
/// sampling. Output pixel `j` samples source coordinate `(j + 0.5)/k − 0.5`.
/// Overshoot is clipped to `[0, 1]`.
pub fn upsample_bicubic(gray: &GrayPattern, k: usize) -> Result<GrayPattern, PatternError> {
    if k == 0 {
        return Err(PatternError::UpsampleRatio(k));
    }
    let (w, h) = (gray.width, gray.height);
    let (ow, oh) = (w * k, h * k);
    let tx = taps(w, k);
    let ty = taps(h, k);

    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &gray.values[y * w..(y + 1) * w];
        for (x, (idx, wt)) in tx.iter().enumerate() {
            rows[y * ow + x] = (0..4).map(|n| wt[n] * src[idx[n]]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, (idx, wt)) in ty.iter().enumerate() {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for n in 0..4 {
            let src = &rows[idx[n] * ow..(idx[n] + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt[n] * s;
            }
        }
    }
    GrayPattern::new(ow, oh, out, gray.kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayPattern {
        GrayPattern::new(w, h, (0..w * h).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect(), 0).unwrap()
    }

    #[test]
    fn weights_at_integer_offsets() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn ratio_one_is_identity() {
        let g = ramp(28, 28);
        assert_eq!(upsample_bicubic(&g, 1).unwrap(), g);
    }

    #[test]
    fn constants_are_reproduced() {
        for c in [0.0, 0.3, 1.0] {
            let g = GrayPattern::new(5, 4, vec![c; 20], 0).unwrap();
            let up = upsample_bicubic(&g, 7).unwrap();
            assert_eq!((up.width, up.height), (35, 28));
            assert!(up.values.iter().all(|v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn k25_gives_700() {
        let up = upsample_bicubic(&ramp(28, 28), 25).unwrap();
        assert_eq!((up.width, up.height, up.values.len()), (700, 700, 490_000));
        assert!(up.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_ratio_is_rejected() {
        assert!(upsample_bicubic(&ramp(2, 2), 0).is_err());
    }

    /// Direct 2-D evaluation of the same interpolant, one output pixel at a time.
    #[test]
    fn separable_matches_direct_sum() {
        let g = ramp(6, 5);
        let k = 3;
        let up = upsample_bicubic(&g, k).unwrap();
        for oy in 0..g.height * k {
            for ox in 0..g.width * k {
                let sx = (ox as f64 + 0.5) / k as f64 - 0.5;
                let sy = (oy as f64 + 0.5) / k as f64 - 0.5;
                let mut acc = 0.0;
                for jy in -3i64..9 {
                    for jx in -3i64..9 {
                        let w = cubic(sx - jx as f64) * cubic(sy - jy as f64);
                        if w != 0.0 {
                            let cx = jx.clamp(0, g.width as i64 - 1) as usize;
                            let cy = jy.clamp(0, g.height as i64 - 1) as usize;
                            acc += w * g.values[cy * g.width + cx];
                        }
                    }
                }
                assert!((up.values[oy * g.width * k + ox] - acc.clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
    }
}
