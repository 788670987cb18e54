use super::{BinaryPattern, GrayPattern};

/// Floyd–Steinberg error diffusion, plain raster scan, threshold 0.5.
/// Error pushed past the grid edge is discarded.
pub fn dither_floyd_steinberg(gray: &GrayPattern) -> BinaryPattern {
    let (w, h) = (gray.width, gray.height);
    if w * h == 0 {
        return BinaryPattern { width: w, height: h, bits: Vec::new() };
    }
    let mut cur = gray.values[..w].to_vec();
    let mut next = vec![0.0; w];
    let mut bits = vec![0u8; w * h];
    for y in 0..h {
        if y + 1 < h {
            next.copy_from_slice(&gray.values[(y + 1) * w..(y + 2) * w]);
        }
        for x in 0..w {
            let v = cur[x];
            let on = v >= 0.5;
            bits[y * w + x] = on as u8;
            let err = v - if on { 1.0 } else { 0.0 };
            if x + 1 < w {
                cur[x + 1] += err * (7.0 / 16.0);
            }
            if y + 1 < h {
                if x > 0 {
                    next[x - 1] += err * (3.0 / 16.0);
                }
                next[x] += err * (5.0 / 16.0);
                if x + 1 < w {
                    next[x + 1] += err * (1.0 / 16.0);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    BinaryPattern { width: w, height: h, bits }
}
