use std::f64::consts::{PI, TAU};

use super::{OpticsError, TimingModel, DISK_RADIUS_M, NUM_DIGITS, WINDOW_SIDE_M};
use crate::nn::{Image28, IMAGE_SIDE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskGeometry {
    pub radius: f64,
    pub window_side: f64,
    /// Side of each digit's square footprint on the disk.
    pub digit_size: f64,
    /// Angle of digit 0 at `t = 0`, measured from the window center (radians).
    pub initial_angle: f64,
}

impl Default for DiskGeometry {
    fn default() -> Self {
        Self {
            radius: DISK_RADIUS_M,
            window_side: WINDOW_SIDE_M,
            digit_size: WINDOW_SIDE_M,
            initial_angle: -PI / NUM_DIGITS as f64,
        }
    }
}

impl DiskGeometry {
    pub fn validate(&self) -> Result<(), OpticsError> {
        for (name, v) in [("radius", self.radius), ("window side", self.window_side), ("digit size", self.digit_size)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(OpticsError::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.initial_angle.is_finite() {
            return Err(OpticsError::Geometry("initial angle must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DigitPlacement {
    pub image: Image28,
    pub label: Option<u8>,
    /// Angular position relative to digit 0.
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiskScene {
    pub geometry: DiskGeometry,
    pub digits: Vec<DigitPlacement>,
    /// Angular velocity, rad/s.
    pub omega: f64,
    /// Per digit: nonzero cells as `(u, v, value)`, `u`/`v` in cell units from the digit center.
    ink: Vec<Vec<(f64, f64, f64)>>,
}

/// Axis-aligned rectangle with a transmittance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Cell {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub value: f64,
}

/// Places 8 digits at equal angular spacing `2πi/8`.
pub fn build_disk_scene(
    digits: Vec<Image28>,
    labels: Option<Vec<u8>>,
    geometry: DiskGeometry,
    omega: f64,
) -> Result<DiskScene, OpticsError> {
    if digits.len() != NUM_DIGITS {
        return Err(OpticsError::DigitCount(digits.len()));
    }
    if let Some(l) = &labels {
        if l.len() != NUM_DIGITS {
            return Err(OpticsError::DigitCount(l.len()));
        }
    }
    geometry.validate()?;
    if !omega.is_finite() {
        return Err(OpticsError::Geometry("angular velocity must be finite".into()));
    }
    let half = IMAGE_SIDE as f64 / 2.0;
    let ink = digits
        .iter()
        .map(|img| {
            let mut cells = Vec::new();
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let v = img.get(x, y);
                    if v > 0.0 {
                        cells.push((x as f64 + 0.5 - half, y as f64 + 0.5 - half, v));
                    }
                }
            }
            cells
        })
        .collect();
    let digits = digits
        .into_iter()
        .enumerate()
        .map(|(i, image)| DigitPlacement {
            image,
            label: labels.as_ref().map(|l| l[i]),
            angle: TAU * i as f64 / NUM_DIGITS as f64,
        })
        .collect();
    Ok(DiskScene { geometry, digits, omega, ink })
}

impl DiskScene {
    pub fn linear_speed(&self) -> f64 {
        self.omega * self.geometry.radius
    }

    /// Angle of digit `i` from the window center at time `t`, wrapped to `[−π, π)`.
    pub fn digit_angle(&self, i: usize, t: f64) -> f64 {
        (self.geometry.initial_angle + self.digits[i].angle + self.omega * t + PI).rem_euclid(TAU) - PI
    }

    /// Arc-length offset of digit `i`'s center from the window center along the track, meters.
    pub fn digit_offset(&self, i: usize, t: f64) -> f64 {
        self.geometry.radius * self.digit_angle(i, t)
    }

    /// Appends digit `i`'s nonzero cells at time `t` to `out`, in a frame where
    /// the window spans `[0, scale]²`. Returns false without touching `out`
    /// when the digit cannot reach the window.
    ///
    /// The digit translates along the track by its arc-length offset and
    /// turns rigidly with the disk; each cell stays axis-aligned around its
    /// rotated center.
    pub(crate) fn digit_cells(&self, i: usize, t: f64, scale: f64, out: &mut Vec<Cell>) -> bool {
        let g = &self.geometry;
        let per_m = scale / g.window_side;
        let phi = self.digit_angle(i, t);
        let cx = scale / 2.0 + g.radius * phi * per_m;
        let cy = scale / 2.0;
        let cell = g.digit_size * per_m / IMAGE_SIDE as f64;
        let reach = g.digit_size * per_m * std::f64::consts::FRAC_1_SQRT_2 + cell;
        if (cx - scale / 2.0).abs() > scale / 2.0 + reach {
            return false;
        }
        let (sin, cos) = phi.sin_cos();
        let h = cell / 2.0;
        for &(u, v, value) in &self.ink[i] {
            let (u, v) = (u * cell, v * cell);
            let x = cx + u * cos - v * sin;
            let y = cy + u * sin + v * cos;
            out.push(Cell { x0: x - h, x1: x + h, y0: y - h, y1: y + h, value });
        }
        true
    }

    /// Fraction of digit `i`'s ink inside the window at time `t`.
    pub fn visible_ink(&self, i: usize, t: f64) -> f64 {
        let mut cells = Vec::new();
        if !self.digit_cells(i, t, 1.0, &mut cells) {
            return 0.0;
        }
        let (mut inside, mut total) = (0.0, 0.0);
        for c in &cells {
            let area = (c.x1 - c.x0) * (c.y1 - c.y0);
            let w = (c.x1.min(1.0) - c.x0.max(0.0)).max(0.0);
            let h = (c.y1.min(1.0) - c.y0.max(0.0)).max(0.0);
            inside += c.value * w * h;
            total += c.value * area;
        }
        if total == 0.0 {
            0.0
        } else {
            inside / total
        }
    }
}

/// Transmittance over the window at time `t` on a `resolution²` grid,
/// each value the exact area coverage of the carved cells, capped at 1.
pub fn scene_window(scene: &DiskScene, t: f64, resolution: usize) -> Vec<f64> {
    let r = resolution;
    let mut grid = vec![0.0; r * r];
    let mut cells = Vec::new();
    for i in 0..scene.digits.len() {
        cells.clear();
        if !scene.digit_cells(i, t, r as f64, &mut cells) {
            continue;
        }
        for c in &cells {
            let (x0, x1) = (c.x0.max(0.0), c.x1.min(r as f64));
            let (y0, y1) = (c.y0.max(0.0), c.y1.min(r as f64));
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            for my in y0.floor() as usize..(y1.ceil() as usize).min(r) {
                let hy = (y1.min(my as f64 + 1.0) - y0.max(my as f64)).max(0.0);
                for mx in x0.floor() as usize..(x1.ceil() as usize).min(r) {
                    let hx = (x1.min(mx as f64 + 1.0) - x0.max(mx as f64)).max(0.0);
                    grid[my * r + mx] += c.value * hx * hy;
                }
            }
        }
    }
    for v in &mut grid {
        *v = v.min(1.0);
    }
    grid
}

/// What the window shows during one frame, taken at the frame's midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub time: f64,
    /// Digit with the most ink in the window, if any.
    pub digit: Option<usize>,
    pub label: Option<u8>,
    /// That digit's center offset from the window center along the track, millimeters.
    pub offset_mm: f64,
    /// Fraction of that digit's ink inside the window.
    pub visible_ink: f64,
}

pub fn frame_truth(scene: &DiskScene, timing: &TimingModel) -> Vec<FrameTruth> {
    let spf = timing.samples_per_frame();
    (0..timing.loops)
        .map(|frame| {
            let time = (frame * spf) as f64 / timing.adc_rate + (spf as f64 / 2.0) / timing.adc_rate;
            let best = (0..scene.digits.len())
                .map(|i| (i, scene.visible_ink(i, time)))
                .filter(|&(_, v)| v > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, v)) => FrameTruth {
                    frame,
                    time,
                    digit: Some(i),
                    label: scene.digits[i].label,
                    offset_mm: scene.digit_offset(i, time) * 1000.0,
                    visible_ink: v,
                },
                None => FrameTruth { frame, time, digit: None, label: None, offset_mm: f64::NAN, visible_ink: 0.0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::IMAGE_PIXELS;

    fn digit(seed: usize) -> Image28 {
        let mut px = vec![0.0; IMAGE_PIXELS];
        for y in 6..22 {
            for x in 8..20 {
                if (x * 7 + y * 3 + seed) % 4 != 0 {
                    px[y * 28 + x] = ((x + y + seed) % 10) as f64 / 10.0 + 0.05;
                }
            }
        }
        Image28::new(px).unwrap()
    }

    fn scene(omega: f64, initial_angle: f64) -> DiskScene {
        let geometry = DiskGeometry { initial_angle, ..DiskGeometry::default() };
        build_disk_scene((0..8).map(digit).collect(), Some((0..8).collect()), geometry, omega).unwrap()
    }

    #[test]
    fn speeds_from_angular_velocity() {
        assert!((scene(24.05, 0.0).linear_speed() - 3.6075).abs() < 1e-12);
        assert!((scene(32.49, 0.0).linear_speed() - 4.8735).abs() < 1e-12);
        assert_eq!(scene(0.0, 0.0).linear_speed(), 0.0);
    }

    #[test]
    fn wrong_digit_count() {
        let err = build_disk_scene(vec![Image28::zeros(); 7], None, DiskGeometry::default(), 0.0);
        assert!(matches!(err, Err(OpticsError::DigitCount(7))));
    }

    #[test]
    fn digits_are_equally_spaced() {
        let s = scene(0.0, 0.0);
        for i in 0..8 {
            let a = s.digit_angle(i, 0.0);
            let want = TAU * i as f64 / 8.0;
            let want = if want >= PI { want - TAU } else { want };
            assert!((a - want).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_static_digit_is_its_upsampled_image() {
        let s = scene(0.0, 0.0);
        let grid = scene_window(&s, 0.0, 700);
        let img = &s.digits[0].image;
        for y in 0..700 {
            for x in 0..700 {
                assert!((grid[y * 700 + x] - img.get(x / 25, y / 25)).abs() < 1e-9, "({x},{y})");
            }
        }
        assert_eq!(s.visible_ink(0, 0.0), 1.0);
    }

    #[test]
    fn window_between_digits_is_empty() {
        let s = scene(0.0, -PI / 8.0);
        assert!(scene_window(&s, 0.0, 100).iter().all(|&v| v == 0.0));
        assert!(frame_truth(&s, &TimingModel { loops: 3, ..TimingModel::default() }).iter().all(|f| f.digit.is_none()));
    }

    #[test]
    fn translation_over_small_interval() {
        // Oracle: the content moves ω·r·Δ / pitch pixels along x.
        let omega = 24.05;
        let s = scene(omega, -0.02);
        let (t, dt) = (0.0, 4e-4);
        let res = 700;
        let a = scene_window(&s, t, res);
        let b = scene_window(&s, t + dt, res);
        let centroid = |g: &[f64]| {
            let (mut m, mut sx) = (0.0, 0.0);
            for (i, v) in g.iter().enumerate() {
                m += v;
                sx += v * ((i % res) as f64 + 0.5);
            }
            sx / m
        };
        let pitch = WINDOW_SIDE_M / res as f64;
        let want = omega * DISK_RADIUS_M * dt / pitch;
        let got = centroid(&b) - centroid(&a);
        assert!((got - want).abs() <= 0.5, "shift {got} px, expected {want}");
    }

    #[test]
    fn window_values_in_unit_range() {
        let s = scene(24.05, 0.1);
        assert!(scene_window(&s, 0.0, 140).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn halving_speed_doubles_presence_frames() {
        // Count frames with any ink from digit 0 over a single transit.
        let count = |omega: f64| {
            let s = scene(omega, -0.35);
            let timing = TimingModel { loops: 60, ..TimingModel::default() };
            frame_truth(&s, &timing).iter().filter(|f| f.digit == Some(0)).count() as i64
        };
        let fast = count(24.05);
        let slow = count(12.025);
        assert!(fast > 5);
        assert!((slow - 2 * fast).abs() <= 1, "fast {fast}, slow {slow}");
    }
}
