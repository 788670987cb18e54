use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::Cell;
use super::{AdcConfig, DiskScene, NoiseConfig, OpticsError, RawSampleStream, TimingModel};
use crate::patterns::{BinaryPattern, PatternPack};

/// One digitized photodiode reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reading {
    /// Voltage before quantization.
    pub analog: f64,
    pub code: u16,
    pub saturated: bool,
}

fn read(signal: f64, noise: &NoiseConfig, sigma: f64, adc: &AdcConfig, rng: &mut impl Rng) -> Reading {
    let mut v = noise.dark + noise.alpha * signal;
    if sigma > 0.0 {
        v += Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    }
    let (code, saturated) = adc.quantize(v);
    Reading { analog: v, code, saturated }
}

/// Photodiode reading for a pattern over a transmittance grid of the same
/// shape: `dark + α·Σ pattern·window / N + N(0, σ₀²)`, then quantized.
pub fn single_pixel_sample(
    pattern: &BinaryPattern,
    window: &[f64],
    noise: &NoiseConfig,
    adc: &AdcConfig,
    rng: &mut impl Rng,
) -> Result<Reading, OpticsError> {
    if pattern.bits.len() != window.len() {
        return Err(OpticsError::GridMismatch { expected: window.len(), actual: pattern.bits.len() });
    }
    let sum: f64 = pattern.bits.iter().zip(window).filter(|(&b, _)| b == 1).map(|(_, &w)| w).sum();
    Ok(read(sum / window.len() as f64, noise, noise.sigma0, adc, rng))
}

/// Summed-area tables of every `P⁺`, for exact integrals over arbitrary
/// axis-aligned rectangles.
pub struct PatternIntegrals {
    side: usize,
    tables: Vec<Vec<u32>>,
}

impl PatternIntegrals {
    pub fn new(pack: &PatternPack) -> Self {
        let side = pack.side();
        let stride = side + 1;
        let tables = pack
            .pairs
            .iter()
            .map(|pair| {
                let mut t = vec![0u32; stride * stride];
                for y in 0..side {
                    let mut row = 0u32;
                    for x in 0..side {
                        row += pair.p_plus.bits[y * side + x] as u32;
                        t[(y + 1) * stride + x + 1] = t[y * stride + x + 1] + row;
                    }
                }
                t
            })
            .collect();
        Self { side, tables }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// `∫∫ P⁺` from the origin to `(x, y)`; bilinear between table entries,
    /// which is exact because `P⁺` is constant on each mirror.
    fn cumulative(&self, pair: usize, x: f64, y: f64) -> f64 {
        let t = &self.tables[pair];
        let stride = self.side + 1;
        let i = (x.floor() as usize).min(self.side - 1);
        let j = (y.floor() as usize).min(self.side - 1);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let at = |a: usize, b: usize| t[b * stride + a] as f64;
        let top = at(i, j) + fx * (at(i + 1, j) - at(i, j));
        let bottom = at(i, j + 1) + fx * (at(i + 1, j + 1) - at(i, j + 1));
        top + fy * (bottom - top)
    }

    /// Integral of `P⁺` (or `P⁻` when `minus`) over `cell ∩ window`, in mirror areas.
    fn integrate(&self, pair: usize, minus: bool, c: &Cell) -> f64 {
        let r = self.side as f64;
        let (x0, x1) = (c.x0.max(0.0), c.x1.min(r));
        let (y0, y1) = (c.y0.max(0.0), c.y1.min(r));
        if x0 >= x1 || y0 >= y1 {
            return 0.0;
        }
        let area = (x1 - x0) * (y1 - y0);
        let plus = (self.cumulative(pair, x1, y1) - self.cumulative(pair, x0, y1) - self.cumulative(pair, x1, y0)
            + self.cumulative(pair, x0, y0))
        .clamp(0.0, area);
        if minus {
            area - plus
        } else {
            plus
        }
    }

    /// Normalized transmitted intensity `Σ P·W / N` for one pattern slot.
    fn measure(&self, slot: usize, cells: &[Cell]) -> f64 {
        let (pair, minus) = (slot / 2, slot % 2 == 1);
        let sum: f64 = cells.iter().map(|c| c.value * self.integrate(pair, minus, c)).sum();
        sum / (self.side * self.side) as f64
    }
}

fn visible_cells(scene: &DiskScene, t: f64, scale: f64, out: &mut Vec<Cell>) {
    out.clear();
    for i in 0..scene.digits.len() {
        scene.digit_cells(i, t, scale, out);
    }
}

/// Noiseless normalized intensity of every pattern slot `(P⁺₀, P⁻₀, P⁺₁, …)` at time `t`.
pub fn pattern_measurements(scene: &DiskScene, integrals: &PatternIntegrals, t: f64) -> Vec<f64> {
    let mut cells = Vec::new();
    visible_cells(scene, t, integrals.side() as f64, &mut cells);
    (0..integrals.tables.len() * 2).map(|slot| integrals.measure(slot, &cells)).collect()
}

fn check(pack: &PatternPack, timing: &TimingModel, noise: &NoiseConfig, adc: &AdcConfig) -> Result<(), OpticsError> {
    timing.validate()?;
    noise.validate()?;
    adc.validate()?;
    if pack.pairs.len() * 2 != timing.patterns_per_frame {
        return Err(OpticsError::Timing(format!(
            "{} patterns per frame but the pack holds {} pairs",
            timing.patterns_per_frame,
            pack.pairs.len()
        )));
    }
    Ok(())
}

fn acquire(
    timing: &TimingModel,
    noise: &NoiseConfig,
    adc: &AdcConfig,
    mut signal: impl FnMut(usize, f64) -> f64,
) -> RawSampleStream {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let sigma = noise.sigma_at(timing.dmd_rate);
    let spp = timing.samples_per_pattern();
    let total = timing.total_samples();
    let mut codes = Vec::with_capacity(total);
    let mut saturated = 0;
    for n in 0..total {
        let t = n as f64 / timing.adc_rate;
        let slot = (n / spp) % timing.patterns_per_frame;
        let r = read(signal(slot, t), noise, sigma, adc, &mut rng);
        saturated += r.saturated as usize;
        codes.push(r.code);
    }
    RawSampleStream { timing: *timing, noise: *noise, adc: *adc, codes, saturated }
}

/// Samples the photodiode at every ADC instant while the patterns cycle.
///
/// Sample `n` is taken at `n / adc_rate` under pattern slot
/// `⌊n / samples_per_pattern⌋ mod patterns_per_frame`; the disk is advanced
/// to that instant before integrating.
pub fn run_acquisition(
    scene: &DiskScene,
    pack: &PatternPack,
    timing: &TimingModel,
    noise: &NoiseConfig,
    adc: &AdcConfig,
) -> Result<RawSampleStream, OpticsError> {
    check(pack, timing, noise, adc)?;
    let integrals = PatternIntegrals::new(pack);
    let scale = integrals.side() as f64;
    let mut cells = Vec::new();
    Ok(acquire(timing, noise, adc, |slot, t| {
        visible_cells(scene, t, scale, &mut cells);
        integrals.measure(slot, &cells)
    }))
}

/// Same acquisition through a fully open window (transmittance 1 everywhere),
/// for gain calibration.
pub fn run_reference_acquisition(
    pack: &PatternPack,
    timing: &TimingModel,
    noise: &NoiseConfig,
    adc: &AdcConfig,
) -> Result<RawSampleStream, OpticsError> {
    check(pack, timing, noise, adc)?;
    let fractions: Vec<f64> = pack.pairs.iter().flat_map(|p| [p.p_plus.mean(), p.p_minus.mean()]).collect();
    Ok(acquire(timing, noise, adc, |slot, _| fractions[slot]))
}
