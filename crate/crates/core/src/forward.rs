//! Coded-measurement simulation.
//!
//! Every pixel integrates `a_p^T r_p` where the effective sensing vector is
//! the sum over the pixel's active sub-frames of `S ⊙ (sum of lit E'_l)`.
//! Noise is zero-mean Gaussian with standard deviation
//! `noise_sigma_frac * max_p |a_p^T r_p|`, drawn from a counter-based stream
//! keyed by `(seed, frame, pixel)`, so results do not depend on how pixels are
//! partitioned across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coding::{CodingSchedule, LedChannel};
use crate::error::{Error, Result};
use crate::spectral::{mirror_extend_cube, HyperCube, ResampleMode, SpectralCurve, WavelengthGrid};

/// Noise levels of the standard evaluation sweep, as fractions of peak signal.
pub const NOISE_SWEEP: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

/// Largest sensor for which [`build_sensing_matrix`] will materialise `A`.
pub const SENSING_MATRIX_PIXEL_LIMIT: usize = 65_536;

/// Per-LED, per-sub-frame sensing vectors `S ⊙ E'_l` on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingModel {
    grid: WavelengthGrid,
    per_led: Vec<Vec<f64>>,
}

impl SensingModel {
    /// All curves must already share `sensitivity`'s grid.
    pub fn new(leds: &[LedChannel], sensitivity: &SpectralCurve) -> Result<Self> {
        let grid = *sensitivity.grid();
        let mut per_led = Vec::with_capacity(leds.len());
        for led in leds {
            led.spd.grid().expect(&grid)?;
            per_led.push(
                led.spd
                    .values()
                    .iter()
                    .zip(sensitivity.values())
                    .map(|(e, s)| led.alpha * e * s)
                    .collect(),
            );
        }
        Ok(Self { grid, per_led })
    }

    /// Explicit per-LED vectors.
    pub fn from_vectors(grid: WavelengthGrid, per_led: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(v) = per_led.iter().find(|v| v.len() != grid.count()) {
            return Err(Error::Dimension(format!(
                "sensing vector of length {} on a {}-channel grid",
                v.len(),
                grid.count()
            )));
        }
        Ok(Self { grid, per_led })
    }

    /// Bin-integrates native-resolution curves onto the 41-channel calibration grid.
    pub fn calibration(leds: &[LedChannel], sensitivity: &SpectralCurve) -> Result<Self> {
        let cal = WavelengthGrid::calibration();
        let s = sensitivity.resample(&cal, ResampleMode::BinIntegrate)?;
        let binned: Vec<LedChannel> = leds
            .iter()
            .map(|l| {
                Ok(LedChannel {
                    name: l.name.clone(),
                    spd: l.spd.resample(&cal, ResampleMode::BinIntegrate)?,
                    alpha: l.alpha,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(&binned, &s)
    }

    /// Sensing on the 33-channel extended grid. The 380 and 390 nm bins fold
    /// into the first channel and 710–780 nm into the last, so a cube whose
    /// edge channels hold the (assumed flat) reflectance of those bands sees
    /// the same measurement as the full 41-channel model.
    pub fn extended(leds: &[LedChannel], sensitivity: &SpectralCurve) -> Result<Self> {
        let cal = Self::calibration(leds, sensitivity)?;
        let per_led = cal.per_led.iter().map(|v| fold_to_extended(v)).collect();
        Self::from_vectors(WavelengthGrid::extended(), per_led)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn num_leds(&self) -> usize {
        self.per_led.len()
    }

    pub fn led_vector(&self, led: usize) -> &[f64] {
        &self.per_led[led]
    }

    pub fn led_vectors(&self) -> &[Vec<f64>] {
        &self.per_led
    }
}

/// Collapses a 41-channel calibration-grid vector onto the extended grid by summing
/// the aggregated edge bins.
pub fn fold_to_extended(v41: &[f64]) -> Vec<f64> {
    assert_eq!(v41.len(), 41, "calibration-grid vector expected");
    let mut out = Vec::with_capacity(33);
    out.push(v41[0] + v41[1]);
    out.extend_from_slice(&v41[2..33]);
    out.push(v41[33..].iter().sum());
    out
}

/// `a_p` for a pixel, accumulated sub-frame by sub-frame.
pub fn effective_sensing_vector(
    schedule: &CodingSchedule,
    model: &SensingModel,
    x: usize,
    y: usize,
) -> Result<Vec<f64>> {
    check_model(schedule, model)?;
    Ok(tile_vector(schedule, model, schedule.layout().tile_index(x, y)))
}

fn tile_vector(schedule: &CodingSchedule, model: &SensingModel, tile: usize) -> Vec<f64> {
    let mut a = vec![0.0; model.grid().count()];
    for s in 0..schedule.num_subframes() {
        if !schedule.exposure(tile, s) {
            continue;
        }
        for l in 0..schedule.num_leds() {
            if schedule.illumination(tile, s, l) {
                for (ak, ek) in a.iter_mut().zip(model.led_vector(l)) {
                    *ak += ek;
                }
            }
        }
    }
    a
}

/// Sensing vectors for every tile position.
pub fn tile_sensing_vectors(schedule: &CodingSchedule, model: &SensingModel) -> Result<Vec<Vec<f64>>> {
    check_model(schedule, model)?;
    Ok((0..schedule.layout().tiles())
        .map(|t| tile_vector(schedule, model, t))
        .collect())
}

fn check_model(schedule: &CodingSchedule, model: &SensingModel) -> Result<()> {
    if schedule.num_leds() != model.num_leds() {
        return Err(Error::Dimension(format!(
            "schedule has {} LEDs but the sensing model has {}",
            schedule.num_leds(),
            model.num_leds()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodedFrame {
    width: usize,
    height: usize,
    values: Vec<f64>,
    noise_sigma_frac: f64,
    seed: u64,
    frame_index: u64,
}

impl CodedFrame {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        noise_sigma_frac: f64,
        seed: u64,
        frame_index: u64,
    ) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Dimension(format!(
                "frame {width}x{height} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("frame contains non-finite values".into()));
        }
        if !(0.0..=1.0).contains(&noise_sigma_frac) {
            return Err(Error::OutOfRange(format!(
                "noise fraction {noise_sigma_frac} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            noise_sigma_frac,
            seed,
            frame_index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn noise_sigma_frac(&self) -> f64 {
        self.noise_sigma_frac
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }
}

/// Standard normal draw for `(seed, frame, pixel)`.
///
/// Each pixel reads a fixed window of the ChaCha keystream (stream = frame,
/// word offset = 4 * pixel), consumed by one Box–Muller pair.
pub fn pixel_normal(seed: u64, frame: u64, pixel: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng.set_word_pos(4 * pixel as u128);
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn noiseless_values(
    states: &(dyn Fn(usize) -> usize + Sync),
    scenes: &[&HyperCube],
    schedule: &CodingSchedule,
    tiles: &[Vec<f64>],
) -> Vec<f64> {
    let layout = schedule.layout();
    let (w, h) = (scenes[0].width(), scenes[0].height());
    (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let tile = layout.tile_index(x, y);
            let scene = scenes[states(layout.led_of_tile()[tile])];
            dot(&tiles[tile], scene.pixel(x, y))
        })
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn finish_frame(
    mut values: Vec<f64>,
    width: usize,
    height: usize,
    noise_sigma_frac: f64,
    seed: u64,
    frame_index: u64,
) -> Result<CodedFrame> {
    if noise_sigma_frac > 0.0 {
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sigma = noise_sigma_frac * peak;
        values
            .par_iter_mut()
            .enumerate()
            .for_each(|(p, v)| *v += sigma * pixel_normal(seed, frame_index, p));
    }
    CodedFrame::new(width, height, values, noise_sigma_frac, seed, frame_index)
}

fn check_scene(scene: &HyperCube, model: &SensingModel) -> Result<()> {
    scene.grid().expect(model.grid())
}

/// `Y = A vec(R) + eta` for a static scene.
pub fn simulate_frame(
    scene: &HyperCube,
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
) -> Result<CodedFrame> {
    simulate_frame_indexed(scene, schedule, model, noise_sigma_frac, seed, 0)
}

pub fn simulate_frame_indexed(
    scene: &HyperCube,
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
    frame_index: u64,
) -> Result<CodedFrame> {
    check_scene(scene, model)?;
    let tiles = tile_sensing_vectors(schedule, model)?;
    let values = noiseless_values(&|_| 0, &[scene], schedule, &tiles);
    finish_frame(
        values,
        scene.width(),
        scene.height(),
        noise_sigma_frac,
        seed,
        frame_index,
    )
}

/// One frame where the pixels of each LED see their own scene state
/// (`states[l]` for LED `l`), i.e. motion resolved per LED window.
pub fn simulate_frame_per_led(
    states: &[HyperCube],
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
    frame_index: u64,
) -> Result<CodedFrame> {
    if states.len() != schedule.num_leds() {
        return Err(Error::Dimension(format!(
            "{} scene states for {} LEDs",
            states.len(),
            schedule.num_leds()
        )));
    }
    for s in states {
        check_scene(s, model)?;
        s.expect_shape(&states[0])?;
    }
    let tiles = tile_sensing_vectors(schedule, model)?;
    let refs: Vec<&HyperCube> = states.iter().collect();
    let values = noiseless_values(&|l| l, &refs, schedule, &tiles);
    finish_frame(
        values,
        states[0].width(),
        states[0].height(),
        noise_sigma_frac,
        seed,
        frame_index,
    )
}

/// Frame-wise simulation of a static-per-frame video; frame `i` uses noise stream `i`.
pub fn simulate_video(
    scenes: &[HyperCube],
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
) -> Result<Vec<CodedFrame>> {
    if let Some(first) = scenes.first() {
        for s in scenes {
            s.expect_shape(first)?;
        }
    }
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| simulate_frame_indexed(s, schedule, model, noise_sigma_frac, seed, i as u64))
        .collect()
}

/// Video of a continuously moving scene. `scene_at(t)` returns the scene at
/// time `t` measured in frames; frame `i`'s LED `l` sees `scene_at(i + t'_l)`.
pub fn simulate_motion_video(
    scene_at: &(dyn Fn(f64) -> HyperCube + Sync),
    frames: usize,
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
) -> Result<Vec<CodedFrame>> {
    let stamps = schedule.normalized_timestamps();
    (0..frames)
        .map(|i| {
            let states: Vec<HyperCube> = stamps.iter().map(|t| scene_at(i as f64 + t)).collect();
            simulate_frame_per_led(&states, schedule, model, noise_sigma_frac, seed, i as u64)
        })
        .collect()
}

/// Simulates a 31-channel reflectance scene through the extended-grid model.
pub fn simulate_reflectance_frame(
    scene31: &HyperCube,
    schedule: &CodingSchedule,
    extended_model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
    frame_index: u64,
) -> Result<CodedFrame> {
    let ext = mirror_extend_cube(scene31)?;
    simulate_frame_indexed(&ext, schedule, extended_model, noise_sigma_frac, seed, frame_index)
}

/// Compressed-sparse-row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} for a matrix with {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .fold(0.0, |acc, (&c, &v)| acc + v * x[c])
            })
            .collect())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// The global `P x (P * channels)` operator. Row `p` stores exactly one entry
/// per channel in columns `[p*channels, (p+1)*channels)`, zeros included.
pub fn build_sensing_matrix(
    schedule: &CodingSchedule,
    model: &SensingModel,
    width: usize,
    height: usize,
) -> Result<SparseMatrix> {
    let pixels = width * height;
    if pixels > SENSING_MATRIX_PIXEL_LIMIT {
        return Err(Error::TooLarge {
            pixels,
            limit: SENSING_MATRIX_PIXEL_LIMIT,
        });
    }
    let tiles = tile_sensing_vectors(schedule, model)?;
    let c = model.grid().count();
    let mut row_ptr = Vec::with_capacity(pixels + 1);
    let mut col_idx = Vec::with_capacity(pixels * c);
    let mut values = Vec::with_capacity(pixels * c);
    row_ptr.push(0);
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let a = &tiles[schedule.layout().tile_index(x, y)];
            col_idx.extend(p * c..(p + 1) * c);
            values.extend_from_slice(a);
            row_ptr.push(values.len());
        }
    }
    Ok(SparseMatrix {
        rows: pixels,
        cols: pixels * c,
        row_ptr,
        col_idx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::TileLayout;

    fn unit_model(n_leds: usize, grid: WavelengthGrid) -> SensingModel {
        let per_led = (0..n_leds)
            .map(|l| grid.centers().map(|nm| 1.0 + (l as f64) * 0.1 + nm * 1e-3).collect())
            .collect();
        SensingModel::from_vectors(grid, per_led).unwrap()
    }

    #[test]
    fn zero_sensitivity_gives_zero_vector() {
        let grid = WavelengthGrid::calibration();
        let leds = crate::coding::nominal_leds();
        let model = SensingModel::calibration(&leds, &SpectralCurve::constant(grid, 0.0)).unwrap();
        let s = CodingSchedule::canonical();
        let a = effective_sensing_vector(&s, &model, 5, 7).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_subframe_identity_weights() {
        let grid = WavelengthGrid::new(400.0, 10.0, 4).unwrap();
        let spd = SpectralCurve::new(grid, vec![0.5, 1.0, 2.0, 0.25]).unwrap();
        let led = LedChannel::new("A", spd.clone()).unwrap().with_alpha(3.0);
        let model = SensingModel::new(&[led], &SpectralCurve::constant(grid, 1.0)).unwrap();
        let s = CodingSchedule::from_allocation(
            TileLayout::new(1, 1, vec![0]).unwrap(),
            vec!["A".into()],
            &[1],
            &[0],
            150.0,
            0.0,
        )
        .unwrap();
        let a = effective_sensing_vector(&s, &model, 0, 0).unwrap();
        assert_eq!(a, spd.scaled(3.0).values());
    }

    #[test]
    fn canonical_amber_pixel_matches_subframe_accumulation() {
        let leds = crate::coding::nominal_leds();
        let model =
            SensingModel::calibration(&leds, &crate::assets::nominal_sensitivity()).unwrap();
        let s = CodingSchedule::canonical();
        let amber = s.led_index("Amber").unwrap();
        let (row, col) = s.layout().positions_of(amber)[0];
        let (x, y) = (col + 4 * 3, row + 3 * 5);
        let a = effective_sensing_vector(&s, &model, x, y).unwrap();
        // Oracle: walk all 158 sub-frames through the per-pixel code.
        let mut oracle = vec![0.0; 41];
        let code = s.pixel_code(x, y);
        for (sf, lit) in code.active_subframes.iter().zip(&code.leds) {
            assert!(*sf < 158);
            for &l in lit {
                for k in 0..41 {
                    oracle[k] += model.led_vector(l)[k];
                }
            }
        }
        let closed: Vec<f64> = model.led_vector(amber).iter().map(|v| 40.0 * v).collect();
        for k in 0..41 {
            assert!((a[k] - oracle[k]).abs() <= 1e-12 * oracle[k].abs().max(1e-300));
            assert!((a[k] - closed[k]).abs() <= 1e-12 * closed[k].abs().max(1e-300));
        }
    }

    #[test]
    fn zero_scene_zero_frame() {
        let grid = WavelengthGrid::reconstruction();
        let s = CodingSchedule::canonical();
        let model = unit_model(12, grid);
        let f = simulate_frame(&HyperCube::zeros(8, 6, grid), &s, &model, 0.0, 1).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let s = CodingSchedule::canonical();
        let model = unit_model(12, WavelengthGrid::reconstruction());
        let scene = HyperCube::zeros(8, 6, WavelengthGrid::calibration());
        assert!(simulate_frame(&scene, &s, &model, 0.0, 1).is_err());
        let wrong_leds = unit_model(3, WavelengthGrid::reconstruction());
        let scene = HyperCube::zeros(8, 6, WavelengthGrid::reconstruction());
        assert!(simulate_frame(&scene, &s, &wrong_leds, 0.0, 1).is_err());
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let grid = WavelengthGrid::reconstruction();
        let s = CodingSchedule::canonical();
        let model = unit_model(12, grid);
        let scene = HyperCube::from_fn(24, 12, grid, |x, y, k| ((x + 2 * y + k) % 7) as f64 / 7.0);
        let clean = simulate_frame(&scene, &s, &model, 0.0, 3).unwrap();
        let a = simulate_frame(&scene, &s, &model, 0.1, 3).unwrap();
        let b = simulate_frame(&scene, &s, &model, 0.1, 3).unwrap();
        let c = simulate_frame(&scene, &s, &model, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
        let peak = clean.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let resid: Vec<f64> = a.values().iter().zip(clean.values()).map(|(n, c)| n - c).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        let rel = var.sqrt() / (0.1 * peak);
        assert!((0.8..1.2).contains(&rel), "noise std ratio {rel}");
    }

    #[test]
    fn noise_draws_are_standard_normal() {
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|p| pixel_normal(9, 2, p)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_ne!(pixel_normal(9, 2, 0), pixel_normal(9, 3, 0));
    }

    #[test]
    fn matrix_shape_and_zero_schedule() {
        let grid = WavelengthGrid::reconstruction();
        let s = CodingSchedule::canonical();
        let model = unit_model(12, grid);
        let a = build_sensing_matrix(&s, &model, 8, 6).unwrap();
        assert_eq!(a.rows, 48);
        assert_eq!(a.cols, 48 * 31);
        for r in 0..a.rows {
            let (cols, _) = a.row(r);
            assert_eq!(cols, &(r * 31..(r + 1) * 31).collect::<Vec<_>>()[..]);
        }
        let ones = vec![1.0; a.cols];
        let y = a.mul_vec(&ones).unwrap();
        let tiles = tile_sensing_vectors(&s, &model).unwrap();
        for (p, v) in y.iter().enumerate() {
            let t = s.layout().tile_index(p % 8, p / 8);
            assert_eq!(*v, tiles[t].iter().fold(0.0, |acc, x| acc + x));
        }

        let dark = CodingSchedule::from_timeline(
            s.layout().clone(),
            s.led_names().to_vec(),
            vec![vec![]; 10],
            150.0,
            0.0,
        )
        .unwrap();
        assert!(build_sensing_matrix(&dark, &model, 8, 6).unwrap().is_zero());
        assert!(matches!(
            build_sensing_matrix(&s, &model, 640, 480),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn extended_folding_sums_edge_bins() {
        let v: Vec<f64> = (0..41).map(|k| k as f64).collect();
        let e = fold_to_extended(&v);
        assert_eq!(e.len(), 33);
        assert_eq!(e[0], 1.0);
        assert_eq!(e[1], 2.0);
        assert_eq!(e[31], 32.0);
        assert_eq!(e[32], (33..41).sum::<usize>() as f64);
    }

    #[test]
    fn monotone_in_alpha() {
        let leds = crate::coding::nominal_leds();
        let sens = crate::assets::nominal_sensitivity();
        let s = CodingSchedule::canonical();
        let scene = HyperCube::from_fn(12, 6, WavelengthGrid::calibration(), |x, _, k| {
            0.2 + 0.01 * ((x + k) % 5) as f64
        });
        let base = simulate_frame(&scene, &s, &SensingModel::calibration(&leds, &sens).unwrap(), 0.0, 0)
            .unwrap();
        let mut brighter = leds.clone();
        brighter[7].alpha = 1.5;
        let up = simulate_frame(&scene, &s, &SensingModel::calibration(&brighter, &sens).unwrap(), 0.0, 0)
            .unwrap();
        for y in 0..6 {
            for x in 0..12 {
                let (b, u) = (base.get(x, y), up.get(x, y));
                if s.layout().led_at(x, y) == 7 {
                    assert!(u > b);
                } else {
                    assert_eq!(u, b);
                }
            }
        }
    }
}
