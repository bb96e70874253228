//! LED gain calibration against ColorChecker-style measurements.
//!
//! The simulated response of LED `l` to patch `p` is
//! `alpha_l * sum_k E_lk C_pk S_k` on the 41-channel calibration grid. Each
//! `alpha_l` scales only its own row, so the non-negative least-squares fit
//! separates into one projected scalar regression per LED.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assets;
use crate::coding::{CodingSchedule, LedChannel};
use crate::error::{Error, Result};
use crate::forward::{simulate_frame_indexed, CodedFrame, SensingModel};
use crate::spectral::{HyperCube, ResampleMode, SpectralCurve, WavelengthGrid};

/// Illuminant samples at or below this fraction of the illuminant peak are
/// treated as dark.
pub const DARK_FLOOR: f64 = 1e-9;

/// Number of repeated captures averaged per calibration measurement.
pub const CAPTURES_PER_MEASUREMENT: usize = 5;

/// `L x N` matrix of mean responses, row-major (LED, patch).
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMatrix {
    leds: usize,
    patches: usize,
    values: Vec<f64>,
}

impl ResponseMatrix {
    pub fn new(leds: usize, patches: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != leds * patches {
            return Err(Error::Dimension(format!(
                "{} values for a {leds}x{patches} response matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite response value".into()));
        }
        Ok(Self {
            leds,
            patches,
            values,
        })
    }

    pub fn zeros(leds: usize, patches: usize) -> Self {
        Self {
            leds,
            patches,
            values: vec![0.0; leds * patches],
        }
    }

    pub fn leds(&self) -> usize {
        self.leds
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, led: usize, patch: usize) -> f64 {
        self.values[led * self.patches + patch]
    }

    pub fn row(&self, led: usize) -> &[f64] {
        &self.values[led * self.patches..(led + 1) * self.patches]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            leds: self.leds,
            patches: self.patches,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// CSV with header `led,<patch names>` and one row per LED.
    pub fn to_csv(&self, led_names: &[String], patch_names: &[String]) -> String {
        let mut out = String::from("led");
        for n in patch_names {
            out.push(',');
            out.push_str(&csv_field(n));
        }
        out.push('\n');
        for l in 0..self.leds {
            out.push_str(&csv_field(&led_names[l]));
            for v in self.row(l) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`ResponseMatrix::to_csv`] output; returns the matrix and LED names.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<(Self, Vec<String>)> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let csv_err = |source| Error::Csv {
            path: origin.to_path_buf(),
            source,
        };
        let patches = reader.headers().map_err(csv_err)?.len().saturating_sub(1);
        if patches == 0 {
            return Err(Error::format(origin, "response table has no patch columns"));
        }
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            names.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|_| {
                    Error::format(origin, format!("row {}: `{field}` is not a number", line + 2))
                })?);
            }
        }
        Ok((Self::new(names.len(), patches, values)?, names))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub alpha: Vec<f64>,
    /// Total sum of squared errors at the fitted `alpha`.
    pub residual: f64,
    /// Per-LED sum of squared errors.
    pub per_led_fit: Vec<f64>,
    /// LEDs whose simulated response is identically zero; their alpha is 0.
    pub indeterminate: Vec<bool>,
}

/// Divides measured radiance by the illuminant and clamps into `[0, 1]`.
pub fn reflectance_from_radiance(
    measured: &SpectralCurve,
    illuminant: &SpectralCurve,
) -> Result<SpectralCurve> {
    illuminant.grid().expect(measured.grid())?;
    let floor = DARK_FLOOR * illuminant.max_value().max(0.0);
    let mut dark = Vec::new();
    let mut out = Vec::with_capacity(measured.values().len());
    for (k, (&m, &b)) in measured.values().iter().zip(illuminant.values()).enumerate() {
        if b <= floor {
            if m != 0.0 {
                dark.push(measured.grid().center(k));
            }
            out.push(0.0);
        } else {
            out.push(m / b);
        }
    }
    if !dark.is_empty() {
        return Err(Error::DarkIlluminant {
            wavelengths_nm: dark,
        });
    }
    SpectralCurve::new(*measured.grid(), out)?.to_reflectance()
}

/// Bin-integrates a native-resolution curve onto the 41-channel calibration grid.
pub fn to_calibration_grid(curve: &SpectralCurve) -> Result<SpectralCurve> {
    let cal = WavelengthGrid::calibration();
    if curve.grid().matches(&cal) {
        return Ok(curve.clone());
    }
    curve.resample(&cal, ResampleMode::BinIntegrate)
}

/// `M_lp = alpha_l * sum_k E_lk C_pk S_k`, all curves on one grid.
pub fn simulate_response(
    leds: &[LedChannel],
    patches: &[SpectralCurve],
    sensitivity: &SpectralCurve,
    alpha: &[f64],
) -> Result<ResponseMatrix> {
    if alpha.len() != leds.len() {
        return Err(Error::Dimension(format!(
            "{} alphas for {} LEDs",
            alpha.len(),
            leds.len()
        )));
    }
    let grid = sensitivity.grid();
    for c in leds.iter().map(|l| &l.spd).chain(patches) {
        c.grid().expect(grid)?;
    }
    let mut values = Vec::with_capacity(leds.len() * patches.len());
    for (led, &a) in leds.iter().zip(alpha) {
        let es: Vec<f64> = led
            .spd
            .values()
            .iter()
            .zip(sensitivity.values())
            .map(|(e, s)| e * s)
            .collect();
        for patch in patches {
            let m: f64 = es.iter().zip(patch.values()).map(|(x, c)| x * c).sum();
            values.push(a * m);
        }
    }
    ResponseMatrix::new(leds.len(), patches.len(), values)
}

/// Non-negative least-squares fit of per-LED gains.
pub fn fit_alpha(
    measured: &ResponseMatrix,
    leds: &[LedChannel],
    patches: &[SpectralCurve],
    sensitivity: &SpectralCurve,
) -> Result<CalibrationResult> {
    if patches.is_empty() {
        return Err(Error::Dimension("calibration needs at least one patch".into()));
    }
    let model = simulate_response(leds, patches, sensitivity, &vec![1.0; leds.len()])?;
    if measured.leds() != model.leds() || measured.patches() != model.patches() {
        return Err(Error::Dimension(format!(
            "measured {}x{} responses for {} LEDs and {} patches",
            measured.leds(),
            measured.patches(),
            model.leds(),
            model.patches()
        )));
    }
    let fits: Vec<(f64, f64, bool)> = (0..leds.len())
        .into_par_iter()
        .map(|l| {
            let m = model.row(l);
            let y = measured.row(l);
            let mm: f64 = m.iter().map(|v| v * v).sum();
            let (alpha, indeterminate) = if mm > 0.0 {
                let my: f64 = m.iter().zip(y).map(|(a, b)| a * b).sum();
                ((my / mm).max(0.0), false)
            } else {
                (0.0, true)
            };
            let sse = m.iter().zip(y).map(|(a, b)| (alpha * a - b).powi(2)).sum();
            (alpha, sse, indeterminate)
        })
        .collect();
    Ok(CalibrationResult {
        alpha: fits.iter().map(|f| f.0).collect(),
        residual: fits.iter().map(|f| f.1).sum(),
        per_led_fit: fits.iter().map(|f| f.1).collect(),
        indeterminate: fits.iter().map(|f| f.2).collect(),
    })
}

/// Sum of squared errors between `measured` and the model at a given `alpha`.
pub fn response_residual(
    measured: &ResponseMatrix,
    leds: &[LedChannel],
    patches: &[SpectralCurve],
    sensitivity: &SpectralCurve,
    alpha: &[f64],
) -> Result<f64> {
    let sim = simulate_response(leds, patches, sensitivity, alpha)?;
    Ok(sim
        .values()
        .iter()
        .zip(measured.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

pub const NNLS_TOLERANCE: f64 = 1e-10;
pub const NNLS_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `argmin_{x >= 0} ||A x - b||^2` by accelerated projected gradient.
///
/// Stops when an iteration moves `x` by at most `NNLS_TOLERANCE * max(1, ||x||)`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "{}x{} system with a right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let n = a.ncols();
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let lipschitz = ata.clone().symmetric_eigenvalues().max();
    if !(lipschitz > 0.0) {
        return Ok(NnlsSolution {
            x: vec![0.0; n],
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / lipschitz;
    let mut x = DVector::<f64>::zeros(n);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for it in 1..=NNLS_MAX_ITERATIONS {
        let grad = &ata * &z - &atb;
        let next = (&z - grad * step).map(|v| v.max(0.0));
        let moved = (&next - &x).norm();
        // Restart the momentum whenever it points uphill.
        let restart = (&next - &x).dot(&(&z - &next)) > 0.0;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = if restart { 0.0 } else { (t - 1.0) / t_next };
        z = &next + (&next - &x) * momentum;
        x = next;
        t = if restart { 1.0 } else { t_next };
        if moved <= NNLS_TOLERANCE * x.norm().max(1.0) {
            return Ok(NnlsSolution {
                x: x.iter().copied().collect(),
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(NnlsSolution {
        x: x.iter().copied().collect(),
        iterations: NNLS_MAX_ITERATIONS,
        converged: false,
    })
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }
}

/// Mean frame value per (LED, region). With `normalize`, each mean is divided
/// by the LED's active sub-frame count.
pub fn average_patch_response(
    frame: &CodedFrame,
    schedule: &CodingSchedule,
    regions: &[Rect],
    normalize: bool,
) -> Result<ResponseMatrix> {
    let layout = schedule.layout();
    let n_leds = schedule.num_leds();
    let counts = schedule.subframes_per_led();
    let mut out = ResponseMatrix::zeros(n_leds, regions.len());
    for (p, r) in regions.iter().enumerate() {
        if r.width == 0
            || r.height == 0
            || r.x + r.width > frame.width()
            || r.y + r.height > frame.height()
        {
            return Err(Error::OutOfRange(format!(
                "region {p} ({}x{} at {},{}) exceeds the {}x{} frame",
                r.width,
                r.height,
                r.x,
                r.y,
                frame.width(),
                frame.height()
            )));
        }
        let mut sum = vec![0.0; n_leds];
        let mut num = vec![0usize; n_leds];
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                let l = layout.led_at(x, y);
                sum[l] += frame.get(x, y);
                num[l] += 1;
            }
        }
        let missing: Vec<String> = (0..n_leds)
            .filter(|&l| num[l] == 0)
            .map(|l| schedule.led_names()[l].clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteRegion { index: p, missing });
        }
        for l in 0..n_leds {
            let mut v = sum[l] / num[l] as f64;
            if normalize {
                v /= counts[l].max(1) as f64;
            }
            out.values[l * regions.len() + p] = v;
        }
    }
    Ok(out)
}

/// Pixel-wise mean of repeated captures of the same scene.
pub fn average_frames(frames: &[CodedFrame]) -> Result<CodedFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Dimension("no frames to average".into()))?;
    let mut acc = vec![0.0; first.values().len()];
    for f in frames {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(Error::Dimension("captures differ in size".into()));
        }
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    CodedFrame::new(
        first.width(),
        first.height(),
        acc,
        first.noise_sigma_frac(),
        first.seed(),
        first.frame_index(),
    )
}

/// Simulates `captures` noisy frames of one scene (seed `seed`, noise streams
/// `0..captures`) and averages them.
pub fn averaged_capture(
    scene: &HyperCube,
    schedule: &CodingSchedule,
    model: &SensingModel,
    noise_sigma_frac: f64,
    seed: u64,
    captures: usize,
) -> Result<CodedFrame> {
    let frames: Vec<CodedFrame> = (0..captures.max(1) as u64)
        .map(|i| simulate_frame_indexed(scene, schedule, model, noise_sigma_frac, seed, i))
        .collect::<Result<_>>()?;
    average_frames(&frames)
}

/// Bundled ColorChecker reflectances on the calibration grid, in chart order.
pub fn colorchecker_patches() -> Vec<SpectralCurve> {
    assets::colorchecker().curves()
}

pub fn colorchecker_names() -> Vec<String> {
    assets::colorchecker().names.clone()
}

/// Synthetic 6x4 chart on the calibration grid: each patch is
/// `patch_px x patch_px` pixels. Returns the cube and one sampling rectangle
/// per patch, inset by `margin` pixels.
pub fn colorchecker_chart(patch_px: usize, margin: usize) -> Result<(HyperCube, Vec<Rect>)> {
    if patch_px <= 2 * margin {
        return Err(Error::OutOfRange(format!(
            "patch size {patch_px} leaves no interior with margin {margin}"
        )));
    }
    let patches = colorchecker_patches();
    let (cols, rows) = (6, 4);
    let cube = HyperCube::from_fn(
        cols * patch_px,
        rows * patch_px,
        WavelengthGrid::calibration(),
        |x, y, k| patches[(y / patch_px) * cols + x / patch_px].values()[k],
    );
    let rects = (0..rows * cols)
        .map(|i| {
            Rect::new(
                (i % cols) * patch_px + margin,
                (i / cols) * patch_px + margin,
                patch_px - 2 * margin,
                patch_px - 2 * margin,
            )
        })
        .collect();
    Ok((cube, rects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::nominal_sensitivity;
    use crate::coding::nominal_leds;
    use crate::forward::simulate_frame;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cal_leds() -> Vec<LedChannel> {
        nominal_leds()
            .into_iter()
            .map(|l| LedChannel::new(l.name, to_calibration_grid(&l.spd).unwrap()).unwrap())
            .collect()
    }

    fn cal_sensitivity() -> SpectralCurve {
        to_calibration_grid(&nominal_sensitivity()).unwrap()
    }

    #[test]
    fn reflectance_division() {
        let b = assets::d65();
        let r = reflectance_from_radiance(&b, &b).unwrap();
        assert!(r.values().iter().all(|&v| v == 1.0));
        let r = reflectance_from_radiance(&b.scaled(0.5), &b).unwrap();
        assert!(r.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let mut vals = b.values().to_vec();
        vals[3] = 0.0;
        let dark = SpectralCurve::new(*b.grid(), vals).unwrap();
        match reflectance_from_radiance(&b, &dark) {
            Err(Error::DarkIlluminant { wavelengths_nm }) => assert_eq!(wavelengths_nm, vec![410.0]),
            other => panic!("expected dark illuminant error, got {other:?}"),
        }
        assert!(reflectance_from_radiance(&b.scaled(1.5), &b).is_err());
    }

    #[test]
    fn response_trivial_cases() {
        let g = WavelengthGrid::calibration();
        let one = SpectralCurve::constant(g, 1.0);
        let led = LedChannel::new("A", one.clone()).unwrap();
        let m = simulate_response(std::slice::from_ref(&led), std::slice::from_ref(&one), &one, &[2.5]).unwrap();
        assert_relative_eq!(m.get(0, 0), 41.0 * 2.5, max_relative = 1e-15);
        let m = simulate_response(&cal_leds(), &colorchecker_patches(), &cal_sensitivity(), &[0.0; 12])
            .unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn response_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = WavelengthGrid::calibration();
        let rand_curve = |rng: &mut ChaCha8Rng| {
            SpectralCurve::new(g, (0..41).map(|_| rng.random::<f64>()).collect()).unwrap()
        };
        let leds: Vec<LedChannel> = (0..3)
            .map(|i| LedChannel::new(format!("L{i}"), rand_curve(&mut rng)).unwrap())
            .collect();
        let patches: Vec<SpectralCurve> = (0..4).map(|_| rand_curve(&mut rng)).collect();
        let s = rand_curve(&mut rng);
        let alpha = [0.5, 2.0, 3.0];
        let m = simulate_response(&leds, &patches, &s, &alpha).unwrap();
        for l in 0..3 {
            for p in 0..4 {
                let mut acc = 0.0;
                for k in 0..41 {
                    acc += alpha[l] * leds[l].spd.values()[k] * patches[p].values()[k] * s.values()[k];
                }
                assert_relative_eq!(m.get(l, p), acc, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn fit_round_trip_and_zero() {
        let (leds, patches, s) = (cal_leds(), colorchecker_patches(), cal_sensitivity());
        let truth: Vec<f64> = (0..12).map(|i| 0.1 + 0.8 * i as f64).collect();
        let measured = simulate_response(&leds, &patches, &s, &truth).unwrap();
        let fit = fit_alpha(&measured, &leds, &patches, &s).unwrap();
        for (a, t) in fit.alpha.iter().zip(&truth) {
            assert_relative_eq!(a, t, max_relative = 1e-9);
        }
        let zero = fit_alpha(&ResponseMatrix::zeros(12, 24), &leds, &patches, &s).unwrap();
        assert!(zero.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn dark_led_is_flagged() {
        let g = WavelengthGrid::calibration();
        let leds = vec![
            LedChannel::new("lit", SpectralCurve::constant(g, 1.0)).unwrap(),
            LedChannel::new("dark", SpectralCurve::constant(g, 0.0)).unwrap(),
        ];
        let patches = vec![SpectralCurve::constant(g, 0.5)];
        let s = SpectralCurve::constant(g, 1.0);
        let measured = ResponseMatrix::new(2, 1, vec![41.0, 3.0]).unwrap();
        let fit = fit_alpha(&measured, &leds, &patches, &s).unwrap();
        assert_eq!(fit.indeterminate, vec![false, true]);
        assert_eq!(fit.alpha[1], 0.0);
        assert_relative_eq!(fit.alpha[0], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn negative_correlation_projects_to_zero() {
        let g = WavelengthGrid::calibration();
        let leds = vec![LedChannel::new("a", SpectralCurve::constant(g, 1.0)).unwrap()];
        let patches = vec![SpectralCurve::constant(g, 1.0)];
        let s = SpectralCurve::constant(g, 1.0);
        let measured = ResponseMatrix::new(1, 1, vec![-5.0]).unwrap();
        let fit = fit_alpha(&measured, &leds, &patches, &s).unwrap();
        assert_eq!(fit.alpha, vec![0.0]);
    }

    #[test]
    fn nnls_matches_active_set_solution() {
        // Unconstrained optimum has a negative second coordinate.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, -1.0, 1.0]);
        let sol = nnls(&a, &b).unwrap();
        assert!(sol.converged);
        // With x2 = 0: minimise (x1-2)^2 + (x1-1)^2 -> x1 = 1.5.
        assert_relative_eq!(sol.x[0], 1.5, epsilon = 1e-8);
        assert_eq!(sol.x[1], 0.0);
    }

    #[test]
    fn nnls_agrees_with_closed_form_on_separable_problem() {
        let (leds, patches, s) = (cal_leds(), colorchecker_patches(), cal_sensitivity());
        let truth: Vec<f64> = (0..12).map(|i| 1.0 + 0.25 * i as f64).collect();
        let measured = simulate_response(&leds, &patches, &s, &truth).unwrap();
        let model = simulate_response(&leds, &patches, &s, &[1.0; 12]).unwrap();
        // Stack the per-LED regressions as one block-diagonal system.
        let n = patches.len();
        let mut a = DMatrix::zeros(12 * n, 12);
        for l in 0..12 {
            for p in 0..n {
                a[(l * n + p, l)] = model.get(l, p) / model.row(l).iter().cloned().fold(0.0, f64::max);
            }
        }
        let b = DVector::from_iterator(12 * n, measured.values().iter().enumerate().map(|(i, v)| {
            v / model.row(i / n).iter().cloned().fold(0.0, f64::max)
        }));
        let sol = nnls(&a, &b).unwrap();
        assert!(sol.converged);
        for (x, t) in sol.x.iter().zip(&truth) {
            assert_relative_eq!(x, t, max_relative = 1e-7);
        }
    }

    #[test]
    fn patch_averaging() {
        let sched = CodingSchedule::canonical();
        let frame = CodedFrame::new(24, 24, vec![7.0; 576], 0.0, 0, 0).unwrap();
        let m = average_patch_response(&frame, &sched, &[Rect::new(0, 0, 12, 12)], false).unwrap();
        assert!(m.values().iter().all(|&v| v == 7.0));
        let err = average_patch_response(&frame, &sched, &[Rect::new(5, 5, 1, 1)], false).unwrap_err();
        match err {
            Error::IncompleteRegion { index, missing } => {
                assert_eq!(index, 0);
                assert_eq!(missing.len(), 11);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(average_patch_response(&frame, &sched, &[Rect::new(20, 20, 8, 8)], false).is_err());
    }

    #[test]
    fn chart_frame_reproduces_simulated_response() {
        let leds = cal_leds();
        let s = cal_sensitivity();
        let sched = CodingSchedule::canonical();
        let model = SensingModel::new(&leds, &s).unwrap();
        let (chart, rects) = colorchecker_chart(12, 0).unwrap();
        let frame = simulate_frame(&chart, &sched, &model, 0.0, 0).unwrap();
        let measured = average_patch_response(&frame, &sched, &rects, true).unwrap();
        let sim = simulate_response(&leds, &colorchecker_patches(), &s, &[1.0; 12]).unwrap();
        for (a, b) in measured.values().iter().zip(sim.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn averaging_reduces_noise() {
        let leds = cal_leds();
        let s = cal_sensitivity();
        let sched = CodingSchedule::canonical();
        let model = SensingModel::new(&leds, &s).unwrap();
        let scene = HyperCube::uniform(48, 48, &SpectralCurve::constant(WavelengthGrid::calibration(), 0.5));
        let clean = simulate_frame(&scene, &sched, &model, 0.0, 0).unwrap();
        let one = averaged_capture(&scene, &sched, &model, 0.05, 9, 1).unwrap();
        let five = averaged_capture(&scene, &sched, &model, 0.05, 9, CAPTURES_PER_MEASUREMENT).unwrap();
        let err = |f: &CodedFrame| -> f64 {
            f.values().iter().zip(clean.values()).map(|(a, b)| (a - b).powi(2)).sum()
        };
        assert!(err(&five) < 0.35 * err(&one));
    }

    #[test]
    fn response_csv_round_trip() {
        let m = ResponseMatrix::new(2, 3, vec![1.0, 2.5, 3.0, 0.0, 1e-7, 4.0]).unwrap();
        let names = vec!["A".to_string(), "B, wide".to_string()];
        let patches: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let text = m.to_csv(&names, &patches);
        let (back, back_names) = ResponseMatrix::parse_csv(&text, Path::new("r.csv")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_names, names);
        assert!(ResponseMatrix::parse_csv("led,a\nX,oops\n", Path::new("r.csv")).is_err());
    }

    proptest! {
        #[test]
        fn scale_equivariance(led in 0usize..12, c in 0.1f64..10.0) {
            let (leds, patches, s) = (cal_leds(), colorchecker_patches(), cal_sensitivity());
            let measured = simulate_response(&leds, &patches, &s, &[1.3; 12]).unwrap();
            let base = fit_alpha(&measured, &leds, &patches, &s).unwrap();
            let mut vals = measured.values().to_vec();
            for v in &mut vals[led * 24..(led + 1) * 24] {
                *v *= c;
            }
            let scaled = ResponseMatrix::new(12, 24, vals).unwrap();
            let fit = fit_alpha(&scaled, &leds, &patches, &s).unwrap();
            for l in 0..12 {
                let expect = if l == led { base.alpha[l] * c } else { base.alpha[l] };
                prop_assert!((fit.alpha[l] - expect).abs() <= 1e-12 * expect.abs());
            }
        }

        #[test]
        fn fitted_residual_not_worse_than_unit_alpha(seed in 0u64..1000) {
            let (leds, patches, s) = (cal_leds(), colorchecker_patches(), cal_sensitivity());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..10.0)).collect();
            let clean = simulate_response(&leds, &patches, &s, &truth).unwrap();
            let noisy: Vec<f64> = clean.values().iter().map(|v| v * (1.0 + 0.2 * (rng.random::<f64>() - 0.5))).collect();
            let measured = ResponseMatrix::new(12, 24, noisy).unwrap();
            let fit = fit_alpha(&measured, &leds, &patches, &s).unwrap();
            let unit = response_residual(&measured, &leds, &patches, &s, &[1.0; 12]).unwrap();
            prop_assert!(fit.residual <= unit * (1.0 + 1e-12));
            prop_assert!(fit.alpha.iter().all(|&a| a >= 0.0));
        }
    }
}
