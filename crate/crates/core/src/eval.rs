//! Image-quality metrics and synthetic spectral benchmarks.
//!
//! Conventions: PSNR uses the volumetric MSE over all voxels with a default
//! peak of 1 and is capped at [`PSNR_CAP_DB`]. SSIM is the per-channel mean of
//! the Gaussian-windowed index (sigma 1.5, 11x11, K1 = 0.01, K2 = 0.03,
//! population statistics) over the region where the window fits entirely.
//! SAM skips pixels where either spectrum has zero norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::spectral::{HyperCube, ResampleMode, SpectralCurve, WavelengthGrid};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Spectral widths of the single-peak benchmark.
pub const SINGLE_PEAK_FWHM_NM: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
/// Peak separations of the double-peak benchmark.
pub const DOUBLE_PEAK_SEPARATION_NM: [f64; 6] = [10.0, 20.0, 30.0, 40.0, 60.0, 80.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub sam: f64,
    pub sam_skipped: usize,
}

/// `(mean angle in degrees, pixels skipped)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamReport {
    pub mean_deg: f64,
    pub skipped: usize,
}

fn check(a: &HyperCube, b: &HyperCube) -> Result<()> {
    a.expect_shape(b)
}

/// PSNR of `test` against `reference`.
pub fn psnr(reference: &HyperCube, test: &HyperCube, peak: f64) -> Result<f64> {
    check(reference, test)?;
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

pub fn mae(a: &HyperCube, b: &HyperCube) -> Result<f64> {
    check(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64)
}

/// Angle in degrees between two spectra, `None` if either has zero norm.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0).acos().to_degrees())
}

pub fn sam(a: &HyperCube, b: &HyperCube) -> Result<SamReport> {
    check(a, b)?;
    let c = a.channels();
    let (sum, count, skipped) = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .fold((0.0, 0usize, 0usize), |(s, n, k), (x, y)| match spectral_angle(x, y) {
            Some(ang) => (s + ang, n + 1, k),
            None => (s, n, k + 1),
        });
    Ok(SamReport {
        mean_deg: if count > 0 { sum / count as f64 } else { 0.0 },
        skipped,
    })
}

/// Normalised 1-D Gaussian taps over `[-SSIM_RADIUS, SSIM_RADIUS]`.
pub fn ssim_window() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / SSIM_SIGMA).powi(2)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// SSIM of one single-channel image pair with the given dynamic range.
pub fn ssim_2d(a: &[f64], b: &[f64], width: usize, height: usize, data_range: f64) -> Result<f64> {
    let win = 2 * SSIM_RADIUS + 1;
    if width < win || height < win {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {win}x{win} pixels, got {width}x{height}"
        )));
    }
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::Dimension("SSIM image sizes differ".into()));
    }
    let g = ssim_window();
    let (ow, oh) = (width - win + 1, height - win + 1);
    // Horizontal pass over every row for the five moment images.
    let mut horiz = vec![[0.0f64; 5]; height * ow];
    for y in 0..height {
        for x in 0..ow {
            let mut m = [0.0; 5];
            for (t, &w) in g.iter().enumerate() {
                let i = y * width + x + t;
                let (p, q) = (a[i], b[i]);
                m[0] += w * p;
                m[1] += w * q;
                m[2] += w * p * p;
                m[3] += w * q * q;
                m[4] += w * p * q;
            }
            horiz[y * ow + x] = m;
        }
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let mut m = [0.0; 5];
            for (t, &w) in g.iter().enumerate() {
                let h = &horiz[(y + t) * ow + x];
                for k in 0..5 {
                    m[k] += w * h[k];
                }
            }
            let (mx, my) = (m[0], m[1]);
            let vx = m[2] - mx * mx;
            let vy = m[3] - my * my;
            let cxy = m[4] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Mean per-channel SSIM with a dynamic range of 1.
pub fn ssim(a: &HyperCube, b: &HyperCube) -> Result<f64> {
    check(a, b)?;
    let vals: Vec<f64> = (0..a.channels())
        .into_par_iter()
        .map(|k| ssim_2d(&a.channel(k), &b.channel(k), a.width(), a.height(), 1.0))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn evaluate(reference: &HyperCube, test: &HyperCube) -> Result<MetricReport> {
    let s = sam(reference, test)?;
    Ok(MetricReport {
        psnr: psnr(reference, test, 1.0)?,
        ssim: ssim(reference, test)?,
        mae: mae(reference, test)?,
        sam: s.mean_deg,
        sam_skipped: s.skipped,
    })
}

/// Gaussian sampled at 1 nm over `[lo, hi]`, bin-integrated onto `grid` and
/// scaled to a maximum of 1.
pub fn binned_spectrum(grid: &WavelengthGrid, f: impl Fn(f64) -> f64) -> Result<SpectralCurve> {
    let lo = grid.start_nm() - grid.step_nm() / 2.0;
    let hi = grid.last_nm() + grid.step_nm() / 2.0;
    let fine = WavelengthGrid::spanning(lo, hi, 1.0)?;
    Ok(SpectralCurve::from_fn(fine, f)
        .resample(grid, ResampleMode::BinIntegrate)?
        .peak_normalized())
}

fn gaussian_fwhm(center: f64, fwhm: f64) -> impl Fn(f64) -> f64 {
    let sigma = crate::spectral::fwhm_to_sigma(fwhm);
    move |nm| crate::spectral::gaussian(nm, center, sigma)
}

/// Benchmark cube with the true peak wavelength of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct RainbowScene {
    pub cube: HyperCube,
    pub centers_nm: Vec<f64>,
}

/// Row `y` holds a Gaussian of the given FWHM centred at
/// `400 + 300 (H - 1 - y) / (H - 1)` nm: 400 nm at the bottom row, 700 nm at the top.
pub fn rainbow_scene(width: usize, height: usize, fwhm_nm: f64) -> Result<RainbowScene> {
    if height < 2 || width == 0 {
        return Err(Error::Dimension("rainbow scene needs at least 1x2 pixels".into()));
    }
    let grid = WavelengthGrid::reconstruction();
    let centers_nm: Vec<f64> = (0..height)
        .map(|y| 400.0 + 300.0 * (height - 1 - y) as f64 / (height - 1) as f64)
        .collect();
    let rows: Vec<Vec<f64>> = centers_nm
        .par_iter()
        .map(|&c| binned_spectrum(&grid, gaussian_fwhm(c, fwhm_nm)).map(SpectralCurve::into_values))
        .collect::<Result<_>>()?;
    let cube = HyperCube::from_fn(width, height, grid, |_, y, k| rows[y][k]);
    Ok(RainbowScene { cube, centers_nm })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthKind {
    /// One peak per curve; widths from [`SINGLE_PEAK_FWHM_NM`].
    Single,
    /// Two equal peaks with the given FWHM; separations from [`DOUBLE_PEAK_SEPARATION_NM`].
    Double { fwhm_nm: f64 },
}

/// Synthetic benchmark spectrum with its generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpectrum {
    pub curve: SpectralCurve,
    pub centers_nm: Vec<f64>,
    pub fwhm_nm: f64,
}

/// Benchmark spectra on the reconstruction grid with peaks every
/// `center_step_nm` nm; all peaks lie within 400–700 nm.
pub fn synth_spectra(kind: SynthKind, center_step_nm: f64) -> Result<Vec<SynthSpectrum>> {
    if !(center_step_nm > 0.0) {
        return Err(Error::OutOfRange("center step must be positive".into()));
    }
    let grid = WavelengthGrid::reconstruction();
    let steps = (300.0 / center_step_nm).floor() as usize;
    let mut out = Vec::new();
    match kind {
        SynthKind::Single => {
            for &fwhm in &SINGLE_PEAK_FWHM_NM {
                for i in 0..=steps {
                    let c = 400.0 + i as f64 * center_step_nm;
                    out.push(SynthSpectrum {
                        curve: binned_spectrum(&grid, gaussian_fwhm(c, fwhm))?,
                        centers_nm: vec![c],
                        fwhm_nm: fwhm,
                    });
                }
            }
        }
        SynthKind::Double { fwhm_nm } => {
            for &sep in &DOUBLE_PEAK_SEPARATION_NM {
                for i in 0..=steps {
                    let c1 = 400.0 + i as f64 * center_step_nm;
                    let c2 = c1 + sep;
                    if c2 > 700.0 {
                        break;
                    }
                    let (g1, g2) = (gaussian_fwhm(c1, fwhm_nm), gaussian_fwhm(c2, fwhm_nm));
                    out.push(SynthSpectrum {
                        curve: binned_spectrum(&grid, |nm| g1(nm) + g2(nm))?,
                        centers_nm: vec![c1, c2],
                        fwhm_nm,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Smooth scene whose spectra are non-negative mixtures of at most
/// `components` Gaussians with FWHM of at least `min_fwhm_nm`. Mixture weights
/// vary smoothly across the image; values stay within `[0, 1]`.
pub fn gaussian_mixture_scene(
    width: usize,
    height: usize,
    components: usize,
    min_fwhm_nm: f64,
    seed: u64,
) -> Result<HyperCube> {
    if components == 0 {
        return Err(Error::OutOfRange("at least one spectral component is needed".into()));
    }
    let grid = WavelengthGrid::reconstruction();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<Vec<f64>> = (0..components)
        .map(|_| {
            let c = rng.random_range(420.0..680.0);
            let fwhm = rng.random_range(min_fwhm_nm..min_fwhm_nm + 80.0);
            binned_spectrum(&grid, gaussian_fwhm(c, fwhm)).map(SpectralCurve::into_values)
        })
        .collect::<Result<_>>()?;
    let fields: Vec<(f64, f64, f64, f64)> = (0..components)
        .map(|_| {
            (
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let scale = 0.9 / components as f64;
    let (w, h) = (width as f64, height as f64);
    Ok(HyperCube::from_fn(width, height, grid, |x, y, k| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        basis
            .iter()
            .zip(&fields)
            .map(|(b, &(fx, fy, px, py))| {
                let wgt = 0.55 + 0.45 * (std::f64::consts::TAU * fx * u + px).sin() * (std::f64::consts::TAU * fy * v + py).cos();
                scale * wgt * b[k]
            })
            .sum::<f64>()
            + 0.05
    }))
}

/// Per-row peak-wavelength errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakReport {
    /// `(row, true centre, estimated peak - true centre)`.
    pub rows: Vec<(usize, f64, f64)>,
    pub median_abs_error_nm: f64,
}

/// Wavelength of the maximum of the spectrum after linear interpolation to 1 nm.
pub fn peak_wavelength(spectrum: &[f64], grid: &WavelengthGrid) -> f64 {
    let curve = SpectralCurve::new(*grid, spectrum.to_vec()).expect("length matches grid");
    let (lo, hi) = (grid.start_nm(), grid.last_nm());
    let n = (hi - lo).round() as usize;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..=n {
        let nm = lo + i as f64;
        let v = curve.sample(nm);
        if v > best.1 {
            best = (nm, v);
        }
    }
    best.0
}

/// Compares each row's column-averaged reconstructed spectrum with the true
/// centre, for rows whose centre lies in `[lo_nm, hi_nm]`.
pub fn peak_localization(
    recon: &HyperCube,
    truth: &RainbowScene,
    lo_nm: f64,
    hi_nm: f64,
) -> Result<PeakReport> {
    check(recon, &truth.cube)?;
    let c = recon.channels();
    let mut rows = Vec::new();
    for (y, &centre) in truth.centers_nm.iter().enumerate() {
        if centre < lo_nm || centre > hi_nm {
            continue;
        }
        let mut mean = vec![0.0; c];
        for x in 0..recon.width() {
            for (m, v) in mean.iter_mut().zip(recon.pixel(x, y)) {
                *m += v;
            }
        }
        rows.push((y, centre, peak_wavelength(&mean, recon.grid()) - centre));
    }
    if rows.is_empty() {
        return Err(Error::OutOfRange(format!(
            "no rows with centres in {lo_nm}–{hi_nm} nm"
        )));
    }
    let mut abs: Vec<f64> = rows.iter().map(|r| r.2.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let m = abs.len();
    let median = if m % 2 == 1 {
        abs[m / 2]
    } else {
        0.5 * (abs[m / 2 - 1] + abs[m / 2])
    };
    Ok(PeakReport {
        rows,
        median_abs_error_nm: median,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    pub report: MetricReport,
}

pub const SWEEP_CSV_HEADER: &str = "sigma_pct,seed,psnr_db,ssim,mae,sam_deg";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.8},{:.6}\n",
            r.sigma * 100.0,
            r.seed,
            r.report.psnr,
            r.report.ssim,
            r.report.mae,
            r.report.sam
        ));
    }
    out
}

/// Mean PSNR per sigma, in first-seen sigma order.
pub fn mean_psnr_by_sigma(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|e| e.0 == r.sigma) {
            Some(e) => {
                e.1 += r.report.psnr;
                e.2 += 1;
            }
            None => out.push((r.sigma, r.report.psnr, 1)),
        }
    }
    out.into_iter().map(|(s, p, n)| (s, p / n as f64)).collect()
}

/// Sigmas whose mean PSNR exceeds the previous level's by more than `slack_db`.
pub fn non_monotone_levels(rows: &[SweepRow], slack_db: f64) -> Vec<f64> {
    mean_psnr_by_sigma(rows)
        .windows(2)
        .filter(|w| w[1].1 > w[0].1 + slack_db)
        .map(|w| w[1].0)
        .collect()
}

/// Noise levels of the evaluation sweep, as fractions of the peak signal.
pub const SWEEP_SIGMAS: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

/// Runs the static pipeline for every `(sigma, seed)` pair and scores it against `scene`.
///
/// Rows are ordered by sigma, then seed. A PSNR increase beyond 0.3 dB between
/// consecutive noise levels is logged as a warning.
pub fn noise_sweep(pipeline: &Pipeline, scene: &HyperCube, sigmas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sigmas.len() * seeds.len());
    for &sigma in sigmas {
        for &seed in seeds {
            let (recon, _) = pipeline.run_static(scene, sigma, seed)?;
            rows.push(SweepRow {
                sigma,
                seed,
                report: evaluate(scene, &recon)?,
            });
        }
    }
    let bad = non_monotone_levels(&rows, 0.3);
    if !bad.is_empty() {
        log::warn!("PSNR rises with noise at sigma levels {bad:?}");
    }
    Ok(rows)
}
