//! Wavelength grids, spectral curves and hyperspectral cubes.
//!
//! Channel `k` of a [`WavelengthGrid`] is centred at `start_nm + k * step_nm`
//! and, when a grid is used as a set of integration bins, covers
//! `[center - step/2, center + step/2]`.
//!
//! Three grids are used throughout the toolkit:
//!
//! * [`WavelengthGrid::calibration`]: 41 channels, 380–780 nm. LED spectra,
//!   camera sensitivity and chart reflectances live here.
//! * [`WavelengthGrid::reconstruction`]: 31 channels, 400–700 nm. Ground truth
//!   scenes and final reconstructions.
//! * [`WavelengthGrid::extended`]: 33 channels. Channels 2–32 are the
//!   reconstruction grid; channel 1 stands for the aggregated 380–390 nm bands
//!   and channel 33 for the aggregated 710–780 nm bands. It is stored with a
//!   nominal 390 nm start and 10 nm step so it round-trips through the cube
//!   format, but its edge channels are aggregates, not 10 nm bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reflectances may exceed 1 by this much before they are rejected.
pub const REFLECTANCE_EPS: f64 = 1e-6;

const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        if !start_nm.is_finite() || !step_nm.is_finite() {
            return Err(Error::InvalidGrid("non-finite start or step".into()));
        }
        if step_nm <= 0.0 {
            return Err(Error::InvalidGrid(format!("step {step_nm} nm is not positive")));
        }
        if count == 0 {
            return Err(Error::InvalidGrid("grid has no channels".into()));
        }
        Ok(Self {
            start_nm,
            step_nm,
            count,
        })
    }

    pub const fn calibration() -> Self {
        Self {
            start_nm: 380.0,
            step_nm: 10.0,
            count: 41,
        }
    }

    pub const fn reconstruction() -> Self {
        Self {
            start_nm: 400.0,
            step_nm: 10.0,
            count: 31,
        }
    }

    pub const fn extended() -> Self {
        Self {
            start_nm: 390.0,
            step_nm: 10.0,
            count: 33,
        }
    }

    /// A fine grid with `step_nm` spacing covering `[lo_nm, hi_nm]`.
    pub fn spanning(lo_nm: f64, hi_nm: f64, step_nm: f64) -> Result<Self> {
        let count = ((hi_nm - lo_nm) / step_nm).round() as i64 + 1;
        if count < 1 {
            return Err(Error::InvalidGrid(format!("empty span {lo_nm}..{hi_nm}")));
        }
        Self::new(lo_nm, step_nm, count as usize)
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        self.start_nm + k as f64 * self.step_nm
    }

    pub fn last_nm(&self) -> f64 {
        self.center(self.count - 1)
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |k| self.center(k))
    }

    /// Index of the channel centred at `nm`, if there is one.
    pub fn index_of(&self, nm: f64) -> Option<usize> {
        let pos = (nm - self.start_nm) / self.step_nm;
        let k = pos.round();
        if k < 0.0 || (pos - k).abs() > 1e-6 || k as usize >= self.count {
            return None;
        }
        Some(k as usize)
    }

    pub fn matches(&self, other: &WavelengthGrid) -> bool {
        self.count == other.count
            && (self.start_nm - other.start_nm).abs() <= GRID_TOL
            && (self.step_nm - other.step_nm).abs() <= GRID_TOL
    }

    /// Errors with [`Error::GridMismatch`] unless `self` matches `expected`.
    pub fn expect(&self, expected: &WavelengthGrid) -> Result<()> {
        if self.matches(expected) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: expected.to_string(),
                found: self.to_string(),
            })
        }
    }
}

impl std::fmt::Display for WavelengthGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}–{} nm / {} ch @ {} nm",
            self.start_nm,
            self.last_nm(),
            self.count,
            self.step_nm
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    /// Average of the piecewise-linear source over each bin (trapezoidal rule).
    BinIntegrate,
    /// Linear interpolation at bin centres.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCurve {
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::Dimension(format!(
                "curve has {} values for a {}-channel grid",
                values.len(),
                grid.count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: WavelengthGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.count()],
        }
    }

    pub fn from_fn(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.centers().map(f).collect();
        Self { grid, values }
    }

    /// Unit-peak Gaussian with the given centre and full width at half maximum.
    pub fn gaussian(grid: WavelengthGrid, center_nm: f64, fwhm_nm: f64) -> Self {
        let sigma = fwhm_to_sigma(fwhm_nm);
        Self::from_fn(grid, |nm| gaussian(nm, center_nm, sigma))
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Divides by the maximum so the peak becomes 1. All-zero curves are left alone.
    pub fn peak_normalized(&self) -> Self {
        let peak = self.max_value();
        if peak > 0.0 {
            self.scaled(1.0 / peak)
        } else {
            self.clone()
        }
    }

    /// Piecewise-linear value at `nm`, clamped to the edge samples outside the grid.
    pub fn sample(&self, nm: f64) -> f64 {
        let pos = (nm - self.grid.start_nm()) / self.grid.step_nm();
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        if t == 0.0 {
            self.values[i]
        } else {
            self.values[i] * (1.0 - t) + self.values[i + 1] * t
        }
    }

    /// Integral of the piecewise-linear curve over `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        let mut x0 = lo;
        let mut y0 = self.sample(lo);
        for nm in self.grid.centers() {
            if nm <= lo || nm >= hi {
                continue;
            }
            let y = self.sample(nm);
            total += 0.5 * (y0 + y) * (nm - x0);
            x0 = nm;
            y0 = y;
        }
        let y = self.sample(hi);
        total + 0.5 * (y0 + y) * (hi - x0)
    }

    /// Integral over the grid's own span (trapezoidal rule on the samples).
    pub fn total_integral(&self) -> f64 {
        self.integrate(self.grid.start_nm(), self.grid.last_nm())
    }

    pub fn resample(&self, target: &WavelengthGrid, mode: ResampleMode) -> Result<Self> {
        resample_curve(self, target, mode)
    }

    /// Rejects values outside `[0, 1 + REFLECTANCE_EPS]` and clamps the rest into `[0, 1]`.
    pub fn to_reflectance(&self) -> Result<Self> {
        for (k, &v) in self.values.iter().enumerate() {
            if !(0.0..=1.0 + REFLECTANCE_EPS).contains(&v) {
                return Err(Error::OutOfRange(format!(
                    "reflectance {v} at {} nm",
                    self.grid.center(k)
                )));
            }
        }
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.min(1.0)).collect(),
        })
    }
}

pub fn fwhm_to_sigma(fwhm_nm: f64) -> f64 {
    fwhm_nm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

#[inline]
pub fn gaussian(nm: f64, center_nm: f64, sigma_nm: f64) -> f64 {
    let z = (nm - center_nm) / sigma_nm;
    (-0.5 * z * z).exp()
}

/// Resamples `curve` onto `target`.
///
/// Outside the source span the curve is held at its edge value. In
/// bin-integrate mode every target bin must contain at least one source
/// sample.
pub fn resample_curve(
    curve: &SpectralCurve,
    target: &WavelengthGrid,
    mode: ResampleMode,
) -> Result<SpectralCurve> {
    let values = match mode {
        ResampleMode::Linear => target.centers().map(|nm| curve.sample(nm)).collect(),
        ResampleMode::BinIntegrate => {
            let half = 0.5 * target.step_nm();
            let src = curve.grid();
            let mut out = Vec::with_capacity(target.count());
            for center in target.centers() {
                let (lo, hi) = (center - half, center + half);
                let has_sample = src
                    .centers()
                    .any(|nm| nm >= lo - GRID_TOL && nm <= hi + GRID_TOL);
                if !has_sample {
                    return Err(Error::EmptyBin { center_nm: center });
                }
                out.push(curve.integrate(lo, hi) / (hi - lo));
            }
            out
        }
    };
    SpectralCurve::new(*target, values)
}

/// A `height x width x channels` cube stored row-major in `(y, x, channel)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    width: usize,
    height: usize,
    grid: WavelengthGrid,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(width: usize, height: usize, grid: WavelengthGrid, data: Vec<f64>) -> Result<Self> {
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(grid.count()))
            .ok_or_else(|| Error::Dimension("cube dimensions overflow".into()))?;
        if width == 0 || height == 0 {
            return Err(Error::Dimension("cube has a zero dimension".into()));
        }
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "cube data has {} values, expected {width}x{height}x{} = {expected}",
                data.len(),
                grid.count()
            )));
        }
        Ok(Self {
            width,
            height,
            grid,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, grid: WavelengthGrid) -> Self {
        Self {
            width,
            height,
            grid,
            data: vec![0.0; width * height * grid.count()],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        grid: WavelengthGrid,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let c = grid.count();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                for k in 0..c {
                    data.push(f(x, y, k));
                }
            }
        }
        Self {
            width,
            height,
            grid,
            data,
        }
    }

    /// Every pixel carries the same spectrum.
    pub fn uniform(width: usize, height: usize, spectrum: &SpectralCurve) -> Self {
        let values = spectrum.values();
        Self::from_fn(width, height, *spectrum.grid(), |_, _, k| values[k])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.grid.count()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let at = (y * self.width + x) * c;
        &self.data[at..at + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let c = self.channels();
        let at = (y * self.width + x) * c;
        &mut self.data[at..at + c]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels() + k]
    }

    /// One channel as a `height x width` row-major image.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        let c = self.channels();
        self.data.iter().skip(k).step_by(c).copied().collect()
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.width == other.width && self.height == other.height && self.grid.matches(&other.grid)
    }

    pub(crate) fn expect_shape(&self, other: &HyperCube) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "cube {}x{}x{} does not match {}x{}x{}",
                self.width,
                self.height,
                self.channels(),
                other.width,
                other.height,
                other.channels()
            )))
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Extends a 400–700 nm / 31-channel cube to the 33-channel extended grid.
///
/// Mirroring about the band edges: the new first channel (380–390 nm) is the
/// mean of the 410 nm and 420 nm channels, and the new last channel (710–780 nm)
/// copies the 700 nm channel.
pub fn mirror_extend_cube(cube: &HyperCube) -> Result<HyperCube> {
    cube.grid().expect(&WavelengthGrid::reconstruction())?;
    let src_c = cube.channels();
    let dst_c = src_c + 2;
    let mut data = Vec::with_capacity(cube.pixels() * dst_c);
    for px in cube.data().chunks_exact(src_c) {
        data.push(0.5 * (px[1] + px[2]));
        data.extend_from_slice(px);
        data.push(px[src_c - 1]);
    }
    HyperCube::new(cube.width(), cube.height(), WavelengthGrid::extended(), data)
}

/// Drops the two aggregate edge channels of a 33-channel cube.
pub fn strip_edge_channels(cube: &HyperCube) -> Result<HyperCube> {
    let c = cube.channels();
    if c != WavelengthGrid::extended().count() {
        return Err(Error::Dimension(format!(
            "expected a 33-channel cube, found {c} channels"
        )));
    }
    let mut data = Vec::with_capacity(cube.pixels() * (c - 2));
    for px in cube.data().chunks_exact(c) {
        data.extend_from_slice(&px[1..c - 1]);
    }
    HyperCube::new(
        cube.width(),
        cube.height(),
        WavelengthGrid::reconstruction(),
        data,
    )
}
