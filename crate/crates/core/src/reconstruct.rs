//! Patch-wise regularised inversion from aligned sub-images to a cube.
//!
//! Per pixel the solver minimises
//! `sum_l (a_l^T r - y_l / n_l)^2 + lambda * tau * |r|^2 + mu * tau * |D r|^2`
//! on the 33-channel extended grid, where `a_l` is LED `l`'s per-sub-frame
//! sensing vector, `n_l` its sub-frame count, `D` the second-difference
//! operator and `tau = tr(A^T A) / 33`. The system matrix is the same for every
//! pixel, so it is factorised once. Patches are solved independently and
//! merged as `Fold(K * P) / Fold(K)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coding::CodingSchedule;
use crate::demosaic::SubImageSet;
use crate::error::{Error, Result};
use crate::forward::{tile_sensing_vectors, SensingModel};
use crate::spectral::{strip_edge_channels, HyperCube, WavelengthGrid};

pub const DEFAULT_LAMBDA: f64 = 1e-5;
pub const DEFAULT_MU: f64 = 1e-1;
pub const DEFAULT_KERNEL_FLOOR: f64 = 0.01;

/// Patches solved concurrently before being folded in index order.
const FOLD_BATCH: usize = 32;

/// Sliding-window geometry with tile-aligned anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_y: usize,
    pub stride_x: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            patch_h: 66,
            patch_w: 64,
            stride_y: 30,
            stride_x: 32,
            tile_rows: 3,
            tile_cols: 4,
        }
    }
}

impl PatchSpec {
    /// Window origins along one axis. Strided origins are followed, if needed,
    /// by a flush origin snapped down to a tile boundary; when snapping would
    /// leave the last pixels uncovered the exact flush origin is used.
    fn axis(len: usize, size: usize, stride: usize, tile: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=len - size).step_by(stride.max(1)).collect();
        let last = *out.last().unwrap_or(&0);
        if last + size < len {
            let flush = len - size;
            let snapped = flush - flush % tile.max(1);
            let origin = if snapped + size >= len { snapped } else { flush };
            if origin > last {
                out.push(origin);
            }
        }
        out
    }

    /// Top-left corners `(y, x)` of all patches for an image.
    pub fn positions(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        if width < self.patch_w || height < self.patch_h {
            return Err(Error::Dimension(format!(
                "{width}x{height} image is smaller than one {}x{} patch",
                self.patch_w, self.patch_h
            )));
        }
        let ys = Self::axis(height, self.patch_h, self.stride_y, self.tile_rows);
        let xs = Self::axis(width, self.patch_w, self.stride_x, self.tile_cols);
        Ok(ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
            .collect())
    }
}

/// A `h x w x channels` block anchored at `(y, x)`, stored (row, col, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Patch {
    pub fn constant(y: usize, x: usize, h: usize, w: usize, channels: usize, value: f64) -> Self {
        Self {
            y,
            x,
            h,
            w,
            channels,
            data: vec![value; h * w * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.w + col) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Spatial blending weights for one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightKernel {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl WeightKernel {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::Dimension(format!(
                "{} kernel values for {h}x{w}",
                values.len()
            )));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::OutOfRange("kernel weights must be positive".into()));
        }
        Ok(Self { h, w, values })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }
}

/// Hann window of length `n` scaled to a maximum of 1.
fn hann(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let i = i.min(n - 1 - i);
            (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin().powi(2)
        })
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    raw.into_iter().map(|v| v / peak).collect()
}

/// Separable Hann kernel floored at `floor`.
pub fn hann_kernel(h: usize, w: usize, floor: f64) -> Result<WeightKernel> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::OutOfRange(format!("kernel floor {floor} outside (0, 1]")));
    }
    let (wy, wx) = (hann(h), hann(w));
    let values = wy
        .iter()
        .flat_map(|a| wx.iter().map(move |b| (a * b).max(floor)))
        .collect();
    WeightKernel::new(h, w, values)
}

pub fn default_kernel() -> WeightKernel {
    let spec = PatchSpec::default();
    hann_kernel(spec.patch_h, spec.patch_w, DEFAULT_KERNEL_FLOOR).expect("valid default kernel")
}

/// Cuts `L`-channel patches out of a sub-image set.
pub fn extract_patches(images: &SubImageSet, spec: &PatchSpec) -> Result<Vec<Patch>> {
    Ok(spec
        .positions(images.width, images.height)?
        .into_iter()
        .map(|(y, x)| cut_patch(images, spec, y, x))
        .collect())
}

fn cut_patch(images: &SubImageSet, spec: &PatchSpec, y: usize, x: usize) -> Patch {
    let l = images.num_leds();
    let mut data = Vec::with_capacity(spec.patch_h * spec.patch_w * l);
    for row in y..y + spec.patch_h {
        for col in x..x + spec.patch_w {
            for led in 0..l {
                data.push(images.get(led, col, row));
            }
        }
    }
    Patch {
        y,
        x,
        h: spec.patch_h,
        w: spec.patch_w,
        channels: l,
        data,
    }
}

/// Second-difference operator on `n` channels, `(n - 2) x n`.
pub fn second_difference(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n.saturating_sub(2), n);
    for k in 0..n.saturating_sub(2) {
        d[(k, k)] = 1.0;
        d[(k, k + 1)] = -2.0;
        d[(k, k + 2)] = 1.0;
    }
    d
}

/// Factorised per-pixel solver.
#[derive(Clone, Debug)]
pub struct ReconModel {
    grid: WavelengthGrid,
    /// `L x C` per-sub-frame sensing rows.
    a: DMatrix<f64>,
    counts: Vec<f64>,
    lambda: f64,
    mu: f64,
    /// `A^T A + lambda tau I + mu tau D^T D`.
    system: DMatrix<f64>,
    /// `system^-1 A^T`, `C x L`.
    gain: DMatrix<f64>,
}

impl ReconModel {
    /// Builds the solver from per-LED sensing rows `a_l` (already divided by
    /// the sub-frame count) and the counts used to normalise measurements.
    pub fn from_rows(
        grid: WavelengthGrid,
        rows: &[Vec<f64>],
        counts: &[u32],
        lambda: f64,
        mu: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && mu >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "regularisation weights must be non-negative (lambda = {lambda}, mu = {mu})"
            )));
        }
        if rows.len() != counts.len() || rows.is_empty() {
            return Err(Error::Dimension(format!(
                "{} sensing rows for {} counts",
                rows.len(),
                counts.len()
            )));
        }
        let c = grid.count();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension(format!(
                "sensing rows must have {c} channels"
            )));
        }
        if counts.contains(&0) {
            return Err(Error::Schedule("an LED has no active sub-frames".into()));
        }
        let a = DMatrix::from_fn(rows.len(), c, |l, k| rows[l][k]);
        let ata = a.transpose() * &a;
        let tau = ata.trace() / c as f64;
        let d = second_difference(c);
        let system = &ata
            + DMatrix::identity(c, c) * (lambda * tau)
            + (d.transpose() * &d) * (mu * tau);
        if (lambda == 0.0 && mu == 0.0) || tau == 0.0 {
            return Err(Error::Singular(format!(
                "{} measurements cannot determine {c} channels without regularisation; \
                 use a positive lambda or mu",
                rows.len()
            )));
        }
        let chol = system.clone().cholesky().ok_or_else(|| {
            Error::Singular("normal equations are not positive definite; increase lambda".into())
        })?;
        let gain = chol.solve(&a.transpose());
        Ok(Self {
            grid,
            a,
            counts: counts.iter().map(|&n| n as f64).collect(),
            lambda,
            mu,
            system,
            gain,
        })
    }

    /// Solver for `schedule` with an extended-grid sensing model.
    pub fn new(schedule: &CodingSchedule, model: &SensingModel, lambda: f64, mu: f64) -> Result<Self> {
        model.grid().expect(&WavelengthGrid::extended())?;
        let tiles = tile_sensing_vectors(schedule, model)?;
        let counts = schedule.subframes_per_led();
        let layout = schedule.layout();
        let rows = (0..schedule.num_leds())
            .map(|l| {
                let t = layout.led_of_tile().iter().position(|&x| x == l).ok_or_else(|| {
                    Error::Schedule(format!("LED `{}` has no tile position", schedule.led_names()[l]))
                })?;
                let n = counts[l].max(1) as f64;
                Ok(tiles[t].iter().map(|v| v / n).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::from_rows(*model.grid(), &rows, &counts, lambda, mu)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn num_leds(&self) -> usize {
        self.a.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sensing_rows(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.system
    }

    /// Per-LED sub-frame counts used to normalise raw measurements.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Spectrum for one pixel from its raw per-LED measurements.
    pub fn solve_pixel(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.count()];
        self.solve_into(y, &mut out);
        out
    }

    #[inline]
    fn solve_into(&self, y: &[f64], out: &mut [f64]) {
        let l = self.a.nrows();
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..l {
                acc += self.gain[(k, j)] * (y[j] / self.counts[j]);
            }
            *o = acc;
        }
    }

    /// `(|M r - A^T y'|, |A^T y'|)` for raw measurements `y` and solution `r`.
    pub fn normal_residual(&self, y: &[f64], r: &[f64]) -> (f64, f64) {
        let yn = DVector::from_iterator(y.len(), y.iter().zip(&self.counts).map(|(v, n)| v / n));
        let rhs = self.a.transpose() * yn;
        let lhs = &self.system * DVector::from_column_slice(r);
        ((lhs - &rhs).norm(), rhs.norm())
    }
}

/// Solves every pixel of an `L`-channel patch.
pub fn reconstruct_patch(patch: &Patch, model: &ReconModel) -> Result<Patch> {
    if patch.channels != model.num_leds() {
        return Err(Error::Dimension(format!(
            "{}-channel patch for a {}-LED model",
            patch.channels,
            model.num_leds()
        )));
    }
    let c = model.grid().count();
    let mut data = vec![0.0; patch.h * patch.w * c];
    for (y, out) in patch.data.chunks_exact(patch.channels).zip(data.chunks_exact_mut(c)) {
        model.solve_into(y, out);
    }
    Ok(Patch {
        y: patch.y,
        x: patch.x,
        h: patch.h,
        w: patch.w,
        channels: c,
        data,
    })
}

/// Running `Fold(K * P)` and `Fold(K)`.
struct FoldAccumulator {
    width: usize,
    height: usize,
    channels: usize,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl FoldAccumulator {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            num: vec![0.0; width * height * channels],
            den: vec![0.0; width * height],
        }
    }

    fn add(&mut self, patch: &Patch, kernel: &WeightKernel) -> Result<()> {
        if patch.h != kernel.h || patch.w != kernel.w {
            return Err(Error::Dimension(format!(
                "{}x{} patch with a {}x{} kernel",
                patch.h, patch.w, kernel.h, kernel.w
            )));
        }
        if patch.channels != self.channels {
            return Err(Error::Dimension(format!(
                "{}-channel patch folded into a {}-channel cube",
                patch.channels, self.channels
            )));
        }
        if patch.y + patch.h > self.height || patch.x + patch.w > self.width {
            return Err(Error::OutOfRange(format!(
                "patch at ({}, {}) extends past the {}x{} output",
                patch.y, patch.x, self.width, self.height
            )));
        }
        let c = self.channels;
        for row in 0..patch.h {
            for col in 0..patch.w {
                let k = kernel.at(row, col);
                let p = (patch.y + row) * self.width + patch.x + col;
                self.den[p] += k;
                let dst = &mut self.num[p * c..(p + 1) * c];
                for (d, v) in dst.iter_mut().zip(patch.pixel(row, col)) {
                    *d += k * v;
                }
            }
        }
        Ok(())
    }

    fn finish(self, grid: WavelengthGrid) -> Result<HyperCube> {
        let uncovered: Vec<(usize, usize)> = self
            .den
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0.0)
            .map(|(p, _)| (p % self.width, p / self.width))
            .collect();
        if !uncovered.is_empty() {
            return Err(Error::Uncovered {
                count: uncovered.len(),
                first: uncovered.into_iter().take(8).collect(),
            });
        }
        let c = self.channels;
        let mut data = self.num;
        for (px, &d) in data.chunks_exact_mut(c).zip(&self.den) {
            px.iter_mut().for_each(|v| *v /= d);
        }
        HyperCube::new(self.width, self.height, grid, data)
    }
}

/// `Fold(K * P) / Fold(K)` with `K` broadcast over channels.
pub fn fold_aggregate(
    patches: &[Patch],
    kernel: &WeightKernel,
    width: usize,
    height: usize,
    grid: WavelengthGrid,
) -> Result<HyperCube> {
    let mut acc = FoldAccumulator::new(width, height, grid.count());
    for p in patches {
        acc.add(p, kernel)?;
    }
    acc.finish(grid)
}

/// Counts gathered while clamping the stripped cube to non-negative values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconStats {
    pub patches: usize,
    pub clipped_voxels: usize,
    pub total_voxels: usize,
    pub min_before_clamp: f64,
}

impl ReconStats {
    pub fn clipped_fraction(&self) -> f64 {
        if self.total_voxels == 0 {
            0.0
        } else {
            self.clipped_voxels as f64 / self.total_voxels as f64
        }
    }
}

/// Extended-grid reconstruction before edge stripping and clamping.
pub fn reconstruct_extended(
    images: &SubImageSet,
    model: &ReconModel,
    spec: &PatchSpec,
    kernel: &WeightKernel,
) -> Result<(HyperCube, usize)> {
    if images.num_leds() != model.num_leds() {
        return Err(Error::Dimension(format!(
            "{} sub-images for a {}-LED model",
            images.num_leds(),
            model.num_leds()
        )));
    }
    let positions = spec.positions(images.width, images.height)?;
    let mut acc = FoldAccumulator::new(images.width, images.height, model.grid().count());
    for batch in positions.chunks(FOLD_BATCH) {
        let solved: Vec<Patch> = batch
            .par_iter()
            .map(|&(y, x)| reconstruct_patch(&cut_patch(images, spec, y, x), model))
            .collect::<Result<_>>()?;
        for p in &solved {
            acc.add(p, kernel)?;
        }
    }
    Ok((acc.finish(*model.grid())?, positions.len()))
}

/// Full frame: extract, solve, fold, strip the edge channels and clamp at 0.
pub fn reconstruct_frame(
    images: &SubImageSet,
    model: &ReconModel,
    spec: &PatchSpec,
    kernel: &WeightKernel,
) -> Result<(HyperCube, ReconStats)> {
    let (ext, patches) = reconstruct_extended(images, model, spec, kernel)?;
    let mut cube = strip_edge_channels(&ext)?;
    let mut stats = ReconStats {
        patches,
        total_voxels: cube.data().len(),
        min_before_clamp: cube.min_value(),
        ..ReconStats::default()
    };
    for v in cube.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
            stats.clipped_voxels += 1;
        }
    }
    Ok((cube, stats))
}
