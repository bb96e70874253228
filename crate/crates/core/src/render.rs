//! sRGB and per-channel previews of hyperspectral cubes.
//!
//! Tristimulus values use the bundled CIE 1931 2° observer sampled at the
//! cube's channel centres. XYZ is divided by the illuminant white's Y and then
//! scaled per component so that the illuminant white lands on the D65 white
//! point; a perfect reflector therefore renders neutral under any illuminant.

use std::path::Path;

use rayon::prelude::*;

use crate::assets;
use crate::error::{Error, Result};
use crate::io::{encode_png, save_png, PngKind};
use crate::spectral::{HyperCube, SpectralCurve, WavelengthGrid};

/// XYZ (D65, Y = 1) to linear sRGB.
pub const XYZ_TO_LINEAR_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

/// D65 white point with Y = 1.
pub const D65_WHITE_XYZ: [f64; 3] = [0.95047, 1.0, 1.08883];

#[derive(Clone, Debug, PartialEq)]
pub enum Illuminant {
    EqualEnergy,
    D65,
    Custom(SpectralCurve),
}

impl Illuminant {
    fn weights(&self, grid: &WavelengthGrid) -> Vec<f64> {
        match self {
            Illuminant::EqualEnergy => vec![1.0; grid.count()],
            Illuminant::D65 => sample_at(&assets::d65(), grid),
            Illuminant::Custom(c) => sample_at(c, grid),
        }
    }
}

fn sample_at(curve: &SpectralCurve, grid: &WavelengthGrid) -> Vec<f64> {
    grid.centers().map(|nm| curve.sample(nm)).collect()
}

/// 8-bit sRGB image plus its linear-light values before encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, 3 bytes per pixel.
    pub data: Vec<u8>,
    /// Fraction of pixels with at least one channel outside `[0, 1]` before clipping.
    pub clip_fraction: f64,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, PngKind::Rgb8, &self.data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_png(path, self.width, self.height, PngKind::Rgb8, &self.data)
    }
}

/// Per-channel XYZ weights `cmf * illuminant * step`, already white-normalised.
struct XyzWeights {
    w: [Vec<f64>; 3],
}

fn xyz_weights(grid: &WavelengthGrid, illuminant: &Illuminant) -> Result<XyzWeights> {
    let cmf = assets::cie1931_cmf();
    let (lo, hi) = (cmf.grid.start_nm(), cmf.grid.last_nm());
    if grid.start_nm() < lo || grid.last_nm() > hi {
        return Err(Error::OutOfRange(format!(
            "cube spans {}–{} nm, outside the {lo}–{hi} nm observer table",
            grid.start_nm(),
            grid.last_nm()
        )));
    }
    let ill = illuminant.weights(grid);
    let step = grid.step_nm();
    let mut w: [Vec<f64>; 3] = Default::default();
    for (c, wc) in w.iter_mut().enumerate() {
        *wc = sample_at(&cmf.curve(c), grid)
            .iter()
            .zip(&ill)
            .map(|(m, i)| m * i * step)
            .collect();
    }
    let white: Vec<f64> = w.iter().map(|wc| wc.iter().sum()).collect();
    if !(white[1] > 0.0) {
        return Err(Error::OutOfRange("illuminant has no luminance over the cube's range".into()));
    }
    for (c, wc) in w.iter_mut().enumerate() {
        let scale = D65_WHITE_XYZ[c] / white[c].max(f64::MIN_POSITIVE);
        wc.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(XyzWeights { w })
}

/// Per-pixel XYZ, interleaved.
pub fn cube_to_xyz(cube: &HyperCube, illuminant: &Illuminant) -> Result<Vec<f64>> {
    let wt = xyz_weights(cube.grid(), illuminant)?;
    let c = cube.channels();
    Ok(cube
        .data()
        .par_chunks_exact(c)
        .flat_map_iter(|px| {
            wt.w.iter()
                .map(|wc| wc.iter().zip(px).map(|(a, b)| a * b).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect())
}

/// sRGB transfer function.
pub fn srgb_encode(linear: f64) -> f64 {
    if linear <= 0.003_130_8 {
        12.92 * linear
    } else {
        1.055 * linear.powf(1.0 / 2.4) - 0.055
    }
}

pub fn cube_to_srgb(cube: &HyperCube, illuminant: &Illuminant) -> Result<RgbImage> {
    let xyz = cube_to_xyz(cube, illuminant)?;
    let m = XYZ_TO_LINEAR_SRGB;
    let mut clipped = 0usize;
    let mut data = Vec::with_capacity(xyz.len());
    for p in xyz.chunks_exact(3) {
        let mut out_of_gamut = false;
        for row in &m {
            let lin = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
            if !(0.0..=1.0).contains(&lin) {
                out_of_gamut = true;
            }
            data.push((srgb_encode(lin.clamp(0.0, 1.0)) * 255.0).round() as u8);
        }
        clipped += out_of_gamut as usize;
    }
    Ok(RgbImage {
        width: cube.width(),
        height: cube.height(),
        data,
        clip_fraction: clipped as f64 / cube.pixels().max(1) as f64,
    })
}

/// Grayscale panel normalisation for [`channel_strip`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StripNorm {
    /// Each panel scaled by its own maximum.
    PerChannel,
    /// All panels scaled by the cube maximum.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, PngKind::Gray8, &self.data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_png(path, self.width, self.height, PngKind::Gray8, &self.data)
    }
}

/// Geometry of a channel strip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripLayout {
    pub columns: usize,
    pub rows: usize,
    pub panel_w: usize,
    pub panel_h: usize,
    pub gap: usize,
    pub label_h: usize,
}

impl StripLayout {
    pub fn for_cube(cube: &HyperCube) -> Self {
        let columns = 8.min(cube.channels());
        Self {
            columns,
            rows: cube.channels().div_ceil(columns),
            panel_w: cube.width(),
            panel_h: cube.height(),
            gap: 2,
            label_h: GLYPH_H + 4,
        }
    }

    pub fn width(&self) -> usize {
        self.columns * (self.panel_w + self.gap) + self.gap
    }

    pub fn height(&self) -> usize {
        self.rows * (self.panel_h + self.label_h + self.gap) + self.gap
    }

    /// Top-left pixel of panel `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        let (r, c) = (k / self.columns, k % self.columns);
        (
            self.gap + c * (self.panel_w + self.gap),
            self.gap + r * (self.panel_h + self.label_h + self.gap),
        )
    }
}

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

/// 3x5 digit bitmaps, one row per `u8` (bit 2 = left column).
const DIGITS: [[u8; GLYPH_H]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

fn draw_text(img: &mut GrayImage, x0: usize, y0: usize, text: &str) {
    for (i, ch) in text.chars().enumerate() {
        let Some(d) = ch.to_digit(10) else { continue };
        for (r, bits) in DIGITS[d as usize].iter().enumerate() {
            for c in 0..GLYPH_W {
                if bits & (4 >> c) != 0 {
                    let (x, y) = (x0 + i * (GLYPH_W + 1) + c, y0 + r);
                    if x < img.width && y < img.height {
                        img.data[y * img.width + x] = 255;
                    }
                }
            }
        }
    }
}

/// Tiles one grayscale panel per channel, labelled with its centre wavelength.
pub fn channel_strip(cube: &HyperCube, norm: StripNorm) -> GrayImage {
    let layout = StripLayout::for_cube(cube);
    let mut img = GrayImage {
        width: layout.width(),
        height: layout.height(),
        data: vec![0; layout.width() * layout.height()],
    };
    let global = cube.max_value();
    for k in 0..cube.channels() {
        let chan = cube.channel(k);
        let peak = match norm {
            StripNorm::PerChannel => chan.iter().copied().fold(0.0, f64::max),
            StripNorm::Global => global,
        };
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        let (ox, oy) = layout.origin(k);
        for y in 0..cube.height() {
            for x in 0..cube.width() {
                let v = (chan[y * cube.width() + x] * scale).clamp(0.0, 255.0).round() as u8;
                img.data[(oy + y) * img.width + ox + x] = v;
            }
        }
        let label = format!("{}", cube.grid().center(k).round() as i64);
        draw_text(&mut img, ox, oy + layout.panel_h + 2, &label);
    }
    img
}

/// Copies panel `k` out of a strip.
pub fn strip_panel(img: &GrayImage, layout: &StripLayout, k: usize) -> Vec<u8> {
    let (ox, oy) = layout.origin(k);
    let mut out = Vec::with_capacity(layout.panel_w * layout.panel_h);
    for y in 0..layout.panel_h {
        let s = (oy + y) * img.width + ox;
        out.extend_from_slice(&img.data[s..s + layout.panel_w]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralCurve;

    fn flat(value: f64) -> HyperCube {
        HyperCube::uniform(4, 3, &SpectralCurve::constant(WavelengthGrid::reconstruction(), value))
    }

    #[test]
    fn white_is_neutral_under_both_illuminants() {
        for ill in [Illuminant::EqualEnergy, Illuminant::D65] {
            let img = cube_to_srgb(&flat(1.0), &ill).unwrap();
            let [r, g, b] = img.pixel(0, 0);
            assert!(r.abs_diff(g) <= 1 && g.abs_diff(b) <= 1, "{r} {g} {b}");
            assert!(r >= 254);
        }
        let grey = cube_to_srgb(&flat(0.2), &Illuminant::EqualEnergy).unwrap();
        let [r, g, b] = grey.pixel(1, 1);
        assert!(r.abs_diff(g) <= 1 && g.abs_diff(b) <= 1);
        assert_eq!(grey.clip_fraction, 0.0);
    }

    #[test]
    fn black_is_black() {
        let img = cube_to_srgb(&flat(0.0), &Illuminant::EqualEnergy).unwrap();
        assert!(img.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn green_spike() {
        let g = WavelengthGrid::reconstruction();
        let k550 = g.index_of(550.0).unwrap();
        let cube = HyperCube::from_fn(1, 1, g, |_, _, k| if k == k550 { 1.0 } else { 0.0 });
        let img = cube_to_srgb(&cube, &Illuminant::EqualEnergy).unwrap();
        let [r, gr, b] = img.pixel(0, 0);
        assert!(gr > r && gr > b, "{r} {gr} {b}");
        assert!(img.clip_fraction > 0.0);
    }

    #[test]
    fn xyz_is_linear() {
        let a = cube_to_xyz(&flat(0.3), &Illuminant::D65).unwrap();
        let b = cube_to_xyz(&flat(0.6), &Illuminant::D65).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_outside_observer_rejected() {
        let g = WavelengthGrid::new(350.0, 10.0, 5).unwrap();
        let cube = HyperCube::zeros(1, 1, g);
        assert!(cube_to_srgb(&cube, &Illuminant::EqualEnergy).is_err());
    }

    #[test]
    fn strip_panels() {
        let cube = flat(0.5);
        let img = channel_strip(&cube, StripNorm::PerChannel);
        let layout = StripLayout::for_cube(&cube);
        assert!(layout.columns * layout.rows >= 31);
        let first = strip_panel(&img, &layout, 0);
        assert!(first.iter().all(|&v| v == 255));
        for k in 1..31 {
            assert_eq!(strip_panel(&img, &layout, k), first);
        }
        let global = channel_strip(&flat(0.5), StripNorm::Global);
        assert_eq!(strip_panel(&global, &layout, 3), first);

        let ramp = HyperCube::from_fn(4, 3, WavelengthGrid::reconstruction(), |_, _, k| k as f64 + 1.0);
        let per = channel_strip(&ramp, StripNorm::PerChannel);
        let glob = channel_strip(&ramp, StripNorm::Global);
        assert_eq!(strip_panel(&per, &layout, 0)[0], 255);
        assert_eq!(strip_panel(&glob, &layout, 0)[0], (255.0f64 / 31.0).round() as u8);
        assert_eq!(channel_strip(&ramp, StripNorm::Global).to_png().unwrap(), glob.to_png().unwrap());
    }
}
