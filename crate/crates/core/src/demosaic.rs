//! Per-LED sub-images from a coded frame.
//!
//! Each LED's pixels form a regular lattice with the tile's period and the
//! LED's phase within the tile. The lattice samples are gathered and upsampled
//! bilinearly to full resolution; native sample positions keep their exact
//! values.

use rayon::prelude::*;

use crate::coding::CodingSchedule;
use crate::error::{Error, Result};
use crate::forward::CodedFrame;

/// A regular sampling lattice: pixel `(phase_x + j * period_x, phase_y + i * period_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub period_x: usize,
    pub period_y: usize,
    pub phase_x: usize,
    pub phase_y: usize,
}

impl Lattice {
    pub fn new(period_x: usize, period_y: usize, phase_x: usize, phase_y: usize) -> Result<Self> {
        if period_x < 1 || period_y < 1 {
            return Err(Error::OutOfRange(format!(
                "degenerate lattice period {period_x}x{period_y}"
            )));
        }
        if phase_x >= period_x || phase_y >= period_y {
            return Err(Error::OutOfRange(format!(
                "lattice phase ({phase_x},{phase_y}) outside period {period_x}x{period_y}"
            )));
        }
        Ok(Self {
            period_x,
            period_y,
            phase_x,
            phase_y,
        })
    }

    /// Number of lattice columns and rows inside a `width x height` image.
    pub fn extent(&self, width: usize, height: usize) -> (usize, usize) {
        let n = |len: usize, phase: usize, period: usize| {
            if len > phase {
                (len - phase).div_ceil(period)
            } else {
                0
            }
        };
        (
            n(width, self.phase_x, self.period_x),
            n(height, self.phase_y, self.period_y),
        )
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x % self.period_x == self.phase_x && y % self.period_y == self.phase_y
    }
}

/// Lattice samples gathered from a full-resolution image, row-major.
pub fn gather(image: &[f64], width: usize, height: usize, lattice: &Lattice) -> Vec<f64> {
    let (nx, ny) = lattice.extent(width, height);
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..ny {
        let y = lattice.phase_y + i * lattice.period_y;
        for j in 0..nx {
            out.push(image[y * width + lattice.phase_x + j * lattice.period_x]);
        }
    }
    out
}

/// Interpolation taps along one axis: `(i0, i1, frac)` for every output coordinate.
fn axis_taps(len: usize, phase: usize, period: usize, samples: usize) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|p| {
            let u = (p as f64 - phase as f64) / period as f64;
            let u = u.clamp(0.0, (samples - 1) as f64);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(samples - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect()
}

/// Separable bilinear upsampling of lattice samples (`nx x ny`, row-major) to
/// `width x height`. Coordinates outside the lattice hull clamp to the edge.
pub fn upsample_bilinear(
    samples: &[f64],
    lattice: &Lattice,
    width: usize,
    height: usize,
) -> Result<Vec<f64>> {
    let (nx, ny) = lattice.extent(width, height);
    if nx == 0 || ny == 0 {
        return Err(Error::Dimension(format!(
            "{width}x{height} image holds no samples of the lattice"
        )));
    }
    if samples.len() != nx * ny {
        return Err(Error::Dimension(format!(
            "{} samples for a {nx}x{ny} lattice",
            samples.len()
        )));
    }
    let tx = axis_taps(width, lattice.phase_x, lattice.period_x, nx);
    let ty = axis_taps(height, lattice.phase_y, lattice.period_y, ny);
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let (i0, i1, fy) = ty[y];
        let (r0, r1) = (&samples[i0 * nx..(i0 + 1) * nx], &samples[i1 * nx..(i1 + 1) * nx]);
        for (x, o) in row.iter_mut().enumerate() {
            let (j0, j1, fx) = tx[x];
            let top = r0[j0] * (1.0 - fx) + r0[j1] * fx;
            let bottom = r1[j0] * (1.0 - fx) + r1[j1] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
    });
    Ok(out)
}

/// Full-resolution per-LED images with their normalised timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct SubImageSet {
    pub width: usize,
    pub height: usize,
    /// One row-major image per LED, in LED index order.
    pub images: Vec<Vec<f64>>,
    pub led_names: Vec<String>,
    pub timestamps: Vec<f64>,
    /// Whether each image has been warped to the reference time.
    pub aligned: Vec<bool>,
    pub frame_index: u64,
}

impl SubImageSet {
    pub fn num_leds(&self) -> usize {
        self.images.len()
    }

    pub fn image(&self, led: usize) -> &[f64] {
        &self.images[led]
    }

    #[inline]
    pub fn get(&self, led: usize, x: usize, y: usize) -> f64 {
        self.images[led][y * self.width + x]
    }

    pub fn fully_aligned(&self) -> bool {
        self.aligned.iter().all(|&a| a)
    }

    pub(crate) fn expect_compatible(&self, other: &SubImageSet) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.led_names != other.led_names
        {
            return Err(Error::Dimension(format!(
                "sub-image sets differ: {}x{} ({} LEDs) vs {}x{} ({} LEDs)",
                self.width,
                self.height,
                self.num_leds(),
                other.width,
                other.height,
                other.num_leds()
            )));
        }
        Ok(())
    }
}

/// Lattices of every tile position bound to `led`.
pub fn led_lattices(schedule: &CodingSchedule, led: usize) -> Vec<Lattice> {
    let layout = schedule.layout();
    layout
        .positions_of(led)
        .into_iter()
        .map(|(r, c)| Lattice {
            period_x: layout.cols(),
            period_y: layout.rows(),
            phase_x: c,
            phase_y: r,
        })
        .collect()
}

/// Native (directly measured) pixel count of `led` on a `width x height` sensor.
pub fn native_sample_count(schedule: &CodingSchedule, led: usize, width: usize, height: usize) -> usize {
    led_lattices(schedule, led)
        .iter()
        .map(|l| {
            let (nx, ny) = l.extent(width, height);
            nx * ny
        })
        .sum()
}

/// Splits a coded frame into per-LED images.
///
/// An LED bound to several tile positions is interpolated from each lattice
/// separately; non-native pixels take the mean of those interpolations.
pub fn demosaic(frame: &CodedFrame, schedule: &CodingSchedule) -> Result<SubImageSet> {
    let (w, h) = (frame.width(), frame.height());
    let layout = schedule.layout();
    if w < layout.cols() || h < layout.rows() {
        return Err(Error::Dimension(format!(
            "{w}x{h} frame is smaller than the {}x{} tile",
            layout.cols(),
            layout.rows()
        )));
    }
    let images = (0..schedule.num_leds())
        .into_par_iter()
        .map(|led| {
            let lattices = led_lattices(schedule, led);
            if lattices.is_empty() {
                return Err(Error::Schedule(format!(
                    "LED `{}` has no pixels in the tile",
                    schedule.led_names()[led]
                )));
            }
            let mut acc = vec![0.0; w * h];
            for lat in &lattices {
                let up = upsample_bilinear(&gather(frame.values(), w, h, lat), lat, w, h)?;
                acc.iter_mut().zip(&up).for_each(|(a, u)| *a += u);
            }
            let n = lattices.len() as f64;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    acc[i] = if layout.led_at(x, y) == led {
                        frame.values()[i]
                    } else {
                        acc[i] / n
                    };
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = schedule.num_leds();
    Ok(SubImageSet {
        width: w,
        height: h,
        images,
        led_names: schedule.led_names().to_vec(),
        timestamps: schedule.normalized_timestamps(),
        aligned: (0..n).map(|l| l == schedule.reference()).collect(),
        frame_index: frame.frame_index(),
    })
}

/// Re-interleaves sub-images into a mosaic: each pixel takes its own LED's value.
pub fn remosaic(set: &SubImageSet, schedule: &CodingSchedule) -> Result<Vec<f64>> {
    if set.num_leds() != schedule.num_leds() {
        return Err(Error::Dimension(format!(
            "{} sub-images for {} LEDs",
            set.num_leds(),
            schedule.num_leds()
        )));
    }
    let layout = schedule.layout();
    let mut out = Vec::with_capacity(set.width * set.height);
    for y in 0..set.height {
        for x in 0..set.width {
            out.push(set.get(layout.led_at(x, y), x, y));
        }
    }
    Ok(out)
}
