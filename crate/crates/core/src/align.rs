//! Temporal alignment of per-LED sub-images.
//!
//! Motion is estimated between same-LED sub-images of adjacent frames and
//! scaled linearly to the reference LED's timestamp. LEDs firing before the
//! reference pair frame `i` with `i + 1`; LEDs firing after it pair `i - 1`
//! with `i`.

use rayon::prelude::*;

use crate::coding::CodingSchedule;
use crate::demosaic::SubImageSet;
use crate::error::{Error, Result};

pub const DEFAULT_SEARCH_RADIUS: usize = 12;
pub const DEFAULT_BLOCK: usize = 16;

/// Per-pixel displacement `(u, v)` in pixels: content at `(x, y)` in the
/// source image appears at `(x + u, y + v)` in the destination.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|&d| d == 0.0)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|d| d * t).collect(),
            v: self.v.iter().map(|d| d * t).collect(),
        }
    }
}

/// Pluggable motion estimator between two same-LED images.
pub trait FlowEstimator: Sync {
    fn estimate(&self, src: &[f64], dst: &[f64], width: usize, height: usize) -> Result<FlowField>;
}

/// Exhaustive SSD block matching with parabolic sub-pixel refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatcher {
    pub search_radius: usize,
    pub block: usize,
}

impl Default for BlockMatcher {
    fn default() -> Self {
        Self {
            search_radius: DEFAULT_SEARCH_RADIUS,
            block: DEFAULT_BLOCK,
        }
    }
}

impl FlowEstimator for BlockMatcher {
    fn estimate(&self, src: &[f64], dst: &[f64], width: usize, height: usize) -> Result<FlowField> {
        estimate_flow(src, dst, width, height, self.search_radius, self.block)
    }
}

/// Block origins along one axis: regular steps plus one flush block at the end.
fn block_starts(len: usize, block: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=len - block).step_by(block).collect();
    if starts.last() != Some(&(len - block)) {
        starts.push(len - block);
    }
    starts
}

struct BlockCost<'a> {
    src: &'a [f64],
    dst: &'a [f64],
    width: usize,
    height: usize,
    x0: usize,
    y0: usize,
    block: usize,
}

impl BlockCost<'_> {
    /// Mean squared difference over the part of the block whose displaced
    /// position stays inside the image; `None` below half overlap.
    fn at(&self, dx: i64, dy: i64) -> Option<f64> {
        let b = self.block as i64;
        let span = |origin: usize, d: i64, len: usize| {
            let lo = (-(origin as i64) - d).max(0);
            let hi = (len as i64 - origin as i64 - d).min(b);
            (lo, hi)
        };
        let (c0, c1) = span(self.x0, dx, self.width);
        let (r0, r1) = span(self.y0, dy, self.height);
        if c1 <= c0 || r1 <= r0 || 2 * (c1 - c0) * (r1 - r0) < b * b {
            return None;
        }
        let (c0, c1) = (c0 as usize, c1 as usize);
        let mut ssd = 0.0;
        for r in r0 as usize..r1 as usize {
            let s = (self.y0 + r) * self.width + self.x0;
            let d = ((self.y0 + r) as i64 + dy) as usize * self.width
                + (self.x0 as i64 + c0 as i64 + dx) as usize;
            for (a, b) in self.src[s + c0..s + c1].iter().zip(&self.dst[d..d + c1 - c0]) {
                let e = a - b;
                ssd += e * e;
            }
        }
        Some(ssd / ((c1 - c0) * (r1 as usize - r0 as usize)) as f64)
    }
}

/// Vertex offset of the parabola through `(-1, lo), (0, mid), (1, hi)`.
fn parabolic_offset(lo: Option<f64>, mid: f64, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (Some(lo), Some(hi)) => {
            let curv = lo - 2.0 * mid + hi;
            if curv > 0.0 {
                (0.5 * (lo - hi) / curv).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Block-matching flow from `src` to `dst`.
///
/// Candidates lie in the disc of radius `search_radius`; ties prefer the
/// smaller displacement, so identical images give exactly zero flow. Block
/// vectors sit at block centres and are bilinearly interpolated per pixel.
pub fn estimate_flow(
    src: &[f64],
    dst: &[f64],
    width: usize,
    height: usize,
    search_radius: usize,
    block: usize,
) -> Result<FlowField> {
    if src.len() != width * height || dst.len() != width * height {
        return Err(Error::Dimension(format!(
            "flow images must both be {width}x{height}"
        )));
    }
    if block == 0 || block > width || block > height {
        return Err(Error::OutOfRange(format!(
            "block size {block} does not fit a {width}x{height} image"
        )));
    }
    let r = search_radius as i64;
    let mut candidates: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    candidates.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));

    let xs = block_starts(width, block);
    let ys = block_starts(height, block);
    let vectors: Vec<(f64, f64)> = ys
        .iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| (x0, y0)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(x0, y0)| {
            let cost = BlockCost {
                src,
                dst,
                width,
                height,
                x0,
                y0,
                block,
            };
            let mut best = (0i64, 0i64, cost.at(0, 0).unwrap_or(f64::INFINITY));
            for &(dx, dy) in &candidates[1..] {
                if let Some(c) = cost.at(dx, dy) {
                    if c < best.2 {
                        best = (dx, dy, c);
                    }
                }
            }
            let (bx, by, c0) = best;
            let (mut u, mut v) = (bx as f64, by as f64);
            if c0 > 0.0 {
                u += parabolic_offset(cost.at(bx - 1, by), c0, cost.at(bx + 1, by));
                v += parabolic_offset(cost.at(bx, by - 1), c0, cost.at(bx, by + 1));
            }
            let mag = u.hypot(v);
            if mag > search_radius as f64 {
                let s = search_radius as f64 / mag;
                u *= s;
                v *= s;
            }
            (u, v)
        })
        .collect();

    let centre = |s: usize| s as f64 + (block as f64 - 1.0) / 2.0;
    let cx: Vec<f64> = xs.iter().map(|&s| centre(s)).collect();
    let cy: Vec<f64> = ys.iter().map(|&s| centre(s)).collect();
    let taps = |pos: f64, c: &[f64]| -> (usize, usize, f64) {
        if pos <= c[0] {
            return (0, 0, 0.0);
        }
        if pos >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let i = c.partition_point(|&v| v <= pos) - 1;
        (i, i + 1, (pos - c[i]) / (c[i + 1] - c[i]))
    };
    let nbx = xs.len();
    let mut flow = FlowField::zeros(width, height);
    for y in 0..height {
        let (i0, i1, fy) = taps(y as f64, &cy);
        for x in 0..width {
            let (j0, j1, fx) = taps(x as f64, &cx);
            let g = |i: usize, j: usize| vectors[i * nbx + j];
            let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
            let top = (
                lerp(g(i0, j0).0, g(i0, j1).0, fx),
                lerp(g(i0, j0).1, g(i0, j1).1, fx),
            );
            let bottom = (
                lerp(g(i1, j0).0, g(i1, j1).0, fx),
                lerp(g(i1, j0).1, g(i1, j1).1, fx),
            );
            flow.u[y * width + x] = lerp(top.0, bottom.0, fy);
            flow.v[y * width + x] = lerp(top.1, bottom.1, fy);
        }
    }
    Ok(flow)
}

/// Bilinear sample with clamp-to-edge.
pub fn sample_bilinear(image: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| image[yy * width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward warp: `out(x) = image(x - flow(x))`, i.e. content moves along the flow.
pub fn warp(image: &[f64], flow: &FlowField) -> Vec<f64> {
    if flow.is_zero() {
        return image.to_vec();
    }
    let (w, h) = (flow.width, flow.height);
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            sample_bilinear(image, w, h, x - flow.u[i], y - flow.v[i])
        })
        .collect()
}

/// How one LED is brought to the reference time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WarpStep {
    /// The reference LED itself.
    Reference,
    /// Fires before the reference: flow from frame `i` to `i + 1`, advance by `t`.
    Forward { t: f64 },
    /// Fires after the reference: flow from frame `i - 1` to `i`; the target
    /// sits at fraction `t` of that interval.
    Backward { t: f64 },
}

/// Warp plan for `led` under `schedule`.
pub fn warp_step(schedule: &CodingSchedule, led: usize) -> WarpStep {
    let ts = schedule.normalized_timestamps();
    let reference = schedule.reference();
    let (t_l, t_ref) = (ts[led], ts[reference]);
    if led == reference {
        WarpStep::Reference
    } else if t_l < t_ref {
        WarpStep::Forward { t: t_ref - t_l }
    } else {
        WarpStep::Backward {
            t: (1.0 - t_l) + t_ref,
        }
    }
}

/// Aligns the current frame's sub-images to the reference LED's timestamp.
///
/// Without `next`, LEDs that need it are copied through unaligned; likewise
/// for `prev`.
pub fn warp_to_reference(
    prev: Option<&SubImageSet>,
    cur: &SubImageSet,
    next: Option<&SubImageSet>,
    schedule: &CodingSchedule,
    estimator: &dyn FlowEstimator,
) -> Result<SubImageSet> {
    if cur.num_leds() != schedule.num_leds() {
        return Err(Error::Dimension(format!(
            "{} sub-images for {} LEDs",
            cur.num_leds(),
            schedule.num_leds()
        )));
    }
    for other in prev.iter().chain(next.iter()) {
        cur.expect_compatible(other)?;
    }
    let (w, h) = (cur.width, cur.height);
    let results: Vec<(Vec<f64>, bool)> = (0..cur.num_leds())
        .into_par_iter()
        .map(|l| -> Result<(Vec<f64>, bool)> {
            let img = cur.image(l);
            match warp_step(schedule, l) {
                WarpStep::Reference => Ok((img.to_vec(), true)),
                WarpStep::Forward { t } => match next {
                    Some(n) => {
                        let f = estimator.estimate(img, n.image(l), w, h)?;
                        Ok((warp(img, &f.scaled(t)), true))
                    }
                    None => Ok((img.to_vec(), false)),
                },
                WarpStep::Backward { t } => match prev {
                    Some(p) => {
                        let f = estimator.estimate(p.image(l), img, w, h)?;
                        Ok((warp(img, &f.scaled(t - 1.0)), true))
                    }
                    None => Ok((img.to_vec(), false)),
                },
            }
        })
        .collect::<Result<_>>()?;
    let (images, aligned) = results.into_iter().unzip();
    Ok(SubImageSet {
        images,
        aligned,
        ..cur.clone()
    })
}

/// Aligns every frame of a decoded video.
pub fn align_video(
    frames: &[SubImageSet],
    schedule: &CodingSchedule,
    estimator: &dyn FlowEstimator,
) -> Result<Vec<SubImageSet>> {
    (0..frames.len())
        .map(|i| {
            let prev = i.checked_sub(1).map(|j| &frames[j]);
            warp_to_reference(prev, &frames[i], frames.get(i + 1), schedule, estimator)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth texture: a sum of random sinusoids, evaluated at any real position.
    pub(crate) fn texture(seed: u64) -> impl Fn(f64, f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..8)
            .map(|_| {
                (
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        move |x, y| 2.0 + waves.iter().map(|(a, b, p, m)| m * (a * x + b * y + p).sin()).sum::<f64>()
    }

    fn render(w: usize, h: usize, f: &impl Fn(f64, f64) -> f64, dx: f64, dy: f64) -> Vec<f64> {
        (0..w * h)
            .map(|i| f((i % w) as f64 - dx, (i / w) as f64 - dy))
            .collect()
    }

    #[test]
    fn identical_images_have_zero_flow() {
        let tex = texture(1);
        let img = render(48, 40, &tex, 0.0, 0.0);
        let f = estimate_flow(&img, &img, 48, 40, 6, 16).unwrap();
        assert!(f.is_zero());
        assert_eq!(warp(&img, &f), img);
    }

    #[test]
    fn integer_shift_recovered_in_interior() {
        let tex = texture(2);
        let (w, h) = (96, 80);
        let src = render(w, h, &tex, 0.0, 0.0);
        let dst = render(w, h, &tex, 2.0, 3.0);
        let f = estimate_flow(&src, &dst, w, h, 12, 16).unwrap();
        for y in 16..h - 16 {
            for x in 16..w - 16 {
                let i = y * w + x;
                assert!((f.u[i] - 2.0).abs() <= 0.25 && (f.v[i] - 3.0).abs() <= 0.25, "{x},{y}");
            }
        }
    }

    #[test]
    fn subpixel_shift_refined() {
        let tex = texture(3);
        let (w, h) = (64, 64);
        let f = estimate_flow(
            &render(w, h, &tex, 0.0, 0.0),
            &render(w, h, &tex, 1.4, -0.6),
            w,
            h,
            4,
            16,
        )
        .unwrap();
        let i = 32 * w + 32;
        assert!((f.u[i] - 1.4).abs() < 0.2 && (f.v[i] + 0.6).abs() < 0.2, "{} {}", f.u[i], f.v[i]);
    }

    #[test]
    fn oversize_block_rejected() {
        let img = vec![0.0; 100];
        assert!(estimate_flow(&img, &img, 10, 10, 2, 11).is_err());
    }

    #[test]
    fn canonical_warp_steps() {
        let s = CodingSchedule::canonical();
        let lime = s.reference();
        let order = s.led_order();
        let pos = order.iter().position(|&l| l == lime).unwrap();
        let mut seen = 0;
        for (k, &l) in order.iter().enumerate() {
            match warp_step(&s, l) {
                WarpStep::Reference => assert_eq!(l, lime),
                WarpStep::Forward { t } => {
                    assert!(k < pos && t > 0.0 && t < 1.0);
                    seen += 1;
                }
                WarpStep::Backward { t } => {
                    assert!(k > pos && t > 0.0 && t < 1.0);
                    seen += 1;
                }
            }
        }
        assert_eq!(seen, 11);
        let ts = s.normalized_timestamps();
        let far_red = s.led_index("Far Red").unwrap();
        assert_eq!(
            warp_step(&s, far_red),
            WarpStep::Backward {
                t: (1.0 - ts[far_red]) + ts[lime]
            }
        );
    }

    proptest! {
        #[test]
        fn flow_bounded_by_radius(seed in 0u64..200, radius in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..40 * 32).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..40 * 32).map(|_| rng.random()).collect();
            let f = estimate_flow(&a, &b, 40, 32, radius, 8).unwrap();
            prop_assert!(f.max_magnitude() <= radius as f64 + 1e-12);
            prop_assert!(f.u.iter().chain(&f.v).all(|d| d.is_finite()));
        }
    }
}
