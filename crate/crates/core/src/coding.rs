//! Joint illumination / exposure coding.
//!
//! A frame is split into `S` sub-frames. The global illumination timeline
//! says which LEDs fire in each sub-frame. The sensor is tiled with a
//! `rows x cols` mosaic; each tile position is bound to one LED and its
//! pixels integrate exactly during that LED's sub-frames. Pixel codes follow
//! from the tile index `pi(p) = (y mod rows, x mod cols)`, with the tile
//! anchored at pixel (0, 0).

use crate::assets::NOMINAL_LEDS;
use crate::error::{Error, Result};
use crate::spectral::SpectralCurve;

/// Sub-frame length used by the deployed hardware schedule.
pub const CANONICAL_SUBFRAME_US: f64 = 150.0;
/// Sensor readout time appended to every frame.
pub const CANONICAL_READOUT_US: f64 = 6000.0;
pub const CANONICAL_REFERENCE: &str = "Lime";

#[derive(Clone, Debug, PartialEq)]
pub struct LedChannel {
    pub name: String,
    pub spd: SpectralCurve,
    pub alpha: f64,
}

impl LedChannel {
    pub fn new(name: impl Into<String>, spd: SpectralCurve) -> Result<Self> {
        let name = name.into();
        if spd.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::OutOfRange(format!("LED `{name}` has a negative SPD sample")));
        }
        Ok(Self {
            name,
            spd,
            alpha: 1.0,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Calibrated spectrum `alpha * E`.
    pub fn calibrated_spd(&self) -> SpectralCurve {
        self.spd.scaled(self.alpha)
    }
}

/// The nominal 12-LED bank in firing order.
pub fn nominal_leds() -> Vec<LedChannel> {
    NOMINAL_LEDS
        .iter()
        .map(|l| LedChannel::new(l.name, crate::assets::nominal_led_spd(l)).expect("non-negative"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileLayout {
    rows: usize,
    cols: usize,
    /// 0-based LED index per tile position, row-major.
    led_of_tile: Vec<usize>,
}

impl TileLayout {
    pub fn new(rows: usize, cols: usize, led_of_tile: Vec<usize>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Schedule("tile layout needs positive rows and cols".into()));
        }
        if led_of_tile.len() != rows * cols {
            return Err(Error::Schedule(format!(
                "{}x{} tile needs {} LED assignments, got {}",
                rows,
                cols,
                rows * cols,
                led_of_tile.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            led_of_tile,
        })
    }

    /// LEDs `0..n` laid along a boustrophedon path: left-to-right on even
    /// rows, right-to-left on odd rows. Positions past `n` wrap around.
    pub fn serpentine(rows: usize, cols: usize, n_leds: usize) -> Result<Self> {
        let mut led_of_tile = vec![0; rows * cols];
        let mut next = 0;
        for r in 0..rows {
            for i in 0..cols {
                let c = if r % 2 == 0 { i } else { cols - 1 - i };
                led_of_tile[r * cols + c] = next % n_leds.max(1);
                next += 1;
            }
        }
        Self::new(rows, cols, led_of_tile)
    }

    pub fn canonical() -> Self {
        Self::serpentine(3, 4, 12).expect("static layout")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn led_of_tile(&self) -> &[usize] {
        &self.led_of_tile
    }

    #[inline]
    pub fn tile_index(&self, x: usize, y: usize) -> usize {
        (y % self.rows) * self.cols + x % self.cols
    }

    #[inline]
    pub fn led_at(&self, x: usize, y: usize) -> usize {
        self.led_of_tile[self.tile_index(x, y)]
    }

    /// `(row, col)` tile positions bound to `led`.
    pub fn positions_of(&self, led: usize) -> Vec<(usize, usize)> {
        self.led_of_tile
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == led)
            .map(|(t, _)| (t / self.cols, t % self.cols))
            .collect()
    }
}

/// Tile index of every pixel, row-major.
pub fn pixel_tile_map(layout: &TileLayout, width: usize, height: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            map.push(layout.tile_index(x, y));
        }
    }
    map
}

/// Per-pixel view of the code: `C[p, s]` and `I[p, s, l]` for one pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelCode {
    pub tile: usize,
    pub active_subframes: Vec<usize>,
    /// LEDs lit during each active sub-frame, parallel to `active_subframes`.
    pub leds: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodingSchedule {
    layout: TileLayout,
    led_names: Vec<String>,
    subframe_us: f64,
    readout_us: f64,
    /// Active LEDs per sub-frame.
    timeline: Vec<Vec<usize>>,
    reference: usize,
}

impl CodingSchedule {
    /// Contiguous windows: LEDs fire in `led_order`, LED `l` for
    /// `subframes_per_led[l]` consecutive sub-frames.
    pub fn from_allocation(
        layout: TileLayout,
        led_names: Vec<String>,
        subframes_per_led: &[u32],
        led_order: &[usize],
        subframe_us: f64,
        readout_us: f64,
    ) -> Result<Self> {
        let n = led_names.len();
        if subframes_per_led.len() != n {
            return Err(Error::Schedule(format!(
                "{} sub-frame counts for {n} LEDs",
                subframes_per_led.len()
            )));
        }
        let mut seen = vec![false; n];
        if led_order.len() != n
            || led_order
                .iter()
                .any(|&l| l >= n || std::mem::replace(&mut seen[l], true))
        {
            return Err(Error::Schedule("led_order is not a permutation of the LEDs".into()));
        }
        let mut timeline = Vec::new();
        for &l in led_order {
            for _ in 0..subframes_per_led[l] {
                timeline.push(vec![l]);
            }
        }
        Self::from_timeline(layout, led_names, timeline, subframe_us, readout_us)
    }

    /// Arbitrary timeline; nothing beyond index ranges is checked here, see
    /// [`CodingSchedule::validate`].
    pub fn from_timeline(
        layout: TileLayout,
        led_names: Vec<String>,
        timeline: Vec<Vec<usize>>,
        subframe_us: f64,
        readout_us: f64,
    ) -> Result<Self> {
        let n = led_names.len();
        if n == 0 {
            return Err(Error::Schedule("schedule has no LEDs".into()));
        }
        if let Some(&bad) = timeline.iter().flatten().find(|&&l| l >= n) {
            return Err(Error::Schedule(format!("timeline references LED index {bad}")));
        }
        let reference = led_names
            .iter()
            .position(|s| s == CANONICAL_REFERENCE)
            .unwrap_or(n / 2);
        Ok(Self {
            layout,
            led_names,
            subframe_us,
            readout_us,
            timeline,
            reference,
        })
    }

    /// The deployed configuration: 12 LEDs on a 3x4 tile, 158 sub-frames of
    /// 150 µs (23,700 µs of exposure) and a 6 ms readout.
    pub fn canonical() -> Self {
        let names = NOMINAL_LEDS.iter().map(|l| l.name.to_string()).collect();
        let counts: Vec<u32> = NOMINAL_LEDS
            .iter()
            .map(|l| (l.time_us as f64 / CANONICAL_SUBFRAME_US).round() as u32)
            .collect();
        let order: Vec<usize> = (0..NOMINAL_LEDS.len()).collect();
        Self::from_allocation(
            TileLayout::canonical(),
            names,
            &counts,
            &order,
            CANONICAL_SUBFRAME_US,
            CANONICAL_READOUT_US,
        )
        .expect("canonical schedule is well formed")
    }

    pub fn with_subframe_us(mut self, subframe_us: f64) -> Self {
        self.subframe_us = subframe_us;
        self
    }

    pub fn with_readout_us(mut self, readout_us: f64) -> Self {
        self.readout_us = readout_us;
        self
    }

    pub fn with_reference(mut self, name: &str) -> Result<Self> {
        self.reference = self.led_index(name)?;
        Ok(self)
    }

    pub fn layout(&self) -> &TileLayout {
        &self.layout
    }

    pub fn led_names(&self) -> &[String] {
        &self.led_names
    }

    pub fn num_leds(&self) -> usize {
        self.led_names.len()
    }

    pub fn num_subframes(&self) -> usize {
        self.timeline.len()
    }

    pub fn subframe_us(&self) -> f64 {
        self.subframe_us
    }

    pub fn readout_us(&self) -> f64 {
        self.readout_us
    }

    pub fn timeline(&self) -> &[Vec<usize>] {
        &self.timeline
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn led_index(&self, name: &str) -> Result<usize> {
        self.led_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownLed(name.to_string()))
    }

    pub fn subframes_per_led(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.num_leds()];
        for l in self.timeline.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    /// LED indices sorted by their first active sub-frame; LEDs that never
    /// fire come last in index order.
    pub fn led_order(&self) -> Vec<usize> {
        let mut first = vec![usize::MAX; self.num_leds()];
        for (s, leds) in self.timeline.iter().enumerate() {
            for &l in leds {
                first[l] = first[l].min(s);
            }
        }
        let mut order: Vec<usize> = (0..self.num_leds()).collect();
        order.sort_by_key(|&l| (first[l], l));
        order
    }

    /// `C_tile[t, s]`: tile `t` integrates during sub-frame `s`.
    pub fn exposure(&self, tile: usize, s: usize) -> bool {
        let led = self.layout.led_of_tile[tile];
        self.timeline[s].contains(&led)
    }

    /// `I_tile[t, s, l]`: LED `l` is on during sub-frame `s` for tile `t`.
    pub fn illumination(&self, _tile: usize, s: usize, l: usize) -> bool {
        self.timeline[s].contains(&l)
    }

    pub fn pixel_code(&self, x: usize, y: usize) -> PixelCode {
        let tile = self.layout.tile_index(x, y);
        let mut active_subframes = Vec::new();
        let mut leds = Vec::new();
        for s in 0..self.num_subframes() {
            if self.exposure(tile, s) {
                active_subframes.push(s);
                leds.push(
                    (0..self.num_leds())
                        .filter(|&l| self.illumination(tile, s, l))
                        .collect(),
                );
            }
        }
        PixelCode {
            tile,
            active_subframes,
            leds,
        }
    }

    /// `[t_start, t_end]` in µs spanning the LED's first to last active sub-frame.
    pub fn led_exposure_window(&self, led: usize) -> Result<(f64, f64)> {
        if led >= self.num_leds() {
            return Err(Error::UnknownLed(format!("#{led}")));
        }
        let mut active = self
            .timeline
            .iter()
            .enumerate()
            .filter(|(_, leds)| leds.contains(&led))
            .map(|(s, _)| s);
        let first = active
            .next()
            .ok_or_else(|| Error::Schedule(format!("LED `{}` never fires", self.led_names[led])))?;
        let last = active.next_back().unwrap_or(first);
        Ok((
            first as f64 * self.subframe_us,
            (last + 1) as f64 * self.subframe_us,
        ))
    }

    /// Sum of all LED window lengths plus readout.
    pub fn frame_duration_us(&self) -> f64 {
        let active: f64 = (0..self.num_leds())
            .filter_map(|l| self.led_exposure_window(l).ok())
            .map(|(s, e)| e - s)
            .sum();
        active + self.readout_us
    }

    /// Window midpoints normalised by the frame duration, in LED index order.
    pub fn normalized_timestamps(&self) -> Vec<f64> {
        let total = self.frame_duration_us();
        (0..self.num_leds())
            .map(|l| match self.led_exposure_window(l) {
                Ok((s, e)) => 0.5 * (s + e) / total,
                Err(_) => f64::NAN,
            })
            .collect()
    }

    /// Every broken invariant; empty when the schedule is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.subframe_us > 0.0) {
            out.push(Violation::NonPositiveSubframe(self.subframe_us));
        }
        if !(self.readout_us >= 0.0) {
            out.push(Violation::NegativeReadout(self.readout_us));
        }
        let n = self.num_leds();
        for (tile, &led) in self.layout.led_of_tile.iter().enumerate() {
            if led >= n {
                out.push(Violation::TileLedOutOfRange { tile, led });
            }
        }
        if self.layout.tiles() == n {
            let mut seen = vec![false; n];
            for &l in &self.layout.led_of_tile {
                if l < n {
                    seen[l] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                out.push(Violation::TileNotPermutation);
            }
        }
        for (s, leds) in self.timeline.iter().enumerate() {
            if leds.len() > 1 {
                out.push(Violation::SimultaneousLeds {
                    subframe: s,
                    leds: leds.iter().map(|&l| self.led_names[l].clone()).collect(),
                });
            }
        }
        for l in 0..n {
            let active: Vec<usize> = self
                .timeline
                .iter()
                .enumerate()
                .filter(|(_, leds)| leds.contains(&l))
                .map(|(s, _)| s)
                .collect();
            match (active.first(), active.last()) {
                (None, _) | (_, None) => out.push(Violation::NeverActive {
                    led: self.led_names[l].clone(),
                }),
                (Some(&a), Some(&b)) if b - a + 1 != active.len() => {
                    out.push(Violation::NonContiguous {
                        led: self.led_names[l].clone(),
                    })
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveSubframe(f64),
    NegativeReadout(f64),
    TileLedOutOfRange { tile: usize, led: usize },
    TileNotPermutation,
    SimultaneousLeds { subframe: usize, leds: Vec<String> },
    NonContiguous { led: String },
    NeverActive { led: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonPositiveSubframe(v) => write!(f, "sub-frame length {v} µs is not positive"),
            Violation::NegativeReadout(v) => write!(f, "readout time {v} µs is negative"),
            Violation::TileLedOutOfRange { tile, led } => {
                write!(f, "tile position {tile} names LED index {led}, which does not exist")
            }
            Violation::TileNotPermutation => {
                write!(f, "tile assignment is not a permutation of the LEDs")
            }
            Violation::SimultaneousLeds { subframe, leds } => {
                write!(f, "simultaneous LEDs in sub-frame {subframe}: {}", leds.join(", "))
            }
            Violation::NonContiguous { led } => write!(f, "non-contiguous sub-frames for LED `{led}`"),
            Violation::NeverActive { led } => write!(f, "LED `{led}` never fires"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_facts() {
        let s = CodingSchedule::canonical();
        assert_eq!(s.num_leds(), 12);
        assert_eq!(s.num_subframes(), 158);
        assert_eq!(s.num_subframes() as f64 * s.subframe_us(), 23_700.0);
        let amber = s.led_index("Amber").unwrap();
        assert_eq!(s.subframes_per_led()[amber], 40);
        assert_eq!(s.subframes_per_led()[s.led_index("Far Red").unwrap()], 30);
        assert_eq!(s.subframes_per_led()[s.led_index("UV").unwrap()], 9);
        assert_eq!(s.frame_duration_us(), 29_700.0);
        assert_eq!(s.led_names()[s.reference()], "Lime");
        assert!(s.validate().is_empty());
    }

    #[test]
    fn relative_allocation_matches_table() {
        let s = CodingSchedule::canonical();
        let total = s.num_subframes() as f64;
        let pct: Vec<f64> = s
            .subframes_per_led()
            .iter()
            .map(|&n| (n as f64 / total * 10_000.0).round() / 100.0)
            .collect();
        assert_eq!(
            pct,
            vec![5.70, 3.16, 3.16, 3.16, 5.70, 6.96, 5.06, 25.32, 8.23, 7.59, 6.96, 18.99]
        );
        let exact: f64 = s.subframes_per_led().iter().map(|&n| n as f64 / total).sum();
        assert!((exact * 100.0 - 100.0).abs() < 1e-12);
    }

    #[test]
    fn serpentine_layout() {
        let layout = TileLayout::canonical();
        assert_eq!(
            layout.led_of_tile(),
            &[0, 1, 2, 3, 7, 6, 5, 4, 8, 9, 10, 11]
        );
    }

    #[test]
    fn tile_map_periodicity() {
        let layout = TileLayout::canonical();
        assert_eq!(layout.tile_index(0, 0), 0);
        assert_eq!(layout.tile_index(4, 3), 0);
        assert_eq!(layout.tile_index(2, 1), 4 + 2);
        let map = pixel_tile_map(&layout, 640, 480);
        let mut counts = [0usize; 12];
        for t in map {
            counts[t] += 1;
        }
        assert!(counts.iter().all(|&c| c == 640 * 480 / 12));
        assert_eq!(counts[0], 25_600);
    }

    #[test]
    fn exposure_windows_abut() {
        let s = CodingSchedule::canonical();
        let order = s.led_order();
        assert_eq!(order, (0..12).collect::<Vec<_>>());
        assert_eq!(s.led_exposure_window(order[0]).unwrap().0, 0.0);
        assert_eq!(s.led_exposure_window(order[11]).unwrap().1, 23_700.0);
        for pair in order.windows(2) {
            let a = s.led_exposure_window(pair[0]).unwrap();
            let b = s.led_exposure_window(pair[1]).unwrap();
            assert_eq!(a.1, b.0);
        }
        assert!(s.led_exposure_window(12).is_err());
    }

    #[test]
    fn timestamps_small_cases() {
        let one = CodingSchedule::from_allocation(
            TileLayout::new(1, 1, vec![0]).unwrap(),
            vec!["A".into()],
            &[10],
            &[0],
            100.0,
            0.0,
        )
        .unwrap();
        assert_eq!(one.normalized_timestamps(), vec![0.5]);

        let two = CodingSchedule::from_allocation(
            TileLayout::new(1, 2, vec![0, 1]).unwrap(),
            vec!["A".into(), "B".into()],
            &[3, 3],
            &[0, 1],
            50.0,
            0.0,
        )
        .unwrap();
        assert_eq!(two.normalized_timestamps(), vec![0.25, 0.75]);
    }

    #[test]
    fn canonical_timestamps_increase_in_firing_order() {
        let s = CodingSchedule::canonical();
        let t = s.normalized_timestamps();
        for pair in s.led_order().windows(2) {
            assert!(t[pair[0]] < t[pair[1]]);
        }
        assert!(t.iter().all(|&v| v > 0.0 && v < 1.0));
        // Lime window: sub-frames 44..52 -> 6600..7800 µs, midpoint 7200 µs.
        assert_eq!(t[6], 7200.0 / 29_700.0);
    }

    #[test]
    fn pixel_codes_follow_tile_codes() {
        let s = CodingSchedule::canonical();
        let mut covered = vec![0usize; s.num_subframes()];
        for y in 0..3 {
            for x in 0..4 {
                let code = s.pixel_code(x, y);
                let led = s.layout().led_at(x, y);
                assert_eq!(code.active_subframes.len() as u32, s.subframes_per_led()[led]);
                for (sf, leds) in code.active_subframes.iter().zip(&code.leds) {
                    assert_eq!(leds, &vec![led]);
                    covered[*sf] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        // Same tile, same code.
        assert_eq!(s.pixel_code(1, 2), s.pixel_code(5, 8));
    }

    #[test]
    fn validation_flags_broken_schedules() {
        let layout = TileLayout::new(1, 2, vec![0, 1]).unwrap();
        let names = vec!["A".to_string(), "B".to_string()];
        let shared = CodingSchedule::from_timeline(
            layout.clone(),
            names.clone(),
            vec![vec![0], vec![0, 1], vec![1]],
            100.0,
            0.0,
        )
        .unwrap();
        let v = shared.validate();
        assert!(v.iter().any(|v| v.to_string().contains("simultaneous LEDs")));

        let split = CodingSchedule::from_timeline(
            layout,
            names,
            vec![vec![0], vec![1], vec![0]],
            100.0,
            0.0,
        )
        .unwrap();
        let v = split.validate();
        assert_eq!(v, vec![Violation::NonContiguous { led: "A".into() }]);
        assert!(v[0].to_string().contains("non-contiguous"));
    }

    #[test]
    fn alternative_subframe_length() {
        let s = CodingSchedule::canonical().with_subframe_us(170.0);
        assert_eq!(s.num_subframes(), 158);
        assert_eq!(s.led_exposure_window(11).unwrap().1, 158.0 * 170.0);
    }

    proptest! {
        #[test]
        fn timestamps_scale_invariant(factor in 0.01f64..100.0) {
            let s = CodingSchedule::canonical();
            let scaled = s.clone()
                .with_subframe_us(s.subframe_us() * factor)
                .with_readout_us(s.readout_us() * factor);
            for (a, b) in s.normalized_timestamps().iter().zip(scaled.normalized_timestamps()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn allocated_schedules_are_valid(counts in prop::collection::vec(1u32..20, 1..8)) {
            let n = counts.len();
            let layout = TileLayout::serpentine(1, n, n).unwrap();
            let names = (0..n).map(|i| format!("L{i}")).collect();
            let order: Vec<usize> = (0..n).rev().collect();
            let s = CodingSchedule::from_allocation(layout, names, &counts, &order, 10.0, 5.0).unwrap();
            prop_assert!(s.validate().is_empty());
            prop_assert_eq!(s.led_order(), order);
            prop_assert_eq!(s.subframes_per_led(), counts);
        }
    }
}
