//! Human-editable schedule configuration (TOML).
//!
//! ```toml
//! include = ["bank.toml"]      # optional; LED entries from includes come first
//! subframe_us = 150.0
//! readout_us = 6000.0
//! reference_led = "Lime"
//! tile = [["UV", "Violet", "Royal Blue", "Blue"],
//!         ["Lime", "Green", "Cyan", "Blue"], ...]
//!
//! [[led]]                      # firing order = entry order
//! name = "UV"
//! subframes = 9
//! alpha = 1.0                  # optional, default 1
//! spd = "spd/uv.csv"           # optional: measured SPD (wavelength_nm,value)
//! center_nm = 395.0            # optional: Gaussian stand-in ...
//! fwhm_nm = 15.0               # ... with this width
//! power = 1.0                  # optional peak scale for the Gaussian
//! ```
//!
//! An LED without `spd` or `center_nm` must be one of the nominal bank names.
//! Relative paths resolve against the file that mentions them. When `tile`
//! is absent the LEDs are laid out on a serpentine 3x4 tile.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::assets::NOMINAL_LEDS;
use crate::coding::{
    CodingSchedule, LedChannel, TileLayout, CANONICAL_READOUT_US, CANONICAL_REFERENCE,
    CANONICAL_SUBFRAME_US,
};
use crate::error::{Error, Result};
use crate::io::load_curve;
use crate::spectral::{SpectralCurve, WavelengthGrid};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    #[serde(default)]
    include: Vec<PathBuf>,
    subframe_us: Option<f64>,
    readout_us: Option<f64>,
    reference_led: Option<String>,
    tile: Option<Vec<Vec<String>>>,
    #[serde(default)]
    led: Vec<LedEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LedEntry {
    name: String,
    subframes: u32,
    alpha: Option<f64>,
    spd: Option<PathBuf>,
    center_nm: Option<f64>,
    fwhm_nm: Option<f64>,
    power: Option<f64>,
}

/// A resolved schedule plus its LED bank.
#[derive(Clone, Debug)]
pub struct ScheduleConfig {
    pub schedule: CodingSchedule,
    pub leds: Vec<LedChannel>,
}

impl ScheduleConfig {
    /// Nominal bank with the deployed schedule.
    pub fn canonical() -> Self {
        Self {
            schedule: CodingSchedule::canonical(),
            leds: crate::coding::nominal_leds(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut merged = ScheduleFile::default();
        let mut leds = Vec::new();
        merge_file(path, &mut merged, &mut leds, 0)?;
        build(path, merged, leds)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new("."));
        let file = parse_file(text, origin)?;
        let mut merged = ScheduleFile::default();
        let mut leds = Vec::new();
        for inc in &file.include {
            merge_file(&base.join(inc), &mut merged, &mut leds, 1)?;
        }
        absorb(file, base, &mut merged, &mut leds);
        build(origin, merged, leds)
    }
}

/// TOML text describing the canonical schedule with the nominal LED bank.
pub fn canonical_config_toml() -> String {
    let s = CodingSchedule::canonical();
    let names = s.led_names();
    let layout = s.layout();
    let mut out = String::new();
    out.push_str(&format!("subframe_us = {:.1}\n", CANONICAL_SUBFRAME_US));
    out.push_str(&format!("readout_us = {:.1}\n", CANONICAL_READOUT_US));
    out.push_str(&format!("reference_led = \"{CANONICAL_REFERENCE}\"\n"));
    out.push_str("tile = [\n");
    for r in 0..layout.rows() {
        let row: Vec<String> = (0..layout.cols())
            .map(|c| format!("\"{}\"", names[layout.led_of_tile()[r * layout.cols() + c]]))
            .collect();
        out.push_str(&format!("    [{}],\n", row.join(", ")));
    }
    out.push_str("]\n");
    for (l, n) in s.subframes_per_led().iter().enumerate() {
        out.push_str(&format!(
            "\n[[led]]\nname = \"{}\"\nsubframes = {}\nalpha = 1.0\n",
            names[l], n
        ));
    }
    out
}

fn parse_file(text: &str, origin: &Path) -> Result<ScheduleFile> {
    toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })
}

struct PendingLed {
    entry: LedEntry,
    base: PathBuf,
}

fn merge_file(
    path: &Path,
    merged: &mut ScheduleFile,
    leds: &mut Vec<PendingLed>,
    depth: usize,
) -> Result<()> {
    if depth > 8 {
        return Err(Error::Config {
            path: path.to_path_buf(),
            reason: "include nesting too deep".into(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = parse_file(&text, path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    for inc in &file.include {
        merge_file(&base.join(inc), merged, leds, depth + 1)?;
    }
    absorb(file, &base, merged, leds);
    Ok(())
}

fn absorb(file: ScheduleFile, base: &Path, merged: &mut ScheduleFile, leds: &mut Vec<PendingLed>) {
    if file.subframe_us.is_some() {
        merged.subframe_us = file.subframe_us;
    }
    if file.readout_us.is_some() {
        merged.readout_us = file.readout_us;
    }
    if file.reference_led.is_some() {
        merged.reference_led = file.reference_led;
    }
    if file.tile.is_some() {
        merged.tile = file.tile;
    }
    leds.extend(file.led.into_iter().map(|entry| PendingLed {
        entry,
        base: base.to_path_buf(),
    }));
}

fn build(origin: &Path, file: ScheduleFile, pending: Vec<PendingLed>) -> Result<ScheduleConfig> {
    let cfg_err = |reason: String| Error::Config {
        path: origin.to_path_buf(),
        reason,
    };
    if pending.is_empty() {
        return Err(cfg_err("no [[led]] entries".into()));
    }
    let names: Vec<String> = pending.iter().map(|p| p.entry.name.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(cfg_err(format!("LED `{n}` is declared twice")));
        }
    }
    let mut leds = Vec::with_capacity(pending.len());
    for p in &pending {
        let e = &p.entry;
        let spd = if let Some(path) = &e.spd {
            load_curve(p.base.join(path))?
        } else if let Some(center) = e.center_nm {
            let fwhm = e
                .fwhm_nm
                .ok_or_else(|| cfg_err(format!("LED `{}`: center_nm needs fwhm_nm", e.name)))?;
            let fine = WavelengthGrid::spanning(380.0, 780.0, 1.0)?;
            SpectralCurve::gaussian(fine, center, fwhm).scaled(e.power.unwrap_or(1.0))
        } else {
            let nominal = NOMINAL_LEDS.iter().find(|l| l.name == e.name).ok_or_else(|| {
                cfg_err(format!(
                    "LED `{}` has neither `spd` nor `center_nm` and is not a nominal LED",
                    e.name
                ))
            })?;
            crate::assets::nominal_led_spd(nominal).scaled(e.power.unwrap_or(1.0))
        };
        let alpha = e.alpha.unwrap_or(1.0);
        if !(alpha >= 0.0) {
            return Err(cfg_err(format!("LED `{}`: alpha must be non-negative", e.name)));
        }
        leds.push(LedChannel::new(e.name.clone(), spd)?.with_alpha(alpha));
    }

    let layout = match &file.tile {
        Some(rows) => {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                return Err(cfg_err("`tile` must be a non-empty rectangular grid".into()));
            }
            let mut idx = Vec::with_capacity(r * c);
            for name in rows.iter().flatten() {
                idx.push(
                    names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| cfg_err(format!("tile names unknown LED `{name}`")))?,
                );
            }
            TileLayout::new(r, c, idx)?
        }
        None => TileLayout::serpentine(3, 4, names.len())?,
    };

    let counts: Vec<u32> = pending.iter().map(|p| p.entry.subframes).collect();
    let order: Vec<usize> = (0..names.len()).collect();
    let mut schedule = CodingSchedule::from_allocation(
        layout,
        names,
        &counts,
        &order,
        file.subframe_us.unwrap_or(CANONICAL_SUBFRAME_US),
        file.readout_us.unwrap_or(CANONICAL_READOUT_US),
    )?;
    if let Some(reference) = &file.reference_led {
        schedule = schedule.with_reference(reference)?;
    }
    let violations = schedule.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(cfg_err(list.join("; ")));
    }
    Ok(ScheduleConfig { schedule, leds })
}
