//! Bundled spectral data and the nominal LED bank.
//!
//! The LED spectra are Gaussian stand-ins at typical peak wavelengths for a
//! 12-colour narrowband bank (the lime LED is phosphor-converted, hence
//! broad). Peak power is set inversely proportional to the LED's sub-frame
//! allocation, mirroring why dimmer LEDs get longer exposure windows. Replace
//! them with measured SPDs through the schedule config.

use std::path::Path;
use std::sync::OnceLock;

use crate::io::{parse_table, SpectralTable};
use crate::spectral::{SpectralCurve, WavelengthGrid};

const CMF_CSV: &str = include_str!("../assets/cie1931_2deg_10nm.csv");
const D65_CSV: &str = include_str!("../assets/d65_10nm.csv");
const COLORCHECKER_CSV: &str = include_str!("../assets/colorchecker_ohta_10nm.csv");

/// Nominal LED descriptor: name, exposure time per frame (µs), peak nm, FWHM nm.
pub struct NominalLed {
    pub name: &'static str,
    pub time_us: u32,
    pub center_nm: f64,
    pub fwhm_nm: f64,
}

/// The deployed 12-LED allocation in firing order (UV first, Far Red last).
pub const NOMINAL_LEDS: [NominalLed; 12] = [
    NominalLed { name: "UV", time_us: 1350, center_nm: 395.0, fwhm_nm: 15.0 },
    NominalLed { name: "Violet", time_us: 750, center_nm: 420.0, fwhm_nm: 18.0 },
    NominalLed { name: "Royal Blue", time_us: 750, center_nm: 447.0, fwhm_nm: 20.0 },
    NominalLed { name: "Blue", time_us: 750, center_nm: 470.0, fwhm_nm: 22.0 },
    NominalLed { name: "Cyan", time_us: 1350, center_nm: 505.0, fwhm_nm: 28.0 },
    NominalLed { name: "Green", time_us: 1650, center_nm: 527.0, fwhm_nm: 30.0 },
    NominalLed { name: "Lime", time_us: 1200, center_nm: 565.0, fwhm_nm: 100.0 },
    NominalLed { name: "Amber", time_us: 6000, center_nm: 591.0, fwhm_nm: 18.0 },
    NominalLed { name: "Red Orange", time_us: 1950, center_nm: 617.0, fwhm_nm: 18.0 },
    NominalLed { name: "Red", time_us: 1800, center_nm: 630.0, fwhm_nm: 18.0 },
    NominalLed { name: "Deep Red", time_us: 1650, center_nm: 660.0, fwhm_nm: 20.0 },
    NominalLed { name: "Far Red", time_us: 4500, center_nm: 730.0, fwhm_nm: 25.0 },
];

fn parsed(cell: &'static OnceLock<SpectralTable>, csv: &str, name: &str) -> &'static SpectralTable {
    cell.get_or_init(|| parse_table(csv, Path::new(name)).expect("bundled table parses"))
}

/// CIE 1931 2° colour-matching functions (x̄, ȳ, z̄), 380–780 nm at 10 nm.
pub fn cie1931_cmf() -> &'static SpectralTable {
    static CELL: OnceLock<SpectralTable> = OnceLock::new();
    parsed(&CELL, CMF_CSV, "cie1931_2deg_10nm.csv")
}

pub fn d65() -> SpectralCurve {
    static CELL: OnceLock<SpectralTable> = OnceLock::new();
    parsed(&CELL, D65_CSV, "d65_10nm.csv").curve(0)
}

/// 24 ColorChecker Classic patch reflectances on the calibration grid.
pub fn colorchecker() -> &'static SpectralTable {
    static CELL: OnceLock<SpectralTable> = OnceLock::new();
    parsed(&CELL, COLORCHECKER_CSV, "colorchecker_ohta_10nm.csv")
}

/// Nominal LED spectrum sampled at 1 nm over 380–780 nm.
pub fn nominal_led_spd(led: &NominalLed) -> SpectralCurve {
    let fine = WavelengthGrid::spanning(380.0, 780.0, 1.0).expect("static grid");
    let min_time = NOMINAL_LEDS.iter().map(|l| l.time_us).min().unwrap_or(1) as f64;
    SpectralCurve::gaussian(fine, led.center_nm, led.fwhm_nm).scaled(min_time / led.time_us as f64)
}

/// Smooth silicon-like camera sensitivity on a 5 nm grid, 380–780 nm.
pub fn nominal_sensitivity() -> SpectralCurve {
    let grid = WavelengthGrid::spanning(380.0, 780.0, 5.0).expect("static grid");
    SpectralCurve::from_fn(grid, |nm| {
        let z = (nm - 580.0) / 140.0;
        (-0.5 * z * z).exp()
    })
}
