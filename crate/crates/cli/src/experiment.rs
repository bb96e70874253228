//! Experiment configuration files.
//!
//! ```toml
//! output_dir = "out"
//! seeds = [1, 2, 3]
//! sigmas = [0.0, 0.05, 0.10]        # noise std as a fraction of peak signal
//! frames = 3                        # optional, default 1
//! motion_px_per_frame = [2.0, 0.0]  # optional scene translation
//! schedule = "schedule.toml"        # optional, default canonical
//! sensitivity = "sensitivity.csv"   # optional, default nominal
//!
//! [scene]
//! kind = "mixture"                  # cube | flat | mixture | rainbow
//! width = 96
//! height = 96
//!
//! [solver]                          # optional
//! lambda = 1e-5
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use specmosaic::assets::nominal_sensitivity;
use specmosaic::config::ScheduleConfig;
use specmosaic::eval::{gaussian_mixture_scene, rainbow_scene};
use specmosaic::io::{load_cube, load_curve};
use specmosaic::pipeline::{Pipeline, PipelineParams};
use specmosaic::reconstruct::{DEFAULT_KERNEL_FLOOR, DEFAULT_LAMBDA, DEFAULT_MU};
use specmosaic::align::{DEFAULT_BLOCK, DEFAULT_SEARCH_RADIUS};
use specmosaic::spectral::{HyperCube, SpectralCurve, WavelengthGrid};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub motion_px_per_frame: [f64; 2],
    pub schedule: Option<PathBuf>,
    pub sensitivity: Option<PathBuf>,
    pub scene: SceneSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_sigmas() -> Vec<f64> {
    vec![0.0]
}

fn default_frames() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneSpec {
    Cube { path: PathBuf },
    Flat { width: usize, height: usize, value: f64 },
    Mixture {
        width: usize,
        height: usize,
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "default_min_fwhm")]
        min_fwhm_nm: f64,
        #[serde(default)]
        seed: u64,
    },
    Rainbow {
        width: usize,
        height: usize,
        #[serde(default = "default_rainbow_fwhm")]
        fwhm_nm: f64,
    },
}

fn default_components() -> usize {
    3
}

fn default_min_fwhm() -> f64 {
    60.0
}

fn default_rainbow_fwhm() -> f64 {
    20.0
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub mu: f64,
    pub kernel_floor: f64,
    pub search_radius: usize,
    pub block: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            mu: DEFAULT_MU,
            kernel_floor: DEFAULT_KERNEL_FLOOR,
            search_radius: DEFAULT_SEARCH_RADIUS,
            block: DEFAULT_BLOCK,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum IlluminantChoice {
    #[default]
    EqualEnergy,
    D65,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StripChoice {
    #[default]
    PerChannel,
    Global,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub illuminant: IlluminantChoice,
    pub strip: Option<StripChoice>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Gains used to synthesise the chart capture; drawn from `[0.5, 2]` when absent.
    pub true_alpha: Option<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
    pub captures: usize,
    pub patch_px: usize,
    pub margin_px: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            true_alpha: None,
            sigma: 0.01,
            seed: 0,
            captures: specmosaic::calibration::CAPTURES_PER_MEASUREMENT,
            patch_px: 24,
            margin_px: 4,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub rainbow_width: usize,
    pub rainbow_height: usize,
    pub rainbow_fwhm_nm: f64,
    pub min_center_nm: f64,
    pub max_center_nm: f64,
    pub synth_center_step_nm: f64,
    pub double_fwhm_nm: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rainbow_width: 64,
            rainbow_height: 512,
            rainbow_fwhm_nm: 20.0,
            min_center_nm: 430.0,
            max_center_nm: 670.0,
            synth_center_step_nm: 10.0,
            double_fwhm_nm: 20.0,
        }
    }
}

/// A parsed config together with where it came from.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub digest: String,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid experiment config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let exp = Self {
            digest: String::new(),
            base_dir,
            config,
        };
        exp.validate()?;
        let digest = exp.compute_digest()?;
        Ok(Self { digest, ..exp })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let c = &self.config;
        let mut out: Vec<PathBuf> = c.schedule.iter().chain(&c.sensitivity).map(|p| self.resolve(p)).collect();
        if let SceneSpec::Cube { path } = &c.scene {
            out.push(self.resolve(path));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        ensure!(!c.seeds.is_empty(), "config must list at least one seed");
        ensure!(c.frames >= 1, "frames must be at least 1");
        for &s in &c.sigmas {
            ensure!((0.0..=1.0).contains(&s), "noise sigma {s} outside [0, 1]");
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// SHA-256 over the parsed config and the bytes of every referenced file.
    fn compute_digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config)?);
        for p in self.referenced_files() {
            let bytes = std::fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn schedule_config(&self) -> Result<ScheduleConfig> {
        Ok(match &self.config.schedule {
            Some(p) => ScheduleConfig::load(self.resolve(p))?,
            None => ScheduleConfig::canonical(),
        })
    }

    pub fn sensitivity(&self) -> Result<SpectralCurve> {
        Ok(match &self.config.sensitivity {
            Some(p) => load_curve(self.resolve(p))?,
            None => nominal_sensitivity(),
        })
    }

    pub fn params(&self) -> PipelineParams {
        let s = &self.config.solver;
        PipelineParams {
            lambda: s.lambda,
            mu: s.mu,
            kernel_floor: s.kernel_floor,
            search_radius: s.search_radius,
            block: s.block,
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let sched = self.schedule_config()?;
        Ok(Pipeline::new(sched.schedule, sched.leds, self.sensitivity()?, self.params())?)
    }

    /// The 31-channel ground-truth scene at rest.
    pub fn scene(&self) -> Result<HyperCube> {
        let cube = match &self.config.scene {
            SceneSpec::Cube { path } => load_cube(self.resolve(path))?,
            SceneSpec::Flat { width, height, value } => HyperCube::uniform(
                *width,
                *height,
                &SpectralCurve::constant(WavelengthGrid::reconstruction(), *value),
            ),
            SceneSpec::Mixture {
                width,
                height,
                components,
                min_fwhm_nm,
                seed,
            } => gaussian_mixture_scene(*width, *height, *components, *min_fwhm_nm, *seed)?,
            SceneSpec::Rainbow { width, height, fwhm_nm } => rainbow_scene(*width, *height, *fwhm_nm)?.cube,
        };
        cube.grid().expect(&WavelengthGrid::reconstruction())?;
        Ok(cube)
    }
}

/// `scene` translated by `(dx, dy)` pixels with bilinear sampling, clamped at the borders.
pub fn translate(scene: &HyperCube, dx: f64, dy: f64) -> HyperCube {
    if dx == 0.0 && dy == 0.0 {
        return scene.clone();
    }
    let (w, h) = (scene.width(), scene.height());
    let mut out = HyperCube::zeros(w, h, *scene.grid());
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f64 - dx).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 - dy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let dst = out.pixel_mut(x, y);
            for (k, d) in dst.iter_mut().enumerate() {
                let top = scene.get(x0, y0, k) * (1.0 - fx) + scene.get(x1, y0, k) * fx;
                let bot = scene.get(x0, y1, k) * (1.0 - fx) + scene.get(x1, y1, k) * fx;
                *d = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}
