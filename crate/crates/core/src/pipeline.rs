//! End-to-end composition: simulate, decode, align, reconstruct.

use crate::align::{align_video, BlockMatcher, DEFAULT_BLOCK, DEFAULT_SEARCH_RADIUS};
use crate::assets::nominal_sensitivity;
use crate::coding::{nominal_leds, CodingSchedule, LedChannel};
use crate::demosaic::{demosaic, SubImageSet};
use crate::error::Result;
use crate::forward::{simulate_reflectance_frame, CodedFrame, SensingModel};
use crate::reconstruct::{
    hann_kernel, reconstruct_frame, PatchSpec, ReconModel, ReconStats, WeightKernel,
    DEFAULT_KERNEL_FLOOR, DEFAULT_LAMBDA, DEFAULT_MU,
};
use crate::spectral::{mirror_extend_cube, HyperCube, SpectralCurve};

/// Tunable solver and alignment parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineParams {
    pub lambda: f64,
    pub mu: f64,
    pub kernel_floor: f64,
    pub search_radius: usize,
    pub block: usize,
}

impl Default for PipelineParams {
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

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub schedule: CodingSchedule,
    pub leds: Vec<LedChannel>,
    pub sensitivity: SpectralCurve,
    /// Sensing on the 33-channel extended grid.
    pub sensing: SensingModel,
    pub recon: ReconModel,
    pub patch: PatchSpec,
    pub kernel: WeightKernel,
    pub matcher: BlockMatcher,
}

impl Pipeline {
    pub fn new(
        schedule: CodingSchedule,
        leds: Vec<LedChannel>,
        sensitivity: SpectralCurve,
        params: PipelineParams,
    ) -> Result<Self> {
        let sensing = SensingModel::extended(&leds, &sensitivity)?;
        let recon = ReconModel::new(&schedule, &sensing, params.lambda, params.mu)?;
        let patch = PatchSpec {
            tile_rows: schedule.layout().rows(),
            tile_cols: schedule.layout().cols(),
            ..PatchSpec::default()
        };
        let kernel = hann_kernel(patch.patch_h, patch.patch_w, params.kernel_floor)?;
        Ok(Self {
            schedule,
            leds,
            sensitivity,
            sensing,
            recon,
            patch,
            kernel,
            matcher: BlockMatcher {
                search_radius: params.search_radius,
                block: params.block,
            },
        })
    }

    /// Canonical schedule with the nominal LED bank and sensitivity.
    pub fn nominal(params: PipelineParams) -> Result<Self> {
        Self::new(CodingSchedule::canonical(), nominal_leds(), nominal_sensitivity(), params)
    }

    /// Codes a 31-channel reflectance scene.
    pub fn simulate(&self, scene: &HyperCube, noise_sigma_frac: f64, seed: u64, frame_index: u64) -> Result<CodedFrame> {
        simulate_reflectance_frame(scene, &self.schedule, &self.sensing, noise_sigma_frac, seed, frame_index)
    }

    /// Codes a video whose LED windows see `scene_at(i + t'_l)`.
    pub fn simulate_motion(
        &self,
        scene_at: &(dyn Fn(f64) -> HyperCube + Sync),
        frames: usize,
        noise_sigma_frac: f64,
        seed: u64,
    ) -> Result<Vec<CodedFrame>> {
        let extended = |t: f64| mirror_extend_cube(&scene_at(t)).expect("31-channel scene");
        crate::forward::simulate_motion_video(&extended, frames, &self.schedule, &self.sensing, noise_sigma_frac, seed)
    }

    pub fn decode(&self, frame: &CodedFrame) -> Result<SubImageSet> {
        demosaic(frame, &self.schedule)
    }

    pub fn align(&self, sets: &[SubImageSet]) -> Result<Vec<SubImageSet>> {
        align_video(sets, &self.schedule, &self.matcher)
    }

    pub fn reconstruct(&self, set: &SubImageSet) -> Result<(HyperCube, ReconStats)> {
        reconstruct_frame(set, &self.recon, &self.patch, &self.kernel)
    }

    /// Static scene: simulate, decode and reconstruct one frame.
    pub fn run_static(&self, scene: &HyperCube, noise_sigma_frac: f64, seed: u64) -> Result<(HyperCube, ReconStats)> {
        let frame = self.simulate(scene, noise_sigma_frac, seed, 0)?;
        self.reconstruct(&self.decode(&frame)?)
    }

    /// Decodes, aligns and reconstructs every frame of a video.
    pub fn run_video(&self, frames: &[CodedFrame]) -> Result<Vec<(HyperCube, ReconStats)>> {
        let sets = frames.iter().map(|f| self.decode(f)).collect::<Result<Vec<_>>>()?;
        self.align(&sets)?.iter().map(|s| self.reconstruct(s)).collect()
    }
}
