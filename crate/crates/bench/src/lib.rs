//! Shared inputs for the criterion benches.

use specmosaic::eval::gaussian_mixture_scene;
use specmosaic::pipeline::{Pipeline, PipelineParams};
use specmosaic::spectral::HyperCube;

pub const SIZES: [usize; 2] = [128, 256];

pub fn pipeline() -> Pipeline {
    Pipeline::nominal(PipelineParams::default()).expect("nominal pipeline")
}

pub fn scene(size: usize) -> HyperCube {
    gaussian_mixture_scene(size, size, 3, 60.0, 11).expect("mixture scene")
}

/// A smooth texture and the same texture shifted by `(dx, dy)` pixels.
pub fn shifted_pair(size: usize, dx: f64, dy: f64) -> (Vec<f64>, Vec<f64>) {
    let f = |x: f64, y: f64| 0.5 + 0.25 * (x * 0.21).sin() * (y * 0.17).cos() + 0.2 * ((x + y) * 0.05).sin();
    let mut a = Vec::with_capacity(size * size);
    let mut b = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            a.push(f(x as f64, y as f64));
            b.push(f(x as f64 - dx, y as f64 - dy));
        }
    }
    (a, b)
}
