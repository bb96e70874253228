use proptest::prelude::*;

use specmosaic::coding::{nominal_leds, CodingSchedule};
use specmosaic::eval::{mae, sam};
use specmosaic::forward::{simulate_frame, SensingModel};
use specmosaic::pipeline::{Pipeline, PipelineParams};
use specmosaic::reconstruct::{fold_aggregate, hann_kernel, Patch};
use specmosaic::spectral::{HyperCube, WavelengthGrid};

fn cube(w: usize, h: usize, seed: u64) -> HyperCube {
    let g = WavelengthGrid::extended();
    HyperCube::from_fn(w, h, g, |x, y, k| {
        let t = (seed as f64 * 0.37 + x as f64 * 1.3 + y as f64 * 0.7 + k as f64 * 0.11).sin();
        0.5 + 0.45 * t
    })
}

fn extended_model() -> SensingModel {
    SensingModel::extended(&nominal_leds(), &specmosaic::assets::nominal_sensitivity()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, s1 in 0u64..100, s2 in 0u64..100) {
        let (m, sched) = (extended_model(), CodingSchedule::canonical());
        let (r1, r2) = (cube(8, 6, s1), cube(8, 6, s2));
        let mix = HyperCube::from_fn(8, 6, *r1.grid(), |x, y, k| a * r1.get(x, y, k) + b * r2.get(x, y, k));
        let y1 = simulate_frame(&r1, &sched, &m, 0.0, 0).unwrap();
        let y2 = simulate_frame(&r2, &sched, &m, 0.0, 0).unwrap();
        let ym = simulate_frame(&mix, &sched, &m, 0.0, 0).unwrap();
        for p in 0..48 {
            let expect = a * y1.values()[p] + b * y2.values()[p];
            prop_assert!((ym.values()[p] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn raising_alpha_never_lowers_that_leds_pixels(led in 0usize..12, boost in 1.0f64..5.0) {
        let sched = CodingSchedule::canonical();
        let sens = specmosaic::assets::nominal_sensitivity();
        let base = nominal_leds();
        let mut brighter = base.clone();
        brighter[led].alpha *= boost;
        let r = cube(12, 6, 1);
        let y0 = simulate_frame(&r, &sched, &SensingModel::extended(&base, &sens).unwrap(), 0.0, 0).unwrap();
        let y1 = simulate_frame(&r, &sched, &SensingModel::extended(&brighter, &sens).unwrap(), 0.0, 0).unwrap();
        for y in 0..6 {
            for x in 0..12 {
                if sched.layout().led_at(x, y) == led {
                    prop_assert!(y1.get(x, y) >= y0.get(x, y));
                } else {
                    prop_assert_eq!(y1.get(x, y), y0.get(x, y));
                }
            }
        }
    }

    #[test]
    fn noise_depends_only_on_seed(seed in 0u64..1000, sigma in 0.01f64..0.3) {
        let (m, sched) = (extended_model(), CodingSchedule::canonical());
        let r = cube(8, 6, 2);
        let a = simulate_frame(&r, &sched, &m, sigma, seed).unwrap();
        let b = simulate_frame(&r, &sched, &m, sigma, seed).unwrap();
        let c = simulate_frame(&r, &sched, &m, sigma, seed + 1).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.values() != c.values());
    }

    #[test]
    fn sam_ignores_per_pixel_scaling(seed in 0u64..100, s in 0.1f64..10.0) {
        let a = cube(5, 4, seed);
        let b = cube(5, 4, seed + 7);
        let scaled = HyperCube::from_fn(5, 4, *b.grid(), |x, y, k| b.get(x, y, k) * s * (1.0 + x as f64));
        let base = sam(&a, &b).unwrap().mean_deg;
        prop_assert!((sam(&a, &scaled).unwrap().mean_deg - base).abs() <= 1e-9);
        prop_assert!((sam(&b, &a).unwrap().mean_deg - base).abs() <= 1e-12);
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
    }

    #[test]
    fn fold_is_exact_where_patches_agree(floor in 0.001f64..1.0, c in -3.0f64..3.0) {
        let k = hann_kernel(66, 64, floor).unwrap();
        let patches = [(0, 0), (0, 32), (30, 0), (30, 32), (12, 9)]
            .iter()
            .map(|&(y, x)| Patch::constant(y, x, 66, 64, 33, c))
            .collect::<Vec<_>>();
        let out = fold_aggregate(&patches, &k, 96, 96, WavelengthGrid::extended()).unwrap();
        prop_assert!(out.data().iter().all(|v| (v - c).abs() <= 1e-12));
    }

    #[test]
    fn solver_is_linear_in_measurements(seed in 0u64..100, s in 0.1f64..10.0) {
        let p = Pipeline::nominal(PipelineParams::default()).unwrap();
        let y: Vec<f64> = (0..12).map(|l| ((seed + l) as f64).sin().abs() * p.recon.counts()[l as usize]).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
        let (r, rs) = (p.recon.solve_pixel(&y), p.recon.solve_pixel(&ys));
        for (a, b) in r.iter().zip(&rs) {
            prop_assert!((a * s - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
