use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use specmosaic::calibration::{
    average_patch_response, averaged_capture, colorchecker_chart, colorchecker_names, colorchecker_patches,
    fit_alpha, to_calibration_grid, ResponseMatrix,
};
use specmosaic::coding::LedChannel;
use specmosaic::eval::{
    evaluate, non_monotone_levels, peak_localization, peak_wavelength, rainbow_scene, spectral_angle, sweep_csv,
    synth_spectra, MetricReport, SweepRow, SynthKind, SynthSpectrum,
};
use specmosaic::forward::SensingModel;
use specmosaic::io::{
    decode_cube, decode_frame, decode_subimages, encode_cube, encode_frame, encode_subimages, frame_preview_png,
    load_cube,
};
use specmosaic::pipeline::Pipeline;
use specmosaic::render::{channel_strip, cube_to_srgb, Illuminant, StripNorm};
use specmosaic::spectral::{HyperCube, WavelengthGrid};

use crate::experiment::{translate, Experiment, IlluminantChoice, StripChoice};
use crate::manifest::{Artifact, Loaded, StageWriter};

fn group_tag(sigma: f64, seed: u64) -> String {
    format!("sigma{:05.2}_seed{seed}", sigma * 100.0)
}

fn illuminant(choice: IlluminantChoice) -> Illuminant {
    match choice {
        IlluminantChoice::EqualEnergy => Illuminant::EqualEnergy,
        IlluminantChoice::D65 => Illuminant::D65,
    }
}

fn strip_norm(choice: StripChoice) -> StripNorm {
    match choice {
        StripChoice::PerChannel => StripNorm::PerChannel,
        StripChoice::Global => StripNorm::Global,
    }
}

/// Ground truth for frame `i`: the scene at the reference LED's timestamp.
fn truth_at(exp: &Experiment, p: &Pipeline, scene: &HyperCube, i: usize) -> HyperCube {
    let [vx, vy] = exp.config.motion_px_per_frame;
    let t = i as f64 + p.schedule.normalized_timestamps()[p.schedule.reference()];
    translate(scene, vx * t, vy * t)
}

pub fn simulate(exp: &Experiment) -> Result<()> {
    let p = exp.pipeline()?;
    let scene = exp.scene()?;
    let cfg = &exp.config;
    let mut w = StageWriter::new(&exp.output_dir(), "simulate", &exp.digest)?;
    for i in 0..cfg.frames {
        let truth = truth_at(exp, &p, &scene, i);
        w.write(format!("truth/frame{i:03}.lmsc"), "truth", &encode_cube(&truth))?.frame = Some(i);
    }
    let [vx, vy] = cfg.motion_px_per_frame;
    for &sigma in &cfg.sigmas {
        for &seed in &cfg.seeds {
            let frames = if vx == 0.0 && vy == 0.0 {
                (0..cfg.frames as u64)
                    .map(|i| p.simulate(&scene, sigma, seed, i))
                    .collect::<specmosaic::Result<Vec<_>>>()?
            } else {
                p.simulate_motion(&|t| translate(&scene, vx * t, vy * t), cfg.frames, sigma, seed)?
            };
            let tag = group_tag(sigma, seed);
            for (i, f) in frames.iter().enumerate() {
                let a = w.write(format!("frames/{tag}_f{i:03}.lmcf"), "frame", &encode_frame(f))?;
                (a.sigma, a.seed, a.frame) = (Some(sigma), Some(seed), Some(i));
                w.write(format!("frames/{tag}_f{i:03}.png"), "preview", &frame_preview_png(f)?)?;
            }
            log::info!("simulated {} frame(s) for {tag}", frames.len());
        }
    }
    w.summary(json!({
        "width": scene.width(),
        "height": scene.height(),
        "frames": cfg.frames,
        "sigmas": cfg.sigmas,
        "seeds": cfg.seeds,
    }));
    w.finish()?;
    Ok(())
}

fn tagged(a: &Artifact, dst: &mut Artifact) {
    (dst.sigma, dst.seed, dst.frame) = (a.sigma, a.seed, a.frame);
}

fn stem(a: &Artifact) -> String {
    a.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn decode(exp: &Experiment) -> Result<()> {
    let out = exp.output_dir();
    let up = Loaded::read(&out, "simulate", &exp.digest)?;
    let p = exp.pipeline()?;
    let mut w = StageWriter::new(&out, "decode", &exp.digest)?;
    w.consumed(&up);
    let mut count = 0;
    for a in up.of_kind("frame") {
        let frame = decode_frame(&up.artifact_bytes(a)?, &out.join(&a.path))?;
        let set = p.decode(&frame)?;
        let dst = w.write(format!("subimages/{}.lmsi", stem(a)), "subimages", &encode_subimages(&set))?;
        tagged(a, dst);
        count += 1;
    }
    w.summary(json!({ "sets": count }));
    w.finish()?;
    Ok(())
}

/// Artifacts grouped by `(sigma, seed)` in manifest order, each sorted by frame.
fn groups<'a>(artifacts: impl Iterator<Item = &'a Artifact>) -> Vec<Vec<&'a Artifact>> {
    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut map: BTreeMap<(u64, u64), Vec<&Artifact>> = BTreeMap::new();
    for a in artifacts {
        let key = (a.sigma.unwrap_or(0.0).to_bits(), a.seed.unwrap_or(0));
        if !map.contains_key(&key) {
            order.push(key);
        }
        map.entry(key).or_default().push(a);
    }
    order
        .into_iter()
        .map(|k| {
            let mut g = map.remove(&k).expect("key recorded");
            g.sort_by_key(|a| a.frame);
            g
        })
        .collect()
}

pub fn reconstruct(exp: &Experiment) -> Result<()> {
    let out = exp.output_dir();
    let up = Loaded::read(&out, "decode", &exp.digest)?;
    let p = exp.pipeline()?;
    let render = &exp.config.render;
    let mut w = StageWriter::new(&out, "reconstruct", &exp.digest)?;
    w.consumed(&up);
    let mut stats_json = Vec::new();
    for group in groups(up.of_kind("subimages")) {
        let sets = group
            .iter()
            .map(|a| Ok(decode_subimages(&up.artifact_bytes(a)?, &out.join(&a.path))?))
            .collect::<Result<Vec<_>>>()?;
        let aligned = p.align(&sets)?;
        for (a, set) in group.iter().zip(&aligned) {
            let (cube, stats) = p.reconstruct(set)?;
            let name = stem(a);
            tagged(a, w.write(format!("recon/{name}.lmsc"), "cube", &encode_cube(&cube))?);
            let rgb = cube_to_srgb(&cube, &illuminant(render.illuminant))?;
            w.write(format!("recon/{name}_srgb.png"), "srgb", &rgb.to_png()?)?;
            if let Some(norm) = render.strip {
                let strip = channel_strip(&cube, strip_norm(norm));
                w.write(format!("recon/{name}_strip.png"), "strip", &strip.to_png()?)?;
            }
            stats_json.push(json!({
                "cube": format!("recon/{name}.lmsc"),
                "aligned": set.fully_aligned(),
                "patches": stats.patches,
                "clipped_fraction": stats.clipped_fraction(),
                "min_before_clamp": stats.min_before_clamp,
                "srgb_clip_fraction": rgb.clip_fraction,
            }));
        }
    }
    w.summary(json!({ "cubes": stats_json }));
    w.finish()?;
    Ok(())
}

fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricReport {
        psnr: sum(|r| r.psnr),
        ssim: sum(|r| r.ssim),
        mae: sum(|r| r.mae),
        sam: sum(|r| r.sam),
        sam_skipped: reports.iter().map(|r| r.sam_skipped).sum(),
    }
}

fn report_json(r: &MetricReport) -> serde_json::Value {
    json!({ "psnr_db": r.psnr, "ssim": r.ssim, "mae": r.mae, "sam_deg": r.sam, "sam_skipped": r.sam_skipped })
}

pub fn eval(exp: &Experiment) -> Result<()> {
    let out = exp.output_dir();
    let up = Loaded::read(&out, "reconstruct", &exp.digest)?;
    let sim = Loaded::read(&out, "simulate", &exp.digest)?;
    let mut truths = BTreeMap::new();
    for a in sim.of_kind("truth") {
        truths.insert(a.frame.unwrap_or(0), decode_cube(&sim.artifact_bytes(a)?, &out.join(&a.path))?);
    }
    let mut w = StageWriter::new(&out, "eval", &exp.digest)?;
    w.consumed(&up);
    let mut rows = Vec::new();
    let mut per_frame = Vec::new();
    for group in groups(up.of_kind("cube")) {
        let mut reports = Vec::new();
        for a in &group {
            let cube = decode_cube(&up.artifact_bytes(a)?, &out.join(&a.path))?;
            let frame = a.frame.unwrap_or(0);
            let truth = truths.get(&frame).with_context(|| format!("no ground truth for frame {frame}"))?;
            let r = evaluate(truth, &cube).with_context(|| format!("evaluating {}", a.path.display()))?;
            per_frame.push(json!({ "cube": a.path, "frame": frame, "metrics": report_json(&r) }));
            reports.push(r);
        }
        rows.push(SweepRow {
            sigma: group[0].sigma.unwrap_or(0.0),
            seed: group[0].seed.unwrap_or(0),
            report: mean_report(&reports),
        });
    }
    let csv = sweep_csv(&rows);
    w.write("metrics.csv", "metrics", csv.as_bytes())?;
    let rising = non_monotone_levels(&rows, 0.3);
    w.summary(json!({ "frames": per_frame, "psnr_rises_at_sigma": rising }));
    w.finish()?;
    print!("{csv}");
    Ok(())
}

/// Metrics for one explicit cube pair, printed as JSON.
pub fn eval_pair(reference: &Path, test: &Path) -> Result<()> {
    let r = evaluate(&load_cube(reference)?, &load_cube(test)?)?;
    println!("{}", serde_json::to_string_pretty(&report_json(&r))?);
    Ok(())
}

fn calibration_leds(leds: &[LedChannel]) -> Result<Vec<LedChannel>> {
    Ok(leds
        .iter()
        .map(|l| LedChannel::new(l.name.clone(), to_calibration_grid(&l.spd)?))
        .collect::<specmosaic::Result<_>>()?)
}

pub fn calibrate(exp: &Experiment, responses: Option<&Path>) -> Result<()> {
    let sched = exp.schedule_config()?;
    let leds = calibration_leds(&sched.leds)?;
    let sens = to_calibration_grid(&exp.sensitivity()?)?;
    let patches = colorchecker_patches();
    let names: Vec<String> = leds.iter().map(|l| l.name.clone()).collect();
    let cfg = &exp.config.calibration;
    let mut w = StageWriter::new(&exp.output_dir(), "calibrate", &exp.digest)?;

    let (measured, truth) = match responses {
        Some(path) => {
            let (m, led_names) = ResponseMatrix::load_csv(path)?;
            ensure!(
                led_names == names,
                "{} lists LEDs {led_names:?}, the schedule has {names:?}",
                path.display()
            );
            ensure!(m.patches() == patches.len(), "{} has {} patches, expected {}", path.display(), m.patches(), patches.len());
            (m, None)
        }
        None => {
            let truth = match &cfg.true_alpha {
                Some(a) => {
                    ensure!(a.len() == leds.len(), "true_alpha has {} entries for {} LEDs", a.len(), leds.len());
                    a.clone()
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    (0..leds.len()).map(|_| rng.random_range(0.5..2.0)).collect()
                }
            };
            let lit: Vec<LedChannel> = leds.iter().zip(&truth).map(|(l, &a)| l.clone().with_alpha(a)).collect();
            let model = SensingModel::new(&lit, &sens)?;
            let (chart, rects) = colorchecker_chart(cfg.patch_px, cfg.margin_px)?;
            let frame = averaged_capture(&chart, &sched.schedule, &model, cfg.sigma, cfg.seed, cfg.captures)?;
            w.write("calibration/chart.lmcf", "frame", &encode_frame(&frame))?;
            (average_patch_response(&frame, &sched.schedule, &rects, true)?, Some(truth))
        }
    };
    w.write("calibration/responses.csv", "responses", measured.to_csv(&names, &colorchecker_names()).as_bytes())?;
    let fit = fit_alpha(&measured, &leds, &patches, &sens)?;
    let mut csv = String::from(if truth.is_some() { "led,alpha_fit,alpha_true,rel_error\n" } else { "led,alpha_fit\n" });
    for (l, name) in names.iter().enumerate() {
        match &truth {
            Some(t) => csv.push_str(&format!(
                "{name},{:.9},{:.9},{:.6e}\n",
                fit.alpha[l],
                t[l],
                (fit.alpha[l] - t[l]).abs() / t[l]
            )),
            None => csv.push_str(&format!("{name},{:.9}\n", fit.alpha[l])),
        }
    }
    w.write("calibration/alpha.csv", "alpha", csv.as_bytes())?;
    let indeterminate: Vec<&String> = names.iter().zip(&fit.indeterminate).filter(|(_, &b)| b).map(|(n, _)| n).collect();
    w.summary(json!({
        "alpha": fit.alpha,
        "residual": fit.residual,
        "indeterminate": indeterminate,
    }));
    w.finish()?;
    print!("{csv}");
    Ok(())
}

/// Column-averaged spectrum of rows `y0..y1`.
fn band_mean(cube: &HyperCube, y0: usize, y1: usize) -> Vec<f64> {
    let mut acc = vec![0.0; cube.channels()];
    for y in y0..y1 {
        for x in 0..cube.width() {
            for (a, v) in acc.iter_mut().zip(cube.pixel(x, y)) {
                *a += v;
            }
        }
    }
    let n = ((y1 - y0) * cube.width()) as f64;
    acc.into_iter().map(|v| v / n).collect()
}

const BAND_ROWS: usize = 12;

/// Stacks spectra in bands of [`BAND_ROWS`] rows and reconstructs the result.
fn run_bands(p: &Pipeline, spectra: &[SynthSpectrum], width: usize, sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let grid = *spectra[0].curve.grid();
    let height = (spectra.len() * BAND_ROWS).max(p.patch.patch_h);
    let scene = HyperCube::from_fn(width, height, grid, |_, y, k| {
        spectra[(y / BAND_ROWS).min(spectra.len() - 1)].curve.values()[k]
    });
    let (recon, _) = p.run_static(&scene, sigma, seed)?;
    Ok((0..spectra.len())
        .map(|i| band_mean(&recon, i * BAND_ROWS + 4, i * BAND_ROWS + BAND_ROWS - 4))
        .collect())
}

/// Two peaks count as resolved when the two strongest local maxima of `s` sit within one bin of
/// the true centres and the valley between them falls below [`DIP_RATIO`] of the weaker peak.
fn resolves_pair(s: &[f64], grid: &WavelengthGrid, centers_nm: &[f64]) -> bool {
    let mut maxima: Vec<usize> = (1..s.len() - 1).filter(|&k| s[k] > s[k - 1] && s[k] >= s[k + 1]).collect();
    if maxima.len() < 2 {
        return false;
    }
    maxima.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (a, b) = (maxima[0].min(maxima[1]), maxima[0].max(maxima[1]));
    let near = |k: usize, c: f64| (grid.center(k) - c).abs() <= grid.step_nm();
    let valley = s[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
    near(a, centers_nm[0]) && near(b, centers_nm[1]) && valley < DIP_RATIO * s[a].min(s[b])
}

const DIP_RATIO: f64 = 0.9;

pub fn bench(exp: &Experiment) -> Result<()> {
    let p = exp.pipeline()?;
    let b = &exp.config.bench;
    let seed = exp.config.seeds[0];
    let mut w = StageWriter::new(&exp.output_dir(), "bench", &exp.digest)?;
    let rb = rainbow_scene(b.rainbow_width, b.rainbow_height, b.rainbow_fwhm_nm)?;
    let grid = *rb.cube.grid();
    let single = synth_spectra(SynthKind::Single, b.synth_center_step_nm)?;
    let double = synth_spectra(SynthKind::Double { fwhm_nm: b.double_fwhm_nm }, b.synth_center_step_nm)?;

    let mut peaks = String::from("sigma_pct,row,center_nm,error_nm\n");
    let mut synth = String::from("sigma_pct,kind,fwhm_nm,separation_nm,center_nm,peak_error_nm,sam_deg,resolved\n");
    let mut summary = Vec::new();
    for &sigma in &exp.config.sigmas {
        let pct = sigma * 100.0;
        let (recon, _) = p.run_static(&rb.cube, sigma, seed)?;
        let report = peak_localization(&recon, &rb, b.min_center_nm, b.max_center_nm)?;
        for (row, c, e) in &report.rows {
            peaks.push_str(&format!("{pct},{row},{c:.4},{e:.4}\n"));
        }

        let rec = run_bands(&p, &single, 64, sigma, seed)?;
        let mut single_err = Vec::new();
        for (s, r) in single.iter().zip(&rec) {
            let e = peak_wavelength(r, &grid) - s.centers_nm[0];
            let sam = spectral_angle(s.curve.values(), r).unwrap_or(f64::NAN);
            single_err.push(e.abs());
            synth.push_str(&format!("{pct},single,{},,{},{e:.4},{sam:.4},\n", s.fwhm_nm, s.centers_nm[0]));
        }
        let rec = run_bands(&p, &double, 64, sigma, seed)?;
        let mut resolved = 0;
        for (s, r) in double.iter().zip(&rec) {
            let sam = spectral_angle(s.curve.values(), r).unwrap_or(f64::NAN);
            let ok = resolves_pair(r, &grid, &s.centers_nm);
            resolved += ok as usize;
            synth.push_str(&format!(
                "{pct},double,{},{},{},,{sam:.4},{}\n",
                s.fwhm_nm,
                s.centers_nm[1] - s.centers_nm[0],
                s.centers_nm[0],
                ok as u8
            ));
        }
        single_err.sort_by(f64::total_cmp);
        summary.push(json!({
            "sigma": sigma,
            "rainbow_median_abs_error_nm": report.median_abs_error_nm,
            "single_peak_median_abs_error_nm": single_err[single_err.len() / 2],
            "double_peak_resolved": resolved,
            "double_peak_total": double.len(),
        }));
        log::info!("bench sigma {pct}%: rainbow median {:.2} nm", report.median_abs_error_nm);
    }
    w.write("bench/rainbow_peaks.csv", "peaks", peaks.as_bytes())?;
    w.write("bench/synthetic.csv", "synthetic", synth.as_bytes())?;
    w.summary(json!({ "seed": seed, "runs": summary }));
    let m = w.finish()?;
    println!("{}", serde_json::to_string_pretty(&m.summary)?);
    Ok(())
}

pub fn render(
    cube_path: &Path,
    output: &Path,
    choice: IlluminantChoice,
    strip: Option<&PathBuf>,
    norm: StripChoice,
) -> Result<()> {
    let cube = load_cube(cube_path)?;
    let rgb = cube_to_srgb(&cube, &illuminant(choice))?;
    rgb.save_png(output)?;
    if rgb.clip_fraction > 0.0 {
        log::warn!("{:.2}% of pixels clipped to the sRGB gamut", 100.0 * rgb.clip_fraction);
    }
    if let Some(path) = strip {
        channel_strip(&cube, strip_norm(norm)).save_png(path)?;
    }
    Ok(())
}
