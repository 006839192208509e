//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use delaydop::baselines::{edc_model_order, mse_sweep, Estimator, PeakGnEstimator, SweepConfig};
use delaydop::cnn::loss::batch_loss_grad_logits;
use delaydop::cnn::{self, batch_loss, infer, CnnEstimator, Detection, LossWeights, Mode, Model, ModelConfig, SyntheticSource, TrainConfig};
use delaydop::config::ExperimentConfig;
use delaydop::dataset;
use delaydop::encoding::{assign_cell, decode, encode, normalize_params, CellGridSpec};
use delaydop::preprocess::{RegionOfInterest, ZoomDft};
use delaydop::refine::{fisher_information, model_jacobian, model_signal, GnConfig, RealParamVector};
use delaydop::rng::{seeded, substream};
use delaydop::scenario::{sphere_scenario, BistaticScenario};
use delaydop::signal::{add_noise, sample_paths, sigma_for_snr, synthesize_channel, PathSet, SamplingGrid, SceneConfig, Snapshot};
use delaydop::Error;
use ndarray::{Array2, Array4};
use num_complex::Complex;
use rand::Rng;

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

fn desk() -> ExperimentConfig {
    ExperimentConfig::desk_scale()
}

fn rel_fro(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

fn random_paths(rng: &mut impl Rng, p: usize) -> PathSet<f64> {
    let gains = (0..p).map(|_| Complex::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
    let delays = (0..p).map(|_| rng.gen_range(0.0..1.0)).collect();
    let dopplers = (0..p).map(|_| rng.gen_range(-0.5..0.5)).collect();
    PathSet::new(gains, delays, dopplers).unwrap()
}

fn fd_fisher(theta: &RealParamVector<f64>, grid: &SamplingGrid, sigma: f64, h: f64) -> Array2<f64> {
    let n = theta.0.len();
    let cols: Vec<Array2<Complex<f64>>> = (0..n)
        .map(|c| {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up.0[c] += h;
            down.0[c] -= h;
            (model_signal(&up, grid) - model_signal(&down, grid)) / Complex::new(2.0 * h, 0.0)
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let s: f64 = cols[i].iter().zip(cols[j].iter()).map(|(a, b)| (a.conj() * b).re).sum();
        2.0 * s / (sigma * sigma)
    })
}

fn c1_fisher_oracle() -> Outcome {
    let grid = desk().grid;
    let mut rng = seeded(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for s in 0..20 {
        let theta = RealParamVector::from_paths(&random_paths(&mut rng, 1 + s % 3));
        let sigma = rng.gen_range(0.1..2.0);
        let f = fisher_information(&theta, &grid, sigma).unwrap();
        worst = worst.max(rel_fro(&f, &fd_fisher(&theta, &grid, sigma, 1e-6)));
    }
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-6 && secs < 10.0, format!("20 scenes on 256x64, worst relative error {worst:.2e} (tol 1e-6), {secs:.1}s (limit 10s)"))
}

fn c2_mse_vs_crb() -> Outcome {
    let cfg = desk();
    let scene = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![cfg.evaluation.sweep_delay], vec![cfg.evaluation.sweep_doppler]).unwrap();
    let sweep = SweepConfig { snr_db: vec![0.0, 10.0, 20.0], trials: 500, seed: 7, gates: None };
    let ml = PeakGnEstimator { paths: 1, gn: GnConfig { max_iters: 10, ..cfg.refinement } };
    let start = Instant::now();
    let rows = mse_sweep(&[&ml as &dyn Estimator<f64>], &scene, &cfg.grid, &sweep).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let floor = 1.0 - 3.0 / (sweep.trials as f64).sqrt();
    let mut ok = secs < 300.0;
    let mut parts = Vec::new();
    for r in &rows {
        let (rt, ra) = (r.mse_tau / r.crb_tau, r.mse_alpha / r.crb_alpha);
        ok &= rt <= 3.0 && ra <= 3.0 && rt >= floor && ra >= floor && r.matched == r.trials;
        parts.push(format!("{} dB: mse/crb tau {rt:.2} alpha {ra:.2}", r.snr_db));
    }
    (ok, format!("{} (band [{floor:.2}, 3]), {secs:.1}s (limit 300s)", parts.join("; ")))
}

fn single_path_scene(cfg: &ExperimentConfig) -> SceneConfig {
    SceneConfig { path_count_range: [1, 1], ..cfg.scene.clone() }
}

fn c3_cnn_refinement_gain() -> Outcome {
    let cfg = desk();
    let scene = SceneConfig { snr_range_db: [10.0, 30.0], ..single_path_scene(&cfg) };
    let pre = cfg.preprocessor::<f32>().unwrap();
    let mut rng = substream(303, &[0]);
    let scenes: Vec<(PathSet<f32>, f32)> = (0..768)
        .map(|_| {
            let p = sample_paths::<f64>(&scene, &mut rng).unwrap();
            let snr = rng.gen_range(scene.snr_range_db[0]..scene.snr_range_db[1]);
            let sigma = sigma_for_snr(&synthesize_channel(&p, &cfg.grid).unwrap(), snr).unwrap();
            (p.cast::<f32>(), sigma as f32)
        })
        .collect();
    let src = SyntheticSource::new(pre.clone(), cfg.cell_spec(), scenes, 303, true).unwrap();
    let mut model = Model::<f32>::new(cfg.model_config()).unwrap();
    let tcfg = TrainConfig { batch_size: 32, epochs: 12, learning_rate: 2e-3, seed: 303, ..cfg.training.clone() };
    let start = Instant::now();
    let hist = cnn::train(&mut model, &tcfg, &src, None, |_| {}).unwrap();
    let train_secs = start.elapsed().as_secs_f64();

    let mk = |refine| CnnEstimator { name: String::new(), model: model.clone(), pre: pre.clone(), detection: Detection::Strongest(1), refine };
    let (raw, refined) = (mk(None), mk(Some(cfg.refinement)));
    let held_out = SceneConfig { snr_range_db: [20.0, 20.0], ..single_path_scene(&cfg) };
    let trials = 200;
    let (mut raw_se, mut ref_se) = ([0.0f64; 2], [0.0f64; 2]);
    for t in 0..trials {
        let rec = dataset::draw_record(&held_out, &cfg.grid, None, 304, t).unwrap();
        let snap = rec.snapshot(&cfg.grid).unwrap();
        let truth = (rec.truth.delays()[0], rec.truth.dopplers()[0]);
        for (est, acc) in [(&raw, &mut raw_se), (&refined, &mut ref_se)] {
            let p = est.estimate(&snap).unwrap();
            acc[0] += (p.delays()[0] - truth.0).powi(2);
            acc[1] += (p.dopplers()[0] - truth.1).powi(2);
        }
    }
    let n = trials as f64;
    let (rt, ra) = (raw_se[0] / n, raw_se[1] / n);
    let (ft, fa) = (ref_se[0] / n, ref_se[1] / n);
    let ok = rt >= 2.0 * ft && ra >= 2.0 * fa;
    let last = hist.last().unwrap().train_loss;
    (
        ok,
        format!(
            "20 dB held-out, {trials} scenes: raw mse tau {rt:.2e} alpha {ra:.2e}, refined tau {ft:.2e} alpha {fa:.2e}, ratios {:.1}/{:.1} (need >= 2); training loss {:.3} -> {last:.3} in {train_secs:.0}s",
            rt / ft,
            ra / fa,
            hist[0].train_loss
        ),
    )
}

fn c4_overfit() -> Outcome {
    let cfg = desk();
    let spec = cfg.cell_spec();
    let mut rng = substream(404, &[0]);
    let mut scenes: Vec<(PathSet<f32>, f32)> = Vec::new();
    while scenes.len() < 64 {
        let p = sample_paths::<f32>(&cfg.scene, &mut rng).unwrap();
        if encode(&p, &spec).is_ok() {
            scenes.push((p, 0.0));
        }
    }
    let truth_orders: Vec<usize> = scenes.iter().map(|s| s.0.len()).collect();
    let pre = cfg.preprocessor::<f32>().unwrap();
    let src = SyntheticSource::new(pre.clone(), spec, scenes.clone(), 404, false).unwrap();
    let mut model = Model::<f32>::new(cfg.model_config()).unwrap();
    let tcfg = TrainConfig { batch_size: 64, epochs: 500, learning_rate: 3e-3, seed: 404, ..cfg.training.clone() };
    let start = Instant::now();
    let hist = cnn::train(&mut model, &tcfg, &src, None, |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (first, last) = (hist[0].train_loss, hist.last().unwrap().train_loss);
    let exact = scenes
        .iter()
        .zip(&truth_orders)
        .filter(|((p, _), &k)| {
            let y = synthesize_channel(p, &cfg.grid).unwrap();
            let snap = Snapshot::new(y, cfg.grid, 0.0f32).unwrap();
            infer(&model, &pre, &snap, 0.5).unwrap().len() == k
        })
        .count();
    let rate = exact as f64 / 64.0;
    let ok = last < 0.01 * first && rate >= 0.95 && secs < 900.0;
    (
        ok,
        format!(
            "64 noiseless scenes, 500 epochs: loss {first:.4} -> {last:.6} ({:.2}% of initial, need < 1%), exact order at 0.5 on {exact}/64 (need >= 95%), {secs:.0}s (limit 900s)",
            100.0 * last / first
        ),
    )
}

fn tiny_model_config() -> ModelConfig {
    let region = RegionOfInterest { delay_min: 0.0, delay_max: 0.1, doppler_min: -0.1, doppler_max: 0.1, height: 16, width: 16 };
    ModelConfig {
        input_channels: 2,
        input_hw: 16,
        base_channels: 3,
        n_encoder_blocks: 2,
        spp_kernels: vec![3, 5],
        head_channels: vec![4],
        cell_spec: CellGridSpec { rows: 4, cols: 4, capacity: 2, region },
        seed: 5,
    }
}

fn network_gradient_error(mode: Mode) -> f64 {
    let mut rng = seeded(505);
    let mut model = Model::<f64>::new(tiny_model_config()).unwrap();
    let x = Array4::from_shape_simple_fn((2, 2, 16, 16), || rng.gen_range(-1.0..1.0));
    let mut y = Array4::<f64>::zeros((2, 6, 4, 4));
    for ((b, c, i, j), v) in y.indexed_iter_mut() {
        *v = match c % 3 {
            0 => f64::from(u8::from((b + c + i + j) % 3 == 0)),
            _ => rng.gen_range(0.0..1.0),
        };
    }
    let loss = |m: &Model<f64>| batch_loss(&m.forward_batch(&x, mode).unwrap().0, &y, LossWeights::default()).unwrap().total;
    let (pred, tape) = model.forward_batch(&x, mode).unwrap();
    let grads = model.backward(&tape, &batch_loss_grad_logits(&pred, &y, LossWeights::default()).unwrap());
    let (mut diff, mut norm) = (0.0, 0.0);
    let h = 1e-6;
    for e in 0..model.params.entries.len() {
        if !model.params.entries[e].trainable {
            continue;
        }
        let n = model.params.entries[e].value.len();
        for k in (0..n).step_by((n / 25).max(1)) {
            let orig = model.params.entries[e].value.as_slice().unwrap()[k];
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig + h;
            let up = loss(&model);
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig - h;
            let down = loss(&model);
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (grads[e].as_slice().unwrap()[k] - fd).powi(2);
            norm += fd * fd;
        }
    }
    (diff / norm).sqrt()
}

fn likelihood_gradient_error() -> f64 {
    let grid = SamplingGrid::centered(64, 32, 1.0, 1.0);
    let mut rng = seeded(506);
    let truth = random_paths(&mut rng, 3);
    let y = add_noise(&synthesize_channel(&truth, &grid).unwrap(), 0.3, &mut rng).unwrap();
    let snap = Snapshot::new(y, grid, 0.3).unwrap();
    let mut theta = RealParamVector::from_paths(&truth);
    theta.0.mapv_inplace(|v| v + 5e-4);
    let g = delaydop::refine::nll_gradient(&theta, &snap).unwrap();
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for c in 0..theta.0.len() {
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up.0[c] += h;
        down.0[c] -= h;
        let nll = |t: &RealParamVector<f64>| delaydop::refine::neg_log_likelihood(t, &snap).unwrap();
        let fd = (nll(&up) - nll(&down)) / (2.0 * h);
        diff += (g[c] - fd).powi(2);
        norm += fd * fd;
    }
    (diff / norm).sqrt()
}

fn jacobian_error() -> f64 {
    let grid = SamplingGrid::centered(64, 32, 1.0, 1.0);
    let theta = RealParamVector::from_paths(&random_paths(&mut seeded(507), 3));
    let jac = model_jacobian(&theta, &grid);
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for c in 0..theta.0.len() {
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up.0[c] += h;
        down.0[c] -= h;
        let fd = (model_signal(&up, &grid) - model_signal(&down, &grid)) / Complex::new(2.0 * h, 0.0);
        for (r, z) in fd.iter().enumerate() {
            diff += (jac[[r, c]] - z).norm_sqr();
            norm += z.norm_sqr();
        }
    }
    (diff / norm).sqrt()
}

fn c5_gradients() -> Outcome {
    let train = network_gradient_error(Mode::Train);
    let eval = network_gradient_error(Mode::Eval);
    let lik = likelihood_gradient_error();
    let jac = jacobian_error();
    let worst = train.max(eval).max(lik).max(jac);
    (
        worst <= 1e-6,
        format!("2-block network (train {train:.1e}, eval {eval:.1e}), likelihood gradient {lik:.1e} and Jacobian {jac:.1e} vs central differences (tol 1e-6)"),
    )
}

fn nearest_centroid(u: f64, v: f64, spec: &CellGridSpec) -> (usize, usize) {
    let mut best = (f64::INFINITY, (0, 0));
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let d = (u * spec.rows as f64 - (i as f64 + 0.5)).abs().max((v * spec.cols as f64 - (j as f64 + 0.5)).abs());
            if d < best.0 {
                best = (d, (i, j));
            }
        }
    }
    best.1
}

fn c6_encoding_round_trip() -> Outcome {
    let cfg = desk();
    let spec = cfg.cell_spec();
    let mut rng = seeded(606);
    let (mut done, mut overflow, mut bad) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    while done < 10_000 {
        let paths = sample_paths::<f64>(&cfg.scene, &mut rng).unwrap();
        let label = match encode(&paths, &spec) {
            Ok(l) => l,
            Err(Error::CellOverflow { .. }) => {
                overflow += 1;
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        done += 1;
        for (u, v) in normalize_params(&paths, &spec.region).unwrap() {
            if assign_cell((u, v), &spec) != nearest_centroid(u, v, &spec) {
                bad += 1;
            }
        }
        let back = decode(&label, 0.5, &spec);
        if back.len() != paths.len() {
            bad += 1;
            continue;
        }
        for (t, a) in paths.delays().iter().zip(paths.dopplers()) {
            let e = back.delays.iter().zip(&back.dopplers).map(|(bt, ba)| (bt - t).abs().max((ba - a).abs())).fold(f64::INFINITY, f64::min);
            worst = worst.max(e);
        }
    }
    let ok = bad == 0 && worst <= 1e-12;
    (ok, format!("10000 scenes ({overflow} overflowing draws skipped): {bad} count/cell mismatches, worst parameter error {worst:.1e} (tol 1e-12)"))
}

fn naive_zoom(y: &Array2<Complex<f64>>, grid: &SamplingGrid, roi: &RegionOfInterest) -> Array2<Complex<f64>> {
    let (f0, t0) = (grid.f0 / grid.delta_f, grid.t0 / grid.delta_t);
    Array2::from_shape_fn((roi.height, roi.width), |(h, w)| {
        let tau = roi.delay_min + h as f64 * (roi.delay_max - roi.delay_min) / roi.height as f64;
        let alpha = roi.doppler_min + w as f64 * (roi.doppler_max - roi.doppler_min) / roi.width as f64;
        let mut acc = Complex::new(0.0, 0.0);
        for k in 0..grid.n_freq {
            for l in 0..grid.n_time {
                acc += y[[k, l]] * Complex::from_polar(1.0, std::f64::consts::TAU * ((f0 + k as f64) * tau - (t0 + l as f64) * alpha));
            }
        }
        acc
    })
}

fn c7_zoom_dft() -> Outcome {
    let grid = SamplingGrid::centered(8, 8, 1.0, 1.0);
    let mut rng = seeded(707);
    let mut worst: f64 = 0.0;
    let full = RegionOfInterest { delay_min: 0.0, delay_max: 1.0, doppler_min: -0.5, doppler_max: 0.5, height: 8, width: 8 };
    for trial in 0..50 {
        let y = Array2::from_shape_simple_fn((8, 8), || Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let roi = if trial % 5 == 0 {
            full
        } else {
            let d0 = rng.gen_range(0.0..0.6);
            let a0 = rng.gen_range(-0.5..0.1);
            RegionOfInterest { delay_min: d0, delay_max: d0 + 0.4, doppler_min: a0, doppler_max: a0 + 0.4, height: rng.gen_range(1..12), width: rng.gen_range(1..12) }
        };
        let fast = ZoomDft::new(&grid, &roi).unwrap().apply(&y).unwrap();
        let slow = naive_zoom(&y, &grid, &roi);
        let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = fast.iter().zip(slow.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    (worst <= 1e-10, format!("50 random 8x8 inputs incl. 10 full-range: worst relative error {worst:.1e} (tol 1e-10)"))
}

/// Paths spread over the whole unambiguous range, pairwise at least three
/// Rayleigh bins apart along some axis, magnitudes within 10 dB.
fn separated_paths(rng: &mut impl Rng, p: usize, grid: &SamplingGrid) -> PathSet<f64> {
    let (db, da) = (grid.delay_bin(), grid.doppler_bin());
    let mut pts: Vec<(f64, f64)> = Vec::new();
    while pts.len() < p {
        let c = (rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5));
        let far = pts.iter().all(|q| {
            let dt = (c.0 - q.0).abs();
            let dd = (c.1 - q.1).abs();
            (dt.min(1.0 - dt) / db).max(dd.min(1.0 - dd) / da) >= 3.0
        });
        if far {
            pts.push(c);
        }
    }
    let gains = (0..p).map(|_| Complex::from_polar(10f64.powf(rng.gen_range(-10.0..0.0) / 20.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
    PathSet::new(gains, pts.iter().map(|x| x.0).collect(), pts.iter().map(|x| x.1).collect()).unwrap()
}

fn c8_edc() -> Outcome {
    let cfg = desk();
    let grid = cfg.grid;
    let p_max = cfg.evaluation.p_max;
    let start = Instant::now();
    let signal_runs: Vec<(usize, usize)> = rayon_map(200, |t| {
        let mut rng = substream(808, &[t]);
        let p = rng.gen_range(1..=4);
        let truth = separated_paths(&mut rng, p, &grid);
        let clean = synthesize_channel(&truth, &grid).unwrap();
        let sigma = sigma_for_snr(&clean, 20.0).unwrap();
        let snap = Snapshot::new(add_noise(&clean, sigma, &mut rng).unwrap(), grid, sigma).unwrap();
        (edc_model_order(&snap, p_max, &cfg.refinement).unwrap().order, p)
    });
    let noise_runs: Vec<usize> = rayon_map(200, |t| {
        let mut rng = substream(809, &[t]);
        let y = add_noise(&Array2::zeros((grid.n_freq, grid.n_time)), 1.0, &mut rng).unwrap();
        edc_model_order(&Snapshot::new(y, grid, 1.0).unwrap(), p_max, &cfg.refinement).unwrap().order
    });
    let exact = signal_runs.iter().filter(|(e, t)| e == t).count() as f64 / 200.0;
    let empty = noise_runs.iter().filter(|&&k| k == 0).count() as f64 / 200.0;
    let secs = start.elapsed().as_secs_f64();
    (
        exact >= 0.90 && empty >= 0.95,
        format!("200 scenes of 1-4 separated paths at 20 dB: exact {:.1}% (need >= 90%); 200 noise-only: order 0 in {:.1}% (need >= 95%), {secs:.0}s", 100.0 * exact, 100.0 * empty),
    )
}

fn rayon_map<R: Send>(n: u64, f: impl Fn(u64) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

fn c9_scenario() -> Outcome {
    let scn = BistaticScenario::default();
    let los_ns = scn.los_delay() * 1e9;
    let times: Vec<f64> = (0..250).map(|i| i as f64 * 4e-3).collect();
    let shifted: Vec<f64> = times.iter().map(|t| t + 1.0).collect();
    let a = sphere_scenario(&scn, &times).unwrap();
    let b = sphere_scenario(&scn, &shifted).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..2 {
        for i in 0..times.len() {
            worst = worst.max((a[s].delays_s[i] - b[s].delays_s[i]).abs() / a[s].delays_s[i]);
            worst = worst.max((a[s].dopplers_hz[i] - b[s].dopplers_hz[i]).abs() / a[s].dopplers_hz.iter().fold(0.0f64, |m, d| m.max(d.abs())));
        }
    }
    let ok = (los_ns - 7.47).abs() < 5e-3 && (los_ns - 7.4).abs() <= 0.1 && worst <= 1e-9;
    (ok, format!("direct path {los_ns:.3} ns for 2.24 m (expected 7.47, reference 7.4 +- 0.1); 1 s period at 60 rpm, worst mismatch {worst:.1e}"))
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["delaydop"];
    argv.extend_from_slice(args);
    delaydop_cli::run_command(argv)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk();
    cfg.training.train_size = 24;
    cfg.training.val_size = 8;
    cfg.training.batch_size = 8;
    cfg.training.epochs = 2;
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let c = cfg_path.to_str().unwrap();
    let mut failures = Vec::new();
    let outs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let o = out.to_str().unwrap();
        for args in [
            vec!["generate", "--config", c, "--seed", "11", "--out", o],
            vec!["train", "--config", c, "--seed", "11", "--out", o],
            vec!["eval-mse", "--config", c, "--seed", "11", "--out", o, "--trials", "20"],
        ] {
            let code = run_cli(&args);
            if code != 0 {
                failures.push(format!("{} exited {code}", args[0]));
            }
        }
    }
    if !failures.is_empty() {
        return (false, failures.join(", "));
    }
    for name in ["train.bin", "val.bin"] {
        let (a, b) = (read(&outs[0].join(name)), read(&outs[1].join(name)));
        let (mut da, mut db) = (dataset::from_bytes(&a).unwrap(), dataset::from_bytes(&b).unwrap());
        if da.manifest.created_unix != db.manifest.created_unix {
            da.manifest.created_unix = 0;
            db.manifest.created_unix = 0;
        }
        let payload_a = dataset::to_bytes(&cfg.scene, &cfg.grid, &da.records, 0, "", 0).unwrap();
        let payload_b = dataset::to_bytes(&cfg.scene, &cfg.grid, &db.records, 0, "", 0).unwrap();
        if da != db || payload_a != payload_b {
            failures.push(format!("{name} differs beyond its timestamp"));
        }
    }
    for name in ["model.ckpt", "loss_history.csv", "mse_sweep.csv", "mse_sweep.json"] {
        if read(&outs[0].join(name)) != read(&outs[1].join(name)) {
            failures.push(format!("{name} differs"));
        }
    }
    let ok = failures.is_empty();
    let detail = if ok { "generate/train/eval-mse twice with seed 11: datasets equal up to creation time, checkpoint, loss history and sweep byte-identical".to_string() } else { failures.join(", ") };
    (ok, detail)
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "Fisher information vs finite differences", c1_fisher_oracle),
    (2, "peak+GN MSE within 3x of the CRB", c2_mse_vs_crb),
    (3, "GN refinement improves raw CNN MSE by >= 2x", c3_cnn_refinement_gain),
    (4, "overfit of 64 noiseless scenes", c4_overfit),
    (5, "analytic gradients vs finite differences", c5_gradients),
    (6, "encode/decode round trip and cell assignment", c6_encoding_round_trip),
    (7, "zoom DFT vs naive double sum", c7_zoom_dft),
    (8, "EDC model order", c8_edc),
    (9, "two-sphere scenario", c9_scenario),
    (10, "CLI determinism", c10_determinism),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let total = Instant::now();
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] criterion {id:>2}: {name}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {failed} failed, total {:.0}s", total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
