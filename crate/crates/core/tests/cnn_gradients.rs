use delaydop::cnn::loss::batch_loss_grad_logits;
use delaydop::cnn::{batch_loss, LossWeights, Mode, Model, ModelConfig};
use delaydop::encoding::CellGridSpec;
use delaydop::preprocess::RegionOfInterest;
use delaydop::rng::seeded;
use delaydop::Real;
use ndarray::Array4;
use rand::Rng;

fn tiny_config(seed: u64) -> ModelConfig {
    let region = RegionOfInterest { delay_min: 0.0, delay_max: 0.1, doppler_min: -0.1, doppler_max: 0.1, height: 16, width: 16 };
    ModelConfig {
        input_channels: 2,
        input_hw: 16,
        base_channels: 3,
        n_encoder_blocks: 2,
        spp_kernels: vec![3],
        head_channels: vec![4],
        cell_spec: CellGridSpec { rows: 4, cols: 4, capacity: 2, region },
        seed,
    }
}

fn batch<T: Real>(seed: u64) -> (Array4<T>, Array4<T>) {
    let mut rng = seeded(seed);
    let x = Array4::from_shape_simple_fn((3, 2, 16, 16), || T::from_f64(rng.gen_range(-1.0..1.0)).unwrap());
    let mut y = Array4::zeros((3, 6, 4, 4));
    for ((_, c, _, _), v) in y.indexed_iter_mut() {
        if c % 3 == 0 && rng.gen_bool(0.3) {
            *v = T::one();
        }
    }
    for b in 0..3 {
        for slot in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    if y[[b, 3 * slot, i, j]] == T::one() {
                        y[[b, 3 * slot + 1, i, j]] = T::from_f64(rng.gen_range(0.0..1.0)).unwrap();
                        y[[b, 3 * slot + 2, i, j]] = T::from_f64(rng.gen_range(0.0..1.0)).unwrap();
                    }
                }
            }
        }
    }
    (x, y)
}

fn total_loss<T: Real>(model: &Model<T>, x: &Array4<T>, y: &Array4<T>, mode: Mode) -> f64 {
    let (pred, _) = model.forward_batch(x, mode).unwrap();
    batch_loss(&pred, y, LossWeights::default()).unwrap().total.to_f64().unwrap()
}

/// Worst group-wise relative error `‖g − g_fd‖ / ‖g_fd‖` over the trainable
/// parameter groups, probing up to `probes` coordinates per group. Groups
/// whose gradient norm is below `vanish` are checked in absolute terms.
fn worst_group_error<T: Real>(mode: Mode, h: f64, probes: usize, vanish: f64) -> f64 {
    let mut model = Model::<T>::new(tiny_config(11)).unwrap();
    let (x, y) = batch::<T>(5);
    let (pred, tape) = model.forward_batch(&x, mode).unwrap();
    let grads = model.backward(&tape, &batch_loss_grad_logits(&pred, &y, LossWeights::default()).unwrap());
    let mut worst: f64 = 0.0;
    for e in 0..model.params.entries.len() {
        if !model.params.entries[e].trainable {
            assert!(grads[e].iter().all(|g| *g == T::zero()));
            continue;
        }
        let n = model.params.entries[e].value.len();
        let stride = (n / probes).max(1);
        let (mut diff, mut norm) = (0.0, 0.0);
        for k in (0..n).step_by(stride) {
            let orig = model.params.entries[e].value.as_slice().unwrap()[k];
            let hh = T::from_f64(h).unwrap();
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig + hh;
            let up = total_loss(&model, &x, &y, mode);
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig - hh;
            let down = total_loss(&model, &x, &y, mode);
            model.params.entries[e].value.as_slice_mut().unwrap()[k] = orig;
            let step = ((orig + hh) - (orig - hh)).to_f64().unwrap();
            let fd = (up - down) / step;
            let g = grads[e].as_slice().unwrap()[k].to_f64().unwrap();
            diff += (g - fd).powi(2);
            norm += fd.powi(2);
        }
        let name = &model.params.entries[e].name;
        if norm.sqrt() < vanish {
            // Biases feeding a training-mode batch norm have no effect on the loss.
            assert!(diff.sqrt() < vanish, "{name}");
            continue;
        }
        let rel = diff.sqrt() / norm.sqrt();
        assert!(rel.is_finite(), "{name}");
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_f64_train_mode() {
    let err = worst_group_error::<f64>(Mode::Train, 1e-6, 40, 1e-8);
    assert!(err <= 1e-6, "relative error {err:e}");
}

#[test]
fn gradients_match_finite_differences_f64_eval_mode() {
    let err = worst_group_error::<f64>(Mode::Eval, 1e-6, 40, 1e-8);
    assert!(err <= 1e-6, "relative error {err:e}");
}

#[test]
fn gradients_match_finite_differences_f32() {
    let err = worst_group_error::<f32>(Mode::Train, 1e-3, 20, 1e-2);
    assert!(err <= 1e-2, "relative error {err:e}");
}

#[test]
fn unoccupied_offset_slots_get_exactly_zero_gradient() {
    let (_, y) = batch::<f64>(9);
    let pred = Array4::from_shape_fn(y.dim(), |(b, c, i, j)| 0.1 + 0.8 * (((b + c + i + j) % 7) as f64) / 7.0);
    let g = batch_loss_grad_logits(&pred, &y, LossWeights::default()).unwrap();
    for ((b, c, i, j), v) in g.indexed_iter() {
        if c % 3 != 0 && y[[b, 3 * (c / 3), i, j]] == 0.0 {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn eval_forward_is_deterministic_and_in_unit_interval() {
    let model = Model::<f64>::new(tiny_config(3)).unwrap();
    let (x, _) = batch::<f64>(1);
    let a = model.forward_batch(&x, Mode::Eval).unwrap().0;
    let b = model.forward_batch(&x, Mode::Eval).unwrap().0;
    assert_eq!(a, b);
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn eval_outputs_do_not_depend_on_batch_composition() {
    let model = Model::<f64>::new(tiny_config(4)).unwrap();
    let (x, _) = batch::<f64>(2);
    let full = model.forward_batch(&x, Mode::Eval).unwrap().0;
    for b in (0..3).rev() {
        let one = x.slice(ndarray::s![b..b + 1, .., .., ..]).to_owned();
        let single = model.forward_batch(&one, Mode::Eval).unwrap().0;
        assert_eq!(single.slice(ndarray::s![0, .., .., ..]), full.slice(ndarray::s![b, .., .., ..]));
    }
}
