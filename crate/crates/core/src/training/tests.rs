use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flow::{CouplingVariant, FlowModel, FlowSpec, LN_2PI};
use crate::numerics::Array;

use super::*;

fn small_spec(data_dim: usize, cond_dim: usize, variant: CouplingVariant, blocks: usize) -> FlowSpec {
    let mut spec = FlowSpec::new(data_dim, cond_dim, variant);
    spec.blocks = blocks;
    spec.conv_channels = 4;
    spec.cond_hidden = 8;
    spec
}

#[test]
fn nll_of_identity_model_at_origin() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = FlowModel::new(small_spec(2, 2, CouplingVariant::Vanilla, 2), &mut rng).unwrap();
    let x = Array::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let c = Array::new(vec![1, 2], vec![0.4, -0.4]).unwrap();
    let v = nll(&model, &x, &c).unwrap();
    assert!((v - LN_2PI).abs() < 1e-12, "nll {v} should equal log(2*pi)");
}

#[test]
fn nll_is_invariant_under_batch_duplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model =
        FlowModel::new(small_spec(3, 2, CouplingVariant::Reinforced, 3), &mut rng).unwrap();
    for p in model.params.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let xs = vec![0.3, -0.8, 1.1, 0.0, 0.5, -0.2];
    let cs = vec![1.0, 0.0, -1.0, 0.5];
    let x = Array::new(vec![2, 3], xs.clone()).unwrap();
    let c = Array::new(vec![2, 2], cs.clone()).unwrap();
    let x2 = Array::new(vec![4, 3], [xs.clone(), xs].concat()).unwrap();
    let c2 = Array::new(vec![4, 2], [cs.clone(), cs].concat()).unwrap();
    let a = nll(&model, &x, &c).unwrap();
    let b = nll(&model, &x2, &c2).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn dual_estimate_vanishes_for_identical_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let critic = CriticNet::new(2, 0, 16, 0.01, &mut rng);
    let batch = standard_normal_array(&mut rng, 10, 2);
    let w = wasserstein_dual_estimate(&critic, &batch, None, &batch, None).unwrap();
    assert_eq!(w, 0.0);
}

#[test]
fn zero_weight_critic_gives_zero_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut critic = CriticNet::new(2, 0, 16, 0.01, &mut rng);
    for p in critic.params.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    let a = standard_normal_array(&mut rng, 10, 2);
    let b = standard_normal_array(&mut rng, 12, 2);
    let w = wasserstein_dual_estimate(&critic, &a, None, &b, None).unwrap();
    assert_eq!(w, 0.0);
}

#[test]
fn dual_estimate_rejects_empty_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let critic = CriticNet::new(2, 0, 16, 0.01, &mut rng);
    let empty = Array::zeros(vec![0, 2]);
    let full = standard_normal_array(&mut rng, 4, 2);
    assert!(wasserstein_dual_estimate(&critic, &empty, None, &full, None).is_err());
}

#[test]
fn trained_critic_approaches_the_translation_distance() {
    // 1-D batches from N(0,1) vs N(1,1): W1 = 1. With width 128 and clamp
    // 0.088 the critic's Lipschitz constant is at most 128 * clamp^2 < 1,
    // so the dual estimate lies in (0, 1] and approaches 1 from below.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clamp = 0.088;
    let mut critic = CriticNet::new(1, 0, 128, clamp, &mut rng);
    let mut adam = AdamState::new(&critic.params, 1e-2);
    let data = standard_normal_array(&mut rng, 256, 1);
    let mut fake = standard_normal_array(&mut rng, 256, 1);
    for v in fake.data_mut() {
        *v += 1.0;
    }
    // Note the order: the "data" distribution has the larger mean so the
    // optimal gap is positive.
    let mut est = 0.0;
    for _ in 0..400 {
        est = critic_step(&mut critic, &mut adam, &fake, None, &data, None).unwrap();
        assert!(critic.max_abs_weight() <= clamp, "clamp invariant violated");
    }
    assert!(est > 0.5, "trained dual estimate {est} should approach 1");
    assert!(est <= 1.0 + 1e-9, "estimate {est} cannot exceed W1 = 1");
}

#[test]
fn clamp_holds_exactly_after_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clamp = 0.01;
    let mut critic = CriticNet::new(2, 1, 32, clamp, &mut rng);
    let mut adam = AdamState::new(&critic.params, 1e-2);
    for step in 0..25 {
        let a = standard_normal_array(&mut rng, 8, 2);
        let b = standard_normal_array(&mut rng, 8, 2);
        let c = standard_normal_array(&mut rng, 8, 1);
        critic_step(&mut critic, &mut adam, &a, Some(&c), &b, Some(&c)).unwrap();
        assert!(critic.max_abs_weight() <= clamp, "step {step}: clamp exceeded");
    }
}

fn constant_dataset(n: usize) -> (Array, Array) {
    let x: Vec<f64> = (0..n).flat_map(|_| [0.7, -0.3]).collect();
    let c: Vec<f64> = (0..n).flat_map(|_| [0.1, 0.2]).collect();
    (Array::new(vec![n, 2], x).unwrap(), Array::new(vec![n, 2], c).unwrap())
}

#[test]
fn degenerate_data_concentrates_by_at_least_two_nats() {
    let (x, c) = constant_dataset(64);
    let (xv, cv) = constant_dataset(8);
    let spec = small_spec(2, 2, CouplingVariant::Vanilla, 4);
    let config = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        epochs: 50,
        patience: 50,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fresh = FlowModel::new(spec.clone(), &mut rng).unwrap();
    let initial = nll(&fresh, &x, &c).unwrap();
    let outcome = train_arrays(&x, &c, &xv, &cv, spec, &config).unwrap();
    let trained = nll(&outcome.model, &x, &c).unwrap();
    assert!(
        initial - trained >= 2.0,
        "nll should drop by >= 2 nats on constant data: {initial} -> {trained}"
    );
}

#[test]
fn fixed_seed_reproduces_the_loss_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 48;
    let c = standard_normal_array(&mut rng, n, 2);
    let mut x = standard_normal_array(&mut rng, n, 2);
    for (xi, ci) in x.data_mut().iter_mut().zip(c.data()) {
        *xi = 0.5 * ci + 0.3 * *xi;
    }
    let (xv, cv) = (
        Array::new(vec![4, 2], x.data()[..8].to_vec()).unwrap(),
        Array::new(vec![4, 2], c.data()[..8].to_vec()).unwrap(),
    );
    let spec = small_spec(2, 2, CouplingVariant::Reinforced, 2);
    let config = TrainConfig { epochs: 3, batch_size: 16, seed: 42, ..TrainConfig::default() };
    let run = || train_arrays(&x, &c, &xv, &cv, spec.clone(), &config).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history.len(), b.history.len());
    for (ea, eb) in a.history.iter().zip(&b.history) {
        assert_eq!(ea.train_nll.to_bits(), eb.train_nll.to_bits());
        assert_eq!(ea.val_nll.to_bits(), eb.val_nll.to_bits());
    }
}

#[test]
fn beta_zero_reduces_to_pure_mle() {
    // With beta = 0 no Wasserstein machinery runs: the loss is the nll node
    // itself and the trajectory matches a pure-MLE run bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 32;
    let c = standard_normal_array(&mut rng, n, 2);
    let x = standard_normal_array(&mut rng, n, 2);
    let (xv, cv) = (
        Array::new(vec![4, 2], x.data()[..8].to_vec()).unwrap(),
        Array::new(vec![4, 2], c.data()[..8].to_vec()).unwrap(),
    );
    let spec = small_spec(2, 2, CouplingVariant::Vanilla, 2);
    let base = TrainConfig { epochs: 2, batch_size: 16, seed: 5, ..TrainConfig::default() };
    let with_zero_beta = TrainConfig { beta: 0.0, ..base.clone() };
    let a = train_arrays(&x, &c, &xv, &cv, spec.clone(), &base).unwrap();
    let b = train_arrays(&x, &c, &xv, &cv, spec, &with_zero_beta).unwrap();
    for (ea, eb) in a.history.iter().zip(&b.history) {
        assert_eq!(ea.train_nll.to_bits(), eb.train_nll.to_bits());
        assert!(ea.w_estimate.is_none() && eb.w_estimate.is_none());
    }
}

#[test]
fn train_wflow_requires_positive_beta() {
    let spec = small_spec(2, 2, CouplingVariant::Vanilla, 2);
    let config = TrainConfig::default();
    let windows = crate::data::WindowDataset {
        h: 2,
        k: 2,
        windows: Vec::new(),
        scaler: None,
        split: crate::data::SplitTag::Train,
    };
    assert!(train_wflow(&windows, &windows, spec, &config).is_err());
}

#[test]
fn mle_equals_kl_minimization_on_a_discrete_family() {
    // Finite candidate family: argmax of the mean log-likelihood is the
    // argmin of the empirical KL against the truth.
    let truth_mean = 0.6;
    let candidates = [0.0, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f64> = (0..500)
        .map(|_| truth_mean + rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let log_pdf = |mu: f64, x: f64| -0.5 * (x - mu) * (x - mu) - 0.5 * LN_2PI;

    let mean_ll: Vec<f64> = candidates
        .iter()
        .map(|&mu| samples.iter().map(|&x| log_pdf(mu, x)).sum::<f64>() / samples.len() as f64)
        .collect();
    let empirical_kl: Vec<f64> = candidates
        .iter()
        .map(|&mu| {
            samples
                .iter()
                .map(|&x| log_pdf(truth_mean, x) - log_pdf(mu, x))
                .sum::<f64>()
                / samples.len() as f64
        })
        .collect();

    let argmax_ll = mean_ll
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let argmin_kl = empirical_kl
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(argmax_ll, argmin_kl);
    assert_eq!(candidates[argmax_ll], 0.5);
}

#[test]
fn history_csv_has_empty_w_column_for_mle() {
    let history = vec![
        EpochStats { epoch: 0, train_nll: 1.5, val_nll: 1.6, w_estimate: None },
        EpochStats { epoch: 1, train_nll: 1.2, val_nll: 1.4, w_estimate: Some(0.25) },
    ];
    let f = tempfile::NamedTempFile::new().unwrap();
    write_history_csv(&history, f.path()).unwrap();
    let text = std::fs::read_to_string(f.path()).unwrap();
    assert_eq!(text, "epoch,train_nll,val_nll,w_estimate\n0,1.5,1.6,\n1,1.2,1.4,0.25\n");
}
