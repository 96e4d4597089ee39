//! Finite-difference oracles for the first-order meta-gradient.

mod common;

use caprater::bilevel::{inner_loop_on_batches, meta_gradient, InnerLoopConfig};
use caprater::corpus::Sample;
use caprater::nn::{DenseNet, GradVector, LossSpec, OutputActivation};
use caprater::rater::Rater;
use common::{assert_grad_close, fd_meta_gradient};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn sample(id: u64, features: Vec<f64>, targets: Vec<f64>) -> Sample {
    let utility = vec![0.5; targets.len()];
    Sample {
        id,
        features,
        targets,
        planted_utility: utility,
        noise_flag: false,
    }
}

struct TinyInstance {
    model: DenseNet,
    rater: Rater,
    microbatches: Vec<Vec<Sample>>,
    val_batches: Vec<Vec<Sample>>,
    cfg: InnerLoopConfig,
    val_spec: LossSpec,
}

/// Random tiny bilevel instance: model <= 20 params, rater <= 30 params.
fn random_instance(rng: &mut ChaCha12Rng) -> TinyInstance {
    let feature_dim = rng.random_range(2..=3usize);
    let out_dim = rng.random_range(1..=2usize);
    let model_shapes: Vec<Vec<usize>> =
        vec![vec![feature_dim, out_dim], vec![feature_dim, 2, out_dim]];
    let model_shape = model_shapes[rng.random_range(0..model_shapes.len())].clone();
    let model = DenseNet::new(&model_shape, OutputActivation::Identity, rng.random()).unwrap();
    assert!(model.param_count() <= 20);

    let temperature = [0.3, 0.5, 1.0][rng.random_range(0..3)];
    let entropy_coeff = if rng.random::<bool>() { 0.2 } else { 0.0 };
    let rater = Rater::new(
        feature_dim,
        &[rng.random_range(2..=3)],
        0,
        temperature,
        entropy_coeff,
        rng.random(),
    )
    .unwrap();
    assert!(rater.param_count() <= 30);

    let inner_steps = rng.random_range(1..=2usize);
    let k = rng.random_range(1..=3usize);
    let microbatch_size = rng.random_range(1..=2usize);
    let k_prime = rng.random_range(1..=2usize);

    let mut next_id = 0u64;
    let mut make_batch = |rng: &mut ChaCha12Rng, size: usize| -> Vec<Sample> {
        (0..size)
            .map(|_| {
                next_id += 1;
                sample(
                    next_id,
                    (0..feature_dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                    (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect()
    };
    let microbatches: Vec<Vec<Sample>> = (0..k).map(|_| make_batch(rng, microbatch_size)).collect();
    let val_batches: Vec<Vec<Sample>> = (0..k_prime)
        .map(|_| make_batch(rng, microbatch_size.max(2)))
        .collect();

    let val_spec = if out_dim > 1 && rng.random::<bool>() {
        LossSpec::SquaredErrorCoord(rng.random_range(0..out_dim))
    } else {
        LossSpec::SquaredError
    };

    let cfg = InnerLoopConfig {
        inner_steps,
        train_microbatches: k,
        val_microbatches: k_prime,
        microbatch_size,
        inner_lr: [0.05, 0.2][rng.random_range(0..2)],
        outer_lr: 1.0,
        meta_period: 0,
        base_batch_size: 1,
        warmup_steps: 0,
        base_lr: 0.01,
        restart_period: 0,
    };

    TinyInstance {
        model,
        rater,
        microbatches,
        val_batches,
        cfg,
        val_spec,
    }
}

fn check_instance(instance: &TinyInstance, rtol: f64, atol: f64, context: &str) {
    let weights: Vec<Vec<f64>> = instance
        .microbatches
        .iter()
        .map(|batch| {
            instance
                .rater
                .score_batch(batch.iter().map(|s| s.features.as_slice()))
                .unwrap()
        })
        .collect();
    let trace = inner_loop_on_batches(
        &instance.model,
        &instance.microbatches,
        &weights,
        &instance.cfg,
        0,
        LossSpec::SquaredError,
    )
    .unwrap();
    let meta = meta_gradient(
        &trace,
        &instance.rater,
        &instance.val_batches,
        instance.val_spec,
    )
    .unwrap();
    let oracle = fd_meta_gradient(
        &trace,
        &instance.rater,
        &instance.val_batches,
        instance.val_spec,
        1e-4,
    );
    assert_grad_close(meta.grad.as_slice(), &oracle, rtol, atol, context);
}

#[test]
fn meta_gradient_matches_finite_differences_on_random_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xC0FFEE);
    for case in 0..60 {
        let instance = random_instance(&mut rng);
        check_instance(&instance, 1e-4, 1e-9, &format!("instance {case}"));
    }
}

/// Scalar special case: S=1, K=1, |B|=1 reduces the surrogate to
/// `L_val(theta0 - alpha * r_phi(z) * grad_loss(theta0; z))`, written out
/// here literally.
#[test]
fn one_step_scalar_surrogate_matches_literal_form() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..10 {
        let model = DenseNet::new(&[1, 1], OutputActivation::Identity, rng.random()).unwrap();
        let rater = Rater::new(1, &[2], 0, 0.5, 0.0, rng.random()).unwrap();
        let z = sample(
            1,
            vec![rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-1.0..1.0)],
        );
        let v = sample(
            2,
            vec![rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-1.0..1.0)],
        );
        let alpha = 0.1;

        let cfg = InnerLoopConfig {
            inner_steps: 1,
            train_microbatches: 1,
            val_microbatches: 1,
            microbatch_size: 1,
            inner_lr: alpha,
            outer_lr: 1.0,
            meta_period: 0,
            base_batch_size: 1,
            warmup_steps: 0,
            base_lr: 0.01,
            restart_period: 0,
        };
        let w = rater.score(&z.features).unwrap();
        let trace = inner_loop_on_batches(
            &model,
            &[vec![z.clone()]],
            &[vec![w]],
            &cfg,
            0,
            LossSpec::SquaredError,
        )
        .unwrap();
        let meta =
            meta_gradient(&trace, &rater, &[vec![v.clone()]], LossSpec::SquaredError).unwrap();

        // Literal surrogate: L_val(theta0 - alpha * r_phi(z) * g_z).
        let (_, g_z) = model
            .loss_grad(&z.features, &z.targets, LossSpec::SquaredError)
            .unwrap();
        let literal = |params: Vec<f64>| -> f64 {
            let r = Rater::from_net(
                DenseNet::from_params(
                    rater.net().layer_sizes(),
                    OutputActivation::Identity,
                    params,
                    0,
                )
                .unwrap(),
                0,
                rater.temperature(),
                0.0,
            )
            .unwrap();
            let w = r.score(&z.features).unwrap();
            let mut g = GradVector::zeros(model.param_count());
            g.add_scaled(&g_z, w);
            let stepped = model.sgd_step(&g, alpha).unwrap();
            stepped
                .loss(&v.features, &v.targets, LossSpec::SquaredError)
                .unwrap()
        };

        let h = 1e-4;
        let base = rater.net().params().to_vec();
        let fd: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                (literal(plus) - literal(minus)) / (2.0 * h)
            })
            .collect();
        assert_grad_close(meta.grad.as_slice(), &fd, 1e-4, 1e-9, "scalar literal");
    }
}
