//! Shared test support: the independent surrogate-and-finite-difference
//! oracle for the first-order meta-gradient.
//!
//! The surrogate is reimplemented here from its definition, not by calling
//! the production gradient path: given a frozen trace (model states and
//! per-sample loss gradients), the post-inner-loop parameters are rebuilt as
//! a linear function of the rater's scores,
//!
//!   theta~(phi) = theta0 - (alpha/K) * sum_{s,k} (1/|B_k|) sum_z r_phi(z) * G[s][k][z]
//!
//! and the surrogate meta-loss is the mean validation loss at theta~(phi)
//! minus the entropy bonus of the scores. Central finite differences of this
//! scalar over the rater parameters are the oracle the analytic
//! meta-gradient must match.

use caprater::bilevel::InnerTrace;
use caprater::corpus::Sample;
use caprater::nn::{DenseNet, LossSpec, OutputActivation};
use caprater::rater::Rater;

/// Binary entropy; kept local so the oracle does not share code with the
/// production entropy path.
fn binary_entropy(s: f64) -> f64 {
    -s * s.ln() - (1.0 - s) * (1.0 - s).ln()
}

/// Evaluates the one-step-unrolled surrogate at the given rater parameters.
pub fn surrogate_value(
    trace: &InnerTrace,
    rater: &Rater,
    val_batches: &[Vec<Sample>],
    val_spec: LossSpec,
) -> f64 {
    let theta0 = &trace.states[0];
    let k_count = trace.microbatches.len() as f64;
    let mut params = theta0.params().to_vec();

    let mut scores = Vec::new();
    for (k, batch) in trace.microbatches.iter().enumerate() {
        let inv_batch = 1.0 / batch.len() as f64;
        for (i, sample) in batch.iter().enumerate() {
            let w = rater.score(&sample.features).unwrap();
            scores.push(w);
            for step_grads in &trace.sample_grads {
                let g = step_grads[k][i].as_slice();
                let scale = trace.inner_lr / k_count * inv_batch * w;
                for (p, gv) in params.iter_mut().zip(g) {
                    *p -= scale * gv;
                }
            }
        }
    }

    let rebuilt =
        DenseNet::from_params(theta0.layer_sizes(), theta0.output_activation(), params, 0).unwrap();

    let mut val_loss = 0.0;
    for batch in val_batches {
        let mut batch_loss = 0.0;
        for sample in batch {
            batch_loss += rebuilt
                .loss(&sample.features, &sample.targets, val_spec)
                .unwrap();
        }
        val_loss += batch_loss / batch.len() as f64;
    }
    val_loss /= val_batches.len() as f64;

    let entropy_bonus = if rater.entropy_coeff() > 0.0 {
        rater.entropy_coeff() * scores.iter().map(|&s| binary_entropy(s)).sum::<f64>()
            / scores.len() as f64
    } else {
        0.0
    };

    val_loss - entropy_bonus
}

/// Central finite differences of the surrogate over every rater parameter.
pub fn fd_meta_gradient(
    trace: &InnerTrace,
    rater: &Rater,
    val_batches: &[Vec<Sample>],
    val_spec: LossSpec,
    h: f64,
) -> Vec<f64> {
    let base_params = rater.net().params().to_vec();
    let layer_sizes = rater.net().layer_sizes().to_vec();
    let rater_at = |params: Vec<f64>| -> Rater {
        Rater::from_net(
            DenseNet::from_params(&layer_sizes, OutputActivation::Identity, params, 0).unwrap(),
            rater.capability_id(),
            rater.temperature(),
            rater.entropy_coeff(),
        )
        .unwrap()
    };

    (0..base_params.len())
        .map(|i| {
            let mut plus = base_params.clone();
            plus[i] += h;
            let mut minus = base_params.clone();
            minus[i] -= h;
            let fp = surrogate_value(trace, &rater_at(plus), val_batches, val_spec);
            let fm = surrogate_value(trace, &rater_at(minus), val_batches, val_spec);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| <= atol + rtol * max(|a|, |b|)` elementwise.
pub fn assert_grad_close(analytic: &[f64], oracle: &[f64], rtol: f64, atol: f64, context: &str) {
    assert_eq!(analytic.len(), oracle.len(), "{context}: length mismatch");
    for (i, (a, o)) in analytic.iter().zip(oracle).enumerate() {
        let tol = atol + rtol * a.abs().max(o.abs());
        assert!(
            (a - o).abs() <= tol,
            "{context}: component {i}: analytic {a} vs oracle {o} (diff {}, tol {tol})",
            (a - o).abs()
        );
    }
}

/// True when every component is within tolerance; used where a pass/fail
/// count is wanted instead of a panic.
pub fn grads_close(analytic: &[f64], oracle: &[f64], rtol: f64, atol: f64) -> bool {
    analytic.len() == oracle.len()
        && analytic
            .iter()
            .zip(oracle)
            .all(|(a, o)| (a - o).abs() <= atol + rtol * a.abs().max(o.abs()))
}
