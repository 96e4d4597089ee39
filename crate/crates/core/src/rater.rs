//! Scoring functions mapping sample features to a weight in (0, 1).
//!
//! A rater is a dense net with an identity head producing a logit; the score
//! is `sigmoid(logit / temperature)`. An entropy bonus on the score
//! distribution keeps scores away from the saturated ends during
//! meta-training.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{sigmoid, DenseNet, GradVector, OutputActivation};

/// Largest representable score below 1; scores are clamped into
/// `[MIN_SCORE, MAX_SCORE]` so they stay strictly inside (0, 1).
pub const MAX_SCORE: f64 = 1.0 - f64::EPSILON / 2.0;
pub const MIN_SCORE: f64 = f64::EPSILON / 2.0;

/// A capability-aligned scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rater {
    net: DenseNet,
    temperature: f64,
    entropy_coeff: f64,
    capability_id: usize,
}

impl Rater {
    /// Builds a rater with the given hidden layout over `input_dim` features.
    ///
    /// The output layer starts at zero so every initial score is exactly 0.5:
    /// a sharp temperature otherwise turns random initial logits into a
    /// saturated random partition that gradients cannot undo.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        capability_id: usize,
        temperature: f64,
        entropy_coeff: f64,
        seed: u64,
    ) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if entropy_coeff < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "entropy coefficient must be nonnegative, got {entropy_coeff}"
            )));
        }
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(input_dim);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let net = DenseNet::new(&layer_sizes, OutputActivation::Identity, seed)?;
        let mut params = net.params().to_vec();
        let last_in = layer_sizes[layer_sizes.len() - 2];
        for p in params.iter_mut().rev().take(last_in + 1) {
            *p = 0.0;
        }
        let net = DenseNet::from_params(&layer_sizes, OutputActivation::Identity, params, seed)?;
        Ok(Rater {
            net,
            temperature,
            entropy_coeff,
            capability_id,
        })
    }

    pub fn from_net(
        net: DenseNet,
        capability_id: usize,
        temperature: f64,
        entropy_coeff: f64,
    ) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::InvalidConfig(format!(
                "rater net must have a single output, got {}",
                net.output_dim()
            )));
        }
        if net.output_activation() != OutputActivation::Identity {
            return Err(Error::InvalidConfig(
                "rater net must use an identity head; the temperature sigmoid is applied on top"
                    .to_string(),
            ));
        }
        if temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Rater {
            net,
            temperature,
            entropy_coeff,
            capability_id,
        })
    }

    pub fn capability_id(&self) -> usize {
        self.capability_id
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn entropy_coeff(&self) -> f64 {
        self.entropy_coeff
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Pre-sigmoid logit for one feature vector.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }

    /// Score in (0, 1): `sigmoid(logit / temperature)`, clamped to the open
    /// interval's representable bounds.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let logit = self.logit(x)?;
        Ok(sigmoid(logit / self.temperature).clamp(MIN_SCORE, MAX_SCORE))
    }

    /// Elementwise `score` over a batch, order-preserving.
    pub fn score_batch<'a, I>(&self, xs: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        xs.into_iter().map(|x| self.score(x)).collect()
    }

    /// Score plus its gradient with respect to the rater parameters.
    ///
    /// `d score / d logit = score * (1 - score) / temperature`, chained
    /// through the logit net.
    pub fn score_param_grad(&self, x: &[f64]) -> Result<(f64, GradVector)> {
        let logit = self.logit(x)?;
        let s = sigmoid(logit / self.temperature).clamp(MIN_SCORE, MAX_SCORE);
        let dscore_dlogit = s * (1.0 - s) / self.temperature;
        let grad = self.net.output_grad(x, &[dscore_dlogit])?;
        Ok((s, grad))
    }

    /// Entropy bonus for this rater's coefficient; see [`entropy_penalty`].
    pub fn entropy_bonus(&self, scores: &[f64]) -> Result<f64> {
        entropy_penalty(scores, self.entropy_coeff)
    }

    /// `params' = params - eta * g`, returned as a new rater.
    pub fn stepped(&self, g: &GradVector, eta: f64) -> Result<Rater> {
        Ok(Rater {
            net: self.net.sgd_step(g, eta)?,
            temperature: self.temperature,
            entropy_coeff: self.entropy_coeff,
            capability_id: self.capability_id,
        })
    }

    /// Checkpoint: the nn checkpoint fields plus capability id, temperature
    /// and entropy coefficient.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("rater serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Rater> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let rater: Rater = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if rater.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has non-positive temperature {}",
                rater.temperature
            )));
        }
        Ok(rater)
    }
}

/// Mean binary entropy of the scores, scaled by `coeff`:
/// `coeff * mean(-s ln s - (1-s) ln(1-s))`.
///
/// Maximized at s = 0.5, and approaches 0 as scores saturate. During
/// meta-training this is subtracted from the meta-loss (a bonus), which is
/// what keeps the score distribution from collapsing.
pub fn entropy_penalty(scores: &[f64], coeff: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "entropy penalty needs at least one score".to_string(),
        ));
    }
    let mut total = 0.0;
    for &s in scores {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::ScoreDomain { value: s });
        }
        total += binary_entropy(s);
    }
    Ok(coeff * total / scores.len() as f64)
}

pub(crate) fn binary_entropy(s: f64) -> f64 {
    -s * s.ln() - (1.0 - s) * (1.0 - s).ln()
}

/// d/ds of the binary entropy: `ln((1-s)/s)`.
pub(crate) fn binary_entropy_deriv(s: f64) -> f64 {
    ((1.0 - s) / s).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rater_with_params(weight: f64, bias: f64, temperature: f64) -> Rater {
        // Single linear layer [1] -> [1]: logit = weight * x + bias.
        let net = DenseNet::from_params(&[1, 1], OutputActivation::Identity, vec![weight, bias], 0)
            .unwrap();
        Rater::from_net(net, 0, temperature, 0.2).unwrap()
    }

    #[test]
    fn zero_logit_scores_half() {
        let r = rater_with_params(1.0, 0.0, 0.1);
        assert_eq!(r.score(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn logit_point_one_at_temperature_point_one() {
        // sigmoid(0.1 / 0.1) = sigmoid(1)
        let r = rater_with_params(1.0, 0.1, 0.1);
        let s = r.score(&[0.0]).unwrap();
        assert!((s - 0.7310585786300049).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn saturation_clips_to_representable_bound() {
        let r = rater_with_params(1.0, 5.0, 0.1);
        let s = r.score(&[0.0]).unwrap();
        assert!(s < 1.0);
        assert!(s >= MAX_SCORE);
        let low = rater_with_params(1.0, -5.0, 0.1).score(&[0.0]).unwrap();
        assert!(low > 0.0);
        assert!(low <= MIN_SCORE.max(low));
    }

    #[test]
    fn score_monotone_in_logit() {
        let r = rater_with_params(1.0, 0.0, 0.1);
        let mut prev = 0.0;
        for i in -20..=20 {
            let s = r.score(&[i as f64 * 0.05]).unwrap();
            assert!(s > prev, "not monotone at {i}");
            prev = s;
        }
    }

    #[test]
    fn score_batch_empty_and_singleton() {
        let r = Rater::new(4, &[8], 1, 0.1, 0.2, 3).unwrap();
        let empty: Vec<&[f64]> = vec![];
        assert!(r.score_batch(empty).unwrap().is_empty());
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(r.score_batch([&x[..]]).unwrap(), vec![r.score(&x).unwrap()]);
    }

    #[test]
    fn score_batch_matches_loop_bitwise() {
        let r = Rater::new(8, &[16, 16], 2, 0.1, 0.2, 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch = r.score_batch(xs.iter().map(|v| v.as_slice())).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            assert_eq!(r.score(x).unwrap(), *b);
        }
    }

    #[test]
    fn score_grad_matches_finite_difference() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..20 {
            let r = Rater::new(3, &[6], 0, 0.1, 0.2, rng.random()).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, grad) = r.score_param_grad(&x).unwrap();
            let h = 1e-6;
            for i in 0..r.param_count() {
                let mut plus = r.net.params().to_vec();
                plus[i] += h;
                let mut minus = r.net.params().to_vec();
                minus[i] -= h;
                let sp = Rater::from_net(
                    DenseNet::from_params(r.net.layer_sizes(), OutputActivation::Identity, plus, 0)
                        .unwrap(),
                    0,
                    r.temperature,
                    r.entropy_coeff,
                )
                .unwrap()
                .score(&x)
                .unwrap();
                let sm = Rater::from_net(
                    DenseNet::from_params(
                        r.net.layer_sizes(),
                        OutputActivation::Identity,
                        minus,
                        0,
                    )
                    .unwrap(),
                    0,
                    r.temperature,
                    r.entropy_coeff,
                )
                .unwrap()
                .score(&x)
                .unwrap();
                let fd = (sp - sm) / (2.0 * h);
                let a = grad.as_slice()[i];
                assert!(
                    (a - fd).abs() <= 1e-7 + 1e-5 * a.abs().max(fd.abs()),
                    "param {i}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn entropy_penalty_at_half_is_coeff_ln2() {
        let v = entropy_penalty(&[0.5, 0.5, 0.5], 0.2).unwrap();
        assert!((v - 0.2 * std::f64::consts::LN_2).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn entropy_penalty_larger_at_half_than_saturated() {
        let at_half = entropy_penalty(&[0.5], 0.2).unwrap();
        let saturated = entropy_penalty(&[0.99], 0.2).unwrap();
        assert!(at_half > saturated);
    }

    #[test]
    fn entropy_penalty_zero_coeff() {
        assert_eq!(entropy_penalty(&[0.3, 0.9], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn entropy_penalty_rejects_out_of_domain() {
        assert!(matches!(
            entropy_penalty(&[0.5, 1.0], 0.2),
            Err(Error::ScoreDomain { .. })
        ));
        assert!(matches!(
            entropy_penalty(&[0.0], 0.2),
            Err(Error::ScoreDomain { .. })
        ));
        assert!(entropy_penalty(&[], 0.2).is_err());
    }

    #[test]
    fn entropy_invariant_under_swap() {
        let scores = [0.1, 0.33, 0.72, 0.98];
        let swapped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let a = entropy_penalty(&scores, 0.2).unwrap();
        let b = entropy_penalty(&swapped, 0.2).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_keeps_rater_fields() {
        let dir = std::env::temp_dir().join("caprater_rater_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rater.json");
        let r = Rater::new(5, &[12, 12], 2, 0.1, 0.2, 77).unwrap();
        r.save(&path).unwrap();
        let loaded = Rater::load(&path).unwrap();
        assert_eq!(r, loaded);
        assert_eq!(loaded.capability_id(), 2);
        assert_eq!(loaded.temperature(), 0.1);
        assert_eq!(loaded.entropy_coeff(), 0.2);
    }
}
