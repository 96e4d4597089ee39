//! Minimal dense feed-forward network engine.
//!
//! Parameters live in a single flat `f64` array (per layer: row-major weights,
//! then biases), so gradient arithmetic and meta-gradient accumulation are
//! plain vector operations. Hidden layers use `tanh`; the output head is
//! `identity` or `sigmoid`, chosen at construction. Everything is 64-bit and
//! deterministic from the construction seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Activation applied to the final layer. Hidden layers are always `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Scalar loss over the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    /// `0.5 * sum_j (y_j - t_j)^2` over all output coordinates.
    SquaredError,
    /// `0.5 * (y_c - t_c)^2` for a single output coordinate.
    SquaredErrorCoord(usize),
    /// `-sum_j [t_j ln y_j + (1 - t_j) ln(1 - y_j)]`; requires a sigmoid head.
    BinaryCrossEntropy,
}

/// Flat gradient aligned with a [`DenseNet`]'s flattened parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        GradVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        assert_eq!(self.len(), other.len(), "gradient length mismatch in dot");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &GradVector, c: f64) {
        assert_eq!(
            self.len(),
            other.len(),
            "gradient length mismatch in add_scaled"
        );
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            *a *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> GradVector {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Dense feed-forward network with flat parameter storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    output_activation: OutputActivation,
    params: Vec<f64>,
    /// Seed the initial parameters were drawn from (checkpoint provenance).
    init_seed: u64,
}

fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least an input and an output layer, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {:?}",
            layer_sizes
        )));
    }
    Ok(())
}

impl DenseNet {
    /// Creates a network with weights drawn from `uniform(-s, s)`,
    /// `s = sqrt(6 / (fan_in + fan_out))`, and zero biases.
    pub fn new(
        layer_sizes: &[usize],
        output_activation: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count_for(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-s..s));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            params,
            init_seed: seed,
        })
    }

    /// All-zero parameters; mostly useful in tests.
    pub fn zeros(layer_sizes: &[usize], output_activation: OutputActivation) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            params: vec![0.0; param_count_for(layer_sizes)],
            init_seed: 0,
        })
    }

    /// Rebuilds a network from a flat parameter array.
    pub fn from_params(
        layer_sizes: &[usize],
        output_activation: OutputActivation,
        params: Vec<f64>,
        init_seed: u64,
    ) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let expected = param_count_for(layer_sizes);
        if params.len() != expected {
            return Err(Error::GradShape {
                expected,
                got: params.len(),
            });
        }
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            params,
            init_seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flattened parameters; `from_params` with this slice reproduces the
    /// network bit-exactly.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_trace(x).pop().unwrap())
    }

    /// Per-layer post-activation values, `activations[0]` being the input.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weights = &self.params[offset..offset + in_dim * out_dim];
            let biases =
                &self.params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
            offset += in_dim * out_dim + out_dim;

            let input = activations.last().unwrap();
            let mut out = Vec::with_capacity(out_dim);
            for o in 0..out_dim {
                let row = &weights[o * in_dim..(o + 1) * in_dim];
                let z = biases[o]
                    + row
                        .iter()
                        .zip(input.iter())
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                let a = if l + 1 == n_layers {
                    match self.output_activation {
                        OutputActivation::Identity => z,
                        OutputActivation::Sigmoid => sigmoid(z),
                    }
                } else {
                    z.tanh()
                };
                out.push(a);
            }
            activations.push(out);
        }
        activations
    }

    fn check_loss_spec(&self, target: &[f64], spec: LossSpec) -> Result<()> {
        if target.len() != self.output_dim() {
            return Err(Error::InputShape {
                expected: self.output_dim(),
                got: target.len(),
            });
        }
        match spec {
            LossSpec::SquaredErrorCoord(c) if c >= self.output_dim() => {
                Err(Error::InvalidArgument(format!(
                    "loss coordinate {c} out of range for output dim {}",
                    self.output_dim()
                )))
            }
            LossSpec::BinaryCrossEntropy if self.output_activation != OutputActivation::Sigmoid => {
                Err(Error::InvalidConfig(
                    "binary cross-entropy requires a sigmoid output head".to_string(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Scalar loss of this network on one sample.
    pub fn loss(&self, x: &[f64], target: &[f64], spec: LossSpec) -> Result<f64> {
        self.check_input(x)?;
        self.check_loss_spec(target, spec)?;
        let y = self.forward_trace(x).pop().unwrap();
        let loss = loss_value(&y, target, spec);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".to_string()));
        }
        Ok(loss)
    }

    /// Loss plus its reverse-mode gradient with respect to all parameters.
    pub fn loss_grad(
        &self,
        x: &[f64],
        target: &[f64],
        spec: LossSpec,
    ) -> Result<(f64, GradVector)> {
        self.check_input(x)?;
        self.check_loss_spec(target, spec)?;
        let activations = self.forward_trace(x);
        let y = activations.last().unwrap();
        let loss = loss_value(y, target, spec);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".to_string()));
        }

        // dz at the output layer; BCE + sigmoid collapses to y - t.
        let dz_out: Vec<f64> = match spec {
            LossSpec::SquaredError => {
                let dy: Vec<f64> = y.iter().zip(target).map(|(y, t)| y - t).collect();
                self.chain_output(&dy, y)
            }
            LossSpec::SquaredErrorCoord(c) => {
                let mut dy = vec![0.0; y.len()];
                dy[c] = y[c] - target[c];
                self.chain_output(&dy, y)
            }
            LossSpec::BinaryCrossEntropy => y.iter().zip(target).map(|(y, t)| y - t).collect(),
        };
        Ok((loss, self.backward(&activations, dz_out)))
    }

    /// Loss and gradient of `weight * loss`; the gradient scales exactly.
    pub fn weighted_loss_grad(
        &self,
        x: &[f64],
        target: &[f64],
        spec: LossSpec,
        weight: f64,
    ) -> Result<(f64, GradVector)> {
        let (loss, mut grad) = self.loss_grad(x, target, spec)?;
        grad.scale(weight);
        Ok((weight * loss, grad))
    }

    /// Gradient of `upstream . y` with respect to all parameters, `upstream`
    /// applied at the post-activation outputs.
    pub fn output_grad(&self, x: &[f64], upstream: &[f64]) -> Result<GradVector> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::InputShape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let activations = self.forward_trace(x);
        let y = activations.last().unwrap();
        let dz_out = self.chain_output(upstream, y);
        Ok(self.backward(&activations, dz_out))
    }

    /// Applies the output activation's derivative: dy -> dz.
    fn chain_output(&self, dy: &[f64], y: &[f64]) -> Vec<f64> {
        match self.output_activation {
            OutputActivation::Identity => dy.to_vec(),
            OutputActivation::Sigmoid => {
                dy.iter().zip(y).map(|(dy, y)| dy * y * (1.0 - y)).collect()
            }
        }
    }

    /// Backpropagates `dz_out` (pre-activation gradient at the output layer)
    /// through the stored activations.
    fn backward(&self, activations: &[Vec<f64>], dz_out: Vec<f64>) -> GradVector {
        let n_layers = self.layer_sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];

        // Per-layer parameter offsets.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        let mut dz = dz_out;
        for l in (0..n_layers).rev() {
            let in_dim = self.layer_sizes[l];
            let out_dim = self.layer_sizes[l + 1];
            let w_off = offsets[l];
            let input = &activations[l];

            let g_w = &mut grad[w_off..w_off + in_dim * out_dim + out_dim];
            for o in 0..out_dim {
                let d = dz[o];
                for i in 0..in_dim {
                    g_w[o * in_dim + i] = d * input[i];
                }
                g_w[in_dim * out_dim + o] = d;
            }

            if l > 0 {
                let weights = &self.params[w_off..w_off + in_dim * out_dim];
                let mut d_input = vec![0.0; in_dim];
                for o in 0..out_dim {
                    let d = dz[o];
                    for i in 0..in_dim {
                        d_input[i] += weights[o * in_dim + i] * d;
                    }
                }
                // Previous layer is always tanh: a' = 1 - a^2.
                dz = d_input
                    .iter()
                    .zip(input.iter())
                    .map(|(d, a)| d * (1.0 - a * a))
                    .collect();
            }
        }
        GradVector(grad)
    }

    /// `params' = params - lr * g`, returned as a new network.
    pub fn sgd_step(&self, g: &GradVector, lr: f64) -> Result<DenseNet> {
        let mut next = self.clone();
        next.sgd_step_in_place(g, lr)?;
        Ok(next)
    }

    /// In-place variant of [`DenseNet::sgd_step`] for hot loops.
    pub fn sgd_step_in_place(&mut self, g: &GradVector, lr: f64) -> Result<()> {
        if g.len() != self.params.len() {
            return Err(Error::GradShape {
                expected: self.params.len(),
                got: g.len(),
            });
        }
        for (p, g) in self.params.iter_mut().zip(g.as_slice()) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Writes a self-describing JSON checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<DenseNet> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let net: DenseNet = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let expected = param_count_for(&net.layer_sizes);
        if net.params.len() != expected {
            return Err(Error::GradShape {
                expected,
                got: net.params.len(),
            });
        }
        Ok(net)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn loss_value(y: &[f64], target: &[f64], spec: LossSpec) -> f64 {
    match spec {
        LossSpec::SquaredError => {
            0.5 * y
                .iter()
                .zip(target)
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>()
        }
        LossSpec::SquaredErrorCoord(c) => 0.5 * (y[c] - target[c]) * (y[c] - target[c]),
        LossSpec::BinaryCrossEntropy => {
            const EPS: f64 = 1e-300;
            -y.iter()
                .zip(target)
                .map(|(y, t)| t * y.max(EPS).ln() + (1.0 - t) * (1.0 - y).max(EPS).ln())
                .sum::<f64>()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// Independent matrix-multiply forward pass, coded without reference to
    /// `DenseNet` internals beyond the documented flat layout.
    fn reference_forward(
        layer_sizes: &[usize],
        params: &[f64],
        act: OutputActivation,
        x: &[f64],
    ) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        let n_layers = layer_sizes.len() - 1;
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (nin, nout) = (w[0], w[1]);
            let mut next = vec![0.0; nout];
            for (o, next_o) in next.iter_mut().enumerate() {
                let mut z = params[off + nin * nout + o];
                for i in 0..nin {
                    z += params[off + o * nin + i] * a[i];
                }
                *next_o = if l + 1 == n_layers {
                    match act {
                        OutputActivation::Identity => z,
                        OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                    }
                } else {
                    z.tanh()
                };
            }
            off += nin * nout + nout;
            a = next;
        }
        a
    }

    #[test]
    fn zero_network_identity_output_is_zero() {
        let net = DenseNet::zeros(&[3, 2], OutputActivation::Identity).unwrap();
        assert_eq!(net.forward(&[0.3, -0.7, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        // W = [[2]], b = [1], x = [3] -> 7
        let net =
            DenseNet::from_params(&[1, 1], OutputActivation::Identity, vec![2.0, 1.0], 0).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_matches_reference_oracle() {
        let mut r = rng(7);
        for _ in 0..20 {
            let net = DenseNet::new(&[4, 6, 3], OutputActivation::Identity, r.random()).unwrap();
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let got = net.forward(&x).unwrap();
            let want =
                reference_forward(net.layer_sizes(), net.params(), net.output_activation(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = DenseNet::new(&[3, 2], OutputActivation::Identity, 0).unwrap();
        match net.forward(&[1.0, 2.0]) {
            Err(Error::InputShape {
                expected: 3,
                got: 2,
            }) => {}
            other => panic!("expected InputShape error, got {other:?}"),
        }
    }

    #[test]
    fn forward_is_pure() {
        let net = DenseNet::new(&[4, 8, 2], OutputActivation::Sigmoid, 11).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loss_at_optimum_gives_zero_grad() {
        let net = DenseNet::new(&[2, 3, 2], OutputActivation::Identity, 5).unwrap();
        let x = [0.5, -0.5];
        let target = net.forward(&x).unwrap();
        let (loss, grad) = net.loss_grad(&x, &target, LossSpec::SquaredError).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weighted_grad_scales_exactly() {
        let net = DenseNet::new(&[3, 4, 1], OutputActivation::Identity, 9).unwrap();
        let x = [0.2, 0.8, -0.3];
        let t = [0.7];
        let (_, g1) = net.loss_grad(&x, &t, LossSpec::SquaredError).unwrap();
        let (_, g3) = net
            .weighted_loss_grad(&x, &t, LossSpec::SquaredError, 3.0)
            .unwrap();
        for (a, b) in g1.as_slice().iter().zip(g3.as_slice()) {
            assert_eq!(3.0 * a, *b);
        }
    }

    fn finite_diff_grad(net: &DenseNet, x: &[f64], t: &[f64], spec: LossSpec) -> Vec<f64> {
        let h = 1e-5;
        let mut fd = Vec::with_capacity(net.param_count());
        for i in 0..net.param_count() {
            let mut plus = net.params().to_vec();
            plus[i] += h;
            let mut minus = net.params().to_vec();
            minus[i] -= h;
            let lp = DenseNet::from_params(net.layer_sizes(), net.output_activation(), plus, 0)
                .unwrap()
                .loss(x, t, spec)
                .unwrap();
            let lm = DenseNet::from_params(net.layer_sizes(), net.output_activation(), minus, 0)
                .unwrap()
                .loss(x, t, spec)
                .unwrap();
            fd.push((lp - lm) / (2.0 * h));
        }
        fd
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            assert!(
                diff <= 1e-7 + 1e-4 * scale,
                "analytic {a} vs numeric {n} (diff {diff})"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(42);
        let shapes: [&[usize]; 4] = [&[2, 1], &[3, 8, 2], &[4, 16, 16, 3], &[5, 64, 1]];
        let mut checked = 0;
        while checked < 100 {
            for shape in shapes {
                let (act, spec) = if checked % 3 == 0 {
                    (OutputActivation::Sigmoid, LossSpec::BinaryCrossEntropy)
                } else if checked % 3 == 1 {
                    (OutputActivation::Identity, LossSpec::SquaredError)
                } else {
                    (OutputActivation::Identity, LossSpec::SquaredErrorCoord(0))
                };
                let net = DenseNet::new(shape, act, r.random()).unwrap();
                let x: Vec<f64> = (0..shape[0]).map(|_| r.random_range(-1.5..1.5)).collect();
                let t: Vec<f64> = (0..*shape.last().unwrap())
                    .map(|_| match spec {
                        LossSpec::BinaryCrossEntropy => r.random_range(0.0..1.0),
                        _ => r.random_range(-1.0..1.0),
                    })
                    .collect();
                let (_, grad) = net.loss_grad(&x, &t, spec).unwrap();
                let fd = finite_diff_grad(&net, &x, &t, spec);
                assert_grad_close(grad.as_slice(), &fd);
                checked += 1;
            }
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let net =
            DenseNet::from_params(&[1, 1], OutputActivation::Identity, vec![1.0, 2.0], 0).unwrap();
        let g = GradVector::from_vec(vec![0.5, -1.0]);
        let stepped = net.sgd_step(&g, 0.1).unwrap();
        assert_eq!(stepped.params(), &[0.95, 2.1]);
    }

    #[test]
    fn sgd_step_zero_gradient_or_lr_is_identity() {
        let net = DenseNet::new(&[2, 3, 1], OutputActivation::Identity, 3).unwrap();
        let zero = GradVector::zeros(net.param_count());
        assert_eq!(net.sgd_step(&zero, 0.5).unwrap().params(), net.params());
        let g = GradVector::from_vec((0..net.param_count()).map(|i| i as f64).collect());
        assert_eq!(net.sgd_step(&g, 0.0).unwrap().params(), net.params());
    }

    #[test]
    fn sgd_step_negated_gradient_restores() {
        let mut r = rng(17);
        let net = DenseNet::new(&[3, 8, 2], OutputActivation::Identity, 23).unwrap();
        let g = GradVector::from_vec(
            (0..net.param_count())
                .map(|_| r.random_range(-1.0..1.0))
                .collect(),
        );
        let back = net
            .sgd_step(&g, 0.07)
            .unwrap()
            .sgd_step(&g.scaled(-1.0), 0.07)
            .unwrap();
        for (a, b) in net.params().iter().zip(back.params()) {
            assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn sgd_step_rejects_misaligned_gradient() {
        let net = DenseNet::new(&[2, 2], OutputActivation::Identity, 0).unwrap();
        let g = GradVector::zeros(3);
        assert!(matches!(
            net.sgd_step(&g, 0.1),
            Err(Error::GradShape { .. })
        ));
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_bit_exact() {
        let net = DenseNet::new(&[4, 12, 3], OutputActivation::Sigmoid, 99).unwrap();
        let rebuilt = DenseNet::from_params(
            net.layer_sizes(),
            net.output_activation(),
            net.params().to_vec(),
            net.init_seed(),
        )
        .unwrap();
        assert_eq!(net, rebuilt);
    }

    #[test]
    fn param_count_matches_formula() {
        let net = DenseNet::new(&[16, 32, 32, 3], OutputActivation::Identity, 0).unwrap();
        assert_eq!(net.param_count(), 16 * 32 + 32 + 32 * 32 + 32 + 32 * 3 + 3);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = std::env::temp_dir().join("caprater_nn_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.json");
        let net = DenseNet::new(&[6, 10, 2], OutputActivation::Identity, 1234).unwrap();
        net.save_checkpoint(&path).unwrap();
        let loaded = DenseNet::load_checkpoint(&path).unwrap();
        assert_eq!(net, loaded);
    }

    #[test]
    fn bce_requires_sigmoid_head() {
        let net = DenseNet::new(&[2, 1], OutputActivation::Identity, 0).unwrap();
        assert!(matches!(
            net.loss(&[0.1, 0.2], &[1.0], LossSpec::BinaryCrossEntropy),
            Err(Error::InvalidConfig(_))
        ));
    }
}
