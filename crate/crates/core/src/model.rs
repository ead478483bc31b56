//! A small fully connected classifier with exact reverse-mode Jacobians.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! (`out × in`, row-major) followed by its bias.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg;
use crate::prob::{softmax, Logits, Pmf, RngSeed};

/// Largest parameter count handled with dense Jacobians.
pub const MAX_PARAMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative; relu uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return invalid("layer widths must be positive");
        }
        let m = self.num_params();
        if m > MAX_PARAMS {
            return invalid(format!(
                "{m} parameters exceeds the dense cap of {MAX_PARAMS}"
            ));
        }
        Ok(())
    }

    /// Linear model `f = Wx + b`.
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
            activation: Activation::Identity,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    fn layers(&self) -> Vec<Layer> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    /// Parameter count `m`.
    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Range of flat indices holding the final layer's bias.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let last = *self.layers().last().unwrap();
        last.bias_offset()..last.bias_offset() + last.fan_out
    }
}

/// Flat model parameters `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(spec: &ModelSpec, theta: Vec<f64>) -> Result<Self> {
        check_len(spec.num_params(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(Self(theta))
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self(vec![0.0; spec.num_params()])
    }

    /// I.i.d. uniform on `[−1/√fan_in, 1/√fan_in]` per layer.
    pub fn init(spec: &ModelSpec, seed: RngSeed) -> Self {
        let mut rng = seed.rng();
        let mut theta = vec![0.0; spec.num_params()];
        for layer in spec.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.bias_offset() + layer.fan_out;
            for v in &mut theta[layer.offset..end] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Self(theta)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `∂[f_θ(x)]_i / ∂θ_j`, shape `|𝒴| × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix(DMatrix<f64>);

impl JacobianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.0.ncols()
    }

    /// `‖J‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    /// `Jᵀ v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        (self.0.tr_mul(&v)).iter().copied().collect()
    }
}

impl From<DMatrix<f64>> for JacobianMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

/// Equal-input NTK stored as the `|𝒴| × |𝒴|` Gram `J Jᵀ`.
///
/// Shares its nonzero spectrum and trace with the `m × m` matrix `Jᵀ J`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntkMatrix(DMatrix<f64>);

impl EntkMatrix {
    pub fn from_jacobian(j: &JacobianMatrix) -> Self {
        let g = &j.0 * j.0.transpose();
        // exact symmetry
        let g = (&g + g.transpose()) * 0.5;
        Self(g)
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(linalg::lambda_max(&self.0)?.max(0.0))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.0)
    }
}

struct Trace {
    /// Layer inputs `h_0 = x, h_1, …, h_{L-1}`.
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations `z_1, …, z_{L-1}`.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn check_input(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<()> {
    check_len(spec.input_dim, x.len())?;
    check_len(spec.num_params(), theta.len())?;
    Ok(())
}

fn run_forward(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<Trace> {
    check_input(spec, theta, x)?;
    let layers = spec.layers();
    let th = theta.as_slice();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len().saturating_sub(1));
    let mut h = x.to_vec();
    for (idx, layer) in layers.iter().enumerate() {
        let w = &th[layer.offset..layer.bias_offset()];
        let b = &th[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
        let z: Vec<f64> = (0..layer.fan_out)
            .map(|a| {
                let row = &w[a * layer.fan_in..(a + 1) * layer.fan_in];
                b[a] + row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation in layer {idx}"
            )));
        }
        inputs.push(std::mem::take(&mut h));
        if idx + 1 == layers.len() {
            return Ok(Trace {
                inputs,
                pre,
                logits: z,
            });
        }
        h = z.iter().map(|&v| spec.activation.apply(v)).collect();
        pre.push(z);
    }
    unreachable!("a model always has an output layer")
}

/// Backpropagates the rows of `seed_rows` (`r × |𝒴|`) into an `r × m` matrix
/// of parameter gradients.
fn backprop(
    spec: &ModelSpec,
    theta: &ParamVector,
    trace: &Trace,
    seed_rows: DMatrix<f64>,
) -> DMatrix<f64> {
    let layers = spec.layers();
    let th = theta.as_slice();
    let rows = seed_rows.nrows();
    let mut out = DMatrix::zeros(rows, spec.num_params());
    let mut delta = seed_rows;
    for (idx, layer) in layers.iter().enumerate().rev() {
        let h = &trace.inputs[idx];
        for r in 0..rows {
            for a in 0..layer.fan_out {
                let d = delta[(r, a)];
                out[(r, layer.bias_offset() + a)] = d;
                if d == 0.0 {
                    continue;
                }
                let base = layer.offset + a * layer.fan_in;
                for (b, hb) in h.iter().enumerate() {
                    out[(r, base + b)] = d * hb;
                }
            }
        }
        if idx == 0 {
            break;
        }
        let w = &th[layer.offset..layer.bias_offset()];
        let z_prev = &trace.pre[idx - 1];
        let mut next = DMatrix::zeros(rows, layer.fan_in);
        for r in 0..rows {
            for a in 0..layer.fan_out {
                let d = delta[(r, a)];
                if d == 0.0 {
                    continue;
                }
                let row = &w[a * layer.fan_in..(a + 1) * layer.fan_in];
                for (b, wb) in row.iter().enumerate() {
                    next[(r, b)] += d * wb;
                }
            }
            for (b, z) in z_prev.iter().enumerate() {
                next[(r, b)] *= spec.activation.derivative(*z);
            }
        }
        delta = next;
    }
    out
}

/// Logits `f_θ(x)`.
pub fn forward(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<Logits> {
    Logits::new(run_forward(spec, theta, x)?.logits)
}

/// Predictive distribution `p_{Y|x} = softmax(f_θ(x))`.
pub fn predictive(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<Pmf> {
    Ok(softmax(&forward(spec, theta, x)?).0)
}

/// Exact Jacobian of the logits with respect to all parameters.
pub fn jacobian(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<JacobianMatrix> {
    let trace = run_forward(spec, theta, x)?;
    let k = spec.num_classes;
    Ok(JacobianMatrix(backprop(
        spec,
        theta,
        &trace,
        DMatrix::identity(k, k),
    )))
}

/// Logits, predictive distribution and Jacobian from one forward pass.
pub fn forward_with_jacobian(
    spec: &ModelSpec,
    theta: &ParamVector,
    x: &[f64],
) -> Result<(Logits, Pmf, JacobianMatrix)> {
    let trace = run_forward(spec, theta, x)?;
    let k = spec.num_classes;
    let j = JacobianMatrix(backprop(spec, theta, &trace, DMatrix::identity(k, k)));
    let logits = Logits::new(trace.logits)?;
    let p = softmax(&logits).0;
    Ok((logits, p, j))
}

/// All hidden-layer pre-activations at `x`, flattened in layer order.
pub fn hidden_preactivations(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(run_forward(spec, theta, x)?.pre.concat())
}

/// Vector-Jacobian product `Jᵀ v` with a single backward pass.
pub fn vjp(spec: &ModelSpec, theta: &ParamVector, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(spec.num_classes, v.len())?;
    let trace = run_forward(spec, theta, x)?;
    let row = DMatrix::from_row_slice(1, v.len(), v);
    Ok(backprop(spec, theta, &trace, row)
        .row(0)
        .iter()
        .copied()
        .collect())
}

/// `∇_θ D_KL(q_{Y|x} ‖ p_{Y|x}) = Jᵀ (p − q)`.
pub fn kl_grad(spec: &ModelSpec, theta: &ParamVector, x: &[f64], q_yx: &Pmf) -> Result<Vec<f64>> {
    check_len(spec.num_classes, q_yx.alphabet_size())?;
    let (_, p, j) = forward_with_jacobian(spec, theta, x)?;
    let diff: Vec<f64> = p
        .probs()
        .iter()
        .zip(q_yx.probs())
        .map(|(p, q)| p - q)
        .collect();
    Ok(j.transpose_mul(&diff))
}

pub fn entk(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<EntkMatrix> {
    Ok(EntkMatrix::from_jacobian(&jacobian(spec, theta, x)?))
}

/// Largest eigenvalue of the eNTK at `x`.
pub fn entk_lambda_max(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<f64> {
    entk(spec, theta, x)?.lambda_max()
}

pub const CHECKPOINT_FORMAT: &str = "infobound-checkpoint/1";

/// Serialized model: spec, flat parameters and the seed that produced them.
///
/// Floats are written in shortest round-trip form, so reading a checkpoint
/// back reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: String,
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub seed: Option<u64>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, theta: &ParamVector, seed: Option<RngSeed>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT.to_string(),
            spec,
            theta: theta.as_slice().to_vec(),
            seed: seed.map(|s| s.0),
        }
    }

    /// Validates the version tag and that `theta` matches the model shape.
    pub fn into_parts(self) -> Result<(ModelSpec, ParamVector)> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?}",
                self.format_version
            )));
        }
        self.spec.validate()?;
        let theta = ParamVector::new(&self.spec, self.theta)?;
        Ok((self.spec, theta))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_net() -> ModelSpec {
        ModelSpec::new(2, vec![16], 3, Activation::Tanh).unwrap()
    }

    #[test]
    fn param_count() {
        assert_eq!(tanh_net().num_params(), 2 * 16 + 16 + 16 * 3 + 3);
        assert_eq!(ModelSpec::linear(4, 3).num_params(), 15);
        assert!(ModelSpec::new(0, vec![], 3, Activation::Tanh).is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = tanh_net();
        let f = forward(&spec, &ParamVector::zeros(&spec), &[0.3, -2.0]).unwrap();
        assert!(f.values().iter().all(|v| *v == 0.0));
        let p = predictive(&spec, &ParamVector::zeros(&spec), &[0.3, -2.0]).unwrap();
        assert!(p.probs().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn linear_model_matches_wx_plus_b() {
        let spec = ModelSpec::linear(2, 2);
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        let theta = ParamVector::new(&spec, vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let f = forward(&spec, &theta, &[1.0, -1.0]).unwrap();
        assert_eq!(f.values(), &[-0.5, -2.0]);
    }

    #[test]
    fn identity_hidden_layer_hand_case() {
        let spec = ModelSpec::new(2, vec![2], 2, Activation::Identity).unwrap();
        // W1 = [[1, 0], [2, 1]], b1 = [1, 0]; W2 = [[1, -1], [0, 2]], b2 = [0, 1]
        let theta = ParamVector::new(
            &spec,
            vec![1.0, 0.0, 2.0, 1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 2.0, 0.0, 1.0],
        )
        .unwrap();
        // x = (1, 2): h = (2, 4); f = (2 - 4, 8 + 1)
        let f = forward(&spec, &theta, &[1.0, 2.0]).unwrap();
        assert_eq!(f.values(), &[-2.0, 9.0]);
    }

    #[test]
    fn output_bias_shift_leaves_prediction_unchanged() {
        let spec = tanh_net();
        let theta = ParamVector::init(&spec, RngSeed(3));
        let mut shifted = theta.clone();
        for i in spec.output_bias_range() {
            shifted.as_mut_slice()[i] += 4.2;
        }
        let a = predictive(&spec, &theta, &[0.1, 0.7]).unwrap();
        let b = predictive(&spec, &shifted, &[0.1, 0.7]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-14);
        }
        let (p, _) = softmax(&Logits::new(vec![2f64.ln(), 0.0]).unwrap());
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn linear_jacobian_is_analytic() {
        let spec = ModelSpec::linear(3, 2);
        let theta = ParamVector::init(&spec, RngSeed(1));
        let x = [0.5, -1.5, 2.0];
        let j = jacobian(&spec, &theta, &x).unwrap();
        let m = j.matrix();
        for i in 0..2 {
            for r in 0..2 {
                for c in 0..3 {
                    let expected = if i == r { x[c] } else { 0.0 };
                    assert_eq!(m[(i, r * 3 + c)], expected);
                }
                assert_eq!(m[(i, 6 + r)], if i == r { 1.0 } else { 0.0 });
            }
        }
        let j0 = jacobian(&spec, &theta, &[0.0; 3]).unwrap();
        assert!(j0.matrix().columns(0, 6).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kl_grad_vanishes_at_the_model_prediction() {
        let spec = tanh_net();
        let theta = ParamVector::init(&spec, RngSeed(7));
        let x = [0.3, 0.4];
        let p = predictive(&spec, &theta, &x).unwrap();
        let g = kl_grad(&spec, &theta, &x, &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn linear_kl_grad_one_hot() {
        let spec = ModelSpec::linear(2, 3);
        let theta = ParamVector::init(&spec, RngSeed(2));
        let x = [1.5, -0.5];
        let q = Pmf::one_hot(3, 1);
        let p = predictive(&spec, &theta, &x).unwrap();
        let g = kl_grad(&spec, &theta, &x, &q).unwrap();
        for i in 0..3 {
            let r = p.probs()[i] - q.probs()[i];
            for c in 0..2 {
                assert!((g[i * 2 + c] - r * x[c]).abs() < 1e-15);
            }
            assert!((g[6 + i] - r).abs() < 1e-15);
        }
    }

    #[test]
    fn vjp_matches_jacobian_transpose() {
        let spec = ModelSpec::new(3, vec![5, 4], 3, Activation::Relu).unwrap();
        let theta = ParamVector::init(&spec, RngSeed(9));
        let x = [0.2, -0.9, 1.1];
        let v = [0.3, -1.0, 0.25];
        let a = vjp(&spec, &theta, &x, &v).unwrap();
        let b = jacobian(&spec, &theta, &x).unwrap().transpose_mul(&v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn entk_examples() {
        // linear model at x = 0: only the bias block is nonzero
        let spec = ModelSpec::linear(2, 3);
        let g = entk(&spec, &ParamVector::zeros(&spec), &[0.0, 0.0]).unwrap();
        assert_eq!(g.gram(), &DMatrix::identity(3, 3));
        assert!((g.lambda_max().unwrap() - 1.0).abs() < 1e-12);

        let j = JacobianMatrix::from(DMatrix::from_row_slice(
            2,
            3,
            &[0.6, 0.8, 0.0, 0.0, 0.0, 1.0],
        ));
        let g = EntkMatrix::from_jacobian(&j);
        assert!((g.lambda_max().unwrap() - 1.0).abs() < 1e-12);

        let z = EntkMatrix::from_jacobian(&JacobianMatrix::from(DMatrix::zeros(3, 4)));
        assert_eq!(z.lambda_max().unwrap(), 0.0);
    }

    #[test]
    fn dimension_errors() {
        let spec = tanh_net();
        let theta = ParamVector::zeros(&spec);
        assert!(matches!(
            forward(&spec, &theta, &[1.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(ParamVector::new(&spec, vec![0.0; 3]).is_err());
        assert!(kl_grad(&spec, &theta, &[0.0, 0.0], &Pmf::uniform(2)).is_err());
    }

    #[test]
    fn overflow_is_a_numeric_error() {
        let spec = ModelSpec::linear(1, 2);
        let theta = ParamVector::new(&spec, vec![1e308, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            forward(&spec, &theta, &[10.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = tanh_net();
        let theta = ParamVector::init(&spec, RngSeed(42));
        let ck = Checkpoint::new(spec.clone(), &theta, Some(RngSeed(42)));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let (spec2, theta2) = back.into_parts().unwrap();
        assert_eq!(spec, spec2);
        for (a, b) in theta.as_slice().iter().zip(theta2.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_mismatch() {
        let spec = tanh_net();
        let mut ck = Checkpoint::new(spec, &ParamVector::zeros(&tanh_net()), None);
        ck.theta.pop();
        assert!(ck.clone().into_parts().is_err());
        ck.format_version = "other".into();
        assert!(matches!(ck.into_parts(), Err(Error::Config(_))));
    }
}
