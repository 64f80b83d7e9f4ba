//! Predictor architectures: linear models and one-hidden-layer MLPs over a
//! flat parameter vector.
//!
//! Parameter layout (row-major, biases after their layer's weights):
//! linear: `W[out][in], b[out]`; mlp: `W1[h][in], b1[h], W2[out][h], b2[out]`.
//! Initialization draws random values only for weight matrices, in layout
//! order, so RNG consumption is a function of the predictor spec alone.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation z.
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
        }
    }
}

/// Output head: a single real value or `k >= 2` class scores.
///
/// Serialized as the string `"scalar"` or the integer class count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    Scalar,
    Classes(usize),
}

impl Output {
    pub fn dim(self) -> usize {
        match self {
            Output::Scalar => 1,
            Output::Classes(k) => k,
        }
    }
}

impl Serialize for Output {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Output::Scalar => s.serialize_str("scalar"),
            Output::Classes(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Output {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) if s == "scalar" => Ok(Output::Scalar),
            Repr::Name(s) => Err(D::Error::custom(format!(
                "output must be \"scalar\" or a class count >= 2, got \"{s}\""
            ))),
            Repr::Count(k) if k >= 2 => Ok(Output::Classes(k as usize)),
            Repr::Count(k) => Err(D::Error::custom(format!(
                "class count must be >= 2, got {k}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    Linear {
        input_dim: usize,
        output: Output,
    },
    Mlp {
        input_dim: usize,
        hidden_units: usize,
        activation: Activation,
        output: Output,
    },
}

/// A prediction: raw value for scalar heads, softmax probabilities for
/// class heads.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Scalar(f64),
    Classes(Vec<f64>),
}

/// One layer's slice of the flat parameter vector plus its init scale.
pub(crate) struct Layer {
    pub weights: Range<usize>,
    pub biases: Range<usize>,
    pub limit: f64,
}

/// Forward pass intermediates kept for backpropagation.
pub(crate) struct ForwardTrace {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Raw head outputs: length 1 for scalar, k for class heads.
    pub out: Vec<f64>,
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl PredictorSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            PredictorSpec::Linear { input_dim, .. } => input_dim,
            PredictorSpec::Mlp { input_dim, .. } => input_dim,
        }
    }

    pub fn output(&self) -> Output {
        match *self {
            PredictorSpec::Linear { output, .. } => output,
            PredictorSpec::Mlp { output, .. } => output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 {
            return Err(Error::config("predictor.input_dim", "must be positive"));
        }
        if let PredictorSpec::Mlp { hidden_units, .. } = *self {
            if hidden_units == 0 {
                return Err(Error::config("predictor.hidden_units", "must be positive"));
            }
        }
        Ok(())
    }

    /// Total number of parameters, including biases.
    pub fn param_count(&self) -> usize {
        match *self {
            PredictorSpec::Linear { input_dim, output } => (input_dim + 1) * output.dim(),
            PredictorSpec::Mlp {
                input_dim,
                hidden_units,
                output,
                ..
            } => hidden_units * (input_dim + 1) + output.dim() * (hidden_units + 1),
        }
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        match *self {
            PredictorSpec::Linear { input_dim, output } => {
                let o = output.dim();
                vec![Layer {
                    weights: 0..o * input_dim,
                    biases: o * input_dim..o * input_dim + o,
                    limit: glorot_limit(input_dim, o),
                }]
            }
            PredictorSpec::Mlp {
                input_dim,
                hidden_units,
                output,
                ..
            } => {
                let h = hidden_units;
                let o = output.dim();
                let w1 = h * input_dim;
                let l2_start = w1 + h;
                vec![
                    Layer {
                        weights: 0..w1,
                        biases: w1..w1 + h,
                        limit: glorot_limit(input_dim, h),
                    },
                    Layer {
                        weights: l2_start..l2_start + o * h,
                        biases: l2_start + o * h..l2_start + o * h + o,
                        limit: glorot_limit(h, o),
                    },
                ]
            }
        }
    }

    fn check_dims(&self, f: &ModelParams, x: &[f64]) -> Result<()> {
        if f.dim() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: f.dim(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, f: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
        self.check_dims(f, x)?;
        let w = f.weights();
        match *self {
            PredictorSpec::Linear { input_dim, output } => {
                let o = output.dim();
                let bias_off = o * input_dim;
                let mut out = Vec::with_capacity(o);
                for c in 0..o {
                    let row = &w[c * input_dim..(c + 1) * input_dim];
                    let mut z = w[bias_off + c];
                    for (wj, xj) in row.iter().zip(x) {
                        z += wj * xj;
                    }
                    out.push(z);
                }
                Ok(ForwardTrace {
                    hidden_pre: Vec::new(),
                    hidden: Vec::new(),
                    out,
                })
            }
            PredictorSpec::Mlp {
                input_dim,
                hidden_units,
                activation,
                output,
            } => {
                let h = hidden_units;
                let o = output.dim();
                let b1_off = h * input_dim;
                let w2_off = b1_off + h;
                let b2_off = w2_off + o * h;
                let mut hidden_pre = Vec::with_capacity(h);
                let mut hidden = Vec::with_capacity(h);
                for u in 0..h {
                    let row = &w[u * input_dim..(u + 1) * input_dim];
                    let mut z = w[b1_off + u];
                    for (wj, xj) in row.iter().zip(x) {
                        z += wj * xj;
                    }
                    hidden_pre.push(z);
                    hidden.push(activation.apply(z));
                }
                let mut out = Vec::with_capacity(o);
                for c in 0..o {
                    let row = &w[w2_off + c * h..w2_off + (c + 1) * h];
                    let mut z = w[b2_off + c];
                    for (wu, au) in row.iter().zip(&hidden) {
                        z += wu * au;
                    }
                    out.push(z);
                }
                Ok(ForwardTrace {
                    hidden_pre,
                    hidden,
                    out,
                })
            }
        }
    }

    /// Accumulates the gradient of `sum_c d_out[c] * out[c]` with respect to
    /// the parameters into `grad`.
    pub(crate) fn backward_into(
        &self,
        f: &ModelParams,
        x: &[f64],
        trace: &ForwardTrace,
        d_out: &[f64],
        grad: &mut [f64],
    ) {
        let w = f.weights();
        match *self {
            PredictorSpec::Linear { input_dim, output } => {
                let o = output.dim();
                let bias_off = o * input_dim;
                for c in 0..o {
                    let g = d_out[c];
                    let row = &mut grad[c * input_dim..(c + 1) * input_dim];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += g * xj;
                    }
                    grad[bias_off + c] += g;
                }
            }
            PredictorSpec::Mlp {
                input_dim,
                hidden_units,
                activation,
                output,
            } => {
                let h = hidden_units;
                let o = output.dim();
                let b1_off = h * input_dim;
                let w2_off = b1_off + h;
                let b2_off = w2_off + o * h;
                let mut d_hidden = vec![0.0; h];
                for c in 0..o {
                    let g = d_out[c];
                    let w2_row = &w[w2_off + c * h..w2_off + (c + 1) * h];
                    let g2_row = &mut grad[w2_off + c * h..w2_off + (c + 1) * h];
                    for u in 0..h {
                        g2_row[u] += g * trace.hidden[u];
                        d_hidden[u] += g * w2_row[u];
                    }
                    grad[b2_off + c] += g;
                }
                for u in 0..h {
                    let dz = d_hidden[u] * activation.derivative(trace.hidden_pre[u]);
                    let g1_row = &mut grad[u * input_dim..(u + 1) * input_dim];
                    for (gj, xj) in g1_row.iter_mut().zip(x) {
                        *gj += dz * xj;
                    }
                    grad[b1_off + u] += dz;
                }
            }
        }
    }

    pub fn predict(&self, f: &ModelParams, x: &[f64]) -> Result<Prediction> {
        let trace = self.forward(f, x)?;
        Ok(match self.output() {
            Output::Scalar => Prediction::Scalar(trace.out[0]),
            Output::Classes(_) => Prediction::Classes(softmax(&trace.out)),
        })
    }

    /// Shared base initialization: weights uniform in the per-layer
    /// fan-scaled range, biases zero.
    pub fn glorot_init<R: Rng>(&self, rng: &mut R) -> ModelParams {
        let mut w = vec![0.0; self.param_count()];
        for layer in self.layers() {
            for i in layer.weights {
                w[i] = rng.random_range(-layer.limit..layer.limit);
            }
        }
        ModelParams::new(w).expect("bounded init is finite")
    }

    /// Base initialization plus per-parameter uniform noise of relative
    /// scale `epsilon` (relative to each layer's init limit). `epsilon = 0`
    /// returns the base unchanged without consuming randomness.
    pub fn heterogeneous_init<R: Rng>(
        &self,
        base: &ModelParams,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<ModelParams> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::config(
                "learner.epsilon_init",
                format!("must be a nonnegative finite number, got {epsilon}"),
            ));
        }
        if base.dim() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: base.dim(),
            });
        }
        if epsilon == 0.0 {
            return Ok(base.clone());
        }
        let mut w = base.weights().to_vec();
        for layer in self.layers() {
            let scale = epsilon * layer.limit;
            for i in layer.weights.chain(layer.biases) {
                w[i] += rng.random_range(-scale..scale);
            }
        }
        ModelParams::new(w)
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_linear(d: usize) -> PredictorSpec {
        PredictorSpec::Linear {
            input_dim: d,
            output: Output::Scalar,
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(scalar_linear(3).param_count(), 4);
        let multi = PredictorSpec::Linear {
            input_dim: 5,
            output: Output::Classes(3),
        };
        assert_eq!(multi.param_count(), 18);
        let mlp = PredictorSpec::Mlp {
            input_dim: 4,
            hidden_units: 16,
            activation: Activation::Tanh,
            output: Output::Scalar,
        };
        // 16*4 + 16 + 16 + 1
        assert_eq!(mlp.param_count(), 97);
        let mlp_k = PredictorSpec::Mlp {
            input_dim: 4,
            hidden_units: 8,
            activation: Activation::Relu,
            output: Output::Classes(3),
        };
        // 8*4 + 8 + 3*8 + 3
        assert_eq!(mlp_k.param_count(), 67);
    }

    #[test]
    fn linear_predictions() {
        let spec = scalar_linear(2);
        let zero = ModelParams::zeros(3);
        assert_eq!(
            spec.predict(&zero, &[5.0, -3.0]).unwrap(),
            Prediction::Scalar(0.0)
        );
        // w = (1, 2), bias = 0, x = (3, 4) -> 11
        let f = ModelParams::new(vec![1.0, 2.0, 0.0]).unwrap();
        assert_eq!(
            spec.predict(&f, &[3.0, 4.0]).unwrap(),
            Prediction::Scalar(11.0)
        );
        // bias contributes
        let f = ModelParams::new(vec![1.0, 2.0, 0.5]).unwrap();
        assert_eq!(
            spec.predict(&f, &[3.0, 4.0]).unwrap(),
            Prediction::Scalar(11.5)
        );
    }

    #[test]
    fn mlp_with_zero_head_is_constant() {
        let spec = PredictorSpec::Mlp {
            input_dim: 3,
            hidden_units: 4,
            activation: Activation::Tanh,
            output: Output::Scalar,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut f = spec.glorot_init(&mut rng);
        let layers = spec.layers();
        let head = &layers[1];
        for i in head.weights.clone() {
            f.weights_mut()[i] = 0.0;
        }
        for i in head.biases.clone() {
            f.weights_mut()[i] = 2.5;
        }
        for x in [[0.0, 0.0, 0.0], [1.0, -1.0, 0.5], [9.0, 9.0, 9.0]] {
            assert_eq!(spec.predict(&f, &x).unwrap(), Prediction::Scalar(2.5));
        }
    }

    #[test]
    fn class_head_returns_probabilities() {
        let spec = PredictorSpec::Linear {
            input_dim: 1,
            output: Output::Classes(3),
        };
        let f = ModelParams::new(vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let Prediction::Classes(p) = spec.predict(&f, &[1.0]).unwrap() else {
            panic!("expected class probabilities");
        };
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn dimension_mismatches_error() {
        let spec = scalar_linear(2);
        let f = ModelParams::zeros(3);
        assert!(spec.predict(&f, &[1.0]).is_err());
        assert!(spec.predict(&ModelParams::zeros(2), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn glorot_init_bounds_and_zero_biases() {
        let spec = PredictorSpec::Mlp {
            input_dim: 10,
            hidden_units: 16,
            activation: Activation::Relu,
            output: Output::Classes(4),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = spec.glorot_init(&mut rng);
        for layer in spec.layers() {
            for i in layer.weights.clone() {
                assert!(f.weights()[i].abs() <= layer.limit);
            }
            for i in layer.biases.clone() {
                assert_eq!(f.weights()[i], 0.0);
            }
        }
        // same seed, same init
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(f, spec.glorot_init(&mut rng2));
    }

    #[test]
    fn heterogeneous_init_scales_with_epsilon() {
        let spec = scalar_linear(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = spec.glorot_init(&mut rng);
        let same = spec
            .heterogeneous_init(&base, 0.0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(base, same);
        let eps = 0.25;
        let noisy = spec
            .heterogeneous_init(&base, eps, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let layer = &spec.layers()[0];
        for i in 0..base.dim() {
            let delta = (noisy.weights()[i] - base.weights()[i]).abs();
            assert!(delta <= eps * layer.limit);
        }
        assert_ne!(base, noisy);
        assert!(spec
            .heterogeneous_init(&base, -0.1, &mut ChaCha8Rng::seed_from_u64(1))
            .is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = PredictorSpec::Mlp {
            input_dim: 20,
            hidden_units: 16,
            activation: Activation::Tanh,
            output: Output::Classes(10),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(spec, serde_json::from_str(&json).unwrap());
        let scalar: PredictorSpec =
            serde_json::from_str(r#"{"kind":"linear","input_dim":5,"output":"scalar"}"#).unwrap();
        assert_eq!(scalar, scalar_linear(5));
        assert!(serde_json::from_str::<PredictorSpec>(
            r#"{"kind":"linear","input_dim":5,"output":1}"#
        )
        .is_err());
    }
}
