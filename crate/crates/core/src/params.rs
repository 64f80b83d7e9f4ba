//! Flat parameter vectors and the averaging primitives everything else is
//! built on.
//!
//! Bit-level note: `average` and `weighted_average` accumulate in ascending
//! index order with one running sum per coordinate. With counts that are all
//! `1.0` the weighted path performs exactly the same float operations as the
//! unweighted one (`1.0 * x` is `x`), which the synchronization layer relies
//! on to make uniform-count weighted runs reproduce unweighted runs bitwise.

use crate::error::{Error, Result};

/// A model as a flat vector of finite `f64` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<f64>,
}

impl ModelParams {
    /// Wraps a weight vector. Every entry must be finite.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(j) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite weight {} at index {j}",
                weights[j]
            )));
        }
        Ok(ModelParams { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        ModelParams {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable access for optimizer updates. Callers keep the finite
    /// invariant by validating their own inputs.
    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn sq_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// The models of all learners at one point in time. Non-empty, equal dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfiguration {
    models: Vec<ModelParams>,
}

impl ModelConfiguration {
    pub fn new(models: Vec<ModelParams>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::Data("empty model configuration".into()));
        };
        let dim = first.dim();
        for (i, f) in models.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::Data(format!(
                    "model {i} has dimension {}, expected {dim}",
                    f.dim()
                )));
            }
        }
        Ok(ModelConfiguration { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn get(&self, i: usize) -> &ModelParams {
        &self.models[i]
    }

    pub fn set(&mut self, i: usize, f: ModelParams) -> Result<()> {
        if f.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.dim(),
            });
        }
        self.models[i] = f;
        Ok(())
    }

    pub fn models(&self) -> &[ModelParams] {
        &self.models
    }
}

/// Arithmetic mean over all models, accumulated in index order.
pub fn average(cfg: &ModelConfiguration) -> ModelParams {
    let dim = cfg.dim();
    let mut acc = vec![0.0; dim];
    for f in cfg.models() {
        for (a, w) in acc.iter_mut().zip(f.weights()) {
            *a += w;
        }
    }
    let m = cfg.len() as f64;
    for a in &mut acc {
        *a /= m;
    }
    ModelParams { weights: acc }
}

/// Count-weighted mean `(1/N) * sum_i counts[i] * f_i` with `N = sum_i counts[i]`.
///
/// Counts must be positive and finite; one count per model.
pub fn weighted_average(cfg: &ModelConfiguration, counts: &[f64]) -> Result<ModelParams> {
    if counts.len() != cfg.len() {
        return Err(Error::Data(format!(
            "{} counts for {} models",
            counts.len(),
            cfg.len()
        )));
    }
    if let Some(j) = counts.iter().position(|c| !c.is_finite() || *c <= 0.0) {
        return Err(Error::Data(format!(
            "count {} at index {j} is not a positive finite number",
            counts[j]
        )));
    }
    let dim = cfg.dim();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (f, &c) in cfg.models().iter().zip(counts) {
        total += c;
        for (a, w) in acc.iter_mut().zip(f.weights()) {
            *a += c * w;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    ModelParams::new(acc)
}

/// Squared Euclidean distance between two models of equal dimension.
pub fn sq_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut sum = 0.0;
    for (x, y) in a.weights().iter().zip(b.weights()) {
        let d = x - y;
        sum += d * d;
    }
    Ok(sum)
}

/// Mean squared distance of the models from their own mean:
/// `(1/m) * sum_i ||f_i - avg||^2`. Zero iff all models coincide.
pub fn divergence(cfg: &ModelConfiguration) -> f64 {
    let mean = average(cfg);
    let m = cfg.len() as f64;
    let mut sum = 0.0;
    for f in cfg.models() {
        // same dims by construction
        sum += sq_distance(f, &mean).expect("configuration dims are uniform");
    }
    sum / m
}

/// Returns `y + scale * x`. `scale` must be finite.
pub fn axpy(y: &ModelParams, scale: f64, x: &ModelParams) -> Result<ModelParams> {
    if !scale.is_finite() {
        return Err(Error::Numeric(format!("non-finite scale {scale}")));
    }
    if y.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: y.dim(),
            got: x.dim(),
        });
    }
    let weights = y
        .weights()
        .iter()
        .zip(x.weights())
        .map(|(a, b)| a + scale * b)
        .collect();
    ModelParams::new(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: &[f64]) -> ModelParams {
        ModelParams::new(w.to_vec()).unwrap()
    }

    fn cfg(rows: &[&[f64]]) -> ModelConfiguration {
        ModelConfiguration::new(rows.iter().map(|r| params(r)).collect()).unwrap()
    }

    /// Compensated summation, used only as an independent oracle here.
    fn kahan_mean(values: &[f64]) -> f64 {
        let mut sum = 0.0;
        let mut c = 0.0;
        for &v in values {
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum / values.len() as f64
    }

    #[test]
    fn rejects_non_finite_weights() {
        assert!(ModelParams::new(vec![0.0, f64::NAN]).is_err());
        assert!(ModelParams::new(vec![f64::INFINITY]).is_err());
        assert!(ModelParams::new(vec![1.0, -2.5]).is_ok());
    }

    #[test]
    fn configuration_rejects_empty_and_ragged() {
        assert!(ModelConfiguration::new(vec![]).is_err());
        let ragged = ModelConfiguration::new(vec![params(&[1.0]), params(&[1.0, 2.0])]);
        assert!(ragged.is_err());
    }

    #[test]
    fn average_of_identical_models_is_that_model() {
        let c = cfg(&[&[0.25, -3.5, 7.0], &[0.25, -3.5, 7.0], &[0.25, -3.5, 7.0]]);
        assert_eq!(average(&c).weights(), &[0.25, -3.5, 7.0]);
    }

    #[test]
    fn average_matches_kahan_oracle() {
        // deliberately ill-scaled entries to make naive summation visible
        let c = cfg(&[&[1e12, 1.0], &[-1e12, 2.0], &[3.0, 3.0], &[4.0, -6.0]]);
        let got = average(&c);
        for j in 0..2 {
            let col: Vec<f64> = c.models().iter().map(|f| f.weights()[j]).collect();
            let want = kahan_mean(&col);
            assert!(
                (got.weights()[j] - want).abs() <= 1e-9 * want.abs().max(1.0),
                "column {j}: {} vs {}",
                got.weights()[j],
                want
            );
        }
    }

    #[test]
    fn weighted_average_with_unit_counts_is_bitwise_average() {
        let c = cfg(&[
            &[0.1, -0.2, 0.3333333333333333],
            &[10.5, 2.25, -7.125],
            &[1e-8, 1e8, 0.7],
        ]);
        let plain = average(&c);
        let ones = weighted_average(&c, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            plain.weights(),
            ones.weights(),
            "unit-count weighted mean must be bit-identical to the plain mean"
        );
    }

    #[test]
    fn weighted_average_hand_traced() {
        // counts (1, 3): (1*2 + 3*6) / 4 = 5; (1*0 + 3*(-4)) / 4 = -3
        let c = cfg(&[&[2.0, 0.0], &[6.0, -4.0]]);
        let w = weighted_average(&c, &[1.0, 3.0]).unwrap();
        assert_eq!(w.weights(), &[5.0, -3.0]);
    }

    #[test]
    fn weighted_average_rejects_bad_counts() {
        let c = cfg(&[&[1.0], &[2.0]]);
        assert!(weighted_average(&c, &[1.0]).is_err());
        assert!(weighted_average(&c, &[1.0, 0.0]).is_err());
        assert!(weighted_average(&c, &[1.0, -2.0]).is_err());
        assert!(weighted_average(&c, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn sq_distance_hand_traced() {
        let a = params(&[1.0, 2.0, -1.0]);
        let b = params(&[0.0, 4.0, 1.0]);
        // 1 + 4 + 4
        assert_eq!(sq_distance(&a, &b).unwrap(), 9.0);
        assert_eq!(sq_distance(&a, &a).unwrap(), 0.0);
        assert!(sq_distance(&a, &params(&[1.0])).is_err());
    }

    #[test]
    fn divergence_hand_traced() {
        // mean = (2, 2); distances: (1-2)^2+(3-2)^2 = 2 and symmetric = 2; mean 2
        let c = cfg(&[&[1.0, 3.0], &[3.0, 1.0]]);
        assert_eq!(divergence(&c), 2.0);
        let same = cfg(&[&[5.0, -1.0], &[5.0, -1.0]]);
        assert_eq!(divergence(&same), 0.0);
    }

    #[test]
    fn axpy_hand_traced() {
        let y = params(&[1.0, 2.0]);
        let x = params(&[10.0, -4.0]);
        let out = axpy(&y, 0.5, &x).unwrap();
        assert_eq!(out.weights(), &[6.0, 0.0]);
        assert!(axpy(&y, f64::NAN, &x).is_err());
        assert!(axpy(&y, 1.0, &params(&[1.0])).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn weight() -> impl Strategy<Value = f64> {
            -100.0..100.0f64
        }

        fn config_strategy(max_m: usize, max_d: usize) -> impl Strategy<Value = ModelConfiguration> {
            (1..=max_m, 1..=max_d).prop_flat_map(|(m, d)| {
                proptest::collection::vec(proptest::collection::vec(weight(), d), m).prop_map(
                    |rows| {
                        ModelConfiguration::new(
                            rows.into_iter()
                                .map(|r| ModelParams::new(r).unwrap())
                                .collect(),
                        )
                        .unwrap()
                    },
                )
            })
        }

        proptest! {
            // The mean minimizes mean squared distance, so the divergence is
            // never larger than the mean squared distance to any other point.
            #[test]
            fn mean_is_the_squared_distance_minimizer(
                c in config_strategy(6, 5),
                probe in proptest::collection::vec(weight(), 5),
            ) {
                let d = c.dim();
                let probe = ModelParams::new(probe[..d].to_vec()).unwrap();
                let m = c.len() as f64;
                let to_probe: f64 = c
                    .models()
                    .iter()
                    .map(|f| sq_distance(f, &probe).unwrap())
                    .sum::<f64>() / m;
                prop_assert!(divergence(&c) <= to_probe + 1e-9);
            }

            #[test]
            fn divergence_is_nonnegative(c in config_strategy(6, 5)) {
                prop_assert!(divergence(&c) >= 0.0);
            }

            // Replacing every model by the mean drives divergence to zero.
            #[test]
            fn averaging_zeroes_divergence(c in config_strategy(6, 5)) {
                let mean = average(&c);
                let synced = ModelConfiguration::new(vec![mean; c.len()]).unwrap();
                prop_assert!(divergence(&synced) <= 1e-18);
            }

            #[test]
            fn sq_distance_is_symmetric(
                a in proptest::collection::vec(weight(), 4),
                b in proptest::collection::vec(weight(), 4),
            ) {
                let a = ModelParams::new(a).unwrap();
                let b = ModelParams::new(b).unwrap();
                prop_assert_eq!(
                    sq_distance(&a, &b).unwrap().to_bits(),
                    sq_distance(&b, &a).unwrap().to_bits()
                );
            }
        }
    }
}
