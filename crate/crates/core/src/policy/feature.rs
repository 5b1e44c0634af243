use super::{log_normalize, Policy, TabularPolicy};
use crate::error::{invalid_arg, Result};
use std::borrow::Cow;

/// Linear softmax policy: `pi(.|s) = softmax(W^T phi(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSoftmaxPolicy {
    features: Vec<Vec<f64>>,
    /// `dim x num_actions`, row-major.
    weights: Vec<f64>,
    num_actions: usize,
}

impl FeatureSoftmaxPolicy {
    pub fn new(features: Vec<Vec<f64>>, num_actions: usize, weights: Vec<f64>) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        if num_actions == 0 || dim == 0 {
            return Err(invalid_arg("feature policy needs at least one feature and action"));
        }
        if features.iter().any(|f| f.len() != dim || f.iter().any(|x| !x.is_finite())) {
            return Err(invalid_arg("feature vectors must share one dimension and be finite"));
        }
        if weights.len() != dim * num_actions || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid_arg(format!("expected {} finite weights", dim * num_actions)));
        }
        Ok(Self { features, weights, num_actions })
    }

    /// One-hot state features with weights copied from a tabular policy's logits, which makes
    /// the two policies identical.
    pub fn one_hot_from(pi: &TabularPolicy) -> Self {
        let n = pi.num_states();
        let features = (0..n)
            .map(|s| {
                let mut f = vec![0.0; n];
                f[s] = 1.0;
                f
            })
            .collect();
        Self { features, weights: pi.logits().to_vec(), num_actions: pi.num_actions() }
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn logits(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        for (i, phi) in self.features[s].iter().enumerate() {
            if *phi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.num_actions..(i + 1) * self.num_actions];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += phi * w);
        }
        out
    }

    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        let mut l = self.logits(s);
        log_normalize(&mut l);
        l
    }

    pub fn to_tabular(&self) -> Result<TabularPolicy> {
        let logits = (0..self.features.len()).flat_map(|s| self.logits(s)).collect();
        TabularPolicy::new(self.features.len(), self.num_actions, logits)
    }

    /// Weighted cross-entropy `sum_s w(s) sum_a target(a|s) (-log pi(a|s))` and its gradient
    /// with respect to the weights.
    pub fn cross_entropy(&self, targets: &[(usize, f64, &[f64])]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.weights.len()];
        for &(s, w, target) in targets {
            let lp = self.log_probs(s);
            loss -= w * target.iter().zip(&lp).map(|(t, l)| t * l).sum::<f64>();
            for (i, phi) in self.features[s].iter().enumerate() {
                if *phi == 0.0 {
                    continue;
                }
                for a in 0..self.num_actions {
                    grad[i * self.num_actions + a] += w * phi * (lp[a].exp() - target[a]);
                }
            }
        }
        (loss, grad)
    }

    pub fn step(&mut self, grad: &[f64], learning_rate: f64) {
        self.weights.iter_mut().zip(grad).for_each(|(w, g)| *w -= learning_rate * g);
    }
}

impl Policy for FeatureSoftmaxPolicy {
    fn num_states(&self) -> usize {
        self.features.len()
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, s: usize) -> Cow<'_, [f64]> {
        Cow::Owned(self.log_probs(s).into_iter().map(f64::exp).collect())
    }
}
