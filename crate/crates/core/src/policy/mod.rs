//! Softmax policies, per-state divergences and the closed-form KL-regularized update.

mod feature;

pub use feature::FeatureSoftmaxPolicy;

use crate::error::{invalid_arg, Error, Result};
use std::borrow::Cow;
use std::io::{Read, Write};

/// A stochastic policy over a finite state/action space.
pub trait Policy {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Action distribution at `s`.
    fn probs(&self, s: usize) -> Cow<'_, [f64]>;

    /// Samples an action by inverting the CDF at `u` in `[0, 1)`.
    fn sample_with(&self, s: usize, u: f64) -> usize {
        let probs = self.probs(s);
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding can leave the CDF a hair below one; fall back to the last supported action.
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
    }
}

/// `log(sum(exp(xs)))`, stable for large magnitudes.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes logits into log-probabilities in place and returns the log-normalizer.
pub fn log_normalize(logits: &mut [f64]) -> f64 {
    let lz = log_sum_exp(logits);
    logits.iter_mut().for_each(|x| *x -= lz);
    lz
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    log_normalize(&mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `KL(p || q)` for distributions over the same actions.
pub fn per_state_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid_arg(format!("support sizes differ: {} vs {}", p.len(), q.len())));
    }
    if q.iter().any(|x| !(*x > 0.0)) {
        return Err(invalid_arg("reference distribution has a zero entry"));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pa, _)| **pa > 0.0)
        .map(|(pa, qa)| pa * (pa / qa).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Per-state softmax over a logit table; the default representation of every policy
/// the learner manipulates.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_actions: usize,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// `logits` is row-major, `num_states * num_actions` long.
    pub fn new(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_actions == 0 || logits.len() != num_states * num_actions {
            return Err(invalid_arg(format!(
                "expected {} logits, got {}",
                num_states * num_actions,
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(invalid_arg(format!(
                "non-finite logit at state {}, action {}",
                i / num_actions,
                i % num_actions
            )));
        }
        let mut log_probs = logits.clone();
        for row in log_probs.chunks_mut(num_actions) {
            log_normalize(row);
        }
        let probs: Vec<f64> = log_probs.iter().map(|x| x.exp()).collect();
        if probs.iter().any(|p| !(*p > 0.0)) {
            return Err(invalid_arg("logit spread too large: a probability underflowed to zero"));
        }
        Ok(Self { num_actions, logits, log_probs, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self::new(num_states, num_actions, vec![0.0; num_states * num_actions])
            .expect("zero logits are valid")
    }

    /// Builds a policy from per-state distributions, which must be strictly positive.
    pub fn from_distributions(rows: &[Vec<f64>]) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut logits = Vec::with_capacity(rows.len() * num_actions);
        for (s, row) in rows.iter().enumerate() {
            check_distribution(row, num_actions).map_err(|e| match e {
                Error::InvalidArgument(m) => invalid_arg(format!("state {s}: {m}")),
                other => other,
            })?;
            logits.extend(row.iter().map(|p| p.ln()));
        }
        Self::new(rows.len(), num_actions, logits)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs_row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn log_probs_row(&self, s: usize) -> &[f64] {
        &self.log_probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        if s >= self.num_states() || a >= self.num_actions {
            return Err(invalid_arg(format!(
                "({s}, {a}) outside {}x{} policy",
                self.num_states(),
                self.num_actions
            )));
        }
        Ok(self.log_probs[s * self.num_actions + a])
    }

    /// Copy with the rows in `rows` replaced by new logits.
    pub fn with_rows<'a>(
        &self,
        rows: impl IntoIterator<Item = (usize, &'a [f64])>,
    ) -> Result<Self> {
        let mut logits = self.logits.clone();
        for (s, row) in rows {
            if s >= self.num_states() || row.len() != self.num_actions {
                return Err(invalid_arg(format!("row for state {s} does not fit the policy")));
            }
            logits[s * self.num_actions..(s + 1) * self.num_actions].copy_from_slice(row);
        }
        Self::new(self.num_states(), self.num_actions, logits)
    }

    pub fn argmax(&self, s: usize) -> usize {
        argmax(self.probs_row(s))
    }

    /// Writes `state,action,logit` rows, one per table entry.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "logit"])?;
        for (i, logit) in self.logits.iter().enumerate() {
            w.write_record([
                (i / self.num_actions).to_string(),
                (i % self.num_actions).to_string(),
                logit.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`TabularPolicy::write_checkpoint`]. Every
    /// `(state, action)` pair of the target shape must appear exactly once.
    pub fn read_checkpoint<R: Read>(
        input: R,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Self> {
        let load = |m: String| Error::Load(m);
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers().map_err(|e| load(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["state", "action", "logit"] {
            return Err(load(format!("unexpected checkpoint header {headers:?}")));
        }
        let mut logits = vec![f64::NAN; num_states * num_actions];
        let mut seen = vec![false; num_states * num_actions];
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| load(e.to_string()))?;
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let parse_idx = |i: usize| {
                field(i).parse::<usize>().map_err(|e| load(format!("row {}: {e}", line + 1)))
            };
            let (s, a) = (parse_idx(0)?, parse_idx(1)?);
            let logit: f64 =
                field(2).parse().map_err(|e| load(format!("row {}: {e}", line + 1)))?;
            if s >= num_states || a >= num_actions {
                return Err(load(format!("row {}: ({s}, {a}) out of range", line + 1)));
            }
            let i = s * num_actions + a;
            if seen[i] {
                return Err(load(format!("duplicate entry for ({s}, {a})")));
            }
            seen[i] = true;
            logits[i] = logit;
        }
        if let Some(i) = seen.iter().position(|x| !x) {
            return Err(load(format!(
                "missing entry for ({}, {})",
                i / num_actions,
                i % num_actions
            )));
        }
        Self::new(num_states, num_actions, logits).map_err(|e| load(e.to_string()))
    }
}

impl Policy for TabularPolicy {
    fn num_states(&self) -> usize {
        self.logits.len() / self.num_actions
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, s: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.probs_row(s))
    }
}

/// A policy that always plays one action per state. Not a valid input where strict
/// positivity is required (soft evaluation, KL updates).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    num_actions: usize,
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(num_actions: usize, actions: Vec<usize>) -> Result<Self> {
        if let Some(a) = actions.iter().find(|a| **a >= num_actions) {
            return Err(invalid_arg(format!("action {a} out of range")));
        }
        Ok(Self { num_actions, actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

impl Policy for DeterministicPolicy {
    fn num_states(&self) -> usize {
        self.actions.len()
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, s: usize) -> Cow<'_, [f64]> {
        let mut p = vec![0.0; self.num_actions];
        p[self.actions[s]] = 1.0;
        Cow::Owned(p)
    }

    fn sample_with(&self, s: usize, _u: f64) -> usize {
        self.actions[s]
    }
}

/// Closed-form solution of the KL-regularized improvement step:
/// `pi_new(a|s) ∝ pi_k(a|s) exp(A(s,a) / beta)` at every state present in `advantages`,
/// other states unchanged.
pub fn kl_update<'a>(
    pi_k: &TabularPolicy,
    advantages: impl IntoIterator<Item = (usize, &'a [f64])>,
    beta: f64,
) -> Result<TabularPolicy> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid_arg(format!("beta must be positive, got {beta}")));
    }
    let mut rows = Vec::new();
    for (s, adv) in advantages {
        if s >= pi_k.num_states() || adv.len() != pi_k.num_actions() {
            return Err(invalid_arg(format!("advantage row for state {s} does not fit")));
        }
        let mut row: Vec<f64> =
            pi_k.log_probs_row(s).iter().zip(adv).map(|(lp, a)| lp + a / beta).collect();
        log_normalize(&mut row);
        rows.push((s, row));
    }
    pi_k.with_rows(rows.iter().map(|(s, r)| (*s, r.as_slice())))
}

pub(crate) fn check_distribution(p: &[f64], num_actions: usize) -> Result<()> {
    if p.len() != num_actions {
        return Err(invalid_arg(format!("expected {num_actions} actions, got {}", p.len())));
    }
    if p.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(invalid_arg("distribution must be strictly positive"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid_arg(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// One strictly positive distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub state: usize,
    pub probs: Vec<f64>,
    /// Log of the normalizer of the unnormalized geometric mixture.
    pub log_partition: f64,
    pub alpha: f64,
}
