//! Linear-softmax policy heads with exact score-function and KL gradients.

pub mod checkpoint;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::sac::TEMPLATE_COUNT;
use crate::task_env::{FeatureConfig, RoleTag};
use crate::{Error, Result};

/// A `features x actions` weight matrix, row-major. Logit `j` is
/// `sum_i w[i][j] * f[i]`. Gradient blocks share this type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub features: usize,
    pub actions: usize,
    pub weights: Vec<f64>,
}

impl Head {
    pub fn zeros(features: usize, actions: usize) -> Self {
        Self {
            features,
            actions,
            weights: vec![0.0; features * actions],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let actions = rows.first().map_or(0, Vec::len);
        Self {
            features: rows.len(),
            actions,
            weights: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.actions + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.weights[i * self.actions + j]
    }

    pub fn same_shape(&self, other: &Head) -> bool {
        self.features == other.features && self.actions == other.actions
    }

    fn check_shape(&self, other: &Head) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "head {}x{} vs {}x{}",
                self.features, self.actions, other.features, other.actions
            )))
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Head, scale: f64) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
    }

    pub fn dot(&self, other: &Head) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// Logits of the first `n_actions` columns.
    pub fn logits(&self, features: &[f64], n_actions: usize) -> Result<Vec<f64>> {
        if features.len() != self.features {
            return Err(Error::Dimension(format!(
                "{} features for a head with {} rows",
                features.len(),
                self.features
            )));
        }
        if n_actions < 2 || n_actions > self.actions {
            return Err(Error::Dimension(format!(
                "{n_actions} actions for a head with {} columns",
                self.actions
            )));
        }
        let mut z = vec![0.0; n_actions];
        for (i, &f) in features.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.actions..i * self.actions + n_actions];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += w * f;
            }
        }
        Ok(z)
    }

    /// Adds `features ⊗ coeffs` to the first `coeffs.len()` columns.
    fn add_outer(&mut self, features: &[f64], coeffs: &[f64], scale: f64) {
        for (i, &f) in features.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            for (j, &c) in coeffs.iter().enumerate() {
                self.weights[i * self.actions + j] += scale * f * c;
            }
        }
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn action_distribution(head: &Head, features: &[f64], n_actions: usize) -> Result<Vec<f64>> {
    Ok(softmax(&head.logits(features, n_actions)?))
}

pub fn log_probs(head: &Head, features: &[f64], n_actions: usize) -> Result<Vec<f64>> {
    Ok(log_softmax(&head.logits(features, n_actions)?))
}

/// Sampling distribution with logits divided by `temperature`.
pub fn tempered_distribution(
    head: &Head,
    features: &[f64],
    n_actions: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    let z: Vec<f64> = head
        .logits(features, n_actions)?
        .into_iter()
        .map(|z| z / temperature)
        .collect();
    Ok(softmax(&z))
}

/// Score function `∂ log π(chosen) / ∂W = f ⊗ (onehot(chosen) − π)`.
pub fn log_prob_grad(
    head: &Head,
    features: &[f64],
    n_actions: usize,
    chosen: usize,
) -> Result<Head> {
    if chosen >= n_actions {
        return Err(Error::Dimension(format!("action {chosen} of {n_actions}")));
    }
    let p = action_distribution(head, features, n_actions)?;
    let coeffs: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| if j == chosen { 1.0 - pj } else { -pj })
        .collect();
    let mut g = Head::zeros(head.features, head.actions);
    g.add_outer(features, &coeffs, 1.0);
    Ok(g)
}

/// Gradient of `Σ_a π(a) u(a)` with respect to the head, for fixed utilities.
pub fn expected_utility_grad(head: &Head, features: &[f64], utilities: &[f64]) -> Result<Head> {
    let n = utilities.len();
    let p = action_distribution(head, features, n)?;
    let mean: f64 = p.iter().zip(utilities).map(|(a, b)| a * b).sum();
    let coeffs: Vec<f64> = p
        .iter()
        .zip(utilities)
        .map(|(pj, uj)| pj * (uj - mean))
        .collect();
    let mut g = Head::zeros(head.features, head.actions);
    g.add_outer(features, &coeffs, 1.0);
    Ok(g)
}

/// `KL(p ‖ q)` for strictly positive distributions.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Exact `KL(π_head ‖ π_ref)` at one context and its gradient in `head`.
pub fn kl_to_reference(
    head: &Head,
    ref_head: &Head,
    features: &[f64],
    n_actions: usize,
) -> Result<(f64, Head)> {
    head.check_shape(ref_head)?;
    let lp = log_probs(head, features, n_actions)?;
    let lq = log_probs(ref_head, features, n_actions)?;
    let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let kl: f64 = p
        .iter()
        .zip(lp.iter().zip(&lq))
        .map(|(pi, (a, b))| pi * (a - b))
        .sum();
    // ∂KL/∂z_j = π_j (log π_j − log ρ_j − KL)
    let coeffs: Vec<f64> = (0..n_actions)
        .map(|j| p[j] * (lp[j] - lq[j] - kl))
        .collect();
    let mut g = Head::zeros(head.features, head.actions);
    g.add_outer(features, &coeffs, 1.0);
    Ok((kl.max(0.0), g))
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// Generator heads: initial proposal, candidate revision and KEEP/REVISE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub proposal: Head,
    pub revision: Head,
    pub action: Head,
}

/// Verifier heads: SAC/NS intervention and SAC template choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierParams {
    pub intervene: Head,
    pub template: Head,
}

impl GeneratorParams {
    pub fn zeros(cfg: &FeatureConfig) -> Self {
        Self {
            proposal: Head::zeros(cfg.dim(RoleTag::GeneratorProposal), cfg.slots),
            revision: Head::zeros(cfg.dim(RoleTag::GeneratorRevision), cfg.slots),
            action: Head::zeros(cfg.dim(RoleTag::GeneratorAction), 2),
        }
    }

    pub fn heads(&self) -> [(&'static str, &Head); 3] {
        [
            ("generator.proposal", &self.proposal),
            ("generator.revision", &self.revision),
            ("generator.action", &self.action),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proposal: Head::zeros(self.proposal.features, self.proposal.actions),
            revision: Head::zeros(self.revision.features, self.revision.actions),
            action: Head::zeros(self.action.features, self.action.actions),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.heads().iter().all(|(_, h)| h.is_finite())
    }
}

impl VerifierParams {
    pub fn zeros(cfg: &FeatureConfig) -> Self {
        let d = cfg.dim(RoleTag::Verifier);
        Self {
            intervene: Head::zeros(d, 2),
            template: Head::zeros(d, TEMPLATE_COUNT),
        }
    }

    pub fn heads(&self) -> [(&'static str, &Head); 2] {
        [
            ("verifier.intervene", &self.intervene),
            ("verifier.template", &self.template),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            intervene: Head::zeros(self.intervene.features, self.intervene.actions),
            template: Head::zeros(self.template.features, self.template.actions),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.heads().iter().all(|(_, h)| h.is_finite())
    }
}

/// Frozen copies of both roles' parameters taken at initialization.
#[derive(Clone, Debug)]
pub struct ReferenceSnapshot {
    generator: Arc<GeneratorParams>,
    verifier: Arc<VerifierParams>,
}

impl ReferenceSnapshot {
    pub fn capture(generator: &GeneratorParams, verifier: &VerifierParams) -> Self {
        Self {
            generator: Arc::new(generator.clone()),
            verifier: Arc::new(verifier.clone()),
        }
    }

    pub fn generator(&self) -> &GeneratorParams {
        &self.generator
    }

    pub fn verifier(&self) -> &VerifierParams {
        &self.verifier
    }
}
