//! Fixed-length feature vectors for the four policies.
//!
//! Layouts (S = candidate slots, K = 5 rule kinds):
//!
//! | role                 | length  | contents                                            |
//! |----------------------|---------|-----------------------------------------------------|
//! | `GeneratorProposal`  | S + K   | per-slot plausibility, rule-kind one-hot            |
//! | `Verifier`           | 2 + 2K  | bias, residual, kind one-hot, kind-gated residuals  |
//! | `GeneratorRevision`  | 3S + K  | per-slot (plausibility, is-proposal, is-suggested), kind |
//! | `GeneratorAction`    | 5       | bias, plausibility of x and z, x == z, z == suggested |
//!
//! Plausibility of a value is `1{correct} + generator_noise * eps` and the
//! verifier residual is `1 - exp(-|x - rule value| / 100) + feature_noise * eps`,
//! with `eps` a standard normal keyed by (task seed, unit, stream, value).

use serde::{Deserialize, Serialize};

use super::{oracle_value, Cents, DecisionContext, RuleKind};
use crate::rng;
use crate::sac::SafetyAssuranceCase;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoleTag {
    GeneratorProposal,
    Verifier,
    GeneratorRevision,
    GeneratorAction,
}

impl RoleTag {
    pub fn name(self) -> &'static str {
        match self {
            RoleTag::GeneratorProposal => "generator_proposal",
            RoleTag::Verifier => "verifier",
            RoleTag::GeneratorRevision => "generator_revision",
            RoleTag::GeneratorAction => "generator_action",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub slots: usize,
    pub feature_noise: f64,
    pub generator_noise: f64,
}

impl FeatureConfig {
    pub fn dim(&self, role: RoleTag) -> usize {
        let k = RuleKind::COUNT;
        match role {
            RoleTag::GeneratorProposal => self.slots + k,
            RoleTag::Verifier => 2 + 2 * k,
            RoleTag::GeneratorRevision => 3 * self.slots + k,
            RoleTag::GeneratorAction => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub role_tag: RoleTag,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const STREAM_PROPOSAL: u64 = 0x01;
const STREAM_VERIFIER: u64 = 0x02;
const STREAM_REVISION: u64 = 0x03;
const STREAM_ACTION: u64 = 0x04;

fn noise(ctx: &DecisionContext, stream: u64, value: Cents) -> f64 {
    rng::keyed_normal(&[ctx.task.seed, ctx.unit_index as u64, stream, value as u64])
}

fn plausibility(
    ctx: &DecisionContext,
    cfg: &FeatureConfig,
    stream: u64,
    v: Cents,
    oracle: Cents,
) -> f64 {
    let base = if v == oracle { 1.0 } else { 0.0 };
    base + cfg.generator_noise * noise(ctx, stream, v)
}

/// Consistency residual of `x` against the unit's rule evaluation, in [0, 1).
pub fn residual(x: Cents, rule_value: Cents) -> f64 {
    1.0 - (-((x - rule_value).abs() as f64) / 100.0).exp()
}

fn kind_onehot(kind: RuleKind) -> [f64; RuleKind::COUNT] {
    let mut h = [0.0; RuleKind::COUNT];
    h[kind.index()] = 1.0;
    h
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn featurize(
    ctx: &DecisionContext,
    proposal: Option<Cents>,
    sac: Option<&SafetyAssuranceCase>,
    revision: Option<Cents>,
    role: RoleTag,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let missing = |what| Error::MissingInput {
        role: role.name(),
        what,
    };
    let kind = ctx.rule()?.kind;
    let oracle = oracle_value(&ctx.task, ctx.unit_index)?;
    let candidates = ctx.task.candidate_set(ctx.unit_index)?;
    if candidates.len() > cfg.slots {
        return Err(Error::Dimension(format!(
            "{} candidates exceed {} slots",
            candidates.len(),
            cfg.slots
        )));
    }
    let mut values = Vec::with_capacity(cfg.dim(role));
    match role {
        RoleTag::GeneratorProposal => {
            for j in 0..cfg.slots {
                values.push(match candidates.values.get(j) {
                    Some(&v) => plausibility(ctx, cfg, STREAM_PROPOSAL, v, oracle),
                    None => 0.0,
                });
            }
            values.extend(kind_onehot(kind));
        }
        RoleTag::Verifier => {
            let x = proposal.ok_or_else(|| missing("proposal"))?;
            let v = residual(x, oracle) + cfg.feature_noise * noise(ctx, STREAM_VERIFIER, x);
            let h = kind_onehot(kind);
            values.push(1.0);
            values.push(v);
            values.extend(h);
            values.extend(h.iter().map(|e| e * v));
        }
        RoleTag::GeneratorRevision => {
            let x = proposal.ok_or_else(|| missing("proposal"))?;
            let sac = sac.ok_or_else(|| missing("sac"))?;
            for j in 0..cfg.slots {
                match candidates.values.get(j) {
                    Some(&v) => {
                        values.push(plausibility(ctx, cfg, STREAM_REVISION, v, oracle));
                        values.push(indicator(v == x));
                        values.push(indicator(Some(v) == sac.suggested_correction));
                    }
                    None => values.extend([0.0; 3]),
                }
            }
            values.extend(kind_onehot(kind));
        }
        RoleTag::GeneratorAction => {
            let x = proposal.ok_or_else(|| missing("proposal"))?;
            let sac = sac.ok_or_else(|| missing("sac"))?;
            let z = revision.ok_or_else(|| missing("revision"))?;
            values.push(1.0);
            values.push(plausibility(ctx, cfg, STREAM_ACTION, x, oracle));
            values.push(plausibility(ctx, cfg, STREAM_ACTION, z, oracle));
            values.push(indicator(x == z));
            values.push(indicator(Some(z) == sac.suggested_correction));
        }
    }
    debug_assert_eq!(values.len(), cfg.dim(role));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} features", role.name())));
    }
    Ok(FeatureVector {
        values,
        role_tag: role,
    })
}
