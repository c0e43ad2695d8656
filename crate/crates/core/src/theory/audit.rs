//! Pointwise best-response audits on the full game.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dominant_generator_action;
use crate::game::{best_of_k_revision, RolloutConfig};
use crate::policies::{action_distribution, argmax, GeneratorParams, VerifierParams};
use crate::rng;
use crate::sac::{emit_sac, sac_correct_label};
use crate::task_env::{
    advance, featurize, oracle_value, score_correct, Cents, DecisionContext, FeatureConfig,
    RoleTag, TaskInstance,
};
use crate::{Error, Result};

pub trait InterventionPolicy {
    fn p_sac(&self, ctx: &DecisionContext, x: Cents) -> Result<f64>;
}

/// Intervenes exactly when the proposal is wrong.
pub struct OracleVerifier;

impl InterventionPolicy for OracleVerifier {
    fn p_sac(&self, ctx: &DecisionContext, x: Cents) -> Result<f64> {
        Ok(f64::from(sac_correct_label(score_correct(
            x,
            &ctx.task,
            ctx.unit_index,
        )?)))
    }
}

pub struct UniformVerifier;

impl InterventionPolicy for UniformVerifier {
    fn p_sac(&self, _: &DecisionContext, _: Cents) -> Result<f64> {
        Ok(0.5)
    }
}

pub struct LinearVerifier<'a> {
    pub params: &'a VerifierParams,
    pub features: FeatureConfig,
}

impl InterventionPolicy for LinearVerifier<'_> {
    fn p_sac(&self, ctx: &DecisionContext, x: Cents) -> Result<f64> {
        let f = featurize(ctx, Some(x), None, None, RoleTag::Verifier, &self.features)?;
        Ok(action_distribution(&self.params.intervene, &f.values, 2)?[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub id: String,
    pub s_x: u8,
    pub optimal: String,
    pub argmax_optimal: bool,
    pub suboptimal_mass: f64,
    pub sbar_z: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponseReport {
    pub contexts: usize,
    pub excluded: usize,
    pub argmax_match_rate: f64,
    pub mean_suboptimal_mass: f64,
    pub per_context: Vec<ContextReport>,
}

impl BestResponseReport {
    fn from_rows(rows: Vec<ContextReport>, excluded: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = rows.len() as f64;
        Ok(Self {
            contexts: rows.len(),
            excluded,
            argmax_match_rate: rows.iter().filter(|r| r.argmax_optimal).count() as f64 / n,
            mean_suboptimal_mass: rows.iter().map(|r| r.suboptimal_mass).sum::<f64>() / n,
            per_context: rows,
        })
    }

    /// Flat `key=value` summary followed by one tab-separated row per context.
    pub fn render(&self) -> String {
        let mut s = format!(
            "contexts={}\nexcluded={}\nargmax_match_rate={:.10}\nmean_suboptimal_mass={:.10}\n",
            self.contexts, self.excluded, self.argmax_match_rate, self.mean_suboptimal_mass
        );
        s += "id\ts_x\toptimal\targmax_optimal\tsuboptimal_mass\tsbar_z\n";
        for r in &self.per_context {
            let sb = r.sbar_z.map(|v| format!("{v:.6}")).unwrap_or_default();
            s += &format!(
                "{}\t{}\t{}\t{}\t{:.10}\t{}\n",
                r.id, r.s_x, r.optimal, r.argmax_optimal, r.suboptimal_mass, sb
            );
        }
        s
    }
}

/// Every (context at the ground-truth prefix, candidate proposal) pair.
pub fn enumerate_contexts(tasks: &[Arc<TaskInstance>]) -> Result<Vec<(DecisionContext, Cents)>> {
    let mut out = Vec::new();
    for t in tasks {
        let mut ctx = DecisionContext::start(Arc::clone(t));
        while !ctx.is_terminal() {
            for &x in &t.candidate_set(ctx.unit_index)?.values {
                out.push((ctx.clone(), x));
            }
            let truth = oracle_value(t, ctx.unit_index)?;
            ctx = advance(&ctx, truth)?;
        }
    }
    Ok(out)
}

fn context_id(ctx: &DecisionContext, x: Cents) -> String {
    format!("{}:{}:{}", ctx.task.id, ctx.unit_index, x)
}

/// `y* = SAC` iff `c_sac = 1`.
pub fn verifier_best_response_audit(
    policy: &dyn InterventionPolicy,
    contexts: &[(DecisionContext, Cents)],
) -> Result<BestResponseReport> {
    let mut rows = Vec::with_capacity(contexts.len());
    for (ctx, x) in contexts {
        let s_x = score_correct(*x, &ctx.task, ctx.unit_index)?;
        let y_star = usize::from(sac_correct_label(s_x));
        let p_sac = policy.p_sac(ctx, *x)?;
        let p = [1.0 - p_sac, p_sac];
        rows.push(ContextReport {
            id: context_id(ctx, *x),
            s_x,
            optimal: if y_star == 1 { "SAC" } else { "NS" }.into(),
            argmax_optimal: argmax(&p) == y_star,
            suboptimal_mass: p[1 - y_star],
            sbar_z: None,
        });
    }
    BestResponseReport::from_rows(rows, 0)
}

/// Generator dominance audit. The action head observes the drawn revision `z`, so the
/// comparison is made per draw of the (oracle-free) revision pipeline
/// under the rule-matching SAC: KEEP is dominant when `S_x > S_z(z)`,
/// REVISE when `S_x < S_z(z)`, and ties are skipped. Contexts whose draws
/// are all ties are excluded. `sbar_z` reports the draw average of `S_z`.
pub fn generator_dominance_audit(
    generator: &GeneratorParams,
    contexts: &[(DecisionContext, Cents)],
    rollout: &RolloutConfig,
    samples: usize,
    seed: u64,
) -> Result<BestResponseReport> {
    if samples == 0 {
        return Err(Error::Config(
            "dominance audit needs at least one sample".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut excluded = 0;
    for (i, (ctx, x)) in contexts.iter().enumerate() {
        let s_x = score_correct(*x, &ctx.task, ctx.unit_index)?;
        let sac = emit_sac(ctx, *x, ctx.rule()?.kind.index())?;
        let mut rng = rng::stream(&[seed, i as u64, 0xD0A]);
        let mut hits = 0usize;
        let mut judged = 0usize;
        let mut mass = 0.0;
        let mut argmax_ok = 0usize;
        let mut keep_dominant = 0usize;
        for _ in 0..samples {
            let rev = best_of_k_revision(
                generator, ctx, *x, &sac, rollout.k, false, rollout, &mut rng,
            )?;
            let s_z = score_correct(rev.value, &ctx.task, ctx.unit_index)?;
            hits += s_z as usize;
            let Some(dom) = dominant_generator_action(s_x, f64::from(s_z)) else {
                continue;
            };
            let f = featurize(
                ctx,
                Some(*x),
                Some(&sac),
                Some(rev.value),
                RoleTag::GeneratorAction,
                &rollout.features,
            )?;
            let p = action_distribution(&generator.action, &f.values, 2)?;
            judged += 1;
            mass += p[1 - dom];
            argmax_ok += usize::from(argmax(&p) == dom);
            keep_dominant += usize::from(dom == 0);
        }
        if judged == 0 {
            excluded += 1;
            continue;
        }
        rows.push(ContextReport {
            id: context_id(ctx, *x),
            s_x,
            optimal: match keep_dominant {
                0 => "REVISE",
                k if k == judged => "KEEP",
                _ => "MIXED",
            }
            .into(),
            argmax_optimal: argmax_ok * 2 > judged,
            suboptimal_mass: mass / judged as f64,
            sbar_z: Some(hits as f64 / samples as f64),
        });
    }
    BestResponseReport::from_rows(rows, excluded)
}
