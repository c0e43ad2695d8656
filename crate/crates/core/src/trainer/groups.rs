//! Construction of the four kinds of paired groups from a rollout batch.

use serde::{Deserialize, Serialize};

use super::{
    group_advantage, pair_loss_gradient, paired_rewards_generator, paired_rewards_verifier,
};
use super::{PairEstimator, TrainConfig};
use crate::game::{GeneratorAction, Transition, VerifierAction};
use crate::policies::{
    action_distribution, kl_to_reference, log_prob_grad, log_probs, GeneratorParams, Head,
    VerifierParams,
};
use crate::rng;
use crate::task_env::{featurize, score_correct, DecisionContext, FeatureConfig, RoleTag};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// SAC vs NS, rewards `(c_sac, 1 - c_sac)`.
    Verifier,
    /// KEEP vs REVISE on SAC branches, rewards `(S_x, S_z)`.
    Action,
    /// Two sampled proposals, each rewarded by its correctness.
    Proposal,
    /// Two sampled revision candidates on SAC branches, rewarded by `S_z`.
    Revision,
}

impl GroupKind {
    pub const ALL: [GroupKind; 4] = [
        GroupKind::Verifier,
        GroupKind::Action,
        GroupKind::Proposal,
        GroupKind::Revision,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedGroup {
    pub context_id: String,
    pub kind: GroupKind,
    pub features: Vec<f64>,
    pub n_actions: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub old_logp: Vec<f64>,
    /// Correctness of every candidate slot (sampled-slot groups only).
    pub slot_rewards: Option<Vec<f64>>,
}

impl PairedGroup {
    /// Binary group over both actions of a two-action head.
    pub fn binary(
        context_id: String,
        kind: GroupKind,
        features: Vec<f64>,
        rewards: [f64; 2],
        epsilon_a: f64,
    ) -> Self {
        Self {
            context_id,
            kind,
            features,
            n_actions: 2,
            actions: vec![0, 1],
            rewards: rewards.to_vec(),
            advantages: group_advantage(&rewards, epsilon_a),
            old_logp: Vec::new(),
            slot_rewards: None,
        }
    }
}

const PURPOSE_PROPOSAL: u64 = 0x7001;
const PURPOSE_REVISION: u64 = 0x7002;

fn context_id(ctx: &DecisionContext) -> String {
    format!("{}:{}", ctx.task.id, ctx.unit_index)
}

fn sample_pair(p: &[f64], key: &[u64]) -> [usize; 2] {
    use rand::distributions::{Distribution, WeightedIndex};
    let mut r = rng::stream(key);
    let d = WeightedIndex::new(p).expect("valid distribution");
    [d.sample(&mut r), d.sample(&mut r)]
}

#[allow(clippy::too_many_arguments)]
fn slot_group(
    ctx: &DecisionContext,
    kind: GroupKind,
    head: &Head,
    features: Vec<f64>,
    cfg: &TrainConfig,
    step: usize,
    purpose: u64,
) -> Result<PairedGroup> {
    let cands = ctx.task.candidate_set(ctx.unit_index)?;
    let n = cands.len();
    let slot_rewards = cands
        .values
        .iter()
        .map(|&v| score_correct(v, &ctx.task, ctx.unit_index).map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    let p = action_distribution(head, &features, n)?;
    let lp = log_probs(head, &features, n)?;
    let key = [
        cfg.seed,
        step as u64,
        rng::str_key(&ctx.task.id),
        ctx.unit_index as u64,
        purpose,
    ];
    let actions = sample_pair(&p, &key);
    let rewards: Vec<f64> = actions.iter().map(|&a| slot_rewards[a]).collect();
    Ok(PairedGroup {
        context_id: context_id(ctx),
        kind,
        features,
        n_actions: n,
        actions: actions.to_vec(),
        advantages: group_advantage(&rewards, cfg.epsilon_a),
        rewards,
        old_logp: actions.iter().map(|&a| lp[a]).collect(),
        slot_rewards: Some(slot_rewards),
    })
}

/// Builds the requested group kinds for every transition, in batch order.
/// Proposal and revision pairs come from streams keyed by
/// (seed, step, task, unit), independent of the rollout's own draws.
#[allow(clippy::too_many_arguments)]
pub fn build_groups(
    batch: &[Transition],
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    fc: &FeatureConfig,
    cfg: &TrainConfig,
    step: usize,
    kinds: &[GroupKind],
) -> Result<Vec<PairedGroup>> {
    let want = |k| kinds.contains(&k);
    let mut out = Vec::new();
    for tr in batch {
        let ctx = &tr.context;
        let x = tr.proposal;
        if want(GroupKind::Verifier) {
            let f = featurize(ctx, Some(x), None, None, RoleTag::Verifier, fc)?.values;
            let (r_sac, r_ns) = paired_rewards_verifier(tr.c_sac);
            // action index order: NS = 0, SAC = 1
            let mut g = PairedGroup::binary(
                context_id(ctx),
                GroupKind::Verifier,
                f,
                [r_ns, r_sac],
                cfg.epsilon_a,
            );
            g.old_logp = log_probs(&verifier.intervene, &g.features, 2)?;
            out.push(g);
        }
        if want(GroupKind::Proposal) {
            let f = featurize(ctx, None, None, None, RoleTag::GeneratorProposal, fc)?.values;
            out.push(slot_group(
                ctx,
                GroupKind::Proposal,
                &generator.proposal,
                f,
                cfg,
                step,
                PURPOSE_PROPOSAL,
            )?);
        }
        if tr.verifier_action != VerifierAction::Sac {
            continue;
        }
        let (sac, z, s_z) = match (&tr.sac, tr.revision, tr.s_z) {
            (Some(s), Some(z), Some(sz)) => (s, z, sz),
            _ => continue,
        };
        if want(GroupKind::Action) {
            let f = featurize(
                ctx,
                Some(x),
                Some(sac),
                Some(z),
                RoleTag::GeneratorAction,
                fc,
            )?
            .values;
            let (r_keep, r_revise) = paired_rewards_generator(tr.s_x, s_z);
            debug_assert_eq!(GeneratorAction::Keep.index(), 0);
            let mut g = PairedGroup::binary(
                context_id(ctx),
                GroupKind::Action,
                f,
                [r_keep, r_revise],
                cfg.epsilon_a,
            );
            g.old_logp = log_probs(&generator.action, &g.features, 2)?;
            out.push(g);
        }
        if want(GroupKind::Revision) {
            let f = featurize(
                ctx,
                Some(x),
                Some(sac),
                None,
                RoleTag::GeneratorRevision,
                fc,
            )?
            .values;
            out.push(slot_group(
                ctx,
                GroupKind::Revision,
                &generator.revision,
                f,
                cfg,
                step,
                PURPOSE_REVISION,
            )?);
        }
    }
    Ok(out)
}

/// Loss and gradient of one group. Binary groups use the counterfactual
/// estimator; sampled-slot groups use the taken-action estimator, or with
/// `expected` its exact expectation over the pair distribution.
pub fn group_gradient(
    head: &Head,
    ref_head: &Head,
    grp: &PairedGroup,
    beta: f64,
    epsilon_a: f64,
    expected: bool,
) -> Result<(f64, Head)> {
    let slots = match (&grp.slot_rewards, expected) {
        (None, _) => {
            return pair_loss_gradient(
                head,
                ref_head,
                &grp.features,
                grp,
                beta,
                PairEstimator::Counterfactual,
            )
        }
        (Some(_), false) => {
            return pair_loss_gradient(
                head,
                ref_head,
                &grp.features,
                grp,
                beta,
                PairEstimator::TakenAction,
            )
        }
        (Some(s), true) => s,
    };
    expected_slot_gradient(head, ref_head, &grp.features, slots, beta, epsilon_a)
}

/// Exact expectation of the taken-action estimator over pairs `(i, j) ~ π ⊗ π`.
pub fn expected_slot_gradient(
    head: &Head,
    ref_head: &Head,
    features: &[f64],
    slot_rewards: &[f64],
    beta: f64,
    epsilon_a: f64,
) -> Result<(f64, Head)> {
    let n = slot_rewards.len();
    let p = action_distribution(head, features, n)?;
    let lp = log_probs(head, features, n)?;
    let scores = (0..n)
        .map(|a| log_prob_grad(head, features, n, a))
        .collect::<Result<Vec<_>>>()?;
    let mut coeff = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = p[i] * p[j];
            let adv = group_advantage(&[slot_rewards[i], slot_rewards[j]], epsilon_a);
            coeff[i] -= 0.5 * w * adv[0];
            coeff[j] -= 0.5 * w * adv[1];
            value -= 0.5 * w * (adv[0] * lp[i] + adv[1] * lp[j]);
        }
    }
    let (kl, kl_grad) = kl_to_reference(head, ref_head, features, n)?;
    let mut g = kl_grad;
    g.scale(beta);
    for (s, c) in scores.iter().zip(&coeff) {
        g.add_scaled(s, *c)?;
    }
    Ok((value + beta * kl, g))
}
