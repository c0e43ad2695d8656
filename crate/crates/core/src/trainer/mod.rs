//! Paired counterfactual rewards, group-normalized advantages and the
//! role-routed training step, plus the generator-only baseline.

mod groups;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::game::{
    aggregate, rollout_batch, CaseHistogram, RolloutConfig, Transition, TransitionRecord,
    VerifierAction,
};
use crate::policies::{
    kl_to_reference, log_prob_grad, log_probs, GeneratorParams, Head, ReferenceSnapshot,
    VerifierParams,
};
use crate::rng;
use crate::task_env::{FeatureConfig, TaskInstance};
use crate::{Error, Result};

pub use groups::{build_groups, group_gradient, GroupKind, PairedGroup};

/// Verifier rewards `(R_SAC, R_NS)`.
pub fn paired_rewards_verifier(c_sac: u8) -> (f64, f64) {
    let c = f64::from(c_sac.min(1));
    (c, 1.0 - c)
}

/// Generator rewards `(R_KEEP, R_REVISE)` on a SAC branch.
pub fn paired_rewards_generator(s_x: u8, s_z: u8) -> (f64, f64) {
    (f64::from(s_x), f64::from(s_z))
}

/// `A_i = (R_i - mean) / (sqrt(mean of squared deviations) + eps)`.
pub fn group_advantage(rewards: &[f64], epsilon_a: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon_a;
    rewards
        .iter()
        .map(|r| {
            let d = r - mean;
            if d == 0.0 {
                0.0
            } else {
                d / denom
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairEstimator {
    /// Both actions of a binary group are scored with their known rewards:
    /// `L = -Σ_a π(a) A(a) + β KL(π ‖ π_ref)`.
    Counterfactual,
    /// REINFORCE on the sampled actions only:
    /// `∇ ≈ mean_i score(a_i) (-A_i + β (log π(a_i) - log π_ref(a_i)))`.
    /// The reported value `mean_i (-A_i log π(a_i) + β ½ (log π(a_i) - log π_ref(a_i))²)`
    /// has exactly this gradient (the KL part is the k2 estimator).
    TakenAction,
}

/// Loss value and gradient of the paired-action loss for one group.
pub fn pair_loss_gradient(
    head: &Head,
    ref_head: &Head,
    features: &[f64],
    group: &PairedGroup,
    beta: f64,
    estimator: PairEstimator,
) -> Result<(f64, Head)> {
    let n = group.n_actions;
    let (kl, kl_grad) = kl_to_reference(head, ref_head, features, n)?;
    match estimator {
        PairEstimator::Counterfactual => {
            let mut u = vec![0.0; n];
            for (&a, &adv) in group.actions.iter().zip(&group.advantages) {
                if a >= n {
                    return Err(Error::Dimension(format!("action {a} of {n}")));
                }
                u[a] = adv;
            }
            let lp = log_probs(head, features, n)?;
            let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let value = -p.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + beta * kl;
            let mut g = crate::policies::expected_utility_grad(head, features, &u)?;
            g.scale(-1.0);
            g.add_scaled(&kl_grad, beta)?;
            Ok((value, g))
        }
        PairEstimator::TakenAction => {
            let lp = log_probs(head, features, n)?;
            let lq = log_probs(ref_head, features, n)?;
            let m = group.actions.len() as f64;
            let mut g = Head::zeros(head.features, head.actions);
            let mut value = 0.0;
            for (&a, &adv) in group.actions.iter().zip(&group.advantages) {
                let log_ratio = lp[a] - lq[a];
                value += (-adv * lp[a] + 0.5 * beta * log_ratio * log_ratio) / m;
                let s = log_prob_grad(head, features, n, a)?;
                g.add_scaled(&s, (-adv + beta * log_ratio) / m)?;
            }
            Ok((value, g))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `η_t = c / (t + t0)`.
    RobbinsMonro {
        c: f64,
        t0: f64,
    },
}

impl StepSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::RobbinsMonro { c, t0 } => c / (t as f64 + t0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            StepSchedule::RobbinsMonro { c, t0 } => {
                c > 0.0 && t0 > 0.0 && c.is_finite() && t0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta_v: f64,
    pub beta_fx: f64,
    pub beta_fz: f64,
    pub beta_fa: f64,
    pub epsilon_a: f64,
    pub schedule: StepSchedule,
    pub batch_tasks: usize,
    pub k: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    /// Replace sampled proposal/revision groups by their exact expectation.
    pub expected_groups: bool,
    pub visitation_floor: f64,
    pub temperature: f64,
    pub stochastic_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta_v: 0.04,
            beta_fx: 0.04,
            beta_fz: 0.04,
            beta_fa: 0.04,
            epsilon_a: 1e-6,
            schedule: StepSchedule::Constant { eta: 0.5 },
            batch_tasks: 16,
            k: 5,
            max_steps: 30,
            eval_interval: 5,
            seed: 0,
            expected_groups: false,
            visitation_floor: 0.001,
            temperature: 1.0,
            stochastic_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, b) in [
            ("beta_v", self.beta_v),
            ("beta_fx", self.beta_fx),
            ("beta_fz", self.beta_fz),
            ("beta_fa", self.beta_fa),
        ] {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.epsilon_a > 0.0) {
            return bad("epsilon_a must be positive".into());
        }
        if self.batch_tasks == 0 || self.k == 0 || self.eval_interval == 0 {
            return bad("batch_tasks, k and eval_interval must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        if !(0.0..1.0).contains(&self.visitation_floor) {
            return bad("visitation_floor must lie in [0, 1)".into());
        }
        self.schedule.validate()
    }

    fn beta(&self, kind: GroupKind) -> f64 {
        match kind {
            GroupKind::Verifier => self.beta_v,
            GroupKind::Proposal => self.beta_fx,
            GroupKind::Revision => self.beta_fz,
            GroupKind::Action => self.beta_fa,
        }
    }
}

/// Which role's parameters a group kind may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Verifier,
    Generator,
}

pub fn route(kind: GroupKind) -> Role {
    match kind {
        GroupKind::Verifier => Role::Verifier,
        GroupKind::Proposal | GroupKind::Revision | GroupKind::Action => Role::Generator,
    }
}

/// Loss gradients for both roles, kept separately per group kind.
#[derive(Clone, Debug)]
pub struct GradientBreakdown {
    pub per_kind: BTreeMap<GroupKind, (GeneratorParams, VerifierParams)>,
    pub loss: BTreeMap<GroupKind, f64>,
    pub groups: BTreeMap<GroupKind, usize>,
}

impl GradientBreakdown {
    pub fn total(&self) -> Result<(GeneratorParams, VerifierParams)> {
        let mut it = self.per_kind.values();
        let (g0, v0) = it.next().ok_or(Error::EmptyBatch)?;
        let (mut g, mut v) = (g0.clone(), v0.clone());
        for (gk, vk) in it {
            for (a, b) in [
                (&mut g.proposal, &gk.proposal),
                (&mut g.revision, &gk.revision),
                (&mut g.action, &gk.action),
                (&mut v.intervene, &vk.intervene),
                (&mut v.template, &vk.template),
            ] {
                a.add_scaled(b, 1.0)?;
            }
        }
        Ok((g, v))
    }
}

fn head_for<'a>(
    kind: GroupKind,
    g: &'a mut GeneratorParams,
    v: &'a mut VerifierParams,
) -> &'a mut Head {
    match kind {
        GroupKind::Verifier => &mut v.intervene,
        GroupKind::Proposal => &mut g.proposal,
        GroupKind::Revision => &mut g.revision,
        GroupKind::Action => &mut g.action,
    }
}

fn param_head<'a>(kind: GroupKind, g: &'a GeneratorParams, v: &'a VerifierParams) -> &'a Head {
    match kind {
        GroupKind::Verifier => &v.intervene,
        GroupKind::Proposal => &g.proposal,
        GroupKind::Revision => &g.revision,
        GroupKind::Action => &g.action,
    }
}

/// Averages group losses over the decision units of the batch, so that a
/// branch visited with frequency p contributes with weight p.
pub fn compute_gradients(
    groups: &[PairedGroup],
    units: usize,
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    refs: &ReferenceSnapshot,
    cfg: &TrainConfig,
) -> Result<GradientBreakdown> {
    if units == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut per_kind = BTreeMap::new();
    let mut loss = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for kind in GroupKind::ALL {
        per_kind.insert(kind, (generator.zeros_like(), verifier.zeros_like()));
        loss.insert(kind, 0.0);
        counts.insert(kind, 0usize);
    }
    let w = 1.0 / units as f64;
    for grp in groups {
        let head = param_head(grp.kind, generator, verifier);
        let ref_head = param_head(grp.kind, refs.generator(), refs.verifier());
        let (l, grad) = group_gradient(
            head,
            ref_head,
            grp,
            cfg.beta(grp.kind),
            cfg.epsilon_a,
            cfg.expected_groups,
        )?;
        let (gk, vk) = per_kind.get_mut(&grp.kind).expect("all kinds present");
        head_for(grp.kind, gk, vk).add_scaled(&grad, w)?;
        *loss.get_mut(&grp.kind).expect("kind") += w * l;
        *counts.get_mut(&grp.kind).expect("kind") += 1;
    }
    Ok(GradientBreakdown {
        per_kind,
        loss,
        groups: counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub eta: f64,
    pub samples: usize,
    pub loss_v: f64,
    pub loss_f: f64,
    pub kl_v: f64,
    pub kl_f: f64,
    pub sac_rate: f64,
    pub groups_verifier: usize,
    pub groups_action: usize,
    pub groups_proposal: usize,
    pub groups_revision: usize,
    pub batch: CaseHistogram,
}

fn mean_kl(
    groups: &[PairedGroup],
    role: Role,
    g: &GeneratorParams,
    v: &VerifierParams,
    refs: &ReferenceSnapshot,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for grp in groups.iter().filter(|grp| route(grp.kind) == role) {
        let head = param_head(grp.kind, g, v);
        let r = param_head(grp.kind, refs.generator(), refs.verifier());
        sum += kl_to_reference(head, r, &grp.features, grp.n_actions)?.0;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Which groups a training variant builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DpaGrpo,
    /// Generator-only GRPO: verifier forced to NS, proposal groups only.
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DpaGrpo => "dpa_grpo",
            Method::Baseline => "grpo_generator_only",
        }
    }
}

fn rollout_config(features: FeatureConfig, cfg: &TrainConfig, method: Method) -> RolloutConfig {
    let mut rc = RolloutConfig::train(features, cfg.k);
    rc.temperature = cfg.temperature;
    if method == Method::Baseline {
        rc.force_verifier = Some(VerifierAction::Ns);
    }
    rc
}

/// One update: roll out, build groups, step θ then φ.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    tasks: &[Arc<TaskInstance>],
    generator: &mut GeneratorParams,
    verifier: &mut VerifierParams,
    refs: &ReferenceSnapshot,
    features: FeatureConfig,
    cfg: &TrainConfig,
    method: Method,
    step: usize,
) -> Result<StepMetrics> {
    let rc = rollout_config(features, cfg, method);
    let batch: Vec<Transition> = rollout_batch(
        tasks,
        generator,
        verifier,
        &rc,
        rng::mix(&[cfg.seed, step as u64, 0x5011]),
    )?;
    let hist = aggregate(&batch)?;
    if method == Method::DpaGrpo && hist.sac_rate < cfg.visitation_floor {
        return Err(Error::Visitation {
            step,
            rate: hist.sac_rate,
            floor: cfg.visitation_floor,
        });
    }
    let kinds: &[GroupKind] = match method {
        Method::DpaGrpo => &GroupKind::ALL,
        Method::Baseline => &[GroupKind::Proposal],
    };
    let groups = build_groups(&batch, generator, verifier, &features, cfg, step, kinds)?;
    let grads = compute_gradients(&groups, batch.len(), generator, verifier, refs, cfg)?;
    let (gg, gv) = grads.total()?;
    if !gg.is_finite() || !gv.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {step}")));
    }
    let eta = cfg.schedule.eta(step);
    verifier.intervene.add_scaled(&gv.intervene, -eta)?;
    generator.proposal.add_scaled(&gg.proposal, -eta)?;
    generator.revision.add_scaled(&gg.revision, -eta)?;
    generator.action.add_scaled(&gg.action, -eta)?;
    if !generator.is_finite() || !verifier.is_finite() {
        return Err(Error::NonFinite(format!("parameters after step {step}")));
    }
    let loss = |k| grads.loss[&k];
    let count = |k| grads.groups[&k];
    Ok(StepMetrics {
        step,
        eta,
        samples: batch.len(),
        loss_v: loss(GroupKind::Verifier),
        loss_f: loss(GroupKind::Proposal) + loss(GroupKind::Revision) + loss(GroupKind::Action),
        kl_v: mean_kl(&groups, Role::Verifier, generator, verifier, refs)?,
        kl_f: mean_kl(&groups, Role::Generator, generator, verifier, refs)?,
        sac_rate: hist.sac_rate,
        groups_verifier: count(GroupKind::Verifier),
        groups_action: count(GroupKind::Action),
        groups_proposal: count(GroupKind::Proposal),
        groups_revision: count(GroupKind::Revision),
        batch: hist,
    })
}

/// Case histogram of greedy (or stochastic) evaluation rollouts.
pub fn evaluate(
    tasks: &[Arc<TaskInstance>],
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    features: FeatureConfig,
    cfg: &TrainConfig,
    method: Method,
) -> Result<(CaseHistogram, Vec<Transition>)> {
    if tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rc = RolloutConfig::eval(features, cfg.k);
    rc.stochastic_eval = cfg.stochastic_eval;
    rc.temperature = cfg.temperature;
    if method == Method::Baseline {
        rc.force_verifier = Some(VerifierAction::Ns);
    }
    let trs = rollout_batch(
        tasks,
        generator,
        verifier,
        &rc,
        rng::mix(&[cfg.seed, 0xE7A1]),
    )?;
    Ok((aggregate(&trs)?, trs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub samples_seen: usize,
    pub split: String,
    pub histogram: CaseHistogram,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub method: Method,
    pub metrics: Vec<StepMetrics>,
    pub evals: Vec<EvalRecord>,
    pub generator: GeneratorParams,
    pub verifier: VerifierParams,
    pub final_transitions: Vec<TransitionRecord>,
}

impl TrainingRun {
    pub fn test_evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.evals.iter().filter(|e| e.split == "test")
    }

    pub fn initial_test(&self) -> Option<&EvalRecord> {
        self.test_evals().next()
    }

    pub fn final_test(&self) -> Option<&EvalRecord> {
        self.test_evals().last()
    }
}

/// Held-in diagnostic tasks reported alongside the test split.
pub const TRAIN_DIAGNOSTIC_TASKS: usize = 3;

/// Full loop from zero-initialized policies, which also serve as references.
pub fn train_loop(
    cfg: &TrainConfig,
    features: FeatureConfig,
    train: &[Arc<TaskInstance>],
    test: &[Arc<TaskInstance>],
    method: Method,
) -> Result<TrainingRun> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = GeneratorParams::zeros(&features);
    let mut v = VerifierParams::zeros(&features);
    let refs = ReferenceSnapshot::capture(&g, &v);
    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    let mut samples = 0usize;
    let diag = &train[..TRAIN_DIAGNOSTIC_TASKS.min(train.len())];

    let mut record = |step: usize,
                      samples: usize,
                      g: &GeneratorParams,
                      v: &VerifierParams|
     -> Result<Vec<Transition>> {
        let (h, trs) = evaluate(test, g, v, features, cfg, method)?;
        evals.push(EvalRecord {
            step,
            samples_seen: samples,
            split: "test".into(),
            histogram: h,
        });
        let (hd, _) = evaluate(diag, g, v, features, cfg, method)?;
        evals.push(EvalRecord {
            step,
            samples_seen: samples,
            split: "train_diag".into(),
            histogram: hd,
        });
        Ok(trs)
    };

    let mut last = record(0, 0, &g, &v)?;
    for step in 0..cfg.max_steps {
        let mut pick = rng::stream(&[cfg.seed, step as u64, 0xBA7C]);
        let batch: Vec<Arc<TaskInstance>> = train
            .choose_multiple(&mut pick, cfg.batch_tasks.min(train.len()))
            .cloned()
            .collect();
        let m = train_step(&batch, &mut g, &mut v, &refs, features, cfg, method, step)?;
        samples += m.samples;
        log::debug!(
            "{} step {step}: acc {:.4} sac {:.4}",
            method.name(),
            m.batch.accuracy,
            m.sac_rate
        );
        metrics.push(m);
        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.max_steps {
            last = record(done, samples, &g, &v)?;
        }
    }
    Ok(TrainingRun {
        method,
        metrics,
        evals,
        generator: g,
        verifier: v,
        final_transitions: last.iter().map(Transition::to_record).collect(),
    })
}

pub fn baseline_grpo_generator_only(
    cfg: &TrainConfig,
    features: FeatureConfig,
    train: &[Arc<TaskInstance>],
    test: &[Arc<TaskInstance>],
) -> Result<TrainingRun> {
    train_loop(cfg, features, train, test, Method::Baseline)
}
