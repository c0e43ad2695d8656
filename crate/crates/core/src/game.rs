//! One round of the generator–verifier interaction per decision unit, the
//! eight-way case taxonomy, and batch diagnostics.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policies::{argmax, log_probs, tempered_distribution, GeneratorParams, VerifierParams};
use crate::rng;
use crate::sac::{
    emit_sac, sac_correct_label, score_sac, SacScore, SafetyAssuranceCase, TEMPLATE_COUNT,
};
use crate::task_env::{
    advance, featurize, score_correct, Cents, DecisionContext, FeatureConfig, RoleTag, TaskInstance,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifierAction {
    Ns,
    Sac,
}

impl VerifierAction {
    pub const ALL: [VerifierAction; 2] = [VerifierAction::Ns, VerifierAction::Sac];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GeneratorAction {
    Keep,
    Revise,
}

impl GeneratorAction {
    pub const ALL: [GeneratorAction; 2] = [GeneratorAction::Keep, GeneratorAction::Revise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    /// Sampled actions; best-of-K revisions selected by oracle correctness.
    Train,
    /// Greedy actions unless `stochastic_eval`; no oracle in the loop.
    Eval,
}

#[derive(Clone, Debug)]
pub struct RolloutConfig {
    pub features: FeatureConfig,
    pub mode: RolloutMode,
    pub k: usize,
    pub stochastic_eval: bool,
    pub temperature: f64,
    pub force_verifier: Option<VerifierAction>,
    pub force_action: Option<GeneratorAction>,
}

impl RolloutConfig {
    pub fn train(features: FeatureConfig, k: usize) -> Self {
        Self {
            features,
            mode: RolloutMode::Train,
            k,
            stochastic_eval: false,
            temperature: 1.0,
            force_verifier: None,
            force_action: None,
        }
    }

    pub fn eval(features: FeatureConfig, k: usize) -> Self {
        Self {
            mode: RolloutMode::Eval,
            ..Self::train(features, k)
        }
    }

    fn greedy(&self) -> bool {
        self.mode == RolloutMode::Eval && !self.stochastic_eval
    }
}

/// Log-probabilities of each decision as sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogProbs {
    pub proposal: f64,
    pub verifier: Option<f64>,
    pub template: Option<f64>,
    pub revision: Option<f64>,
    pub action: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub context: DecisionContext,
    pub proposal: Cents,
    pub proposal_slot: usize,
    pub verifier_action: VerifierAction,
    pub sac: Option<SafetyAssuranceCase>,
    pub revision: Option<Cents>,
    pub revision_candidates: Option<Vec<Cents>>,
    pub revision_fallback: bool,
    pub generator_action: GeneratorAction,
    pub submitted: Cents,
    pub s_x: u8,
    pub s_z: Option<u8>,
    pub c_sac: u8,
    pub sac_score: Option<SacScore>,
    pub logp: LogProbs,
}

/// Serialized form of a transition (one JSON object per log line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub task_id: String,
    pub unit_index: usize,
    pub submitted_prefix: Vec<Cents>,
    pub proposal: Cents,
    pub verifier_action: VerifierAction,
    pub sac: Option<SafetyAssuranceCase>,
    pub revision: Option<Cents>,
    pub revision_candidates: Option<Vec<Cents>>,
    pub revision_fallback: bool,
    pub generator_action: GeneratorAction,
    pub submitted: Cents,
    pub s_x: u8,
    pub s_z: Option<u8>,
    pub c_sac: u8,
    pub sac_score: Option<SacScore>,
    pub case: CaseLabel,
    pub logp: LogProbs,
}

impl Transition {
    pub fn to_record(&self) -> TransitionRecord {
        TransitionRecord {
            task_id: self.context.task.id.clone(),
            unit_index: self.context.unit_index,
            submitted_prefix: self.context.submitted_prefix.clone(),
            proposal: self.proposal,
            verifier_action: self.verifier_action,
            sac: self.sac.clone(),
            revision: self.revision,
            revision_candidates: self.revision_candidates.clone(),
            revision_fallback: self.revision_fallback,
            generator_action: self.generator_action,
            submitted: self.submitted,
            s_x: self.s_x,
            s_z: self.s_z,
            c_sac: self.c_sac,
            sac_score: self.sac_score,
            case: classify_case(self),
            logp: self.logp.clone(),
        }
    }

    /// Checks the structural invariants every rollout must satisfy.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.c_sac != 1 - self.s_x {
            return Err("c_sac != 1 - S_x".into());
        }
        match self.verifier_action {
            VerifierAction::Ns => {
                if self.sac.is_some() || self.revision.is_some() || self.s_z.is_some() {
                    return Err("NS transition carries SAC-branch fields".into());
                }
                if self.submitted != self.proposal || self.generator_action != GeneratorAction::Keep
                {
                    return Err("NS transition must keep the proposal".into());
                }
            }
            VerifierAction::Sac => {
                let z = self.revision.ok_or("SAC transition without revision")?;
                if self.sac.is_none() || self.s_z.is_none() {
                    return Err("SAC transition missing SAC or S_z".into());
                }
                let expected = match self.generator_action {
                    GeneratorAction::Keep => self.proposal,
                    GeneratorAction::Revise => z,
                };
                if self.submitted != expected {
                    return Err("submitted value does not follow the generator action".into());
                }
            }
        }
        Ok(())
    }
}

fn choose(p: &[f64], greedy: bool, rng: &mut ChaCha8Rng) -> usize {
    if greedy {
        return argmax(p);
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    p.len() - 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct RevisionChoice {
    pub value: Cents,
    pub slot: Option<usize>,
    pub candidates: Vec<Cents>,
    pub fallback: bool,
    pub logp: Option<f64>,
}

/// Draws `k` revision candidates, drops invalid ones, and picks one.
///
/// A candidate is invalid when it is malformed for the unit or repeats the
/// proposal. Greedy mode takes the `k` most probable distinct slots instead
/// of sampling. With `oracle_select` an oracle-correct survivor wins;
/// otherwise, and among ties, the highest-probability survivor wins, then
/// the lowest draw index. If nothing survives, the SAC's suggested
/// correction is used (or the proposal itself when the SAC carries none).
#[allow(clippy::too_many_arguments)]
pub fn best_of_k_revision(
    generator: &GeneratorParams,
    ctx: &DecisionContext,
    proposal: Cents,
    sac: &SafetyAssuranceCase,
    k: usize,
    oracle_select: bool,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RevisionChoice> {
    if k == 0 {
        return Err(Error::Config("best-of-K needs K >= 1".into()));
    }
    let f = featurize(
        ctx,
        Some(proposal),
        Some(sac),
        None,
        RoleTag::GeneratorRevision,
        &cfg.features,
    )?;
    let candidates = ctx.task.candidate_set(ctx.unit_index)?;
    let n = candidates.len();
    let p = tempered_distribution(&generator.revision, &f.values, n, cfg.temperature)?;
    let lp = log_probs(&generator.revision, &f.values, n)?;
    let draws: Vec<usize> = if cfg.greedy() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    } else {
        (0..k).map(|_| choose(&p, false, rng)).collect()
    };
    let values: Vec<Cents> = draws.iter().map(|&s| candidates.values[s]).collect();

    let mut best: Option<(usize, bool, f64)> = None; // (draw index, correct, prob)
    for (i, (&slot, &v)) in draws.iter().zip(&values).enumerate() {
        if v == proposal || !ctx.task.well_formed(ctx.unit_index, v)? {
            continue;
        }
        let correct = oracle_select && score_correct(v, &ctx.task, ctx.unit_index)? == 1;
        let better = match best {
            None => true,
            Some((_, bc, bp)) => (correct && !bc) || (correct == bc && p[slot] > bp),
        };
        if better {
            best = Some((i, correct, p[slot]));
        }
    }
    Ok(match best {
        Some((i, _, _)) => RevisionChoice {
            value: values[i],
            slot: Some(draws[i]),
            candidates: values,
            fallback: false,
            logp: Some(lp[draws[i]]),
        },
        None => {
            log::debug!(
                "task {} unit {}: no valid revision among {k} candidates, using fallback",
                ctx.task.id,
                ctx.unit_index
            );
            RevisionChoice {
                value: sac.suggested_correction.unwrap_or(proposal),
                slot: None,
                candidates: values,
                fallback: true,
                logp: None,
            }
        }
    })
}

/// Runs the full protocol for one decision unit.
pub fn rollout_unit(
    ctx: &DecisionContext,
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Transition> {
    ctx.task.check_unit(ctx.unit_index)?;
    let greedy = cfg.greedy();
    let candidates = ctx.task.candidate_set(ctx.unit_index)?;
    let n = candidates.len();

    let fx = featurize(
        ctx,
        None,
        None,
        None,
        RoleTag::GeneratorProposal,
        &cfg.features,
    )?;
    let px = tempered_distribution(&generator.proposal, &fx.values, n, cfg.temperature)?;
    let slot = choose(&px, greedy, rng);
    let x = candidates.values[slot];
    let lpx = log_probs(&generator.proposal, &fx.values, n)?[slot];
    let s_x = score_correct(x, &ctx.task, ctx.unit_index)?;
    let c_sac = sac_correct_label(s_x);

    let fv = featurize(ctx, Some(x), None, None, RoleTag::Verifier, &cfg.features)?;
    let (y, lpy) = match cfg.force_verifier {
        Some(y) => (y, None),
        None => {
            let pv = tempered_distribution(&verifier.intervene, &fv.values, 2, cfg.temperature)?;
            let y = choose(&pv, greedy, rng);
            (
                VerifierAction::from_index(y),
                Some(log_probs(&verifier.intervene, &fv.values, 2)?[y]),
            )
        }
    };

    let mut tr = Transition {
        context: ctx.clone(),
        proposal: x,
        proposal_slot: slot,
        verifier_action: y,
        sac: None,
        revision: None,
        revision_candidates: None,
        revision_fallback: false,
        generator_action: GeneratorAction::Keep,
        submitted: x,
        s_x,
        s_z: None,
        c_sac,
        sac_score: None,
        logp: LogProbs {
            proposal: lpx,
            verifier: lpy,
            template: None,
            revision: None,
            action: None,
        },
    };
    if y == VerifierAction::Ns {
        return Ok(tr);
    }

    let pt = tempered_distribution(
        &verifier.template,
        &fv.values,
        TEMPLATE_COUNT,
        cfg.temperature,
    )?;
    let template = choose(&pt, greedy, rng);
    tr.logp.template = Some(log_probs(&verifier.template, &fv.values, TEMPLATE_COUNT)?[template]);
    let sac = emit_sac(ctx, x, template)?;
    tr.sac_score = Some(score_sac(&sac, ctx, x));

    let oracle_select = cfg.mode == RolloutMode::Train;
    let rev = best_of_k_revision(generator, ctx, x, &sac, cfg.k, oracle_select, cfg, rng)?;
    let z = rev.value;
    let s_z = score_correct(z, &ctx.task, ctx.unit_index)?;

    let fa = featurize(
        ctx,
        Some(x),
        Some(&sac),
        Some(z),
        RoleTag::GeneratorAction,
        &cfg.features,
    )?;
    let a = match cfg.force_action {
        Some(a) => a,
        None => {
            let pa = tempered_distribution(&generator.action, &fa.values, 2, cfg.temperature)?;
            let a = choose(&pa, greedy, rng);
            tr.logp.action = Some(log_probs(&generator.action, &fa.values, 2)?[a]);
            GeneratorAction::from_index(a)
        }
    };

    tr.sac = Some(sac);
    tr.revision = Some(z);
    tr.revision_candidates = Some(rev.candidates);
    tr.revision_fallback = rev.fallback;
    tr.logp.revision = rev.logp;
    tr.s_z = Some(s_z);
    tr.generator_action = a;
    tr.submitted = match a {
        GeneratorAction::Keep => x,
        GeneratorAction::Revise => z,
    };
    Ok(tr)
}

/// Plays every unit of one task in order, seeding from `(seed, task id)`.
pub fn rollout_episode(
    task: &Arc<TaskInstance>,
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<Transition>> {
    let mut rng = rng::stream(&[seed, rng::str_key(&task.id)]);
    let mut ctx = DecisionContext::start(Arc::clone(task));
    let mut out = Vec::with_capacity(task.horizon);
    while !ctx.is_terminal() {
        let tr = rollout_unit(&ctx, generator, verifier, cfg, &mut rng)?;
        ctx = advance(&ctx, tr.submitted)?;
        out.push(tr);
    }
    Ok(out)
}

/// Rolls out tasks in parallel; output is ordered by (task id, unit index).
pub fn rollout_batch(
    tasks: &[Arc<TaskInstance>],
    generator: &GeneratorParams,
    verifier: &VerifierParams,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<Transition>> {
    let episodes: Vec<Vec<Transition>> = tasks
        .par_iter()
        .map(|t| rollout_episode(t, generator, verifier, cfg, seed))
        .collect::<Result<_>>()?;
    let mut all: Vec<Transition> = episodes.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        (&a.context.task.id, a.context.unit_index).cmp(&(&b.context.task.id, b.context.unit_index))
    });
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseLabel {
    C1,
    C2,
    C3,
    C4,
    C5A,
    C5B,
    C6A,
    C6B,
}

impl CaseLabel {
    pub const ALL: [CaseLabel; 8] = [
        CaseLabel::C1,
        CaseLabel::C2,
        CaseLabel::C3,
        CaseLabel::C4,
        CaseLabel::C5A,
        CaseLabel::C5B,
        CaseLabel::C6A,
        CaseLabel::C6B,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            CaseLabel::C1 => "c1",
            CaseLabel::C2 => "c2",
            CaseLabel::C3 => "c3",
            CaseLabel::C4 => "c4",
            CaseLabel::C5A => "c5a",
            CaseLabel::C5B => "c5b",
            CaseLabel::C6A => "c6a",
            CaseLabel::C6B => "c6b",
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Taxonomy lookup on `(S_x, y, a, S_z)`.
pub fn classify(s_x: u8, y: VerifierAction, a: GeneratorAction, s_z: Option<u8>) -> CaseLabel {
    use GeneratorAction::*;
    use VerifierAction::*;
    match (s_x, y, a, s_z.unwrap_or(0)) {
        (1, Ns, _, _) => CaseLabel::C1,
        (1, Sac, Revise, _) => CaseLabel::C2,
        (1, Sac, Keep, _) => CaseLabel::C3,
        (_, Ns, _, _) => CaseLabel::C4,
        (_, Sac, Revise, 1) => CaseLabel::C5A,
        (_, Sac, Revise, _) => CaseLabel::C5B,
        (_, Sac, Keep, 0) => CaseLabel::C6A,
        (_, Sac, Keep, _) => CaseLabel::C6B,
    }
}

pub fn classify_case(tr: &Transition) -> CaseLabel {
    classify(tr.s_x, tr.verifier_action, tr.generator_action, tr.s_z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseHistogram {
    pub counts: [usize; 8],
    pub total: usize,
    pub rates: [f64; 8],
    /// Fraction of transitions whose submitted value is correct.
    pub accuracy: f64,
    /// Case-2 transitions whose revision is also correct (revised to the same value).
    pub c2_revised_correct: usize,
    pub sac_rate: f64,
    pub mean_sac_score: Option<f64>,
}

impl CaseHistogram {
    pub fn rate(&self, c: CaseLabel) -> f64 {
        self.rates[c.index()]
    }

    /// Accuracy recomputed from the case composition: C1, C3 and C5A submit
    /// a correct value, and so does a C2 revision that is itself correct.
    pub fn accuracy_from_cases(&self) -> f64 {
        let n = self.total as f64;
        (self.counts[CaseLabel::C1.index()]
            + self.counts[CaseLabel::C3.index()]
            + self.counts[CaseLabel::C5A.index()]
            + self.c2_revised_correct) as f64
            / n
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!("total={}\n", self.total);
        for c in CaseLabel::ALL {
            s += &format!("count_{}={}\n", c.key(), self.counts[c.index()]);
        }
        for c in CaseLabel::ALL {
            s += &format!("rate_{}={:.10}\n", c.key(), self.rate(c));
        }
        s += &format!("accuracy={:.10}\n", self.accuracy);
        s += &format!("sac_rate={:.10}\n", self.sac_rate);
        s += &format!("c2_revised_correct={}\n", self.c2_revised_correct);
        if let Some(q) = self.mean_sac_score {
            s += &format!("mean_sac_score={q:.10}\n");
        }
        s
    }
}

pub fn aggregate(batch: &[Transition]) -> Result<CaseHistogram> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut counts = [0usize; 8];
    let mut correct = 0usize;
    let mut c2_ok = 0usize;
    let mut sac_scores = Vec::new();
    for tr in batch {
        let c = classify_case(tr);
        counts[c.index()] += 1;
        correct += score_correct(tr.submitted, &tr.context.task, tr.context.unit_index)? as usize;
        if c == CaseLabel::C2 && tr.s_z == Some(1) {
            c2_ok += 1;
        }
        if let Some(s) = tr.sac_score {
            sac_scores.push(s.value);
        }
    }
    let n = batch.len() as f64;
    let mut rates = [0.0; 8];
    for (r, &c) in rates.iter_mut().zip(&counts) {
        *r = c as f64 / n;
    }
    Ok(CaseHistogram {
        counts,
        total: batch.len(),
        rates,
        accuracy: correct as f64 / n,
        c2_revised_correct: c2_ok,
        sac_rate: sac_scores.len() as f64 / n,
        mean_sac_score: (!sac_scores.is_empty())
            .then(|| sac_scores.iter().sum::<f64>() / sac_scores.len() as f64),
    })
}
