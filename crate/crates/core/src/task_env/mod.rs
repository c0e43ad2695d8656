//! Synthetic structured tasks: a set of integer input fields and a DAG of
//! line rules, each line scored exactly against a ground-truth evaluation.
//!
//! All monetary values are integer cents. Bracket rates are basis points.

mod candidates;
mod features;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub use candidates::CandidateSet;
pub use features::{featurize, FeatureConfig, FeatureVector, RoleTag};

pub type Cents = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleKind {
    Sum,
    Diff,
    ClampNonneg,
    BracketLookup,
    Copy,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Sum,
        RuleKind::Diff,
        RuleKind::ClampNonneg,
        RuleKind::BracketLookup,
        RuleKind::Copy,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RuleKind> {
        Self::ALL.get(i).copied()
    }
}

/// Reference to an input field (by name) or an earlier line (by index).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ref {
    Input(String),
    Line(usize),
}

/// Marginal-rate bracket schedule: rate `rates_bp[i]` applies to the part of
/// the amount between `thresholds[i]` and `thresholds[i + 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub thresholds: Vec<Cents>,
    pub rates_bp: Vec<i64>,
}

impl Bracket {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.len() != self.rates_bp.len() {
            return Err(Error::InvalidDifficulty(
                "bracket needs one rate per threshold".into(),
            ));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDifficulty(
                "bracket thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Piecewise-linear amount owed on `x`, rounded half away from zero to
    /// whole cents.
    pub fn apply(&self, x: Cents) -> Cents {
        self.apply_with_rates(x, &self.rates_bp)
    }

    pub(crate) fn apply_with_rates(&self, x: Cents, rates_bp: &[i64]) -> Cents {
        let mut numer: i128 = 0;
        for (i, (&lo, &rate)) in self.thresholds.iter().zip(rates_bp).enumerate() {
            if x <= lo {
                break;
            }
            let hi = self.thresholds.get(i + 1).copied().unwrap_or(Cents::MAX);
            let span = x.min(hi) - lo;
            numer += i128::from(span) * i128::from(rate);
        }
        let q = numer / 10_000;
        let r = numer % 10_000;
        (if r * 2 >= 10_000 { q + 1 } else { q }) as Cents
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRule {
    pub kind: RuleKind,
    pub operands: Vec<Ref>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<Bracket>,
}

impl LineRule {
    /// Evaluates the rule with operand values supplied by `lookup`.
    pub fn apply(&self, mut lookup: impl FnMut(&Ref) -> Cents) -> Cents {
        match self.kind {
            RuleKind::Sum => self.operands.iter().map(&mut lookup).sum(),
            RuleKind::Diff => lookup(&self.operands[0]) - lookup(&self.operands[1]),
            RuleKind::ClampNonneg => lookup(&self.operands[0]).max(0),
            RuleKind::BracketLookup => {
                let b = self
                    .bracket
                    .as_ref()
                    .expect("bracket rule without schedule");
                b.apply(lookup(&self.operands[0]))
            }
            RuleKind::Copy => lookup(&self.operands[0]),
        }
    }

    /// Output schema: clamp and bracket lines never produce negative values.
    pub fn requires_nonnegative(&self) -> bool {
        matches!(self.kind, RuleKind::ClampNonneg | RuleKind::BracketLookup)
    }

    fn arity_ok(&self) -> bool {
        match self.kind {
            RuleKind::Sum => !self.operands.is_empty(),
            RuleKind::Diff => self.operands.len() == 2,
            _ => self.operands.len() == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, Cents>,
    pub lines: Vec<LineRule>,
    /// Line indices scored as decision units, in increasing order.
    pub evaluated_units: Vec<usize>,
    pub horizon: usize,
    /// Candidate values per decision unit, aligned with `evaluated_units`.
    pub candidates: Vec<Vec<Cents>>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDifficulty(format!("task {}: {m}", self.id)));
        if self.horizon == 0 || self.horizon != self.evaluated_units.len() {
            return bad("horizon must equal the (nonzero) number of evaluated units".into());
        }
        if self.evaluated_units.windows(2).any(|w| w[0] >= w[1])
            || self.evaluated_units.iter().any(|&l| l >= self.lines.len())
        {
            return bad("evaluated units must be increasing valid line indices".into());
        }
        for (i, rule) in self.lines.iter().enumerate() {
            if !rule.arity_ok() {
                return bad(format!("line {i} has wrong operand count"));
            }
            for op in &rule.operands {
                match op {
                    Ref::Input(name) if !self.inputs.contains_key(name) => {
                        return bad(format!("line {i} references unknown input {name}"))
                    }
                    Ref::Line(j) if *j >= i => {
                        return bad(format!("line {i} references non-earlier line {j}"))
                    }
                    _ => {}
                }
            }
            match (&rule.bracket, rule.kind) {
                (Some(b), RuleKind::BracketLookup) => b.validate()?,
                (None, RuleKind::BracketLookup) => return bad(format!("line {i} lacks brackets")),
                _ => {}
            }
        }
        if self.candidates.len() != self.horizon {
            return bad("one candidate set per unit required".into());
        }
        Ok(())
    }

    /// Ground-truth values of every line, evaluated in topological (index) order.
    pub fn ground_truth(&self) -> Vec<Cents> {
        let mut values: Vec<Cents> = Vec::with_capacity(self.lines.len());
        for rule in &self.lines {
            let v = rule.apply(|r| match r {
                Ref::Input(name) => self.inputs[name],
                Ref::Line(j) => values[*j],
            });
            values.push(v);
        }
        values
    }

    pub fn check_unit(&self, unit_index: usize) -> Result<()> {
        if unit_index == 0 || unit_index > self.horizon {
            return Err(Error::UnitIndex {
                index: unit_index,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Line index of a 1-based decision unit.
    pub fn unit_line(&self, unit_index: usize) -> Result<usize> {
        self.check_unit(unit_index)?;
        Ok(self.evaluated_units[unit_index - 1])
    }

    pub fn unit_rule(&self, unit_index: usize) -> Result<&LineRule> {
        Ok(&self.lines[self.unit_line(unit_index)?])
    }

    pub fn candidate_set(&self, unit_index: usize) -> Result<CandidateSet> {
        self.check_unit(unit_index)?;
        Ok(CandidateSet {
            values: self.candidates[unit_index - 1].clone(),
        })
    }

    /// Whether `value` fits the unit's output schema.
    pub fn well_formed(&self, unit_index: usize, value: Cents) -> Result<bool> {
        Ok(!self.unit_rule(unit_index)?.requires_nonnegative() || value >= 0)
    }
}

/// Ground-truth value of a decision unit. Never reads submitted outputs.
pub fn oracle_value(task: &TaskInstance, unit_index: usize) -> Result<Cents> {
    let line = task.unit_line(unit_index)?;
    Ok(task.ground_truth()[line])
}

/// Strict-correctness bit: 1 iff `proposed` equals the oracle value exactly.
pub fn score_correct(proposed: Cents, task: &TaskInstance, unit_index: usize) -> Result<u8> {
    Ok(u8::from(proposed == oracle_value(task, unit_index)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyConfig {
    pub min_lines: usize,
    pub max_lines: usize,
    pub min_inputs: usize,
    pub max_inputs: usize,
    /// Evaluate at most this many lines (the last ones of the form).
    pub max_evaluated: usize,
    pub distractors: usize,
    /// Noise on verifier residual features.
    pub feature_noise: f64,
    /// Noise on generator plausibility features.
    pub generator_noise: f64,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        Self {
            min_lines: 5,
            max_lines: 8,
            min_inputs: 4,
            max_inputs: 7,
            max_evaluated: 64,
            distractors: 5,
            feature_noise: 0.5,
            generator_noise: 0.8,
        }
    }
}

impl DifficultyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDifficulty(m.into()));
        if self.max_lines == 0 {
            return bad("zero lines");
        }
        if self.min_lines > self.max_lines || self.min_lines == 0 {
            return bad("line range must satisfy 1 <= min <= max");
        }
        if self.max_evaluated == 0 {
            return bad("zero evaluated units");
        }
        if self.min_inputs < 2 || self.min_inputs > self.max_inputs {
            return bad("input range must satisfy 2 <= min <= max");
        }
        if self.distractors == 0 {
            return bad("need at least one distractor");
        }
        if !(self.feature_noise >= 0.0 && self.generator_noise >= 0.0)
            || !self.feature_noise.is_finite()
            || !self.generator_noise.is_finite()
        {
            return bad("noise levels must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            slots: self.distractors + 1,
            feature_noise: self.feature_noise,
            generator_noise: self.generator_noise,
        }
    }
}

fn pick_refs(rng: &mut impl Rng, pool: &[Ref], n: usize) -> Vec<Ref> {
    pool.choose_multiple(rng, n.min(pool.len()))
        .cloned()
        .collect()
}

pub fn generate_task(seed: u64, difficulty: &DifficultyConfig) -> Result<TaskInstance> {
    generate_task_with_id(format!("task-{seed:016x}"), seed, difficulty)
}

fn generate_task_with_id(id: String, seed: u64, d: &DifficultyConfig) -> Result<TaskInstance> {
    d.validate()?;
    let mut rng = rng::stream(&[seed, 0x7A5C]);
    let n_inputs = rng.gen_range(d.min_inputs..=d.max_inputs);
    let n_lines = rng.gen_range(d.min_lines..=d.max_lines);

    let inputs: BTreeMap<String, Cents> = (0..n_inputs)
        .map(|i| (format!("in_{i:02}"), 100 * rng.gen_range(0..=20_000i64)))
        .collect();
    let input_refs: Vec<Ref> = inputs.keys().cloned().map(Ref::Input).collect();

    let mut lines: Vec<LineRule> = Vec::with_capacity(n_lines);
    let n_first = rng.gen_range(2..=3usize);
    lines.push(LineRule {
        kind: RuleKind::Sum,
        operands: pick_refs(&mut rng, &input_refs, n_first),
        bracket: None,
    });
    for i in 1..n_lines {
        let mut pool = input_refs.clone();
        pool.extend((0..i).map(Ref::Line));
        let diff_lines: Vec<usize> = (0..i)
            .filter(|&j| lines[j].kind == RuleKind::Diff)
            .collect();
        let earlier = Ref::Line(rng.gen_range(0..i));
        let roll = rng.gen_range(0..10u32);
        let rule = match roll {
            0..=2 => {
                let n = rng.gen_range(2..=3usize);
                LineRule {
                    kind: RuleKind::Sum,
                    operands: pick_refs(&mut rng, &pool, n),
                    bracket: None,
                }
            }
            3..=4 => {
                let ops = vec![earlier, pick_refs(&mut rng, &input_refs, 1).remove(0)];
                LineRule {
                    kind: RuleKind::Diff,
                    operands: ops,
                    bracket: None,
                }
            }
            5..=6 if !diff_lines.is_empty() => {
                let j = *diff_lines.choose(&mut rng).expect("nonempty");
                LineRule {
                    kind: RuleKind::ClampNonneg,
                    operands: vec![Ref::Line(j)],
                    bracket: None,
                }
            }
            5..=6 => {
                let ops = vec![pick_refs(&mut rng, &input_refs, 1).remove(0), earlier];
                LineRule {
                    kind: RuleKind::Diff,
                    operands: ops,
                    bracket: None,
                }
            }
            7..=8 => LineRule {
                kind: RuleKind::BracketLookup,
                operands: vec![earlier],
                bracket: Some(random_bracket(&mut rng)),
            },
            _ => LineRule {
                kind: RuleKind::Copy,
                operands: vec![earlier],
                bracket: None,
            },
        };
        lines.push(rule);
    }

    let n_eval = n_lines.min(d.max_evaluated);
    let evaluated_units: Vec<usize> = (n_lines - n_eval..n_lines).collect();
    let mut task = TaskInstance {
        id,
        seed,
        inputs,
        lines,
        horizon: evaluated_units.len(),
        evaluated_units,
        candidates: Vec::new(),
    };
    let truth = task.ground_truth();
    task.candidates = (1..=task.horizon)
        .map(|t| candidates::build(&task, &truth, t, d.distractors))
        .collect();
    task.validate()?;
    Ok(task)
}

fn random_bracket(rng: &mut impl Rng) -> Bracket {
    let n = rng.gen_range(2..=4usize);
    let mut thresholds = vec![0];
    let mut rates_bp = vec![100 * rng.gen_range(5..=15i64)];
    for _ in 1..n {
        let step = 100_000 * rng.gen_range(5..=30i64);
        thresholds.push(thresholds.last().unwrap() + step);
        let bump = 100 * rng.gen_range(2..=10i64);
        rates_bp.push(rates_bp.last().unwrap() + bump);
    }
    Bracket {
        thresholds,
        rates_bp,
    }
}

/// Generates `n` tasks whose seeds derive from `seed`.
pub fn generate_corpus(n: usize, seed: u64, d: &DifficultyConfig) -> Result<Vec<TaskInstance>> {
    (0..n as u64)
        .map(|i| generate_task_with_id(format!("t{seed}-{i:05}"), rng::mix(&[seed, i]), d))
        .collect()
}

/// Task-level train/test split with its own seed.
pub fn split_corpus(
    corpus: Vec<TaskInstance>,
    train_fraction: f64,
    split_seed: u64,
) -> (Vec<TaskInstance>, Vec<TaskInstance>) {
    let n = corpus.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(&[split_seed, 0x5711]));
    let train_idx: std::collections::BTreeSet<usize> = order[..n_train].iter().copied().collect();
    let (train, test): (Vec<_>, Vec<_>) = corpus
        .into_iter()
        .enumerate()
        .partition(|(i, _)| train_idx.contains(i));
    (
        train.into_iter().map(|(_, t)| t).collect(),
        test.into_iter().map(|(_, t)| t).collect(),
    )
}

/// Writes one JSON task record per line.
pub fn write_corpus(w: &mut impl Write, tasks: &[TaskInstance]) -> Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut *w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(r: impl BufRead) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(&line)?;
        task.validate()?;
        out.push(task);
    }
    Ok(out)
}

/// The state `(task, unit, submitted prefix)` at one decision unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionContext {
    pub task: Arc<TaskInstance>,
    pub unit_index: usize,
    pub submitted_prefix: Vec<Cents>,
}

impl DecisionContext {
    pub fn start(task: Arc<TaskInstance>) -> Self {
        Self {
            task,
            unit_index: 1,
            submitted_prefix: Vec::new(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.unit_index > self.task.horizon
    }

    pub fn line(&self) -> Result<usize> {
        self.task.unit_line(self.unit_index)
    }

    pub fn rule(&self) -> Result<&LineRule> {
        self.task.unit_rule(self.unit_index)
    }

    /// Value of a reference as visible in this context: inputs as given,
    /// earlier evaluated lines as submitted, other earlier lines at their
    /// ground truth. `None` if the reference does not resolve.
    pub fn visible_value(&self, r: &Ref) -> Option<Cents> {
        match r {
            Ref::Input(name) => self.task.inputs.get(name).copied(),
            Ref::Line(j) => {
                let current = self.line().ok()?;
                if *j >= current {
                    return None;
                }
                match self.task.evaluated_units.iter().position(|l| l == j) {
                    Some(u) => self.submitted_prefix.get(u).copied(),
                    None => Some(self.task.ground_truth()[*j]),
                }
            }
        }
    }
}

/// Appends the submitted value and moves to the next unit.
pub fn advance(ctx: &DecisionContext, submitted: Cents) -> Result<DecisionContext> {
    if ctx.is_terminal() {
        return Err(Error::Terminal(ctx.unit_index));
    }
    let mut prefix = ctx.submitted_prefix.clone();
    prefix.push(submitted);
    Ok(DecisionContext {
        task: Arc::clone(&ctx.task),
        unit_index: ctx.unit_index + 1,
        submitted_prefix: prefix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(kind: RuleKind, operands: Vec<Ref>, bracket: Option<Bracket>) -> TaskInstance {
        let inputs: BTreeMap<String, Cents> = [
            ("A".to_string(), 3),
            ("B".to_string(), 4),
            ("C".to_string(), 10),
        ]
        .into();
        let lines = vec![LineRule {
            kind,
            operands,
            bracket,
        }];
        TaskInstance {
            id: "fx".into(),
            seed: 0,
            inputs,
            lines,
            evaluated_units: vec![0],
            horizon: 1,
            candidates: vec![vec![0, 1]],
        }
    }

    #[test]
    fn sum_of_inputs() {
        let t = fixture(
            RuleKind::Sum,
            vec![Ref::Input("A".into()), Ref::Input("B".into())],
            None,
        );
        assert_eq!(oracle_value(&t, 1).unwrap(), 7);
    }

    #[test]
    fn clamp_of_negative_difference() {
        let mut t = fixture(
            RuleKind::Diff,
            vec![Ref::Input("A".into()), Ref::Input("C".into())],
            None,
        );
        t.lines.push(LineRule {
            kind: RuleKind::ClampNonneg,
            operands: vec![Ref::Line(0)],
            bracket: None,
        });
        t.evaluated_units = vec![0, 1];
        t.horizon = 2;
        t.candidates.push(vec![0, 1]);
        t.validate().unwrap();
        assert_eq!(oracle_value(&t, 1).unwrap(), -7);
        assert_eq!(oracle_value(&t, 2).unwrap(), 0);
    }

    #[test]
    fn bracket_marginal_rates() {
        // thresholds [0, 10], rates [0.1, 0.2], amount 15 -> 10*0.1 + 5*0.2 = 2.0
        let b = Bracket {
            thresholds: vec![0, 1000],
            rates_bp: vec![1000, 2000],
        };
        assert_eq!(b.apply(1500), 200);
        assert_eq!(b.apply(0), 0);
        assert_eq!(b.apply(-50), 0);
        assert_eq!(b.apply(1000), 100);
        // half-cent rounds away from zero: 5 cents at 10% = 0.5 cents
        assert_eq!(b.apply(5), 1);
    }

    #[test]
    fn bracket_thresholds_must_increase() {
        let b = Bracket {
            thresholds: vec![0, 0],
            rates_bp: vec![1, 2],
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn generated_tasks_are_deterministic_and_valid() {
        let d = DifficultyConfig::default();
        let a = generate_task(7, &d).unwrap();
        let b = generate_task(7, &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        a.validate().unwrap();
        let truth = a.ground_truth();
        let sum = a
            .lines
            .iter()
            .enumerate()
            .find(|(_, l)| l.kind == RuleKind::Sum)
            .unwrap();
        let expected: Cents = sum
            .1
            .operands
            .iter()
            .map(|r| match r {
                Ref::Input(n) => a.inputs[n],
                Ref::Line(j) => truth[*j],
            })
            .sum();
        assert_eq!(truth[sum.0], expected);
    }

    #[test]
    fn zero_lines_or_units_rejected() {
        let d = DifficultyConfig {
            min_lines: 0,
            max_lines: 0,
            ..Default::default()
        };
        assert!(generate_task(7, &d).is_err());
        let d = DifficultyConfig {
            max_evaluated: 0,
            ..Default::default()
        };
        assert!(generate_task(7, &d).is_err());
    }

    #[test]
    fn score_is_strict() {
        let t = generate_task(3, &DifficultyConfig::default()).unwrap();
        let v = oracle_value(&t, 1).unwrap();
        assert_eq!(score_correct(v, &t, 1).unwrap(), 1);
        assert_eq!(score_correct(v + 1, &t, 1).unwrap(), 0);
        assert!(score_correct(v, &t, t.horizon + 1).is_err());
        assert!(oracle_value(&t, 0).is_err());
    }

    #[test]
    fn advance_appends_and_stops_at_horizon() {
        let t = Arc::new(generate_task(5, &DifficultyConfig::default()).unwrap());
        let c1 = DecisionContext::start(Arc::clone(&t));
        let c2 = advance(&c1, 7).unwrap();
        assert_eq!(c2.unit_index, 2);
        assert_eq!(c2.submitted_prefix, vec![7]);
        let mut c = c1;
        for _ in 0..t.horizon {
            c = advance(&c, 0).unwrap();
            assert_eq!(c.submitted_prefix.len(), c.unit_index - 1);
        }
        assert!(c.is_terminal());
        assert!(matches!(advance(&c, 0), Err(Error::Terminal(_))));
    }

    #[test]
    fn oracle_ignores_submissions() {
        let t = Arc::new(generate_task(9, &DifficultyConfig::default()).unwrap());
        let truth: Vec<Cents> = (1..=t.horizon)
            .map(|u| oracle_value(&t, u).unwrap())
            .collect();
        let mut c = DecisionContext::start(Arc::clone(&t));
        while !c.is_terminal() {
            assert_eq!(
                oracle_value(&c.task, c.unit_index).unwrap(),
                truth[c.unit_index - 1]
            );
            c = advance(&c, -123_456).unwrap();
        }
    }

    #[test]
    fn corpus_split_and_roundtrip() {
        let d = DifficultyConfig::default();
        let corpus = generate_corpus(100, 11, &d).unwrap();
        let (train, test) = split_corpus(corpus, 0.8, 11);
        assert_eq!((train.len(), test.len()), (80, 20));
        let ids: std::collections::HashSet<_> = train.iter().map(|t| &t.id).collect();
        assert!(test.iter().all(|t| !ids.contains(&t.id)));
        let mut buf = Vec::new();
        write_corpus(&mut buf, &test).unwrap();
        assert_eq!(read_corpus(&buf[..]).unwrap(), test);
    }
}
