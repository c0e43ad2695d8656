use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Cents, Ref, RuleKind, TaskInstance};
use crate::rng;

/// Candidate values for one unit: the oracle value exactly once plus
/// structured distractors, in a seeded order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub values: Vec<Cents>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot_of(&self, value: Cents) -> Option<usize> {
        self.values.iter().position(|&v| v == value)
    }
}

/// Distractors stay at least one dollar away from the oracle value.
const MIN_GAP: Cents = 100;

pub(super) fn build(
    task: &TaskInstance,
    truth: &[Cents],
    unit: usize,
    distractors: usize,
) -> Vec<Cents> {
    let line = task.evaluated_units[unit - 1];
    let rule = &task.lines[line];
    let oracle = truth[line];
    let value_of = |r: &Ref| match r {
        Ref::Input(n) => task.inputs[n],
        Ref::Line(j) => truth[*j],
    };
    let mut rng = rng::stream(&[task.seed, unit as u64, 0xCA4D]);

    let omit = match rule.kind {
        RuleKind::Sum => {
            let k = rng.gen_range(0..rule.operands.len());
            oracle - value_of(&rule.operands[k])
        }
        RuleKind::Diff => value_of(&rule.operands[0]),
        RuleKind::ClampNonneg => value_of(&rule.operands[0]),
        RuleKind::BracketLookup => {
            let b = rule.bracket.as_ref().expect("bracket");
            let mut rates = b.rates_bp.clone();
            rates[0] = 0;
            b.apply_with_rates(value_of(&rule.operands[0]), &rates)
        }
        RuleKind::Copy => 0,
    };
    let sign_flip = -oracle;
    let off_by_one = match rule.kind {
        RuleKind::BracketLookup => {
            let b = rule.bracket.as_ref().expect("bracket");
            let shifted: Vec<i64> = (0..b.rates_bp.len())
                .map(|i| b.rates_bp[(i + 1).min(b.rates_bp.len() - 1)])
                .collect();
            b.apply_with_rates(value_of(&rule.operands[0]), &shifted)
        }
        _ => oracle + MIN_GAP,
    };
    let wrong_line = {
        let mut pool: Vec<Cents> = task.inputs.values().copied().collect();
        pool.extend(
            truth
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != line)
                .map(|(_, &v)| v),
        );
        *pool.choose(&mut rng).expect("tasks have inputs")
    };

    let mut out = vec![oracle];
    let accept = |v: Cents, out: &mut Vec<Cents>| {
        if (v - oracle).abs() >= MIN_GAP && !out.contains(&v) {
            out.push(v);
        }
    };
    for v in [omit, sign_flip, off_by_one, wrong_line] {
        if out.len() > distractors {
            break;
        }
        accept(v, &mut out);
    }
    let mut k: Cents = 1;
    while out.len() <= distractors {
        let sign = if rng.gen::<bool>() { 1 } else { -1 };
        accept(oracle + sign * k * MIN_GAP, &mut out);
        k += 1;
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn exactly_one_correct_candidate() {
        let d = DifficultyConfig::default();
        for seed in 0..200 {
            let t = generate_task(seed, &d).unwrap();
            for u in 1..=t.horizon {
                let cs = t.candidate_set(u).unwrap();
                assert_eq!(cs.len(), d.distractors + 1);
                let correct = cs
                    .values
                    .iter()
                    .filter(|&&v| score_correct(v, &t, u).unwrap() == 1)
                    .count();
                assert_eq!(correct, 1, "seed {seed} unit {u}");
                let mut sorted = cs.values.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), cs.len());
            }
        }
    }

    #[test]
    fn oracle_position_varies() {
        let d = DifficultyConfig::default();
        let mut seen = vec![0usize; d.distractors + 1];
        for seed in 0..200 {
            let t = generate_task(seed, &d).unwrap();
            let o = oracle_value(&t, 1).unwrap();
            seen[t.candidate_set(1).unwrap().slot_of(o).unwrap()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 10), "{seen:?}");
    }
}
