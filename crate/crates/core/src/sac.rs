//! Safety assurance cases: templated claim / argument / evidence records the
//! verifier attaches to an intervention, and their structural validity score.
//!
//! The validity score is a diagnostic. It never enters a training reward.

use serde::{Deserialize, Serialize};

use crate::task_env::{Cents, DecisionContext, Ref, RuleKind};
use crate::Result;

/// Number of selectable templates, one per rule kind.
pub const TEMPLATE_COUNT: usize = RuleKind::COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Assertion {
    Incorrect,
    NeedsReview,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub target_unit: usize,
    pub assertion: Assertion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Rule(RuleKind),
    Generic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub rule_template_id: TemplateId,
    pub text_slots: Vec<Ref>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyAssuranceCase {
    pub claim: Claim,
    pub argument: Argument,
    pub evidence: Vec<(Ref, Cents)>,
    pub suggested_correction: Option<Cents>,
}

impl SafetyAssuranceCase {
    pub fn is_generic(&self) -> bool {
        self.argument.rule_template_id == TemplateId::Generic
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacScore {
    pub value: f64,
    pub claim_targets_correct_line: bool,
    pub argument_cites_applicable_rule: bool,
    pub evidence_in_context: bool,
}

/// Fills template `template_choice` for the unit under review. A template
/// whose rule kind differs from the unit's rule yields the generic SAC:
/// a review claim with no argument slots, no evidence and no correction.
pub fn emit_sac(
    ctx: &DecisionContext,
    proposal: Cents,
    template_choice: usize,
) -> Result<SafetyAssuranceCase> {
    let rule = ctx.rule()?;
    let chosen = RuleKind::from_index(template_choice);
    if chosen != Some(rule.kind) {
        return Ok(SafetyAssuranceCase {
            claim: Claim {
                target_unit: ctx.unit_index,
                assertion: Assertion::NeedsReview,
            },
            argument: Argument {
                rule_template_id: TemplateId::Generic,
                text_slots: Vec::new(),
            },
            evidence: Vec::new(),
            suggested_correction: None,
        });
    }
    let evidence: Vec<(Ref, Cents)> = rule
        .operands
        .iter()
        .filter_map(|r| ctx.visible_value(r).map(|v| (r.clone(), v)))
        .collect();
    let correction = rule.apply(|r| ctx.visible_value(r).unwrap_or(0));
    Ok(SafetyAssuranceCase {
        claim: Claim {
            target_unit: ctx.unit_index,
            assertion: if correction == proposal {
                Assertion::NeedsReview
            } else {
                Assertion::Incorrect
            },
        },
        argument: Argument {
            rule_template_id: TemplateId::Rule(rule.kind),
            text_slots: rule.operands.clone(),
        },
        evidence,
        suggested_correction: Some(correction),
    })
}

/// Structural validity in {0, 1/3, 2/3, 1}: mean of three exact checks.
pub fn score_sac(sac: &SafetyAssuranceCase, ctx: &DecisionContext, _proposal: Cents) -> SacScore {
    let claim_ok = sac.claim.target_unit == ctx.unit_index;
    let argument_ok = match ctx.rule() {
        Ok(rule) => {
            sac.argument.rule_template_id == TemplateId::Rule(rule.kind)
                && sac.argument.text_slots == rule.operands
        }
        Err(_) => false,
    };
    let evidence_ok = !sac.evidence.is_empty()
        && sac
            .evidence
            .iter()
            .all(|(r, v)| ctx.visible_value(r) == Some(*v));
    let bits = [claim_ok, argument_ok, evidence_ok];
    SacScore {
        value: bits.iter().filter(|&&b| b).count() as f64 / 3.0,
        claim_targets_correct_line: claim_ok,
        argument_cites_applicable_rule: argument_ok,
        evidence_in_context: evidence_ok,
    }
}

/// `c_sac = 1 - S_x`: an intervention is warranted iff the proposal is wrong.
pub fn sac_correct_label(s_x: u8) -> u8 {
    1 - s_x.min(1)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::task_env::{
        generate_task, DecisionContext, DifficultyConfig, LineRule, TaskInstance,
    };

    fn sum_ctx() -> DecisionContext {
        let inputs: BTreeMap<String, Cents> = [("A".to_string(), 3), ("B".to_string(), 4)].into();
        let task = TaskInstance {
            id: "sum".into(),
            seed: 1,
            inputs,
            lines: vec![LineRule {
                kind: RuleKind::Sum,
                operands: vec![Ref::Input("A".into()), Ref::Input("B".into())],
                bracket: None,
            }],
            evaluated_units: vec![0],
            horizon: 1,
            candidates: vec![vec![7, 3]],
        };
        DecisionContext::start(Arc::new(task))
    }

    #[test]
    fn matching_template_fills_evidence_and_correction() {
        let c = sum_ctx();
        let sac = emit_sac(&c, 3, RuleKind::Sum.index()).unwrap();
        assert_eq!(sac.claim.target_unit, 1);
        assert_eq!(sac.claim.assertion, Assertion::Incorrect);
        assert_eq!(
            sac.evidence,
            vec![(Ref::Input("A".into()), 3), (Ref::Input("B".into()), 4)]
        );
        assert_eq!(sac.suggested_correction, Some(7));
        assert_eq!(score_sac(&sac, &c, 3).value, 1.0);
        assert_eq!(sac, emit_sac(&c, 3, RuleKind::Sum.index()).unwrap());
    }

    #[test]
    fn wrong_template_falls_back_to_generic() {
        let c = sum_ctx();
        let sac = emit_sac(&c, 3, RuleKind::Diff.index()).unwrap();
        assert!(sac.is_generic());
        assert!(sac.argument.text_slots.is_empty());
        assert_eq!(sac.suggested_correction, None);
        let s = score_sac(&sac, &c, 3);
        assert!(s.claim_targets_correct_line);
        assert!((s.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_rule_citation_scores_two_thirds() {
        let c = sum_ctx();
        let mut sac = emit_sac(&c, 3, RuleKind::Sum.index()).unwrap();
        sac.argument.rule_template_id = TemplateId::Rule(RuleKind::Diff);
        let s = score_sac(&sac, &c, 3);
        assert!(!s.argument_cites_applicable_rule);
        assert!(s.claim_targets_correct_line && s.evidence_in_context);
        assert!((s.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unresolvable_evidence_fails_check() {
        let c = sum_ctx();
        let mut sac = emit_sac(&c, 3, RuleKind::Sum.index()).unwrap();
        sac.evidence.push((Ref::Input("NOPE".into()), 1));
        assert!(!score_sac(&sac, &c, 3).evidence_in_context);
        let mut sac = emit_sac(&c, 3, RuleKind::Sum.index()).unwrap();
        sac.evidence[0].1 = 99;
        assert!(!score_sac(&sac, &c, 3).evidence_in_context);
    }

    #[test]
    fn label_is_complement() {
        assert_eq!(sac_correct_label(1), 0);
        assert_eq!(sac_correct_label(0), 1);
        for b in [0u8, 1] {
            assert_eq!(sac_correct_label(sac_correct_label(b)), b);
        }
    }

    #[test]
    fn matching_template_always_scores_one() {
        let d = DifficultyConfig::default();
        for seed in 0..50 {
            let t = Arc::new(generate_task(seed, &d).unwrap());
            let mut c = DecisionContext::start(t);
            while !c.is_terminal() {
                let k = c.rule().unwrap().kind.index();
                let x = c.task.candidates[c.unit_index - 1][0];
                let sac = emit_sac(&c, x, k).unwrap();
                let s = score_sac(&sac, &c, x);
                assert_eq!(s.value, 1.0, "seed {seed} unit {}", c.unit_index);
                c = crate::task_env::advance(&c, x).unwrap();
            }
        }
    }
}
