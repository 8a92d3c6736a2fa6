//! Linear-equation verification.
//!
//! Prompts of the form `a·v + b = c` are parsed into a [`MathState`]. Cached
//! steps are then scanned for equalities that contradict the state: a wrong
//! final assignment, a wrong `a·v = c − b` intermediate, or a restated equation
//! with wrong constants. Steps without recognisable math pass.

use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::expr::{equalities, matches, to_f64, Equality, Literal, Rational};
use super::{CheckOutcome, StepStatus};
use crate::segment::Step;

/// Parsed linear equation `a·v + b = c` with its expected solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MathState {
    a: Rational,
    b: Rational,
    c: Rational,
    var: char,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("prompt does not contain a linear equation")]
pub struct NotMath;

impl MathState {
    /// Returns `None` when `a` is zero.
    pub fn new(a: Rational, b: Rational, c: Rational, var: char) -> Option<Self> {
        if a.is_zero() {
            return None;
        }
        Some(Self { a, b, c, var })
    }

    pub fn from_integers(a: i64, b: i64, c: i64, var: char) -> Option<Self> {
        Self::new(
            Rational::from_integer(a.into()),
            Rational::from_integer(b.into()),
            Rational::from_integer(c.into()),
            var,
        )
    }

    pub fn a(&self) -> Rational {
        self.a
    }

    pub fn b(&self) -> Rational {
        self.b
    }

    pub fn c(&self) -> Rational {
        self.c
    }

    pub fn var(&self) -> char {
        self.var
    }

    /// `c − b`, the expected value of `a·v`.
    pub fn intermediate(&self) -> Rational {
        self.c - self.b
    }

    /// `(c − b) / a`.
    pub fn solution(&self) -> Rational {
        self.intermediate() / self.a
    }
}

/// Renders integers without a decimal point and everything else as the
/// shortest round-trip decimal.
pub fn render_number(value: &Rational) -> String {
    if value.denom().is_one() {
        value.numer().to_string()
    } else {
        to_f64(value).to_string()
    }
}

/// Renders `k·v` the way a solution step would write it (`2x`, `-3y`).
pub fn render_term(coef: &Rational, var: char) -> String {
    format!("{}{}", render_number(coef), var)
}

impl fmt::Display for MathState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.b;
        let sign = if b < Rational::zero() { '-' } else { '+' };
        write!(
            f,
            "{} {} {} = {}",
            render_term(&self.a, self.var),
            sign,
            render_number(&b.abs()),
            render_number(&self.c)
        )
    }
}

/// Locates the first `a·v + b = c` equation in `prompt`, ignoring any
/// surrounding prose.
pub fn parse_math_prompt(prompt: &str) -> Result<MathState, NotMath> {
    equalities(prompt)
        .into_iter()
        .find_map(|eq| match eq {
            Equality::Linear {
                var,
                coef,
                constant,
                value,
            } => MathState::new(coef.value, constant.value, value.value, var),
            Equality::Scaled { var, coef, value } => {
                MathState::new(coef.value, Rational::zero(), value.value, var)
            }
            Equality::Assignment { .. } => None,
        })
        .ok_or(NotMath)
}

/// The contradiction classes the verifier detects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MathViolation {
    FinalAssignmentMismatch,
    IntermediateMismatch,
    EquationConstantMismatch,
}

impl MathViolation {
    pub fn reason(&self) -> &'static str {
        match self {
            MathViolation::FinalAssignmentMismatch => "final_assignment_mismatch",
            MathViolation::IntermediateMismatch => "intermediate_mismatch",
            MathViolation::EquationConstantMismatch => "equation_constant_mismatch",
        }
    }
}

fn check_equality(eq: &Equality, state: &MathState) -> Option<MathViolation> {
    if eq.var() != state.var {
        return None;
    }
    let ok = match eq {
        Equality::Assignment { value, .. } => matches(value, &state.solution()),
        Equality::Scaled { coef, value, .. } => {
            matches(coef, &state.a) && matches(value, &state.intermediate())
        }
        Equality::Linear {
            coef,
            constant,
            value,
            ..
        } => matches(coef, &state.a) && matches(constant, &state.b) && matches(value, &state.c),
    };
    if ok {
        return None;
    }
    Some(match eq {
        Equality::Assignment { .. } => MathViolation::FinalAssignmentMismatch,
        Equality::Scaled { .. } => MathViolation::IntermediateMismatch,
        Equality::Linear { .. } => MathViolation::EquationConstantMismatch,
    })
}

/// First contradiction in `text`, if any.
pub fn find_violation(text: &str, state: &MathState) -> Option<MathViolation> {
    equalities(text)
        .iter()
        .find_map(|eq| check_equality(eq, state))
}

/// Per-step verdict over a cached step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathVerdict {
    /// Statuses after suffix propagation; FAIL entries form a suffix.
    pub per_step: Vec<StepStatus>,
    /// Smallest failing index (1-based) before propagation.
    pub first_inconsistent: Option<usize>,
    /// Share of steps failing before propagation.
    pub inconsistent_fraction: f64,
    /// Raw violations by step index.
    pub violations: Vec<(usize, MathViolation)>,
}

impl MathVerdict {
    pub fn all_pass(&self) -> bool {
        self.first_inconsistent.is_none()
    }
}

pub fn verify_steps(steps: &[Step], state: &MathState) -> MathVerdict {
    let violations: Vec<(usize, MathViolation)> = steps
        .iter()
        .filter_map(|s| find_violation(&s.text, state).map(|v| (s.index, v)))
        .collect();
    let first_inconsistent = violations.iter().map(|(i, _)| *i).min();
    let inconsistent_fraction = if steps.is_empty() {
        0.0
    } else {
        violations.len() as f64 / steps.len() as f64
    };
    let per_step = steps
        .iter()
        .map(|s| match first_inconsistent {
            Some(first) if s.index >= first => StepStatus::Fail,
            _ => StepStatus::Pass,
        })
        .collect();
    MathVerdict {
        per_step,
        first_inconsistent,
        inconsistent_fraction,
        violations,
    }
}

/// The minimal guaranteed-correct answer `v = v*`.
pub fn deterministic_solve(state: &MathState) -> String {
    format!("{} = {}", state.var, render_number(&state.solution()))
}

fn has_correct_assignment(text: &str, state: &MathState) -> bool {
    equalities(text).iter().any(|eq| match eq {
        Equality::Assignment { var, value } => *var == state.var && matches(value, &state.solution()),
        _ => false,
    })
}

/// Integrity check of a stitched math answer.
pub fn final_math_check(answer: &str, state: &MathState) -> CheckOutcome {
    if let Some(violation) = find_violation(answer, state) {
        return CheckOutcome::fail(violation.reason());
    }
    if has_correct_assignment(answer, state) {
        CheckOutcome::Pass
    } else {
        CheckOutcome::fail("no_final_assignment")
    }
}

/// Answer-level correctness: the last value assigned to the target variable
/// equals the expected solution.
pub fn math_answer_check(answer: &str, state: &MathState) -> CheckOutcome {
    let last: Option<Literal> = equalities(answer).iter().rev().find_map(|eq| match eq {
        Equality::Assignment { var, value } if *var == state.var => Some(*value),
        _ => None,
    });
    match last {
        Some(value) if matches(&value, &state.solution()) => CheckOutcome::Pass,
        Some(_) => CheckOutcome::fail("wrong_solution"),
        None => CheckOutcome::fail("no_final_assignment"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::steps_from_texts;

    fn state(a: i64, b: i64, c: i64, v: char) -> MathState {
        MathState::from_integers(a, b, c, v).unwrap()
    }

    #[test]
    fn parses_plain_prompt() {
        let s = parse_math_prompt("Solve 2x + 3 = 13 for x").unwrap();
        assert_eq!(s, state(2, 3, 13, 'x'));
        assert_eq!(s.solution(), Rational::from_integer(5));
        assert_eq!(s.intermediate(), Rational::from_integer(10));
    }

    #[test]
    fn parses_identity_coefficients() {
        let s = parse_math_prompt("Solve 1x + 0 = 7 for x").unwrap();
        assert_eq!(s.solution(), Rational::from_integer(7));
    }

    #[test]
    fn parses_negative_constant_inside_prose() {
        let s = parse_math_prompt("Please could you solve 3y - 4 = 11, thanks").unwrap();
        assert_eq!(s, state(3, -4, 11, 'y'));
        assert_eq!(s.solution(), Rational::from_integer(5));
        assert_eq!(s.intermediate(), Rational::from_integer(15));
    }

    #[test]
    fn parses_implicit_coefficients() {
        assert_eq!(parse_math_prompt("x + 3 = 13").unwrap(), state(1, 3, 13, 'x'));
        assert_eq!(parse_math_prompt("-x + 3 = 13").unwrap(), state(-1, 3, 13, 'x'));
        assert_eq!(parse_math_prompt("Solve 4z = 8.").unwrap(), state(4, 0, 8, 'z'));
    }

    #[test]
    fn rejects_non_math_and_zero_coefficient() {
        assert_eq!(parse_math_prompt("Return a JSON object with keys: a, b"), Err(NotMath));
        assert_eq!(parse_math_prompt("Solve 0x + 3 = 5"), Err(NotMath));
    }

    #[test]
    fn consistent_steps_pass() {
        let steps = steps_from_texts(["2x = 10", "x = 5"]);
        let verdict = verify_steps(&steps, &state(2, 3, 13, 'x'));
        assert_eq!(verdict.per_step, vec![StepStatus::Pass, StepStatus::Pass]);
        assert_eq!(verdict.first_inconsistent, None);
        assert_eq!(verdict.inconsistent_fraction, 0.0);
    }

    #[test]
    fn wrong_final_assignment_fails_the_suffix() {
        // 2x + 3 = 15 expects x = 6 and 2x = 12
        let steps = steps_from_texts(["2x = 10", "x = 5"]);
        let verdict = verify_steps(&steps, &state(2, 3, 15, 'x'));
        assert_eq!(verdict.first_inconsistent, Some(1));
        assert_eq!(verdict.per_step, vec![StepStatus::Fail, StepStatus::Fail]);

        let steps = steps_from_texts(["2x + 3 = 15", "x = 5"]);
        let verdict = verify_steps(&steps, &state(2, 3, 15, 'x'));
        assert_eq!(verdict.first_inconsistent, Some(2));
        assert_eq!(verdict.per_step, vec![StepStatus::Pass, StepStatus::Fail]);
        assert_eq!(
            verdict.violations,
            vec![(2, MathViolation::FinalAssignmentMismatch)]
        );
    }

    #[test]
    fn both_steps_contradicting_gives_full_fraction() {
        let steps = steps_from_texts(["2x = 9", "x = 4.5"]);
        let verdict = verify_steps(&steps, &state(2, 3, 13, 'x'));
        assert_eq!(verdict.first_inconsistent, Some(1));
        assert_eq!(verdict.inconsistent_fraction, 1.0);
    }

    #[test]
    fn propagation_keeps_raw_fraction() {
        let steps = steps_from_texts(["2x + 3 = 13", "2x = 11", "x = 5"]);
        let verdict = verify_steps(&steps, &state(2, 3, 13, 'x'));
        assert_eq!(verdict.first_inconsistent, Some(2));
        assert!((verdict.inconsistent_fraction - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            verdict.per_step,
            vec![StepStatus::Pass, StepStatus::Fail, StepStatus::Fail]
        );
    }

    #[test]
    fn prose_steps_pass() {
        let steps = steps_from_texts(["subtract 3 from both sides", "divide by two"]);
        assert!(verify_steps(&steps, &state(2, 3, 13, 'x')).all_pass());
    }

    #[test]
    fn other_variables_are_ignored() {
        let steps = steps_from_texts(["y = 100", "x = 5"]);
        assert!(verify_steps(&steps, &state(2, 3, 13, 'x')).all_pass());
    }

    #[test]
    fn deterministic_answers() {
        assert_eq!(deterministic_solve(&state(2, 3, 13, 'x')), "x = 5");
        assert_eq!(deterministic_solve(&state(1, 0, 7, 'x')), "x = 7");
        assert_eq!(deterministic_solve(&state(4, 1, 3, 'z')), "z = 0.5");
        assert_eq!(deterministic_solve(&state(3, 0, -1, 'y')), "y = -0.3333333333333333");
        assert_eq!(
            final_math_check("y = -0.3333333333333333", &state(3, 0, -1, 'y')),
            CheckOutcome::Pass
        );
    }

    #[test]
    fn final_check_outcomes() {
        let s = state(2, 3, 13, 'x');
        assert_eq!(final_math_check("2x = 10\n\nx = 5", &s), CheckOutcome::Pass);
        assert_eq!(
            final_math_check("x = 6", &s),
            CheckOutcome::fail("final_assignment_mismatch")
        );
        assert_eq!(
            final_math_check("the answer is great", &s),
            CheckOutcome::fail("no_final_assignment")
        );
        assert_eq!(
            final_math_check("2x + 4 = 13\n\nx = 5", &s),
            CheckOutcome::fail("equation_constant_mismatch")
        );
    }

    #[test]
    fn answer_check_reads_last_assignment() {
        let s = state(2, 3, 13, 'x');
        assert_eq!(math_answer_check("x = 4\n\nx = 5", &s), CheckOutcome::Pass);
        assert_eq!(math_answer_check("2x = 11\n\nx = 5", &s), CheckOutcome::Pass);
        assert_eq!(math_answer_check("x = 6", &s), CheckOutcome::fail("wrong_solution"));
    }

    #[test]
    fn display_round_trips_through_parser() {
        for s in [state(2, 3, 13, 'x'), state(-3, -4, 11, 'y'), state(1, 0, 7, 't')] {
            assert_eq!(parse_math_prompt(&format!("Solve {s} for {}", s.var())).unwrap(), s);
        }
    }
}
