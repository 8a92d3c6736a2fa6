//! Recognition of linear equalities embedded in free text.
//!
//! Text is tokenized into numbers, standalone single-letter variables,
//! arithmetic operators and `=`. Any other character or word ends the current
//! clause, so prose around an equation is ignored. Each clause with exactly one
//! `=` is then matched against the handful of shapes the verifiers care about.

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, ToPrimitive, Zero};

pub type Rational = Ratio<i128>;

/// A numeric literal as written in the text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Literal {
    pub value: Rational,
    /// Written with a decimal point, and therefore compared with tolerance.
    pub decimal: bool,
}

impl Literal {
    pub fn exact(value: Rational) -> Self {
        Self { value, decimal: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Num(Literal),
    Var(char),
    Plus,
    Minus,
    Times,
    Divide,
    Equals,
    Break,
}

fn parse_decimal(digits: &str) -> Option<Literal> {
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let mut numer: i128 = 0;
    let mut denom: i128 = 1;
    for ch in int_part.chars().chain(frac_part.unwrap_or("").chars()) {
        let d = ch.to_digit(10)? as i128;
        numer = numer.checked_mul(10)?.checked_add(d)?;
    }
    if let Some(f) = frac_part {
        for _ in 0..f.len() {
            denom = denom.checked_mul(10)?;
        }
    }
    Some(Literal {
        value: Rational::new(numer, denom),
        decimal: frac_part.is_some(),
    })
}

fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let digits: String = chars[start..i].iter().collect();
            tokens.push(parse_decimal(&digits).map_or(Token::Break, Token::Num));
            continue;
        }
        if ch.is_alphabetic() {
            // a letter glued to digits ("x2") is a word, not a variable
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let standalone = i - start == 1 && ch.is_ascii_alphabetic();
            tokens.push(if standalone { Token::Var(ch) } else { Token::Break });
            continue;
        }
        let token = match ch {
            c if c.is_whitespace() && c != '\n' => None,
            '+' => Some(Token::Plus),
            '-' | '\u{2212}' | '\u{2013}' => Some(Token::Minus),
            '*' | '\u{00b7}' | '\u{00d7}' => Some(Token::Times),
            '/' => Some(Token::Divide),
            '=' => Some(Token::Equals),
            _ => Some(Token::Break),
        };
        if let Some(t) = token {
            tokens.push(t);
        }
        i += 1;
    }
    tokens
}

/// One `coefficient * variable` term or a constant, with its sign applied.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    /// `explicit` is false for a bare `x` or `-x`.
    Var {
        name: char,
        coef: Literal,
        explicit: bool,
    },
    Const(Literal),
}

fn negate(lit: Literal) -> Literal {
    Literal {
        value: -lit.value,
        decimal: lit.decimal,
    }
}

/// Parses `[sign] term ((+|-) term)*`, consuming the whole token slice.
fn parse_linear(tokens: &[Token]) -> Option<Vec<Term>> {
    let mut terms = Vec::new();
    let mut pos = 0;
    let mut first = true;
    while pos < tokens.len() {
        let mut negative = false;
        match tokens[pos] {
            Token::Plus if !first => pos += 1,
            Token::Minus => {
                negative = true;
                pos += 1;
            }
            _ if first => {}
            _ => return None,
        }
        first = false;
        let term = match (tokens.get(pos), tokens.get(pos + 1), tokens.get(pos + 2)) {
            (Some(Token::Num(n)), Some(Token::Times), Some(Token::Var(v))) => {
                pos += 3;
                Term::Var { name: *v, coef: *n, explicit: true }
            }
            (Some(Token::Num(n)), Some(Token::Var(v)), _) => {
                pos += 2;
                Term::Var { name: *v, coef: *n, explicit: true }
            }
            (Some(Token::Var(v)), _, _) => {
                pos += 1;
                Term::Var {
                    name: *v,
                    coef: Literal::exact(Rational::from_integer(1)),
                    explicit: false,
                }
            }
            (Some(Token::Num(n)), _, _) => {
                pos += 1;
                Term::Const(*n)
            }
            _ => return None,
        };
        let term = if negative {
            match term {
                Term::Var { name, coef, explicit } => Term::Var { name, coef: negate(coef), explicit },
                Term::Const(c) => Term::Const(negate(c)),
            }
        } else {
            term
        };
        terms.push(term);
    }
    if terms.is_empty() {
        None
    } else {
        Some(terms)
    }
}

/// Evaluates a constant arithmetic expression (`+ - * /`, usual precedence).
fn eval_constant(tokens: &[Token]) -> Option<Literal> {
    let mut pos = 0;
    let mut decimal = false;

    let mut factor = |pos: &mut usize| -> Option<Rational> {
        let mut negative = false;
        while let Some(Token::Minus | Token::Plus) = tokens.get(*pos) {
            negative ^= tokens[*pos] == Token::Minus;
            *pos += 1;
        }
        match tokens.get(*pos) {
            Some(Token::Num(n)) => {
                *pos += 1;
                decimal |= n.decimal;
                Some(if negative { -n.value } else { n.value })
            }
            _ => None,
        }
    };

    let mut term = |pos: &mut usize| -> Option<Rational> {
        let mut acc = factor(pos)?;
        while let Some(op @ (Token::Times | Token::Divide)) = tokens.get(*pos).copied() {
            *pos += 1;
            let rhs = factor(pos)?;
            acc = if op == Token::Times {
                acc.checked_mul(&rhs)?
            } else {
                if rhs.is_zero() {
                    return None;
                }
                acc.checked_div(&rhs)?
            };
        }
        Some(acc)
    };

    let mut acc = term(&mut pos)?;
    while let Some(op @ (Token::Plus | Token::Minus)) = tokens.get(pos).copied() {
        pos += 1;
        let rhs = term(&mut pos)?;
        acc = if op == Token::Plus {
            acc.checked_add(&rhs)?
        } else {
            acc.checked_sub(&rhs)?
        };
    }
    if pos != tokens.len() {
        return None;
    }
    Some(Literal { value: acc, decimal })
}

/// Shapes of equality the verifiers recognise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equality {
    /// `v = N`
    Assignment { var: char, value: Literal },
    /// `k·v = N` with an explicit coefficient (or a bare `-v`).
    Scaled { var: char, coef: Literal, value: Literal },
    /// `k·v + m = N`, in either term order.
    Linear {
        var: char,
        coef: Literal,
        constant: Literal,
        value: Literal,
    },
}

impl Equality {
    pub fn var(&self) -> char {
        match *self {
            Equality::Assignment { var, .. }
            | Equality::Scaled { var, .. }
            | Equality::Linear { var, .. } => var,
        }
    }
}

fn classify(lhs: &[Token], rhs: &[Token]) -> Option<Equality> {
    let value = eval_constant(rhs)?;
    let terms = parse_linear(lhs)?;
    match terms.as_slice() {
        [Term::Var { name, coef, explicit }] => {
            if !explicit && coef.value == Rational::from_integer(1) {
                Some(Equality::Assignment { var: *name, value })
            } else {
                Some(Equality::Scaled { var: *name, coef: *coef, value })
            }
        }
        [Term::Var { name, coef, .. }, Term::Const(constant)]
        | [Term::Const(constant), Term::Var { name, coef, .. }] => Some(Equality::Linear {
            var: *name,
            coef: *coef,
            constant: *constant,
            value,
        }),
        _ => None,
    }
}

/// All recognised equalities in `text`, in reading order.
pub fn equalities(text: &str) -> Vec<Equality> {
    let tokens = tokenize(text);
    tokens
        .split(|t| *t == Token::Break)
        .filter_map(|clause| {
            let eq_at: Vec<usize> = clause
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == Token::Equals)
                .map(|(i, _)| i)
                .collect();
            match eq_at.as_slice() {
                [at] => classify(&clause[..*at], &clause[at + 1..]),
                _ => None,
            }
        })
        .collect()
}

/// Relative tolerance applied when either side was written as a decimal.
pub const DECIMAL_TOLERANCE: f64 = 1e-9;

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Compares a literal from the text against an expected exact value.
pub fn matches(found: &Literal, expected: &Rational) -> bool {
    if found.decimal {
        let (x, y) = (to_f64(&found.value), to_f64(expected));
        (x - y).abs() <= DECIMAL_TOLERANCE * y.abs().max(1.0)
    } else {
        found.value == *expected
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(n: i128) -> Rational {
        Rational::from_integer(n)
    }

    #[test]
    fn recognises_the_three_shapes() {
        let eqs = equalities("2x + 3 = 13, so 2x = 10 and x = 5.");
        assert_eq!(eqs.len(), 3);
        assert!(matches!(eqs[0], Equality::Linear { var: 'x', .. }));
        assert!(matches!(eqs[1], Equality::Scaled { var: 'x', .. }));
        assert_eq!(
            eqs[2],
            Equality::Assignment { var: 'x', value: Literal::exact(int(5)) }
        );
    }

    #[test]
    fn handles_signs_and_unicode_operators() {
        let eqs = equalities("3y \u{2212} 4 = 11");
        match eqs[0] {
            Equality::Linear { coef, constant, value, .. } => {
                assert_eq!(coef.value, int(3));
                assert_eq!(constant.value, int(-4));
                assert_eq!(value.value, int(11));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            equalities("-x = 4")[0],
            Equality::Scaled { coef: Literal { value, .. }, .. } if value == int(-1)
        ));
        assert!(matches!(
            equalities("x = -5")[0],
            Equality::Assignment { value: Literal { value, .. }, .. } if value == int(-5)
        ));
    }

    #[test]
    fn evaluates_constant_right_hand_sides() {
        match equalities("x = 10/4")[0] {
            Equality::Assignment { value, .. } => assert_eq!(value.value, Rational::new(5, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match equalities("2x = 13 - 3")[0] {
            Equality::Scaled { value, .. } => assert_eq!(value.value, int(10)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decimals_are_exact_rationals_flagged_decimal() {
        match equalities("x = 4.5")[0] {
            Equality::Assignment { value, .. } => {
                assert_eq!(value.value, Rational::new(9, 2));
                assert!(value.decimal);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ignores_prose_and_unrecognised_clauses() {
        assert!(equalities("subtract 3 from both sides").is_empty());
        assert!(equalities("x2 = 5").is_empty());
        assert!(equalities("13 - 3 = 10").is_empty());
        assert!(equalities("2x + 3 = 13 - x").is_empty());
        assert!(equalities("a = b = c").is_empty());
    }

    #[test]
    fn tolerance_only_applies_to_decimals() {
        let third = Rational::new(1, 3);
        let approx = Literal { value: Rational::new(3333333333333333, 10i128.pow(16)), decimal: true };
        assert!(matches(&approx, &third));
        assert!(!matches(&Literal::exact(Rational::new(1, 4)), &third));
    }
}
