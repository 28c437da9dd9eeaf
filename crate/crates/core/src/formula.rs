//! Literal formulae in negation normal form, state labeling, and
//! satisfaction tests against proposition state functions.

use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

use crate::expr::{Expr, ExprError};

/// A named atomic proposition with its state function `Z` over `x` only.
/// The proposition holds at `x` iff `Z(x) >= 0`.
#[derive(Debug, Clone)]
pub struct PropositionDef {
    pub name: String,
    pub zfun: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

/// A signed proposition occurrence. `!O` is `Literal { prop: "O", Negative }`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub prop: String,
    pub polarity: Polarity,
}

impl Literal {
    pub fn positive(prop: &str) -> Self {
        Literal { prop: prop.to_string(), polarity: Polarity::Positive }
    }

    pub fn negative(prop: &str) -> Self {
        Literal { prop: prop.to_string(), polarity: Polarity::Negative }
    }

    pub fn complement(&self) -> Self {
        Literal {
            prop: self.prop.clone(),
            polarity: match self.polarity {
                Polarity::Positive => Polarity::Negative,
                Polarity::Negative => Polarity::Positive,
            },
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.polarity {
            Polarity::Positive => write!(f, "{}", self.prop),
            Polarity::Negative => write!(f, "!{}", self.prop),
        }
    }
}

/// Boolean combination of literals; negation only appears on literals.
#[derive(Debug, Clone, PartialEq)]
pub enum LitFormula {
    True,
    False,
    Lit(Literal),
    And(Box<LitFormula>, Box<LitFormula>),
    Or(Box<LitFormula>, Box<LitFormula>),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FormulaError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown proposition '{0}'")]
    UnknownProposition(String),
    #[error(transparent)]
    Eval(#[from] ExprError),
}

impl LitFormula {
    pub fn and(a: LitFormula, b: LitFormula) -> Self {
        LitFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: LitFormula, b: LitFormula) -> Self {
        LitFormula::Or(Box::new(a), Box::new(b))
    }

    /// All literals in the tree, left-to-right, duplicates preserved.
    pub fn literals(&self) -> Vec<&Literal> {
        let mut out = Vec::new();
        self.collect_literals(&mut out);
        out
    }

    fn collect_literals<'a>(&'a self, out: &mut Vec<&'a Literal>) {
        match self {
            LitFormula::True | LitFormula::False => {}
            LitFormula::Lit(l) => out.push(l),
            LitFormula::And(a, b) | LitFormula::Or(a, b) => {
                a.collect_literals(out);
                b.collect_literals(out);
            }
        }
    }

    /// Names of all propositions mentioned.
    pub fn propositions(&self) -> BTreeSet<String> {
        self.literals().iter().map(|l| l.prop.clone()).collect()
    }

    /// True when the tree is a conjunction (or single literal) of literals.
    pub fn is_conjunction_of_literals(&self) -> bool {
        match self {
            LitFormula::Lit(_) => true,
            LitFormula::And(a, b) => {
                a.is_conjunction_of_literals() && b.is_conjunction_of_literals()
            }
            _ => false,
        }
    }

    /// Evaluate under a set of true propositions (classical semantics:
    /// a negative literal holds iff its proposition is absent).
    pub fn eval_labels(&self, labels: &BTreeSet<String>) -> bool {
        match self {
            LitFormula::True => true,
            LitFormula::False => false,
            LitFormula::Lit(l) => {
                let inside = labels.contains(&l.prop);
                match l.polarity {
                    Polarity::Positive => inside,
                    Polarity::Negative => !inside,
                }
            }
            LitFormula::And(a, b) => a.eval_labels(labels) && b.eval_labels(labels),
            LitFormula::Or(a, b) => a.eval_labels(labels) || b.eval_labels(labels),
        }
    }

    /// Fold Boolean constants out of the tree: `f ∧ ⊤ = f`, `f ∧ ⊥ = ⊥`,
    /// `f ∨ ⊤ = ⊤`, `f ∨ ⊥ = f`.
    pub fn simplify_constants(&self) -> LitFormula {
        match self {
            LitFormula::True | LitFormula::False | LitFormula::Lit(_) => self.clone(),
            LitFormula::And(a, b) => {
                match (a.simplify_constants(), b.simplify_constants()) {
                    (LitFormula::False, _) | (_, LitFormula::False) => LitFormula::False,
                    (LitFormula::True, f) | (f, LitFormula::True) => f,
                    (a, b) => LitFormula::and(a, b),
                }
            }
            LitFormula::Or(a, b) => {
                match (a.simplify_constants(), b.simplify_constants()) {
                    (LitFormula::True, _) | (_, LitFormula::True) => LitFormula::True,
                    (LitFormula::False, f) | (f, LitFormula::False) => f,
                    (a, b) => LitFormula::or(a, b),
                }
            }
        }
    }

    /// All propositions referenced must exist among `props`.
    pub fn check_props(&self, props: &[PropositionDef]) -> Result<(), FormulaError> {
        for lit in self.literals() {
            if !props.iter().any(|p| p.name == lit.prop) {
                return Err(FormulaError::UnknownProposition(lit.prop.clone()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LitFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LitFormula::True => write!(f, "true"),
            LitFormula::False => write!(f, "false"),
            LitFormula::Lit(l) => write!(f, "{}", l),
            LitFormula::And(a, b) => {
                // parenthesize to keep the left-associative parse identical
                let wrap_l = matches!(**a, LitFormula::Or(..));
                let wrap_r = matches!(**b, LitFormula::Or(..) | LitFormula::And(..));
                if wrap_l { write!(f, "({})", a)? } else { write!(f, "{}", a)? }
                write!(f, " & ")?;
                if wrap_r { write!(f, "({})", b) } else { write!(f, "{}", b) }
            }
            LitFormula::Or(a, b) => {
                let wrap_r = matches!(**b, LitFormula::Or(..));
                write!(f, "{} | ", a)?;
                if wrap_r { write!(f, "({})", b) } else { write!(f, "{}", b) }
            }
        }
    }
}

/// Signed state function of a literal: `Z_{!p}(x) = -Z_p(x)`.
pub fn literal_z(lit: &Literal, props: &[PropositionDef], x: &[f64]) -> Result<f64, FormulaError> {
    let def = props
        .iter()
        .find(|p| p.name == lit.prop)
        .ok_or_else(|| FormulaError::UnknownProposition(lit.prop.clone()))?;
    let v = def.zfun.eval_grad(x, 0.0)?.value;
    Ok(match lit.polarity {
        Polarity::Positive => v,
        Polarity::Negative => -v,
    })
}

/// Labeling function: propositions whose state function is nonnegative at `x`.
pub fn label(x: &[f64], props: &[PropositionDef]) -> Result<BTreeSet<String>, FormulaError> {
    let mut out = BTreeSet::new();
    for p in props {
        if p.zfun.eval_grad(x, 0.0)?.value >= 0.0 {
            out.insert(p.name.clone());
        }
    }
    Ok(out)
}

/// Satisfaction of a formula at a state. Boundary states (`Z = 0`) satisfy
/// both a literal and its negation (closed-set convention).
pub fn holds(formula: &LitFormula, x: &[f64], props: &[PropositionDef]) -> Result<bool, FormulaError> {
    match formula {
        LitFormula::True => Ok(true),
        LitFormula::False => Ok(false),
        LitFormula::Lit(l) => Ok(literal_z(l, props, x)? >= 0.0),
        LitFormula::And(a, b) => Ok(holds(a, x, props)? && holds(b, x, props)?),
        LitFormula::Or(a, b) => Ok(holds(a, x, props)? || holds(b, x, props)?),
    }
}

/// Parse a formula. Grammar: `f := lit | '(' f ')' | f '&' f | f '|' f |
/// 'true' | 'false'`, `lit := ['!'] IDENT`, with `&` binding tighter than `|`.
pub fn parse_formula(text: &str) -> Result<LitFormula, FormulaError> {
    let mut p = FParser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    let f = p.or_expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

struct FParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> FParser<'a> {
    fn err(&self, msg: &str) -> FormulaError {
        FormulaError::Syntax { offset: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn or_expr(&mut self) -> Result<LitFormula, FormulaError> {
        let mut lhs = self.and_expr()?;
        while self.eat(b'|') {
            lhs = LitFormula::or(lhs, self.and_expr()?);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<LitFormula, FormulaError> {
        let mut lhs = self.atom()?;
        while self.eat(b'&') {
            lhs = LitFormula::and(lhs, self.atom()?);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<LitFormula, FormulaError> {
        if self.eat(b'(') {
            let f = self.or_expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(f);
        }
        let negated = self.eat(b'!');
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected literal"));
        }
        let name = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.skip_ws();
        match (name.as_str(), negated) {
            ("true", false) => Ok(LitFormula::True),
            ("false", false) => Ok(LitFormula::False),
            ("true", true) | ("false", true) => {
                Err(FormulaError::Syntax { offset: start, msg: "negation applies to literals only".into() })
            }
            (_, false) => Ok(LitFormula::Lit(Literal::positive(&name))),
            (_, true) => Ok(LitFormula::Lit(Literal::negative(&name))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    /// Two-robot case-study propositions over x in R^4.
    pub(crate) fn two_robot_props() -> Vec<PropositionDef> {
        let defs = [
            ("A", "0.2 - norm2(x1 - 0.6, x2 - 0.3)"),
            ("B", "0.2 - norm2(x3 - 0.4, x4 + 0.5)"),
            ("O", "0.18 - norm2(x1 - 0.22, x2 + 0.05, x3 - 0.22, x4 + 0.05)"),
            ("C", "sqrt(x3 * x3 + 0.39) - norm2(x1 - x3, x2 - x4)"),
        ];
        defs.iter()
            .map(|(name, z)| PropositionDef {
                name: name.to_string(),
                zfun: parse_expr(z, 4).unwrap(),
            })
            .collect()
    }

    const X0: [f64; 4] = [-0.4, 0.1, -0.4, 0.1];

    #[test]
    fn initial_state_labels_only_connectivity() {
        let props = two_robot_props();
        let labels = label(&X0, &props).unwrap();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec!["C".to_string()]);
    }

    #[test]
    fn initial_state_z_values() {
        let props = two_robot_props();
        let get = |name: &str| literal_z(&Literal::positive(name), &props, &X0).unwrap();
        assert!((get("A") - (-0.8198039027185571)).abs() < 1e-9);
        assert!((get("B") - (-0.8)).abs() < 1e-9);
        assert!(get("O") < 0.0);
        assert!((get("C") - 0.7416198487095663).abs() < 1e-6);
    }

    #[test]
    fn region_center_is_labeled() {
        let props = two_robot_props();
        let labels = label(&[0.6, 0.3, -0.4, 0.1], &props).unwrap();
        assert!(labels.contains("A"));
    }

    #[test]
    fn empty_props_empty_label() {
        assert!(label(&X0, &[]).unwrap().is_empty());
    }

    #[test]
    fn holds_true_anywhere() {
        assert!(holds(&LitFormula::True, &X0, &two_robot_props()).unwrap());
    }

    #[test]
    fn holds_safety_conjunction_at_start() {
        let props = two_robot_props();
        let f = parse_formula("!O & C").unwrap();
        assert!(holds(&f, &X0, &props).unwrap());
        let g = parse_formula("A & B").unwrap();
        assert!(!holds(&g, &X0, &props).unwrap());
    }

    #[test]
    fn unknown_proposition_rejected() {
        let f = parse_formula("Q").unwrap();
        assert_eq!(
            holds(&f, &X0, &two_robot_props()).unwrap_err(),
            FormulaError::UnknownProposition("Q".into())
        );
    }

    #[test]
    fn precedence_and_binds_tighter() {
        let f = parse_formula("A | B & C").unwrap();
        assert_eq!(
            f,
            LitFormula::or(
                LitFormula::Lit(Literal::positive("A")),
                LitFormula::and(
                    LitFormula::Lit(Literal::positive("B")),
                    LitFormula::Lit(Literal::positive("C"))
                )
            )
        );
    }

    #[test]
    fn labels_and_holds_agree_on_positive_literals() {
        let props = two_robot_props();
        for x in [
            [-0.4, 0.1, -0.4, 0.1],
            [0.6, 0.3, 0.4, -0.5],
            [0.22, -0.05, 0.22, -0.05],
            [0.0, 0.0, 0.1, 0.0],
        ] {
            let labels = label(&x, &props).unwrap();
            for p in &props {
                let lit = LitFormula::Lit(Literal::positive(&p.name));
                assert_eq!(holds(&lit, &x, &props).unwrap(), labels.contains(&p.name));
            }
        }
    }

    #[test]
    fn boundary_satisfies_both_polarities() {
        let props = vec![PropositionDef { name: "P".into(), zfun: parse_expr("x1", 1).unwrap() }];
        let pos = parse_formula("P").unwrap();
        let neg = parse_formula("!P").unwrap();
        assert!(holds(&pos, &[0.0], &props).unwrap());
        assert!(holds(&neg, &[0.0], &props).unwrap());
    }

    #[test]
    fn constant_simplification() {
        let f = parse_formula("A & true").unwrap().simplify_constants();
        assert_eq!(f, parse_formula("A").unwrap());
        let g = parse_formula("A & false | B").unwrap().simplify_constants();
        assert_eq!(g, parse_formula("B").unwrap());
        let h = parse_formula("A | true").unwrap().simplify_constants();
        assert_eq!(h, LitFormula::True);
    }

    #[test]
    fn formula_print_parse_round_trip() {
        for src in ["!A & !B & !O & C", "A | B & C", "(A | B) & C", "true", "!A"] {
            let f = parse_formula(src).unwrap();
            let reparsed = parse_formula(&f.to_string()).unwrap();
            assert_eq!(f, reparsed, "round trip failed for {src}");
        }
    }
}
