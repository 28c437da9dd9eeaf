//! Property tests: printer/parser round trips and composition bounds over
//! generated inputs.

use proptest::prelude::*;

use ltlcbf::barrier::{compose_conj, compose_disj, Barrier, BarrierOpts};
use ltlcbf::expr::{parse_expr, Expr};
use ltlcbf::formula::{parse_formula, LitFormula, Literal};

fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-10.0..10.0f64).prop_map(Expr::Const),
        (1..=dim).prop_map(Expr::Var),
        Just(Expr::Time),
        ((0.1..4.0f64), (-3.0..3.0f64))
            .prop_map(|(rate, shift)| Expr::Logistic { rate, shift }),
    ];
    leaf.prop_recursive(4, 24, 4, move |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            prop::collection::vec(inner, 1..4).prop_map(Expr::Norm2),
        ]
    })
}

fn arb_formula() -> impl Strategy<Value = LitFormula> {
    let names = prop_oneof![Just("A"), Just("B"), Just("O"), Just("C")];
    let leaf = (names, any::<bool>()).prop_map(|(n, neg)| {
        LitFormula::Lit(if neg { Literal::negative(n) } else { Literal::positive(n) })
    });
    leaf.prop_recursive(5, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| LitFormula::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| LitFormula::or(a, b)),
        ]
    })
}

fn const_barrier(v: f64) -> Barrier {
    Barrier::Atomic {
        lit: Literal::positive("K"),
        zfun: Expr::Const(v),
        sign: 1.0,
        guard: None,
    }
}

proptest! {
    /// Parsing a printed expression reaches a fixed point after one pass
    /// (negated literal constants fold), and the canonical tree evaluates
    /// identically to the original.
    #[test]
    fn expr_print_parse_round_trip(e in arb_expr(4)) {
        let once = parse_expr(&e.to_string(), 4).unwrap();
        let twice = parse_expr(&once.to_string(), 4).unwrap();
        prop_assert_eq!(&once, &twice);
        for (x, t) in [([0.3, -0.2, 0.7, 0.0], 0.0), ([-1.0, 2.0, 0.1, -0.4], 1.7)] {
            let a = e.eval_grad(&x, t).unwrap();
            let b = once.eval_grad(&x, t).unwrap();
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }

    /// Printing a formula and re-parsing it yields the same tree.
    #[test]
    fn formula_print_parse_round_trip(f in arb_formula()) {
        let printed = f.to_string();
        let reparsed = parse_formula(&printed).unwrap();
        prop_assert_eq!(f, reparsed);
    }

    /// The smooth conjunction brackets min and the smooth disjunction stays
    /// below max for arbitrary values and sharpness.
    #[test]
    fn composition_bracket(a in -50.0..50.0f64, b in -50.0..50.0f64, lambda in 0.05..30.0f64) {
        let opts = BarrierOpts::default();
        let conj = compose_conj(const_barrier(a), const_barrier(b))
            .eval(&[0.0], 0.0, &opts).unwrap().value;
        let disj = compose_disj(const_barrier(a), const_barrier(b), lambda)
            .eval(&[0.0], 0.0, &opts).unwrap().value;
        let lo = a.min(b);
        let hi = a.max(b);
        prop_assert!(conj <= lo + 1e-12);
        prop_assert!(conj >= lo - 2.0f64.ln() - 1e-12);
        prop_assert!(disj <= hi + 1e-12);
    }

    /// Labels-based evaluation agrees with state-based satisfaction away
    /// from region boundaries.
    #[test]
    fn label_and_state_semantics_agree(
        f in arb_formula(),
        x in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        use ltlcbf::formula::{holds, label, PropositionDef};
        let defs: Vec<PropositionDef> = [
            ("A", "0.2 - norm2(x1 - 0.6, x2 - 0.3)"),
            ("B", "0.2 - norm2(x3 - 0.4, x4 + 0.5)"),
            ("O", "0.18 - norm2(x1 - 0.22, x2 + 0.05, x3 - 0.22, x4 + 0.05)"),
            ("C", "sqrt(x3 * x3 + 0.39) - norm2(x1 - x3, x2 - x4)"),
        ]
        .iter()
        .map(|(n, z)| PropositionDef { name: n.to_string(), zfun: parse_expr(z, 4).unwrap() })
        .collect();
        // skip boundary states, where the closed-set convention makes a
        // literal and its negation both true
        let on_boundary = defs.iter().any(|d| {
            d.zfun.eval_grad(&x, 0.0).unwrap().value.abs() < 1e-12
        });
        prop_assume!(!on_boundary);
        let labels = label(&x, &defs).unwrap();
        prop_assert_eq!(holds(&f, &x, &defs).unwrap(), f.eval_labels(&labels));
    }
}
