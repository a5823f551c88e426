//! Property suite for the specification language: round trips, semantic
//! bounds, structural laws, and agreement with an independently written
//! interpreter.

use morl_core::speclang::{
    canonical_fingerprint, canonical_probes, evaluate, generate, parse, render, tokenize,
    RewardVector, SpecAst, Threshold,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent reference interpreter: an explicit-stack postorder walk
/// written directly from the semantics table, sharing no code with
/// `SpecAst::evaluate`.
fn reference_eval(spec: &SpecAst, r: &[f64]) -> f64 {
    enum Frame<'a> {
        Visit(&'a SpecAst),
        CombineMin,
        CombineMax,
    }
    let mut work = vec![Frame::Visit(spec)];
    let mut values: Vec<f64> = Vec::new();
    while let Some(frame) = work.pop() {
        match frame {
            Frame::Visit(node) => match node {
                SpecAst::Atom(i) => values.push(r[usize::from(*i) - 1]),
                SpecAst::NegAtom(i) => values.push(1.0 - r[usize::from(*i) - 1]),
                SpecAst::Geq(i, c) => {
                    values.push(if r[usize::from(*i) - 1] >= c.value() { 1.0 } else { 0.0 })
                }
                SpecAst::Leq(i, c) => {
                    values.push(if r[usize::from(*i) - 1] <= c.value() { 1.0 } else { 0.0 })
                }
                SpecAst::And(a, b) => {
                    work.push(Frame::CombineMin);
                    work.push(Frame::Visit(b));
                    work.push(Frame::Visit(a));
                }
                SpecAst::Or(a, b) => {
                    work.push(Frame::CombineMax);
                    work.push(Frame::Visit(b));
                    work.push(Frame::Visit(a));
                }
            },
            Frame::CombineMin => {
                let y = values.pop().unwrap();
                let x = values.pop().unwrap();
                values.push(if x < y { x } else { y });
            }
            Frame::CombineMax => {
                let y = values.pop().unwrap();
                let x = values.pop().unwrap();
                values.push(if x > y { x } else { y });
            }
        }
    }
    values.pop().unwrap()
}

fn leaf_strategy(n: u8) -> impl Strategy<Value = SpecAst> {
    prop_oneof![
        (1..=n).prop_map(SpecAst::Atom),
        (1..=n).prop_map(SpecAst::NegAtom),
        (1..=n, 0u8..=10).prop_map(|(i, c)| SpecAst::Geq(i, Threshold::from_tenths(c).unwrap())),
        (1..=n, 0u8..=10).prop_map(|(i, c)| SpecAst::Leq(i, Threshold::from_tenths(c).unwrap())),
    ]
}

fn ast_strategy(n: u8) -> impl Strategy<Value = SpecAst> {
    leaf_strategy(n).prop_recursive(6, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| SpecAst::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| SpecAst::Or(Box::new(a), Box::new(b))),
        ]
    })
}

/// Soft specs only: atoms and connectives, the monotone fragment.
fn soft_ast_strategy(n: u8) -> impl Strategy<Value = SpecAst> {
    (1..=n)
        .prop_map(SpecAst::Atom)
        .prop_recursive(5, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| SpecAst::And(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| SpecAst::Or(Box::new(a), Box::new(b))),
            ]
        })
}

fn reward_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #[test]
    fn parse_render_round_trip(ast in ast_strategy(6)) {
        let text = render(&ast);
        let back = parse(&text, 6).unwrap();
        prop_assert_eq!(back, ast);
    }

    #[test]
    fn evaluation_stays_in_unit_interval(ast in ast_strategy(4), r in reward_strategy(4)) {
        let v = ast.evaluate(&r).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn evaluation_matches_reference(ast in ast_strategy(5), r in reward_strategy(5)) {
        let ours = ast.evaluate(&r).unwrap();
        let reference = reference_eval(&ast, &r);
        prop_assert_eq!(ours.to_bits(), reference.to_bits());
    }

    #[test]
    fn soft_fragment_is_monotone(
        ast in soft_ast_strategy(3),
        r in reward_strategy(3),
        bump in prop::collection::vec(0.0f64..=0.5, 3),
    ) {
        let r_up: Vec<f64> = r.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect();
        let lo = ast.evaluate(&r).unwrap();
        let hi = ast.evaluate(&r_up).unwrap();
        prop_assert!(hi >= lo);
    }

    #[test]
    fn de_morgan_at_atom_level(r in reward_strategy(2)) {
        let lhs = parse("-o1 | -o2", 2).unwrap().evaluate(&r).unwrap();
        let rhs = 1.0 - parse("o1 & o2", 2).unwrap().evaluate(&r).unwrap();
        prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn tokenization_is_lossless(ast in ast_strategy(6)) {
        let toks = tokenize(&ast);
        prop_assert!(!toks.is_empty());
        let one_hot = toks.one_hot();
        let back = morl_core::speclang::TokenSequence::from_one_hot(&one_hot).unwrap();
        prop_assert_eq!(back, toks);
    }
}

#[test]
fn reference_agreement_bulk_seeded() {
    // 10,000 random (spec, reward) pairs across n in 2..=6, exact equality.
    let mut rng = ChaCha8Rng::seed_from_u64(0xabcd);
    use rand::Rng;
    for k in 0..10_000 {
        let n = 2 + (k % 5);
        let ast = generate(&mut rng, n, 8);
        let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let ours = ast.evaluate(&r).unwrap();
        let reference = reference_eval(&ast, &r);
        assert_eq!(ours.to_bits(), reference.to_bits(), "spec {}", render(&ast));
    }
}

#[test]
fn fingerprint_matches_exact_grid_enumeration_for_small_n() {
    // For n <= 3 the canonical probe set IS the 0.05 grid, so fingerprint
    // equality must coincide with exhaustive grid agreement.
    for n in 1..=3usize {
        let probes = canonical_probes(n);
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        for _ in 0..60 {
            let a = generate(&mut rng, n, 5);
            let b = generate(&mut rng, n, 5);
            let fa = canonical_fingerprint(&a, &probes).unwrap();
            let fb = canonical_fingerprint(&b, &probes).unwrap();
            let differs = probes.iter().any(|p| {
                evaluate(p, &a).unwrap().to_bits() != evaluate(p, &b).unwrap().to_bits()
            });
            assert_eq!(differs, fa != fb, "{} vs {}", render(&a), render(&b));
        }
    }
}

#[test]
fn semantically_equal_rewrites_share_fingerprints() {
    let probes = canonical_probes(3);
    let pairs = [
        ("o1 & o2 & o3", "o1 & ( o3 & o2 )"),
        ("-o3", "-o3 | -o3"),
        ("o1 | o2", "o2 | o1"),
        ("o1 & o1", "o1"),
    ];
    for (left, right) in pairs {
        let a = parse(left, 3).unwrap();
        let b = parse(right, 3).unwrap();
        assert_eq!(
            canonical_fingerprint(&a, &probes).unwrap(),
            canonical_fingerprint(&b, &probes).unwrap(),
            "{left} vs {right}"
        );
    }
}

#[test]
fn generated_specs_round_trip_through_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let asts: Vec<SpecAst> = (0..200).map(|_| generate(&mut rng, 4, 6)).collect();
    let text = morl_core::speclang::to_lines(&asts);
    let back = morl_core::speclang::from_lines(&text, 4).unwrap();
    assert_eq!(back, asts);
}

#[test]
fn evaluate_wrapper_checks_reward_length() {
    let probes = RewardVector::new(&[0.3]).unwrap();
    let ast = parse("o2", 2).unwrap();
    assert!(evaluate(&probes, &ast).is_err());
}
