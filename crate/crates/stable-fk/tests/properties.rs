//! Property-based tests: algebraic invariants of the power expansions in
//! exact rational arithmetic, and structural invariants of the model and
//! kernel layers.

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use stable_fk::jumpalgebra::{power_backward, power_forward, JumpSequence};
use stable_fk::kernel::Envelope;
use stable_fk::model::{symmetrize, PerturbationF};

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Strategy: a jump sequence with strictly increasing times in (0, 1) and
/// rational values in [-3, 3].
fn jump_sequence() -> impl Strategy<Value = JumpSequence<BigRational>> {
    prop::collection::vec((1..=999u32, (1..=60i64, -180..=180i64)), 1..=10).prop_map(|raw| {
        let mut time_ticks: Vec<u32> = raw.iter().map(|(t, _)| *t).collect();
        time_ticks.sort_unstable();
        time_ticks.dedup();
        let marks: Vec<(f64, BigRational)> = time_ticks
            .iter()
            .zip(raw.iter())
            .map(|(&tick, &(_, (den, num)))| (tick as f64 / 1000.0, rational(num, den)))
            .collect();
        JumpSequence::from_pairs(&marks, 1.0).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Both expansions are exact identities in exact arithmetic.
    #[test]
    fn expansions_hold_exactly(seq in jump_sequence(), n in 1u32..=6) {
        let (lhs, rhs) = power_forward(&seq, n, 1.0).unwrap();
        prop_assert_eq!(lhs, rhs);
        let (lhs, rhs) = power_backward(&seq, n, 1.0).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    // Rescaling every mark by a rational lambda scales both sides by
    // lambda^n.
    #[test]
    fn expansions_scale_homogeneously(
        seq in jump_sequence(),
        n in 1u32..=5,
        lam_num in -12i64..=12,
        lam_den in 1i64..=12,
    ) {
        prop_assume!(lam_num != 0);
        let lambda = rational(lam_num, lam_den);
        let scaled_marks: Vec<(f64, BigRational)> = seq
            .marks()
            .iter()
            .map(|m| (m.time, m.value.clone() * lambda.clone()))
            .collect();
        let scaled = JumpSequence::from_pairs(&scaled_marks, seq.t_horizon()).unwrap();
        let lambda_n = num_traits::pow::pow(lambda, n as usize);

        let (lhs, rhs) = power_forward(&seq, n, 1.0).unwrap();
        let (lhs_s, rhs_s) = power_forward(&scaled, n, 1.0).unwrap();
        prop_assert_eq!(lhs_s, lhs * lambda_n.clone());
        prop_assert_eq!(rhs_s, rhs * lambda_n.clone());

        let (_, rhs_b) = power_backward(&seq, n, 1.0).unwrap();
        let (lhs_bs, rhs_bs) = power_backward(&scaled, n, 1.0).unwrap();
        prop_assert_eq!(rhs_bs, rhs_b * lambda_n.clone());
        let (lhs_b, _) = power_backward(&seq, n, 1.0).unwrap();
        prop_assert_eq!(lhs_bs, lhs_b * lambda_n);
    }

    // Backward on a sequence equals forward on the time-reversed sequence.
    #[test]
    fn backward_is_forward_after_time_reversal(seq in jump_sequence(), n in 1u32..=6) {
        let horizon = seq.t_horizon();
        let reversed = seq.reversed();
        let (lhs_b, rhs_b) = power_backward(&seq, n, horizon).unwrap();
        let (lhs_f, rhs_f) = power_forward(&reversed, n, horizon).unwrap();
        prop_assert_eq!(lhs_b, lhs_f);
        prop_assert_eq!(rhs_b, rhs_f);
    }

    // Symmetrization is symmetric, dominating and bounded by L.
    #[test]
    fn symmetrization_invariants(
        x in -10.0f64..10.0,
        y in -10.0f64..10.0,
        c in 0.01f64..1.0,
        delta in 0.05f64..2.0,
    ) {
        let pert = PerturbationF::threshold_one_sided(c, delta);
        let sym = symmetrize(&pert);
        let fb_xy = sym.eval(&[x], &[y]);
        let fb_yx = sym.eval(&[y], &[x]);
        prop_assert_eq!(fb_xy, fb_yx);
        prop_assert!(pert.eval(&[x], &[y]).abs() <= fb_xy);
        prop_assert!(fb_xy <= sym.bound_l + 1e-15);
    }

    // The envelope is nonincreasing in the separation and positive.
    #[test]
    fn envelope_monotone_in_separation(
        t in 0.01f64..4.0,
        r1 in 0.0f64..20.0,
        r2 in 0.0f64..20.0,
        alpha in 0.3f64..1.9,
    ) {
        let env = Envelope::new(1, alpha);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let v_lo = env.eval(t, lo).unwrap();
        let v_hi = env.eval(t, hi).unwrap();
        prop_assert!(v_hi <= v_lo * (1.0 + 1e-12));
        prop_assert!(v_hi > 0.0);
    }
}

#[test]
fn backward_terms_match_forward_terms_after_reindexing() {
    // Term-by-term duality on a concrete sequence: the i-th backward term
    // on the original equals the i-th forward term on the reversal.
    let marks = [
        (0.2, rational(1, 2)),
        (0.5, rational(-3, 4)),
        (0.9, rational(5, 3)),
    ];
    let seq = JumpSequence::from_pairs(&marks, 1.0).unwrap();
    let reversed = seq.reversed();
    for n in 1..=5u32 {
        let (_, rhs_b) = power_backward(&seq, n, 1.0).unwrap();
        let (_, rhs_f) = power_forward(&reversed, n, 1.0).unwrap();
        // The totals agree...
        assert_eq!(rhs_b, rhs_f);
    }
    // ...and so do the raw jump views after reversal.
    let path = seq.functional_path();
    let rev_path = reversed.functional_path();
    let total = path.at(1.0);
    for j in 0..seq.len() {
        let k = seq.len() - 1 - j;
        // A_t - A_{s_j} on the original equals A_{r_k-} on the reversal.
        assert_eq!(total.clone() - path.post(j), rev_path.pre(k));
    }
}
