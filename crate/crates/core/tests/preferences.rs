use ezddc::preferences::{Family, PreferenceSpec, Resolution, Timing, TwoPeriodLottery};
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = PreferenceSpec> {
    prop_oneof![
        (0.0..2.0f64, 0.0..2.0f64, 0.5..0.99f64).prop_map(|(a, r, b)| PreferenceSpec::cara(a, r, b).unwrap()),
        (0.0..0.95f64, 0.0..0.95f64, 0.5..0.99f64).prop_map(|(a, r, b)| PreferenceSpec::crra(a, r, b).unwrap()),
    ]
}

/// Consumption levels comfortably inside the utility domain.
fn consumption(p: &PreferenceSpec) -> impl Strategy<Value = f64> {
    match p.family {
        Family::CaraEz => -3.0..5.0f64,
        Family::CrraEz => 0.05..20.0f64,
    }
}

/// Finite-difference step that stays clear of a CARA ceiling `1/r`.
fn step(p: &PreferenceSpec, r: f64, z: f64) -> f64 {
    let room = match p.family {
        Family::CaraEz if r > 0.0 => 1.0 / r - z,
        _ => f64::INFINITY,
    };
    1e-4 * (1.0 + z.abs()).min(room)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn utility_round_trip((p, c) in spec().prop_flat_map(|p| (Just(p), consumption(&p)))) {
        let y = p.utility(c).unwrap();
        prop_assert!(close(p.utility_inverse(y).unwrap(), c, 1e-9));
    }

    #[test]
    fn aggregator_round_trip((p, c) in spec().prop_flat_map(|p| (Just(p), consumption(&p)))) {
        let z = p.utility(c).unwrap();
        let v = p.aggregator(z).unwrap();
        prop_assert!(close(p.aggregator_inverse(v).unwrap(), z, 1e-9));
    }

    #[test]
    fn utility_and_aggregator_increase(
        (p, c, dc) in spec().prop_flat_map(|p| (Just(p), consumption(&p), 0.01..1.0f64))
    ) {
        let lo = p.utility(c).unwrap();
        let hi = p.utility(c + dc).unwrap();
        prop_assert!(hi > lo);
        prop_assert!(p.aggregator(hi).unwrap() > p.aggregator(lo).unwrap());
    }

    #[test]
    fn psi_prime_matches_finite_difference(
        (p, c, y) in spec().prop_flat_map(|p| (Just(p), consumption(&p), consumption(&p)))
    ) {
        let yv = p.utility(y).unwrap();
        let z = p.aggregator(p.utility(c).unwrap()).unwrap();
        let h = step(&p, p.alpha, z) * 1e-2;
        let fd = (p.psi(yv, z + h).unwrap() - p.psi(yv, z - h).unwrap()) / (2.0 * h);
        let an = p.psi_prime(yv, z).unwrap();
        prop_assert!(close(fd, an, 1e-4), "fd {fd} analytic {an}");
    }

    #[test]
    fn arrow_pratt_matches_curvature((p, c) in spec().prop_flat_map(|p| (Just(p), consumption(&p)))) {
        let z = p.utility(c).unwrap();
        let h = step(&p, p.rho, z);
        let d1 = p.aggregator_prime(z).unwrap();
        let d2 = (p.aggregator_prime(z + h).unwrap() - p.aggregator_prime(z - h).unwrap()) / (2.0 * h);
        let a = p.arrow_pratt(z).unwrap();
        prop_assert!(close(-d2 / d1, a, 1e-4), "fd {} analytic {a}", -d2 / d1);
    }

    #[test]
    fn separable_collapses_to_identity(r in 0.0..2.0f64, z in -3.0..0.4f64) {
        let p = PreferenceSpec::cara(r, r, 0.9).unwrap();
        prop_assert_eq!(p.aggregator(z).unwrap(), z);
        prop_assert_eq!(p.psi_prime(1.0, z).unwrap(), 0.9);
        prop_assert_eq!(p.timing_preference(), Timing::Indifferent);
    }

    #[test]
    fn curvature_sign_follows_timing((p, c) in spec().prop_flat_map(|p| (Just(p), consumption(&p)))) {
        let a = p.arrow_pratt(p.utility(c).unwrap()).unwrap();
        match p.timing_preference() {
            Timing::Early => prop_assert!(a > 0.0),
            Timing::Late => prop_assert!(a < 0.0),
            Timing::Indifferent => prop_assert!(a == 0.0),
        }
    }
}

#[test]
fn coin_flip_lottery_ranks_by_timing() {
    let early = PreferenceSpec::cara(0.8, 0.2, 0.9).unwrap();
    let late = PreferenceSpec::cara(0.2, 0.8, 0.9).unwrap();
    for (p, want) in [(early, Timing::Early), (late, Timing::Late)] {
        let vp = p.lottery_value(&TwoPeriodLottery::coin_flip(Resolution::Period1)).unwrap();
        let vq = p.lottery_value(&TwoPeriodLottery::coin_flip(Resolution::Period2)).unwrap();
        assert_eq!(vp > vq, want == Timing::Early);
    }
}
