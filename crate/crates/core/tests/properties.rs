use proptest::prelude::*;
use vvca_core::mechanism::{utility, with_bidder_row};
use vvca_core::{
    brute_force_winner, run_auction, sample_batch, solve_winner, AuctionSize, SettingId, ValuationProfile, VvcaParams,
};

/// A random instance with `n, m <= 3`, drawn from a sampling setting, and
/// boosts in `[-1, 1]`.
fn instance() -> impl Strategy<Value = (ValuationProfile, VvcaParams)> {
    (1usize..=3, 1usize..=3, 0usize..4, any::<u64>()).prop_flat_map(|(n, m, s, seed)| {
        let size = AuctionSize::new(n, m).unwrap();
        (
            proptest::collection::vec(-1.0f64..=1.0, n),
            proptest::collection::vec(-1.0f64..=1.0, size.table_len()),
        )
            .prop_map(move |(alpha, lambda)| {
                let profile = sample_batch(SettingId::ALL[s], size, 1, seed).unwrap().profiles()[0].clone();
                (profile, VvcaParams::new(size, alpha, lambda).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dp_matches_exhaustive_search((p, q) in instance()) {
        let (a, w) = solve_winner(&p, &q).unwrap();
        let (b, v) = brute_force_winner(&p, &q).unwrap();
        prop_assert!((w - v).abs() <= 1e-12 * v.abs().max(1.0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn revenue_splits_and_payments_are_nonnegative((p, q) in instance()) {
        let o = run_auction(&p, &q).unwrap();
        let tol = 1e-9 * o.revenue.abs().max(1.0);
        prop_assert!((o.revenue - o.welfare_z - o.continuous_f).abs() <= tol);
        prop_assert!((o.revenue - o.payments.iter().sum::<f64>()).abs() <= tol);
        prop_assert!(o.payments.iter().all(|x| *x >= -1e-12));
    }

    #[test]
    fn scaling_weights_and_boosts_keeps_revenue((p, q) in instance(), c in 0.1f64..10.0) {
        let r = run_auction(&p, &q).unwrap().revenue;
        let s = run_auction(&p, &q.scaled(c)).unwrap().revenue;
        prop_assert!((r - s).abs() <= 1e-9 * r.abs().max(1.0));
    }

    #[test]
    fn misreporting_never_pays((p, q) in instance(), k in 0.0f64..3.0) {
        for i in 0..q.size().n_bidders {
            let honest = utility(&p, &p, &q, i).unwrap();
            prop_assert!(honest >= -1e-9);
            let row: Vec<f64> = p.row(i).iter().map(|v| v * k).collect();
            let lied = with_bidder_row(&p, i, &row).unwrap();
            prop_assert!(utility(&p, &lied, &q, i).unwrap() <= honest + 1e-9);
        }
    }
}
