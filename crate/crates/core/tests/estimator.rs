use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vvca_core::baselines::vcg_params;
use vvca_core::harness::smoothing_point;
use vvca_core::optimizer::{estimate_grad_z_from, welfare_mean};
use vvca_core::{
    run_auction, sample_batch, sample_profile, AuctionSize, SettingId, SmoothingConfig, ValuationProfile, VvcaParams,
};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn baseline_keeps_the_mean_and_cuts_the_variance() {
    let size = AuctionSize::new(2, 2).unwrap();
    let batch = sample_batch(SettingId::A, size, 256, 6060).unwrap();
    let params = vcg_params(size);
    let sm = SmoothingConfig {
        sigma: 0.01,
        n_r: 1,
        seed: 0,
    };
    let base = welfare_mean(batch.profiles(), &params, None).unwrap();
    let draws = 10_000;
    // Same directions for both estimators.
    let (mut with, mut without) = (ChaCha8Rng::seed_from_u64(7), ChaCha8Rng::seed_from_u64(7));
    let dim = 2 + size.table_len();
    let (mut a, mut b) = (
        vec![Vec::with_capacity(draws); dim],
        vec![Vec::with_capacity(draws); dim],
    );
    for _ in 0..draws {
        let g = estimate_grad_z_from(batch.profiles(), &params, &sm, Some(base), &mut with, None).unwrap();
        let h = estimate_grad_z_from(batch.profiles(), &params, &sm, None, &mut without, None).unwrap();
        for (k, (x, y)) in g
            .d_alpha
            .iter()
            .chain(&g.d_lambda)
            .zip(h.d_alpha.iter().chain(&h.d_lambda))
            .enumerate()
        {
            a[k].push(*x);
            b[k].push(*y);
        }
    }
    for k in 0..dim {
        let (ma, va) = moments(&a[k]);
        let (mb, vb) = moments(&b[k]);
        let se = ((va + vb) / draws as f64).sqrt();
        assert!((ma - mb).abs() <= 3.0 * se, "coordinate {k}: {ma} vs {mb} (se {se})");
        assert!(va < vb, "coordinate {k}: baselined variance {va} not below {vb}");
    }
}

#[test]
fn doubling_directions_shrinks_spread_by_root_two() {
    let size = AuctionSize::new(2, 2).unwrap();
    let batch = sample_batch(SettingId::A, size, 256, 1010).unwrap();
    let mut params = vcg_params(size);
    // Inside the range where the swept boost changes allocations.
    params.lambda_mut()[3] = 0.2;
    let spread = |directions: usize| {
        let xs: Vec<f64> = (0..400u64)
            .map(|s| {
                smoothing_point(batch.profiles(), &params, 3, 0.01, directions, 10_000 + s)
                    .unwrap()
                    .2
            })
            .collect();
        moments(&xs).1.sqrt()
    };
    let ratio = spread(32) / spread(16);
    assert!((ratio - 0.5f64.sqrt()).abs() <= 0.2 * 0.5f64.sqrt(), "ratio {ratio}");
}

fn permuted(profile: &ValuationProfile, params: &VvcaParams, order: &[usize]) -> (ValuationProfile, VvcaParams) {
    let size = profile.size();
    let values = order.iter().flat_map(|&i| profile.row(i).to_vec()).collect();
    let alpha = order.iter().map(|&i| params.alpha()[i]).collect();
    let lambda = order.iter().flat_map(|&i| params.lambda_row(i).to_vec()).collect();
    (
        ValuationProfile::from_table(size, values).unwrap(),
        VvcaParams::new(size, alpha, lambda).unwrap(),
    )
}

#[test]
fn relabelling_bidders_permutes_payments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 0..300 {
        let size = AuctionSize::new(3, 3).unwrap();
        let profile = sample_profile(SettingId::ALL[t % 4], size, &mut rng);
        let alpha = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = (0..size.table_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = VvcaParams::new(size, alpha, lambda).unwrap();
        let order = [2, 0, 1];
        let (p2, q2) = permuted(&profile, &params, &order);
        let a = run_auction(&profile, &params).unwrap();
        let b = run_auction(&p2, &q2).unwrap();
        assert!((a.revenue - b.revenue).abs() <= 1e-9 * a.revenue.abs().max(1.0));
        for (k, &i) in order.iter().enumerate() {
            assert!((b.payments[k] - a.payments[i]).abs() <= 1e-9);
            assert_eq!(b.allocation.bundles()[k], a.allocation.bundles()[i]);
        }
    }
}
