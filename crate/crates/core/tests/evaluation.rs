use cipca_core::evaluation::{tangency_backtest, tangency_weights, TangencyOptions};
use cipca_core::series::FactorSeries;
use cipca_core::synthetic::month_id;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn series(t: usize, j: usize, seed: u64) -> FactorSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.03).unwrap();
    let values = DMatrix::from_fn(t, j, |_, c| 0.002 * (c + 1) as f64 + noise.sample(&mut rng));
    FactorSeries::new((0..t).map(month_id).collect(), (0..j).map(|c| format!("f{c}")).collect(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_rebalance_is_scaled_tangency(j in 1usize..5, extra in 1usize..30, seed in 0u64..10_000) {
        let burn_in = j + 2 + (seed as usize) % 20;
        let f = series(burn_in + extra, j, seed);
        let res = tangency_backtest(&f, &TangencyOptions { burn_in, ridge: false }).unwrap();
        prop_assert_eq!(res.returns.len(), extra);
        for (r, w) in res.weights_path.iter().enumerate() {
            let t = burn_in + r;
            let hist = f.values.rows(0, t).into_owned();
            let (mu, cov) = {
                let n = t as f64;
                let mu = hist.row_mean().transpose();
                let centered = DMatrix::from_fn(t, j, |i, c| hist[(i, c)] - mu[c]);
                (mu, centered.transpose() * &centered / n)
            };
            let past: Vec<f64> = (0..t).map(|i| hist.row(i).transpose().dot(w)).collect();
            let m = past.iter().sum::<f64>() / t as f64;
            let vol = (past.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt();
            prop_assert!((vol - 0.01).abs() < 1e-10, "vol {vol}");
            // Σ w is a positive multiple of μ
            let sw = &cov * w;
            let lambda = sw.dot(&mu) / mu.dot(&mu);
            prop_assert!(lambda > 0.0);
            prop_assert!((sw - &mu * lambda).norm() <= 1e-9 * mu.norm() * lambda);
            prop_assert_eq!(res.returns[r], w.dot(&f.row(t)));
            prop_assert_eq!(Some(w.clone()), tangency_weights(&hist, false).map(|x| x.0));
        }
    }
}
