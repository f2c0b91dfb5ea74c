use cipca_core::panel::{build_weights, rank_transform, standardize, ImputePolicy, WeightScheme, DEFAULT_PRICE_FLOOR};
use cipca_core::similarity::{similarity_matrix, to_distance};
use cipca_core::synthetic::{block_characteristics, BlockSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64, n_assets: usize, n_chars: usize) -> cipca_core::panel::CharacteristicPanel {
    let spec = BlockSpec { n_assets, n_months: 4, n_chars, n_blocks: 2, seed, ..BlockSpec::default() };
    block_characteristics(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranks_ignore_monotone_transforms(seed in 0u64..10_000, n in 5usize..40, col in 0usize..4) {
        let panel = small(seed, n, 4);
        let mut moved = panel.clone();
        for m in &mut moved.months {
            m.chars.column_mut(col).apply(|v| *v = v.powi(3) * 2.0 - 7.0);
        }
        let (a, b) = (rank_transform(&panel), rank_transform(&moved));
        prop_assert_eq!(&a.ranks, &b.ranks);
        for r in &a.ranks {
            for c in r.column_iter() {
                let mut v: Vec<f64> = c.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                let expect: Vec<f64> = (1..=v.len()).map(|k| k as f64).collect();
                prop_assert_eq!(v, expect);
            }
        }
    }

    #[test]
    fn weights_sum_to_one(seed in 0u64..10_000, n in 5usize..40, equal in any::<bool>()) {
        let scheme = if equal { WeightScheme::Equal } else { WeightScheme::Value };
        let panel = small(seed, n, 3);
        let w = build_weights(&panel, scheme, DEFAULT_PRICE_FLOOR).unwrap();
        for (m, wt) in panel.months.iter().zip(&w.w) {
            prop_assert!((wt.sum() - 1.0).abs() < 1e-12);
            prop_assert!(wt.iter().all(|&v| v >= 0.0));
            if equal {
                for (p, &v) in m.prices.iter().zip(wt.iter()) {
                    prop_assert_eq!(v == 0.0, *p < DEFAULT_PRICE_FLOOR);
                }
            }
        }
    }

    #[test]
    fn instruments_are_cross_sectional_zscores(seed in 0u64..10_000, n in 5usize..40) {
        let panel = small(seed, n, 4);
        let inst = standardize(&panel, ImputePolicy::Reject).unwrap();
        for z in &inst.z {
            prop_assert!(z.column(0).iter().all(|&v| v == 1.0));
            for c in 1..z.ncols() {
                let col = z.column(c);
                let mean = col.mean();
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
                prop_assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_and_distance_ranges(seed in 0u64..10_000, n in 5usize..40, chars in 2usize..7) {
        let panel = small(seed, n, chars);
        let w = build_weights(&panel, WeightScheme::Value, DEFAULT_PRICE_FLOOR).unwrap();
        let s = similarity_matrix(&rank_transform(&panel), &w).unwrap();
        let d = to_distance(&s).unwrap();
        let lo = (-1.0f64).exp();
        for i in 0..chars {
            prop_assert_eq!(s.s[(i, i)], 1.0);
            prop_assert_eq!(d.d[(i, i)], 0.0);
            for j in 0..chars {
                prop_assert_eq!(s.s[(i, j)], s.s[(j, i)]);
                prop_assert!(s.rho[(i, j)].abs() <= 1.0);
                prop_assert!(s.s[(i, j)] >= lo && s.s[(i, j)] <= 1.0);
                prop_assert!((s.s[(i, j)] - (s.rho[(i, j)].abs() - 1.0).exp()).abs() < 1e-15);
                prop_assert!((d.d[(i, j)] - (1.0 / s.s[(i, j)] - 1.0)).abs() < 1e-15);
                prop_assert!(d.d[(i, j)] >= 0.0 && d.d[(i, j)] <= std::f64::consts::E - 1.0 + 1e-15);
            }
        }
    }
}
