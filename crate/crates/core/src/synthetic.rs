//! Seeded synthetic panels with planted structure, for tests, fixtures and
//! benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};

use crate::clustering::Partition;
use crate::error::Result;
use crate::series::FactorSeries;
use crate::factor_model::RestrictionMask;
use crate::panel::{
    build_weights, standardize, CharacteristicPanel, EstimationPanel, ImputePolicy, MonthSlice, WeightScheme,
    DEFAULT_PRICE_FLOOR,
};

/// `YYYYMM` id of the month `offset` months after January 2000.
pub fn month_id(offset: usize) -> u32 {
    let y = 2000 + offset / 12;
    let m = offset % 12 + 1;
    (y * 100 + m) as u32
}

/// Characteristic panel whose columns fall into equal-sized blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub n_assets: usize,
    pub n_months: usize,
    pub n_chars: usize,
    pub n_blocks: usize,
    /// Correlation between characteristics of the same block.
    pub intra: f64,
    /// Correlation between characteristics of different blocks.
    pub inter: f64,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self { n_assets: 200, n_months: 240, n_chars: 12, n_blocks: 3, intra: 0.8, inter: 0.2, seed: 0 }
    }
}

/// Block membership of characteristic `i`: contiguous equal blocks.
pub fn block_partition(n_chars: usize, n_blocks: usize) -> Partition {
    let assignment = (0..n_chars).map(|i| i * n_blocks / n_chars).collect();
    let labels = (1..=n_blocks).map(|b| format!("B{b}")).collect();
    Partition::new(assignment, Some(labels)).expect("blocks are nonempty")
}

/// Gaussian characteristics `x = a g + b h_block + c e` with unit variance,
/// `a^2 = inter` and `a^2 + b^2 = intra`; returns are zero. Market caps are
/// lognormal, and about 5% of prices fall below the equal-weight floor.
pub fn block_characteristics(spec: &BlockSpec, rng: &mut ChaCha8Rng) -> (CharacteristicPanel, Partition) {
    assert!(spec.n_blocks >= 1 && spec.n_blocks <= spec.n_chars);
    assert!(0.0 <= spec.inter && spec.inter <= spec.intra && spec.intra < 1.0);
    let partition = block_partition(spec.n_chars, spec.n_blocks);
    let a = spec.inter.sqrt();
    let b = (spec.intra - spec.inter).sqrt();
    let c = (1.0 - spec.intra).sqrt();
    let cap = LogNormal::new(6.0, 1.5).expect("valid lognormal");
    let assets: Vec<String> = (0..spec.n_assets).map(|k| format!("A{k:04}")).collect();
    let months = (0..spec.n_months)
        .map(|t| {
            let mut chars = DMatrix::zeros(spec.n_assets, spec.n_chars);
            for r in 0..spec.n_assets {
                let g: f64 = rng.sample(StandardNormal);
                let h: Vec<f64> = (0..spec.n_blocks).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..spec.n_chars {
                    let e: f64 = rng.sample(StandardNormal);
                    chars[(r, i)] = a * g + b * h[partition.assignment()[i]] + c * e;
                }
            }
            let mktcap = DVector::from_fn(spec.n_assets, |_, _| cap.sample(rng));
            let prices = DVector::from_fn(spec.n_assets, |_, _| {
                if rng.random::<f64>() < 0.05 { rng.random_range(1.0..DEFAULT_PRICE_FLOOR) } else { rng.random_range(DEFAULT_PRICE_FLOOR..150.0) }
            });
            MonthSlice {
                date: month_id(t),
                assets: assets.clone(),
                chars,
                returns: DVector::zeros(spec.n_assets),
                mktcap,
                prices,
            }
        })
        .collect();
    let names = (1..=spec.n_chars).map(|i| format!("c{i:02}")).collect();
    (CharacteristicPanel { char_names: names, months }, partition)
}

/// Panel whose returns follow a cluster-restricted factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub blocks: BlockSpec,
    /// Noise standard deviation as a multiple of the signal's.
    pub noise_ratio: f64,
    /// Monthly Sharpe ratios of the cluster factors, cycled if shorter than
    /// the cluster count.
    pub sharpes: Vec<f64>,
    pub factor_sd: f64,
    pub market_mean: f64,
    pub market_sd: f64,
    pub weights: WeightScheme,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            blocks: BlockSpec::default(),
            noise_ratio: 0.5,
            sharpes: vec![0.35, 0.25, 0.15],
            factor_sd: 0.03,
            market_mean: 0.006,
            market_sd: 0.045,
            weights: WeightScheme::Value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub raw: CharacteristicPanel,
    pub panel: EstimationPanel,
    pub partition: Partition,
    /// Cluster factors first, then the constant-only market factor.
    pub mask: RestrictionMask,
    pub gamma: DMatrix<f64>,
    /// `T x (K+1)` true factor returns.
    pub factors: DMatrix<f64>,
    /// Noiseless returns `Z_t Γ f_t` per month.
    pub signal: Vec<DVector<f64>>,
}

/// Returns `r_t = Z_t Γ f_t + e_t` with a block loading matrix aligned with
/// the characteristic blocks plus a market factor on the constant.
pub fn planted_panel(spec: &PlantedSpec) -> Result<Planted> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.blocks.seed);
    let (mut raw, partition) = block_characteristics(&spec.blocks, &mut rng);
    let k = partition.k();
    let mask = RestrictionMask::from_partition(&partition, true);
    let l = spec.blocks.n_chars + 1;
    let j = k + 1;

    let mut gamma = DMatrix::zeros(l, j);
    for c in 0..k {
        let members: Vec<usize> = (0..spec.blocks.n_chars).filter(|&i| partition.assignment()[i] == c).collect();
        let size = members.len() as f64;
        for (p, &i) in members.iter().enumerate() {
            let sign = if p % 3 == 2 { -1.0 } else { 1.0 };
            gamma[(i + 1, c)] = sign * (0.6 + 0.8 * rng.random::<f64>()) / size.sqrt();
        }
        gamma[(0, c)] = 0.1 * rng.random::<f64>();
    }
    gamma[(0, k)] = 1.0;

    let t_total = spec.blocks.n_months;
    let mut factors = DMatrix::zeros(t_total, j);
    let market = Normal::new(spec.market_mean, spec.market_sd).expect("valid normal");
    for t in 0..t_total {
        for c in 0..k {
            let sr = spec.sharpes[c % spec.sharpes.len()];
            let d = Normal::new(sr * spec.factor_sd, spec.factor_sd).expect("valid normal");
            factors[(t, c)] = d.sample(&mut rng);
        }
        factors[(t, k)] = market.sample(&mut rng);
    }

    let instruments = standardize(&raw, ImputePolicy::Mean)?;
    let signal: Vec<DVector<f64>> = instruments
        .z
        .iter()
        .enumerate()
        .map(|(t, z)| z * (&gamma * factors.row(t).transpose()))
        .collect();
    let count: usize = signal.iter().map(|s| s.len()).sum();
    let mean = signal.iter().flat_map(|s| s.iter()).sum::<f64>() / count as f64;
    let var = signal.iter().flat_map(|s| s.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    let noise = Normal::new(0.0, spec.noise_ratio * var.sqrt()).expect("valid normal");
    for (m, s) in raw.months.iter_mut().zip(&signal) {
        m.returns = DVector::from_fn(s.len(), |r, _| s[r] + noise.sample(&mut rng));
    }
    let weights = build_weights(&raw, spec.weights, DEFAULT_PRICE_FLOOR)?;
    let panel = EstimationPanel::assemble(&raw, &instruments, &weights)?;
    Ok(Planted { raw, panel, partition, mask, gamma, factors, signal })
}

/// Unstructured panel: independent Gaussian characteristics and returns with
/// value weights.
pub fn random_panel(n_assets: usize, n_months: usize, n_chars: usize, seed: u64) -> Result<EstimationPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BlockSpec { n_assets, n_months, n_chars, n_blocks: 1, intra: 0.0, inter: 0.0, seed };
    let (mut raw, _) = block_characteristics(&spec, &mut rng);
    let ret = Normal::new(0.01, 0.1).expect("valid normal");
    for m in &mut raw.months {
        m.returns = DVector::from_fn(n_assets, |_, _| ret.sample(&mut rng));
    }
    let instruments = standardize(&raw, ImputePolicy::Mean)?;
    let weights = build_weights(&raw, WeightScheme::Value, DEFAULT_PRICE_FLOOR)?;
    EstimationPanel::assemble(&raw, &instruments, &weights)
}

/// Factor set whose first `n_efficient` columns span the tangency portfolio:
/// the remaining columns load on them with zero intercept.
pub fn mve_factors(n_months: usize, n_factors: usize, n_efficient: usize, seed: u64) -> FactorSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, 0.03).expect("valid normal");
    let mut values = DMatrix::zeros(n_months, n_factors);
    for c in 0..n_efficient {
        let mean = 0.006 + 0.002 * c as f64;
        for t in 0..n_months {
            values[(t, c)] = mean + eps.sample(&mut rng);
        }
    }
    for c in n_efficient..n_factors {
        let betas: Vec<f64> = (0..n_efficient).map(|_| rng.random_range(-0.8..0.8)).collect();
        for t in 0..n_months {
            let fit: f64 = betas.iter().enumerate().map(|(k, b)| b * values[(t, k)]).sum();
            values[(t, c)] = fit + eps.sample(&mut rng);
        }
    }
    let names = (0..n_factors).map(|c| format!("F{}", c + 1)).collect();
    FactorSeries::new((0..n_months).map(month_id).collect(), names, values).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_ids_roll_over_years() {
        assert_eq!(month_id(0), 200001);
        assert_eq!(month_id(11), 200012);
        assert_eq!(month_id(12), 200101);
    }

    #[test]
    fn planted_panel_is_reproducible() {
        let spec = PlantedSpec {
            blocks: BlockSpec { n_assets: 30, n_months: 12, n_chars: 6, n_blocks: 2, seed: 9, ..BlockSpec::default() },
            ..PlantedSpec::default()
        };
        let a = planted_panel(&spec).unwrap();
        let b = planted_panel(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.n_factors(), 3);
        for (i, j) in (0..7).flat_map(|i| (0..3).map(move |j| (i, j))) {
            if !a.mask.is_free(i, j) {
                assert_eq!(a.gamma[(i, j)], 0.0);
            }
        }
    }
}
