//! Posterior probabilities of factor subsets.
//!
//! Every nonempty subset of the factors is a candidate model. The included
//! factors follow a mean model with a normal–inverse-Wishart prior centred
//! on a training subsample; the excluded factors are regressed on the
//! included ones without intercept. Covariance priors of both blocks are the
//! marginal and conditional of one inverse-Wishart prior on all factors, so
//! every model shares the same covariance prior. Both evidences are closed
//! form, so even thousands of subsets are cheap to enumerate.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{is_singular, ln_det_spd, mean_cov, solve_spd, solve_spd_matrix};
use crate::series::FactorSeries;

pub const MAX_FACTORS: usize = 20;
pub const DEFAULT_PRIOR_FRACTION: f64 = 0.1;
pub const DEFAULT_TOP_N: usize = 10;

/// Name of the evidence used, carried in every ranked output.
pub const EVIDENCE_METHOD: &str = "conjugate NIW";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Bit `j` set when factor `j` is included.
    pub id: u32,
    pub included: Vec<usize>,
    pub excluded: Vec<usize>,
}

impl ModelSpec {
    pub fn from_id(id: u32, j: usize) -> Self {
        let (included, excluded) = (0..j).partition(|&c| id >> c & 1 == 1);
        Self { id, included, excluded }
    }
}

/// All `2^J - 1` nonempty subsets in binary counting order.
pub fn enumerate_models(j: usize) -> Result<Vec<ModelSpec>> {
    if !(1..=MAX_FACTORS).contains(&j) {
        return Err(Error::Precondition(format!("subset enumeration needs 1..={MAX_FACTORS} factors, got {j}")));
    }
    Ok((1..1u32 << j).map(|id| ModelSpec::from_id(id, j)).collect())
}

/// Prior hyperparameters of one model, estimated on the training months.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub alpha0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    /// The prior covariance of the included means is `k * sigma0`.
    pub k: f64,
    pub tr: f64,
    pub sh2max: f64,
    /// Slopes of the excluded on the included factors (`p x q`).
    pub beta0: DMatrix<f64>,
    /// Row precision of the slope prior.
    pub lambda0: DMatrix<f64>,
    /// Residual covariance of the excluded regression.
    pub sigma0_excluded: DMatrix<f64>,
    /// Inverse-Wishart degrees of freedom of the joint prior, `J + 2`.
    pub nu0: f64,
}

/// Number of prior months, `floor(tr * T)`.
pub fn prior_length(tr: f64, t: usize) -> Result<usize> {
    if !(tr > 0.0 && tr < 1.0) {
        return Err(Error::Precondition(format!("prior fraction must lie in (0, 1), got {tr}")));
    }
    Ok((tr * t as f64).floor() as usize)
}

/// Squared Sharpe ratio of the tangency portfolio of all columns.
pub fn max_squared_sharpe(values: &DMatrix<f64>) -> Result<f64> {
    let (mu, sigma) = mean_cov(values);
    if is_singular(&sigma) {
        return Err(Error::DegenerateCovariance { block: "all factors".into() });
    }
    let u = solve_spd(&sigma, &mu).ok_or_else(|| Error::DegenerateCovariance { block: "all factors".into() })?;
    Ok(mu.dot(&u))
}

/// Prior for `spec` from the first `floor(tr * T)` months of `f`. A missing
/// `sh2max` is the in-sample squared tangency Sharpe ratio of all factors
/// over those months.
pub fn estimate_prior(f: &FactorSeries, spec: &ModelSpec, tr: f64, sh2max: Option<f64>) -> Result<PriorSpec> {
    let n0 = prior_length(tr, f.len())?;
    let p = spec.included.len();
    if p == 0 {
        return Err(Error::Precondition("model includes no factor".into()));
    }
    let j = f.n_series();
    if n0 < j + 2 {
        return Err(Error::Precondition(format!("prior sample of {n0} months is shorter than {}", j + 2)));
    }
    let head = f.values.rows(0, n0).into_owned();
    let sh2max = match sh2max {
        Some(v) => v,
        None => max_squared_sharpe(&head)?,
    };
    if !(sh2max > 0.0 && sh2max.is_finite()) {
        return Err(Error::Domain(format!("maximal squared Sharpe ratio must be positive, got {sh2max}")));
    }
    let (_, full) = mean_cov(&head);
    let x0 = head.select_columns(&spec.included);
    let (alpha0, _) = mean_cov(&x0);
    let sigma0 = full.select_rows(&spec.included).select_columns(&spec.included);
    if is_singular(&sigma0) {
        return Err(Error::DegenerateCovariance { block: "included".into() });
    }

    // excluded block: conditional of the joint inverse-Wishart prior on all
    // factors given the included block
    let q = spec.excluded.len();
    let lambda0 = sigma0.clone();
    let (beta0, sigma0_excluded) = if q == 0 {
        (DMatrix::zeros(p, 0), DMatrix::zeros(0, 0))
    } else {
        let cross = full.select_rows(&spec.included).select_columns(&spec.excluded);
        let beta0 =
            solve_spd_matrix(&sigma0, &cross).ok_or_else(|| Error::DegenerateCovariance { block: "included".into() })?;
        let s = full.select_rows(&spec.excluded).select_columns(&spec.excluded) - cross.transpose() * &beta0;
        let s = (&s + s.transpose()) * 0.5;
        if is_singular(&s) {
            return Err(Error::DegenerateCovariance { block: "excluded".into() });
        }
        (beta0, s)
    };
    let nu0 = (p + q) as f64 + 2.0;
    Ok(PriorSpec { alpha0, sigma0, k: sh2max / p as f64, tr, sh2max, beta0, lambda0, sigma0_excluded, nu0 })
}

/// `ln Γ_p(a)`.
fn ln_mv_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (0..p).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

fn ln_det(a: &DMatrix<f64>, block: &str) -> Result<f64> {
    ln_det_spd(a).filter(|v| v.is_finite()).ok_or_else(|| Error::DegenerateCovariance { block: block.into() })
}

/// Log evidence of the posterior months `post` (all `J` columns) under
/// `spec`.
pub fn log_marginal(spec: &ModelSpec, post: &DMatrix<f64>, prior: &PriorSpec) -> Result<f64> {
    let n = post.nrows();
    let j = post.ncols();
    if n <= j + 2 {
        return Err(Error::Precondition(format!("posterior sample of {n} months must exceed {}", j + 2)));
    }
    let nf = n as f64;
    let x = post.select_columns(&spec.included);
    let p = spec.included.len();

    // included block: mean model, prior mean ~ N(alpha0, k Σ), Σ ~ IW(p + 2, sigma0)
    let kappa0 = 1.0 / prior.k;
    let kappa_n = kappa0 + nf;
    let nu0 = p as f64 + 2.0;
    let nu_n = nu0 + nf;
    let (xbar, cov) = mean_cov(&x);
    let d = &xbar - &prior.alpha0;
    let s_n = &prior.sigma0 + cov * nf + &d * d.transpose() * (kappa0 * nf / kappa_n);
    let mut lm = -nf * p as f64 / 2.0 * PI.ln() + ln_mv_gamma(p, nu_n / 2.0) - ln_mv_gamma(p, nu0 / 2.0)
        + nu0 / 2.0 * ln_det(&prior.sigma0, "included")?
        - nu_n / 2.0 * ln_det(&s_n, "included")?
        + p as f64 / 2.0 * (kappa0 / kappa_n).ln();

    let q = spec.excluded.len();
    if q > 0 {
        // excluded block: Y = X B + E, B ~ MN(beta0, lambda0^{-1}, Σ*), Σ* ~ IW(J + 2, sigma0_excluded)
        let y = post.select_columns(&spec.excluded);
        let nu0 = prior.nu0;
        let nu_n = nu0 + nf;
        let lambda_n = &prior.lambda0 + x.transpose() * &x;
        let rhs = &prior.lambda0 * &prior.beta0 + x.transpose() * &y;
        let beta_n = solve_spd_matrix(&lambda_n, &rhs).ok_or_else(|| Error::DegenerateCovariance { block: "excluded".into() })?;
        let e = &y - &x * &beta_n;
        let db = &beta_n - &prior.beta0;
        let s_n = &prior.sigma0_excluded + e.transpose() * e + db.transpose() * &prior.lambda0 * db;
        lm += -nf * q as f64 / 2.0 * PI.ln() + ln_mv_gamma(q, nu_n / 2.0) - ln_mv_gamma(q, nu0 / 2.0)
            + q as f64 / 2.0 * (ln_det(&prior.lambda0, "excluded")? - ln_det(&lambda_n, "excluded")?)
            + nu0 / 2.0 * ln_det(&prior.sigma0_excluded, "excluded")?
            - nu_n / 2.0 * ln_det(&s_n, "excluded")?;
    }
    if !lm.is_finite() {
        return Err(Error::Domain(format!("log evidence of model {} is not finite", spec.id)));
    }
    Ok(lm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPosterior {
    pub spec: ModelSpec,
    pub log_marginal: f64,
    pub posterior: f64,
}

/// Ranked models with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub method: String,
    pub tr: f64,
    pub sh2max: f64,
    pub prior_months: usize,
    pub posterior_months: usize,
    pub n_models: usize,
    pub factor_names: Vec<String>,
    pub models: Vec<ModelPosterior>,
}

/// Posterior probabilities of every subset under equal model priors, in
/// subset-id order.
pub fn model_posteriors(f: &FactorSeries, tr: f64, sh2max: Option<f64>) -> Result<(f64, Vec<ModelPosterior>)> {
    let j = f.n_series();
    let specs = enumerate_models(j)?;
    let n0 = prior_length(tr, f.len())?;
    if n0 < j + 2 {
        return Err(Error::Precondition(format!("prior sample of {n0} months is shorter than {}", j + 2)));
    }
    let sh2max = match sh2max {
        Some(v) => v,
        None => max_squared_sharpe(&f.values.rows(0, n0).into_owned())?,
    };
    let post = f.values.rows(n0, f.len() - n0).into_owned();
    let lms: Vec<f64> = specs
        .par_iter()
        .map(|s| {
            let prior = estimate_prior(f, s, tr, Some(sh2max))?;
            log_marginal(s, &post, &prior)
        })
        .collect::<Result<_>>()?;
    let top = lms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = lms.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let models = specs
        .into_iter()
        .zip(lms)
        .zip(weights)
        .map(|((spec, log_marginal), w)| ModelPosterior { spec, log_marginal, posterior: w / total })
        .collect();
    Ok((sh2max, models))
}

/// Models sorted by decreasing posterior (ties by subset id), first `top_n`.
pub fn posterior_rank(f: &FactorSeries, tr: f64, sh2max: Option<f64>, top_n: usize) -> Result<Ranking> {
    let (sh2max, mut models) = model_posteriors(f, tr, sh2max)?;
    let n_models = models.len();
    models.sort_by(|a, b| b.posterior.total_cmp(&a.posterior).then(a.spec.id.cmp(&b.spec.id)));
    models.truncate(top_n);
    let n0 = prior_length(tr, f.len())?;
    Ok(Ranking {
        method: EVIDENCE_METHOD.into(),
        tr,
        sh2max,
        prior_months: n0,
        posterior_months: f.len() - n0,
        n_models,
        factor_names: f.names.clone(),
        models,
    })
}

impl Ranking {
    pub fn labels(&self, m: &ModelPosterior) -> Vec<&str> {
        m.spec.included.iter().map(|&c| self.factor_names[c].as_str()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rank", "posterior", "log_evidence", "included", "labels", "method"])?;
        for (r, m) in self.models.iter().enumerate() {
            let ids: Vec<String> = m.spec.included.iter().map(|c| c.to_string()).collect();
            out.write_record([
                (r + 1).to_string(),
                format!("{:.12e}", m.posterior),
                format!("{:.10}", m.log_marginal),
                ids.join(" "),
                self.labels(m).join(" "),
                self.method.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn series(values: DMatrix<f64>) -> FactorSeries {
        let t = values.nrows();
        let names = (0..values.ncols()).map(|j| format!("F{}", j + 1)).collect();
        FactorSeries::new((0..t).map(crate::synthetic::month_id).collect(), names, values).unwrap()
    }

    fn noise(t: usize, j: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.03).unwrap();
        DMatrix::from_fn(t, j, |_, _| n.sample(&mut rng))
    }

    #[test]
    fn model_counts() {
        assert_eq!(enumerate_models(3).unwrap().len(), 7);
        assert_eq!(enumerate_models(7).unwrap().len(), 127);
        assert_eq!(enumerate_models(13).unwrap().len(), 8191);
        assert!(enumerate_models(0).is_err());
        assert!(enumerate_models(21).is_err());
        let m = enumerate_models(3).unwrap();
        assert_eq!(m[0].included, vec![0]);
        assert_eq!(m[2].included, vec![0, 1]);
        assert_eq!(m[2].excluded, vec![2]);
        assert_eq!(m[6].excluded, Vec::<usize>::new());
    }

    #[test]
    fn k_scales_with_model_size() {
        let f = series(noise(200, 6, 1));
        let spec = ModelSpec::from_id(0b11111, 6);
        let p = estimate_prior(&f, &spec, 0.5, Some(0.5)).unwrap();
        assert_close!(p.k, 0.1, 1e-15);
    }

    #[test]
    fn prior_sample_rounds_down() {
        assert_eq!(prior_length(0.1, 100).unwrap(), 10);
        assert_eq!(prior_length(0.1, 109).unwrap(), 10);
        assert!(prior_length(1.0, 100).is_err());
        let f = series(noise(100, 2, 2));
        let p = estimate_prior(&f, &ModelSpec::from_id(0b01, 2), 0.1, Some(0.2)).unwrap();
        let head: f64 = (0..10).map(|t| f.values[(t, 0)]).sum::<f64>() / 10.0;
        assert_close!(p.alpha0[0], head, 1e-15);
    }

    #[test]
    fn constant_prior_factor_is_degenerate() {
        let mut v = noise(100, 2, 3);
        v.column_mut(0).fill(0.01);
        let f = series(v);
        let r = estimate_prior(&f, &ModelSpec::from_id(0b11, 2), 0.2, Some(0.1));
        assert!(matches!(r, Err(Error::DegenerateCovariance { ref block }) if block == "included"), "{r:?}");
    }

    #[test]
    fn single_factor_has_posterior_one() {
        let f = series(noise(120, 1, 4).add_scalar(0.01));
        let r = posterior_rank(&f, 0.2, None, 10).unwrap();
        assert_eq!(r.models.len(), 1);
        assert_eq!(r.models[0].posterior, 1.0);
        assert_eq!(r.method, EVIDENCE_METHOD);
    }

    #[test]
    fn posteriors_sum_to_one() {
        let f = series(noise(300, 6, 5).add_scalar(0.004));
        let (_, all) = model_posteriors(&f, 0.1, None).unwrap();
        assert_eq!(all.len(), 63);
        let total: f64 = all.iter().map(|m| m.posterior).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let ranked = posterior_rank(&f, 0.1, None, 10).unwrap();
        assert_eq!(ranked.models.len(), 10);
        assert!(ranked.models.windows(2).all(|w| w[0].posterior >= w[1].posterior));
    }

    #[test]
    fn excluded_order_does_not_matter() {
        let v = noise(200, 4, 6).add_scalar(0.003);
        let f = series(v.clone());
        // swap columns 2 and 3, both excluded from model {0}
        let g = series(v.select_columns(&[0, 1, 3, 2]));
        let spec = ModelSpec::from_id(0b0001, 4);
        let post_f = f.values.rows(20, 180).into_owned();
        let post_g = g.values.rows(20, 180).into_owned();
        let a = log_marginal(&spec, &post_f, &estimate_prior(&f, &spec, 0.1, Some(0.2)).unwrap()).unwrap();
        let b = log_marginal(&spec, &post_g, &estimate_prior(&g, &spec, 0.1, Some(0.2)).unwrap()).unwrap();
        assert_close!(a, b, 1e-9 * a.abs());
    }

    #[test]
    fn long_samples_stay_finite() {
        let f = series(noise(10_000, 15, 7).add_scalar(0.002));
        let spec = ModelSpec::from_id(0b101, 15);
        let prior = estimate_prior(&f, &spec, 0.1, None).unwrap();
        let post = f.values.rows(1000, 9000).into_owned();
        assert!(log_marginal(&spec, &post, &prior).unwrap().is_finite());
    }

    #[test]
    fn short_posterior_sample_rejected() {
        let f = series(noise(40, 3, 8));
        let spec = ModelSpec::from_id(0b111, 3);
        let prior = estimate_prior(&f, &spec, 0.5, Some(0.1)).unwrap();
        assert!(log_marginal(&spec, &f.values.rows(0, 5).into_owned(), &prior).is_err());
    }

    #[test]
    fn csv_has_one_row_per_model() {
        let f = series(noise(120, 3, 9).add_scalar(0.005));
        let r = posterior_rank(&f, 0.2, None, 4).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("1,"));
        assert!(text.contains("conjugate NIW"));
    }

    fn ln_mvt(x: &DVector<f64>, loc: &DVector<f64>, scale: &DMatrix<f64>, dof: f64) -> f64 {
        let d = x.len() as f64;
        let dev = x - loc;
        let m = dev.dot(&(scale.clone().try_inverse().unwrap() * &dev));
        ln_gamma((dof + d) / 2.0) - ln_gamma(dof / 2.0) - d / 2.0 * (dof * PI).ln()
            - 0.5 * scale.determinant().ln()
            - (dof + d) / 2.0 * (1.0 + m / dof).ln()
    }

    // chain of one-step Student-t predictives, updating the conjugate
    // posterior one month at a time
    fn sequential_evidence(spec: &ModelSpec, post: &DMatrix<f64>, prior: &PriorSpec) -> f64 {
        let p = spec.included.len();
        let q = spec.excluded.len();
        let (mut mu, mut kappa, mut nu, mut s) = (prior.alpha0.clone(), 1.0 / prior.k, p as f64 + 2.0, prior.sigma0.clone());
        let (mut b, mut lam, mut nu_e, mut s_e) =
            (prior.beta0.clone(), prior.lambda0.clone(), prior.nu0, prior.sigma0_excluded.clone());
        let mut total = 0.0;
        for t in 0..post.nrows() {
            let row = post.row(t).transpose();
            let x = DVector::from_iterator(p, spec.included.iter().map(|&c| row[c]));
            let dof = nu - p as f64 + 1.0;
            total += ln_mvt(&x, &mu, &(&s * ((kappa + 1.0) / (kappa * dof))), dof);
            let d = &x - &mu;
            s += &d * d.transpose() * (kappa / (kappa + 1.0));
            mu = (&mu * kappa + &x) / (kappa + 1.0);
            kappa += 1.0;
            nu += 1.0;
            if q > 0 {
                let y = DVector::from_iterator(q, spec.excluded.iter().map(|&c| row[c]));
                let dof = nu_e - q as f64 + 1.0;
                let lev = x.dot(&(lam.clone().try_inverse().unwrap() * &x));
                total += ln_mvt(&y, &(b.transpose() * &x), &(&s_e * ((1.0 + lev) / dof)), dof);
                let lam_new = &lam + &x * x.transpose();
                let b_new = lam_new.clone().try_inverse().unwrap() * (&lam * &b + &x * y.transpose());
                let e = &y - b_new.transpose() * &x;
                let db = &b_new - &b;
                s_e += &e * e.transpose() + db.transpose() * &lam * &db;
                b = b_new;
                lam = lam_new;
                nu_e += 1.0;
            }
        }
        total
    }

    #[test]
    fn closed_form_matches_sequential_predictives() {
        let f = series(noise(90, 4, 10).add_scalar(0.004));
        let post = f.values.rows(30, 60).into_owned();
        for id in [0b0001, 0b0110, 0b1011, 0b1111] {
            let spec = ModelSpec::from_id(id, 4);
            let prior = estimate_prior(&f, &spec, 1.0 / 3.0, None).unwrap();
            let closed = log_marginal(&spec, &post, &prior).unwrap();
            let seq = sequential_evidence(&spec, &post, &prior);
            assert_close!(closed, seq, 1e-8 * closed.abs());
        }
    }
}
