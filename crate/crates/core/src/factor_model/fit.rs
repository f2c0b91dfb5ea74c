use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::RestrictionMask;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::panel::{EstimationMonth, EstimationPanel};

/// Monthly sufficient statistics `Z'WZ`, `Z'Wr` and `r'Wr`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthMoments {
    pub date: u32,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub rwr: f64,
}

pub fn moments(panel: &EstimationPanel) -> Vec<MonthMoments> {
    panel
        .months
        .par_iter()
        .map(|m| {
            let mut zw = m.z.transpose();
            for (k, mut col) in zw.column_iter_mut().enumerate() {
                col *= m.weights[k];
            }
            let a = &zw * &m.z;
            let b = &zw * &m.returns;
            let rwr = m.returns.iter().zip(m.weights.iter()).map(|(r, w)| w * r * r).sum();
            MonthMoments { date: m.date, a, b, rwr }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Leading directions of the managed-portfolio returns `Z'Wr`.
    Svd,
    /// Start from a given loading matrix; masked entries are zeroed.
    Gamma(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Relative change in weighted SSE that ends the iterations.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative residual of the loading first-order condition that must also
    /// hold before stopping.
    pub stationarity_tol: f64,
    /// Adds `1e-10 * trace` to singular factor Gram matrices instead of
    /// failing.
    pub ridge: bool,
    pub init: Init,
    /// Squared extrapolation over pairs of ALS sweeps, kept only when it lowers
    /// the objective further. Plain ALS crawls when factors are weak.
    pub extrapolate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, stationarity_tol: 1e-10, ridge: false, init: Init::Svd, extrapolate: true }
    }
}

/// Relative residuals of the two stationarity systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub factor: f64,
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    /// Instrument names, constant first.
    pub row_names: Vec<String>,
    pub factor_names: Vec<String>,
    pub dates: Vec<u32>,
    /// `(I+1) x J` loadings; masked entries are exactly zero.
    pub gamma: DMatrix<f64>,
    /// `T x J` factor returns, each column with standard deviation 0.01 and
    /// nonnegative mean.
    pub factors: DMatrix<f64>,
    /// Weighted SSE after the initial factor step and after every iteration.
    pub objective_path: Vec<f64>,
    pub residuals: Vec<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: Stationarity,
    /// Months whose factor Gram matrix needed the ridge.
    pub ridged_months: Vec<u32>,
}

/// Factor and loading estimates before attaching data-dependent extras.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub gamma: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub objective_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: Stationarity,
    pub ridged_months: Vec<u32>,
}

/// Fits the restricted model `r_t = Z_t Γ f_t + e_t` by alternating weighted
/// least squares, then normalizes each factor to 1% monthly standard
/// deviation with a nonnegative mean.
pub fn fit(panel: &EstimationPanel, mask: &RestrictionMask, opts: &FitOptions) -> Result<FittedModel> {
    if mask.n_rows() != panel.n_instruments() {
        return Err(Error::Precondition(format!(
            "mask has {} rows, panel has {} instruments",
            mask.n_rows(),
            panel.n_instruments()
        )));
    }
    let mom = moments(panel);
    let sol = fit_moments(&mom, mask, opts)?;
    let residuals = panel
        .months
        .iter()
        .enumerate()
        .map(|(t, m)| &m.returns - &m.z * (&sol.gamma * sol.factors.row(t).transpose()))
        .collect();
    let mut row_names = vec!["const".to_string()];
    row_names.extend(panel.char_names.iter().cloned());
    Ok(FittedModel {
        row_names,
        factor_names: mask.names().to_vec(),
        dates: panel.dates(),
        gamma: sol.gamma,
        factors: sol.factors,
        objective_path: sol.objective_path,
        residuals,
        converged: sol.converged,
        iterations: sol.iterations,
        stationarity: sol.stationarity,
        ridged_months: sol.ridged_months,
    })
}

/// Cap on the squared-extrapolation step length.
const MAX_STEP: f64 = 256.0;

struct State {
    gamma: DMatrix<f64>,
    factors: Vec<DVector<f64>>,
    sse: f64,
    ridged: Vec<u32>,
}

fn evaluate(mom: &[MonthMoments], gamma: DMatrix<f64>, ridge: bool) -> Result<State> {
    let mut ridged = Vec::new();
    let (factors, sse) = factor_step(mom, &gamma, ridge, &mut ridged)?;
    Ok(State { gamma, factors, sse, ridged })
}

pub fn fit_moments(mom: &[MonthMoments], mask: &RestrictionMask, opts: &FitOptions) -> Result<Solution> {
    let l = mask.n_rows();
    let j = mask.n_factors();
    if mom.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 months, got {}", mom.len())));
    }
    if mom.iter().any(|m| m.a.nrows() != l || m.b.len() != l) {
        return Err(Error::Precondition("moment dimensions do not match the mask".into()));
    }
    let positions = mask.free_positions();
    let total_rwr: f64 = mom.iter().map(|m| m.rwr).sum();

    let gamma = match &opts.init {
        Init::Svd => svd_init(mom, mask),
        Init::Gamma(g) => {
            if g.nrows() != l || g.ncols() != j {
                return Err(Error::Precondition("initial loadings have the wrong shape".into()));
            }
            DMatrix::from_fn(l, j, |r, c| if mask.is_free(r, c) { g[(r, c)] } else { 0.0 })
        }
    };
    let mut cur = evaluate(mom, gamma, opts.ridge)?;
    let sweep = |st: &State| -> Result<State> {
        evaluate(mom, gamma_step(mom, &st.factors, &positions, l, j)?, opts.ridge)
    };
    let mut path = vec![cur.sse];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_step = 1.0;
    while iterations < opts.max_iter {
        iterations += 1;
        let one = sweep(&cur)?;
        let next = if opts.extrapolate {
            let two = sweep(&one)?;
            let r = &one.gamma - &cur.gamma;
            let v = &two.gamma - &one.gamma - &r;
            let step = if v.norm() > 0.0 { (r.norm() / v.norm()).clamp(1.0, max_step) } else { 1.0 };
            if step > 1.0 {
                let far = &cur.gamma + &r * (2.0 * step) + &v * (step * step);
                match evaluate(mom, far, opts.ridge).and_then(|s| sweep(&s)) {
                    Ok(three) if three.sse < two.sse => {
                        if step >= max_step {
                            max_step = (max_step * 4.0).min(MAX_STEP);
                        }
                        three
                    }
                    _ => {
                        max_step = (max_step / 4.0).max(1.0);
                        two
                    }
                }
            } else {
                if step >= max_step {
                    max_step = (max_step * 4.0).min(MAX_STEP);
                }
                two
            }
        } else {
            one
        };
        let change = (cur.sse - next.sse).abs() / cur.sse.max(f64::MIN_POSITIVE);
        cur = next;
        path.push(cur.sse);
        let perfect = cur.sse <= 1e-14 * total_rwr;
        if change < opts.tol || perfect {
            let (_, loading) = loading_residual(mom, &cur.factors, &cur.gamma, &positions);
            if perfect || loading < opts.stationarity_tol {
                converged = true;
                break;
            }
        }
    }
    let State { mut gamma, factors, ridged, .. } = cur;
    if !converged {
        log::warn!("ALS stopped after {iterations} iterations without converging");
    }

    let mut f = DMatrix::from_fn(mom.len(), j, |t, c| factors[t][c]);
    normalize(&mut gamma, &mut f, mask);
    let factors_vec: Vec<DVector<f64>> = (0..mom.len()).map(|t| f.row(t).transpose()).collect();
    let stationarity = Stationarity {
        factor: factor_residual(mom, &factors_vec, &gamma),
        loading: loading_residual(mom, &factors_vec, &gamma, &positions).1,
    };
    Ok(Solution {
        gamma,
        factors: f,
        objective_path: path,
        converged,
        iterations,
        stationarity,
        ridged_months: ridged,
    })
}

/// Per-month factor solve `(Γ'AΓ)^{-1} Γ'b`; also returns the total SSE.
fn factor_step(
    mom: &[MonthMoments],
    gamma: &DMatrix<f64>,
    ridge: bool,
    ridged: &mut Vec<u32>,
) -> Result<(Vec<DVector<f64>>, f64)> {
    let gt = gamma.transpose();
    let out: Vec<Result<(DVector<f64>, f64, bool)>> = mom
        .par_iter()
        .map(|m| {
            let mut h = &gt * &m.a * gamma;
            let c = &gt * &m.b;
            let mut used_ridge = false;
            let f = match solve_spd(&h, &c) {
                Some(f) => f,
                None if ridge => {
                    let bump = 1e-10 * h.trace().max(f64::MIN_POSITIVE);
                    for d in 0..h.nrows() {
                        h[(d, d)] += bump;
                    }
                    used_ridge = true;
                    solve_spd(&h, &c).ok_or(Error::RankDeficient { month: m.date })?
                }
                None => return Err(Error::RankDeficient { month: m.date }),
            };
            let sse = m.rwr - 2.0 * f.dot(&c) + f.dot(&(&h * &f));
            Ok((f, sse, used_ridge))
        })
        .collect();
    let mut factors = Vec::with_capacity(mom.len());
    let mut total = 0.0;
    for (m, r) in mom.iter().zip(out) {
        let (f, sse, used) = r?;
        if used {
            ridged.push(m.date);
        }
        factors.push(f);
        total += sse;
    }
    Ok((factors, total))
}

/// Normal equations of the loading problem restricted to free entries:
/// `Σ_t A_t[i,k] f_t[j] f_t[l]` and `Σ_t b_t[i] f_t[j]`.
fn loading_system(
    mom: &[MonthMoments],
    factors: &[DVector<f64>],
    positions: &[(usize, usize)],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = positions.len();
    let rows: Vec<Vec<f64>> = positions
        .par_iter()
        .map(|&(i, jp)| {
            let mut row = vec![0.0; p];
            for (m, f) in mom.iter().zip(factors) {
                let fi = f[jp];
                for (q, &(k, l)) in positions.iter().enumerate() {
                    row[q] += m.a[(i, k)] * fi * f[l];
                }
            }
            row
        })
        .collect();
    let lhs = DMatrix::from_fn(p, p, |a, b| rows[a][b]);
    let rhs = DVector::from_iterator(
        p,
        positions.iter().map(|&(i, jp)| mom.iter().zip(factors).map(|(m, f)| m.b[i] * f[jp]).sum()),
    );
    (lhs, rhs)
}

fn gamma_step(
    mom: &[MonthMoments],
    factors: &[DVector<f64>],
    positions: &[(usize, usize)],
    l: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    let (lhs, rhs) = loading_system(mom, factors, positions);
    let x = solve_spd(&lhs, &rhs).ok_or(Error::SingularLoadingSystem)?;
    let mut gamma = DMatrix::zeros(l, j);
    for (&(i, c), v) in positions.iter().zip(x.iter()) {
        gamma[(i, c)] = *v;
    }
    Ok(gamma)
}

/// `(absolute, relative)` residual of the restricted loading equations.
fn loading_residual(
    mom: &[MonthMoments],
    factors: &[DVector<f64>],
    gamma: &DMatrix<f64>,
    positions: &[(usize, usize)],
) -> (f64, f64) {
    let (lhs, rhs) = loading_system(mom, factors, positions);
    let x = DVector::from_iterator(positions.len(), positions.iter().map(|&(i, c)| gamma[(i, c)]));
    let r = (&lhs * x - &rhs).norm();
    (r, r / rhs.norm().max(f64::MIN_POSITIVE))
}

/// Relative residual of the per-month factor equations.
fn factor_residual(mom: &[MonthMoments], factors: &[DVector<f64>], gamma: &DMatrix<f64>) -> f64 {
    let gt = gamma.transpose();
    let (mut num, mut den) = (0.0, 0.0);
    for (m, f) in mom.iter().zip(factors) {
        let c = &gt * &m.b;
        let h = &gt * &m.a * gamma;
        num += (&c - h * f).norm_squared();
        den += c.norm_squared();
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Sequential deflated SVD of the managed portfolios `Z'Wr`: each column takes
/// the leading left singular vector of the not-yet-explained part, restricted
/// to its free rows.
fn svd_init(mom: &[MonthMoments], mask: &RestrictionMask) -> DMatrix<f64> {
    let l = mask.n_rows();
    let j = mask.n_factors();
    let x = DMatrix::from_fn(l, mom.len(), |i, t| mom[t].b[i]);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut gamma = DMatrix::zeros(l, j);
    for c in 0..j {
        let mut resid = x.clone();
        for q in &basis {
            let proj = q.transpose() * &resid;
            resid -= q * proj;
        }
        let rows = mask.free_rows(c);
        let sub = resid.select_rows(&rows);
        let gram = &sub * sub.transpose();
        let eig = gram.symmetric_eigen();
        let top = (0..rows.len())
            .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(b.cmp(&a)))
            .expect("free rows are nonempty");
        let mut u: Vec<f64> = if eig.eigenvalues[top] > 0.0 {
            eig.eigenvectors.column(top).iter().copied().collect()
        } else {
            let mut e = vec![0.0; rows.len()];
            e[0] = 1.0;
            e
        };
        let lead = (0..u.len()).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()).then(b.cmp(&a))).unwrap();
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        let mut col = DVector::zeros(l);
        for (&r, v) in rows.iter().zip(&u) {
            col[r] = *v;
            gamma[(r, c)] = *v;
        }
        for q in &basis {
            col -= q * q.dot(&col);
        }
        let norm = col.norm();
        if norm > 1e-12 {
            basis.push(col / norm);
        }
    }
    gamma
}

/// Identification at convergence. Unrestricted models are first rotated so
/// that loadings are orthonormal and factors are uncorrelated with
/// decreasing second moment; nested factors are decorrelated; then every
/// factor is scaled to a 1% sample standard deviation and signed to a
/// nonnegative mean.
fn normalize(gamma: &mut DMatrix<f64>, f: &mut DMatrix<f64>, mask: &RestrictionMask) {
    let t = f.nrows();
    let j = f.ncols();
    if mask.is_unrestricted() && j > 1 {
        let qr = gamma.clone().qr();
        let r = qr.r();
        let q = qr.q();
        let rotated = &*f * r.transpose();
        let second = rotated.transpose() * &rotated / t as f64;
        let eig = second.symmetric_eigen();
        let mut order: Vec<usize> = (0..j).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let u = DMatrix::from_fn(j, j, |row, col| eig.eigenvectors[(row, order[col])]);
        *gamma = q * &u;
        *f = rotated * u;
    }
    orthogonalize_nested(gamma, f, mask);
    for c in 0..j {
        let col = f.column(c);
        let mean = col.sum() / t as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            let scale = 0.01 / sd;
            f.column_mut(c).scale_mut(scale);
            gamma.column_mut(c).unscale_mut(scale);
        } else {
            log::warn!("factor {c} has zero variance; scale left unnormalized");
        }
        if mean < 0.0 {
            f.column_mut(c).neg_mut();
            gamma.column_mut(c).neg_mut();
        }
    }
    for (i, c) in (0..gamma.nrows()).flat_map(|i| (0..j).map(move |c| (i, c))) {
        if !mask.is_free(i, c) {
            gamma[(i, c)] = 0.0;
        }
    }
}

/// A factor whose free rows are a strict subset of other factors' free rows
/// can be added to those factors without changing the fit (for the market
/// factor, through their constant loadings). Such factors are made
/// uncorrelated in-sample with the factors that nest them, smallest support
/// first.
fn orthogonalize_nested(gamma: &mut DMatrix<f64>, f: &mut DMatrix<f64>, mask: &RestrictionMask) {
    let j = f.ncols();
    let t = f.nrows();
    let supports: Vec<Vec<usize>> = (0..j).map(|c| mask.free_rows(c)).collect();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by_key(|&c| (supports[c].len(), c));
    for c in order {
        let nest: Vec<usize> = (0..j)
            .filter(|&k| {
                k != c
                    && supports[k].len() > supports[c].len()
                    && supports[c].iter().all(|r| supports[k].contains(r))
            })
            .collect();
        if nest.is_empty() {
            continue;
        }
        let center = |v: DVector<f64>| {
            let m = v.sum() / t as f64;
            v.add_scalar(-m)
        };
        let xs = DMatrix::from_fn(t, nest.len(), |r, q| f[(r, nest[q])]);
        let xc = DMatrix::from_columns(&xs.column_iter().map(|col| center(col.into_owned())).collect::<Vec<_>>());
        let yc = center(f.column(c).into_owned());
        let Some(a) = solve_spd(&(xc.transpose() * &xc), &(xc.transpose() * yc)) else {
            continue;
        };
        let adj = &xs * &a;
        let mut col = f.column_mut(c);
        col -= adj;
        for (q, &k) in nest.iter().enumerate() {
            let shift = gamma.column(c) * a[q];
            let mut gk = gamma.column_mut(k);
            gk += shift;
        }
    }
}

/// Portfolio weights `(Γ'Z'WZΓ)^{-1} Γ'Z'W` (J x N) whose product with the
/// month's returns is the factor return.
pub fn factor_weights(gamma: &DMatrix<f64>, month: &EstimationMonth) -> Result<DMatrix<f64>> {
    if month.z.ncols() != gamma.nrows() {
        return Err(Error::Precondition("loadings do not match the instruments".into()));
    }
    let zg = &month.z * gamma;
    let mut wzg = zg.clone();
    for (k, mut row) in wzg.row_iter_mut().enumerate() {
        row *= month.weights[k];
    }
    let h = zg.transpose() * &wzg;
    if crate::linalg::is_singular(&h) {
        return Err(Error::RankDeficient { month: month.date });
    }
    crate::linalg::solve_spd_matrix(&h, &wzg.transpose()).ok_or(Error::RankDeficient { month: month.date })
}

/// Factor return of one month: [`factor_weights`] applied to its returns.
pub fn factor_update(gamma: &DMatrix<f64>, month: &EstimationMonth) -> Result<DVector<f64>> {
    Ok(factor_weights(gamma, month)? * &month.returns)
}

/// Share of weighted return variation explained: `1 - Σ e'We / Σ r'Wr`.
pub fn total_r2(panel: &EstimationPanel, fitted: &[DVector<f64>]) -> f64 {
    let (mut sse, mut sst) = (0.0, 0.0);
    for (m, fit) in panel.months.iter().zip(fitted) {
        for k in 0..m.returns.len() {
            sse += m.weights[k] * (m.returns[k] - fit[k]).powi(2);
            sst += m.weights[k] * m.returns[k].powi(2);
        }
    }
    1.0 - sse / sst
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    row_names: Vec<String>,
    factor_names: Vec<String>,
    dates: Vec<u32>,
    gamma: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
    objective_path: Vec<f64>,
    converged: bool,
    iterations: usize,
    stationarity: Stationarity,
    ridged_months: Vec<u32>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation(format!("{what} rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl FittedModel {
    /// Fitted values `Z_t Γ f_t` for every month of `panel`.
    pub fn fitted_values(&self, panel: &EstimationPanel) -> Vec<DVector<f64>> {
        panel
            .months
            .iter()
            .enumerate()
            .map(|(t, m)| &m.z * (&self.gamma * self.factors.row(t).transpose()))
            .collect()
    }

    /// JSON with the loadings, factor series and diagnostics; residuals are
    /// not stored.
    pub fn to_json<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let doc = ModelDoc {
            row_names: self.row_names.clone(),
            factor_names: self.factor_names.clone(),
            dates: self.dates.clone(),
            gamma: rows_of(&self.gamma),
            factors: rows_of(&self.factors),
            objective_path: self.objective_path.clone(),
            converged: self.converged,
            iterations: self.iterations,
            stationarity: self.stationarity,
            ridged_months: self.ridged_months.clone(),
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn from_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_reader(reader)?;
        let j = doc.factor_names.len();
        let gamma = matrix_of(&doc.gamma, j, "gamma")?;
        if gamma.nrows() != doc.row_names.len() {
            return Err(Error::Validation("gamma rows do not match row names".into()));
        }
        let factors = matrix_of(&doc.factors, j, "factor")?;
        if factors.nrows() != doc.dates.len() {
            return Err(Error::Validation("factor rows do not match dates".into()));
        }
        Ok(Self {
            row_names: doc.row_names,
            factor_names: doc.factor_names,
            dates: doc.dates,
            gamma,
            factors,
            objective_path: doc.objective_path,
            residuals: Vec::new(),
            converged: doc.converged,
            iterations: doc.iterations,
            stationarity: doc.stationarity,
            ridged_months: doc.ridged_months,
        })
    }
}
