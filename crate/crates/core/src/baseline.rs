//! One-state negative-binomial regression by maximum likelihood, and
//! information-criterion model comparison.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::math::{ln_factorial, ln_rising, log_add_exp, logistic};
use crate::panel::PanelData;

/// Columns of the static design: query covariates, then the activities of
/// the period the query was written in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticDesign {
    /// `None` uses every panel covariate.
    pub covariates: Option<Vec<String>>,
    /// `None` uses every panel activity.
    pub activities: Option<Vec<String>>,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for StaticDesign {
    fn default() -> Self {
        StaticDesign {
            covariates: None,
            activities: None,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticModelFit {
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_dispersion: f64,
    /// Observed-information standard errors for the coefficients then the
    /// log dispersion; `None` if the information matrix is not invertible.
    pub std_errors: Option<Vec<f64>>,
    pub neg2_loglik: f64,
    pub k: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
}

/// `(AIC, BIC) = (−2LL + 2k, −2LL + k ln n)`.
pub fn information_criteria(neg2_loglik: f64, k: usize, n: usize) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::InvalidData("information criteria need n >= 1".into()));
    }
    let k = k as f64;
    Ok((neg2_loglik + 2.0 * k, neg2_loglik + k * (n as f64).ln()))
}

/// Design matrix rows with their responses.
#[derive(Debug, Clone)]
pub struct StaticData {
    pub names: Vec<String>,
    /// Row-major `n × p`.
    pub x: Vec<f64>,
    pub tau: Vec<u64>,
    ln_tau_fact: Vec<f64>,
}

impl StaticData {
    pub fn n(&self) -> usize {
        self.tau.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn from_panel(panel: &PanelData, design: &StaticDesign) -> Result<Self> {
        let covs = design
            .covariates
            .clone()
            .unwrap_or_else(|| panel.covariate_names.clone());
        let acts = design
            .activities
            .clone()
            .unwrap_or_else(|| panel.activity_names.clone());
        let sel = panel.select(&covs, &acts)?;
        let mut names = covs.clone();
        names.extend(acts.iter().cloned());
        let mut x = Vec::new();
        let mut tau = Vec::new();
        for a in &sel.analysts {
            for p in &a.periods {
                for q in &p.queries {
                    if q.completion_time < 0 {
                        return Err(Error::InvalidData(format!(
                            "query {} has negative completion time",
                            q.query_id
                        )));
                    }
                    x.extend_from_slice(&q.covariates);
                    x.extend_from_slice(&p.activities);
                    tau.push(q.completion_time as u64);
                }
            }
        }
        Ok(StaticData {
            names,
            ln_tau_fact: tau.iter().map(|&t| ln_factorial(t)).collect(),
            x,
            tau,
        })
    }

    /// Errors if a column is (numerically) a linear combination of earlier
    /// ones, naming the columns involved.
    pub fn check_rank(&self) -> Result<()> {
        let (n, p) = (self.n(), self.p());
        let x = DMatrix::from_row_slice(n, p, &self.x);
        let mut kept: Vec<usize> = Vec::new();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for j in 0..p {
            let col = x.column(j).into_owned();
            let norm = col.norm();
            let mut r = col.clone();
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
            // second pass keeps Gram-Schmidt stable
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
            let rn = r.norm();
            if norm == 0.0 || rn <= 1e-9 * norm {
                let mut involved: Vec<String> = Vec::new();
                if norm > 0.0 {
                    // earlier columns with a visible share of this one
                    let coef = {
                        let xb =
                            DMatrix::from_columns(&kept.iter().map(|&k| x.column(k).into_owned()).collect::<Vec<_>>());
                        xb.clone().svd(true, true).solve(&col, 1e-12).ok()
                    };
                    if let Some(c) = coef {
                        for (i, &k) in kept.iter().enumerate() {
                            if c[i].abs() > 1e-8 {
                                involved.push(self.names[k].clone());
                            }
                        }
                    }
                }
                involved.push(self.names[j].clone());
                return Err(Error::InvalidData(format!(
                    "design is rank deficient: collinear columns {}",
                    involved.join(", ")
                )));
            }
            basis.push(r / rn);
            kept.push(j);
        }
        Ok(())
    }

    /// Log-likelihood and gradient at `theta = (b, ln δ)`.
    pub fn log_lik_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.p();
        let log_delta = theta[p];
        let delta = log_delta.exp();
        const CHUNK: usize = 1024;
        let parts: Vec<(f64, Vec<f64>)> = (0..self.n())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut ll = 0.0;
                let mut g = vec![0.0; p + 1];
                for &i in idx {
                    let row = &self.x[i * p..(i + 1) * p];
                    let lin: f64 = row.iter().zip(&theta[..p]).map(|(x, b)| x * b).sum();
                    let tau = self.tau[i];
                    let tf = tau as f64;
                    let denom = log_add_exp(lin, log_delta);
                    let log_h = log_delta - denom;
                    let share = logistic(lin - log_delta); // μ/(μ+δ)
                    ll += ln_rising(delta, tau) - self.ln_tau_fact[i] + delta * log_h;
                    if tau > 0 {
                        ll += tf * (lin - denom);
                    }
                    // ∂/∂lin = δ(τ − μ)/(μ + δ)
                    let dlin = tf * (1.0 - share) - delta * share;
                    for (gj, x) in g.iter_mut().zip(row) {
                        *gj += dlin * x;
                    }
                    let dpsi = digamma_rising(delta, tau);
                    let d_delta = dpsi + log_h + share - tf * (1.0 - share) / delta;
                    g[p] += delta * d_delta;
                }
                (ll, g)
            })
            .collect();
        let mut ll = 0.0;
        let mut g = vec![0.0; p + 1];
        for (l, gp) in parts {
            ll += l;
            for (a, b) in g.iter_mut().zip(gp) {
                *a += b;
            }
        }
        (ll, g)
    }
}

/// `ψ(x + n) − ψ(x)`.
fn digamma_rising(x: f64, n: u64) -> f64 {
    if n <= 64 {
        (0..n).map(|j| 1.0 / (x + j as f64)).sum()
    } else {
        digamma(x + n as f64) - digamma(x)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes the NB log-likelihood by BFGS with a backtracking line search.
pub fn fit_static(panel: &PanelData, design: &StaticDesign) -> Result<StaticModelFit> {
    let data = StaticData::from_panel(panel, design)?;
    fit_static_data(&data, design)
}

pub fn fit_static_data(data: &StaticData, design: &StaticDesign) -> Result<StaticModelFit> {
    let p = data.p();
    let k = p + 1;
    if data.n() < k + 1 {
        return Err(Error::InsufficientSample(format!(
            "{} queries for {} parameters",
            data.n(),
            k
        )));
    }
    data.check_rank()?;

    // start at the marginal mean with Poisson-like dispersion
    let mean_tau = data.tau.iter().map(|&t| t as f64).sum::<f64>() / data.n() as f64;
    let mut theta = vec![0.0; k];
    if let Some(c) = data.names.iter().position(|n| n == "constant") {
        theta[c] = mean_tau.max(0.5).ln();
    }
    // optimize over u_j = b_j * scale_j so every column has unit RMS
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = (0..data.n()).map(|i| data.x[i * p + j].powi(2)).sum();
            let rms = (ss / data.n() as f64).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .chain(std::iter::once(1.0))
        .collect();
    let to_b = |u: &[f64]| u.iter().zip(&scale).map(|(a, s)| a / s).collect::<Vec<f64>>();
    for (t, s) in theta.iter_mut().zip(&scale) {
        *t *= s;
    }
    let f = |u: &[f64]| {
        let (ll, g) = data.log_lik_grad(&to_b(u));
        (
            -ll,
            g.into_iter().zip(&scale).map(|(x, s)| -x / s).collect::<Vec<f64>>(),
        )
    };
    let (mut fx, mut gx) = f(&theta);
    if !fx.is_finite() {
        return Err(Error::Numerical("non-finite likelihood at the starting point".into()));
    }
    let mut h = DMatrix::<f64>::identity(k, k) / (data.n() as f64).max(1.0);
    let mut iterations = 0;
    let mut converged = max_abs(&gx) < design.gradient_tolerance;
    while !converged && iterations < design.max_iterations {
        iterations += 1;
        let g = DVector::from_column_slice(&gx);
        let mut d = -(&h * &g);
        if d.dot(&g) >= 0.0 {
            // lost descent direction: restart from steepest descent
            h = DMatrix::identity(k, k) / (data.n() as f64).max(1.0);
            d = -(&h * &g);
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(d.iter()).map(|(t, di)| t + step * di).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s = DVector::from_iterator(k, cand.iter().zip(&theta).map(|(a, b)| a - b));
        let y = DVector::from_iterator(k, gc.iter().zip(&gx).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iterations == 1 {
                h = DMatrix::identity(k, k) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            h = &a * &h * &b + &s * s.transpose() * rho;
        }
        theta = cand;
        fx = fc;
        gx = gc;
        converged = max_abs(&gx) < design.gradient_tolerance;
    }

    let theta = to_b(&theta);
    let gx = data.log_lik_grad(&theta).1;
    let std_errors = observed_information(data, &theta).and_then(|info| {
        let inv = info.try_inverse()?;
        let d: Vec<f64> = (0..k).map(|i| inv[(i, i)]).collect();
        d.iter().all(|v| *v > 0.0).then(|| d.iter().map(|v| v.sqrt()).collect())
    });
    let neg2 = 2.0 * fx;
    let (aic, bic) = information_criteria(neg2, k, data.n())?;
    Ok(StaticModelFit {
        coefficient_names: data.names.clone(),
        coefficients: theta[..p].to_vec(),
        log_dispersion: theta[p],
        std_errors,
        neg2_loglik: neg2,
        k,
        n: data.n(),
        aic,
        bic,
        converged,
        iterations,
        gradient_max_norm: max_abs(&gx),
    })
}

/// Negative Hessian of the log-likelihood by central differences of the
/// analytic gradient, symmetrized.
fn observed_information(data: &StaticData, theta: &[f64]) -> Option<DMatrix<f64>> {
    let k = theta.len();
    let mut info = DMatrix::zeros(k, k);
    for j in 0..k {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (_, gu) = data.log_lik_grad(&up);
        let (_, gd) = data.log_lik_grad(&dn);
        for i in 0..k {
            info[(i, j)] = -(gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let info = (&info + info.transpose()) * 0.5;
    info.iter().all(|v| v.is_finite()).then_some(info)
}

/// One row of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFitEntry {
    pub name: String,
    pub neg2_loglik: f64,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub neg2_loglik: f64,
    pub k: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Sorts fits by BIC (ties by name). All fits must share `n`.
pub fn compare_models(fits: &[ModelFitEntry]) -> Result<ComparisonTable> {
    if fits.len() < 2 {
        return Err(Error::Config(format!(
            "model comparison needs at least two fits, got {}",
            fits.len()
        )));
    }
    let n = fits[0].n;
    if let Some(bad) = fits.iter().find(|f| f.n != n) {
        return Err(Error::InvalidData(format!(
            "fit `{}` has n = {} but `{}` has n = {}",
            bad.name, bad.n, fits[0].name, n
        )));
    }
    let mut rows = fits
        .iter()
        .map(|f| {
            let (aic, bic) = information_criteria(f.neg2_loglik, f.k, f.n)?;
            Ok(ComparisonRow {
                name: f.name.clone(),
                neg2_loglik: f.neg2_loglik,
                k: f.k,
                n: f.n,
                aic,
                bic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.bic.total_cmp(&b.bic).then_with(|| a.name.cmp(&b.name)));
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Aligned text table with columns Model, −2LL, AIC, BIC, k, n.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        writeln!(
            out,
            "{:<w$}  {:>14}  {:>14}  {:>14}  {:>6}  {:>8}",
            "Model", "-2LL", "AIC", "BIC", "k", "n"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<w$}  {:>14.1}  {:>14.1}  {:>14.1}  {:>6}  {:>8}",
                r.name, r.neg2_loglik, r.aic, r.bic, r.k, r.n
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,neg2_loglik,aic,bic,k,n\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.name, r.neg2_loglik, r.aic, r.bic, r.k, r.n).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_two_one_state_row() {
        let (aic, bic) = information_criteria(1232380.8, 10, 79797).unwrap();
        assert_eq!(aic, 1232400.8);
        assert!((bic - 1232493.6).abs() < 0.2);
    }

    #[test]
    fn hand_arithmetic() {
        let (aic, bic) = information_criteria(50.0, 3, 100).unwrap();
        assert_eq!(aic, 56.0);
        assert!((bic - 63.81551055796427).abs() < 1e-12);
        assert_eq!(information_criteria(7.5, 0, 9).unwrap(), (7.5, 7.5));
        assert!(information_criteria(1.0, 1, 0).is_err());
    }

    #[test]
    fn comparison_orders_by_bic_then_name() {
        let e = |name: &str, neg2: f64, k| ModelFitEntry {
            name: name.into(),
            neg2_loglik: neg2,
            k,
            n: 100,
        };
        let t = compare_models(&[e("b", 10.0, 1), e("a", 10.0, 1), e("c", 1.0, 1)]).unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert!(compare_models(&[e("a", 1.0, 1)]).is_err());
        let mut other = e("z", 1.0, 1);
        other.n = 5;
        assert!(compare_models(&[e("a", 1.0, 1), other]).is_err());
    }
}
