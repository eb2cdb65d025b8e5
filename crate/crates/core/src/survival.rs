//! Cox proportional-hazards regression (Efron ties, damped Newton),
//! Wald statistics, Kaplan-Meier curves and the two-group log-rank test.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, fabs, log, sqrt};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, spd_inverse, Matrix};
use crate::special::{chi2_1df_sf, two_sided_normal_p};

pub const MAX_ITERATIONS: usize = 50;
pub const MAX_HALVINGS: usize = 20;
/// Coefficients beyond this magnitude are treated as monotone likelihood.
pub const BETA_CAP: f64 = 50.0;
const SCORE_TOL: f64 = 1e-9;
const LOGLIK_REL_TOL: f64 = 1e-12;

/// Survival times, event indicators and an `n × p` covariate matrix whose
/// first column is the predictor of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalData {
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: Matrix,
    names: Vec<String>,
}

impl SurvivalData {
    pub fn new(times: Vec<f64>, events: Vec<bool>, covariates: Matrix, names: Vec<String>) -> Result<Self> {
        let n = times.len();
        if events.len() != n || covariates.rows() != n {
            return Err(Error::Dimension(format!(
                "{} times, {} events, {} covariate rows",
                n,
                events.len(),
                covariates.rows()
            )));
        }
        if names.len() != covariates.cols() {
            return Err(Error::Dimension("covariate names do not match columns".into()));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidInput(format!("survival time {t} must be positive")));
        }
        if covariates.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates must be finite".into()));
        }
        Ok(SurvivalData { times, events, covariates, names })
    }

    /// Single unnamed covariate.
    pub fn univariate(times: Vec<f64>, events: Vec<bool>, x: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(times, events, Matrix::from_vec(n, 1, x)?, vec![String::from("x")])
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.cols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Copy with column `c` multiplied by `factor`.
    pub fn scale_column(&self, c: usize, factor: f64) -> SurvivalData {
        let mut x = self.covariates.clone();
        for i in 0..x.rows() {
            x[(i, c)] *= factor;
        }
        SurvivalData { covariates: x, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub covariance: Matrix,
    pub z: Vec<f64>,
    pub loglik: f64,
    pub null_loglik: f64,
    pub n: usize,
    pub n_events: usize,
    pub iterations: usize,
    pub converged: bool,
    pub names: Vec<String>,
}

impl CoxFit {
    pub fn se(&self, i: usize) -> f64 {
        sqrt(self.covariance[(i, i)])
    }

    pub fn hazard_ratio(&self, i: usize) -> f64 {
        exp(self.beta[i])
    }

    /// 95% interval `exp(beta ± 1.96 se)`.
    pub fn hazard_ratio_ci(&self, i: usize) -> (f64, f64) {
        let se = self.se(i);
        (exp(self.beta[i] - 1.96 * se), exp(self.beta[i] + 1.96 * se))
    }

    pub fn p_value(&self, i: usize) -> f64 {
        two_sided_normal_p(self.z[i])
    }
}

/// Partial log-likelihood with its gradient and observed information.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    pub info: Matrix,
}

/// Data pre-sorted and centered for repeated likelihood evaluations.
struct Prepared<'a> {
    data: &'a SurvivalData,
    // indices by descending time
    order: Vec<usize>,
    centered: Matrix,
}

impl<'a> Prepared<'a> {
    fn new(data: &'a SurvivalData) -> Self {
        let n = data.n();
        let p = data.n_covariates();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data.times[b].total_cmp(&data.times[a]).then(a.cmp(&b)));
        let means: Vec<f64> = (0..p)
            .map(|c| (0..n).map(|i| data.covariates[(i, c)]).sum::<f64>() / n as f64)
            .collect();
        let centered = Matrix::from_fn(n, p, |i, c| data.covariates[(i, c)] - means[c]);
        Prepared { data, order, centered }
    }

    fn evaluate(&self, beta: &[f64], with_info: bool) -> Evaluation {
        let p = beta.len();
        let n = self.data.n();
        let eta: Vec<f64> = (0..n)
            .map(|i| self.centered.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let risk: Vec<f64> = eta.iter().map(|e| exp(e - shift)).collect();

        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = Matrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = Matrix::zeros(p, p);
        let mut d1 = vec![0.0; p];
        let mut d2 = Matrix::zeros(p, p);
        let mut a = vec![0.0; p];

        let mut pos = 0;
        while pos < n {
            let t = self.data.times[self.order[pos]];
            let mut end = pos;
            while end < n && self.data.times[self.order[end]] == t {
                end += 1;
            }
            let mut d0 = 0.0;
            let mut deaths = 0usize;
            d1.iter_mut().for_each(|v| *v = 0.0);
            if with_info {
                d2 = Matrix::zeros(p, p);
            }
            for &i in &self.order[pos..end] {
                let r = risk[i];
                let x = self.centered.row(i);
                s0 += r;
                for c in 0..p {
                    s1[c] += r * x[c];
                }
                if with_info {
                    for c in 0..p {
                        for e in 0..=c {
                            s2[(c, e)] += r * x[c] * x[e];
                        }
                    }
                }
                if self.data.events[i] {
                    deaths += 1;
                    d0 += r;
                    loglik += eta[i] - shift;
                    for c in 0..p {
                        d1[c] += r * x[c];
                        score[c] += x[c];
                    }
                    if with_info {
                        for c in 0..p {
                            for e in 0..=c {
                                d2[(c, e)] += r * x[c] * x[e];
                            }
                        }
                    }
                }
            }
            for k in 0..deaths {
                let f = k as f64 / deaths as f64;
                let phi = s0 - f * d0;
                loglik -= log(phi);
                for c in 0..p {
                    a[c] = s1[c] - f * d1[c];
                    score[c] -= a[c] / phi;
                }
                if with_info {
                    for c in 0..p {
                        for e in 0..=c {
                            let b = s2[(c, e)] - f * d2[(c, e)];
                            info[(c, e)] += b / phi - a[c] * a[e] / (phi * phi);
                        }
                    }
                }
            }
            pos = end;
        }
        for c in 0..p {
            for e in 0..c {
                info[(e, c)] = info[(c, e)];
            }
        }
        Evaluation { loglik, score, info }
    }
}

/// Efron partial log-likelihood, score and information at `beta`.
pub fn efron_evaluate(data: &SurvivalData, beta: &[f64]) -> Evaluation {
    Prepared::new(data).evaluate(beta, true)
}

fn check_columns(data: &SurvivalData) -> Result<()> {
    let x = data.covariates();
    for c in 0..x.cols() {
        let first = x[(0, c)];
        if (1..x.rows()).all(|i| x[(i, c)] == first) {
            return Err(Error::ConstantColumn { index: c, name: data.names[c].clone() });
        }
    }
    Ok(())
}

fn solve_step(info: &Matrix, score: &[f64]) -> Option<Vec<f64>> {
    if let Ok(l) = cholesky(info) {
        return Some(cholesky_solve(&l, score));
    }
    let mut ridged = info.clone();
    let bump = 1e-8 * fabs(info.trace()).max(1e-12);
    for i in 0..ridged.rows() {
        ridged[(i, i)] += bump;
    }
    cholesky(&ridged).ok().map(|l| cholesky_solve(&l, score))
}

/// Maximizes the Efron partial likelihood by damped Newton iterations.
pub fn cox_fit(data: &SurvivalData) -> Result<CoxFit> {
    let n = data.n();
    let p = data.n_covariates();
    let n_events = data.events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(Error::InvalidInput("no events observed".into()));
    }
    if p == 0 {
        return Err(Error::InvalidInput("no covariates".into()));
    }
    check_columns(data)?;
    let prep = Prepared::new(data);
    let mut beta = vec![0.0; p];
    let mut ev = prep.evaluate(&beta, true);
    let null_loglik = ev.loglik;
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        if ev.score.iter().map(|s| fabs(*s)).fold(0.0, f64::max) / (n as f64) < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match solve_step(&ev.info, &ev.score) {
            Some(s) => s,
            None => break,
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let tev = prep.evaluate(&trial, true);
            if tev.loglik.is_finite() && tev.loglik >= ev.loglik {
                accepted = Some((trial, tev));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, tev)) = accepted else {
            // no ascent direction left; the optimum is reached to working precision
            converged = true;
            break;
        };
        let change = fabs(tev.loglik - ev.loglik) / fabs(ev.loglik).max(1e-300);
        let rising = tev.loglik > ev.loglik;
        beta = trial;
        ev = tev;
        if beta.iter().any(|b| fabs(*b) > BETA_CAP) && rising {
            separated = true;
            break;
        }
        if change < LOGLIK_REL_TOL {
            converged = true;
            break;
        }
    }
    if separated {
        converged = false;
        for b in beta.iter_mut() {
            *b = b.clamp(-BETA_CAP, BETA_CAP);
        }
        ev = prep.evaluate(&beta, true);
    }

    let covariance = match spd_inverse(&ev.info) {
        Ok(c) => c,
        Err(_) => {
            converged = false;
            let mut c = Matrix::zeros(p, p);
            for i in 0..p {
                c[(i, i)] = f64::INFINITY;
            }
            c
        }
    };
    let z = (0..p)
        .map(|i| {
            let se = sqrt(covariance[(i, i)]);
            if se.is_finite() && se > 0.0 {
                beta[i] / se
            } else {
                0.0
            }
        })
        .collect();
    Ok(CoxFit {
        beta,
        covariance,
        z,
        loglik: ev.loglik,
        null_loglik,
        n,
        n_events,
        iterations,
        converged,
        names: data.names.clone(),
    })
}

/// Wald statistic of coefficient `index` of a converged fit.
pub fn wald_statistic(fit: &CoxFit, index: usize) -> Result<f64> {
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "Cox fit not converged after {} iterations",
            fit.iterations
        )));
    }
    fit.z
        .get(index)
        .copied()
        .ok_or_else(|| Error::Dimension(format!("coefficient {index} of {}", fit.z.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Survival just after each time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

/// Product-limit estimate over the subjects selected by `mask`.
pub fn km_estimate(times: &[f64], events: &[bool], mask: &[bool]) -> KmCurve {
    let mut idx: Vec<usize> = (0..times.len()).filter(|&i| mask[i]).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = KmCurve { times: Vec::new(), survival: Vec::new(), at_risk: Vec::new(), events: Vec::new() };
    let mut at_risk = idx.len();
    let mut s = 1.0;
    let mut pos = 0;
    while pos < idx.len() {
        let t = times[idx[pos]];
        let mut end = pos;
        let mut d = 0;
        while end < idx.len() && times[idx[end]] == t {
            if events[idx[end]] {
                d += 1;
            }
            end += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= end - pos;
        pos = end;
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed: f64,
    pub expected: f64,
    pub variance: f64,
}

/// Two-group log-rank test; `groups[i]` selects group 1.
pub fn logrank_test(times: &[f64], events: &[bool], groups: &[bool]) -> Result<LogRankResult> {
    let n = times.len();
    if events.len() != n || groups.len() != n {
        return Err(Error::Dimension("times, events and groups differ in length".into()));
    }
    let n1_total = groups.iter().filter(|&&g| g).count();
    if n1_total == 0 || n1_total == n {
        return Err(Error::InvalidInput("log-rank test needs two non-empty groups".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut at_risk, mut at_risk1) = (n as f64, n1_total as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut pos = 0;
    while pos < n {
        let t = times[idx[pos]];
        let mut end = pos;
        let (mut d, mut d1, mut leaving1) = (0.0, 0.0, 0.0);
        while end < n && times[idx[end]] == t {
            let i = idx[end];
            if events[i] {
                d += 1.0;
                if groups[i] {
                    d1 += 1.0;
                }
            }
            if groups[i] {
                leaving1 += 1.0;
            }
            end += 1;
        }
        if d > 0.0 {
            observed += d1;
            expected += d * at_risk1 / at_risk;
            if at_risk > 1.0 {
                variance += d * (at_risk1 / at_risk) * (1.0 - at_risk1 / at_risk) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= (end - pos) as f64;
        at_risk1 -= leaving1;
        pos = end;
    }
    let statistic = if variance > 0.0 {
        (observed - expected) * (observed - expected) / variance
    } else {
        0.0
    };
    Ok(LogRankResult { statistic, p_value: chi2_1df_sf(statistic), observed, expected, variance })
}
