//! Conditional β-convergence of coupling-coordination degrees.
//!
//! Growth `g_it = ln(D_{i,t+1}/D_it)` is regressed on `ln D_it` and controls
//! after a two-way within transformation. Spatial variants (SEM, SAR) are fit
//! by maximizing the concentrated log-likelihood over the single spatial
//! parameter. Observations are stored period-major: index `t·N + i`, so the
//! cross-sectional weight matrix applies blockwise per period.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::coupling::CouplingTable;
use crate::error::{Error, Result};
use crate::panel::WeightMatrix;

/// One control variable laid out region-major over the score years.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeries {
    pub name: String,
    /// `[region][year]`, flattened.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergencePanel {
    pub region_ids: Vec<String>,
    /// Initial year of each transition.
    pub years: Vec<i32>,
    pub control_names: Vec<String>,
    /// `g_it`, period-major.
    pub growth: Vec<f64>,
    /// `ln D_it`, period-major.
    pub log_level: Vec<f64>,
    /// One period-major column per control, aligned to the initial year.
    pub controls: Vec<Vec<f64>>,
    /// Regions removed during construction.
    pub dropped: Vec<String>,
}

impl ConvergencePanel {
    /// Assemble from period-major columns.
    pub fn from_parts(
        region_ids: Vec<String>,
        years: Vec<i32>,
        growth: Vec<f64>,
        log_level: Vec<f64>,
        control_names: Vec<String>,
        controls: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = region_ids.len() * years.len();
        if growth.len() != n || log_level.len() != n || controls.iter().any(|c| c.len() != n) {
            return Err(Error::data("convergence columns do not match regions x transitions"));
        }
        if control_names.len() != controls.len() {
            return Err(Error::data("one name per control column required"));
        }
        if years.len() < 2 {
            return Err(Error::data("fewer than 2 usable transitions"));
        }
        if region_ids.len() < 2 {
            return Err(Error::data("fewer than 2 usable regions"));
        }
        Ok(ConvergencePanel {
            region_ids,
            years,
            control_names,
            growth,
            log_level,
            controls,
            dropped: Vec::new(),
        })
    }

    pub fn n_regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.years.len()
    }

    pub fn n_obs(&self) -> usize {
        self.growth.len()
    }

    fn regressor_names(&self) -> Vec<String> {
        std::iter::once("ln_D".to_string())
            .chain(self.control_names.iter().cloned())
            .collect()
    }
}

/// Build growth and initial-level columns from region-major levels `D`.
///
/// Regions with a non-positive or non-finite `D`, or a non-finite control,
/// are dropped with a warning.
pub fn build_panel(
    region_ids: &[String],
    years: &[i32],
    levels: &[f64],
    controls: &[ControlSeries],
) -> Result<ConvergencePanel> {
    let ny = years.len();
    if ny < 2 {
        return Err(Error::data("convergence needs at least 2 years"));
    }
    if levels.len() != region_ids.len() * ny || controls.iter().any(|c| c.values.len() != levels.len()) {
        return Err(Error::data("levels or controls do not match regions x years"));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (r, id) in region_ids.iter().enumerate() {
        let d = &levels[r * ny..(r + 1) * ny];
        if let Some(bad) = d.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            log::warn!("region {id} dropped from convergence: D = {bad}");
            dropped.push(id.clone());
            continue;
        }
        if let Some(c) = controls
            .iter()
            .find(|c| c.values[r * ny..(r + 1) * ny - 1].iter().any(|v| !v.is_finite()))
        {
            log::warn!("region {id} dropped from convergence: missing control {}", c.name);
            dropped.push(id.clone());
            continue;
        }
        kept.push(r);
    }
    let nt = ny - 1;
    let mut growth = Vec::with_capacity(kept.len() * nt);
    let mut log_level = Vec::with_capacity(kept.len() * nt);
    let mut cols = vec![Vec::with_capacity(kept.len() * nt); controls.len()];
    for t in 0..nt {
        for &r in &kept {
            let d0 = levels[r * ny + t];
            let d1 = levels[r * ny + t + 1];
            growth.push((d1 / d0).ln());
            log_level.push(d0.ln());
            for (k, c) in controls.iter().enumerate() {
                cols[k].push(c.values[r * ny + t]);
            }
        }
    }
    let mut panel = ConvergencePanel::from_parts(
        kept.iter().map(|&r| region_ids[r].clone()).collect(),
        years[..nt].to_vec(),
        growth,
        log_level,
        controls.iter().map(|c| c.name.clone()).collect(),
        cols,
    )?;
    panel.dropped = dropped;
    Ok(panel)
}

/// [`build_panel`] over the `D` column of a coupling table.
pub fn panel_from_coupling(table: &CouplingTable, controls: &[ControlSeries]) -> Result<ConvergencePanel> {
    let levels: Vec<f64> = table.records.iter().map(|r| r.d).collect();
    build_panel(&table.region_ids, &table.years, &levels, controls)
}

/// Two-way within transformation of a period-major column.
pub fn within_transform(v: &[f64], n_regions: usize, n_periods: usize) -> Vec<f64> {
    let (n, t) = (n_regions, n_periods);
    let mut region_mean = vec![0.0; n];
    let mut period_mean = vec![0.0; t];
    for p in 0..t {
        for i in 0..n {
            region_mean[i] += v[p * n + i];
            period_mean[p] += v[p * n + i];
        }
    }
    let grand = region_mean.iter().sum::<f64>() / (n * t) as f64;
    region_mean.iter_mut().for_each(|m| *m /= t as f64);
    period_mean.iter_mut().for_each(|m| *m /= n as f64);
    (0..t)
        .flat_map(|p| (0..n).map(move |i| (p, i)))
        .map(|(p, i)| v[p * n + i] - region_mean[i] - period_mean[p] + grand)
        .collect()
}

fn lag_blocks(w: &WeightMatrix, v: &[f64]) -> Vec<f64> {
    v.chunks(w.len()).flat_map(|block| w.lag(block)).collect()
}

fn lag_columns(w: &WeightMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        out.set_column(j, &DVector::from_vec(lag_blocks(w, &col)));
    }
    out
}

/// Within-transformed response and design.
struct Design {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    n_regions: usize,
    n_periods: usize,
}

impl Design {
    fn new(panel: &ConvergencePanel) -> Result<Self> {
        let (n, t) = (panel.n_regions(), panel.n_transitions());
        let y = DVector::from_vec(within_transform(&panel.growth, n, t));
        let cols: Vec<Vec<f64>> = std::iter::once(&panel.log_level)
            .chain(panel.controls.iter())
            .map(|c| within_transform(c, n, t))
            .collect();
        let x = DMatrix::from_fn(n * t, cols.len(), |r, c| cols[c][r]);
        let names = panel.regressor_names();
        check_rank(&x, &names)?;
        if (n - 1) * (t - 1) <= names.len() {
            return Err(Error::data("too few observations for the regressors after fixed effects"));
        }
        Ok(Design {
            y,
            x,
            names,
            n_regions: n,
            n_periods: t,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    /// Observations left after the two-way transformation, `(N − 1)(T − 1)`.
    fn n_eff(&self) -> usize {
        (self.n_regions - 1) * (self.n_periods - 1)
    }
}

/// Modified Gram-Schmidt; the first column that is (numerically) spanned by
/// the earlier ones is named in the error.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let r = v.norm();
        if scale == 0.0 || r <= 1e-9 * scale {
            return Err(Error::numerical(format!(
                "rank-deficient design after within transformation: column `{}` is collinear \
                 with the fixed effects or earlier regressors",
                names[j]
            )));
        }
        basis.push(v / r);
    }
    Ok(())
}

fn solve_ls(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xtx = x.transpose() * x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::numerical("X'X is not positive definite"))?;
    let inv = chol.inverse();
    let beta = &inv * (x.transpose() * y);
    Ok((beta, inv))
}

fn gaussian_loglik(ssr: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + (ssr / n).ln() + 1.0)
}

fn normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn chi2_1_p(stat: f64) -> f64 {
    if stat <= 0.0 {
        1.0
    } else {
        erfc((stat / 2.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Model {
    #[serde(rename = "OLS_FE")]
    OlsFe,
    #[serde(rename = "SAR")]
    Sar,
    #[serde(rename = "SEM")]
    Sem,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::OlsFe => "OLS_FE",
            Model::Sar => "SAR",
            Model::Sem => "SEM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

impl Coefficient {
    fn new(name: String, estimate: f64, std_error: f64) -> Self {
        let z = estimate / std_error;
        Coefficient {
            name,
            estimate,
            std_error,
            z,
            p_value: normal_p(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmStat {
    pub statistic: f64,
    pub p_value: f64,
}

impl LmStat {
    fn new(statistic: f64) -> Self {
        LmStat {
            statistic,
            p_value: chi2_1_p(statistic),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmDiagnostics {
    pub lm_lag: LmStat,
    pub lm_error: LmStat,
    pub robust_lm_lag: LmStat,
    pub robust_lm_error: LmStat,
}

impl LmDiagnostics {
    pub fn all(&self) -> [(&'static str, LmStat); 4] {
        [
            ("LM_lag", self.lm_lag),
            ("LM_error", self.lm_error),
            ("robust_LM_lag", self.robust_lm_lag),
            ("robust_LM_error", self.robust_lm_error),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub model: Model,
    /// `ln_D` first, then the controls.
    pub coefficients: Vec<Coefficient>,
    /// Spatial-lag coefficient (SAR only).
    pub rho: Option<Coefficient>,
    /// Spatial-error coefficient (SEM only).
    pub lambda: Option<Coefficient>,
    pub speed: f64,
    pub t_span: usize,
    pub log_likelihood: f64,
    pub r_squared: f64,
    pub sigma2: f64,
    pub n_obs: usize,
    pub diagnostics: Option<LmDiagnostics>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl ConvergenceFit {
    pub fn beta(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn gamma(&self) -> &[Coefficient] {
        &self.coefficients[1..]
    }

    /// β < 0 and significant at `level`.
    pub fn declares_convergence(&self, level: f64) -> bool {
        self.beta() < 0.0 && self.coefficients[0].p_value < level
    }
}

/// `s = −ln(1 + β) / T_span`.
pub fn convergence_speed(beta: f64, t_span: usize) -> Result<f64> {
    if beta <= -1.0 {
        return Err(Error::numerical(format!("overshooting convergence: beta = {beta}")));
    }
    if t_span == 0 {
        return Err(Error::data("T_span must be positive"));
    }
    Ok(-(1.0 + beta).ln() / t_span as f64)
}

/// Two-way fixed-effects OLS with HC1 robust standard errors.
pub fn ols_fe(panel: &ConvergencePanel) -> Result<ConvergenceFit> {
    let d = Design::new(panel)?;
    let (beta, inv) = solve_ls(&d.y, &d.x)?;
    let resid = &d.y - &d.x * &beta;
    let (n, k) = (d.n(), d.x.ncols());
    let n_eff = d.n_eff();
    let mut meat = DMatrix::zeros(k, k);
    for r in 0..n {
        let row = d.x.row(r);
        meat += row.transpose() * row * resid[r].powi(2);
    }
    let cov = &inv * meat * &inv * (n as f64 / (n - k) as f64);
    let coefficients = (0..k)
        .map(|j| Coefficient::new(d.names[j].clone(), beta[j], cov[(j, j)].sqrt()))
        .collect();
    let ssr = resid.norm_squared();
    let sst = d.y.norm_squared();
    let t_span = panel.n_transitions();
    Ok(ConvergenceFit {
        model: Model::OlsFe,
        coefficients,
        rho: None,
        lambda: None,
        speed: convergence_speed(beta[0], t_span)?,
        t_span,
        log_likelihood: gaussian_loglik(ssr, n_eff),
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 },
        sigma2: ssr / n_eff as f64,
        n_obs: n,
        diagnostics: None,
        residuals: resid.iter().copied().collect(),
    })
}

/// Classical and robust LM tests for spatial lag and spatial error.
///
/// `W` acts blockwise per period. Two-way demeaning removes one period and
/// one region's worth of freedom, so the trace term is scaled by `T − 1` and
/// `σ̂²` uses `(N − 1)(T − 1) − k` degrees of freedom.
pub fn lm_diagnostics(panel: &ConvergencePanel, fit: &ConvergenceFit, w: &WeightMatrix) -> Result<LmDiagnostics> {
    if fit.model != Model::OlsFe {
        return Err(Error::data("LM diagnostics need an OLS-FE fit"));
    }
    w.ensure_order(&panel.region_ids)?;
    let d = Design::new(panel)?;
    let e = DVector::from_vec(fit.residuals.clone());
    if e.len() != d.n() {
        return Err(Error::data("fit residuals do not match the panel"));
    }
    let k = d.x.ncols();
    let dof = ((d.n_regions - 1) * (d.n_periods - 1) - k) as f64;
    let sigma2 = e.norm_squared() / dof;
    if !(sigma2 > 0.0) {
        return Err(Error::numerical("zero residual variance; LM statistics undefined"));
    }

    let wm = w.to_dmatrix();
    let tw = ((wm.transpose() * &wm) + (&wm * &wm)).trace();
    let t_eff = (d.n_periods - 1) as f64;
    let ttw = t_eff * tw;
    if ttw == 0.0 {
        let zero = LmStat::new(0.0);
        return Ok(LmDiagnostics {
            lm_lag: zero,
            lm_error: zero,
            robust_lm_lag: zero,
            robust_lm_error: zero,
        });
    }

    let ev: Vec<f64> = e.iter().copied().collect();
    let we = DVector::from_vec(lag_blocks(w, &ev));
    let yv: Vec<f64> = d.y.iter().copied().collect();
    let wy = DVector::from_vec(lag_blocks(w, &yv));
    let err_score = e.dot(&we) / sigma2;
    let lag_score = e.dot(&wy) / sigma2;

    let beta: Vec<f64> = fit.coefficients.iter().map(|c| c.estimate).collect();
    let xb: Vec<f64> = (&d.x * DVector::from_vec(beta)).iter().copied().collect();
    let wxb = DVector::from_vec(lag_blocks(w, &xb));
    let (proj, _) = solve_ls(&wxb, &d.x)?;
    let m_wxb = &wxb - &d.x * proj;
    let rj = m_wxb.norm_squared() / sigma2 + ttw;
    if !(rj - ttw > 1e-12 * rj) {
        return Err(Error::numerical(
            "singular information matrix in LM diagnostics: W·Xβ lies in the span of X",
        ));
    }

    Ok(LmDiagnostics {
        lm_lag: LmStat::new(lag_score.powi(2) / rj),
        lm_error: LmStat::new(err_score.powi(2) / ttw),
        robust_lm_lag: LmStat::new((lag_score - err_score).powi(2) / (rj - ttw)),
        robust_lm_error: LmStat::new(
            (err_score - ttw / rj * lag_score).powi(2) / (ttw * (1.0 - ttw / rj)),
        ),
    })
}

/// Concentrated likelihood of a spatial model over its single parameter.
pub struct SpatialProfile {
    model: Model,
    y: DVector<f64>,
    x: DMatrix<f64>,
    wy: DVector<f64>,
    wx: DMatrix<f64>,
    names: Vec<String>,
    eigenvalues: Vec<Complex<f64>>,
    /// Periods left after demeaning, `T − 1`.
    t_eff: usize,
    n_eff: usize,
    /// `W·1 = 1`: the constant direction removed by demeaning carries the
    /// unit eigenvalue, whose Jacobian term is dropped.
    unit_root: bool,
    lower: f64,
    upper: f64,
}

/// Point evaluation of a [`SpatialProfile`].
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub theta: f64,
    pub log_likelihood: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub xtx_inv: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

impl SpatialProfile {
    pub fn new(panel: &ConvergencePanel, w: &WeightMatrix, model: Model) -> Result<Self> {
        if model == Model::OlsFe {
            return Err(Error::data("spatial profile needs SAR or SEM"));
        }
        w.ensure_order(&panel.region_ids)?;
        let d = Design::new(panel)?;
        let yv: Vec<f64> = d.y.iter().copied().collect();
        let wy = DVector::from_vec(lag_blocks(w, &yv));
        let wx = lag_columns(w, &d.x);
        let eigenvalues = w.eigenvalues()?;
        if eigenvalues.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::numerical("eigenvalues of W are not finite"));
        }
        let re_min = eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let re_max = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if !(re_max > 0.0) {
            return Err(Error::numerical("W has no positive eigenvalue"));
        }
        let lower = if re_min < 0.0 { 1.0 / re_min } else { -1.0 };
        let unit_root = (0..w.len()).all(|i| (w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let n_eff = d.n_eff();
        Ok(SpatialProfile {
            model,
            y: d.y,
            x: d.x,
            wy,
            wx,
            names: d.names,
            eigenvalues,
            t_eff: d.n_periods - 1,
            n_eff,
            unit_root,
            lower,
            upper: 1.0 / re_max,
        })
    }

    /// Open admissible interval `(1/ω_min, 1/ω_max)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// `(T − 1) · Σ ln|1 − θω|`, without the unit eigenvalue when `W` is
    /// row-standardized.
    pub fn log_det(&self, theta: f64) -> f64 {
        let mut s: f64 = self
            .eigenvalues
            .iter()
            .map(|z| (Complex::new(1.0, 0.0) - z * theta).norm().ln())
            .sum();
        if self.unit_root {
            s -= (1.0 - theta).abs().ln();
        }
        self.t_eff as f64 * s
    }

    pub fn evaluate(&self, theta: f64) -> Result<ProfilePoint> {
        let y = &self.y - &self.wy * theta;
        let x = match self.model {
            Model::Sem => &self.x - &self.wx * theta,
            _ => self.x.clone(),
        };
        let (beta, xtx_inv) = solve_ls(&y, &x)?;
        let residuals = &y - &x * &beta;
        let ssr = residuals.norm_squared();
        let log_likelihood = gaussian_loglik(ssr, self.n_eff) + self.log_det(theta);
        if !log_likelihood.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite likelihood at {} = {theta}",
                self.parameter_name()
            )));
        }
        Ok(ProfilePoint {
            theta,
            log_likelihood,
            beta,
            sigma2: ssr / self.n_eff as f64,
            xtx_inv,
            residuals,
        })
    }

    pub fn log_likelihood(&self, theta: f64) -> Result<f64> {
        Ok(self.evaluate(theta)?.log_likelihood)
    }

    /// Likelihood on an evenly spaced grid strictly inside the bounds.
    pub fn grid(&self, step: f64) -> Result<Vec<(f64, f64)>> {
        let n = ((self.upper - self.lower) / step).floor() as usize;
        (1..n)
            .into_par_iter()
            .map(|i| {
                let theta = self.lower + i as f64 * step;
                Ok((theta, self.log_likelihood(theta)?))
            })
            .collect()
    }

    fn parameter_name(&self) -> &'static str {
        match self.model {
            Model::Sem => "lambda",
            _ => "rho",
        }
    }

    /// Golden-section maximizer of the concentrated likelihood.
    pub fn maximize(&self, tol: f64) -> Result<f64> {
        let margin = 1e-7;
        let theta = golden_section_max(
            |t| self.log_likelihood(t),
            self.lower + margin,
            self.upper - margin,
            tol,
        )?;
        if theta - self.lower < 1e-6 || self.upper - theta < 1e-6 {
            return Err(Error::numerical(format!(
                "spatial parameter at bound: {} = {theta} in ({}, {})",
                self.parameter_name(),
                self.lower,
                self.upper
            )));
        }
        Ok(theta)
    }
}

/// Maximize a unimodal `f` on `[a, b]` until the bracket is narrower than `tol`.
pub fn golden_section_max(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok((a + b) / 2.0)
}

fn fit_spatial(panel: &ConvergencePanel, w: &WeightMatrix, model: Model) -> Result<ConvergenceFit> {
    let profile = SpatialProfile::new(panel, w, model)?;
    let theta = profile.maximize(1e-8)?;
    let p = profile.evaluate(theta)?;

    let h = 1e-4;
    let curvature = (profile.log_likelihood(theta + h)? - 2.0 * p.log_likelihood
        + profile.log_likelihood(theta - h)?)
        / (h * h);
    let theta_se = if curvature < 0.0 { (-1.0 / curvature).sqrt() } else { f64::NAN };
    let spatial = Coefficient::new(profile.parameter_name().to_string(), theta, theta_se);

    let coefficients: Vec<Coefficient> = (0..p.beta.len())
        .map(|j| Coefficient::new(profile.names[j].clone(), p.beta[j], (p.sigma2 * p.xtx_inv[(j, j)]).sqrt()))
        .collect();
    let sst = profile.y.norm_squared();
    let ssr = match model {
        // ordinary residual u = y − Xβ
        Model::Sem => (&profile.y - &profile.x * &p.beta).norm_squared(),
        _ => p.residuals.norm_squared(),
    };
    let t_span = panel.n_transitions();
    Ok(ConvergenceFit {
        model,
        speed: convergence_speed(p.beta[0], t_span)?,
        coefficients,
        rho: (model == Model::Sar).then(|| spatial.clone()),
        lambda: (model == Model::Sem).then_some(spatial),
        t_span,
        log_likelihood: p.log_likelihood,
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 },
        sigma2: p.sigma2,
        n_obs: profile.y.len(),
        diagnostics: None,
        residuals: p.residuals.iter().copied().collect(),
    })
}

/// Spatial-error model by concentrated maximum likelihood.
pub fn fit_sem(panel: &ConvergencePanel, w: &WeightMatrix) -> Result<ConvergenceFit> {
    fit_spatial(panel, w, Model::Sem)
}

/// Spatial-lag model by concentrated maximum likelihood.
pub fn fit_sar(panel: &ConvergencePanel, w: &WeightMatrix) -> Result<ConvergenceFit> {
    fit_spatial(panel, w, Model::Sar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{knn_weights, simulate_convergence, SimulationSpec};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn speed_examples() {
        assert_eq!(convergence_speed(0.0, 5).unwrap(), 0.0);
        let s = convergence_speed(-0.3, 5).unwrap();
        assert!((s - (-(0.7f64).ln() / 5.0)).abs() < 1e-15);
        assert!((s - 0.07133).abs() < 1e-5);
        assert!(convergence_speed(-1.0, 5).unwrap_err().to_string().contains("overshooting"));
        assert!(convergence_speed(-0.999999, 5).unwrap() > 2.0);
    }

    #[test]
    fn growth_construction() {
        let regions = ids(2);
        let years = [2017, 2018, 2019, 2020, 2021];
        let constant = vec![0.5; 10];
        let p = build_panel(&regions, &years, &constant, &[]).unwrap();
        assert_eq!(p.n_transitions(), 4);
        assert!(p.growth.iter().all(|&g| g == 0.0));

        let doubling: Vec<f64> = (0..2).flat_map(|_| (0..5).map(|t| 0.01 * 2f64.powi(t))).collect();
        let p = build_panel(&regions, &years, &doubling, &[]).unwrap();
        assert!(p.growth.iter().all(|&g| (g - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn non_positive_levels_drop_region() {
        let regions = ids(3);
        let mut levels = vec![0.5; 9];
        levels[4] = 0.0;
        let p = build_panel(&regions, &[1, 2, 3], &levels, &[]).unwrap();
        assert_eq!(p.dropped, vec!["r1".to_string()]);
        assert_eq!(p.region_ids, vec!["r0".to_string(), "r2".to_string()]);
        assert!(build_panel(&regions, &[1], &levels[..3], &[]).is_err());
    }

    fn noiseless(n: usize, t: usize, beta: f64, seed: u64) -> ConvergencePanel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n * t).map(|_| rng.random_range(-3.0..-0.1)).collect();
        let g: Vec<f64> = (0..n * t).map(|o| beta * x[o] + mu[o % n] + tau[o / n]).collect();
        ConvergencePanel::from_parts(ids(n), (0..t as i32).collect(), g, x, vec![], vec![]).unwrap()
    }

    #[test]
    fn noiseless_recovery() {
        let p = noiseless(30, 4, -0.3, 1);
        let fit = ols_fe(&p).unwrap();
        assert!((fit.beta() + 0.3).abs() < 1e-8);
    }

    #[test]
    fn pure_fixed_effects_give_zero_beta() {
        let mut p = noiseless(20, 4, 0.0, 2);
        let fit = ols_fe(&p).unwrap();
        assert!(fit.beta().abs() < 1e-8);
        // irrelevant control leaves beta alone
        p.control_names.push("z".into());
        p.controls.push((0..80).map(|o| ((o * 7919) % 13) as f64).collect());
        let p2 = noiseless(20, 4, -0.3, 2);
        let mut p2c = p2.clone();
        p2c.control_names = p.control_names.clone();
        p2c.controls = p.controls.clone();
        assert!((ols_fe(&p2c).unwrap().beta() - ols_fe(&p2).unwrap().beta()).abs() < 1e-6);
    }

    #[test]
    fn collinear_control_is_named() {
        let mut p = noiseless(10, 3, -0.3, 3);
        p.control_names.push("region_constant".into());
        p.controls.push((0..30).map(|o| (o % 10) as f64).collect());
        let err = ols_fe(&p).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("region_constant"));
    }

    #[test]
    fn zero_weights_give_zero_lm() {
        let p = noiseless(10, 3, -0.3, 4);
        let mut p = p;
        p.growth.iter_mut().enumerate().for_each(|(i, g)| *g += ((i * 31) % 7) as f64 * 0.01);
        let fit = ols_fe(&p).unwrap();
        let w = WeightMatrix::from_dense(
            crate::panel::WeightKind::InverseDistance,
            vec![0.0; 100],
            ids(10),
            false,
        )
        .unwrap();
        let lm = lm_diagnostics(&p, &fit, &w).unwrap();
        for (_, s) in lm.all() {
            assert_eq!(s.statistic, 0.0);
        }
    }

    #[test]
    fn spatial_loglik_at_zero_matches_ols() {
        let w = knn_weights(30, 4, 5);
        let sim = simulate_convergence(&SimulationSpec { lambda: 0.3, ..SimulationSpec::new(30, 4) }, &w, 11);
        let ols = ols_fe(&sim).unwrap();
        for model in [Model::Sem, Model::Sar] {
            let prof = SpatialProfile::new(&sim, &w, model).unwrap();
            assert!((prof.log_likelihood(0.0).unwrap() - ols.log_likelihood).abs() < 1e-8);
        }
    }

    #[test]
    fn golden_section_matches_grid() {
        let w = knn_weights(50, 4, 7);
        for seed in 0..5 {
            let sim = simulate_convergence(&SimulationSpec { lambda: 0.5, ..SimulationSpec::new(50, 4) }, &w, seed);
            let prof = SpatialProfile::new(&sim, &w, Model::Sem).unwrap();
            let golden = prof.maximize(1e-8).unwrap();
            let grid = prof.grid(1e-3).unwrap();
            let best = grid.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            assert!((golden - best).abs() < 2e-3, "seed {seed}: {golden} vs {best}");
        }
    }

    #[test]
    fn sem_recovers_lambda() {
        let w = knn_weights(50, 4, 7);
        let mut zero = Vec::new();
        let mut half = Vec::new();
        for seed in 0..20 {
            let s0 = simulate_convergence(&SimulationSpec::new(50, 4), &w, 100 + seed);
            zero.push(fit_sem(&s0, &w).unwrap().lambda.unwrap().estimate);
            let s5 = simulate_convergence(&SimulationSpec { lambda: 0.5, ..SimulationSpec::new(50, 4) }, &w, 200 + seed);
            half.push(fit_sem(&s5, &w).unwrap().lambda.unwrap().estimate);
        }
        zero.sort_by(f64::total_cmp);
        half.sort_by(f64::total_cmp);
        let med0 = (zero[9] + zero[10]) / 2.0;
        let med5 = (half[9] + half[10]) / 2.0;
        assert!(med0.abs() < 0.1, "median lambda under null {med0}");
        assert!((0.35..=0.65).contains(&med5), "median lambda {med5}");
    }

    #[test]
    fn sar_recovers_rho() {
        let w = knn_weights(50, 4, 8);
        let sim = simulate_convergence(&SimulationSpec { rho: 0.4, ..SimulationSpec::new(50, 4) }, &w, 9);
        let fit = fit_sar(&sim, &w).unwrap();
        assert!((fit.rho.unwrap().estimate - 0.4).abs() < 0.2);
        assert!(fit.lambda.is_none());
    }

    #[test]
    fn lm_error_has_power() {
        let w = knn_weights(200, 5, 3);
        let sim = simulate_convergence(&SimulationSpec { lambda: 0.7, ..SimulationSpec::new(200, 4) }, &w, 5);
        let fit = ols_fe(&sim).unwrap();
        let lm = lm_diagnostics(&sim, &fit, &w).unwrap();
        assert!(lm.lm_error.p_value < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn beta_invariant_to_log_shift(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let w = knn_weights(15, 3, seed);
            let p = simulate_convergence(&SimulationSpec::new(15, 3), &w, seed);
            let mut q = p.clone();
            q.log_level.iter_mut().for_each(|v| *v += shift);
            let a = ols_fe(&p).unwrap().beta();
            let b = ols_fe(&q).unwrap().beta();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn speed_increasing(a in -0.99f64..0.0, b in -0.99f64..0.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(convergence_speed(lo, 4).unwrap() > convergence_speed(hi, 4).unwrap());
        }
    }
}
