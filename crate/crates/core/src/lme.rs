//! Two-level linear mixed-effects model: fitting by ML or REML, GLS fixed
//! effects, BLUPs and residuals.
//!
//! The model is `y_i = X_i β + Z_i b_i + ε_i` with `b_i ~ N(0, D)` and
//! `ε_i ~ N(0, σ² I)`. Fitting optimizes the relative covariance factor Λ
//! (`D = σ² Λ Λᵀ`, Λ lower triangular with nonnegative diagonal); β and σ² are
//! profiled out in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::GroupedDesign;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Eigenvalues of D above this negative tolerance are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ML")]
    Ml,
    #[default]
    #[serde(rename = "REML")]
    Reml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ml => "ML",
            Method::Reml => "REML",
        })
    }
}

/// Structure imposed on the random-effect covariance D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovStructure {
    #[default]
    Unstructured,
    /// Off-diagonal entries fixed at zero.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    /// Random-effect covariance (q × q, symmetric PSD).
    pub d: DMatrix<f64>,
    /// Residual variance.
    pub sigma2: f64,
}

impl CovarianceSpec {
    /// Validates symmetry and positive semi-definiteness; tiny negative
    /// eigenvalues (within [`PSD_TOLERANCE`]) are clamped to zero.
    pub fn new(d: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self {
            d: clamp_psd(d)?,
            sigma2,
        })
    }

    pub fn q(&self) -> usize {
        self.d.nrows()
    }
}

/// Symmetrizes `d` and clamps eigenvalues in [-PSD_TOLERANCE, 0) to zero.
pub fn clamp_psd(d: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !d.is_square() {
        return Err(Error::Dimension(format!("D must be square, got {:?}", d.shape())));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("D has non-finite entries".into()));
    }
    let asym = (&d - d.transpose()).abs().max();
    let scale = d.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::InvalidParams("D is not symmetric".into()));
    }
    let sym = (&d + d.transpose()) * 0.5;
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::InvalidParams(format!(
            "D is not positive semi-definite (smallest eigenvalue {min:e})"
        )));
    }
    if min < 0.0 {
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        return Ok((&rebuilt + rebuilt.transpose()) * 0.5);
    }
    Ok(sym)
}

/// V_i = Z_i D Z_iᵀ + σ² I.
pub fn marginal_cov(cov: &CovarianceSpec, design: &GroupedDesign, i: usize) -> DMatrix<f64> {
    let grp = &design.groups[i];
    let zdz = &grp.z * &cov.d * grp.z.transpose();
    let mut v = (&zdz + zdz.transpose()) * 0.5;
    for k in 0..grp.n() {
        v[(k, k)] += cov.sigma2;
    }
    v
}

fn check_cov(design: &GroupedDesign, cov: &CovarianceSpec) -> Result<()> {
    if cov.q() != design.q() {
        return Err(Error::Dimension(format!(
            "D is {}×{}, design has q = {}",
            cov.q(),
            cov.q(),
            design.q()
        )));
    }
    Ok(())
}

fn chol_v(cov: &CovarianceSpec, design: &GroupedDesign, i: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    linalg::cholesky(marginal_cov(cov, design, i)).ok_or_else(|| {
        Error::Degenerate(format!(
            "V_i of group `{}` is not positive definite",
            design.groups[i].label
        ))
    })
}

/// Names of columns that are linear combinations of earlier columns.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for (j, name) in names.iter().enumerate().take(x.ncols()) {
        let mut trial = kept.clone();
        trial.push(j);
        if linalg::rank(&x.select_columns(&trial)) == trial.len() {
            kept = trial;
        } else {
            out.push(name.clone());
        }
    }
    out
}

fn singular_error(design: &GroupedDesign) -> Error {
    let cols = collinear_columns(&design.stacked_x(), &design.fixed_names);
    Error::Singular(cols)
}

/// Generalized least squares β̂ = (Σ X_iᵀV_i⁻¹X_i)⁻¹ Σ X_iᵀV_i⁻¹y_i via Cholesky solves.
pub fn gls_beta(design: &GroupedDesign, cov: &CovarianceSpec) -> Result<DVector<f64>> {
    check_cov(design, cov)?;
    let p = design.p();
    let mut info = DMatrix::zeros(p, p);
    let mut score = DVector::zeros(p);
    for (i, grp) in design.groups.iter().enumerate() {
        let chol = chol_v(cov, design, i)?;
        let vinv_x = chol.solve(&grp.x);
        let vinv_y = chol.solve(&grp.y);
        info += grp.x.transpose() * vinv_x;
        score += grp.x.transpose() * vinv_y;
    }
    let info = (&info + info.transpose()) * 0.5;
    if linalg::rank(&info) < p {
        return Err(singular_error(design));
    }
    let chol = linalg::cholesky(info).ok_or_else(|| singular_error(design))?;
    Ok(chol.solve(&score))
}

/// Best linear unbiased predictors b̂_i = D Z_iᵀ V_i⁻¹ (y_i − X_i β̂).
pub fn blup(
    design: &GroupedDesign,
    cov: &CovarianceSpec,
    beta: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    check_cov(design, cov)?;
    if beta.len() != design.p() {
        return Err(Error::Dimension(format!(
            "beta has length {}, design has p = {}",
            beta.len(),
            design.p()
        )));
    }
    design
        .groups
        .iter()
        .enumerate()
        .map(|(i, grp)| {
            let chol = chol_v(cov, design, i)?;
            let r = &grp.y - &grp.x * beta;
            Ok(&cov.d * grp.z.transpose() * chol.solve(&r))
        })
        .collect()
}

/// ML or REML deviance (−2 log-likelihood) at given parameters, evaluated
/// directly from the dense V_i.
///
/// The REML form omits the constant log|Σ X_iᵀX_i|, matching the profiled
/// criterion reported by [`fit`].
pub fn deviance(
    design: &GroupedDesign,
    cov: &CovarianceSpec,
    beta: &DVector<f64>,
    method: Method,
) -> Result<f64> {
    check_cov(design, cov)?;
    let p = design.p();
    let n = design.n_total() as f64;
    let mut logdet = 0.0;
    let mut quad = 0.0;
    let mut info = DMatrix::zeros(p, p);
    for (i, grp) in design.groups.iter().enumerate() {
        let chol = chol_v(cov, design, i)?;
        logdet += linalg::chol_logdet(&chol);
        let r = &grp.y - &grp.x * beta;
        quad += r.dot(&chol.solve(&r));
        info += grp.x.transpose() * chol.solve(&grp.x);
    }
    Ok(match method {
        Method::Ml => logdet + quad + n * LN_2PI,
        Method::Reml => {
            let info = (&info + info.transpose()) * 0.5;
            let c = linalg::cholesky(info).ok_or_else(|| singular_error(design))?;
            logdet + linalg::chol_logdet(&c) + quad + (n - p as f64) * LN_2PI
        }
    })
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub structure: CovStructure,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            structure: CovStructure::Unstructured,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedLME {
    pub beta: DVector<f64>,
    pub cov: CovarianceSpec,
    /// Relative covariance factor parameters: lower triangle of Λ in
    /// column-major order (only the diagonal for [`CovStructure::Diagonal`]).
    pub theta: Vec<f64>,
    pub structure: CovStructure,
    pub criterion: f64,
    pub method: Method,
    pub converged: bool,
    pub n_iter: usize,
    pub n_obs: usize,
    pub n_groups: usize,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
}

impl FittedLME {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.cov.q()
    }

    /// The relative covariance factor Λ.
    pub fn lambda(&self) -> DMatrix<f64> {
        lambda_from_theta(&self.theta, self.q(), self.structure)
    }

    pub fn check_design(&self, design: &GroupedDesign) -> Result<()> {
        if design.p() != self.p()
            || design.q() != self.q()
            || design.g() != self.n_groups
            || design.n_total() != self.n_obs
        {
            return Err(Error::FitMismatch(format!(
                "fit has (p, q, g, n) = ({}, {}, {}, {}), design has ({}, {}, {}, {})",
                self.p(),
                self.q(),
                self.n_groups,
                self.n_obs,
                design.p(),
                design.q(),
                design.g(),
                design.n_total()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FitDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FitDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// Versioned JSON form of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitDocument {
    format: String,
    version: u32,
    method: Method,
    structure: CovStructure,
    fixed_names: Vec<String>,
    random_names: Vec<String>,
    beta: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    criterion: f64,
    converged: bool,
    n_iter: usize,
    n_obs: usize,
    n_groups: usize,
}

const FIT_FORMAT: &str = "lme-fit";
const FIT_VERSION: u32 = 1;

impl From<&FittedLME> for FitDocument {
    fn from(f: &FittedLME) -> Self {
        Self {
            format: FIT_FORMAT.into(),
            version: FIT_VERSION,
            method: f.method,
            structure: f.structure,
            fixed_names: f.fixed_names.clone(),
            random_names: f.random_names.clone(),
            beta: f.beta.iter().copied().collect(),
            theta: f.theta.clone(),
            sigma2: f.cov.sigma2,
            d: f.cov.d.row_iter().map(|r| r.iter().copied().collect()).collect(),
            criterion: f.criterion,
            converged: f.converged,
            n_iter: f.n_iter,
            n_obs: f.n_obs,
            n_groups: f.n_groups,
        }
    }
}

impl TryFrom<FitDocument> for FittedLME {
    type Error = Error;

    fn try_from(doc: FitDocument) -> Result<Self> {
        if doc.format != FIT_FORMAT || doc.version != FIT_VERSION {
            return Err(Error::Config(format!(
                "unsupported fit document {} v{}",
                doc.format, doc.version
            )));
        }
        let q = doc.d.len();
        if doc.d.iter().any(|r| r.len() != q) {
            return Err(Error::Dimension("D must be square".into()));
        }
        let d = DMatrix::from_fn(q, q, |i, j| doc.d[i][j]);
        Ok(Self {
            beta: DVector::from_vec(doc.beta),
            cov: CovarianceSpec::new(d, doc.sigma2)?,
            theta: doc.theta,
            structure: doc.structure,
            criterion: doc.criterion,
            method: doc.method,
            converged: doc.converged,
            n_iter: doc.n_iter,
            n_obs: doc.n_obs,
            n_groups: doc.n_groups,
            fixed_names: doc.fixed_names,
            random_names: doc.random_names,
        })
    }
}

pub fn theta_len(q: usize, structure: CovStructure) -> usize {
    match structure {
        CovStructure::Unstructured => q * (q + 1) / 2,
        CovStructure::Diagonal => q,
    }
}

/// Builds Λ from θ; diagonal entries enter by absolute value.
pub fn lambda_from_theta(theta: &[f64], q: usize, structure: CovStructure) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    match structure {
        CovStructure::Unstructured => {
            let mut k = 0;
            for j in 0..q {
                for i in j..q {
                    l[(i, j)] = if i == j { theta[k].abs() } else { theta[k] };
                    k += 1;
                }
            }
        }
        CovStructure::Diagonal => {
            for j in 0..q {
                l[(j, j)] = theta[j].abs();
            }
        }
    }
    l
}

fn canonical_theta(theta: &[f64], q: usize, structure: CovStructure) -> Vec<f64> {
    let l = lambda_from_theta(theta, q, structure);
    let mut out = Vec::with_capacity(theta.len());
    match structure {
        CovStructure::Unstructured => {
            for j in 0..q {
                for i in j..q {
                    out.push(l[(i, j)]);
                }
            }
        }
        CovStructure::Diagonal => out.extend((0..q).map(|j| l[(j, j)])),
    }
    out
}

/// Per-group cross-products; everything the profiled deviance needs.
#[derive(Debug, Clone)]
struct GroupStats {
    xtx: DMatrix<f64>,
    ztx: DMatrix<f64>,
    ztz: DMatrix<f64>,
    xty: DVector<f64>,
    zty: DVector<f64>,
    yty: f64,
}

/// Profiled-deviance evaluator for one design.
pub struct ProfiledDeviance {
    stats: Vec<GroupStats>,
    n: usize,
    p: usize,
    q: usize,
    method: Method,
    structure: CovStructure,
}

/// Quantities at one θ.
#[derive(Debug, Clone)]
pub struct ProfiledPoint {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub lambda: DMatrix<f64>,
}

impl ProfiledDeviance {
    pub fn new(design: &GroupedDesign, method: Method, structure: CovStructure) -> Self {
        let stats = design
            .groups
            .iter()
            .map(|g| GroupStats {
                xtx: g.x.transpose() * &g.x,
                ztx: g.z.transpose() * &g.x,
                ztz: g.z.transpose() * &g.z,
                xty: g.x.transpose() * &g.y,
                zty: g.z.transpose() * &g.y,
                yty: g.y.dot(&g.y),
            })
            .collect();
        Self {
            stats,
            n: design.n_total(),
            p: design.p(),
            q: design.q(),
            method,
            structure,
        }
    }

    /// Evaluates the profiled criterion; `None` when the fixed-effect
    /// information matrix is singular or the penalized RSS vanishes.
    pub fn evaluate(&self, theta: &[f64]) -> Option<ProfiledPoint> {
        let (p, q) = (self.p, self.q);
        let lambda = lambda_from_theta(theta, q, self.structure);
        let lt = lambda.transpose();
        let mut logdet_m = 0.0;
        let mut a = DMatrix::zeros(p, p);
        let mut c = DVector::zeros(p);
        let mut s = 0.0;
        for st in &self.stats {
            let mut m = &lt * &st.ztz * &lambda;
            for k in 0..q {
                m[(k, k)] += 1.0;
            }
            let chol = linalg::cholesky(m)?;
            logdet_m += linalg::chol_logdet(&chol);
            let ltzx = &lt * &st.ztx;
            let ltzy = &lt * &st.zty;
            // Woodbury: (I + ZΛΛᵀZᵀ)⁻¹ = I − ZΛ M⁻¹ ΛᵀZᵀ
            let m_zx = chol.solve(&ltzx);
            let m_zy = chol.solve(&ltzy);
            a += &st.xtx - ltzx.transpose() * &m_zx;
            c += &st.xty - ltzx.transpose() * &m_zy;
            s += st.yty - ltzy.dot(&m_zy);
        }
        let a = (&a + a.transpose()) * 0.5;
        let chol_a = linalg::cholesky(a)?;
        let beta = chol_a.solve(&c);
        let r2 = s - c.dot(&beta);
        if !(r2 > 0.0) {
            return None;
        }
        let n = self.n as f64;
        let (deviance, sigma2) = match self.method {
            Method::Ml => (logdet_m + n * (1.0 + (2.0 * std::f64::consts::PI * r2 / n).ln()), r2 / n),
            Method::Reml => {
                let dof = (self.n - p) as f64;
                (
                    logdet_m
                        + linalg::chol_logdet(&chol_a)
                        + dof * (1.0 + (2.0 * std::f64::consts::PI * r2 / dof).ln()),
                    r2 / dof,
                )
            }
        };
        Some(ProfiledPoint {
            deviance,
            beta,
            sigma2,
            lambda,
        })
    }
}

fn initial_theta(q: usize, structure: CovStructure) -> Vec<f64> {
    // D0 = 0.5 * Var(OLS residuals) * I, with σ² initialized at that same
    // variance, so Λ0 = sqrt(0.5) * I.
    let diag = 0.5f64.sqrt();
    match structure {
        CovStructure::Unstructured => {
            let mut t = Vec::with_capacity(theta_len(q, structure));
            for j in 0..q {
                for i in j..q {
                    t.push(if i == j { diag } else { 0.0 });
                }
            }
            t
        }
        CovStructure::Diagonal => vec![diag; q],
    }
}

/// Fits the model by minimizing the profiled ML or REML deviance over θ.
///
/// Non-convergence within the evaluation budget is not an error: the best
/// point found is returned with `converged = false`.
pub fn fit(design: &GroupedDesign, method: Method, opts: &FitOptions) -> Result<FittedLME> {
    let n = design.n_total();
    let p = design.p();
    let q = design.q();
    if n <= p {
        return Err(Error::InvalidParams(format!("{n} observations for {p} fixed effects")));
    }
    if q == 0 {
        return Err(Error::InvalidParams("model has no random effects".into()));
    }
    let y = design.stacked_y();
    let mean = y.mean();
    if y.iter().all(|v| (v - mean).abs() <= 1e-300) {
        return Err(Error::Degenerate("response has zero variance".into()));
    }
    if linalg::rank(&design.stacked_x()) < p {
        return Err(singular_error(design));
    }
    let (ols_res, _) = linalg::ols_residual(&design.stacked_x(), &y);
    if ols_res.norm() <= 1e-12 * y.norm() {
        return Err(Error::Degenerate("fixed effects fit the response exactly".into()));
    }

    let profiled = ProfiledDeviance::new(design, method, opts.structure);
    let start = initial_theta(q, opts.structure);
    let min = nelder_mead(
        |t| profiled.evaluate(t).map_or(f64::INFINITY, |pt| pt.deviance),
        &start,
        &opts.optimizer,
    );
    let theta = canonical_theta(&min.x, q, opts.structure);
    let point = profiled
        .evaluate(&theta)
        .ok_or_else(|| Error::Degenerate("profiled deviance undefined at the optimum".into()))?;
    let d = &point.lambda * point.lambda.transpose() * point.sigma2;
    let d = (&d + d.transpose()) * 0.5;
    Ok(FittedLME {
        beta: point.beta,
        cov: CovarianceSpec { d, sigma2: point.sigma2 },
        theta,
        structure: opts.structure,
        criterion: point.deviance,
        method,
        converged: min.converged && point.deviance.is_finite(),
        n_iter: min.evals,
        n_obs: n,
        n_groups: design.g(),
        fixed_names: design.fixed_names.clone(),
        random_names: design.random_names.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    /// ε̂_i = y_i − X_iβ̂ − Z_ib̂_i
    pub level1: Vec<DVector<f64>>,
    /// b̂_i
    pub level2: Vec<DVector<f64>>,
    /// y_i − X_iβ̂
    pub marginal: Vec<DVector<f64>>,
}

impl ResidualSet {
    pub fn level1_flat(&self) -> Vec<f64> {
        self.level1.iter().flat_map(|v| v.iter().copied()).collect()
    }

    /// Component `k` of every b̂_i.
    pub fn level2_component(&self, k: usize) -> Vec<f64> {
        self.level2.iter().map(|b| b[k]).collect()
    }
}

pub fn residuals(design: &GroupedDesign, fitted: &FittedLME) -> Result<ResidualSet> {
    fitted.check_design(design)?;
    let level2 = blup(design, &fitted.cov, &fitted.beta)?;
    let mut level1 = Vec::with_capacity(design.g());
    let mut marginal = Vec::with_capacity(design.g());
    for (grp, b) in design.groups.iter().zip(&level2) {
        let m = &grp.y - &grp.x * &fitted.beta;
        level1.push(&m - &grp.z * b);
        marginal.push(m);
    }
    Ok(ResidualSet {
        level1,
        level2,
        marginal,
    })
}
