//! Parametric bootstrap: simulate responses from a fitted (or reduced null)
//! model, optionally refit the proposed model, and collect statistics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDesign;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lme::{self, CovStructure, FitOptions, FittedLME, ResidualSet, PSD_TOLERANCE};
use crate::rng::{self, StreamRng};

/// Distribution of the simulated random effects.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReDist {
    #[default]
    Normal,
    /// Multivariate t with scale matrix D̂ and the given degrees of freedom,
    /// so the covariance is ν/(ν−2)·D̂.
    MultivariateT(f64),
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub re_dist: ReDist,
    pub refit: bool,
    /// Run replicates on the rayon pool; results are identical either way.
    pub parallel: bool,
    pub fit_options: FitOptions,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            re_dist: ReDist::Normal,
            refit: true,
            parallel: true,
            fit_options: FitOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParams("at least one bootstrap replicate is required".into()));
        }
        if let ReDist::MultivariateT(nu) = self.re_dist {
            if !(nu > 2.0) {
                return Err(Error::InvalidParams(format!("t degrees of freedom must exceed 2, got {nu}")));
            }
        }
        Ok(())
    }
}

/// Which model generates the null data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "index")]
pub enum NullModelKind {
    /// The fitted model itself.
    SameModel,
    /// Fixed term `c` removed.
    DropFixed(usize),
    /// Random term `j` removed.
    DropRandom(usize),
    /// Random-effect correlations fixed at zero.
    UncorrelatedRe,
}

fn effect_factor(fitted: &FittedLME) -> Result<DMatrix<f64>> {
    linalg::psd_factor(&fitted.cov.d, PSD_TOLERANCE)
        .ok_or_else(|| Error::InvalidParams("fitted D is not PSD".into()))
}

fn simulate_with(
    fitted: &FittedLME,
    design: &GroupedDesign,
    re_dist: ReDist,
    rng: &mut StreamRng,
) -> Result<Vec<DVector<f64>>> {
    fitted.check_design(design)?;
    let factor = effect_factor(fitted)?;
    let chi = match re_dist {
        ReDist::Normal => None,
        ReDist::MultivariateT(nu) => {
            Some((nu, ChiSquared::new(nu).map_err(|e| Error::InvalidParams(e.to_string()))?))
        }
    };
    let sigma = fitted.cov.sigma2.max(0.0).sqrt();
    let q = design.q();
    Ok(design
        .groups
        .iter()
        .map(|grp| {
            let u = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let mut b = &factor * u;
            if let Some((nu, chi)) = &chi {
                let w: f64 = chi.sample(rng);
                b /= (w / nu).sqrt();
            }
            let e = DVector::from_iterator(grp.n(), (0..grp.n()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            &grp.x * &fitted.beta + &grp.z * b + e * sigma
        })
        .collect())
}

/// y*_i = X_iβ̂ + Z_ib*_i + ε*_i with b*_i ~ N(0, D̂) and ε*_i ~ N(0, σ̂²I).
pub fn simulate_response(
    fitted: &FittedLME,
    design: &GroupedDesign,
    rng: &mut StreamRng,
) -> Result<Vec<DVector<f64>>> {
    simulate_with(fitted, design, ReDist::Normal, rng)
}

/// As [`simulate_response`] but with multivariate-t random effects
/// (scale matrix D̂, `df` degrees of freedom).
pub fn simulate_contaminated(
    fitted: &FittedLME,
    design: &GroupedDesign,
    df: f64,
    rng: &mut StreamRng,
) -> Result<Vec<DVector<f64>>> {
    if !(df > 2.0) {
        return Err(Error::InvalidParams(format!("t degrees of freedom must exceed 2, got {df}")));
    }
    simulate_with(fitted, design, ReDist::MultivariateT(df), rng)
}

/// Design and fit of the model that generates null data.
pub fn null_model(
    fitted: &FittedLME,
    design: &GroupedDesign,
    kind: NullModelKind,
    opts: &FitOptions,
) -> Result<(GroupedDesign, FittedLME)> {
    fitted.check_design(design)?;
    let refit = |d: GroupedDesign, structure: CovStructure| -> Result<(GroupedDesign, FittedLME)> {
        let opts = FitOptions {
            structure,
            ..opts.clone()
        };
        let f = lme::fit(&d, fitted.method, &opts)?;
        Ok((d, f))
    };
    match kind {
        NullModelKind::SameModel => Ok((design.clone(), fitted.clone())),
        NullModelKind::DropFixed(c) => refit(design.without_fixed_term(c)?, fitted.structure),
        NullModelKind::DropRandom(j) => refit(design.without_random_term(j)?, fitted.structure),
        NullModelKind::UncorrelatedRe => {
            if design.q() < 2 {
                return Err(Error::InvalidParams(
                    "uncorrelated null model needs at least two random effects".into(),
                ));
            }
            refit(design.clone(), CovStructure::Diagonal)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub index: usize,
    /// Seed of the stream that produced the kept simulation.
    pub seed: u64,
    pub attempts: usize,
    pub converged: bool,
    pub y: Vec<DVector<f64>>,
    pub fit: FittedLME,
    pub residuals: ResidualSet,
}

#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub null_fit: FittedLME,
    pub replicates: Vec<Replicate>,
}

fn attempt_seed(base: u64, index: usize, attempt: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(base, index as u64), attempt as u64)
}

fn map_replicates<T: Send>(
    cfg: &BootstrapConfig,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if cfg.parallel {
        (0..cfg.replicates).into_par_iter().map(f).collect()
    } else {
        (0..cfg.replicates).map(f).collect()
    }
}

fn refit_replicate(
    fitted: &FittedLME,
    design: &GroupedDesign,
    null_design: &GroupedDesign,
    null_fit: &FittedLME,
    cfg: &BootstrapConfig,
    index: usize,
) -> Result<Replicate> {
    let opts = FitOptions {
        structure: fitted.structure,
        ..cfg.fit_options.clone()
    };
    let mut last = None;
    for attempt in 0..2 {
        let seed = attempt_seed(cfg.seed, index, attempt);
        let mut rng = rng::rng_from_seed(seed);
        let y = simulate_with(null_fit, null_design, cfg.re_dist, &mut rng)?;
        let star = design.with_response(y.clone())?;
        match lme::fit(&star, fitted.method, &opts) {
            Ok(fit) => {
                let residuals = lme::residuals(&star, &fit)?;
                let rep = Replicate {
                    index,
                    seed,
                    attempts: attempt + 1,
                    converged: fit.converged,
                    y,
                    fit,
                    residuals,
                };
                if rep.converged {
                    return Ok(rep);
                }
                log::warn!("bootstrap replicate {index} did not converge (attempt {})", attempt + 1);
                last = Some(Ok(rep));
            }
            Err(e) => last = Some(Err(e)),
        }
    }
    last.expect("two attempts were made")
}

/// Simulates `cfg.replicates` datasets from the null model and refits the
/// full proposed model to each.
///
/// Replicate `k` uses its own stream derived from `(cfg.seed, k)`; a
/// non-converged refit is resimulated once and then kept with its flag.
pub fn bootstrap_refit(
    fitted: &FittedLME,
    design: &GroupedDesign,
    null_kind: NullModelKind,
    cfg: &BootstrapConfig,
) -> Result<BootstrapRun> {
    cfg.validate()?;
    let (null_design, null_fit) = null_model(fitted, design, null_kind, &cfg.fit_options)?;
    let replicates = map_replicates(cfg, |k| {
        refit_replicate(fitted, design, &null_design, &null_fit, cfg, k)
    })?;
    Ok(BootstrapRun {
        null_fit,
        replicates,
    })
}

/// What a bootstrap statistic gets to look at.
pub struct StatContext<'a> {
    /// Design carrying the (observed or simulated) response.
    pub design: &'a GroupedDesign,
    /// Fit and residuals of the proposed model, when refitting is enabled
    /// (always present for the observed data).
    pub fit: Option<&'a FittedLME>,
    pub residuals: Option<&'a ResidualSet>,
}

/// One line of a bootstrap export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub replicate: usize,
    pub seed: u64,
    pub converged: bool,
    pub statistic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    pub observed: f64,
    pub records: Vec<BootstrapRecord>,
    /// (1 + #{stat* ≥ observed}) / (B_valid + 1) over converged replicates
    /// with a defined statistic.
    pub p_value: f64,
}

impl BootstrapDistribution {
    /// Statistic values of the replicates that enter the tail count.
    pub fn values(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.converged)
            .filter_map(|r| r.statistic)
            .collect()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|source| Error::Io {
                path: "<ndjson>".into(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Empirical upper-tail p-value with the (1 + count)/(B + 1) convention.
pub fn empirical_p(observed: f64, values: &[f64]) -> f64 {
    let exceed = values.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (values.len() + 1) as f64
}

/// Bootstrap distribution of `stat` under the fitted model.
///
/// With `cfg.refit` the proposed model is refitted to each replicate and
/// the statistic sees the refit; otherwise only the simulated response.
pub fn bootstrap_statistic<S>(
    fitted: &FittedLME,
    design: &GroupedDesign,
    stat: S,
    cfg: &BootstrapConfig,
) -> Result<BootstrapDistribution>
where
    S: Fn(&StatContext<'_>) -> Option<f64> + Sync,
{
    cfg.validate()?;
    let observed_res = lme::residuals(design, fitted)?;
    let observed = stat(&StatContext {
        design,
        fit: Some(fitted),
        residuals: Some(&observed_res),
    })
    .ok_or_else(|| Error::Degenerate("statistic undefined on the observed data".into()))?;

    let records = map_replicates(cfg, |k| {
        if cfg.refit {
            let rep = refit_replicate(fitted, design, design, fitted, cfg, k)?;
            let star = design.with_response(rep.y.clone())?;
            let value = stat(&StatContext {
                design: &star,
                fit: Some(&rep.fit),
                residuals: Some(&rep.residuals),
            });
            Ok(BootstrapRecord {
                replicate: k,
                seed: rep.seed,
                converged: rep.converged,
                statistic: value,
            })
        } else {
            let seed = attempt_seed(cfg.seed, k, 0);
            let mut rng = rng::rng_from_seed(seed);
            let y = simulate_with(fitted, design, cfg.re_dist, &mut rng)?;
            let star = design.with_response(y)?;
            let value = stat(&StatContext {
                design: &star,
                fit: None,
                residuals: None,
            });
            Ok(BootstrapRecord {
                replicate: k,
                seed,
                converged: true,
                statistic: value,
            })
        }
    })?;
    let mut dist = BootstrapDistribution {
        observed,
        records,
        p_value: f64::NAN,
    };
    dist.p_value = empirical_p(observed, &dist.values());
    Ok(dist)
}
