//! Synthetic datasets generated from the two-level model, shaped like common
//! study designs (balanced one-way, household radon survey, longitudinal
//! trial, dialyzer pressure curves, school exam scores).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FixedTerm, ModelSpec, RandomTerm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `y ~ 1 + (1 | group)`, equal group sizes.
    BalancedOneway,
    /// Homes within counties: `y ~ 1 + floor + uranium + (1 + floor | county)`.
    RadonLike,
    /// Repeated measures with dropout:
    /// `y ~ 1 + time + factor(treatment) + (1 + time | subject)`.
    LongitudinalLike,
    /// Quartic pressure curves:
    /// `y ~ 1 + poly(pressure, 4) + factor(qb) + (1 + pressure | subject)`.
    DialyzerLike,
    /// Pupils within schools: `y ~ 1 + lrt + (1 + lrt | school)`.
    ExamLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub groups: usize,
    /// Group size for balanced layouts; typical (median) size otherwise.
    pub group_size: usize,
    pub beta: Vec<f64>,
    pub re_cov: DMatrix<f64>,
    pub sigma2: f64,
    /// Standard deviation of log residual-SD across groups; 0 is homoscedastic.
    pub hetero: f64,
    /// Draw random effects multivariate-t with these degrees of freedom.
    pub re_df: Option<f64>,
}

impl SynthKind {
    pub fn default_params(self) -> SynthParams {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        match self {
            SynthKind::BalancedOneway => SynthParams {
                groups: 6,
                group_size: 4,
                beta: vec![0.0],
                re_cov: diag(&[1.0]),
                sigma2: 1.0,
                hetero: 0.0,
                re_df: None,
            },
            SynthKind::RadonLike => SynthParams {
                groups: 85,
                group_size: 6,
                beta: vec![1.46, -0.69, 0.72],
                re_cov: DMatrix::from_row_slice(2, 2, &[0.10, -0.02, -0.02, 0.08]),
                sigma2: 0.53,
                hetero: 0.0,
                re_df: None,
            },
            SynthKind::LongitudinalLike => SynthParams {
                groups: 66,
                group_size: 5,
                beta: vec![25.0, -1.5, 2.0],
                re_cov: DMatrix::from_row_slice(2, 2, &[16.0, -1.0, -1.0, 1.0]),
                sigma2: 4.0,
                hetero: 0.0,
                re_df: None,
            },
            SynthKind::DialyzerLike => SynthParams {
                groups: 20,
                group_size: 7,
                beta: vec![30.0, 35.0, -9.0, -6.0, 3.0, 10.0],
                re_cov: diag(&[4.0, 9.0]),
                sigma2: 2.0,
                hetero: 0.0,
                re_df: None,
            },
            SynthKind::ExamLike => SynthParams {
                groups: 65,
                group_size: 20,
                beta: vec![0.0, 0.56],
                re_cov: DMatrix::from_row_slice(2, 2, &[0.09, 0.02, 0.02, 0.015]),
                sigma2: 0.55,
                hetero: 0.0,
                re_df: None,
            },
        }
    }

    /// The model that generated the data.
    pub fn true_spec(self) -> ModelSpec {
        let num = |c: &str| FixedTerm::Numeric(c.into());
        let slope = |c: &str| RandomTerm::Slope(c.into());
        let (response, fixed, random, group) = match self {
            SynthKind::BalancedOneway => ("y", vec![FixedTerm::Intercept], vec![RandomTerm::Intercept], "group"),
            SynthKind::RadonLike => (
                "y",
                vec![FixedTerm::Intercept, num("floor"), num("uranium")],
                vec![RandomTerm::Intercept, slope("floor")],
                "county",
            ),
            SynthKind::LongitudinalLike => (
                "y",
                vec![FixedTerm::Intercept, num("time"), FixedTerm::Factor("treatment".into())],
                vec![RandomTerm::Intercept, slope("time")],
                "subject",
            ),
            SynthKind::DialyzerLike => (
                "y",
                vec![
                    FixedTerm::Intercept,
                    FixedTerm::Poly {
                        column: "pressure".into(),
                        degree: 4,
                    },
                    FixedTerm::Factor("qb".into()),
                ],
                vec![RandomTerm::Intercept, slope("pressure")],
                "subject",
            ),
            SynthKind::ExamLike => (
                "y",
                vec![FixedTerm::Intercept, num("lrt")],
                vec![RandomTerm::Intercept, slope("lrt")],
                "school",
            ),
        };
        ModelSpec::new(response, fixed, random, group).expect("built-in spec is valid")
    }

    fn dims(self) -> (usize, usize) {
        match self {
            SynthKind::BalancedOneway => (1, 1),
            SynthKind::RadonLike => (3, 2),
            SynthKind::LongitudinalLike => (3, 2),
            SynthKind::DialyzerLike => (6, 2),
            SynthKind::ExamLike => (2, 2),
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "balanced_oneway" => SynthKind::BalancedOneway,
            "radon_like" => SynthKind::RadonLike,
            "longitudinal_like" => SynthKind::LongitudinalLike,
            "dialyzer_like" => SynthKind::DialyzerLike,
            "exam_like" => SynthKind::ExamLike,
            other => return Err(Error::InvalidParams(format!("unknown dataset kind `{other}`"))),
        })
    }
}

fn label(prefix: &str, i: usize) -> String {
    format!("{prefix}{:03}", i + 1)
}

fn draw_effects<R: Rng>(factor: &DMatrix<f64>, df: Option<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let q = factor.nrows();
    let u = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mut b = factor * u;
    if let Some(nu) = df {
        let chi = ChiSquared::new(nu).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let w: f64 = chi.sample(rng);
        b /= (w / nu).sqrt();
    }
    Ok(b)
}

/// Generates a dataset of the given kind. The same seed always yields the same data.
pub fn synth_dataset(kind: SynthKind, params: &SynthParams, seed: u64) -> Result<Dataset> {
    let (p, q) = kind.dims();
    if params.beta.len() != p {
        return Err(Error::InvalidParams(format!(
            "{kind:?} needs {p} fixed effects, got {}",
            params.beta.len()
        )));
    }
    if params.re_cov.shape() != (q, q) {
        return Err(Error::InvalidParams(format!("{kind:?} needs a {q}×{q} random-effect covariance")));
    }
    if params.groups == 0 || params.group_size == 0 {
        return Err(Error::InvalidParams("groups and group_size must be positive".into()));
    }
    if !(params.sigma2 > 0.0) || params.hetero < 0.0 {
        return Err(Error::InvalidParams("sigma2 must be positive and hetero nonnegative".into()));
    }
    if let Some(nu) = params.re_df {
        if !(nu > 2.0) {
            return Err(Error::InvalidParams(format!("t degrees of freedom must exceed 2, got {nu}")));
        }
    }
    let d = crate::lme::clamp_psd(params.re_cov.clone())?;
    let factor = linalg::psd_factor(&d, crate::lme::PSD_TOLERANCE)
        .ok_or_else(|| Error::InvalidParams("random-effect covariance is not PSD".into()))?;

    let mut rng = rng::rng_from_seed(seed);
    let sigma = params.sigma2.sqrt();
    let beta = &params.beta;
    let mut y = Vec::new();
    let mut group_col: Vec<String> = Vec::new();
    let noise_sd = |rng: &mut rng::StreamRng| -> f64 {
        if params.hetero > 0.0 {
            sigma * (params.hetero * rng.sample::<f64, _>(StandardNormal)).exp()
        } else {
            sigma
        }
    };

    let columns = match kind {
        SynthKind::BalancedOneway => {
            for i in 0..params.groups {
                let b = draw_effects(&factor, params.re_df, &mut rng)?;
                let sd = noise_sd(&mut rng);
                for _ in 0..params.group_size {
                    let e: f64 = rng.sample(StandardNormal);
                    y.push(beta[0] + b[0] + sd * e);
                    group_col.push(label("g", i));
                }
            }
            vec![("y".to_string(), Column::Numeric(y)), ("group".into(), Column::categorical(&group_col))]
        }
        SynthKind::RadonLike => {
            let sizes = LogNormal::new((params.group_size as f64).ln(), 0.9)
                .map_err(|e| Error::InvalidParams(e.to_string()))?;
            let mut floor = Vec::new();
            let mut uranium = Vec::new();
            for i in 0..params.groups {
                let n = (sizes.sample(&mut rng).round() as usize).clamp(1, 116);
                let u: f64 = 0.35 * rng.sample::<f64, _>(StandardNormal);
                let b = draw_effects(&factor, params.re_df, &mut rng)?;
                let sd = noise_sd(&mut rng);
                for _ in 0..n {
                    let f = if rng.random_bool(0.2) { 1.0 } else { 0.0 };
                    let e: f64 = rng.sample(StandardNormal);
                    y.push(beta[0] + beta[1] * f + beta[2] * u + b[0] + b[1] * f + sd * e);
                    floor.push(f);
                    uranium.push(u);
                    group_col.push(label("c", i));
                }
            }
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("floor".into(), Column::Numeric(floor)),
                ("uranium".into(), Column::Numeric(uranium)),
                ("county".into(), Column::categorical(&group_col)),
            ]
        }
        SynthKind::LongitudinalLike => {
            let mut time = Vec::new();
            let mut trt = Vec::new();
            for i in 0..params.groups {
                let arm = if i % 2 == 0 { "A" } else { "B" };
                // roughly 30% drop out after 2-4 visits
                let visits = if rng.random_bool(0.3) {
                    rng.random_range(2..params.group_size.max(3))
                } else {
                    params.group_size
                };
                let b = draw_effects(&factor, params.re_df, &mut rng)?;
                let sd = noise_sd(&mut rng);
                for t in 0..visits {
                    let tt = t as f64;
                    let shift = if arm == "B" { beta[2] } else { 0.0 };
                    let e: f64 = rng.sample(StandardNormal);
                    y.push(beta[0] + beta[1] * tt + shift + b[0] + b[1] * tt + sd * e);
                    time.push(tt);
                    trt.push(arm.to_string());
                    group_col.push(label("s", i));
                }
            }
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("time".into(), Column::Numeric(time)),
                ("treatment".into(), Column::categorical(&trt)),
                ("subject".into(), Column::categorical(&group_col)),
            ]
        }
        SynthKind::DialyzerLike => {
            let levels: Vec<f64> = (0..params.group_size)
                .map(|k| 0.25 + 2.75 * k as f64 / (params.group_size.max(2) - 1) as f64)
                .collect();
            let mean_p = levels.iter().sum::<f64>() / levels.len() as f64;
            let mut pressure = Vec::new();
            let mut qb = Vec::new();
            for i in 0..params.groups {
                let high = i >= params.groups / 2;
                let b = draw_effects(&factor, params.re_df, &mut rng)?;
                let sd = noise_sd(&mut rng);
                for &pr in &levels {
                    let c = pr - mean_p;
                    let mean = beta[0]
                        + beta[1] * c
                        + beta[2] * c.powi(2)
                        + beta[3] * c.powi(3)
                        + beta[4] * c.powi(4)
                        + if high { beta[5] } else { 0.0 };
                    let e: f64 = rng.sample(StandardNormal);
                    y.push(mean + b[0] + b[1] * pr + sd * e);
                    pressure.push(pr);
                    qb.push(if high { "300" } else { "200" }.to_string());
                    group_col.push(label("d", i));
                }
            }
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("pressure".into(), Column::Numeric(pressure)),
                ("qb".into(), Column::categorical(&qb)),
                ("subject".into(), Column::categorical(&group_col)),
            ]
        }
        SynthKind::ExamLike => {
            let mut lrt = Vec::new();
            for i in 0..params.groups {
                let spread = params.group_size / 2;
                let n = params.group_size - spread / 2 + rng.random_range(0..=spread);
                let b = draw_effects(&factor, params.re_df, &mut rng)?;
                let sd = noise_sd(&mut rng);
                for _ in 0..n.max(2) {
                    let x: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    y.push(beta[0] + beta[1] * x + b[0] + b[1] * x + sd * e);
                    lrt.push(x);
                    group_col.push(label("school", i));
                }
            }
            vec![
                ("y".to_string(), Column::Numeric(y)),
                ("lrt".into(), Column::Numeric(lrt)),
                ("school".into(), Column::categorical(&group_col)),
            ]
        }
    };
    Dataset::new(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_design;

    #[test]
    fn balanced_oneway_shape_and_determinism() {
        let kind = SynthKind::BalancedOneway;
        let mut params = kind.default_params();
        params.groups = 6;
        params.group_size = 4;
        let a = synth_dataset(kind, &params, 7).unwrap();
        assert_eq!(a.n_rows(), 24);
        assert_eq!(a, synth_dataset(kind, &params, 7).unwrap());
        assert_ne!(a, synth_dataset(kind, &params, 8).unwrap());
    }

    #[test]
    fn radon_like_group_sizes() {
        let kind = SynthKind::RadonLike;
        let ds = synth_dataset(kind, &kind.default_params(), 11).unwrap();
        let design = build_design(&kind.true_spec(), &ds).unwrap();
        assert_eq!(design.g(), 85);
        let mut sizes: Vec<usize> = design.groups.iter().map(|g| g.n()).collect();
        sizes.sort();
        let median = sizes[sizes.len() / 2];
        assert!((3..=10).contains(&median), "median {median}");
    }

    #[test]
    fn every_kind_builds_its_true_design() {
        for kind in [
            SynthKind::BalancedOneway,
            SynthKind::RadonLike,
            SynthKind::LongitudinalLike,
            SynthKind::DialyzerLike,
            SynthKind::ExamLike,
        ] {
            let ds = synth_dataset(kind, &kind.default_params(), 3).unwrap();
            let d = build_design(&kind.true_spec(), &ds).unwrap();
            assert_eq!((d.p(), d.q()), kind.dims(), "{kind:?}");
            assert!(d.warnings.is_empty(), "{kind:?}: {:?}", d.warnings);
        }
    }

    #[test]
    fn invalid_params() {
        let kind = SynthKind::RadonLike;
        let mut p = kind.default_params();
        p.re_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(synth_dataset(kind, &p, 1).is_err());
        let mut p = kind.default_params();
        p.beta.pop();
        assert!(synth_dataset(kind, &p, 1).is_err());
        let mut p = kind.default_params();
        p.re_df = Some(2.0);
        assert!(synth_dataset(kind, &p, 1).is_err());
    }
}
