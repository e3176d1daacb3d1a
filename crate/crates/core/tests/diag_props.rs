use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use lineup_core::data::{build_design, Group, GroupedDesign};
use lineup_core::diag::*;
use lineup_core::lme::{self, FitOptions, Method, ResidualSet};
use lineup_core::pboot::BootstrapConfig;
use lineup_core::rng;
use lineup_core::special::normal_cdf;
use lineup_core::synth::{synth_dataset, SynthKind, SynthParams};

#[test]
fn chisq_matches_statrs() {
    for df in [1.0, 2.0, 7.0, 21.0, 73.0, 150.0] {
        let reference = ChiSquared::new(df).unwrap();
        for x in [0.01, 0.5, 1.0, 5.1, 27.7, 116.6, 300.0] {
            let want = reference.sf(x);
            let got = chisq_sf(x, df).unwrap();
            if want > 1e-280 {
                assert!((got - want).abs() <= 1e-10 * want, "df={df} x={x}: {got} vs {want}");
            }
            assert!((got + chisq_cdf(x, df).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn chisq_strictly_decreasing() {
    for df in [1.0, 5.0, 40.0] {
        let v: Vec<f64> = (0..200).map(|i| chisq_sf(i as f64 * 0.3, df).unwrap()).collect();
        // Near zero the tail rounds to exactly 1 for large df.
        assert!(v.windows(2).all(|w| w[1] < w[0] || w[0] == 1.0), "df={df}");
    }
}

fn design_from(groups: Vec<(Vec<[f64; 2]>, Vec<f64>)>) -> GroupedDesign {
    let gs = groups
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let n = y.len();
            let xm = DMatrix::from_fn(n, 2, |r, c| x[r][c]);
            Group {
                label: format!("g{i:02}"),
                rows: (0..n).collect(),
                y: DVector::from_vec(y),
                z: xm.columns(0, 1).into_owned(),
                x: xm,
                x_rank: 2,
            }
        })
        .collect();
    GroupedDesign::from_groups(gs, vec!["1".into(), "x".into()], vec!["1".into()]).unwrap()
}

fn group_strategy() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<f64>)> {
    (4usize..15).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n).prop_map(|v| v.into_iter().map(|x| [1.0, x]).collect()),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn weighted_centering_identity(groups in prop::collection::vec(group_strategy(), 2..10)) {
        let d = design_from(groups);
        if let Ok(disp) = group_dispersion(&d, 2) {
            let s: f64 = disp.groups.iter().map(|g| g.d * ((g.n - g.rank) as f64).sqrt()).sum();
            prop_assert!(s.abs() < 1e-10, "{s}");
        }
    }

    #[test]
    fn h_is_scale_invariant(groups in prop::collection::vec(group_strategy(), 2..10), k in 0.01f64..100.0) {
        let d = design_from(groups);
        if let Ok(h) = h_statistic(&d, 2) {
            let hk = h_statistic(&d.scaled_response(k), 2).unwrap();
            prop_assert!((h - hk).abs() <= 1e-9 * h.max(1.0));
        }
    }
}

#[test]
fn group_with_constant_covariate_loses_rank() {
    let mk = |xs: [f64; 6]| -> (Vec<[f64; 2]>, Vec<f64>) {
        (xs.iter().map(|&x| [1.0, x]).collect(), vec![1.0, 3.0, 2.0, 5.0, 4.0, 7.0])
    };
    let d = design_from(vec![mk([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), mk([2.0; 6])]);
    let disp = group_dispersion(&d, 6).unwrap();
    assert_eq!(disp.groups[0].rank, 2);
    assert_eq!(disp.groups[1].rank, 1);
}

#[test]
fn sweep_group_count_is_nonincreasing() {
    let kind = SynthKind::RadonLike;
    let params = SynthParams {
        hetero: 0.5,
        ..kind.default_params()
    };
    let ds = synth_dataset(kind, &params, 8).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let rows = h_sweep(&d, 3..=15, None).unwrap();
    assert!(rows.len() >= 5);
    assert!(rows.windows(2).all(|w| w[1].g_star <= w[0].g_star));
    assert!(rows.iter().all(|r| r.df + 1 == r.g_star));
}

#[test]
fn bootstrap_h_detects_planted_heteroscedasticity() {
    let kind = SynthKind::RadonLike;
    let params = SynthParams {
        hetero: 0.8,
        group_size: 12,
        ..kind.default_params()
    };
    let ds = synth_dataset(kind, &params, 21).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let f = lme::fit(&d, Method::Reml, &FitOptions::default()).unwrap();
    let r = h_test(
        &d,
        5,
        HTestMode::Bootstrap {
            fitted: &f,
            config: BootstrapConfig::new(500, 3),
        },
    )
    .unwrap();
    assert!(r.p_bootstrap.unwrap() < 0.01, "{r:?}");
    assert_eq!(r.bootstrap_replicates, Some(500));
}

/// A² by the textbook summation, with Φ from the library.
fn a2_direct(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let f: Vec<f64> = s.iter().map(|v| normal_cdf((v - m) / sd)).collect();
    let k = f.len();
    -n - (0..k)
        .map(|i| (2 * i + 1) as f64 * (f[i].ln() + (1.0 - f[k - 1 - i]).ln()))
        .sum::<f64>()
        / n
}

#[test]
fn anderson_darling_matches_direct_sum() {
    let mut r = rng::stream(4, 0);
    for n in [8, 20, 85, 200] {
        let x: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let got = anderson_darling(&x).unwrap();
        assert!((got.a2 - a2_direct(&x)).abs() < 1e-9, "n={n}");
        assert!(got.a2 >= 0.0 && got.p > 0.0 && got.p < 1.0);
    }
}

#[test]
fn anderson_darling_rejects_exponential() {
    let mut r = rng::stream(10, 0);
    let e = Exp::new(1.0).unwrap();
    let x: Vec<f64> = (0..100).map(|_| r.sample(e)).collect();
    assert!(anderson_darling(&x).unwrap().p < 0.01);
}

#[test]
fn anderson_darling_is_calibrated_under_normality() {
    let mut p: Vec<f64> = (0..2000)
        .map(|k| {
            let mut r = rng::stream(77, k);
            let x: Vec<f64> = (0..100).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            anderson_darling(&x).unwrap().p
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS distance {ks}");
}

#[test]
fn re_correlation_matches_pearson() {
    let pairs = [(0.3, -1.0), (1.2, 0.4), (-0.7, -0.2), (2.0, 1.9), (0.1, 0.0)];
    let rs = ResidualSet {
        level1: vec![],
        level2: pairs.iter().map(|&(a, b)| DVector::from_vec(vec![a, b])).collect(),
        marginal: vec![],
    };
    let c = re_correlation(&rs).unwrap();
    let n = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    assert!((c.correlation[(0, 1)] - sxy / (sxx * syy).sqrt()).abs() < 1e-14);
    assert!((c.slope - sxy / sxx).abs() < 1e-14);
    assert_eq!(c.correlation[(0, 1)], c.correlation[(1, 0)]);
}

#[test]
fn re_correlation_needs_two_effects_and_three_groups() {
    let one = ResidualSet {
        level1: vec![],
        level2: vec![DVector::from_vec(vec![1.0]); 5],
        marginal: vec![],
    };
    assert!(re_correlation(&one).is_err());
    let two = ResidualSet {
        level1: vec![],
        level2: vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![0.0, 1.0])],
        marginal: vec![],
    };
    assert!(re_correlation(&two).is_err());
}
