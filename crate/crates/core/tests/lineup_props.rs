use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StudentT;

use lineup_core::data::{build_design, FixedTerm, ModelSpec, RandomTerm};
use lineup_core::lineup::*;
use lineup_core::lme::{self, FitOptions, Method};
use lineup_core::pboot::NullModelKind;
use lineup_core::rng;
use lineup_core::synth::{synth_dataset, SynthKind};

/// Weighted least squares at x0 solved directly from the normal equations.
fn wls_oracle(x: &[f64], y: &[f64], x0: f64) -> f64 {
    let n = x.len();
    let k = (SMOOTH_SPAN * n as f64).floor() as usize;
    let mut d: Vec<f64> = x.iter().map(|v| (v - x0).abs()).collect();
    d.sort_by(f64::total_cmp);
    let h = d[k - 1] * (1.0 + 1e-10);
    let w = DVector::from_iterator(
        n,
        x.iter().map(|v| {
            let u = (v - x0).abs() / h;
            if u < 1.0 { (1.0 - u.powi(3)).powi(3) } else { 0.0 }
        }),
    );
    let a = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { x[r] - x0 });
    let wa = DMatrix::from_fn(n, 2, |r, c| a[(r, c)] * w[r]);
    let lhs = a.transpose() * &wa;
    let rhs = wa.transpose() * DVector::from_column_slice(y);
    lhs.lu().solve(&rhs).unwrap()[0]
}

#[test]
fn smoother_matches_weighted_least_squares() {
    let mut r = rng::stream(2, 0);
    let x: Vec<f64> = (0..60).map(|_| r.random_range(0.0..10.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| (v * 0.8).sin() + r.random_range(-0.3..0.3)).collect();
    let p = panel_scatter_smooth(&x, &y).unwrap();
    let Primitive::Path { xy } = &p.primitives[1] else { panic!() };
    for q in &xy[1..xy.len() - 1] {
        assert!((q[1] - wls_oracle(&x, &y, q[0])).abs() < 1e-8, "at {}", q[0]);
    }
}

#[test]
fn underfitted_quartic_shows_curvature_changes() {
    let kind = SynthKind::DialyzerLike;
    let ds = synth_dataset(kind, &kind.default_params(), 6).unwrap();
    let spec = ModelSpec::new(
        "y",
        vec![FixedTerm::Intercept, FixedTerm::Numeric("pressure".into()), FixedTerm::Factor("qb".into())],
        vec![RandomTerm::Intercept, RandomTerm::Slope("pressure".into())],
        "subject",
    )
    .unwrap();
    let design = build_design(&spec, &ds).unwrap();
    let f = lme::fit(&design, Method::Reml, &FitOptions::default()).unwrap();
    let res = lme::residuals(&design, &f).unwrap();
    let pressure: Vec<f64> = design.groups.iter().flat_map(|g| g.x.column(1).iter().copied().collect::<Vec<_>>()).collect();
    let p = panel_scatter_smooth(&pressure, &res.level1_flat()).unwrap();
    let Primitive::Path { xy } = &p.primitives[1] else { panic!() };
    let second: Vec<f64> = xy.windows(3).map(|w| w[0][1] - 2.0 * w[1][1] + w[2][1]).collect();
    let changes = second.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    assert!(changes >= 1, "smoother curvature never changes sign");
}

fn band_width_at_median(n: usize) -> f64 {
    let mut r = rng::stream(n as u64, 0);
    let s: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let g = qq_geometry(&s, 0.95).unwrap();
    g.half_width[n / 2]
}

#[test]
fn band_narrows_with_sample_size() {
    let w: Vec<f64> = [20, 200, 2000, 20000].iter().map(|&n| band_width_at_median(n)).collect();
    assert!(w.windows(2).all(|p| p[1] < p[0]));
    assert!(w[3] < 0.05 * w[0]);
}

#[test]
fn t3_tails_escape_the_bands() {
    let t3 = StudentT::new(3.0).unwrap();
    let outside = (0..200)
        .filter(|&k| {
            let mut r = rng::stream(300, k);
            let s: Vec<f64> = (0..85).map(|_| r.sample(t3)).collect();
            let g = qq_geometry(&s, 0.95).unwrap();
            [0, 84].iter().any(|&i| {
                let line = g.intercept + g.slope * g.theoretical[i];
                (g.sample[i] - line).abs() > g.half_width[i]
            })
        })
        .count();
    assert!(outside > 100, "{outside}/200");
}

#[test]
fn fanned_lines_one_segment_per_school() {
    let kind = SynthKind::ExamLike;
    let ds = synth_dataset(kind, &kind.default_params(), 1).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let xs: Vec<Vec<f64>> = d.groups.iter().map(|g| g.x.column(1).iter().copied().collect()).collect();
    let ys: Vec<Vec<f64>> = d.groups.iter().map(|g| g.y.iter().copied().collect()).collect();
    let (p, skipped) = panel_fanned_lines(&xs, &ys).unwrap();
    let Primitive::Segments { lines } = &p.primitives[0] else { panic!() };
    assert_eq!((lines.len(), skipped), (65, 0));
    let (again, _) = panel_fanned_lines(&xs, &ys).unwrap();
    assert_eq!(p, again);
}

fn longitudinal() -> (lineup_core::data::GroupedDesign, lme::FittedLME) {
    let kind = SynthKind::LongitudinalLike;
    let ds = synth_dataset(kind, &kind.default_params(), 4).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let f = lme::fit(&d, Method::Reml, &FitOptions::default()).unwrap();
    (d, f)
}

#[test]
fn cyclone_has_one_box_per_full_subject() {
    let (d, f) = longitudinal();
    assert_eq!(d.g(), 66);
    let req = LineupRequest::new("cy", PlotSpec::Cyclone, NullModelKind::SameModel, 8);
    let l = make_lineup(&d, &f, &req).unwrap();
    let full = d.groups.iter().filter(|g| g.n() >= MIN_BOX_SIZE).count();
    let data = &l.panels[l.answer_key().answer_index - 1];
    assert_eq!(data.primitives.len(), full);
    let iqr: Vec<f64> = data
        .primitives
        .iter()
        .map(|p| match p {
            Primitive::Box(b) => b.q3 - b.q1,
            _ => panic!("cyclone panels only hold boxes"),
        })
        .collect();
    assert!(iqr.windows(2).all(|w| w[0] <= w[1]));
}

/// Per panel container: the set of (element, attribute, value) with every
/// geometric attribute's value blanked.
fn panel_signatures(svg: &str) -> Vec<BTreeSet<(String, String, String)>> {
    const GEOMETRY: [&str; 12] = ["x", "y", "cx", "cy", "x1", "y1", "x2", "y2", "width", "height", "points", "transform"];
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.attribute("class") == Some("panel"))
        .map(|panel| {
            panel
                .descendants()
                .filter(|n| n.is_element())
                .flat_map(|n| {
                    let tag = n.tag_name().name().to_string();
                    n.attributes()
                        .map(|a| {
                            let v = if GEOMETRY.contains(&a.name()) { String::new() } else { a.value().to_string() };
                            (tag.clone(), a.name().to_string(), v)
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect()
}

#[test]
fn rendered_panels_are_indistinguishable_apart_from_geometry() {
    let kind = SynthKind::RadonLike;
    let ds = synth_dataset(kind, &kind.default_params(), 13).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let f = lme::fit(&d, Method::Reml, &FitOptions::default()).unwrap();
    let plot = PlotSpec::QqLevel2 {
        component: 1,
        band_level: 0.95,
    };
    let l = make_lineup(&d, &f, &LineupRequest::new("qq", plot, NullModelKind::SameModel, 1)).unwrap();
    let svg = render_svg(&l, &RenderOptions::default()).unwrap();
    let sigs = panel_signatures(&svg);
    assert_eq!(sigs.len(), 20);
    // Label text differs by design; everything else must match.
    assert!(sigs.windows(2).all(|w| w[0] == w[1]));
    assert!(svg.matches("<text").count() == 20);
    assert_eq!(l.meta().m, 20);
    let sidecar = serde_json::to_string(&l.meta()).unwrap();
    assert!(!sidecar.contains("answer"));
    assert!(svg.starts_with("<svg") && svg.contains(r#"width="786""#));
}

#[test]
fn axes_contain_every_panel() {
    let (d, f) = longitudinal();
    let req = LineupRequest::new("sm", PlotSpec::ResidualSmooth { covariate: 1 }, NullModelKind::SameModel, 3);
    let l = make_lineup(&d, &f, &req).unwrap();
    for p in &l.panels {
        let b = p.bounds().unwrap();
        assert!(l.axes.contains(b.x[0], b.y[0]) && l.axes.contains(b.x[1], b.y[1]));
    }
}

#[test]
fn random_effect_scatter_under_uncorrelated_null() {
    let kind = SynthKind::ExamLike;
    let ds = synth_dataset(kind, &kind.default_params(), 2).unwrap();
    let d = build_design(&kind.true_spec(), &ds).unwrap();
    let f = lme::fit(&d, Method::Reml, &FitOptions::default()).unwrap();
    let req = LineupRequest::new("re", PlotSpec::ReScatter, NullModelKind::UncorrelatedRe, 6);
    let l = make_lineup(&d, &f, &req).unwrap();
    assert!(l.panels.iter().all(|p| p.kind == DesignKind::ReScatter));
    assert!(render_svg(&l, &RenderOptions { rows: 2, cols: 5, ..Default::default() }).is_err());
}

#[test]
fn answer_positions_cover_the_grid() {
    let seen: BTreeSet<usize> = (0..400u64)
        .map(|s| {
            let p = || PanelData {
                kind: DesignKind::DotPlot,
                primitives: vec![Primitive::Points { xy: vec![[0.0, 0.0]] }],
            };
            build_lineup("x", p(), (0..19).map(|_| p()).collect(), 20, s).unwrap().answer_key().answer_index
        })
        .collect();
    assert_eq!(seen, (1..=20).collect());
}

proptest! {
    #[test]
    fn iqr_order_is_a_sorted_permutation(
        values in prop::collection::vec(-50.0f64..50.0, 10..120),
        groups in 1usize..8,
    ) {
        let labels: Vec<String> = (0..values.len()).map(|i| format!("l{}", i % groups)).collect();
        if let Ok(p) = panel_boxplots(&values, &labels, BoxOrder::ByIqr, false) {
            let iqr: Vec<f64> = p.primitives.iter().map(|b| match b {
                Primitive::Box(b) => b.q3 - b.q1,
                _ => unreachable!(),
            }).collect();
            prop_assert!(iqr.windows(2).all(|w| w[0] <= w[1]));
            let pos: Vec<f64> = p.primitives.iter().map(|b| match b {
                Primitive::Box(b) => b.position,
                _ => unreachable!(),
            }).collect();
            prop_assert_eq!(pos, (1..=iqr.len()).map(|i| i as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn box_summaries_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 5..60)) {
        let labels = vec!["g".to_string(); values.len()];
        let p = panel_boxplots(&values, &labels, BoxOrder::AsIs, false).unwrap();
        let Primitive::Box(b) = &p.primitives[0] else { unreachable!() };
        prop_assert!(b.lower_whisker <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.upper_whisker);
        let n_out = b.outliers.len();
        prop_assert!(n_out < values.len());
    }
}
