use lineup_core::vpvalue::*;
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn binomial_tail_matches_statrs() {
    for (x, k, m) in [(11, 73, 20), (1, 1, 20), (3, 10, 4), (30, 60, 20), (60, 60, 20)] {
        let got = binomial_pvalue(x, k, m).unwrap().p;
        let want = Binomial::new(1.0 / m as f64, k as u64).unwrap().sf(x as u64 - 1);
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15, "{x}/{k}: {got} vs {want}");
    }
}

#[test]
fn example_lineup_is_above_binomial() {
    let b = binomial_pvalue(11, 73, 20).unwrap().p;
    let v = visual_pvalue_mc(11, 73, 20, DEFAULT_REPS, 1).unwrap();
    assert!(v.p > b, "{} vs {b}", v.p);
}

#[test]
fn tail_is_monotone_and_se_bounded() {
    for k in [20, 45, 73] {
        let tail = visual_tail(k, 20, MIN_REPS, k as u64).unwrap();
        let ps: Vec<f64> = (0..=k).map(|x| tail.p_at_least(x)).collect();
        assert_eq!(ps[0], 1.0);
        assert!(ps.windows(2).all(|w| w[1] <= w[0]));
        for x in 0..=k {
            let p = tail.p_at_least(x);
            assert!(p > 0.0 && p <= 1.0);
            assert!(tail.mc_se(x) <= (p * (1.0 - p) / MIN_REPS as f64).sqrt() * 1.01 + 1e-12);
        }
    }
}

// Shared signals make the count overdispersed relative to Binomial(K, 1/m):
// more mass at zero *and* in the upper tail. The ordering therefore holds
// from just above the null expectation K/m onwards, not for every x ≥ 2.
#[test]
fn visual_upper_tail_dominates_binomial() {
    for k in [20, 30, 40, 60, 73, 100] {
        let tail = visual_tail(k, 20, 400_000, 100 + k as u64).unwrap();
        let start = 2.max(k.div_ceil(20) + 1);
        for x in start..=k {
            let b = binomial_pvalue(x, k, 20).unwrap().p;
            let v = tail.p_at_least(x);
            assert!(v + 3.0 * tail.mc_se(x) >= b, "K={k} x={x}: visual {v} < binomial {b}");
        }
    }
}

#[test]
fn same_seed_same_answer() {
    let a = combined_pvalue(10, &[30, 40], 20, MIN_REPS, 5).unwrap();
    let b = combined_pvalue(10, &[30, 40], 20, MIN_REPS, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.k, 70);
}

#[test]
fn json_shape() {
    let v = binomial_pvalue(2, 10, 20).unwrap();
    let j: serde_json::Value = serde_json::to_value(&v).unwrap();
    assert_eq!(j["K"], 10);
    assert_eq!(j["method"]["kind"], "binomial");
    assert!(j["mc_se"].is_null());
}

fn tag(i: u8) -> Reason {
    match i % 5 {
        0 => Reason::Outlier,
        1 => Reason::Spread,
        2 => Reason::Trend,
        3 => Reason::Asymmetry,
        _ => Reason::Other("free text".into()),
    }
}

proptest! {
    #[test]
    fn breakdown_matches_direct_count(
        picks in prop::collection::vec((1usize..=20, prop::collection::btree_set(0u8..5, 0..4)), 0..60),
        answer in 1usize..=20,
    ) {
        let mut e = EvaluationSet::new("l", 20);
        for (i, (panel, tags)) in picks.iter().enumerate() {
            e.push(Pick {
                observer_id: format!("o{i}"),
                panel_index: *panel,
                reasons: tags.iter().map(|&t| tag(t)).collect(),
                confidence: 3,
                duration_seconds: 1.0,
            }).unwrap();
        }
        let table = reason_breakdown(&e, answer);
        for t in 0u8..5 {
            let name = tag(t).tag();
            let citing: Vec<_> = picks.iter().filter(|(_, s)| s.contains(&t)).collect();
            let row = table.iter().find(|r| r.reason == name);
            if citing.is_empty() {
                prop_assert!(row.is_none());
            } else {
                let hits = citing.iter().filter(|(p, _)| *p == answer).count();
                let row = row.unwrap();
                prop_assert_eq!(row.picks, citing.len());
                prop_assert_eq!(row.data_picks, hits);
                prop_assert!((row.percent - 100.0 * hits as f64 / citing.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binomial_p_is_monotone(k in 1usize..80, m in 2usize..30) {
        let ps: Vec<f64> = (0..=k).map(|x| binomial_pvalue(x, k, m).unwrap().p).collect();
        prop_assert!(ps.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }
}
