mod support;

use std::sync::OnceLock;

use proptest::prelude::*;
use tscore::profile::expected_poi_time;
use tscore::router::UNREACHABLE;
use tscore::{ModeMask, Snapshot};
use tsim::dataset::Dataset;

use support::{close, scaled};

fn world() -> &'static (Dataset, Snapshot) {
    static W: OnceLock<(Dataset, Snapshot)> = OnceLock::new();
    W.get_or_init(|| support::minicity_snapshot(None))
}

#[test]
fn scores_match_brute_force_within_rounding() {
    let (ds, snap) = world();
    let mx = support::oracle::MatrixOracle::build(snap, ModeMask::ALL);
    for sc in &ds.scenarios {
        let got = snap.score(sc).unwrap();
        let want = support::oracle::brute_profile(snap, &mx, sc);
        let mut served = 0;
        for (g, res) in &want.groups {
            let gs = &got.groups[g];
            for (rid, (weekly, entries)) in res {
                let ev = &gs.evals[rid];
                assert!(close(ev.weekly, *weekly, 1.0), "{}/{g}/{rid}: {:?} vs {weekly:?}", sc.scenario_id, ev.weekly);
                assert_eq!(gs.surface.values[rid], ev.weekly);
                for (i, (e, w)) in ev.entries.iter().zip(entries).enumerate() {
                    assert!(close(e.time, *w, 1.0), "{}/{g}/{rid} entry {i}: {:?} vs {w:?}", sc.scenario_id, e.time);
                }
                served += weekly.is_some() as usize;
            }
        }
        assert!(served > 0);
        for (rid, v) in &want.aggregate {
            assert!(close(got.aggregate.values[rid], *v, 1.0), "{}/aggregate/{rid}", sc.scenario_id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn expected_time_is_scale_invariant(
        weights in prop::array::uniform24(prop_oneof![Just(0.0), 0.01f64..10.0]),
        hours in prop::array::uniform24(prop_oneof![Just(UNREACHABLE), 0u32..20_000]),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let hours: Vec<u32> = hours.to_vec();
        let a = expected_poi_time(&weights, &hours).unwrap();
        let b = expected_poi_time(&weights.map(|w| w * scale), &hours).unwrap();
        match (a, b) {
            (None, None) => {}
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
            _ => prop_assert!(false, "reachability changed under scaling"),
        }
    }

    #[test]
    fn surfaces_are_scale_invariant(which in 0usize..2, factors in prop::collection::vec(1e-3f64..1e3, 1..9)) {
        let (ds, snap) = world();
        let sc = &ds.scenarios[which % ds.scenarios.len()];
        let a = snap.score(sc).unwrap();
        let b = snap.score(&scaled(sc, &factors)).unwrap();
        for (g, ga) in &a.groups {
            for (rid, v) in &ga.surface.values {
                let w = b.groups[g].surface.values[rid];
                prop_assert!(close(*v, w, 1e-9 * v.unwrap_or(1.0)), "{g}/{rid}: {v:?} vs {w:?}");
            }
        }
    }
}
