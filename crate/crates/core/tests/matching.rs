mod common;

use common::*;
use ivmm::stmatch::{observation_probability, temporal_weight, transition_probability, StParams};
use ivmm::trellis::{best_sequence, constrained_best_sequence, fscore_forward, EdgeMatrix, TrellisGraph};
use ivmm::voting::{distance_weight, run_voting, select_final, MaxDist, VotingParams};
use proptest::prelude::*;
use rand::Rng;

fn unit(_: f64) -> f64 {
    1.0
}

#[test]
fn forced_maximum_equals_unconstrained_on_full_breaks() {
    let mut rng = seeded(7);
    let mut seen = 0;
    while seen < 150 {
        let tr = random_trellis(&mut rng, 7, 3, 0.0, 0.3);
        if tr.edge_matrices().iter().any(|m| !m.is_break()) {
            continue;
        }
        seen += 1;
        for r in 0..tr.len() {
            let free = best_sequence(&tr, r, unit);
            let forced = (0..tr.slice(r).candidates.len())
                .map(|j| constrained_best_sequence(&tr, r, j, unit).fscore)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(rel_close(free.fscore, forced, 1e-12), "{} vs {forced}", free.fscore);
        }
    }
}

#[test]
fn forced_candidate_appears_in_sequence() {
    let mut rng = seeded(8);
    for _ in 0..200 {
        let tr = random_trellis(&mut rng, 7, 4, 0.3, 0.1);
        for r in 0..tr.len() {
            for j in 0..tr.slice(r).candidates.len() {
                let s = constrained_best_sequence(&tr, r, j, unit);
                assert_eq!(s.sequence.len(), tr.len());
                assert_eq!(s.sequence[r], j);
                assert!(s.fscore.is_finite());
            }
        }
    }
}

#[test]
fn votes_sum_to_window_times_width() {
    let mut rng = seeded(9);
    for case in 0..100 {
        let tr = random_trellis(&mut rng, 8, 3, 0.2, 0.1);
        let params = VotingParams {
            beta: 2000.0,
            maxdist: if case % 2 == 0 {
                MaxDist::Unbounded
            } else {
                MaxDist::Bounded(rng.gen_range(400.0..3000.0))
            },
        };
        let out = run_voting(&tr, &params);
        let expected: u64 = (0..tr.len())
            .map(|r| oracle_window(&tr, r, &params).0.len() as u64 * tr.slice(r).candidates.len() as u64)
            .sum();
        let total: u64 = out.tally.votes.iter().flatten().map(|&v| v as u64).sum();
        assert_eq!(total, expected);
        assert_eq!(out.counters.rounds, tr.len() as u64);
        let sel = select_final(&tr, &out.tally);
        assert!(sel.iter().enumerate().all(|(i, &c)| c < tr.slice(i).candidates.len()));
    }
}

#[test]
fn voting_is_deterministic() {
    let mut rng = seeded(10);
    for _ in 0..20 {
        let tr = random_trellis(&mut rng, 8, 4, 0.2, 0.1);
        let a = run_voting(&tr, &VotingParams::default());
        let b = run_voting(&tr, &VotingParams::default());
        assert_eq!(a.tally, b.tally);
        assert_eq!(a.counters, b.counters);
    }
}

#[test]
fn segment_ids_follow_breaks() {
    let mut rng = seeded(11);
    for _ in 0..100 {
        let tr = random_trellis(&mut rng, 8, 3, 0.0, 0.3);
        let table = fscore_forward(&tr, 0, unit);
        let mut id = 0;
        for i in 0..tr.len() {
            if i > 0 && tr.edges(i - 1).is_break() {
                id += 1;
            }
            assert!(table.segment_id[i].iter().all(|&s| s == id), "slice {i}: {:?}", table.segment_id[i]);
        }
    }
}

/// Scaling every observation and edge weight by one positive factor leaves
/// the best sequence unchanged.
#[test]
fn argmax_invariant_under_uniform_scaling() {
    let mut rng = seeded(12);
    for _ in 0..100 {
        let tr = random_trellis(&mut rng, 7, 3, 0.2, 0.1);
        let s = 2.0f64.powi(rng.gen_range(-6..6));
        let slices = tr
            .slices()
            .iter()
            .cloned()
            .map(|mut sl| {
                sl.observation.iter_mut().for_each(|o| *o *= s);
                sl
            })
            .collect();
        let edges = tr
            .edge_matrices()
            .iter()
            .map(|m| {
                let w = (0..m.rows())
                    .flat_map(|t| (0..m.cols()).map(move |c| (t, c)))
                    .map(|(t, c)| m.weight(t, c) * s)
                    .collect();
                EdgeMatrix::from_weights(m.rows(), m.cols(), w)
            })
            .collect();
        let scaled = TrellisGraph::from_parts(slices, edges).unwrap();
        for r in 0..tr.len() {
            let g = |d: f64| distance_weight(d, &VotingParams::default());
            let (a, b) = (best_sequence(&tr, r, g), best_sequence(&scaled, r, g));
            assert_eq!(a.sequence, b.sequence);
            assert!(rel_close(a.fscore * s, b.fscore, 1e-12));
        }
    }
}

proptest! {
    #[test]
    fn transition_is_symmetric(d in 0.0f64..5000.0, w in 0.0f64..5000.0) {
        let v = transition_probability(d, Some(w));
        prop_assert_eq!(v, transition_probability(w, Some(d)));
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn observation_decreases_with_distance(a in 0.0f64..500.0, b in 0.0f64..500.0) {
        let p = StParams::default();
        prop_assume!(a < b);
        prop_assert!(observation_probability(a, &p) >= observation_probability(b, &p));
    }

    #[test]
    fn temporal_is_scale_homogeneous(
        speeds in prop::collection::vec(5.0f64..130.0, 1..6),
        v in 2.0f64..120.0,
        s in 0.5f64..4.0,
    ) {
        let p = StParams::default();
        let scaled: Vec<f64> = speeds.iter().map(|x| x * s).collect();
        let a = temporal_weight(&speeds, v, &p).unwrap();
        let b = temporal_weight(&scaled, v * s, &p).unwrap();
        prop_assert!(rel_close(a, b, 1e-9));
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
    }

    #[test]
    fn distance_weight_in_unit_range(d in 0.0f64..20000.0, beta in 1.0f64..10000.0) {
        let g = distance_weight(d, &VotingParams { beta, maxdist: MaxDist::Unbounded });
        prop_assert!((0.0..=1.0).contains(&g));
        let bounded = distance_weight(d, &VotingParams { beta, maxdist: MaxDist::Bounded(1000.0) });
        prop_assert_eq!(bounded, if d < 1000.0 { g } else { 0.0 });
    }
}
