use dcvs::model::{BoxBounds, ConstraintSpec, Structure};
use dcvs::projections::{
    alternating_projection, infeasibility, pava_weighted, project_box, project_group_mean, project_overlap_isotonic,
    project_score_monotone, project_structure, structure_infeasibility, Direction,
};
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn bounds() -> BoxBounds {
    BoxBounds::new(0.25, 4.0).unwrap()
}

/// Paired vectors of one length.
fn pair(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|p| (prop::collection::vec(-5.0..5.0f64, p), prop::collection::vec(-5.0..5.0f64, p)))
}

/// Up to three groups over `0..p`, each nonempty.
fn groups(p: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), p), 1..=3).prop_map(move |masks| {
        masks
            .into_iter()
            .enumerate()
            .map(|(g, m)| {
                let mut idx: Vec<usize> = (0..p).filter(|&j| m[j]).collect();
                if idx.is_empty() {
                    idx.push(g % p);
                }
                idx
            })
            .collect()
    })
}

fn overlap_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<Vec<usize>>)> {
    (2usize..=10).prop_flat_map(|p| {
        (
            prop::collection::vec(-5.0..5.0f64, p),
            prop::collection::vec(-5.0..5.0f64, p),
            groups(p),
        )
    })
}

fn score_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=12).prop_flat_map(|p| {
        (
            prop::collection::vec(-5.0..5.0f64, p),
            prop::collection::vec(-5.0..5.0f64, p),
            prop::collection::vec((0u8..5).prop_map(f64::from), p),
        )
    })
}

/// Exact projection onto the intersection of the structure set and the box.
fn dykstra(v: &[f64], structure: &Structure, b: &BoxBounds) -> Vec<f64> {
    let p = v.len();
    let (mut x, mut pa, mut pb) = (v.to_vec(), vec![0.0; p], vec![0.0; p]);
    for _ in 0..20_000 {
        let shifted: Vec<f64> = (0..p).map(|j| x[j] + pa[j]).collect();
        let y = project_structure(&shifted, structure).unwrap();
        pa = (0..p).map(|j| shifted[j] - y[j]).collect();
        let shifted: Vec<f64> = (0..p).map(|j| y[j] + pb[j]).collect();
        let next = project_box(&shifted, b);
        pb = (0..p).map(|j| shifted[j] - next[j]).collect();
        let moved = dist(&next, &x);
        x = next;
        if moved < 1e-14 {
            break;
        }
    }
    x
}

proptest! {
    #[test]
    fn box_is_idempotent_and_nonexpansive((u, v) in pair(1..=12)) {
        let b = bounds();
        let (pu, pv) = (project_box(&u, &b), project_box(&v, &b));
        prop_assert!(close(&project_box(&pu, &b), &pu, 1e-10));
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-10);
    }

    #[test]
    fn group_mean_is_idempotent_and_nonexpansive((u, v) in pair(6..=6)) {
        let part = vec![vec![0, 3], vec![1, 4, 5], vec![2]];
        let (pu, pv) = (project_group_mean(&u, &part).unwrap(), project_group_mean(&v, &part).unwrap());
        prop_assert!(close(&project_group_mean(&pu, &part).unwrap(), &pu, 1e-10));
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-10);
        for g in &part {
            let mean_in = g.iter().map(|&j| u[j]).sum::<f64>() / g.len() as f64;
            prop_assert!(g.iter().all(|&j| (pu[j] - mean_in).abs() <= 1e-12));
        }
    }

    #[test]
    fn pava_monotone_and_block_means(
        (v, w) in (1usize..=15).prop_flat_map(|n| (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.1..3.0f64, n),
        )),
        up in any::<bool>(),
    ) {
        let dir = if up { Direction::Nondecreasing } else { Direction::Nonincreasing };
        let g = pava_weighted(&v, &w, dir).unwrap();
        let sign = if up { 1.0 } else { -1.0 };
        prop_assert!(g.windows(2).all(|p| sign * (p[1] - p[0]) >= -1e-12));
        // every maximal constant run preserves the weighted mean of the input
        let mut start = 0;
        for end in 1..=g.len() {
            if end == g.len() || g[end] != g[start] {
                let ws: f64 = w[start..end].iter().sum();
                let m = (start..end).map(|i| w[i] * v[i]).sum::<f64>() / ws;
                prop_assert!((m - g[start]).abs() <= 1e-10 * m.abs().max(1.0));
                start = end;
            }
        }
        prop_assert!(close(&pava_weighted(&g, &w, dir).unwrap(), &g, 1e-10));
    }

    #[test]
    fn overlap_isotonic_properties((u, v, gs) in overlap_case()) {
        let pu = project_overlap_isotonic(&u, &gs).unwrap();
        let pv = project_overlap_isotonic(&v, &gs).unwrap();
        let s = Structure::OverlappingGroups { groups: gs.clone() };
        prop_assert!(structure_infeasibility(&pu, &s).unwrap() <= 1e-10);
        prop_assert!(close(&project_overlap_isotonic(&pu, &gs).unwrap(), &pu, 1e-10));
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-10);
    }

    #[test]
    fn score_monotone_properties((u, v, scores) in score_case()) {
        let b = bounds();
        let pu = project_score_monotone(&u, &scores, &b).unwrap();
        let pv = project_score_monotone(&v, &scores, &b).unwrap();
        for i in 0..u.len() {
            prop_assert!(b.contains(pu[i], 0.0));
            for k in 0..u.len() {
                if scores[i] == scores[k] {
                    prop_assert_eq!(pu[i], pu[k]);
                }
                if scores[i] < scores[k] {
                    prop_assert!(pu[i] <= pu[k]);
                }
            }
        }
        prop_assert!(close(&project_score_monotone(&pu, &scores, &b).unwrap(), &pu, 1e-10));
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-10);
    }

    #[test]
    fn alternating_matches_dykstra_for_overlap((v, _, gs) in overlap_case()) {
        let v: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let b = bounds();
        let s = Structure::OverlappingGroups { groups: gs };
        let c = ConstraintSpec::with_structure(b, s.clone());
        let alt = alternating_projection(&v, &c).unwrap();
        prop_assert!(infeasibility(&alt, &c).unwrap() <= 1e-10);
        let exact = dykstra(&v, &s, &b);
        prop_assert!(dist(&alt, &v) <= 1.05 * dist(&exact, &v) + 1e-9);
    }

    #[test]
    fn alternating_matches_dykstra_for_scores((v, _, scores) in score_case()) {
        let v: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let b = bounds();
        let s = Structure::ScoreMonotone { scores };
        let c = ConstraintSpec::with_structure(b, s.clone());
        let alt = alternating_projection(&v, &c).unwrap();
        prop_assert!(infeasibility(&alt, &c).unwrap() <= 1e-10);
        let exact = dykstra(&v, &s, &b);
        prop_assert!(dist(&alt, &v) <= 1.05 * dist(&exact, &v) + 1e-9);
        prop_assert!(close(&alternating_projection(&alt, &c).unwrap(), &alt, 1e-10));
    }
}

#[test]
fn feasible_score_point_is_unchanged() {
    let c = ConstraintSpec::with_structure(
        bounds(),
        Structure::ScoreMonotone {
            scores: vec![0.1, 0.5, 0.5, 2.0],
        },
    );
    let v = [0.5, 1.0, 1.0, 3.0];
    assert_eq!(alternating_projection(&v, &c).unwrap(), v.to_vec());
}
