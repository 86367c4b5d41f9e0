//! Euclidean projections onto the constraint sets for `d`.
//!
//! The box projection is a clamp. Structured sets are handled one at a time
//! and combined with the box by cyclic alternating projection.

mod pava;
mod poset;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{check_groups, check_partition, BoxBounds, ConstraintSpec, Structure};

pub use pava::{pava_weighted, Direction};
pub use poset::isotonic_poset;

pub fn project_box(v: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    v.iter().map(|&x| bounds.clamp(x)).collect()
}

/// Replace each coordinate by the mean of its group. `partition` must cover
/// `0..v.len()` disjointly.
pub fn project_group_mean(v: &[f64], partition: &[Vec<usize>]) -> Result<Vec<f64>> {
    check_partition(partition, v.len())?;
    let mut out = vec![0.0; v.len()];
    for group in partition {
        let mean = group.iter().map(|&j| v[j]).sum::<f64>() / group.len() as f64;
        for &j in group {
            out[j] = mean;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub indices: Vec<usize>,
    /// Sorted ids of the groups containing every index of the region.
    pub signature: Vec<usize>,
}

/// Partition of `0..p` by exact group membership.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDecomposition {
    pub regions: Vec<Region>,
}

impl RegionDecomposition {
    /// Region `r` lies strictly deeper than region `q` when its signature
    /// strictly contains the (nonempty) signature of `q`. Unconstrained
    /// regions take no part in the order.
    pub fn is_deeper(&self, r: usize, q: usize) -> bool {
        let (sr, sq) = (&self.regions[r].signature, &self.regions[q].signature);
        !sq.is_empty() && sr.len() > sq.len() && sq.iter().all(|g| sr.binary_search(g).is_ok())
    }

    /// All `(shallower, deeper)` pairs.
    pub fn depth_pairs(&self) -> Vec<(usize, usize)> {
        let l = self.regions.len();
        let mut pairs = Vec::new();
        for q in 0..l {
            for r in 0..l {
                if self.is_deeper(r, q) {
                    pairs.push((q, r));
                }
            }
        }
        pairs
    }
}

pub fn decompose_regions(groups: &[Vec<usize>], p: usize) -> Result<RegionDecomposition> {
    check_groups(groups, p)?;
    let mut signatures: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (g, group) in groups.iter().enumerate() {
        for &j in group {
            if signatures[j].last() != Some(&g) {
                signatures[j].push(g);
            }
        }
    }
    // keyed by signature, ordered by first index
    let mut by_signature: BTreeMap<&[usize], usize> = BTreeMap::new();
    let mut regions: Vec<Region> = Vec::new();
    for (j, sig) in signatures.iter().enumerate() {
        if sig.is_empty() {
            regions.push(Region {
                indices: vec![j],
                signature: Vec::new(),
            });
            continue;
        }
        match by_signature.get(sig.as_slice()) {
            Some(&r) => regions[r].indices.push(j),
            None => {
                by_signature.insert(sig.as_slice(), regions.len());
                regions.push(Region {
                    indices: vec![j],
                    signature: sig.clone(),
                });
            }
        }
    }
    Ok(RegionDecomposition { regions })
}

/// Projection onto `{z : z constant on each region, z_deeper >= z_shallower}`.
pub fn project_overlap_isotonic(v: &[f64], groups: &[Vec<usize>]) -> Result<Vec<f64>> {
    let dec = decompose_regions(groups, v.len())?;
    Ok(project_onto_regions(v, &dec))
}

fn project_onto_regions(v: &[f64], dec: &RegionDecomposition) -> Vec<f64> {
    let constrained: Vec<usize> = (0..dec.regions.len())
        .filter(|&r| !dec.regions[r].signature.is_empty())
        .collect();
    let mut local = vec![usize::MAX; dec.regions.len()];
    for (k, &r) in constrained.iter().enumerate() {
        local[r] = k;
    }
    let weights: Vec<f64> = constrained.iter().map(|&r| dec.regions[r].indices.len() as f64).collect();
    let means: Vec<f64> = constrained
        .iter()
        .map(|&r| {
            let idx = &dec.regions[r].indices;
            idx.iter().map(|&j| v[j]).sum::<f64>() / idx.len() as f64
        })
        .collect();
    let edges: Vec<(usize, usize)> = dec
        .depth_pairs()
        .into_iter()
        .map(|(q, r)| (local[q], local[r]))
        .collect();
    let fitted = isotonic_poset(&means, &weights, &edges);

    let mut out = v.to_vec();
    for (k, &r) in constrained.iter().enumerate() {
        for &j in &dec.regions[r].indices {
            out[j] = fitted[k];
        }
    }
    out
}

/// Level sets of `scores` in ascending score order (exact equality).
fn level_sets(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for j in order {
        match sets.last_mut() {
            Some(set) if scores[set[0]] == scores[j] => set.push(j),
            _ => sets.push(vec![j]),
        }
    }
    sets
}

/// Average over score ties, weighted PAVA (nondecreasing in score) over the
/// level sets, then clamp to the box. One pass, no iteration.
pub fn project_score_monotone(v: &[f64], scores: &[f64], bounds: &BoxBounds) -> Result<Vec<f64>> {
    if v.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} scores",
            v.len(),
            scores.len()
        )));
    }
    let sets = level_sets(scores);
    let weights: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
    let means: Vec<f64> = sets
        .iter()
        .map(|s| s.iter().map(|&j| v[j]).sum::<f64>() / s.len() as f64)
        .collect();
    let fitted = pava_weighted(&means, &weights, Direction::Nondecreasing)?;
    let mut out = vec![0.0; v.len()];
    for (set, g) in sets.iter().zip(fitted) {
        let g = bounds.clamp(g);
        for &j in set {
            out[j] = g;
        }
    }
    Ok(out)
}

/// Projection onto the structured set alone (no box).
pub fn project_structure(v: &[f64], structure: &Structure) -> Result<Vec<f64>> {
    match structure {
        Structure::None => Ok(v.to_vec()),
        Structure::DisjointGroups { groups } => project_group_mean(v, groups),
        Structure::OverlappingGroups { groups } => project_overlap_isotonic(v, groups),
        Structure::ScoreMonotone { scores } => {
            // unbounded version of the score-monotone projection
            let wide = BoxBounds {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            };
            project_score_monotone(v, scores, &wide)
        }
    }
}

/// Largest violation of the structured constraint (0 when feasible).
pub fn structure_infeasibility(v: &[f64], structure: &Structure) -> Result<f64> {
    fn spread<'a>(v: &[f64], idx: impl IntoIterator<Item = &'a usize>) -> f64 {
        let (lo, hi) = idx
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| (lo.min(v[j]), hi.max(v[j])));
        (hi - lo).max(0.0)
    }
    match structure {
        Structure::None => Ok(0.0),
        Structure::DisjointGroups { groups } => {
            check_partition(groups, v.len())?;
            Ok(groups.iter().map(|g| spread(v, g)).fold(0.0, f64::max))
        }
        Structure::OverlappingGroups { groups } => {
            let dec = decompose_regions(groups, v.len())?;
            let mut worst: f64 = dec
                .regions
                .iter()
                .map(|r| spread(v, &r.indices))
                .fold(0.0, f64::max);
            for (q, r) in dec.depth_pairs() {
                let shallow = dec.regions[q].indices.iter().map(|&j| v[j]).fold(f64::NEG_INFINITY, f64::max);
                let deep = dec.regions[r].indices.iter().map(|&j| v[j]).fold(f64::INFINITY, f64::min);
                worst = worst.max(shallow - deep);
            }
            Ok(worst)
        }
        Structure::ScoreMonotone { scores } => {
            if scores.len() != v.len() {
                return Err(Error::DimensionMismatch("score length".into()));
            }
            let sets = level_sets(scores);
            let mut worst: f64 = sets.iter().map(|s| spread(v, s)).fold(0.0, f64::max);
            for pair in sets.windows(2) {
                let prev = pair[0].iter().map(|&j| v[j]).fold(f64::NEG_INFINITY, f64::max);
                let next = pair[1].iter().map(|&j| v[j]).fold(f64::INFINITY, f64::min);
                worst = worst.max(prev - next);
            }
            Ok(worst)
        }
    }
}

/// Largest violation of any component of the constraint, box included.
pub fn infeasibility(v: &[f64], constraint: &ConstraintSpec) -> Result<f64> {
    let b = &constraint.bounds;
    let box_violation = v
        .iter()
        .map(|&x| (b.lower - x).max(x - b.upper).max(0.0))
        .fold(0.0, f64::max);
    Ok(box_violation.max(structure_infeasibility(v, &constraint.structure)?))
}

/// Feasibility slack used by the alternating projection, relative to the
/// magnitude of the point.
fn feasibility_slack(v: &[f64]) -> f64 {
    1e-10 * v.iter().fold(1.0_f64, |m, x| m.max(x.abs()))
}

/// Cyclic projection `P_box o P_C` repeated until the point stops moving (or
/// is feasible). The result is a point of the intersection, not necessarily
/// the nearest one.
pub fn alternating_projection(v: &[f64], constraint: &ConstraintSpec) -> Result<Vec<f64>> {
    Ok(alternating_projection_counted(v, constraint)?.0)
}

/// As [`alternating_projection`], also returning the number of sweeps.
pub fn alternating_projection_counted(v: &[f64], constraint: &ConstraintSpec) -> Result<(Vec<f64>, usize)> {
    let bounds = &constraint.bounds;
    if let Structure::None = constraint.structure {
        return Ok((project_box(v, bounds), 1));
    }
    let mut cur = v.to_vec();
    let mut sweeps = 0;
    let mut infeas;
    loop {
        sweeps += 1;
        let next = project_box(&project_structure(&cur, &constraint.structure)?, bounds);
        let delta = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        cur = next;
        infeas = structure_infeasibility(&cur, &constraint.structure)?;
        let feasible = infeas <= feasibility_slack(&cur);
        if feasible || delta < constraint.alt_tol || sweeps >= constraint.alt_max_sweeps {
            if feasible {
                return Ok((cur, sweeps));
            }
            break;
        }
    }
    Err(Error::ProjectionNotConverged {
        sweeps,
        infeasibility: infeas,
    })
}

/// Whether `v` satisfies the constraint up to `slack` (absolute).
pub fn is_feasible(v: &[f64], constraint: &ConstraintSpec, slack: f64) -> Result<bool> {
    Ok(infeasibility(v, constraint)? <= slack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> BoxBounds {
        BoxBounds::new(1e-4, 1e4).unwrap()
    }

    #[test]
    fn box_examples() {
        assert_eq!(project_box(&[5.0, 2e4, 0.0], &bounds()), vec![5.0, 1e4, 1e-4]);
    }

    #[test]
    fn group_mean_examples() {
        assert_eq!(project_group_mean(&[1.0, 3.0], &[vec![0, 1]]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(
            project_group_mean(&[1.0, 3.0, 7.0], &[vec![0], vec![1], vec![2]]).unwrap(),
            vec![1.0, 3.0, 7.0]
        );
        assert!(matches!(
            project_group_mean(&[1.0, 3.0], &[vec![0]]),
            Err(Error::MalformedConstraint(_))
        ));
    }

    #[test]
    fn pairwise_overlap_regions() {
        let dec = decompose_regions(&[vec![0, 1], vec![1, 2]], 3).unwrap();
        assert_eq!(dec.regions.len(), 3);
        let idx: Vec<_> = dec.regions.iter().map(|r| r.indices.clone()).collect();
        assert_eq!(idx, vec![vec![0], vec![1], vec![2]]);
        assert!(dec.is_deeper(1, 0));
        assert!(dec.is_deeper(1, 2));
        assert!(!dec.is_deeper(0, 2));
        assert!(!dec.is_deeper(0, 1));
    }

    #[test]
    fn disjoint_groups_have_empty_order() {
        let dec = decompose_regions(&[vec![0, 1], vec![2, 3]], 5).unwrap();
        assert_eq!(dec.regions.len(), 3);
        assert_eq!(dec.regions[2].signature, Vec::<usize>::new());
        assert!(dec.depth_pairs().is_empty());
    }

    #[test]
    fn nested_regions_two_block_solution() {
        // region {0} in one group, region {1} in both groups: deeper
        let groups = vec![vec![0, 1], vec![1]];
        let ok = project_overlap_isotonic(&[1.0, 5.0], &groups).unwrap();
        assert_eq!(ok, vec![1.0, 5.0]);
        let pooled = project_overlap_isotonic(&[5.0, 1.0], &groups).unwrap();
        assert!((pooled[0] - 3.0).abs() < 1e-12 && (pooled[1] - 3.0).abs() < 1e-12);
        // weights come from region sizes: 2 shallow coordinates averaging 6, one deep at 0
        let groups = vec![vec![0, 1, 2], vec![2]];
        let out = project_overlap_isotonic(&[5.0, 7.0, 0.0], &groups).unwrap();
        for x in out {
            assert!((x - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unconstrained_coordinates_untouched() {
        let out = project_overlap_isotonic(&[9.0, 1.0, 2.0, -3.0], &[vec![1, 2]]).unwrap();
        assert_eq!(out, vec![9.0, 1.5, 1.5, -3.0]);
    }

    #[test]
    fn score_monotone_examples() {
        let b = bounds();
        assert_eq!(project_score_monotone(&[5.0, 1.0], &[1.0, 2.0], &b).unwrap(), vec![3.0, 3.0]);
        assert_eq!(
            project_score_monotone(&[4.0, 1.0, 1.0], &[0.5, 0.5, 0.5], &b).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
        let v = [0.5, 2.0, 40.0];
        assert_eq!(project_score_monotone(&v, &[3.0, 4.0, 9.0], &b).unwrap(), v.to_vec());
        assert_eq!(
            project_score_monotone(&[3e4, 1e4 + 1.0], &[1.0, 1.0], &b).unwrap(),
            vec![1e4, 1e4]
        );
        assert!(project_score_monotone(&[1.0], &[1.0, 2.0], &b).is_err());
    }

    #[test]
    fn alternating_box_only_is_one_sweep() {
        let c = ConstraintSpec::box_only(bounds());
        let (out, sweeps) = alternating_projection_counted(&[0.0, 5.0, 1e9], &c).unwrap();
        assert_eq!(sweeps, 1);
        assert_eq!(out, project_box(&[0.0, 5.0, 1e9], &bounds()));
    }

    #[test]
    fn alternating_fixed_point() {
        let c = ConstraintSpec::with_structure(
            bounds(),
            Structure::ScoreMonotone {
                scores: vec![1.0, 2.0, 3.0],
            },
        );
        let v = [1.0, 2.0, 3.0];
        let (out, sweeps) = alternating_projection_counted(&v, &c).unwrap();
        assert_eq!(sweeps, 1);
        assert_eq!(out, v.to_vec());
    }

    #[test]
    fn infeasibility_measures() {
        let s = Structure::OverlappingGroups {
            groups: vec![vec![0, 1], vec![1, 2]],
        };
        assert_eq!(structure_infeasibility(&[1.0, 2.0, 1.5], &s).unwrap(), 0.0);
        assert_eq!(structure_infeasibility(&[3.0, 2.0, 1.5], &s).unwrap(), 1.0);
    }
}
