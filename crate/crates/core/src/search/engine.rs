//! Problem-independent branch-and-bound engines over cubes in `R^D`.
//!
//! An engine repeatedly asks a [`CubeEvaluator`] for an upper-bound sample
//! and a (quasi-)lower bound on each cube, keeps the best sample, discards
//! cubes whose bound exceeds it, and subdivides the rest. Evaluations of one
//! batch (a BFS generation, or the children of one best-first node) may run
//! in parallel; results are merged in cube order afterwards, so the outcome
//! does not depend on scheduling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{GenerationStats, SearchStatus};
use crate::error::{Error, Result};
use crate::geometry::Cube;

/// What an evaluator reports for one cube.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeEval {
    /// Objective value at `point`; an upper bound on the global minimum.
    pub value: f64,
    /// Search-space point where `value` was attained.
    pub point: Vec<f64>,
    /// Lower bound (or quasi-lower bound) on the cube.
    pub lower: f64,
    /// Objective evaluations spent.
    pub evals: u64,
}

/// Per-cube oracle used by the engines.
pub trait CubeEvaluator: Sync {
    /// Evaluates `cube`. `incumbent` is the best value known when the batch
    /// started and may be used as an upper bound on the global minimum.
    fn evaluate(&self, cube: &Cube, incumbent: f64) -> Result<CubeEval>;

    /// Optional local refinement of a new incumbent. Returns an improved
    /// `(point, value)` if one was found.
    fn refine(&self, _point: &[f64], _value: f64) -> Result<Option<(Vec<f64>, f64)>> {
        Ok(None)
    }
}

/// Adapter turning an objective and a bound rule into a [`CubeEvaluator`]:
/// `value = f(center)`, `lower = bound(value, cube, f_star)`, where `f_star`
/// is the smaller of the incumbent and `value`.
pub struct FnEvaluator<F, B> {
    pub objective: F,
    pub bound: B,
}

impl<F, B> CubeEvaluator for FnEvaluator<F, B>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    B: Fn(f64, &Cube, f64) -> Result<f64> + Sync,
{
    fn evaluate(&self, cube: &Cube, incumbent: f64) -> Result<CubeEval> {
        let value = (self.objective)(&cube.center)?;
        let lower = (self.bound)(value, cube, incumbent.min(value))?;
        Ok(CubeEval {
            value,
            point: cube.center.clone(),
            lower,
            evals: 1,
        })
    }
}

/// Raw engine output in search coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutcome {
    pub best_point: Vec<f64>,
    pub ub: f64,
    pub lb: f64,
    pub generations: Vec<GenerationStats>,
    pub total_evals: u64,
    pub status: SearchStatus,
}

/// Engine limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineLimits {
    pub epsilon: f64,
    pub max_evals: u64,
}

/// One evaluated BFS generation, as passed to observers.
pub struct GenerationView<'a> {
    pub generation: u32,
    pub cubes: &'a [Cube],
    pub evals: &'a [CubeEval],
    pub ub: f64,
    pub lb: f64,
}

fn evaluate_batch<E: CubeEvaluator>(
    evaluator: &E,
    cubes: &[Cube],
    incumbent: f64,
) -> Result<Vec<CubeEval>> {
    let out: Vec<CubeEval> = if cubes.len() > 1 {
        cubes
            .par_iter()
            .map(|c| evaluator.evaluate(c, incumbent))
            .collect::<Result<_>>()?
    } else {
        cubes
            .iter()
            .map(|c| evaluator.evaluate(c, incumbent))
            .collect::<Result<_>>()?
    };
    for (cube, e) in cubes.iter().zip(&out) {
        if !e.value.is_finite() || e.lower.is_nan() {
            return Err(Error::NonFinite(format!(
                "objective {} / bound {} at {:?}",
                e.value, e.lower, cube.center
            )));
        }
    }
    Ok(out)
}

/// Breadth-first (quasi-)branch-and-bound. Every live cube of a generation
/// is evaluated, the generation lower bound is the minimum cube bound, and
/// every cube whose bound does not exceed the incumbent is split into `2^D`
/// children for the next generation.
pub fn bfs_search<E: CubeEvaluator>(
    evaluator: &E,
    root: Cube,
    limits: EngineLimits,
    observer: &mut dyn FnMut(&GenerationView<'_>),
) -> Result<EngineOutcome> {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut best_point = root.center.clone();
    let mut live = vec![root];
    let mut generations = Vec::new();
    let mut total_evals = 0u64;
    let mut status = SearchStatus::Converged;

    while ub - lb > limits.epsilon {
        if live.is_empty() {
            // Only reachable if no cube ever satisfied its own bound, which
            // exact arithmetic rules out; treat the incumbent as certified.
            lb = ub;
            break;
        }
        if total_evals.saturating_add(live.len() as u64) > limits.max_evals {
            status = SearchStatus::MaxEvalsExceeded;
            break;
        }
        let evals = evaluate_batch(evaluator, &live, ub)?;
        let mut gen_evals = 0;
        for e in &evals {
            gen_evals += e.evals;
            if e.value < ub {
                ub = e.value;
                best_point.clone_from(&e.point);
            }
        }
        total_evals += gen_evals;
        lb = evals.iter().map(|e| e.lower).fold(f64::INFINITY, f64::min);
        let generation = live[0].generation;
        generations.push(GenerationStats {
            g: generation,
            evals: gen_evals,
            live: live.len() as u64,
            ub,
            lb,
        });
        observer(&GenerationView {
            generation,
            cubes: &live,
            evals: &evals,
            ub,
            lb,
        });
        if ub - lb <= limits.epsilon {
            break;
        }
        live = live
            .iter()
            .zip(&evals)
            .filter(|(_, e)| e.lower <= ub)
            .flat_map(|(c, _)| c.subdivide())
            .collect();
    }
    Ok(EngineOutcome {
        best_point,
        ub,
        lb,
        generations,
        total_evals,
        status,
    })
}

struct Node {
    lower: f64,
    generation: u32,
    seq: u64,
    cube: Cube,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed so that `BinaryHeap` pops the smallest key.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lower
            .total_cmp(&self.lower)
            .then(other.generation.cmp(&self.generation))
            .then(other.seq.cmp(&self.seq))
    }
}

fn record(
    generations: &mut Vec<GenerationStats>,
    g: u32,
    evals: u64,
    ub: f64,
    lower: f64,
) {
    while generations.len() <= g as usize {
        generations.push(GenerationStats {
            g: generations.len() as u32,
            evals: 0,
            live: 0,
            ub: f64::INFINITY,
            lb: f64::INFINITY,
        });
    }
    let s = &mut generations[g as usize];
    s.evals += evals;
    s.live += 1;
    s.ub = ub;
    s.lb = s.lb.min(lower);
}

/// Best-first (quasi-)branch-and-bound: the outstanding cube with the lowest
/// bound is split next (ties by generation, then insertion order). Stops when
/// the incumbent is within `epsilon` of the lowest outstanding bound.
/// Evaluator refinement runs whenever a batch improves the incumbent.
pub fn best_first_search<E: CubeEvaluator>(
    evaluator: &E,
    root: Cube,
    limits: EngineLimits,
    refine: bool,
) -> Result<EngineOutcome> {
    let mut generations = Vec::new();
    let mut root_eval = evaluate_batch(evaluator, std::slice::from_ref(&root), f64::INFINITY)?;
    let root_eval = root_eval.pop().expect("one evaluation");
    let mut ub = root_eval.value;
    let mut best_point = root_eval.point.clone();
    let mut total_evals = root_eval.evals;
    record(&mut generations, 0, root_eval.evals, ub, root_eval.lower);
    if refine {
        if let Some((p, v)) = evaluator.refine(&best_point, ub)? {
            if v < ub {
                ub = v;
                best_point = p;
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        lower: root_eval.lower,
        generation: 0,
        seq,
        cube: root,
    });
    let mut status = SearchStatus::Converged;
    let lb;
    loop {
        let Some(node) = heap.pop() else {
            lb = ub;
            break;
        };
        if ub - node.lower <= limits.epsilon {
            lb = node.lower;
            break;
        }
        let children = node.cube.subdivide();
        if total_evals.saturating_add(children.len() as u64) > limits.max_evals {
            status = SearchStatus::MaxEvalsExceeded;
            lb = node.lower;
            break;
        }
        let evals = evaluate_batch(evaluator, &children, ub)?;
        let before = ub;
        for (child, e) in children.iter().zip(&evals) {
            total_evals += e.evals;
            if e.value < ub {
                ub = e.value;
                best_point.clone_from(&e.point);
            }
            record(&mut generations, child.generation, e.evals, ub, e.lower);
        }
        if refine && ub < before {
            if let Some((p, v)) = evaluator.refine(&best_point, ub)? {
                if v < ub {
                    ub = v;
                    best_point = p;
                }
            }
        }
        for (child, e) in children.into_iter().zip(evals) {
            if e.lower <= ub {
                seq += 1;
                heap.push(Node {
                    lower: e.lower,
                    generation: child.generation,
                    seq,
                    cube: child,
                });
            }
        }
    }
    Ok(EngineOutcome {
        best_point,
        ub,
        lb: lb.min(ub),
        generations,
        total_evals,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lipschitz_1d(
        f: fn(f64) -> f64,
        l: f64,
    ) -> FnEvaluator<impl Fn(&[f64]) -> Result<f64> + Sync, impl Fn(f64, &Cube, f64) -> Result<f64> + Sync>
    {
        FnEvaluator {
            objective: move |x: &[f64]| Ok(f(x[0])),
            bound: move |v: f64, c: &Cube, _| Ok(v - l * c.corner_distance()),
        }
    }

    #[test]
    fn bfs_finds_global_minimum_of_multimodal_function() {
        let f = |x: f64| (3.0 * x).sin() + 0.1 * x * x;
        let ev = lipschitz_1d(f, 3.0 + 0.2 * 4.0);
        let limits = EngineLimits {
            epsilon: 1e-6,
            max_evals: 1_000_000,
        };
        let out = bfs_search(&ev, Cube::root(vec![0.0], 4.0), limits, &mut |_| {}).unwrap();
        let grid_min = (0..=800_000)
            .map(|i| f(-4.0 + 8.0 * i as f64 / 800_000.0))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.status, SearchStatus::Converged);
        assert!(out.ub - out.lb <= 1e-6);
        assert!(out.lb <= grid_min && out.ub <= grid_min + 1e-6);
        let sum: u64 = out.generations.iter().map(|g| g.evals).sum();
        assert_eq!(sum, out.total_evals);
    }

    #[test]
    fn best_first_agrees_with_bfs() {
        let f = |x: f64| (5.0 * x).cos() * x + 0.3 * x * x;
        let ev = lipschitz_1d(f, 5.0 * 3.0 + 1.0 + 0.6 * 3.0);
        let limits = EngineLimits {
            epsilon: 1e-7,
            max_evals: 1_000_000,
        };
        let root = Cube::root(vec![0.5], 2.5);
        let a = bfs_search(&ev, root.clone(), limits, &mut |_| {}).unwrap();
        let b = best_first_search(&ev, root, limits, false).unwrap();
        assert!((a.ub - b.ub).abs() <= 2e-7);
        assert!(b.ub - b.lb <= 1e-7);
    }

    #[test]
    fn max_evals_stops_search() {
        let ev = lipschitz_1d(|x| x.sin(), 1.0);
        let limits = EngineLimits {
            epsilon: 1e-12,
            max_evals: 50,
        };
        let out = bfs_search(&ev, Cube::root(vec![0.0], 10.0), limits, &mut |_| {}).unwrap();
        assert_eq!(out.status, SearchStatus::MaxEvalsExceeded);
        assert!(out.total_evals <= 50);
        let out = best_first_search(&ev, Cube::root(vec![0.0], 10.0), limits, false).unwrap();
        assert_eq!(out.status, SearchStatus::MaxEvalsExceeded);
        assert!(out.total_evals <= 50);
    }

    #[test]
    fn non_finite_objective_aborts() {
        let ev = FnEvaluator {
            objective: |x: &[f64]| Ok(if x[0] > 0.3 { f64::NAN } else { x[0] }),
            bound: |v: f64, c: &Cube, _| Ok(v - c.half_edge),
        };
        let limits = EngineLimits {
            epsilon: 1e-6,
            max_evals: 1000,
        };
        let err = bfs_search(&ev, Cube::root(vec![0.0], 1.0), limits, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
