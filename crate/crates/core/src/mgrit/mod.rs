//! Nonlinear multigrid reduction in time (MGRIT) with full approximation
//! storage.
//!
//! The solver targets one-step recurrences `u_n = Φ_l(u_{n-1})` on a ladder
//! of time grids. Level `l` keeps every `c^l`-th point of the finest grid and
//! uses step size `h c^l`. Each V-cycle applies FCF relaxation, injects the
//! states and C-point residuals to the next level, recurses (solving the
//! coarsest level serially), copies the corrected coarse values back to the
//! C-points and finishes with an F-relaxation.
//!
//! The per-interval work inside a relaxation is independent and dispatched
//! through an [`Executor`]; reductions run in index order so the result does
//! not depend on the number of workers.

mod network;

pub use network::{
    restrict_controls, solve_backward, solve_forward, AdjointPropagator, BackwardSolve,
    ForwardPropagator,
};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::linalg::Matrix;

/// One time grid in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub intervals: usize,
    /// Distance between points of this grid, in finest-grid steps (`c^l`).
    pub stride: usize,
}

impl Grid {
    /// Step size on this level given the finest step `h0`.
    pub fn step(&self, h0: f64) -> f64 {
        h0 * self.stride as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultigridHierarchy {
    levels: Vec<Grid>,
    c: usize,
    /// Set when the grid could not be coarsened at all.
    pub serial_fallback: bool,
}

/// Coarsens by `c` while the current grid still divides, has more than
/// `coarsest_max` intervals, and fewer than `max_levels` levels exist.
pub fn build_hierarchy(
    intervals: usize,
    c: usize,
    max_levels: usize,
    coarsest_max: usize,
) -> Result<MultigridHierarchy> {
    if c < 2 {
        return Err(Error::InvalidConfig("coarsening factor must be at least 2".into()));
    }
    if max_levels == 0 || intervals == 0 {
        return Err(Error::InvalidConfig(
            "hierarchy needs at least one level and one interval".into(),
        ));
    }
    let mut levels = vec![Grid {
        intervals,
        stride: 1,
    }];
    loop {
        let last = *levels.last().unwrap();
        if levels.len() >= max_levels
            || last.intervals <= coarsest_max
            || last.intervals % c != 0
            || last.intervals / c == 0
        {
            break;
        }
        levels.push(Grid {
            intervals: last.intervals / c,
            stride: last.stride * c,
        });
    }
    Ok(MultigridHierarchy {
        serial_fallback: levels.len() == 1,
        levels,
        c,
    })
}

impl MultigridHierarchy {
    pub fn levels(&self) -> &[Grid] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn finest(&self) -> Grid {
        self.levels[0]
    }

    pub fn coarsest(&self) -> Grid {
        *self.levels.last().unwrap()
    }

    /// Indices of C-points on `level`: every `c`-th point starting at 0.
    pub fn cpoints(&self, level: usize) -> impl Iterator<Item = usize> {
        (0..=self.levels[level].intervals).step_by(self.c)
    }
}

/// Solver settings shared by every hierarchy built during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgritConfig {
    pub c: usize,
    pub max_levels: usize,
    pub coarsest_max: usize,
}

impl Default for MgritConfig {
    fn default() -> Self {
        Self {
            c: 2,
            max_levels: 3,
            coarsest_max: 4,
        }
    }
}

impl MgritConfig {
    pub fn hierarchy(&self, intervals: usize) -> Result<MultigridHierarchy> {
        build_hierarchy(intervals, self.c, self.max_levels, self.coarsest_max)
    }
}

/// A level-aware one-step propagator.
pub trait Propagator: Sync {
    /// Advances from point `n - 1` to point `n` on `level`.
    fn step(&self, level: usize, n: usize, input: &Matrix, out: &mut Matrix);
}

/// Coarse-level FAS data, indexed by coarse point (entry 0 unused).
///
/// With `base` the injected fine states, `base_step[n] = Φ(base[n-1])` and
/// `defect` the injected fine residual, the coarse equation is
/// `u_n = base[n] + (Φ(u_{n-1}) - base_step[n]) + defect[n]`, which is the
/// usual τ-corrected equation `u_n - Φ(u_{n-1}) = defect[n] + base[n] - Φ(base[n-1])`
/// written so that an exact fine solution is reproduced bit for bit.
#[derive(Debug, Clone)]
pub struct FasCorrection {
    base: Vec<Matrix>,
    base_step: Vec<Matrix>,
    defect: Vec<Matrix>,
}

impl FasCorrection {
    fn zeros(points: usize, rows: usize, cols: usize) -> Self {
        let z = || vec![Matrix::zeros(rows, cols); points];
        Self {
            base: z(),
            base_step: z(),
            defect: z(),
        }
    }

    /// Turns `Φ(u_{n-1})` held in `out` into the corrected update.
    #[inline]
    fn apply(&self, n: usize, out: &mut Matrix) {
        let base = self.base[n].as_slice();
        let step = self.base_step[n].as_slice();
        let defect = self.defect[n].as_slice();
        for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
            *o = base[i] + ((*o - step[i]) + defect[i]);
        }
    }
}

fn advance<P: Propagator>(
    prop: &P,
    level: usize,
    n: usize,
    fas: Option<&FasCorrection>,
    input: &Matrix,
    out: &mut Matrix,
) {
    prop.step(level, n, input, out);
    if let Some(fas) = fas {
        fas.apply(n, out);
    }
}

struct Interval<'a> {
    start: usize,
    points: &'a mut [Matrix],
    blown: Option<usize>,
}

fn first_blow_up(level: usize, intervals: &[Interval<'_>]) -> Result<()> {
    match intervals.iter().find_map(|iv| iv.blown) {
        Some(layer) => Err(Error::RelaxationBlowUp { level, layer }),
        None => Ok(()),
    }
}

/// F-relaxation: within each coarse interval, propagate from its C-point
/// across the F-points. C-points are left untouched.
pub fn f_relax<P: Propagator, E: Executor>(
    hierarchy: &MultigridHierarchy,
    level: usize,
    prop: &P,
    exec: &E,
    states: &mut [Matrix],
    fas: Option<&FasCorrection>,
) -> Result<()> {
    let c = hierarchy.c;
    let mut intervals: Vec<Interval<'_>> = states
        .chunks_mut(c)
        .enumerate()
        .map(|(i, points)| Interval {
            start: i * c,
            points,
            blown: None,
        })
        .collect();
    exec.for_each_mut(&mut intervals, |_, iv| {
        for j in 1..iv.points.len() {
            let (prev, cur) = iv.points.split_at_mut(j);
            advance(prop, level, iv.start + j, fas, &prev[j - 1], &mut cur[0]);
            if !cur[0].is_finite() {
                iv.blown = Some(iv.start + j);
                return;
            }
        }
    });
    first_blow_up(level, &intervals)
}

/// C-relaxation: update every C-point except 0 from its preceding F-point.
pub fn c_relax<P: Propagator, E: Executor>(
    hierarchy: &MultigridHierarchy,
    level: usize,
    prop: &P,
    exec: &E,
    states: &mut [Matrix],
    fas: Option<&FasCorrection>,
) -> Result<()> {
    let c = hierarchy.c;
    let mut intervals: Vec<Interval<'_>> = states[1..]
        .chunks_mut(c)
        .enumerate()
        .filter(|(_, points)| points.len() == c)
        .map(|(i, points)| Interval {
            start: i * c + 1,
            points,
            blown: None,
        })
        .collect();
    exec.for_each_mut(&mut intervals, |_, iv| {
        let (prev, cur) = iv.points.split_at_mut(c - 1);
        advance(prop, level, iv.start + c - 1, fas, &prev[c - 2], &mut cur[0]);
        if !cur[0].is_finite() {
            iv.blown = Some(iv.start + c - 1);
        }
    });
    first_blow_up(level, &intervals)
}

/// Sequential propagation across the whole level.
pub fn serial_sweep<P: Propagator>(
    level: usize,
    prop: &P,
    states: &mut [Matrix],
    fas: Option<&FasCorrection>,
) -> Result<()> {
    for n in 1..states.len() {
        let (prev, cur) = states.split_at_mut(n);
        advance(prop, level, n, fas, &prev[n - 1], &mut cur[0]);
        if !cur[0].is_finite() {
            return Err(Error::RelaxationBlowUp { level, layer: n });
        }
    }
    Ok(())
}

/// Squared residual norms `‖Φ(u_{n-1}) - u_n‖²` for the requested points.
fn residual_terms<P: Propagator, E: Executor>(
    level: usize,
    prop: &P,
    exec: &E,
    states: &[Matrix],
    fas: Option<&FasCorrection>,
    points: &[usize],
) -> Vec<f64> {
    let mut terms: Vec<(usize, f64)> = points.iter().map(|&n| (n, 0.0)).collect();
    exec.for_each_mut(&mut terms, |_, (n, out)| {
        let mut tmp = Matrix::zeros(states[0].rows(), states[0].cols());
        advance(prop, level, *n, fas, &states[*n - 1], &mut tmp);
        *out = tmp.dist_sq(&states[*n]);
    });
    terms.into_iter().map(|(_, r)| r).collect()
}

/// Global Euclidean residual norm on the finest level.
pub fn residual_norm<P: Propagator, E: Executor>(
    prop: &P,
    exec: &E,
    states: &[Matrix],
) -> f64 {
    let points: Vec<usize> = (1..states.len()).collect();
    libm::sqrt(residual_terms(0, prop, exec, states, None, &points).iter().sum())
}

/// States and FAS data for every level of one solve.
pub struct Workspace {
    levels: Vec<LevelData>,
}

struct LevelData {
    states: Vec<Matrix>,
    fas: Option<FasCorrection>,
}

impl Workspace {
    /// Allocates all levels with the finest states set to `finest`.
    pub fn new(hierarchy: &MultigridHierarchy, finest: Vec<Matrix>) -> Self {
        assert_eq!(finest.len(), hierarchy.finest().intervals + 1, "state count mismatch");
        let (rows, cols) = finest[0].shape();
        let mut levels = vec![LevelData {
            states: finest,
            fas: None,
        }];
        for grid in &hierarchy.levels[1..] {
            levels.push(LevelData {
                states: vec![Matrix::zeros(rows, cols); grid.intervals + 1],
                fas: Some(FasCorrection::zeros(grid.intervals + 1, rows, cols)),
            });
        }
        Self { levels }
    }

    pub fn finest(&self) -> &[Matrix] {
        &self.levels[0].states
    }

    pub fn finest_mut(&mut self) -> &mut [Matrix] {
        &mut self.levels[0].states
    }

    pub fn into_finest(self) -> Vec<Matrix> {
        self.levels.into_iter().next().unwrap().states
    }

    /// States on `level` as left by the last cycle.
    pub fn level_states(&self, level: usize) -> &[Matrix] {
        &self.levels[level].states
    }
}

/// One FAS V-cycle starting at the finest level.
pub fn fas_cycle<P: Propagator, E: Executor>(
    hierarchy: &MultigridHierarchy,
    prop: &P,
    exec: &E,
    work: &mut Workspace,
) -> Result<()> {
    cycle_from(hierarchy, prop, exec, &mut work.levels, 0)
}

fn cycle_from<P: Propagator, E: Executor>(
    hierarchy: &MultigridHierarchy,
    prop: &P,
    exec: &E,
    levels: &mut [LevelData],
    l: usize,
) -> Result<()> {
    if l + 1 == hierarchy.num_levels() {
        let lv = &mut levels[l];
        return serial_sweep(l, prop, &mut lv.states, lv.fas.as_ref());
    }
    let c = hierarchy.c;
    {
        let lv = &mut levels[l];
        f_relax(hierarchy, l, prop, exec, &mut lv.states, lv.fas.as_ref())?;
        c_relax(hierarchy, l, prop, exec, &mut lv.states, lv.fas.as_ref())?;
        f_relax(hierarchy, l, prop, exec, &mut lv.states, lv.fas.as_ref())?;
    }

    {
        let (head, tail) = levels.split_at_mut(l + 1);
        let fine = &head[l];
        let coarse = &mut tail[0];
        for (i, v) in coarse.states.iter_mut().enumerate() {
            v.copy_from(&fine.states[c * i]);
        }
        let FasCorrection {
            base,
            base_step,
            defect,
        } = coarse.fas.as_mut().expect("coarse levels carry FAS data");
        let mut items: Vec<(usize, &mut Matrix, &mut Matrix, &mut Matrix)> = base
            .iter_mut()
            .zip(base_step.iter_mut())
            .zip(defect.iter_mut())
            .enumerate()
            .skip(1)
            .map(|(i, ((b, s), d))| (i, b, s, d))
            .collect();
        let fine_fas = fine.fas.as_ref();
        let coarse_states = &coarse.states;
        exec.for_each_mut(&mut items, |_, (i, b, s, d)| {
            let n = c * *i;
            // residual of the fine equation at C-point n
            advance(prop, l, n, fine_fas, &fine.states[n - 1], d);
            d.axpy(-1.0, &fine.states[n]);
            b.copy_from(&coarse_states[*i]);
            prop.step(l + 1, *i, &coarse_states[*i - 1], s);
        });
    }

    cycle_from(hierarchy, prop, exec, levels, l + 1)?;

    {
        let (head, tail) = levels.split_at_mut(l + 1);
        let fine = &mut head[l];
        for (i, v) in tail[0].states.iter().enumerate().skip(1) {
            fine.states[c * i].copy_from(v);
        }
        f_relax(hierarchy, l, prop, exec, &mut fine.states, fine.fas.as_ref())
    }
}

/// Iteration limits for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iters: usize,
    /// Stop once the relative residual drops to this value.
    pub rel_tol: Option<f64>,
}

impl Budget {
    pub fn fixed(iters: usize) -> Self {
        Self {
            max_iters: iters,
            rel_tol: None,
        }
    }

    pub fn tolerance(max_iters: usize, rel_tol: f64) -> Self {
        Self {
            max_iters,
            rel_tol: Some(rel_tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgritStatus {
    pub iterations_performed: usize,
    /// Residual of the initial guess followed by the residual after each cycle.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub levels: usize,
}

impl MgritStatus {
    pub fn relative_history(&self) -> impl Iterator<Item = f64> + '_ {
        let first = self.residual_history[0];
        self.residual_history
            .iter()
            .map(move |&r| relative(r, first))
    }
}

fn relative(r: f64, first: f64) -> f64 {
    if first > 0.0 {
        r / first
    } else if r == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Iterates V-cycles from the given finest states (with `states[0]` holding
/// the initial condition) until the budget is spent or the tolerance is met.
pub fn solve<P: Propagator, E: Executor>(
    hierarchy: &MultigridHierarchy,
    prop: &P,
    exec: &E,
    states: Vec<Matrix>,
    budget: Budget,
) -> Result<(Vec<Matrix>, MgritStatus)> {
    assert!(budget.max_iters >= 1, "budget needs at least one iteration");
    let mut work = Workspace::new(hierarchy, states);
    let mut history = vec![residual_norm(prop, exec, work.finest())];
    let post_points: Vec<usize> = if hierarchy.num_levels() > 1 {
        // F-points are exact after the closing F-relaxation
        hierarchy.cpoints(0).skip(1).collect()
    } else {
        (1..=hierarchy.finest().intervals).collect()
    };
    let mut converged = false;
    let mut iters = 0;
    while iters < budget.max_iters {
        fas_cycle(hierarchy, prop, exec, &mut work)?;
        iters += 1;
        let terms = residual_terms(0, prop, exec, work.finest(), None, &post_points);
        let r = libm::sqrt(terms.iter().sum());
        history.push(r);
        let rel = relative(r, history[0]);
        converged = r == 0.0 || budget.rel_tol.is_some_and(|tol| rel <= tol);
        if budget.rel_tol.is_some() && converged {
            break;
        }
    }
    let status = MgritStatus {
        iterations_performed: iters,
        final_relative_residual: relative(*history.last().unwrap(), history[0]),
        residual_history: history,
        converged,
        levels: hierarchy.num_levels(),
    };
    Ok((work.into_finest(), status))
}
