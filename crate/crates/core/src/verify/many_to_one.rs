//! Identities between population sums and the spine process: fixed time and
//! whole tree.
//!
//! Fixed time: the mean of `sum_{u alive at t} f` over tree replicas,
//! normalized by `E[N_t]`, must match the plain spine expectation of `f` at
//! `t`. Whole tree: the mean of `sum_{u dead} f(beta(u), path)` must match
//! `r * integral_0^T e^{r(m-1)s} E[f(s, Y_s)] ds`, evaluated with one spine
//! ensemble observed at every quadrature node (common random numbers across
//! `s`) and a composite trapezoid rule.

use super::{CheckReport, TestFn};
use crate::branching_sim::{simulate_population, BranchingModel, InitialLaw};
use crate::auxiliary::simulate_auxiliary;
use crate::error::SimError;
use crate::gw_tree::Caps;
use crate::rng::StreamKey;
use crate::stats::McEstimate;
use crate::Result;

/// Derive a side-specific seed so tree and spine farms never share streams.
pub(crate) fn side_seed(seed: u64, side: u64) -> u64 {
    seed ^ (side + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Path functional for the fixed-time identity.
#[derive(Clone, Copy, Debug)]
pub enum FixedTimeFn {
    /// `f(terminal value at t)`
    Terminal(TestFn),
    /// Indicator of at least one branch event on the lineage in
    /// `(t - window, t]`.
    BranchInWindow { window: f64 },
}

#[derive(Clone, Debug)]
pub struct MtoFixedParams {
    pub model: BranchingModel,
    pub f: FixedTimeFn,
    pub t: f64,
    pub n_tree: u64,
    pub n_spine: u64,
    pub z_max: f64,
    /// Closed-form value of both sides, when one exists.
    pub closed_form: Option<f64>,
    pub caps: Caps,
}

/// Fixed-time identity: tree side vs spine side.
pub fn check_many_to_one_fixed(
    name: &str,
    p: &MtoFixedParams,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let en = p.model.expected_population(p.t);

    let lhs_vals = super::par_replicas(p.n_tree, |rep| {
        let pop = simulate_population(
            &p.model,
            p.t,
            p.caps,
            StreamKey::replica(side_seed(seed, 0), rep),
        )?;
        let total = match p.f {
            FixedTimeFn::Terminal(f) => pop.sum_over_alive(p.t, |s| f.eval(s))?.0,
            FixedTimeFn::BranchInWindow { window } => {
                let alive = pop.tree.alive_at(p.t)?;
                alive
                    .iter()
                    .filter(|&&u| pop.lineage_branches_in(u, p.t - window, p.t) > 0)
                    .count() as f64
            }
        };
        Ok(total / en)
    })?;

    let rhs_vals = super::par_replicas(p.n_spine, |rep| {
        let path = simulate_auxiliary(
            &p.model,
            p.t,
            &[],
            StreamKey::replica(side_seed(seed, 1), rep),
        )?;
        Ok(match p.f {
            FixedTimeFn::Terminal(f) => f.eval(path.terminal),
            FixedTimeFn::BranchInWindow { window } => {
                if path.jumps_in(p.t - window, p.t) > 0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
    })?;

    let lhs = McEstimate::from_values(&lhs_vals);
    let rhs = McEstimate::from_values(&rhs_vals);
    let mut out = vec![CheckReport::z_test(name, lhs, rhs, p.z_max)
        .with_meta("t", p.t)
        .with_meta("n_tree", p.n_tree)
        .with_meta("n_spine", p.n_spine)];
    if let Some(exact) = p.closed_form {
        out.push(CheckReport::z_test(
            &format!("{name}/tree_vs_exact"),
            lhs,
            McEstimate::exact(exact),
            p.z_max,
        ));
        out.push(CheckReport::z_test(
            &format!("{name}/spine_vs_exact"),
            rhs,
            McEstimate::exact(exact),
            p.z_max,
        ));
    }
    Ok(out)
}

/// Functional of `(death time, path)` for the whole-tree identity; all
/// variants vanish past the horizon `T`.
#[derive(Clone, Copy, Debug)]
pub enum TreeSumFn {
    /// `1_{s < T}`: the sum counts deaths before `T`.
    DeathCount,
    /// `e^{-s} (terminal value)^2 1_{s < T}`.
    ExpWeightedSquare,
}

impl TreeSumFn {
    fn eval(self, s: f64, terminal: crate::motion::State) -> f64 {
        match self {
            TreeSumFn::DeathCount => 1.0,
            TreeSumFn::ExpWeightedSquare => (-s).exp() * terminal.x * terminal.x,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MtoTreeParams {
    pub model: BranchingModel,
    pub f: TreeSumFn,
    /// Truncation horizon `T`: the functional vanishes for `s >= T`.
    pub horizon: f64,
    pub n_tree: u64,
    pub n_spine: u64,
    /// Trapezoid intervals for the time integral.
    pub quad_points: usize,
    pub z_max: f64,
    pub caps: Caps,
}

/// Whole-tree identity: sum over all dead individuals vs the exponentially
/// weighted time integral of the spine.
pub fn check_many_to_one_tree(
    name: &str,
    p: &MtoTreeParams,
    seed: u64,
) -> Result<CheckReport> {
    let r = p.model.rate;
    let growth = r * (p.model.mean_offspring() - 1.0);
    let horizon = p.horizon;

    let lhs_vals = super::par_replicas(p.n_tree, |rep| {
        let pop = simulate_population(
            &p.model,
            horizon,
            p.caps,
            StreamKey::replica(side_seed(seed, 0), rep),
        )?;
        pop.sum_over_dead_lifetimes(horizon, |_, beta, _, terminal| p.f.eval(beta, terminal))
    })?;
    let lhs = McEstimate::from_values(&lhs_vals);

    // One spine ensemble observed at the fine grid; the coarse estimate
    // reuses every other node, which isolates the quadrature error from the
    // Monte Carlo noise.
    let fine = 2 * p.quad_points;
    let grid: Vec<f64> = (0..=fine).map(|j| horizon * j as f64 / fine as f64).collect();
    let rows = super::par_replicas(p.n_spine, |rep| {
        let path = simulate_auxiliary(
            &p.model,
            horizon,
            &grid,
            StreamKey::replica(side_seed(seed, 1), rep),
        )?;
        let g: Vec<f64> = grid
            .iter()
            .zip(&path.observed)
            .map(|(&s, &y)| r * (growth * s).exp() * p.f.eval(s, y))
            .collect();
        let coarse: Vec<f64> = g.iter().copied().step_by(2).collect();
        Ok((
            crate::stats::trapezoid_uniform(&g, 0.0, horizon),
            crate::stats::trapezoid_uniform(&coarse, 0.0, horizon),
        ))
    })?;
    let fine_vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let coarse_vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let rhs = McEstimate::from_values(&fine_vals);
    let rhs_coarse = McEstimate::from_values(&coarse_vals);

    let combined_se = (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
    let quad_shift = (rhs.mean - rhs_coarse.mean).abs();
    if combined_se > 0.0 && quad_shift > combined_se {
        return Err(SimError::QuadratureUnderResolved {
            shift: quad_shift / combined_se,
        });
    }

    Ok(CheckReport::z_test(name, lhs, rhs, p.z_max)
        .with_meta("horizon", horizon)
        .with_meta("n_tree", p.n_tree)
        .with_meta("n_spine", p.n_spine)
        .with_meta("quad_points", p.quad_points)
        .with_meta("quad_shift", quad_shift))
}

/// Convenience: equal-split zero-motion binary model (closed forms exist).
pub fn equal_split_model(x0: f64) -> BranchingModel {
    BranchingModel {
        rate: 1.0,
        offspring: crate::offspring::OffspringDistribution::yule(),
        motion: crate::motion::MotionModel::zero(),
        kernel: crate::motion::BranchingKernel::EqualSplit,
        initial: InitialLaw::Point(crate::motion::State::scalar(x0)),
    }
}
