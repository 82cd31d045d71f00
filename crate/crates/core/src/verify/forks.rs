//! Fork second-moment identity: ordered pairs of distinct alive individuals
//! against the two-legged spine.
//!
//! The normalized pair sum `E[sum_{u != v} f(X^u_t) g(X^v_t)] / E[N_t]^2`
//! equals `r int_0^t e^{-r(m-1)s} E[J2(Q_{t-s}f (x) Q_{t-s}g)(Y_s)] ds`. The
//! right side is estimated without nested semigroup estimation: draw the
//! fork split time `s` from its exponential density on `[0, t]`, run one
//! spine to `s`, draw the sibling pair `(H, I, K, theta)` with the `(H-1)`
//! size-biased weight, then run two independent spines for the remaining
//! `t - s` from the two restart states. The importance weights integrate to
//! `(1 - e^{-r(m-1)t}) c2 / (m-1)` with `c2 = sum_k k(k-1) p_k`; the audit
//! report asserts this against the closed-form pair moment.

use super::many_to_one::side_seed;
use super::{CheckReport, TestFn};
use crate::auxiliary::simulate_auxiliary;
use crate::branching_sim::{simulate_population, BranchingModel, InitialLaw};
use crate::gw_tree::{expected_moments, Caps};
use crate::rng::{Purpose, StreamKey, Theta};
use crate::stats::McEstimate;
use crate::Result;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct ForkParams {
    pub model: BranchingModel,
    pub f: TestFn,
    pub g: TestFn,
    pub t: f64,
    pub n_tree: u64,
    pub n_rhs: u64,
    pub z_max: f64,
    /// Closed-form value, when one exists.
    pub closed_form: Option<f64>,
    pub caps: Caps,
}

/// Normalizing constant of the split-time density: `r int_0^t e^{-r(m-1)s} ds`.
fn split_normalizer(r: f64, m: f64, t: f64) -> f64 {
    let a = r * (m - 1.0);
    if a.abs() < 1e-12 {
        r * t
    } else {
        (1.0 - (-a * t).exp()) / (m - 1.0)
    }
}

/// Inverse CDF of the split-time density on `[0, t]`.
fn sample_split_time(r: f64, m: f64, t: f64, u: f64) -> f64 {
    let a = r * (m - 1.0);
    if a.abs() < 1e-12 {
        u * t
    } else {
        -(1.0 - u * (1.0 - (-a * t).exp())).ln() / a
    }
}

/// Closed-form normalized pair count `(E[N_t^2] - E[N_t]) / E[N_t]^2`.
pub fn pair_count_closed_form(model: &BranchingModel, t: f64) -> f64 {
    let m = expected_moments(&model.offspring, model.rate, t);
    (m.en2 - m.en) / (m.en * m.en)
}

/// Two-legged spine estimator of the fork right-hand side.
fn fork_rhs(
    model: &BranchingModel,
    f: TestFn,
    g: TestFn,
    t: f64,
    seed: u64,
    n_rhs: u64,
) -> Result<McEstimate> {
    let r = model.rate;
    let m = model.offspring.mean();
    let c2 = model.offspring.pair_factor();
    let norm = split_normalizer(r, m, t);

    let values = super::par_replicas(n_rhs, |rep| {
        let key = StreamKey::replica(seed, rep);
        let mut rng = key.rng(Purpose::Estimate);
        let s = sample_split_time(r, m, t, rng.random());
        let trunk = simulate_auxiliary(model, s, &[], key)?;
        let h = model.offspring.sample_pair_tilted(&mut rng)?;
        let i = rng.random_range(1..=h);
        let mut k = rng.random_range(1..=h - 1);
        if k >= i {
            k += 1;
        }
        let theta: u64 = rng.random();
        let children = model.kernel.positions(trunk.terminal, h, Theta(theta))?;
        let leg = |child: u32, leg_idx: u32| -> Result<crate::motion::State> {
            let leg_model = BranchingModel {
                initial: InitialLaw::Point(children[(child - 1) as usize]),
                ..model.clone()
            };
            Ok(simulate_auxiliary(&leg_model, t - s, &[], key.child(leg_idx))?.terminal)
        };
        let y1 = leg(i, 1)?;
        let y2 = leg(k, 2)?;
        Ok(c2 * f.eval(y1) * g.eval(y2))
    })?;
    Ok(McEstimate::from_values(&values).scaled(norm))
}

/// Fork identity check: tree-side pair sums vs the importance-sampled
/// two-legged spine, plus the weight-sum audit.
pub fn check_fork(name: &str, p: &ForkParams, seed: u64) -> Result<Vec<CheckReport>> {
    let m = p.model.offspring.mean();
    let mut out = Vec::new();

    if !p.model.offspring.has_pairs() {
        // no k >= 2 in the support: both sides are identically zero
        let zero = McEstimate::exact(0.0);
        out.push(
            CheckReport::z_test(name, zero, zero, p.z_max).with_meta("degenerate_pairs", true),
        );
        return Ok(out);
    }

    let en = p.model.expected_population(p.t);
    let lhs_vals = super::par_replicas(p.n_tree, |rep| {
        let pop = simulate_population(
            &p.model,
            p.t,
            p.caps,
            StreamKey::replica(side_seed(seed, 0), rep),
        )?;
        Ok(pop.sum_over_forks(p.t, |s| p.f.eval(s), |s| p.g.eval(s))? / (en * en))
    })?;
    let lhs = McEstimate::from_values(&lhs_vals);
    let rhs = fork_rhs(&p.model, p.f, p.g, p.t, side_seed(seed, 1), p.n_rhs)?;

    out.push(
        CheckReport::z_test(name, lhs, rhs, p.z_max)
            .with_meta("t", p.t)
            .with_meta("n_tree", p.n_tree)
            .with_meta("n_rhs", p.n_rhs),
    );
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

    // Weight audit: with f = g = 1 every sample equals c2, so the estimator
    // collapses to its analytic normalizer, which must reproduce the
    // closed-form pair count exactly.
    let audit_value = split_normalizer(p.model.rate, m, p.t) * p.model.offspring.pair_factor();
    let closed = pair_count_closed_form(&p.model, p.t);
    let rel = (audit_value - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
    out.push(
        CheckReport::bound_test(&format!("{name}/weight_audit"), "rel", rel, 1e-9)
            .with_meta("normalizer", audit_value)
            .with_meta("closed_form", closed),
    );
    Ok(out)
}
