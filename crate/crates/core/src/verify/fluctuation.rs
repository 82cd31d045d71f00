//! Martingale structure of the fluctuation process for binary fraction
//! splitting: with `f_t(x) = e^{-rt/2} f(x)`,
//!
//! ```text
//! M_t = <Z_{t+T}, f> e^{-r(t+T)/2} - <Z_T, f> e^{-rT/2}
//!       - int_0^t <Z_{s+T}, (L+J) f> e^{-r(s+T)/2} ds
//! ```
//!
//! is a square-integrable martingale, so its mean is zero and its variance
//! matches the mean of the bracket integral
//!
//! ```text
//! int_0^t e^{-r(s+T)} <Z_{s+T}, g> ds,
//! g(x) = r int (f(qx) + f((1-q)x) - f(x))^2 G(dq) + sigma^2(x) f'(x)^2.
//! ```
//!
//! Under the diffusion convention `L = b f' + (sigma^2/2) f''` used
//! throughout this crate the motion contributes `sigma^2 f'^2` to the
//! bracket. The drift operator is
//! `J f = r int (f(qx) + f((1-q)x)) G(dq) - (3r/2) f`.
//!
//! Time integrals use the trapezoid rule on a uniform grid; a half-step
//! rerun guards against an under-resolved grid.

use super::many_to_one::side_seed;
use super::{CheckReport, TestFn};
use crate::branching_sim::{simulate_population, BranchingModel};
use crate::error::SimError;
use crate::gw_tree::Caps;
use crate::motion::{BranchingKernel, MotionModel};
use crate::rng::StreamKey;
use crate::stats::{gauss_legendre_unit, sample_variance, McEstimate};
use crate::Result;
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

#[derive(Clone, Debug)]
pub struct FluctuationParams {
    pub model: BranchingModel,
    /// Test function; must be smooth and bounded (`gauss_bump`).
    pub f: TestFn,
    /// Window start `T`.
    pub window_start: f64,
    /// Window length `t`.
    pub t: f64,
    /// Grid step for the time integrals.
    pub grid_step: f64,
    pub n_reps: u64,
    pub z_max: f64,
    /// Relative tolerance between `Var(M)` and the mean bracket.
    pub var_tol_rel: f64,
    pub caps: Caps,
    /// Optional long-run estimate of the limit variance functional `V(f)`
    /// against the stationary law (reported as metadata only).
    pub stationary: Option<crate::auxiliary::StationaryRun>,
}

/// Scalar diffusion coefficients of the motions supported here.
fn diffusion_coeffs(motion: &MotionModel) -> Result<(impl Fn(f64) -> f64, f64)> {
    match *motion {
        MotionModel::Brownian { drift, sigma } => {
            Ok((to_drift(DriftKind::Const(drift)), sigma))
        }
        MotionModel::OrnsteinUhlenbeck { rate, mean, sigma } => {
            Ok((to_drift(DriftKind::Ou { rate, mean }), sigma))
        }
        MotionModel::Deterministic { a, b } => {
            Ok((to_drift(DriftKind::Affine { a, b }), 0.0))
        }
        _ => Err(SimError::InvalidParameters {
            reason: "fluctuation check needs a scalar diffusion motion".into(),
        }),
    }
}

enum DriftKind {
    Const(f64),
    Ou { rate: f64, mean: f64 },
    Affine { a: f64, b: f64 },
}

fn to_drift(kind: DriftKind) -> impl Fn(f64) -> f64 {
    move |x| match kind {
        DriftKind::Const(c) => c,
        DriftKind::Ou { rate, mean } => -rate * (x - mean),
        DriftKind::Affine { a, b } => a + b * x,
    }
}

/// How fraction integrals `int h(q) G(dq)` are evaluated: closed forms in
/// `erf` for the uniform law, Gauss quadrature in the quantile otherwise.
enum FractionLaw {
    Uniform,
    Nodes { q: Vec<f64>, w: Vec<f64> },
}

fn fraction_law(kernel: &BranchingKernel, points: usize) -> Result<FractionLaw> {
    match kernel {
        BranchingKernel::UniformFraction => Ok(FractionLaw::Uniform),
        BranchingKernel::BetaFraction { a, b } => {
            let dist = BetaDist::new(*a, *b).map_err(|e| SimError::InvalidParameters {
                reason: format!("beta fraction: {e}"),
            })?;
            let (us, ws) = gauss_legendre_unit(points);
            Ok(FractionLaw::Nodes {
                q: us.iter().map(|&u| dist.inverse_cdf(u)).collect(),
                w: ws,
            })
        }
        _ => Err(SimError::InvalidParameters {
            reason: "fluctuation check needs a binary fraction-splitting kernel".into(),
        }),
    }
}

/// `int_0^1 e^{-s v^2} dv`.
fn unit_gauss_integral(s: f64) -> f64 {
    if s < 1e-8 {
        1.0 - s / 3.0
    } else {
        let rs = s.sqrt();
        0.5 * std::f64::consts::PI.sqrt() * statrs::function::erf::erf(rs) / rs
    }
}

struct Evaluator {
    rate: f64,
    sigma: f64,
    drift: Box<dyn Fn(f64) -> f64 + Sync + Send>,
    fractions: FractionLaw,
}

impl Evaluator {
    fn f(&self, x: f64) -> f64 {
        (-x * x).exp()
    }

    fn f1(&self, x: f64) -> f64 {
        -2.0 * x * (-x * x).exp()
    }

    fn f2(&self, x: f64) -> f64 {
        (4.0 * x * x - 2.0) * (-x * x).exp()
    }

    /// `int (f(qx) + f((1-q)x)) G(dq)`.
    fn split_mean(&self, x: f64) -> f64 {
        match &self.fractions {
            FractionLaw::Uniform => 2.0 * unit_gauss_integral(x * x),
            FractionLaw::Nodes { q, w } => q
                .iter()
                .zip(w)
                .map(|(&q, &w)| w * (self.f(q * x) + self.f((1.0 - q) * x)))
                .sum(),
        }
    }

    /// `(L + J) f` at `x`.
    fn drift_term(&self, x: f64) -> f64 {
        let lf = (self.drift)(x) * self.f1(x) + 0.5 * self.sigma * self.sigma * self.f2(x);
        lf + self.rate * self.split_mean(x) - 1.5 * self.rate * self.f(x)
    }

    /// Bracket density `g` at `x`.
    fn bracket_term(&self, x: f64) -> f64 {
        let fx = self.f(x);
        let jump = match &self.fractions {
            FractionLaw::Uniform => {
                // expand (f(qx) + f((1-q)x) - f(x))^2; every cross term is a
                // Gaussian q-integral:
                //   int f(qx)^2 dq           = U(2 x^2)
                //   int f(qx) f((1-q)x) dq   = e^{-x^2/2} U(x^2/2)
                //   int f(qx) dq             = U(x^2)
                let u1 = unit_gauss_integral(x * x);
                let u2 = unit_gauss_integral(2.0 * x * x);
                let cross = (-0.5 * x * x).exp() * unit_gauss_integral(0.5 * x * x);
                2.0 * u2 + fx * fx + 2.0 * cross - 4.0 * fx * u1
            }
            FractionLaw::Nodes { q, w } => q
                .iter()
                .zip(w)
                .map(|(&q, &w)| {
                    let d = self.f(q * x) + self.f((1.0 - q) * x) - fx;
                    w * d * d
                })
                .sum(),
        };
        let d1 = self.f1(x);
        self.rate * jump + self.sigma * self.sigma * d1 * d1
    }
}

struct PassResult {
    m_values: Vec<f64>,
    bracket_values: Vec<f64>,
    w_values: Vec<f64>,
}

fn run_pass(
    p: &FluctuationParams,
    ev: &Evaluator,
    grid_step: f64,
    seed: u64,
) -> Result<PassResult> {
    let (t0, t1) = (p.window_start, p.window_start + p.t);
    let steps = ((p.t / grid_step).round() as usize).max(1);
    let grid: Vec<f64> = (0..=steps)
        .map(|j| t0 + p.t * j as f64 / steps as f64)
        .collect();
    let r = p.model.rate;

    let rows = super::par_replicas(p.n_reps, |rep| {
        let pop = simulate_population(
            &p.model,
            t1,
            p.caps,
            StreamKey::replica(side_seed(seed, 0), rep),
        )?;
        let snaps = pop.alive_states(&grid)?;
        let mut sum_f = Vec::with_capacity(grid.len());
        let mut sum_drift = Vec::with_capacity(grid.len());
        let mut sum_bracket = Vec::with_capacity(grid.len());
        for snap in &snaps {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for &(_, s) in snap {
                a += ev.f(s.x);
                b += ev.drift_term(s.x);
                c += ev.bracket_term(s.x);
            }
            sum_f.push(a);
            sum_drift.push(b);
            sum_bracket.push(c);
        }
        let drift_vals: Vec<f64> = grid
            .iter()
            .zip(&sum_drift)
            .map(|(&s, &v)| (-r * s / 2.0).exp() * v)
            .collect();
        let bracket_vals: Vec<f64> = grid
            .iter()
            .zip(&sum_bracket)
            .map(|(&s, &v)| (-r * s).exp() * v)
            .collect();
        let m = sum_f[steps] * (-r * t1 / 2.0).exp()
            - sum_f[0] * (-r * t0 / 2.0).exp()
            - crate::stats::trapezoid_uniform(&drift_vals, 0.0, p.t);
        let bracket = crate::stats::trapezoid_uniform(&bracket_vals, 0.0, p.t);
        let w = pop.population_at(t1)? as f64 * (-r * t1).exp();
        Ok((m, bracket, w))
    })?;
    Ok(PassResult {
        m_values: rows.iter().map(|r| r.0).collect(),
        bracket_values: rows.iter().map(|r| r.1).collect(),
        w_values: rows.iter().map(|r| r.2).collect(),
    })
}

/// Martingale mean and bracket comparison for the fluctuation process of a
/// binary splitting diffusion.
pub fn check_fluctuation_bracket(
    name: &str,
    p: &FluctuationParams,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    if p.f != TestFn::GaussBump {
        return Err(SimError::Config(
            "fluctuation check supports the gauss_bump test function".into(),
        ));
    }
    if p.model.offspring.prob(2) != 1.0 {
        return Err(SimError::InvalidParameters {
            reason: "fluctuation check needs binary splitting (p_2 = 1)".into(),
        });
    }
    let (drift, sigma) = diffusion_coeffs(&p.model.motion)?;
    let fractions = fraction_law(&p.model.kernel, 64)?;
    let ev = Evaluator {
        rate: p.model.rate,
        sigma,
        drift: Box::new(drift),
        fractions,
    };

    if p.t == 0.0 {
        return Ok(vec![
            CheckReport::z_test(
                &format!("{name}/martingale_mean"),
                McEstimate::exact(0.0),
                McEstimate::exact(0.0),
                p.z_max,
            ),
            CheckReport::bound_test(&format!("{name}/bracket_match"), "rel", 0.0, p.var_tol_rel),
        ]);
    }

    let main = run_pass(p, &ev, p.grid_step, seed)?;
    let halved = run_pass(p, &ev, p.grid_step / 2.0, seed)?;

    let var_m = sample_variance(&main.m_values);
    let bracket = McEstimate::from_values(&main.bracket_values);
    let var_m_halved = sample_variance(&halved.m_values);
    let grid_shift = (var_m_halved - var_m).abs() / var_m.max(f64::MIN_POSITIVE);
    if grid_shift > p.var_tol_rel / 2.0 {
        return Err(SimError::GridUnderResolved {
            rel_shift: grid_shift,
        });
    }

    let mean_report = CheckReport::z_test(
        &format!("{name}/martingale_mean"),
        McEstimate::from_values(&main.m_values),
        McEstimate::exact(0.0),
        p.z_max,
    )
    .with_meta("window_start", p.window_start)
    .with_meta("t", p.t)
    .with_meta("grid_step", p.grid_step);

    let rel = (var_m - bracket.mean).abs() / bracket.mean.max(f64::MIN_POSITIVE);
    let mut bracket_report =
        CheckReport::bound_test(&format!("{name}/bracket_match"), "rel", rel, p.var_tol_rel)
            .with_meta("var_m", var_m)
            .with_meta("bracket_mean", bracket.mean)
            .with_meta("bracket_se", bracket.se);

    // limit variance functional against the stationary oracle, informational
    if let Some(run) = p.stationary {
        let pi = crate::auxiliary::estimate_stationary(
            &p.model,
            run,
            StreamKey::replica(side_seed(seed, 2), 0),
        )?;
        let v_f = pi.mean_of(|s| ev.bracket_term(s.x));
        let w_mean = McEstimate::from_values(&main.w_values);
        bracket_report = bracket_report
            .with_meta("v_f_stationary", v_f.mean)
            .with_meta("v_f_times_t_w", v_f.mean * p.t * w_mean.mean);
    }

    let grid_report = CheckReport::bound_test(
        &format!("{name}/grid_stability"),
        "rel",
        grid_shift,
        p.var_tol_rel / 2.0,
    )
    .with_meta("grid_step", p.grid_step)
    .with_meta("var_m_halved", var_m_halved);

    Ok(vec![mean_report, bracket_report, grid_report])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn params(n_reps: u64, grid_step: f64) -> FluctuationParams {
        let (model, _) = models::build("yule_splitted_bm", &Default::default()).unwrap();
        FluctuationParams {
            model,
            f: TestFn::GaussBump,
            window_start: 1.0,
            t: 1.0,
            grid_step,
            n_reps,
            z_max: 4.0,
            var_tol_rel: 0.10,
            caps: Caps::default(),
            stationary: None,
        }
    }

    #[test]
    fn uniform_closed_forms_match_quadrature() {
        let mk = |fractions: FractionLaw| Evaluator {
            rate: 1.3,
            sigma: 0.9,
            drift: Box::new(|_| 0.0),
            fractions,
        };
        let closed = mk(FractionLaw::Uniform);
        let (q, w) = gauss_legendre_unit(64);
        let quad = mk(FractionLaw::Nodes { q, w });
        for &x in &[0.0, 1e-6, 0.2, -0.7, 1.5, -3.0, 8.0] {
            assert!(
                (closed.drift_term(x) - quad.drift_term(x)).abs() < 1e-12,
                "drift at {x}"
            );
            assert!(
                (closed.bracket_term(x) - quad.bracket_term(x)).abs() < 1e-12,
                "bracket at {x}"
            );
        }
    }

    #[test]
    fn zero_window_is_degenerate() {
        let mut p = params(10, 0.25);
        p.t = 0.0;
        let reports = check_fluctuation_bracket("fluct", &p, 0xFF01).unwrap();
        assert!(reports.iter().all(|r| r.pass));
    }

    #[test]
    fn martingale_mean_and_bracket_agree() {
        let p = params(4_000, 1.0 / 128.0);
        let reports = check_fluctuation_bracket("fluct", &p, 0xFF02).unwrap();
        for r in &reports {
            assert!(
                r.pass,
                "{}: z={:?} lhs={:?} rhs={:?} meta={:?}",
                r.name, r.z, r.lhs, r.rhs, r.meta
            );
        }
    }

    #[test]
    fn pure_jump_bracket_without_motion() {
        // sigma = 0, equal fractions: the bracket is the pure jump term
        let mut o = crate::models::Overrides::default();
        o.sigma = Some(0.0);
        let (model, _) = models::build("yule_splitted_bm", &o).unwrap();
        let p = FluctuationParams {
            model,
            ..params(4_000, 1.0 / 128.0)
        };
        let reports = check_fluctuation_bracket("fluct_jump", &p, 0xFF03).unwrap();
        for r in &reports {
            assert!(r.pass, "{}: z={:?} meta={:?}", r.name, r.z, r.meta);
        }
    }
}
