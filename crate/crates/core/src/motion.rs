//! Markov motion along branches and branching kernels for offspring
//! positions.
//!
//! Convention: a diffusion is `dX = b dt + sigma dB` with generator
//! `L f = b f' + (sigma^2 / 2) f''`. Exact transitions are implemented for
//! Brownian motion with constant drift, Ornstein-Uhlenbeck, deterministic
//! affine flows and finite-activity Lévy motion; everything else falls back
//! to Euler-Maruyama.
//!
//! Sampling discipline: the terminal state of a lifetime segment is always
//! drawn first, from the segment's motion stream, with a draw schedule that
//! does not depend on which interior times are later queried. Interior states
//! are filled in afterwards by conditional bridges from a separate stream
//! (replaying the motion stream where the bridge needs the segment's jump or
//! Euler draws). Terminal states therefore agree bit-for-bit between
//! terminal-only and path-recording runs.

use crate::error::SimError;
use crate::rng::Theta;
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use std::sync::Arc;

/// State of one particle: a real coordinate plus a small type mark.
///
/// Scalar models ignore `tag`; the cellular-aging model uses `tag` for the
/// cell type in {0, 1}.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct State {
    pub x: f64,
    pub tag: u8,
}

impl State {
    pub fn scalar(x: f64) -> Self {
        State { x, tag: 0 }
    }

    fn check_finite(self) -> Result<Self> {
        if self.x.is_finite() {
            Ok(self)
        } else {
            Err(SimError::NonFiniteState)
        }
    }
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
fn poisson_count(rate_times_dt: f64, rng: &mut ChaCha8Rng) -> u64 {
    if rate_times_dt <= 0.0 {
        return 0;
    }
    Poisson::new(rate_times_dt).expect("positive rate").sample(rng) as u64
}

/// Finite-activity jump component: jumps arrive at `rate`, sizes drawn from a
/// finite discrete law.
#[derive(Clone, Debug)]
pub struct CompoundPoisson {
    pub rate: f64,
    /// `(size, prob)` pairs; probabilities normalized at model build.
    pub sizes: Vec<(f64, f64)>,
}

impl CompoundPoisson {
    pub fn mean_jump(&self) -> f64 {
        self.sizes.iter().map(|&(y, p)| y * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.sizes.iter().map(|&(y, p)| y * y * p).sum()
    }

    /// `E[y 1_{|y| < 1}]`, the compensated small-jump mean of the generator.
    pub fn small_jump_mean(&self) -> f64 {
        self.sizes
            .iter()
            .filter(|&&(y, _)| y.abs() < 1.0)
            .map(|&(y, p)| y * p)
            .sum()
    }

    /// `E[y 1_{|y| >= 1}]`.
    pub fn large_jump_mean(&self) -> f64 {
        self.mean_jump() - self.small_jump_mean()
    }

    fn sample_size(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(y, p) in &self.sizes {
            acc += p;
            if u < acc {
                return y;
            }
        }
        self.sizes.last().map_or(0.0, |&(y, _)| y)
    }
}

/// Affine map `zeta -> a * zeta + b`.
#[derive(Copy, Clone, Debug)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
}

impl AffineMap {
    pub fn apply(&self, z: f64) -> f64 {
        self.a * z + self.b
    }
}

/// Single-child replacement of the aging model, absorbed into the motion as
/// a jump process: at each jump the cell is replaced by one cell of type 0
/// or 1, with correlated Gaussian noise on the affine transmission maps.
#[derive(Clone, Debug)]
pub struct AgingReplacement {
    /// `p_0 / (p_0 + p_1)`: probability the single child has type 0.
    pub p0_share: f64,
    pub g: [AffineMap; 2],
    pub sigma: f64,
    pub rho: f64,
}

impl AgingReplacement {
    fn apply(&self, s: State, rng: &mut ChaCha8Rng) -> State {
        // correlated pair (eps0, eps1) via Cholesky of [[1, rho], [rho, 1]]
        let z1 = normal(rng);
        let z2 = normal(rng);
        let eps0 = self.sigma * z1;
        let eps1 = self.sigma * (self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2);
        let u: f64 = rng.random();
        if u <= self.p0_share {
            State {
                x: self.g[0].apply(s.x) + eps0,
                tag: 0,
            }
        } else {
            State {
                x: self.g[1].apply(s.x) + eps1,
                tag: 1,
            }
        }
    }
}

/// Per-type diffusion of the aging model plus the absorbed replacement jumps.
#[derive(Clone, Debug)]
pub struct AgingMotion {
    /// Scalar diffusion for type 0 and type 1 (must have exact transitions).
    pub diffusion: [Box<MotionModel>; 2],
    pub jump_rate: f64,
    pub replacement: AgingReplacement,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Underlying Markov motion along a branch.
#[derive(Clone)]
pub enum MotionModel {
    /// `dx/dt = a + b x` (includes zero motion and linear growth).
    Deterministic { a: f64, b: f64 },
    /// `dX = drift dt + sigma dB`, exact Gaussian transition.
    Brownian { drift: f64, sigma: f64 },
    /// `dX = -rate (X - mean) dt + sigma dB`, exact Gaussian transition.
    OrnsteinUhlenbeck { rate: f64, mean: f64, sigma: f64 },
    /// Brownian part plus finite-activity compound Poisson jumps; `drift` is
    /// the generator drift (small jumps compensated).
    Levy {
        drift: f64,
        sigma: f64,
        jumps: Option<CompoundPoisson>,
    },
    /// Euler-Maruyama fallback for state-dependent coefficients.
    GeneralDiffusion {
        drift: ScalarFn,
        vol: ScalarFn,
        step: f64,
    },
    /// Two-type aging motion.
    Aging(AgingMotion),
}

impl std::fmt::Debug for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MotionModel::Deterministic { a, b } => {
                write!(f, "Deterministic {{ a: {a}, b: {b} }}")
            }
            MotionModel::Brownian { drift, sigma } => {
                write!(f, "Brownian {{ drift: {drift}, sigma: {sigma} }}")
            }
            MotionModel::OrnsteinUhlenbeck { rate, mean, sigma } => write!(
                f,
                "OrnsteinUhlenbeck {{ rate: {rate}, mean: {mean}, sigma: {sigma} }}"
            ),
            MotionModel::Levy { drift, sigma, jumps } => {
                write!(f, "Levy {{ drift: {drift}, sigma: {sigma}, jumps: {jumps:?} }}")
            }
            MotionModel::GeneralDiffusion { step, .. } => {
                write!(f, "GeneralDiffusion {{ step: {step} }}")
            }
            MotionModel::Aging(a) => write!(f, "Aging {{ jump_rate: {} }}", a.jump_rate),
        }
    }
}

impl MotionModel {
    pub fn zero() -> Self {
        MotionModel::Deterministic { a: 0.0, b: 0.0 }
    }

    pub fn has_exact_transition(&self) -> bool {
        !matches!(self, MotionModel::GeneralDiffusion { .. })
    }

    /// Pathwise drift of the Lévy variant: generator drift minus the
    /// compensated small-jump mean.
    fn levy_path_drift(drift: f64, jumps: &Option<CompoundPoisson>) -> f64 {
        match jumps {
            Some(cp) => drift - cp.rate * cp.small_jump_mean(),
            None => drift,
        }
    }

    /// One sample of the motion at time `dt` from `x`.
    ///
    /// The number and order of draws depend only on the model and `dt` (and
    /// for jump motions on the drawn jump count), never on later queries.
    pub fn evolve(&self, s: State, dt: f64, rng: &mut ChaCha8Rng) -> Result<State> {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return Ok(s);
        }
        let out = match self {
            MotionModel::Deterministic { a, b } => State {
                x: affine_flow(s.x, *a, *b, dt),
                tag: s.tag,
            },
            MotionModel::Brownian { drift, sigma } => State {
                x: s.x + drift * dt + sigma * dt.sqrt() * normal(rng),
                tag: s.tag,
            },
            MotionModel::OrnsteinUhlenbeck { rate, mean, sigma } => {
                let e = (-rate * dt).exp();
                let var = sigma * sigma * (1.0 - e * e) / (2.0 * rate);
                State {
                    x: mean + (s.x - mean) * e + var.sqrt() * normal(rng),
                    tag: s.tag,
                }
            }
            MotionModel::Levy { drift, sigma, jumps } => {
                let gauss = sigma * dt.sqrt() * normal(rng);
                let mut jump_sum = 0.0;
                if let Some(cp) = jumps {
                    let k = poisson_count(cp.rate * dt, rng);
                    for _ in 0..k {
                        jump_sum += cp.sample_size(rng);
                    }
                }
                State {
                    x: s.x + Self::levy_path_drift(*drift, jumps) * dt + gauss + jump_sum,
                    tag: s.tag,
                }
            }
            MotionModel::GeneralDiffusion { drift, vol, step } => {
                let n = (dt / step).ceil().max(1.0) as usize;
                let h = dt / n as f64;
                let sh = h.sqrt();
                let mut x = s.x;
                for _ in 0..n {
                    x += drift(x) * h + vol(x) * sh * normal(rng);
                    if !x.is_finite() {
                        return Err(SimError::NonFiniteState);
                    }
                }
                State { x, tag: s.tag }
            }
            MotionModel::Aging(aging) => {
                let k = poisson_count(aging.jump_rate * dt, rng);
                let mut times: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * dt).collect();
                times.sort_by(f64::total_cmp);
                let mut cur = s;
                let mut t_prev = 0.0;
                for tau in times {
                    cur = aging.diffusion[cur.tag as usize].evolve(cur, tau - t_prev, rng)?;
                    cur = aging.replacement.apply(cur, rng);
                    t_prev = tau;
                }
                aging.diffusion[cur.tag as usize].evolve(cur, dt - t_prev, rng)?
            }
        };
        out.check_finite()
    }

    /// Forward-sampled path on `[0, dt]` at resolution `grid`, endpoints
    /// included. A grid of `dt` or larger degenerates to the two endpoints.
    pub fn evolve_path(
        &self,
        s: State,
        dt: f64,
        grid: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(f64, State)>> {
        assert!(grid > 0.0);
        let steps = ((dt / grid).ceil() as usize).max(1);
        let h = dt / steps as f64;
        let mut out = Vec::with_capacity(steps + 1);
        out.push((0.0, s));
        let mut cur = s;
        for i in 1..=steps {
            cur = self.evolve(cur, h, rng)?;
            out.push((i as f64 * h, cur));
        }
        Ok(out)
    }

    /// Interior states at sorted `times` in `(0, dt)`, conditioned on the
    /// segment endpoints `(0, s0)` and `(dt, terminal)`.
    ///
    /// `replay` must recreate the motion stream that produced `terminal`;
    /// it is consumed only by jump and Euler motions.
    pub fn interior(
        &self,
        s0: State,
        terminal: State,
        dt: f64,
        times: &[f64],
        bridge: &mut ChaCha8Rng,
        replay: &dyn Fn() -> ChaCha8Rng,
    ) -> Result<Vec<State>> {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(times.iter().all(|&t| t > 0.0 && t < dt));
        match self {
            MotionModel::Deterministic { a, b } => Ok(times
                .iter()
                .map(|&t| State {
                    x: affine_flow(s0.x, *a, *b, t),
                    tag: s0.tag,
                })
                .collect()),
            MotionModel::Brownian { sigma, .. } => {
                let xs = brownian_bridge_chain(s0.x, terminal.x, dt, *sigma, times, bridge);
                Ok(xs
                    .into_iter()
                    .map(|x| State { x, tag: s0.tag })
                    .collect())
            }
            MotionModel::OrnsteinUhlenbeck { rate, mean, sigma } => {
                let mut out = Vec::with_capacity(times.len());
                let (mut t_prev, mut x_prev) = (0.0, s0.x);
                for &t in times {
                    let x = ou_bridge_point(
                        x_prev, terminal.x, t - t_prev, dt - t_prev, *rate, *mean, *sigma, bridge,
                    );
                    out.push(State { x, tag: s0.tag });
                    t_prev = t;
                    x_prev = x;
                }
                Ok(out)
            }
            MotionModel::Levy { drift, sigma, jumps } => {
                // Replay the jump record that went into the terminal state,
                // place the jump times uniformly (exchangeable given the
                // count), and bridge the Gaussian part.
                let mut mrng = replay();
                let _gauss_draw: f64 = normal(&mut mrng);
                let mut jump_sizes = Vec::new();
                if let Some(cp) = jumps {
                    let k = poisson_count(cp.rate * dt, &mut mrng);
                    for _ in 0..k {
                        jump_sizes.push(cp.sample_size(&mut mrng));
                    }
                }
                let mut jump_times: Vec<f64> = jump_sizes
                    .iter()
                    .map(|_| bridge.random::<f64>() * dt)
                    .collect();
                let mut order: Vec<usize> = (0..jump_times.len()).collect();
                order.sort_by(|&i, &j| jump_times[i].total_cmp(&jump_times[j]));
                let jumps_sorted: Vec<(f64, f64)> =
                    order.iter().map(|&i| (jump_times[i], jump_sizes[i])).collect();
                jump_times.sort_by(f64::total_cmp);

                let path_drift = Self::levy_path_drift(*drift, jumps);
                let total_jump: f64 = jumps_sorted.iter().map(|&(_, y)| y).sum();
                // Gaussian endpoint implied by the terminal state.
                let w_end = terminal.x - s0.x - path_drift * dt - total_jump;
                let ws = brownian_bridge_chain(0.0, w_end, dt, *sigma, times, bridge);
                Ok(times
                    .iter()
                    .zip(ws)
                    .map(|(&t, w)| {
                        let jsum: f64 = jumps_sorted
                            .iter()
                            .take_while(|&&(tau, _)| tau <= t)
                            .map(|&(_, y)| y)
                            .sum();
                        State {
                            x: s0.x + path_drift * t + w + jsum,
                            tag: s0.tag,
                        }
                    })
                    .collect())
            }
            MotionModel::GeneralDiffusion { drift, vol, step } => {
                // Replay the Euler walk, then bridge inside the step that
                // contains each query time.
                let mut mrng = replay();
                let n = (dt / step).ceil().max(1.0) as usize;
                let h = dt / n as f64;
                let sh = h.sqrt();
                let mut path = Vec::with_capacity(n + 1);
                path.push(s0.x);
                let mut x = s0.x;
                for _ in 0..n {
                    x += drift(x) * h + vol(x) * sh * normal(&mut mrng);
                    if !x.is_finite() {
                        return Err(SimError::NonFiniteState);
                    }
                    path.push(x);
                }
                let mut out = Vec::with_capacity(times.len());
                let mut prev: Option<(f64, f64)> = None;
                for &t in times {
                    let i = ((t / h).floor() as usize).min(n - 1);
                    let (t0, x0) = match prev {
                        Some((tp, xp)) if tp > i as f64 * h => (tp, xp),
                        _ => (i as f64 * h, path[i]),
                    };
                    let t1 = (i + 1) as f64 * h;
                    let xs =
                        brownian_bridge_chain(x0, path[i + 1], t1 - t0, vol(path[i]), &[t - t0], bridge);
                    out.push(State {
                        x: xs[0],
                        tag: s0.tag,
                    });
                    prev = Some((t, xs[0]));
                }
                Ok(out)
            }
            MotionModel::Aging(aging) => {
                // Replay the segment draws exactly, then bridge inside the
                // inter-jump segment containing each query time.
                let mut mrng = replay();
                let k = poisson_count(aging.jump_rate * dt, &mut mrng);
                let mut jump_times: Vec<f64> =
                    (0..k).map(|_| mrng.random::<f64>() * dt).collect();
                jump_times.sort_by(f64::total_cmp);
                // segment boundaries: (t_i, state before evolve), per segment
                let mut segs: Vec<(f64, f64, State, State)> = Vec::new();
                let mut cur = s0;
                let mut t_prev = 0.0;
                for &tau in &jump_times {
                    let end = aging.diffusion[cur.tag as usize].evolve(cur, tau - t_prev, &mut mrng)?;
                    segs.push((t_prev, tau, cur, end));
                    cur = aging.replacement.apply(end, &mut mrng);
                    t_prev = tau;
                }
                let end = aging.diffusion[cur.tag as usize].evolve(cur, dt - t_prev, &mut mrng)?;
                segs.push((t_prev, dt, cur, end));

                let mut out = Vec::with_capacity(times.len());
                for &t in times {
                    let seg = segs
                        .iter()
                        .find(|&&(a, b, _, _)| a <= t && t < b)
                        .expect("query inside segment");
                    let (a, b, sa, sb) = *seg;
                    if t == a {
                        out.push(sa);
                        continue;
                    }
                    let states = aging.diffusion[sa.tag as usize].interior(
                        sa,
                        sb,
                        b - a,
                        &[t - a],
                        bridge,
                        &|| panic!("aging per-type diffusion must have exact transitions"),
                    )?;
                    out.push(states[0]);
                }
                Ok(out)
            }
        }
    }
}

/// Closed-form flow of `dx/dt = a + b x`.
fn affine_flow(x: f64, a: f64, b: f64, dt: f64) -> f64 {
    if b == 0.0 {
        x + a * dt
    } else {
        (x + a / b) * (b * dt).exp() - a / b
    }
}

/// Sequential Brownian-bridge samples at sorted `times` in `(0, dt)` given
/// endpoint values `x0` at 0 and `x1` at `dt`; variance rate `sigma^2`.
fn brownian_bridge_chain(
    x0: f64,
    x1: f64,
    dt: f64,
    sigma: f64,
    times: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let (mut t_prev, mut x_prev) = (0.0, x0);
    for &t in times {
        let span = dt - t_prev;
        let frac = (t - t_prev) / span;
        let mean = x_prev + frac * (x1 - x_prev);
        let var = sigma * sigma * (t - t_prev) * (dt - t) / span;
        let x = mean + var.max(0.0).sqrt() * normal(rng);
        out.push(x);
        t_prev = t;
        x_prev = x;
    }
    out
}

/// One OU bridge sample at time `s` in `(0, horizon)` given `x0` at 0 and
/// `x1` at `horizon`.
#[allow(clippy::too_many_arguments)]
fn ou_bridge_point(
    x0: f64,
    x1: f64,
    s: f64,
    horizon: f64,
    rate: f64,
    mean: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let e1 = (-rate * s).exp();
    let v1 = sigma * sigma * (1.0 - e1 * e1) / (2.0 * rate);
    let e2 = (-rate * (horizon - s)).exp();
    let v2 = sigma * sigma * (1.0 - e2 * e2) / (2.0 * rate);
    if v1 <= 0.0 {
        return x0;
    }
    if v2 <= 0.0 {
        return x1;
    }
    // prior y ~ N(mu1, v1), observation (x1 - mean) = y e2 + N(0, v2)
    let mu1 = (x0 - mean) * e1;
    let precision = 1.0 / v1 + e2 * e2 / v2;
    let post_mean = (mu1 / v1 + e2 * (x1 - mean) / v2) / precision;
    let post_var = 1.0 / precision;
    mean + post_mean + post_var.sqrt() * normal(rng)
}

/// Branching kernel: positions of the `k` children of a mother at `x`,
/// driven by the per-event seed `theta`. Deterministic given `(x, k, theta)`.
#[derive(Clone, Debug)]
pub enum BranchingKernel {
    /// Each of the `k` children starts at `x / k`.
    EqualSplit,
    /// Binary fraction split with a uniform fraction: `(q x, x - q x)`.
    UniformFraction,
    /// Binary fraction split with a Beta(a, b) fraction.
    BetaFraction { a: f64, b: f64 },
    /// `x + delta_j^k`; displacement table per offspring count.
    Additive { deltas: Vec<(u32, Vec<f64>)> },
    /// Children inherit the mother state unchanged.
    LocalBirths,
    /// Two-child event of the aging model: one type-0 and one type-1 child
    /// with independent Gaussian noise on affine transmission maps.
    AgingSplit {
        g2: [AffineMap; 2],
        sigma: [f64; 2],
    },
}

impl BranchingKernel {
    /// Whether the kernel is driven by a single uniform in `[0, 1]` (or is
    /// deterministic), enabling exact quadrature in the fork operators.
    pub fn is_unit_param(&self) -> bool {
        !matches!(self, BranchingKernel::AgingSplit { .. })
    }

    pub fn supports_k(&self, k: u32) -> bool {
        match self {
            BranchingKernel::EqualSplit | BranchingKernel::LocalBirths => true,
            BranchingKernel::UniformFraction | BranchingKernel::BetaFraction { .. } => {
                k == 0 || k == 2
            }
            BranchingKernel::Additive { deltas } => {
                k == 0 || deltas.iter().any(|&(kk, _)| kk == k)
            }
            BranchingKernel::AgingSplit { .. } => k == 0 || k == 2,
        }
    }

    fn fraction(&self, u: f64) -> f64 {
        match self {
            BranchingKernel::UniformFraction => u,
            BranchingKernel::BetaFraction { a, b } => BetaDist::new(*a, *b)
                .expect("valid beta parameters")
                .inverse_cdf(u),
            _ => unreachable!("fraction() is only called on fraction kernels"),
        }
    }

    /// Children positions given one uniform `u` in `[0, 1)`.
    ///
    /// Defined for every kernel except [`BranchingKernel::AgingSplit`],
    /// which needs Gaussian draws.
    pub fn positions_unit(&self, x: State, k: u32, u: f64) -> Result<Vec<State>> {
        if !self.supports_k(k) {
            return Err(SimError::KernelArityMismatch { k });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let out = match self {
            BranchingKernel::EqualSplit => {
                vec![
                    State {
                        x: x.x / f64::from(k),
                        tag: x.tag
                    };
                    k as usize
                ]
            }
            BranchingKernel::UniformFraction | BranchingKernel::BetaFraction { .. } => {
                let q = self.fraction(u);
                let first = q * x.x;
                // second share computed by subtraction so the two fractions
                // sum to the mother value exactly
                vec![
                    State {
                        x: first,
                        tag: x.tag,
                    },
                    State {
                        x: x.x - first,
                        tag: x.tag,
                    },
                ]
            }
            BranchingKernel::Additive { deltas } => {
                let row = &deltas.iter().find(|&&(kk, _)| kk == k).unwrap().1;
                row.iter()
                    .map(|&d| State {
                        x: x.x + d,
                        tag: x.tag,
                    })
                    .collect()
            }
            BranchingKernel::LocalBirths => vec![x; k as usize],
            BranchingKernel::AgingSplit { .. } => {
                return Err(SimError::KernelArityMismatch { k })
            }
        };
        Ok(out)
    }

    /// Children positions from the per-event seed.
    pub fn positions(&self, x: State, k: u32, theta: Theta) -> Result<Vec<State>> {
        if !self.supports_k(k) {
            return Err(SimError::KernelArityMismatch { k });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        match self {
            BranchingKernel::AgingSplit { g2, sigma } => {
                let mut rng = theta.rng();
                let mut out = Vec::with_capacity(2);
                for i in 0..2usize {
                    out.push(State {
                        x: g2[i].apply(x.x) + sigma[i] * normal(&mut rng),
                        tag: i as u8,
                    });
                }
                Ok(out)
            }
            _ => {
                let u: f64 = theta.rng().random();
                self.positions_unit(x, k, u)
            }
        }
    }
}
