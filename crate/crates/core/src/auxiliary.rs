//! The size-biased auxiliary ("spine") process `(Y, Lambda)` and the fork
//! operators `J1`/`J2`.
//!
//! `Y` follows the underlying motion between jumps. Jumps arrive at rate
//! `r m` (branching rate times mean offspring number); at a jump the
//! offspring count `H` is drawn from the size-biased law `h p_h / m`, a
//! child index is drawn uniformly among the `H` children, and `Y` restarts
//! at that child's kernel position. `Lambda` accumulates `log H`. The law of
//! `(Y, Lambda)` matches the lineage of an individual sampled uniformly from
//! the population, which is what every verification check in this crate
//! leans on.

use crate::branching_sim::{BranchingModel, InitialLaw};
use crate::error::SimError;
use crate::motion::State;
use crate::offspring::OffspringDistribution;
use crate::rng::{Purpose, StreamKey, Theta};
use crate::stats::{batch_means, gauss_legendre_unit, McEstimate};
use crate::Result;
use rand::Rng;
use rayon::prelude::*;

/// One spine jump: epoch, size-biased offspring count, selected child,
/// kernel seed.
#[derive(Copy, Clone, Debug)]
pub struct SpineJump {
    pub tau: f64,
    pub h: u32,
    pub child: u32,
    pub theta: u64,
}

/// A simulated spine trajectory.
#[derive(Clone, Debug)]
pub struct AuxiliaryPath {
    pub jumps: Vec<SpineJump>,
    /// States at the requested observation times.
    pub observed: Vec<State>,
    /// State at the horizon.
    pub terminal: State,
    /// `Lambda` at the horizon (sum of `log H` over jumps).
    pub mark: f64,
}

impl AuxiliaryPath {
    /// Number of jumps in `(a, b]`.
    pub fn jumps_in(&self, a: f64, b: f64) -> usize {
        self.jumps.iter().filter(|j| j.tau > a && j.tau <= b).count()
    }
}

/// Simulate the spine on `[0, horizon]`, recording states at the (sorted)
/// observation times.
pub fn simulate_auxiliary(
    model: &BranchingModel,
    horizon: f64,
    observe: &[f64],
    key: StreamKey,
) -> Result<AuxiliaryPath> {
    debug_assert!(observe.windows(2).all(|w| w[0] <= w[1]));
    let mut rng = key.rng(Purpose::Spine);
    let m = model.offspring.mean();
    if m <= 0.0 {
        return Err(SimError::ZeroMean);
    }
    let jump_rate = model.rate * m;

    let mut y = match &model.initial {
        InitialLaw::Point(s) => *s,
        law => law_sample(law, &mut rng),
    };
    let mut t = 0.0;
    let mut mark = 0.0;
    let mut jumps = Vec::new();
    let mut observed = Vec::with_capacity(observe.len());
    let mut obs_iter = observe.iter().copied().peekable();

    loop {
        let u: f64 = rng.random();
        let wait = -(1.0 - u).ln() / jump_rate;
        let next_jump = t + wait;
        let segment_end = next_jump.min(horizon);
        // observations inside the current inter-jump segment
        while let Some(&s) = obs_iter.peek() {
            if s > segment_end {
                break;
            }
            obs_iter.next();
            y = model.motion.evolve(y, s - t, &mut rng)?;
            t = s;
            observed.push(y);
        }
        y = model.motion.evolve(y, segment_end - t, &mut rng)?;
        t = segment_end;
        if next_jump > horizon {
            break;
        }
        let h = model.offspring.sample_size_biased(&mut rng)?;
        let child = rng.random_range(1..=h);
        let theta: u64 = rng.random();
        let positions = model.kernel.positions(y, h, Theta(theta))?;
        y = positions[(child - 1) as usize];
        mark += f64::from(h).ln();
        jumps.push(SpineJump {
            tau: t,
            h,
            child,
            theta,
        });
    }

    Ok(AuxiliaryPath {
        jumps,
        observed,
        terminal: y,
        mark,
    })
}

fn law_sample(law: &InitialLaw, rng: &mut rand_chacha::ChaCha8Rng) -> State {
    match law {
        InitialLaw::Point(s) => *s,
        InitialLaw::Gaussian { mean, sd } => {
            use rand_distr::Distribution;
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            State::scalar(mean + sd * z)
        }
    }
}

/// Monte Carlo estimate of the semigroup `Q_t f = E[f(Y_t)]`.
///
/// Replicas are independent substreams of `(seed, replica)`; the reduction
/// order is fixed, so the result is identical at any parallelism degree.
pub fn estimate_semigroup<F>(
    model: &BranchingModel,
    f: &F,
    t: f64,
    n_reps: u64,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(State) -> f64 + Sync,
{
    if t == 0.0 {
        if let InitialLaw::Point(s) = model.initial {
            return Ok(McEstimate::exact(f(s)));
        }
    }
    let values: Vec<Result<f64>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let key = StreamKey::replica(seed, rep);
            let path = simulate_auxiliary(model, t, &[], key)?;
            Ok(f(path.terminal))
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_values(&values))
}

/// How to evaluate the fork operators.
#[derive(Copy, Clone, Debug)]
pub enum JMode {
    /// Enumerate the offspring support; integrate the kernel uniform by
    /// Gauss-Legendre quadrature with this many points.
    Exact { quad_points: usize },
    /// Monte Carlo over `(H, I, theta)` with this many draws.
    Mc { n_reps: u64, seed: u64 },
}

impl Default for JMode {
    fn default() -> Self {
        JMode::Exact { quad_points: 64 }
    }
}

/// `J1 f(x) = m E[f(F_I^{(H)}(x, Theta))]`, with `H` size-biased and `I`
/// uniform among the children. Equals `sum_k p_k sum_j int f(F_j^{(k)})`.
pub fn apply_j1<F>(
    offspring: &OffspringDistribution,
    kernel: &crate::motion::BranchingKernel,
    f: &F,
    x: State,
    mode: JMode,
) -> Result<McEstimate>
where
    F: Fn(State) -> f64 + Sync,
{
    if offspring.mean() <= 0.0 {
        return Err(SimError::ZeroMean);
    }
    match mode {
        JMode::Exact { quad_points } if kernel.is_unit_param() => {
            let (qs, ws) = gauss_legendre_unit(quad_points);
            let mut total = 0.0;
            for &(k, p) in offspring.support() {
                if k == 0 || p == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for (&q, &w) in qs.iter().zip(&ws) {
                    let children = kernel.positions_unit(x, k, q)?;
                    inner += w * children.iter().map(|&c| f(c)).sum::<f64>();
                }
                total += p * inner;
            }
            Ok(McEstimate::exact(total))
        }
        JMode::Exact { .. } => {
            // kernel needs more than one uniform: fall back to Monte Carlo
            apply_j1(
                offspring,
                kernel,
                f,
                x,
                JMode::Mc {
                    n_reps: 100_000,
                    seed: 0x6a31,
                },
            )
        }
        JMode::Mc { n_reps, seed } => {
            let m = offspring.mean();
            let values: Vec<Result<f64>> = (0..n_reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = StreamKey::replica(seed, rep).rng(Purpose::Estimate);
                    let h = offspring.sample_size_biased(&mut rng)?;
                    let i = rng.random_range(1..=h);
                    let theta: u64 = rng.random();
                    let children = kernel.positions(x, h, Theta(theta))?;
                    Ok(m * f(children[(i - 1) as usize]))
                })
                .collect();
            let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
            Ok(McEstimate::from_values(&values))
        }
    }
}

/// `J2 (f (x) g)(x) = m E[(H-1) f(F_I^{(H)}) g(F_K^{(H)})]` with `(I, K)` an
/// ordered pair without replacement among the `H` children. Equals
/// `sum_k p_k sum_{i != j} int f(F_i^{(k)}) g(F_j^{(k)})`.
pub fn apply_j2<F, G>(
    offspring: &OffspringDistribution,
    kernel: &crate::motion::BranchingKernel,
    f: &F,
    g: &G,
    x: State,
    mode: JMode,
) -> Result<McEstimate>
where
    F: Fn(State) -> f64 + Sync,
    G: Fn(State) -> f64 + Sync,
{
    if !offspring.has_pairs() {
        // support inside {0, 1}: no sibling pairs ever form
        return Ok(McEstimate::exact(0.0));
    }
    match mode {
        JMode::Exact { quad_points } if kernel.is_unit_param() => {
            let (qs, ws) = gauss_legendre_unit(quad_points);
            let mut total = 0.0;
            for &(k, p) in offspring.support() {
                if k < 2 || p == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for (&q, &w) in qs.iter().zip(&ws) {
                    let children = kernel.positions_unit(x, k, q)?;
                    let fs: Vec<f64> = children.iter().map(|&c| f(c)).collect();
                    let gs: Vec<f64> = children.iter().map(|&c| g(c)).collect();
                    let sum_f: f64 = fs.iter().sum();
                    let sum_g: f64 = gs.iter().sum();
                    let diag: f64 = fs.iter().zip(&gs).map(|(a, b)| a * b).sum();
                    inner += w * (sum_f * sum_g - diag);
                }
                total += p * inner;
            }
            Ok(McEstimate::exact(total))
        }
        JMode::Exact { .. } => apply_j2(
            offspring,
            kernel,
            f,
            g,
            x,
            JMode::Mc {
                n_reps: 100_000,
                seed: 0x6a32,
            },
        ),
        JMode::Mc { n_reps, seed } => {
            let c2 = offspring.pair_factor();
            let values: Vec<Result<f64>> = (0..n_reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = StreamKey::replica(seed, rep).rng(Purpose::Estimate);
                    let h = offspring.sample_pair_tilted(&mut rng)?;
                    let i = rng.random_range(1..=h);
                    let mut k = rng.random_range(1..=h - 1);
                    if k >= i {
                        k += 1;
                    }
                    let theta: u64 = rng.random();
                    let children = kernel.positions(x, h, Theta(theta))?;
                    Ok(c2 * f(children[(i - 1) as usize]) * g(children[(k - 1) as usize]))
                })
                .collect();
            let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
            Ok(McEstimate::from_values(&values))
        }
    }
}

/// Long-run law of the spine from a single trajectory with batch means.
#[derive(Clone, Debug)]
pub struct StationaryEstimate {
    /// Post-burn-in samples in time order.
    pub samples: Vec<State>,
    pub sample_dt: f64,
    /// Batch-means estimates of the first four moments of the scalar part.
    pub moments: [McEstimate; 4],
    pub batches: usize,
}

impl StationaryEstimate {
    /// Sorted scalar samples (for KS comparisons).
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.samples.iter().map(|s| s.x).collect();
        xs.sort_by(f64::total_cmp);
        xs
    }

    /// Batch-means estimate of `<pi, f>`.
    pub fn mean_of<F: Fn(State) -> f64>(&self, f: F) -> McEstimate {
        let vals: Vec<f64> = self.samples.iter().map(|&s| f(s)).collect();
        batch_means(&vals, self.batches).expect("enough samples for batch means")
    }
}

/// Parameters of the single-long-run stationary estimator.
#[derive(Copy, Clone, Debug)]
pub struct StationaryRun {
    pub burn_in: f64,
    pub run_length: f64,
    pub sample_dt: f64,
    pub batches: usize,
    /// Divergence guard on `|Y|`.
    pub bound: f64,
}

impl Default for StationaryRun {
    fn default() -> Self {
        StationaryRun {
            burn_in: 1_000.0,
            run_length: 10_000.0,
            sample_dt: 0.25,
            batches: 32,
            bound: 1e9,
        }
    }
}

/// Run one long spine trajectory and return the empirical stationary law.
pub fn estimate_stationary(
    model: &BranchingModel,
    run: StationaryRun,
    key: StreamKey,
) -> Result<StationaryEstimate> {
    let mut rng = key.rng(Purpose::Spine);
    let m = model.offspring.mean();
    if m <= 0.0 {
        return Err(SimError::ZeroMean);
    }
    let jump_rate = model.rate * m;
    let horizon = run.burn_in + run.run_length;
    let n_samples = (run.run_length / run.sample_dt).floor() as usize;

    let mut y = law_sample(&model.initial, &mut rng);
    let mut t = 0.0;
    let mut samples = Vec::with_capacity(n_samples);
    let mut next_sample = run.burn_in + run.sample_dt;

    while t < horizon && samples.len() < n_samples {
        let u: f64 = rng.random();
        let next_jump = t + -(1.0 - u).ln() / jump_rate;
        while next_sample <= next_jump.min(horizon) && samples.len() < n_samples {
            y = model.motion.evolve(y, next_sample - t, &mut rng)?;
            t = next_sample;
            samples.push(y);
            next_sample += run.sample_dt;
        }
        if next_jump > horizon {
            break;
        }
        y = model.motion.evolve(y, next_jump - t, &mut rng)?;
        t = next_jump;
        let h = model.offspring.sample_size_biased(&mut rng)?;
        let child = rng.random_range(1..=h);
        let theta: u64 = rng.random();
        let positions = model.kernel.positions(y, h, Theta(theta))?;
        y = positions[(child - 1) as usize];
        if y.x.abs() > run.bound {
            return Err(SimError::DivergenceDetected { bound: run.bound });
        }
    }

    let xs: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let moments = [
        batch_means(&xs, run.batches)?,
        batch_means(&xs.iter().map(|x| x * x).collect::<Vec<_>>(), run.batches)?,
        batch_means(&xs.iter().map(|x| x.powi(3)).collect::<Vec<_>>(), run.batches)?,
        batch_means(&xs.iter().map(|x| x.powi(4)).collect::<Vec<_>>(), run.batches)?,
    ];
    Ok(StationaryEstimate {
        samples,
        sample_dt: run.sample_dt,
        moments,
        batches: run.batches,
    })
}
