//! Spatial central limit theorem for branching Lévy motion: the pooled
//! cross-section of `(X^u_t - beta t) / sqrt(t)` over surviving replicas
//! converges to a centered Gaussian whose drift `beta` and variance `Sigma`
//! come in closed form from the motion and displacement parameters.
//!
//! Pooling weights particles equally, so replicas enter with their
//! population sizes; standard errors for the pooled mean are therefore
//! computed cluster-robustly at the replica level.

use super::many_to_one::side_seed;
use super::{CheckReport, PlotSeries};
use crate::branching_sim::{simulate_population, BranchingModel};
use crate::error::SimError;
use crate::gw_tree::Caps;
use crate::motion::{BranchingKernel, MotionModel};
use crate::rng::StreamKey;
use crate::stats::{ks_statistic_sorted, normal_cdf, quantile_sorted, McEstimate};
use crate::Result;

#[derive(Clone, Debug)]
pub struct LevyCltParams {
    pub model: BranchingModel,
    pub t: f64,
    pub n_reps: u64,
    pub z_max: f64,
    /// Relative tolerance on the pooled variance against `Sigma`.
    pub var_tol_rel: f64,
    pub ks_max: f64,
    pub caps: Caps,
}

/// Closed-form limit drift and variance of the rescaled cross-section.
pub fn levy_limit_parameters(model: &BranchingModel) -> Result<(f64, f64)> {
    let MotionModel::Levy { drift, sigma, jumps } = &model.motion else {
        return Err(SimError::InvalidParameters {
            reason: "central limit check needs a Lévy motion".into(),
        });
    };
    let BranchingKernel::Additive { deltas } = &model.kernel else {
        return Err(SimError::InvalidParameters {
            reason: "central limit check needs an additive displacement kernel".into(),
        });
    };
    let (jump_mean, jump_second) = match jumps {
        Some(cp) => (cp.rate * cp.large_jump_mean(), cp.rate * cp.second_moment()),
        None => (0.0, 0.0),
    };
    let mut disp_mean = 0.0;
    let mut disp_second = 0.0;
    for &(k, p) in model.offspring.support() {
        if let Some((_, row)) = deltas.iter().find(|&&(kk, _)| kk == k) {
            disp_mean += p * row.iter().sum::<f64>();
            disp_second += p * row.iter().map(|d| d * d).sum::<f64>();
        }
    }
    let beta = drift + jump_mean + model.rate * disp_mean;
    let var = sigma * sigma + jump_second + model.rate * disp_second;
    Ok((beta, var))
}

/// Pooled cross-section against the Gaussian limit: mean, variance and KS.
pub fn check_levy_clt(name: &str, p: &LevyCltParams, seed: u64) -> Result<Vec<CheckReport>> {
    let (beta, var) = levy_limit_parameters(&p.model)?;
    let scale = p.t.sqrt();

    struct Row {
        sum: f64,
        sum_sq: f64,
        n: usize,
        values: Vec<f64>,
    }
    let rows = super::par_replicas(p.n_reps, |rep| {
        let pop = simulate_population(
            &p.model,
            p.t,
            p.caps,
            StreamKey::replica(side_seed(seed, 0), rep),
        )?;
        let snap = pop.alive_states(&[p.t])?;
        let values: Vec<f64> = snap[0]
            .iter()
            .map(|&(_, s)| (s.x - beta * p.t) / scale)
            .collect();
        let sum: f64 = values.iter().sum();
        let sum_sq: f64 = values.iter().map(|v| v * v).sum();
        Ok(Row {
            sum,
            sum_sq,
            n: values.len(),
            values,
        })
    })?;

    let total_n: usize = rows.iter().map(|r| r.n).sum();
    if total_n == 0 {
        return Err(SimError::AllExtinct);
    }
    let total = total_n as f64;
    let pooled_mean = rows.iter().map(|r| r.sum).sum::<f64>() / total;
    // cluster-robust standard error: replicas are the independent units
    let cluster_ss: f64 = rows
        .iter()
        .map(|r| {
            let d = r.sum - pooled_mean * r.n as f64;
            d * d
        })
        .sum();
    let mean_se = cluster_ss.sqrt() / total;
    let pooled_var = rows.iter().map(|r| r.sum_sq).sum::<f64>() / total - pooled_mean * pooled_mean;

    let mut pooled: Vec<f64> = Vec::with_capacity(total_n);
    for r in &rows {
        pooled.extend_from_slice(&r.values);
    }
    pooled.sort_by(f64::total_cmp);
    let sd = var.sqrt();
    let ks = ks_statistic_sorted(&pooled, |x| normal_cdf(x, 0.0, sd));

    let qq: Vec<(f64, f64)> = (1..100)
        .map(|i| {
            let q = i as f64 / 100.0;
            let theo = quantile_of_normal(q, 0.0, sd);
            (theo, quantile_sorted(&pooled, q))
        })
        .collect();

    let mean_report = CheckReport::z_test(
        &format!("{name}/mean"),
        McEstimate {
            mean: pooled_mean,
            se: mean_se,
            n: p.n_reps,
        },
        McEstimate::exact(0.0),
        p.z_max,
    )
    .with_meta("t", p.t)
    .with_meta("beta", beta)
    .with_meta("pooled_particles", total_n);

    let var_rel = (pooled_var - var).abs() / var;
    let var_report = CheckReport::bound_test(&format!("{name}/variance"), "rel", var_rel, p.var_tol_rel)
        .with_meta("pooled_variance", pooled_var)
        .with_meta("sigma_limit", var);

    let ks_report = CheckReport::bound_test(&format!("{name}/ks"), "ks", ks, p.ks_max)
        .with_meta("target", format!("normal(0, {var})"))
        .with_plot(PlotSeries {
            name: "clt_qq".into(),
            points: qq,
        });

    Ok(vec![mean_report, var_report, ks_report])
}

/// Inverse normal CDF (Acklam's rational approximation, ~1e-9 absolute).
fn quantile_of_normal(q: f64, mean: f64, sd: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let x = if q < p_low {
        let u = (-2.0 * q.ln()).sqrt();
        (((((C[0] * u + C[1]) * u + C[2]) * u + C[3]) * u + C[4]) * u + C[5])
            / ((((D[0] * u + D[1]) * u + D[2]) * u + D[3]) * u + 1.0)
    } else if q <= 1.0 - p_low {
        let u = q - 0.5;
        let r = u * u;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let u = (-2.0 * (1.0 - q).ln()).sqrt();
        -(((((C[0] * u + C[1]) * u + C[2]) * u + C[3]) * u + C[4]) * u + C[5])
            / ((((D[0] * u + D[1]) * u + D[2]) * u + D[3]) * u + 1.0)
    };
    mean + sd * x
}
