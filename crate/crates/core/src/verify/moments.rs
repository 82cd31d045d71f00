//! Population-moment checks: mean and second moment of the alive count, the
//! death count, the geometric law of the binary tree, and the exponential
//! limit of the rescaled population size.

use super::{CheckReport, PlotSeries};
use crate::gw_tree::{self, Caps};
use crate::offspring::OffspringDistribution;
use crate::rng::{Purpose, StreamKey};
use crate::stats::{chi_square_gof, histogram, ks_statistic_sorted, McEstimate};
use crate::Result;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct MomentParams {
    pub offspring: OffspringDistribution,
    pub rate: f64,
    pub t: f64,
    pub n_reps: u64,
    pub z_max: f64,
    /// Also fit the alive count to its geometric law (binary trees only).
    pub geometric_fit: bool,
    pub p_min: f64,
}

/// Monte Carlo moments of `N_t` and `D_t` against the closed forms.
pub fn check_gw_moments(prefix: &str, p: &MomentParams, seed: u64) -> Result<Vec<CheckReport>> {
    let rows = super::par_replicas(p.n_reps, |rep| {
        let tree = gw_tree::simulate_tree(
            &p.offspring,
            p.rate,
            p.t,
            Caps::default(),
            StreamKey::replica(seed, rep),
        )?;
        let n = tree.population_at(p.t)? as f64;
        let d = tree.deaths_before(p.t)? as f64;
        Ok((n, n * n, d))
    })?;
    let n_vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let n2_vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let d_vals: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let m = gw_tree::expected_moments(&p.offspring, p.rate, p.t);

    let mut out = Vec::new();
    for (tag, vals, target) in [
        ("mean_alive", &n_vals, m.en),
        ("second_moment_alive", &n2_vals, m.en2),
        ("mean_dead", &d_vals, m.ed),
    ] {
        out.push(
            CheckReport::z_test(
                &format!("{prefix}/{tag}"),
                McEstimate::from_values(vals),
                McEstimate::exact(target),
                p.z_max,
            )
            .with_meta("t", p.t)
            .with_meta("n_reps", p.n_reps),
        );
    }

    if p.geometric_fit {
        // N_t of the binary tree is geometric on {1, 2, ...} with success
        // parameter e^{-rt}
        let q = (-p.rate * p.t).exp();
        let k_max = n_vals.iter().fold(1.0f64, |a, &b| a.max(b)) as usize;
        let mut observed = vec![0.0; k_max];
        for &n in &n_vals {
            observed[n as usize - 1] += 1.0;
        }
        let expected: Vec<f64> = (1..=k_max)
            .map(|k| p.n_reps as f64 * q * (1.0 - q).powi(k as i32 - 1))
            .collect();
        let (stat, dof, p_value) = chi_square_gof(&observed, &expected, 5.0);
        out.push(
            CheckReport::p_value_test(&format!("{prefix}/geometric_fit"), p_value, p.p_min)
                .with_meta("chi2", stat)
                .with_meta("dof", dof)
                .with_meta("t", p.t),
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct WLawParams {
    pub rate: f64,
    pub t: f64,
    pub n_reps: u64,
    pub ks_max: f64,
    pub z_max: f64,
    /// Sample the binary-tree population size directly from its geometric
    /// law instead of building trees.
    pub fast_path: bool,
}

/// Limit law of `W = lim N_t / E[N_t]` for the binary tree: exponential with
/// mean one. Checks the KS distance of `N_t e^{-rt}` against `Exp(1)` and
/// the martingale mean.
pub fn check_w_law(p: &WLawParams, seed: u64) -> Result<Vec<CheckReport>> {
    let en = (p.rate * p.t).exp();
    let mut w: Vec<f64> = if p.fast_path {
        let q = 1.0 / en;
        super::par_replicas(p.n_reps, |rep| {
            let mut rng = StreamKey::replica(seed, rep).rng(Purpose::Estimate);
            let u: f64 = rng.random();
            let n = 1.0 + ((1.0 - u).ln() / (1.0 - q).ln()).floor();
            Ok(n / en)
        })?
    } else {
        let yule = OffspringDistribution::yule();
        super::par_replicas(p.n_reps, |rep| {
            let tree = gw_tree::simulate_tree(
                &yule,
                p.rate,
                p.t,
                Caps {
                    max_nodes: 4_000_000,
                },
                StreamKey::replica(seed, rep),
            )?;
            Ok(tree.population_at(p.t)? as f64 / en)
        })?
    };

    let mean = CheckReport::z_test(
        "w_law/martingale_mean",
        McEstimate::from_values(&w),
        McEstimate::exact(1.0),
        p.z_max,
    )
    .with_meta("t", p.t)
    .with_meta("fast_path", p.fast_path);

    w.sort_by(f64::total_cmp);
    let ks = ks_statistic_sorted(&w, |x| 1.0 - (-x).exp());
    let w_max = w.last().copied().unwrap_or(1.0);
    let hist = histogram(&w, 0.0, w_max, 64);
    let ks_report = CheckReport::bound_test("w_law/ks_vs_exponential", "ks", ks, p.ks_max)
        .with_meta("t", p.t)
        .with_meta("n_reps", p.n_reps)
        .with_meta("fast_path", p.fast_path)
        .with_plot(PlotSeries {
            name: "w_histogram".into(),
            points: hist.iter().map(|&(a, _, mass)| (a, mass)).collect(),
        });

    Ok(vec![mean, ks_report])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yule_moments_pass_at_small_scale() {
        let p = MomentParams {
            offspring: OffspringDistribution::yule(),
            rate: 1.0,
            t: 1.0,
            n_reps: 20_000,
            z_max: 4.0,
            geometric_fit: true,
            p_min: 1e-3,
        };
        let reports = check_gw_moments("yule", &p, 0xAA01).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.pass, "{}: z = {:?} lhs {:?} rhs {:?}", r.name, r.z, r.lhs, r.rhs);
        }
    }

    #[test]
    fn w_law_fast_path_matches_exponential() {
        let p = WLawParams {
            rate: 1.0,
            t: 8.0,
            n_reps: 10_000,
            ks_max: 0.02,
            z_max: 4.0,
            fast_path: true,
        };
        let reports = check_w_law(&p, 0xAA02).unwrap();
        for r in &reports {
            assert!(r.pass, "{}: {:?}", r.name, r.z);
        }
    }

    #[test]
    fn w_law_tree_path_agrees_with_fast_path() {
        let fast = check_w_law(
            &WLawParams {
                rate: 1.0,
                t: 6.0,
                n_reps: 4_000,
                ks_max: 0.05,
                z_max: 4.0,
                fast_path: true,
            },
            0xAA03,
        )
        .unwrap();
        let tree = check_w_law(
            &WLawParams {
                rate: 1.0,
                t: 6.0,
                n_reps: 4_000,
                ks_max: 0.05,
                z_max: 4.0,
                fast_path: false,
            },
            0xAA04,
        )
        .unwrap();
        let (zf, zt) = (fast[0].lhs, tree[0].lhs);
        let comb = (zf.se * zf.se + zt.se * zt.se).sqrt();
        assert!((zf.mean - zt.mean).abs() < 4.0 * comb);
        assert!(tree[1].pass);
    }
}
