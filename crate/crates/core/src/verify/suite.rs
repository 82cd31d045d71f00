//! Check dispatch and the built-in `paper-core` suite.
//!
//! Checks run sequentially in config order; each check parallelizes its own
//! replica farm over the installed thread pool. Per-check seeds derive from
//! `(config seed, position in the check list)`, so a filtered rerun of one
//! check reproduces its in-suite result.

use super::clt::{check_levy_clt, LevyCltParams};
use super::fluctuation::{check_fluctuation_bracket, FluctuationParams};
use super::forks::{check_fork, ForkParams};
use super::lln::{
    check_lln_alive, check_lln_alive_control, check_lln_dead, check_lln_dead_path,
    LlnAliveParams, LlnControlParams, LlnDeadParams, LlnDeadPathParams,
};
use super::many_to_one::{
    check_many_to_one_fixed, check_many_to_one_tree, FixedTimeFn, MtoFixedParams, MtoTreeParams,
    TreeSumFn,
};
use super::moments::{check_gw_moments, check_w_law, MomentParams, WLawParams};
use super::{CheckReport, TestFn};
use crate::auxiliary::JMode;
use crate::config::{CheckSpec, ExperimentConfig, ModelSpec, TreeFnSpec};
use crate::gw_tree::Caps;
use crate::offspring::OffspringDistribution;
use crate::Result;
use std::collections::BTreeMap;

/// Outcome of a full suite run.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub reports: Vec<CheckReport>,
    pub all_pass: bool,
}

fn check_seed(config_seed: u64, index: usize) -> u64 {
    config_seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(index as u64)
}

fn offspring_from_spec(map: &Option<BTreeMap<String, f64>>) -> Result<OffspringDistribution> {
    match map {
        None => Ok(OffspringDistribution::yule()),
        Some(m) => {
            let mut pairs = Vec::new();
            for (k, &w) in m {
                let k: u32 = k.parse().map_err(|_| {
                    crate::SimError::Config(format!("offspring key `{k}` is not an integer"))
                })?;
                pairs.push((k, w));
            }
            OffspringDistribution::validate(&pairs)
        }
    }
}

/// Stable display name of a check spec.
pub fn spec_name(spec: &CheckSpec) -> String {
    fn model_tag(m: &ModelSpec) -> String {
        match m.overrides.kernel.as_deref() {
            Some(k) => format!("{}+{k}", m.name),
            None => m.name.clone(),
        }
    }
    match spec {
        CheckSpec::GwMoments { offspring, t, .. } => match offspring {
            None => format!("gw_moments/binary@t={t}"),
            Some(_) => format!("gw_moments/general@t={t}"),
        },
        CheckSpec::WLaw { t, .. } => format!("w_law@t={t}"),
        CheckSpec::ManyToOneFixed { model, f, window, t, .. } => {
            let tag = match (f, window) {
                (_, Some(w)) => format!("window={w}"),
                (Some(f), None) => f.name().to_string(),
                (None, None) => "x2".into(),
            };
            format!("mto_fixed/{}/{tag}@t={t}", model_tag(model))
        }
        CheckSpec::ManyToOneTree { model, f, horizon, .. } => {
            let tag = match f {
                TreeFnSpec::DeathCount => "deaths",
                TreeFnSpec::ExpWeightedSquare => "weighted_x2",
            };
            format!("mto_tree/{}/{tag}@T={horizon}", model_tag(model))
        }
        CheckSpec::Fork { model, f, g, t, .. } => {
            format!("fork/{}/{}x{}@t={t}", model_tag(model), f.name(), g.name())
        }
        CheckSpec::LlnAlive { model, t_list, .. } => {
            format!("lln_alive/{}@t={}", model_tag(model), t_list.last().unwrap())
        }
        CheckSpec::LlnAliveControl { model, t, .. } => {
            format!("lln_alive_control/{}@t={t}", model_tag(model))
        }
        CheckSpec::LlnDead { model, t, .. } => format!("lln_dead/{}@t={t}", model_tag(model)),
        CheckSpec::LlnDeadPath { model, t, .. } => {
            format!("lln_dead_path/{}@t={t}", model_tag(model))
        }
        CheckSpec::LevyClt { model, t, .. } => format!("levy_clt/{}@t={t}", model_tag(model)),
        CheckSpec::Fluctuation { model, window_start, t, .. } => {
            format!("fluctuation/{}@T={window_start},t={t}", model_tag(model))
        }
        CheckSpec::SeScaling { t, .. } => format!("se_scaling@t={t}"),
    }
}

/// Run one check. The spec's own `kind` and parameters fully determine the
/// computation; `seed` selects the random streams.
pub fn run_check(spec: &CheckSpec, seed: u64) -> Result<Vec<CheckReport>> {
    let caps = Caps::default();
    let name = spec_name(spec);
    match spec {
        CheckSpec::GwMoments {
            offspring,
            r,
            t,
            n_reps,
            z_max,
            geometric_fit,
            p_min,
        } => {
            let p = MomentParams {
                offspring: offspring_from_spec(offspring)?,
                rate: *r,
                t: *t,
                n_reps: *n_reps,
                z_max: *z_max,
                geometric_fit: *geometric_fit,
                p_min: *p_min,
            };
            check_gw_moments(&name, &p, seed)
        }
        CheckSpec::WLaw {
            r,
            t,
            n_reps,
            ks_max,
            z_max,
            fast_path,
        } => check_w_law(
            &WLawParams {
                rate: *r,
                t: *t,
                n_reps: *n_reps,
                ks_max: *ks_max,
                z_max: *z_max,
                fast_path: *fast_path,
            },
            seed,
        ),
        CheckSpec::ManyToOneFixed {
            model,
            f,
            window,
            t,
            n_tree,
            n_spine,
            z_max,
            closed_form,
        } => {
            let (built, _) = model.build()?;
            let func = match window {
                Some(w) => FixedTimeFn::BranchInWindow { window: *w },
                None => FixedTimeFn::Terminal(f.unwrap_or(TestFn::Square)),
            };
            check_many_to_one_fixed(
                &name,
                &MtoFixedParams {
                    model: built,
                    f: func,
                    t: *t,
                    n_tree: *n_tree,
                    n_spine: *n_spine,
                    z_max: *z_max,
                    closed_form: *closed_form,
                    caps,
                },
                seed,
            )
        }
        CheckSpec::ManyToOneTree {
            model,
            f,
            horizon,
            n_tree,
            n_spine,
            quad_points,
            z_max,
        } => {
            let (built, _) = model.build()?;
            let func = match f {
                TreeFnSpec::DeathCount => TreeSumFn::DeathCount,
                TreeFnSpec::ExpWeightedSquare => TreeSumFn::ExpWeightedSquare,
            };
            check_many_to_one_tree(
                &name,
                &MtoTreeParams {
                    model: built,
                    f: func,
                    horizon: *horizon,
                    n_tree: *n_tree,
                    n_spine: *n_spine,
                    quad_points: *quad_points,
                    z_max: *z_max,
                    caps,
                },
                seed,
            )
            .map(|r| vec![r])
        }
        CheckSpec::Fork {
            model,
            f,
            g,
            t,
            n_tree,
            n_rhs,
            z_max,
            closed_form,
        } => {
            let (built, _) = model.build()?;
            check_fork(
                &name,
                &ForkParams {
                    model: built,
                    f: *f,
                    g: *g,
                    t: *t,
                    n_tree: *n_tree,
                    n_rhs: *n_rhs,
                    z_max: *z_max,
                    closed_form: *closed_form,
                    caps,
                },
                seed,
            )
        }
        CheckSpec::LlnAlive {
            model,
            t_list,
            n_reps,
            stationary,
            ks_max,
            trend_slack,
            z_max,
            battery,
        } => {
            let (built, _) = model.build()?;
            check_lln_alive(
                &name,
                &LlnAliveParams {
                    model: built,
                    t_list: t_list.clone(),
                    n_reps: *n_reps,
                    stationary: (*stationary).into(),
                    ks_max: *ks_max,
                    trend_slack: *trend_slack,
                    z_max: *z_max,
                    battery: battery.clone(),
                    caps,
                },
                seed,
            )
        }
        CheckSpec::LlnAliveControl {
            model,
            t,
            n_reps,
            ks_max,
            target_mean,
            target_sd,
        } => {
            let (built, _) = model.build()?;
            check_lln_alive_control(
                &name,
                &LlnControlParams {
                    model: built,
                    t: *t,
                    n_reps: *n_reps,
                    ks_max: *ks_max,
                    target_mean: *target_mean,
                    target_sd: *target_sd,
                    caps,
                },
                seed,
            )
            .map(|r| vec![r])
        }
        CheckSpec::LlnDead {
            model,
            t,
            n_reps,
            stationary,
            z_max,
            battery,
        } => {
            let (built, _) = model.build()?;
            check_lln_dead(
                &name,
                &LlnDeadParams {
                    model: built,
                    t: *t,
                    n_reps: *n_reps,
                    z_max: *z_max,
                    battery: battery.clone(),
                    stationary: (*stationary).into(),
                    caps,
                },
                seed,
            )
        }
        CheckSpec::LlnDeadPath {
            model,
            t,
            n_reps,
            stationary,
            z_max,
            battery,
        } => {
            let (built, _) = model.build()?;
            check_lln_dead_path(
                &name,
                &LlnDeadPathParams {
                    model: built,
                    t: *t,
                    n_reps: *n_reps,
                    z_max: *z_max,
                    battery: battery.clone(),
                    stationary: (*stationary).into(),
                    j_mode: JMode::default(),
                    caps,
                },
                seed,
            )
        }
        CheckSpec::LevyClt {
            model,
            t,
            n_reps,
            z_max,
            var_tol_rel,
            ks_max,
        } => {
            let (built, _) = model.build()?;
            check_levy_clt(
                &name,
                &LevyCltParams {
                    model: built,
                    t: *t,
                    n_reps: *n_reps,
                    z_max: *z_max,
                    var_tol_rel: *var_tol_rel,
                    ks_max: *ks_max,
                    caps,
                },
                seed,
            )
        }
        CheckSpec::Fluctuation {
            model,
            window_start,
            t,
            grid_step,
            n_reps,
            z_max,
            var_tol_rel,
            stationary,
        } => {
            let (built, _) = model.build()?;
            check_fluctuation_bracket(
                &name,
                &FluctuationParams {
                    model: built,
                    f: TestFn::GaussBump,
                    window_start: *window_start,
                    t: *t,
                    grid_step: *grid_step,
                    n_reps: *n_reps,
                    z_max: *z_max,
                    var_tol_rel: *var_tol_rel,
                    caps,
                    stationary: stationary.map(Into::into),
                },
                seed,
            )
        }
        CheckSpec::SeScaling {
            model,
            t,
            n_reps,
            ratio_tol,
        } => {
            let (built, _) = model.build()?;
            let small = crate::auxiliary::estimate_semigroup(
                &built,
                &|s| TestFn::Square.eval(s),
                *t,
                *n_reps,
                seed,
            )?;
            let large = crate::auxiliary::estimate_semigroup(
                &built,
                &|s| TestFn::Square.eval(s),
                *t,
                2 * n_reps,
                seed ^ 0x5e5e,
            )?;
            let ratio = large.se / small.se;
            let target = std::f64::consts::FRAC_1_SQRT_2;
            let rel = (ratio - target).abs() / target;
            Ok(vec![CheckReport::bound_test(&name, "rel", rel, *ratio_tol)
                .with_meta("se_small_n", small.se)
                .with_meta("se_large_n", large.se)
                .with_meta("ratio", ratio)])
        }
    }
}

/// Run every check in the config, in declared order, recording per-check
/// errors as failed reports instead of aborting the suite.
pub fn run_checks(cfg: &ExperimentConfig, only: Option<&str>) -> SuiteOutcome {
    let mut reports = Vec::new();
    for (idx, spec) in cfg.checks.iter().enumerate() {
        let name = spec_name(spec);
        if let Some(filter) = only {
            if !name.contains(filter) {
                continue;
            }
        }
        match run_check(spec, check_seed(cfg.seed, idx)) {
            Ok(mut rs) => reports.append(&mut rs),
            Err(e) => {
                reports.push(
                    CheckReport::bound_test(&name, "error", 1.0, 0.0).with_meta("error", e),
                );
            }
        }
    }
    let all_pass = reports.iter().all(|r| r.pass);
    SuiteOutcome { reports, all_pass }
}

/// Run the suite inside a thread pool of the given size. Results are
/// identical at any parallelism degree.
pub fn run_suite(cfg: &ExperimentConfig, jobs: usize, only: Option<&str>) -> Result<SuiteOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| crate::SimError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| run_checks(cfg, only)))
}

/// The built-in `paper-core` suite: closed-form moment reproduction plus
/// tree-vs-spine agreement for every identity, at desk scale.
pub fn default_suite(seed: u64) -> ExperimentConfig {
    let e = std::f64::consts::E;
    let bm = ModelSpec::named("yule_splitted_bm");
    let ou = ModelSpec::named("yule_splitted_ou");
    let equal = ModelSpec::named("yule_equal_split");

    let mut local_ou = ModelSpec::named("yule_splitted_ou");
    local_ou.overrides.kernel = Some("local_births".into());
    local_ou.overrides.x0 = Some(0.0);

    let mut subcritical = ModelSpec::named("yule_equal_split");
    subcritical.overrides.offspring = Some(
        [("0".to_string(), 0.75), ("2".to_string(), 0.25)]
            .into_iter()
            .collect(),
    );

    // closed forms frozen for the fork checks (binary tree at t = 1)
    let fork_ones_exact = 2.0 - 2.0 / e;
    let fork_identity_exact = ((-1.0f64).exp() - (-7.0f64 / 3.0).exp()) / 4.0;

    let checks = vec![
        CheckSpec::GwMoments {
            offspring: None,
            r: 1.0,
            t: 1.0,
            n_reps: 100_000,
            z_max: 4.0,
            geometric_fit: true,
            p_min: 1e-3,
        },
        CheckSpec::GwMoments {
            offspring: Some(
                [("0".to_string(), 0.25), ("2".to_string(), 0.75)]
                    .into_iter()
                    .collect(),
            ),
            r: 1.0,
            t: 1.0,
            n_reps: 100_000,
            z_max: 4.0,
            geometric_fit: false,
            p_min: 1e-3,
        },
        CheckSpec::WLaw {
            r: 1.0,
            t: 8.0,
            n_reps: 10_000,
            ks_max: 0.02,
            z_max: 4.0,
            fast_path: true,
        },
        CheckSpec::ManyToOneFixed {
            model: bm.clone(),
            f: Some(TestFn::Square),
            window: None,
            t: 2.0,
            n_tree: 100_000,
            n_spine: 100_000,
            z_max: 4.0,
            closed_form: None,
        },
        CheckSpec::ManyToOneFixed {
            model: equal.clone(),
            f: Some(TestFn::Identity),
            window: None,
            t: 2.0,
            n_tree: 100_000,
            n_spine: 100_000,
            z_max: 4.0,
            closed_form: Some((-2.0f64).exp()),
        },
        CheckSpec::ManyToOneFixed {
            model: local_ou.clone(),
            f: Some(TestFn::Square),
            window: None,
            t: 2.0,
            n_tree: 50_000,
            n_spine: 50_000,
            z_max: 4.0,
            closed_form: None,
        },
        CheckSpec::ManyToOneTree {
            model: bm.clone(),
            f: TreeFnSpec::ExpWeightedSquare,
            horizon: 2.0,
            n_tree: 100_000,
            n_spine: 100_000,
            quad_points: 64,
            z_max: 4.0,
        },
        CheckSpec::ManyToOneTree {
            model: bm.clone(),
            f: TreeFnSpec::DeathCount,
            horizon: 2.0,
            n_tree: 100_000,
            n_spine: 10_000,
            quad_points: 64,
            z_max: 1.0,
        },
        CheckSpec::ManyToOneTree {
            model: subcritical,
            f: TreeFnSpec::DeathCount,
            horizon: 2.0,
            n_tree: 100_000,
            n_spine: 10_000,
            quad_points: 64,
            z_max: 4.0,
        },
        CheckSpec::Fork {
            model: bm.clone(),
            f: TestFn::One,
            g: TestFn::One,
            t: 1.0,
            n_tree: 100_000,
            n_rhs: 100_000,
            z_max: 4.0,
            closed_form: Some(fork_ones_exact),
        },
        CheckSpec::Fork {
            model: bm.clone(),
            f: TestFn::Identity,
            g: TestFn::Identity,
            t: 1.0,
            n_tree: 100_000,
            n_rhs: 200_000,
            z_max: 4.0,
            closed_form: Some(fork_identity_exact),
        },
        CheckSpec::LlnAlive {
            model: ou.clone(),
            t_list: vec![2.0, 4.0, 6.0, 10.0],
            n_reps: 200,
            stationary: Default::default(),
            ks_max: 0.02,
            trend_slack: 0.004,
            z_max: 4.0,
            battery: vec![
                TestFn::One,
                TestFn::Identity,
                TestFn::Square,
                TestFn::GaussBump,
                TestFn::Band,
            ],
        },
        CheckSpec::LlnAliveControl {
            model: local_ou,
            t: 10.0,
            n_reps: 200,
            ks_max: 0.02,
            target_mean: 0.0,
            target_sd: 0.5f64.sqrt(),
        },
        CheckSpec::LlnDead {
            model: ou,
            t: 12.0,
            n_reps: 200,
            stationary: Default::default(),
            z_max: 4.0,
            battery: vec![TestFn::One, TestFn::Square],
        },
        CheckSpec::LlnDeadPath {
            model: equal.clone(),
            t: 12.0,
            n_reps: 100,
            stationary: Default::default(),
            z_max: 4.0,
            battery: vec![TestFn::GaussBump],
        },
        CheckSpec::LevyClt {
            model: ModelSpec::named("branching_levy"),
            t: 8.0,
            n_reps: 1_500,
            z_max: 4.0,
            var_tol_rel: 0.05,
            ks_max: 0.02,
        },
        CheckSpec::Fluctuation {
            model: bm.clone(),
            window_start: 1.0,
            t: 1.0,
            grid_step: 1.0 / 256.0,
            n_reps: 10_000,
            z_max: 4.0,
            var_tol_rel: 0.10,
            stationary: Some(crate::config::StationarySpec {
                burn_in: 200.0,
                run_length: 5_000.0,
                sample_dt: 0.25,
                batches: 32,
                bound: 1e9,
            }),
        },
        CheckSpec::SeScaling {
            model: bm,
            t: 1.0,
            n_reps: 10_000,
            ratio_tol: 0.20,
        },
    ];

    ExperimentConfig {
        seed,
        jobs: None,
        out_dir: None,
        suite: Some("paper-core".into()),
        simulate: None,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_round_trips() {
        let cfg = default_suite(1);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(format!("{cfg:?}"), format!("{back:?}"));
    }

    #[test]
    fn empty_check_list_passes() {
        let cfg = ExperimentConfig {
            seed: 1,
            jobs: None,
            out_dir: None,
            suite: None,
            simulate: None,
            checks: vec![],
        };
        let out = run_suite(&cfg, 2, None).unwrap();
        assert!(out.all_pass);
        assert!(out.reports.is_empty());
    }

    #[test]
    fn check_errors_are_recorded_not_fatal() {
        let cfg = ExperimentConfig {
            seed: 1,
            jobs: None,
            out_dir: None,
            suite: None,
            simulate: None,
            checks: vec![CheckSpec::LlnDead {
                model: {
                    let mut m = ModelSpec::named("yule_equal_split");
                    m.overrides.offspring = Some(
                        [("0".to_string(), 0.75), ("2".to_string(), 0.25)]
                            .into_iter()
                            .collect(),
                    );
                    m
                },
                t: 1.0,
                n_reps: 4,
                stationary: Default::default(),
                z_max: 4.0,
                battery: vec![TestFn::One],
            }],
        };
        let out = run_suite(&cfg, 2, None).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(!out.all_pass);
        assert!(out.reports[0].meta["error"].contains("supercritical"));
    }

    #[test]
    fn filter_selects_by_name_and_keeps_seed() {
        let mut cfg = default_suite(9);
        cfg.checks.truncate(3); // moments + w_law only, keep it fast
        let full = run_suite(&cfg, 2, None).unwrap();
        let only = run_suite(&cfg, 2, Some("w_law")).unwrap();
        let full_wlaw: Vec<_> = full
            .reports
            .iter()
            .filter(|r| r.name.starts_with("w_law"))
            .collect();
        assert_eq!(only.reports.len(), full_wlaw.len());
        for (a, b) in only.reports.iter().zip(full_wlaw) {
            assert_eq!(a.lhs.mean.to_bits(), b.lhs.mean.to_bits());
        }
    }
}
