//! Experiment configuration: a single TOML file with the model, the check
//! list and run-wide settings. Unknown keys are rejected; the file
//! round-trips losslessly through serialization.

use crate::auxiliary::StationaryRun;
use crate::error::SimError;
use crate::models::Overrides;
use crate::verify::TestFn;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// A catalog model plus overrides.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        ModelSpec {
            name: name.into(),
            overrides: Overrides::default(),
        }
    }

    pub fn build(&self) -> Result<(crate::BranchingModel, Vec<String>)> {
        crate::models::build(&self.name, &self.overrides)
    }
}

/// Stationary-run settings (defaults match [`StationaryRun::default`]).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySpec {
    #[serde(default = "d_burn_in")]
    pub burn_in: f64,
    #[serde(default = "d_run_length")]
    pub run_length: f64,
    #[serde(default = "d_sample_dt")]
    pub sample_dt: f64,
    #[serde(default = "d_batches")]
    pub batches: usize,
    #[serde(default = "d_bound")]
    pub bound: f64,
}

fn d_burn_in() -> f64 {
    1_000.0
}
fn d_run_length() -> f64 {
    10_000.0
}
fn d_sample_dt() -> f64 {
    0.25
}
fn d_batches() -> usize {
    32
}
fn d_bound() -> f64 {
    1e9
}

impl Default for StationarySpec {
    fn default() -> Self {
        StationarySpec {
            burn_in: d_burn_in(),
            run_length: d_run_length(),
            sample_dt: d_sample_dt(),
            batches: d_batches(),
            bound: d_bound(),
        }
    }
}

impl From<StationarySpec> for StationaryRun {
    fn from(s: StationarySpec) -> Self {
        StationaryRun {
            burn_in: s.burn_in,
            run_length: s.run_length,
            sample_dt: s.sample_dt,
            batches: s.batches,
            bound: s.bound,
        }
    }
}

fn d_z_max() -> f64 {
    4.0
}
fn d_ks_max() -> f64 {
    0.02
}
fn d_rate() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}
fn d_quad_points() -> usize {
    64
}
fn d_max_nodes() -> usize {
    1_000_000
}

/// One verification check with its parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Moments of the alive and dead counts against closed forms.
    GwMoments {
        #[serde(default)]
        offspring: Option<BTreeMap<String, f64>>,
        #[serde(default = "d_rate")]
        r: f64,
        t: f64,
        n_reps: u64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default)]
        geometric_fit: bool,
        #[serde(default = "d_p_min")]
        p_min: f64,
    },
    /// Exponential limit of `N_t / E[N_t]` for the binary tree.
    WLaw {
        #[serde(default = "d_rate")]
        r: f64,
        t: f64,
        n_reps: u64,
        #[serde(default = "d_ks_max")]
        ks_max: f64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_true")]
        fast_path: bool,
    },
    /// Fixed-time population sum vs spine expectation.
    ManyToOneFixed {
        model: ModelSpec,
        #[serde(default)]
        f: Option<TestFn>,
        /// Use the branch-in-window indicator instead of a state function.
        #[serde(default)]
        window: Option<f64>,
        t: f64,
        n_tree: u64,
        n_spine: u64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default)]
        closed_form: Option<f64>,
    },
    /// Whole-tree death sum vs the weighted time integral of the spine.
    ManyToOneTree {
        model: ModelSpec,
        f: TreeFnSpec,
        horizon: f64,
        n_tree: u64,
        n_spine: u64,
        #[serde(default = "d_quad_points")]
        quad_points: usize,
        #[serde(default = "d_z_max")]
        z_max: f64,
    },
    /// Fork pair sums vs the two-legged spine.
    Fork {
        model: ModelSpec,
        f: TestFn,
        g: TestFn,
        t: f64,
        n_tree: u64,
        n_rhs: u64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default)]
        closed_form: Option<f64>,
    },
    /// Alive-population law of large numbers against the stationary oracle.
    LlnAlive {
        model: ModelSpec,
        t_list: Vec<f64>,
        n_reps: u64,
        #[serde(default)]
        stationary: StationarySpec,
        #[serde(default = "d_ks_max")]
        ks_max: f64,
        #[serde(default = "d_trend_slack")]
        trend_slack: f64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_battery")]
        battery: Vec<TestFn>,
    },
    /// Local-birth control: population law vs the motion's own Gaussian.
    LlnAliveControl {
        model: ModelSpec,
        t: f64,
        n_reps: u64,
        #[serde(default = "d_ks_max")]
        ks_max: f64,
        target_mean: f64,
        target_sd: f64,
    },
    /// Dead-population law of large numbers.
    LlnDead {
        model: ModelSpec,
        t: f64,
        n_reps: u64,
        #[serde(default)]
        stationary: StationarySpec,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_battery")]
        battery: Vec<TestFn>,
    },
    /// Lifetime-path variant with the `J1` target.
    LlnDeadPath {
        model: ModelSpec,
        t: f64,
        n_reps: u64,
        #[serde(default)]
        stationary: StationarySpec,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_battery_bounded")]
        battery: Vec<TestFn>,
    },
    /// Spatial CLT of branching Lévy motion.
    LevyClt {
        model: ModelSpec,
        t: f64,
        n_reps: u64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_var_tol")]
        var_tol_rel: f64,
        #[serde(default = "d_ks_max")]
        ks_max: f64,
    },
    /// Martingale bracket of the fluctuation process.
    Fluctuation {
        model: ModelSpec,
        window_start: f64,
        t: f64,
        grid_step: f64,
        n_reps: u64,
        #[serde(default = "d_z_max")]
        z_max: f64,
        #[serde(default = "d_var_tol10")]
        var_tol_rel: f64,
        #[serde(default)]
        stationary: Option<StationarySpec>,
    },
    /// Reported standard errors shrink like `1/sqrt(n)`.
    SeScaling {
        model: ModelSpec,
        t: f64,
        n_reps: u64,
        #[serde(default = "d_se_ratio_tol")]
        ratio_tol: f64,
    },
}

fn d_p_min() -> f64 {
    1e-3
}
fn d_trend_slack() -> f64 {
    0.004
}
fn d_var_tol() -> f64 {
    0.05
}
fn d_var_tol10() -> f64 {
    0.10
}
fn d_se_ratio_tol() -> f64 {
    0.20
}
fn d_battery() -> Vec<TestFn> {
    vec![TestFn::One, TestFn::Identity, TestFn::Square, TestFn::GaussBump]
}
fn d_battery_bounded() -> Vec<TestFn> {
    vec![TestFn::GaussBump]
}

/// Whole-tree functional names.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TreeFnSpec {
    DeathCount,
    ExpWeightedSquare,
}

/// Snapshot-simulation settings for the `simulate` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub model: ModelSpec,
    pub horizon: f64,
    pub n_reps: u64,
    /// Observation times for the snapshot CSV.
    #[serde(default)]
    pub observe: Vec<f64>,
    /// Also dump the genealogy of the first replicas.
    #[serde(default)]
    pub dump_trees: usize,
    #[serde(default = "d_max_nodes")]
    pub max_nodes: usize,
}

/// Full experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub suite: Option<String>,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_losslessly() {
        let cfg = ExperimentConfig {
            seed: 7,
            jobs: Some(4),
            out_dir: Some("out".into()),
            suite: None,
            simulate: None,
            checks: vec![
                CheckSpec::WLaw {
                    r: 1.0,
                    t: 8.0,
                    n_reps: 1000,
                    ks_max: 0.02,
                    z_max: 4.0,
                    fast_path: true,
                },
                CheckSpec::Fork {
                    model: ModelSpec::named("yule_splitted_bm"),
                    f: TestFn::Identity,
                    g: TestFn::Identity,
                    t: 1.0,
                    n_tree: 100,
                    n_rhs: 100,
                    z_max: 4.0,
                    closed_form: None,
                },
            ],
        };
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(format!("{cfg:?}"), format!("{back:?}"));
        let text2 = back.to_toml().unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, SimError::Config(_)), "{err}");
        let err = ExperimentConfig::from_toml(
            "seed = 1\n[[checks]]\nkind = \"w_law\"\nt = 8.0\nn_reps = 10\nnope = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Config(_)), "{err}");
    }

    #[test]
    fn comments_and_arrays_parse() {
        let text = r#"
# experiment seed
seed = 42

[[checks]]
kind = "lln_alive"
t_list = [2.0, 4.0, 6.0, 10.0]   # observation times
n_reps = 10
[checks.model]
name = "yule_splitted_ou"
[checks.model.overrides]
sigma = 1.0
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 42);
        match &cfg.checks[0] {
            CheckSpec::LlnAlive { t_list, model, .. } => {
                assert_eq!(t_list.len(), 4);
                assert_eq!(model.overrides.sigma, Some(1.0));
            }
            other => panic!("wrong spec {other:?}"),
        }
    }
}
