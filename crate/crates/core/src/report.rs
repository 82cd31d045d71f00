//! Report files and exports: the JSON check report, the human-readable
//! summary table, tidy CSV plot data, and population snapshot/genealogy
//! exports for the `simulate` subcommand.
//!
//! Reports contain no timestamps or host information: a rerun with the same
//! config and seed produces byte-identical files at any parallelism degree.

use crate::branching_sim::simulate_population;
use crate::config::SimulateSpec;
use crate::error::SimError;
use crate::gw_tree::Caps;
use crate::rng::StreamKey;
use crate::verify::{CheckReport, SuiteOutcome};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Top-level report: one entry per check line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub seed: u64,
    pub passed: usize,
    pub total: usize,
    pub checks: Vec<CheckReport>,
}

impl Report {
    pub fn new(suite: &str, seed: u64, outcome: SuiteOutcome) -> Self {
        let passed = outcome.reports.iter().filter(|r| r.pass).count();
        Report {
            suite: suite.to_string(),
            seed,
            passed,
            total: outcome.reports.len(),
            checks: outcome.reports,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.passed == self.total
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| SimError::Config(format!("bad report: {e}")))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json_bytes())?;
        Ok(())
    }

    /// Fixed-width summary, one line per check.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        out.push_str(&format!(
            "{:<name_w$}  {:>4}  {:>12}  {:>12}  {:>8}  result\n",
            "name", "kind", "lhs", "rhs", "stat"
        ));
        for c in &self.checks {
            let stat = if c.z.0.is_finite() {
                format!("{:.3}", c.z.0)
            } else {
                "inf".into()
            };
            out.push_str(&format!(
                "{:<name_w$}  {:>4}  {:>12.5e}  {:>12.5e}  {:>8}  {}\n",
                c.name,
                c.kind,
                c.lhs.mean,
                c.rhs.mean,
                stat,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(&format!("{}/{} checks passed\n", self.passed, self.total));
        out
    }
}

/// Which plot-data series to emit.
pub fn emit_plot_data(report: &Report, which: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let wants = |name: &str| which == "all" || which == name;
    let known = ["lln", "qq", "w_hist", "all"];
    if !known.contains(&which) {
        return Err(SimError::UnknownSeries(which.to_string()));
    }

    if wants("lln") {
        if let Some((check, plot)) = find_plot(report, "lln_ks_vs_t") {
            let path = out_dir.join("lln_ks_vs_t.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "t,ks_distance")?;
            for &(x, y) in &plot.points {
                writeln!(f, "{x},{y}")?;
            }
            drop(f);
            let _ = check;
            written.push(path);
        }
    }
    if wants("qq") {
        if let Some((_, plot)) = find_plot(report, "clt_qq") {
            let path = out_dir.join("clt_qq.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "theoretical,empirical")?;
            for &(x, y) in &plot.points {
                writeln!(f, "{x},{y}")?;
            }
            written.push(path);
        }
    }
    if wants("w_hist") {
        if let Some((_, plot)) = find_plot(report, "w_histogram") {
            let path = out_dir.join("w_histogram.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "bin_left,mass")?;
            for &(x, y) in &plot.points {
                writeln!(f, "{x},{y}")?;
            }
            written.push(path);
        }
    }
    if which == "all" {
        // combined long format: series,x,y
        let path = out_dir.join("plots.csv");
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "series,x,y")?;
        for check in &report.checks {
            for plot in &check.plots {
                for &(x, y) in &plot.points {
                    writeln!(f, "{},{x},{y}", plot.name)?;
                }
            }
        }
        written.push(path);
    }
    Ok(written)
}

fn find_plot<'a>(
    report: &'a Report,
    name: &str,
) -> Option<(&'a CheckReport, &'a crate::verify::PlotSeries)> {
    for check in &report.checks {
        for plot in &check.plots {
            if plot.name == name {
                return Some((check, plot));
            }
        }
    }
    None
}

/// Run population snapshots and write the exports:
/// `snapshots.csv` with rows `replica,label,t,state[,type]`, and optional
/// genealogy dumps `tree_<replica>.tsv`.
pub fn run_simulate(spec: &SimulateSpec, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (model, warnings) = spec.model.build()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out_dir)?;
    let caps = Caps {
        max_nodes: spec.max_nodes,
    };
    let mut observe = spec.observe.clone();
    observe.sort_by(f64::total_cmp);
    observe.retain(|&t| t <= spec.horizon);
    let two_type = spec.model.name == "cellular_aging";

    let snap_path = out_dir.join("snapshots.csv");
    let mut out = std::fs::File::create(&snap_path)?;
    if two_type {
        writeln!(out, "replica,label,t,state,type")?;
    } else {
        writeln!(out, "replica,label,t,state")?;
    }
    let mut written = vec![snap_path];

    for rep in 0..spec.n_reps {
        let pop = simulate_population(&model, spec.horizon, caps, StreamKey::replica(seed, rep))?;
        if !observe.is_empty() {
            let snaps = pop.alive_states(&observe)?;
            for (t, snap) in observe.iter().zip(&snaps) {
                for &(idx, state) in snap {
                    let label = pop.tree.label_of(idx);
                    if two_type {
                        writeln!(out, "{rep},{label},{t},{},{}", state.x, state.tag)?;
                    } else {
                        writeln!(out, "{rep},{label},{t},{}", state.x)?;
                    }
                }
            }
        }
        if (rep as usize) < spec.dump_trees {
            let path = out_dir.join(format!("tree_{rep}.tsv"));
            let mut f = std::fs::File::create(&path)?;
            pop.tree.dump(&mut f)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelSpec;

    #[test]
    fn report_json_round_trip_is_byte_stable() {
        let outcome = SuiteOutcome {
            reports: vec![CheckReport::bound_test("a/b", "ks", 0.01, 0.02)],
            all_pass: true,
        };
        let report = Report::new("demo", 5, outcome);
        let a = report.to_json_bytes();
        let back = Report::from_json_bytes(&a).unwrap();
        let b = back.to_json_bytes();
        assert_eq!(a, b);
        assert!(back.all_pass());
    }

    #[test]
    fn unknown_series_rejected() {
        let report = Report::new(
            "demo",
            1,
            SuiteOutcome {
                reports: vec![],
                all_pass: true,
            },
        );
        let dir = std::env::temp_dir().join("treemc_plot_test");
        assert!(matches!(
            emit_plot_data(&report, "nope", &dir),
            Err(SimError::UnknownSeries(_))
        ));
    }

    #[test]
    fn simulate_exports_snapshots_and_trees() {
        let spec = SimulateSpec {
            model: ModelSpec::named("yule_splitted_bm"),
            horizon: 1.5,
            n_reps: 3,
            observe: vec![0.5, 1.0, 1.5],
            dump_trees: 2,
            max_nodes: 100_000,
        };
        let dir = std::env::temp_dir().join("treemc_sim_test");
        let _ = std::fs::remove_dir_all(&dir);
        let files = run_simulate(&spec, 11, &dir).unwrap();
        assert_eq!(files.len(), 3);
        let csv = std::fs::read_to_string(&files[0]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "replica,label,t,state");
        assert!(lines.count() > 3);
        // identical rerun produces identical bytes
        let again_dir = std::env::temp_dir().join("treemc_sim_test2");
        let _ = std::fs::remove_dir_all(&again_dir);
        run_simulate(&spec, 11, &again_dir).unwrap();
        let csv2 = std::fs::read_to_string(again_dir.join("snapshots.csv")).unwrap();
        assert_eq!(csv, csv2);
    }
}
