//! Result files written after a run. Everything is produced from ordered
//! containers with shortest round-trip float formatting, so identical runs
//! give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::Runner;

#[derive(Serialize)]
struct SummaryRow {
    iteration: usize,
    tasks: usize,
    total_soc: f64,
    total_time: f64,
    steps: usize,
}

#[derive(Serialize)]
struct EdgeRow {
    iteration: usize,
    i: usize,
    j: usize,
    steps: usize,
    soc: f64,
    time: f64,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes the run's files into `out_dir` and returns their paths:
///
/// - `summary.csv`: one row per iteration, the initial one included
/// - `edges.csv`: every edge traversal with its step count and depletion
/// - `iteration_<r>.csv` / `iteration_<r>.json`: trajectory and record
/// - `theta_<r>.csv`: the depletion estimate used in iteration `r`
/// - `plans_<r>.json`: the route plans used at each arrival
/// - `safe_set_high.json`, `safe_set_low.json` when `dump_learning` is set
pub fn emit_outputs(runner: &Runner, out_dir: &Path, dump_learning: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = out_dir.join(name);
        write(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    let csv_err = |name: &str, e: csv::Error| Error::io(out_dir.join(name), std::io::Error::other(e));

    let summary = runner.metrics.iter().map(|m| SummaryRow {
        iteration: m.iteration,
        tasks: m.tasks,
        total_soc: m.total_soc,
        total_time: m.total_time,
        steps: m.steps,
    });
    put("summary.csv".into(), csv_bytes(summary).map_err(|e| csv_err("summary.csv", e))?)?;

    let edges = runner.metrics.iter().flat_map(|m| {
        m.edges.iter().map(|e| EdgeRow {
            iteration: m.iteration,
            i: e.i,
            j: e.j,
            steps: e.steps,
            soc: e.soc,
            time: e.time,
        })
    });
    put("edges.csv".into(), csv_bytes(edges).map_err(|e| csv_err("edges.csv", e))?)?;

    for (rec, metrics) in runner.archive.iter().zip(&runner.metrics) {
        let r = rec.iteration;
        let mut trajectory = Vec::new();
        rec.write_csv(&mut trajectory)
            .map_err(|e| Error::io(out_dir.join(format!("iteration_{r}.csv")), e))?;
        put(format!("iteration_{r}.csv"), trajectory)?;
        #[derive(Serialize)]
        struct IterationDump<'a> {
            metrics: &'a crate::orchestrator::IterationMetrics,
            record: &'a crate::trajectory::IterationRecord,
        }
        put(format!("iteration_{r}.json"), json_bytes(&IterationDump { metrics, record: rec }))?;
        if r > 0 {
            put(format!("plans_{r}.json"), json_bytes(&runner.plans[r]))?;
        }
    }

    for theta in &runner.learning.theta_history {
        let name = format!("theta_{}.csv", theta.iteration);
        let bytes = csv_bytes(theta.rows()).map_err(|e| csv_err(&name, e))?;
        put(name, bytes)?;
    }

    if dump_learning {
        put("safe_set_high.json".into(), json_bytes(&runner.learning.high))?;
        put("safe_set_low.json".into(), json_bytes(&runner.learning.low))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::task_graph::{GraphSpec, NodeSpec, ToleranceSpec};

    fn runner() -> Runner {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 6.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 3, x: 6.0, y: 5.0, heading: 0.0 },
            ],
            edges: vec![[1, 2], [2, 3], [3, 1]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        let mut r = Runner::from_config(&RunConfig::new(spec)).unwrap();
        r.run(2).unwrap();
        r
    }

    #[test]
    fn files_are_complete_and_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = emit_outputs(&runner(), a.path(), true).unwrap();
        emit_outputs(&runner(), b.path(), true).unwrap();
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?}");
        }
        let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + 3);
        assert!(summary.starts_with("iteration,tasks,total_soc,total_time"));
        for name in ["theta_1.csv", "theta_3.csv", "plans_2.json", "iteration_0.json", "safe_set_low.json"] {
            assert!(a.path().join(name).exists(), "{name}");
        }
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = emit_outputs(&runner(), &blocker.join("sub"), false).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }
}
