#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hlmpc::config::{load_config, RunConfig};
use hlmpc::dynamics::{check_constraints_with_slack, Capacities, Interval, NUM_CAPACITIES};
use hlmpc::oracle::validate_alg2;
use hlmpc::orchestrator::Runner;
use hlmpc::scenarios::{random_graph_spec, GraphParams};
use hlmpc::task_graph::{Edge, GraphSpec};
use hlmpc::trajectory::capacity_change;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SLACK: f64 = 1e-9;

pub fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

pub fn example7() -> RunConfig {
    load_config(asset("example7.json")).expect("bundled example loads")
}

pub fn straight_edge() -> RunConfig {
    load_config(asset("straight_edge.json")).expect("bundled straight edge loads")
}

pub fn heading_bounds() -> Interval {
    Interval::new(-std::f64::consts::PI, std::f64::consts::PI)
}

/// Random graph `index` of the battery, with 4 to `max_nodes` nodes.
pub fn battery_graph(index: u64, max_nodes: usize) -> GraphSpec {
    let nodes = 4 + (index as usize % (max_nodes - 3));
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA77_0000 + index);
    random_graph_spec(&mut rng, &GraphParams::new(nodes), heading_bounds()).expect("generator finds a valid graph")
}

/// Consecutive traversals of the same edge where some capacity used went up
/// by more than the slack.
pub fn omega_violations(runner: &Runner) -> Vec<String> {
    let mut last: BTreeMap<Edge, (usize, Capacities)> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in &runner.archive {
        for (edge, range) in rec.edge_traversals() {
            let omega = capacity_change(&rec.states[range.t0], &rec.states[range.tf]);
            if let Some((r, prev)) = last.get(&edge) {
                for l in 0..NUM_CAPACITIES {
                    if omega[l] > prev[l] + SLACK {
                        out.push(format!(
                            "edge {edge:?} capacity {l}: {} at iteration {} after {} at iteration {r}",
                            omega[l], rec.iteration, prev[l]
                        ));
                    }
                }
            }
            last.insert(edge, (rec.iteration, omega));
        }
    }
    out
}

/// Incomplete iterations and bound violations at any step.
pub fn feasibility_violations(runner: &Runner) -> Vec<String> {
    let depot = runner.graph.depot();
    let mut out = Vec::new();
    for rec in &runner.archive {
        let nodes = rec.node_sequence();
        if !rec.complete || nodes.first() != Some(&depot) || nodes.last() != Some(&depot) {
            out.push(format!("iteration {} incomplete: {nodes:?}", rec.iteration));
        }
        for (t, x) in rec.states.iter().enumerate() {
            let report = check_constraints_with_slack(&runner.dynamics, x, rec.inputs.get(t), SLACK);
            if !report.is_empty() {
                out.push(format!("iteration {} step {t}: {report}", rec.iteration));
            }
        }
    }
    out
}

/// Stored routes whose ceilings fail the forward check under the estimate
/// they were built with. Returns the violations and the number of entries
/// checked.
pub fn alg2_violations(runner: &Runner) -> (Vec<String>, usize) {
    let high = &runner.learning.high;
    let limits = runner.dynamics.capacity_limits;
    let mut out = Vec::new();
    let mut checked = 0;
    for (p, route) in &high.routes {
        let ceilings: Vec<Capacities> = (0..route.len())
            .map(|k| high.entries[high.find(*p, k).expect("entry per event")].cap_ceiling)
            .collect();
        checked += ceilings.len();
        if !validate_alg2(route, &runner.learning.theta_history[*p], &limits, &ceilings, 1e-12) {
            out.push(format!("route {p} {route:?}"));
        }
    }
    (out, checked)
}

/// Initializes `cfg` and runs `iterations` iterations.
pub fn run(cfg: &RunConfig, iterations: usize) -> hlmpc::Result<Runner> {
    let mut runner = Runner::from_config(cfg)?;
    runner.run(iterations)?;
    Ok(runner)
}

/// Small random graph with a random depletion estimate and a safe set built
/// from the greedy route under that estimate.
pub fn oracle_instance(
    seed: u64,
) -> (
    hlmpc::task_graph::TaskGraph,
    hlmpc::learning::ThetaEstimate,
    hlmpc::learning::HighSafeSet,
) {
    use hlmpc::learning::{HighSafeSet, ThetaEstimate};
    use hlmpc::orchestrator::greedy_route;
    use hlmpc::task_graph::TaskGraph;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(0x0_5AC1E + seed);
    let nodes = rng.gen_range(3..=6);
    let spec = random_graph_spec(&mut rng, &GraphParams::new(nodes), heading_bounds()).expect("valid graph");
    let graph = TaskGraph::from_spec(&spec, heading_bounds()).expect("valid graph");
    let mut theta = ThetaEstimate::new(1);
    for (i, j) in graph.edges() {
        theta.values.insert((i, j), [rng.gen_range(5.0..45.0), rng.gen_range(2.0..30.0)]);
    }
    let limits = [100.0, 120.0];
    let route = greedy_route(&graph, &theta, &limits);
    let mut safe = HighSafeSet::default();
    safe.push_iteration(0, &route, &theta, &limits, graph.depot())
        .expect("greedy route is feasible");
    (graph, theta, safe)
}
