//! Brute-force references for tests: exhaustive route search, a forward check
//! of capacity ceilings, and closed-form straight-line motion.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Capacities, Chi, DynamicsConfig, NUM_CAPACITIES};
use crate::error::{Error, Result};
use crate::learning::ThetaEstimate;
use crate::task_graph::{NodeId, TaskGraph};

pub const MAX_ORACLE_NODES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRoute {
    pub nodes: Vec<NodeId>,
    pub caps: Vec<Capacities>,
    pub tasks: usize,
}

/// Best depot-to-depot route under `theta`, by enumeration.
///
/// Admissible routes are the ones the planner can produce: the depot only at
/// both ends, every other node at most once, capacities within `limits`
/// (plus `slack`) at every node. The route `[depot]` (stay) is always
/// admissible. Ties go to the lexicographically smallest node sequence.
pub fn brute_force_route(graph: &TaskGraph, theta: &ThetaEstimate, limits: &Capacities, slack: f64) -> Result<OracleRoute> {
    if graph.node_count() > MAX_ORACLE_NODES {
        return Err(Error::Refused(format!(
            "exhaustive route search is limited to {MAX_ORACLE_NODES} nodes, graph has {}",
            graph.node_count()
        )));
    }
    let depot = graph.depot();
    let mut best = OracleRoute {
        nodes: vec![depot],
        caps: vec![[0.0; NUM_CAPACITIES]],
        tasks: 0,
    };
    let mut nodes = vec![depot];
    let mut caps = vec![[0.0; NUM_CAPACITIES]];
    enumerate(graph, theta, limits, slack, &mut nodes, &mut caps, &mut best);
    Ok(best)
}

fn enumerate(
    graph: &TaskGraph,
    theta: &ThetaEstimate,
    limits: &Capacities,
    slack: f64,
    nodes: &mut Vec<NodeId>,
    caps: &mut Vec<Capacities>,
    best: &mut OracleRoute,
) {
    let depot = graph.depot();
    let here = *nodes.last().expect("non-empty");
    for j in graph.neighbors(here).expect("valid node") {
        if j != depot && nodes.contains(&j) {
            continue;
        }
        let t = theta.edge(here, j);
        let c = caps.last().expect("non-empty");
        let next: Capacities = std::array::from_fn(|l| c[l] + t[l]);
        if (0..NUM_CAPACITIES).any(|l| next[l] > limits[l] + slack) {
            continue;
        }
        nodes.push(j);
        caps.push(next);
        if j == depot {
            let tasks = nodes.len() - 2;
            if tasks > best.tasks || (tasks == best.tasks && nodes[..] < best.nodes[..]) {
                *best = OracleRoute {
                    nodes: nodes.clone(),
                    caps: caps.clone(),
                    tasks,
                };
            }
        } else {
            enumerate(graph, theta, limits, slack, nodes, caps, best);
        }
        nodes.pop();
        caps.pop();
    }
}

/// True iff walking the route forward from each ceiling (events `k >= 1`)
/// with `theta` per edge stays within `limits` and lands on the limit at the
/// final depot, and the first ceiling is zero. Comparisons use `tol`
/// relative to the limit.
pub fn validate_alg2(nodes: &[NodeId], theta: &ThetaEstimate, limits: &Capacities, ceilings: &[Capacities], tol: f64) -> bool {
    if nodes.len() != ceilings.len() || nodes.is_empty() {
        return false;
    }
    if ceilings[0] != [0.0; NUM_CAPACITIES] {
        return false;
    }
    for k in 1..nodes.len() {
        let mut c = ceilings[k];
        for w in nodes[k..].windows(2) {
            let Some(t) = theta.get(w[0], w[1]) else {
                return false;
            };
            for l in 0..NUM_CAPACITIES {
                c[l] += t[l];
                if c[l] > limits[l] * (1.0 + tol) + tol {
                    return false;
                }
            }
        }
        let exact = (0..NUM_CAPACITIES).all(|l| (c[l] - limits[l]).abs() <= tol * limits[l].max(1.0));
        if !exact {
            return false;
        }
    }
    true
}

/// State after `t` steps of input `(0, a)` from the origin heading along the
/// positive `z` axis with speed `v0` and zero capacities, in closed form.
/// No bound is applied to the speed.
pub fn straight_line_state(cfg: &DynamicsConfig, v0: f64, a: f64, t: usize) -> AgentState {
    let dt = cfg.dt;
    let n = t as f64;
    // position uses the speed before each update: sum_{k<t} (v0 + k a dt) dt
    let z = dt * (n * v0 + a * dt * n * (n - 1.0) / 2.0);
    AgentState::new([cfg.alpha * z, n * dt], Chi::new(z, 0.0, 0.0, v0 + a * n * dt))
}

/// The set of nodes visited by a route, without the depot.
pub fn task_set(nodes: &[NodeId], depot: NodeId) -> BTreeSet<NodeId> {
    nodes.iter().copied().filter(|&n| n != depot).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{check_constraints, rollout, ControlInput, Interval};
    use crate::learning::backpropagate_capacities;
    use crate::task_graph::{GraphSpec, NodeSpec, ToleranceSpec};

    fn triangle() -> TaskGraph {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 10.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 3, x: 5.0, y: 8.0, heading: 0.0 },
            ],
            edges: vec![[1, 2], [2, 3], [3, 1]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        TaskGraph::from_spec(&spec, Interval::new(-4.0, 4.0)).unwrap()
    }

    fn theta_for(g: &TaskGraph, f: impl Fn(NodeId, NodeId) -> f64) -> ThetaEstimate {
        let mut t = ThetaEstimate::new(1);
        for (i, j) in g.edges() {
            t.values.insert((i, j), [f(i, j), 1.0]);
        }
        t
    }

    #[test]
    fn triangle_full_tour() {
        let g = triangle();
        let r = brute_force_route(&g, &theta_for(&g, |_, _| 10.0), &[100.0, 120.0], 0.0).unwrap();
        assert_eq!(r.tasks, 2);
        assert_eq!(r.nodes, vec![1, 2, 3, 1]);
    }

    #[test]
    fn avoids_unaffordable_edge() {
        let g = triangle();
        let theta = theta_for(&g, |i, j| if (i, j) == (1, 2) { 150.0 } else { 10.0 });
        let r = brute_force_route(&g, &theta, &[100.0, 120.0], 0.0).unwrap();
        assert_eq!(r.tasks, 2);
        assert_eq!(r.nodes, vec![1, 3, 2, 1]);
    }

    #[test]
    fn refuses_large_graphs() {
        let nodes: Vec<NodeSpec> = (0..9)
            .map(|k| NodeSpec { id: k + 1, x: 10.0 * k as f64, y: 0.0, heading: 0.0 })
            .collect();
        let edges = (1..9).map(|k| [k, k + 1]).collect();
        let spec = GraphSpec {
            nodes,
            edges,
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        let g = TaskGraph::from_spec(&spec, Interval::new(-4.0, 4.0)).unwrap();
        let theta = theta_for(&g, |_, _| 1.0);
        assert!(matches!(brute_force_route(&g, &theta, &[100.0, 120.0], 0.0), Err(Error::Refused(_))));
    }

    #[test]
    fn alg2_forward_check() {
        let mut theta = ThetaEstimate::new(1);
        theta.values.insert((1, 2), [10.0, 1.0]);
        theta.values.insert((2, 6), [20.0, 1.0]);
        theta.values.insert((6, 1), [30.0, 1.0]);
        let nodes = [1, 2, 6, 1];
        let limits = [100.0, 100.0];
        let c = backpropagate_capacities(&nodes, &theta, &limits).unwrap();
        assert!(validate_alg2(&nodes, &theta, &limits, &c, 1e-12));
        let all_c = vec![[0.0, 0.0], limits, limits, limits];
        assert!(!validate_alg2(&nodes, &theta, &limits, &all_c, 1e-12));
        let single = [[0.0, 0.0], limits];
        assert!(validate_alg2(&[1, 2], &theta, &limits, &single, 1e-12));
        // ceiling of the last task node is the limit minus the final edge
        let last_leg = [[0.0, 0.0], [100.0 - 20.0, 100.0 - 1.0], limits];
        assert!(validate_alg2(&[1, 2, 6], &theta, &limits, &last_leg, 1e-12));
    }

    #[test]
    fn closed_form_matches_rollout() {
        let cfg = DynamicsConfig::default();
        let x0 = AgentState::new([0.0, 0.0], Chi::new(0.0, 0.0, 0.0, 2.0));
        let s = rollout(&cfg, &x0, &[ControlInput::ZERO; 10]);
        let oracle = straight_line_state(&cfg, 2.0, 0.0, 10);
        assert!((oracle.chi.z - 2.0).abs() < 1e-12 && (oracle.c[0] - 3.2).abs() < 1e-12);
        assert!((s[10].chi.z - oracle.chi.z).abs() < 1e-12);
        assert_eq!(straight_line_state(&cfg, 1.5, 0.7, 0), AgentState::new([0.0, 0.0], Chi::new(0.0, 0.0, 0.0, 1.5)));
        let fast = straight_line_state(&cfg, 4.0, 2.0, 10);
        assert!(fast.chi.v > 5.0);
        assert!(!check_constraints(&cfg, &fast, None).is_empty());
    }
}
