//! Iteration loop: plan a route at every arrival, track each edge with the
//! low-level controller, and fold the finished iteration into the learned
//! quantities before starting the next one from the depot.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ControllerConfig, RunConfig};
use crate::dynamics::{check_constraints_with_slack, AgentState, Capacities, DynamicsConfig, NUM_CAPACITIES, TIME};
use crate::error::{Error, Result};
use crate::high_level::{
    fallback_plan, next_node, solve_high_level, stored_route_plan, validate_plan, HighLevelPlan, PlanningContext,
};
use crate::learning::{EdgeTrajectory, HighSafeSet, LearningStore, LowSafeSet, ThetaEstimate};
use crate::low_level::{track_edge, EdgeProblem};
use crate::motion::{drive_until_arrival, edge_inputs};
use crate::oracle::validate_alg2;
use crate::task_graph::{Edge, NodeId, TaskGraph};
use crate::trajectory::{capacity_change, count_task_nodes, HighLevelState, IterationRecord};

/// Slack on every feasibility comparison made by the loop.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetric {
    pub i: NodeId,
    pub j: NodeId,
    pub steps: usize,
    pub soc: f64,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub tasks: usize,
    pub nodes: Vec<NodeId>,
    pub total_soc: f64,
    pub total_time: f64,
    pub steps: usize,
    pub edges: Vec<EdgeMetric>,
    /// Objective of the plan used at each event.
    pub objectives: Vec<usize>,
    pub low_solves: usize,
    pub low_improvements: usize,
}

impl IterationMetrics {
    fn from_record(rec: &IterationRecord, depot: NodeId) -> Self {
        let nodes = rec.node_sequence();
        let total = rec.total_capacity_change();
        IterationMetrics {
            iteration: rec.iteration,
            tasks: count_task_nodes(nodes.iter().copied(), depot),
            nodes,
            total_soc: total[0],
            total_time: total[1],
            steps: rec.inputs.len(),
            edges: rec
                .edge_traversals()
                .into_iter()
                .map(|((i, j), range)| {
                    let omega = capacity_change(&rec.states[range.t0], &rec.states[range.tf]);
                    EdgeMetric {
                        i,
                        j,
                        steps: range.steps(),
                        soc: omega[0],
                        time: omega[1],
                    }
                })
                .collect(),
            objectives: Vec::new(),
            low_solves: 0,
            low_improvements: 0,
        }
    }
}

/// Loop state between and during iterations.
#[derive(Clone, Debug)]
pub struct Runner {
    pub graph: TaskGraph,
    pub dynamics: DynamicsConfig,
    pub controller: ControllerConfig,
    pub learning: LearningStore,
    /// Conservative trajectory generated for every edge before iteration 0.
    pub init_trajectories: BTreeMap<Edge, EdgeTrajectory>,
    /// `archive[r]` is iteration `r`; iteration 0 is the initial one.
    pub archive: Vec<IterationRecord>,
    /// Plans used at each event, per iteration.
    pub plans: Vec<Vec<HighLevelPlan>>,
    pub metrics: Vec<IterationMetrics>,
}

fn start_state(graph: &TaskGraph) -> AgentState {
    AgentState::new([0.0; NUM_CAPACITIES], graph.anchor_chi(graph.depot()))
}

fn edge_seed(seed: u64, iteration: usize, event: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (event as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

fn fits(c: &Capacities, limits: &Capacities, margin: f64) -> bool {
    (0..NUM_CAPACITIES).all(|l| c[l] <= limits[l] - margin)
}

fn add(c: &Capacities, t: &Capacities) -> Capacities {
    std::array::from_fn(|l| c[l] + t[l])
}

/// Conservative trajectory for every edge, each from node `i`'s anchor with
/// zero capacities into node `j`'s region.
pub fn conservative_trajectories(cfg: &DynamicsConfig, graph: &TaskGraph) -> Result<BTreeMap<Edge, EdgeTrajectory>> {
    let mut out = BTreeMap::new();
    let mut errs = Vec::new();
    for (i, j) in graph.edges() {
        let x0 = AgentState::new([0.0; NUM_CAPACITIES], graph.anchor_chi(i));
        let inputs = match edge_inputs(cfg, graph, &x0, i, j, cfg.init_velocity_cap) {
            Ok(inputs) => inputs,
            Err(Error::Config(e)) => {
                errs.extend(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let Some((states, inputs)) = drive_until_arrival(cfg, graph, &x0, &inputs, j) else {
            errs.push(format!("edge [{i}, {j}]: conservative motion never enters node {j}"));
            continue;
        };
        let clean = states.iter().zip(inputs.iter().map(Some).chain([None])).all(|(x, u)| {
            let mut x = *x;
            x.c = [0.0; NUM_CAPACITIES];
            check_constraints_with_slack(cfg, &x, u, FEASIBILITY_SLACK).is_empty()
        });
        if !clean {
            errs.push(format!("edge [{i}, {j}]: conservative motion violates the state or input bounds"));
            continue;
        }
        out.insert((i, j), EdgeTrajectory::from_traversal((i, j), 0, &states, &inputs));
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errs))
    }
}

/// Route back to the depot through nodes not in `visited`, with the fewest
/// edges (ties: lexicographically smallest), keeping capacities below the
/// limits by `margin`.
fn return_route(
    graph: &TaskGraph,
    theta: &ThetaEstimate,
    limits: &Capacities,
    margin: f64,
    from: NodeId,
    caps: &Capacities,
    visited: &BTreeSet<NodeId>,
) -> Option<Vec<NodeId>> {
    fn dfs(
        graph: &TaskGraph,
        theta: &ThetaEstimate,
        limits: &Capacities,
        margin: f64,
        depth: usize,
        path: &mut Vec<NodeId>,
        caps: Capacities,
        visited: &BTreeSet<NodeId>,
    ) -> bool {
        let here = *path.last().expect("non-empty");
        let depot = graph.depot();
        for j in graph.neighbors(here).expect("valid node") {
            if j != depot && (visited.contains(&j) || path.contains(&j)) {
                continue;
            }
            let next = add(&caps, &theta.edge(here, j));
            if !fits(&next, limits, margin) {
                continue;
            }
            if j == depot {
                if depth == 1 {
                    path.push(j);
                    return true;
                }
                continue;
            }
            if depth > 1 {
                path.push(j);
                if dfs(graph, theta, limits, margin, depth - 1, path, next, visited) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    if from == graph.depot() {
        return Some(vec![from]);
    }
    for depth in 1..graph.node_count() {
        let mut path = vec![from];
        if dfs(graph, theta, limits, margin, depth, &mut path, *caps, visited) {
            return Some(path);
        }
    }
    None
}

/// Initial route: repeatedly drive to the nearest unvisited neighbour whose
/// edge still leaves a return route to the depot, then return.
pub fn greedy_route(graph: &TaskGraph, theta: &ThetaEstimate, limits: &Capacities) -> Vec<NodeId> {
    let margin = 1e-6;
    let depot = graph.depot();
    let mut route = vec![depot];
    let mut caps = [0.0; NUM_CAPACITIES];
    let mut visited = BTreeSet::from([depot]);
    loop {
        let here = *route.last().expect("non-empty");
        let mut candidates: Vec<NodeId> = graph
            .neighbors(here)
            .expect("valid node")
            .into_iter()
            .filter(|j| !visited.contains(j))
            .collect();
        candidates.sort_by(|a, b| graph.distance(here, *a).total_cmp(&graph.distance(here, *b)).then(a.cmp(b)));
        let chosen = candidates.into_iter().find_map(|j| {
            let next = add(&caps, &theta.edge(here, j));
            if !fits(&next, limits, margin) {
                return None;
            }
            let mut v = visited.clone();
            v.insert(j);
            return_route(graph, theta, limits, margin, j, &next, &v).map(|_| (j, next))
        });
        match chosen {
            Some((j, next)) => {
                route.push(j);
                caps = next;
                visited.insert(j);
            }
            None => {
                if here != depot {
                    let back = return_route(graph, theta, limits, margin, here, &caps, &visited)
                        .expect("every committed node keeps a return route");
                    route.extend_from_slice(&back[1..]);
                }
                return route;
            }
        }
    }
}

impl Runner {
    /// Builds the conservative edge trajectories, the initial iteration and
    /// the learned quantities for iteration 1.
    pub fn initialize(graph: TaskGraph, dynamics: DynamicsConfig, controller: ControllerConfig) -> Result<Runner> {
        let mut errs = dynamics.validate();
        errs.extend(controller.validate());
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let limits = dynamics.capacity_limits;
        let depot = graph.depot();
        let init = conservative_trajectories(&dynamics, &graph)?;
        let mut theta = ThetaEstimate::new(1);
        for (edge, traj) in &init {
            theta.observe(*edge, traj.omega());
        }
        let route = greedy_route(&graph, &theta, &limits);

        let mut rec = IterationRecord::start(0, start_state(&graph), depot);
        for w in route.windows(2) {
            let traj = &init[&(w[0], w[1])];
            let x0 = *rec.last_state();
            let (states, inputs) = drive_until_arrival(&dynamics, &graph, &x0, &traj.inputs, w[1])
                .ok_or_else(|| Error::Initialization(format!("replay of edge ({}, {}) missed the node", w[0], w[1])))?;
            for (u, x) in inputs.into_iter().zip(states.into_iter().skip(1)) {
                rec.push_step(u, x);
            }
            rec.push_event(w[1]);
        }
        rec.complete = true;
        check_record(&dynamics, &rec, depot)?;

        let mut low = LowSafeSet::default();
        for traj in init.values() {
            low.insert(traj.clone());
        }
        let mut learning = LearningStore {
            theta_history: vec![theta],
            high: HighSafeSet::default(),
            low,
        };
        // the first estimate also covers the initial iteration
        let theta = crate::learning::update_theta(learning.theta(), &rec);
        learning.theta_history[0].values = theta.values;
        let theta = learning.theta().clone();
        learning.high.push_iteration(0, &rec.node_sequence(), &theta, &limits, depot)?;
        learning.low = crate::learning::update_low_safe_set(&learning.low, &rec);

        let metrics = vec![IterationMetrics::from_record(&rec, depot)];
        let runner = Runner {
            graph,
            dynamics,
            controller,
            learning,
            init_trajectories: init,
            archive: vec![rec],
            plans: vec![Vec::new()],
            metrics,
        };
        runner.verify_learning()?;
        Ok(runner)
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Runner> {
        cfg.validate()?;
        Runner::initialize(cfg.task_graph()?, cfg.dynamics.clone(), cfg.controller.clone())
    }

    pub fn iteration(&self) -> usize {
        self.archive.len() - 1
    }

    /// Runs one iteration from the depot and applies the learning updates.
    pub fn run_iteration(&mut self) -> Result<&IterationRecord> {
        let r = self.archive.len();
        let graph = &self.graph;
        let depot = graph.depot();
        let limits = self.dynamics.capacity_limits;
        let ctx = PlanningContext {
            graph,
            theta: self.learning.theta(),
            safe_set: &self.learning.high,
            limits: &limits,
            cfg: self.controller.high_level(),
        };
        let low_cfg = self.controller.low_level();
        let step_budget = (limits[TIME] / self.dynamics.dt).ceil() as usize;

        let mut rec = IterationRecord::start(r, start_state(graph), depot);
        let mut visited = BTreeSet::from([depot]);
        let mut plans: Vec<HighLevelPlan> = Vec::new();
        let mut metrics_solves = 0;
        let mut metrics_improvements = 0;
        let mut here = depot;
        for k in 0.. {
            let x = *rec.last_state();
            let state = HighLevelState { node: here, c: x.c };
            let plan = if k == 0 {
                let stored = stored_route_plan(&ctx, r - 1, &x.c)?;
                if self.controller.improver_high {
                    let sol = solve_high_level(&ctx, &state, &visited)?;
                    if sol.objective < stored.objective {
                        return Err(Error::Invariant(format!(
                            "iteration {r}: planner objective {} below the stored route's {}",
                            sol.objective, stored.objective
                        )));
                    }
                    sol
                } else {
                    stored
                }
            } else {
                let fallback = fallback_plan(&ctx, plans.last().expect("previous plan"), &x.c, &visited)?;
                if self.controller.improver_high {
                    let sol = solve_high_level(&ctx, &state, &visited)?;
                    if sol.objective < fallback.objective {
                        return Err(Error::Invariant(format!(
                            "iteration {r} event {k}: planner objective {} below the fallback's {}",
                            sol.objective, fallback.objective
                        )));
                    }
                    sol
                } else {
                    fallback
                }
            };
            let problems = validate_plan(&ctx, &plan, &state, &visited);
            if !problems.is_empty() {
                return Err(Error::Invariant(format!(
                    "iteration {r} event {k}: inadmissible plan {:?}: {}",
                    plan.path,
                    problems.join("; ")
                )));
            }
            if plan.path.len() == 1 {
                plans.push(plan);
                break;
            }
            let next = next_node(&plan)?;
            plans.push(plan);

            let stored = self
                .learning
                .low
                .get((here, next))
                .ok_or_else(|| Error::Invariant(format!("no stored trajectory for edge ({here}, {next})")))?;
            let problem = EdgeProblem {
                dynamics: &self.dynamics,
                graph,
                edge: (here, next),
                stored,
                theta: ctx.theta.edge(here, next),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(edge_seed(self.controller.seed, r, k));
            let run = track_edge(&problem, &low_cfg, &x, &mut rng)?;
            metrics_solves += run.solves;
            metrics_improvements += run.improvements;
            for (u, x) in run.inputs.into_iter().zip(run.states.into_iter().skip(1)) {
                rec.push_step(u, x);
            }
            rec.push_event(next);
            if rec.inputs.len() > step_budget {
                return Err(Error::Invariant(format!("iteration {r} exceeded {step_budget} steps")));
            }
            if next == depot {
                break;
            }
            visited.insert(next);
            here = next;
        }
        rec.complete = true;
        check_record(&self.dynamics, &rec, depot)?;

        self.learning.absorb(&rec, &limits, depot)?;
        let mut m = IterationMetrics::from_record(&rec, depot);
        m.objectives = plans.iter().map(|p| p.objective).collect();
        m.low_solves = metrics_solves;
        m.low_improvements = metrics_improvements;
        self.metrics.push(m);
        self.plans.push(plans);
        self.archive.push(rec);
        self.verify_learning()?;
        Ok(self.archive.last().expect("just pushed"))
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            self.run_iteration()?;
        }
        Ok(())
    }

    /// Every stored ceiling still certifies a return to the depot under the
    /// current estimate, and every stored route's ceilings pass the forward
    /// check under the estimate they were built with.
    pub fn verify_learning(&self) -> Result<()> {
        let limits = self.dynamics.capacity_limits;
        let unsound = self.learning.high.unsound_entries(self.learning.theta(), &limits, FEASIBILITY_SLACK);
        if !unsound.is_empty() {
            return Err(Error::Invariant(format!("safe-set entries {unsound:?} no longer certify a return")));
        }
        for (p, route) in &self.learning.high.routes {
            let theta = &self.learning.theta_history[*p];
            let ceilings: Vec<Capacities> = (0..route.len())
                .map(|k| {
                    self.learning
                        .high
                        .find(*p, k)
                        .map(|idx| self.learning.high.entries[idx].cap_ceiling)
                        .ok_or_else(|| Error::Invariant(format!("route {p} lacks entry {k}")))
                })
                .collect::<Result<_>>()?;
            if !validate_alg2(route, theta, &limits, &ceilings, 1e-12) {
                return Err(Error::Invariant(format!("ceilings of route {p} fail the forward check")));
            }
        }
        Ok(())
    }

    pub fn tasks(&self) -> Vec<usize> {
        self.metrics.iter().map(|m| m.tasks).collect()
    }
}

/// A finished iteration starts and ends at the depot and respects every
/// bound at every step.
fn check_record(cfg: &DynamicsConfig, rec: &IterationRecord, depot: NodeId) -> Result<()> {
    let r = rec.iteration;
    let nodes = rec.node_sequence();
    if nodes.first() != Some(&depot) || nodes.last() != Some(&depot) {
        return Err(Error::Invariant(format!("iteration {r} route {nodes:?} is not depot to depot")));
    }
    for (t, x) in rec.states.iter().enumerate() {
        let report = check_constraints_with_slack(cfg, x, rec.inputs.get(t), FEASIBILITY_SLACK);
        if !report.is_empty() {
            return Err(Error::Invariant(format!("iteration {r} step {t}: {report}")));
        }
    }
    Ok(())
}

/// Initializes from `cfg` and runs its configured number of iterations.
pub fn run(cfg: &RunConfig) -> Result<Runner> {
    let mut runner = Runner::from_config(cfg)?;
    runner.run(cfg.run.iterations)?;
    Ok(runner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_graph::{GraphSpec, NodeSpec, ToleranceSpec};

    fn square() -> RunConfig {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 8.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 3, x: 8.0, y: 8.0, heading: 0.0 },
                NodeSpec { id: 4, x: 0.0, y: 8.0, heading: 0.0 },
            ],
            edges: vec![[1, 2], [2, 3], [3, 4], [4, 1], [1, 3]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        RunConfig::new(spec)
    }

    #[test]
    fn improvers_off_replay_exactly() {
        let mut cfg = square();
        cfg.controller.set_improvers(false);
        let mut runner = Runner::from_config(&cfg).unwrap();
        runner.run(2).unwrap();
        let a = &runner.archive;
        for r in 1..a.len() {
            assert_eq!(a[r].node_sequence(), a[r - 1].node_sequence());
            assert_eq!(a[r].states, a[r - 1].states);
            assert_eq!(runner.learning.theta_history[r].values, runner.learning.theta_history[r - 1].values);
        }
    }

    #[test]
    fn improvers_on_keep_tasks_and_feasibility() {
        let cfg = square();
        let mut runner = Runner::from_config(&cfg).unwrap();
        runner.run(3).unwrap();
        let tasks = runner.tasks();
        assert!(tasks.windows(2).all(|w| w[0] <= w[1]), "{tasks:?}");
        assert_eq!(*tasks.last().unwrap(), 3);
        for rec in &runner.archive {
            assert!(rec.complete);
            let c = rec.last_state().c;
            assert!(c[0] <= 100.0 + 1e-9 && c[1] <= 120.0 + 1e-9);
        }
        let first = runner.metrics[0].steps;
        let last = runner.metrics.last().unwrap().steps;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn same_seed_same_archive() {
        let cfg = square();
        let mut a = Runner::from_config(&cfg).unwrap();
        let mut b = Runner::from_config(&cfg).unwrap();
        a.run(2).unwrap();
        b.run(2).unwrap();
        assert_eq!(a.archive, b.archive);
    }

    #[test]
    fn greedy_respects_capacity() {
        let cfg = square();
        let graph = cfg.task_graph().unwrap();
        let mut theta = ThetaEstimate::new(1);
        for (i, j) in graph.edges() {
            theta.values.insert((i, j), [30.0, 1.0]);
        }
        // three edges fit, four do not: one task then home is the only safe greedy
        let route = greedy_route(&graph, &theta, &[100.0, 120.0]);
        assert_eq!(route.first(), Some(&1));
        assert_eq!(route.last(), Some(&1));
        assert!(route.len() - 1 <= 3, "{route:?}");
        assert_eq!(route, vec![1, 2, 3, 1]);
    }
}
