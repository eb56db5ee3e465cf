//! Event-driven route planner.
//!
//! At every arrival the planner searches all paths of at most `horizon`
//! edges from the current node. A path is admissible when
//!
//! 1. consecutive nodes are graph edges and the depot appears only as the
//!    last node (or the first, when starting there);
//! 2. no non-depot node repeats, and none was already visited this iteration;
//! 3. capacities predicted by adding the depletion estimate per edge stay
//!    within the limits at every node;
//! 4. the last node carries a stored safe-set entry whose ceiling dominates
//!    the predicted capacities there;
//! 5. that entry's remaining route shares no node with the path or with the
//!    nodes already visited.
//!
//! The objective counts the new nodes on the path plus the entry's remaining
//! task count. The search is exhaustive, so the result is exactly optimal;
//! ties go to the lexicographically smallest path.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Capacities, NUM_CAPACITIES};
use crate::error::{Error, Result};
use crate::learning::{HighSafeSet, ThetaEstimate};
use crate::task_graph::{NodeId, TaskGraph};
use crate::trajectory::HighLevelState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLevelConfig {
    pub horizon: usize,
    /// Absolute tolerance on capacity comparisons.
    pub slack: f64,
}

impl Default for HighLevelConfig {
    fn default() -> Self {
        HighLevelConfig {
            horizon: 3,
            slack: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLevelPlan {
    pub path: Vec<NodeId>,
    pub predicted_caps: Vec<Capacities>,
    /// Index into the safe set's entries.
    pub terminal_entry: usize,
    pub objective: usize,
}

impl HighLevelPlan {
    pub fn edges(&self) -> usize {
        self.path.len() - 1
    }
}

/// Everything the planner needs besides the current state.
#[derive(Clone, Copy)]
pub struct PlanningContext<'a> {
    pub graph: &'a TaskGraph,
    pub theta: &'a ThetaEstimate,
    pub safe_set: &'a HighSafeSet,
    pub limits: &'a Capacities,
    pub cfg: HighLevelConfig,
}

impl PlanningContext<'_> {
    fn depot(&self) -> NodeId {
        self.graph.depot()
    }

    fn within_limits(&self, c: &Capacities) -> bool {
        c.iter().zip(self.limits).all(|(c, lim)| *c <= *lim + self.cfg.slack)
    }

    fn add_edge(&self, c: &Capacities, i: NodeId, j: NodeId) -> Capacities {
        let t = self.theta.edge(i, j);
        std::array::from_fn(|l| c[l] + t[l])
    }

    /// Best admissible terminal entry for a path ending at `path.last()` with
    /// predicted capacities `c`: highest remaining task count, then lowest
    /// index.
    fn best_terminal(&self, path: &[NodeId], c: &Capacities, visited: &BTreeSet<NodeId>) -> Option<(usize, usize)> {
        let last = *path.last()?;
        let depot = self.depot();
        let mut best: Option<(usize, usize)> = None;
        for (idx, e) in self.safe_set.entries_at(last) {
            let fits = (0..NUM_CAPACITIES).all(|l| c[l] <= e.cap_ceiling[l] + self.cfg.slack);
            if !fits {
                continue;
            }
            let clashes = e
                .suffix_nodes
                .iter()
                .any(|n| path.contains(n) || (*n != depot && visited.contains(n)));
            if clashes {
                continue;
            }
            if best.is_none_or(|(_, count)| e.suffix_task_count > count) {
                best = Some((idx, e.suffix_task_count));
            }
        }
        best
    }

    fn new_nodes(&self, path: &[NodeId], visited: &BTreeSet<NodeId>) -> usize {
        path[1..]
            .iter()
            .filter(|&&n| n != self.depot() && !visited.contains(&n))
            .count()
    }
}

struct Search<'a, 'b> {
    ctx: &'b PlanningContext<'a>,
    visited: &'b BTreeSet<NodeId>,
    max_suffix: usize,
    path: Vec<NodeId>,
    caps: Vec<Capacities>,
    best: Option<HighLevelPlan>,
}

impl Search<'_, '_> {
    fn run(&mut self) {
        let node = *self.path.last().expect("path has a start");
        let depth = self.path.len() - 1;
        let c = *self.caps.last().expect("caps has a start");
        if depth >= 1 {
            if let Some((entry, count)) = self.ctx.best_terminal(&self.path, &c, self.visited) {
                let objective = self.ctx.new_nodes(&self.path, self.visited) + count;
                if self.best.as_ref().is_none_or(|b| objective > b.objective) {
                    self.best = Some(HighLevelPlan {
                        path: self.path.clone(),
                        predicted_caps: self.caps.clone(),
                        terminal_entry: entry,
                        objective,
                    });
                }
            }
            if node == self.ctx.depot() {
                return;
            }
        }
        if depth == self.ctx.cfg.horizon {
            return;
        }
        let bound = self.ctx.new_nodes(&self.path, self.visited) + (self.ctx.cfg.horizon - depth) + self.max_suffix;
        if self.best.as_ref().is_some_and(|b| bound <= b.objective) {
            return;
        }
        let depot = self.ctx.depot();
        for &j in self.ctx.graph.neighbor_set(node) {
            if j != depot && (self.visited.contains(&j) || self.path.contains(&j)) {
                continue;
            }
            let next = self.ctx.add_edge(&c, node, j);
            if !self.ctx.within_limits(&next) {
                continue;
            }
            self.path.push(j);
            self.caps.push(next);
            self.run();
            self.path.pop();
            self.caps.pop();
        }
    }
}

/// Exactly optimal admissible plan from `state`.
pub fn solve_high_level(ctx: &PlanningContext, state: &HighLevelState, visited: &BTreeSet<NodeId>) -> Result<HighLevelPlan> {
    if !ctx.graph.is_valid(state.node) {
        return Err(Error::Input(format!("node {} outside the graph", state.node)));
    }
    if ctx.safe_set.is_empty() {
        return Err(Error::Initialization("high-level safe set is empty".into()));
    }
    let mut search = Search {
        ctx,
        visited,
        max_suffix: ctx.safe_set.entries.iter().map(|e| e.suffix_task_count).max().unwrap_or(0),
        path: vec![state.node],
        caps: vec![state.c],
        best: None,
    };
    search.run();
    if let Some(plan) = search.best {
        return Ok(plan);
    }
    // Nothing reachable: staying put is only meaningful at the depot.
    if state.node == ctx.depot() {
        if let Some((entry, count)) = ctx.best_terminal(&[state.node], &state.c, visited) {
            return Ok(HighLevelPlan {
                path: vec![state.node],
                predicted_caps: vec![state.c],
                terminal_entry: entry,
                objective: count,
            });
        }
    }
    Err(Error::NoFeasiblePlan {
        node: state.node,
        detail: format!("capacities {:?}, visited {:?}", state.c, visited),
    })
}

/// The node to drive to next.
pub fn next_node(plan: &HighLevelPlan) -> Result<NodeId> {
    plan.path
        .get(1)
        .copied()
        .ok_or_else(|| Error::Protocol("plan has no edge".into()))
}

fn predict(ctx: &PlanningContext, path: &[NodeId], start: &Capacities) -> Vec<Capacities> {
    let mut caps = vec![*start];
    for w in path.windows(2) {
        let next = ctx.add_edge(caps.last().expect("non-empty"), w[0], w[1]);
        caps.push(next);
    }
    caps
}

/// The previous plan shifted by one event: its first edge is dropped and the
/// stored successor of its terminal entry is appended.
pub fn fallback_plan(
    ctx: &PlanningContext,
    prev: &HighLevelPlan,
    arrived_caps: &Capacities,
    visited: &BTreeSet<NodeId>,
) -> Result<HighLevelPlan> {
    if prev.path.len() < 2 {
        return Err(Error::Protocol("cannot shift a plan without edges".into()));
    }
    let mut path = prev.path[1..].to_vec();
    let entry = &ctx.safe_set.entries[prev.terminal_entry];
    let terminal_entry = match entry.next_entry {
        Some(next) => {
            path.push(ctx.safe_set.entries[next].node);
            next
        }
        None => prev.terminal_entry,
    };
    let predicted_caps = predict(ctx, &path, arrived_caps);
    let objective = ctx.new_nodes(&path, visited) + ctx.safe_set.entries[terminal_entry].suffix_task_count;
    Ok(HighLevelPlan {
        path,
        predicted_caps,
        terminal_entry,
        objective,
    })
}

/// Plan that follows the first `horizon` edges of the route stored for
/// iteration `p`.
pub fn stored_route_plan(ctx: &PlanningContext, p: usize, start: &Capacities) -> Result<HighLevelPlan> {
    let route = ctx
        .safe_set
        .routes
        .get(&p)
        .ok_or_else(|| Error::Initialization(format!("no stored route for iteration {p}")))?;
    let k = ctx.cfg.horizon.min(route.len() - 1);
    let path = route[..=k].to_vec();
    let terminal_entry = ctx
        .safe_set
        .find(p, k)
        .ok_or_else(|| Error::Invariant(format!("route {p} has no entry for event {k}")))?;
    let predicted_caps = predict(ctx, &path, start);
    let objective = ctx.new_nodes(&path, &BTreeSet::from([path[0]])) + ctx.safe_set.entries[terminal_entry].suffix_task_count;
    Ok(HighLevelPlan {
        path,
        predicted_caps,
        terminal_entry,
        objective,
    })
}

/// Checks every admissibility condition of `plan` from scratch. Returns the
/// list of problems found.
pub fn validate_plan(
    ctx: &PlanningContext,
    plan: &HighLevelPlan,
    state: &HighLevelState,
    visited: &BTreeSet<NodeId>,
) -> Vec<String> {
    let mut errs = Vec::new();
    let depot = ctx.depot();
    let path = &plan.path;
    if path.first() != Some(&state.node) {
        errs.push(format!("path starts at {:?}, agent is at {}", path.first(), state.node));
        return errs;
    }
    if path.len() - 1 > ctx.cfg.horizon {
        errs.push(format!("path has {} edges, horizon is {}", path.len() - 1, ctx.cfg.horizon));
    }
    let mut seen = BTreeSet::new();
    for (idx, w) in path.windows(2).enumerate() {
        if !ctx.graph.has_edge(w[0], w[1]) {
            errs.push(format!("({}, {}) is not an edge", w[0], w[1]));
            return errs;
        }
        let n = w[1];
        if n == depot && idx + 2 != path.len() {
            errs.push("depot inside the path".into());
        }
        if n != depot && (visited.contains(&n) || !seen.insert(n)) {
            errs.push(format!("node {n} revisited"));
        }
    }
    let mut c = state.c;
    for (idx, w) in path.windows(2).enumerate() {
        let t = ctx.theta.edge(w[0], w[1]);
        for l in 0..NUM_CAPACITIES {
            c[l] += t[l];
            if c[l] > ctx.limits[l] + ctx.cfg.slack {
                errs.push(format!("capacity {l} exceeds its limit at path node {}", idx + 1));
            }
        }
    }
    if plan.predicted_caps.last() != Some(&c) {
        errs.push("predicted capacities disagree with the estimate".into());
    }
    let Some(entry) = ctx.safe_set.entries.get(plan.terminal_entry) else {
        errs.push("terminal entry missing".into());
        return errs;
    };
    if entry.node != *path.last().expect("non-empty") {
        errs.push("terminal entry is at a different node".into());
    }
    if (0..NUM_CAPACITIES).any(|l| c[l] > entry.cap_ceiling[l] + ctx.cfg.slack) {
        errs.push("terminal capacities exceed the entry ceiling".into());
    }
    for n in &entry.suffix_nodes {
        if path.contains(n) || visited.contains(n) {
            errs.push(format!("stored remainder revisits node {n}"));
        }
    }
    let new = path[1..].iter().filter(|&&n| n != depot && !visited.contains(&n)).count();
    if new + entry.suffix_task_count != plan.objective {
        errs.push(format!(
            "objective {} differs from recomputed {}",
            plan.objective,
            new + entry.suffix_task_count
        ));
    }
    errs
}

/// Binary edge-selection matrix of a plan: `m[i-1][j-1] = 1` when the plan
/// drives `i -> j`.
pub fn route_matrix(plan: &HighLevelPlan, node_count: usize) -> Vec<Vec<u8>> {
    let mut m = vec![vec![0u8; node_count]; node_count];
    for w in plan.path.windows(2) {
        m[w[0] - 1][w[1] - 1] = 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Interval;
    use crate::task_graph::{GraphSpec, NodeSpec, ToleranceSpec};

    fn graph(points: &[(f64, f64)], edges: &[[NodeId; 2]]) -> TaskGraph {
        let spec = GraphSpec {
            nodes: points
                .iter()
                .enumerate()
                .map(|(k, &(x, y))| NodeSpec { id: k + 1, x, y, heading: 0.0 })
                .collect(),
            edges: edges.to_vec(),
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        // headings are irrelevant here; widen the tolerance check by using
        // bearings that are either exact or far off
        TaskGraph::from_spec(&spec, Interval::new(-4.0, 4.0)).unwrap()
    }

    fn uniform_theta(g: &TaskGraph, soc: f64) -> ThetaEstimate {
        let mut t = ThetaEstimate::new(1);
        for e in g.edges() {
            t.values.insert(e, [soc, 1.0]);
        }
        t
    }

    fn line_graph() -> TaskGraph {
        graph(
            &[(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0)],
            &[[1, 2], [2, 3], [3, 4], [4, 1]],
        )
    }

    #[test]
    fn line_graph_visits_both() {
        let g = line_graph();
        let theta = uniform_theta(&g, 10.0);
        let limits = [100.0, 120.0];
        let mut safe = HighSafeSet::default();
        safe.push_iteration(0, &[1, 2, 1], &theta, &limits, 1).unwrap();
        let ctx = PlanningContext {
            graph: &g,
            theta: &theta,
            safe_set: &safe,
            limits: &limits,
            cfg: HighLevelConfig { horizon: 4, slack: 1e-9 },
        };
        let start = HighLevelState { node: 1, c: [0.0, 0.0] };
        let plan = solve_high_level(&ctx, &start, &BTreeSet::from([1])).unwrap();
        assert_eq!(plan.objective, 3);
        assert_eq!(plan.path, vec![1, 2, 3, 4, 1]);
        assert!(validate_plan(&ctx, &plan, &start, &BTreeSet::from([1])).is_empty());
        assert_eq!(next_node(&plan).unwrap(), 2);
        assert_eq!(route_matrix(&plan, 4)[1][2], 1);
    }

    #[test]
    fn unaffordable_edges_leave_only_staying_put() {
        let g = line_graph();
        let theta = uniform_theta(&g, 150.0);
        let limits = [100.0, 120.0];
        let mut safe = HighSafeSet::default();
        safe.push_iteration(0, &[1], &theta, &limits, 1).unwrap();
        let ctx = PlanningContext {
            graph: &g,
            theta: &theta,
            safe_set: &safe,
            limits: &limits,
            cfg: HighLevelConfig::default(),
        };
        let plan = solve_high_level(&ctx, &HighLevelState { node: 1, c: [0.0; 2] }, &BTreeSet::from([1])).unwrap();
        assert_eq!(plan.path, vec![1]);
        assert_eq!(plan.objective, 0);
        assert!(next_node(&plan).is_err());
    }

    #[test]
    fn fallback_shifts_and_appends_successor() {
        let g = graph(
            &[(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (20.0, 10.0), (10.0, 10.0)],
            &[[1, 2], [2, 3], [3, 4], [4, 5], [5, 1]],
        );
        let theta = uniform_theta(&g, 5.0);
        let limits = [100.0, 120.0];
        let mut safe = HighSafeSet::default();
        safe.push_iteration(0, &[1, 2, 3, 4, 5, 1], &theta, &limits, 1).unwrap();
        let ctx = PlanningContext {
            graph: &g,
            theta: &theta,
            safe_set: &safe,
            limits: &limits,
            cfg: HighLevelConfig::default(),
        };
        let start = HighLevelState { node: 1, c: [0.0; 2] };
        let plan = stored_route_plan(&ctx, 0, &start.c).unwrap();
        assert_eq!(plan.path, vec![1, 2, 3, 4]);
        assert!(validate_plan(&ctx, &plan, &start, &BTreeSet::from([1])).is_empty());
        // arrive with less than predicted
        let arrived = [4.0, 0.5];
        let visited = BTreeSet::from([1, 2]);
        let fb = fallback_plan(&ctx, &plan, &arrived, &visited).unwrap();
        assert_eq!(fb.path, vec![2, 3, 4, 5]);
        let here = HighLevelState { node: 2, c: arrived };
        assert!(validate_plan(&ctx, &fb, &here, &visited).is_empty());
        let best = solve_high_level(&ctx, &here, &visited).unwrap();
        assert!(best.objective >= fb.objective);

        // run the fallback chain to the end: the last plan ends at the depot
        let mut p = fb;
        let mut visited = visited;
        while p.path.len() > 2 {
            visited.insert(p.path[1]);
            p = fallback_plan(&ctx, &p, &p.predicted_caps[1].clone(), &visited).unwrap();
        }
        assert_eq!(p.path.last(), Some(&1));
    }

    #[test]
    fn validator_catches_tampering() {
        let g = line_graph();
        let theta = uniform_theta(&g, 10.0);
        let limits = [100.0, 120.0];
        let mut safe = HighSafeSet::default();
        safe.push_iteration(0, &[1, 2, 1], &theta, &limits, 1).unwrap();
        let ctx = PlanningContext {
            graph: &g,
            theta: &theta,
            safe_set: &safe,
            limits: &limits,
            cfg: HighLevelConfig::default(),
        };
        let start = HighLevelState { node: 1, c: [0.0; 2] };
        let mut plan = solve_high_level(&ctx, &start, &BTreeSet::from([1])).unwrap();
        plan.objective += 1;
        assert!(!validate_plan(&ctx, &plan, &start, &BTreeSet::from([1])).is_empty());
    }
}
