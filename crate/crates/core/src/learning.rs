//! Learned quantities carried between iterations: per-edge depletion bounds,
//! the high-level safe set built from completed routes, and the per-edge
//! low-level safe sets built from the latest traversals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Capacities, ControlInput, NUM_CAPACITIES};
use crate::error::{Error, Result};
use crate::task_graph::{Edge, NodeId, TaskGraph};
use crate::trajectory::{capacity_change, count_task_nodes, IterationRecord};

/// Smallest observed depletion per edge and capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub iteration: usize,
    pub values: BTreeMap<Edge, Capacities>,
}

/// One row of the serialized form of [`ThetaEstimate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub i: NodeId,
    pub j: NodeId,
    pub soc: f64,
    pub time: f64,
}

impl ThetaEstimate {
    pub fn new(iteration: usize) -> Self {
        ThetaEstimate {
            iteration,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> Option<&Capacities> {
        self.values.get(&(i, j))
    }

    /// Bound for an edge the estimate must cover.
    pub fn edge(&self, i: NodeId, j: NodeId) -> Capacities {
        match self.values.get(&(i, j)) {
            Some(v) => *v,
            None => panic!("no depletion estimate for edge ({i}, {j})"),
        }
    }

    /// Lowers the entry for `edge` to the component-wise minimum with `omega`.
    pub fn observe(&mut self, edge: Edge, omega: Capacities) {
        self.values
            .entry(edge)
            .and_modify(|cur| {
                for l in 0..NUM_CAPACITIES {
                    cur[l] = cur[l].min(omega[l]);
                }
            })
            .or_insert(omega);
    }

    /// Component-wise `self <= other + slack` on every edge of `other`.
    pub fn dominated_by(&self, other: &ThetaEstimate, slack: f64) -> bool {
        other.values.iter().all(|(e, o)| {
            self.values
                .get(e)
                .is_some_and(|s| s.iter().zip(o).all(|(a, b)| *a <= *b + slack))
        })
    }

    pub fn missing_edges(&self, graph: &TaskGraph) -> Vec<Edge> {
        graph
            .edges()
            .into_iter()
            .filter(|e| !self.values.contains_key(e))
            .collect()
    }

    pub fn rows(&self) -> Vec<ThetaRow> {
        self.values
            .iter()
            .map(|(&(i, j), c)| ThetaRow {
                i,
                j,
                soc: c[0],
                time: c[1],
            })
            .collect()
    }
}

/// Minimum depletion over every traversal in `records`, per edge. Every edge
/// of `graph` must have been traversed at least once.
pub fn theta_from_records(graph: &TaskGraph, records: &[IterationRecord], iteration: usize) -> Result<ThetaEstimate> {
    let mut theta = ThetaEstimate::new(iteration);
    for rec in records {
        observe_record(&mut theta, rec);
    }
    let missing = theta.missing_edges(graph);
    if missing.is_empty() {
        Ok(theta)
    } else {
        Err(Error::Initialization(format!("no depletion data for edges {missing:?}")))
    }
}

/// The estimate for the next iteration: `previous` lowered by every traversal
/// in `rec`. Edges not traversed keep their entries.
pub fn update_theta(previous: &ThetaEstimate, rec: &IterationRecord) -> ThetaEstimate {
    let mut theta = previous.clone();
    theta.iteration = previous.iteration + 1;
    observe_record(&mut theta, rec);
    theta
}

fn observe_record(theta: &mut ThetaEstimate, rec: &IterationRecord) {
    for (edge, range) in rec.edge_traversals() {
        theta.observe(edge, capacity_change(&rec.states[range.t0], &rec.states[range.tf]));
    }
}

/// The box `[0, upper]` per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaBound {
    pub upper: ThetaEstimate,
}

impl ThetaBound {
    pub fn contains(&self, edge: Edge, theta: &Capacities) -> bool {
        self.upper
            .get(edge.0, edge.1)
            .is_some_and(|u| theta.iter().zip(u).all(|(t, u)| *t >= 0.0 && *t <= *u))
    }

    /// `self` is a subset of `other`.
    pub fn is_subset_of(&self, other: &ThetaBound) -> bool {
        self.upper.dominated_by(&other.upper, 0.0) && other.upper.values.keys().eq(self.upper.values.keys())
    }
}

pub fn update_theta_bound(theta: &ThetaEstimate) -> ThetaBound {
    ThetaBound { upper: theta.clone() }
}

/// Largest capacities at each event of a depot-to-depot route from which the
/// rest of the route stays within `limits` when every edge consumes exactly
/// `theta`. The first entry is 0 and the last is `limits`.
pub fn backpropagate_capacities(nodes: &[NodeId], theta: &ThetaEstimate, limits: &Capacities) -> Result<Vec<Capacities>> {
    if nodes.is_empty() {
        return Err(Error::Input("empty node sequence".into()));
    }
    if nodes.len() == 1 {
        return Ok(vec![[0.0; NUM_CAPACITIES]]);
    }
    let k_last = nodes.len() - 1;
    let mut ceilings = vec![[0.0; NUM_CAPACITIES]; nodes.len()];
    ceilings[k_last] = *limits;
    for k in (1..k_last).rev() {
        let t = theta
            .get(nodes[k], nodes[k + 1])
            .ok_or_else(|| Error::Input(format!("no estimate for edge ({}, {})", nodes[k], nodes[k + 1])))?;
        for l in 0..NUM_CAPACITIES {
            let c = ceilings[k + 1][l] - t[l];
            if c < 0.0 {
                return Err(Error::InfeasibleRoute(format!(
                    "remaining route {:?} needs more than the limit of capacity {l}",
                    &nodes[k..]
                )));
            }
            ceilings[k][l] = c;
        }
    }
    Ok(ceilings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighSafeSetEntry {
    pub source_iteration: usize,
    pub event_index: usize,
    pub node: NodeId,
    pub cap_ceiling: Capacities,
    /// Non-depot nodes visited strictly after this event.
    pub suffix_nodes: BTreeSet<NodeId>,
    pub suffix_task_count: usize,
    /// Index of the entry for the following event of the same route.
    pub next_entry: Option<usize>,
}

/// Union of ceiling-annotated routes from all completed iterations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HighSafeSet {
    pub entries: Vec<HighSafeSetEntry>,
    /// Node sequence of every stored route, by source iteration.
    pub routes: BTreeMap<usize, Vec<NodeId>>,
}

impl HighSafeSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds the route of iteration `p`, annotated with ceilings computed under
    /// `theta` (the estimate formed after iteration `p`).
    pub fn push_iteration(
        &mut self,
        p: usize,
        nodes: &[NodeId],
        theta: &ThetaEstimate,
        limits: &Capacities,
        depot: NodeId,
    ) -> Result<()> {
        let ceilings = backpropagate_capacities(nodes, theta, limits)?;
        let base = self.entries.len();
        for (k, (&node, ceiling)) in nodes.iter().zip(&ceilings).enumerate() {
            let suffix = &nodes[k + 1..];
            let suffix_nodes: BTreeSet<NodeId> = suffix.iter().copied().filter(|&n| n != depot).collect();
            self.entries.push(HighSafeSetEntry {
                source_iteration: p,
                event_index: k,
                node,
                cap_ceiling: *ceiling,
                suffix_task_count: count_task_nodes(suffix.iter().copied(), depot),
                suffix_nodes,
                next_entry: (k + 1 < nodes.len()).then_some(base + k + 1),
            });
        }
        self.routes.insert(p, nodes.to_vec());
        Ok(())
    }

    /// Index of the entry for event `k` of iteration `p`.
    pub fn find(&self, p: usize, k: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.source_iteration == p && e.event_index == k)
    }

    pub fn entries_at(&self, node: NodeId) -> impl Iterator<Item = (usize, &HighSafeSetEntry)> {
        self.entries.iter().enumerate().filter(move |(_, e)| e.node == node)
    }

    /// Every entry whose suffix, walked from its ceiling with `theta`, leaves
    /// some capacity above its limit by more than `slack`.
    pub fn unsound_entries(&self, theta: &ThetaEstimate, limits: &Capacities, slack: f64) -> Vec<usize> {
        let mut bad = Vec::new();
        for (idx, e) in self.entries.iter().enumerate() {
            if e.event_index == 0 {
                continue;
            }
            let route = &self.routes[&e.source_iteration];
            let mut c = e.cap_ceiling;
            let mut ok = true;
            for w in route[e.event_index..].windows(2) {
                match theta.get(w[0], w[1]) {
                    Some(t) => {
                        for l in 0..NUM_CAPACITIES {
                            c[l] += t[l];
                            ok &= c[l] <= limits[l] + slack;
                        }
                    }
                    None => ok = false,
                }
            }
            if !ok {
                bad.push(idx);
            }
        }
        bad
    }
}

/// Builds the high-level safe set from scratch: iteration `p` of `records`
/// is annotated with `theta_history[p + 1]`.
pub fn build_high_safe_set(
    records: &[IterationRecord],
    theta_history: &[ThetaEstimate],
    limits: &Capacities,
    depot: NodeId,
) -> Result<HighSafeSet> {
    let mut set = HighSafeSet::default();
    for rec in records {
        let p = rec.iteration;
        if !rec.complete {
            return Err(Error::Input(format!("iteration {p} is incomplete")));
        }
        let theta = theta_history
            .iter()
            .find(|t| t.iteration == p + 1)
            .ok_or_else(|| Error::Input(format!("no depletion estimate formed after iteration {p}")))?;
        set.push_iteration(p, &rec.node_sequence(), theta, limits, depot)?;
    }
    Ok(set)
}

/// Largest remaining task count among entries stored exactly at
/// `(node, cap_ceiling)`; `None` stands for minus infinity.
pub fn q_high(set: &HighSafeSet, node: NodeId, cap_ceiling: &Capacities) -> Option<usize> {
    set.entries
        .iter()
        .filter(|e| e.node == node && e.cap_ceiling == *cap_ceiling)
        .map(|e| e.suffix_task_count)
        .max()
}

/// A stored traversal of one edge with capacities shifted to start at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTrajectory {
    pub edge: Edge,
    pub source_iteration: usize,
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    /// Remaining stage cost to arrival from each state.
    pub cost_to_go: Vec<usize>,
}

impl EdgeTrajectory {
    /// Shifts `states` so the first has zero capacities. The last state is
    /// the arrival, so the remaining minimum-time cost at index `s` is
    /// `len - 1 - s`.
    pub fn from_traversal(edge: Edge, source_iteration: usize, states: &[AgentState], inputs: &[ControlInput]) -> Self {
        assert_eq!(states.len(), inputs.len() + 1, "traversal shape");
        let origin = states[0].c;
        let states: Vec<AgentState> = states.iter().map(|x| x.shifted(&origin)).collect();
        let arrival = states.len() - 1;
        EdgeTrajectory {
            edge,
            source_iteration,
            cost_to_go: (0..states.len()).map(|s| arrival - s).collect(),
            states,
            inputs: inputs.to_vec(),
        }
    }

    /// Steps to arrival.
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Capacity used over the whole traversal.
    pub fn omega(&self) -> Capacities {
        self.states.last().expect("non-empty trajectory").c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LowSafeSet {
    pub edges: BTreeMap<String, EdgeTrajectory>,
}

fn edge_key(e: Edge) -> String {
    format!("{}->{}", e.0, e.1)
}

impl LowSafeSet {
    pub fn get(&self, edge: Edge) -> Option<&EdgeTrajectory> {
        self.edges.get(&edge_key(edge))
    }

    pub fn insert(&mut self, traj: EdgeTrajectory) {
        self.edges.insert(edge_key(traj.edge), traj);
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Replaces the stored trajectory of every edge traversed in `rec`. If an edge
/// was traversed more than once, the cheaper traversal wins and ties go to the
/// later one.
pub fn update_low_safe_set(store: &LowSafeSet, rec: &IterationRecord) -> LowSafeSet {
    let mut chosen: BTreeMap<Edge, EdgeTrajectory> = BTreeMap::new();
    for (edge, range) in rec.edge_traversals() {
        let (states, inputs) = rec.segment(range);
        let traj = EdgeTrajectory::from_traversal(edge, rec.iteration, states, inputs);
        match chosen.get(&edge) {
            Some(prev) if prev.steps() < traj.steps() => {}
            _ => {
                chosen.insert(edge, traj);
            }
        }
    }
    let mut next = store.clone();
    for traj in chosen.into_values() {
        next.insert(traj);
    }
    next
}

/// Everything learned so far.
#[derive(Clone, Debug)]
pub struct LearningStore {
    /// `theta_history[r - 1]` is the estimate used during iteration `r`.
    pub theta_history: Vec<ThetaEstimate>,
    pub high: HighSafeSet,
    pub low: LowSafeSet,
}

impl LearningStore {
    pub fn theta(&self) -> &ThetaEstimate {
        self.theta_history.last().expect("store holds at least one estimate")
    }

    pub fn bound(&self) -> ThetaBound {
        update_theta_bound(self.theta())
    }

    /// Applies the between-iteration updates for a finished record, in order:
    /// depletion estimate, its bound box, high-level safe set, low-level safe
    /// sets.
    pub fn absorb(&mut self, rec: &IterationRecord, limits: &Capacities, depot: NodeId) -> Result<()> {
        let theta = update_theta(self.theta(), rec);
        if !theta.dominated_by(self.theta(), 0.0) {
            return Err(Error::Invariant(format!(
                "depletion estimate increased after iteration {}",
                rec.iteration
            )));
        }
        self.theta_history.push(theta);
        let bound = self.bound();
        debug_assert!(bound.is_subset_of(&update_theta_bound(&self.theta_history[self.theta_history.len() - 2])));
        let theta = self.theta().clone();
        self.high
            .push_iteration(rec.iteration, &rec.node_sequence(), &theta, limits, depot)?;
        self.low = update_low_safe_set(&self.low, rec);
        Ok(())
    }
}
