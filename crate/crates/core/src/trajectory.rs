//! Closed-loop iteration records and the operators defined on them.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Capacities, ControlInput, NUM_CAPACITIES};
use crate::error::{Error, Result};
use crate::task_graph::{NodeId, TaskGraph};

/// Arrival at a node: event index `k`, the time step it was latched at, and
/// the node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub k: usize,
    pub time_step: usize,
    pub node: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLevelState {
    pub node: NodeId,
    pub c: Capacities,
}

/// Inclusive time range `[t0, tf]` of one edge traversal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub t0: usize,
    pub tf: usize,
}

impl TimeRange {
    pub fn steps(&self) -> usize {
        self.tf - self.t0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    pub events: Vec<Event>,
    pub complete: bool,
}

impl IterationRecord {
    /// A record holding only the start state, with the start event at `node`.
    pub fn start(iteration: usize, x0: AgentState, node: NodeId) -> Self {
        IterationRecord {
            iteration,
            states: vec![x0],
            inputs: Vec::new(),
            events: vec![Event {
                k: 0,
                time_step: 0,
                node,
            }],
            complete: false,
        }
    }

    pub fn last_state(&self) -> &AgentState {
        self.states.last().expect("record always holds the start state")
    }

    pub fn push_step(&mut self, u: ControlInput, x: AgentState) {
        self.inputs.push(u);
        self.states.push(x);
    }

    pub fn push_event(&mut self, node: NodeId) {
        let k = self.events.len();
        self.events.push(Event {
            k,
            time_step: self.states.len() - 1,
            node,
        });
    }

    /// Node sequence `n_0, ..., n_K`.
    pub fn node_sequence(&self) -> Vec<NodeId> {
        self.events.iter().map(|e| e.node).collect()
    }

    /// Time ranges of every traversal of edge `(i, j)`, in order.
    pub fn traversals(&self, i: NodeId, j: NodeId) -> Vec<TimeRange> {
        self.events
            .windows(2)
            .filter(|w| w[0].node == i && w[1].node == j)
            .map(|w| TimeRange {
                t0: w[0].time_step,
                tf: w[1].time_step,
            })
            .collect()
    }

    /// All traversed edges with their time ranges, in event order.
    pub fn edge_traversals(&self) -> Vec<((NodeId, NodeId), TimeRange)> {
        self.events
            .windows(2)
            .map(|w| {
                (
                    (w[0].node, w[1].node),
                    TimeRange {
                        t0: w[0].time_step,
                        tf: w[1].time_step,
                    },
                )
            })
            .collect()
    }

    /// States and inputs of one traversal: `tf - t0 + 1` states and
    /// `tf - t0` inputs.
    pub fn segment(&self, range: TimeRange) -> (&[AgentState], &[ControlInput]) {
        (
            &self.states[range.t0..=range.tf],
            &self.inputs[range.t0..range.tf],
        )
    }

    pub fn total_capacity_change(&self) -> Capacities {
        let first = self.states[0].c;
        let last = self.last_state().c;
        std::array::from_fn(|l| last[l] - first[l])
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invariant(format!("record serialization: {e}")))
    }

    /// One row per time step. The input columns hold the input applied at that
    /// step (empty on the final row); `event_node` is set on latched arrivals.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "soc", "time", "z", "y", "heading", "v", "steer_rate", "accel", "event_node",
        ])?;
        let mut events = self.events.iter().peekable();
        for (t, x) in self.states.iter().enumerate() {
            let mut event = String::new();
            while let Some(e) = events.next_if(|e| e.time_step == t) {
                event = e.node.to_string();
            }
            let (steer, accel) = match self.inputs.get(t) {
                Some(u) => (u.steer_rate.to_string(), u.accel.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                t.to_string(),
                x.c[0].to_string(),
                x.c[1].to_string(),
                x.chi.z.to_string(),
                x.chi.y.to_string(),
                x.chi.heading.to_string(),
                x.chi.v.to_string(),
                steer,
                accel,
                event,
            ])?;
        }
        w.flush()
    }
}

/// Time range of the first traversal of `(i, j)` in `rec`.
pub fn index_range(rec: &IterationRecord, i: NodeId, j: NodeId) -> Option<TimeRange> {
    rec.traversals(i, j).into_iter().next()
}

/// Change of capacity `l` over the first traversal of `(i, j)`.
pub fn omega(rec: &IterationRecord, i: NodeId, j: NodeId, l: usize) -> Option<f64> {
    assert!(l < NUM_CAPACITIES, "capacity index {l} out of range");
    index_range(rec, i, j).map(|r| rec.states[r.tf].c[l] - rec.states[r.t0].c[l])
}

/// Capacity changes over every traversal of `(i, j)`.
pub fn omega_all(rec: &IterationRecord, i: NodeId, j: NodeId) -> Vec<Capacities> {
    rec.traversals(i, j)
        .into_iter()
        .map(|r| capacity_change(&rec.states[r.t0], &rec.states[r.tf]))
        .collect()
}

pub fn capacity_change(from: &AgentState, to: &AgentState) -> Capacities {
    std::array::from_fn(|l| to.c[l] - from.c[l])
}

/// Maps a state inside some node region to `(node, capacities)`.
pub fn abstract_state(graph: &TaskGraph, x: &AgentState, limits: &Capacities) -> Result<HighLevelState> {
    graph
        .locate(x, limits)
        .map(|node| HighLevelState { node, c: x.c })
        .ok_or_else(|| {
            Error::Domain(format!(
                "z={} y={} heading={} v={} c={:?}",
                x.chi.z, x.chi.y, x.chi.heading, x.chi.v, x.c
            ))
        })
}

/// One high-level state per event of `rec`.
pub fn abstract_trajectory(rec: &IterationRecord) -> Vec<HighLevelState> {
    rec.events
        .iter()
        .map(|e| HighLevelState {
            node: e.node,
            c: rec.states[e.time_step].c,
        })
        .collect()
}

/// Number of distinct non-depot nodes in `hl`.
pub fn count_tasks(hl: &[HighLevelState], depot: NodeId) -> usize {
    count_task_nodes(hl.iter().map(|s| s.node), depot)
}

pub fn count_task_nodes(nodes: impl IntoIterator<Item = NodeId>, depot: NodeId) -> usize {
    nodes.into_iter().filter(|&n| n != depot).collect::<BTreeSet<_>>().len()
}
