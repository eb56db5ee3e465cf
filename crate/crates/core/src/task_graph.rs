//! Task graph: nodes with anchor poses, directed edges, and node-region tests.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Capacities, Chi, Interval};
use crate::error::{Error, Result};

/// One-based node index; node 1 is conventionally the depot.
pub type NodeId = usize;
pub type Edge = (NodeId, NodeId);

/// Per-dimension half-widths of a node region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTolerance {
    pub position: f64,
    pub heading: f64,
    pub velocity: f64,
}

impl NodeTolerance {
    pub const fn uniform(eps: f64) -> Self {
        NodeTolerance {
            position: eps,
            heading: eps,
            velocity: eps,
        }
    }
}

impl Default for NodeTolerance {
    fn default() -> Self {
        NodeTolerance::uniform(0.05)
    }
}

/// Either a single number applied to every dimension or a full table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToleranceSpec {
    Uniform(f64),
    PerDimension(NodeTolerance),
}

impl From<ToleranceSpec> for NodeTolerance {
    fn from(spec: ToleranceSpec) -> Self {
        match spec {
            ToleranceSpec::Uniform(eps) => NodeTolerance::uniform(eps),
            ToleranceSpec::PerDimension(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

/// The graph section of the run configuration, as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<[NodeId; 2]>,
    #[serde(default)]
    pub bidirectional: bool,
    pub depot: NodeId,
    #[serde(default = "default_tolerance")]
    pub node_tolerance: ToleranceSpec,
}

fn default_tolerance() -> ToleranceSpec {
    ToleranceSpec::PerDimension(NodeTolerance::default())
}

/// Fixed physical state of a node together with its region half-widths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeAnchor {
    pub node: NodeId,
    pub anchor_chi: Chi,
    pub tolerance: NodeTolerance,
}

impl NodeAnchor {
    /// Membership in the node region: non-capacity state within the tolerance
    /// box around the anchor and capacities inside `[0, limits]`.
    pub fn contains(&self, x: &AgentState, limits: &Capacities) -> bool {
        let a = &self.anchor_chi;
        let t = &self.tolerance;
        (x.chi.z - a.z).abs() <= t.position
            && (x.chi.y - a.y).abs() <= t.position
            && (x.chi.heading - a.heading).abs() <= t.heading
            && (x.chi.v - a.v).abs() <= t.velocity
            && x.c.iter().zip(limits).all(|(c, lim)| *c >= 0.0 && *c <= *lim)
    }
}

pub fn in_node_region(anchor: &NodeAnchor, x: &AgentState, limits: &Capacities) -> bool {
    anchor.contains(x, limits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskGraph {
    positions: Vec<(f64, f64)>,
    headings: Vec<f64>,
    depot: NodeId,
    adjacency: Vec<BTreeSet<NodeId>>,
    tolerance: NodeTolerance,
}

impl TaskGraph {
    /// Builds and validates a graph. `heading_bounds` is the admissible heading
    /// interval of the agent; anchors must lie inside it.
    pub fn from_spec(spec: &GraphSpec, heading_bounds: Interval) -> std::result::Result<Self, Vec<String>> {
        let mut errs = Vec::new();
        let n = spec.nodes.len();
        if n == 0 {
            errs.push("graph.nodes must contain at least one node".to_string());
            return Err(errs);
        }
        let mut positions = vec![(f64::NAN, f64::NAN); n];
        let mut headings = vec![f64::NAN; n];
        let mut seen = vec![false; n];
        for node in &spec.nodes {
            if node.id == 0 || node.id > n {
                errs.push(format!("graph.nodes: id {} outside 1..={n}", node.id));
                continue;
            }
            if seen[node.id - 1] {
                errs.push(format!("graph.nodes: duplicate id {}", node.id));
                continue;
            }
            seen[node.id - 1] = true;
            if !(node.x.is_finite() && node.y.is_finite() && node.heading.is_finite()) {
                errs.push(format!("graph.nodes: node {} has a non-finite coordinate", node.id));
            }
            if !heading_bounds.contains(node.heading) {
                errs.push(format!(
                    "graph.nodes: node {} heading {} outside [{}, {}]",
                    node.id, node.heading, heading_bounds.lo, heading_bounds.hi
                ));
            }
            positions[node.id - 1] = (node.x, node.y);
            headings[node.id - 1] = node.heading;
        }
        if spec.depot == 0 || spec.depot > n {
            errs.push(format!("graph.depot {} outside 1..={n}", spec.depot));
        }
        let tolerance: NodeTolerance = spec.node_tolerance.into();
        if !(tolerance.position >= 0.0 && tolerance.heading >= 0.0 && tolerance.velocity >= 0.0) {
            errs.push("graph.node_tolerance entries must be non-negative".to_string());
        }

        let mut adjacency = vec![BTreeSet::new(); n];
        for [i, j] in &spec.edges {
            let (i, j) = (*i, *j);
            if i == 0 || i > n || j == 0 || j > n {
                errs.push(format!("graph.edges: [{i}, {j}] references a missing node"));
                continue;
            }
            if i == j {
                errs.push(format!("graph.edges: self-loop at node {i}"));
                continue;
            }
            adjacency[i - 1].insert(j);
            if spec.bidirectional {
                adjacency[j - 1].insert(i);
            }
        }
        if !errs.is_empty() {
            return Err(errs);
        }

        let graph = TaskGraph {
            positions,
            headings,
            depot: spec.depot,
            adjacency,
            tolerance,
        };
        errs.extend(graph.geometry_problems());
        errs.extend(graph.connectivity_problems());
        if errs.is_empty() {
            Ok(graph)
        } else {
            Err(errs)
        }
    }

    fn geometry_problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let t = self.tolerance;
        // node regions must be pairwise disjoint
        for i in 1..=self.node_count() {
            for j in (i + 1)..=self.node_count() {
                let (a, b) = (self.anchor_chi(i), self.anchor_chi(j));
                let apart = (a.z - b.z).abs() > 2.0 * t.position
                    || (a.y - b.y).abs() > 2.0 * t.position
                    || (a.heading - b.heading).abs() > 2.0 * t.heading;
                if !apart {
                    errs.push(format!("graph: regions of nodes {i} and {j} overlap"));
                }
            }
        }
        for (i, j) in self.edges() {
            let (a, b) = (self.anchor_chi(i), self.anchor_chi(j));
            let dist = (b.z - a.z).hypot(b.y - a.y);
            if dist <= 2.0 * t.position {
                errs.push(format!("graph.edges: edge [{i}, {j}] has (near) zero length {dist}"));
                continue;
            }
            // Arrival is latched at the first state inside the target region.
            // A final in-place turn smaller than the heading tolerance would
            // latch arrival before the anchor heading is reached.
            let residual = (b.heading - self.bearing(i, j)).abs();
            if residual > 1e-12 && residual <= 2.0 * t.heading {
                errs.push(format!(
                    "graph.edges: edge [{i}, {j}] approaches node {j} {residual:.4} rad off its anchor heading; \
                     use a difference of 0 or more than {}",
                    2.0 * t.heading
                ));
            }
        }
        errs
    }

    fn connectivity_problems(&self) -> Vec<String> {
        let n = self.node_count();
        let forward = self.reachable(self.depot, false);
        let backward = self.reachable(self.depot, true);
        let mut errs = Vec::new();
        for v in 1..=n {
            if !forward[v - 1] {
                errs.push(format!("graph: node {v} is not reachable from the depot"));
            }
            if !backward[v - 1] {
                errs.push(format!("graph: the depot is not reachable from node {v}"));
            }
        }
        errs
    }

    fn reachable(&self, from: NodeId, reverse: bool) -> Vec<bool> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([from]);
        seen[from - 1] = true;
        while let Some(u) = queue.pop_front() {
            for v in 1..=n {
                let linked = if reverse {
                    self.adjacency[v - 1].contains(&u)
                } else {
                    self.adjacency[u - 1].contains(&v)
                };
                if linked && !seen[v - 1] {
                    seen[v - 1] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn depot(&self) -> NodeId {
        self.depot
    }

    pub fn tolerance(&self) -> NodeTolerance {
        self.tolerance
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        1..=self.node_count()
    }

    pub fn is_valid(&self, i: NodeId) -> bool {
        i >= 1 && i <= self.node_count()
    }

    /// Out-neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: NodeId) -> Result<Vec<NodeId>> {
        if !self.is_valid(i) {
            return Err(Error::Input(format!("node {i} outside 1..={}", self.node_count())));
        }
        Ok(self.adjacency[i - 1].iter().copied().collect())
    }

    pub(crate) fn neighbor_set(&self, i: NodeId) -> &BTreeSet<NodeId> {
        &self.adjacency[i - 1]
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.is_valid(i) && self.adjacency[i - 1].contains(&j)
    }

    /// All directed edges in lexicographic order.
    pub fn edges(&self) -> Vec<Edge> {
        (1..=self.node_count())
            .flat_map(|i| self.adjacency[i - 1].iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn position(&self, i: NodeId) -> (f64, f64) {
        self.positions[i - 1]
    }

    pub fn distance(&self, i: NodeId, j: NodeId) -> f64 {
        let (a, b) = (self.position(i), self.position(j));
        (b.0 - a.0).hypot(b.1 - a.1)
    }

    /// Direction of travel from `i` to `j`, in `[-pi, pi]`.
    pub fn bearing(&self, i: NodeId, j: NodeId) -> f64 {
        let (a, b) = (self.position(i), self.position(j));
        (b.1 - a.1).atan2(b.0 - a.0)
    }

    /// Anchor pose of node `j`: its position and heading, at rest.
    pub fn anchor_chi(&self, j: NodeId) -> Chi {
        let (z, y) = self.positions[j - 1];
        Chi::new(z, y, self.headings[j - 1], 0.0)
    }

    pub fn anchor(&self, j: NodeId) -> NodeAnchor {
        NodeAnchor {
            node: j,
            anchor_chi: self.anchor_chi(j),
            tolerance: self.tolerance,
        }
    }

    /// The node whose region contains `x`, if any.
    pub fn locate(&self, x: &AgentState, limits: &Capacities) -> Option<NodeId> {
        self.nodes().find(|&j| self.anchor(j).contains(x, limits))
    }

    /// Serializable form of this graph.
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            nodes: self
                .nodes()
                .map(|j| {
                    let (x, y) = self.position(j);
                    NodeSpec {
                        id: j,
                        x,
                        y,
                        heading: self.headings[j - 1],
                    }
                })
                .collect(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            bidirectional: false,
            depot: self.depot,
            node_tolerance: ToleranceSpec::PerDimension(self.tolerance),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn heading_box() -> Interval {
        Interval::new(-PI, PI)
    }

    fn complete4() -> TaskGraph {
        let nodes = vec![
            NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
            NodeSpec { id: 2, x: 4.0, y: 0.0, heading: 0.0 },
            NodeSpec { id: 3, x: 4.0, y: 3.0, heading: 0.0 },
            NodeSpec { id: 4, x: 0.0, y: 3.0, heading: 0.0 },
        ];
        let mut edges = Vec::new();
        for i in 1..=4 {
            for j in 1..=4 {
                if i != j {
                    edges.push([i, j]);
                }
            }
        }
        let spec = GraphSpec {
            nodes,
            edges,
            bidirectional: false,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        TaskGraph::from_spec(&spec, heading_box()).unwrap()
    }

    #[test]
    fn complete_graph_neighbors() {
        assert_eq!(complete4().neighbors(2).unwrap(), vec![1, 3, 4]);
    }

    #[test]
    fn invalid_index_is_input_error() {
        assert!(matches!(complete4().neighbors(9), Err(Error::Input(_))));
        assert!(matches!(complete4().neighbors(0), Err(Error::Input(_))));
    }

    #[test]
    fn node_without_outgoing_edges() {
        // node 3 only receives; it still needs a way back for validation, so
        // check through the raw adjacency of a partially built graph instead.
        let mut g = complete4();
        g.adjacency[2].clear();
        assert!(g.neighbors(3).unwrap().is_empty());
    }

    #[test]
    fn region_membership() {
        let g = complete4();
        let anchor = g.anchor(2);
        let limits = [100.0, 120.0];
        let at = AgentState::new([10.0, 20.0], anchor.anchor_chi);
        assert!(in_node_region(&anchor, &at, &limits));
        let mut off = at;
        off.chi.z += 10.0 * 0.05;
        assert!(!in_node_region(&anchor, &off, &limits));
        let mut over = at;
        over.c[0] = 100.5;
        assert!(!in_node_region(&anchor, &over, &limits));
        assert_eq!(g.locate(&at, &limits), Some(2));
        assert_eq!(g.locate(&off, &limits), None);
    }

    #[test]
    fn rejects_bad_graphs() {
        let base = complete4().to_spec();

        let mut s = base.clone();
        s.edges.push([2, 2]);
        assert!(TaskGraph::from_spec(&s, heading_box()).is_err());

        let mut s = base.clone();
        s.depot = 7;
        assert!(TaskGraph::from_spec(&s, heading_box()).is_err());

        let mut s = base.clone();
        s.nodes[3].x = 4.0;
        s.nodes[3].y = 0.01;
        let errs = TaskGraph::from_spec(&s, heading_box()).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("overlap")));
        assert!(errs.iter().any(|e| e.contains("zero length")));

        // node 4 cannot get back to the depot
        let mut s = base.clone();
        s.edges.retain(|[i, _]| *i != 4);
        let errs = TaskGraph::from_spec(&s, heading_box()).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("not reachable from node 4")));
    }

    #[test]
    fn bidirectional_inserts_both_orders() {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 5.0, y: 0.0, heading: 0.0 },
            ],
            edges: vec![[1, 2]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        let g = TaskGraph::from_spec(&spec, heading_box()).unwrap();
        assert_eq!(g.edges(), vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn shallow_final_turn_is_rejected() {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 5.0, y: 0.2, heading: 0.0 },
            ],
            edges: vec![[1, 2]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        let errs = TaskGraph::from_spec(&spec, heading_box()).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("approaches node 2")));
    }

    #[test]
    fn adding_an_edge_keeps_neighbors() {
        let mut spec = complete4().to_spec();
        spec.edges.retain(|e| *e != [2, 4]);
        let before = TaskGraph::from_spec(&spec, heading_box()).unwrap().neighbors(2).unwrap();
        spec.edges.push([2, 4]);
        let after = TaskGraph::from_spec(&spec, heading_box()).unwrap().neighbors(2).unwrap();
        assert!(before.iter().all(|n| after.contains(n)));
        assert_eq!(after, vec![1, 3, 4]);
    }
}
