//! Random valid task graphs for property tests and calibration.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dynamics::Interval;
use crate::task_graph::{GraphSpec, NodeSpec, TaskGraph, ToleranceSpec};

#[derive(Clone, Copy, Debug)]
pub struct GraphParams {
    pub nodes: usize,
    /// Node coordinates are drawn from `[-extent, extent]`.
    pub extent: f64,
    pub min_separation: f64,
    /// Chance of each extra undirected edge beyond the spanning tree.
    pub extra_edge_probability: f64,
}

impl GraphParams {
    pub fn new(nodes: usize) -> Self {
        GraphParams {
            nodes,
            extent: 10.0,
            min_separation: 3.0,
            extra_edge_probability: 0.4,
        }
    }
}

fn headings() -> [f64; 8] {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4, PI, -FRAC_PI_4, -FRAC_PI_2, -3.0 * FRAC_PI_4]
}

/// Draws a graph that passes validation: bidirectional edges over a random
/// spanning tree plus extra edges, node 1 as depot, headings drawn from the
/// eight compass directions. Returns `None` after too many rejected draws.
pub fn random_graph_spec(rng: &mut impl Rng, params: &GraphParams, heading_bounds: Interval) -> Option<GraphSpec> {
    for _ in 0..1000 {
        let mut nodes: Vec<NodeSpec> = Vec::with_capacity(params.nodes);
        let mut tries = 0;
        while nodes.len() < params.nodes && tries < 10_000 {
            tries += 1;
            let x = rng.gen_range(-params.extent..=params.extent);
            let y = rng.gen_range(-params.extent..=params.extent);
            if nodes.iter().all(|n| (n.x - x).hypot(n.y - y) >= params.min_separation) {
                let heading = *headings().choose(rng).expect("non-empty");
                nodes.push(NodeSpec {
                    id: nodes.len() + 1,
                    x: (x * 100.0).round() / 100.0,
                    y: (y * 100.0).round() / 100.0,
                    heading,
                });
            }
        }
        if nodes.len() < params.nodes {
            continue;
        }
        let mut edges = Vec::new();
        for j in 2..=params.nodes {
            edges.push([rng.gen_range(1..j), j]);
        }
        for i in 1..=params.nodes {
            for j in i + 1..=params.nodes {
                if !edges.contains(&[i, j]) && rng.gen_bool(params.extra_edge_probability) {
                    edges.push([i, j]);
                }
            }
        }
        let spec = GraphSpec {
            nodes,
            edges,
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        if TaskGraph::from_spec(&spec, heading_bounds).is_ok() {
            return Some(spec);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_valid_and_reproducible() {
        let bounds = Interval::new(-std::f64::consts::PI, std::f64::consts::PI);
        for seed in 0..20 {
            let a = random_graph_spec(&mut ChaCha8Rng::seed_from_u64(seed), &GraphParams::new(6), bounds).unwrap();
            let b = random_graph_spec(&mut ChaCha8Rng::seed_from_u64(seed), &GraphParams::new(6), bounds).unwrap();
            assert_eq!(a, b);
            assert!(TaskGraph::from_spec(&a, bounds).is_ok());
        }
    }
}
