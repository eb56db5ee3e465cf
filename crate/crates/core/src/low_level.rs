//! Edge tracking controller.
//!
//! Each edge `(i, j)` keeps the most recent traversal as its safe set. At
//! every step the controller holds a committed input sequence that reaches
//! node `j`: initially the stored inputs, later the best plan found. The
//! shifted committed plan is always a candidate, so the cost (steps to
//! arrival) never increases. The improver tries to reach a later stored
//! state within the horizon by Gauss-Newton shooting and then follows the
//! stored inputs from there. Once the committed plan arrives within the
//! horizon the controller stops re-planning and plays the rest of it.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    chi_step, check_constraints_with_slack, step, AgentState, Capacities, Chi, ControlInput, DynamicsConfig,
    rate_to_land, NUM_CAPACITIES,
};
use crate::error::{Error, Result};
use crate::learning::EdgeTrajectory;
use crate::task_graph::{Edge, TaskGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowLevelConfig {
    pub horizon: usize,
    pub improver: bool,
    /// Random restarts of the shooting solver per re-plan.
    pub shoot_budget: usize,
    /// Position error allowed when an improved plan joins a stored state.
    pub match_tolerance: f64,
    /// Largest distance from the anchor at which arrival may latch.
    pub arrival_precision: f64,
    /// Capacity round-off tolerated when comparing depletions.
    pub cap_slack: f64,
    pub constraint_slack: f64,
    pub max_shoot_iterations: usize,
    /// Arrival must happen within this many times the stored step count.
    pub step_budget_factor: usize,
}

impl Default for LowLevelConfig {
    fn default() -> Self {
        LowLevelConfig {
            horizon: 15,
            improver: true,
            shoot_budget: 2,
            match_tolerance: 1e-12,
            arrival_precision: 1e-6,
            cap_slack: 1e-10,
            constraint_slack: 1e-9,
            max_shoot_iterations: 30,
            step_budget_factor: 10,
        }
    }
}

impl LowLevelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon == 0 {
            errs.push("controller.horizon_low must be at least 1".into());
        }
        for (name, v) in [
            ("match_tolerance", self.match_tolerance),
            ("arrival_precision", self.arrival_precision),
            ("cap_slack", self.cap_slack),
            ("constraint_slack", self.constraint_slack),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("controller.low_level.{name} must be non-negative"));
            }
        }
        if self.step_budget_factor == 0 {
            errs.push("controller.low_level.step_budget_factor must be at least 1".into());
        }
        errs
    }
}

/// One edge to drive, with its stored trajectory and depletion estimate.
#[derive(Clone, Copy)]
pub struct EdgeProblem<'a> {
    pub dynamics: &'a DynamicsConfig,
    pub graph: &'a TaskGraph,
    pub edge: Edge,
    pub stored: &'a EdgeTrajectory,
    pub theta: Capacities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowLevelSolution {
    /// Committed inputs up to arrival.
    pub inputs: Vec<ControlInput>,
    /// States visited by `inputs`, starting at the current state.
    pub predicted: Vec<AgentState>,
    /// Stored state the plan joins.
    pub terminal_match: usize,
    /// Steps before the plan joins the stored trajectory.
    pub shoot_steps: usize,
    /// Steps to arrival.
    pub cost: usize,
    pub improved: bool,
}

impl LowLevelSolution {
    /// The same plan one step later.
    fn shifted(&self) -> LowLevelSolution {
        LowLevelSolution {
            inputs: self.inputs[1..].to_vec(),
            predicted: self.predicted[1..].to_vec(),
            terminal_match: self.terminal_match,
            shoot_steps: self.shoot_steps.saturating_sub(1),
            cost: self.cost - 1,
            improved: false,
        }
    }
}

/// Input applied `steps_since_t_star` steps after the plan whose prediction
/// reached the target node was fixed.
pub fn tail_policy(sol: &LowLevelSolution, steps_since_t_star: usize) -> Result<ControlInput> {
    sol.inputs.get(steps_since_t_star).copied().ok_or_else(|| {
        Error::Protocol(format!(
            "tail has {} inputs, asked for index {steps_since_t_star}",
            sol.inputs.len()
        ))
    })
}

impl EdgeProblem<'_> {
    fn limits(&self) -> &Capacities {
        &self.dynamics.capacity_limits
    }

    /// Simulates `inputs` from `x`; the plan is admissible when every state
    /// and input respects the bounds, it enters the target region, the first
    /// state inside the region is within `arrival_precision` of the anchor,
    /// and the depletion since `edge_start` stays within `omega_cap`.
    fn evaluate(
        &self,
        cfg: &LowLevelConfig,
        x: &AgentState,
        edge_start: &Capacities,
        inputs: &[ControlInput],
        omega_cap: &Capacities,
    ) -> Option<(Vec<AgentState>, usize)> {
        let anchor = self.graph.anchor(self.edge.1);
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(*x);
        let mut cur = *x;
        for (k, u) in inputs.iter().enumerate() {
            if !check_constraints_with_slack(self.dynamics, &cur, Some(u), cfg.constraint_slack).is_empty() {
                return None;
            }
            cur = step(self.dynamics, &cur, u);
            states.push(cur);
            if !check_constraints_with_slack(self.dynamics, &cur, None, cfg.constraint_slack).is_empty() {
                return None;
            }
            if anchor.contains(&cur, self.limits()) {
                if cur.chi.max_abs_diff(&anchor.anchor_chi) > cfg.arrival_precision {
                    return None;
                }
                let within = (0..NUM_CAPACITIES).all(|l| cur.c[l] - edge_start[l] <= omega_cap[l] + cfg.cap_slack);
                return within.then_some((states, k + 1));
            }
        }
        None
    }

    fn stored_omega(&self) -> Capacities {
        self.stored.omega()
    }

    fn improved_cap(&self) -> Capacities {
        let s = self.stored_omega();
        std::array::from_fn(|l| s[l].min(self.theta[l]))
    }
}

/// Best plan from `x`: the shifted committed plan (or the stored inputs at
/// the start of the edge), improved on when the improver is enabled.
pub fn solve_low_level(
    problem: &EdgeProblem,
    cfg: &LowLevelConfig,
    x: &AgentState,
    edge_start: &Capacities,
    previous: Option<&LowLevelSolution>,
    rng: &mut ChaCha8Rng,
) -> Result<LowLevelSolution> {
    let stored = problem.stored;
    let (fallback_inputs, terminal_match, shoot_steps) = match previous {
        Some(prev) => {
            let s = prev.shifted();
            (s.inputs, s.terminal_match, s.shoot_steps)
        }
        None => {
            let n = cfg.horizon.min(stored.steps());
            (stored.inputs.clone(), n, n)
        }
    };
    let (predicted, cost) = problem
        .evaluate(cfg, x, edge_start, &fallback_inputs, &problem.stored_omega())
        .ok_or_else(|| {
            Error::Invariant(format!(
                "edge {:?}: replaying the committed plan from the current state is infeasible",
                problem.edge
            ))
        })?;
    let mut best = LowLevelSolution {
        inputs: fallback_inputs[..cost].to_vec(),
        predicted,
        terminal_match,
        shoot_steps,
        cost,
        improved: false,
    };
    if cfg.improver && best.cost > cfg.horizon {
        improve(problem, cfg, x, edge_start, &mut best, rng);
    }
    Ok(best)
}

fn improve(
    problem: &EdgeProblem,
    cfg: &LowLevelConfig,
    x: &AgentState,
    edge_start: &Capacities,
    best: &mut LowLevelSolution,
    rng: &mut ChaCha8Rng,
) {
    let stored = problem.stored;
    let total = stored.steps();
    let cap = problem.improved_cap();
    let base_cost = best.cost;

    // Candidate that arrives `gain` steps earlier than the committed plan:
    // `n` shooting steps to stored index `s`, then the stored inputs.
    let attempt = |gain: usize, guess: &[ControlInput]| -> Option<LowLevelSolution> {
        if gain >= base_cost {
            return None;
        }
        let n = cfg.horizon.min(base_cost - gain);
        let s = n + total + gain - base_cost;
        if s > total || s == 0 {
            return None;
        }
        let mut init: Vec<ControlInput> = guess.iter().take(n).copied().collect();
        init.resize(n, ControlInput::ZERO);
        let shot = shoot(problem.dynamics, &x.chi, &init, &stored.states[s].chi, cfg)?;
        let mut inputs = shot;
        inputs.extend_from_slice(&stored.inputs[s..]);
        let (predicted, cost) = problem.evaluate(cfg, x, edge_start, &inputs, &cap)?;
        inputs.truncate(cost);
        Some(LowLevelSolution {
            inputs,
            predicted,
            terminal_match: s,
            shoot_steps: n,
            cost,
            improved: true,
        })
    };

    let mut found: Option<LowLevelSolution> = None;
    let consider = |cand: Option<LowLevelSolution>, found: &mut Option<LowLevelSolution>| -> bool {
        match cand {
            Some(c) if c.cost < found.as_ref().map_or(base_cost, |f| f.cost) => {
                *found = Some(c);
                true
            }
            _ => false,
        }
    };

    // gallop, then bisect on the gain
    let mut lo = 0;
    let mut hi = None;
    let mut gain = 1;
    while gain < base_cost {
        let guess = found.as_ref().map_or(&best.inputs, |f| &f.inputs).clone();
        if consider(attempt(gain, &guess), &mut found) {
            lo = base_cost - found.as_ref().expect("just set").cost;
            gain = (lo * 2).max(gain * 2);
        } else {
            hi = Some(gain);
            break;
        }
    }
    if let Some(mut hi) = hi {
        while hi > lo + 1 {
            let mid = (lo + hi) / 2;
            let guess = found.as_ref().map_or(&best.inputs, |f| &f.inputs).clone();
            if consider(attempt(mid, &guess), &mut found) {
                lo = base_cost - found.as_ref().expect("just set").cost;
            } else {
                hi = mid;
            }
        }
    }

    // random restarts around the best plan, aiming one step further
    let bounds = problem.dynamics.input_bounds;
    for _ in 0..cfg.shoot_budget {
        let reference = found.as_ref().map_or(&best.inputs, |f| &f.inputs);
        let guess: Vec<ControlInput> = reference
            .iter()
            .take(cfg.horizon)
            .map(|u| {
                let ds = rng.gen_range(-0.25..=0.25) * (bounds.steer_rate.hi - bounds.steer_rate.lo);
                let da = rng.gen_range(-0.25..=0.25) * (bounds.accel.hi - bounds.accel.lo);
                ControlInput::new(
                    bounds.steer_rate.clamp(u.steer_rate + ds),
                    bounds.accel.clamp(u.accel + da),
                )
            })
            .collect();
        let target = base_cost - found.as_ref().map_or(base_cost, |f| f.cost) + 1;
        consider(attempt(target, &guess), &mut found);
    }

    if let Some(f) = found {
        *best = f;
    }
}

fn residual(chi: &Chi, target: &Chi) -> Vector4<f64> {
    Vector4::new(
        chi.z - target.z,
        chi.y - target.y,
        chi.heading - target.heading,
        chi.v - target.v,
    )
}

fn chi_rollout(cfg: &DynamicsConfig, x0: &Chi, inputs: &[ControlInput]) -> Vec<Chi> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*x0);
    let mut chi = *x0;
    for u in inputs {
        chi = chi_step(cfg, &chi, u);
        out.push(chi);
    }
    out
}

/// Sensitivities of the final state to each input, `(d/d steer, d/d accel)`.
fn sensitivities(cfg: &DynamicsConfig, chis: &[Chi]) -> Vec<(Vector4<f64>, Vector4<f64>)> {
    let dt = cfg.dt;
    let n = chis.len() - 1;
    let mut cols = vec![(Vector4::zeros(), Vector4::zeros()); n];
    let mut m = Matrix4::<f64>::identity();
    for k in (0..n).rev() {
        cols[k] = (m.column(2) * dt, m.column(3) * dt);
        let c = &chis[k];
        let (s, co) = c.heading.sin_cos();
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, 0.0, -c.v * s * dt, co * dt,
            0.0, 1.0, c.v * co * dt, s * dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        m *= a;
    }
    cols
}

/// Inputs steering `x0` onto `target` in `guess.len()` steps, by damped
/// Gauss-Newton on the terminal error with inputs kept in their box. Speed
/// and heading of the final state are then landed exactly; position must be
/// within `match_tolerance`.
fn shoot(cfg: &DynamicsConfig, x0: &Chi, guess: &[ControlInput], target: &Chi, lcfg: &LowLevelConfig) -> Option<Vec<ControlInput>> {
    let n = guess.len();
    if n == 0 {
        return None;
    }
    let sb = cfg.input_bounds.steer_rate;
    let ab = cfg.input_bounds.accel;
    let project = |u: &ControlInput| ControlInput::new(sb.clamp(u.steer_rate), ab.clamp(u.accel));
    let mut u: Vec<ControlInput> = guess.iter().map(project).collect();
    let mut chis = chi_rollout(cfg, x0, &u);
    let mut r = residual(&chis[n], target);
    let mut lambda = 1e-9;
    let done = |r: &Vector4<f64>| r[0].abs().max(r[1].abs()) <= lcfg.match_tolerance && r[2].abs().max(r[3].abs()) <= 1e-9;

    for _ in 0..lcfg.max_shoot_iterations {
        if done(&r) {
            break;
        }
        let cols = sensitivities(cfg, &chis);
        let mut free = vec![[true; 2]; n];
        let mut accepted = false;
        for _ in 0..8 {
            let mut delta = vec![[0.0; 2]; n];
            for _ in 0..3 {
                let mut jjt = Matrix4::<f64>::identity() * lambda;
                for (k, (cs, ca)) in cols.iter().enumerate() {
                    if free[k][0] {
                        jjt += cs * cs.transpose();
                    }
                    if free[k][1] {
                        jjt += ca * ca.transpose();
                    }
                }
                let Some(chol) = jjt.cholesky() else {
                    break;
                };
                let w = chol.solve(&(-r));
                let mut changed = false;
                for (k, (cs, ca)) in cols.iter().enumerate() {
                    for (d, (col, val, b)) in [(cs, u[k].steer_rate, sb), (ca, u[k].accel, ab)].into_iter().enumerate() {
                        let step = if free[k][d] { col.dot(&w) } else { 0.0 };
                        if free[k][d] && ((val <= b.lo && step < 0.0) || (val >= b.hi && step > 0.0)) {
                            free[k][d] = false;
                            changed = true;
                        }
                        delta[k][d] = step;
                    }
                }
                if !changed {
                    break;
                }
            }
            let trial: Vec<ControlInput> = u
                .iter()
                .zip(&delta)
                .map(|(u, d)| project(&ControlInput::new(u.steer_rate + d[0], u.accel + d[1])))
                .collect();
            let trial_chis = chi_rollout(cfg, x0, &trial);
            let tr = residual(&trial_chis[n], target);
            if tr.norm() < r.norm() {
                u = trial;
                chis = trial_chis;
                r = tr;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda = lambda * 100.0 + 1e-12;
        }
        if !accepted {
            break;
        }
    }
    if !done(&r) {
        return None;
    }
    let before = &chis[n - 1];
    let steer = rate_to_land(before.heading, target.heading, cfg.dt, sb)?;
    let accel = rate_to_land(before.v, target.v, cfg.dt, ab)?;
    u[n - 1] = ControlInput::new(steer, accel);
    Some(u)
}

/// Closed-loop traversal of one edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRun {
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    /// Re-plans performed before the tail was fixed.
    pub solves: usize,
    /// Re-plans in which the improver beat the committed plan.
    pub improvements: usize,
    /// Cost of each solve, in order.
    pub costs: Vec<usize>,
}

/// Drives edge `problem.edge` from `x0` until the target region is entered.
pub fn track_edge(problem: &EdgeProblem, cfg: &LowLevelConfig, x0: &AgentState, rng: &mut ChaCha8Rng) -> Result<EdgeRun> {
    let (i, j) = problem.edge;
    let unbounded = [f64::INFINITY; NUM_CAPACITIES];
    if !problem.graph.anchor(i).contains(x0, &unbounded) {
        return Err(Error::Domain(format!("edge ({i}, {j}) must start inside node {i}")));
    }
    let limits = problem.limits();
    for l in 0..NUM_CAPACITIES {
        if x0.c[l] > limits[l] - problem.theta[l] + cfg.constraint_slack {
            return Err(Error::Invariant(format!(
                "edge ({i}, {j}) starts with capacity {l} at {}, above {}",
                x0.c[l],
                limits[l] - problem.theta[l]
            )));
        }
    }
    let edge_start = x0.c;
    let budget = cfg.step_budget_factor * problem.stored.steps().max(1);
    let anchor = problem.graph.anchor(j);

    let mut run = EdgeRun {
        states: vec![*x0],
        inputs: Vec::new(),
        solves: 0,
        improvements: 0,
        costs: Vec::new(),
    };
    let mut x = *x0;
    let mut committed: Option<LowLevelSolution> = None;
    let mut tail: Option<(LowLevelSolution, usize)> = None;
    loop {
        if run.inputs.len() >= budget {
            return Err(Error::Invariant(format!("edge ({i}, {j}) not reached within {budget} steps")));
        }
        let u = match tail.as_mut() {
            Some((sol, k)) => {
                let u = tail_policy(sol, *k)?;
                *k += 1;
                u
            }
            None => {
                let sol = solve_low_level(problem, cfg, &x, &edge_start, committed.as_ref(), rng)?;
                run.solves += 1;
                run.improvements += usize::from(sol.improved);
                run.costs.push(sol.cost);
                let u = sol.inputs[0];
                if sol.cost <= cfg.horizon {
                    tail = Some((sol, 1));
                } else {
                    committed = Some(sol);
                }
                u
            }
        };
        let report = check_constraints_with_slack(problem.dynamics, &x, Some(&u), cfg.constraint_slack);
        if !report.is_empty() {
            return Err(Error::Invariant(format!("edge ({i}, {j}) step {}: {report}", run.inputs.len())));
        }
        x = step(problem.dynamics, &x, &u);
        run.inputs.push(u);
        run.states.push(x);
        let report = check_constraints_with_slack(problem.dynamics, &x, None, cfg.constraint_slack);
        if !report.is_empty() {
            return Err(Error::Invariant(format!("edge ({i}, {j}) step {}: {report}", run.inputs.len())));
        }
        if anchor.contains(&x, limits) {
            break;
        }
    }
    if x.chi.max_abs_diff(&anchor.anchor_chi) > cfg.arrival_precision {
        return Err(Error::Invariant(format!("edge ({i}, {j}) arrived off the anchor")));
    }
    for l in 0..NUM_CAPACITIES {
        let used = x.c[l] - edge_start[l];
        if used > problem.theta[l] + cfg.constraint_slack {
            return Err(Error::Invariant(format!(
                "edge ({i}, {j}) used {used} of capacity {l}, estimate {}",
                problem.theta[l]
            )));
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Interval;
    use crate::motion::{drive_until_arrival, edge_inputs};
    use crate::task_graph::{GraphSpec, NodeSpec, ToleranceSpec};
    use rand::SeedableRng;

    fn straight() -> TaskGraph {
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { id: 1, x: 0.0, y: 0.0, heading: 0.0 },
                NodeSpec { id: 2, x: 12.0, y: 0.0, heading: 0.0 },
            ],
            edges: vec![[1, 2]],
            bidirectional: true,
            depot: 1,
            node_tolerance: ToleranceSpec::Uniform(0.05),
        };
        TaskGraph::from_spec(&spec, Interval::new(-std::f64::consts::PI, std::f64::consts::PI)).unwrap()
    }

    fn stored_for(cfg: &DynamicsConfig, g: &TaskGraph, i: usize, j: usize) -> EdgeTrajectory {
        let x0 = AgentState::new([0.0; 2], g.anchor_chi(i));
        let inputs = edge_inputs(cfg, g, &x0, i, j, 2.0).unwrap();
        let (states, inputs) = drive_until_arrival(cfg, g, &x0, &inputs, j).unwrap();
        EdgeTrajectory::from_traversal((i, j), 0, &states, &inputs)
    }

    #[test]
    fn fallback_replay_is_bit_exact() {
        let cfg = DynamicsConfig::default();
        let g = straight();
        let stored = stored_for(&cfg, &g, 1, 2);
        let problem = EdgeProblem { dynamics: &cfg, graph: &g, edge: (1, 2), stored: &stored, theta: stored.omega() };
        let lcfg = LowLevelConfig { improver: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = track_edge(&problem, &lcfg, &stored.states[0], &mut rng).unwrap();
        assert_eq!(run.states, stored.states);
        assert_eq!(run.inputs, stored.inputs);

        // exactly on the stored trajectory at step s: fallback is the rest
        let s = 5;
        let sol = solve_low_level(&problem, &lcfg, &stored.states[s], &[0.0; 2], None, &mut rng);
        // from a mid-trajectory state the full stored sequence overshoots
        assert!(sol.is_err());
        let first = solve_low_level(&problem, &lcfg, &stored.states[0], &[0.0; 2], None, &mut rng).unwrap();
        let mut prev = first.clone();
        for k in 1..=s {
            prev = solve_low_level(&problem, &lcfg, &stored.states[k], &[0.0; 2], Some(&prev), &mut rng).unwrap();
        }
        assert_eq!(prev.inputs, stored.inputs[s..].to_vec());
        assert_eq!(prev.cost, stored.cost_to_go[s]);
        assert_eq!(tail_policy(&prev, 0).unwrap(), stored.inputs[s]);
        assert!(tail_policy(&prev, prev.inputs.len()).is_err());
    }

    #[test]
    fn improver_shortens_straight_edge() {
        let cfg = DynamicsConfig::default();
        let g = straight();
        let stored = stored_for(&cfg, &g, 1, 2);
        let problem = EdgeProblem { dynamics: &cfg, graph: &g, edge: (1, 2), stored: &stored, theta: stored.omega() };
        let lcfg = LowLevelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let run = track_edge(&problem, &lcfg, &stored.states[0], &mut rng).unwrap();
        let omega = run.states.last().unwrap().c;
        assert!(run.inputs.len() < stored.steps(), "{} vs {}", run.inputs.len(), stored.steps());
        assert!(omega[1] < stored.omega()[1]);
        assert!(omega[0] <= stored.omega()[0] + 1e-9);
        assert!(run.costs.windows(2).all(|w| w[1] < w[0]));
        let peak = run.states.iter().map(|x| x.chi.v).fold(0.0, f64::max);
        assert!(peak > 2.0);

        // second traversal from the improved one improves again or holds
        let second = EdgeTrajectory::from_traversal((1, 2), 1, &run.states, &run.inputs);
        let theta: Capacities = std::array::from_fn(|l| second.omega()[l].min(stored.omega()[l]));
        let problem2 = EdgeProblem { stored: &second, theta, ..problem };
        let run2 = track_edge(&problem2, &lcfg, &second.states[0], &mut rng).unwrap();
        assert!(run2.inputs.len() <= run.inputs.len());
        let omega2 = run2.states.last().unwrap().c;
        assert!(omega2[0] <= omega[0] + 1e-9);
    }

    #[test]
    fn shooting_hits_target() {
        let cfg = DynamicsConfig::default();
        let x0 = Chi::new(0.0, 0.0, 0.0, 1.0);
        let guess = vec![ControlInput::ZERO; 10];
        let target = Chi::new(1.3, 0.05, 0.1, 1.4);
        let u = shoot(&cfg, &x0, &guess, &target, &LowLevelConfig::default()).unwrap();
        let end = *chi_rollout(&cfg, &x0, &u).last().unwrap();
        assert_eq!(end.heading, target.heading);
        assert_eq!(end.v, target.v);
        assert!((end.z - target.z).abs() < 1e-12 && (end.y - target.y).abs() < 1e-12);
    }

    #[test]
    fn boundary_start_capacities() {
        let cfg = DynamicsConfig::default();
        let g = straight();
        let stored = stored_for(&cfg, &g, 1, 2);
        let theta = stored.omega();
        let problem = EdgeProblem { dynamics: &cfg, graph: &g, edge: (1, 2), stored: &stored, theta };
        let lcfg = LowLevelConfig { improver: false, ..Default::default() };
        let start = AgentState::new([100.0 - theta[0], 120.0 - theta[1]], stored.states[0].chi);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = track_edge(&problem, &lcfg, &start, &mut rng).unwrap();
        let end = run.states.last().unwrap();
        assert!(end.c[0] <= 100.0 + 1e-9 && end.c[1] <= 120.0 + 1e-9);
        let over = AgentState::new([100.0 - theta[0] + 1.0, 0.0], stored.states[0].chi);
        assert!(matches!(track_edge(&problem, &lcfg, &over, &mut rng), Err(Error::Invariant(_))));
    }
}
