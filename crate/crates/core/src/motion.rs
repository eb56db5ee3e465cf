//! Conservative edge motions: turn in place toward the target, drive a
//! trapezoidal speed profile along the straight line, turn in place to the
//! target heading. The final step of every phase is tuned so that the speed
//! and heading land exactly on their targets.

use crate::dynamics::{rate_to_land, step, AgentState, Capacities, ControlInput, DynamicsConfig, Interval, NUM_CAPACITIES};
use crate::error::{Error, Result};
use crate::task_graph::{NodeId, TaskGraph};

/// Step rates that turn `from` into `to` in as few steps as the rate bounds
/// allow, all but the last step equal. The last step lands exactly when
/// floating point permits; otherwise within `1e-12`.
pub fn turn_in_place(from: f64, to: f64, dt: f64, bounds: Interval) -> Option<Vec<f64>> {
    let delta = to - from;
    if delta == 0.0 {
        return Some(Vec::new());
    }
    let max_rate = if delta > 0.0 { bounds.hi } else { -bounds.lo };
    let base = (delta.abs() / (max_rate * (1.0 - 1e-9) * dt)).ceil().max(1.0) as usize;
    let mut approximate = None;
    for n in base..base + 4 {
        let rate = delta / (n as f64 * dt);
        let mut heading = from;
        let mut rates = Vec::with_capacity(n);
        for _ in 0..n - 1 {
            rates.push(rate);
            heading += rate * dt;
        }
        if let Some(last) = rate_to_land(heading, to, dt, bounds) {
            rates.push(last);
            return Some(rates);
        }
        let last = bounds.clamp((to - heading) / dt);
        if approximate.is_none() && (heading + last * dt - to).abs() <= 1e-12 {
            rates.push(last);
            approximate = Some(rates);
        }
    }
    approximate
}

/// Trapezoidal profile covering `distance`: `n_accel` steps at `accel`, then
/// `n_cruise` steps at the reached speed, then `n_accel` steps braking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedProfile {
    pub n_accel: usize,
    pub n_cruise: usize,
    pub accel: f64,
    pub cruise_speed: f64,
}

impl SpeedProfile {
    /// With position updated from the speed before each step, the profile
    /// covers `cruise_speed * dt * (n_accel + n_cruise)`.
    pub fn plan(distance: f64, dt: f64, speed_cap: f64, accel_max: f64) -> Option<Self> {
        if !(distance > 0.0 && speed_cap > 0.0 && accel_max > 0.0) {
            return None;
        }
        let a_max = accel_max * (1.0 - 1e-9);
        let by_speed = (distance / (dt * speed_cap)).ceil();
        let by_accel = (distance / (a_max * dt * dt)).sqrt().ceil();
        let mut n_total = by_speed.max(by_accel).max(1.0) as usize;
        loop {
            let v = distance / (dt * n_total as f64);
            let n_accel = (v / (a_max * dt)).ceil().max(1.0) as usize;
            if n_accel <= n_total {
                return Some(SpeedProfile {
                    n_accel,
                    n_cruise: n_total - n_accel,
                    accel: v / (n_accel as f64 * dt),
                    cruise_speed: v,
                });
            }
            n_total += 1;
        }
    }

    pub fn steps(&self) -> usize {
        2 * self.n_accel + self.n_cruise
    }
}

/// Inputs for the conservative motion along edge `(i, j)` starting from the
/// state `x0` at rest near node `i`.
pub fn edge_inputs(
    cfg: &DynamicsConfig,
    graph: &TaskGraph,
    x0: &AgentState,
    i: NodeId,
    j: NodeId,
    speed_cap: f64,
) -> Result<Vec<ControlInput>> {
    let fail = |why: &str| Error::Config(vec![format!("edge [{i}, {j}]: {why}")]);
    let dt = cfg.dt;
    let steer = cfg.input_bounds.steer_rate;
    let accel = cfg.input_bounds.accel;
    let bearing = graph.bearing(i, j);
    let target = graph.anchor_chi(j);
    if !cfg.chi_bounds.heading.contains(bearing) {
        return Err(fail("direction of travel lies outside the heading bounds"));
    }
    let mut inputs = Vec::new();
    let first = turn_in_place(x0.chi.heading, bearing, dt, steer).ok_or_else(|| fail("cannot turn toward the target"))?;
    inputs.extend(first.into_iter().map(|r| ControlInput::new(r, 0.0)));

    let profile = SpeedProfile::plan(graph.distance(i, j), dt, speed_cap, accel.hi.min(-accel.lo))
        .ok_or_else(|| fail("no admissible speed profile"))?;
    if profile.accel * dt <= graph.tolerance().velocity {
        return Err(fail("edge too short: braking would enter the target region early"));
    }
    let mut v = x0.chi.v;
    for _ in 0..profile.n_accel {
        inputs.push(ControlInput::new(0.0, profile.accel));
        v += profile.accel * dt;
    }
    inputs.extend(std::iter::repeat_n(ControlInput::new(0.0, 0.0), profile.n_cruise));
    for _ in 0..profile.n_accel - 1 {
        inputs.push(ControlInput::new(0.0, -profile.accel));
        v += -profile.accel * dt;
    }
    let stop = rate_to_land(v, 0.0, dt, accel).ok_or_else(|| fail("cannot brake to rest exactly"))?;
    inputs.push(ControlInput::new(0.0, stop));

    let last = turn_in_place(bearing, target.heading, dt, steer).ok_or_else(|| fail("cannot turn to the node heading"))?;
    inputs.extend(last.into_iter().map(|r| ControlInput::new(r, 0.0)));
    Ok(inputs)
}

/// Index of the first state of `states` inside node `j`'s region.
pub fn first_arrival(graph: &TaskGraph, states: &[AgentState], j: NodeId, limits: &Capacities) -> Option<usize> {
    let anchor = graph.anchor(j);
    states.iter().position(|x| anchor.contains(x, limits))
}

/// Simulates `inputs` from `x0`, stopping at the first state inside node
/// `j`'s region (capacities are not checked). Returns the states and inputs
/// up to arrival.
pub fn drive_until_arrival(
    cfg: &DynamicsConfig,
    graph: &TaskGraph,
    x0: &AgentState,
    inputs: &[ControlInput],
    j: NodeId,
) -> Option<(Vec<AgentState>, Vec<ControlInput>)> {
    let anchor = graph.anchor(j);
    let mut states = vec![*x0];
    let mut x = *x0;
    for (k, u) in inputs.iter().enumerate() {
        x = step(cfg, &x, u);
        states.push(x);
        if anchor.contains(&x, &[f64::INFINITY; NUM_CAPACITIES]) {
            return Some((states, inputs[..=k].to_vec()));
        }
    }
    None
}
