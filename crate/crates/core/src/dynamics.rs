//! Discrete-time agent model with separable capacity and non-capacity states.
//!
//! The state splits into capacities `c` (state of charge used, elapsed time)
//! and the physical state `chi` (planar position, heading, speed). The
//! capacity increment depends only on `(chi, u)` and is non-negative whenever
//! the speed is, so capacities never decrease along a rollout.
//!
//! All arithmetic is plain `f64` without fused operations so that replaying a
//! stored input sequence from the same state reproduces it bit for bit.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_CAPACITIES: usize = 2;
pub const SOC: usize = 0;
pub const TIME: usize = 1;

pub type Capacities = [f64; NUM_CAPACITIES];

pub const CAPACITY_NAMES: [&str; NUM_CAPACITIES] = ["soc", "time"];

/// Non-capacity state: position `(z, y)`, heading in radians, speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi {
    pub z: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
}

impl Chi {
    pub fn new(z: f64, y: f64, heading: f64, v: f64) -> Self {
        Chi { z, y, heading, v }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.z, self.y, self.heading, self.v]
    }

    pub fn max_abs_diff(&self, other: &Chi) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub c: Capacities,
    pub chi: Chi,
}

impl AgentState {
    pub fn new(c: Capacities, chi: Chi) -> Self {
        AgentState { c, chi }
    }

    /// The state with the same physical part and capacities shifted by `-origin`.
    pub fn shifted(&self, origin: &Capacities) -> Self {
        let mut c = self.c;
        for (ci, oi) in c.iter_mut().zip(origin) {
            *ci -= oi;
        }
        AgentState { c, chi: self.chi }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Heading rate in rad/s.
    pub steer_rate: f64,
    pub accel: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        steer_rate: 0.0,
        accel: 0.0,
    };

    pub fn new(steer_rate: f64, accel: f64) -> Self {
        ControlInput { steer_rate, accel }
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.max(self.lo).min(self.hi)
    }

    pub fn is_empty(&self) -> bool {
        // NaN bounds count as empty.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let empty = !(self.lo <= self.hi);
        empty
    }
}

impl From<[f64; 2]> for Interval {
    fn from(a: [f64; 2]) -> Self {
        Interval::new(a[0], a[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiBounds {
    pub heading: Interval,
    pub velocity: Interval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub steer_rate: Interval,
    pub accel: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::capacity_limits")]
    pub capacity_limits: Capacities,
    #[serde(default = "defaults::chi_bounds")]
    pub chi_bounds: ChiBounds,
    #[serde(default = "defaults::input_bounds")]
    pub input_bounds: InputBounds,
    /// Speed cap used only while generating the initial edge trajectories.
    #[serde(default = "defaults::init_velocity_cap")]
    pub init_velocity_cap: f64,
}

mod defaults {
    use super::*;

    pub fn dt() -> f64 {
        0.1
    }
    pub fn alpha() -> f64 {
        1.6
    }
    pub fn capacity_limits() -> Capacities {
        [100.0, 120.0]
    }
    pub fn chi_bounds() -> ChiBounds {
        ChiBounds {
            heading: Interval::new(-std::f64::consts::PI, std::f64::consts::PI),
            velocity: Interval::new(0.0, 5.0),
        }
    }
    pub fn input_bounds() -> InputBounds {
        InputBounds {
            steer_rate: Interval::new(-2.0, 2.0),
            accel: Interval::new(-2.0, 2.0),
        }
    }
    pub fn init_velocity_cap() -> f64 {
        2.0
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: defaults::dt(),
            alpha: defaults::alpha(),
            capacity_limits: defaults::capacity_limits(),
            chi_bounds: defaults::chi_bounds(),
            input_bounds: defaults::input_bounds(),
            init_velocity_cap: defaults::init_velocity_cap(),
        }
    }
}

impl DynamicsConfig {
    /// Collects every semantic problem with the configuration.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dynamics.dt must be positive, got {}", self.dt));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            errs.push(format!("dynamics.alpha must be non-negative, got {}", self.alpha));
        }
        for (l, limit) in self.capacity_limits.iter().enumerate() {
            if !(*limit >= 0.0 && limit.is_finite()) {
                errs.push(format!(
                    "dynamics.capacity_limits[{l}] ({}) must be non-negative",
                    CAPACITY_NAMES[l]
                ));
            }
        }
        let boxes = [
            ("dynamics.chi_bounds.heading", self.chi_bounds.heading),
            ("dynamics.chi_bounds.velocity", self.chi_bounds.velocity),
            ("dynamics.input_bounds.steer_rate", self.input_bounds.steer_rate),
            ("dynamics.input_bounds.accel", self.input_bounds.accel),
        ];
        for (name, b) in boxes {
            if b.is_empty() {
                errs.push(format!("{name} is empty: [{}, {}]", b.lo, b.hi));
            }
        }
        if self.chi_bounds.velocity.lo < 0.0 {
            errs.push("dynamics.chi_bounds.velocity must not admit negative speeds".into());
        }
        if !(self.init_velocity_cap > 0.0 && self.init_velocity_cap <= self.chi_bounds.velocity.hi) {
            errs.push(format!(
                "dynamics.init_velocity_cap must lie in (0, {}], got {}",
                self.chi_bounds.velocity.hi, self.init_velocity_cap
            ));
        }
        if !(self.input_bounds.accel.lo < 0.0 && self.input_bounds.accel.hi > 0.0) {
            errs.push("dynamics.input_bounds.accel must allow both braking and accelerating".into());
        }
        if !(self.input_bounds.steer_rate.lo < 0.0 && self.input_bounds.steer_rate.hi > 0.0) {
            errs.push("dynamics.input_bounds.steer_rate must allow turning both ways".into());
        }
        errs
    }
}

/// Capacity increment `g_c(chi, u)`: discharge proportional to speed, and one
/// time step of elapsed time.
#[inline]
pub fn capacity_increment(cfg: &DynamicsConfig, chi: &Chi, _u: &ControlInput) -> Capacities {
    [cfg.alpha * chi.v * cfg.dt, cfg.dt]
}

/// Non-capacity update `g_chi(chi, u)` of the kinematic model.
#[inline]
pub fn chi_step(cfg: &DynamicsConfig, chi: &Chi, u: &ControlInput) -> Chi {
    let dt = cfg.dt;
    Chi {
        z: chi.z + chi.v * chi.heading.cos() * dt,
        y: chi.y + chi.v * chi.heading.sin() * dt,
        heading: chi.heading + u.steer_rate * dt,
        v: chi.v + u.accel * dt,
    }
}

pub fn step(cfg: &DynamicsConfig, x: &AgentState, u: &ControlInput) -> AgentState {
    let inc = capacity_increment(cfg, &x.chi, u);
    AgentState {
        c: [x.c[0] + inc[0], x.c[1] + inc[1]],
        chi: chi_step(cfg, &x.chi, u),
    }
}

/// States visited when applying `inputs` from `x0`; the result has one more
/// element than `inputs`.
pub fn rollout(cfg: &DynamicsConfig, x0: &AgentState, inputs: &[ControlInput]) -> Vec<AgentState> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for u in inputs {
        x = step(cfg, &x, u);
        states.push(x);
    }
    states
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Soc,
    Time,
    Heading,
    Velocity,
    SteerRate,
    Accel,
}

impl Quantity {
    fn capacity(l: usize) -> Quantity {
        if l == SOC {
            Quantity::Soc
        } else {
            Quantity::Time
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub quantity: Quantity,
    pub value: f64,
    /// The bound that was crossed.
    pub bound: f64,
    /// Distance outside the closed interval, always positive.
    pub margin: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} = {} crosses bound {} by {:e}",
            self.quantity, self.value, self.bound, self.margin
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    fn check(&mut self, quantity: Quantity, value: f64, bounds: Interval, slack: f64) {
        if value.is_nan() {
            self.violations.push(Violation {
                quantity,
                value,
                bound: bounds.lo,
                margin: f64::INFINITY,
            });
        } else if value < bounds.lo - slack {
            self.violations.push(Violation {
                quantity,
                value,
                bound: bounds.lo,
                margin: bounds.lo - value,
            });
        } else if value > bounds.hi + slack {
            self.violations.push(Violation {
                quantity,
                value,
                bound: bounds.hi,
                margin: value - bounds.hi,
            });
        }
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Lists every bound of the state set (and input box, when `u` is given)
/// that `x` violates. Intervals are closed.
pub fn check_constraints(cfg: &DynamicsConfig, x: &AgentState, u: Option<&ControlInput>) -> ViolationReport {
    check_constraints_with_slack(cfg, x, u, 0.0)
}

/// Like [`check_constraints`], but values within `slack` outside a bound are
/// accepted.
pub fn check_constraints_with_slack(
    cfg: &DynamicsConfig,
    x: &AgentState,
    u: Option<&ControlInput>,
    slack: f64,
) -> ViolationReport {
    let mut report = ViolationReport::default();
    for (l, limit) in cfg.capacity_limits.iter().enumerate() {
        report.check(Quantity::capacity(l), x.c[l], Interval::new(0.0, *limit), slack);
    }
    report.check(Quantity::Heading, x.chi.heading, cfg.chi_bounds.heading, slack);
    report.check(Quantity::Velocity, x.chi.v, cfg.chi_bounds.velocity, slack);
    if let Some(u) = u {
        report.check(Quantity::SteerRate, u.steer_rate, cfg.input_bounds.steer_rate, slack);
        report.check(Quantity::Accel, u.accel, cfg.input_bounds.accel, slack);
    }
    report
}

/// Finds a rate `r` within `bounds` such that `current + r * dt` evaluates to
/// exactly `target` in floating point, searching a few ulps around the
/// real-valued answer. `None` if no such rate exists in the search window.
pub fn rate_to_land(current: f64, target: f64, dt: f64, bounds: Interval) -> Option<f64> {
    let ideal = (target - current) / dt;
    if !ideal.is_finite() {
        return None;
    }
    let mut up = ideal;
    let mut down = ideal;
    for _ in 0..64 {
        for r in [up, down] {
            if bounds.contains(r) && current + r * dt == target {
                return Some(r);
            }
        }
        up = next_up(up);
        down = next_down(down);
    }
    None
}

pub(crate) fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

pub(crate) fn next_down(x: f64) -> f64 {
    -next_up(-x)
}
