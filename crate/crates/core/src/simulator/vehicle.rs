//! Longitudinal vehicle motion along the track: cruise at target speed,
//! brake for a red light or a stopped leader, accelerate away.
//!
//! Positions integrate the speed samples with the trapezoid rule, and
//! braking follows the discrete curve that removes exactly `a * dt` of
//! speed per tick, so a vehicle that decides to stop lands exactly on its
//! stop point and the braking distance from speed `v` is `v^2 / (2a)`.

use serde::{Deserialize, Serialize};

use super::path::{Approach, FigureEight};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficLightConfig {
    pub green: f64,
    pub red: f64,
    /// Phase offset of approach B relative to approach A.
    pub offset_b: f64,
    /// Distance of the stop line before the crossing, as a fraction of s_l.
    pub stop_line_fraction: f64,
}

impl Default for TrafficLightConfig {
    fn default() -> Self {
        Self {
            green: 10.0,
            red: 6.0,
            offset_b: 8.0,
            stop_line_fraction: 0.25,
        }
    }
}

impl TrafficLightConfig {
    pub fn is_green(&self, approach: Approach, t: f64) -> bool {
        let cycle = self.green + self.red;
        let shift = match approach {
            Approach::A => 0.0,
            Approach::B => self.offset_b,
        };
        (t - shift).rem_euclid(cycle) < self.green
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingConfig {
    pub target_speed: f64,
    /// Acceleration and deceleration limit, m/s^2.
    pub accel_limit: f64,
    /// Bumper gap kept behind a leader, measured between reference points.
    pub min_gap: f64,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        Self {
            target_speed: 0.5,
            accel_limit: 1.0,
            min_gap: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Wrapped arc-length position.
    pub s: f64,
    pub speed: f64,
    /// Unwrapped distance travelled.
    pub odometer: f64,
}

/// Distance covered while braking from `v` to rest, removing `delta` of
/// speed per tick of length `dt` (last tick removes the remainder).
pub fn discrete_stopping_distance(v: f64, delta: f64, dt: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let m = (v / delta).floor();
    let r = v - m * delta;
    dt * (delta * m * m / 2.0 + m * r + r / 2.0)
}

/// Largest speed for the next tick, starting from `v0`, that still allows
/// stopping within `distance` under the discrete braking curve. `None` if
/// even stopping immediately overshoots.
pub fn braking_speed(v0: f64, distance: f64, delta: f64, dt: f64) -> Option<f64> {
    let f = |v: f64| (v0 + v) / 2.0 * dt + discrete_stopping_distance(v, delta, dt);
    // Roundoff on an exactly feasible stop must not read as overshoot.
    if f(0.0) > distance + 1e-9 {
        return None;
    }
    if f(0.0) >= distance {
        return Some(0.0);
    }
    let mut hi = v0 + delta;
    if f(hi) <= distance {
        return Some(hi);
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= distance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Constraint a vehicle must respect during one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub t: f64,
    pub dt: f64,
    /// Forward distance to the leader's reference point, if any.
    pub leader_gap: Option<f64>,
}

pub fn step_vehicle(
    vehicle: &VehicleState,
    path: &FigureEight,
    light: &TrafficLightConfig,
    driving: &DrivingConfig,
    ctx: &StepContext,
) -> VehicleState {
    let dt = ctx.dt;
    let delta = driving.accel_limit * dt;
    let v0 = vehicle.speed;
    let mut v1 = (v0 + delta).min(driving.target_speed);

    let stop_back = light.stop_line_fraction * path.straight_length();
    for (crossing, approach) in path.crossings() {
        if light.is_green(approach, ctx.t) {
            continue;
        }
        let line = crossing - stop_back;
        let mut dist = path.forward_distance(vehicle.s, line);
        if dist > path.total_length() - 1e-9 {
            dist = 0.0;
        }
        // Past the line means the vehicle is inside the crossing box and
        // forward_distance wraps around to almost a full lap.
        if dist > path.total_length() - stop_back {
            continue;
        }
        match braking_speed(v0, dist, delta, dt) {
            // Stoppable without exceeding the deceleration limit.
            Some(v) if v >= v0 - delta - 1e-9 => v1 = v1.min(v.max(0.0)),
            // Too close to stop comfortably: proceed through.
            _ => {}
        }
    }

    if let Some(gap) = ctx.leader_gap {
        let room = (gap - driving.min_gap).max(0.0);
        let v = braking_speed(v0, room, delta, dt).unwrap_or(0.0);
        v1 = v1.min(v);
    }

    let v1 = v1.clamp(0.0, driving.target_speed);
    let ds = (v0 + v1) / 2.0 * dt;
    VehicleState {
        s: path.wrap(vehicle.s + ds),
        speed: v1,
        odometer: vehicle.odometer + ds,
    }
}
