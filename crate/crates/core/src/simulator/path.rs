//! Figure-8 track built from two crossing straights and two 270 degree
//! arcs of opposite handedness, loops to the left and right of the crossing.
//!
//! ```text
//!      .--.  (-a,a)       (a,a)  .--.
//!     /    `.     `.   .'     .'    \
//!    |  (-2a,0)     `.'    (2a,0)    |   straights cross at the origin
//!    |              .'.              |   at +-45 deg
//!     \    .'     .'   `.     `.    /
//!      `--'  (-a,-a)      (a,-a) `--'
//! ```
//!
//! With `a = s_l / (2 sqrt 2)` and radius `s_l / 2` every arc is tangent to
//! both straights, so the curve is C1. Arc length runs: straight A from
//! (-a,a) to (a,-a), right loop counter-clockwise, straight B from (a,a) to
//! (-a,-a), left loop clockwise. The axis x = 0 stays clear of the track
//! beyond the crossing, which leaves room for roadside sensors there.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use crate::geometry::{normalize_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub position: Vec2,
    pub heading: f64,
    /// Signed curvature, positive when turning left.
    pub curvature: f64,
}

/// Which straight passes through the crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureEight {
    s_l: f64,
}

impl FigureEight {
    pub fn new(s_l: f64) -> Self {
        assert!(s_l > 0.0 && s_l.is_finite(), "straight length must be positive");
        Self { s_l }
    }

    pub fn straight_length(&self) -> f64 {
        self.s_l
    }

    pub fn turn_radius(&self) -> f64 {
        self.s_l / 2.0
    }

    fn half_diag(&self) -> f64 {
        self.s_l / (2.0 * SQRT_2)
    }

    pub fn arc_length(&self) -> f64 {
        1.5 * PI * self.turn_radius()
    }

    pub fn total_length(&self) -> f64 {
        2.0 * self.s_l + 2.0 * self.arc_length()
    }

    /// Arc-length positions of the two passes through the crossing.
    pub fn crossings(&self) -> [(f64, Approach); 2] {
        [
            (self.s_l / 2.0, Approach::A),
            (self.s_l + self.arc_length() + self.s_l / 2.0, Approach::B),
        ]
    }

    pub fn wrap(&self, s: f64) -> f64 {
        let l = self.total_length();
        let w = s.rem_euclid(l);
        if w >= l {
            0.0
        } else {
            w
        }
    }

    /// Forward arc distance from `from` to `to`, in `[0, total_length)`.
    pub fn forward_distance(&self, from: f64, to: f64) -> f64 {
        self.wrap(to - from)
    }

    pub fn point(&self, s: f64) -> PathPoint {
        let s = self.wrap(s);
        let a = self.half_diag();
        let r = self.turn_radius();
        let arc = self.arc_length();
        let sl = self.s_l;
        if s < sl {
            let u = Vec2::new(1.0, -1.0) / SQRT_2;
            PathPoint {
                position: Vec2::new(-a, a) + u * s,
                heading: -FRAC_PI_4,
                curvature: 0.0,
            }
        } else if s < sl + arc {
            let phi = (s - sl) / r;
            let angle = -3.0 * FRAC_PI_4 + phi;
            PathPoint {
                position: Vec2::new(2.0 * a, 0.0) + r * Vec2::new(angle.cos(), angle.sin()),
                heading: normalize_angle(-FRAC_PI_4 + phi),
                curvature: 1.0 / r,
            }
        } else if s < 2.0 * sl + arc {
            let u = Vec2::new(-1.0, -1.0) / SQRT_2;
            PathPoint {
                position: Vec2::new(a, a) + u * (s - sl - arc),
                heading: -3.0 * FRAC_PI_4,
                curvature: 0.0,
            }
        } else {
            let phi = (s - 2.0 * sl - arc) / r;
            let angle = -FRAC_PI_4 - phi;
            PathPoint {
                position: Vec2::new(-2.0 * a, 0.0) + r * Vec2::new(angle.cos(), angle.sin()),
                heading: normalize_angle(-3.0 * FRAC_PI_4 - phi),
                curvature: -1.0 / r,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn radius_is_half_the_straight() {
        assert_eq!(FigureEight::new(1.0).turn_radius(), 0.5);
        assert_eq!(FigureEight::new(2.0).turn_radius(), 1.0);
    }

    #[test]
    fn closed_and_continuous() {
        for s_l in [1.0, 2.0, 0.37] {
            let p = FigureEight::new(s_l);
            let l = p.total_length();
            let start = p.point(0.0);
            let end = p.point(l - 1e-12);
            assert!((start.position - end.position).norm() < 1e-9);
            let mut knots = vec![0.0, s_l, s_l + p.arc_length(), 2.0 * s_l + p.arc_length()];
            knots.push(l);
            for &k in &knots[1..] {
                let before = p.point(k - 1e-9);
                let after = p.point(k + 1e-9);
                assert!((before.position - after.position).norm() < 1e-8, "gap at {k}");
                assert!(
                    normalize_angle(before.heading - after.heading).abs() < 1e-7,
                    "kink at {k}"
                );
            }
        }
    }

    #[test]
    fn straights_cross_at_origin() {
        let p = FigureEight::new(2.0);
        for (s, _) in p.crossings() {
            assert!(p.point(s).position.norm() < 1e-12);
        }
    }

    #[test]
    fn heading_is_the_tangent() {
        let p = FigureEight::new(1.0);
        let h = 1e-6;
        let mut s = 0.0;
        while s < p.total_length() {
            let d = (p.point(s + h).position - p.point(s - h).position) / (2.0 * h);
            let pt = p.point(s);
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-6);
            assert!(normalize_angle(d.y.atan2(d.x) - pt.heading).abs() < 1e-6);
            s += 0.0173;
        }
    }

    #[test]
    fn length_matches_chord_integration() {
        // Independent estimate: sum of chords over a fine sampling.
        for s_l in [1.0, 2.0] {
            let p = FigureEight::new(s_l);
            let n = 2_000_000;
            let l = p.total_length();
            let mut total = 0.0;
            let mut prev = p.point(0.0).position;
            for i in 1..=n {
                let s = l * i as f64 / n as f64;
                let cur = if i == n {
                    p.point(0.0).position
                } else {
                    p.point(s).position
                };
                total += (cur - prev).norm();
                prev = cur;
            }
            assert!((total - l).abs() < 1e-6, "{total} vs {l}");
            assert_relative_eq!(l, s_l * (2.0 + 1.5 * PI), epsilon = 1e-12);
        }
    }

    #[test]
    fn roadside_axis_is_clear_of_the_track() {
        // Sites at (0, +-s_l) look at the crossing from outside the loops.
        for s_l in [1.0, 2.0] {
            let p = FigureEight::new(s_l);
            let mut s = 0.0;
            while s < p.total_length() {
                let q = p.point(s).position;
                assert!((q - Vec2::new(0.0, s_l)).norm() > 0.6 * s_l);
                assert!((q - Vec2::new(0.0, -s_l)).norm() > 0.6 * s_l);
                s += 0.001;
            }
        }
    }

    #[test]
    fn loops_turn_opposite_ways() {
        let p = FigureEight::new(1.0);
        assert!(p.point(1.2).curvature > 0.0);
        assert!(p.point(p.total_length() - 0.2).curvature < 0.0);
    }
}
