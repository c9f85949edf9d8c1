//! Intention weighting factors.
//!
//! Each factor maps one perception channel into `[0, 1]` through the smooth
//! basic function `b(s) = 1 / (1 + s⁶)` (and `b = 1` for `s < 0`).

use log::warn;
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Smooth unit step from 1 (at `s ≤ 0`) toward 0.
pub fn basic_b<T: Real>(s: T) -> T {
    if s < T::zero() {
        return T::one();
    }
    let s2 = s * s;
    T::one() / (T::one() + s2 * s2 * s2)
}

/// Perception and force data consumed by the factor computation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSnapshot<T: Real> {
    /// Probe-to-hand distance (m).
    pub d_h: T,
    /// Closest doctor-body to robot-body distance (m).
    pub d_b: T,
    /// Probe position in the neck frame (m); x runs along the neck axis.
    pub d_p: Vector3<T>,
    /// Compressive contact force along the probe axis (N).
    pub f_z_e: T,
    /// External joint torque (N·m).
    pub tau_e: DVector<T>,
    /// External end-effector wrench, force then moment, base frame.
    pub f_1e: Vector6<T>,
}

/// Scaling constants of the factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorParams {
    pub r_h: f64,
    pub r_b: f64,
    pub r_p: f64,
    pub x_top: f64,
    pub x_bottom: f64,
    pub f_0: f64,
    pub tau_0: f64,
}

impl Default for FactorParams {
    fn default() -> Self {
        Self {
            r_h: 0.10,
            r_b: 0.25,
            r_p: 0.08,
            x_top: 0.06,
            x_bottom: -0.06,
            f_0: 15.0,
            tau_0: 3.0,
        }
    }
}

impl FactorParams {
    /// Returns the name of the first violated invariant, if any.
    pub fn violation(&self) -> Option<&'static str> {
        let positive = [
            (self.r_h, "r_h > 0"),
            (self.r_b, "r_b > 0"),
            (self.r_p, "r_p > 0"),
            (self.f_0, "f_0 > 0"),
            (self.tau_0, "tau_0 > 0"),
        ];
        for (v, name) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Some(name);
            }
        }
        if !(self.x_top > self.x_bottom) {
            return Some("x_top > x_bottom");
        }
        None
    }
}

/// The five intention weights, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Factors<T: Real> {
    /// Probe grasped by a hand.
    pub a_h: T,
    /// Probe near the patient's neck.
    pub a_p: T,
    /// Probe-neck contact maintained.
    pub a_f: T,
    /// Null-space contact torque on the arm.
    pub a_n: T,
    /// Doctor's body close to the arm.
    pub a_b: T,
}

impl<T: Real> Factors<T> {
    pub fn as_array(&self) -> [T; 5] {
        [self.a_h, self.a_p, self.a_f, self.a_n, self.a_b]
    }

    /// Clamps every factor into `[0, 1]`; returns whether anything changed.
    pub fn clamp_unit(&mut self) -> bool {
        let mut changed = false;
        for a in [
            &mut self.a_h,
            &mut self.a_p,
            &mut self.a_f,
            &mut self.a_n,
            &mut self.a_b,
        ] {
            let c = if a.is_finite_value() {
                a.clamp(T::zero(), T::one())
            } else {
                T::zero()
            };
            if c != *a {
                *a = c;
                changed = true;
            }
        }
        changed
    }

    /// Moves each factor from `previous` toward `self` by at most `max_step`.
    pub fn slew_from(&self, previous: &Self, max_step: T) -> Self {
        let lim = |target: T, prev: T| prev + (target - prev).clamp(-max_step, max_step);
        Self {
            a_h: lim(self.a_h, previous.a_h),
            a_p: lim(self.a_p, previous.a_p),
            a_f: lim(self.a_f, previous.a_f),
            a_n: lim(self.a_n, previous.a_n),
            a_b: lim(self.a_b, previous.a_b),
        }
    }
}

/// External torque not explained by the end-effector wrench: `τ_e − J1ᵀF_1e`.
pub fn null_space_torque<T: Real>(tau_e: &DVector<T>, j1: &DMatrix<T>, f_1e: &Vector6<T>) -> DVector<T> {
    let wrench = DVector::from_column_slice(f_1e.as_slice());
    tau_e - j1.transpose() * wrench
}

pub fn compute_factors<T: Real>(snap: &PerceptionSnapshot<T>, params: &FactorParams, j1: &DMatrix<T>) -> Factors<T> {
    let r_h = T::lit(params.r_h);
    let r_b = T::lit(params.r_b);
    let r_p = T::lit(params.r_p);
    let mid = T::lit(0.5 * (params.x_top + params.x_bottom));
    let half = T::lit(0.5 * (params.x_top - params.x_bottom));

    let radial = (snap.d_p.y * snap.d_p.y + snap.d_p.z * snap.d_p.z).sqrt();
    let axial = (snap.d_p.x - mid).abs() / half;
    let tau_n = null_space_torque(&snap.tau_e, j1, &snap.f_1e);

    let mut factors = Factors {
        a_h: basic_b(snap.d_h / r_h),
        a_p: basic_b(radial / r_p) * basic_b(axial),
        a_f: T::one() - basic_b(snap.f_z_e / T::lit(params.f_0)),
        a_n: T::one() - basic_b(tau_n.norm() / T::lit(params.tau_0)),
        a_b: basic_b(snap.d_b / r_b),
    };
    if factors.clamp_unit() {
        warn!("weighting factor left [0, 1] and was clamped");
    }
    factors
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snapshot() -> PerceptionSnapshot<f64> {
        PerceptionSnapshot {
            d_h: 1.0,
            d_b: 1.0,
            d_p: Vector3::new(0.0, 0.5, 0.0),
            f_z_e: 0.0,
            tau_e: DVector::zeros(7),
            f_1e: Vector6::zeros(),
        }
    }

    #[test]
    fn slew_limits_each_factor() {
        let prev = Factors {
            a_h: 0.0,
            a_p: 0.5,
            a_f: 1.0,
            a_n: 0.2,
            a_b: 0.3,
        };
        let target = Factors {
            a_h: 1.0,
            a_p: 0.505,
            a_f: 0.0,
            a_n: 0.2,
            a_b: 0.29,
        };
        let out = target.slew_from(&prev, 0.01);
        assert_eq!(out.a_h, 0.01);
        assert_eq!(out.a_p, 0.505);
        assert_eq!(out.a_f, 0.99);
        assert_eq!(out.a_n, 0.2);
        assert_eq!(out.a_b, 0.29);
    }

    fn j1() -> DMatrix<f64> {
        DMatrix::from_fn(6, 7, |r, c| ((r * 7 + c) as f64 * 0.37).sin())
    }

    #[test]
    fn basic_function_values() {
        assert_eq!(basic_b(0.0), 1.0);
        assert_eq!(basic_b(1.0), 0.5);
        assert_eq!(basic_b(-0.3), 1.0);
        assert_eq!(basic_b(3.0), 1.0 / 730.0);
    }

    #[test]
    fn slope_bound_by_dense_sampling() {
        // Dense-sampled maximum of |b'(s)| on [0, 4].
        let h = 1e-5;
        let (mut best, mut at) = (0.0f64, 0.0);
        for i in 0..400_000 {
            let s = i as f64 * 1e-5;
            let slope = ((basic_b(s + h) - basic_b(s)) / h).abs();
            if slope > best {
                best = slope;
                at = s;
            }
        }
        // Closed form: b' = −6s⁵/(1+s⁶)², maximal at s⁶ = 5/7.
        let s_star = (5.0f64 / 7.0).powf(1.0 / 6.0);
        let exact = 6.0 * s_star.powi(5) / (1.0 + s_star.powi(6)).powi(2);
        assert!((best - exact).abs() < 1e-3, "{best} vs {exact}");
        assert!((at - s_star).abs() < 1e-3);
    }

    #[test]
    fn null_space_torque_cases() {
        let j = j1();
        let f = Vector6::new(1.0, -2.0, 0.5, 0.1, 0.0, -0.3);
        let tau_e = j.transpose() * DVector::from_column_slice(f.as_slice());
        assert!(null_space_torque(&tau_e, &j, &f).amax() < 1e-14);
        let tau_e = DVector::from_fn(7, |i, _| i as f64);
        assert_eq!(null_space_torque(&tau_e, &j, &Vector6::zeros()), tau_e);
    }

    #[test]
    fn factor_reference_values() {
        let p = FactorParams::default();
        let mut s = snapshot();
        s.d_p = Vector3::new(0.5 * (p.x_top + p.x_bottom), 0.0, 0.0);
        let f = compute_factors(&s, &p, &j1());
        assert_eq!(f.a_p, 1.0);
        assert_eq!(f.a_f, 0.0);

        s.f_z_e = p.f_0;
        assert_eq!(compute_factors(&s, &p, &j1()).a_f, 0.5);

        s.d_h = p.r_h;
        assert_eq!(compute_factors(&s, &p, &j1()).a_h, 0.5);
        s.d_h = 3.0 * p.r_h;
        let a_h = compute_factors(&s, &p, &j1()).a_h;
        assert!((a_h - 1.0 / 730.0).abs() < 1e-15);
        assert!((a_h - 1.37e-3).abs() < 1e-5);
    }

    #[test]
    fn pulling_force_gives_zero_contact_factor() {
        let mut s = snapshot();
        s.f_z_e = -4.0;
        assert_eq!(compute_factors(&s, &FactorParams::default(), &j1()).a_f, 0.0);
    }

    #[test]
    fn factor_params_invariants() {
        assert_eq!(FactorParams::default().violation(), None);
        let p = FactorParams {
            x_top: -1.0,
            ..FactorParams::default()
        };
        assert_eq!(p.violation(), Some("x_top > x_bottom"));
        let p = FactorParams {
            f_0: 0.0,
            ..FactorParams::default()
        };
        assert_eq!(p.violation(), Some("f_0 > 0"));
    }

    proptest! {
        #[test]
        fn factors_stay_in_unit_interval(
            d_h in 0.0f64..5.0, d_b in 0.0f64..5.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
            f in -100.0f64..100.0, t in proptest::collection::vec(-50.0f64..50.0, 7),
            w in proptest::collection::vec(-50.0f64..50.0, 6),
        ) {
            let s = PerceptionSnapshot {
                d_h, d_b, d_p: Vector3::new(px, py, pz), f_z_e: f,
                tau_e: DVector::from_vec(t), f_1e: Vector6::from_column_slice(&w),
            };
            let out = compute_factors(&s, &FactorParams::default(), &j1());
            for a in out.as_array() {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn basic_function_non_increasing(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(basic_b(hi) <= basic_b(lo));
        }
    }
}
