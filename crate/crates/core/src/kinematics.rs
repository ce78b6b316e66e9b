//! Longitudinal agent model along the path coordinate.
//!
//! State `x = (a_x, v, s)`: the drivetrain lag on the acceleration feeds a
//! double integrator. The input is the requested acceleration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDynamicsParams {
    /// Drivetrain time constant `T_ax` in seconds.
    pub drivetrain_time_constant: f64,
    /// Sampling time `T_s` in seconds.
    pub sampling_time: f64,
}

impl AgentDynamicsParams {
    pub fn new(drivetrain_time_constant: f64, sampling_time: f64) -> Result<Self> {
        let p = Self {
            drivetrain_time_constant,
            sampling_time,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("drivetrain time constant", self.drivetrain_time_constant),
            ("sampling time", self.sampling_time),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub a_x: f64,
    pub v: f64,
    pub s: f64,
}

impl AgentState {
    pub const fn new(a_x: f64, v: f64, s: f64) -> Self {
        Self { a_x, v, s }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a_x, self.v, self.s]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self::new(x[0], x[1], x[2])
    }
}

/// Continuous-time matrices `(A, B)` of the lag + double-integrator model.
pub fn continuous_matrices(params: &AgentDynamicsParams) -> ([[f64; 3]; 3], [f64; 3]) {
    let k = 1.0 / params.drivetrain_time_constant;
    (
        [[-k, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [k, 0.0, 0.0],
    )
}

/// Zero-order-hold discretization `x+ = A_d x + B_d u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
}

/// Exact ZOH discretization for the triangular structure produced by
/// [`continuous_matrices`].
///
/// `a` and `b` must have that structure (`a[0][0] = -1/T`, `b[0] = 1/T`,
/// unit sub-diagonal); the closed form below is the matrix exponential of
/// exactly that pattern.
pub fn discretize_exact(a: &[[f64; 3]; 3], b: &[f64; 3], ts: f64) -> DiscreteModel {
    debug_assert!(ts >= 0.0);
    let k = -a[0][0];
    debug_assert!(k > 0.0 && (b[0] - k).abs() <= 1e-12 * k);
    let tc = 1.0 / k;
    // 1 - e^{-ts/T}, computed without cancellation
    let one_minus_e = -(-ts * k).exp_m1();
    let e = 1.0 - one_minus_e;
    // ts/T - (1 - e^{-ts/T}) has cancellation for small ts/T
    let lag_excess = lag_integral_excess(ts * k);

    let a_d = [
        [e, 0.0, 0.0],
        [tc * one_minus_e, 1.0, 0.0],
        [tc * tc * lag_excess, ts, 1.0],
    ];
    let b_d = [
        one_minus_e,
        tc * lag_excess,
        0.5 * ts * ts - tc * tc * lag_excess,
    ];
    DiscreteModel { a: a_d, b: b_d }
}

/// `x - (1 - e^{-x})`, accurate for small `x`.
fn lag_integral_excess(x: f64) -> f64 {
    if x < 1e-3 {
        // x^2/2 - x^3/6 + x^4/24 - x^5/120
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    } else {
        x + (-x).exp_m1()
    }
}

impl DiscreteModel {
    pub fn from_params(params: &AgentDynamicsParams) -> Self {
        let (a, b) = continuous_matrices(params);
        discretize_exact(&a, &b, params.sampling_time)
    }

    #[inline]
    pub fn step(&self, x: [f64; 3], u: f64) -> [f64; 3] {
        let a = &self.a;
        [
            a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2] + self.b[0] * u,
            a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2] + self.b[1] * u,
            a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2] + self.b[2] * u,
        ]
    }

    /// `A_d^T y`
    #[inline]
    pub fn transpose_apply(&self, y: [f64; 3]) -> [f64; 3] {
        let a = &self.a;
        [
            a[0][0] * y[0] + a[1][0] * y[1] + a[2][0] * y[2],
            a[0][1] * y[0] + a[1][1] * y[1] + a[2][1] * y[2],
            a[0][2] * y[0] + a[1][2] * y[1] + a[2][2] * y[2],
        ]
    }
}

/// Propagates `x0` through the input sequence; element 0 is `x0`.
pub fn rollout(model: &DiscreteModel, x0: AgentState, u_seq: &[f64]) -> Vec<AgentState> {
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(x0);
    let mut x = x0.to_array();
    for &u in u_seq {
        x = model.step(x, u);
        out.push(AgentState::from_array(x));
    }
    out
}

/// Same as [`rollout`] but writes raw state arrays into a caller-owned buffer.
pub(crate) fn rollout_into(model: &DiscreteModel, x0: [f64; 3], u_seq: &[f64], out: &mut Vec<[f64; 3]>) {
    out.clear();
    out.push(x0);
    let mut x = x0;
    for &u in u_seq {
        x = model.step(x, u);
        out.push(x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(t_ax: f64, ts: f64) -> DiscreteModel {
        DiscreteModel::from_params(&AgentDynamicsParams::new(t_ax, ts).unwrap())
    }

    #[test]
    fn continuous_matrices_substitution() {
        let (a, b) = continuous_matrices(&AgentDynamicsParams::new(1.0, 0.1).unwrap());
        assert_eq!(a[0], [-1.0, 0.0, 0.0]);
        assert_eq!(b, [1.0, 0.0, 0.0]);
        let (a, _) = continuous_matrices(&AgentDynamicsParams::new(0.3, 0.1).unwrap());
        assert!((a[0][0] + 10.0 / 3.0).abs() < 1e-15);
        let (_, b) = continuous_matrices(&AgentDynamicsParams::new(0.5, 0.1).unwrap());
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn zero_sampling_time_is_identity() {
        let (a, b) = continuous_matrices(&AgentDynamicsParams::new(0.3, 0.1).unwrap());
        let m = discretize_exact(&a, &b, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.a[i][j], if i == j { 1.0 } else { 0.0 });
            }
            assert_eq!(m.b[i], 0.0);
        }
    }

    #[test]
    fn lag_pole_matches_scalar_exponential() {
        let m = model(0.3, 0.1);
        assert!((m.a[0][0] - (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((m.a[0][0] - 0.716531).abs() < 1e-6);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(AgentDynamicsParams::new(0.0, 0.1).is_err());
        assert!(AgentDynamicsParams::new(0.3, -0.1).is_err());
        assert!(AgentDynamicsParams::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn coasting_integrates_distance() {
        let m = model(0.3, 0.1);
        let traj = rollout(&m, AgentState::new(0.0, 7.0, 0.0), &[0.0; 20]);
        assert_eq!(traj.len(), 21);
        for (j, x) in traj.iter().enumerate() {
            assert!((x.s - 7.0 * 0.1 * j as f64).abs() < 1e-12);
            assert_eq!(x.v, 7.0);
        }
    }

    #[test]
    fn acceleration_settles_to_setpoint() {
        let m = model(0.3, 1.0);
        let traj = rollout(&m, AgentState::default(), &[2.5; 10]);
        assert!((traj[10].a_x - 2.5).abs() < 1e-12);
    }
}
