//! Inverted-pendulum NMPC benchmark.
//!
//! Dynamics `m l² ω̈ = u − b ω̇ − m g l sin ω`, transcribed by direct multiple
//! shooting with one RK4 step per interval. The parameter is the initial
//! state `p = (ω, ω̇)`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adgraph::{Expr, ExprGraph};
use crate::nlp::ParametricNlp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub b: f64,
    pub grav: f64,
    pub u_max: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            l: 1.0,
            b: 0.1,
            grav: 9.81,
            u_max: 20.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("m", self.m),
            ("l", self.l),
            ("b", self.b),
            ("grav", self.grav),
            ("u_max", self.u_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSpec {
    /// Number of shooting intervals `N`.
    pub horizon: usize,
    pub dt: f64,
    /// Stage weights on `(ω − ω_ref, ω̇)`.
    pub q: [f64; 2],
    pub r: f64,
    pub p_term: [f64; 2],
    pub x_ref: [f64; 2],
}

impl Default for MpcSpec {
    fn default() -> Self {
        Self {
            horizon: 40,
            dt: 0.05,
            q: [10.0, 0.1],
            r: 0.01,
            p_term: [10.0, 0.1],
            x_ref: [3.14, 0.0],
        }
    }
}

impl MpcSpec {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err("dt must be positive".into());
        }
        let weights = [
            ("q", self.q[0]),
            ("q", self.q[1]),
            ("r", self.r),
            ("p_term", self.p_term[0]),
            ("p_term", self.p_term[1]),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} weights must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// The parameter box `[0, 2π] × [−5, 5]` of initial states.
pub fn parameter_box() -> Vec<(f64, f64)> {
    vec![(0.0, 2.0 * PI), (-5.0, 5.0)]
}

trait Scalar: Clone + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn sin(&self) -> Self;
}

impl Scalar for f64 {
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
}

impl Scalar for Expr {
    fn sin(&self) -> Self {
        Expr::sin(self)
    }
}

fn rhs<T: Scalar>(pp: &PendulumParams, x: &[T; 2], u: &T) -> [T; 2] {
    let ml2 = pp.m * pp.l * pp.l;
    let acc =
        (u.clone() - x[1].clone() * pp.b - x[0].sin() * (pp.m * pp.grav * pp.l)) * (1.0 / ml2);
    [x[1].clone(), acc]
}

fn rk4<T: Scalar>(pp: &PendulumParams, x: &[T; 2], u: &T, dt: f64) -> [T; 2] {
    let shift = |k: &[T; 2], h: f64| {
        [
            x[0].clone() + k[0].clone() * h,
            x[1].clone() + k[1].clone() * h,
        ]
    };
    let k1 = rhs(pp, x, u);
    let k2 = rhs(pp, &shift(&k1, 0.5 * dt), u);
    let k3 = rhs(pp, &shift(&k2, 0.5 * dt), u);
    let k4 = rhs(pp, &shift(&k3, dt), u);
    let comb = |i: usize| {
        x[i].clone()
            + (k1[i].clone() + k2[i].clone() * 2.0 + k3[i].clone() * 2.0 + k4[i].clone())
                * (dt / 6.0)
    };
    [comb(0), comb(1)]
}

/// One RK4 step of the plant.
pub fn plant_step(params: &PendulumParams, x: [f64; 2], u: f64, dt: f64) -> [f64; 2] {
    rk4(params, &x, &u, dt)
}

/// Continuous-time state derivative.
pub fn dynamics(params: &PendulumParams, x: [f64; 2], u: f64) -> [f64; 2] {
    rhs(params, &x, &u)
}

/// Index of `x_k[i]` (`k = 1..=N`) in `w`.
pub fn state_index(k: usize, i: usize) -> usize {
    2 * (k - 1) + i
}

/// Index of `u_k` (`k = 0..N`) in `w`.
pub fn input_index(horizon: usize, k: usize) -> usize {
    2 * horizon + k
}

/// Torque of the clipped PD law used to seed the solver.
fn seed_torque(params: &PendulumParams, spec: &MpcSpec, x: [f64; 2]) -> f64 {
    let u = 12.0 * (spec.x_ref[0] - x[0]) - 4.0 * (x[1] - spec.x_ref[1]);
    let lim = 0.95 * params.u_max;
    u.clamp(-lim, lim)
}

/// Primal guess from a closed-loop rollout of a clipped PD controller.
pub fn initial_guess(params: &PendulumParams, spec: &MpcSpec, p: &[f64]) -> Vec<f64> {
    let n = spec.horizon;
    let mut w = vec![0.0; 3 * n];
    let mut x = [p[0], p[1]];
    for k in 0..n {
        let u = seed_torque(params, spec, x);
        w[input_index(n, k)] = u;
        x = plant_step(params, x, u, spec.dt);
        w[state_index(k + 1, 0)] = x[0];
        w[state_index(k + 1, 1)] = x[1];
    }
    w
}

/// Builds the shooting NLP with `w = (x₁..x_N, u₀..u_{N−1})`, `p = x₀`.
pub fn build_nlp(params: &PendulumParams, spec: &MpcSpec) -> ParametricNlp {
    let n = spec.horizon;
    let n_w = 3 * n;
    let state = |k: usize| -> [Expr; 2] {
        if k == 0 {
            [Expr::p(0), Expr::p(1)]
        } else {
            [Expr::w(state_index(k, 0)), Expr::w(state_index(k, 1))]
        }
    };
    let input = |k: usize| Expr::w(input_index(n, k));
    let track = |x: &[Expr; 2], wts: [f64; 2]| {
        wts[0] * (&x[0] - spec.x_ref[0]).square() + wts[1] * (&x[1] - spec.x_ref[1]).square()
    };

    let mut cost = Vec::with_capacity(n + 1);
    let mut defects = Vec::with_capacity(2 * n);
    let mut bounds = Vec::with_capacity(2 * n);
    for k in 0..n {
        let (xk, uk, xn) = (state(k), input(k), state(k + 1));
        cost.push(track(&xk, spec.q) + spec.r * uk.square());
        let next = rk4(params, &xk, &uk, spec.dt);
        defects.push(&xn[0] - &next[0]);
        defects.push(&xn[1] - &next[1]);
        bounds.push(&uk - params.u_max);
        bounds.push(-&uk - params.u_max);
    }
    cost.push(track(&state(n), spec.p_term));

    let objective = ExprGraph::new(n_w, 2, &[Expr::sum(cost)]).expect("pendulum objective");
    let equalities = ExprGraph::new(n_w, 2, &defects).expect("pendulum defects");
    let inequalities = ExprGraph::new(n_w, 2, &bounds).expect("pendulum bounds");
    let (pp, sp) = (params.clone(), spec.clone());
    ParametricNlp::new(
        "pendulum",
        objective,
        equalities,
        inequalities,
        vec![input_index(n, 0)],
    )
    .expect("pendulum transcription is well formed")
    .with_initial_guess(Arc::new(move |p: &[f64]| initial_guess(&pp, &sp, p)))
}
