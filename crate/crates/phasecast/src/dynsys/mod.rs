//! Classical dynamical systems and their simulation.
//!
//! Three systems are supported, each parameterized by a small vector of
//! hidden factors that later become supervision targets:
//!
//! * Pendulum: state `[theta, omega]`, single factor `l` (length), fixed
//!   gravitational acceleration [`PENDULUM_G`].
//! * Lotka-Volterra: state `[x, y]` (prey, predator), factors
//!   `[alpha, beta, gamma, delta]`.
//! * Planar three-body: state `[x1, y1, x2, y2, x3, y3, vx1, .., vy3]`
//!   (positions first, then velocities), factors `[k, m1, m2, m3]` where
//!   `k` is the coupling constant of the pairwise attraction.
//!
//! [`integrate`] samples the continuous solution on the fixed grid
//! `t_n = n * dt_out` using the Dormand-Prince 5(4) pair with dense output
//! (see [`dopri5`]), so the reported states are interpolated to fourth
//! order rather than forced step endpoints.

pub mod dopri5;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output grid spacing shared by all systems.
pub const DT: f64 = 0.01;

/// Default integration tolerance, used for both the absolute and relative
/// component of the error norm.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Gravitational acceleration for the pendulum, m/s^2.
pub const PENDULUM_G: f64 = 9.81;

/// Two bodies closer than this are treated as a collision and abort the
/// integration instead of producing garbage accelerations.
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Pendulum,
    LotkaVolterra,
    ThreeBody,
}

impl SystemKind {
    pub fn state_dim(self) -> usize {
        match self {
            SystemKind::Pendulum | SystemKind::LotkaVolterra => 2,
            SystemKind::ThreeBody => 12,
        }
    }

    /// Number of hidden factors `k`.
    pub fn factor_count(self) -> usize {
        match self {
            SystemKind::Pendulum => 1,
            SystemKind::LotkaVolterra | SystemKind::ThreeBody => 4,
        }
    }

    /// Canonical trajectory length in grid steps.
    pub fn seq_len(self) -> usize {
        match self {
            SystemKind::Pendulum => 2000,
            SystemKind::LotkaVolterra | SystemKind::ThreeBody => 1000,
        }
    }

    pub fn factor_names(self) -> &'static [&'static str] {
        match self {
            SystemKind::Pendulum => &["l"],
            SystemKind::LotkaVolterra => &["alpha", "beta", "gamma", "delta"],
            SystemKind::ThreeBody => &["k", "m1", "m2", "m3"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::LotkaVolterra => "lotka_volterra",
            SystemKind::ThreeBody => "three_body",
        }
    }
}

/// Where the coupling factor of the three-body system enters the equations
/// of motion. [`ThreeBodyCoupling::Force`] scales the pairwise attraction;
/// [`ThreeBodyCoupling::Kinematic`] instead scales the position derivative
/// and leaves the force constant at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeBodyCoupling {
    #[default]
    Force,
    Kinematic,
}

/// Ordered factor values for one trajectory. Length always matches the
/// system's factor count; every entry is finite and strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorVector {
    system: SystemKind,
    values: Vec<f64>,
}

impl FactorVector {
    pub fn new(system: SystemKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != system.factor_count() {
            return Err(Error::shape(
                "FactorVector::new",
                format!(
                    "{} expects {} factors, got {}",
                    system.name(),
                    system.factor_count(),
                    values.len()
                ),
            ));
        }
        for (name, &v) in system.factor_names().iter().zip(&values) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(format!(
                    "factor {name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(FactorVector { system, values })
    }

    pub fn system(&self) -> SystemKind {
        self.system
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.system
            .factor_names()
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values[i])
    }
}

/// Pendulum equations of motion: `d theta = omega`,
/// `d omega = -(g / l) sin theta`.
pub fn pendulum_deriv(state: &[f64; 2], l: f64) -> [f64; 2] {
    let [theta, omega] = *state;
    [omega, -(PENDULUM_G / l) * theta.sin()]
}

/// Lotka-Volterra equations with factors `[alpha, beta, gamma, delta]`:
/// `dx = alpha x - beta x y`, `dy = delta x y - gamma y`.
pub fn lotka_volterra_deriv(state: &[f64; 2], factors: &[f64; 4]) -> [f64; 2] {
    let [x, y] = *state;
    let [alpha, beta, gamma, delta] = *factors;
    [alpha * x - beta * x * y, delta * x * y - gamma * y]
}

/// Planar three-body equations with factors `[k, m1, m2, m3]`. Every pair
/// attracts with force `k * m_i * m_j / r^2` along the separation vector;
/// the acceleration of body `i` is `k * sum_j m_j (p_j - p_i) / r^3`.
///
/// Fails when two bodies come within [`MIN_SEPARATION`] of each other.
pub fn three_body_deriv(
    state: &[f64; 12],
    factors: &[f64; 4],
    coupling: ThreeBodyCoupling,
) -> Result<[f64; 12]> {
    let k = factors[0];
    let masses = [factors[1], factors[2], factors[3]];
    let force_scale = match coupling {
        ThreeBodyCoupling::Force => k,
        ThreeBodyCoupling::Kinematic => 1.0,
    };
    let pos_scale = match coupling {
        ThreeBodyCoupling::Force => 1.0,
        ThreeBodyCoupling::Kinematic => k,
    };

    let mut deriv = [0.0; 12];
    for i in 0..3 {
        deriv[2 * i] = pos_scale * state[6 + 2 * i];
        deriv[2 * i + 1] = pos_scale * state[6 + 2 * i + 1];
    }
    for i in 0..3 {
        let (xi, yi) = (state[2 * i], state[2 * i + 1]);
        let mut ax = 0.0;
        let mut ay = 0.0;
        for j in 0..3 {
            if j == i {
                continue;
            }
            let dx = state[2 * j] - xi;
            let dy = state[2 * j + 1] - yi;
            let r = (dx * dx + dy * dy).sqrt();
            if r < MIN_SEPARATION {
                return Err(Error::numerics(format!(
                    "three-body collision: bodies {i} and {j} separated by {r:.3e} \
                     (threshold {MIN_SEPARATION:.0e})"
                )));
            }
            let inv_r3 = 1.0 / (r * r * r);
            ax += masses[j] * dx * inv_r3;
            ay += masses[j] * dy * inv_r3;
        }
        deriv[6 + 2 * i] = force_scale * ax;
        deriv[6 + 2 * i + 1] = force_scale * ay;
    }
    Ok(deriv)
}

/// One simulated sequence on the fixed output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    system: SystemKind,
    factors: FactorVector,
    initial_state: Vec<f64>,
    dt: f64,
    n_steps: usize,
    states: Vec<f64>,
}

impl Trajectory {
    /// Wraps raw row-major states `[n_steps x state_dim]`. Every entry must
    /// be finite and the first row must equal the initial state.
    pub fn new(
        system: SystemKind,
        factors: FactorVector,
        initial_state: Vec<f64>,
        dt: f64,
        states: Vec<f64>,
    ) -> Result<Self> {
        let dim = system.state_dim();
        if factors.system() != system {
            return Err(Error::config(format!(
                "factor vector belongs to {}, trajectory is {}",
                factors.system().name(),
                system.name()
            )));
        }
        if initial_state.len() != dim {
            return Err(Error::shape(
                "Trajectory::new",
                format!("initial state has {} entries, expected {dim}", initial_state.len()),
            ));
        }
        if states.is_empty() || states.len() % dim != 0 {
            return Err(Error::shape(
                "Trajectory::new",
                format!("state buffer of {} entries is not a multiple of {dim}", states.len()),
            ));
        }
        if let Some(bad) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerics(format!(
                "trajectory contains non-finite value at flat index {bad}"
            )));
        }
        if states[..dim] != initial_state[..] {
            return Err(Error::config(
                "first trajectory row differs from the initial state".to_string(),
            ));
        }
        let n_steps = states.len() / dim;
        Ok(Trajectory {
            system,
            factors,
            initial_state,
            dt,
            n_steps,
            states,
        })
    }

    pub fn system(&self) -> SystemKind {
        self.system
    }

    pub fn factors(&self) -> &FactorVector {
        &self.factors
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// State at grid index `t`, a slice of length `state_dim`.
    pub fn state(&self, t: usize) -> &[f64] {
        let dim = self.state_dim();
        &self.states[t * dim..(t + 1) * dim]
    }

    /// Flat row-major view of all states.
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// Integrates `kind` from `initial` and samples `n_steps` grid points
/// spaced `dt_out` apart (the first point is the initial state itself).
pub fn integrate(
    kind: SystemKind,
    factors: &FactorVector,
    initial: &[f64],
    n_steps: usize,
    dt_out: f64,
    tol: f64,
) -> Result<Trajectory> {
    integrate_with(kind, factors, initial, n_steps, dt_out, tol, ThreeBodyCoupling::default())
}

/// [`integrate`] with an explicit three-body coupling mode. The mode is
/// ignored for the other systems.
pub fn integrate_with(
    kind: SystemKind,
    factors: &FactorVector,
    initial: &[f64],
    n_steps: usize,
    dt_out: f64,
    tol: f64,
    coupling: ThreeBodyCoupling,
) -> Result<Trajectory> {
    if factors.system() != kind {
        return Err(Error::config(format!(
            "factor vector belongs to {}, integration target is {}",
            factors.system().name(),
            kind.name()
        )));
    }
    if initial.len() != kind.state_dim() {
        return Err(Error::shape(
            "integrate",
            format!(
                "initial state has {} entries, {} expects {}",
                initial.len(),
                kind.name(),
                kind.state_dim()
            ),
        ));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerics("initial state contains non-finite values".to_string()));
    }
    if n_steps == 0 {
        return Err(Error::config("n_steps must be at least 1".to_string()));
    }
    if !(dt_out > 0.0) || !dt_out.is_finite() {
        return Err(Error::config(format!("dt_out must be positive and finite, got {dt_out}")));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::config(format!("tol must be positive and finite, got {tol}")));
    }

    let values = factors.values();
    let states = match kind {
        SystemKind::Pendulum => {
            let l = values[0];
            dopri5::solve_grid(
                |_t, y: &[f64], dy: &mut [f64]| {
                    let d = pendulum_deriv(&[y[0], y[1]], l);
                    dy.copy_from_slice(&d);
                    Ok(())
                },
                initial,
                n_steps,
                dt_out,
                tol,
                tol,
            )?
        }
        SystemKind::LotkaVolterra => {
            let f = [values[0], values[1], values[2], values[3]];
            dopri5::solve_grid(
                |_t, y: &[f64], dy: &mut [f64]| {
                    let d = lotka_volterra_deriv(&[y[0], y[1]], &f);
                    dy.copy_from_slice(&d);
                    Ok(())
                },
                initial,
                n_steps,
                dt_out,
                tol,
                tol,
            )?
        }
        SystemKind::ThreeBody => {
            let f = [values[0], values[1], values[2], values[3]];
            dopri5::solve_grid(
                |t, y: &[f64], dy: &mut [f64]| {
                    let mut state = [0.0; 12];
                    state.copy_from_slice(y);
                    let d = three_body_deriv(&state, &f, coupling)
                        .map_err(|e| Error::numerics(format!("{e} at t={t:.6}")))?;
                    dy.copy_from_slice(&d);
                    Ok(())
                },
                initial,
                n_steps,
                dt_out,
                tol,
                tol,
            )?
        }
    };

    Trajectory::new(kind, factors.clone(), initial.to_vec(), dt_out, states.states)
}
