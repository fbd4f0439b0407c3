//! Dormand-Prince 5(4) integrator with PI step-size control and dense output.
//!
//! The method advances with the fifth-order solution of the embedded 5(4)
//! pair and reuses the last stage as the first stage of the next step
//! (FSAL), so an accepted step costs six right-hand-side evaluations. Step
//! sizes follow the classic PI controller: the scale factor is
//! `err^(-expo1) * err_prev^beta` with `beta = 0.04`, damped by a safety
//! factor of 0.9 and clamped to `[0.2, 10]` times the previous step.
//!
//! Output states are not step endpoints. After each accepted step the
//! fourth-order interpolant
//!
//! `u(theta) = c1 + theta (c2 + (1 - theta) (c3 + theta (c4 + (1 - theta) c5)))`
//!
//! is evaluated at every grid time the step covers, which decouples the
//! output grid from the adaptive step sequence.

use crate::error::{Error, Result};

// Nodes and coupling coefficients of the Dormand-Prince pair.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights for the fifth interpolation coefficient.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
// Step-size ratio bounds: hnew/h is kept inside [FAC_MIN, FAC_MAX].
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 10_000_000;

/// Result of a grid solve: row-major states `[n_steps x dim]` plus step
/// statistics.
#[derive(Debug, Clone)]
pub struct GridSolve {
    pub states: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Integrates `dy = f(t, y)` from `y0` at `t = 0` and returns the solution
/// at `t_n = n * dt_out` for `n in 0..n_steps`. The first grid row is `y0`
/// itself.
pub fn solve_grid<F>(
    mut f: F,
    y0: &[f64],
    n_steps: usize,
    dt_out: f64,
    rtol: f64,
    atol: f64,
) -> Result<GridSolve>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let dim = y0.len();
    if dim == 0 {
        return Err(Error::shape("solve_grid", "empty state vector".to_string()));
    }
    let mut states = Vec::with_capacity(n_steps * dim);
    states.extend_from_slice(y0);
    let mut stats = GridSolve {
        states,
        accepted: 0,
        rejected: 0,
        rhs_evals: 0,
    };
    if n_steps == 1 {
        return Ok(stats);
    }

    let t_end = (n_steps - 1) as f64 * dt_out;
    let mut t = 0.0_f64;
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; dim];
    let mut y_stage = vec![0.0; dim];
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];

    f(t, &y, &mut k1)?;
    stats.rhs_evals += 1;
    check_finite(&k1, t)?;

    let h_max = t_end;
    let mut h = initial_step(&mut f, &y, &k1, rtol, atol, h_max, &mut stats)?;
    let mut fac_old = 1e-4_f64;
    let mut rejected_last = false;
    let mut next_grid = 1usize;
    let mut steps = 0usize;

    while next_grid < n_steps {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::numerics(format!(
                "integration exceeded {MAX_STEPS} steps at t={t:.6} (tol {rtol:.1e})"
            )));
        }
        if h < f64::EPSILON * 10.0 * t.abs().max(1.0) {
            return Err(Error::numerics(format!("step size underflow at t={t:.6}")));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        // Six new stages; k1 carries f(t, y) from the previous step (FSAL).
        for i in 0..dim {
            y_stage[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &y_stage, &mut k2)?;
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &y_stage, &mut k3)?;
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &y_stage, &mut k4)?;
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &y_stage, &mut k5)?;
        for i in 0..dim {
            y_stage[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &y_stage, &mut k6)?;
        for i in 0..dim {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &y_new, &mut k7)?;
        stats.rhs_evals += 6;

        // RMS error normalized per component by atol + rtol * |y|.
        let mut err_sq = 0.0;
        for i in 0..dim {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
            let q = e / sc;
            err_sq += q * q;
        }
        let err = (err_sq / dim as f64).sqrt();

        if !err.is_finite() {
            // A stage blew up; retry with a much smaller step.
            stats.rejected += 1;
            rejected_last = true;
            h *= 0.1;
            continue;
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            // Accept: emit every grid point the step covers via the dense
            // interpolant, then advance.
            stats.accepted += 1;
            let t_new = if last { t_end } else { t + h };

            let tiny = 4.0 * f64::EPSILON * t_new.abs().max(1.0);
            if next_grid < n_steps {
                let needs_dense = (next_grid as f64) * dt_out < t_new - tiny;
                let cont = if needs_dense {
                    Some(dense_coefficients(&y, &y_new, &k1, &k3, &k4, &k5, &k6, &k7, h))
                } else {
                    None
                };
                while next_grid < n_steps {
                    let tg = next_grid as f64 * dt_out;
                    if tg > t_new + tiny {
                        break;
                    }
                    if tg >= t_new - tiny {
                        stats.states.extend_from_slice(&y_new);
                    } else {
                        let cont = cont.as_ref().expect("interior grid point needs dense output");
                        let theta = ((tg - t) / h).clamp(0.0, 1.0);
                        eval_dense(cont, dim, theta, &mut y_stage);
                        stats.states.extend_from_slice(&y_stage);
                    }
                    next_grid += 1;
                }
            }

            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;

            // Lund stabilization uses the error of the previous accepted
            // step, then the current error becomes the new reference.
            let fac = (fac11 / fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);
            let mut h_new = h / fac;
            if h_new > h_max {
                h_new = h_max;
            }
            if rejected_last {
                // No growth directly after a rejection.
                h_new = h_new.min(h);
            }
            rejected_last = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }

    Ok(stats)
}

/// Hairer's starting-step heuristic: balance the size of the initial
/// derivative against the state, then refine with one explicit Euler probe
/// of the second derivative.
fn initial_step<F>(
    f: &mut F,
    y0: &[f64],
    f0: &[f64],
    rtol: f64,
    atol: f64,
    h_max: f64,
    stats: &mut GridSolve,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let dim = y0.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..dim {
        let sc = atol + rtol * y0[i].abs();
        dnf += (f0[i] / sc).powi(2);
        dny += (y0[i] / sc).powi(2);
    }
    let mut h0 = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h0 = h0.min(h_max);

    let mut y1 = vec![0.0; dim];
    for i in 0..dim {
        y1[i] = y0[i] + h0 * f0[i];
    }
    let mut f1 = vec![0.0; dim];
    f(h0, &y1, &mut f1)?;
    stats.rhs_evals += 1;

    let mut der2 = 0.0;
    for i in 0..dim {
        let sc = atol + rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    let der2 = der2.sqrt() / h0;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(h_max))
}

/// Interpolation coefficients of an accepted step, laid out as five
/// concatenated vectors of length `dim`.
#[allow(clippy::too_many_arguments)]
fn dense_coefficients(
    y: &[f64],
    y_new: &[f64],
    k1: &[f64],
    k3: &[f64],
    k4: &[f64],
    k5: &[f64],
    k6: &[f64],
    k7: &[f64],
    h: f64,
) -> Vec<f64> {
    let dim = y.len();
    let mut cont = vec![0.0; 5 * dim];
    for i in 0..dim {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        cont[i] = y[i];
        cont[dim + i] = ydiff;
        cont[2 * dim + i] = bspl;
        cont[3 * dim + i] = ydiff - h * k7[i] - bspl;
        cont[4 * dim + i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    cont
}

fn eval_dense(cont: &[f64], dim: usize, theta: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..dim {
        out[i] = cont[i]
            + theta
                * (cont[dim + i]
                    + theta1
                        * (cont[2 * dim + i]
                            + theta * (cont[3 * dim + i] + theta1 * cont[4 * dim + i])));
    }
}

fn check_finite(k: &[f64], t: f64) -> Result<()> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerics(format!(
            "right-hand side returned non-finite values at t={t:.6}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let sol = solve_grid(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = -y[0];
                Ok(())
            },
            &[1.0],
            101,
            0.01,
            1e-10,
            1e-10,
        )
        .unwrap();
        for n in 0..101 {
            let t = n as f64 * 0.01;
            assert!((sol.states[n] - (-t).exp()).abs() < 1e-9, "grid point {n}");
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output_is_accurate() {
        // y'' = -y integrated as a system; solution (cos t, -sin t).
        let sol = solve_grid(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            &[1.0, 0.0],
            1001,
            0.01,
            1e-9,
            1e-9,
        )
        .unwrap();
        assert_eq!(sol.states.len(), 2002);
        for n in (0..1001).step_by(50) {
            let t = n as f64 * 0.01;
            assert!((sol.states[2 * n] - t.cos()).abs() < 1e-7);
            assert!((sol.states[2 * n + 1] + t.sin()).abs() < 1e-7);
        }
        // Steps are adaptive: far fewer than one per grid point.
        assert!(sol.accepted < 500, "accepted {} steps", sol.accepted);
    }

    #[test]
    fn first_grid_row_is_initial_state_bitwise() {
        let y0 = [0.12345678901234567, -9.87654321];
        let sol = solve_grid(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            &y0,
            2,
            0.01,
            1e-8,
            1e-8,
        )
        .unwrap();
        assert_eq!(&sol.states[..2], &y0);
    }

    #[test]
    fn single_grid_point_needs_no_rhs() {
        let sol = solve_grid(
            |_t, _y: &[f64], _dy: &mut [f64]| panic!("must not be called"),
            &[1.0, 2.0],
            1,
            0.01,
            1e-8,
            1e-8,
        )
        .unwrap();
        assert_eq!(sol.states, vec![1.0, 2.0]);
        assert_eq!(sol.rhs_evals, 0);
    }

    #[test]
    fn rhs_errors_propagate() {
        let err = solve_grid(
            |t, _y: &[f64], _dy: &mut [f64]| {
                if t > 0.5 {
                    Err(Error::numerics("boom".to_string()))
                } else {
                    Ok(())
                }
            },
            &[1.0],
            201,
            0.01,
            1e-8,
            1e-8,
        )
        .unwrap_err();
        assert!(err.to_string().contains("boom"));
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let run = || {
            solve_grid(
                |_t, y: &[f64], dy: &mut [f64]| {
                    dy[0] = y[1];
                    dy[1] = -(9.81 / 1.3) * y[0].sin();
                    Ok(())
                },
                &[1.0, 0.0],
                500,
                0.01,
                1e-8,
                1e-8,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.states, b.states);
        assert_eq!(a.accepted, b.accepted);
    }
}
