//! Independent certificate oracles.
//!
//! Nothing here touches the SDP: certificates are cross-checked in the
//! frequency domain by sampling the multiplier inequality on the unit
//! circle, and in the time domain by rolling out the closed loop against a
//! battery of slope-restricted nonlinearities and fitting the decay rate.
//!
//! Sign conventions, fixed once for the whole crate: the loop is
//! `v = G w`, `w = Delta(v)` (so a linear slope `g` gives the closed-loop
//! matrix `A + g B C` and characteristic polynomial `den - g num`), and the
//! certified frequency-domain inequality is
//!
//! `Re{ M(z) (K G(rho z) - 1) } < 0  on |z| = 1`,
//!
//! equivalently `lambda_max([G; I]^* Pi [G; I]) < 0` with the Zames-Falb
//! Pi. A rho-form multiplier evaluates as `M(rho, z)` in the same place.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::factorization::{Factorization, FactorizationError};
use crate::lmi::{certified_composition, implied_variant, LmiError};
use crate::lti::{freq_response, freq_response_scalar, scale_rho, spectral_radius, LtiError, StateSpace};
use crate::multiplier::{FirMultiplier, MultiplierError, MultiplierForm};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("rho = {rho} is at or below the plant spectral radius {sr}: poles on the sweep grid")]
    RhoBelowSpectralRadius { rho: f64, sr: f64 },
    #[error("frequency grid must have at least 64 points, got {0}")]
    GridTooCoarse(usize),
    #[error("simulation supports SISO plants, got {outputs}x{inputs}")]
    NotSiso { outputs: usize, inputs: usize },
    #[error("implicit feedthrough loop did not converge (|D| * slope >= 1?)")]
    IllPosedFeedthrough,
    #[error("nonlinearity violates the slope restriction [0, {k}]: segment slope {slope}")]
    SlopeViolation { k: f64, slope: f64 },
    #[error("piecewise nonlinearity needs strictly increasing positive breakpoints")]
    BadBreakpoints,
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
}

/// Memoryless slope-restricted nonlinearities used by the simulation
/// battery. All satisfy N(0) = 0 and slopes within [0, slope].
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    Linear { gain: f64 },
    Saturation { slope: f64, level: f64 },
    Deadzone { slope: f64, width: f64 },
    PiecewiseOdd { points: Vec<(f64, f64)> },
}

impl Nonlinearity {
    /// Piecewise-linear odd nonlinearity through the given positive
    /// breakpoints, constant beyond the last one. Every segment slope must
    /// lie in [0, k].
    pub fn piecewise_odd(points: Vec<(f64, f64)>, k: f64) -> Result<Self, VerifyError> {
        let mut prev = (0.0, 0.0);
        for &(x, y) in &points {
            if x <= prev.0 {
                return Err(VerifyError::BadBreakpoints);
            }
            let slope = (y - prev.1) / (x - prev.0);
            if !(0.0..=k + 1e-12).contains(&slope) {
                return Err(VerifyError::SlopeViolation { k, slope });
            }
            prev = (x, y);
        }
        Ok(Nonlinearity::PiecewiseOdd { points })
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Linear { gain } => gain * x,
            Nonlinearity::Saturation { slope, level } => slope * x.clamp(-level, *level),
            Nonlinearity::Deadzone { slope, width } => {
                slope * (x - x.clamp(-width, *width))
            }
            Nonlinearity::PiecewiseOdd { points } => {
                let ax = x.abs();
                let mut prev = (0.0, 0.0);
                for &(bx, by) in points {
                    if ax <= bx {
                        let slope = (by - prev.1) / (bx - prev.0);
                        return x.signum() * (prev.1 + slope * (ax - prev.0));
                    }
                    prev = (bx, by);
                }
                x.signum() * prev.1
            }
        }
    }

    /// Largest slope of the map.
    pub fn max_slope(&self) -> f64 {
        match self {
            Nonlinearity::Linear { gain } => gain.abs(),
            Nonlinearity::Saturation { slope, .. } | Nonlinearity::Deadzone { slope, .. } => {
                slope.abs()
            }
            Nonlinearity::PiecewiseOdd { points } => {
                let mut prev = (0.0, 0.0);
                let mut worst: f64 = 0.0;
                for &(x, y) in points {
                    worst = worst.max((y - prev.1) / (x - prev.0));
                    prev = (x, y);
                }
                worst
            }
        }
    }
}

/// Closed-loop rollout data.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<f64>,
    pub inputs: Vec<f64>,
    /// Set when the state left the finite range; reported, not thrown.
    pub diverged: bool,
}

impl Trajectory {
    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.norm()).collect()
    }

    /// CSV rows `k,norm_x,v,w` for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,norm_x,v,w\n");
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                k,
                x.norm(),
                self.outputs[k],
                self.inputs[k]
            ));
        }
        out
    }
}

/// Unforced closed-loop rollout of `v = G w`, `w = Delta(v)` from `x0`.
pub fn simulate(
    plant: &StateSpace,
    delta: &Nonlinearity,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<Trajectory, VerifyError> {
    if plant.outputs() != 1 || plant.inputs() != 1 {
        return Err(VerifyError::NotSiso {
            outputs: plant.outputs(),
            inputs: plant.inputs(),
        });
    }
    let d = plant.d[(0, 0)];
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon + 1);
    let mut diverged = false;
    for _ in 0..=horizon {
        let cx = (&plant.c * &x)[(0, 0)];
        let w = if d == 0.0 {
            delta.apply(cx)
        } else {
            // Implicit loop v = cx + d w, w = Delta(v); damped fixed point.
            let mut w = delta.apply(cx);
            let mut converged = false;
            for _ in 0..200 {
                let next = delta.apply(cx + d * w);
                if (next - w).abs() <= 1e-13 * (1.0 + w.abs()) {
                    w = next;
                    converged = true;
                    break;
                }
                w = 0.5 * w + 0.5 * next;
            }
            if !converged {
                return Err(VerifyError::IllPosedFeedthrough);
            }
            w
        };
        let v = cx + d * w;
        states.push(x.clone());
        outputs.push(v);
        inputs.push(w);
        if !x.iter().all(|c| c.is_finite()) || x.norm() > 1e12 {
            diverged = true;
            break;
        }
        x = &plant.a * &x + &plant.b * DVector::from_element(1, w);
    }
    Ok(Trajectory {
        states,
        outputs,
        inputs,
        diverged,
    })
}

/// Verdict of the decay-rate fit.
#[derive(Debug, Clone, Copy)]
pub struct RateCheck {
    pub ok: bool,
    pub fitted_rate: f64,
}

/// Absolute slack allowed on the fitted rate.
pub const RATE_SLACK: f64 = 0.01;

/// Least-squares decay rate of the trajectory tail (second half), compared
/// against the certified rate with [`RATE_SLACK`].
pub fn check_rate(traj: &Trajectory, rho_certified: f64) -> RateCheck {
    if traj.diverged {
        return RateCheck {
            ok: false,
            fitted_rate: f64::INFINITY,
        };
    }
    let norms = traj.norms();
    let n = norms.len();
    let tail: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .skip(n / 2)
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| (k as f64, v.ln()))
        .collect();
    if tail.len() < 2 {
        // The state reached exactly zero: converged faster than any rate.
        return RateCheck {
            ok: true,
            fitted_rate: 0.0,
        };
    }
    let m = tail.len() as f64;
    let sum_k: f64 = tail.iter().map(|(k, _)| k).sum();
    let sum_y: f64 = tail.iter().map(|(_, y)| y).sum();
    let sum_kk: f64 = tail.iter().map(|(k, _)| k * k).sum();
    let sum_ky: f64 = tail.iter().map(|(k, y)| k * y).sum();
    let slope = (m * sum_ky - sum_k * sum_y) / (m * sum_kk - sum_k * sum_k);
    let fitted = slope.exp();
    RateCheck {
        ok: fitted <= rho_certified + RATE_SLACK,
        fitted_rate: fitted,
    }
}

/// Result of a frequency sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdiReport {
    pub max_real: f64,
    pub worst_z: Complex64,
}

/// Samples `Re{M(z) (K G(rho z) - 1)}` on a uniform unit-circle grid and
/// returns the maximum. Strictly negative confirms the certificate
/// frequency-wise.
pub fn fdi_sweep(
    m: &FirMultiplier,
    plant: &StateSpace,
    k: f64,
    rho: f64,
    grid_n: usize,
) -> Result<FdiReport, VerifyError> {
    if grid_n < 64 {
        return Err(VerifyError::GridTooCoarse(grid_n));
    }
    let sr = spectral_radius(plant);
    if rho <= sr {
        return Err(VerifyError::RhoBelowSpectralRadius { rho, sr });
    }
    if let MultiplierForm::Rho(r) = m.form() {
        debug_assert!((r - rho).abs() <= 1e-9, "multiplier rho {r} vs sweep rho {rho}");
    }
    let scaled = scale_rho(plant, rho)?;
    let mut worst = (f64::NEG_INFINITY, Complex64::new(1.0, 0.0));
    for j in 0..grid_n {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / grid_n as f64;
        let z = Complex64::from_polar(1.0, theta);
        let g = freq_response_scalar(&scaled, z)?;
        let mv = m.eval(z)?;
        let val = (mv * (k * g - 1.0)).re;
        if val > worst.0 {
            worst = (val, z);
        }
    }
    Ok(FdiReport {
        max_real: worst.0,
        worst_z: worst.1,
    })
}

/// Matrix form of the sweep: maximum over the grid of the largest
/// eigenvalue of `Phi(z)^H Kp Phi(z)` where `Phi = Psi [G_rho; I]` is the
/// certified composition of the factorization and the scaled plant. For a
/// feasible assembly with margin t this must stay below -t.
pub fn matrix_fdi_sweep(
    fact: &Factorization,
    plant: &StateSpace,
    rho: f64,
    grid_n: usize,
) -> Result<f64, VerifyError> {
    if grid_n < 64 {
        return Err(VerifyError::GridTooCoarse(grid_n));
    }
    let sr = spectral_radius(plant);
    if rho <= sr {
        return Err(VerifyError::RhoBelowSpectralRadius { rho, sr });
    }
    let comp = certified_composition(fact, plant, rho, implied_variant(fact))?;
    let kp_c = fact.kp.map(|v| Complex64::new(v, 0.0));
    let mut worst = f64::NEG_INFINITY;
    for j in 0..grid_n {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / grid_n as f64;
        let z = Complex64::from_polar(1.0, theta);
        let phi = freq_response(&comp, z)?;
        let quad = phi.adjoint() * &kp_c * phi;
        worst = worst.max(hermitian_eig_max(&quad));
    }
    Ok(worst)
}

/// Largest eigenvalue of a small Hermitian matrix (the sweeps produce 1x1
/// quadratic forms for SISO loops; the general path covers tests).
fn hermitian_eig_max(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return m[(0, 0)].re;
    }
    // Power iteration with a real diagonal shift.
    let shift = m.iter().map(|c| c.norm()).sum::<f64>() + 1.0;
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += Complex64::new(shift, 0.0);
    }
    let mut v = DVector::from_element(n, Complex64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = &shifted * &v;
        lambda = v.dotc(&w).re;
        let norm = w.norm();
        if norm == 0.0 {
            return -shift;
        }
        v = w / Complex64::new(norm, 0.0);
    }
    lambda - shift
}

/// One entry of the time-domain battery.
#[derive(Debug, Clone)]
pub struct BatteryCase {
    pub label: String,
    pub fitted_rate: f64,
    pub ok: bool,
}

/// Outcome of the full simulation battery.
#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub cases: Vec<BatteryCase>,
    pub all_ok: bool,
}

/// Rolls out the certified loop against linear gains, saturations and
/// deadzones within the slope class, from several deterministic initial
/// states, and fits each decay rate against the certificate.
pub fn simulation_battery(
    plant: &StateSpace,
    k: f64,
    rho_certified: f64,
    horizon: usize,
) -> Result<BatteryReport, VerifyError> {
    let mut deltas: Vec<(String, Nonlinearity)> = Vec::new();
    for (i, frac) in [0.2, 0.4, 0.6, 0.8, 1.0].iter().enumerate() {
        deltas.push((
            format!("linear[{i}]"),
            Nonlinearity::Linear { gain: frac * k },
        ));
    }
    for (i, level) in [0.1, 0.5, 2.0].iter().enumerate() {
        deltas.push((
            format!("saturation[{i}]"),
            Nonlinearity::Saturation {
                slope: k,
                level: *level,
            },
        ));
    }
    for (i, width) in [0.05, 0.3, 1.0].iter().enumerate() {
        deltas.push((
            format!("deadzone[{i}]"),
            Nonlinearity::Deadzone {
                slope: k,
                width: *width,
            },
        ));
    }
    let n = plant.order();
    // Deterministic spread of initial states.
    let x0s: Vec<DVector<f64>> = (0..5)
        .map(|s| {
            DVector::from_fn(n, |i, _| {
                let t = (s * n + i) as f64;
                3.0 * (1.7 * t + 0.3).sin() + 0.1
            })
        })
        .collect();
    let mut cases = Vec::new();
    let mut all_ok = true;
    for (label, delta) in &deltas {
        for (sx, x0) in x0s.iter().enumerate() {
            let traj = simulate(plant, delta, x0, horizon)?;
            let check = check_rate(&traj, rho_certified);
            all_ok &= check.ok;
            cases.push(BatteryCase {
                label: format!("{label} x0[{sx}]"),
                fitted_rate: check.fitted_rate,
                ok: check.ok,
            });
        }
    }
    Ok(BatteryReport { cases, all_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::factorization::{build_pi, build_psi2, RhoSubstitution};
    use crate::lti::realize;
    use approx::assert_relative_eq;

    fn ex1() -> StateSpace {
        realize(&corpus::example(1).plant).unwrap()
    }

    #[test]
    fn fdi_circle_criterion_ex1() {
        // Static multiplier, K = 1, rho near 1: the circle criterion holds.
        let m = FirMultiplier::identity();
        let rep = fdi_sweep(&m, &ex1(), 1.0, 0.99, 256).unwrap();
        assert!(rep.max_real < 0.0, "max {}", rep.max_real);
    }

    #[test]
    fn fdi_boundary_case() {
        // M = 1, G = -1 static, K = 1, rho = 1: Re{1 * (K(-1) - 1)} = -2;
        // the boundary case of the sign convention is G = +1:
        // Re{1 * (1 - 1)} = 0, not certified.
        let g_plus = StateSpace::from_static(DMatrix::from_element(1, 1, 1.0));
        let m = FirMultiplier::identity();
        let rep = fdi_sweep(&m, &g_plus, 1.0, 1.0, 64).unwrap();
        assert_relative_eq!(rep.max_real, 0.0, epsilon = 1e-12);
        assert!(rep.max_real >= 0.0);
    }

    #[test]
    fn fdi_rejects_pole_on_grid() {
        let m = FirMultiplier::identity();
        assert!(matches!(
            fdi_sweep(&m, &ex1(), 1.0, 0.3, 64),
            Err(VerifyError::RhoBelowSpectralRadius { .. })
        ));
    }

    #[test]
    fn matrix_fdi_static_example() {
        // [g; 1]^* Pi [g; 1] with M = 1 equals 2(K g - 1): for g = -5
        // (example 1 at rho = 0.6 evaluated at z = 1), K = 1: -12.
        let g = freq_response_scalar(
            &scale_rho(&ex1(), 0.6).unwrap(),
            Complex64::new(1.0, 0.0),
        )
        .unwrap();
        assert_relative_eq!(g.re, -5.0, epsilon = 1e-12);
        let pi = build_pi(&FirMultiplier::identity(), 1.0, Complex64::new(1.0, 0.0)).unwrap();
        let gi = DMatrix::from_column_slice(2, 1, &[g, Complex64::new(1.0, 0.0)]);
        let quad = gi.adjoint() * pi * gi;
        assert_relative_eq!(quad[(0, 0)].re, -12.0, epsilon = 1e-10);
    }

    #[test]
    fn matrix_fdi_agrees_with_scalar_sign() {
        // For the Zames-Falb Pi the 1x1 quadratic form is exactly
        // 2 Re{M (K G - 1)} at every grid point.
        let m = FirMultiplier::new(1.0, vec![0.2], vec![0.1], true, MultiplierForm::Plain)
            .unwrap();
        let fact = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let plant = ex1();
        let rho = 0.95;
        let mat = matrix_fdi_sweep(&fact, &plant, rho, 128).unwrap();
        let sca = fdi_sweep(&m, &plant, 1.0, rho, 128).unwrap();
        assert_relative_eq!(mat, 2.0 * sca.max_real, epsilon = 1e-9);
    }

    #[test]
    fn simulate_open_loop_decay() {
        let traj = simulate(
            &ex1(),
            &Nonlinearity::Linear { gain: 0.0 },
            &DVector::from_element(1, 5.0),
            120,
        )
        .unwrap();
        assert!(!traj.diverged);
        let check = check_rate(&traj, 0.4);
        assert!(check.ok);
        assert_relative_eq!(check.fitted_rate, 0.4, epsilon = 1e-9);
    }

    #[test]
    fn simulate_linear_closed_loop_rate() {
        // Linear gain K = 1 on example 1: closed loop pole 0.4 - 1 = -0.6.
        let traj = simulate(
            &ex1(),
            &Nonlinearity::Linear { gain: 1.0 },
            &DVector::from_element(1, 1.0),
            200,
        )
        .unwrap();
        let check = check_rate(&traj, 0.6);
        assert!(check.ok, "fitted {}", check.fitted_rate);
        assert_relative_eq!(check.fitted_rate, 0.6, epsilon = 1e-6);
    }

    #[test]
    fn simulate_saturation_tail() {
        let traj = simulate(
            &ex1(),
            &Nonlinearity::Saturation {
                slope: 1.0,
                level: 0.1,
            },
            &DVector::from_element(1, 50.0),
            400,
        )
        .unwrap();
        assert!(!traj.diverged);
        // Tail decays at the linear rate 0.6 once inside the band.
        let check = check_rate(&traj, 0.6 + 1e-3);
        assert!(check.ok, "fitted {}", check.fitted_rate);
    }

    #[test]
    fn check_rate_geometric() {
        let states: Vec<DVector<f64>> = (0..200)
            .map(|k| DVector::from_element(1, 0.6f64.powi(k)))
            .collect();
        let n = states.len();
        let traj = Trajectory {
            states,
            outputs: vec![0.0; n],
            inputs: vec![0.0; n],
            diverged: false,
        };
        let check = check_rate(&traj, 0.6);
        assert!(check.ok);
        assert_relative_eq!(check.fitted_rate, 0.6, epsilon = 1e-6);
        assert!(!check_rate(&traj, 0.55).ok);
    }

    #[test]
    fn check_rate_zero_trajectory() {
        let traj = Trajectory {
            states: vec![DVector::zeros(2); 100],
            outputs: vec![0.0; 100],
            inputs: vec![0.0; 100],
            diverged: false,
        };
        assert!(check_rate(&traj, 0.5).ok);
    }

    #[test]
    fn nonlinearities_slope_restricted() {
        let k = 2.0;
        let battery = [
            Nonlinearity::Linear { gain: k },
            Nonlinearity::Saturation { slope: k, level: 0.7 },
            Nonlinearity::Deadzone { slope: k, width: 0.3 },
            Nonlinearity::piecewise_odd(vec![(0.5, 0.8), (1.0, 1.2), (2.0, 1.2)], k).unwrap(),
        ];
        for delta in &battery {
            assert_eq!(delta.apply(0.0), 0.0);
            assert!(delta.max_slope() <= k + 1e-12);
            let mut prev_x = -3.0;
            let mut prev_y = delta.apply(prev_x);
            for i in 1..=600 {
                let x = -3.0 + 6.0 * i as f64 / 600.0;
                let y = delta.apply(x);
                let slope = (y - prev_y) / (x - prev_x);
                assert!(
                    (-1e-9..=k + 1e-9).contains(&slope),
                    "slope {slope} out of [0, {k}]"
                );
                prev_x = x;
                prev_y = y;
            }
        }
    }

    #[test]
    fn piecewise_rejects_steep_segments() {
        assert!(Nonlinearity::piecewise_odd(vec![(0.1, 1.0)], 2.0).is_err());
        assert!(Nonlinearity::piecewise_odd(vec![(0.5, 0.4), (0.4, 0.5)], 2.0).is_err());
    }

    #[test]
    fn battery_on_linear_bound() {
        // Certified rate 0.6 covers the whole slope class of example 1.
        let report = simulation_battery(&ex1(), 1.0, 0.6, 300).unwrap();
        assert!(report.all_ok, "failures: {:?}", report
            .cases
            .iter()
            .filter(|c| !c.ok)
            .collect::<Vec<_>>());
        assert_eq!(report.cases.len(), 11 * 5);
    }

    #[test]
    fn trajectory_csv_schema() {
        let traj = simulate(
            &ex1(),
            &Nonlinearity::Linear { gain: 0.5 },
            &DVector::from_element(1, 1.0),
            5,
        )
        .unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,norm_x,v,w");
        assert_eq!(lines.count(), 6);
    }
}
