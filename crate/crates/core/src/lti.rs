//! Discrete-time LTI systems: transfer functions, state-space realizations,
//! frequency evaluation, rho-scaling and the linear-analysis rate quantities
//! (Nyquist value, theoretical lower bound on the convergence rate).
//!
//! Conventions: transfer functions store real coefficients in descending
//! powers of z. A state-space system realizes `G(z) = C (zI - A)^-1 B + D`.
//! The feedback loop throughout the crate is `v = G w`, `w = Delta(v)`, so a
//! linear gain `Delta = g` closes the loop with characteristic polynomial
//! `den(z) - g num(z) = 0`, i.e. poles of `(1 - g G)^-1`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("denominator polynomial is zero or empty")]
    ZeroDenominator,
    #[error("transfer function is not proper (num degree {num} > den degree {den})")]
    NotProper { num: usize, den: usize },
    #[error("state-space dimensions are inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("rho must lie in (0, 1], got {0}")]
    InvalidRho(f64),
    #[error("matrix zI - A is singular at z = {0}")]
    SingularAtZ(Complex64),
    #[error("closed loop ill-posed: I - gD singular at gain {0}")]
    IllPosedLoop(f64),
    #[error("system must be stable (spectral radius {0} >= 1)")]
    Unstable(f64),
}

/// Proper real rational transfer function in descending powers of z.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TransferFunction {
    /// Builds a transfer function, trimming leading zeros and normalizing the
    /// denominator to be monic. Rejects improper or zero-denominator input.
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, LtiError> {
        let mut num = trim_leading(num);
        let mut den = trim_leading(den);
        if den.is_empty() || den.iter().all(|c| *c == 0.0) {
            return Err(LtiError::ZeroDenominator);
        }
        if num.is_empty() {
            num.push(0.0);
        }
        if num.len() > den.len() && num.iter().any(|c| *c != 0.0) {
            return Err(LtiError::NotProper {
                num: num.len() - 1,
                den: den.len() - 1,
            });
        }
        let lead = den[0];
        for c in &mut den {
            *c /= lead;
        }
        for c in &mut num {
            *c /= lead;
        }
        Ok(Self { num, den })
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Denominator degree.
    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Direct rational evaluation num(z)/den(z). This is the oracle the
    /// realization is tested against.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        horner(&self.num, z) / horner(&self.den, z)
    }
}

fn trim_leading(mut v: Vec<f64>) -> Vec<f64> {
    let lead = v.iter().position(|c| *c != 0.0).unwrap_or(v.len());
    v.drain(..lead);
    v
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Real matrix quadruple (A, B, C, D) realizing an LTI system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::DimensionMismatch(format!(
                "A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LtiError::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Static (memoryless) system y = D u.
    pub fn from_static(d: DMatrix<f64>) -> Self {
        let (p, m) = (d.nrows(), d.ncols());
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_stable(&self) -> bool {
        spectral_radius(self) < 1.0
    }
}

/// Controllable canonical realization of a proper transfer function.
///
/// The contract is the frequency response, not the particular coordinates:
/// the realized response matches `tf.eval` on the unit circle.
pub fn realize(tf: &TransferFunction) -> Result<StateSpace, LtiError> {
    let n = tf.order();
    // Monic denominator z^n + a1 z^(n-1) + ... + an.
    let a_coeffs = &tf.den[1..];
    // Numerator padded to length n+1: b0 z^n + ... + bn.
    let mut b_coeffs = vec![0.0; n + 1 - tf.num.len()];
    b_coeffs.extend_from_slice(&tf.num);
    let d0 = b_coeffs[0];

    if n == 0 {
        return Ok(StateSpace::from_static(DMatrix::from_element(1, 1, d0)));
    }

    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -a_coeffs[j];
    }
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(0, 0)] = 1.0;
    let mut c = DMatrix::zeros(1, n);
    for j in 0..n {
        c[(0, j)] = b_coeffs[j + 1] - d0 * a_coeffs[j];
    }
    let d = DMatrix::from_element(1, 1, d0);
    StateSpace::new(a, b, c, d)
}

/// Replaces z by rho*z: `G(rho z) ~ (A/rho, B/rho, C, D)`. The response of
/// the scaled system at z equals the original response at rho*z.
pub fn scale_rho(sys: &StateSpace, rho: f64) -> Result<StateSpace, LtiError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(LtiError::InvalidRho(rho));
    }
    Ok(StateSpace {
        a: &sys.a / rho,
        b: &sys.b / rho,
        c: sys.c.clone(),
        d: sys.d.clone(),
    })
}

/// Largest eigenvalue modulus of A; 0 for static systems.
pub fn spectral_radius(sys: &StateSpace) -> f64 {
    matrix_spectral_radius(&sys.a)
}

pub(crate) fn matrix_spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Frequency response C (zI - A)^-1 B + D.
pub fn freq_response(sys: &StateSpace, z: Complex64) -> Result<DMatrix<Complex64>, LtiError> {
    let n = sys.order();
    if n == 0 {
        return Ok(sys.d.map(|v| Complex64::new(v, 0.0)));
    }
    let mut zi_a = sys.a.map(|v| Complex64::new(-v, 0.0));
    for i in 0..n {
        zi_a[(i, i)] += z;
    }
    let bc = sys.b.map(|v| Complex64::new(v, 0.0));
    let lu = zi_a.lu();
    let x = lu.solve(&bc).ok_or(LtiError::SingularAtZ(z))?;
    let cc = sys.c.map(|v| Complex64::new(v, 0.0));
    let dc = sys.d.map(|v| Complex64::new(v, 0.0));
    Ok(&cc * x + dc)
}

/// SISO shortcut for [`freq_response`].
pub fn freq_response_scalar(sys: &StateSpace, z: Complex64) -> Result<Complex64, LtiError> {
    let r = freq_response(sys, z)?;
    debug_assert_eq!((r.nrows(), r.ncols()), (1, 1));
    Ok(r[(0, 0)])
}

/// Closed-loop state matrix A + g B (I - g D)^-1 C for the loop
/// `v = G w`, `w = g v`.
fn closed_loop_a(sys: &StateSpace, gain: f64) -> Result<DMatrix<f64>, LtiError> {
    let m = sys.inputs();
    let well = DMatrix::identity(m, m) - gain * &sys.d;
    let inv = well
        .clone()
        .try_inverse()
        .ok_or(LtiError::IllPosedLoop(gain))?;
    Ok(&sys.a + gain * &sys.b * inv * &sys.c)
}

/// Max over the tau grid of the closed-loop spectral radius at gain tau*K,
/// with one 10x refinement pass around the coarse argmax.
fn max_loop_radius(sys: &StateSpace, k: f64, tau_grid: usize) -> Result<f64, LtiError> {
    let grid = tau_grid.max(2);
    let radius_at = |tau: f64| -> Result<f64, LtiError> {
        Ok(matrix_spectral_radius(&closed_loop_a(sys, tau * k)?))
    };
    let mut best = (0.0f64, 0.0f64);
    for i in 0..grid {
        let tau = i as f64 / (grid - 1) as f64;
        let r = radius_at(tau)?;
        if r > best.1 {
            best = (tau, r);
        }
    }
    let step = 1.0 / (grid - 1) as f64;
    let lo = (best.0 - step).max(0.0);
    let hi = (best.0 + step).min(1.0);
    let fine = 21;
    let mut max_r = best.1;
    for i in 0..fine {
        let tau = lo + (hi - lo) * i as f64 / (fine - 1) as f64;
        max_r = max_r.max(radius_at(tau)?);
    }
    Ok(max_r)
}

/// Default number of tau samples for the homotopy checks.
pub const DEFAULT_TAU_GRID: usize = 1001;

/// Lower bound on the absolute convergence rate: the worst closed-loop
/// spectral radius of G/(1 - tau K G) over tau in [0, 1].
pub fn linear_lower_bound(sys: &StateSpace, k: f64, tau_grid: usize) -> Result<f64, LtiError> {
    let sr = spectral_radius(sys);
    if sr >= 1.0 {
        return Err(LtiError::Unstable(sr));
    }
    max_loop_radius(sys, k, tau_grid)
}

/// Nyquist value of a stable plant: supremum of K such that the linear loop
/// (1 - tau K G)^-1 stays stable for every tau in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NyquistValue {
    Finite(f64),
    Infinite,
}

impl NyquistValue {
    pub fn exceeds(&self, k: f64) -> bool {
        match self {
            NyquistValue::Finite(kn) => *kn > k,
            NyquistValue::Infinite => true,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            NyquistValue::Finite(kn) => *kn,
            NyquistValue::Infinite => f64::INFINITY,
        }
    }
}

/// Gains beyond this cap are reported as an infinite Nyquist value.
const NYQUIST_CAP: f64 = 1e9;

/// Computes the Nyquist value by bisection over K with a tau-grid stability
/// check of the closed-loop spectral radius. Relative tolerance 1e-6.
pub fn nyquist_value(sys: &StateSpace, tau_grid: usize) -> Result<NyquistValue, LtiError> {
    let sr = spectral_radius(sys);
    if sr >= 1.0 {
        return Err(LtiError::Unstable(sr));
    }
    // No feedback path: the loop is unconditionally stable.
    if sys.b.amax() == 0.0 || (sys.c.amax() == 0.0 && sys.d.amax() == 0.0) {
        return Ok(NyquistValue::Infinite);
    }
    let stable = |k: f64| -> bool {
        match max_loop_radius(sys, k, tau_grid) {
            Ok(r) => r < 1.0,
            Err(_) => false,
        }
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while stable(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > NYQUIST_CAP {
            return Ok(NyquistValue::Infinite);
        }
    }
    while hi - lo > 1e-6 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NyquistValue::Finite(0.5 * (lo + hi)))
}

/// The pair of linear-analysis rate quantities for a plant at gain K.
#[derive(Debug, Clone)]
pub struct RateBounds {
    /// Eq.-(6)-style lower bound on the achievable rate.
    pub lower: f64,
    /// Nyquist value of the plant.
    pub nyquist_gain: NyquistValue,
}

impl RateBounds {
    pub fn compute(sys: &StateSpace, k: f64, tau_grid: usize) -> Result<Self, LtiError> {
        Ok(Self {
            lower: linear_lower_bound(sys, k, tau_grid)?,
            nyquist_gain: nyquist_value(sys, tau_grid)?,
        })
    }

    /// The lower bound only bounds the nonlinear rate when K < K_N.
    pub fn lower_is_meaningful(&self, k: f64) -> bool {
        self.nyquist_gain.exceeds(k)
    }
}

/// Numerical minimality check: full-rank controllability and observability
/// matrices, ranks decided by SVD at relative tolerance `tol`.
pub fn is_minimal(sys: &StateSpace, tol: f64) -> bool {
    let n = sys.order();
    if n == 0 {
        return true;
    }
    rank_of_krylov(&sys.a, &sys.b, tol) == n && rank_of_krylov(&sys.a.transpose(), &sys.c.transpose(), tol) == n
}

fn rank_of_krylov(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut krylov = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        krylov.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let svd = krylov.svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|s| **s > tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use approx::assert_relative_eq;

    fn ex(n: usize) -> StateSpace {
        realize(&corpus::example(n).plant).unwrap()
    }

    #[test]
    fn realize_ex1_matches_canonical_form() {
        let sys = ex(1);
        assert_eq!(sys.order(), 1);
        assert_relative_eq!(sys.a[(0, 0)], 0.4);
        assert_relative_eq!(sys.b[(0, 0)], 1.0);
        assert_relative_eq!(sys.c[(0, 0)], -1.0);
        assert_relative_eq!(sys.d[(0, 0)], 0.0);
    }

    #[test]
    fn realize_static_constant() {
        let tf = TransferFunction::new(vec![3.5], vec![2.0]).unwrap();
        let sys = realize(&tf).unwrap();
        assert_eq!(sys.order(), 0);
        assert_relative_eq!(sys.d[(0, 0)], 1.75);
        let r = freq_response_scalar(&sys, Complex64::new(0.3, 0.7)).unwrap();
        assert_relative_eq!(r.re, 1.75);
        assert_relative_eq!(r.im, 0.0);
    }

    #[test]
    fn realize_rejects_improper() {
        assert!(TransferFunction::new(vec![1.0, 0.0, 0.0], vec![1.0, -0.5]).is_err());
        assert!(TransferFunction::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn realized_response_matches_rational_eval() {
        for n in 1..=4 {
            let tf = corpus::example(n).plant;
            let sys = realize(&tf).unwrap();
            for j in 0..128 {
                let th = 2.0 * std::f64::consts::PI * j as f64 / 128.0;
                let z = Complex64::from_polar(1.0, th);
                let got = freq_response_scalar(&sys, z).unwrap();
                let want = tf.eval(z);
                assert!(
                    (got - want).norm() <= 1e-9 * (1.0 + want.norm()),
                    "example {n} sample {j}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn scale_rho_examples() {
        let sys = ex(1);
        let scaled = scale_rho(&sys, 0.8).unwrap();
        assert_relative_eq!(scaled.a[(0, 0)], 0.5);

        let same = scale_rho(&sys, 1.0).unwrap();
        assert_eq!(same, sys);

        // G(rho z) at z=1 equals G(rho): -1/(0.6-0.4) = -5.
        let s06 = scale_rho(&sys, 0.6).unwrap();
        let r = freq_response_scalar(&s06, Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(r.re, -5.0, epsilon = 1e-12);
        assert_relative_eq!(r.im, 0.0, epsilon = 1e-12);

        assert!(scale_rho(&sys, 0.0).is_err());
        assert!(scale_rho(&sys, -0.3).is_err());
    }

    #[test]
    fn scale_rho_composes() {
        let sys = ex(3);
        let (r1, r2) = (0.9, 0.8);
        let twice = scale_rho(&scale_rho(&sys, r1).unwrap(), r2).unwrap();
        let once = scale_rho(&sys, r1 * r2).unwrap();
        for j in 0..64 {
            let th = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
            let z = Complex64::from_polar(1.0, th);
            let a = freq_response_scalar(&twice, z).unwrap();
            let b = freq_response_scalar(&once, z).unwrap();
            assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&ex(1)), 0.4, epsilon = 1e-12);
        // Ex. 4 denominator has a double pole at 0.9.
        assert_relative_eq!(spectral_radius(&ex(4)), 0.9, epsilon = 1e-9);
        let stat = StateSpace::from_static(DMatrix::from_element(1, 1, 2.0));
        assert_eq!(spectral_radius(&stat), 0.0);
    }

    #[test]
    fn spectral_radius_scales_with_rho() {
        for n in 1..=4 {
            let sys = ex(n);
            let rho = 0.77;
            let scaled = scale_rho(&sys, rho).unwrap();
            assert_relative_eq!(
                spectral_radius(&scaled),
                spectral_radius(&sys) / rho,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn nyquist_value_ex1() {
        // Closed-loop pole 0.4 - tau K: stable iff tau K < 1.4.
        let kn = nyquist_value(&ex(1), 101).unwrap();
        match kn {
            NyquistValue::Finite(v) => assert_relative_eq!(v, 1.4, epsilon = 1e-5),
            NyquistValue::Infinite => panic!("expected finite"),
        }
    }

    #[test]
    fn nyquist_value_no_feedback() {
        let zero = StateSpace::from_static(DMatrix::from_element(1, 1, 0.0));
        assert_eq!(nyquist_value(&zero, 11).unwrap(), NyquistValue::Infinite);
    }

    #[test]
    fn nyquist_value_ex4_recorded() {
        // Jury analysis of z^2 + (0.1 tau K - 1.8) z + 0.81 gives K_N = 36.1.
        let kn = nyquist_value(&ex(4), 501).unwrap();
        match kn {
            NyquistValue::Finite(v) => assert_relative_eq!(v, 36.1, max_relative = 1e-4),
            NyquistValue::Infinite => panic!("expected finite"),
        }
        assert!(kn.exceeds(12.0));
    }

    #[test]
    fn nyquist_rejects_unstable() {
        let sys = StateSpace::new(
            DMatrix::from_element(1, 1, 1.1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(nyquist_value(&sys, 11).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        assert_relative_eq!(
            linear_lower_bound(&ex(1), 1.0, DEFAULT_TAU_GRID).unwrap(),
            0.6,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            linear_lower_bound(&ex(4), 12.0, DEFAULT_TAU_GRID).unwrap(),
            0.9,
            epsilon = 1e-9
        );
        // K -> 0 recovers the open-loop spectral radius.
        assert_relative_eq!(
            linear_lower_bound(&ex(1), 1e-12, 11).unwrap(),
            0.4,
            epsilon = 1e-9
        );
    }

    #[test]
    fn lower_bound_monotone_in_k() {
        for n in 1..=4 {
            let sys = ex(n);
            let k_ref = corpus::example(n).k;
            let mut prev = 0.0;
            for i in 1..=8 {
                let k = k_ref * i as f64 / 8.0;
                let r = linear_lower_bound(&sys, k, 201).unwrap();
                assert!(
                    r >= prev - 1e-9,
                    "example {n}: lower bound decreased at K={k}: {r} < {prev}"
                );
                prev = r;
            }
        }
    }

    #[test]
    fn freq_response_examples() {
        let r = freq_response_scalar(&ex(1), Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(r.re, -1.0 / 0.6, epsilon = 1e-12);

        let tf3 = corpus::example(3).plant;
        let z = Complex64::new(-1.0, 0.0);
        let got = freq_response_scalar(&ex(3), z).unwrap();
        let want = tf3.eval(z);
        assert!((got - want).norm() < 1e-12 * (1.0 + want.norm()));
    }

    #[test]
    fn freq_response_singular_at_pole() {
        let sys = ex(1);
        assert!(freq_response(&sys, Complex64::new(0.4, 0.0)).is_err());
    }

    #[test]
    fn corpus_realizations_minimal() {
        for n in 1..=4 {
            assert!(is_minimal(&ex(n), 1e-8), "example {n} not minimal");
        }
    }

    #[test]
    fn rate_bounds_meaningful_flag() {
        let rb = RateBounds::compute(&ex(1), 1.0, 201).unwrap();
        assert!(rb.lower_is_meaningful(1.0));
        assert!(!rb.lower_is_meaningful(2.0));
        assert!(rb.lower >= spectral_radius(&ex(1)) - 1e-12);
    }
}
