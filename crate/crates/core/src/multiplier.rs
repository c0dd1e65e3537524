//! FIR Zames-Falb multipliers.
//!
//! A multiplier is parameterized as
//! `M(z) = h0 - sum_b h_{-ib} z^-ib - sum_f h_if z^if`
//! with causal taps on backward shifts and anticausal taps on forward
//! shifts. The rho form reparameterizes the same object for rate analysis:
//! `M(rho, z) = h0 - sum_b h_{-ib} rho^-ib z^-ib - sum_f h_if rho^if z^if`,
//! i.e. the plain multiplier evaluated at rho*z. The two parameterizations
//! are interchangeable through [`FirMultiplier::convert`], which preserves
//! both the transfer function on the unit circle and the penalized l1
//! margin.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultiplierError {
    #[error("non-odd multipliers require nonnegative taps, got {0}")]
    NegativeTap(f64),
    #[error("h0 must be positive, got {0}")]
    NonPositiveH0(f64),
    #[error("rho must lie in (0, 1], got {0}")]
    InvalidRho(f64),
    #[error("rho argument {arg} does not match the multiplier's rho form {form}")]
    RhoMismatch { arg: f64, form: f64 },
    #[error("multiplier evaluation at z = 0 with causal taps")]
    EvalAtZero,
}

/// Plain `M(z)` taps versus the rho-weighted `M(rho, z)` parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MultiplierForm {
    Plain,
    Rho(f64),
}

/// Causality class, derived from which tap vectors are populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Causality {
    Causal,
    Anticausal,
    Noncausal,
}

impl std::fmt::Display for Causality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Causality::Causal => write!(f, "causal"),
            Causality::Anticausal => write!(f, "anticausal"),
            Causality::Noncausal => write!(f, "noncausal"),
        }
    }
}

/// FIR Zames-Falb multiplier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FirMultiplier {
    h0: f64,
    /// Taps h_{-1} .. h_{-n_b} on z^-1 .. z^-n_b.
    h_causal: Vec<f64>,
    /// Taps h_1 .. h_{n_f} on z^1 .. z^n_f.
    h_anticausal: Vec<f64>,
    odd_nonlinearity: bool,
    form: MultiplierForm,
}

/// Outcome of the class-appropriate strict l1 check.
#[derive(Debug, Clone, Copy)]
pub struct L1Report {
    pub satisfied: bool,
    /// h0 minus the penalized tap sum; positive iff strictly satisfied.
    pub margin: f64,
}

impl FirMultiplier {
    pub fn new(
        h0: f64,
        h_causal: Vec<f64>,
        h_anticausal: Vec<f64>,
        odd_nonlinearity: bool,
        form: MultiplierForm,
    ) -> Result<Self, MultiplierError> {
        if !(h0 > 0.0) {
            return Err(MultiplierError::NonPositiveH0(h0));
        }
        if let MultiplierForm::Rho(rho) = form {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(MultiplierError::InvalidRho(rho));
            }
        }
        if !odd_nonlinearity {
            for &h in h_causal.iter().chain(h_anticausal.iter()) {
                if h < 0.0 {
                    return Err(MultiplierError::NegativeTap(h));
                }
            }
        }
        Ok(Self {
            h0,
            h_causal,
            h_anticausal,
            odd_nonlinearity,
            form,
        })
    }

    /// Static multiplier M = 1 (no taps).
    pub fn identity() -> Self {
        Self::new(1.0, vec![], vec![], false, MultiplierForm::Plain).unwrap()
    }

    /// Zero-tap multiplier with the given structure; the LMI search fills the
    /// taps in later.
    pub fn zero_taps(n_b: usize, n_f: usize, odd: bool, form: MultiplierForm) -> Self {
        Self::new(1.0, vec![0.0; n_b], vec![0.0; n_f], odd, form).unwrap()
    }

    /// Rebuilds a multiplier from solver output, clamping sign-constrained
    /// taps that are negative only by numerical noise (|h| <= 1e-9).
    pub fn from_search_taps(
        h_causal: Vec<f64>,
        h_anticausal: Vec<f64>,
        odd: bool,
        form: MultiplierForm,
    ) -> Result<Self, MultiplierError> {
        let clamp = |v: Vec<f64>| -> Result<Vec<f64>, MultiplierError> {
            v.into_iter()
                .map(|h| {
                    if odd || h >= 0.0 {
                        Ok(h)
                    } else if h >= -1e-9 {
                        Ok(0.0)
                    } else {
                        Err(MultiplierError::NegativeTap(h))
                    }
                })
                .collect()
        };
        Self::new(1.0, clamp(h_causal)?, clamp(h_anticausal)?, odd, form)
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn h_causal(&self) -> &[f64] {
        &self.h_causal
    }

    pub fn h_anticausal(&self) -> &[f64] {
        &self.h_anticausal
    }

    pub fn n_b(&self) -> usize {
        self.h_causal.len()
    }

    pub fn n_f(&self) -> usize {
        self.h_anticausal.len()
    }

    pub fn odd_nonlinearity(&self) -> bool {
        self.odd_nonlinearity
    }

    pub fn form(&self) -> MultiplierForm {
        self.form
    }

    /// Causality class. A tapless multiplier is degenerate-causal: every
    /// scheme accepts it.
    pub fn causality(&self) -> Causality {
        match (self.n_b(), self.n_f()) {
            (_, 0) => Causality::Causal,
            (0, _) => Causality::Anticausal,
            _ => Causality::Noncausal,
        }
    }

    /// Evaluates the multiplier transfer function at z. The rho form bakes
    /// its rho weights in, so this is `M(rho, z)` for rho-form multipliers.
    pub fn eval(&self, z: Complex64) -> Result<Complex64, MultiplierError> {
        if z.norm() == 0.0 && self.n_b() > 0 {
            return Err(MultiplierError::EvalAtZero);
        }
        let rho = match self.form {
            MultiplierForm::Plain => 1.0,
            MultiplierForm::Rho(r) => r,
        };
        let mut acc = Complex64::new(self.h0, 0.0);
        let zinv = z.inv();
        let mut zb = Complex64::new(1.0, 0.0);
        for (i, &h) in self.h_causal.iter().enumerate() {
            zb *= zinv;
            acc -= h * rho.powi(-(i as i32 + 1)) * zb;
        }
        let mut zf = Complex64::new(1.0, 0.0);
        for (i, &h) in self.h_anticausal.iter().enumerate() {
            zf *= z;
            acc -= h * rho.powi(i as i32 + 1) * zf;
        }
        Ok(acc)
    }

    /// Class-appropriate strict l1 condition at rate `rho`.
    ///
    /// Plain form: `sum |h_{-ib}| rho^-ib + sum |h_if| rho^-if < h0`
    /// (the unpenalized condition is the rho = 1 case).
    /// Rho form: `sum |h_{-ib}| rho^-2ib + sum |h_if| < h0`.
    pub fn l1_condition(&self, rho: f64) -> Result<L1Report, MultiplierError> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(MultiplierError::InvalidRho(rho));
        }
        if let MultiplierForm::Rho(r) = self.form {
            if (r - rho).abs() > 1e-12 {
                return Err(MultiplierError::RhoMismatch { arg: rho, form: r });
            }
        }
        let (wb, wf) = l1_weights(self.form, self.n_b(), self.n_f(), rho);
        let sum: f64 = self
            .h_causal
            .iter()
            .zip(&wb)
            .map(|(h, w)| h.abs() * w)
            .chain(self.h_anticausal.iter().zip(&wf).map(|(h, w)| h.abs() * w))
            .sum();
        let margin = self.h0 - sum;
        Ok(L1Report {
            satisfied: margin > 0.0,
            margin,
        })
    }

    /// Converts between the plain and rho parameterizations of the same
    /// multiplier: `h_{-ib} = h~_{-ib} rho^ib`, `h_if = h~_if rho^-if` going
    /// plain -> rho. The converted multiplier has the same transfer function
    /// at every z and the same l1 margin.
    pub fn convert(
        &self,
        rho: f64,
        target: MultiplierForm,
    ) -> Result<FirMultiplier, MultiplierError> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(MultiplierError::InvalidRho(rho));
        }
        match (self.form, target) {
            (MultiplierForm::Plain, MultiplierForm::Plain) => Ok(self.clone()),
            (MultiplierForm::Rho(r), MultiplierForm::Rho(rt)) if (r - rt).abs() <= 1e-15 => {
                Ok(self.clone())
            }
            (MultiplierForm::Plain, MultiplierForm::Rho(rt)) => {
                if (rt - rho).abs() > 1e-12 {
                    return Err(MultiplierError::RhoMismatch { arg: rho, form: rt });
                }
                let hc = reweight(&self.h_causal, rho, 1);
                let ha = reweight(&self.h_anticausal, rho, -1);
                FirMultiplier::new(self.h0, hc, ha, self.odd_nonlinearity, target)
            }
            (MultiplierForm::Rho(r), MultiplierForm::Plain) => {
                if (r - rho).abs() > 1e-12 {
                    return Err(MultiplierError::RhoMismatch { arg: rho, form: r });
                }
                let hc = reweight(&self.h_causal, rho, -1);
                let ha = reweight(&self.h_anticausal, rho, 1);
                FirMultiplier::new(self.h0, hc, ha, self.odd_nonlinearity, target)
            }
            (MultiplierForm::Rho(_), MultiplierForm::Rho(rt)) => {
                self.convert(rho, MultiplierForm::Plain)?
                    .convert(rt, MultiplierForm::Rho(rt))
            }
        }
    }

    /// Taps with the form's rho weights folded in: the coefficients of the
    /// multiplier as a plain FIR function of z. For plain multipliers this
    /// is the taps themselves.
    pub fn effective_taps(&self) -> (Vec<f64>, Vec<f64>) {
        let rho = match self.form {
            MultiplierForm::Plain => 1.0,
            MultiplierForm::Rho(r) => r,
        };
        let hc = self
            .h_causal
            .iter()
            .enumerate()
            .map(|(i, h)| h * rho.powi(-(i as i32 + 1)))
            .collect();
        let ha = self
            .h_anticausal
            .iter()
            .enumerate()
            .map(|(i, h)| h * rho.powi(i as i32 + 1))
            .collect();
        (hc, ha)
    }
}

/// Penalty weights of the class-appropriate l1 condition, causal side then
/// anticausal side. Shared with the LMI assembly so the search constrains
/// exactly what the certificate later re-checks.
pub fn l1_weights(form: MultiplierForm, n_b: usize, n_f: usize, rho: f64) -> (Vec<f64>, Vec<f64>) {
    match form {
        MultiplierForm::Plain => (
            (1..=n_b).map(|i| rho.powi(-(i as i32))).collect(),
            (1..=n_f).map(|i| rho.powi(-(i as i32))).collect(),
        ),
        MultiplierForm::Rho(_) => (
            (1..=n_b).map(|i| rho.powi(-2 * i as i32)).collect(),
            vec![1.0; n_f],
        ),
    }
}

fn reweight(taps: &[f64], rho: f64, sign: i32) -> Vec<f64> {
    taps.iter()
        .enumerate()
        .map(|(i, h)| h * rho.powi(sign * (i as i32 + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn eval_identity_everywhere() {
        let m = FirMultiplier::identity();
        for z in [c(1.0), c(-1.0), Complex64::new(0.6, 0.8)] {
            assert_eq!(m.eval(z).unwrap(), c(1.0));
        }
    }

    #[test]
    fn eval_plain_arithmetic() {
        let m = FirMultiplier::new(1.0, vec![0.3], vec![], false, MultiplierForm::Plain).unwrap();
        assert_relative_eq!(m.eval(c(1.0)).unwrap().re, 0.7);
    }

    #[test]
    fn eval_rho_form_arithmetic() {
        let m =
            FirMultiplier::new(1.0, vec![], vec![0.2], false, MultiplierForm::Rho(0.8)).unwrap();
        assert_relative_eq!(m.eval(c(1.0)).unwrap().re, 1.0 - 0.2 * 0.8);
    }

    #[test]
    fn eval_rejects_zero_with_causal_taps() {
        let m = FirMultiplier::new(1.0, vec![0.1], vec![], false, MultiplierForm::Plain).unwrap();
        assert!(m.eval(c(0.0)).is_err());
        let anti = FirMultiplier::new(1.0, vec![], vec![0.1], false, MultiplierForm::Plain).unwrap();
        assert!(anti.eval(c(0.0)).is_ok());
    }

    #[test]
    fn l1_plain_unit_rho() {
        let m =
            FirMultiplier::new(1.0, vec![0.3], vec![0.2], false, MultiplierForm::Plain).unwrap();
        let rep = m.l1_condition(1.0).unwrap();
        assert!(rep.satisfied);
        assert_relative_eq!(rep.margin, 0.5);
    }

    #[test]
    fn l1_plain_penalized_boundary() {
        // 0.3 * 2 + 0.2 * 2 = 1.0, not strictly below h0.
        let m =
            FirMultiplier::new(1.0, vec![0.3], vec![0.2], false, MultiplierForm::Plain).unwrap();
        let rep = m.l1_condition(0.5).unwrap();
        assert!(!rep.satisfied);
        assert_relative_eq!(rep.margin, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn l1_rho_form() {
        let m =
            FirMultiplier::new(1.0, vec![0.3], vec![0.2], false, MultiplierForm::Rho(0.8)).unwrap();
        let rep = m.l1_condition(0.8).unwrap();
        assert!(rep.satisfied);
        assert_relative_eq!(rep.margin, 1.0 - (0.3 / (0.8 * 0.8) + 0.2), epsilon = 1e-15);
    }

    #[test]
    fn l1_conditions_coincide_at_rho_one() {
        let plain =
            FirMultiplier::new(1.0, vec![0.25], vec![0.15], false, MultiplierForm::Plain).unwrap();
        let rho_form = plain.convert(1.0, MultiplierForm::Rho(1.0)).unwrap();
        let a = plain.l1_condition(1.0).unwrap().margin;
        let b = rho_form.l1_condition(1.0).unwrap().margin;
        assert_relative_eq!(a, b, epsilon = 1e-15);
        assert_relative_eq!(a, 0.6);
    }

    #[test]
    fn convert_tap_scaling_matches_oracle() {
        // Solve for the converted tap numerically from the eval-equivalence
        // requirement, then compare with convert()'s answer.
        let rho = 0.5f64;
        let plain =
            FirMultiplier::new(1.0, vec![0.3], vec![], false, MultiplierForm::Plain).unwrap();
        // M(rho, z) = h0 - h' rho^-1 z^-1 must equal M~(z) = h0 - 0.3 z^-1
        // at every z, so h' = 0.3 * rho solves it at any sample point.
        let z = Complex64::from_polar(1.0, 1.1);
        let want = plain.eval(z).unwrap();
        // One unknown, one linear equation at the sample: h' = (h0 - want) / (rho^-1 z^-1).
        let h_solved = ((c(1.0) - want) / (z.inv() / rho)).re;
        let converted = plain.convert(rho, MultiplierForm::Rho(rho)).unwrap();
        assert_relative_eq!(converted.h_causal()[0], h_solved, epsilon = 1e-14);
        assert_relative_eq!(converted.h_causal()[0], 0.15, epsilon = 1e-14);
    }

    #[test]
    fn convert_no_taps_identity() {
        let m = FirMultiplier::identity();
        let conv = m.convert(0.7, MultiplierForm::Rho(0.7)).unwrap();
        assert_eq!(conv.h_causal().len(), 0);
        assert_eq!(conv.h0(), 1.0);
    }

    #[test]
    fn convert_round_trip() {
        let rho = 0.83;
        let m = FirMultiplier::new(
            1.0,
            vec![0.11, 0.07],
            vec![0.2, 0.01, 0.03],
            true,
            MultiplierForm::Plain,
        )
        .unwrap();
        let back = m
            .convert(rho, MultiplierForm::Rho(rho))
            .unwrap()
            .convert(rho, MultiplierForm::Plain)
            .unwrap();
        for (a, b) in m.h_causal().iter().zip(back.h_causal()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        for (a, b) in m.h_anticausal().iter().zip(back.h_anticausal()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn conversion_preserves_eval_and_margin() {
        let rho = 0.65;
        let plain = FirMultiplier::new(
            1.0,
            vec![0.12, 0.05],
            vec![0.08],
            false,
            MultiplierForm::Plain,
        )
        .unwrap();
        let rho_form = plain.convert(rho, MultiplierForm::Rho(rho)).unwrap();
        for j in 0..64 {
            let th = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
            let z = Complex64::from_polar(1.0, th);
            let a = plain.eval(z).unwrap();
            let b = rho_form.eval(z).unwrap();
            assert!((a - b).norm() < 1e-12, "mismatch at sample {j}");
        }
        let ma = plain.l1_condition(rho).unwrap().margin;
        let mb = rho_form.l1_condition(rho).unwrap().margin;
        assert_relative_eq!(ma, mb, epsilon = 1e-12);
    }

    #[test]
    fn non_odd_rejects_negative_taps() {
        assert!(
            FirMultiplier::new(1.0, vec![-0.1], vec![], false, MultiplierForm::Plain).is_err()
        );
        assert!(FirMultiplier::new(1.0, vec![-0.1], vec![], true, MultiplierForm::Plain).is_ok());
    }

    #[test]
    fn causality_classes() {
        let m = |nb: usize, nf: usize| FirMultiplier::zero_taps(nb, nf, true, MultiplierForm::Plain);
        assert_eq!(m(2, 0).causality(), Causality::Causal);
        assert_eq!(m(0, 0).causality(), Causality::Causal);
        assert_eq!(m(0, 3).causality(), Causality::Anticausal);
        assert_eq!(m(1, 1).causality(), Causality::Noncausal);
    }

    #[test]
    fn search_tap_clamping() {
        let m = FirMultiplier::from_search_taps(
            vec![1e-12, -5e-10],
            vec![],
            false,
            MultiplierForm::Plain,
        )
        .unwrap();
        assert_eq!(m.h_causal()[1], 0.0);
        assert!(FirMultiplier::from_search_taps(
            vec![-1e-3],
            vec![],
            false,
            MultiplierForm::Plain
        )
        .is_err());
    }
}
