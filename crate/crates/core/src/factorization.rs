//! The Zames-Falb quadratic form Pi and its factorizations (Psi, Kp) with
//! `Pi(z) = Psi^*(z) Kp Psi(z)` on the unit circle.
//!
//! Four schemes are provided:
//! - `Psi1`: the classic 2x2 factorization `[K M, -M; 0, 1]` with constant
//!   Kp. Valid for causal multipliers only; the taps live inside Psi, so it
//!   cannot back a tap search.
//! - `Psi2`: the coupled lifting factorization. Both channels share one
//!   delay basis of length n_z = max(n_b, n_f); the taps live in Kp, which
//!   is affine in them.
//! - `Psi3`: the decoupled lifting factorization with separate causal and
//!   anticausal bases, allowing asymmetric tap counts.
//! - `Psi3Rho`: the rho-parameterized decoupled lifting, the only scheme
//!   valid for noncausal multipliers in the rho-IQC framework.
//!
//! Uniform substitutions z -> rho z (causal only) and z -> z/rho
//! (anticausal only) rescale the Psi realization by 1/rho and rho
//! respectively. All realizations here are shift registers, so Psi is
//! always stable.
//!
//! Sign convention: in the lifted Kp matrices the tap entries enter with
//! the opposite sign of the printed lifting tables in the source
//! literature; the signs used here are the ones that make the
//! factorization identity against Pi built from the multiplier evaluation
//! hold (see `factorization_identity_error`, pinned to 1e-11 by tests).

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::lti::{freq_response, LtiError, StateSpace};
use crate::multiplier::{Causality, FirMultiplier, MultiplierError, MultiplierForm};

#[derive(Debug, Error)]
pub enum FactorizationError {
    #[error("invalid scheme pairing: {0}")]
    InvalidScheme(String),
    #[error("Pi is defined on the unit circle, got |z| = {0}")]
    OffUnitCircle(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Factorization scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Psi1,
    Psi2,
    Psi3,
    Psi3Rho,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Psi1 => write!(f, "psi1"),
            Scheme::Psi2 => write!(f, "psi2"),
            Scheme::Psi3 => write!(f, "psi3"),
            Scheme::Psi3Rho => write!(f, "psi3_rho"),
        }
    }
}

/// Uniform variable substitution applied to a lifted factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoSubstitution {
    None,
    /// z -> rho z; valid for causal multipliers.
    RhoZ,
    /// z -> z / rho; valid for anticausal multipliers.
    ZOverRho,
}

/// Affine map from multiplier taps to the constant symmetric Kp.
#[derive(Debug, Clone)]
pub struct KpMap {
    /// Kp at zero taps (the h0 part).
    pub constant: DMatrix<f64>,
    /// One basis matrix per causal tap.
    pub causal_basis: Vec<DMatrix<f64>>,
    /// One basis matrix per anticausal tap.
    pub anticausal_basis: Vec<DMatrix<f64>>,
}

impl KpMap {
    pub fn apply(&self, h_causal: &[f64], h_anticausal: &[f64]) -> DMatrix<f64> {
        let mut kp = self.constant.clone();
        for (h, b) in h_causal.iter().zip(&self.causal_basis) {
            kp += b * *h;
        }
        for (h, b) in h_anticausal.iter().zip(&self.anticausal_basis) {
            kp += b * *h;
        }
        kp
    }
}

/// A concrete factorization (Psi, Kp) of the Zames-Falb Pi for a given
/// multiplier and slope bound.
#[derive(Debug, Clone)]
pub struct Factorization {
    /// Stable LTI filter with two inputs (plant output, plant input).
    pub psi: StateSpace,
    /// Kp for the stored multiplier's taps.
    pub kp: DMatrix<f64>,
    /// The affine tap-to-Kp map behind `kp`. Empty bases for Psi1, whose
    /// taps live inside Psi instead.
    pub kp_map: KpMap,
    pub scheme: Scheme,
    pub substitution: RhoSubstitution,
    /// Rate parameter baked into the realization; 1 for plain schemes.
    pub rho: f64,
    pub multiplier: FirMultiplier,
    /// Slope bound K of the nonlinearity class.
    pub slope: f64,
}

impl Factorization {
    /// Whether the taps appear only in Kp (affinely), as the LMI search
    /// requires.
    pub fn taps_in_kp(&self) -> bool {
        self.scheme != Scheme::Psi1
    }

    /// The multiplier interpretation the factorization identity refers to.
    ///
    /// Unsubstituted lifted schemes factorize the plain reading of the
    /// taps; rho-substituted and rho-parameterized schemes factorize the
    /// rho form.
    pub fn reference_multiplier(&self) -> FirMultiplier {
        match (self.scheme, self.substitution) {
            (Scheme::Psi2 | Scheme::Psi3, RhoSubstitution::None) => FirMultiplier::new(
                self.multiplier.h0(),
                self.multiplier.h_causal().to_vec(),
                self.multiplier.h_anticausal().to_vec(),
                true,
                MultiplierForm::Plain,
            )
            .expect("tap vectors already validated"),
            _ => self.multiplier.clone(),
        }
    }
}

/// The Zames-Falb Pi at a unit-circle point:
/// `[[0, K M^*(z)], [K M(z), -(M(z) + M^*(z))]]`.
pub fn build_pi(
    m: &FirMultiplier,
    slope: f64,
    z: Complex64,
) -> Result<DMatrix<Complex64>, FactorizationError> {
    if (z.norm() - 1.0).abs() > 1e-9 {
        return Err(FactorizationError::OffUnitCircle(z.norm()));
    }
    let mv = m.eval(z)?;
    let mut pi = DMatrix::zeros(2, 2);
    pi[(0, 1)] = slope * mv.conj();
    pi[(1, 0)] = slope * mv;
    pi[(1, 1)] = Complex64::new(-2.0 * mv.re, 0.0);
    Ok(pi)
}

fn shift_register(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(n, 1);
    if n > 0 {
        b[(0, 0)] = 1.0;
    }
    (a, b)
}

fn block_diag2(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(m);
    out.view_mut((r, c), (r, c)).copy_from(m);
    out
}

fn apply_substitution(psi: StateSpace, subst: RhoSubstitution, rho: f64) -> StateSpace {
    match subst {
        RhoSubstitution::None => psi,
        RhoSubstitution::RhoZ => StateSpace {
            a: psi.a / rho,
            b: psi.b / rho,
            c: psi.c,
            d: psi.d,
        },
        RhoSubstitution::ZOverRho => StateSpace {
            a: psi.a * rho,
            b: psi.b * rho,
            c: psi.c,
            d: psi.d,
        },
    }
}

fn check_substitution(
    m: &FirMultiplier,
    subst: RhoSubstitution,
    scheme: Scheme,
) -> Result<f64, FactorizationError> {
    match subst {
        RhoSubstitution::None => Ok(1.0),
        RhoSubstitution::RhoZ | RhoSubstitution::ZOverRho => {
            let rho = match m.form() {
                MultiplierForm::Rho(r) => r,
                MultiplierForm::Plain => {
                    return Err(FactorizationError::InvalidScheme(format!(
                        "{scheme} with a rho substitution requires a rho-form multiplier"
                    )))
                }
            };
            let need = if subst == RhoSubstitution::RhoZ {
                Causality::Causal
            } else {
                Causality::Anticausal
            };
            if m.causality() != need {
                return Err(FactorizationError::InvalidScheme(format!(
                    "{scheme} with substitution {subst:?} requires a {need} multiplier, got {}",
                    m.causality()
                )));
            }
            Ok(rho)
        }
    }
}

/// Classic factorization `Psi1 = [K M(z), -M(z); 0, 1]`, `Kp = [0 1; 1 0]`,
/// realized with one shift register on the combination `K u1 - u2`. The
/// multiplier must be causal; rho-form multipliers realize `M(rho, z)`.
pub fn build_psi1(m: &FirMultiplier, slope: f64) -> Result<Factorization, FactorizationError> {
    if m.n_f() > 0 {
        return Err(FactorizationError::InvalidScheme(
            "psi1 requires a causal multiplier (anticausal taps make Psi1 unstable)".into(),
        ));
    }
    let (hb_eff, _) = m.effective_taps();
    let n = hb_eff.len();
    let (a, b1) = shift_register(n);
    let mut b = DMatrix::zeros(n, 2);
    if n > 0 {
        b.column_mut(0).copy_from(&(&b1 * slope).column(0));
        b.column_mut(1).copy_from(&(-&b1).column(0));
    }
    let mut c = DMatrix::zeros(2, n);
    for (i, h) in hb_eff.iter().enumerate() {
        c[(0, i)] = -h;
    }
    let d = DMatrix::from_row_slice(2, 2, &[slope * m.h0(), -m.h0(), 0.0, 1.0]);
    let psi = StateSpace::new(a, b, c, d)?;
    let kp = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let rho = match m.form() {
        MultiplierForm::Plain => 1.0,
        MultiplierForm::Rho(r) => r,
    };
    Ok(Factorization {
        psi,
        kp: kp.clone(),
        kp_map: KpMap {
            constant: kp,
            causal_basis: vec![],
            anticausal_basis: vec![],
        },
        scheme: Scheme::Psi1,
        substitution: RhoSubstitution::None,
        rho,
        multiplier: m.clone(),
        slope,
    })
}

fn kp_map_psi2(n: usize, h0: f64, slope: f64) -> KpMap {
    let q = 2 * n + 2;
    let u1 = 0usize;
    let u2 = n + 1;
    let mut constant = DMatrix::zeros(q, q);
    constant[(u1, u2)] = slope * h0;
    constant[(u2, u1)] = slope * h0;
    constant[(u2, u2)] = -2.0 * h0;
    let mut causal = Vec::with_capacity(n);
    let mut anticausal = Vec::with_capacity(n);
    for i in 1..=n {
        let d1 = i;
        let d2 = n + 1 + i;
        let mut bc = DMatrix::zeros(q, q);
        bc[(d1, u2)] = -slope;
        bc[(u2, d1)] = -slope;
        bc[(u2, d2)] = 1.0;
        bc[(d2, u2)] = 1.0;
        causal.push(bc);
        let mut ba = DMatrix::zeros(q, q);
        ba[(u1, d2)] = -slope;
        ba[(d2, u1)] = -slope;
        ba[(u2, d2)] += 1.0;
        ba[(d2, u2)] += 1.0;
        anticausal.push(ba);
    }
    KpMap {
        constant,
        causal_basis: causal,
        anticausal_basis: anticausal,
    }
}

/// Coupled lifting factorization. Causal and anticausal taps share one
/// delay basis of length `n_z = max(n_b, n_f)`; the shorter side is
/// zero-padded.
pub fn build_psi2(
    m: &FirMultiplier,
    slope: f64,
    subst: RhoSubstitution,
) -> Result<Factorization, FactorizationError> {
    let rho = check_substitution(m, subst, Scheme::Psi2)?;
    let n = m.n_b().max(m.n_f());
    let (a_s, b_s) = shift_register(n);
    let mut c_s = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        c_s[(i + 1, i)] = 1.0;
    }
    let mut d_s = DMatrix::zeros(n + 1, 1);
    d_s[(0, 0)] = 1.0;
    let psi = StateSpace::new(
        block_diag2(&a_s),
        block_diag2(&b_s),
        block_diag2(&c_s),
        block_diag2(&d_s),
    )?;
    let psi = apply_substitution(psi, subst, rho);
    let kp_map = kp_map_psi2(n, m.h0(), slope);
    let mut hb = m.h_causal().to_vec();
    let mut ha = m.h_anticausal().to_vec();
    hb.resize(n, 0.0);
    ha.resize(n, 0.0);
    let kp = kp_map.apply(&hb, &ha);
    Ok(Factorization {
        psi,
        kp,
        kp_map,
        scheme: Scheme::Psi2,
        substitution: subst,
        rho,
        multiplier: m.clone(),
        slope,
    })
}

fn kp_map_psi3(n_b: usize, n_f: usize, h0: f64, slope: f64) -> KpMap {
    let q = 2 * n_b + 2 * n_f + 4;
    let g1u1 = 0usize;
    let g1u2 = n_b + 1;
    let base2 = 2 * n_b + 2;
    let g2u1 = base2;
    let g2u2 = base2 + n_f + 1;
    let mut constant = DMatrix::zeros(q, q);
    constant[(g1u1, g1u2)] = slope * h0 / 2.0;
    constant[(g1u2, g1u1)] = slope * h0 / 2.0;
    constant[(g1u2, g1u2)] = -h0;
    constant[(g2u1, g2u2)] = slope * h0 / 2.0;
    constant[(g2u2, g2u1)] = slope * h0 / 2.0;
    constant[(g2u2, g2u2)] = -h0;
    let mut causal = Vec::with_capacity(n_b);
    for i in 1..=n_b {
        let d1 = g1u1 + i;
        let d2 = g1u2 + i;
        let mut b = DMatrix::zeros(q, q);
        b[(d1, g1u2)] = -slope;
        b[(g1u2, d1)] = -slope;
        b[(g1u2, d2)] = 1.0;
        b[(d2, g1u2)] = 1.0;
        causal.push(b);
    }
    let mut anticausal = Vec::with_capacity(n_f);
    for i in 1..=n_f {
        let d2 = g2u2 + i;
        let mut b = DMatrix::zeros(q, q);
        b[(g2u1, d2)] = -slope;
        b[(d2, g2u1)] = -slope;
        b[(g2u2, d2)] = 1.0;
        b[(d2, g2u2)] = 1.0;
        anticausal.push(b);
    }
    KpMap {
        constant,
        causal_basis: causal,
        anticausal_basis: anticausal,
    }
}

/// Realization of the decoupled lifting Psi3 with optional rho weighting.
/// With rho = 1 this is the plain Psi3; otherwise the weighted outputs are
/// `rho^-ib z^-ib` on the causal group and `rho^if z^-if` on the
/// anticausal group, realized on a shared 1/rho-scaled register pair.
fn psi3_realization(n_b: usize, n_f: usize, rho: f64) -> Result<StateSpace, FactorizationError> {
    let n_hat = n_b.max(n_f);
    let (a_s, b_s) = shift_register(n_hat);
    // State x_i carries rho^-(i-1) z^-i u, so the output weights below
    // complete rho^-ib (causal rows) and rho^(2 if - 1) completes rho^if
    // (anticausal rows).
    let a = block_diag2(&a_s) / rho;
    let b = block_diag2(&b_s);
    let mut c_s1 = DMatrix::zeros(n_b + 1, n_hat);
    for i in 0..n_b {
        c_s1[(i + 1, i)] = 1.0 / rho;
    }
    let mut c_s2 = DMatrix::zeros(n_f + 1, n_hat);
    for i in 0..n_f {
        c_s2[(i + 1, i)] = rho.powi(2 * (i as i32 + 1) - 1);
    }
    let d_s = |k: usize| {
        let mut d = DMatrix::zeros(k + 1, 1);
        d[(0, 0)] = 1.0;
        d
    };
    let q = 2 * n_b + 2 * n_f + 4;
    let mut c = DMatrix::zeros(q, 2 * n_hat);
    let mut d = DMatrix::zeros(q, 2);
    let mut row = 0usize;
    for (blk, dblk, ch) in [
        (&c_s1, d_s(n_b), 0usize),
        (&c_s1, d_s(n_b), 1),
        (&c_s2, d_s(n_f), 0),
        (&c_s2, d_s(n_f), 1),
    ] {
        let r = blk.nrows();
        c.view_mut((row, ch * n_hat), (r, n_hat)).copy_from(blk);
        d.view_mut((row, ch), (r, 1)).copy_from(&dblk);
        row += r;
    }
    Ok(StateSpace::new(a, b, c, d)?)
}

/// Decoupled lifting factorization with independent causal and anticausal
/// bases. Substitution rules match `build_psi2`: decoupling alone does not
/// allow a uniform substitution for noncausal multipliers.
pub fn build_psi3(
    m: &FirMultiplier,
    slope: f64,
    subst: RhoSubstitution,
) -> Result<Factorization, FactorizationError> {
    let rho = check_substitution(m, subst, Scheme::Psi3)?;
    let psi = psi3_realization(m.n_b(), m.n_f(), 1.0)?;
    let psi = apply_substitution(psi, subst, rho);
    let kp_map = kp_map_psi3(m.n_b(), m.n_f(), m.h0(), slope);
    let kp = kp_map.apply(m.h_causal(), m.h_anticausal());
    Ok(Factorization {
        psi,
        kp,
        kp_map,
        scheme: Scheme::Psi3,
        substitution: subst,
        rho,
        multiplier: m.clone(),
        slope,
    })
}

/// The unified rho-parameterized decoupled lifting, valid for every
/// causality class in the rho-IQC framework. Kp is the same as for Psi3;
/// the rho weights live in the realization.
pub fn build_psi3_rho(
    m: &FirMultiplier,
    slope: f64,
    rho: f64,
) -> Result<Factorization, FactorizationError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(FactorizationError::InvalidScheme(format!(
            "psi3_rho requires rho in (0, 1), got {rho}"
        )));
    }
    match m.form() {
        MultiplierForm::Rho(r) if (r - rho).abs() <= 1e-12 => {}
        MultiplierForm::Rho(r) => {
            return Err(FactorizationError::InvalidScheme(format!(
                "psi3_rho at rho = {rho} got a multiplier in rho form {r}"
            )))
        }
        MultiplierForm::Plain => {
            return Err(FactorizationError::InvalidScheme(
                "psi3_rho requires a rho-form multiplier (convert first)".into(),
            ))
        }
    }
    let psi = psi3_realization(m.n_b(), m.n_f(), rho)?;
    let kp_map = kp_map_psi3(m.n_b(), m.n_f(), m.h0(), slope);
    let kp = kp_map.apply(m.h_causal(), m.h_anticausal());
    Ok(Factorization {
        psi,
        kp,
        kp_map,
        scheme: Scheme::Psi3Rho,
        substitution: RhoSubstitution::None,
        rho,
        multiplier: m.clone(),
        slope,
    })
}

/// Builds a factorization for the given scheme.
pub fn build(
    m: &FirMultiplier,
    slope: f64,
    scheme: Scheme,
    subst: RhoSubstitution,
    rho: f64,
) -> Result<Factorization, FactorizationError> {
    match scheme {
        Scheme::Psi1 => {
            if subst != RhoSubstitution::None {
                return Err(FactorizationError::InvalidScheme(
                    "psi1 takes no substitution; rho-form taps are realized directly".into(),
                ));
            }
            build_psi1(m, slope)
        }
        Scheme::Psi2 => build_psi2(m, slope, subst),
        Scheme::Psi3 => build_psi3(m, slope, subst),
        Scheme::Psi3Rho => build_psi3_rho(m, slope, rho),
    }
}

/// Series interconnection `Psi [G; I]` as a single realization:
/// `A_hat = [A_G, 0; B_Psi1 C_G, A_Psi]`, `B_hat = [B_G; B_Psi2 + B_Psi1 D_G]`,
/// `C_hat = [D_Psi1 C_G, C_Psi]`, `D_hat = D_Psi2 + D_Psi1 D_G`.
///
/// Any required rho scaling of the plant is applied by the caller.
pub fn augment(psi: &StateSpace, plant: &StateSpace) -> Result<StateSpace, FactorizationError> {
    let p = plant.outputs();
    let mu = plant.inputs();
    if psi.inputs() != p + mu {
        return Err(FactorizationError::DimensionMismatch(format!(
            "psi has {} inputs, plant provides {} outputs + {} inputs",
            psi.inputs(),
            p,
            mu
        )));
    }
    let ng = plant.order();
    let np = psi.order();
    let q = psi.outputs();
    let b_psi1 = psi.b.columns(0, p).into_owned();
    let b_psi2 = psi.b.columns(p, mu).into_owned();
    let d_psi1 = psi.d.columns(0, p).into_owned();
    let d_psi2 = psi.d.columns(p, mu).into_owned();

    let mut a = DMatrix::zeros(ng + np, ng + np);
    a.view_mut((0, 0), (ng, ng)).copy_from(&plant.a);
    a.view_mut((ng, 0), (np, ng)).copy_from(&(&b_psi1 * &plant.c));
    a.view_mut((ng, ng), (np, np)).copy_from(&psi.a);

    let mut b = DMatrix::zeros(ng + np, mu);
    b.view_mut((0, 0), (ng, mu)).copy_from(&plant.b);
    b.view_mut((ng, 0), (np, mu))
        .copy_from(&(&b_psi2 + &b_psi1 * &plant.d));

    let mut c = DMatrix::zeros(q, ng + np);
    c.view_mut((0, 0), (q, ng)).copy_from(&(&d_psi1 * &plant.c));
    c.view_mut((0, ng), (q, np)).copy_from(&psi.c);

    let d = &d_psi2 + &d_psi1 * &plant.d;
    Ok(StateSpace::new(a, b, c, d)?)
}

/// Max relative Frobenius deviation of `Psi^*(z) Kp Psi(z)` from the Pi of
/// the factorization's reference multiplier over uniform unit-circle
/// samples. This is the defining identity; every builder is tested
/// against it.
pub fn factorization_identity_error(
    fact: &Factorization,
    samples: usize,
) -> Result<f64, FactorizationError> {
    let m_ref = fact.reference_multiplier();
    let kp_c = fact.kp.map(|v| Complex64::new(v, 0.0));
    let mut worst = 0.0f64;
    for j in 0..samples {
        let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.31) / samples as f64;
        let z = Complex64::from_polar(1.0, theta);
        let psi_z = freq_response(&fact.psi, z)?;
        let lhs = psi_z.adjoint() * &kp_c * &psi_z;
        let pi = build_pi(&m_ref, fact.slope, z)?;
        let denom = 1.0 + pi.norm();
        let dev = (lhs - pi).norm() / denom;
        worst = worst.max(dev);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn plain(hb: Vec<f64>, ha: Vec<f64>) -> FirMultiplier {
        FirMultiplier::new(1.0, hb, ha, true, MultiplierForm::Plain).unwrap()
    }

    fn rho_form(hb: Vec<f64>, ha: Vec<f64>, rho: f64) -> FirMultiplier {
        FirMultiplier::new(1.0, hb, ha, true, MultiplierForm::Rho(rho)).unwrap()
    }

    #[test]
    fn pi_static_multiplier() {
        let pi = build_pi(&FirMultiplier::identity(), 2.0, Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(pi[(0, 1)].re, 2.0);
        assert_relative_eq!(pi[(1, 0)].re, 2.0);
        assert_relative_eq!(pi[(1, 1)].re, -2.0);
        assert_relative_eq!(pi[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn pi_arithmetic_example() {
        let m = plain(vec![0.3], vec![]);
        let pi = build_pi(&m, 1.0, Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(pi[(0, 1)].re, 0.7);
        assert_relative_eq!(pi[(1, 1)].re, -1.4);
    }

    #[test]
    fn pi_hermitian_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let m = plain(
                vec![rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                vec![rng.gen_range(-0.2..0.2)],
            );
            let z = Complex64::from_polar(1.0, rng.gen_range(0.0..6.28));
            let pi = build_pi(&m, 1.7, z).unwrap();
            assert!((pi.clone() - pi.adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn pi_rejects_off_circle() {
        assert!(build_pi(&FirMultiplier::identity(), 1.0, Complex64::new(0.5, 0.0)).is_err());
    }

    #[test]
    fn psi1_static_product() {
        let k = 3.0;
        let f = build_psi1(&FirMultiplier::identity(), k).unwrap();
        assert_eq!(f.psi.order(), 0);
        assert_relative_eq!(f.psi.d[(0, 0)], k);
        assert_relative_eq!(f.psi.d[(0, 1)], -1.0);
        assert!(factorization_identity_error(&f, 8).unwrap() < 1e-14);
    }

    #[test]
    fn psi1_causal_identity() {
        let m = plain(vec![0.4, 0.2, 0.1], vec![]);
        let f = build_psi1(&m, 1.3).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);
        assert!(crate::lti::spectral_radius(&f.psi) < 1.0);
    }

    #[test]
    fn psi1_rho_form_identity() {
        let m = rho_form(vec![0.3, 0.1], vec![], 0.7);
        let f = build_psi1(&m, 2.0).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);
    }

    #[test]
    fn psi1_rejects_anticausal() {
        let m = plain(vec![], vec![0.4]);
        assert!(matches!(
            build_psi1(&m, 1.0),
            Err(FactorizationError::InvalidScheme(_))
        ));
    }

    #[test]
    fn psi2_causal_identity() {
        let m = plain(vec![0.3], vec![]);
        let f = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);
    }

    #[test]
    fn psi2_static_embedded() {
        let mut m = plain(vec![0.0], vec![0.0]);
        let f = build_psi2(&m, 2.5, RhoSubstitution::None).unwrap();
        let z = Complex64::from_polar(1.0, 0.9);
        let psi_z = freq_response(&f.psi, z).unwrap();
        let pi = psi_z.adjoint() * f.kp.map(|v| Complex64::new(v, 0.0)) * psi_z;
        assert_relative_eq!(pi[(1, 0)].re, 2.5, epsilon = 1e-12);
        assert_relative_eq!(pi[(1, 1)].re, -2.0, epsilon = 1e-12);
        m = FirMultiplier::identity();
        let f0 = build_psi2(&m, 2.5, RhoSubstitution::None).unwrap();
        assert_eq!(f0.psi.order(), 0);
        assert!(factorization_identity_error(&f0, 8).unwrap() < 1e-14);
    }

    #[test]
    fn psi2_noncausal_identity_and_substitution_rules() {
        let m = plain(vec![0.25, 0.05], vec![0.15, 0.1]);
        let f = build_psi2(&m, 1.8, RhoSubstitution::None).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);

        let nc_rho = rho_form(vec![0.2], vec![0.1], 0.8);
        assert!(matches!(
            build_psi2(&nc_rho, 1.0, RhoSubstitution::RhoZ),
            Err(FactorizationError::InvalidScheme(_))
        ));
        assert!(matches!(
            build_psi2(&nc_rho, 1.0, RhoSubstitution::ZOverRho),
            Err(FactorizationError::InvalidScheme(_))
        ));
    }

    #[test]
    fn psi2_rho_substitutions_identity() {
        let causal = rho_form(vec![0.3, 0.12], vec![], 0.75);
        let f = build_psi2(&causal, 1.2, RhoSubstitution::RhoZ).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);

        let anticausal = rho_form(vec![], vec![0.3, 0.07], 0.85);
        let g = build_psi2(&anticausal, 1.2, RhoSubstitution::ZOverRho).unwrap();
        assert!(factorization_identity_error(&g, 32).unwrap() < 1e-11);

        // Plain-form multipliers cannot take a substitution.
        assert!(build_psi2(&plain(vec![0.1], vec![]), 1.0, RhoSubstitution::RhoZ).is_err());
    }

    #[test]
    fn psi3_matches_psi2_for_causal() {
        let m = plain(vec![0.3, 0.1], vec![]);
        let f2 = build_psi2(&m, 1.4, RhoSubstitution::None).unwrap();
        let f3 = build_psi3(&m, 1.4, RhoSubstitution::None).unwrap();
        for j in 0..32 {
            let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / 32.0 + 0.1);
            let p2 = freq_response(&f2.psi, z).unwrap();
            let p3 = freq_response(&f3.psi, z).unwrap();
            let pi2 = p2.adjoint() * f2.kp.map(|v| Complex64::new(v, 0.0)) * p2;
            let pi3 = p3.adjoint() * f3.kp.map(|v| Complex64::new(v, 0.0)) * p3;
            assert!((pi2 - pi3).norm() < 1e-11);
        }
    }

    #[test]
    fn psi3_asymmetric_identity() {
        let m = plain(vec![0.25, 0.1], vec![0.2]);
        let f = build_psi3(&m, 2.0, RhoSubstitution::None).unwrap();
        assert!(factorization_identity_error(&f, 32).unwrap() < 1e-11);
    }

    #[test]
    fn psi3_h0_split() {
        let f = build_psi3(&FirMultiplier::identity(), 3.0, RhoSubstitution::None).unwrap();
        // Static: Pi12 = K (h0/2 + h0/2) = K.
        let z = Complex64::new(1.0, 0.0);
        let psi_z = freq_response(&f.psi, z).unwrap();
        let pi = psi_z.adjoint() * f.kp.map(|v| Complex64::new(v, 0.0)) * psi_z;
        assert_relative_eq!(pi[(0, 1)].re, 3.0, epsilon = 1e-13);
    }

    #[test]
    fn psi3_rho_static_case() {
        let m = rho_form(vec![0.0], vec![0.0], 0.8);
        let f = build_psi3_rho(&m, 1.5, 0.8).unwrap();
        for j in 0..16 {
            let z = Complex64::from_polar(1.0, 0.4 * j as f64);
            let psi_z = freq_response(&f.psi, z).unwrap();
            let pi = psi_z.adjoint() * f.kp.map(|v| Complex64::new(v, 0.0)) * psi_z;
            assert_relative_eq!(pi[(1, 0)].re, 1.5, epsilon = 1e-12);
            assert_relative_eq!(pi[(1, 1)].re, -2.0, epsilon = 1e-12);
            assert!(pi[(0, 0)].norm() < 1e-13);
        }
    }

    #[test]
    fn psi3_rho_noncausal_identity() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10 {
            let rho = rng.gen_range(0.4..0.95);
            let m = rho_form(
                vec![rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                vec![rng.gen_range(-0.2..0.2)],
                rho,
            );
            let f = build_psi3_rho(&m, 1.0 + rng.gen_range(0.0..2.0), rho).unwrap();
            let err = factorization_identity_error(&f, 32).unwrap();
            assert!(err < 1e-10, "identity error {err}");
        }
    }

    #[test]
    fn psi3_rho_shapes_follow_padding_rules() {
        let m = rho_form(vec![0.1, 0.05], vec![0.1], 0.8);
        let f = build_psi3_rho(&m, 1.0, 0.8).unwrap();
        // n_hat = 2 shared registers per channel, outputs (n_b+1)+(n_b+1)+(n_f+1)+(n_f+1).
        assert_eq!(f.psi.order(), 4);
        assert_eq!(f.psi.outputs(), 3 + 3 + 2 + 2);
        assert_eq!(f.psi.inputs(), 2);
    }

    #[test]
    fn psi3_rho_rejects_plain_and_bad_rho() {
        let p = plain(vec![0.1], vec![0.1]);
        assert!(build_psi3_rho(&p, 1.0, 0.8).is_err());
        let m = rho_form(vec![0.1], vec![0.1], 0.8);
        assert!(build_psi3_rho(&m, 1.0, 1.0).is_err());
        assert!(build_psi3_rho(&m, 1.0, 0.9).is_err());
    }

    #[test]
    fn kp_affine_in_taps() {
        let m1 = plain(vec![0.1, 0.2], vec![0.05]);
        let m2 = plain(vec![0.03, 0.07], vec![0.11]);
        let zero = FirMultiplier::zero_taps(2, 1, true, MultiplierForm::Plain);
        let sum = plain(vec![0.13, 0.27], vec![0.16]);
        for scheme in [Scheme::Psi2, Scheme::Psi3] {
            let b = |m: &FirMultiplier| {
                build(m, 1.3, scheme, RhoSubstitution::None, 1.0).unwrap().kp
            };
            let lhs = b(&m1) + b(&m2) - b(&zero);
            let rhs = b(&sum);
            assert_relative_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn psi_always_stable() {
        let m = rho_form(vec![0.1, 0.2, 0.05], vec![0.1, 0.02], 0.6);
        let f = build_psi3_rho(&m, 1.0, 0.6).unwrap();
        assert!(crate::lti::spectral_radius(&f.psi) < 1.0);
        let c = rho_form(vec![0.1, 0.2], vec![], 0.6);
        let f1 = build_psi2(&c, 1.0, RhoSubstitution::RhoZ).unwrap();
        assert!(crate::lti::spectral_radius(&f1.psi) < 1.0);
    }

    #[test]
    fn augment_static_case() {
        let psi = StateSpace::from_static(DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.0, 1.0]));
        let plant = StateSpace::from_static(DMatrix::from_element(1, 1, 0.5));
        let aug = augment(&psi, &plant).unwrap();
        assert_eq!(aug.order(), 0);
        // D_hat = D_psi2 + D_psi1 * D.
        assert_relative_eq!(aug.d[(0, 0)], -1.0 + 2.0 * 0.5);
        assert_relative_eq!(aug.d[(1, 0)], 1.0);
    }

    #[test]
    fn augment_dimension_count() {
        let m = plain(vec![0.1], vec![0.1]);
        let f = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let plant = crate::lti::realize(&crate::corpus::example(1).plant).unwrap();
        let aug = augment(&f.psi, &plant).unwrap();
        assert_eq!(aug.order(), 1 + 2);
        assert_eq!(aug.inputs(), 1);
    }

    #[test]
    fn augment_frequency_composition() {
        let m = plain(vec![0.2, 0.1], vec![0.05]);
        let f = build_psi3(&m, 1.7, RhoSubstitution::None).unwrap();
        let plant = crate::lti::realize(&crate::corpus::example(2).plant).unwrap();
        let aug = augment(&f.psi, &plant).unwrap();
        for j in 0..32 {
            let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / 32.0 + 0.2);
            let got = freq_response(&aug, z).unwrap();
            let g = crate::lti::freq_response_scalar(&plant, z).unwrap();
            let psi_z = freq_response(&f.psi, z).unwrap();
            let mut gi = DMatrix::zeros(2, 1);
            gi[(0, 0)] = g;
            gi[(1, 0)] = Complex64::new(1.0, 0.0);
            let want = psi_z * gi;
            assert!((got - want).norm() < 1e-10, "sample {j}");
        }
    }

    #[test]
    fn augment_rejects_mismatched_dims() {
        let psi = StateSpace::from_static(DMatrix::identity(3, 3));
        let plant = StateSpace::from_static(DMatrix::from_element(1, 1, 0.5));
        assert!(augment(&psi, &plant).is_err());
    }
}
