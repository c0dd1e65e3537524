//! Assembly of the rate-certification feasibility LMI.
//!
//! Given a lifted factorization (Psi, Kp affine in the taps) and a plant,
//! the augmented realization `Psi [G; I] ~ (A^, B^, C^, D^)` turns the
//! frequency-domain inequality into
//!
//! `[A^T P A - sigma P, A^T P B; B^T P A, B^T P B] + [C; D]^T Kp(h) [C D] <= -t I`
//!
//! with `sigma = 1` for the plain form (rho-scaled realizations) and
//! `sigma = rho^2` for the simplified causal rho form (unscaled
//! realizations). Decision variables are the symmetric KYP matrix P, the
//! multiplier taps, optional absolute-value lifts for the odd case, and the
//! maximized margin t. Everything is affine in the variables; each basis
//! matrix is kept in a factored low-rank form so the solver's Schur
//! assembly stays cheap.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::factorization::{augment, Factorization, FactorizationError, RhoSubstitution, Scheme};
use crate::lti::{scale_rho, spectral_radius, LtiError, StateSpace};
use crate::multiplier::{l1_weights, Causality, MultiplierForm};

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("invalid variant/scheme pairing: {0}")]
    InvalidVariant(String),
    #[error("rho = {rho} does not dominate the plant spectral radius {sr}")]
    RhoBelowSpectralRadius { rho: f64, sr: f64 },
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Which LMI shape is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiVariant {
    /// sigma = 1, rho-scaled plant, Psi as stored in the factorization.
    IqcForm,
    /// sigma = rho^2, unscaled plant and unsubstituted Psi; valid for
    /// causal rho-form multipliers.
    CausalRhoForm,
    /// sigma = 1 with the z -> z/rho substituted Psi and the rho-scaled
    /// plant; valid for anticausal rho-form multipliers.
    AnticausalRhoForm,
}

/// Strictness margin of the l1 constraint.
pub const L1_MARGIN: f64 = 1e-6;

/// Meaning of each scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Upper-triangle entry (i, j), i <= j, of the KYP matrix P.
    PEntry(usize, usize),
    /// Causal tap h_{-(i+1)}.
    CausalTap(usize),
    /// Anticausal tap h_{i+1}.
    AnticausalTap(usize),
    /// Absolute-value lift for tap slot i (causal taps first).
    Eta(usize),
    /// Feasibility margin t.
    Margin,
}

/// One affine inequality `sum coeffs * x <= rhs`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// One term of a rank-structured symmetric basis matrix:
/// `alpha * (pool[u] pool[v]^T + pool[v] pool[u]^T)`.
#[derive(Debug, Clone, Copy)]
pub struct SymTerm {
    pub alpha: f64,
    pub u: usize,
    pub v: usize,
}

/// Basis matrix of one decision variable.
#[derive(Debug, Clone)]
pub enum BasisRep {
    Terms(Vec<SymTerm>),
    Identity,
}

/// The assembled feasibility problem: maximize t subject to
/// `F0 + sum x_i F_i + t I <= 0` and the linear rows.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    /// LMI block size.
    pub dim: usize,
    /// Number of augmented states (the size of P).
    pub n_state: usize,
    pub f0: DMatrix<f64>,
    /// Shared vector pool for the factored basis matrices.
    pub pool: Vec<DVector<f64>>,
    /// One basis per decision variable, margin included.
    pub basis: Vec<BasisRep>,
    pub vars: Vec<VarKind>,
    pub linear: Vec<LinearRow>,
    pub margin_var: usize,
    /// Feasibility acceptance threshold for the margin.
    pub feas_threshold: f64,
    /// Outcome of the numerical controllability test on (A^, B^); failure
    /// downgrades certificates with a warning rather than aborting.
    pub controllable: bool,
}

impl LmiProblem {
    /// Materializes basis matrix `k` as dense.
    pub fn basis_dense(&self, k: usize) -> DMatrix<f64> {
        match &self.basis[k] {
            BasisRep::Identity => DMatrix::identity(self.dim, self.dim),
            BasisRep::Terms(terms) => {
                let mut m = DMatrix::zeros(self.dim, self.dim);
                for t in terms {
                    let u = &self.pool[t.u];
                    let v = &self.pool[t.v];
                    m.ger(t.alpha, u, v, 1.0);
                    m.ger(t.alpha, v, u, 1.0);
                }
                m
            }
        }
    }

    /// F0 + sum x_i F_i (the margin coordinate participates like any other
    /// variable).
    pub fn eval_lmi(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (k, rep) in self.basis.iter().enumerate() {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            match rep {
                BasisRep::Identity => {
                    for i in 0..self.dim {
                        m[(i, i)] += xk;
                    }
                }
                BasisRep::Terms(terms) => {
                    for t in terms {
                        let u = &self.pool[t.u];
                        let v = &self.pool[t.v];
                        m.ger(xk * t.alpha, u, v, 1.0);
                        m.ger(xk * t.alpha, v, u, 1.0);
                    }
                }
            }
        }
        m
    }

    /// Worst violation of the linear rows at x (positive = violated).
    pub fn linear_violation(&self, x: &DVector<f64>) -> f64 {
        self.linear
            .iter()
            .map(|row| row.coeffs.iter().map(|(i, c)| c * x[*i]).sum::<f64>() - row.rhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Extracts (P, causal taps, anticausal taps, t) from a solution vector.
    pub fn split_solution(&self, x: &DVector<f64>) -> SplitSolution {
        let mut p = DMatrix::zeros(self.n_state, self.n_state);
        let mut hb = vec![];
        let mut ha = vec![];
        let mut t = 0.0;
        for (k, kind) in self.vars.iter().enumerate() {
            match *kind {
                VarKind::PEntry(i, j) => {
                    p[(i, j)] = x[k];
                    p[(j, i)] = x[k];
                }
                VarKind::CausalTap(i) => {
                    if hb.len() <= i {
                        hb.resize(i + 1, 0.0);
                    }
                    hb[i] = x[k];
                }
                VarKind::AnticausalTap(i) => {
                    if ha.len() <= i {
                        ha.resize(i + 1, 0.0);
                    }
                    ha[i] = x[k];
                }
                VarKind::Eta(_) => {}
                VarKind::Margin => t = x[k],
            }
        }
        SplitSolution {
            p,
            h_causal: hb,
            h_anticausal: ha,
            t,
        }
    }

    /// Writes the sparse debug dump: a header line `lmi <dim> <nvars>`,
    /// then one line `<var_index> <row> <col> <value>` per nonzero of the
    /// lower triangle, with var_index 0 denoting F0 and k+1 the basis of
    /// variable k.
    pub fn dump_sparse<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "lmi {} {}", self.dim, self.num_vars())?;
        let emit = |idx: usize, m: &DMatrix<f64>, w: &mut W| -> std::io::Result<()> {
            for i in 0..self.dim {
                for j in 0..=i {
                    if m[(i, j)] != 0.0 {
                        writeln!(w, "{} {} {} {:.17e}", idx, i, j, m[(i, j)])?;
                    }
                }
            }
            Ok(())
        };
        emit(0, &self.f0, w)?;
        for k in 0..self.num_vars() {
            let m = self.basis_dense(k);
            emit(k + 1, &m, w)?;
        }
        Ok(())
    }
}

/// A solution vector split back into named parts.
#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub p: DMatrix<f64>,
    pub h_causal: Vec<f64>,
    pub h_anticausal: Vec<f64>,
    pub t: f64,
}

/// Block size and variable count, for solver sizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub lmi_size: usize,
    pub num_vars: usize,
}

pub fn dimensions(p: &LmiProblem) -> Dimensions {
    Dimensions {
        lmi_size: p.dim,
        num_vars: p.num_vars(),
    }
}

fn check_variant(fact: &Factorization, variant: LmiVariant) -> Result<(), LmiError> {
    let m = &fact.multiplier;
    match variant {
        LmiVariant::IqcForm => Ok(()),
        LmiVariant::CausalRhoForm => {
            if fact.substitution != RhoSubstitution::None || fact.scheme == Scheme::Psi3Rho {
                return Err(LmiError::InvalidVariant(
                    "causal rho form needs an unsubstituted lifted factorization".into(),
                ));
            }
            if !matches!(m.form(), MultiplierForm::Rho(_)) || m.causality() != Causality::Causal {
                return Err(LmiError::InvalidVariant(
                    "causal rho form needs a causal rho-form multiplier".into(),
                ));
            }
            Ok(())
        }
        LmiVariant::AnticausalRhoForm => {
            if fact.substitution != RhoSubstitution::ZOverRho {
                return Err(LmiError::InvalidVariant(
                    "anticausal rho form needs the z -> z/rho substituted factorization".into(),
                ));
            }
            Ok(())
        }
    }
}

/// Assembles the feasibility LMI for a factorization, plant and rate. The
/// taps of `fact.multiplier` define the variable structure; their values
/// are ignored here (they are decision variables).
pub fn assemble(
    fact: &Factorization,
    plant: &StateSpace,
    rho: f64,
    variant: LmiVariant,
    odd: bool,
) -> Result<LmiProblem, LmiError> {
    if !fact.taps_in_kp() {
        return Err(LmiError::InvalidVariant(format!(
            "{} keeps taps inside Psi; use a lifted scheme for the search",
            fact.scheme
        )));
    }
    check_variant(fact, variant)?;
    let sr = spectral_radius(plant);
    if rho <= sr {
        return Err(LmiError::RhoBelowSpectralRadius { rho, sr });
    }
    let (plant_used, sigma) = match variant {
        LmiVariant::CausalRhoForm => (plant.clone(), rho * rho),
        _ => (scale_rho(plant, rho)?, 1.0),
    };
    let aug = augment(&fact.psi, &plant_used)?;
    let n = aug.order();
    let mu = aug.inputs();
    let q = aug.outputs();
    let p_dim = n + mu;

    // Pool layout: rows of J = [A^ B^] at 0..n, unit vectors e_0..e_(n-1)
    // at n..2n, rows of L = [C^ D^] at 2n..2n+q.
    let mut pool: Vec<DVector<f64>> = Vec::with_capacity(2 * n + q);
    for i in 0..n {
        let mut r = DVector::zeros(p_dim);
        for j in 0..n {
            r[j] = aug.a[(i, j)];
        }
        for j in 0..mu {
            r[n + j] = aug.b[(i, j)];
        }
        pool.push(r);
    }
    for i in 0..n {
        let mut e = DVector::zeros(p_dim);
        e[i] = 1.0;
        pool.push(e);
    }
    let l_base = 2 * n;
    for r in 0..q {
        let mut row = DVector::zeros(p_dim);
        for j in 0..n {
            row[j] = aug.c[(r, j)];
        }
        for j in 0..mu {
            row[n + j] = aug.d[(r, j)];
        }
        pool.push(row);
    }

    let mut vars = Vec::new();
    let mut basis = Vec::new();
    for i in 0..n {
        for j in i..n {
            vars.push(VarKind::PEntry(i, j));
            let alpha = if i == j { 0.5 } else { 1.0 };
            basis.push(BasisRep::Terms(vec![
                SymTerm { alpha, u: i, v: j },
                SymTerm {
                    alpha: -sigma * alpha,
                    u: n + i,
                    v: n + j,
                },
            ]));
        }
    }

    // Tap bases are the sparse Kp bases congruence-mapped through L; all
    // their nonzeros are off-diagonal pairs.
    let kp_basis_terms = |kp: &DMatrix<f64>| -> Vec<SymTerm> {
        let mut terms = Vec::new();
        for r in 0..q {
            for s in (r + 1)..q {
                let val = kp[(r, s)];
                if val != 0.0 {
                    terms.push(SymTerm {
                        alpha: val,
                        u: l_base + r,
                        v: l_base + s,
                    });
                }
            }
        }
        terms
    };
    let m = &fact.multiplier;
    let n_b = m.n_b();
    let n_f = m.n_f();
    for i in 0..n_b {
        vars.push(VarKind::CausalTap(i));
        basis.push(BasisRep::Terms(kp_basis_terms(&fact.kp_map.causal_basis[i])));
    }
    for i in 0..n_f {
        vars.push(VarKind::AnticausalTap(i));
        basis.push(BasisRep::Terms(kp_basis_terms(
            &fact.kp_map.anticausal_basis[i],
        )));
    }

    let n_taps = n_b + n_f;
    let tap_var = |slot: usize| n * (n + 1) / 2 + slot;
    let mut linear = Vec::new();
    let (wb, wf) = l1_weights(m.form(), n_b, n_f, rho);
    let weights: Vec<f64> = wb.into_iter().chain(wf).collect();
    if odd {
        for slot in 0..n_taps {
            vars.push(VarKind::Eta(slot));
            basis.push(BasisRep::Terms(vec![]));
        }
        let eta_var = |slot: usize| tap_var(n_taps) + slot;
        for slot in 0..n_taps {
            linear.push(LinearRow {
                coeffs: vec![(tap_var(slot), 1.0), (eta_var(slot), -1.0)],
                rhs: 0.0,
            });
            linear.push(LinearRow {
                coeffs: vec![(tap_var(slot), -1.0), (eta_var(slot), -1.0)],
                rhs: 0.0,
            });
        }
        if n_taps > 0 {
            linear.push(LinearRow {
                coeffs: (0..n_taps).map(|s| (eta_var(s), weights[s])).collect(),
                rhs: m.h0() - L1_MARGIN,
            });
        }
    } else {
        for slot in 0..n_taps {
            linear.push(LinearRow {
                coeffs: vec![(tap_var(slot), -1.0)],
                rhs: 0.0,
            });
        }
        if n_taps > 0 {
            linear.push(LinearRow {
                coeffs: (0..n_taps).map(|s| (tap_var(s), weights[s])).collect(),
                rhs: m.h0() - L1_MARGIN,
            });
        }
    }

    vars.push(VarKind::Margin);
    basis.push(BasisRep::Identity);
    let margin_var = vars.len() - 1;

    // Constant part: L^T Kp(0) L, symmetrized against rounding.
    let mut l_mat = DMatrix::zeros(q, p_dim);
    for r in 0..q {
        l_mat.row_mut(r).copy_from(&pool[l_base + r].transpose());
    }
    let f0 = l_mat.transpose() * &fact.kp_map.constant * &l_mat;
    let f0 = (&f0 + f0.transpose()) * 0.5;
    let feas_threshold = 1e-9 * (1.0 + f0.norm());

    let controllable = controllability_rank(&aug.a, &aug.b, 1e-8) == n;

    Ok(LmiProblem {
        dim: p_dim,
        n_state: n,
        f0,
        pool,
        basis,
        vars,
        linear,
        margin_var,
        feas_threshold,
        controllable,
    })
}

/// The LMI variant a factorization naturally pairs with: plain lifted
/// factorizations of rho-form multipliers take the simplified causal form,
/// z -> z/rho substitutions take the anticausal form, everything else the
/// plain form.
pub fn implied_variant(fact: &Factorization) -> LmiVariant {
    match (fact.scheme, fact.substitution, fact.multiplier.form()) {
        (Scheme::Psi2 | Scheme::Psi3, RhoSubstitution::None, MultiplierForm::Rho(_)) => {
            LmiVariant::CausalRhoForm
        }
        (_, RhoSubstitution::ZOverRho, _) => LmiVariant::AnticausalRhoForm,
        _ => LmiVariant::IqcForm,
    }
}

/// The rho-scaled composed realization whose frequency-domain inequality a
/// feasible assembly certifies. For the causal rho form this re-applies the
/// scaling that the simplified assembly factored out.
pub fn certified_composition(
    fact: &Factorization,
    plant: &StateSpace,
    rho: f64,
    variant: LmiVariant,
) -> Result<StateSpace, LmiError> {
    let scaled_plant = scale_rho(plant, rho)?;
    match variant {
        LmiVariant::CausalRhoForm => {
            let psi = StateSpace {
                a: &fact.psi.a / rho,
                b: &fact.psi.b / rho,
                c: fact.psi.c.clone(),
                d: fact.psi.d.clone(),
            };
            Ok(augment(&psi, &scaled_plant)?)
        }
        _ => Ok(augment(&fact.psi, &scaled_plant)?),
    }
}

/// Rank of the controllability Krylov matrix at relative tolerance `tol`.
fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    if n == 0 {
        return 0;
    }
    let m = b.ncols();
    let mut krylov = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        krylov.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let svd = krylov.svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > tol * smax)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::factorization::{build_psi1, build_psi2, build_psi3_rho};
    use crate::lti::realize;
    use crate::multiplier::FirMultiplier;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::ops::SubAssign;

    fn ex1_psi2_problem() -> (Factorization, StateSpace, LmiProblem) {
        let plant = realize(&corpus::example(1).plant).unwrap();
        let m = FirMultiplier::zero_taps(1, 1, true, MultiplierForm::Plain);
        let fact = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let prob = assemble(&fact, &plant, 0.99, LmiVariant::IqcForm, true).unwrap();
        (fact, plant, prob)
    }

    #[test]
    fn dimensions_ex1() {
        let (_, _, p) = ex1_psi2_problem();
        let d = dimensions(&p);
        assert_eq!(d.lmi_size, 4);
        assert_eq!(p.n_state, 3);
        // 6 P entries + 2 taps + 2 etas + margin.
        assert_eq!(d.num_vars, 11);
        assert!(p.controllable);
    }

    #[test]
    fn dimensions_ex2_large() {
        let plant = realize(&corpus::example(2).plant).unwrap();
        let m = FirMultiplier::zero_taps(20, 20, false, MultiplierForm::Plain);
        let fact = build_psi2(&m, 9.0, RhoSubstitution::None).unwrap();
        let p = assemble(&fact, &plant, 0.999, LmiVariant::IqcForm, false).unwrap();
        assert_eq!(dimensions(&p).lmi_size, 43);
    }

    #[test]
    fn dimensions_static() {
        let plant = StateSpace::from_static(DMatrix::from_element(1, 1, -0.5));
        let m = FirMultiplier::identity();
        let fact = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let p = assemble(&fact, &plant, 1.0, LmiVariant::IqcForm, false).unwrap();
        assert_eq!(dimensions(&p).lmi_size, 1);
        assert_eq!(p.n_state, 0);
    }

    #[test]
    fn lmi_matches_direct_formula() {
        let plant = realize(&corpus::example(1).plant).unwrap();
        let rho = 0.9;
        let m = FirMultiplier::zero_taps(1, 1, true, MultiplierForm::Plain);
        let fact = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let prob = assemble(&fact, &plant, rho, LmiVariant::IqcForm, true).unwrap();

        let mut rng = StdRng::seed_from_u64(3);
        let mut x = DVector::zeros(prob.num_vars());
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let got = prob.eval_lmi(&x);

        // Direct route: scaled plant, augment, explicit block formula.
        let split = prob.split_solution(&x);
        let aug = augment(&fact.psi, &scale_rho(&plant, rho).unwrap()).unwrap();
        let n = aug.order();
        let mu = aug.inputs();
        let mut j = DMatrix::zeros(n, n + mu);
        j.view_mut((0, 0), (n, n)).copy_from(&aug.a);
        j.view_mut((0, n), (n, mu)).copy_from(&aug.b);
        let mut l = DMatrix::zeros(aug.outputs(), n + mu);
        l.view_mut((0, 0), (aug.outputs(), n)).copy_from(&aug.c);
        l.view_mut((0, n), (aug.outputs(), mu)).copy_from(&aug.d);
        let kp = fact.kp_map.apply(&split.h_causal, &split.h_anticausal);
        let mut want = j.transpose() * &split.p * &j + l.transpose() * kp * &l;
        want.view_mut((0, 0), (n, n)).sub_assign(&split.p);
        for i in 0..prob.dim {
            want[(i, i)] += split.t;
        }
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn lmi_affine_in_taps() {
        let (_, _, prob) = ex1_psi2_problem();
        let tap0 = prob
            .vars
            .iter()
            .position(|v| matches!(v, VarKind::CausalTap(0)))
            .unwrap();
        let mut x1 = DVector::zeros(prob.num_vars());
        x1[tap0] = 0.3;
        let mut x2 = DVector::zeros(prob.num_vars());
        x2[tap0] = 0.6;
        let f0 = prob.eval_lmi(&DVector::zeros(prob.num_vars()));
        let f1 = prob.eval_lmi(&x1);
        let f2 = prob.eval_lmi(&x2);
        let lhs = &f2 - &f1;
        let rhs = &f1 - &f0;
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn sign_constraints_follow_odd_flag() {
        let plant = realize(&corpus::example(1).plant).unwrap();
        let m = FirMultiplier::zero_taps(1, 1, false, MultiplierForm::Plain);
        let fact = build_psi2(&m, 1.0, RhoSubstitution::None).unwrap();
        let non_odd = assemble(&fact, &plant, 0.99, LmiVariant::IqcForm, false).unwrap();
        // 2 sign rows + 1 l1 row.
        assert_eq!(non_odd.linear.len(), 3);
        let odd = assemble(&fact, &plant, 0.99, LmiVariant::IqcForm, true).unwrap();
        // 4 lift rows + 1 l1 row.
        assert_eq!(odd.linear.len(), 5);
        assert_relative_eq!(odd.linear.last().unwrap().rhs, 1.0 - L1_MARGIN);
    }

    #[test]
    fn variant_validity() {
        let plant = realize(&corpus::example(1).plant).unwrap();
        let rho = 0.95;
        let fact_none = build_psi2(
            &FirMultiplier::zero_taps(1, 1, true, MultiplierForm::Plain),
            1.0,
            RhoSubstitution::None,
        )
        .unwrap();
        // Noncausal plain with CausalRhoForm: rejected.
        assert!(assemble(&fact_none, &plant, rho, LmiVariant::CausalRhoForm, true).is_err());

        // Causal rho-form with CausalRhoForm: accepted.
        let m_c = FirMultiplier::zero_taps(1, 0, true, MultiplierForm::Rho(rho));
        let fact_c = build_psi2(&m_c, 1.0, RhoSubstitution::None).unwrap();
        assert!(assemble(&fact_c, &plant, rho, LmiVariant::CausalRhoForm, true).is_ok());

        // Anticausal variant needs the substituted factorization.
        let m_a = FirMultiplier::zero_taps(0, 1, true, MultiplierForm::Rho(rho));
        let fact_a = build_psi2(&m_a, 1.0, RhoSubstitution::ZOverRho).unwrap();
        assert!(assemble(&fact_a, &plant, rho, LmiVariant::AnticausalRhoForm, true).is_ok());
        let fact_a_none = build_psi2(&m_a, 1.0, RhoSubstitution::None).unwrap();
        assert!(
            assemble(&fact_a_none, &plant, rho, LmiVariant::AnticausalRhoForm, true).is_err()
        );

        // Rho at or below the plant spectral radius is rejected.
        assert!(matches!(
            assemble(&fact_none, &plant, 0.3, LmiVariant::IqcForm, true),
            Err(LmiError::RhoBelowSpectralRadius { .. })
        ));

        // Psi1 cannot back a tap search.
        let psi1 = build_psi1(
            &FirMultiplier::zero_taps(1, 0, true, MultiplierForm::Plain),
            1.0,
        )
        .unwrap();
        assert!(assemble(&psi1, &plant, rho, LmiVariant::IqcForm, true).is_err());

        // Psi3Rho assembles under IqcForm.
        let m_nc = FirMultiplier::zero_taps(1, 1, true, MultiplierForm::Rho(rho));
        let fact_rho = build_psi3_rho(&m_nc, 1.0, rho).unwrap();
        assert!(assemble(&fact_rho, &plant, rho, LmiVariant::IqcForm, true).is_ok());
    }

    #[test]
    fn eta_rows_bound_absolute_values() {
        let (_, _, prob) = ex1_psi2_problem();
        let mut x = DVector::zeros(prob.num_vars());
        let tap = prob
            .vars
            .iter()
            .position(|v| matches!(v, VarKind::CausalTap(0)))
            .unwrap();
        let eta = prob
            .vars
            .iter()
            .position(|v| matches!(v, VarKind::Eta(0)))
            .unwrap();
        x[tap] = -0.5;
        x[eta] = 0.4;
        assert!(prob.linear_violation(&x) > 0.0);
        x[eta] = 0.6;
        assert!(prob.linear_violation(&x) <= 0.0);
    }

    #[test]
    fn random_assemblies_match_dense_basis() {
        let mut rng = StdRng::seed_from_u64(9);
        let plant = realize(&corpus::example(2).plant).unwrap();
        let m = FirMultiplier::zero_taps(2, 2, true, MultiplierForm::Plain);
        let fact = build_psi2(&m, 9.0, RhoSubstitution::None).unwrap();
        let prob = assemble(&fact, &plant, 0.99, LmiVariant::IqcForm, true).unwrap();
        let mut x = DVector::zeros(prob.num_vars());
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let fast = prob.eval_lmi(&x);
        let mut slow = prob.f0.clone();
        for k in 0..prob.num_vars() {
            slow += prob.basis_dense(k) * x[k];
        }
        assert!((fast - slow).norm() < 1e-12);
    }

    #[test]
    fn dump_sparse_format() {
        let (_, _, prob) = ex1_psi2_problem();
        let mut buf = Vec::new();
        prob.dump_sparse(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header, format!("lmi {} {}", prob.dim, prob.num_vars()));
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(parts.len(), 4);
            let idx: usize = parts[0].parse().unwrap();
            assert!(idx <= prob.num_vars());
            let r: usize = parts[1].parse().unwrap();
            let c: usize = parts[2].parse().unwrap();
            assert!(c <= r && r < prob.dim);
            let _: f64 = parts[3].parse().unwrap();
        }
    }
}
