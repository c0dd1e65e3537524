//! Homogeneous self-dual interior-point engine with Nesterov-Todd scaling.
//!
//! The margin maximization is treated in conic form
//!
//! `min c'y  s.t.  G y + s = h,  s in K = PSD(p) x R+^l`
//!
//! with `c = -e_margin`, `G y = (sum y_k F_k, A_lin y)` and
//! `h = (-F0, rhs)`. The homogeneous embedding searches for
//! `(y, s, z, tau, kappa)` with
//!
//! `G y + s - h tau = 0`, `G' z + c tau = 0`, `c'y + h'z + kappa = 0`,
//!
//! driving the scaled complementarity `s o z = mu e`, `tau kappa = mu` to
//! zero along Mehrotra predictor-corrector steps. `tau > 0` at convergence
//! recovers the solution `y / tau`.
//!
//! Per iteration, the Newton system is reduced to one factorization of the
//! Schur complement `M = G' Phi^-1 G`, where `Phi` is the NT congruence
//! `X -> T X T` on the PSD block and `diag(s/z)` on the orthant. The basis
//! matrices arrive in factored form (sums of symmetric rank-2 outer
//! products over a shared vector pool), so every entry of M reduces to
//! Gram-matrix lookups:
//!
//! `tr(F_k T' F_l T') = sum 2 a a' (G[u,u']G[v,v'] + G[u,v']G[v,u'])`
//!
//! with `G = P' T' P` over the pool P. This keeps the Schur assembly
//! an order of magnitude below the Cholesky cost of M itself.

use nalgebra::{DMatrix, DVector};

use super::{Residuals, SolveOptions, SolveStatus};
use crate::lmi::{BasisRep, LmiProblem};

pub(super) struct RawSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub t: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub note: Option<String>,
}

/// Fraction-to-boundary factor.
const STEP_ETA: f64 = 0.99;

struct Work<'a> {
    prob: &'a LmiProblem,
    p: usize,
    ell: usize,
    m: usize,
    /// Pool vectors as columns, p x n_pool.
    pool: DMatrix<f64>,
    /// -F0.
    h_mat: DMatrix<f64>,
    /// Linear right-hand sides.
    h_lin: DVector<f64>,
    /// Objective of the min form: -e_margin.
    c: DVector<f64>,
    h_norm: f64,
    c_norm: f64,
}

struct State {
    y: DVector<f64>,
    s_mat: DMatrix<f64>,
    s_lin: DVector<f64>,
    z_mat: DMatrix<f64>,
    z_lin: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Scaling {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    /// Scaled PSD spectrum (diagonal of the scaled point).
    lambda: DVector<f64>,
    /// sqrt(s/z) per orthant coordinate.
    w_lin: DVector<f64>,
}

struct Direction {
    dy: DVector<f64>,
    ds_mat: DMatrix<f64>,
    ds_lin: DVector<f64>,
    dz_mat: DMatrix<f64>,
    dz_lin: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

impl<'a> Work<'a> {
    fn new(prob: &'a LmiProblem) -> Self {
        let p = prob.dim;
        let ell = prob.linear.len();
        let m = prob.num_vars();
        let n_pool = prob.pool.len();
        let mut pool = DMatrix::zeros(p, n_pool);
        for (j, v) in prob.pool.iter().enumerate() {
            pool.column_mut(j).copy_from(v);
        }
        let h_mat = -&prob.f0;
        let h_lin = DVector::from_iterator(ell, prob.linear.iter().map(|r| r.rhs));
        let mut c = DVector::zeros(m);
        c[prob.margin_var] = -1.0;
        let h_norm = (h_mat.norm_squared() + h_lin.norm_squared()).sqrt();
        Work {
            prob,
            p,
            ell,
            m,
            pool,
            h_mat,
            h_lin,
            c_norm: 1.0,
            h_norm,
            c,
        }
    }

    /// (sum y_k F_k, A_lin y).
    fn apply_g(&self, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n_pool = self.pool.ncols();
        let mut acc = DMatrix::zeros(n_pool, n_pool);
        let mut diag = 0.0;
        for (k, rep) in self.prob.basis.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            match rep {
                BasisRep::Identity => diag += yk,
                BasisRep::Terms(terms) => {
                    for t in terms {
                        acc[(t.u, t.v)] += yk * t.alpha;
                        acc[(t.v, t.u)] += yk * t.alpha;
                    }
                }
            }
        }
        let mut g_mat = &self.pool * acc * self.pool.transpose();
        for i in 0..self.p {
            g_mat[(i, i)] += diag;
        }
        // Guard against asymmetry from rounding in the triple product.
        g_mat = (&g_mat + g_mat.transpose()) * 0.5;
        let mut g_lin = DVector::zeros(self.ell);
        for (j, row) in self.prob.linear.iter().enumerate() {
            g_lin[j] = row.coeffs.iter().map(|(i, cf)| cf * y[*i]).sum();
        }
        (g_mat, g_lin)
    }

    /// G' applied to a cone-space pair: per variable `<F_k, Z> + a_k' z`.
    fn apply_gt(&self, z_mat: &DMatrix<f64>, z_lin: &DVector<f64>) -> DVector<f64> {
        let q = z_mat * &self.pool;
        let mut out = DVector::zeros(self.m);
        for (k, rep) in self.prob.basis.iter().enumerate() {
            out[k] = match rep {
                BasisRep::Identity => z_mat.trace(),
                BasisRep::Terms(terms) => terms
                    .iter()
                    .map(|t| 2.0 * t.alpha * self.pool.column(t.u).dot(&q.column(t.v)))
                    .sum(),
            };
        }
        for (j, row) in self.prob.linear.iter().enumerate() {
            let zj = z_lin[j];
            if zj != 0.0 {
                for (i, cf) in &row.coeffs {
                    out[*i] += cf * zj;
                }
            }
        }
        out
    }

    /// Schur complement `M = G' Phi^-1 G` for the current scaling.
    fn schur(&self, scal: &Scaling, state: &State) -> DMatrix<f64> {
        let v = &scal.t_inv * &self.pool;
        let gamma = self.pool.tr_mul(&v);
        let gamma2 = v.tr_mul(&v);
        let tinv_fro2 = scal.t_inv.norm_squared();
        let mut m_mat = DMatrix::zeros(self.m, self.m);
        for k in 0..self.m {
            for l in k..self.m {
                let val = match (&self.prob.basis[k], &self.prob.basis[l]) {
                    (BasisRep::Identity, BasisRep::Identity) => tinv_fro2,
                    (BasisRep::Identity, BasisRep::Terms(ts))
                    | (BasisRep::Terms(ts), BasisRep::Identity) => ts
                        .iter()
                        .map(|t| 2.0 * t.alpha * gamma2[(t.u, t.v)])
                        .sum(),
                    (BasisRep::Terms(ta), BasisRep::Terms(tb)) => {
                        let mut acc = 0.0;
                        for a in ta {
                            for b in tb {
                                acc += 2.0
                                    * a.alpha
                                    * b.alpha
                                    * (gamma[(a.u, b.u)] * gamma[(a.v, b.v)]
                                        + gamma[(a.u, b.v)] * gamma[(a.v, b.u)]);
                            }
                        }
                        acc
                    }
                };
                m_mat[(k, l)] = val;
                m_mat[(l, k)] = val;
            }
        }
        for (j, row) in self.prob.linear.iter().enumerate() {
            let w = state.z_lin[j] / state.s_lin[j];
            for (a, ca) in &row.coeffs {
                for (b, cb) in &row.coeffs {
                    m_mat[(*a, *b)] += w * ca * cb;
                }
            }
        }
        m_mat
    }
}

fn nt_scaling(state: &State) -> Option<Scaling> {
    let p = state.s_mat.nrows();
    let l_s = state.s_mat.clone().cholesky()?;
    let l_z = state.z_mat.clone().cholesky()?;
    let m_sv = l_z.l().tr_mul(&l_s.l());
    let svd = m_sv.svd(true, true);
    let u = svd.u.as_ref()?;
    let v_t = svd.v_t.as_ref()?;
    let _ = u;
    let sig = &svd.singular_values;
    if sig.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
        return None;
    }
    let v = v_t.transpose();
    let mut r = l_s.l() * &v;
    for j in 0..p {
        let sc = 1.0 / sig[j].sqrt();
        r.column_mut(j).scale_mut(sc);
    }
    // R^-1 = Sigma^(1/2) V' L_s^-1.
    let l_s_inv = l_s
        .l()
        .solve_lower_triangular(&DMatrix::identity(p, p))?;
    let mut r_inv = v.transpose() * l_s_inv;
    for i in 0..p {
        let sc = sig[i].sqrt();
        r_inv.row_mut(i).scale_mut(sc);
    }
    let t_inv = r_inv.tr_mul(&r_inv);
    let w_lin = DVector::from_fn(state.s_lin.nrows(), |j, _| {
        (state.s_lin[j] / state.z_lin[j]).sqrt()
    });
    Some(Scaling {
        r,
        r_inv,
        t_inv,
        lambda: sig.clone_owned(),
        w_lin,
    })
}

/// Inverse of the symmetrized product with a diagonal scaled point:
/// entry-wise `2 d_ij / (sig_i + sig_j)`.
fn lambda_circ_inv(d: &DMatrix<f64>, sig: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| {
        2.0 * d[(i, j)] / (sig[i] + sig[j])
    })
}

/// Largest step a in [0, cap] keeping `lambda + a H` PSD, where H is a
/// direction in the scaled basis.
fn max_step_scaled(h: &DMatrix<f64>, sig: &DVector<f64>, cap: f64) -> f64 {
    let p = h.nrows();
    if p == 0 {
        return cap;
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| h[(i, j)] / (sig[i] * sig[j]).sqrt());
    let eig_min = scaled.symmetric_eigen().eigenvalues.min();
    if eig_min >= 0.0 {
        cap
    } else {
        cap.min(-1.0 / eig_min)
    }
}

fn max_step_nonneg(x: &DVector<f64>, dx: &DVector<f64>, cap: f64) -> f64 {
    let mut a = cap;
    for j in 0..x.nrows() {
        if dx[j] < 0.0 {
            a = a.min(-x[j] / dx[j]);
        }
    }
    a
}

struct NewtonContext<'w> {
    work: &'w Work<'w>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Phi^-1 h, both blocks.
    phih_mat: DMatrix<f64>,
    phih_lin: DVector<f64>,
    /// M^-1 (-c + G' Phi^-1 h).
    u2: DVector<f64>,
}

impl<'w> NewtonContext<'w> {
    fn new(work: &'w Work<'w>, scal: &Scaling, state: &State) -> Option<Self> {
        let m_mat = work.schur(scal, state);
        let chol = cholesky_with_jitter(m_mat)?;
        let phih_mat = &scal.t_inv * &work.h_mat * &scal.t_inv;
        let phih_lin = DVector::from_fn(work.ell, |j, _| {
            work.h_lin[j] * state.z_lin[j] / state.s_lin[j]
        });
        let rhs2 = -&work.c + work.apply_gt(&phih_mat, &phih_lin);
        let u2 = chol.solve(&rhs2);
        Some(NewtonContext {
            work,
            chol,
            phih_mat,
            phih_lin,
            u2,
        })
    }

    /// Solves one Newton system for the given complementarity targets
    /// (scaled space) and residual weight gamma.
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        state: &State,
        scal: &Scaling,
        rp_mat: &DMatrix<f64>,
        rp_lin: &DVector<f64>,
        rd: &DVector<f64>,
        rg: f64,
        d_mat: &DMatrix<f64>,
        d_lin: &DVector<f64>,
        d_kappa: f64,
        gamma: f64,
    ) -> Direction {
        let w = self.work;
        let xi_mat = &scal.r * lambda_circ_inv(d_mat, &scal.lambda) * scal.r.transpose();
        let xi_lin = DVector::from_fn(w.ell, |j, _| d_lin[j] / state.z_lin[j]);

        // rhs pair entering Phi^-1: gamma r_p + xi.
        let rp_xi_mat = rp_mat * gamma + &xi_mat;
        let rp_xi_lin = rp_lin * gamma + &xi_lin;
        let phi_rp_mat = &scal.t_inv * &rp_xi_mat * &scal.t_inv;
        let phi_rp_lin = DVector::from_fn(w.ell, |j, _| {
            rp_xi_lin[j] * state.z_lin[j] / state.s_lin[j]
        });
        let rhs1 = -(rd * gamma) - w.apply_gt(&phi_rp_mat, &phi_rp_lin);
        let u1 = self.chol.solve(&rhs1);

        // v = Phi^-1 (G u + gamma r_p + xi) and Phi^-1 (G u2 - h).
        let (gu1_mat, gu1_lin) = w.apply_g(&u1);
        let v1_mat = &scal.t_inv * (&gu1_mat + &rp_xi_mat) * &scal.t_inv;
        let v1_lin = DVector::from_fn(w.ell, |j, _| {
            (gu1_lin[j] + rp_xi_lin[j]) * state.z_lin[j] / state.s_lin[j]
        });
        let (gu2_mat, gu2_lin) = w.apply_g(&self.u2);
        let v2_mat = &scal.t_inv * &gu2_mat * &scal.t_inv - &self.phih_mat;
        let v2_lin = DVector::from_fn(w.ell, |j, _| {
            gu2_lin[j] * state.z_lin[j] / state.s_lin[j] - self.phih_lin[j]
        });

        let c_u1 = w.c.dot(&u1);
        let c_u2 = w.c.dot(&self.u2);
        let h_v1 = frob_dot(&w.h_mat, &v1_mat) + w.h_lin.dot(&v1_lin);
        let h_v2 = frob_dot(&w.h_mat, &v2_mat) + w.h_lin.dot(&v2_lin);
        let denom = c_u2 + h_v2 - state.kappa / state.tau;
        let dtau = (-gamma * rg - c_u1 - h_v1 - d_kappa / state.tau) / denom;

        let dy = &u1 + &self.u2 * dtau;
        let dz_mat = &v1_mat + &v2_mat * dtau;
        let dz_lin = &v1_lin + &v2_lin * dtau;
        // ds = xi - Phi(dz).
        let t_mat = &scal.r * scal.r.transpose();
        let ds_mat = &xi_mat - &t_mat * &dz_mat * t_mat.transpose();
        let ds_lin = DVector::from_fn(w.ell, |j, _| {
            xi_lin[j] - state.s_lin[j] / state.z_lin[j] * dz_lin[j]
        });
        let dkappa = (d_kappa - state.kappa * dtau) / state.tau;
        Direction {
            dy,
            ds_mat: symmetrize(ds_mat),
            ds_lin,
            dz_mat: symmetrize(dz_mat),
            dz_lin,
            dtau,
            dkappa,
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn cholesky_with_jitter(
    m: DMatrix<f64>,
) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..4 {
        let mut trial = m.clone();
        if jitter > 0.0 {
            for i in 0..trial.nrows() {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(ch) = trial.cholesky() {
            return Some(ch);
        }
        jitter = if jitter == 0.0 {
            1e-14 * scale
        } else {
            jitter * 100.0
        };
    }
    None
}

/// Largest admissible step for a direction, over both cone blocks and the
/// homogenizing pair.
fn max_step(state: &State, scal: &Scaling, dir: &Direction, cap: f64) -> f64 {
    let ds_scaled = &scal.r_inv * &dir.ds_mat * scal.r_inv.transpose();
    let dz_scaled = scal.r.tr_mul(&(&dir.dz_mat * &scal.r));
    let mut a = max_step_scaled(&ds_scaled, &scal.lambda, cap);
    a = max_step_scaled(&dz_scaled, &scal.lambda, a);
    a = max_step_nonneg(&state.s_lin, &dir.ds_lin, a);
    a = max_step_nonneg(&state.z_lin, &dir.dz_lin, a);
    if dir.dtau < 0.0 {
        a = a.min(-state.tau / dir.dtau);
    }
    if dir.dkappa < 0.0 {
        a = a.min(-state.kappa / dir.dkappa);
    }
    a
}

pub(super) fn run(prob: &LmiProblem, opts: &SolveOptions) -> RawSolution {
    let work = Work::new(prob);
    let p = work.p;
    let ell = work.ell;
    let nu = (p + ell) as f64 + 1.0;

    let s0 = 1.0 + work.h_mat.amax();
    let mut state = State {
        y: DVector::zeros(work.m),
        s_mat: DMatrix::identity(p, p) * s0,
        s_lin: DVector::from_fn(ell, |j, _| 1.0 + work.h_lin[j].abs()),
        z_mat: DMatrix::identity(p, p),
        z_lin: DVector::from_element(ell, 1.0),
        tau: 1.0,
        kappa: 1.0,
    };

    let mut best = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        gap: f64::INFINITY,
    };
    let finish = |state: &State, status, iterations, residuals, note| {
        let x = &state.y / state.tau;
        let t = x[prob.margin_var];
        RawSolution {
            status,
            x,
            t,
            iterations,
            residuals,
            note,
        }
    };

    for iter in 0..opts.max_iter {
        // Residuals of the embedding.
        let (gy_mat, gy_lin) = work.apply_g(&state.y);
        let rp_mat = &gy_mat + &state.s_mat - &work.h_mat * state.tau;
        let rp_lin = &gy_lin + &state.s_lin - &work.h_lin * state.tau;
        let rd = work.apply_gt(&state.z_mat, &state.z_lin) + &work.c * state.tau;
        let c_y = work.c.dot(&state.y);
        let h_z = frob_dot(&work.h_mat, &state.z_mat) + work.h_lin.dot(&state.z_lin);
        let rg = c_y + h_z + state.kappa;

        let sz = frob_dot(&state.s_mat, &state.z_mat) + state.s_lin.dot(&state.z_lin);
        let mu = (sz + state.tau * state.kappa) / nu;

        let pres = (rp_mat.norm_squared() + rp_lin.norm_squared()).sqrt()
            / (state.tau * (1.0 + work.h_norm));
        let dres = rd.norm() / (state.tau * (1.0 + work.c_norm));
        let obj = c_y / state.tau;
        let relgap = sz / (state.tau * state.tau) / (1.0 + obj.abs() + (h_z / state.tau).abs());
        let residuals = Residuals {
            primal: pres,
            dual: dres,
            gap: relgap,
        };
        best = Residuals {
            primal: best.primal.min(pres),
            dual: best.dual.min(dres),
            gap: best.gap.min(relgap),
        };

        if pres <= opts.tol && dres <= opts.tol && relgap <= opts.tol {
            let t = state.y[prob.margin_var] / state.tau;
            let status = if t >= prob.feas_threshold {
                SolveStatus::Feasible
            } else {
                SolveStatus::Infeasible
            };
            return finish(&state, status, iter, residuals, None);
        }

        // Unboundedness / infeasibility certificates: tau collapses while
        // kappa stays away from zero.
        if state.tau < 1e-12 * state.kappa.max(1.0) {
            let note = if c_y < 0.0 {
                "margin unbounded above (dual infeasibility certificate)"
            } else {
                "homogeneous certificate with collapsing tau"
            };
            return finish(&state, SolveStatus::Numerical, iter, residuals, Some(note.into()));
        }

        let Some(scal) = nt_scaling(&state) else {
            return finish(
                &state,
                SolveStatus::Numerical,
                iter,
                residuals,
                Some("cone variables lost definiteness".into()),
            );
        };
        let Some(ctx) = NewtonContext::new(&work, &scal, &state) else {
            return finish(
                &state,
                SolveStatus::Numerical,
                iter,
                residuals,
                Some("Schur complement not positive definite".into()),
            );
        };

        // Predictor: pure affine direction.
        let lam2 = DMatrix::from_diagonal(&scal.lambda.map(|s| -s * s));
        let d_lin_aff = DVector::from_fn(ell, |j, _| -state.s_lin[j] * state.z_lin[j]);
        let aff = ctx.solve(
            &state,
            &scal,
            &rp_mat,
            &rp_lin,
            &rd,
            rg,
            &lam2,
            &d_lin_aff,
            -state.tau * state.kappa,
            1.0,
        );
        let alpha_aff = max_step(&state, &scal, &aff, 1.0);

        // Centering parameter from the affine trial point.
        let sz_aff = frob_dot(
            &(&state.s_mat + &aff.ds_mat * alpha_aff),
            &(&state.z_mat + &aff.dz_mat * alpha_aff),
        ) + (&state.s_lin + &aff.ds_lin * alpha_aff)
            .dot(&(&state.z_lin + &aff.dz_lin * alpha_aff));
        let mu_aff = (sz_aff
            + (state.tau + alpha_aff * aff.dtau) * (state.kappa + alpha_aff * aff.dkappa))
            / nu;
        let sigma = (mu_aff / mu).max(0.0).min(1.0).powi(3);

        // Corrector with Mehrotra second-order term, residual weight 1 - sigma.
        let ds_scaled = &scal.r_inv * &aff.ds_mat * scal.r_inv.transpose();
        let dz_scaled = scal.r.tr_mul(&(&aff.dz_mat * &scal.r));
        let cross = (&ds_scaled * &dz_scaled + &dz_scaled * &ds_scaled) * 0.5;
        let mut d_mat = -cross;
        for i in 0..p {
            d_mat[(i, i)] += sigma * mu - scal.lambda[i] * scal.lambda[i];
        }
        let d_lin = DVector::from_fn(ell, |j, _| {
            let dst = aff.ds_lin[j] / scal.w_lin[j];
            let dzt = aff.dz_lin[j] * scal.w_lin[j];
            sigma * mu - state.s_lin[j] * state.z_lin[j] - dst * dzt
        });
        let d_kappa = sigma * mu - state.tau * state.kappa - aff.dtau * aff.dkappa;
        let dir = ctx.solve(
            &state,
            &scal,
            &rp_mat,
            &rp_lin,
            &rd,
            rg,
            &d_mat,
            &d_lin,
            d_kappa,
            1.0 - sigma,
        );
        let alpha = STEP_ETA * max_step(&state, &scal, &dir, 1.0 / STEP_ETA);
        if !alpha.is_finite() || alpha <= 1e-14 {
            return finish(
                &state,
                SolveStatus::Numerical,
                iter,
                residuals,
                Some("step length collapsed".into()),
            );
        }

        state.y += &dir.dy * alpha;
        state.s_mat = symmetrize(&state.s_mat + &dir.ds_mat * alpha);
        state.s_lin += &dir.ds_lin * alpha;
        state.z_mat = symmetrize(&state.z_mat + &dir.dz_mat * alpha);
        state.z_lin += &dir.dz_lin * alpha;
        state.tau += alpha * dir.dtau;
        state.kappa += alpha * dir.dkappa;
    }

    let residuals = best;
    finish(
        &state,
        SolveStatus::Numerical,
        opts.max_iter,
        residuals,
        Some("iteration limit reached".into()),
    )
}
