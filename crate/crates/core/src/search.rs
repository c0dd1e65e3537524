//! Outer certification loop: bisection over the rate rho per multiplier
//! class, framework and factorization scheme, plus the K-sweep and
//! per-class comparison drivers.
//!
//! Feasibility of the assembled LMI is monotone in rho (larger rho relaxes
//! both the scaled plant and the penalized l1 condition), so the smallest
//! certifiable rate is found by bisection on the initial bracket
//! `(spectral_radius(A), 1)`. A numerical solver failure counts as
//! infeasible for bracketing: that can only loosen the reported bound,
//! never unsound-tighten it.

use rayon::prelude::*;
use thiserror::Error;

use crate::factorization::{
    build_psi2, build_psi3, build_psi3_rho, Factorization, FactorizationError, RhoSubstitution,
    Scheme,
};
use crate::lmi::{self, LmiError, LmiVariant};
use crate::lti::{
    linear_lower_bound, realize, spectral_radius, LtiError, StateSpace, TransferFunction,
    DEFAULT_TAU_GRID,
};
use crate::multiplier::{Causality, FirMultiplier, MultiplierError, MultiplierForm};
use crate::sdp::{self, SolveOptions, SolveStatus};
use crate::verify::{self, VerifyError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("plant is unstable (spectral radius {0})")]
    UnstablePlant(f64),
    #[error("slope bound K must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Sdp(#[from] sdp::SdpError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Which multiplier parameterization the search runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framework {
    /// Plain taps, l1 penalized on both sides by rho^-i.
    Iqc,
    /// Rho-form taps, l1 penalized by rho^-2i on the causal side.
    RhoIqc,
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Framework::Iqc => write!(f, "iqc"),
            Framework::RhoIqc => write!(f, "rho_iqc"),
        }
    }
}

/// One certification request.
#[derive(Debug, Clone)]
pub struct Query {
    pub plant: TransferFunction,
    pub k: f64,
    pub causality: Causality,
    pub framework: Framework,
    pub odd: bool,
    pub n_b: usize,
    pub n_f: usize,
    pub scheme: Scheme,
    pub bisect_tol: f64,
    pub solver: SolveOptions,
    /// Override of the LMI variant; None picks the scheme's natural one.
    pub variant: Option<LmiVariant>,
    /// Grid for the certificate frequency sweeps.
    pub oracle_grid: usize,
}

impl Query {
    pub fn new(plant: TransferFunction, k: f64) -> Self {
        Query {
            plant,
            k,
            causality: Causality::Noncausal,
            framework: Framework::RhoIqc,
            odd: true,
            n_b: 1,
            n_f: 1,
            scheme: Scheme::Psi3Rho,
            bisect_tol: 1e-6,
            solver: SolveOptions::default(),
            variant: None,
            oracle_grid: 2048,
        }
    }

    /// The four standard search pipelines used by the reproduction table.
    pub fn with_method(mut self, method: Method, n_z: usize) -> Self {
        match method {
            Method::Causal => {
                self.causality = Causality::Causal;
                self.framework = Framework::RhoIqc;
                self.scheme = Scheme::Psi2;
                self.n_b = n_z;
                self.n_f = 0;
            }
            Method::Anticausal => {
                self.causality = Causality::Anticausal;
                self.framework = Framework::RhoIqc;
                self.scheme = Scheme::Psi2;
                self.n_b = 0;
                self.n_f = n_z;
            }
            Method::NoncausalPlain => {
                self.causality = Causality::Noncausal;
                self.framework = Framework::Iqc;
                self.scheme = Scheme::Psi2;
                self.n_b = n_z;
                self.n_f = n_z;
            }
            Method::NoncausalRho => {
                self.causality = Causality::Noncausal;
                self.framework = Framework::RhoIqc;
                self.scheme = Scheme::Psi3Rho;
                self.n_b = n_z;
                self.n_f = n_z;
            }
        }
        self
    }
}

/// The four standard multiplier-search pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Causal rho-form taps with the coupled lifting.
    Causal,
    /// Anticausal rho-form taps with the coupled lifting.
    Anticausal,
    /// Noncausal plain taps with the coupled lifting (plain-IQC framework).
    NoncausalPlain,
    /// Noncausal rho-form taps with the rho-parameterized decoupled lifting.
    NoncausalRho,
}

impl Method {
    pub fn all() -> [Method; 4] {
        [
            Method::Causal,
            Method::Anticausal,
            Method::NoncausalPlain,
            Method::NoncausalRho,
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Causal => "causal",
            Method::Anticausal => "anticausal",
            Method::NoncausalPlain => "noncausal-plain",
            Method::NoncausalRho => "noncausal-rho",
        }
    }
}

/// Resolved pipeline settings for a query.
#[derive(Debug, Clone, Copy)]
struct Pipeline {
    substitution: RhoSubstitution,
    variant: LmiVariant,
    rho_form: bool,
}

fn resolve_pipeline(q: &Query) -> Result<Pipeline, SearchError> {
    let class = match (q.n_b, q.n_f) {
        (_, 0) => Causality::Causal,
        (0, _) => Causality::Anticausal,
        _ => Causality::Noncausal,
    };
    if class != q.causality {
        return Err(SearchError::InvalidPipeline(format!(
            "tap counts n_b = {}, n_f = {} imply a {class} multiplier, query says {}",
            q.n_b, q.n_f, q.causality
        )));
    }
    let pipe = match (q.framework, q.scheme) {
        (Framework::Iqc, Scheme::Psi2 | Scheme::Psi3) => Pipeline {
            substitution: RhoSubstitution::None,
            variant: LmiVariant::IqcForm,
            rho_form: false,
        },
        (Framework::Iqc, other) => {
            return Err(SearchError::InvalidPipeline(format!(
                "{other} is not a plain-IQC search scheme (psi1 keeps taps in Psi, psi3_rho is rho-IQC machinery)"
            )))
        }
        (Framework::RhoIqc, Scheme::Psi3Rho) => Pipeline {
            substitution: RhoSubstitution::None,
            variant: LmiVariant::IqcForm,
            rho_form: true,
        },
        (Framework::RhoIqc, Scheme::Psi2 | Scheme::Psi3) => match q.causality {
            Causality::Causal => Pipeline {
                substitution: RhoSubstitution::None,
                variant: LmiVariant::CausalRhoForm,
                rho_form: true,
            },
            Causality::Anticausal => Pipeline {
                substitution: RhoSubstitution::ZOverRho,
                variant: LmiVariant::AnticausalRhoForm,
                rho_form: true,
            },
            Causality::Noncausal => {
                return Err(SearchError::InvalidPipeline(
                    "noncausal multipliers in the rho-IQC framework require the psi3_rho scheme \
                     (uniform substitutions cannot cover both tap directions)"
                        .into(),
                ))
            }
        },
        (Framework::RhoIqc, Scheme::Psi1) => {
            return Err(SearchError::InvalidPipeline(
                "psi1 keeps the taps inside Psi and cannot back a tap search".into(),
            ))
        }
    };
    let mut pipe = pipe;
    if let Some(v) = q.variant {
        // Overrides allow the equivalent causal route through the plain
        // LMI with the rho z substituted factorization.
        if q.framework == Framework::RhoIqc
            && q.causality == Causality::Causal
            && v == LmiVariant::IqcForm
            && q.scheme != Scheme::Psi3Rho
        {
            pipe = Pipeline {
                substitution: RhoSubstitution::RhoZ,
                variant: LmiVariant::IqcForm,
                rho_form: true,
            };
        } else if v != pipe.variant {
            return Err(SearchError::InvalidPipeline(format!(
                "variant override {v:?} is incompatible with the resolved pipeline"
            )));
        }
    }
    Ok(pipe)
}

fn build_factorization(
    q: &Query,
    pipe: Pipeline,
    rho: f64,
) -> Result<Factorization, SearchError> {
    let form = if pipe.rho_form {
        MultiplierForm::Rho(rho)
    } else {
        MultiplierForm::Plain
    };
    let template = FirMultiplier::zero_taps(q.n_b, q.n_f, q.odd, form);
    let fact = match q.scheme {
        Scheme::Psi2 => build_psi2(&template, q.k, pipe.substitution)?,
        Scheme::Psi3 => build_psi3(&template, q.k, pipe.substitution)?,
        Scheme::Psi3Rho => build_psi3_rho(&template, q.k, rho)?,
        Scheme::Psi1 => {
            return Err(SearchError::InvalidPipeline(
                "psi1 cannot back a tap search".into(),
            ))
        }
    };
    Ok(fact)
}

/// A feasible point found during bisection.
#[derive(Debug, Clone)]
struct FeasiblePoint {
    rho: f64,
    multiplier: FirMultiplier,
    margin: f64,
    controllable: bool,
}

fn solve_at(
    q: &Query,
    pipe: Pipeline,
    plant: &StateSpace,
    rho: f64,
) -> Result<Option<FeasiblePoint>, SearchError> {
    let fact = build_factorization(q, pipe, rho)?;
    let prob = lmi::assemble(&fact, plant, rho, pipe.variant, q.odd)?;
    let sol = sdp::solve(&prob, &q.solver)?;
    if sol.status != SolveStatus::Feasible {
        return Ok(None);
    }
    let split = prob.split_solution(&sol.x);
    let form = fact.multiplier.form();
    let multiplier =
        FirMultiplier::from_search_taps(split.h_causal, split.h_anticausal, q.odd, form)?;
    Ok(Some(FeasiblePoint {
        rho,
        multiplier,
        margin: sol.t,
        controllable: prob.controllable,
    }))
}

/// Frequency-domain cross-checks attached to every certificate.
#[derive(Debug, Clone)]
pub struct OracleReport {
    /// Max of Re{M (K G_rho - 1)} over the sweep grid; negative passes.
    pub fdi_max: f64,
    /// Max eigenvalue of the factorized quadratic form over the grid.
    pub matrix_fdi_max: f64,
    /// Grid actually used (doubled once if the maximum was near zero).
    pub grid_used: usize,
    /// l1 margin of the returned multiplier.
    pub l1_margin: f64,
    /// Final re-solve at the certified rho stayed feasible.
    pub resolved_feasible: bool,
    /// Re-solve at rho - bisect_tol was infeasible (None when the probe
    /// would leave the bracket).
    pub infeasible_below: Option<bool>,
    /// Controllability of the augmented pair held.
    pub controllable: bool,
    pub fdi_pass: bool,
}

/// A certified upper bound on the convergence rate.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub rho_upper: f64,
    pub multiplier: FirMultiplier,
    /// LMI feasibility margin at the certified rate.
    pub margin: f64,
    /// Linear-analysis lower bound at the query's K.
    pub lower_bound: f64,
    pub oracle: OracleReport,
}

/// Outcome of a certification run.
#[derive(Debug, Clone)]
pub enum CertifyOutcome {
    Certified(Certificate),
    /// No feasible rate below 1 was found for this multiplier class.
    NoCertificate { rho_probed: f64 },
}

impl CertifyOutcome {
    pub fn rho(&self) -> Option<f64> {
        match self {
            CertifyOutcome::Certified(c) => Some(c.rho_upper),
            CertifyOutcome::NoCertificate { .. } => None,
        }
    }
}

/// Offset keeping the scaled plant strictly stable at the bracket's lower
/// end.
const BRACKET_OFFSET: f64 = 1e-9;

/// Bisection search for the smallest certifiable rate.
pub fn certify(q: &Query) -> Result<CertifyOutcome, SearchError> {
    if !(q.k > 0.0) {
        return Err(SearchError::NonPositiveK(q.k));
    }
    let pipe = resolve_pipeline(q)?;
    let plant = realize(&q.plant)?;
    let sr = spectral_radius(&plant);
    if sr >= 1.0 {
        return Err(SearchError::UnstablePlant(sr));
    }

    let lo0 = sr + BRACKET_OFFSET;
    let hi0 = 1.0 - BRACKET_OFFSET;
    if lo0 >= hi0 {
        return Err(SearchError::UnstablePlant(sr));
    }

    // Feasibility at the top of the bracket decides certifiability at all.
    let Some(top) = solve_at(q, pipe, &plant, hi0)? else {
        return Ok(CertifyOutcome::NoCertificate { rho_probed: hi0 });
    };

    let mut lo = lo0;
    let mut best = top;
    while best.rho - lo > q.bisect_tol {
        let mid = 0.5 * (lo + best.rho);
        match solve_at(q, pipe, &plant, mid)? {
            Some(point) => best = point,
            None => lo = mid,
        }
    }

    // Final bracket checks: the returned rate re-solves feasible, one
    // tolerance below is infeasible.
    let resolved_feasible = solve_at(q, pipe, &plant, best.rho)?.is_some();
    let below = best.rho - q.bisect_tol;
    let infeasible_below = if below > lo0 {
        Some(solve_at(q, pipe, &plant, below)?.is_none())
    } else {
        None
    };

    let lower_bound = linear_lower_bound(&plant, q.k, DEFAULT_TAU_GRID)?;

    // Frequency-domain oracles, with one grid doubling on a near-zero max.
    let fact = rebuild_with_taps(q, pipe, best.rho, &best.multiplier)?;
    let mut grid = q.oracle_grid;
    let (mut fdi_max, mut matrix_fdi_max);
    loop {
        fdi_max = verify::fdi_sweep(&best.multiplier, &plant, q.k, best.rho, grid)?.max_real;
        matrix_fdi_max = verify::matrix_fdi_sweep(&fact, &plant, best.rho, grid)?;
        if (fdi_max.abs() >= 1e-7 && matrix_fdi_max.abs() >= 1e-7) || grid >= 2 * q.oracle_grid {
            break;
        }
        grid *= 2;
    }
    let l1_margin = best.multiplier.l1_condition(best.rho)?.margin;
    let fdi_pass = fdi_max < 0.0 && matrix_fdi_max < 0.0 && l1_margin > 0.0;

    Ok(CertifyOutcome::Certified(Certificate {
        rho_upper: best.rho,
        multiplier: best.multiplier,
        margin: best.margin,
        lower_bound,
        oracle: OracleReport {
            fdi_max,
            matrix_fdi_max,
            grid_used: grid,
            l1_margin,
            resolved_feasible,
            infeasible_below,
            controllable: best.controllable,
            fdi_pass,
        },
    }))
}

/// Rebuilds the factorization carrying the certificate's concrete taps,
/// for the matrix frequency sweep.
fn rebuild_with_taps(
    q: &Query,
    pipe: Pipeline,
    rho: f64,
    m: &FirMultiplier,
) -> Result<Factorization, SearchError> {
    Ok(match q.scheme {
        Scheme::Psi2 => build_psi2(m, q.k, pipe.substitution)?,
        Scheme::Psi3 => build_psi3(m, q.k, pipe.substitution)?,
        Scheme::Psi3Rho => build_psi3_rho(m, q.k, rho)?,
        Scheme::Psi1 => unreachable!("rejected by resolve_pipeline"),
    })
}

/// One row of a K sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k: f64,
    pub rho_lower: f64,
    pub rho_causal: Option<f64>,
    pub rho_anticausal: Option<f64>,
    pub rho_noncausal: Option<f64>,
    /// K exceeded the plant's Nyquist value; the lower bound is not
    /// meaningful there.
    pub past_nyquist: bool,
}

/// Per-K certification for the three causality classes plus the linear
/// lower bound. The noncausal column uses the plain coupled-lifting
/// pipeline.
pub fn sweep_k(
    q: &Query,
    k_min: f64,
    k_max: f64,
    steps: usize,
) -> Result<Vec<SweepRow>, SearchError> {
    if !(k_min > 0.0) || k_max < k_min {
        return Err(SearchError::NonPositiveK(k_min));
    }
    let plant = realize(&q.plant)?;
    let sr = spectral_radius(&plant);
    if sr >= 1.0 {
        return Err(SearchError::UnstablePlant(sr));
    }
    let nyquist = crate::lti::nyquist_value(&plant, DEFAULT_TAU_GRID)?;
    let n_z = q.n_b.max(q.n_f).max(1);
    let ks: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                k_min
            } else {
                k_min + (k_max - k_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut rows: Vec<(usize, SweepRow)> = ks
        .par_iter()
        .enumerate()
        .map(|(i, &k)| -> Result<(usize, SweepRow), SearchError> {
            let base = Query {
                plant: q.plant.clone(),
                k,
                ..q.clone()
            };
            let run = |method: Method| -> Result<Option<f64>, SearchError> {
                let query = base.clone().with_method(method, n_z);
                Ok(certify(&query)?.rho())
            };
            let row = SweepRow {
                k,
                rho_lower: linear_lower_bound(&plant, k, DEFAULT_TAU_GRID)?,
                rho_causal: run(Method::Causal)?,
                rho_anticausal: run(Method::Anticausal)?,
                rho_noncausal: run(Method::NoncausalPlain)?,
                past_nyquist: !nyquist.exceeds(k),
            };
            Ok((i, row))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// CSV rendering of a sweep with the fixed schema
/// `K,rho_lower,rho_causal,rho_anticausal,rho_noncausal`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("K,rho_lower,rho_causal,rho_anticausal,rho_noncausal\n");
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "nan".into(),
    };
    for r in rows {
        out.push_str(&format!(
            "{:.6},{:.6},{},{},{}\n",
            r.k,
            r.rho_lower,
            fmt(r.rho_causal),
            fmt(r.rho_anticausal),
            fmt(r.rho_noncausal)
        ));
    }
    out
}

/// Certified rates per causality class with shared settings. No ordering
/// is asserted between the classes; numerics can favor any of them.
#[derive(Debug, Clone)]
pub struct ClassComparison {
    pub rows: Vec<(Method, Option<f64>)>,
}

impl ClassComparison {
    pub fn best(&self) -> Option<(Method, f64)> {
        self.rows
            .iter()
            .filter_map(|(m, r)| r.map(|v| (*m, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn class_comparison(q: &Query, n_z: usize) -> Result<ClassComparison, SearchError> {
    let mut rows = Vec::new();
    for method in Method::all() {
        let query = q.clone().with_method(method, n_z);
        rows.push((method, certify(&query)?.rho()));
    }
    Ok(ClassComparison { rows })
}

/// Shorthand used by the sweep and comparison drivers.
pub fn certify_rho(q: &Query) -> Result<Option<f64>, SearchError> {
    Ok(certify(q)?.rho())
}
