//! Certification of exponential convergence rates for discrete-time Lur'e
//! systems: a stable LTI plant in feedback with a memoryless slope-restricted
//! nonlinearity.
//!
//! The toolbox searches over FIR Zames-Falb multipliers (causal, anticausal
//! and noncausal, in both the plain-IQC and rho-IQC parameterizations),
//! assembles the corresponding KYP feasibility LMIs, and solves them with a
//! built-in dense conic interior-point solver. A bisection over the rate rho
//! produces a [`search::Certificate`], which is cross-checked by independent
//! frequency-domain sweeps and time-domain simulation in [`verify`].
//!
//! Module map:
//! - [`lti`]: transfer functions, state-space realizations, rho-scaling,
//!   Nyquist value and the linear (theoretical) rate lower bound.
//! - [`multiplier`]: FIR Zames-Falb multiplier parameterization, the three
//!   penalized l1 conditions, and plain/rho form conversion.
//! - [`factorization`]: the Zames-Falb quadratic form Pi and its
//!   factorizations (Psi, Kp): the classic causal one, the coupled and
//!   decoupled lifting schemes, and the unified rho-parameterized lifting.
//! - [`lmi`]: assembly of the rate-certification feasibility LMI.
//! - [`sdp`]: dense homogeneous self-dual interior-point solver with
//!   Nesterov-Todd scaling.
//! - [`search`]: bisection over rho, K-sweeps, per-class comparison.
//! - [`verify`]: certificate oracles (FDI sweeps, Lur'e simulation,
//!   decay-rate fitting).

pub mod corpus;
pub mod factorization;
pub mod lmi;
pub mod lti;
pub mod multiplier;
pub mod sdp;
pub mod search;
pub mod verify;

pub use factorization::{Factorization, RhoSubstitution, Scheme};
pub use lmi::{LmiProblem, LmiVariant};
pub use lti::{StateSpace, TransferFunction};
pub use multiplier::{Causality, FirMultiplier, MultiplierForm};
pub use search::{Certificate, CertifyOutcome, Framework, Method, Query};
pub use sdp::{SdpSolution, SolveOptions, SolveStatus};
