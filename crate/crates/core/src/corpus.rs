//! The shipped benchmark corpus: four SISO plants with their slope bounds,
//! tuned multiplier steps, and published reference rates used by the
//! reproduction table.
//!
//! Reference values are the rates reported in the literature for this
//! benchmark set; `reference` entries are `None` where the corresponding
//! search is expected to fail (no certificate).

use crate::lti::TransferFunction;

/// One benchmark plant and its search settings.
#[derive(Debug, Clone)]
pub struct Example {
    /// 1-based index in the corpus.
    pub id: usize,
    pub name: &'static str,
    pub plant: TransferFunction,
    /// Maximum slope of the feedback nonlinearity.
    pub k: f64,
    /// Tuned multiplier step (n_b = n_f = n_z for noncausal searches).
    pub n_z: usize,
    /// Reference lower bound on the rate (linear analysis).
    pub rho_lower: f64,
    /// Reference certified rates per method, odd nonlinearity:
    /// (causal, anticausal, noncausal-plain, noncausal-rho).
    pub reference_odd: MethodRates,
    /// Same, non-odd nonlinearity.
    pub reference_non_odd: MethodRates,
}

/// Reference certified rates for the four search pipelines.
#[derive(Debug, Clone, Copy)]
pub struct MethodRates {
    pub causal: Option<f64>,
    pub anticausal: Option<f64>,
    pub noncausal_plain: Option<f64>,
    pub noncausal_rho: Option<f64>,
}

/// Returns benchmark example `id` (1..=4).
pub fn example(id: usize) -> Example {
    let ex = |num: Vec<f64>, den: Vec<f64>| TransferFunction::new(num, den).unwrap();
    match id {
        1 => Example {
            id: 1,
            name: "ex1",
            plant: ex(vec![-1.0], vec![1.0, -0.4]),
            k: 1.0,
            n_z: 1,
            rho_lower: 0.6,
            reference_odd: MethodRates {
                causal: Some(0.600037),
                anticausal: Some(0.600024),
                noncausal_plain: Some(0.600024),
                noncausal_rho: Some(0.600024),
            },
            reference_non_odd: MethodRates {
                causal: Some(0.600281),
                anticausal: Some(0.600024),
                noncausal_plain: Some(0.600024),
                noncausal_rho: Some(0.600024),
            },
        },
        2 => Example {
            id: 2,
            name: "ex2",
            plant: ex(vec![2.0, -1.0], vec![20.0, -10.0, 10.0]),
            k: 9.0,
            n_z: 20,
            rho_lower: 0.974679,
            reference_odd: MethodRates {
                causal: Some(0.978485),
                anticausal: Some(0.975044),
                noncausal_plain: Some(0.974758),
                noncausal_rho: Some(0.974794),
            },
            reference_non_odd: MethodRates {
                causal: Some(0.998474),
                anticausal: Some(0.975044),
                noncausal_plain: Some(0.974758),
                noncausal_rho: Some(0.974794),
            },
        },
        3 => Example {
            id: 3,
            name: "ex3",
            plant: ex(vec![-10.0, -19.0, -9.0], vec![100.0, -80.0, 17.0, -1.0]),
            k: 3.0,
            n_z: 30,
            rho_lower: 0.975367,
            reference_odd: MethodRates {
                causal: Some(0.976437),
                anticausal: Some(0.975525),
                noncausal_plain: Some(0.975815),
                noncausal_rho: Some(0.975891),
            },
            reference_non_odd: MethodRates {
                causal: Some(0.976501),
                anticausal: Some(0.975769),
                noncausal_plain: Some(0.975891),
                noncausal_rho: Some(0.975891),
            },
        },
        4 => Example {
            id: 4,
            name: "ex4",
            plant: ex(vec![-0.1, 0.0], vec![1.0, -1.8, 0.81]),
            k: 12.0,
            n_z: 20,
            rho_lower: 0.9,
            reference_odd: MethodRates {
                causal: Some(0.991760),
                anticausal: None,
                noncausal_plain: Some(0.990723),
                noncausal_rho: Some(0.990723),
            },
            reference_non_odd: MethodRates {
                causal: Some(0.992794),
                anticausal: None,
                noncausal_plain: Some(0.992529),
                noncausal_rho: Some(0.992529),
            },
        },
        _ => panic!("corpus has examples 1..=4, got {id}"),
    }
}

/// All four examples.
pub fn all() -> Vec<Example> {
    (1..=4).map(example).collect()
}
