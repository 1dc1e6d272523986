//! End-to-end rigidity experiment on synthetic perturbed actions: fixed
//! point, jets, recovered basis, conformal class and global conjugacy.

mod classify;
mod conjugacy;
mod fixed_point;
mod perturbation;
mod recover;

pub use classify::{classify_pair, conformal_commutation_residual, ConjugacyVerdict};
pub use conjugacy::{
    build_conjugacy, ConjugacyReport, GlobalConjugacy, GridSpec, ESCAPE_FACTOR, KOENIGS_RADIUS, MAX_ESCAPE_STEPS,
};
pub use fixed_point::{
    find_fixed_point, jets_at_fixed_point, FixedPoint, FixedPointJets, FIXED_POINT_TOL, LINEAR_RIGIDITY_TOL,
    MAX_ITERATIONS,
};
pub use perturbation::{
    make_perturbation, perturbation_families, perturbation_family, ChartBump, ChartSimilarity, Composite, IdentityMap,
    PerturbationFamily, PerturbedAction, SphereMap, BUMP_RADIUS, MAX_EPS,
};
pub use recover::{fit_q, recover_basis, recover_from_thetas, Recovery, RecoveryStats, RECOVERY_TOL};

use serde::Serialize;

use crate::error::Result;
use crate::fd::DEFAULT_STEP;
use crate::mobius::ActionSpec;
use crate::rng::trial_rng;
use crate::symtensor::{random_basis, BasisMatrix};

/// Acceptance thresholds for a closed-loop trial.
pub const CLASSIFY_TOL: f64 = 1e-6;
pub const CLASS_RESIDUAL_TOL: f64 = 1e-5;
pub const FIXED_POINT_ERROR_TOL: f64 = 1e-8;
pub const CONJUGACY_TOL: f64 = 1e-5;
pub const SHIFT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct TrialConfig {
    pub n: usize,
    pub k: u32,
    pub seed: u64,
    pub trial: u64,
    pub eps: f64,
    pub family: String,
    pub fd_step: f64,
    /// `None` skips the global conjugacy.
    pub grid: Option<GridSpec>,
    pub classify_tol: f64,
    /// Columns of `B'`; drawn at random when absent.
    pub basis: Option<Vec<Vec<f64>>>,
}

impl TrialConfig {
    pub fn new(n: usize, k: u32, seed: u64, trial: u64) -> Self {
        Self {
            n,
            k,
            seed,
            trial,
            eps: 0.05,
            family: "mixed".into(),
            fd_step: DEFAULT_STEP,
            grid: Some(GridSpec::default()),
            classify_tol: CLASSIFY_TOL,
            basis: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub n: usize,
    pub k: u32,
    pub seed: u64,
    pub trial: u64,
    pub eps: f64,
    pub family: String,
    pub true_basis: Vec<Vec<f64>>,
    pub recovered_basis: Vec<Vec<f64>>,
    pub fixed_point: FixedPoint,
    pub fixed_point_error: f64,
    pub linear_deviation: f64,
    pub recovery: RecoveryStats,
    pub verdict: ConjugacyVerdict,
    pub conjugacy: Option<ConjugacyReport>,
    pub pass: bool,
    /// Largest residual among the checked quantities, each divided by its
    /// threshold.
    pub max_residual: f64,
}

/// One closed-loop trial: synthesize `h ∘ ρ_{B'} ∘ h^-1` from a random `B'`,
/// recover `B''` from the action alone and score it against `B'`.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialReport> {
    let mut rng = trial_rng(cfg.seed, cfg.trial);
    let truth = match &cfg.basis {
        Some(cols) => BasisMatrix::from_columns(cols)?,
        None => random_basis(cfg.n, 2.0, 1e3, &mut rng),
    };
    let action = make_perturbation(ActionSpec::new(cfg.k, truth.clone())?, &cfg.family, cfg.eps, &mut rng)?;

    let fixed = find_fixed_point(&action, FIXED_POINT_TOL)?;
    let truth_point = action.true_fixed_point();
    let fixed_point_error = fixed.point.distance(&truth_point);
    let jets = jets_at_fixed_point(&action, cfg.k, &fixed.point, cfg.fd_step)?;
    let recovery = recover_basis(&jets)?;
    let verdict = classify_pair(&recovery.basis, &truth, cfg.classify_tol)?;
    let conjugacy = match &cfg.grid {
        Some(grid) => Some(build_conjugacy(cfg.k, &recovery, &jets.chart)?.residual_report(&action, grid)?),
        None => None,
    };

    let mut scores = vec![
        fixed_point_error / FIXED_POINT_ERROR_TOL,
        jets.max_linear_deviation / LINEAR_RIGIDITY_TOL,
        verdict.residual / CLASS_RESIDUAL_TOL,
    ];
    if let Some(c) = &conjugacy {
        scores.push(c.max_residual / CONJUGACY_TOL);
        scores.push(c.max_shift_deviation / SHIFT_TOL);
    }
    let max_residual = scores.iter().copied().fold(0.0, f64::max);
    let rows = |m: &nalgebra::DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(TrialReport {
        n: cfg.n,
        k: cfg.k,
        seed: cfg.seed,
        trial: cfg.trial,
        eps: cfg.eps,
        family: cfg.family.clone(),
        true_basis: rows(truth.matrix()),
        recovered_basis: rows(recovery.basis.matrix()),
        pass: verdict.conjugate && max_residual <= 1.0,
        max_residual,
        fixed_point: fixed,
        fixed_point_error,
        linear_deviation: jets.max_linear_deviation,
        recovery: recovery.stats,
        verdict,
        conjugacy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_loop_trial_passes() {
        let mut cfg = TrialConfig::new(2, 2, 11, 0);
        cfg.eps = 0.1;
        cfg.grid = Some(GridSpec::new(7, 3.0).unwrap());
        let rep = run_trial(&cfg).unwrap();
        assert!(rep.pass, "{}", serde_json::to_string_pretty(&rep).unwrap());
    }

    #[test]
    fn trials_are_deterministic() {
        let mut cfg = TrialConfig::new(2, 3, 5, 2);
        cfg.grid = None;
        let a = serde_json::to_string(&run_trial(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_trial(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
