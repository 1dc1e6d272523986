//! Run configuration shared by the verification suites and the CLI.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defcomplex::RANK_TOL;
use crate::error::{Error, Result};
use crate::fd::DEFAULT_STEP;
use crate::pipeline::{perturbation_family, GridSpec, CLASSIFY_TOL, MAX_EPS};
use crate::symtensor::BasisMatrix;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Default residual threshold of each command.
pub fn default_residual_tol(command: &str) -> f64 {
    match command {
        "jets" => 1e-10,
        "relations" => 1e-12,
        _ => 1e-8,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub n: usize,
    pub k: u32,
    /// Columns of the basis under test; random bases when absent.
    pub basis: Option<Vec<Vec<f64>>>,
    /// Second basis for `classify`.
    pub against: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub trials: usize,
    pub rank_tol: f64,
    pub residual_tol: f64,
    pub classify_tol: f64,
    pub fd_step: f64,
    pub grid: GridSpec,
    pub eps: f64,
    pub perturbation: String,
}

impl RunConfig {
    pub fn new(command: &str, n: usize) -> Self {
        Self {
            command: command.into(),
            n,
            k: 2,
            basis: None,
            against: None,
            seed: 0,
            trials: 1,
            rank_tol: RANK_TOL,
            residual_tol: default_residual_tol(command),
            classify_tol: CLASSIFY_TOL,
            fd_step: DEFAULT_STEP,
            grid: GridSpec::default(),
            eps: 0.05,
            perturbation: "mixed".into(),
        }
    }

    /// Rejects configurations no suite can run.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter(format!("n must be at least 2, got {}", self.n)));
        }
        if self.k < 2 {
            return Err(Error::Parameter(format!("k must be at least 2, got {}", self.k)));
        }
        if self.trials < 1 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("residual_tol", self.residual_tol),
            ("classify_tol", self.classify_tol),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=MAX_EPS).contains(&self.eps) {
            return Err(Error::Parameter(format!("eps must lie in [0, {MAX_EPS}], got {}", self.eps)));
        }
        perturbation_family(&self.perturbation)?;
        for b in [self.basis()?, self.against()?].into_iter().flatten() {
            if b.dim() != self.n {
                return Err(Error::Parameter(format!("basis has dimension {}, expected n = {}", b.dim(), self.n)));
            }
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<Option<BasisMatrix>> {
        self.basis.as_deref().map(BasisMatrix::from_columns).transpose()
    }

    pub fn against(&self) -> Result<Option<BasisMatrix>> {
        self.against.as_deref().map(BasisMatrix::from_columns).transpose()
    }
}

/// On-disk basis: `{"n": 2, "columns": [[1, 0], [0, 1]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub n: usize,
    pub columns: Vec<Vec<f64>>,
}

impl BasisFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: BasisFile =
            serde_json::from_str(text).map_err(|e| Error::Parameter(format!("malformed basis JSON: {e}")))?;
        if f.columns.len() != f.n || f.columns.iter().any(|c| c.len() != f.n) {
            return Err(Error::Parameter(format!("basis must have {0} columns of length {0}", f.n)));
        }
        BasisMatrix::from_columns(&f.columns)?;
        Ok(f)
    }

    /// Inline JSON when the argument starts with `{`, a file path otherwise.
    pub fn load(source: &str) -> Result<Self> {
        if source.trim_start().starts_with('{') {
            return Self::parse(source);
        }
        let text = fs::read_to_string(Path::new(source))
            .map_err(|e| Error::Parameter(format!("cannot read basis file '{source}': {e}")))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::new("exactness", 2).validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_parameter_errors() {
        let base = RunConfig::new("simulate", 2);
        let cases: Vec<Box<dyn Fn(&mut RunConfig)>> = vec![
            Box::new(|c| c.n = 1),
            Box::new(|c| c.k = 1),
            Box::new(|c| c.trials = 0),
            Box::new(|c| c.rank_tol = 0.0),
            Box::new(|c| c.fd_step = -1e-3),
            Box::new(|c| c.eps = 0.5),
            Box::new(|c| c.perturbation = "shear".into()),
            Box::new(|c| c.basis = Some(vec![vec![1.0, 0.0], vec![2.0, 0.0]])),
            Box::new(|c| c.basis = Some(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])),
        ];
        for (i, f) in cases.iter().enumerate() {
            let mut c = base.clone();
            f(&mut c);
            assert!(c.validate().is_err(), "case {i}");
        }
    }

    #[test]
    fn basis_sources() {
        let f = BasisFile::load(r#"{"n": 2, "columns": [[1, 0], [1, 2]]}"#).unwrap();
        let b = BasisMatrix::from_columns(&f.columns).unwrap();
        // Column-major: the second column is (1, 2).
        assert_eq!(b.matrix()[(0, 1)], 1.0);
        assert_eq!(b.matrix()[(1, 1)], 2.0);
        for bad in [
            r#"{"n": 2, "columns": [[1, 0]]}"#,
            r#"{"n": 2, "columns": [[1, 0], [2, 0]]}"#,
            r#"{"n": 2, "columns": "x"}"#,
            r#"{"n": 2"#,
            "/nonexistent/basis.json",
        ] {
            assert!(matches!(BasisFile::load(bad), Err(Error::Parameter(_)) | Err(Error::Singular(_))), "{bad}");
        }
    }
}
