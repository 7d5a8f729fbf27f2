//! Flat JSON run configuration.

use atcell::discretization::BoundaryMode;
use atcell::integrands::{
    BulkIntegrand, FieldRegistry, IntegrandDesc, PsiFunction, SurfaceIntegrand,
};
use atcell::solvers::SolveOptions;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Every field any command reads; each command checks the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<IntegrandDesc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<IntegrandDesc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiFunction>,
    /// Exponent for defaulted integrands and stochastic fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_list: Option<Vec<f64>>,
    /// Grid cells per coefficient period (bulk) or per unit length (surface).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_rule: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<BoundaryMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolveOptions>,

    /// `bulk` or `surface` for stochastic runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Number of realizations (seeds `1..=seeds`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<Vec<i64>>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    /// Preset name (`step`, `ramp`, `two_step`) or path to a CSV file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,

    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n_nodes: Option<usize>,

    /// Dimension and component count for `validate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Output prefix; `--out` overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

pub fn require<'a, T>(field: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing field: {name}")))
}

fn positive(v: f64, name: &str) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))
    }

    pub fn exponent(&self) -> CliResult<f64> {
        let p = self.p.unwrap_or(2.0);
        if p.is_finite() && p > 1.0 {
            Ok(p)
        } else {
            Err(CliError::Config(format!("p must be > 1, got {p}")))
        }
    }

    pub fn bulk(&self) -> CliResult<BulkIntegrand> {
        Ok(match &self.f {
            Some(desc) => BulkIntegrand::from_desc(desc, &FieldRegistry::builtin())?,
            None => BulkIntegrand::homogeneous(1.0, self.exponent()?)?,
        })
    }

    pub fn require_bulk(&self) -> CliResult<BulkIntegrand> {
        require(&self.f, "f")?;
        self.bulk()
    }

    pub fn surface(&self) -> CliResult<SurfaceIntegrand> {
        Ok(match &self.g {
            Some(desc) => SurfaceIntegrand::from_desc(desc, &FieldRegistry::builtin())?,
            None => SurfaceIntegrand::homogeneous(1.0, self.exponent()?)?,
        })
    }

    pub fn psi(&self) -> CliResult<PsiFunction> {
        let psi = self.psi.clone().unwrap_or_default();
        psi.validate()?;
        Ok(psi)
    }

    pub fn solver(&self) -> CliResult<SolveOptions> {
        let opts = self.solver.clone().unwrap_or_default();
        opts.validate()?;
        Ok(opts)
    }

    pub fn ladder(&self) -> Vec<f64> {
        self.ladder
            .clone()
            .unwrap_or_else(|| atcell::cell_problems::DEFAULT_LADDER.to_vec())
    }

    pub fn rho(&self) -> CliResult<f64> {
        positive(self.rho.unwrap_or(1.0), "rho")
    }

    pub fn eps(&self) -> CliResult<f64> {
        positive(*require(&self.eps, "eps")?, "eps")
    }

    /// `x`, defaulting to the origin in dimension `n`.
    pub fn point(&self, n: usize) -> CliResult<Vec<f64>> {
        let x = self.x.clone().unwrap_or_else(|| vec![0.0; n]);
        if x.len() != n {
            return Err(CliError::Config(format!("x must have {n} components")));
        }
        Ok(x)
    }

    pub fn seeds(&self) -> CliResult<usize> {
        let s = *require(&self.seeds, "seeds")?;
        if s < 2 {
            return Err(CliError::Config("seeds must be at least 2".into()));
        }
        Ok(s)
    }

    pub fn r_list(&self) -> CliResult<Vec<f64>> {
        let r = require(&self.r_list, "r_list")?;
        if r.len() < 3 || r.windows(2).any(|w| w[1] <= w[0]) || r[0] <= 0.0 {
            return Err(CliError::Config(
                "r_list must hold at least 3 strictly increasing positive scales".into(),
            ));
        }
        Ok(r.clone())
    }
}
