use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solver::{Schedule, SolverConfig, StoppingRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// `A x = P x + c`, `B y = Q y + d` with monotone `P`, `Q` and random `L`.
    AffinePd,
    /// `lambda ||x||_1 + 1/2 ||M x - y||^2` through the minimization frontend.
    Lasso,
    /// `m` affine blocks coupled through one affine operator of their sum.
    Consensus,
    /// `0 in lambda d||.||_1 (x) + x - y`, with `L = Id`.
    SumTwo,
    /// `AffinePd` with `||L||` forced to a prescribed, possibly extreme, value.
    NormfreeStress,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::AffinePd,
        ProblemKind::Lasso,
        ProblemKind::Consensus,
        ProblemKind::SumTwo,
        ProblemKind::NormfreeStress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::AffinePd => "affine_pd",
            ProblemKind::Lasso => "lasso",
            ProblemKind::Consensus => "consensus",
            ProblemKind::SumTwo => "sum_two",
            ProblemKind::NormfreeStress => "normfree_stress",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown problem kind '{s}'")))
    }
}

/// Everything needed to rebuild an instance. Generation is a pure function of
/// this value.
///
/// `dims` by kind:
/// - `affine_pd`, `normfree_stress`: `[n]` or `[n, d]` (primal, dual)
/// - `lasso`: `[n, rows]`
/// - `consensus`: `[m, n]` (blocks, block size)
/// - `sum_two`: `[n]`
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dims: Vec<usize>,
    pub seed: u64,
    /// l1 weight for `lasso` and `sum_two`.
    pub lambda_reg: f64,
    /// Target spectral norm of `L` for the affine kinds.
    pub norm_scale: f64,
    /// Bound on `lambda_max / lambda_min` of the symmetric part of `P`.
    pub condition: f64,
    /// `consensus` only: all blocks share their data.
    pub identical_blocks: bool,
}

/// `||L||` values cycled through by `normfree_stress` when none is given.
pub const STRESS_NORMS: [f64; 3] = [1e-2, 1.0, 50.0];

impl ProblemSpec {
    pub fn new(kind: ProblemKind, dims: Vec<usize>, seed: u64) -> Self {
        let (norm_scale, condition) = match kind {
            ProblemKind::NormfreeStress => (STRESS_NORMS[(seed % 3) as usize], 2.0),
            _ => (1.0, 10.0),
        };
        ProblemSpec {
            kind,
            dims,
            seed,
            lambda_reg: 0.1,
            norm_scale,
            condition,
            identical_blocks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected: &[usize] = match self.kind {
            ProblemKind::AffinePd | ProblemKind::NormfreeStress => &[1, 2],
            ProblemKind::Lasso | ProblemKind::Consensus => &[2],
            ProblemKind::SumTwo => &[1],
        };
        if !expected.contains(&self.dims.len()) {
            return Err(Error::InvalidParameter(format!(
                "{} takes {:?} dimensions, got {:?}",
                self.kind, expected, self.dims
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("dimensions must be positive, got {:?}", self.dims)));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_reg must be nonnegative, got {}", self.lambda_reg)));
        }
        if !(self.norm_scale > 0.0 && self.norm_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("norm_scale must be positive, got {}", self.norm_scale)));
        }
        if !(self.condition >= 1.0 && self.condition.is_finite()) {
            return Err(Error::InvalidParameter(format!("condition must be at least 1, got {}", self.condition)));
        }
        if self.kind == ProblemKind::Lasso && self.lambda_reg == 0.0 && self.dims[1] < self.dims[0] {
            return Err(Error::InvalidParameter(
                "unregularized lasso needs at least as many rows as columns".into(),
            ));
        }
        Ok(())
    }
}

/// Problem and solver settings assembled from `key=value` pairs.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            spec: ProblemSpec::new(ProblemKind::AffinePd, vec![4], 0),
            solver: SolverConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key}='{value}'")))
}

impl RunSettings {
    pub const KEYS: [&'static str; 15] = [
        "kind",
        "dim",
        "seed",
        "lambda_reg",
        "norm_scale",
        "condition",
        "identical_blocks",
        "gamma",
        "mu",
        "lambda",
        "epsilon",
        "max_iters",
        "residual_tol",
        "sigma_tol",
        "stopping",
    ];

    /// Applies one setting. Changing `kind` or `seed` keeps any explicitly set
    /// `norm_scale`, so apply those two first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "kind" => {
                let kind = value.parse()?;
                let dims = std::mem::take(&mut self.spec.dims);
                self.spec = ProblemSpec { dims, ..ProblemSpec::new(kind, vec![], self.spec.seed) };
            }
            "dim" => {
                self.spec.dims = value
                    .split(',')
                    .map(|d| parse(key, d))
                    .collect::<Result<_>>()?;
            }
            "seed" => {
                self.spec.seed = parse(key, value)?;
                if self.spec.kind == ProblemKind::NormfreeStress {
                    self.spec.norm_scale = STRESS_NORMS[(self.spec.seed % 3) as usize];
                }
            }
            "lambda_reg" => self.spec.lambda_reg = parse(key, value)?,
            "norm_scale" => self.spec.norm_scale = parse(key, value)?,
            "condition" => self.spec.condition = parse(key, value)?,
            "identical_blocks" => self.spec.identical_blocks = parse(key, value)?,
            "gamma" => self.solver.gamma = Schedule::Constant(parse(key, value)?),
            "mu" => self.solver.mu = Schedule::Constant(parse(key, value)?),
            "lambda" => self.solver.lambda = Schedule::Constant(parse(key, value)?),
            "epsilon" => self.solver.epsilon = parse(key, value)?,
            "max_iters" => self.solver.max_iters = parse(key, value)?,
            "residual_tol" => self.solver.residual_tol = parse(key, value)?,
            "sigma_tol" => self.solver.sigma_tol = parse(key, value)?,
            "stopping" => {
                self.solver.stopping = match value {
                    "kt_residual" => StoppingRule::KtResidual,
                    "delta" => StoppingRule::Delta,
                    "cert_norm" => StoppingRule::CertNorm,
                    _ => return Err(Error::InvalidParameter(format!("unknown stopping rule '{value}'"))),
                }
            }
            _ => return Err(Error::InvalidParameter(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Applies pairs in order, but `kind` before `seed` before everything else.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let rank = |k: &str| match k {
            "kind" => 0,
            "seed" => 1,
            _ => 2,
        };
        let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
        sorted.sort_by_key(|(k, _)| rank(k));
        for (k, v) in sorted {
            self.set(k, v)?;
        }
        Ok(())
    }
}

/// Parses a `key=value` file: one pair per line, `#` starts a comment,
/// blank lines are ignored.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::InvalidParameter(format!("line {}: empty key", i + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_names() {
        for k in ProblemKind::ALL {
            assert_eq!(k.name().parse::<ProblemKind>().unwrap(), k);
        }
        assert!("simplex".parse::<ProblemKind>().is_err());
    }

    #[test]
    fn config_file_parsing() {
        let text = "# run\nkind = lasso\n\ndim=8,4   # cols, rows\nseed=3\n";
        let pairs = parse_config(text).unwrap();
        assert_eq!(pairs.len(), 3);
        let mut rs = RunSettings::default();
        rs.apply(&pairs).unwrap();
        assert_eq!(rs.spec.kind, ProblemKind::Lasso);
        assert_eq!(rs.spec.dims, vec![8, 4]);
        assert_eq!(rs.spec.seed, 3);
        assert!(parse_config("gamma").is_err());
        assert!(parse_config("=1").is_err());
    }

    #[test]
    fn later_pairs_override_earlier() {
        let mut rs = RunSettings::default();
        let pairs = vec![
            ("gamma".to_string(), "2".to_string()),
            ("gamma".to_string(), "0.5".to_string()),
        ];
        rs.apply(&pairs).unwrap();
        assert_eq!(rs.solver.gamma.at(0), 0.5);
    }

    #[test]
    fn bad_settings_rejected() {
        let mut rs = RunSettings::default();
        assert!(rs.set("gamma", "fast").is_err());
        assert!(rs.set("colour", "1").is_err());
        assert!(rs.set("stopping", "never").is_err());
        assert!(rs.set("dim", "4,x").is_err());
    }

    #[test]
    fn explicit_norm_scale_survives_seed() {
        let mut rs = RunSettings::default();
        let pairs = vec![
            ("norm_scale".to_string(), "7".to_string()),
            ("seed".to_string(), "1".to_string()),
            ("kind".to_string(), "normfree_stress".to_string()),
        ];
        rs.apply(&pairs).unwrap();
        assert_eq!(rs.spec.norm_scale, 7.0);
    }

    #[test]
    fn spec_validation() {
        let ok = ProblemSpec::new(ProblemKind::AffinePd, vec![3, 2], 0);
        ok.validate().unwrap();
        assert!(ProblemSpec { dims: vec![0], ..ok.clone() }.validate().is_err());
        assert!(ProblemSpec { dims: vec![1, 2, 3], ..ok.clone() }.validate().is_err());
        assert!(ProblemSpec { norm_scale: -1.0, ..ok.clone() }.validate().is_err());
        let mut lasso = ProblemSpec::new(ProblemKind::Lasso, vec![8, 4], 0);
        lasso.validate().unwrap();
        lasso.lambda_reg = 0.0;
        assert!(lasso.validate().is_err());
        lasso.dims = vec![3, 6];
        lasso.validate().unwrap();
    }
}
