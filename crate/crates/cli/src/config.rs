//! Experiment configuration files.

use std::path::{Path, PathBuf};

use pluripot_core::hyperconvex::AnalyticDiskProbe;
use pluripot_core::lattice::DEFAULT_NODE_CAP;
use pluripot_core::{CenterScope, ConeConfig, CutoffParams, DomainParams, ExitPolicy, LpOptions, SolverOptions};
use serde::{Deserialize, Serialize};

/// Value of the `schema` key understood by this build.
pub const SCHEMA: &str = "pluripot/1";

/// Environment variable overriding the lattice node budget.
pub const NODE_CAP_ENV: &str = "PLURIPOT_NODE_CAP";

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

/// Named grid functions usable as obstacles and boundary data. `z` is the
/// first complex coordinate and `|z|²` sums over all coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expr {
    Constant { value: f64 },
    ReZ {},
    ReZ2 {},
    Abs2 {},
    NegAbs2 {},
    NegSqrtOneMinusAbs2 {},
    NegAbsSinTheta {},
}

impl Expr {
    pub fn eval(&self, p: &[f64]) -> f64 {
        let abs2: f64 = p.iter().map(|x| x * x).sum();
        match self {
            Expr::Constant { value } => *value,
            Expr::ReZ {} => p[0],
            Expr::ReZ2 {} => p[0] * p[0] - p[1] * p[1],
            Expr::Abs2 {} => abs2,
            Expr::NegAbs2 {} => -abs2,
            Expr::NegSqrtOneMinusAbs2 {} => -(1.0 - abs2).max(0.0).sqrt(),
            Expr::NegAbsSinTheta {} => {
                let r = p[0].hypot(p[1]);
                if r == 0.0 {
                    0.0
                } else {
                    -(p[1] / r).abs()
                }
            }
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        match self {
            Expr::Constant { value } if !value.is_finite() => Err(invalid("constant must be finite")),
            _ => Ok(()),
        }
    }
}

/// Expected classification outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    PHyperconvex,
    NotPHyperconvex,
}

fn yes() -> bool {
    true
}
fn hundred() -> usize {
    100
}
fn thirty_two() -> usize {
    32
}
fn cone_tolerance() -> f64 {
    1e-6
}
fn tight() -> f64 {
    1e-13
}

/// One experiment of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Upper envelope of an obstacle, with duality gaps at the probes.
    Envelope {
        obstacle: Expr,
        #[serde(default)]
        probes: Vec<Vec<f64>>,
        #[serde(default = "yes")]
        duality: bool,
    },
    /// Relative extremal function of the ball `|p − k_center| <= k_radius`.
    RelativeExtremal {
        #[serde(default)]
        k_center: Option<Vec<f64>>,
        k_radius: f64,
        #[serde(default)]
        probes: Vec<Vec<f64>>,
    },
    /// Psh extension of boundary data.
    Dirichlet {
        boundary_data: Expr,
        #[serde(default)]
        probes: Vec<Vec<f64>>,
    },
    /// Optimal Jensen measures at the probes.
    Jensen {
        obstacle: Expr,
        probes: Vec<Vec<f64>>,
        #[serde(default)]
        lp: LpOptions,
    },
    /// Analytic disk probes; the built-in family needs the seed.
    Probe {
        #[serde(default = "hundred")]
        random_probes: usize,
        #[serde(default = "thirty_two")]
        probe_points: usize,
        #[serde(default)]
        probes: Vec<AnalyticDiskProbe>,
    },
    /// Aggregate hyperconvexity classification.
    Classify {
        #[serde(default = "hundred")]
        random_probes: usize,
        #[serde(default = "thirty_two")]
        probe_points: usize,
        #[serde(default = "thirty_two")]
        support_samples: usize,
        #[serde(default = "cone_tolerance")]
        cone_tolerance: f64,
        #[serde(default)]
        expected: Option<Expected>,
    },
    /// Max-glue against the built exhaustion plus the cutoff extension.
    Glue {
        u: Expr,
        e_radius: f64,
        #[serde(default)]
        cutoff: CutoffParams,
        /// Solver tolerance for the exhaustion used by the glue.
        #[serde(default = "tight")]
        exhaustion_tol: f64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Envelope { .. } => "envelope",
            Experiment::RelativeExtremal { .. } => "relative_extremal",
            Experiment::Dirichlet { .. } => "dirichlet",
            Experiment::Jensen { .. } => "jensen",
            Experiment::Probe { .. } => "probe",
            Experiment::Classify { .. } => "classify",
            Experiment::Glue { .. } => "glue",
        }
    }

    pub fn randomized(&self) -> bool {
        match self {
            Experiment::Probe { random_probes, .. } | Experiment::Classify { random_probes, .. } => *random_probes > 0,
            _ => false,
        }
    }
}

/// Lattice section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub h: f64,
    /// Explicit box, one `[lo, hi]` per real axis; defaults to the domain's
    /// box padded by `margin` cells.
    #[serde(default)]
    pub bbox: Option<Vec<[f64; 2]>>,
    #[serde(default = "two")]
    pub margin: usize,
    #[serde(default)]
    pub node_cap: Option<usize>,
}

fn two() -> usize {
    2
}

/// Overrides applied to the default stencil family of the domain's dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeOverrides {
    pub radii: Option<Vec<f64>>,
    pub order: Option<usize>,
    pub directions: Option<Vec<Vec<[f64; 2]>>>,
    pub scope: Option<CenterScope>,
    pub exit: Option<ExitPolicy>,
}

impl ConeOverrides {
    pub fn resolve(&self, dim: usize) -> ConeConfig {
        let mut cfg = ConeConfig::default_for(dim);
        if let Some(r) = &self.radii {
            cfg.radii = r.clone();
        }
        if let Some(m) = self.order {
            cfg.order = m;
        }
        if let Some(d) = &self.directions {
            cfg.directions = d.clone();
        }
        if let Some(s) = self.scope {
            cfg.scope = s;
        }
        if let Some(e) = self.exit {
            cfg.exit = e;
        }
        cfg
    }
}

/// A whole configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub domain: DomainParams,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub cone: ConeOverrides,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub experiments: Vec<Experiment>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema != SCHEMA {
            return Err(invalid(format!("schema must be \"{SCHEMA}\", got \"{}\"", self.schema)));
        }
        check_h(self.lattice.h)?;
        if let Some(b) = &self.lattice.bbox {
            if b.iter().any(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(invalid("bbox entries must be finite with lo < hi"));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(invalid("solver tol and max_iter must be positive"));
        }
        if self.experiments.is_empty() {
            return Err(invalid("no experiments"));
        }
        for (i, e) in self.experiments.iter().enumerate() {
            if e.randomized() && self.seed.is_none() {
                return Err(invalid(format!("experiment {i} ({}) is randomized and needs a seed", e.kind())));
            }
            match e {
                Experiment::Envelope { obstacle, .. } | Experiment::Jensen { obstacle, .. } => obstacle.validate()?,
                Experiment::Dirichlet { boundary_data, .. } => boundary_data.validate()?,
                Experiment::RelativeExtremal { k_radius, .. } if !(*k_radius > 0.0) => {
                    return Err(invalid("k_radius must be positive"))
                }
                Experiment::Glue { u, e_radius, exhaustion_tol, .. } => {
                    u.validate()?;
                    if !(*e_radius > 0.0) || !(*exhaustion_tol > 0.0) {
                        return Err(invalid("e_radius and exhaustion_tol must be positive"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Node budget: the environment variable, then the config, then the default.
    pub fn node_cap(&self) -> anyhow::Result<usize> {
        match std::env::var(NODE_CAP_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| invalid(format!("{NODE_CAP_ENV}={v:?} is not a node count"))),
            Err(_) => Ok(self.lattice.node_cap.unwrap_or(DEFAULT_NODE_CAP)),
        }
    }
}

pub fn check_h(h: f64) -> anyhow::Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("h must be positive, got {h}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema":"pluripot/1","domain":{"name":"unit_disk"},"lattice":{"h":0.1},
        "experiments":[{"kind":"envelope","obstacle":{"name":"neg_abs2"}}]}"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.lattice.margin, 2);
        assert!(matches!(cfg.experiments[0], Experiment::Envelope { duality: true, .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            MINIMAL.replace("\"h\":0.1", "\"h\":0.1,\"hh\":1"),
            MINIMAL.replace("\"unit_disk\"", "\"unit_disk\",\"r\":1"),
            MINIMAL.replace("\"neg_abs2\"}", "\"neg_abs2\"},\"extra\":1"),
            MINIMAL.replace("\"experiments\"", "\"colour\":1,\"experiments\""),
        ] {
            let err = ExperimentConfig::parse(&bad).unwrap_err();
            assert!(err.downcast_ref::<ValidationError>().is_some(), "{bad}");
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        for bad in [
            MINIMAL.replace("0.1", "-0.1"),
            MINIMAL.replace("pluripot/1", "pluripot/0"),
            MINIMAL.replace(r#"{"kind":"envelope","obstacle":{"name":"neg_abs2"}}"#, r#"{"kind":"classify"}"#),
        ] {
            assert!(ExperimentConfig::parse(&bad).is_err(), "{bad}");
        }
        let seeded = MINIMAL
            .replace(r#"{"kind":"envelope","obstacle":{"name":"neg_abs2"}}"#, r#"{"kind":"classify"}"#)
            .replace("\"lattice\"", "\"seed\":3,\"lattice\"");
        assert!(ExperimentConfig::parse(&seeded).is_ok());
    }

    #[test]
    fn expression_library() {
        let p = [0.6, 0.8];
        assert_eq!(Expr::ReZ {}.eval(&p), 0.6);
        assert!((Expr::NegAbs2 {}.eval(&p) + 1.0).abs() < 1e-15);
        assert!((Expr::NegAbsSinTheta {}.eval(&p) + 0.8).abs() < 1e-15);
        assert_eq!(Expr::NegSqrtOneMinusAbs2 {}.eval(&[2.0, 0.0]), 0.0);
        assert_eq!(Expr::NegAbsSinTheta {}.eval(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn cone_overrides_apply() {
        let o = ConeOverrides { radii: Some(vec![1.0, 2.0, 4.0]), exit: Some(ExitPolicy::Ladder), ..Default::default() };
        let c = o.resolve(1);
        assert_eq!(c.radii, vec![1.0, 2.0, 4.0]);
        assert_eq!(c.exit, ExitPolicy::Ladder);
        assert_eq!(c.order, 16);
    }
}
