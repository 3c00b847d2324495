//! Discrete pluripotential theory on uniform grids.
//!
//! Plurisubharmonic functions on the closure of a bounded domain in C or C²
//! are replaced by a polyhedral cone of grid functions cut out by complex
//! disk sub-mean-value inequalities. On top of that cone the crate computes
//! upper envelopes, their dual Jensen measures, Dirichlet extensions,
//! hyperconvexity diagnostics and the glueing constructions used to build
//! exhaustion functions.

pub mod domains;
pub mod envelope;
pub mod error;
pub mod glue;
pub mod hyperconvex;
pub mod jensen;
pub mod lattice;
pub mod psh;

pub use domains::{combine, make_domain, make_worm_profile, Claims, Combine, DomainParams, DomainSpec, WormProfile};
pub use envelope::{
    dirichlet_psh_extension, harmonic_extension, psh_envelope, relative_extremal, DirichletResult, EnvelopeResult,
    SolverOptions, Sweep,
};
pub use error::{Error, Result};
pub use glue::{bounded_extension, cutoff_extension, max_glue, CutoffParams, CutoffResult, GlueParams};
pub use hyperconvex::{
    boundary_support_test, build_exhaustion, classify_domain, disk_probe, fatness_test, AnalyticDiskProbe,
    ClassificationVerdict, ClassifyOptions, Verdict,
};
pub use jensen::{
    check_jensen_inequality, edwards_gap, jensen_lp, support_profile, DiscreteMeasure, DualityCertificate,
    LpMethod, LpOptions,
};
pub use lattice::{
    build_cone, build_lattice, classify_nodes, CenterScope, ConeConfig, DiscretePshCone, DiskStencil, DomainMask,
    ExitPolicy, Lattice, NodeClass, SparseWeights,
};
pub use psh::{
    cone_violation, levi_profile, monotone_limit_check, tangential_levi_profile, usc_regularize, GridFunction,
    LeviProfile, MonotoneReport, ViolationReport,
};
