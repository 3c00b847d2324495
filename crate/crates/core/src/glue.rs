//! Glueing constructions: max-glue against an exhaustion, bounded
//! extension to the closure, and the cutoff extension of a boundary datum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::DiscretePshCone;
use crate::psh::{cone_violation, GridFunction, ViolationReport};

/// Constants chosen by [`max_glue`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueParams {
    pub epsilon: f64,
    /// `max u` on `{ψ ≤ −ε}`.
    pub m: f64,
    pub k: f64,
}

/// `ũ = max(K(ψ+ε), u − M)` on `{ψ < −ε}` and `K(ψ+ε)` elsewhere, with
/// constants chosen so that `ũ = u − M` on `e` and `ũ` is constant on
/// boundary nodes.
pub fn max_glue(u: &GridFunction, psi: &GridFunction, e: &[u32]) -> Result<(GridFunction, GlueParams)> {
    u.require_same(psi.mask())?;
    if e.is_empty() {
        return Err(Error::EmptyE);
    }
    let mask = psi.mask();
    let max_e = e.iter().map(|&s| psi.at(s)).fold(f64::NEG_INFINITY, f64::max);
    if !(max_e < 0.0) || e.iter().any(|&s| !mask.is_interior_slot(s)) {
        return Err(Error::Precondition("E must consist of interior nodes where ψ < 0".into()));
    }
    let epsilon = -max_e / 2.0;
    let m = (0..mask.closure_len() as u32)
        .filter(|&s| psi.at(s) <= -epsilon)
        .map(|s| u.at(s))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_e = e.iter().map(|&s| u.at(s)).fold(f64::INFINITY, f64::min);
    if !m.is_finite() || !min_e.is_finite() {
        return Err(Error::UnboundedU);
    }
    let k = (m + 1.0 - min_e) / epsilon;
    let glued = psi.map("glued", |s, p| {
        let outer = k * (p + epsilon);
        if p < -epsilon {
            outer.max(u.at(s) - m)
        } else {
            outer
        }
    })?;
    Ok((glued, GlueParams { epsilon, m, k }))
}

/// Keeps `u` on interior nodes and sets boundary nodes to `bound`, then
/// checks the result against `cone`.
pub fn bounded_extension(u: &GridFunction, bound: f64, cone: &DiscretePshCone) -> Result<(GridFunction, ViolationReport)> {
    let mask = u.mask().clone();
    for &s in mask.interior_slots() {
        if u.at(s) > bound {
            return Err(Error::BoundViolated { node: mask.node(s), value: u.at(s), bound });
        }
    }
    let out = u.map("bounded_extension", |s, v| if mask.is_interior_slot(s) { v } else { bound })?;
    let report = cone_violation(&out, cone)?;
    Ok((out, report))
}

/// Inputs of [`cutoff_extension`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffParams {
    /// Collar width in units of the exhaustion.
    pub delta: f64,
    /// Shift of the strictly psh function.
    pub s: f64,
    pub max_doublings: usize,
    /// Accepted cone violation; `None` uses the default tolerance.
    pub tolerance: Option<f64>,
}

impl Default for CutoffParams {
    fn default() -> Self {
        Self { delta: 0.5, s: 1.0, max_doublings: 40, tolerance: None }
    }
}

/// Output of [`cutoff_extension`].
#[derive(Clone, Debug)]
pub struct CutoffResult {
    pub extension: GridFunction,
    pub c: f64,
    pub m: f64,
    pub doublings: usize,
    pub violation: ViolationReport,
    /// `max |F − f|` over boundary nodes.
    pub boundary_error: f64,
}

/// Quintic smoothstep on `[0, 1]`.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// `|z|² − max |z|²` over the closure nodes.
pub fn strictly_psh_default(mask: &std::sync::Arc<crate::lattice::DomainMask>) -> Result<GridFunction> {
    let sq = GridFunction::from_fn(mask, "phi_spp", |p| p.iter().map(|x| x * x).sum())?;
    let top = sq.max();
    sq.map("phi_spp", |_, v| v - top)
}

/// `F = C ψ̃ + θ(ψ) f` with `ψ̃ = max(φ − s, Mψ)` and θ rising from 0 at
/// `ψ = −δ` to 1 at `ψ = −δ/2`. `C` doubles from 1 until `F` lies in the
/// cone; `F = f` on boundary nodes.
pub fn cutoff_extension(
    f: &GridFunction,
    psi: &GridFunction,
    phi_spp: &GridFunction,
    cone: &DiscretePshCone,
    params: &CutoffParams,
) -> Result<CutoffResult> {
    f.require_same(cone.mask())?;
    psi.require_same(cone.mask())?;
    phi_spp.require_same(cone.mask())?;
    let CutoffParams { delta, s, max_doublings, tolerance } = *params;
    if !(delta > 0.0) || !(s > 0.0) {
        return Err(Error::BadParams("delta and s must be positive".into()));
    }
    if phi_spp.max() > 0.0 {
        return Err(Error::Precondition("φ must be nonpositive".into()));
    }
    let m = 4.0 * (s - phi_spp.min()) / delta + 1.0;
    let tilde = psi.map("psi_tilde", |i, p| (phi_spp.at(i) - s).max(m * p))?;
    let theta_f = psi.map("theta_f", |i, p| smoothstep((p + delta) / (delta / 2.0)) * f.at(i))?;
    let mask = cone.mask();
    let mut c = 1.0;
    let mut best = f64::INFINITY;
    for doublings in 0..=max_doublings {
        let ext = tilde.map("cutoff_extension", |i, t| c * t + theta_f.at(i))?;
        let violation = cone_violation(&ext, cone)?;
        let ok = match tolerance {
            Some(t) => violation.worst <= t,
            None => violation.is_psh(),
        };
        if ok {
            let boundary_error =
                mask.boundary_slots().iter().map(|&i| (ext.at(i) - f.at(i)).abs()).fold(0.0, f64::max);
            return Ok(CutoffResult { extension: ext, c, m, doublings, violation, boundary_error });
        }
        best = best.min(violation.worst);
        c *= 2.0;
    }
    Err(Error::NoFeasibleC { doublings: max_doublings, best_violation: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_domain, DomainParams};
    use crate::envelope::{relative_extremal, SolverOptions};
    use crate::lattice::{build_cone, classify_nodes, ConeConfig, Lattice, DEFAULT_NODE_CAP};

    fn disk(h: f64) -> DiscretePshCone {
        let dom = make_domain(&DomainParams::UnitDisk {}).unwrap();
        let lat = Lattice::covering(dom.bbox(), h, 1, 2, DEFAULT_NODE_CAP).unwrap();
        build_cone(&classify_nodes(&lat, &dom).unwrap(), &ConeConfig::default_for(1)).unwrap()
    }

    fn ball(cone: &DiscretePshCone, r: f64) -> Vec<u32> {
        let mask = cone.mask();
        mask.interior_slots().iter().copied().filter(|&s| mask.slot_point(s).iter().map(|x| x * x).sum::<f64>() <= r * r).collect()
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
    }

    #[test]
    fn max_glue_keeps_u_on_e_and_is_constant_on_boundary() {
        let cone = disk(0.05);
        let e = ball(&cone, 0.25);
        let psi = relative_extremal(&e, &cone, &SolverOptions::default()).unwrap();
        let u = GridFunction::from_fn(cone.mask(), "u", |p| p[0]).unwrap();
        let (g, params) = max_glue(&u, &psi, &e).unwrap();
        for &s in &e {
            assert_eq!(g.at(s), u.at(s) - params.m);
        }
        let b: Vec<f64> = cone.mask().boundary_slots().iter().map(|&s| g.at(s)).collect();
        assert!(b.iter().all(|&v| v == b[0]));
        assert!(cone_violation(&g, &cone).unwrap().worst <= 1e-6);
    }

    #[test]
    fn max_glue_rejects_empty_e() {
        let cone = disk(0.1);
        let u = GridFunction::constant(cone.mask(), 0.0, "u").unwrap();
        assert!(matches!(max_glue(&u, &u, &[]), Err(Error::EmptyE)));
    }

    #[test]
    fn bounded_extension_checks_the_bound() {
        let cone = disk(0.1);
        let u = GridFunction::from_fn(cone.mask(), "u", |p| p[0] * p[0] + p[1] * p[1] - 1.0).unwrap();
        let (ext, rep) = bounded_extension(&u, 0.0, &cone).unwrap();
        assert!(cone.mask().boundary_slots().iter().all(|&s| ext.at(s) == 0.0));
        assert!(rep.is_psh());
        assert!(matches!(bounded_extension(&u, -0.5, &cone), Err(Error::BoundViolated { .. })));
    }

    #[test]
    fn cutoff_extension_of_a_linear_datum() {
        let cone = disk(0.05);
        let e = ball(&cone, 0.25);
        let psi = relative_extremal(&e, &cone, &SolverOptions::default().with_tol(1e-13)).unwrap();
        let f = GridFunction::from_fn(cone.mask(), "f", |p| p[0]).unwrap();
        let phi = strictly_psh_default(cone.mask()).unwrap();
        let out = cutoff_extension(&f, &psi, &phi, &cone, &CutoffParams::default());
        let out = match out { Ok(o) => o, Err(e) => panic!("{e:?}") };
        assert_eq!(out.boundary_error, 0.0);
        assert!(out.violation.is_psh());
        assert!(out.doublings <= 40);
    }
}
