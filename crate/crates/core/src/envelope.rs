//! Harmonic extension, plurisubharmonic envelopes by monotone value
//! iteration, relative extremal functions and the Dirichlet construction.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DiscretePshCone, DomainMask};
use crate::psh::GridFunction;

/// Update order of the value iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Simultaneous update; bitwise reproducible under any thread count.
    #[default]
    Jacobi,
    /// In-place update in slot order. Faster, but the iterates depend on the order.
    GaussSeidel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stop when the sup-norm change of a sweep is at most `tol (1 + range)`.
    pub tol: f64,
    pub max_iter: usize,
    pub sweep: Sweep,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1_000_000, sweep: Sweep::Jacobi }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_sweep(mut self, sweep: Sweep) -> Self {
        self.sweep = sweep;
        self
    }
}

/// Output of [`psh_envelope`].
#[derive(Clone, Debug)]
pub struct EnvelopeResult {
    pub envelope: GridFunction,
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    /// Slots where the envelope meets the obstacle within `10 tol (1 + range)`.
    pub contact: Vec<u32>,
}

/// JSON summary of an [`EnvelopeResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSummary {
    pub role: String,
    pub iterations: usize,
    pub residual: f64,
    pub contact_size: usize,
    pub min: f64,
    pub max: f64,
}

impl EnvelopeResult {
    pub fn summary(&self) -> EnvelopeSummary {
        EnvelopeSummary {
            role: self.envelope.role().to_string(),
            iterations: self.iterations,
            residual: self.residual,
            contact_size: self.contact.len(),
            min: self.envelope.min(),
            max: self.envelope.max(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        self.envelope.write_csv(out)
    }
}

// Clamping by the current value changes nothing in exact arithmetic, where
// the iterates decrease anyway, and keeps them decreasing under rounding.
fn sweep_value(cone: &DiscretePshCone, s: u32, obstacle: f64, u: &[f64]) -> f64 {
    let mut v = obstacle.min(u[s as usize]);
    for r in cone.rows_at(s) {
        v = v.min(cone.row_bound(r, u));
    }
    v
}

/// One Jacobi sweep `min(φ, min_r bound_r(u))`.
pub fn envelope_sweep(cone: &DiscretePshCone, obstacle: &[f64], u: &[f64]) -> Vec<f64> {
    (0..u.len() as u32)
        .into_par_iter()
        .map(|s| sweep_value(cone, s, obstacle[s as usize], u))
        .collect()
}

/// Greatest grid function below `obstacle` in the cone, by the monotone
/// iteration `u⁰ = φ`, `u^{k+1}(z) = min(φ(z), min over rows at z of the
/// row's mean of u^k)`. Nodes without rows keep the obstacle value.
pub fn psh_envelope(obstacle: &GridFunction, cone: &DiscretePshCone, opts: &SolverOptions) -> Result<EnvelopeResult> {
    obstacle.require_same(cone.mask())?;
    let phi = obstacle.values();
    let stop = opts.tol * (1.0 + obstacle.range());
    let mut u = phi.to_vec();
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        change = match opts.sweep {
            Sweep::Jacobi => {
                let next = envelope_sweep(cone, phi, &u);
                let c = u.par_iter().zip(&next).map(|(a, b)| a - b).reduce(|| 0.0, f64::max);
                u = next;
                c
            }
            Sweep::GaussSeidel => {
                let mut c: f64 = 0.0;
                for s in 0..u.len() as u32 {
                    let v = sweep_value(cone, s, phi[s as usize], &u);
                    c = c.max(u[s as usize] - v);
                    u[s as usize] = v;
                }
                c
            }
        };
        if change <= stop {
            break;
        }
    }
    let mut envelope = GridFunction::new(cone.mask(), u, "envelope")?;
    if change > stop {
        envelope.set_role("envelope (unconverged)");
        return Err(Error::NonConvergence { iterations, residual: change, best: Some(Box::new(envelope)) });
    }
    let contact_tol = 10.0 * stop;
    let contact = envelope
        .values()
        .iter()
        .zip(phi)
        .enumerate()
        .filter(|(_, (e, p))| (*p - *e).abs() <= contact_tol)
        .map(|(s, _)| s as u32)
        .collect();
    Ok(EnvelopeResult { envelope, iterations, residual: change, contact })
}

/// Discrete Laplacian `2·(2n)·u(i) − Σ axis neighbours` at interior slots.
struct Laplacian<'a> {
    mask: &'a DomainMask,
    /// Per interior unknown: neighbour unknown ids, or `None` for boundary.
    nbrs: Vec<Vec<Option<u32>>>,
    unknown: Vec<u32>,
}

impl<'a> Laplacian<'a> {
    fn new(mask: &'a DomainMask) -> Self {
        let lat = mask.lattice();
        let mut unknown = vec![u32::MAX; mask.closure_len()];
        for (k, &s) in mask.interior_slots().iter().enumerate() {
            unknown[s as usize] = k as u32;
        }
        let nbrs = mask
            .interior_slots()
            .iter()
            .map(|&s| {
                let idx = mask.node(s);
                let mut out = Vec::with_capacity(2 * lat.axes());
                for a in 0..lat.axes() {
                    for st in [-1, 1] {
                        let j = lat.neighbor(idx, a, st).expect("interior nodes have all neighbours");
                        let t = mask.slot(j).expect("interior neighbours lie in the closure");
                        let k = unknown[t as usize];
                        out.push(if k == u32::MAX { None } else { Some(k) });
                    }
                }
                out
            })
            .collect();
        Self { mask, nbrs, unknown }
    }

    fn degree(&self) -> f64 {
        (2 * self.mask.lattice().axes()) as f64
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.degree();
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = d * x[i];
            for k in self.nbrs[i].iter().flatten() {
                acc -= x[*k as usize];
            }
            *o = acc;
        });
    }
}

/// Fixed chunking keeps the summation order independent of the thread count.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Discrete harmonic function with the boundary values of `f`: solves the
/// `2·(2n)+1`-point Laplace equation at interior nodes by conjugate
/// gradients. Interior values of `f` are ignored.
pub fn harmonic_extension(f: &GridFunction, opts: &SolverOptions) -> Result<GridFunction> {
    let mask = f.mask();
    let lap = Laplacian::new(mask);
    let bvals: Vec<f64> = mask.boundary_slots().iter().map(|&s| f.at(s)).collect();
    let (bmin, bmax) = bvals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if bvals.is_empty() { 0.0 } else { bmax - bmin };
    let scale = bvals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let target = 1e-10 * range + 1e-14 * (1.0 + scale);

    let n = mask.interior_slots().len();
    let mut rhs = vec![0.0; n];
    for (i, &s) in mask.interior_slots().iter().enumerate() {
        let lat = mask.lattice();
        let idx = mask.node(s);
        for a in 0..lat.axes() {
            for st in [-1, 1] {
                let t = mask.slot(lat.neighbor(idx, a, st).unwrap()).unwrap();
                if lap.unknown[t as usize] == u32::MAX {
                    rhs[i] += f.at(t);
                }
            }
        }
    }
    let mean = if bvals.is_empty() { 0.0 } else { bvals.iter().sum::<f64>() / bvals.len() as f64 };
    let mut x = vec![mean; n];
    let mut ax = vec![0.0; n];
    lap.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut res = max_abs(&r);
    while res > target {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { iterations, residual: res, best: None });
        }
        iterations += 1;
        lap.apply(&p, &mut ax);
        let alpha = rr / dot(&p, &ax);
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ax).for_each(|(ri, ai)| *ri -= alpha * ai);
        // Recompute the true residual now and then to stop drift.
        if iterations % 200 == 0 {
            lap.apply(&x, &mut ax);
            r.iter_mut().zip(rhs.iter().zip(&ax)).for_each(|(ri, (b, a))| *ri = b - a);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.par_iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        res = max_abs(&r);
    }
    let mut values = f.values().to_vec();
    for (i, &s) in mask.interior_slots().iter().enumerate() {
        values[s as usize] = x[i];
    }
    GridFunction::new(mask, values, "harmonic")
}

/// Relative extremal function of the node set `k`: the envelope of the
/// obstacle that is −1 on `k` and 0 elsewhere on the closure.
pub fn relative_extremal(k: &[u32], cone: &DiscretePshCone, opts: &SolverOptions) -> Result<GridFunction> {
    let mask = cone.mask();
    if k.is_empty() {
        return Err(Error::Precondition("the compact set K has no nodes".into()));
    }
    let mut obstacle = vec![0.0; mask.closure_len()];
    for &s in k {
        if (s as usize) >= obstacle.len() || !mask.is_interior_slot(s) {
            return Err(Error::Precondition(format!("slot {s} of K is not an interior node")));
        }
        obstacle[s as usize] = -1.0;
    }
    let obstacle = GridFunction::new(mask, obstacle, "obstacle")?;
    let mut out = psh_envelope(&obstacle, cone, opts)?.envelope;
    out.set_role("relative_extremal");
    Ok(out)
}

/// Output of [`dirichlet_psh_extension`].
#[derive(Clone, Debug)]
pub struct DirichletResult {
    pub harmonic: GridFunction,
    pub result: EnvelopeResult,
    /// `max |Φ − f|` over boundary nodes.
    pub boundary_mismatch: f64,
    /// `max |Φ(i) − Φ(b)|` over axis-adjacent interior/boundary pairs: a
    /// one-cell modulus of continuity at the boundary.
    pub boundary_oscillation: f64,
}

/// JSON summary of a [`DirichletResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletSummary {
    pub envelope: EnvelopeSummary,
    pub boundary_mismatch: f64,
    pub boundary_oscillation: f64,
    pub max_gap_to_harmonic: f64,
}

impl DirichletResult {
    pub fn summary(&self) -> DirichletSummary {
        let gap = self
            .harmonic
            .values()
            .iter()
            .zip(self.result.envelope.values())
            .fold(0.0f64, |a, (h, p)| a.max(h - p));
        DirichletSummary {
            envelope: self.result.summary(),
            boundary_mismatch: self.boundary_mismatch,
            boundary_oscillation: self.boundary_oscillation,
            max_gap_to_harmonic: gap,
        }
    }
}

/// `Φ = envelope(H)` with `H` the harmonic extension of the boundary values
/// of `f`.
pub fn dirichlet_psh_extension(f: &GridFunction, cone: &DiscretePshCone, opts: &SolverOptions) -> Result<DirichletResult> {
    f.require_same(cone.mask())?;
    let harmonic = harmonic_extension(f, opts)?;
    let mut result = psh_envelope(&harmonic, cone, opts)?;
    result.envelope.set_role("dirichlet");
    let mask: &Arc<DomainMask> = cone.mask();
    let phi = &result.envelope;
    let boundary_mismatch = mask
        .boundary_slots()
        .iter()
        .fold(0.0f64, |a, &s| a.max((phi.at(s) - f.at(s)).abs()));
    let lat = mask.lattice();
    let mut osc: f64 = 0.0;
    for &s in mask.interior_slots() {
        let idx = mask.node(s);
        for a in 0..lat.axes() {
            for st in [-1, 1] {
                if let Some(t) = lat.neighbor(idx, a, st).and_then(|j| mask.slot(j)) {
                    if !mask.is_interior_slot(t) {
                        osc = osc.max((phi.at(s) - phi.at(t)).abs());
                    }
                }
            }
        }
    }
    Ok(DirichletResult { harmonic, result, boundary_mismatch, boundary_oscillation: osc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_domain, DomainParams};
    use crate::lattice::{build_cone, classify_nodes, ConeConfig, Lattice, DEFAULT_NODE_CAP};
    use crate::psh::cone_violation;

    fn disk(h: f64) -> DiscretePshCone {
        let lat = Lattice::covering(&[(-1.0, 1.0); 2], h, 1, 2, DEFAULT_NODE_CAP).unwrap();
        let mask = classify_nodes(&lat, &make_domain(&DomainParams::UnitDisk {}).unwrap()).unwrap();
        build_cone(&mask, &ConeConfig::default_for(1)).unwrap()
    }

    #[test]
    fn harmonic_extension_of_affine_and_constant_data() {
        let cone = disk(0.05);
        let mask = cone.mask();
        let re = GridFunction::from_fn(mask, "f", |p| p[0]).unwrap();
        let zeroed = re.map("f", |s, v| if mask.is_interior_slot(s) { 0.0 } else { v }).unwrap();
        let h = harmonic_extension(&zeroed, &SolverOptions::default()).unwrap();
        for (a, b) in h.values().iter().zip(re.values()) {
            assert!((a - b).abs() < 1e-8);
        }
        let one = GridFunction::constant(mask, 1.0, "f").unwrap();
        let h = harmonic_extension(&one, &SolverOptions::default()).unwrap();
        assert!(h.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn harmonic_extension_obeys_the_maximum_principle() {
        let cone = disk(0.1);
        let mask = cone.mask();
        let f = GridFunction::from_fn(mask, "f", |p| (3.0 * p[0]).sin() + p[1].powi(3)).unwrap();
        let h = harmonic_extension(&f, &SolverOptions::default()).unwrap();
        let (lo, hi) = mask.boundary_slots().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| {
            (a.min(f.at(s)), b.max(f.at(s)))
        });
        assert!(h.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn envelope_of_members_is_identity() {
        let cone = disk(0.05);
        let mask = cone.mask();
        let c = GridFunction::constant(mask, 2.0, "phi").unwrap();
        let res = psh_envelope(&c, &cone, &SolverOptions::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.envelope.values().iter().all(|&v| v == 2.0));
        let re = GridFunction::from_fn(mask, "phi", |p| p[0]).unwrap();
        let res = psh_envelope(&re, &cone, &SolverOptions::default()).unwrap();
        for (a, b) in res.envelope.values().iter().zip(re.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_iteration_is_monotone_and_a_fixed_point() {
        let cone = disk(0.1);
        let mask = cone.mask();
        let phi = GridFunction::from_fn(mask, "phi", |p| -(p[0] * p[0] + p[1] * p[1]) + 0.3 * p[1]).unwrap();
        let mut u = phi.values().to_vec();
        for _ in 0..50 {
            let next = envelope_sweep(&cone, phi.values(), &u);
            assert!(next.iter().zip(&u).all(|(a, b)| a <= b));
            u = next;
        }
        let opts = SolverOptions::default();
        let res = psh_envelope(&phi, &cone, &opts).unwrap();
        let again = envelope_sweep(&cone, phi.values(), res.envelope.values());
        let stop = opts.tol * (1.0 + phi.range());
        assert!(again.iter().zip(res.envelope.values()).all(|(a, b)| (a - b).abs() <= stop));
        let viol = cone_violation(&res.envelope, &cone).unwrap();
        assert!(viol.worst <= 1e-6, "{}", viol.worst);
        assert!(res.envelope.values().iter().zip(phi.values()).all(|(e, p)| e <= p));
    }

    #[test]
    fn gauss_seidel_agrees_with_jacobi() {
        let cone = disk(0.1);
        let phi = GridFunction::from_fn(cone.mask(), "phi", |p| -(p[0] * p[0] + p[1] * p[1])).unwrap();
        let j = psh_envelope(&phi, &cone, &SolverOptions::default().with_tol(1e-11)).unwrap();
        let g = psh_envelope(&phi, &cone, &SolverOptions::default().with_tol(1e-11).with_sweep(Sweep::GaussSeidel)).unwrap();
        assert!(g.iterations < j.iterations);
        for (a, b) in j.envelope.values().iter().zip(g.envelope.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn non_convergence_returns_the_best_iterate() {
        let cone = disk(0.1);
        let phi = GridFunction::from_fn(cone.mask(), "phi", |p| -(p[0] * p[0] + p[1] * p[1])).unwrap();
        let opts = SolverOptions { max_iter: 3, ..SolverOptions::default() };
        match psh_envelope(&phi, &cone, &opts) {
            Err(Error::NonConvergence { iterations, best: Some(best), .. }) => {
                assert_eq!(iterations, 3);
                assert!(best.values().iter().zip(phi.values()).all(|(b, p)| b <= p));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relative_extremal_contract() {
        let cone = disk(0.1);
        let mask = cone.mask();
        let u = relative_extremal(mask.interior_slots(), &cone, &SolverOptions::default()).unwrap();
        for s in 0..mask.closure_len() as u32 {
            let want = if mask.is_interior_slot(s) { -1.0 } else { 0.0 };
            assert_eq!(u.at(s), want);
        }
        assert!(relative_extremal(&[], &cone, &SolverOptions::default()).is_err());
        let b = mask.boundary_slots()[0];
        assert!(relative_extremal(&[b], &cone, &SolverOptions::default()).is_err());
    }

    #[test]
    fn dirichlet_with_trivial_data() {
        let cone = disk(0.05);
        let mask = cone.mask();
        let zero = GridFunction::constant(mask, 0.0, "f").unwrap();
        let d = dirichlet_psh_extension(&zero, &cone, &SolverOptions::default()).unwrap();
        assert!(d.result.envelope.values().iter().all(|&v| v == 0.0));
        let re = GridFunction::from_fn(mask, "f", |p| p[0]).unwrap();
        let d = dirichlet_psh_extension(&re, &cone, &SolverOptions::default()).unwrap();
        assert!(d.boundary_mismatch <= 1e-8);
        for (a, b) in d.result.envelope.values().iter().zip(re.values()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(d.summary().max_gap_to_harmonic >= 0.0);
    }
}
