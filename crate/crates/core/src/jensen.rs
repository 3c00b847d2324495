//! Discrete Jensen measures as the linear-programming dual of the envelope.
//!
//! At a closure slot `z` the dual of `max u(z) s.t. A u <= 0, u <= φ` is
//!
//! ```text
//! min Σ μ_i φ_i   s.t.  μ = δ_z − Aᵀλ >= 0,  λ >= 0.
//! ```
//!
//! Substituting μ gives `φ(z) − max { (Aφ)ᵀλ : Aᵀλ <= δ_z, λ >= 0 }`, whose
//! slack basis is feasible, so the simplex method needs no first phase and
//! the slacks of the optimal basis are the measure itself.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envelope::{psh_envelope, SolverOptions};
use crate::error::{Error, Result};
use crate::lattice::{DiscretePshCone, DiskStencil, DomainMask};
use crate::psh::GridFunction;

/// Weights below this are dropped from LP measures before renormalising.
const PRUNE: f64 = 1e-12;
/// Allowed mismatch between a measure and `δ_z − Aᵀλ`.
const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Nonnegative weights on closure slots with unit mass.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    mask: Arc<DomainMask>,
    /// Sorted by slot, hence by lattice index.
    weights: Vec<(u32, f64)>,
}

/// One serialised atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub node: usize,
    pub coords: Vec<f64>,
    pub weight: f64,
}

impl DiscreteMeasure {
    pub fn new(mask: &Arc<DomainMask>, mut weights: Vec<(u32, f64)>) -> Result<Self> {
        weights.sort_by_key(|w| w.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(weights.len());
        for (s, w) in weights {
            if s as usize >= mask.closure_len() {
                return Err(Error::MaskMismatch);
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Precondition(format!("negative or non-finite weight {w} at slot {s}")));
            }
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += w,
                _ => merged.push((s, w)),
            }
        }
        let total: f64 = merged.iter().map(|w| w.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!("measure has mass {total}, expected 1")));
        }
        Ok(Self { mask: Arc::clone(mask), weights: merged })
    }

    /// Dirac mass at a closure slot.
    pub fn point_mass(mask: &Arc<DomainMask>, slot: u32) -> Result<Self> {
        Self::new(mask, vec![(slot, 1.0)])
    }

    /// Push-forward of normalised arc length on a disk stencil.
    pub fn from_stencil(mask: &Arc<DomainMask>, stencil: &DiskStencil) -> Result<Self> {
        let weights = stencil
            .averaged()
            .0
            .into_iter()
            .map(|(idx, w)| mask.slot(idx).map(|s| (s, w)).ok_or(Error::MaskMismatch))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mask, weights)
    }

    /// `δ_z − Aᵀλ`, which must be a nonnegative unit-mass vector up to
    /// rounding; tiny negative entries are clipped.
    pub fn from_multipliers(z: u32, lambda: &[(usize, f64)], cone: &DiscretePshCone) -> Result<Self> {
        let mask = cone.mask();
        let mut mu = cone.apply_transpose(lambda);
        for v in mu.iter_mut() {
            *v = -*v;
        }
        mu[z as usize] += 1.0;
        let mut weights = Vec::new();
        for (s, &v) in mu.iter().enumerate() {
            if v < -RECONSTRUCTION_TOL {
                return Err(Error::Precondition(format!("multipliers give negative mass {v} at slot {s}")));
            }
            if v > 0.0 {
                weights.push((s as u32, v));
            }
        }
        Self::new(mask, weights)
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn weights(&self) -> &[(u32, f64)] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().map(|w| w.1).sum()
    }

    pub fn weight_at(&self, slot: u32) -> f64 {
        self.weights.binary_search_by_key(&slot, |w| w.0).map_or(0.0, |k| self.weights[k].1)
    }

    /// `∫ u dμ`.
    pub fn integrate(&self, u: &GridFunction) -> Result<f64> {
        u.require_same(&self.mask)?;
        Ok(self.weights.iter().map(|&(s, w)| w * u.at(s)).sum())
    }

    /// Convex combination `(1 − t) self + t other`.
    pub fn mix(&self, other: &DiscreteMeasure, t: f64) -> Result<Self> {
        if !self.mask.same_as(&other.mask) {
            return Err(Error::MaskMismatch);
        }
        let w = self
            .weights
            .iter()
            .map(|&(s, w)| (s, (1.0 - t) * w))
            .chain(other.weights.iter().map(|&(s, w)| (s, t * w)))
            .collect();
        Self::new(&self.mask, w)
    }

    pub fn atoms(&self) -> Vec<Atom> {
        self.weights
            .iter()
            .map(|&(s, w)| Atom { node: self.mask.node(s), coords: self.mask.slot_point(s), weight: w })
            .collect()
    }

    fn from_lp(mask: &Arc<DomainMask>, raw: Vec<(u32, f64)>) -> Result<Self> {
        let kept: Vec<(u32, f64)> = raw.into_iter().filter(|w| w.1 >= PRUNE).collect();
        let total: f64 = kept.iter().map(|w| w.1).sum();
        if !(total > 0.5) {
            return Err(Error::LpInfeasible(format!("solver returned a measure of mass {total}")));
        }
        Self::new(mask, kept.into_iter().map(|(s, w)| (s, w / total)).collect())
    }
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        self.atoms().serialize(ser)
    }
}

/// Which algorithm produced a measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpMethod {
    /// Dense simplex over every row reachable from `z`.
    Dense,
    /// Dense simplex over rows centred within a Chebyshev ball around `z`.
    /// The feasible set shrinks, so the value is an upper bound and the
    /// measure is still a genuine discrete Jensen measure.
    Local,
    /// Stopped random walk along tight rows of the computed envelope.
    Walk,
}

/// Method selection for [`jensen_lp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpOptions {
    /// `None` picks `Dense` when at most `dense_limit` rows are reachable
    /// from `z` and `Walk` otherwise.
    pub method: Option<LpMethod>,
    pub dense_limit: usize,
    /// Radius in cells of the row-centre ball for `Local`.
    pub local_depth: usize,
    pub max_pivots: usize,
    /// Envelope solver settings used by `Walk` and by [`edwards_gap`].
    pub solver: SolverOptions,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            method: None,
            dense_limit: 5000,
            local_depth: 4,
            max_pivots: 1_000_000,
            solver: SolverOptions::default().with_tol(1e-12),
        }
    }
}

impl LpOptions {
    pub fn with_method(mut self, m: LpMethod) -> Self {
        self.method = Some(m);
        self
    }
}

/// Optimal dual solution at one node.
#[derive(Clone, Debug, Serialize)]
pub struct JensenSolution {
    pub z: usize,
    /// `Σ μ_i φ_i`.
    pub value: f64,
    pub measure: DiscreteMeasure,
    /// Nonzero multipliers `(row id, λ)`.
    pub lambda: Vec<(usize, f64)>,
    pub method: LpMethod,
    pub pivots: usize,
    /// `max |μ − (δ_z − Aᵀλ)|` before pruning.
    pub reconstruction_error: f64,
}

/// Rows whose centre can receive mass starting from `z`, optionally limited
/// to centres within `depth` cells of `z`.
pub(crate) fn reachable_rows(z: u32, cone: &DiscretePshCone, depth: Option<usize>) -> Vec<usize> {
    let mask = cone.mask();
    let lat = mask.lattice();
    let zi = lat.multi_index(mask.node(z));
    let near = |s: u32| match depth {
        None => true,
        Some(d) => {
            let mi = lat.multi_index(mask.node(s));
            (0..lat.axes()).all(|a| (mi[a] - zi[a]).unsigned_abs() as usize <= d)
        }
    };
    let mut seen = vec![false; mask.closure_len()];
    let mut queue = VecDeque::from([z]);
    seen[z as usize] = true;
    let mut rows = Vec::new();
    while let Some(s) = queue.pop_front() {
        if !near(s) {
            continue;
        }
        for r in cone.rows_at(s) {
            rows.push(r);
            for (t, _) in cone.entries(r) {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    rows.sort_unstable();
    rows
}

/// Rows of the local ball, shrinking the depth until at most `dense_limit` remain.
fn local_rows(z: u32, cone: &DiscretePshCone, opts: &LpOptions) -> Vec<usize> {
    let mut depth = opts.local_depth;
    loop {
        let rows = reachable_rows(z, cone, Some(depth));
        if rows.len() <= opts.dense_limit || depth == 0 {
            return rows;
        }
        depth -= 1;
    }
}

struct SimplexOutcome {
    x: Vec<f64>,
    slack: Vec<f64>,
    pivots: usize,
}

/// Maximises `cᵀx` subject to `M x <= b`, `x >= 0`, with `b >= 0`, by the
/// tableau simplex method (Dantzig's rule with a Bland fallback). `m_cols[j]` lists the nonzero
/// `(row, value)` entries of column j.
fn simplex_bland(m_rows: usize, m_cols: &[Vec<(usize, f64)>], b: &[f64], c: &[f64], max_pivots: usize) -> Result<SimplexOutcome> {
    let n = m_cols.len();
    let width = n + m_rows + 1;
    let rhs = width - 1;
    let mut t = vec![0.0; m_rows * width];
    for (j, col) in m_cols.iter().enumerate() {
        for &(i, v) in col {
            t[i * width + j] += v;
        }
    }
    // Pivoting runs on a perturbed right-hand side so that no basis is
    // degenerate; `exact` carries B⁻¹b for the unperturbed problem.
    let mut exact = b.to_vec();
    for i in 0..m_rows {
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = b[i] + 1e-7 * (1.0 + ((i * 7919) % m_rows.max(1)) as f64 / m_rows as f64);
    }
    // Reduced costs of the maximisation; entering candidates are positive.
    let mut d = vec![0.0; width];
    d[..n].copy_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m_rows).collect();
    let scale = c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let eps_d = 1e-11 * scale;
    let eps_p = 1e-11;
    let mut pivots = 0;
    let mut degenerate_run = 0usize;
    let mut bland = false;
    loop {
        // Dantzig's rule until a long degenerate run, then Bland's rule for good.
        bland |= degenerate_run >= 50;
        let enter = if !bland {
            (0..width - 1).filter(|&j| d[j] > eps_d).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)))
        } else {
            (0..width - 1).find(|&j| d[j] > eps_d)
        };
        let Some(enter) = enter else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m_rows {
            let a = t[i * width + enter];
            if a > eps_p {
                let ratio = t[i * width + rhs].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, best)) => {
                        if ratio < best - 1e-13 || (ratio <= best + 1e-13 && basis[i] < basis[k]) {
                            Some((i, ratio.min(best)))
                        } else {
                            Some((k, best))
                        }
                    }
                };
            }
        }
        let Some((p, _)) = leave else {
            return Err(Error::LpUnbounded("no blocking row for an improving column".into()));
        };
        pivots += 1;
        if t[p * width + rhs] <= eps_p {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        if pivots > max_pivots {
            return Err(Error::LpInfeasible(format!("pivot limit {max_pivots} reached")));
        }
        let piv = t[p * width + enter];
        for v in &mut t[p * width..(p + 1) * width] {
            *v /= piv;
        }
        exact[p] /= piv;
        let prow: Vec<f64> = t[p * width..(p + 1) * width].to_vec();
        let nz: Vec<usize> = (0..width).filter(|&k| prow[k] != 0.0).collect();
        for i in 0..m_rows {
            if i == p {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                exact[i] -= f * exact[p];
                let row = &mut t[i * width..(i + 1) * width];
                for &k in &nz {
                    row[k] -= f * prow[k];
                }
                row[enter] = 0.0;
                if row[rhs] < 0.0 && row[rhs] > -1e-9 {
                    row[rhs] = 0.0;
                }
            }
        }
        let f = d[enter];
        for &k in &nz {
            d[k] -= f * prow[k];
        }
        d[enter] = 0.0;
        basis[p] = enter;
    }
    let mut x = vec![0.0; n];
    let mut slack = vec![0.0; m_rows];
    for (i, &bv) in basis.iter().enumerate() {
        let v = exact[i].max(0.0);
        if bv < n {
            x[bv] = v;
        } else {
            slack[bv - n] = v;
        }
    }
    Ok(SimplexOutcome { x, slack, pivots })
}

fn dense_solve(z: u32, phi: &GridFunction, cone: &DiscretePshCone, rows: &[usize], max_pivots: usize) -> Result<(Vec<(usize, f64)>, Vec<(u32, f64)>, usize)> {
    // Constraint rows: every slot touched by a selected row, plus z.
    let mut touched: BTreeSet<u32> = BTreeSet::from([z]);
    for &r in rows {
        for (s, _) in cone.coefficients(r) {
            touched.insert(s);
        }
    }
    let node_ids: Vec<u32> = touched.into_iter().collect();
    let pos: BTreeMap<u32, usize> = node_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let cols: Vec<Vec<(usize, f64)>> =
        rows.iter().map(|&r| cone.coefficients(r).into_iter().map(|(s, v)| (pos[&s], v)).collect()).collect();
    let c: Vec<f64> = rows.iter().map(|&r| cone.row_value(r, phi.values())).collect();
    let mut b = vec![0.0; node_ids.len()];
    b[pos[&z]] = 1.0;
    let out = simplex_bland(node_ids.len(), &cols, &b, &c, max_pivots)?;
    let lambda: Vec<(usize, f64)> =
        rows.iter().zip(&out.x).filter(|(_, &x)| x > 0.0).map(|(&r, &x)| (r, x)).collect();
    let mu: Vec<(u32, f64)> = node_ids.iter().zip(&out.slack).map(|(&s, &v)| (s, v.max(0.0))).collect();
    Ok((lambda, mu, out.pivots))
}

/// Stopped walk along tight rows of the envelope of `phi`, absorbed at
/// contact nodes and nodes without rows. Any prefix of the walk yields a
/// feasible measure; mass still in flight after the budget is absorbed
/// where it stands.
fn walk_solve(z: u32, phi: &GridFunction, cone: &DiscretePshCone, solver: &SolverOptions) -> Result<(Vec<(usize, f64)>, Vec<(u32, f64)>)> {
    let env = match psh_envelope(phi, cone, solver) {
        Ok(r) => r.envelope,
        Err(Error::NonConvergence { best: Some(b), .. }) => *b,
        Err(e) => return Err(e),
    };
    let u = env.values();
    let contact_tol = 10.0 * solver.tol * (1.0 + phi.range());
    let n = u.len();
    let policy: Vec<Option<usize>> = (0..n as u32)
        .map(|s| {
            let rows = cone.rows_at(s);
            if rows.is_empty() || phi.at(s) - u[s as usize] <= contact_tol {
                return None;
            }
            rows.min_by(|&a, &b| cone.row_bound(a, u).total_cmp(&cone.row_bound(b, u)))
        })
        .collect();
    let mut pending = vec![0.0; n];
    pending[z as usize] = 1.0;
    let mut mu = vec![0.0; n];
    let mut lambda: BTreeMap<usize, f64> = BTreeMap::new();
    let mut active: BTreeSet<u32> = BTreeSet::from([z]);
    let mut rounds = 0;
    while !active.is_empty() && rounds < 1_000_000 {
        rounds += 1;
        let in_flight: f64 = active.iter().map(|&s| pending[s as usize]).sum();
        if in_flight < 1e-14 {
            break;
        }
        let current: Vec<u32> = std::mem::take(&mut active).into_iter().collect();
        for s in current {
            let m = std::mem::take(&mut pending[s as usize]);
            match policy[s as usize] {
                None => mu[s as usize] += m,
                Some(r) => {
                    let coef = cone.rows()[r].center_coef;
                    *lambda.entry(r).or_insert(0.0) += m / coef;
                    for (t, w) in cone.entries(r) {
                        pending[t as usize] += m * w / coef;
                        active.insert(t);
                    }
                }
            }
        }
    }
    for s in active {
        mu[s as usize] += pending[s as usize];
    }
    let mu = mu.into_iter().enumerate().filter(|(_, v)| *v > 0.0).map(|(s, v)| (s as u32, v)).collect();
    Ok((lambda.into_iter().collect(), mu))
}

/// `φ(z) + Σ μ_i (φ_i − φ(z))`, which is exact for constant `φ`.
fn centred_integral(mu: &DiscreteMeasure, phi: &GridFunction, z: u32) -> f64 {
    let c = phi.at(z);
    c + mu.weights().iter().map(|&(s, w)| w * (phi.at(s) - c)).sum::<f64>()
}

/// Minimises `Σ μ_i φ_i` over discrete Jensen measures at closure slot `z`.
pub fn jensen_lp(z: u32, phi: &GridFunction, cone: &DiscretePshCone, opts: &LpOptions) -> Result<JensenSolution> {
    phi.require_same(cone.mask())?;
    let mask = cone.mask();
    if z as usize >= mask.closure_len() {
        return Err(Error::Precondition(format!("slot {z} is not a closure node")));
    }
    let method = match opts.method {
        Some(m) => m,
        None => {
            if reachable_rows(z, cone, None).len() <= opts.dense_limit {
                LpMethod::Dense
            } else {
                LpMethod::Walk
            }
        }
    };
    let (lambda, raw, pivots) = match method {
        LpMethod::Dense => dense_solve(z, phi, cone, &reachable_rows(z, cone, None), opts.max_pivots)?,
        LpMethod::Local => dense_solve(z, phi, cone, &local_rows(z, cone, opts), opts.max_pivots)?,
        LpMethod::Walk => {
            let (l, m) = walk_solve(z, phi, cone, &opts.solver)?;
            (l, m, 0)
        }
    };
    let mut recon = cone.apply_transpose(&lambda);
    for v in recon.iter_mut() {
        *v = -*v;
    }
    recon[z as usize] += 1.0;
    let mut dense_mu = vec![0.0; mask.closure_len()];
    for &(s, v) in &raw {
        dense_mu[s as usize] = v;
    }
    let reconstruction_error = recon.iter().zip(&dense_mu).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    if reconstruction_error > RECONSTRUCTION_TOL {
        return Err(Error::LpInfeasible(format!(
            "measure differs from δ_z − Aᵀλ by {reconstruction_error:e}"
        )));
    }
    let measure = DiscreteMeasure::from_lp(mask, raw)?;
    let value = centred_integral(&measure, phi, z);
    Ok(JensenSolution { z: mask.node(z), value, measure, lambda, method, pivots, reconstruction_error })
}

/// Same as [`jensen_lp`] but forbids mass outside `allowed` (indexed by
/// slot), by an exact penalty on the forbidden slots. Fails with
/// `LpInfeasible` when the optimum still charges a forbidden slot.
pub fn jensen_lp_on_support(
    z: u32,
    phi: &GridFunction,
    cone: &DiscretePshCone,
    allowed: &[bool],
    opts: &LpOptions,
) -> Result<JensenSolution> {
    if allowed.len() != cone.mask().closure_len() {
        return Err(Error::MaskMismatch);
    }
    let penalty = 1e3 * (1.0 + phi.range());
    let penalised = phi.map("penalised", |s, v| if allowed[s as usize] { v } else { v + penalty })?;
    let mut sol = jensen_lp(z, &penalised, cone, opts)?;
    if let Some(&(s, w)) = sol.measure.weights().iter().find(|(s, _)| !allowed[*s as usize]) {
        return Err(Error::LpInfeasible(format!("no Jensen measure avoids slot {s} (weight {w:e})")));
    }
    sol.value = centred_integral(&sol.measure, phi, z);
    Ok(sol)
}

/// Both sides of the discrete Edwards duality at one node.
#[derive(Clone, Debug, Serialize)]
pub struct DualityCertificate {
    pub z: usize,
    /// Envelope value at z.
    pub primal: f64,
    /// `min ∫ φ dμ`.
    pub dual: f64,
    pub gap: f64,
    pub measure: DiscreteMeasure,
    pub lambda: Vec<(usize, f64)>,
    pub method: LpMethod,
    pub reconstruction_error: f64,
}

/// Runs the envelope and the LP at `z` and reports `|primal − dual|`.
pub fn edwards_gap(z: u32, phi: &GridFunction, cone: &DiscretePshCone, opts: &LpOptions) -> Result<DualityCertificate> {
    let env = psh_envelope(phi, cone, &opts.solver)?;
    edwards_gap_with(z, phi, &env.envelope, cone, opts)
}

/// [`edwards_gap`] with a precomputed envelope.
pub fn edwards_gap_with(
    z: u32,
    phi: &GridFunction,
    envelope: &GridFunction,
    cone: &DiscretePshCone,
    opts: &LpOptions,
) -> Result<DualityCertificate> {
    envelope.require_same(cone.mask())?;
    let sol = jensen_lp(z, phi, cone, opts)?;
    let primal = envelope.at(z);
    Ok(DualityCertificate {
        z: sol.z,
        primal,
        dual: sol.value,
        gap: (primal - sol.value).abs(),
        measure: sol.measure,
        lambda: sol.lambda,
        method: sol.method,
        reconstruction_error: sol.reconstruction_error,
    })
}

/// `(interior mass, boundary mass)` of a measure on `mask`.
pub fn support_profile(mu: &DiscreteMeasure, mask: &DomainMask) -> Result<(f64, f64)> {
    if !mu.mask().same_as(mask) {
        return Err(Error::MaskMismatch);
    }
    let mut interior = 0.0;
    let mut boundary = 0.0;
    for &(s, w) in mu.weights() {
        if mask.is_interior_slot(s) {
            interior += w;
        } else {
            boundary += w;
        }
    }
    Ok((interior, boundary))
}

/// Outcome of testing `u(z) <= ∫ u dμ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenCheck {
    pub holds: bool,
    /// `∫ u dμ − u(z)`.
    pub slack: f64,
}

/// Tests the sub-mean inequality with tolerance `1e-9 (1 + range u)`.
pub fn check_jensen_inequality(u: &GridFunction, mu: &DiscreteMeasure, z: u32) -> Result<JensenCheck> {
    let slack = mu.integrate(u)? - u.at(z);
    Ok(JensenCheck { holds: slack >= -1e-9 * (1.0 + u.range()), slack })
}
