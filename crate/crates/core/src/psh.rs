//! Grid functions and plurisubharmonicity diagnostics.

use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DiscretePshCone, DomainMask, MAX_AXES};

/// Real values on the closure nodes of a mask, indexed by slot.
#[derive(Clone, Debug)]
pub struct GridFunction {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
    role: String,
}

impl GridFunction {
    pub fn new(mask: &Arc<DomainMask>, values: Vec<f64>, role: impl Into<String>) -> Result<Self> {
        if values.len() != mask.closure_len() {
            return Err(Error::MaskMismatch);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("non-finite value at closure slot {i}")));
        }
        Ok(Self { mask: Arc::clone(mask), values, role: role.into() })
    }

    /// Samples `f` at every closure node.
    pub fn from_fn(mask: &Arc<DomainMask>, role: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let lat = mask.lattice();
        let values = mask
            .closure_nodes()
            .par_iter()
            .map_init(|| vec![0.0; lat.axes()], |p, &idx| {
                lat.point_into(idx, p);
                f(p)
            })
            .collect();
        Self::new(mask, values, role)
    }

    pub fn constant(mask: &Arc<DomainMask>, c: f64, role: impl Into<String>) -> Result<Self> {
        Self::new(mask, vec![c; mask.closure_len()], role)
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn set_role(&mut self, role: impl Into<String>) {
        self.role = role.into();
    }

    pub fn at(&self, slot: u32) -> f64 {
        self.values[slot as usize]
    }

    /// Value at a lattice node, if it is a closure node.
    pub fn at_node(&self, idx: usize) -> Option<f64> {
        self.mask.slot(idx).map(|s| self.at(s))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.max() - self.min()
        }
    }

    /// New function with values `f(slot, value)`, same mask.
    pub fn map(&self, role: impl Into<String>, f: impl Fn(u32, f64) -> f64) -> Result<Self> {
        let values = self.values.iter().enumerate().map(|(s, &v)| f(s as u32, v)).collect();
        Self::new(&self.mask, values, role)
    }

    /// Nodewise combination of two functions on the same mask.
    pub fn zip(&self, other: &GridFunction, role: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.require_same(other.mask())?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(&self.mask, values, role)
    }

    pub fn require_same(&self, mask: &DomainMask) -> Result<()> {
        if self.mask.same_as(mask) {
            Ok(())
        } else {
            Err(Error::MaskMismatch)
        }
    }

    /// `index,x1,..,x{2n},value` for every closure node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let lat = self.mask.lattice();
        write!(out, "index")?;
        for a in 1..=lat.axes() {
            write!(out, ",x{a}")?;
        }
        writeln!(out, ",{}", csv_header_name(&self.role))?;
        let mut p = vec![0.0; lat.axes()];
        for (s, &idx) in self.mask.closure_nodes().iter().enumerate() {
            lat.point_into(idx, &mut p);
            write!(out, "{idx}")?;
            for x in &p {
                write!(out, ",{x}")?;
            }
            writeln!(out, ",{:e}", self.values[s])?;
        }
        Ok(())
    }

    /// Gnuplot block data `x y value` on the slice through the lattice node
    /// nearest the origin in the remaining axes; one blank line per scan row.
    pub fn write_plot<W: Write>(&self, mut out: W) -> io::Result<()> {
        let lat = self.mask.lattice();
        let origin = lat.multi_index(lat.nearest_node(&vec![0.0; lat.axes()]));
        writeln!(out, "# x y {}", csv_header_name(&self.role))?;
        let mut mi = origin;
        for i in 0..lat.shape()[0] as i64 {
            let mut any = false;
            for j in 0..lat.shape()[1] as i64 {
                mi[0] = i;
                mi[1] = j;
                let Some(idx) = lat.index_of(&mi[..lat.axes()]) else { continue };
                if let Some(v) = self.at_node(idx) {
                    writeln!(out, "{} {} {:e}", lat.axis_coord(0, i), lat.axis_coord(1, j), v)?;
                    any = true;
                }
            }
            if any {
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn csv_header_name(role: &str) -> &str {
    if role.is_empty() || role.contains(',') {
        "value"
    } else {
        role
    }
}

/// One histogram bucket of row values `lo < v <= hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

const BUCKET_EDGES: [f64; 9] = [-1e-2, -1e-4, -1e-6, -1e-9, 1e-9, 1e-6, 1e-4, 1e-2, 1.0];

/// Worst sub-mean-value violation of a grid function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// `max_r (A u)_r`; 0 for a cone without rows.
    pub worst: f64,
    /// Lattice index of the centre of the worst row.
    pub node: Option<usize>,
    pub row: Option<usize>,
    pub stencil: Option<String>,
    pub tolerance: f64,
    pub rows: usize,
    pub histogram: Vec<Bucket>,
}

impl ViolationReport {
    /// Whether the function passes at the default tolerance.
    pub fn is_psh(&self) -> bool {
        self.worst <= self.tolerance
    }

    pub fn within(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

/// Default membership tolerance `1e-9 (1 + range)`.
pub fn default_tolerance(u: &GridFunction) -> f64 {
    1e-9 * (1.0 + u.range())
}

/// Evaluates every cone row on `u`. Ties resolve to the lowest row, which is
/// the lowest centre node.
pub fn cone_violation(u: &GridFunction, cone: &DiscretePshCone) -> Result<ViolationReport> {
    u.require_same(cone.mask())?;
    let vals = cone.apply(u.values());
    let mut worst: Option<(usize, f64)> = None;
    for (r, &v) in vals.iter().enumerate() {
        if worst.is_none_or(|(_, w)| v > w) {
            worst = Some((r, v));
        }
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend_from_slice(&BUCKET_EDGES);
    edges.push(f64::INFINITY);
    let mut histogram: Vec<Bucket> = edges.windows(2).map(|w| Bucket { lo: w[0], hi: w[1], count: 0 }).collect();
    for &v in &vals {
        let k = BUCKET_EDGES.iter().position(|&e| v <= e).unwrap_or(BUCKET_EDGES.len());
        histogram[k].count += 1;
    }
    let (row, worst_v) = match worst {
        Some((r, v)) => (Some(r), v),
        None => (None, 0.0),
    };
    Ok(ViolationReport {
        worst: worst_v,
        node: row.map(|r| cone.mask().node(cone.rows()[r].center)),
        row,
        stencil: row.map(|r| cone.row_label(r)),
        tolerance: default_tolerance(u),
        rows: vals.len(),
        histogram,
    })
}

/// Per-slot value that may be absent where the difference stencil does not
/// fit in the closure.
#[derive(Clone, Debug)]
pub struct LeviProfile {
    mask: Arc<DomainMask>,
    values: Vec<Option<f64>>,
}

impl LeviProfile {
    pub fn get(&self, slot: u32) -> Option<f64> {
        self.values[slot as usize]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    /// Present values with their slots.
    pub fn present(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(s, v)| v.map(|v| (s as u32, v)))
    }

    pub fn min(&self) -> Option<f64> {
        self.present().map(|(_, v)| v).reduce(f64::min)
    }
}

/// Centred finite differences at one node.
struct Differences {
    grad: [f64; MAX_AXES],
    hess: [[f64; MAX_AXES]; MAX_AXES],
}

fn differences(u: &GridFunction, slot: u32) -> Option<Differences> {
    let mask = u.mask();
    let lat = mask.lattice();
    let axes = lat.axes();
    let h = lat.h();
    let base = lat.multi_index(mask.node(slot));
    let val = |off: &[(usize, i64)]| -> Option<f64> {
        let mut mi = base;
        for &(a, s) in off {
            mi[a] += s;
        }
        lat.index_of(&mi[..axes]).and_then(|i| u.at_node(i))
    };
    let c = u.at(slot);
    let mut d = Differences { grad: [0.0; MAX_AXES], hess: [[0.0; MAX_AXES]; MAX_AXES] };
    for a in 0..axes {
        let p = val(&[(a, 1)])?;
        let m = val(&[(a, -1)])?;
        d.grad[a] = (p - m) / (2.0 * h);
        d.hess[a][a] = (p - 2.0 * c + m) / (h * h);
        for b in 0..a {
            let pp = val(&[(a, 1), (b, 1)])?;
            let pm = val(&[(a, 1), (b, -1)])?;
            let mp = val(&[(a, -1), (b, 1)])?;
            let mm = val(&[(a, -1), (b, -1)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            d.hess[a][b] = v;
            d.hess[b][a] = v;
        }
    }
    Some(d)
}

/// Complex Hessian `[∂²u/∂z_j∂z̄_k]` from the real Hessian.
fn complex_hessian(d: &Differences, n: usize) -> [[Complex64; 2]; 2] {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for j in 0..n {
        for k in 0..n {
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            let re = d.hess[xj][xk] + d.hess[yj][yk];
            let im = d.hess[xj][yk] - d.hess[yj][xk];
            c[j][k] = Complex64::new(re, im) / 4.0;
        }
    }
    c
}

fn profile(u: &GridFunction, f: impl Fn(&Differences) -> Option<f64> + Sync) -> LeviProfile {
    let mask = u.mask();
    let values = (0..mask.closure_len() as u32)
        .into_par_iter()
        .map(|s| if mask.is_interior_slot(s) { differences(u, s).and_then(|d| f(&d)) } else { None })
        .collect();
    LeviProfile { mask: Arc::clone(mask), values }
}

/// For n = 1 the five-point Laplacian; for n = 2 the smaller eigenvalue of
/// the complex Hessian. Absent at boundary nodes and where a neighbour
/// needed by the centred differences is missing.
pub fn levi_profile(u: &GridFunction) -> LeviProfile {
    let n = u.mask().lattice().dim();
    profile(u, |d| {
        if n == 1 {
            return Some(d.hess[0][0] + d.hess[1][1]);
        }
        let c = complex_hessian(d, 2);
        let (a, dd, b) = (c[0][0].re, c[1][1].re, c[0][1]);
        Some(0.5 * (a + dd) - (0.25 * (a - dd).powi(2) + b.norm_sqr()).sqrt())
    })
}

/// Levi form of `u` on the complex tangent of its own level set,
/// `Σ u_{j k̄} t_j t̄_k / |t|²` with `t = (∂u/∂z₂, −∂u/∂z₁)`. For n = 1 it
/// coincides with the Laplacian. Absent where the gradient vanishes.
pub fn tangential_levi_profile(u: &GridFunction) -> LeviProfile {
    let n = u.mask().lattice().dim();
    profile(u, |d| {
        if n == 1 {
            return Some(d.hess[0][0] + d.hess[1][1]);
        }
        let c = complex_hessian(d, 2);
        let dz = |j: usize| Complex64::new(d.grad[2 * j], -d.grad[2 * j + 1]) / 2.0;
        let t = [dz(1), -dz(0)];
        let norm = t[0].norm_sqr() + t[1].norm_sqr();
        if norm < 1e-300 {
            return None;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..2 {
            for k in 0..2 {
                acc += c[j][k] * t[j] * t[k].conj();
            }
        }
        Some(acc.re / norm)
    })
}

/// `u*(z) = max { u(y) : y closure node, |y − z| <= δ }`.
pub fn usc_regularize(u: &GridFunction, delta: f64) -> Result<GridFunction> {
    let mask = u.mask();
    let lat = mask.lattice();
    let h = lat.h();
    if !(delta >= h * (1.0 - 1e-12)) {
        return Err(Error::Precondition(format!("regularisation radius {delta} is below the spacing {h}")));
    }
    let axes = lat.axes();
    let reach = (delta / h + 1e-9).floor() as i64;
    let limit = (delta / h) * (delta / h) + 1e-9;
    let mut offsets: Vec<[i64; MAX_AXES]> = Vec::new();
    let span = 2 * reach + 1;
    for code in 0..span.pow(axes as u32) {
        let mut off = [0i64; MAX_AXES];
        let mut c = code;
        for o in off.iter_mut().take(axes) {
            *o = c % span - reach;
            c /= span;
        }
        if off.iter().map(|&k| (k * k) as f64).sum::<f64>() <= limit {
            offsets.push(off);
        }
    }
    let values = (0..mask.closure_len() as u32)
        .into_par_iter()
        .map(|s| {
            let base = lat.multi_index(mask.node(s));
            let mut best = u.at(s);
            for off in &offsets {
                let mut mi = base;
                for a in 0..axes {
                    mi[a] += off[a];
                }
                if let Some(v) = lat.index_of(&mi[..axes]).and_then(|i| u.at_node(i)) {
                    best = best.max(v);
                }
            }
            best
        })
        .collect();
    GridFunction::new(mask, values, format!("{}*", u.role()))
}

/// Outcome of checking a finite decreasing sequence against the cone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub nonincreasing: bool,
    /// First `(j, lattice node, increase)` with `u_{j+1} > u_j`.
    pub first_increase: Option<(usize, usize, f64)>,
    pub violations: Vec<f64>,
    pub tolerances: Vec<f64>,
    pub all_in_cone: bool,
    pub limit_violation: f64,
    pub limit_in_cone: bool,
}

/// Checks that `seq` decreases nodewise and that every member, in particular
/// the last one, lies in the cone up to `rel_tol · range + 1e-12`.
pub fn monotone_limit_check(seq: &[GridFunction], cone: &DiscretePshCone, rel_tol: f64) -> Result<MonotoneReport> {
    if seq.len() < 2 {
        return Err(Error::Precondition("a sequence needs at least two functions".into()));
    }
    for u in seq {
        u.require_same(cone.mask())?;
    }
    let mut first_increase = None;
    'outer: for (j, pair) in seq.windows(2).enumerate() {
        for (s, (&a, &b)) in pair[0].values().iter().zip(pair[1].values()).enumerate() {
            if b > a {
                first_increase = Some((j, cone.mask().node(s as u32), b - a));
                break 'outer;
            }
        }
    }
    let mut violations = Vec::with_capacity(seq.len());
    let mut tolerances = Vec::with_capacity(seq.len());
    for u in seq {
        violations.push(cone_violation(u, cone)?.worst);
        tolerances.push(rel_tol * u.range() + 1e-12);
    }
    let ok: Vec<bool> = violations.iter().zip(&tolerances).map(|(v, t)| v <= t).collect();
    Ok(MonotoneReport {
        nonincreasing: first_increase.is_none(),
        first_increase,
        limit_violation: *violations.last().unwrap(),
        limit_in_cone: *ok.last().unwrap(),
        all_in_cone: ok.iter().all(|&b| b),
        violations,
        tolerances,
    })
}
