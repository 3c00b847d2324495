use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DomainMask, Lattice, SparseWeights, MAX_AXES, NO_SLOT};
use crate::error::{Error, Result};

/// Which closure nodes carry sub-mean rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterScope {
    /// Interior nodes only: the cone of functions psh on the open domain.
    #[default]
    Interior,
    /// Interior nodes plus nodes on the analytic boundary whose disks stay in
    /// the closure: the cone of functions psh on the compact closure.
    Closure,
}

/// What to do with a disk that leaves the closure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitPolicy {
    /// Halve the radius up to three times and keep the first disk that fits.
    /// Interior nodes left without any disk get the coordinate-plane
    /// four-point rows at radius `h`.
    #[default]
    Shrink,
    /// Keep every fitting radius of the halving ladder plus the
    /// coordinate-plane rows. Rows then only depend on which disks fit, so a
    /// subdomain's cone is a subset of the cone of any larger domain.
    Ladder,
}

const HALVINGS: usize = 3;

/// Stencil family for [`build_cone`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    /// Disk radii in multiples of the lattice spacing.
    pub radii: Vec<f64>,
    /// Complex directions, each a list of n `[re, im]` pairs. Ignored for n = 1.
    #[serde(default)]
    pub directions: Vec<Vec<[f64; 2]>>,
    /// Number of circle samples per disk.
    pub order: usize,
    #[serde(default)]
    pub scope: CenterScope,
    #[serde(default)]
    pub exit: ExitPolicy,
}

impl ConeConfig {
    /// Radii {2h, 4h}, 16 samples, and for n = 2 the six directions
    /// (1,0), (0,1), (1,±1)/√2, (1,±i)/√2.
    pub fn default_for(dim: usize) -> Self {
        let directions = if dim == 1 {
            vec![vec![[1.0, 0.0]]]
        } else {
            let s = FRAC_1_SQRT_2;
            vec![
                vec![[1.0, 0.0], [0.0, 0.0]],
                vec![[0.0, 0.0], [1.0, 0.0]],
                vec![[s, 0.0], [s, 0.0]],
                vec![[s, 0.0], [0.0, s]],
                vec![[s, 0.0], [-s, 0.0]],
                vec![[s, 0.0], [0.0, -s]],
            ]
        };
        Self {
            radii: vec![2.0, 4.0],
            directions,
            order: 16,
            scope: CenterScope::Interior,
            exit: ExitPolicy::Shrink,
        }
    }

    pub fn with_scope(mut self, scope: CenterScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_exit(mut self, exit: ExitPolicy) -> Self {
        self.exit = exit;
        self
    }

    fn validate(&self, dim: usize) -> Result<Vec<Vec<Complex64>>> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Precondition("stencil radii must be positive".into()));
        }
        if self.order < 4 {
            return Err(Error::Precondition(format!("quadrature order must be >= 4, got {}", self.order)));
        }
        if dim == 1 {
            return Ok(vec![vec![Complex64::new(1.0, 0.0)]]);
        }
        if self.directions.is_empty() {
            return Err(Error::Precondition("at least one direction is required".into()));
        }
        self.directions
            .iter()
            .map(|d| {
                if d.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "direction has {} components, expected {dim}",
                        d.len()
                    )));
                }
                let v: Vec<Complex64> = d.iter().map(|c| Complex64::new(c[0], c[1])).collect();
                let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::Precondition("zero direction".into()));
                }
                Ok(v.into_iter().map(|c| c / norm).collect())
            })
            .collect()
    }
}

/// Circle samples of a complex disk `center + r e^{iθ} w`, each expressed as
/// interpolation weights on lattice nodes.
#[derive(Clone, Debug)]
pub struct DiskStencil {
    pub center: usize,
    pub direction: Vec<Complex64>,
    /// Radius in coordinate units.
    pub radius: f64,
    pub order: usize,
    pub samples: Vec<SparseWeights>,
}

fn unit_roots(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / order as f64))
        .collect()
}

fn sample_position(lat: &Lattice, base: &[i64; MAX_AXES], dir: &[Complex64], r: f64, root: Complex64) -> [f64; MAX_AXES] {
    let mut pos = [0.0; MAX_AXES];
    for (j, w) in dir.iter().enumerate() {
        let off = root * w * r;
        pos[2 * j] = base[2 * j] as f64 + off.re;
        pos[2 * j + 1] = base[2 * j + 1] as f64 + off.im;
    }
    debug_assert_eq!(2 * dir.len(), lat.axes());
    pos
}

impl DiskStencil {
    /// `radius_cells` is the radius in multiples of `h`.
    pub fn new(lat: &Lattice, center: usize, direction: &[Complex64], radius_cells: f64, order: usize) -> Result<Self> {
        if direction.len() != lat.dim() {
            return Err(Error::DimensionMismatch("direction length differs from n".into()));
        }
        let base = lat.multi_index(center);
        let samples = unit_roots(order)
            .into_iter()
            .map(|root| {
                let pos = sample_position(lat, &base, direction, radius_cells, root);
                let mut out = Vec::new();
                lat.interp_index_space(&pos[..lat.axes()], &mut out)?;
                Ok(SparseWeights(out))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            center,
            direction: direction.to_vec(),
            radius: radius_cells * lat.h(),
            order,
            samples,
        })
    }

    /// Average of the sample weights: the push-forward of normalised arc
    /// length, as a probability vector on lattice nodes sorted by index.
    pub fn averaged(&self) -> SparseWeights {
        let mut all: Vec<(usize, f64)> = self
            .samples
            .iter()
            .flat_map(|s| s.0.iter().map(|&(i, w)| (i, w / self.order as f64)))
            .collect();
        SparseWeights(merge_sorted(&mut all))
    }
}

fn merge_sorted<K: Ord + Copy>(entries: &mut [(K, f64)]) -> Vec<(K, f64)> {
    entries.sort_by_key(|e| e.0);
    let mut out: Vec<(K, f64)> = Vec::with_capacity(entries.len());
    for &(k, w) in entries.iter() {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += w,
            _ => out.push((k, w)),
        }
    }
    out
}

/// One sub-mean-value constraint `coef * u(center) - Σ w_j u(j) <= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeRow {
    /// Closure slot of the disk centre.
    pub center: u32,
    /// Index into [`DiscretePshCone::directions`].
    pub direction: u16,
    /// Radius in multiples of `h` after any shrinking.
    pub radius: f64,
    pub order: u16,
    /// Equals the sum of the off-centre weights, so every row sums to zero.
    pub center_coef: f64,
    start: u32,
    end: u32,
}

/// Polyhedral cone `{u : A u <= 0}` of discretely plurisubharmonic grid
/// functions, stored row-wise over closure slots.
#[derive(Clone, Debug)]
pub struct DiscretePshCone {
    mask: Arc<DomainMask>,
    config: ConeConfig,
    directions: Vec<Vec<Complex64>>,
    rows: Vec<ConeRow>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    node_rows: Vec<u32>,
}

struct RowDraft {
    direction: u16,
    radius: f64,
    order: u16,
    entries: Vec<(u32, f64)>,
    center_weight: f64,
}

/// Builds the stencil row for one disk, or `None` when it leaves the closure.
fn disk_row(
    mask: &DomainMask,
    center_slot: u32,
    dir: &[Complex64],
    r: f64,
    roots: &[Complex64],
    scratch: &mut Vec<(usize, f64)>,
) -> Option<(Vec<(u32, f64)>, f64)> {
    let lat = mask.lattice();
    let center = mask.node(center_slot);
    let base = lat.multi_index(center);
    let m = roots.len() as f64;
    let mut acc: Vec<(u32, f64)> = Vec::with_capacity(roots.len() * 4);
    for &root in roots {
        scratch.clear();
        let pos = sample_position(lat, &base, dir, r, root);
        lat.interp_index_space(&pos[..lat.axes()], scratch).ok()?;
        for &(idx, w) in scratch.iter() {
            let s = mask.slots()[idx];
            if s == NO_SLOT {
                return None;
            }
            acc.push((s, w / m));
        }
    }
    let merged = merge_sorted(&mut acc);
    let center_weight = merged.iter().find(|e| e.0 == center_slot).map_or(0.0, |e| e.1);
    let entries: Vec<(u32, f64)> = merged.into_iter().filter(|e| e.0 != center_slot).collect();
    let off: f64 = entries.iter().map(|e| e.1).sum();
    if off < 1e-9 {
        return None;
    }
    Some((entries, center_weight))
}

/// Builds the discrete psh cone on `mask` with the given stencil family.
pub fn build_cone(mask: &Arc<DomainMask>, config: &ConeConfig) -> Result<DiscretePshCone> {
    let lat = mask.lattice();
    let dim = lat.dim();
    let mut directions = config.validate(dim)?;

    // Coordinate directions for the four-point fallback rows.
    let axis_dirs: Vec<u16> = (0..dim)
        .map(|j| {
            let e: Vec<Complex64> = (0..dim)
                .map(|k| Complex64::new(if k == j { 1.0 } else { 0.0 }, 0.0))
                .collect();
            match directions.iter().position(|d| d == &e) {
                Some(p) => p as u16,
                None => {
                    directions.push(e);
                    (directions.len() - 1) as u16
                }
            }
        })
        .collect();

    let roots = unit_roots(config.order);
    let axis_roots = unit_roots(4);
    let ladder: Vec<f64> = {
        let mut l: Vec<f64> = config
            .radii
            .iter()
            .flat_map(|&r| (0..=HALVINGS).map(move |k| r / f64::powi(2.0, k as i32)))
            .collect();
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        l.dedup();
        l
    };
    let n_cfg_dirs = if dim == 1 { 1 } else { config.directions.len() };

    let centers: Vec<u32> = (0..mask.closure_len() as u32)
        .filter(|&s| {
            mask.is_interior_slot(s) || (config.scope == CenterScope::Closure && mask.on_analytic_boundary(s))
        })
        .collect();

    let drafts: Vec<(u32, Vec<RowDraft>)> = centers
        .par_iter()
        .map_init(Vec::new, |scratch, &c| {
            let mut rows: Vec<RowDraft> = Vec::new();
            let push = |rows: &mut Vec<RowDraft>, d: u16, r: f64, order: usize, row: (Vec<(u32, f64)>, f64)| {
                if !rows.iter().any(|x| x.direction == d && x.radius == r && x.order as usize == order) {
                    rows.push(RowDraft { direction: d, radius: r, order: order as u16, entries: row.0, center_weight: row.1 });
                }
            };
            for (d, dir) in directions.iter().enumerate().take(n_cfg_dirs) {
                match config.exit {
                    ExitPolicy::Shrink => {
                        for &base in &config.radii {
                            let mut r = base;
                            for _ in 0..=HALVINGS {
                                if let Some(row) = disk_row(mask, c, dir, r, &roots, scratch) {
                                    push(&mut rows, d as u16, r, config.order, row);
                                    break;
                                }
                                r /= 2.0;
                            }
                        }
                    }
                    ExitPolicy::Ladder => {
                        for &r in &ladder {
                            if let Some(row) = disk_row(mask, c, dir, r, &roots, scratch) {
                                push(&mut rows, d as u16, r, config.order, row);
                            }
                        }
                    }
                }
            }
            let want_axis = mask.is_interior_slot(c) && (config.exit == ExitPolicy::Ladder || rows.is_empty());
            if want_axis {
                for &d in &axis_dirs {
                    if let Some(row) = disk_row(mask, c, &directions[d as usize], 1.0, &axis_roots, scratch) {
                        push(&mut rows, d, 1.0, 4, row);
                    }
                }
            }
            rows.sort_by(|a, b| {
                (a.direction, a.order)
                    .cmp(&(b.direction, b.order))
                    .then(a.radius.partial_cmp(&b.radius).unwrap())
            });
            (c, rows)
        })
        .collect();

    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut node_rows = vec![0u32; mask.closure_len() + 1];
    let mut per_node = vec![0u32; mask.closure_len()];
    for (c, list) in drafts {
        if list.is_empty() && mask.is_interior_slot(c) {
            return Err(Error::IsolatedNode { node: mask.node(c) });
        }
        per_node[c as usize] = list.len() as u32;
        for d in list {
            let start = cols.len() as u32;
            let coef: f64 = d.entries.iter().map(|e| e.1).sum();
            debug_assert!((coef + d.center_weight - 1.0).abs() < 1e-9);
            for (s, w) in d.entries {
                cols.push(s);
                weights.push(w);
            }
            rows.push(ConeRow {
                center: c,
                direction: d.direction,
                radius: d.radius,
                order: d.order,
                center_coef: coef,
                start,
                end: cols.len() as u32,
            });
        }
    }
    for s in 0..mask.closure_len() {
        node_rows[s + 1] = node_rows[s] + per_node[s];
    }
    Ok(DiscretePshCone {
        mask: Arc::clone(mask),
        config: config.clone(),
        directions,
        rows,
        cols,
        weights,
        node_rows,
    })
}

impl DiscretePshCone {
    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn config(&self) -> &ConeConfig {
        &self.config
    }

    pub fn directions(&self) -> &[Vec<Complex64>] {
        &self.directions
    }

    pub fn rows(&self) -> &[ConeRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Row ids whose centre is the given closure slot.
    pub fn rows_at(&self, slot: u32) -> Range<usize> {
        self.node_rows[slot as usize] as usize..self.node_rows[slot as usize + 1] as usize
    }

    /// Off-centre entries `(slot, weight)` of a row.
    pub fn entries(&self, row: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = &self.rows[row];
        let span = r.start as usize..r.end as usize;
        self.cols[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    /// Full coefficient list of a row, centre first.
    pub fn coefficients(&self, row: usize) -> Vec<(u32, f64)> {
        let r = &self.rows[row];
        std::iter::once((r.center, r.center_coef))
            .chain(self.entries(row).map(|(s, w)| (s, -w)))
            .collect()
    }

    /// Weighted mean of the off-centre values of a row: the largest value
    /// `u(center)` may take without violating it.
    #[inline]
    pub fn row_bound(&self, row: usize, values: &[f64]) -> f64 {
        let r = &self.rows[row];
        let c = values[r.center as usize];
        c - self.row_value(row, values) / r.center_coef
    }

    /// `(A u)_row`, summed as `Σ w_j (u_c − u_j)` so constants give exactly 0.
    #[inline]
    pub fn row_value(&self, row: usize, values: &[f64]) -> f64 {
        let r = &self.rows[row];
        let c = values[r.center as usize];
        let mut acc = 0.0;
        for k in r.start as usize..r.end as usize {
            acc += self.weights[k] * (c - values[self.cols[k] as usize]);
        }
        acc
    }

    /// All row values `A u`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).into_par_iter().map(|r| self.row_value(r, values)).collect()
    }

    /// `Aᵀ λ` over closure slots.
    pub fn apply_transpose(&self, lambda: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.mask.closure_len()];
        for &(row, l) in lambda {
            for (s, c) in self.coefficients(row) {
                out[s as usize] += l * c;
            }
        }
        out
    }

    /// The disk stencil behind a row, rebuilt from its metadata.
    pub fn stencil(&self, row: usize) -> DiskStencil {
        let r = &self.rows[row];
        DiskStencil::new(
            self.mask.lattice(),
            self.mask.node(r.center),
            &self.directions[r.direction as usize],
            r.radius,
            r.order as usize,
        )
        .expect("row stencils stay inside the box")
    }

    /// Copy keeping only rows whose centre is an interior node.
    pub fn interior_part(&self) -> Self {
        let mut out = Self {
            mask: Arc::clone(&self.mask),
            config: ConeConfig { scope: CenterScope::Interior, ..self.config.clone() },
            directions: self.directions.clone(),
            rows: Vec::new(),
            cols: Vec::new(),
            weights: Vec::new(),
            node_rows: vec![0; self.mask.closure_len() + 1],
        };
        for s in 0..self.mask.closure_len() as u32 {
            let keep = self.mask.is_interior_slot(s);
            let mut count = 0;
            if keep {
                for row in self.rows_at(s) {
                    let r = &self.rows[row];
                    let start = out.cols.len() as u32;
                    for (c, w) in self.entries(row) {
                        out.cols.push(c);
                        out.weights.push(w);
                    }
                    out.rows.push(ConeRow { start, end: out.cols.len() as u32, ..r.clone() });
                    count += 1;
                }
            }
            out.node_rows[s as usize + 1] = out.node_rows[s as usize] + count;
        }
        out
    }

    /// Stable identifier of a row for reports.
    pub fn row_label(&self, row: usize) -> String {
        let r = &self.rows[row];
        format!("node {} dir {} r {}h m {}", self.mask.node(r.center), r.direction, r.radius, r.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_domain, DomainParams};
    use crate::lattice::{classify_nodes, Lattice, DEFAULT_NODE_CAP};
    use proptest::prelude::*;

    fn disk_cone(h: f64) -> DiscretePshCone {
        let lat = Lattice::covering(&[(-1.0, 1.0); 2], h, 1, 2, DEFAULT_NODE_CAP).unwrap();
        let mask = classify_nodes(&lat, &make_domain(&DomainParams::UnitDisk {}).unwrap()).unwrap();
        build_cone(&mask, &ConeConfig::default_for(1)).unwrap()
    }

    fn eval(cone: &DiscretePshCone, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mask = cone.mask();
        (0..mask.closure_len() as u32).map(|s| f(&mask.slot_point(s))).collect()
    }

    #[test]
    fn stencil_average_is_probability_vector() {
        let lat = Lattice::covering(&[(-1.0, 1.0); 4], 0.25, 2, 2, DEFAULT_NODE_CAP).unwrap();
        let c = lat.nearest_node(&[0.0; 4]);
        let s = 0.5f64.sqrt();
        let dir = [Complex64::new(s, 0.0), Complex64::new(0.0, s)];
        let st = DiskStencil::new(&lat, c, &dir, 2.0, 16).unwrap();
        let avg = st.averaged();
        assert!((avg.total() - 1.0).abs() < 1e-12);
        assert!(avg.0.iter().all(|&(_, w)| w > 0.0));
        // The mean of an affine function over a complex circle is its centre value.
        let f = |p: &[f64]| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + 3.0 * p[3];
        assert!((avg.apply(|i| f(&lat.point(i))) - f(&lat.point(c))).abs() < 1e-12);
    }

    #[test]
    fn every_interior_node_has_a_row_and_rows_sum_to_zero() {
        let cone = disk_cone(0.05);
        let mask = cone.mask();
        for &s in mask.interior_slots() {
            assert!(!cone.rows_at(s).is_empty());
        }
        for r in 0..cone.len() {
            let sum: f64 = cone.coefficients(r).iter().map(|c| c.1).sum();
            assert!(sum.abs() < 1e-12, "row {r} sums to {sum}");
            assert!(!mask.is_interior_slot(cone.rows()[r].center) == false);
        }
    }

    #[test]
    fn constants_and_affine_functions_are_exact() {
        let cone = disk_cone(0.05);
        for f in [
            Box::new(|_: &[f64]| 3.0) as Box<dyn Fn(&[f64]) -> f64>,
            Box::new(|p: &[f64]| p[0]),
            Box::new(|p: &[f64]| 0.3 - 2.0 * p[1] + p[0]),
        ] {
            let u = eval(&cone, f);
            let worst = cone.apply(&u).into_iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(worst < 1e-12, "worst {worst}");
        }
    }

    #[test]
    fn squared_modulus_is_strictly_inside_and_its_negative_is_not() {
        let cone = disk_cone(0.05);
        let u = eval(&cone, |p| p[0] * p[0] + p[1] * p[1]);
        let vals = cone.apply(&u);
        for (r, v) in vals.iter().enumerate() {
            let rad = cone.rows()[r].radius * 0.05;
            assert!(*v < 0.0);
            // Circle average of |z|^2 is |z|^2 + r^2; bilinear interpolation only adds to it.
            assert!(*v <= -rad * rad + 1e-12, "row {r}: {v} vs {}", -rad * rad);
        }
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let worst = cone.apply(&neg).into_iter().fold(f64::MIN, f64::max);
        assert!(worst > 0.0);
        let two_h = 0.1f64;
        assert!(worst >= two_h * two_h);
    }

    #[test]
    fn closure_scope_adds_rows_on_the_slit_only() {
        let lat = Lattice::covering(&[(-1.0, 1.0); 2], 0.05, 1, 2, DEFAULT_NODE_CAP).unwrap();
        let mask = classify_nodes(&lat, &make_domain(&DomainParams::SlitDisk {}).unwrap()).unwrap();
        let inner = build_cone(&mask, &ConeConfig::default_for(1)).unwrap();
        let outer = build_cone(&mask, &ConeConfig::default_for(1).with_scope(CenterScope::Closure)).unwrap();
        assert!(outer.len() > inner.len());
        for r in outer.rows() {
            if !mask.is_interior_slot(r.center) {
                let p = mask.slot_point(r.center);
                assert!(p[1] == 0.0 && p[0].abs() <= 0.5, "extra row at {p:?}");
            }
        }
        let again = outer.interior_part();
        assert_eq!(again.len(), inner.len());
        assert_eq!(again.rows(), inner.rows());
    }

    #[test]
    fn ladder_rows_of_a_subdomain_are_rows_of_the_superdomain() {
        let lat = Lattice::covering(&[(-1.0, 1.8), (-1.0, 1.0)], 0.1, 1, 2, DEFAULT_NODE_CAP).unwrap();
        let a = make_domain(&DomainParams::UnitDisk {}).unwrap();
        let b = make_domain(&DomainParams::Disk { center: [0.8, 0.0], radius: 1.0 }).unwrap();
        let ab = crate::domains::combine(crate::domains::Combine::Intersect, &a, &b).unwrap();
        let cfg = ConeConfig::default_for(1).with_exit(ExitPolicy::Ladder);
        let ma = classify_nodes(&lat, &a).unwrap();
        let mab = classify_nodes(&lat, &ab).unwrap();
        let ca = build_cone(&ma, &cfg).unwrap();
        let cab = build_cone(&mab, &cfg).unwrap();
        for r in cab.rows() {
            let node = mab.node(r.center);
            let sa = ma.slot(node).unwrap();
            assert!(ca.rows_at(sa).any(|k| {
                let q = &ca.rows()[k];
                q.direction == r.direction && q.radius == r.radius && q.order == r.order
            }));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cone_is_closed_under_sums_and_maxima(
            a in proptest::array::uniform3(-2.0f64..2.0),
            b in proptest::array::uniform3(-2.0f64..2.0),
            s in 0.0f64..3.0, t in 0.0f64..3.0,
            ka in 0.0f64..2.0, kb in 0.0f64..2.0,
        ) {
            let cone = disk_cone(0.1);
            // |z - a|^2 scaled plus affine parts are members.
            let u = eval(&cone, |p| ka * ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)) + a[2] * p[0]);
            let v = eval(&cone, |p| kb * ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)) + b[2] * p[1]);
            let tol = 1e-12;
            prop_assert!(cone.apply(&u).iter().all(|&x| x <= tol));
            prop_assert!(cone.apply(&v).iter().all(|&x| x <= tol));
            let sum: Vec<f64> = u.iter().zip(&v).map(|(x, y)| s * x + t * y).collect();
            let max: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x.max(*y)).collect();
            prop_assert!(cone.apply(&sum).iter().all(|&x| x <= tol));
            prop_assert!(cone.apply(&max).iter().all(|&x| x <= tol));
            // Decreasing sequence u - 1/j stays in the cone, and so does its limit u.
            for j in 1..5 {
                let uj: Vec<f64> = u.iter().map(|x| x + 1.0 / j as f64).collect();
                prop_assert!(cone.apply(&uj).iter().all(|&x| x <= tol));
            }
        }
    }
}
