//! Uniform grids over boxes in R^{2n}, node classification against a domain,
//! multilinear interpolation and complex-disk stencils.
//!
//! Geometry is carried in index space wherever possible: a node is an integer
//! multi-index, stencil radii are multiples of the spacing `h`, and sample
//! points are located by their fractional multi-index. Coordinates are only
//! materialised when a domain predicate or a user function needs them.

mod cone;
mod mask;

pub use cone::{build_cone, CenterScope, ConeConfig, ConeRow, DiscretePshCone, DiskStencil, ExitPolicy};
pub use mask::{classify_nodes, DomainMask, NodeClass, NO_SLOT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default node budget.
pub const DEFAULT_NODE_CAP: usize = 200_000;

/// Largest supported number of real axes (n = 2).
pub const MAX_AXES: usize = 4;

/// Fractional parts closer than this to an integer snap onto the grid line.
const SNAP: f64 = 1e-12;

/// Interpolation weights below this are dropped and the rest renormalised.
pub const WEIGHT_PRUNE: f64 = 1e-12;

/// Uniform grid with spacing `h` over a box in R^{2n}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    h: f64,
    lo: Vec<f64>,
    /// When set, the box corner is `offset[i] * h` and coordinates are
    /// computed as `(offset[i] + k) * h`, so grid lines through 0 are exact.
    offset: Option<Vec<i64>>,
    shape: Vec<usize>,
    strides: Vec<usize>,
}

/// Nonnegative weights on lattice nodes summing to one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseWeights(pub Vec<(usize, f64)>);

impl SparseWeights {
    pub fn total(&self) -> f64 {
        self.0.iter().map(|&(_, w)| w).sum()
    }

    pub fn apply(&self, values: impl Fn(usize) -> f64) -> f64 {
        self.0.iter().map(|&(i, w)| w * values(i)).sum()
    }
}

fn check_dims(bbox: &[(f64, f64)], h: f64, dim: usize) -> Result<()> {
    if !(dim == 1 || dim == 2) {
        return Err(Error::InvalidBox(format!("complex dimension must be 1 or 2, got {dim}")));
    }
    if bbox.len() != 2 * dim {
        return Err(Error::InvalidBox(format!(
            "expected {} intervals, got {}",
            2 * dim,
            bbox.len()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidBox(format!("spacing must be positive, got {h}")));
    }
    for &(lo, hi) in bbox {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidBox(format!("degenerate interval [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn node_budget(shape: &[usize], cap: usize) -> Result<()> {
    let nodes: u128 = shape.iter().map(|&s| s as u128).product();
    if nodes > cap as u128 {
        return Err(Error::NodeBudgetExceeded { nodes, cap });
    }
    Ok(())
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

/// Builds a lattice with the default node budget.
pub fn build_lattice(bbox: &[(f64, f64)], h: f64, dim: usize) -> Result<Lattice> {
    Lattice::with_cap(bbox, h, dim, DEFAULT_NODE_CAP)
}

impl Lattice {
    /// Lattice anchored at the lower box corner; `floor(len/h) + 1` nodes per axis.
    pub fn with_cap(bbox: &[(f64, f64)], h: f64, dim: usize, cap: usize) -> Result<Self> {
        check_dims(bbox, h, dim)?;
        let shape: Vec<usize> = bbox
            .iter()
            .map(|&(lo, hi)| (((hi - lo) / h) + 1e-9).floor().min(1e15) as usize + 1)
            .collect();
        node_budget(&shape, cap)?;
        Ok(Self {
            dim,
            h,
            lo: bbox.iter().map(|&(lo, _)| lo).collect(),
            offset: None,
            strides: strides_for(&shape),
            shape,
        })
    }

    /// Lattice whose nodes sit on `h * Z^{2n}` and which covers `bbox` with at
    /// least `margin` extra cells on every side.
    pub fn covering(bbox: &[(f64, f64)], h: f64, dim: usize, margin: usize, cap: usize) -> Result<Self> {
        check_dims(bbox, h, dim)?;
        let mut offset = Vec::with_capacity(bbox.len());
        let mut shape = Vec::with_capacity(bbox.len());
        for &(lo, hi) in bbox {
            let k0 = (lo / h + 1e-9).floor() as i64 - margin as i64;
            let k1 = (hi / h - 1e-9).ceil() as i64 + margin as i64;
            offset.push(k0);
            shape.push((k1 - k0 + 1) as usize);
        }
        node_budget(&shape, cap)?;
        Ok(Self {
            dim,
            h,
            lo: offset.iter().map(|&k| k as f64 * h).collect(),
            offset: Some(offset),
            strides: strides_for(&shape),
            shape,
        })
    }

    /// Complex dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of real axes, 2n.
    pub fn axes(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Box covered by the nodes, one interval per axis.
    pub fn bbox(&self) -> Vec<(f64, f64)> {
        (0..self.axes())
            .map(|a| (self.axis_coord(a, 0), self.axis_coord(a, self.shape[a] as i64 - 1)))
            .collect()
    }

    pub fn axis_coord(&self, axis: usize, k: i64) -> f64 {
        match &self.offset {
            Some(off) => (off[axis] + k) as f64 * self.h,
            None => self.lo[axis] + k as f64 * self.h,
        }
    }

    pub fn multi_index(&self, idx: usize) -> [i64; MAX_AXES] {
        let mut out = [0i64; MAX_AXES];
        let mut rem = idx;
        for (a, &s) in self.strides.iter().enumerate() {
            out[a] = (rem / s) as i64;
            rem %= s;
        }
        out
    }

    pub fn index_of(&self, mi: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for (a, &k) in mi.iter().enumerate().take(self.axes()) {
            if k < 0 || k as usize >= self.shape[a] {
                return None;
            }
            idx += k as usize * self.strides[a];
        }
        Some(idx)
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let mi = self.multi_index(idx);
        for (a, x) in out.iter_mut().enumerate().take(self.axes()) {
            *x = self.axis_coord(a, mi[a]);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.axes()];
        self.point_into(idx, &mut p);
        p
    }

    /// Neighbour one step along `axis` (`step` = ±1), if it is inside the box.
    pub fn neighbor(&self, idx: usize, axis: usize, step: i64) -> Option<usize> {
        let k = self.multi_index(idx)[axis] + step;
        if k < 0 || k as usize >= self.shape[axis] {
            None
        } else {
            Some((idx as i64 + step * self.strides[axis] as i64) as usize)
        }
    }

    /// Fractional multi-index of a point.
    pub fn to_index_space(&self, p: &[f64]) -> Vec<f64> {
        (0..self.axes())
            .map(|a| (p[a] - self.axis_coord(a, 0)) / self.h)
            .collect()
    }

    /// Node closest to `p` (clamped to the box).
    pub fn nearest_node(&self, p: &[f64]) -> usize {
        let pos = self.to_index_space(p);
        let mi: Vec<i64> = pos
            .iter()
            .enumerate()
            .map(|(a, &x)| (x.round() as i64).clamp(0, self.shape[a] as i64 - 1))
            .collect();
        self.index_of(&mi).expect("clamped index is in range")
    }

    /// Multilinear interpolation weights at a point given in coordinates.
    pub fn interp_weights(&self, p: &[f64]) -> Result<SparseWeights> {
        if p.len() != self.axes() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, lattice has {} axes",
                p.len(),
                self.axes()
            )));
        }
        let mut out = Vec::new();
        self.interp_index_space(&self.to_index_space(p), &mut out)?;
        Ok(SparseWeights(out))
    }

    /// Multilinear weights at a fractional multi-index, appended to `out` as
    /// `(lattice index, weight)`. Zero-weight corners are never emitted.
    pub fn interp_index_space(&self, pos: &[f64], out: &mut Vec<(usize, f64)>) -> Result<()> {
        let d = self.axes();
        let mut base = [0i64; MAX_AXES];
        let mut frac = [0f64; MAX_AXES];
        for a in 0..d {
            let x = pos[a];
            if !x.is_finite() {
                return Err(Error::OutOfBox);
            }
            let mut k = x.floor();
            let mut f = x - k;
            if f < SNAP {
                f = 0.0;
            } else if f > 1.0 - SNAP {
                k += 1.0;
                f = 0.0;
            }
            let k = k as i64;
            let top = if f > 0.0 { k + 1 } else { k };
            if k < 0 || top >= self.shape[a] as i64 {
                return Err(Error::OutOfBox);
            }
            base[a] = k;
            frac[a] = f;
        }
        let start = out.len();
        let mut total = 0.0;
        'corners: for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                let wa = if up { frac[a] } else { 1.0 - frac[a] };
                if wa == 0.0 {
                    continue 'corners;
                }
                w *= wa;
                idx += (base[a] + up as i64) as usize * self.strides[a];
            }
            if w >= WEIGHT_PRUNE {
                out.push((idx, w));
                total += w;
            }
        }
        for e in &mut out[start..] {
            e.1 /= total;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_counts() {
        let lat = build_lattice(&[(-1.0, 1.0); 2], 1.0, 1).unwrap();
        assert_eq!(lat.len(), 9);
        let lat = build_lattice(&[(0.0, 1.0); 4], 0.5, 2).unwrap();
        assert_eq!(lat.len(), 81);
        assert!(matches!(
            build_lattice(&[(-1.0, 1.0); 2], 1e-6, 1),
            Err(Error::NodeBudgetExceeded { .. })
        ));
        assert!(matches!(build_lattice(&[(1.0, 1.0), (0.0, 1.0)], 0.1, 1), Err(Error::InvalidBox(_))));
        assert!(matches!(build_lattice(&[(0.0, 1.0); 2], -0.1, 1), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn covering_lattice_hits_zero_exactly() {
        let lat = Lattice::covering(&[(-1.0, 1.0); 2], 0.05, 1, 2, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(lat.axis_coord(0, 0), -1.1);
        let zero = lat.nearest_node(&[0.25, 0.0]);
        assert_eq!(lat.point(zero), vec![0.25, 0.0]);
    }

    #[test]
    fn interpolation_special_points() {
        let lat = build_lattice(&[(0.0, 2.0); 2], 1.0, 1).unwrap();
        let w = lat.interp_weights(&[1.0, 1.0]).unwrap();
        assert_eq!(w.0, vec![(lat.index_of(&[1, 1]).unwrap(), 1.0)]);
        let w = lat.interp_weights(&[0.5, 0.5]).unwrap();
        assert_eq!(w.0.len(), 4);
        assert!(w.0.iter().all(|&(_, x)| (x - 0.25).abs() < 1e-15));
        let w = lat.interp_weights(&[0.5, 1.0]).unwrap();
        assert_eq!(w.0.len(), 2);
        assert!(w.0.iter().all(|&(_, x)| (x - 0.5).abs() < 1e-15));
        assert!(matches!(lat.interp_weights(&[2.5, 0.0]), Err(Error::OutOfBox)));
    }

    proptest! {
        #[test]
        fn index_roundtrip(i in 0usize..81) {
            let lat = build_lattice(&[(0.0, 1.0); 4], 0.5, 2).unwrap();
            let mi = lat.multi_index(i);
            prop_assert_eq!(lat.index_of(&mi[..4]), Some(i));
            let p = lat.point(i);
            for a in 0..4 {
                prop_assert_eq!(p[a], mi[a] as f64 * 0.5);
            }
        }

        #[test]
        fn interpolation_reproduces_affine(
            x in -0.99f64..0.99, y in -0.99f64..0.99, u in -0.99f64..0.99, v in -0.99f64..0.99,
            c in proptest::array::uniform5(-3.0f64..3.0),
        ) {
            let lat = Lattice::covering(&[(-1.0, 1.0); 4], 0.25, 2, 0, DEFAULT_NODE_CAP).unwrap();
            let f = |p: &[f64]| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[2] + c[4] * p[3];
            let w = lat.interp_weights(&[x, y, u, v]).unwrap();
            prop_assert!((w.total() - 1.0).abs() < 1e-12);
            prop_assert!(w.0.iter().all(|&(_, x)| x >= 0.0));
            let val = w.apply(|i| f(&lat.point(i)));
            prop_assert!((val - f(&[x, y, u, v])).abs() < 1e-12);
        }
    }
}
