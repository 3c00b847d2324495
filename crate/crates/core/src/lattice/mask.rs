use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Lattice;
use crate::domains::DomainSpec;
use crate::error::{Error, Result};

/// Sentinel for lattice nodes that are not in the closure.
pub const NO_SLOT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

impl NodeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Boundary => "boundary",
            NodeClass::Exterior => "exterior",
        }
    }
}

/// Per-node classification of a lattice against a domain.
///
/// Closure nodes are numbered densely by *slot* in lattice order; grid
/// functions, measures and cone rows all address nodes by slot.
#[derive(Debug)]
pub struct DomainMask {
    lattice: Lattice,
    name: String,
    class: Vec<NodeClass>,
    slot: Vec<u32>,
    closure: Vec<usize>,
    interior: Vec<u32>,
    boundary: Vec<u32>,
    /// Closure nodes that are not points of the open domain.
    on_boundary: Vec<bool>,
}

/// Classifies every node: closure nodes satisfy the closure predicate; a
/// closure node is `Boundary` when an axis neighbour is missing or outside
/// the closure, or when the node itself is not a point of the open domain.
pub fn classify_nodes(lat: &Lattice, dom: &DomainSpec) -> Result<Arc<DomainMask>> {
    if lat.dim() != dom.dim() {
        return Err(Error::DimensionMismatch(format!(
            "lattice is over C^{}, domain `{}` lives in C^{}",
            lat.dim(),
            dom.name(),
            dom.dim()
        )));
    }
    let margin = 2.0 * lat.h() - 1e-9 * lat.h();
    let covered = lat
        .bbox()
        .iter()
        .zip(dom.bbox())
        .all(|(&(l0, l1), &(d0, d1))| d0 - l0 >= margin && l1 - d1 >= margin);
    if !covered {
        return Err(Error::DomainNotCovered(dom.name().to_string()));
    }

    let flags: Vec<(bool, bool)> = (0..lat.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; lat.axes()],
            |p, idx| {
                lat.point_into(idx, p);
                let closure = dom.closure(p);
                (closure, closure && dom.interior(p))
            },
        )
        .collect();
    let in_closure: Vec<bool> = flags.iter().map(|f| f.0).collect();
    let open: Vec<bool> = flags.iter().map(|f| f.1).collect();
    Ok(Arc::new(DomainMask::from_flags(lat.clone(), dom.name().to_string(), &in_closure, &open)))
}

impl DomainMask {
    /// Mask where every node of the box is in the closure; nodes on the box
    /// faces are `Boundary`. Used for local patches around sample points.
    pub fn full(lat: &Lattice) -> Arc<Self> {
        let all = vec![true; lat.len()];
        Arc::new(Self::from_flags(lat.clone(), "box".into(), &all, &all))
    }

    fn from_flags(lattice: Lattice, name: String, in_closure: &[bool], open: &[bool]) -> Self {
        let n = lattice.len();
        let class: Vec<NodeClass> = (0..n)
            .into_par_iter()
            .map(|idx| {
                if !in_closure[idx] {
                    return NodeClass::Exterior;
                }
                let exposed = (0..lattice.axes()).any(|axis| {
                    [-1, 1].iter().any(|&s| match lattice.neighbor(idx, axis, s) {
                        Some(j) => !in_closure[j],
                        None => true,
                    })
                });
                if exposed || !open[idx] {
                    NodeClass::Boundary
                } else {
                    NodeClass::Interior
                }
            })
            .collect();

        let mut slot = vec![NO_SLOT; n];
        let mut closure = Vec::new();
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut on_boundary = Vec::new();
        for (idx, c) in class.iter().enumerate() {
            if *c == NodeClass::Exterior {
                continue;
            }
            let s = closure.len() as u32;
            slot[idx] = s;
            closure.push(idx);
            on_boundary.push(!open[idx]);
            match c {
                NodeClass::Interior => interior.push(s),
                _ => boundary.push(s),
            }
        }
        Self { lattice, name, class, slot, closure, interior, boundary, on_boundary }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.class
    }

    /// Closure slot of a lattice node.
    pub fn slot(&self, idx: usize) -> Option<u32> {
        match self.slot[idx] {
            NO_SLOT => None,
            s => Some(s),
        }
    }

    pub fn slots(&self) -> &[u32] {
        &self.slot
    }

    /// Lattice index of a closure slot.
    pub fn node(&self, slot: u32) -> usize {
        self.closure[slot as usize]
    }

    pub fn closure_len(&self) -> usize {
        self.closure.len()
    }

    pub fn closure_nodes(&self) -> &[usize] {
        &self.closure
    }

    pub fn interior_slots(&self) -> &[u32] {
        &self.interior
    }

    pub fn boundary_slots(&self) -> &[u32] {
        &self.boundary
    }

    pub fn slot_class(&self, slot: u32) -> NodeClass {
        self.class[self.closure[slot as usize]]
    }

    pub fn is_interior_slot(&self, slot: u32) -> bool {
        self.slot_class(slot) == NodeClass::Interior
    }

    /// True when the node is a point of the closure but not of the open domain.
    pub fn on_analytic_boundary(&self, slot: u32) -> bool {
        self.on_boundary[slot as usize]
    }

    pub fn slot_point(&self, slot: u32) -> Vec<f64> {
        self.lattice.point(self.node(slot))
    }

    /// Closure slot nearest to a point, by Euclidean distance.
    pub fn nearest_slot(&self, p: &[f64]) -> Option<u32> {
        let mut buf = vec![0.0; self.lattice.axes()];
        let mut best: Option<(f64, u32)> = None;
        for (s, &idx) in self.closure.iter().enumerate() {
            self.lattice.point_into(idx, &mut buf);
            let d: f64 = buf.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, s as u32));
            }
        }
        best.map(|(_, s)| s)
    }

    /// Two masks describe the same classification of the same lattice.
    pub fn same_as(&self, other: &DomainMask) -> bool {
        std::ptr::eq(self, other) || (self.lattice == other.lattice && self.class == other.class)
    }

    /// One row per node: `index,x1,..,x{2n},class`, ordered by index.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let axes = self.lattice.axes();
        write!(out, "index")?;
        for a in 1..=axes {
            write!(out, ",x{a}")?;
        }
        writeln!(out, ",class")?;
        let mut p = vec![0.0; axes];
        for (idx, c) in self.class.iter().enumerate() {
            self.lattice.point_into(idx, &mut p);
            write!(out, "{idx}")?;
            for x in &p {
                write!(out, ",{x}")?;
            }
            writeln!(out, ",{}", c.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_domain, DomainParams};
    use crate::lattice::{build_lattice, Lattice, DEFAULT_NODE_CAP};

    fn disk_mask(h: f64, half: f64) -> Arc<DomainMask> {
        let lat = build_lattice(&[(-half, half); 2], h, 1).unwrap();
        classify_nodes(&lat, &make_domain(&DomainParams::UnitDisk {}).unwrap()).unwrap()
    }

    #[test]
    fn unit_disk_classes() {
        let mask = disk_mask(0.5, 2.0);
        let lat = mask.lattice();
        assert_eq!(mask.class(lat.nearest_node(&[0.0, 0.0])), NodeClass::Interior);
        assert_eq!(mask.class(lat.nearest_node(&[1.0, 0.0])), NodeClass::Boundary);
        assert_eq!(mask.class(lat.nearest_node(&[1.0, 1.0])), NodeClass::Exterior);
    }

    #[test]
    fn uncovered_domain_is_rejected() {
        let lat = build_lattice(&[(-1.25, 1.25); 2], 0.5, 1).unwrap();
        let disk = make_domain(&DomainParams::UnitDisk {}).unwrap();
        assert!(matches!(classify_nodes(&lat, &disk), Err(Error::DomainNotCovered(_))));
    }

    #[test]
    fn boundary_nodes_touch_the_outside_or_the_edge() {
        let lat = Lattice::covering(&[(-1.0, 1.0); 2], 0.05, 1, 2, DEFAULT_NODE_CAP).unwrap();
        let slit = make_domain(&DomainParams::SlitDisk {}).unwrap();
        let mask = classify_nodes(&lat, &slit).unwrap();
        for &s in mask.boundary_slots() {
            let idx = mask.node(s);
            let exposed = (0..2).any(|a| {
                [-1, 1].iter().any(|&st| {
                    lat.neighbor(idx, a, st).is_none_or(|j| mask.class(j) == NodeClass::Exterior)
                })
            });
            assert!(exposed || mask.on_analytic_boundary(s));
        }
        let on_slit = lat.nearest_node(&[0.25, 0.0]);
        assert_eq!(mask.class(on_slit), NodeClass::Boundary);
        let mut interior_and_boundary = mask.interior_slots().to_vec();
        interior_and_boundary.extend_from_slice(mask.boundary_slots());
        interior_and_boundary.sort_unstable();
        interior_and_boundary.dedup();
        assert_eq!(interior_and_boundary.len(), mask.closure_len());
    }

    #[test]
    fn csv_dump_is_ordered() {
        let mask = disk_mask(0.5, 2.0);
        let mut buf = Vec::new();
        mask.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,x1,x2,class");
        assert_eq!(lines.len(), 1 + mask.lattice().len());
        assert!(lines[1].starts_with("0,-2,-2,exterior"));
    }
}
