//! The domain zoo: membership predicates and defining functions for the
//! bounded domains in C and C^2 used throughout the crate.
//!
//! Points are real coordinate slices `[x1, y1]` (n = 1) or
//! `[x1, y1, x2, y2]` (n = 2), with `z = x1 + i y1` and `w = x2 + i y2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thin features (the slit) are matched with this absolute slack so that
/// grid-aligned nodes land on them despite rounding in `k * h`.
const FEATURE_EPS: f64 = 1e-12;

/// Convex, even, nonnegative profile for the worm domain:
/// `eta(x) = c * max(0, |x| - 2 pi)^4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WormProfile {
    c: f64,
    a: f64,
}

impl WormProfile {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::BadParams(format!("worm profile needs c > 0, got {c}")));
        }
        Ok(Self { c, a: 2.0 * PI + c.powf(-0.25) })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Past `|x| > a` the profile exceeds 1, so the fibres of the worm are empty.
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn eta(&self, x: f64) -> f64 {
        let t = (x.abs() - 2.0 * PI).max(0.0);
        self.c * t.powi(4)
    }

    pub fn eta_prime(&self, x: f64) -> f64 {
        let t = (x.abs() - 2.0 * PI).max(0.0);
        4.0 * self.c * t.powi(3) * x.signum()
    }
}

pub fn make_worm_profile(c: f64) -> Result<WormProfile> {
    WormProfile::new(c)
}

/// What the literature asserts about a domain. `None` means unknown or not asserted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub hyperconvex: Option<bool>,
    pub p_hyperconvex: Option<bool>,
    pub strictly_hyperconvex: Option<bool>,
    pub fat: Option<bool>,
}

/// Named domain with parameters, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainParams {
    UnitDisk {},
    Disk { center: [f64; 2], radius: f64 },
    Annulus { r1: f64, r2: f64 },
    SlitDisk {},
    UnitBall2 {},
    Polydisk {},
    HartogsTriangle {},
    Worm { c: f64 },
    Intersect { a: Box<DomainParams>, b: Box<DomainParams> },
    Product { a: Box<DomainParams>, b: Box<DomainParams> },
}

#[derive(Clone, Debug)]
enum Shape {
    Disk { center: Complex64, radius: f64 },
    Annulus { r1: f64, r2: f64 },
    SlitDisk,
    Ball2,
    Polydisk,
    Hartogs,
    Worm(WormProfile),
    Intersect(Box<DomainSpec>, Box<DomainSpec>),
    Product(Box<DomainSpec>, Box<DomainSpec>),
}

/// Analytic description of a bounded domain in C^n, n in {1, 2}.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    name: String,
    dim: usize,
    bbox: Vec<(f64, f64)>,
    claims: Claims,
    shape: Shape,
}

fn zc(p: &[f64]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

fn wc(p: &[f64]) -> Complex64 {
    Complex64::new(p[2], p[3])
}

fn slit_distance(z: Complex64) -> f64 {
    let x = z.re.clamp(-0.5, 0.5);
    ((z.re - x).powi(2) + z.im.powi(2)).sqrt()
}

fn on_slit(z: Complex64) -> bool {
    z.im.abs() <= FEATURE_EPS && z.re.abs() <= 0.5 + FEATURE_EPS
}

impl DomainSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Complex dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bounding box of the closure, one interval per real coordinate.
    pub fn bbox(&self) -> &[(f64, f64)] {
        &self.bbox
    }

    pub fn claims(&self) -> Claims {
        self.claims
    }

    pub fn closure(&self, p: &[f64]) -> bool {
        match &self.shape {
            Shape::Disk { center, radius } => (zc(p) - center).norm() <= *radius,
            Shape::Annulus { r1, r2 } => {
                let r = zc(p).norm();
                *r1 <= r && r <= *r2
            }
            Shape::SlitDisk => zc(p).norm() <= 1.0,
            Shape::Ball2 => zc(p).norm_sqr() + wc(p).norm_sqr() <= 1.0,
            Shape::Polydisk => zc(p).norm() <= 1.0 && wc(p).norm() <= 1.0,
            Shape::Hartogs => {
                let (z, w) = (zc(p).norm(), wc(p).norm());
                z <= w && w <= 1.0
            }
            Shape::Worm(eta) => match worm_fibre(eta, p) {
                Some((gap, l)) => gap <= 0.0 && l.abs() <= eta.a() + 1.0,
                None => false,
            },
            Shape::Intersect(a, b) => a.closure(p) && b.closure(p),
            Shape::Product(a, b) => {
                let k = 2 * a.dim;
                a.closure(&p[..k]) && b.closure(&p[k..])
            }
        }
    }

    pub fn interior(&self, p: &[f64]) -> bool {
        match &self.shape {
            Shape::Disk { center, radius } => (zc(p) - center).norm() < *radius,
            Shape::Annulus { r1, r2 } => {
                let r = zc(p).norm();
                *r1 < r && r < *r2
            }
            Shape::SlitDisk => {
                let z = zc(p);
                z.norm() < 1.0 && !on_slit(z)
            }
            Shape::Ball2 => zc(p).norm_sqr() + wc(p).norm_sqr() < 1.0,
            Shape::Polydisk => zc(p).norm() < 1.0 && wc(p).norm() < 1.0,
            Shape::Hartogs => {
                let (z, w) = (zc(p).norm(), wc(p).norm());
                z < w && w < 1.0
            }
            Shape::Worm(eta) => match worm_fibre(eta, p) {
                Some((gap, l)) => gap < 0.0 && l.abs() < eta.a() + 1.0,
                None => false,
            },
            Shape::Intersect(a, b) => a.interior(p) && b.interior(p),
            Shape::Product(a, b) => {
                let k = 2 * a.dim;
                a.interior(&p[..k]) && b.interior(&p[k..])
            }
        }
    }

    /// Defining function: negative inside, positive outside the closure.
    pub fn defining(&self, p: &[f64]) -> f64 {
        match &self.shape {
            Shape::Disk { center, radius } => (zc(p) - center).norm() - radius,
            Shape::Annulus { r1, r2 } => {
                let r = zc(p).norm();
                (r1 - r).max(r - r2)
            }
            Shape::SlitDisk => {
                let z = zc(p);
                (z.norm() - 1.0).max(-slit_distance(z))
            }
            Shape::Ball2 => (zc(p).norm_sqr() + wc(p).norm_sqr()).sqrt() - 1.0,
            Shape::Polydisk => zc(p).norm().max(wc(p).norm()) - 1.0,
            Shape::Hartogs => {
                let (z, w) = (zc(p).norm(), wc(p).norm());
                (z - w).max(w - 1.0)
            }
            Shape::Worm(eta) => match worm_fibre(eta, p) {
                Some((gap, l)) => gap.max(l.abs() - (eta.a() + 1.0)),
                None => f64::INFINITY,
            },
            Shape::Intersect(a, b) => a.defining(p).max(b.defining(p)),
            Shape::Product(a, b) => {
                let k = 2 * a.dim;
                a.defining(&p[..k]).max(b.defining(&p[k..]))
            }
        }
    }
}

/// Returns `(|z - e^{iL}|^2 - 1 + eta(L), L)` with `L = log |w|^2`, or `None` at `w = 0`.
fn worm_fibre(eta: &WormProfile, p: &[f64]) -> Option<(f64, f64)> {
    let w2 = wc(p).norm_sqr();
    if w2 == 0.0 {
        return None;
    }
    let l = w2.ln();
    let centre = Complex64::from_polar(1.0, l);
    Some(((zc(p) - centre).norm_sqr() - 1.0 + eta.eta(l), l))
}

fn disk_bbox(center: Complex64, r: f64) -> Vec<(f64, f64)> {
    vec![(center.re - r, center.re + r), (center.im - r, center.im + r)]
}

fn claims(hx: bool, phx: bool, fat: bool) -> Claims {
    Claims {
        hyperconvex: Some(hx),
        p_hyperconvex: Some(phx),
        strictly_hyperconvex: None,
        fat: Some(fat),
    }
}

pub fn make_domain(params: &DomainParams) -> Result<DomainSpec> {
    let spec = match params {
        DomainParams::UnitDisk {} => DomainSpec {
            name: "unit_disk".into(),
            dim: 1,
            bbox: disk_bbox(Complex64::new(0.0, 0.0), 1.0),
            claims: claims(true, true, true),
            shape: Shape::Disk { center: Complex64::new(0.0, 0.0), radius: 1.0 },
        },
        DomainParams::Disk { center, radius } => {
            if !(*radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                return Err(Error::BadParams(format!("disk radius must be positive, got {radius}")));
            }
            let c = Complex64::new(center[0], center[1]);
            DomainSpec {
                name: format!("disk({}, {}; {})", center[0], center[1], radius),
                dim: 1,
                bbox: disk_bbox(c, *radius),
                claims: claims(true, true, true),
                shape: Shape::Disk { center: c, radius: *radius },
            }
        }
        DomainParams::Annulus { r1, r2 } => {
            if !(*r1 > 0.0 && r1 < r2 && r2.is_finite()) {
                return Err(Error::BadParams(format!("annulus needs 0 < r1 < r2, got r1={r1}, r2={r2}")));
            }
            DomainSpec {
                name: format!("annulus({r1}, {r2})"),
                dim: 1,
                bbox: disk_bbox(Complex64::new(0.0, 0.0), *r2),
                claims: claims(true, true, true),
                shape: Shape::Annulus { r1: *r1, r2: *r2 },
            }
        }
        DomainParams::SlitDisk {} => DomainSpec {
            name: "slit_disk".into(),
            dim: 1,
            bbox: disk_bbox(Complex64::new(0.0, 0.0), 1.0),
            claims: claims(true, false, false),
            shape: Shape::SlitDisk,
        },
        DomainParams::UnitBall2 {} => DomainSpec {
            name: "unit_ball2".into(),
            dim: 2,
            bbox: vec![(-1.0, 1.0); 4],
            claims: Claims { strictly_hyperconvex: Some(true), ..claims(true, true, true) },
            shape: Shape::Ball2,
        },
        DomainParams::Polydisk {} => DomainSpec {
            name: "polydisk".into(),
            dim: 2,
            bbox: vec![(-1.0, 1.0); 4],
            claims: claims(true, true, true),
            shape: Shape::Polydisk,
        },
        DomainParams::HartogsTriangle {} => DomainSpec {
            name: "hartogs_triangle".into(),
            dim: 2,
            bbox: vec![(-1.0, 1.0); 4],
            claims: Claims {
                strictly_hyperconvex: Some(false),
                ..claims(false, false, true)
            },
            shape: Shape::Hartogs,
        },
        DomainParams::Worm { c } => {
            let eta = WormProfile::new(*c)?;
            let rw = ((eta.a() + 1.0) / 2.0).exp();
            DomainSpec {
                name: format!("worm({c})"),
                dim: 2,
                bbox: vec![(-2.0, 2.0), (-2.0, 2.0), (-rw, rw), (-rw, rw)],
                claims: Claims {
                    strictly_hyperconvex: Some(false),
                    ..claims(true, true, true)
                },
                shape: Shape::Worm(eta),
            }
        }
        DomainParams::Intersect { a, b } => {
            combine(Combine::Intersect, &make_domain(a)?, &make_domain(b)?)?
        }
        DomainParams::Product { a, b } => {
            combine(Combine::Product, &make_domain(a)?, &make_domain(b)?)?
        }
    };
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Intersect,
    Product,
}

fn and_claim(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(x), Some(y)) if x && y => Some(true),
        _ => None,
    }
}

pub fn combine(op: Combine, d1: &DomainSpec, d2: &DomainSpec) -> Result<DomainSpec> {
    match op {
        Combine::Intersect => {
            if d1.dim != d2.dim {
                return Err(Error::DimensionMismatch(format!(
                    "cannot intersect a domain in C^{} with one in C^{}",
                    d1.dim, d2.dim
                )));
            }
            let bbox: Vec<(f64, f64)> = d1
                .bbox
                .iter()
                .zip(&d2.bbox)
                .map(|(&(a0, a1), &(b0, b1))| (a0.max(b0), a1.min(b1)))
                .collect();
            if bbox.iter().any(|&(lo, hi)| lo >= hi) {
                return Err(Error::EmptyIntersection);
            }
            let spec = DomainSpec {
                name: format!("({} ∩ {})", d1.name, d2.name),
                dim: d1.dim,
                bbox,
                claims: Claims {
                    hyperconvex: and_claim(d1.claims.hyperconvex, d2.claims.hyperconvex),
                    p_hyperconvex: and_claim(d1.claims.p_hyperconvex, d2.claims.p_hyperconvex),
                    strictly_hyperconvex: None,
                    fat: None,
                },
                shape: Shape::Intersect(Box::new(d1.clone()), Box::new(d2.clone())),
            };
            if !has_interior_sample(&spec) {
                return Err(Error::EmptyIntersection);
            }
            Ok(spec)
        }
        Combine::Product => {
            if d1.dim + d2.dim > 2 {
                return Err(Error::DimensionMismatch(format!(
                    "product would live in C^{}",
                    d1.dim + d2.dim
                )));
            }
            let mut bbox = d1.bbox.clone();
            bbox.extend_from_slice(&d2.bbox);
            Ok(DomainSpec {
                name: format!("({} × {})", d1.name, d2.name),
                dim: 2,
                bbox,
                claims: Claims {
                    hyperconvex: and_claim(d1.claims.hyperconvex, d2.claims.hyperconvex),
                    p_hyperconvex: match (d1.claims.p_hyperconvex, d2.claims.p_hyperconvex) {
                        (Some(false), _) | (_, Some(false)) => Some(false),
                        (a, b) => and_claim(a, b),
                    },
                    strictly_hyperconvex: None,
                    fat: match (d1.claims.fat, d2.claims.fat) {
                        (Some(false), _) | (_, Some(false)) => Some(false),
                        (a, b) => and_claim(a, b),
                    },
                },
                shape: Shape::Product(Box::new(d1.clone()), Box::new(d2.clone())),
            })
        }
    }
}

/// Best-effort emptiness check: scan a regular sample grid over the bounding box.
fn has_interior_sample(spec: &DomainSpec) -> bool {
    let per_axis: usize = if spec.dim == 1 { 256 } else { 24 };
    let d = spec.bbox.len();
    let mut p = vec![0.0; d];
    let total = per_axis.pow(d as u32);
    (0..total).any(|mut k| {
        for (axis, &(lo, hi)) in spec.bbox.iter().enumerate() {
            let i = k % per_axis;
            k /= per_axis;
            p[axis] = lo + (hi - lo) * (i as f64 + 0.5) / per_axis as f64;
        }
        spec.interior(&p)
    })
}
