//! Tests of the hyperconvexity hierarchy and an aggregate classifier.
//!
//! Every refutation carries a concrete witness: a node of the interior of
//! the closure that is not a domain point, an analytic disk meeting the
//! boundary at an interior parameter while leaving it elsewhere, or a
//! discrete Jensen measure at a boundary node with mass inside the domain.

use std::collections::VecDeque;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domains::DomainSpec;
use crate::envelope::{relative_extremal, SolverOptions};
use crate::error::{Error, Result};
use crate::jensen::{jensen_lp, reachable_rows, support_profile, DiscreteMeasure, LpMethod, LpOptions};
use crate::lattice::{build_cone, classify_nodes, CenterScope, ConeConfig, DiscretePshCone, DomainMask, Lattice};
use crate::psh::{cone_violation, GridFunction};

/// Tolerance on the defining function when checking that a probe stays in
/// the closure; absorbs rounding on curved boundaries.
const PROBE_SLACK: f64 = 1e-9;

/// Polynomial disk `f(ζ) = Σ c_k ζ^k` into C^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDiskProbe {
    /// `coeffs[k][j] = [re, im]` of the j-th coordinate of `c_k`.
    pub coeffs: Vec<Vec<[f64; 2]>>,
    /// Number of interior rings, including the centre `ζ = 0`.
    pub rings: usize,
    /// Samples per ring and on the unit circle.
    pub circle_samples: usize,
}

impl AnalyticDiskProbe {
    pub fn new(coeffs: Vec<Vec<Complex64>>) -> Self {
        Self {
            coeffs: coeffs.into_iter().map(|c| c.into_iter().map(|z| [z.re, z.im]).collect()).collect(),
            rings: 8,
            circle_samples: 32,
        }
    }

    /// `f(ζ) = b + s ζ e_j`.
    pub fn coordinate(base: &[f64], axis: usize, scale: f64) -> Self {
        let n = base.len() / 2;
        let c0 = (0..n).map(|j| Complex64::new(base[2 * j], base[2 * j + 1])).collect();
        let c1 = (0..n).map(|j| Complex64::new(if j == axis { scale } else { 0.0 }, 0.0)).collect();
        Self::new(vec![c0, c1])
    }

    pub fn dim(&self) -> usize {
        self.coeffs.first().map_or(0, Vec::len)
    }

    /// `f(ζ)` as a point of R^{2n}.
    pub fn eval(&self, zeta: Complex64) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; 2 * n];
        let mut pow = Complex64::new(1.0, 0.0);
        for c in &self.coeffs {
            for (j, v) in c.iter().enumerate() {
                let term = Complex64::new(v[0], v[1]) * pow;
                out[2 * j] += term.re;
                out[2 * j + 1] += term.im;
            }
            pow *= zeta;
        }
        out
    }

    /// Sample parameters with a flag telling whether they lie in the open disk.
    pub fn samples(&self) -> Vec<(Complex64, bool)> {
        let mut out = vec![(Complex64::new(0.0, 0.0), true)];
        let m = self.circle_samples.max(1);
        for ring in 1..=self.rings {
            let r = ring as f64 / (self.rings + 1) as f64;
            for k in 0..m {
                out.push((Complex64::from_polar(r, 2.0 * std::f64::consts::PI * k as f64 / m as f64), true));
            }
        }
        for k in 0..m {
            out.push((Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64), false));
        }
        out
    }

    fn fits(&self, dom: &DomainSpec) -> bool {
        self.samples().iter().all(|(z, _)| in_closure(dom, &self.eval(*z)))
    }
}

fn in_closure(dom: &DomainSpec, p: &[f64]) -> bool {
    dom.closure(p) || dom.defining(p) <= PROBE_SLACK
}

/// A disk that touches the boundary at an interior parameter and enters the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeWitness {
    pub probe: AnalyticDiskProbe,
    pub zeta_boundary: [f64; 2],
    pub boundary_point: Vec<f64>,
    pub zeta_inside: [f64; 2],
    pub inside_point: Vec<f64>,
}

/// Result of [`disk_probe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub checked: usize,
    pub witness: Option<ProbeWitness>,
}

fn probe_witness(dom: &DomainSpec, probe: &AnalyticDiskProbe) -> Option<ProbeWitness> {
    let pts: Vec<(Complex64, bool, Vec<f64>)> =
        probe.samples().into_iter().map(|(z, inner)| (z, inner, probe.eval(z))).collect();
    let on_boundary = pts.iter().find(|(_, inner, p)| *inner && dom.closure(p) && !dom.interior(p))?;
    let inside = pts.iter().find(|(_, _, p)| dom.interior(p))?;
    Some(ProbeWitness {
        probe: probe.clone(),
        zeta_boundary: [on_boundary.0.re, on_boundary.0.im],
        boundary_point: on_boundary.2.clone(),
        zeta_inside: [inside.0.re, inside.0.im],
        inside_point: inside.2.clone(),
    })
}

/// Searches the probes for a disk with `f(ζ₀) ∈ ∂Ω` at some interior
/// parameter while another sample lies in `Ω`.
pub fn disk_probe(dom: &DomainSpec, probes: &[AnalyticDiskProbe]) -> Result<ProbeOutcome> {
    for (i, probe) in probes.iter().enumerate() {
        if probe.dim() != dom.dim() {
            return Err(Error::DimensionMismatch(format!("probe {i} maps into C^{}", probe.dim())));
        }
        if let Some((z, _)) = probe.samples().into_iter().find(|(z, _)| !in_closure(dom, &probe.eval(*z))) {
            return Err(Error::InvalidProbe(format!("probe {i} leaves the closure at ζ = {z}")));
        }
        if let Some(w) = probe_witness(dom, probe) {
            return Ok(ProbeOutcome { checked: i + 1, witness: Some(w) });
        }
    }
    Ok(ProbeOutcome { checked: probes.len(), witness: None })
}

/// Farthest-point sample of `count` slots from `pool`, seeded at the slot
/// nearest `seed_point`; ties go to the lowest slot.
pub fn farthest_point_sample(mask: &DomainMask, pool: &[u32], count: usize, seed_point: &[f64]) -> Vec<u32> {
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    let pts: Vec<Vec<f64>> = pool.iter().map(|&s| mask.slot_point(s)).collect();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut first = 0;
    for (i, p) in pts.iter().enumerate() {
        if d2(p, seed_point) < d2(&pts[first], seed_point) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = pts.iter().map(|p| d2(p, &pts[first])).collect();
    while chosen.len() < count.min(pool.len()) {
        let mut best = 0;
        for i in 0..pts.len() {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        if dist[best] == 0.0 {
            break;
        }
        chosen.push(best);
        for i in 0..pts.len() {
            dist[i] = dist[i].min(d2(&pts[i], &pts[best]));
        }
    }
    chosen.into_iter().map(|i| pool[i]).collect()
}

/// Coordinate disks through analytic-boundary nodes, shrunk by halving until
/// they fit the closure, followed by `random` seeded degree-two disks centred
/// at interior nodes.
pub fn builtin_probes(dom: &DomainSpec, mask: &DomainMask, points: usize, random: usize, seed: u64) -> Vec<AnalyticDiskProbe> {
    let centre: Vec<f64> = dom.bbox().iter().map(|&(a, b)| 0.5 * (a + b)).collect();
    let edge: Vec<u32> = mask.boundary_slots().iter().copied().filter(|&s| mask.on_analytic_boundary(s)).collect();
    let mut out = Vec::new();
    for s in farthest_point_sample(mask, &edge, points, &centre) {
        let b = mask.slot_point(s);
        for axis in 0..dom.dim() {
            let mut scale = 1.0;
            for _ in 0..20 {
                let p = AnalyticDiskProbe::coordinate(&b, axis, scale);
                if p.fits(dom) {
                    out.push(p);
                    break;
                }
                scale /= 2.0;
            }
        }
    }
    let interior = mask.interior_slots();
    if interior.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dom.dim();
    let gauss = |rng: &mut ChaCha8Rng| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    for _ in 0..random {
        let b = mask.slot_point(interior[rng.random_range(0..interior.len())]);
        let c0: Vec<Complex64> = (0..n).map(|j| Complex64::new(b[2 * j], b[2 * j + 1])).collect();
        let c1: Vec<Complex64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let c2: Vec<Complex64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let mut t = 1.0;
        for _ in 0..40 {
            let p = AnalyticDiskProbe::new(vec![c0.clone(), c1.iter().map(|c| c * t).collect(), c2.iter().map(|c| c * t).collect()]);
            if p.fits(dom) {
                out.push(p);
                break;
            }
            t /= 2.0;
        }
    }
    out
}

/// Nodes of the discrete interior of the closure that are not domain points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatnessReport {
    pub fat: bool,
    pub witnesses: Vec<usize>,
    /// Coordinates of up to 16 witnesses.
    pub examples: Vec<Vec<f64>>,
}

/// Flags every node whose axis neighbours all lie in the closure but which
/// is not a point of the open domain.
pub fn fatness_test(dom: &DomainSpec, lat: &Lattice) -> Result<FatnessReport> {
    let mask = classify_nodes(lat, dom)?;
    Ok(fatness_of(&mask))
}

fn fatness_of(mask: &DomainMask) -> FatnessReport {
    let lat = mask.lattice();
    let witnesses: Vec<usize> = (0..mask.closure_len() as u32)
        .filter(|&s| mask.on_analytic_boundary(s))
        .map(|s| mask.node(s))
        .filter(|&idx| {
            (0..lat.axes()).all(|a| [-1, 1].iter().all(|&st| lat.neighbor(idx, a, st).and_then(|j| mask.slot(j)).is_some()))
        })
        .collect();
    FatnessReport {
        fat: witnesses.is_empty(),
        examples: witnesses.iter().take(16).map(|&i| lat.point(i)).collect(),
        witnesses,
    }
}

/// Axis-step distance from every closure slot to the nearest boundary slot.
fn boundary_depth(mask: &DomainMask) -> Vec<u32> {
    let lat = mask.lattice();
    let mut depth = vec![u32::MAX; mask.closure_len()];
    let mut queue = VecDeque::new();
    for &s in mask.boundary_slots() {
        depth[s as usize] = 0;
        queue.push_back(s);
    }
    while let Some(s) = queue.pop_front() {
        let idx = mask.node(s);
        for a in 0..lat.axes() {
            for st in [-1, 1] {
                if let Some(t) = lat.neighbor(idx, a, st).and_then(|j| mask.slot(j)) {
                    if depth[t as usize] == u32::MAX {
                        depth[t as usize] = depth[s as usize] + 1;
                        queue.push_back(t);
                    }
                }
            }
        }
    }
    depth
}

/// Relative extremal function of the interior nodes at least two axis steps
/// from the boundary (or of the deepest node when there are none).
pub fn build_exhaustion(cone: &DiscretePshCone, opts: &SolverOptions) -> Result<GridFunction> {
    let mask = cone.mask();
    if mask.interior_slots().is_empty() {
        return Err(Error::Precondition("mask has no interior nodes".into()));
    }
    let depth = boundary_depth(mask);
    let mut k: Vec<u32> = mask.interior_slots().iter().copied().filter(|&s| depth[s as usize] >= 2).collect();
    if k.is_empty() {
        let deepest = mask.interior_slots().iter().copied().max_by_key(|&s| (depth[s as usize], std::cmp::Reverse(s))).unwrap();
        k.push(deepest);
    }
    let mut psi = relative_extremal(&k, cone, opts)?;
    psi.set_role("exhaustion");
    Ok(psi)
}

/// One sampled boundary node of [`boundary_support_test`].
#[derive(Clone, Debug, Serialize)]
pub struct SupportSample {
    pub node: usize,
    pub coords: Vec<f64>,
    pub value: f64,
    pub interior_mass: f64,
    pub method: LpMethod,
    pub measure: DiscreteMeasure,
}

/// Result of [`boundary_support_test`].
#[derive(Clone, Debug, Serialize)]
pub struct SupportReport {
    pub samples: Vec<SupportSample>,
    pub max_interior_mass: f64,
    pub tolerance: f64,
    pub passes: bool,
}

impl SupportReport {
    /// The sample carrying the most interior mass.
    pub fn worst(&self) -> Option<&SupportSample> {
        self.samples.iter().max_by(|a, b| a.interior_mass.total_cmp(&b.interior_mass))
    }
}

/// Options for [`boundary_support_test`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportOptions {
    pub samples: usize,
    pub tolerance: f64,
    pub lp: LpOptions,
}

impl Default for SupportOptions {
    fn default() -> Self {
        Self { samples: 32, tolerance: 1e-6, lp: LpOptions::default() }
    }
}

/// Solves the Jensen LP against `phi` at farthest-point-sampled boundary
/// nodes and reports the largest interior mass of an optimal measure. Uses
/// the dense simplex when few rows are reachable and the local simplex
/// otherwise.
pub fn boundary_support_test(cone: &DiscretePshCone, phi: &GridFunction, opts: &SupportOptions) -> Result<SupportReport> {
    phi.require_same(cone.mask())?;
    let mask = cone.mask();
    let scale = 1e-12 * (1.0 + phi.range());
    if mask.boundary_slots().iter().any(|&s| phi.at(s).abs() > scale) {
        return Err(Error::Precondition("φ must vanish on boundary nodes".into()));
    }
    if mask.interior_slots().iter().any(|&s| phi.at(s) >= 0.0) {
        return Err(Error::Precondition("φ must be strictly negative on interior nodes".into()));
    }
    let centre: Vec<f64> = mask.lattice().bbox().iter().map(|&(a, b)| 0.5 * (a + b)).collect();
    let nodes = farthest_point_sample(mask, mask.boundary_slots(), opts.samples, &centre);
    let mut samples = Vec::with_capacity(nodes.len());
    for z in nodes {
        let lp = match opts.lp.method {
            Some(_) => opts.lp,
            None if reachable_rows(z, cone, None).len() <= opts.lp.dense_limit => opts.lp.with_method(LpMethod::Dense),
            None => opts.lp.with_method(LpMethod::Local),
        };
        let sol = jensen_lp(z, phi, cone, &lp)?;
        samples.push(sample_of(mask, z, sol)?);
    }
    let max_interior_mass = samples.iter().map(|s| s.interior_mass).fold(0.0, f64::max);
    Ok(SupportReport { passes: max_interior_mass <= opts.tolerance, max_interior_mass, tolerance: opts.tolerance, samples })
}

fn sample_of(mask: &Arc<DomainMask>, z: u32, sol: crate::jensen::JensenSolution) -> Result<SupportSample> {
    let (interior_mass, _) = support_profile(&sol.measure, mask)?;
    Ok(SupportSample {
        node: mask.node(z),
        coords: mask.slot_point(z),
        value: sol.value,
        interior_mass,
        method: sol.method,
        measure: sol.measure,
    })
}

/// Overall classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotPHyperconvex,
    EvidencePHyperconvex,
    Inconclusive,
}

/// Outcome of one sub-test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Witness,
    Pass,
    Error,
}

/// One line of a verdict.
#[derive(Clone, Debug, Serialize)]
pub struct Reason {
    pub test: String,
    pub outcome: Outcome,
    pub detail: serde_json::Value,
}

/// Verdict with the reasons behind it, in fixed test order.
#[derive(Clone, Debug, Serialize)]
pub struct ClassificationVerdict {
    pub domain: String,
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

impl ClassificationVerdict {
    pub fn reason(&self, test: &str) -> Option<&Reason> {
        self.reasons.iter().find(|r| r.test == test)
    }
}

/// Knobs of [`classify_domain`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub seed: u64,
    pub random_probes: usize,
    pub probe_points: usize,
    pub support: SupportOptions,
    pub solver: SolverOptions,
    /// Exhaustion rows may exceed this before they count as a violation.
    pub cone_tolerance: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            random_probes: 100,
            probe_points: 32,
            support: SupportOptions { lp: LpOptions { dense_limit: 1500, local_depth: 2, ..LpOptions::default() }, ..SupportOptions::default() },
            solver: SolverOptions::default(),
            cone_tolerance: 1e-6,
        }
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// A closure row centred at a boundary node whose circle measure charges
/// interior nodes: a Jensen measure at a boundary point with interior mass.
#[derive(Clone, Debug, Serialize)]
pub struct RowWitness {
    pub node: usize,
    pub coords: Vec<f64>,
    pub stencil: String,
    pub violation: f64,
    pub interior_mass: f64,
    pub measure: DiscreteMeasure,
}

/// Measure `w / coef` of a closure row, as a Jensen measure at its centre.
pub fn row_measure(cone: &DiscretePshCone, row: usize) -> Result<DiscreteMeasure> {
    let r = &cone.rows()[row];
    DiscreteMeasure::from_multipliers(r.center, &[(row, 1.0 / r.center_coef)], cone)
}

fn exhaustion_check(closure: &DiscretePshCone, interior: &DiscretePshCone, psi: &GridFunction, tol: f64) -> Result<(Outcome, serde_json::Value)> {
    let mask = closure.mask();
    let inner = cone_violation(psi, interior)?;
    let outer = cone_violation(psi, closure)?;
    let zero_on_boundary = mask.boundary_slots().iter().all(|&s| psi.at(s) == 0.0);
    let negative_inside = mask.interior_slots().iter().all(|&s| psi.at(s) < 0.0);
    let mut detail = serde_json::json!({
        "interior_cone_violation": inner.worst,
        "closure_cone_violation": outer.worst,
        "closure_worst_stencil": outer.stencil,
        "zero_on_boundary": zero_on_boundary,
        "negative_inside": negative_inside,
        "min": psi.min(),
    });
    if outer.worst > 10.0 * tol {
        let row = outer.row.expect("a positive violation has a row");
        let center = closure.rows()[row].center;
        if !mask.is_interior_slot(center) {
            let measure = row_measure(closure, row)?;
            let (interior_mass, _) = support_profile(&measure, mask)?;
            if interior_mass > 0.0 {
                let w = RowWitness {
                    node: mask.node(center),
                    coords: mask.slot_point(center),
                    stencil: closure.row_label(row),
                    violation: outer.worst,
                    interior_mass,
                    measure,
                };
                detail["witness"] = json(&w);
                return Ok((Outcome::Witness, detail));
            }
        }
    }
    let ok = inner.worst <= tol && zero_on_boundary && negative_inside && outer.worst <= 10.0 * tol;
    Ok((if ok { Outcome::Pass } else { Outcome::Error }, detail))
}

/// Runs fatness, disk probes, the exhaustion against the closure cone and
/// the boundary support test. Any witness gives `NotPHyperconvex`; all
/// passes give `EvidencePHyperconvex`; anything else is `Inconclusive`.
/// `config.scope` is ignored: both cones are built.
pub fn classify_domain(dom: &DomainSpec, lat: &Lattice, config: &ConeConfig, opts: &ClassifyOptions) -> Result<ClassificationVerdict> {
    let mask = classify_nodes(lat, dom)?;
    let mut reasons = Vec::new();

    let fat = fatness_of(&mask);
    reasons.push(Reason {
        test: "fatness".into(),
        outcome: if fat.fat { Outcome::Pass } else { Outcome::Witness },
        detail: serde_json::json!({ "witness_count": fat.witnesses.len(), "examples": fat.examples }),
    });

    let probes = builtin_probes(dom, &mask, opts.probe_points, opts.random_probes, opts.seed);
    reasons.push(match disk_probe(dom, &probes) {
        Ok(o) => Reason {
            test: "disk_probe".into(),
            outcome: if o.witness.is_some() { Outcome::Witness } else { Outcome::Pass },
            detail: serde_json::json!({ "probes": probes.len(), "checked": o.checked, "witness": o.witness, "seed": opts.seed }),
        },
        Err(e) => Reason { test: "disk_probe".into(), outcome: Outcome::Error, detail: json(&e.to_string()) },
    });

    let cones = build_cone(&mask, &config.clone().with_scope(CenterScope::Closure))
        .map(|closure| (closure.interior_part(), closure));
    let (interior, closure) = match cones {
        Ok(c) => c,
        Err(e) => {
            for test in ["exhaustion", "boundary_support"] {
                reasons.push(Reason { test: test.into(), outcome: Outcome::Error, detail: json(&e.to_string()) });
            }
            return Ok(aggregate(dom, reasons));
        }
    };
    let psi = build_exhaustion(&interior, &opts.solver);
    match &psi {
        Ok(psi) => {
            let (outcome, detail) = match exhaustion_check(&closure, &interior, psi, opts.cone_tolerance) {
                Ok(v) => v,
                Err(e) => (Outcome::Error, json(&e.to_string())),
            };
            reasons.push(Reason { test: "exhaustion".into(), outcome, detail });
        }
        Err(e) => reasons.push(Reason { test: "exhaustion".into(), outcome: Outcome::Error, detail: json(&e.to_string()) }),
    }

    reasons.push(match psi.as_ref().map_err(|e| e.to_string()).and_then(|psi| {
        boundary_support_test(&closure, psi, &opts.support).map_err(|e| e.to_string())
    }) {
        Ok(rep) => {
            let worst = rep.worst().filter(|s| s.interior_mass > opts.support.tolerance);
            Reason {
                test: "boundary_support".into(),
                outcome: if rep.passes { Outcome::Pass } else { Outcome::Witness },
                detail: serde_json::json!({
                    "samples": rep.samples.len(),
                    "max_interior_mass": rep.max_interior_mass,
                    "tolerance": rep.tolerance,
                    "witness": worst,
                }),
            }
        }
        Err(e) => Reason { test: "boundary_support".into(), outcome: Outcome::Error, detail: json(&e) },
    });
    Ok(aggregate(dom, reasons))
}

fn aggregate(dom: &DomainSpec, reasons: Vec<Reason>) -> ClassificationVerdict {
    let verdict = if reasons.iter().any(|r| r.outcome == Outcome::Witness) {
        Verdict::NotPHyperconvex
    } else if reasons.len() == 4 && reasons.iter().all(|r| r.outcome == Outcome::Pass) {
        Verdict::EvidencePHyperconvex
    } else {
        Verdict::Inconclusive
    };
    ClassificationVerdict { domain: dom.name().to_string(), verdict, reasons }
}
