//! Experiment execution, artifacts and reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use pluripot_core::envelope::EnvelopeResult;
use pluripot_core::glue::strictly_psh_default;
use pluripot_core::hyperconvex::{builtin_probes, Outcome, SupportOptions};
use pluripot_core::jensen::edwards_gap_with;
use pluripot_core::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{check_h, Expected, Experiment, ExperimentConfig, ValidationError};

/// One file written by a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory that records the hash of everything written to it.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        std::fs::write(self.dir.join(name), &buf).with_context(|| format!("writing {name}"))?;
        self.files.retain(|f| f.path != name);
        self.files.push(ManifestEntry { path: name.to_string(), bytes: buf.len(), sha256: hex::encode(Sha256::digest(&buf)) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")
        })
    }

    fn grid(&mut self, stem: &str, g: &GridFunction) -> anyhow::Result<()> {
        self.write(&format!("{stem}.csv"), |w| g.write_csv(w))?;
        self.write(&format!("{stem}.dat"), |w| g.write_plot(w))
    }

    /// Writes `manifest.json` listing every other file.
    pub fn finish(mut self) -> anyhow::Result<Vec<ManifestEntry>> {
        let files = self.files.clone();
        self.write_json("manifest.json", &json!({ "files": files }))?;
        Ok(files)
    }
}

/// Exit codes of the command line tool.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const NON_CONVERGENCE: u8 = 3;
    pub const UNEXPECTED_VERDICT: u8 = 4;
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ValidationError>().is_some() {
            return exit::VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonConvergence { .. } => exit::NON_CONVERGENCE,
                Error::NodeBudgetExceeded { .. }
                | Error::InvalidBox(_)
                | Error::DomainNotCovered(_)
                | Error::BadParams(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidProbe(_) => exit::VALIDATION,
                _ => exit::FAILURE,
            };
        }
    }
    exit::FAILURE
}

/// Domain, lattice and cones shared by the experiments of a run.
pub struct Setup {
    pub domain: DomainSpec,
    pub lattice: Lattice,
    pub mask: Arc<DomainMask>,
    pub config: ConeConfig,
    cone: Option<DiscretePshCone>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, h: f64) -> anyhow::Result<Self> {
        check_h(h)?;
        let domain = make_domain(&cfg.domain)?;
        let cap = cfg.node_cap()?;
        let lattice = match &cfg.lattice.bbox {
            Some(b) => {
                let bbox: Vec<(f64, f64)> = b.iter().map(|&[lo, hi]| (lo, hi)).collect();
                Lattice::with_cap(&bbox, h, domain.dim(), cap)?
            }
            None => Lattice::covering(domain.bbox(), h, domain.dim(), cfg.lattice.margin, cap)?,
        };
        let mask = classify_nodes(&lattice, &domain)?;
        let config = cfg.cone.resolve(domain.dim());
        Ok(Self { domain, lattice, mask, config, cone: None })
    }

    pub fn cone(&mut self) -> anyhow::Result<&DiscretePshCone> {
        if self.cone.is_none() {
            self.cone = Some(build_cone(&self.mask, &self.config)?);
        }
        Ok(self.cone.as_ref().unwrap())
    }

    fn probe_slots(&self, probes: &[Vec<f64>]) -> anyhow::Result<Vec<u32>> {
        let centre: Vec<f64> = self.lattice.bbox().iter().map(|&(a, b)| 0.5 * (a + b)).collect();
        let pts = if probes.is_empty() { std::slice::from_ref(&centre) } else { probes };
        pts.iter()
            .map(|p| {
                if p.len() != self.lattice.axes() {
                    return Err(ValidationError(format!("probe {p:?} needs {} coordinates", self.lattice.axes())).into());
                }
                self.mask.nearest_slot(p).ok_or_else(|| ValidationError("domain has no closure nodes".into()).into())
            })
            .collect()
    }

    fn ball(&self, centre: &[f64], radius: f64) -> Vec<u32> {
        self.mask
            .interior_slots()
            .iter()
            .copied()
            .filter(|&s| {
                let p = self.mask.slot_point(s);
                p.iter().zip(centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= radius * radius + 1e-12
            })
            .collect()
    }
}

fn point_value(mask: &DomainMask, g: &GridFunction, s: u32) -> Value {
    json!({ "node": mask.node(s), "coords": mask.slot_point(s), "value": g.at(s) })
}

fn envelope_or_best(res: Result<EnvelopeResult>, art: &mut Artifacts, stem: &str) -> anyhow::Result<EnvelopeResult> {
    match res {
        Ok(r) => Ok(r),
        Err(Error::NonConvergence { iterations, residual, best }) => {
            if let Some(b) = &best {
                art.grid(&format!("{stem}_best"), b)?;
            }
            Err(Error::NonConvergence { iterations, residual, best }.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Result of one experiment plus what the exit status should reflect.
pub struct ExperimentOutput {
    pub result: Value,
    pub unexpected_verdict: bool,
}

fn origin(dim: usize) -> Vec<f64> {
    vec![0.0; 2 * dim]
}

/// Runs one experiment, writing its grids under `stem`.
pub fn run_experiment(
    exp: &Experiment,
    setup: &mut Setup,
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    stem: &str,
) -> anyhow::Result<ExperimentOutput> {
    let solver = cfg.solver;
    let mut unexpected_verdict = false;
    let result = match exp {
        Experiment::Envelope { obstacle, probes, duality } => {
            let slots = setup.probe_slots(probes)?;
            let mask = setup.mask.clone();
            let phi = GridFunction::from_fn(&mask, "obstacle", |p| obstacle.eval(p))?;
            let cone = setup.cone()?;
            let env = envelope_or_best(psh_envelope(&phi, cone, &solver), art, stem)?;
            let mut points = Vec::new();
            for &s in &slots {
                let mut v = point_value(&mask, &env.envelope, s);
                if *duality {
                    let cert = edwards_gap_with(s, &phi, &env.envelope, cone, &LpOptions { solver, ..LpOptions::default() })?;
                    v["dual"] = json!(cert.dual);
                    v["gap"] = json!(cert.gap);
                    v["lp_method"] = json!(cert.method);
                }
                points.push(v);
            }
            let rows = cone.len();
            art.grid(&format!("{stem}_obstacle"), &phi)?;
            art.grid(&format!("{stem}_envelope"), &env.envelope)?;
            json!({ "summary": env.summary(), "cone_rows": rows, "probes": points })
        }
        Experiment::RelativeExtremal { k_center, k_radius, probes } => {
            let slots = setup.probe_slots(probes)?;
            let centre = k_center.clone().unwrap_or_else(|| origin(setup.domain.dim()));
            let k = setup.ball(&centre, *k_radius);
            let mask = setup.mask.clone();
            let u = relative_extremal(&k, setup.cone()?, &solver)?;
            art.grid(&format!("{stem}_relative_extremal"), &u)?;
            json!({ "k_nodes": k.len(), "min": u.min(), "probes": slots.iter().map(|&s| point_value(&mask, &u, s)).collect::<Vec<_>>() })
        }
        Experiment::Dirichlet { boundary_data, probes } => {
            let slots = setup.probe_slots(probes)?;
            let mask = setup.mask.clone();
            let f = GridFunction::from_fn(&mask, "boundary_data", |p| boundary_data.eval(p))?;
            let d = dirichlet_psh_extension(&f, setup.cone()?, &solver)?;
            art.grid(&format!("{stem}_harmonic"), &d.harmonic)?;
            art.grid(&format!("{stem}_extension"), &d.result.envelope)?;
            json!({
                "summary": d.summary(),
                "probes": slots.iter().map(|&s| point_value(&mask, &d.result.envelope, s)).collect::<Vec<_>>(),
            })
        }
        Experiment::Jensen { obstacle, probes, lp } => {
            let slots = setup.probe_slots(probes)?;
            let mask = setup.mask.clone();
            let phi = GridFunction::from_fn(&mask, "obstacle", |p| obstacle.eval(p))?;
            let cone = setup.cone()?;
            let mut out = Vec::new();
            for (i, &s) in slots.iter().enumerate() {
                let sol = jensen_lp(s, &phi, cone, lp)?;
                let (interior, boundary) = support_profile(&sol.measure, &mask)?;
                art.write(&format!("{stem}_measure_{i}.csv"), |w| write_measure(w, &sol.measure))?;
                out.push(json!({
                    "node": sol.z,
                    "coords": mask.slot_point(s),
                    "value": sol.value,
                    "method": sol.method,
                    "pivots": sol.pivots,
                    "reconstruction_error": sol.reconstruction_error,
                    "interior_mass": interior,
                    "boundary_mass": boundary,
                    "atoms": sol.measure.weights().len(),
                }));
            }
            json!({ "probes": out })
        }
        Experiment::Probe { random_probes, probe_points, probes } => {
            let seed = cfg.seed.unwrap_or(0);
            let mut all = probes.clone();
            all.extend(builtin_probes(&setup.domain, &setup.mask, *probe_points, *random_probes, seed));
            let outcome = disk_probe(&setup.domain, &all)?;
            json!({ "seed": cfg.seed, "probes": all.len(), "outcome": outcome })
        }
        Experiment::Classify { random_probes, probe_points, support_samples, cone_tolerance, expected } => {
            let opts = ClassifyOptions {
                seed: cfg.seed.unwrap_or(0),
                random_probes: *random_probes,
                probe_points: *probe_points,
                support: SupportOptions { samples: *support_samples, ..ClassifyOptions::default().support },
                solver,
                cone_tolerance: *cone_tolerance,
            };
            let verdict = classify_domain(&setup.domain, &setup.lattice, &setup.config, &opts)?;
            unexpected_verdict = *expected == Some(Expected::PHyperconvex) && verdict.verdict == Verdict::NotPHyperconvex;
            let witnesses: Vec<&str> =
                verdict.reasons.iter().filter(|r| r.outcome == Outcome::Witness).map(|r| r.test.as_str()).collect();
            json!({ "seed": cfg.seed, "expected": expected, "witnessed_by": witnesses, "verdict": verdict })
        }
        Experiment::Glue { u, e_radius, cutoff, exhaustion_tol } => {
            let mask = setup.mask.clone();
            let e = setup.ball(&origin(setup.domain.dim()), *e_radius);
            let cone = setup.cone()?;
            let psi = build_exhaustion(cone, &solver.with_tol(*exhaustion_tol))?;
            let ug = GridFunction::from_fn(&mask, "u", |p| u.eval(p))?;
            let (glued, params) = max_glue(&ug, &psi, &e)?;
            let violation = cone_violation(&glued, cone)?;
            let exact_on_e = e.iter().all(|&s| glued.at(s) == ug.at(s) - params.m);
            let b: Vec<f64> = mask.boundary_slots().iter().map(|&s| glued.at(s)).collect();
            let constant_boundary = b.windows(2).all(|w| w[0] == w[1]);
            let phi = strictly_psh_default(&mask)?;
            let cut = cutoff_extension(&ug, &psi, &phi, cone, cutoff)?;
            art.grid(&format!("{stem}_exhaustion"), &psi)?;
            art.grid(&format!("{stem}_glued"), &glued)?;
            art.grid(&format!("{stem}_cutoff"), &cut.extension)?;
            json!({
                "e_nodes": e.len(),
                "params": params,
                "exact_on_e": exact_on_e,
                "constant_boundary": constant_boundary,
                "violation": violation.worst,
                "tolerance": violation.tolerance,
                "cutoff": {
                    "delta": cutoff.delta,
                    "s": cutoff.s,
                    "c": cut.c,
                    "m": cut.m,
                    "doublings": cut.doublings,
                    "boundary_error": cut.boundary_error,
                    "violation": cut.violation.worst,
                },
            })
        }
    };
    Ok(ExperimentOutput { result, unexpected_verdict })
}

fn write_measure(w: &mut Vec<u8>, mu: &DiscreteMeasure) -> std::io::Result<()> {
    let lat = mu.mask().lattice();
    write!(w, "index")?;
    for a in 0..lat.axes() {
        write!(w, ",x{a}")?;
    }
    writeln!(w, ",weight")?;
    for atom in mu.atoms() {
        write!(w, "{}", atom.node)?;
        for c in &atom.coords {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",{}", atom.weight)?;
    }
    Ok(())
}

/// Outcome of a complete run.
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub exit_code: u8,
    pub manifest: Vec<ManifestEntry>,
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("pluripot-out"))
}

/// Executes every experiment of the config in order. On failure the
/// report is written with `partial: true` before the error is returned.
pub fn run(config_path: &Path, out: Option<&Path>) -> anyhow::Result<RunSummary> {
    let cfg = ExperimentConfig::load(config_path)?;
    run_config(&cfg, out)
}

pub fn run_config(cfg: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<RunSummary> {
    let started = Instant::now();
    let mut setup = Setup::new(cfg, cfg.lattice.h)?;
    let out_dir = output_dir(cfg, out);
    let mut art = Artifacts::create(&out_dir)?;
    art.write("domain_mask.csv", |w| setup.mask.write_csv(w))?;
    let mut results = Vec::new();
    let mut timings = Vec::new();
    let mut unexpected = false;
    let mut failure = None;
    for (i, exp) in cfg.experiments.iter().enumerate() {
        let t = Instant::now();
        let stem = format!("e{i:02}_{}", exp.kind());
        match run_experiment(exp, &mut setup, cfg, &mut art, &stem) {
            Ok(o) => {
                unexpected |= o.unexpected_verdict;
                results.push(json!({ "index": i, "kind": exp.kind(), "result": o.result }));
            }
            Err(e) => {
                results.push(json!({ "index": i, "kind": exp.kind(), "error": format!("{e:#}") }));
                failure = Some(e.context(format!("experiment {i} ({})", exp.kind())));
            }
        }
        timings.push(json!({ "index": i, "kind": exp.kind(), "seconds": t.elapsed().as_secs_f64() }));
        if failure.is_some() {
            break;
        }
    }
    let report = json!({
        "schema": crate::config::SCHEMA,
        "partial": failure.is_some(),
        "config": cfg,
        "lattice": { "shape": setup.lattice.shape(), "h": setup.lattice.h(), "closure_nodes": setup.mask.closure_len() },
        "experiments": results,
    });
    art.write_json("report.json", &report)?;
    art.write_json("timings.json", &json!({ "total_seconds": started.elapsed().as_secs_f64(), "experiments": timings }))?;
    let manifest = art.finish()?;
    if let Some(e) = failure {
        return Err(e);
    }
    let exit_code = if unexpected { exit::UNEXPECTED_VERDICT } else { exit::OK };
    Ok(RunSummary { out_dir, exit_code, manifest })
}

/// One line of the refinement table.
#[derive(Clone, Debug, Serialize)]
pub struct RefineRow {
    pub experiment: usize,
    pub kind: String,
    pub h: f64,
    pub probe: usize,
    pub coords: Vec<f64>,
    pub value: f64,
    pub gap: Option<f64>,
    pub boundary_mismatch: Option<f64>,
}

/// Observed convergence of one probe across the spacings.
#[derive(Clone, Debug, Serialize)]
pub struct Convergence {
    pub experiment: usize,
    pub probe: usize,
    pub values: Vec<f64>,
    /// Whether the values move in one direction as `h` decreases.
    pub monotone: bool,
    /// `log(|v₁ − v₂| / |v₂ − v₃|) / log(h₁ / h₂)` from the three finest spacings.
    pub order: Option<f64>,
}

/// Repeats the grid experiments of the config at each spacing.
pub fn refine(config_path: &Path, hs: &[f64], out: Option<&Path>) -> anyhow::Result<RunSummary> {
    let cfg = ExperimentConfig::load(config_path)?;
    refine_config(&cfg, hs, out)
}

pub fn refine_config(cfg: &ExperimentConfig, hs: &[f64], out: Option<&Path>) -> anyhow::Result<RunSummary> {
    if hs.len() < 2 {
        return Err(ValidationError("refine needs at least two grid spacings".into()).into());
    }
    for &h in hs {
        check_h(h)?;
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ValidationError("grid spacings must be strictly decreasing".into()).into());
    }
    let out_dir = output_dir(cfg, out);
    let mut art = Artifacts::create(&out_dir)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &h in hs {
        let mut setup = Setup::new(cfg, h)?;
        for (i, exp) in cfg.experiments.iter().enumerate() {
            let stem = format!("h{h}_e{i:02}_{}", exp.kind());
            let probe_list = match exp {
                Experiment::Envelope { probes, .. }
                | Experiment::RelativeExtremal { probes, .. }
                | Experiment::Dirichlet { probes, .. }
                | Experiment::Jensen { probes, .. } => probes.clone(),
                _ => {
                    if h == hs[0] {
                        skipped.push(json!({ "index": i, "kind": exp.kind() }));
                    }
                    continue;
                }
            };
            let slots = setup.probe_slots(&probe_list)?;
            let o = run_experiment(exp, &mut setup, cfg, &mut art, &stem)?;
            let r = &o.result;
            let mismatch = r["summary"]["boundary_mismatch"].as_f64();
            let probes = r["probes"].as_array().cloned().unwrap_or_default();
            for (k, (p, &s)) in probes.iter().zip(&slots).enumerate() {
                rows.push(RefineRow {
                    experiment: i,
                    kind: exp.kind().to_string(),
                    h,
                    probe: k,
                    coords: setup.mask.slot_point(s),
                    value: p["value"].as_f64().unwrap_or(f64::NAN),
                    gap: p["gap"].as_f64(),
                    boundary_mismatch: mismatch,
                });
            }
        }
    }
    let mut conv = Vec::new();
    let mut keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.experiment, r.probe)).collect();
    keys.dedup();
    keys.sort_unstable();
    keys.dedup();
    for (e, p) in keys {
        let values: Vec<f64> = rows.iter().filter(|r| r.experiment == e && r.probe == p).map(|r| r.value).collect();
        let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let monotone = d.iter().all(|&x| x >= 0.0) || d.iter().all(|&x| x <= 0.0);
        let order = (values.len() >= 3).then(|| {
            let n = values.len();
            let (a, b) = ((values[n - 2] - values[n - 3]).abs(), (values[n - 1] - values[n - 2]).abs());
            (a / b).ln() / (hs[n - 3] / hs[n - 2]).ln()
        });
        conv.push(Convergence { experiment: e, probe: p, values, monotone, order: order.filter(|o| o.is_finite()) });
    }
    art.write("refine.csv", |w| {
        writeln!(w, "experiment,kind,h,probe,coords,value,gap,boundary_mismatch")?;
        for r in &rows {
            let coords: Vec<String> = r.coords.iter().map(f64::to_string).collect();
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.experiment,
                r.kind,
                r.h,
                r.probe,
                coords.join(" "),
                r.value,
                opt(r.gap),
                opt(r.boundary_mismatch)
            )?;
        }
        Ok(())
    })?;
    art.write_json(
        "refine.json",
        &json!({ "schema": crate::config::SCHEMA, "config": cfg, "h": hs, "rows": rows, "convergence": conv, "skipped": skipped }),
    )?;
    let manifest = art.finish()?;
    Ok(RunSummary { out_dir, exit_code: exit::OK, manifest })
}
