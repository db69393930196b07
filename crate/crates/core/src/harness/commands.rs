//! The `simulate`, `twin`, `ot`, `certify` and `report` commands.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use super::{
    certify_records, io_err, num, read_text, sha256_hex, CertifyOptions, Certification, HarnessError, Manifest,
    OutputDir, Result, ScenarioConfig, Status, Verdict,
};
use crate::certify::{
    compute_q, parse_records_csv, records_to_csv, vanishing_perturbation_study, StabilityRecord, TwinRecorder,
    VanishingReport,
};
use crate::dynamics::{run_twin, sample_initial, CrossingMonitor, FlowState, ParticleEnsemble};
use crate::field::io::{write_density_dump, write_density_slice, write_field_dump};
use crate::ot::io::{read_cloud, write_plan};
use crate::ot::{w2_exact, w2_sinkhorn, WeightedCloud};

pub const MANIFEST: &str = "manifest.json";
pub const CERTIFY_MANIFEST: &str = "certify-manifest.json";

const SNAPSHOT_HEADER: &str = "x,y,z,vx,vy,vz,w\n";

fn snapshot_csv(e: &ParticleEnsemble) -> Result<String> {
    let mut s = String::from(SNAPSHOT_HEADER);
    for i in 0..e.len() {
        let (x, v) = (e.positions[i], e.velocities[i]);
        let cells = [x[0], x[1], x[2], v[0], v[1], v[2], e.weights[i]]
            .iter()
            .map(|&c| num(c, "snapshot"))
            .collect::<Result<Vec<_>>>()?;
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

fn snapshot_due(step: usize, steps: usize, every: usize) -> bool {
    step == 0 || step == steps || (every > 0 && step % every == 0)
}

fn config_manifest(command: &str, cfg: &ScenarioConfig) -> Manifest {
    let mut m = Manifest::new(command);
    m.scenario = Some(cfg.scenario.clone());
    m.config = Some(cfg.to_toml());
    m
}

fn write_dumps(dir: &mut OutputDir, state: &FlowState, step: usize) -> Result<()> {
    let Some(rho) = state.density() else { return Ok(()) };
    let dumps = dir.ensure_dir("dumps")?;
    for p in write_density_dump(&dumps.join(format!("density_{step:06}")), rho)? {
        dir.track(&p)?;
    }
    if let Some(f) = state.grid_field() {
        for p in write_field_dump(&dumps.join(format!("field_{step:06}")), f)? {
            dir.track(&p)?;
        }
    }
    let mut slice = Vec::new();
    write_density_slice(&mut slice, rho, rho.spec.dims[2] / 2)?;
    dir.write(&format!("dumps/density_{step:06}_slice.csv"), &slice)?;
    Ok(())
}

/// Runs flow `a` of the config alone: snapshots, grid dumps, and an energy
/// and mass series.
pub fn simulate(cfg: &ScenarioConfig, out: &Path) -> Result<Manifest> {
    let (mut e, lattice) = sample_initial(&cfg.initial, cfg.particles, cfg.total_mass, cfg.epsilon, cfg.seed)?;
    cfg.twin.a.perturbation.apply(&mut e);
    let v = cfg.variant(&cfg.twin.a)?;
    let mut state = FlowState::new(e, v.model, v.monitor)?;
    state.set_enforce_dt_rule(cfg.enforce_dt_rule);
    let mut crossing = lattice.as_ref().map(|l| CrossingMonitor::new(l, &state.ensemble));
    let steps = cfg.steps();
    let mass = state.ensemble.mass();
    let mut dir = OutputDir::create(out)?;
    let mut energy = String::from("step,t,kinetic,potential,total,deposited_mass,sup_rho\n");
    let (mut max_mass_dev, mut boundary_steps, mut min_dt_limit) = (0.0f64, 0usize, f64::INFINITY);
    let mut energy0 = None;
    let mut max_drift = 0.0f64;
    for step in 0..=steps {
        if step > 0 {
            state.step_leapfrog(cfg.dt)?;
            if let Some(m) = crossing.as_mut() {
                m.update(&state.ensemble, step);
            }
        }
        let d = state.diagnostics;
        max_mass_dev = max_mass_dev.max((d.deposited_mass - mass).abs() / mass);
        boundary_steps += d.boundary_warning as usize;
        min_dt_limit = min_dt_limit.min(d.dt_limit);
        let (k, u, total) = match state.energy()? {
            Some((k, u)) => {
                let total = k + u;
                let e0 = *energy0.get_or_insert(total);
                if e0 != 0.0 {
                    max_drift = max_drift.max(((total - e0) / e0).abs());
                }
                (num(k, "energy")?, num(u, "energy")?, num(total, "energy")?)
            }
            None => Default::default(),
        };
        let _ = writeln!(
            energy,
            "{step},{},{k},{u},{total},{},{}",
            num(state.t(), "time")?,
            num(d.deposited_mass, "mass")?,
            num(d.sup_rho, "density")?
        );
        if snapshot_due(step, steps, cfg.output.snapshot_every) {
            dir.write(&format!("snapshots/step_{step:06}.csv"), snapshot_csv(&state.ensemble)?.as_bytes())?;
            if cfg.output.dumps {
                write_dumps(&mut dir, &state, step)?;
            }
        }
    }
    dir.write("energy.csv", energy.as_bytes())?;

    let mut m = config_manifest("simulate", cfg);
    m.verdicts.push(Verdict::new(
        "mass",
        Status::from_bool(max_mass_dev <= cfg.tolerances.mass),
        format!("max relative deposited-mass error {max_mass_dev:e}"),
    ));
    if energy0.is_some() {
        m.constants.insert("max_energy_drift".into(), max_drift);
    }
    m.stats.insert("particles".into(), state.ensemble.len().to_string());
    m.stats.insert("steps".into(), steps.to_string());
    m.stats.insert("boundary_warning_steps".into(), boundary_steps.to_string());
    if min_dt_limit.is_finite() {
        m.stats.insert("min_dt_limit".into(), format!("{min_dt_limit:e}"));
    }
    if let Some(ev) = crossing.and_then(|c| c.first) {
        m.stats.insert("first_crossing_t".into(), format!("{:e}", ev.t));
        m.stats.insert("first_crossing_step".into(), ev.step.to_string());
    }
    dir.finish(m, super::MANIFEST)
}

/// Runs both flows, records the stability ledger, and certifies it.
pub fn twin(cfg: &ScenarioConfig, out: &Path) -> Result<Manifest> {
    let (sample, lattice) = sample_initial(&cfg.initial, cfg.particles, cfg.total_mass, cfg.epsilon, cfg.seed)?;
    let (a, b) = (cfg.variant(&cfg.twin.a)?, cfg.variant(&cfg.twin.b)?);
    let steps = cfg.steps();
    let every = cfg.output.snapshot_every;
    let mut rec = TwinRecorder::new(cfg.recorder_options());
    let mut crossing: Option<CrossingMonitor> = None;
    let mut snapshots: Vec<(String, String)> = Vec::new();
    let (mut boundary_steps, mut min_dt_limit) = (0usize, f64::INFINITY);
    run_twin(&sample, &a, &b, cfg.dt, steps, cfg.enforce_dt_rule, |fa, fb| {
        rec.observe(fa, fb)?;
        let step = fa.step;
        if let Some(l) = &lattice {
            match crossing.as_mut() {
                None => crossing = Some(CrossingMonitor::new(l, &fa.ensemble)),
                Some(m) => {
                    m.update(&fa.ensemble, step);
                }
            }
        }
        for d in [fa.diagnostics, fb.diagnostics] {
            boundary_steps += d.boundary_warning as usize;
            min_dt_limit = min_dt_limit.min(d.dt_limit);
        }
        if snapshot_due(step, steps, every) {
            snapshots.push((format!("snapshots/a_{step:06}.csv"), snapshot_csv(&fa.ensemble)?));
            snapshots.push((format!("snapshots/b_{step:06}.csv"), snapshot_csv(&fb.ensemble)?));
        }
        Ok(())
    })?;
    let (records, lemma, _) = rec.finish_with_reports();
    let opts = CertifyOptions {
        fit_constants: true,
        window: None,
        prop31_tolerance: cfg.tolerances.prop31,
        pass_fraction: cfg.tolerances.gronwall_pass_fraction,
        containment: cfg.same_model(),
        mass_tolerance: cfg.tolerances.mass,
    };
    let cert = certify_records(&records, &opts)?;

    let mut dir = OutputDir::create(out)?;
    dir.write("records.csv", records_to_csv(&records)?.as_bytes())?;
    dir.write("certification.csv", cert.csv.as_bytes())?;
    dir.write("summary.txt", cert.summary.as_bytes())?;
    for (rel, text) in &snapshots {
        dir.write(rel, text.as_bytes())?;
    }

    let mut m = config_manifest("twin", cfg);
    m.verdicts = cert.verdicts;
    m.constants = cert.constants;
    m.stats.insert("particles".into(), sample.len().to_string());
    m.stats.insert("steps".into(), steps.to_string());
    m.stats.insert("ot_evaluations".into(), lemma.len().to_string());
    m.stats.insert("boundary_warning_steps".into(), boundary_steps.to_string());
    if min_dt_limit.is_finite() {
        m.stats.insert("min_dt_limit".into(), format!("{min_dt_limit:e}"));
    }
    let sup_q = records.iter().map(|r| r.q).fold(0.0, f64::max);
    m.stats.insert("sup_q".into(), format!("{sup_q:e}"));
    if let Some(ev) = crossing.and_then(|c| c.first) {
        m.stats.insert("first_crossing_t".into(), format!("{:e}", ev.t));
        m.stats.insert("first_crossing_step".into(), ev.step.to_string());
    }
    dir.finish(m, super::MANIFEST)
}

/// Certifies a records file into `out` (certification table, summary, manifest).
pub fn run_certify(records_path: &Path, opts: &CertifyOptions, out: &Path) -> Result<(Manifest, Certification)> {
    let text = read_text(records_path)?;
    let records: Vec<StabilityRecord> = parse_records_csv(&text)?;
    let cert = certify_records(&records, opts)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("certification.csv", cert.csv.as_bytes())?;
    dir.write("summary.txt", cert.summary.as_bytes())?;
    let mut m = Manifest::new("certify");
    m.verdicts = cert.verdicts.clone();
    m.constants = cert.constants.clone();
    m.stats.insert("records".into(), records.len().to_string());
    m.stats.insert("records_sha256".into(), sha256_hex(text.as_bytes()));
    if let Some((a, b)) = opts.window {
        m.stats.insert("window".into(), format!("[{a:e}, {b:e}]"));
    }
    Ok((dir.finish(m, super::CERTIFY_MANIFEST)?, cert))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OtMethod {
    Exact,
    Sinkhorn { regularization: f64, max_iters: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtOutcome {
    pub distance: f64,
    pub points: (usize, usize),
    pub dim: usize,
}

fn load_cloud(path: &Path) -> Result<WeightedCloud> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_cloud(BufReader::new(f)).map_err(|e| HarnessError::Config { origin: path.display().to_string(), line: None, msg: e.to_string() })
}

/// `W2` between two cloud files, optionally writing the plan.
pub fn ot_distance(a: &Path, b: &Path, method: OtMethod, plan_out: Option<&Path>) -> Result<OtOutcome> {
    let (ca, cb) = (load_cloud(a)?, load_cloud(b)?);
    let (distance, plan) = match method {
        OtMethod::Exact => w2_exact(&ca, &cb)?,
        OtMethod::Sinkhorn { regularization, max_iters, tol } => w2_sinkhorn(&ca, &cb, regularization, max_iters, tol)?,
    };
    if let Some(p) = plan_out {
        let f = fs::File::create(p).map_err(io_err(p))?;
        write_plan(std::io::BufWriter::new(f), &plan)?;
    }
    Ok(OtOutcome { distance, points: (ca.len(), cb.len()), dim: ca.dim() })
}

fn check_hashes(m: &Manifest, base: &Path) -> Result<()> {
    for f in &m.files {
        let path = base.join(&f.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() as u64 != f.bytes || sha256_hex(&bytes) != f.sha256 {
            return Err(HarnessError::HashMismatch { path: f.path.clone() });
        }
    }
    Ok(())
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Consolidated text report and plot-ready tables for a manifest. Verifies
/// every listed file against its hash first. Writes `report.txt` and
/// `tables/*.csv` into `out` (default: the manifest's directory).
pub fn report(manifest_path: &Path, out: Option<&Path>) -> Result<Manifest> {
    let m = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    check_hashes(&m, base)?;
    let out = out.unwrap_or(base);
    let mut dir = OutputDir::create(out)?;

    let mut s = String::new();
    let _ = writeln!(s, "command: {}", m.command);
    if let Some(name) = &m.scenario {
        let _ = writeln!(s, "scenario: {name}");
    }
    let _ = writeln!(s, "files: {} (hashes verified)", m.files.len());
    let _ = writeln!(s, "verdict: {}", if m.passed() { "PASS" } else { "FAIL" });
    if let Some(cfg) = &m.config {
        let _ = writeln!(s, "\n[config]\n{}", cfg.trim_end());
    }
    let _ = writeln!(s, "\n[checks]");
    for v in &m.verdicts {
        let _ = writeln!(s, "{:<13} {:<4} {}", v.check, v.status.label(), v.detail);
    }
    if !m.constants.is_empty() {
        let _ = writeln!(s, "\n[constants]");
        for (k, v) in &m.constants {
            let _ = writeln!(s, "{k} = {v:e}");
        }
    }
    if !m.stats.is_empty() {
        let _ = writeln!(s, "\n[stats]");
        for (k, v) in &m.stats {
            let _ = writeln!(s, "{k} = {v}");
        }
    }
    let _ = writeln!(s, "\n[files]");
    for f in &m.files {
        let _ = writeln!(s, "{} {} {}", f.sha256, f.bytes, f.path);
    }

    if m.files.iter().any(|f| f.path == "records.csv") {
        let records = parse_records_csv(&read_text(&base.join("records.csv"))?)?;
        let mut gap = String::from("t,q,s,max_gap,t1,t2,dqdt\n");
        let mut prop = String::from("t,w2_rho,field_l2_diff,prop31_rhs,prop31_ratio\n");
        for r in &records {
            let _ = writeln!(gap, "{:e},{:e},{:e},{:e},{:e},{:e},{}", r.t, r.q, r.s, r.max_gap, r.t1, r.t2, opt_cell(r.dqdt));
            if r.prop31_rhs.is_some() {
                let _ = writeln!(
                    prop,
                    "{:e},{},{},{},{}",
                    r.t,
                    opt_cell(r.w2_rho),
                    opt_cell(r.field_l2_diff),
                    opt_cell(r.prop31_rhs),
                    opt_cell(r.prop31_ratio)
                );
            }
        }
        dir.write("tables/gap.csv", gap.as_bytes())?;
        dir.write("tables/prop31.csv", prop.as_bytes())?;
        let _ = writeln!(s, "\n[tables]\ntables/gap.csv\ntables/prop31.csv");
    }
    dir.write("report.txt", s.as_bytes())?;
    Ok(m)
}

/// `sup_t Q` over the twin run for each size in `deltas` (B's perturbation
/// rescaled, OT evaluations off), at time step `dt`.
pub fn vanishing_study(cfg: &ScenarioConfig, deltas: &[f64], dt: f64) -> Result<VanishingReport> {
    let mut c = cfg.clone();
    c.dt = dt;
    let (sample, _) = sample_initial(&c.initial, c.particles, c.total_mass, c.epsilon, c.seed)?;
    let a = c.variant(&c.twin.a)?;
    let steps = c.steps();
    let fraction = c.tolerances.vanishing_fraction;
    Ok(vanishing_perturbation_study(deltas, fraction, |delta| {
        let mut vb = c.twin.b.clone();
        vb.perturbation = vb.perturbation.with_magnitude(delta);
        let b = c.variant(&vb).map_err(|e| crate::certify::CertifyError::InvalidParameter(e.to_string()))?;
        let mut sup = 0.0f64;
        run_twin(&sample, &a, &b, c.dt, steps, c.enforce_dt_rule, |fa, fb| {
            sup = sup.max(compute_q(&fa.ensemble, &fb.ensemble)?);
            Ok(())
        })?;
        Ok(sup)
    })?)
}
