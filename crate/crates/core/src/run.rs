//! Experiment dispatch and on-disk artifacts.
//!
//! A run fills an [`Artifacts`] buffer as it goes. On success every file is
//! written under its own name; on failure whatever was produced is written
//! with a `.partial` suffix next to a summary that carries the error.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::clifford::GateLabel;
use crate::config::{ExperimentKind, RunConfig};
use crate::engine::{Marker, Schedule, Simulator};
use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentResult, ExperimentSetup, SweepSpec};
use crate::io::{decay_csv, experiment_table, format_f64, parse_decay_csv, NumericTable, Report};
use crate::qp::{
    dispersion_ratio, fit_decay, fit_decay_shared, fit_recovery, qp_added, rates_from_nqp, DecayCurve, DecayFitResult, DecayFix,
    DriveWindow, QPModel,
};
use crate::rb::{extract_fidelity, fit_survival_table, run_rb, FidelityMode, RbConfig, RbSetup, SurvivalTable};
use crate::state::DensityMatrix;
use crate::transmon::DecoherenceParams;

/// Poisoned relaxation curve shipped for `fit-decay` when no input is given.
pub const BUNDLED_DECAY_CSV: &str = include_str!("../data/synthetic-decay.csv");

pub const METADATA_FILE: &str = "metadata.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PARTIAL_SUFFIX: &str = ".partial";
/// Larger covariance matrices go to the metadata sidecar only.
const MAX_PRINTED_COVARIANCE: usize = 8;

/// Everything a run produces, in write order.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub tables: Vec<(String, NumericTable)>,
    pub summary: Report,
    pub results: serde_json::Map<String, serde_json::Value>,
}

impl Artifacts {
    fn new(cfg: &RunConfig) -> Self {
        let mut summary = Report::new(&format!("sfqsim {}", cfg.experiment));
        summary.field("seed", cfg.seed);
        Self { tables: Vec::new(), summary, results: serde_json::Map::new() }
    }

    fn table(&mut self, name: &str, table: NumericTable) {
        self.tables.push((name.to_string(), table));
    }

    fn result(&mut self, key: &str, value: serde_json::Value) {
        self.results.insert(key.to_string(), value);
    }

    /// Metadata sidecar; `config` re-parses into the run's configuration.
    pub fn metadata(&self, cfg: &RunConfig) -> serde_json::Value {
        json!({
            "config": cfg.to_table(),
            "experiment": cfg.experiment.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "files": self.tables.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
            "results": self.results,
        })
    }
}

/// Files written by a successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Runs the configured experiment without touching the filesystem (except to
/// read a `fit-decay` input), recording artifacts into `out`.
pub fn execute(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    out.summary.section("device");
    out.summary
        .number("f10_hz", cfg.transmon.omega10 / TAU)
        .number("alpha_hz", cfg.transmon.alpha / TAU)
        .field("dim", cfg.transmon.dim)
        .number("delta_theta_rad", cfg.delta_theta())
        .field("subharmonic", cfg.drive.subharmonic);
    match cfg.experiment {
        ExperimentKind::Rabi => rabi(cfg, out),
        ExperimentKind::Staircase => staircase(cfg, out),
        ExperimentKind::Chevron => grid_experiment(cfg, out, |s| experiments::run_chevron(s, cfg.sweep("detuning_hz")?, cfg.sweep("t_s")?)),
        ExperimentKind::Rabi2d => grid_experiment(cfg, out, |s| experiments::run_rabi2d(s, cfg.sweep("phase_rad")?, cfg.sweep("t_s")?)),
        ExperimentKind::Ramsey => ramsey(cfg, out),
        ExperimentKind::Rb => rb(cfg, out),
        ExperimentKind::QpPoison => qp_poison(cfg, out),
        ExperimentKind::QpRecovery => qp_recovery(cfg, out),
        ExperimentKind::FitDecay => fit_decay_run(cfg, out),
        ExperimentKind::Dispersion => dispersion(cfg, out),
    }
}

/// Runs the experiment and writes its artifacts into `cfg.output_dir`.
pub fn dispatch(cfg: &RunConfig) -> Result<RunOutput> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut art = Artifacts::new(cfg);
    let outcome = execute(cfg, &mut art);
    let suffix = if outcome.is_ok() { "" } else { PARTIAL_SUFFIX };
    if let Err(e) = &outcome {
        art.summary.section("status").field("status", "FAILED").field("error", e);
        art.result("error", json!(e.to_string()));
    }
    let mut files = Vec::new();
    for (name, table) in &art.tables {
        files.push(write_file(dir, name, suffix, &table.to_csv_string())?);
    }
    let meta = serde_json::to_string_pretty(&art.metadata(cfg))?;
    files.push(write_file(dir, METADATA_FILE, suffix, &(meta + "\n"))?);
    files.push(write_file(dir, SUMMARY_FILE, suffix, art.summary.as_str())?);
    outcome.map(|()| RunOutput { files, summary: art.summary.to_string() })
}

fn write_file(dir: &Path, name: &str, suffix: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{name}{suffix}"));
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    if suffix.is_empty() {
        let stale = dir.join(format!("{name}{PARTIAL_SUFFIX}"));
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
    }
    Ok(path)
}

fn setup(cfg: &RunConfig) -> Result<ExperimentSetup> {
    Ok(ExperimentSetup::new(cfg.physics(), cfg.drive.subharmonic)?.with_measurement(cfg.measurement()))
}

fn record(out: &mut Artifacts, result: &ExperimentResult) -> Result<()> {
    result.validate()?;
    out.table(&format!("{}.csv", result.name), experiment_table(result));
    let leakage = result.populations.iter().map(|p| p.iter().skip(2).sum::<f64>()).fold(0.0, f64::max);
    let p1 = result.p1();
    out.summary.section("result");
    out.summary
        .field("points", result.point_count())
        .number("max_p1", p1.iter().copied().fold(0.0, f64::max))
        .number("min_p1", p1.iter().copied().fold(1.0, f64::min))
        .number("max_leakage", leakage);
    out.result("experiment", result.metadata.clone());
    Ok(())
}

fn rabi(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = setup(cfg)?;
    let result = experiments::run_rabi(&s, cfg.sweep("t_s")?)?;
    let rabi_hz = experiments::rabi_frequency(cfg.delta_theta(), s.resonant_omega_d());
    out.summary.section("drive");
    out.summary.number("rabi_frequency_hz", rabi_hz).number("pulses_per_pi", std::f64::consts::PI / cfg.delta_theta());
    record(out, &result)
}

fn staircase(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = setup(cfg)?;
    let times = cfg.sweep("t_s")?;
    let result = experiments::run_staircase(&s, times)?;
    let t_max = times.values.iter().copied().fold(0.0, f64::max);
    let steps = experiments::staircase_step_times(&s, t_max)?;
    let mut table = NumericTable::new(["pulse", "time_s"]);
    for (k, t) in steps.iter().enumerate() {
        table.push(vec![k as f64, *t])?;
    }
    out.summary.section("steps");
    out.summary.field("pulses", steps.len()).number("spacing_s", TAU / s.resonant_omega_d());
    out.table("steps.csv", table);
    record(out, &result)
}

fn grid_experiment(cfg: &RunConfig, out: &mut Artifacts, run: impl FnOnce(&ExperimentSetup) -> Result<ExperimentResult>) -> Result<()> {
    let s = setup(cfg)?;
    let result = run(&s)?;
    record(out, &result)
}

fn ramsey(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = setup(cfg)?;
    let result = experiments::run_ramsey(&s, cfg.sweep("delay_s")?, cfg.drive.detuning_hz)?;
    record(out, &result)?;
    out.summary.section("fringe");
    out.summary.number("expected_frequency_hz", cfg.drive.subharmonic as f64 * cfg.drive.detuning_hz.abs());
    match experiments::fit_fringe(&result.axes[0].values, &result.p1()) {
        Ok(f) => {
            out.summary
                .estimate("frequency_hz", f.frequency, f.frequency_err)
                .estimate("decay_time_s", f.decay_time, f.decay_time_err)
                .number("amplitude", f.amplitude)
                .number("offset", f.offset)
                .number("residual_norm", f.residual_norm)
                .diagnostics(&f.diagnostics);
            out.result("fringe", json!(f));
        }
        Err(e) => {
            out.summary.field("fit", format!("not available: {e}"));
        }
    }
    Ok(())
}

fn rb(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let block = cfg.rb.clone().unwrap_or_default();
    let rb_cfg: RbConfig = cfg.rb_config();
    let mut setup = RbSetup::new(cfg.physics(), cfg.drive.subharmonic)?;
    if let Some(p) = block.depolarizing {
        setup = setup.with_depolarizing(p)?;
    }
    let reference = run_rb(&rb_cfg, &setup)?;
    let mut curves: Vec<(Option<GateLabel>, SurvivalTable)> = vec![(None, reference)];
    for &gate in &block.interleaved {
        let table = run_rb(&RbConfig { interleaved_gate: Some(gate), ..rb_cfg.clone() }, &setup)?;
        curves.push((Some(gate), table));
    }
    out.table("survivals.csv", survival_table(&curves)?);

    let ref_fit = fit_survival_table(&curves[0].1, rb_cfg.fit_window)?;
    let clifford = extract_fidelity(&ref_fit, None, FidelityMode::Reference)?;
    out.summary.section("protocol");
    out.summary
        .field("lengths", format!("{:?}", rb_cfg.sequence_lengths))
        .field("randomizations", rb_cfg.randomizations)
        .field("fit_window", format!("{:?}", rb_cfg.fit_window))
        .field("depolarizing", block.depolarizing.map_or("none".to_string(), format_f64));
    out.summary.section("reference");
    out.summary
        .estimate("p", ref_fit.p, ref_fit.p_err)
        .estimate("A", ref_fit.a, ref_fit.a_err)
        .estimate("B", ref_fit.b, ref_fit.b_err)
        .estimate("clifford_fidelity", clifford.fidelity, clifford.uncertainty)
        .field("weighted", ref_fit.weighted)
        .diagnostics(&ref_fit.diagnostics);
    out.result("reference", json!({ "fit": ref_fit, "fidelity": clifford }));

    let mut gates = Vec::new();
    for (gate, table) in &curves[1..] {
        let gate = gate.expect("interleaved curves carry a gate");
        let fit = fit_survival_table(table, rb_cfg.fit_window)?;
        let fid = extract_fidelity(&ref_fit, Some(&fit), FidelityMode::Interleaved)?;
        out.summary.section(&format!("interleaved {gate}"));
        out.summary
            .estimate("p", fit.p, fit.p_err)
            .estimate("gate_fidelity", fid.fidelity, fid.uncertainty)
            .number("raw_fidelity", fid.raw)
            .field("unphysical", fid.unphysical)
            .diagnostics(&fit.diagnostics);
        gates.push(json!({ "gate": gate.as_str(), "fit": fit, "fidelity": fid }));
    }
    out.result("interleaved", json!(gates));
    Ok(())
}

/// Long format: one row per (m, k) with a survival column per curve.
fn survival_table(curves: &[(Option<GateLabel>, SurvivalTable)]) -> Result<NumericTable> {
    let mut header = vec!["m".to_string(), "randomization".to_string()];
    header.extend(curves.iter().map(|(g, _)| g.map_or("reference".to_string(), |g| format!("interleaved {g}"))));
    let mut table = NumericTable::new(header);
    let base = &curves[0].1;
    for (i, &m) in base.lengths.iter().enumerate() {
        for k in 0..base.survivals[i].len() {
            let mut row = vec![m as f64, k as f64];
            row.extend(curves.iter().map(|(_, t)| t.survivals[i][k]));
            table.push(row)?;
        }
    }
    Ok(table)
}

fn qp_parts(cfg: &RunConfig) -> Result<(DecoherenceParams, QPModel)> {
    let dec = cfg.decoherence.ok_or_else(|| Error::invalid("decoherence", "this experiment needs a [decoherence] table"))?;
    let qp = cfg.qp.ok_or_else(|| Error::invalid("qp", "this experiment needs a [qp] table"))?;
    Ok((dec, qp))
}

/// Driver clocked at ω₁₀/n for `slips` phase slips starting at 0, with no qubit kicks.
fn poison_window(cfg: &RunConfig, qp: &QPModel, slips: u64) -> DriveWindow {
    let omega_d = cfg.transmon.omega10 / cfg.drive.subharmonic as f64;
    let end = slips as f64 / (qp.slips_per_cycle as f64 * omega_d / TAU);
    DriveWindow { start: 0.0, end, omega_d }
}

fn slip_count(v: f64) -> Result<u64> {
    if !(v >= 0.0) || v.fract() != 0.0 || v > 1e15 {
        return Err(Error::invalid("slips", format!("must be a non-negative whole number, got {v}")));
    }
    Ok(v as u64)
}

/// Poisons, waits `delay`, prepares |1⟩ and samples its decay at `probes`.
/// Returns the populations and the excess ⟨n_QP⟩ at preparation.
fn poisoned_relaxation(sim: &Simulator, window: DriveWindow, delay: f64, probes: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut s = Schedule::new();
    if window.end > window.start {
        s.add_window(window)?;
    }
    s.idle(window.end + delay)?;
    s.add_marker(Marker::Reset(1));
    let t_prep = s.cursor();
    let excess = sim.qp_trajectory(&s)?.map_or(0.0, |t| t.excess_at(t_prep));
    let times: Vec<f64> = probes.iter().map(|p| t_prep + p).collect();
    let states = sim.run(&s, &DensityMatrix::ground(sim.dim()), &times)?;
    Ok((states.iter().map(|r| r.populations().into_iter().map(|p| p.clamp(0.0, 1.0)).collect()).collect(), excess))
}

fn probe_axis(cfg: &RunConfig) -> Result<&SweepSpec> {
    let probes = cfg.sweep("probe_s")?;
    if probes.values.iter().any(|t| *t < 0.0) {
        return Err(Error::invalid("probe_s", "must be non-negative"));
    }
    Ok(probes)
}

fn decay_report(out: &mut Artifacts, fit: &DecayFitResult) {
    out.summary.number("residual_norm", fit.residual_norm).diagnostics(&fit.diagnostics);
    if fit.parameters.len() <= MAX_PRINTED_COVARIANCE {
        out.summary.matrix("covariance", &fit.parameters, &fit.covariance);
    } else {
        out.summary.field("covariance", format!("{} parameters, see {METADATA_FILE}", fit.parameters.len()));
    }
}

fn relaxation_rows(dim: usize, outer: &str, values: &[f64], probes: &[f64], pops: &[Vec<Vec<f64>>]) -> Result<NumericTable> {
    let mut header = vec![outer.to_string(), "probe_s".to_string()];
    header.extend((0..dim).map(|k| format!("p{k}")));
    let mut table = NumericTable::new(header);
    for (v, curve) in values.iter().zip(pops) {
        for (t, p) in probes.iter().zip(curve) {
            let mut row = vec![*v, *t];
            row.extend_from_slice(p);
            table.push(row)?;
        }
    }
    Ok(table)
}

fn qp_poison(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let (dec, qp) = qp_parts(cfg)?;
    let slips: Vec<u64> = cfg.sweep("slips")?.values.iter().map(|v| slip_count(*v)).collect::<Result<_>>()?;
    let probes = probe_axis(cfg)?;
    let sim = Simulator::new(&cfg.physics())?;
    let runs: Vec<(Vec<Vec<f64>>, f64)> =
        slips.par_iter().map(|&n| poisoned_relaxation(&sim, poison_window(cfg, &qp, n), 0.0, &probes.values)).collect::<Result<_>>()?;
    let slip_values: Vec<f64> = slips.iter().map(|&n| n as f64).collect();
    let pops: Vec<Vec<Vec<f64>>> = runs.iter().map(|r| r.0.clone()).collect();
    out.table("qp-poison.csv", relaxation_rows(sim.dim(), "slips", &slip_values, &probes.values, &pops)?);
    out.summary.section("model");
    out.summary.field("turn_on_model", qp.turn_on_model()).number("eta", qp.eta).number("t1_per_qp_s", dec.t1_per_qp);
    out.result("turn_on_model", json!(qp.turn_on_model()));

    let curves: Vec<DecayCurve> =
        pops.iter().map(|c| DecayCurve::new(probes.values.clone(), c.iter().map(|p| p[1]).collect())).collect::<Result<_>>()?;
    let fit = fit_decay_shared(&curves, DecayFix { t1_qp: None, t1_r: Some(dec.t1_residual) })?;
    let mut table = NumericTable::new(["slips", "n_qp_added", "n_qp_excess", "n_qp_fit", "n_qp_fit_err"]);
    for ((n, run), f) in slips.iter().zip(&runs).zip(&fit.curves) {
        table.push(vec![*n as f64, qp_added(*n, &qp), run.1, f.model.n_qp, f.n_qp_err])?;
    }
    out.table("n_qp.csv", table);
    out.summary.section("relaxation fit (T1_r fixed)");
    let shared = &fit.curves[0];
    out.summary.estimate("t1_qp_s", shared.model.t1_qp, shared.t1_qp_err).number("t1_r_s", shared.model.t1_r);
    for (n, f) in slips.iter().zip(&fit.curves) {
        out.summary.estimate(&format!("n_qp at {n} slips"), f.model.n_qp, f.n_qp_err);
    }
    decay_report(out, &fit);
    out.result("fit", json!(fit));
    Ok(())
}

fn qp_recovery(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let (dec, qp) = qp_parts(cfg)?;
    let delays = cfg.sweep("delay_s")?;
    if delays.values.iter().any(|d| *d < 0.0) {
        return Err(Error::invalid("delay_s", "must be non-negative"));
    }
    let probes = probe_axis(cfg)?;
    let slips = cfg.poison.unwrap_or_default().slips;
    let window = poison_window(cfg, &qp, slips);
    let sim = Simulator::new(&cfg.physics())?;
    let runs: Vec<(Vec<Vec<f64>>, f64)> =
        delays.values.par_iter().map(|&d| poisoned_relaxation(&sim, window, d, &probes.values)).collect::<Result<_>>()?;
    let pops: Vec<Vec<Vec<f64>>> = runs.iter().map(|r| r.0.clone()).collect();
    out.table("qp-recovery.csv", relaxation_rows(sim.dim(), "delay_s", &delays.values, &probes.values, &pops)?);

    let curves: Vec<DecayCurve> =
        pops.iter().map(|c| DecayCurve::new(probes.values.clone(), c.iter().map(|p| p[1]).collect())).collect::<Result<_>>()?;
    let fit = fit_decay_shared(&curves, DecayFix { t1_qp: None, t1_r: Some(dec.t1_residual) })?;
    let n_fit: Vec<f64> = fit.curves.iter().map(|f| f.model.n_qp).collect();
    let mut table = NumericTable::new(["delay_s", "n_qp_excess", "n_qp_fit", "n_qp_fit_err"]);
    for ((d, run), f) in delays.values.iter().zip(&runs).zip(&fit.curves) {
        table.push(vec![*d, run.1, f.model.n_qp, f.n_qp_err])?;
    }
    out.table("n_qp.csv", table);
    out.summary.section("poisoning");
    out.summary.field("slips", slips).field("turn_on_model", qp.turn_on_model());
    out.result("turn_on_model", json!(qp.turn_on_model()));
    out.summary.section("relaxation fit (T1_r fixed)");
    out.summary.estimate("t1_qp_s", fit.curves[0].model.t1_qp, fit.curves[0].t1_qp_err);
    decay_report(out, &fit);

    let rec = fit_recovery(&delays.values, &n_fit)?;
    out.summary.section("recovery fit");
    out.summary
        .estimate("trapping_time_s", rec.trapping_time, rec.trapping_time_err)
        .estimate("amplitude", rec.amplitude, rec.amplitude_err)
        .estimate("background", rec.background, rec.background_err)
        .number("model_trapping_time_s", qp.trapping_time())
        .diagnostics(&rec.diagnostics);
    out.result("decay_fit", json!(fit));
    out.result("recovery_fit", json!(rec));
    Ok(())
}

/// Ordinary least-squares line; returns (slope, intercept).
fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if x.len() < 2 || !(sxx > 0.0) {
        return Err(Error::Degenerate("QP decay rates do not vary across the sweep".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn dispersion(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let (dec, qp) = qp_parts(cfg)?;
    let delays = cfg.sweep("delay_s")?;
    let slips = cfg.poison.unwrap_or_default().slips;
    let sim = Simulator::new(&cfg.physics())?;
    let mut s = Schedule::new();
    let window = poison_window(cfg, &qp, slips);
    if window.end > window.start {
        s.add_window(window)?;
    }
    let traj = sim.qp_trajectory(&s)?;
    let omega10 = cfg.transmon.omega10;
    let mut table = NumericTable::new(["delay_s", "n_qp_excess", "gamma_qp_per_s", "delta_omega_rad_per_s"]);
    let (mut gammas, mut shifts) = (Vec::new(), Vec::new());
    for &d in &delays.values {
        if d < 0.0 {
            return Err(Error::invalid("delay_s", "must be non-negative"));
        }
        let excess = traj.as_ref().map_or(0.0, |t| t.excess_at(window.end + d));
        let (gamma1, shift) = rates_from_nqp(excess, &dec, &cfg.dispersion, omega10);
        let gamma_qp = gamma1 - 1.0 / dec.t1_residual;
        table.push(vec![d, excess, gamma_qp, shift])?;
        gammas.push(gamma_qp);
        shifts.push(shift);
    }
    out.table("dispersion.csv", table);
    let ratio = dispersion_ratio(omega10, &cfg.dispersion) * dec.qp_dispersion_factor;
    let (slope, intercept) = fit_line(&gammas, &shifts)?;
    out.summary.section("dispersion");
    out.summary
        .field("slips", slips)
        .number("gap_ev", cfg.dispersion.gap_ev())
        .number("empirical_factor", cfg.dispersion.empirical_factor)
        .number("expected_slope", ratio)
        .number("fitted_slope", slope)
        .number("intercept_rad_per_s", intercept);
    out.result("slope", json!({ "expected": ratio, "fitted": slope, "intercept": intercept }));
    Ok(())
}

fn fit_decay_run(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let block = cfg.fit.clone().unwrap_or_default();
    let (text, source) = match &block.input {
        Some(path) => (fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path.display().to_string()),
        None => (BUNDLED_DECAY_CSV.to_string(), "bundled synthetic curve".to_string()),
    };
    let curve = parse_decay_csv(&text)?;
    let fix = DecayFix { t1_qp: block.t1_qp_s, t1_r: block.t1_r_s };
    out.summary.section("input");
    out.summary.field("source", &source).field("samples", curve.len());
    let fit = fit_decay(&curve, fix)?;
    let f = &fit.curves[0];
    let mut table = NumericTable::new(["time_s", "p1", "model", "residual"]);
    for (t, p) in curve.times.iter().zip(&curve.p1) {
        let m = crate::qp::decay_law(*t, &f.model);
        table.push(vec![*t, *p, m, p - m])?;
    }
    out.table("fit-decay.csv", table);
    out.summary.section("parameters");
    out.summary
        .estimate("n_qp", f.model.n_qp, f.n_qp_err)
        .estimate("t1_qp_s", f.model.t1_qp, f.t1_qp_err)
        .estimate("t1_r_s", f.model.t1_r, f.t1_r_err)
        .field("fixed", format!("t1_qp={} t1_r={}", fix.t1_qp.is_some(), fix.t1_r.is_some()));
    decay_report(out, &fit);
    out.result("fit", json!(fit));
    Ok(())
}

/// Writes a decay curve as the two-column CSV `fit-decay` reads.
pub fn write_decay_csv(path: &Path, curve: &DecayCurve) -> Result<()> {
    fs::write(path, decay_csv(curve).to_csv_string()).map_err(|e| Error::io(path, e))
}
