//! Run configuration: TOML documents, presets and the JSON metadata sidecar.
//!
//! Every quantity is in SI units and the unit is part of the key name
//! (`f10_hz`, `t1_s`, `gap_ev`). Unknown keys are errors, and all problems
//! found in a document are reported together.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;
use toml::{Table, Value};

use crate::clifford::GateLabel;
use crate::engine::Physics;
use crate::error::{Error, Result};
use crate::experiments::{Measurement, SweepSpec};
use crate::qp::{DispersionParams, QPModel};
use crate::rb::{default_lengths, FitWindow, RbConfig};
use crate::transmon::{delta_theta, CouplingParams, DecoherenceParams, TransmonParams};
use crate::units::{angular_to_hz, hz_to_angular, EV};

const PAPER_DEFAULTS: &str = include_str!("../presets/paper-defaults.toml");

/// Largest seed representable in a TOML integer.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentKind {
    Rabi,
    Chevron,
    Ramsey,
    Rabi2d,
    Staircase,
    Rb,
    QpPoison,
    QpRecovery,
    FitDecay,
    Dispersion,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        Self::Rabi,
        Self::Chevron,
        Self::Ramsey,
        Self::Rabi2d,
        Self::Staircase,
        Self::Rb,
        Self::QpPoison,
        Self::QpRecovery,
        Self::FitDecay,
        Self::Dispersion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rabi => "rabi",
            Self::Chevron => "chevron",
            Self::Ramsey => "ramsey",
            Self::Rabi2d => "rabi2d",
            Self::Staircase => "staircase",
            Self::Rb => "rb",
            Self::QpPoison => "qp-poison",
            Self::QpRecovery => "qp-recovery",
            Self::FitDecay => "fit-decay",
            Self::Dispersion => "dispersion",
        }
    }

    /// Swept axes in nesting order (outermost first).
    pub fn sweep_axes(self) -> &'static [&'static str] {
        match self {
            Self::Rabi | Self::Staircase => &["t_s"],
            Self::Chevron => &["detuning_hz", "t_s"],
            Self::Ramsey => &["delay_s"],
            Self::Rabi2d => &["phase_rad", "t_s"],
            Self::QpPoison => &["slips", "probe_s"],
            Self::QpRecovery => &["delay_s", "probe_s"],
            Self::Dispersion => &["delay_s"],
            Self::Rb | Self::FitDecay => &[],
        }
    }

    fn default_sweep(self, axis: &str) -> SweepSpec {
        let lin = |a: f64, b: f64, n: usize| SweepSpec::linspace(axis, a, b, n).expect("static sweep");
        match (self, axis) {
            (Self::Rabi, _) => lin(0.0, 200e-9, 201),
            (Self::Staircase, _) => lin(0.0, 100e-9, 1001),
            (Self::Chevron, "detuning_hz") => lin(-20e6, 20e6, 41),
            (Self::Chevron, _) => lin(0.0, 100e-9, 101),
            (Self::Ramsey, _) => lin(0.0, 2e-6, 201),
            (Self::Rabi2d, "phase_rad") => lin(0.0, TAU, 73),
            (Self::Rabi2d, _) => lin(0.0, 56e-9, 57),
            (Self::QpPoison, "slips") => {
                SweepSpec::new(axis, vec![0.0, 160.0, 320.0, 640.0, 960.0, 1280.0]).expect("static sweep")
            }
            (Self::QpRecovery | Self::Dispersion, "delay_s") => lin(0.0, 80e-6, 17),
            (_, _) => lin(0.0, 20e-6, 201),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperDefaults,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::PaperDefaults => "paper-defaults",
        }
    }

    /// The preset as a TOML document.
    pub fn document(self) -> &'static str {
        match self {
            Self::PaperDefaults => PAPER_DEFAULTS,
        }
    }

    fn table(self) -> Table {
        self.document().parse().expect("bundled preset is valid TOML")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-defaults" => Ok(Self::PaperDefaults),
            _ => Err(Error::invalid("preset", format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub subharmonic: u32,
    /// Trigger detuning from ω₁₀/n.
    pub detuning_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbBlock {
    pub sequence_lengths: Vec<usize>,
    pub randomizations: usize,
    pub interleaved: Vec<GateLabel>,
    pub fit_window: FitWindow,
    pub depolarizing: Option<f64>,
}

impl Default for RbBlock {
    fn default() -> Self {
        Self {
            sequence_lengths: default_lengths(200, 12),
            randomizations: 30,
            interleaved: Vec::new(),
            fit_window: FitWindow::All,
            depolarizing: None,
        }
    }
}

/// Poisoning pulse used by the recovery and dispersion experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonBlock {
    pub slips: u64,
}

impl Default for PoisonBlock {
    fn default() -> Self {
        Self { slips: 640 }
    }
}

/// Input for `fit-decay`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitBlock {
    /// Two-column CSV (time_s, p1); the bundled synthetic curve when absent.
    pub input: Option<PathBuf>,
    pub t1_qp_s: Option<f64>,
    pub t1_r_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub transmon: TransmonParams,
    pub coupling: CouplingParams,
    pub decoherence: Option<DecoherenceParams>,
    pub qp: Option<QPModel>,
    pub dispersion: DispersionParams,
    pub drive: DriveConfig,
    pub shots: Option<u64>,
    pub sweeps: BTreeMap<String, SweepSpec>,
    pub rb: Option<RbBlock>,
    pub poison: Option<PoisonBlock>,
    pub fit: Option<FitBlock>,
}

impl RunConfig {
    pub fn delta_theta(&self) -> f64 {
        delta_theta(&self.coupling, self.transmon.omega10)
    }

    pub fn physics(&self) -> Physics {
        let mut p = Physics::ideal(self.transmon, self.delta_theta());
        p.decoherence = self.decoherence;
        if let Some(model) = self.qp {
            p = p.with_qp(model, self.dispersion);
        }
        p
    }

    pub fn measurement(&self) -> Measurement {
        Measurement { shots: self.shots, seed: self.seed }
    }

    /// Sweep for `axis`, which must belong to this experiment.
    pub fn sweep(&self, axis: &str) -> Result<&SweepSpec> {
        self.sweeps.get(axis).ok_or_else(|| Error::invalid("sweep", format!("no sweep named `{axis}`")))
    }

    pub fn rb_config(&self) -> RbConfig {
        let rb = self.rb.clone().unwrap_or_default();
        RbConfig {
            sequence_lengths: rb.sequence_lengths,
            randomizations: rb.randomizations,
            interleaved_gate: None,
            seed: self.seed,
            fit_window: rb.fit_window,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        if seed > MAX_SEED {
            return Err(Error::invalid("seed", format!("must not exceed {MAX_SEED}")));
        }
        self.seed = seed;
        Ok(self)
    }

    /// Canonical document; [`RunConfig::from_table`] inverts it exactly.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        t.insert("experiment".into(), self.experiment.name().into());
        t.insert("seed".into(), Value::Integer(self.seed as i64));
        t.insert("output_dir".into(), self.output_dir.to_string_lossy().into_owned().into());
        t.insert(
            "transmon".into(),
            table([
                ("f10_hz", angular_to_hz(self.transmon.omega10).into()),
                ("alpha_hz", angular_to_hz(self.transmon.alpha).into()),
                ("dim", Value::Integer(self.transmon.dim as i64)),
            ]),
        );
        t.insert(
            "coupling".into(),
            table([
                ("coupling_capacitance_f", self.coupling.coupling_capacitance.into()),
                ("qubit_capacitance_f", self.coupling.qubit_capacitance.into()),
            ]),
        );
        if let Some(d) = &self.decoherence {
            t.insert(
                "decoherence".into(),
                table([
                    ("t1_s", d.t1_residual.into()),
                    ("t2_star_s", d.t2_star_residual.into()),
                    ("t1_per_qp_s", d.t1_per_qp.into()),
                    ("qp_dispersion_factor", d.qp_dispersion_factor.into()),
                ]),
            );
        }
        if let Some(q) = &self.qp {
            t.insert(
                "qp".into(),
                table([
                    ("eta", q.eta.into()),
                    ("turn_on_slips", Value::Integer(q.turn_on_slips as i64)),
                    ("trapping_time_s", q.trapping_time().into()),
                    ("slips_per_cycle", Value::Integer(q.slips_per_cycle as i64)),
                    ("n_qp_background", q.n_qp_background.into()),
                ]),
            );
        }
        t.insert(
            "dispersion".into(),
            table([("gap_ev", self.dispersion.gap_ev().into()), ("empirical_factor", self.dispersion.empirical_factor.into())]),
        );
        t.insert(
            "drive".into(),
            table([
                ("subharmonic", Value::Integer(self.drive.subharmonic as i64)),
                ("detuning_hz", self.drive.detuning_hz.into()),
            ]),
        );
        if let Some(shots) = self.shots {
            t.insert("measurement".into(), table([("shots", Value::Integer(shots as i64))]));
        }
        if !self.sweeps.is_empty() {
            let mut sw = Table::new();
            for (name, s) in &self.sweeps {
                sw.insert(
                    name.clone(),
                    table([
                        ("values", Value::Array(s.values.iter().map(|v| Value::Float(*v)).collect())),
                        ("repetitions", Value::Integer(s.repetitions as i64)),
                    ]),
                );
            }
            t.insert("sweep".into(), Value::Table(sw));
        }
        if let Some(rb) = &self.rb {
            let mut r = table([
                ("sequence_lengths", Value::Array(rb.sequence_lengths.iter().map(|m| Value::Integer(*m as i64)).collect())),
                ("randomizations", Value::Integer(rb.randomizations as i64)),
                ("interleaved", Value::Array(rb.interleaved.iter().map(|g| Value::String(g.to_string())).collect())),
                (
                    "fit_window",
                    match rb.fit_window {
                        FitWindow::All => "all",
                        FitWindow::DecayBranch => "decay-branch",
                    }
                    .into(),
                ),
            ]);
            if let (Some(p), Value::Table(rt)) = (rb.depolarizing, &mut r) {
                rt.insert("depolarizing".into(), p.into());
            }
            t.insert("rb".into(), r);
        }
        if let Some(p) = &self.poison {
            t.insert("poison".into(), table([("slips", Value::Integer(p.slips as i64))]));
        }
        if let Some(f) = &self.fit {
            let mut ft = Table::new();
            if let Some(path) = &f.input {
                ft.insert("input".into(), path.to_string_lossy().into_owned().into());
            }
            if let Some(v) = f.t1_qp_s {
                ft.insert("t1_qp_s".into(), v.into());
            }
            if let Some(v) = f.t1_r_s {
                ft.insert("t1_r_s".into(), v.into());
            }
            t.insert("fit".into(), Value::Table(ft));
        }
        t
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_table()).expect("config tables serialize")
    }

    /// Parses and validates a document, reporting every problem at once.
    pub fn from_table(doc: &Table) -> Result<Self> {
        let mut errs = Vec::new();
        let cfg = parse_root(doc, &mut errs);
        match cfg {
            Some(c) if errs.is_empty() => Ok(c),
            _ => Err(Error::Config(errs)),
        }
    }
}

fn table<const N: usize>(entries: [(&str, Value); N]) -> Value {
    Value::Table(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Parses a TOML document, optionally layered over a preset.
pub fn parse_config(document: &str, preset: Option<Preset>) -> Result<RunConfig> {
    RunConfig::from_table(&layer(preset, parse_document(document)?))
}

/// Like [`parse_config`], with the experiment chosen by the caller. A document
/// naming a different experiment is rejected.
pub fn parse_config_for(document: &str, preset: Option<Preset>, experiment: ExperimentKind) -> Result<RunConfig> {
    let mut doc = parse_document(document)?;
    match doc.get("experiment") {
        Some(Value::String(s)) if s != experiment.name() => {
            return Err(Error::Config(vec![format!("experiment: document names `{s}` but `{experiment}` was requested")]));
        }
        _ => {
            doc.insert("experiment".into(), experiment.name().into());
        }
    }
    RunConfig::from_table(&layer(preset, doc))
}

fn parse_document(document: &str) -> Result<Table> {
    document.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map_or(0, |s| document[..s.start.min(document.len())].matches('\n').count() + 1);
        Error::Parse { line, message: e.message().to_string() }
    })
}

/// Re-parses the `config` object of a metadata sidecar.
pub fn parse_metadata_json(document: &str) -> Result<RunConfig> {
    let root: serde_json::Value = serde_json::from_str(document)?;
    let config = root.get("config").cloned().ok_or_else(|| Error::Config(vec!["metadata has no `config` object".into()]))?;
    let doc = Table::deserialize(config).map_err(|e| Error::Config(vec![format!("config object: {e}")]))?;
    RunConfig::from_table(&doc)
}

/// `overlay` merged over the preset, table by table.
pub fn layer(preset: Option<Preset>, overlay: Table) -> Table {
    match preset {
        Some(p) => {
            let mut base = p.table();
            merge(&mut base, overlay);
            base
        }
        None => overlay,
    }
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

struct Section<'a> {
    path: String,
    table: &'a Table,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: &'a Table) -> Self {
        Self { path: path.to_string(), table, seen: BTreeSet::new() }
    }

    fn key(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        self.seen.insert(key.to_string());
        self.table.get(key)
    }

    fn f64(&mut self, key: &str, errs: &mut Vec<String>) -> Option<f64> {
        match self.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                errs.push(format!("{}: expected a number, found {}", self.key(key), other.type_str()));
                None
            }
        }
    }

    fn req_f64(&mut self, key: &str, errs: &mut Vec<String>) -> Option<f64> {
        if self.table.contains_key(key) {
            self.f64(key, errs)
        } else {
            errs.push(format!("{}: missing required field", self.key(key)));
            None
        }
    }

    fn u64(&mut self, key: &str, errs: &mut Vec<String>) -> Option<u64> {
        match self.get(key)? {
            Value::Integer(v) if *v >= 0 => Some(*v as u64),
            Value::Integer(_) => {
                errs.push(format!("{}: must be non-negative", self.key(key)));
                None
            }
            other => {
                errs.push(format!("{}: expected an integer, found {}", self.key(key), other.type_str()));
                None
            }
        }
    }

    fn string(&mut self, key: &str, errs: &mut Vec<String>) -> Option<&'a str> {
        match self.get(key)? {
            Value::String(s) => Some(s),
            other => {
                errs.push(format!("{}: expected a string, found {}", self.key(key), other.type_str()));
                None
            }
        }
    }

    fn array(&mut self, key: &str, errs: &mut Vec<String>) -> Option<&'a Vec<Value>> {
        match self.get(key)? {
            Value::Array(a) => Some(a),
            other => {
                errs.push(format!("{}: expected an array, found {}", self.key(key), other.type_str()));
                None
            }
        }
    }

    fn sub(&mut self, key: &str, errs: &mut Vec<String>) -> Option<Section<'a>> {
        match self.get(key)? {
            Value::Table(t) => Some(Section::new(&self.key(key), t)),
            other => {
                errs.push(format!("{}: expected a table, found {}", self.key(key), other.type_str()));
                None
            }
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        for k in self.table.keys().filter(|k| !self.seen.contains(*k)) {
            errs.push(format!("{}: unknown key", self.key(k)));
        }
    }
}

fn push_invariants(path: &str, found: Vec<(&'static str, String)>, rename: &[(&str, &str)], errs: &mut Vec<String>) {
    for (name, reason) in found {
        let key = rename.iter().find(|(from, _)| *from == name).map_or(name, |(_, to)| *to);
        errs.push(format!("{path}.{key}: {reason}"));
    }
}

fn push_error(path: &str, e: Error, errs: &mut Vec<String>) {
    match e {
        Error::InvalidParameter { name, reason } => errs.push(format!("{path}.{name}: {reason}")),
        other => errs.push(format!("{path}: {other}")),
    }
}

fn parse_root(doc: &Table, errs: &mut Vec<String>) -> Option<RunConfig> {
    let mut root = Section::new("", doc);
    let experiment = match root.string("experiment", errs) {
        Some(s) => match s.parse::<ExperimentKind>() {
            Ok(k) => Some(k),
            Err(_) => {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                errs.push(format!("experiment: unknown experiment `{s}` (expected one of {})", names.join(", ")));
                None
            }
        },
        None => {
            if !doc.contains_key("experiment") {
                errs.push("experiment: missing required field".into());
            }
            None
        }
    };
    let seed = root.u64("seed", errs).unwrap_or(0);
    let output_dir = PathBuf::from(root.string("output_dir", errs).unwrap_or("out"));

    let transmon = match root.sub("transmon", errs) {
        Some(mut s) => {
            let f10 = s.req_f64("f10_hz", errs);
            let alpha = s.req_f64("alpha_hz", errs);
            let dim = s.u64("dim", errs).unwrap_or(3);
            s.finish(errs);
            match (f10, alpha) {
                (Some(f), Some(a)) => {
                    let t = TransmonParams { omega10: hz_to_angular(f), alpha: hz_to_angular(a), dim: dim as usize };
                    match t.validate() {
                        Ok(()) => Some(t),
                        Err(e) => {
                            push_error("transmon", e, errs);
                            None
                        }
                    }
                }
                _ => None,
            }
        }
        None => {
            if !doc.contains_key("transmon") {
                errs.push("transmon: missing required table".into());
            }
            None
        }
    };

    let coupling = match root.sub("coupling", errs) {
        Some(mut s) => {
            let cc = s.req_f64("coupling_capacitance_f", errs);
            let c = s.req_f64("qubit_capacitance_f", errs);
            s.finish(errs);
            match (cc, c) {
                (Some(cc), Some(c)) => {
                    let p = CouplingParams { coupling_capacitance: cc, qubit_capacitance: c };
                    match p.validate() {
                        Ok(()) => Some(p),
                        Err(e) => {
                            push_error("coupling", e, errs);
                            None
                        }
                    }
                }
                _ => None,
            }
        }
        None => {
            if !doc.contains_key("coupling") {
                errs.push("coupling: missing required table".into());
            }
            None
        }
    };

    let decoherence = root.sub("decoherence", errs).and_then(|mut s| {
        let t1 = s.req_f64("t1_s", errs);
        let t2 = s.req_f64("t2_star_s", errs);
        let t1pq = s.f64("t1_per_qp_s", errs).unwrap_or(f64::INFINITY);
        let factor = s.f64("qp_dispersion_factor", errs).unwrap_or(1.0);
        s.finish(errs);
        let d = DecoherenceParams { t1_residual: t1?, t2_star_residual: t2?, t1_per_qp: t1pq, qp_dispersion_factor: factor };
        let mut found = Vec::new();
        d.collect_errors(&mut found);
        let ok = found.is_empty();
        push_invariants(
            "decoherence",
            found,
            &[("t1_residual", "t1_s"), ("t2_star_residual", "t2_star_s"), ("t1_per_qp", "t1_per_qp_s")],
            errs,
        );
        ok.then_some(d)
    });

    let qp = root.sub("qp", errs).and_then(|mut s| {
        let d = QPModel::default();
        let eta = s.f64("eta", errs).unwrap_or(d.eta);
        let turn_on = s.u64("turn_on_slips", errs).unwrap_or(d.turn_on_slips);
        let tau = s.f64("trapping_time_s", errs).unwrap_or(d.trapping_time());
        let spc = s.u64("slips_per_cycle", errs).unwrap_or(d.slips_per_cycle);
        let bg = s.f64("n_qp_background", errs).unwrap_or(d.n_qp_background);
        s.finish(errs);
        if !(tau > 0.0 && tau.is_finite()) {
            errs.push("qp.trapping_time_s: must be positive and finite".into());
            return None;
        }
        let m = QPModel { eta, turn_on_slips: turn_on, trapping_rate: 1.0 / tau, slips_per_cycle: spc, n_qp_background: bg };
        let mut found = Vec::new();
        m.collect_errors(&mut found);
        let ok = found.is_empty();
        push_invariants("qp", found, &[("trapping_rate", "trapping_time_s")], errs);
        ok.then_some(m)
    });
    if qp.is_some() && decoherence.is_none() && !doc.contains_key("decoherence") {
        errs.push("qp: requires a [decoherence] table".into());
    }

    let dispersion = match root.sub("dispersion", errs) {
        Some(mut s) => {
            let d = DispersionParams::default();
            let gap = s.f64("gap_ev", errs).unwrap_or(d.gap_ev());
            let factor = s.f64("empirical_factor", errs).unwrap_or(d.empirical_factor);
            s.finish(errs);
            let p = DispersionParams { gap: gap * EV, empirical_factor: factor };
            if let Err(e) = p.validate() {
                push_error("dispersion", e, errs);
            }
            p
        }
        None => DispersionParams::default(),
    };

    let drive = match root.sub("drive", errs) {
        Some(mut s) => {
            let n = s.u64("subharmonic", errs).unwrap_or(1);
            let det = s.f64("detuning_hz", errs).unwrap_or(0.0);
            s.finish(errs);
            if n == 0 || n > u32::MAX as u64 {
                errs.push("drive.subharmonic: must be a positive 32-bit integer".into());
            }
            if !det.is_finite() {
                errs.push("drive.detuning_hz: must be finite".into());
            }
            DriveConfig { subharmonic: n.clamp(1, u32::MAX as u64) as u32, detuning_hz: det }
        }
        None => DriveConfig { subharmonic: 1, detuning_hz: 0.0 },
    };
    if let (Some(t), true) = (&transmon, drive.detuning_hz.is_finite()) {
        let f_d = angular_to_hz(t.omega10) / drive.subharmonic as f64 + drive.detuning_hz;
        if f_d <= 0.0 {
            errs.push("drive.detuning_hz: trigger frequency would not be positive".into());
        }
    }

    let shots = root.sub("measurement", errs).and_then(|mut s| {
        let shots = s.u64("shots", errs);
        s.finish(errs);
        if shots == Some(0) {
            errs.push("measurement.shots: must be at least 1".into());
        }
        shots
    });

    let mut sweeps = BTreeMap::new();
    if let Some(mut sw) = root.sub("sweep", errs) {
        for name in sw.table.keys().cloned().collect::<Vec<_>>() {
            if let Some(exp) = experiment {
                if !exp.sweep_axes().contains(&name.as_str()) {
                    errs.push(format!("sweep.{name}: not an axis of `{exp}` (axes: {:?})", exp.sweep_axes()));
                    sw.seen.insert(name);
                    continue;
                }
            }
            if let Some(s) = sw.sub(&name, errs) {
                if let Some(spec) = parse_sweep(&name, s, errs) {
                    sweeps.insert(name, spec);
                }
            }
        }
        sw.finish(errs);
    }
    if let Some(exp) = experiment {
        for axis in exp.sweep_axes() {
            sweeps.entry(axis.to_string()).or_insert_with(|| exp.default_sweep(axis));
        }
        if let Some(s) = sweeps.get("slips") {
            if s.values.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                errs.push("sweep.slips: values must be non-negative integers".into());
            }
        }
        for axis in ["t_s", "delay_s", "probe_s"] {
            if sweeps.get(axis).is_some_and(|s| s.values.iter().any(|v| *v < 0.0)) {
                errs.push(format!("sweep.{axis}: times must be non-negative"));
            }
        }
    }

    let rb = match root.sub("rb", errs) {
        Some(s) => parse_rb(s, errs),
        None => (experiment == Some(ExperimentKind::Rb)).then(RbBlock::default),
    };
    let poison = match root.sub("poison", errs) {
        Some(mut s) => {
            let slips = s.u64("slips", errs).unwrap_or(PoisonBlock::default().slips);
            s.finish(errs);
            Some(PoisonBlock { slips })
        }
        None => matches!(experiment, Some(ExperimentKind::QpRecovery | ExperimentKind::Dispersion)).then(PoisonBlock::default),
    };
    let fit = match root.sub("fit", errs) {
        Some(mut s) => {
            let input = s.string("input", errs).map(PathBuf::from);
            let t1_qp_s = s.f64("t1_qp_s", errs);
            let t1_r_s = s.f64("t1_r_s", errs);
            s.finish(errs);
            for (k, v) in [("t1_qp_s", t1_qp_s), ("t1_r_s", t1_r_s)] {
                if v.is_some_and(|v| !(v > 0.0)) {
                    errs.push(format!("fit.{k}: must be positive"));
                }
            }
            Some(FitBlock { input, t1_qp_s, t1_r_s })
        }
        None => (experiment == Some(ExperimentKind::FitDecay)).then(FitBlock::default),
    };
    root.finish(errs);

    if seed > MAX_SEED {
        errs.push(format!("seed: must not exceed {MAX_SEED}"));
    }
    if let Some(exp) = experiment {
        let needs_qp = matches!(exp, ExperimentKind::QpPoison | ExperimentKind::QpRecovery | ExperimentKind::Dispersion);
        if needs_qp && (!doc.contains_key("qp") || !doc.contains_key("decoherence")) {
            errs.push(format!("{exp}: requires [qp] and [decoherence] tables"));
        }
    }

    Some(RunConfig {
        experiment: experiment?,
        seed,
        output_dir,
        transmon: transmon?,
        coupling: coupling?,
        decoherence: if doc.contains_key("decoherence") { Some(decoherence?) } else { None },
        qp: if doc.contains_key("qp") { Some(qp?) } else { None },
        dispersion,
        drive,
        shots,
        sweeps,
        rb,
        poison,
        fit,
    })
}

fn parse_sweep(name: &str, mut s: Section<'_>, errs: &mut Vec<String>) -> Option<SweepSpec> {
    let path = format!("sweep.{name}");
    let values = s.array("values", errs).map(|a| numbers(&format!("{path}.values"), a, errs));
    let start = s.f64("start", errs);
    let stop = s.f64("stop", errs);
    let count = s.u64("count", errs);
    let reps = s.u64("repetitions", errs).unwrap_or(1);
    s.finish(errs);
    let values = match (values, start, stop, count) {
        (Some(v), None, None, None) => v?,
        (None, Some(a), Some(b), Some(n)) => {
            if n == 0 {
                errs.push(format!("{path}.count: must be at least 1"));
                return None;
            }
            SweepSpec::linspace(name, a, b, n as usize).ok()?.values
        }
        _ => {
            errs.push(format!("{path}: give either `values` or all of `start`, `stop`, `count`"));
            return None;
        }
    };
    match SweepSpec::new(name, values).and_then(|s| s.with_repetitions(reps as usize)) {
        Ok(s) => Some(s),
        Err(e) => {
            push_error(&path, e, errs);
            None
        }
    }
}

fn numbers(path: &str, a: &[Value], errs: &mut Vec<String>) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len());
    for (i, v) in a.iter().enumerate() {
        match v {
            Value::Float(x) => out.push(*x),
            Value::Integer(x) => out.push(*x as f64),
            other => {
                errs.push(format!("{path}[{i}]: expected a number, found {}", other.type_str()));
                return None;
            }
        }
    }
    Some(out)
}

fn parse_rb(mut s: Section<'_>, errs: &mut Vec<String>) -> Option<RbBlock> {
    let d = RbBlock::default();
    let lengths = match s.array("sequence_lengths", errs) {
        Some(a) => {
            let mut v = Vec::with_capacity(a.len());
            for (i, x) in a.iter().enumerate() {
                match x {
                    Value::Integer(m) if *m >= 1 => v.push(*m as usize),
                    _ => errs.push(format!("rb.sequence_lengths[{i}]: expected a positive integer")),
                }
            }
            v
        }
        None => d.sequence_lengths.clone(),
    };
    let randomizations = s.u64("randomizations", errs).map_or(d.randomizations, |k| k as usize);
    let mut interleaved = Vec::new();
    if let Some(a) = s.array("interleaved", errs) {
        for (i, x) in a.iter().enumerate() {
            match x.as_str().map(str::parse::<GateLabel>) {
                Some(Ok(g)) => interleaved.push(g),
                _ => errs.push(format!("rb.interleaved[{i}]: expected a gate label such as \"X/2\"")),
            }
        }
    }
    let fit_window = match s.string("fit_window", errs) {
        None | Some("all") => FitWindow::All,
        Some("decay-branch") => FitWindow::DecayBranch,
        Some(other) => {
            errs.push(format!("rb.fit_window: unknown window `{other}` (expected \"all\" or \"decay-branch\")"));
            FitWindow::All
        }
    };
    let depolarizing = s.f64("depolarizing", errs);
    s.finish(errs);
    if depolarizing.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
        errs.push("rb.depolarizing: must lie in [0, 1]".into());
    }
    let cfg = RbConfig { sequence_lengths: lengths.clone(), randomizations, ..RbConfig::default() };
    let mut found = Vec::new();
    cfg.collect_errors(&mut found);
    push_invariants("rb", found, &[], errs);
    Some(RbBlock { sequence_lengths: lengths, randomizations, interleaved, fit_window, depolarizing })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "rabi"

[transmon]
f10_hz = 4.958e9
alpha_hz = -220e6

[coupling]
coupling_capacitance_f = 400e-18
qubit_capacitance_f = 86.66e-15
"#;

    #[test]
    fn minimal_rabi_fills_defaults() {
        let c = parse_config(MINIMAL, None).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Rabi);
        assert_eq!(c.seed, 0);
        assert_eq!(c.transmon.dim, 3);
        assert_eq!(c.drive.subharmonic, 1);
        assert!(c.decoherence.is_none());
        assert_eq!(c.sweep("t_s").unwrap().len(), 201);
        assert!(c.rb.is_none());
    }

    #[test]
    fn preset_loads() {
        let c = parse_config("experiment = \"rb\"", Some(Preset::PaperDefaults)).unwrap();
        assert!((angular_to_hz(c.transmon.omega10) - 4.958e9).abs() < 1e-3);
        let d = c.decoherence.unwrap();
        assert_eq!((d.t1_residual, d.t2_star_residual), (23.6e-6, 24.4e-6));
        assert_eq!(c.coupling.coupling_capacitance, 400e-18);
        assert_eq!(c.drive.subharmonic, 3);
        assert!(c.rb.is_some());
    }

    #[test]
    fn t2_star_beyond_twice_t1_names_the_field() {
        let doc = format!("{MINIMAL}\n[decoherence]\nt1_s = 10e-6\nt2_star_s = 25e-6\n");
        match parse_config(&doc, None) {
            Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.starts_with("decoherence.t2_star_s")), "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_errors_are_reported() {
        let doc = r#"
experiment = "rabbi"
colour = 3
[transmon]
f10_hz = "fast"
[coupling]
coupling_capacitance_f = 1e-18
qubit_capacitance_f = 1e-13
extra = 1
"#;
        match parse_config(doc, None) {
            Err(Error::Config(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("experiment:")));
                assert!(errs.iter().any(|e| e == "colour: unknown key"));
                assert!(errs.iter().any(|e| e.starts_with("transmon.f10_hz")));
                assert!(errs.iter().any(|e| e.starts_with("transmon.alpha_hz")));
                assert!(errs.iter().any(|e| e == "coupling.extra: unknown key"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn foreign_sweep_axis_is_rejected() {
        let doc = format!("{MINIMAL}\n[sweep.phase_rad]\nvalues = [0.0]\n");
        assert!(matches!(parse_config(&doc, None), Err(Error::Config(_))));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        match parse_config("experiment = \"rabi\"\n[transmon\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_round_trip() {
        for kind in ExperimentKind::ALL {
            let doc = format!(
                "experiment = \"{kind}\"\nseed = 17\n[rb]\ninterleaved = [\"X/2\", \"-Y\"]\ndepolarizing = 0.01\n[measurement]\nshots = 500\n[fit]\nt1_r_s = 2e-5\n"
            );
            let c = parse_config(&doc, Some(Preset::PaperDefaults)).unwrap();
            let again = RunConfig::from_table(&c.to_table()).unwrap();
            assert_eq!(c, again, "{kind}");
            let reparsed = parse_config(&c.to_toml_string(), None).unwrap();
            assert_eq!(c, reparsed, "{kind}");
            let sidecar = serde_json::json!({ "config": c.to_table() }).to_string();
            assert_eq!(parse_metadata_json(&sidecar).unwrap(), c, "{kind}");
        }
    }

    #[test]
    fn seed_limits() {
        let c = parse_config(MINIMAL, None).unwrap();
        assert!(c.clone().with_seed(MAX_SEED + 1).is_err());
        assert_eq!(c.with_seed(5).unwrap().seed, 5);
    }

    #[test]
    fn experiment_from_caller() {
        let c = parse_config_for("", Some(Preset::PaperDefaults), ExperimentKind::Staircase).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Staircase);
        assert!(parse_config_for("experiment = \"staircase\"", Some(Preset::PaperDefaults), ExperimentKind::Staircase).is_ok());
        assert!(matches!(
            parse_config_for("experiment = \"rabi\"", Some(Preset::PaperDefaults), ExperimentKind::Ramsey),
            Err(Error::Config(_))
        ));
    }
}
