//! SFQ pulse schedules: trigger timing, control-axis selection, gate calibration
//! in whole pulses, Clifford compilation and driver phase-slip bookkeeping.
//!
//! Timing convention: a pulse is emitted at every zero crossing of the trigger
//! phase, so pulse k of a train lands at `start + (2πk + φ)/ω_d`. With
//! `ω_d = ω₁₀/n` the qubit sees a control axis rotated by `n·φ`; the X axis is
//! the zero-phase train and Y is the train delayed by a quarter qubit period.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::clifford::{decomposition, CliffordGroup, GateLabel, Mat2};
use crate::error::{Error, Result};
use crate::state::C64;

/// Phase slips in the dc/SFQ converter per trigger cycle (one per junction).
pub const SLIPS_PER_CYCLE: u64 = 4;

/// A uniform train of SFQ pulses driven at a subharmonic of the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub subharmonic: u32,
    /// Trigger angular frequency, rad/s.
    pub omega_d: f64,
    /// Trigger phase in [0, 2π).
    pub trigger_phase: f64,
    pub pulse_count: usize,
    pub start_time: f64,
}

impl PulseTrain {
    pub fn new(subharmonic: u32, omega_d: f64, trigger_phase: f64, pulse_count: usize, start_time: f64) -> Result<Self> {
        if subharmonic == 0 {
            return Err(Error::invalid("subharmonic", "must be at least 1"));
        }
        if !(omega_d > 0.0) || !omega_d.is_finite() {
            return Err(Error::invalid("omega_d", format!("must be positive and finite, got {omega_d}")));
        }
        if !trigger_phase.is_finite() {
            return Err(Error::invalid("trigger_phase", "must be finite"));
        }
        if !start_time.is_finite() {
            return Err(Error::invalid("start_time", "must be finite"));
        }
        Ok(Self { subharmonic, omega_d, trigger_phase: wrap_phase(trigger_phase), pulse_count, start_time })
    }

    /// Resonant subharmonic train: `ω_d = ω₁₀/n`.
    pub fn resonant(subharmonic: u32, omega10: f64, trigger_phase: f64, pulse_count: usize, start_time: f64) -> Result<Self> {
        Self::new(subharmonic, omega10 / subharmonic.max(1) as f64, trigger_phase, pulse_count, start_time)
    }

    /// Interpulse spacing 2π/ω_d.
    pub fn period(&self) -> f64 {
        TAU / self.omega_d
    }

    pub fn pulse_time(&self, k: usize) -> f64 {
        self.start_time + (TAU * k as f64 + self.trigger_phase) / self.omega_d
    }

    /// Length of the trigger gate, `pulse_count` whole cycles.
    pub fn duration(&self) -> f64 {
        self.pulse_count as f64 * self.period()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn phase_slips(&self) -> u64 {
        count_phase_slips(self.pulse_count as u64)
    }
}

pub fn pulse_times(train: &PulseTrain) -> Vec<f64> {
    (0..train.pulse_count).map(|k| train.pulse_time(k)).collect()
}

pub(crate) fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Control-axis angle seen by the qubit for a train shifted in time by `tau`:
/// `(n·ω₁₀·τ) mod 2π`, measured from the X axis.
pub fn axis_angle(n: u32, omega10: f64, tau: f64) -> f64 {
    wrap_phase(n as f64 * omega10 * tau)
}

/// Timing shift `τ = Δφ/ω₁₀` that [`axis_angle`] maps back to the axis `n·Δφ`
/// selected by a trigger-phase offset `delta_phi`.
/// The pulses themselves move by `Δφ/ω_d = n·τ`.
pub fn trigger_phase_to_tau(delta_phi: f64, omega10: f64) -> f64 {
    delta_phi / omega10
}

/// Whole-pulse realization of a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub pulse_count: usize,
    /// `N·δθ − target`; |residual| ≤ δθ/2.
    pub residual: f64,
}

/// Nearest whole number of pulses for `target_angle`.
pub fn calibrate_gate(target_angle: f64, delta_theta: f64) -> Result<Calibration> {
    if !(delta_theta > 0.0) || !delta_theta.is_finite() {
        return Err(Error::invalid("delta_theta", format!("must be positive, got {delta_theta}")));
    }
    if !(target_angle >= 0.0) || !target_angle.is_finite() {
        return Err(Error::invalid("target_angle", format!("must be finite and non-negative, got {target_angle}")));
    }
    let pulse_count = (target_angle / delta_theta).round() as usize;
    Ok(Calibration { pulse_count, residual: pulse_count as f64 * delta_theta - target_angle })
}

pub fn count_phase_slips(trigger_cycles: u64) -> u64 {
    trigger_cycles * SLIPS_PER_CYCLE
}

/// A calibrated physical gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDef {
    pub label: GateLabel,
    pub pulse_count: usize,
    pub trigger_phase: f64,
    pub subharmonic: u32,
    /// Rotation error `N·δθ − target`, rad.
    pub residual_angle: f64,
}

/// Calibrated gate set for one subharmonic drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSet {
    pub delta_theta: f64,
    pub subharmonic: u32,
    /// Trigger angular frequency the gates are clocked at.
    pub omega_d: f64,
    /// Duration of the identity gate, s.
    pub idle_time: f64,
    gates: BTreeMap<GateLabel, GateDef>,
}

impl GateSet {
    /// Calibrates every label at `ω_d = ω₁₀/n`.
    pub fn calibrate(delta_theta: f64, subharmonic: u32, omega10: f64) -> Result<Self> {
        if subharmonic == 0 {
            return Err(Error::invalid("subharmonic", "must be at least 1"));
        }
        Self::calibrate_at(delta_theta, subharmonic, omega10 / subharmonic as f64)
    }

    /// Calibrates every label for a trigger at `omega_d` (possibly detuned).
    pub fn calibrate_at(delta_theta: f64, subharmonic: u32, omega_d: f64) -> Result<Self> {
        let mut gates = BTreeMap::new();
        for label in GateLabel::ALL {
            let (axis, angle) = label.rotation();
            let cal = calibrate_gate(angle, delta_theta)?;
            gates.insert(
                label,
                GateDef {
                    label,
                    pulse_count: cal.pulse_count,
                    trigger_phase: wrap_phase(axis / subharmonic as f64),
                    subharmonic,
                    residual_angle: cal.residual,
                },
            );
        }
        Ok(Self { delta_theta, subharmonic, omega_d, idle_time: 0.0, gates })
    }

    pub fn with_idle_time(mut self, idle_time: f64) -> Self {
        self.idle_time = idle_time.max(0.0);
        self
    }

    /// Restricts the set to `labels` (identity is always kept).
    pub fn restricted(&self, labels: &[GateLabel]) -> Self {
        let mut out = self.clone();
        out.gates.retain(|l, _| *l == GateLabel::I || labels.contains(l));
        out
    }

    pub fn get(&self, label: GateLabel) -> Result<&GateDef> {
        self.gates.get(&label).ok_or_else(|| Error::MissingGate(label.to_string()))
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateDef> {
        self.gates.values()
    }

    pub fn trigger_period(&self) -> f64 {
        TAU / self.omega_d
    }

    /// Wall-clock length of a gate.
    pub fn duration(&self, label: GateLabel) -> Result<f64> {
        let g = self.get(label)?;
        Ok(if label == GateLabel::I { self.idle_time } else { g.pulse_count as f64 * self.trigger_period() })
    }

    /// Deterministic structured-text export of the gate table.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            label: &'a str,
            pulse_count: usize,
            trigger_phase_rad: f64,
            axis_angle_rad: f64,
            duration_s: f64,
            phase_slips: u64,
            residual_angle_rad: f64,
        }
        #[derive(Serialize)]
        struct Table<'a> {
            delta_theta_rad: f64,
            subharmonic: u32,
            trigger_frequency_hz: f64,
            idle_time_s: f64,
            gates: Vec<Row<'a>>,
        }
        let rows = self
            .gates
            .values()
            .map(|g| Row {
                label: g.label.as_str(),
                pulse_count: g.pulse_count,
                trigger_phase_rad: g.trigger_phase,
                axis_angle_rad: g.label.rotation().0,
                duration_s: self.duration(g.label).unwrap_or(0.0),
                phase_slips: count_phase_slips(g.pulse_count as u64),
                residual_angle_rad: g.residual_angle,
            })
            .collect();
        let table = Table {
            delta_theta_rad: self.delta_theta,
            subharmonic: self.subharmonic,
            trigger_frequency_hz: self.omega_d / TAU,
            idle_time_s: self.idle_time,
            gates: rows,
        };
        serde_json::to_string_pretty(&table).expect("gate table serializes")
    }
}

/// Physical gates (time order) realizing Clifford `index`.
pub fn compile_clifford(index: usize, basis: &GateSet) -> Result<Vec<GateDef>> {
    decomposition(index)?.iter().map(|l| basis.get(*l).copied()).collect()
}

/// Deterministic structured-text export of the Clifford decomposition table.
pub fn clifford_table_json(basis: &GateSet) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        index: usize,
        inverse: usize,
        gates: Vec<&'static str>,
        pulse_count: usize,
    }
    let group = CliffordGroup::get();
    let mut rows = Vec::with_capacity(crate::clifford::CLIFFORD_COUNT);
    for index in 0..crate::clifford::CLIFFORD_COUNT {
        let compiled = compile_clifford(index, basis)?;
        rows.push(Row {
            index,
            inverse: group.inverse(index),
            gates: compiled.iter().map(|g| g.label.as_str()).collect(),
            pulse_count: compiled.iter().map(|g| g.pulse_count).sum(),
        });
    }
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Clifford indices of an RB sequence with their compiled gates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliffordSequence {
    pub indices: Vec<usize>,
    pub compiled: Vec<GateDef>,
    /// Number of gates contributed by each entry of `indices`.
    pub gates_per_clifford: Vec<usize>,
}

impl CliffordSequence {
    pub fn compile(indices: Vec<usize>, basis: &GateSet) -> Result<Self> {
        let mut compiled = Vec::new();
        let mut gates_per_clifford = Vec::with_capacity(indices.len());
        for &i in &indices {
            let gates = compile_clifford(i, basis)?;
            gates_per_clifford.push(gates.len());
            compiled.extend(gates);
        }
        Ok(Self { indices, compiled, gates_per_clifford })
    }

    /// Group product of the listed Cliffords.
    pub fn net_clifford(&self) -> usize {
        let g = CliffordGroup::get();
        self.indices.iter().fold(0, |acc, &i| g.compose(acc, i))
    }

    /// Ideal two-level unitary of the compiled gates.
    pub fn ideal_unitary(&self) -> Mat2 {
        self.compiled.iter().fold(Mat2::identity(), |acc, g| g.label.ideal_unitary() * acc)
    }

    pub fn total_pulses(&self) -> usize {
        self.compiled.iter().map(|g| g.pulse_count).sum()
    }
}

/// Maps a two-level unitary from the qubit's physical rotating frame to the
/// gate-label frame (zero-phase train ≡ +X).
///
/// A kick landing at qubit phase θ rotates about the physical axis θ + π/2, so
/// the label frame is the physical frame turned by −π/2 about z.
pub fn physical_to_label_frame(u: &Mat2) -> Mat2 {
    let rz = |beta: f64| Mat2::new(C64::from_polar(1.0, -beta / 2.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::from_polar(1.0, beta / 2.0));
    rz(-FRAC_PI_2) * u * rz(FRAC_PI_2)
}
