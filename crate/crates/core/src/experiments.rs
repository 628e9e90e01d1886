//! The experiment suite: Rabi (versus time and driver bias), chevron, Ramsey,
//! generalized two-axis Rabi and the dilute-train staircase.
//!
//! Every experiment starts from the ground state at t = 0 with gates placed on
//! the trigger grid. Readout is the exact level populations, optionally
//! resampled with a finite number of shots.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::GateLabel;
use crate::engine::{Physics, Schedule, Simulator};
use crate::error::{Error, FitDiagnostics, Result};
use crate::fit::{levenberg_marquardt, Bounds, LmOptions, LmSolution};
use crate::sequencer::{GateSet, PulseTrain};
use crate::state::DensityMatrix;

/// One swept axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: String,
    pub values: Vec<f64>,
    pub repetitions: usize,
}

impl SweepSpec {
    pub fn new(axis: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let s = Self { axis: axis.into(), values, repetitions: 1 };
        s.validate()?;
        Ok(s)
    }

    /// `count` uniformly spaced values including both endpoints.
    pub fn linspace(axis: impl Into<String>, start: f64, stop: f64, count: usize) -> Result<Self> {
        let values = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count)
                .map(|i| if i + 1 == count { stop } else { start + (stop - start) * i as f64 / (count - 1) as f64 })
                .collect(),
        };
        Self::new(axis, values)
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Result<Self> {
        self.repetitions = repetitions;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("values", format!("sweep `{}` is empty", self.axis)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("sweep `{}` has a non-finite value", self.axis)));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be at least 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Level populations over a one- or two-axis grid (first axis outermost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub axes: Vec<SweepSpec>,
    /// `populations[point][k]` = P_k.
    pub populations: Vec<Vec<f64>>,
    pub dim: usize,
    pub metadata: serde_json::Value,
}

impl ExperimentResult {
    pub fn point_count(&self) -> usize {
        self.populations.len()
    }

    pub fn p1(&self) -> Vec<f64> {
        self.populations.iter().map(|p| p[1]).collect()
    }

    /// P₁ as rows of the outer axis.
    pub fn p1_grid(&self) -> Vec<Vec<f64>> {
        let inner = self.axes.get(1).map_or(self.point_count(), SweepSpec::len);
        self.p1().chunks(inner).map(<[f64]>::to_vec).collect()
    }

    /// Axis values of grid point `i`, outer axis first.
    pub fn coordinates(&self, i: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a.values[i]],
            [a, b] => vec![a.values[i / b.len()], b.values[i % b.len()]],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.axes.iter().map(SweepSpec::len).product();
        if expected != self.point_count() {
            return Err(Error::InvalidState(format!("{} points for a {expected}-point grid", self.point_count())));
        }
        if self.populations.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidState("population outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Readout model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    /// Shots per point; `None` reports exact populations.
    pub shots: Option<u64>,
    pub seed: u64,
}

/// Device, drive and readout shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub physics: Physics,
    pub subharmonic: u32,
    pub measurement: Measurement,
}

impl ExperimentSetup {
    pub fn new(physics: Physics, subharmonic: u32) -> Result<Self> {
        if subharmonic == 0 {
            return Err(Error::invalid("subharmonic", "must be at least 1"));
        }
        physics.validate()?;
        Ok(Self { physics, subharmonic, measurement: Measurement::default() })
    }

    pub fn with_measurement(mut self, measurement: Measurement) -> Self {
        self.measurement = measurement;
        self
    }

    /// Resonant trigger frequency ω₁₀/n.
    pub fn resonant_omega_d(&self) -> f64 {
        self.physics.transmon.omega10 / self.subharmonic as f64
    }

    /// Trigger angular frequency detuned by `detuning_hz` from ω₁₀/n.
    pub fn omega_d(&self, detuning_hz: f64) -> f64 {
        self.resonant_omega_d() + TAU * detuning_hz
    }

    pub fn gates(&self, omega_d: f64) -> Result<GateSet> {
        GateSet::calibrate_at(self.physics.delta_theta, self.subharmonic, omega_d)
    }

    fn metadata(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({ "setup": self, "experiment": extra })
    }
}

/// Rabi frequency δθ·f_d/2π, Hz.
pub fn rabi_frequency(delta_theta: f64, omega_d: f64) -> f64 {
    delta_theta * omega_d / (TAU * TAU)
}

/// Two-level generalized Rabi frequency √(Ω² + (n·δ)²), Hz.
pub fn generalized_rabi_frequency(rabi_hz: f64, subharmonic: u32, detuning_hz: f64) -> f64 {
    rabi_hz.hypot(subharmonic as f64 * detuning_hz)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for the grid point at `coords`.
///
/// Keyed on coordinates rather than on a point index so that the same physical
/// point draws the same shots in every experiment that visits it.
pub fn point_rng(master: u64, coords: &[f64]) -> ChaCha8Rng {
    let stream = coords.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, c| mix64(acc ^ c.to_bits()));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Exact populations clamped into [0, 1], or multinomial shot averages.
fn readout(state: &DensityMatrix, m: &Measurement, repetitions: usize, coords: &[f64]) -> Result<Vec<f64>> {
    let exact: Vec<f64> = state.populations().into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let Some(shots) = m.shots else { return Ok(exact) };
    if shots == 0 {
        return Err(Error::invalid("shots", "must be at least 1"));
    }
    let mut rng = point_rng(m.seed, coords);
    let mut acc = vec![0.0; exact.len()];
    for _ in 0..repetitions {
        let mut remaining = shots;
        let mut mass = 1.0;
        for (k, p) in exact.iter().enumerate() {
            let count = if k + 1 == exact.len() || remaining == 0 {
                remaining
            } else {
                let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
                Binomial::new(remaining, q).map_err(|e| Error::invalid("shots", e.to_string()))?.sample(&mut rng)
            };
            acc[k] += count as f64 / shots as f64;
            remaining -= count;
            mass -= p;
        }
    }
    Ok(acc.into_iter().map(|v| v / repetitions as f64).collect())
}

/// Number of pulses of a train starting at 0 that fire strictly before `t`.
fn pulses_before(train_omega_d: f64, phase: f64, t: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    let mut n = ((t * train_omega_d - phase) / TAU).ceil().max(0.0) as usize;
    while n > 0 && (TAU * (n - 1) as f64 + phase) / train_omega_d >= t {
        n -= 1;
    }
    while (TAU * n as f64 + phase) / train_omega_d < t {
        n += 1;
    }
    n
}

/// Samples one continuous zero-phase train at every duration.
fn continuous_train(setup: &ExperimentSetup, sim: &Simulator, omega_d: f64, durations: &[f64], key: f64, reps: usize) -> Result<Vec<Vec<f64>>> {
    if durations.iter().any(|t| *t < 0.0) {
        return Err(Error::invalid("durations", "must be non-negative"));
    }
    let t_max = durations.iter().copied().fold(0.0, f64::max);
    let mut schedule = Schedule::new();
    let count = pulses_before(omega_d, 0.0, t_max);
    schedule.add_train(&PulseTrain::new(setup.subharmonic, omega_d, 0.0, count, 0.0)?);
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|a, b| durations[*a].total_cmp(&durations[*b]));
    let sorted: Vec<f64> = order.iter().map(|&i| durations[i]).collect();
    let states = sim.run(&schedule, &DensityMatrix::ground(sim.dim()), &sorted)?;
    let mut out = vec![Vec::new(); durations.len()];
    for (state, &i) in states.iter().zip(&order) {
        out[i] = readout(state, &setup.measurement, reps, &[key, durations[i]])?;
    }
    Ok(out)
}

/// P(t) under a resonant zero-phase train; a sample at t sees pulses before t.
pub fn run_rabi(setup: &ExperimentSetup, durations: &SweepSpec) -> Result<ExperimentResult> {
    durations.validate()?;
    let sim = Simulator::new(&setup.physics)?;
    let populations = continuous_train(setup, &sim, setup.resonant_omega_d(), &durations.values, 0.0, durations.repetitions)?;
    Ok(ExperimentResult {
        name: "rabi".into(),
        axes: vec![durations.clone()],
        populations,
        dim: sim.dim(),
        metadata: setup.metadata(serde_json::json!({ "omega_d": setup.resonant_omega_d() })),
    })
}

/// Dilute-train staircase: identical to [`run_rabi`] but intended for sampling
/// densely between pulses.
pub fn run_staircase(setup: &ExperimentSetup, times: &SweepSpec) -> Result<ExperimentResult> {
    let mut r = run_rabi(setup, times)?;
    r.name = "staircase".into();
    Ok(r)
}

/// Arrival times of the staircase train's pulses up to `t_max`.
pub fn staircase_step_times(setup: &ExperimentSetup, t_max: f64) -> Result<Vec<f64>> {
    let w = setup.resonant_omega_d();
    let train = PulseTrain::new(setup.subharmonic, w, 0.0, pulses_before(w, 0.0, t_max), 0.0)?;
    Ok(crate::sequencer::pulse_times(&train))
}

/// Rabi versus trigger detuning (Hz, from ω₁₀/n) and duration.
pub fn run_chevron(setup: &ExperimentSetup, detunings: &SweepSpec, durations: &SweepSpec) -> Result<ExperimentResult> {
    detunings.validate()?;
    durations.validate()?;
    let sim = Simulator::new(&setup.physics)?;
    for d in &detunings.values {
        if !(setup.omega_d(*d) > 0.0) {
            return Err(Error::invalid("detuning", format!("{d} Hz gives a non-positive trigger frequency")));
        }
    }
    let rows: Vec<Vec<Vec<f64>>> = detunings
        .values
        .par_iter()
        .map(|d| continuous_train(setup, &sim, setup.omega_d(*d), &durations.values, *d, durations.repetitions))
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        name: "chevron".into(),
        axes: vec![detunings.clone(), durations.clone()],
        populations: rows.into_iter().flatten().collect(),
        dim: sim.dim(),
        metadata: setup.metadata(serde_json::json!({ "detuning_axis": "trigger detuning from omega10/n, Hz" })),
    })
}

/// Bias-window emulation of the driver: pulses are emitted only when the bias
/// lies inside `[window.0, window.1]`.
pub fn run_rabi_bias(setup: &ExperimentSetup, bias: &SweepSpec, window: (f64, f64), durations: &SweepSpec) -> Result<ExperimentResult> {
    bias.validate()?;
    durations.validate()?;
    if !(window.0 <= window.1) {
        return Err(Error::invalid("bias_window", "lower edge above upper edge"));
    }
    let sim = Simulator::new(&setup.physics)?;
    let on = continuous_train(setup, &sim, setup.resonant_omega_d(), &durations.values, 0.0, durations.repetitions)?;
    let off_states = sim.run(&Schedule::new(), &DensityMatrix::ground(sim.dim()), &[0.0])?;
    let mut populations = Vec::with_capacity(bias.len() * durations.len());
    for b in &bias.values {
        if (window.0..=window.1).contains(b) {
            populations.extend(on.iter().cloned());
        } else {
            for t in &durations.values {
                populations.push(readout(&off_states[0], &setup.measurement, durations.repetitions, &[f64::NAN, *t])?);
            }
        }
    }
    Ok(ExperimentResult {
        name: "rabi-bias".into(),
        axes: vec![bias.clone(), durations.clone()],
        populations,
        dim: sim.dim(),
        metadata: setup.metadata(serde_json::json!({ "bias_window": [window.0, window.1], "model": "phenomenological on/off window" })),
    })
}

/// X/2, delay, X/2 with the trigger detuned by `detuning_hz`.
///
/// Both gates are clocked by the detuned trigger, so each delay is rounded to
/// a whole number of trigger cycles; the result's axis holds the realized
/// delays.
pub fn run_ramsey(setup: &ExperimentSetup, delays: &SweepSpec, detuning_hz: f64) -> Result<ExperimentResult> {
    delays.validate()?;
    if delays.values.iter().any(|d| *d < 0.0) {
        return Err(Error::invalid("delays", "must be non-negative"));
    }
    let omega_d = setup.omega_d(detuning_hz);
    if !(omega_d > 0.0) {
        return Err(Error::invalid("detuning", "non-positive trigger frequency"));
    }
    let sim = Simulator::new(&setup.physics)?;
    let gates = setup.gates(omega_d)?;
    let half = *gates.get(GateLabel::X2)?;
    let period = gates.trigger_period();
    let realized: Vec<f64> = delays.values.iter().map(|d| (d / period).round() * period).collect();
    let populations: Vec<Vec<f64>> = realized
        .par_iter()
        .map(|&delay| {
            let mut s = Schedule::new();
            s.append_gate(&half, &gates)?;
            s.idle(delay)?;
            s.align_to_trigger(omega_d);
            s.append_gate(&half, &gates)?;
            let state = sim.final_state(&s, &DensityMatrix::ground(sim.dim()))?;
            readout(&state, &setup.measurement, delays.repetitions, &[detuning_hz, delay])
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        name: "ramsey".into(),
        axes: vec![SweepSpec { values: realized, ..delays.clone() }],
        populations,
        dim: sim.dim(),
        metadata: setup.metadata(serde_json::json!({ "detuning_hz": detuning_hz, "trigger_period_s": period })),
    })
}

/// X/2, R(t, φ), X/2 with the middle train's trigger phase φ swept.
///
/// The middle train lasts `floor(t/T_d)` whole trigger cycles.
pub fn run_rabi2d(setup: &ExperimentSetup, phases: &SweepSpec, durations: &SweepSpec) -> Result<ExperimentResult> {
    phases.validate()?;
    durations.validate()?;
    let sim = Simulator::new(&setup.physics)?;
    let omega_d = setup.resonant_omega_d();
    let gates = setup.gates(omega_d)?;
    let half = *gates.get(GateLabel::X2)?;
    let period = gates.trigger_period();
    let grid: Vec<(f64, f64)> = phases.values.iter().flat_map(|p| durations.values.iter().map(move |t| (*p, *t))).collect();
    let populations: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&(phi, t)| {
            let cycles = (t / period + 1e-9).floor().max(0.0) as usize;
            let mut s = Schedule::new();
            s.append_gate(&half, &gates)?;
            s.append_train(setup.subharmonic, omega_d, phi, cycles)?;
            s.append_gate(&half, &gates)?;
            let state = sim.final_state(&s, &DensityMatrix::ground(sim.dim()))?;
            readout(&state, &setup.measurement, durations.repetitions, &[phi, t])
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        name: "rabi2d".into(),
        axes: vec![phases.clone(), durations.clone()],
        populations,
        dim: sim.dim(),
        metadata: setup.metadata(serde_json::json!({ "sequence": "X/2, R(t, phi), X/2" })),
    })
}

/// Damped fringe B + e^{−t/T₂}(a·cos 2πft + b·sin 2πft).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeFit {
    pub frequency: f64,
    pub frequency_err: f64,
    /// Envelope time constant; infinite when no decay is resolved.
    pub decay_time: f64,
    pub decay_time_err: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual_norm: f64,
    pub diagnostics: FitDiagnostics,
}

/// Fits a damped sinusoid to uniformly or non-uniformly sampled fringes.
///
/// The initial frequency is the periodogram peak below the Nyquist frequency
/// of the smallest sample spacing, so fringes above it are reported at their
/// alias.
pub fn fit_fringe(times: &[f64], values: &[f64]) -> Result<FringeFit> {
    if times.len() != values.len() {
        return Err(Error::invalid("values", "length differs from times"));
    }
    if times.len() < 6 {
        return Err(Error::Unidentifiable("fringe fit needs at least 6 samples".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    if var < 1e-28 {
        return Err(Error::Degenerate("fringe signal is constant".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let span = sorted[sorted.len() - 1] - sorted[0];
    let min_step = sorted.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !min_step.is_finite() {
        return Err(Error::Degenerate("sample times coincide".into()));
    }
    let nyquist = 0.5 / min_step;
    let df = 1.0 / (span * 16.0);
    let steps = ((nyquist / df).ceil() as usize).clamp(16, 200_000);
    let power = |f: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (t, v) in times.iter().zip(values) {
            let ph = TAU * f * t;
            c += (v - mean) * ph.cos();
            s += (v - mean) * ph.sin();
        }
        c * c + s * s
    };
    let f0 = (1..=steps)
        .map(|i| nyquist * i as f64 / steps as f64)
        .map(|f| (f, power(f)))
        .fold((0.0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
        .0;

    let model = (5, times.len(), |p: &[f64], out: &mut [f64]| {
        for (i, t) in times.iter().enumerate() {
            let ph = TAU * p[1] * t;
            out[i] = p[0] + (-p[2] * t).exp() * (p[3] * ph.cos() + p[4] * ph.sin()) - values[i];
        }
    });
    let amp = (2.0 * var).sqrt();
    let bounds = Bounds {
        lower: vec![f64::NEG_INFINITY, 0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY, f64::INFINITY, 1e3 / span, f64::INFINITY, f64::INFINITY],
    };
    let mut best: Option<LmSolution> = None;
    for (a, b) in [(amp, 0.0), (0.0, amp), (-amp, 0.0), (0.0, -amp)] {
        let init = [mean, f0, 0.1 / span, a, b];
        if let Ok(sol) = levenberg_marquardt(&model, &init, &bounds, &LmOptions::default()) {
            if best.as_ref().is_none_or(|x| sol.cost < x.cost) {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or_else(|| Error::FitNonConvergence {
        reason: "fringe fit failed from every start".into(),
        diagnostics: FitDiagnostics { iterations: 0, cost: f64::NAN, damping: f64::NAN, gradient_norm: f64::NAN },
    })?;
    let err = sol.standard_errors(true);
    let rate = sol.params[2];
    Ok(FringeFit {
        frequency: sol.params[1],
        frequency_err: err[1],
        decay_time: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
        decay_time_err: if rate > 0.0 { err[2] / (rate * rate) } else { f64::INFINITY },
        amplitude: sol.params[3].hypot(sol.params[4]),
        offset: sol.params[0],
        residual_norm: sol.residual_norm(),
        diagnostics: sol.diagnostics,
    })
}
