//! Pulse-level propagation of the transmon through an SFQ schedule.
//!
//! The state is carried in the lab frame. Between events the exact interval
//! propagator is applied with rates frozen at their interval means; pulses are
//! instantaneous kicks. At equal times markers act first, then samples are
//! taken, then kicks fire, so a sample at t sees only pulses before t.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clifford::{GateLabel, Mat2};
use crate::error::{Error, Result};
use crate::qp::{dispersion_ratio, qp_trajectory, DispersionParams, DriveWindow, QPModel, QpTrajectory};
use crate::sequencer::{physical_to_label_frame, GateDef, GateSet, PulseTrain};
use crate::state::{DensityMatrix, C64};
use crate::transmon::{propagate_bands, shifted_levels, DecoherenceParams, KickOperator, TransmonParams};

/// Channel applications between trace/Hermiticity checks.
pub const DRIFT_CHECK_INTERVAL: usize = 1000;
/// Largest drift silently renormalized.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

/// Quasiparticle coupling used when decoherence is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpCoupling {
    pub model: QPModel,
    pub dispersion: DispersionParams,
}

/// Everything the propagator needs to know about the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub transmon: TransmonParams,
    /// Tip angle per SFQ pulse, rad.
    pub delta_theta: f64,
    pub decoherence: Option<DecoherenceParams>,
    /// Ignored unless `decoherence` is set.
    pub qp: Option<QpCoupling>,
}

impl Physics {
    pub fn ideal(transmon: TransmonParams, delta_theta: f64) -> Self {
        Self { transmon, delta_theta, decoherence: None, qp: None }
    }

    pub fn with_decoherence(mut self, decoherence: DecoherenceParams) -> Self {
        self.decoherence = Some(decoherence);
        self
    }

    pub fn with_qp(mut self, model: QPModel, dispersion: DispersionParams) -> Self {
        self.qp = Some(QpCoupling { model, dispersion });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.transmon.validate()?;
        if !self.delta_theta.is_finite() {
            return Err(Error::invalid("delta_theta", "must be finite"));
        }
        if let Some(d) = &self.decoherence {
            d.validate()?;
        }
        if let Some(q) = &self.qp {
            q.model.validate()?;
            q.dispersion.validate()?;
        }
        Ok(())
    }
}

/// Non-unitary operations inserted at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Marker {
    /// ρ → (1−p)ρ + p·I/d.
    Depolarize(f64),
    /// Ideal preparation of a basis state.
    Reset(usize),
}

/// Pulse times, driver activity windows and markers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    kicks: Vec<f64>,
    windows: Vec<DriveWindow>,
    markers: Vec<(f64, Marker)>,
    cursor: f64,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time at which the next appended element starts.
    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    /// Adds a train at its own start time without moving the cursor.
    pub fn add_train(&mut self, train: &PulseTrain) {
        self.kicks.extend((0..train.pulse_count).map(|k| train.pulse_time(k)));
        if train.pulse_count > 0 {
            self.windows.push(DriveWindow { start: train.start_time, end: train.end_time(), omega_d: train.omega_d });
        }
    }

    /// Appends a train at the cursor and advances the cursor past it.
    pub fn append_train(&mut self, subharmonic: u32, omega_d: f64, trigger_phase: f64, pulse_count: usize) -> Result<PulseTrain> {
        let train = PulseTrain::new(subharmonic, omega_d, trigger_phase, pulse_count, self.cursor)?;
        self.add_train(&train);
        self.cursor = train.end_time();
        Ok(train)
    }

    /// Appends a calibrated gate clocked by `gates`.
    pub fn append_gate(&mut self, gate: &GateDef, gates: &GateSet) -> Result<()> {
        if gate.label == GateLabel::I {
            self.idle(gates.idle_time)
        } else {
            self.append_train(gate.subharmonic, gates.omega_d, gate.trigger_phase, gate.pulse_count).map(|_| ())
        }
    }

    pub fn idle(&mut self, dt: f64) -> Result<()> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::invalid("idle", format!("duration must be finite and non-negative, got {dt}")));
        }
        self.cursor += dt;
        Ok(())
    }

    /// Moves the cursor to the next trigger edge of a clock at `omega_d`.
    pub fn align_to_trigger(&mut self, omega_d: f64) {
        let period = std::f64::consts::TAU / omega_d;
        let cycles = self.cursor / period;
        let whole = cycles.round();
        let target = if (cycles - whole).abs() < 1e-9 { whole } else { cycles.ceil() };
        self.cursor = target * period;
    }

    /// Driver activity without pulses reaching the qubit.
    pub fn add_window(&mut self, window: DriveWindow) -> Result<()> {
        if !(window.start >= 0.0 && window.end >= window.start && window.end.is_finite() && window.omega_d > 0.0) {
            return Err(Error::invalid("window", "need 0 ≤ start ≤ end and a positive trigger frequency"));
        }
        self.windows.push(window);
        Ok(())
    }

    pub fn add_marker(&mut self, marker: Marker) {
        self.markers.push((self.cursor, marker));
    }

    pub fn kick_times(&self) -> &[f64] {
        &self.kicks
    }

    pub fn windows(&self) -> &[DriveWindow] {
        &self.windows
    }

    pub fn markers(&self) -> &[(f64, Marker)] {
        &self.markers
    }

    /// Latest of the cursor, the last pulse and the last window end.
    pub fn end_time(&self) -> f64 {
        let last_kick = self.kicks.iter().copied().fold(0.0, f64::max);
        let last_window = self.windows.iter().map(|w| w.end).fold(0.0, f64::max);
        self.cursor.max(last_kick).max(last_window)
    }
}

#[derive(Clone, Copy)]
enum Event {
    Sample(usize),
    Marker(Marker),
    Kick,
}

impl Event {
    fn rank(&self) -> u8 {
        match self {
            Event::Marker(_) => 0,
            Event::Sample(_) => 1,
            Event::Kick => 2,
        }
    }
}

/// Reusable propagator for one set of physics.
#[derive(Debug, Clone)]
pub struct Simulator {
    physics: Physics,
    kick: KickOperator,
    gamma1_residual: f64,
    gamma_phi: f64,
    /// Relaxation rate and frequency shift per excess QP.
    per_qp: Option<(f64, f64)>,
}

impl Simulator {
    pub fn new(physics: &Physics) -> Result<Self> {
        physics.validate()?;
        let kick = KickOperator::new(physics.delta_theta, physics.transmon.dim);
        let (gamma1_residual, gamma_phi) = match &physics.decoherence {
            Some(d) => (1.0 / d.t1_residual, d.dephasing_rate()),
            None => (0.0, 0.0),
        };
        let per_qp = match (&physics.decoherence, &physics.qp) {
            (Some(d), Some(q)) => {
                let g = 1.0 / d.t1_per_qp;
                let ratio = dispersion_ratio(physics.transmon.omega10, &q.dispersion) * d.qp_dispersion_factor;
                Some((g, ratio * g))
            }
            _ => None,
        };
        Ok(Self { physics: physics.clone(), kick, gamma1_residual, gamma_phi, per_qp })
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn dim(&self) -> usize {
        self.physics.transmon.dim
    }

    /// ⟨n_QP⟩(t) implied by the schedule's drive windows, if QPs are modeled.
    pub fn qp_trajectory(&self, schedule: &Schedule) -> Result<Option<QpTrajectory>> {
        match (&self.per_qp, &self.physics.qp) {
            (Some(_), Some(q)) => Ok(Some(qp_trajectory(&schedule.windows, &q.model)?)),
            _ => Ok(None),
        }
    }

    /// States at each of `sample_times` (ascending, ≥ 0), starting from `initial` at t = 0.
    pub fn run(&self, schedule: &Schedule, initial: &DensityMatrix, sample_times: &[f64]) -> Result<Vec<DensityMatrix>> {
        let d = self.dim();
        if initial.dim() != d {
            return Err(Error::InvalidState(format!("initial state has dimension {}, expected {d}", initial.dim())));
        }
        if sample_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::invalid("sample_times", "must be finite and non-negative"));
        }
        if sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("sample_times", "must be in ascending order"));
        }
        if schedule.kicks.iter().chain(schedule.markers.iter().map(|(t, _)| t)).any(|t| *t < 0.0) {
            return Err(Error::invalid("schedule", "events before t = 0"));
        }
        if let Some((_, Marker::Reset(k))) = schedule.markers.iter().find(|(_, m)| matches!(m, Marker::Reset(k) if *k >= d)) {
            return Err(Error::IndexOutOfRange { index: *k, len: d });
        }

        let mut events: Vec<(f64, Event)> = Vec::with_capacity(schedule.kicks.len() + schedule.markers.len() + sample_times.len());
        events.extend(schedule.kicks.iter().map(|t| (*t, Event::Kick)));
        events.extend(schedule.markers.iter().map(|(t, m)| (*t, Event::Marker(*m))));
        events.extend(sample_times.iter().enumerate().map(|(i, t)| (*t, Event::Sample(i))));
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())));

        let trajectory = self.qp_trajectory(schedule)?;
        let mut rho = initial.matrix().clone();
        let mut scratch = DMatrix::zeros(d, d);
        let mut freqs = vec![0.0; d];
        let mut bare = vec![0.0; d];
        shifted_levels(&self.physics.transmon, 0.0, &mut bare);
        let mut out: Vec<Option<DensityMatrix>> = vec![None; sample_times.len()];
        let mut now = 0.0;
        let mut applications = 0usize;
        let mut next_check = DRIFT_CHECK_INTERVAL;

        for (t, event) in events {
            if t > now {
                self.propagate(&mut rho, now, t, trajectory.as_ref(), &bare, &mut freqs);
                applications += 1;
                now = t;
            }
            match event {
                Event::Sample(i) => out[i] = Some(DensityMatrix::from_matrix_unchecked(rho.clone())),
                Event::Marker(Marker::Depolarize(p)) => {
                    depolarize(&mut rho, p);
                    applications += 1;
                }
                Event::Marker(Marker::Reset(k)) => {
                    rho.fill(C64::new(0.0, 0.0));
                    rho[(k, k)] = C64::new(1.0, 0.0);
                }
                Event::Kick => {
                    self.kick.apply_in_place(&mut rho, &mut scratch);
                    applications += 1;
                }
            }
            if applications >= next_check {
                next_check = applications + DRIFT_CHECK_INTERVAL;
                check_drift(&mut rho, applications)?;
            }
        }
        Ok(out.into_iter().map(|s| s.expect("every sample visited")).collect())
    }

    /// State at the schedule's end time.
    pub fn final_state(&self, schedule: &Schedule, initial: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(self.run(schedule, initial, &[schedule.end_time()])?.pop().expect("one sample"))
    }

    fn propagate(&self, rho: &mut DMatrix<C64>, a: f64, b: f64, traj: Option<&QpTrajectory>, bare: &[f64], freqs: &mut [f64]) {
        let mut gamma1 = self.gamma1_residual;
        let shift = match (traj, self.per_qp) {
            (Some(tr), Some((g, s))) => {
                let excess = tr.mean_excess(a, b);
                gamma1 += excess * g;
                excess * s
            }
            _ => 0.0,
        };
        for (k, f) in freqs.iter_mut().enumerate() {
            *f = bare[k] + k as f64 * shift;
        }
        propagate_bands(rho, freqs, b - a, gamma1, self.gamma_phi);
    }

    /// Lab-frame propagator from 0 to `t_end` (coherent physics only).
    pub fn propagator(&self, schedule: &Schedule, t_end: f64) -> Result<DMatrix<C64>> {
        if self.physics.decoherence.is_some() {
            return Err(Error::invalid("physics", "propagator requires decoherence-free physics"));
        }
        if !schedule.markers.is_empty() {
            return Err(Error::invalid("schedule", "propagator is undefined with non-unitary markers"));
        }
        let d = self.dim();
        let mut kicks: Vec<f64> = schedule.kicks.iter().copied().filter(|t| *t < t_end).collect();
        kicks.sort_by(f64::total_cmp);
        let levels: Vec<f64> = (0..d).map(|k| self.physics.transmon.level_energy(k)).collect();
        let mut u = DMatrix::<C64>::identity(d, d);
        let mut now = 0.0;
        let free = |u: &mut DMatrix<C64>, dt: f64| {
            for (k, e) in levels.iter().enumerate() {
                let phase = C64::from_polar(1.0, -e * dt);
                for j in 0..d {
                    u[(k, j)] *= phase;
                }
            }
        };
        for t in kicks {
            free(&mut u, t - now);
            u = self.kick.unitary() * &u;
            now = t;
        }
        free(&mut u, t_end - now);
        Ok(u)
    }
}

fn depolarize(rho: &mut DMatrix<C64>, p: f64) {
    let d = rho.nrows();
    let tr = rho.trace();
    *rho *= C64::new(1.0 - p, 0.0);
    for k in 0..d {
        rho[(k, k)] += tr * (p / d as f64);
    }
}

fn check_drift(rho: &mut DMatrix<C64>, applications: usize) -> Result<()> {
    let mut state = DensityMatrix::from_matrix_unchecked(std::mem::replace(rho, DMatrix::zeros(0, 0)));
    let herm = state.hermiticity_error();
    let tr = state.trace();
    let drift = (tr.re - 1.0).abs().max(tr.im.abs()).max(herm);
    if !drift.is_finite() || drift > DRIFT_TOLERANCE {
        return Err(Error::Drift { applications, detail: format!("trace {tr}, Hermiticity error {herm:e}") });
    }
    state.renormalize();
    *rho = state.into_matrix();
    Ok(())
}

/// Rotating-frame qubit block of a lab-frame propagator at time `t`,
/// expressed in the gate-label frame.
pub fn label_frame_unitary(u_lab: &DMatrix<C64>, transmon: &TransmonParams, t: f64) -> Mat2 {
    let phase = |k: usize| C64::from_polar(1.0, transmon.level_energy(k) * t);
    let rot = Mat2::new(
        phase(0) * u_lab[(0, 0)],
        phase(0) * u_lab[(0, 1)],
        phase(1) * u_lab[(1, 0)],
        phase(1) * u_lab[(1, 1)],
    );
    physical_to_label_frame(&rot)
}

/// Schedule of a single gate starting at t = 0.
pub fn gate_schedule(gate: &GateDef, gates: &GateSet) -> Result<Schedule> {
    let mut s = Schedule::new();
    s.append_gate(gate, gates)?;
    Ok(s)
}

/// Six cardinal Bloch states as amplitude pairs, in the label frame.
pub fn cardinal_states() -> [[C64; 2]; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = |x: f64| C64::new(x, 0.0);
    [
        [r(1.0), r(0.0)],
        [r(0.0), r(1.0)],
        [r(s), r(s)],
        [r(s), r(-s)],
        [r(s), C64::new(0.0, s)],
        [r(s), C64::new(0.0, -s)],
    ]
}

/// Average gate fidelity of the channel realized by `schedule` (ending at
/// `t_end`) against the label-frame `target`, from the six cardinal states.
/// Leaked population counts as error.
pub fn average_gate_fidelity(sim: &Simulator, schedule: &Schedule, t_end: f64, target: &Mat2) -> Result<f64> {
    let transmon = sim.physics().transmon;
    let d = transmon.dim;
    // label → physical frame: Rz(π/2)·U·Rz(−π/2)
    let rz = |beta: f64| {
        Mat2::new(C64::from_polar(1.0, -beta / 2.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::from_polar(1.0, beta / 2.0))
    };
    let to_phys = rz(FRAC_PI_2);
    let from_phys = rz(-FRAC_PI_2);
    let target_phys = to_phys * target * from_phys;
    let mut total = 0.0;
    for psi in cardinal_states() {
        let v = to_phys * nalgebra::Vector2::new(psi[0], psi[1]);
        let mut amps = vec![C64::new(0.0, 0.0); d];
        amps[0] = v[0];
        amps[1] = v[1];
        let rho0 = DensityMatrix::from_pure(&amps)?;
        let out = sim.run(schedule, &rho0, &[t_end])?.pop().expect("one sample");
        let expected = target_phys * v;
        // rotating frame at t_end: ψ_lab = e^{−iE_k t} ψ_rot
        let mut lab = vec![C64::new(0.0, 0.0); d];
        for k in 0..2 {
            lab[k] = expected[k] * C64::from_polar(1.0, -transmon.level_energy(k) * t_end);
        }
        total += out.overlap_pure(&lab);
    }
    Ok(total / 6.0)
}

/// Average fidelity of one calibrated gate, starting from an unpoisoned qubit.
pub fn gate_fidelity(sim: &Simulator, gate: &GateDef, gates: &GateSet) -> Result<f64> {
    let schedule = gate_schedule(gate, gates)?;
    average_gate_fidelity(sim, &schedule, schedule.end_time(), &gate.label.ideal_unitary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::unitary_overlap;
    use crate::units::hz_to_angular;
    use std::f64::consts::PI;

    fn qubit(dim: usize) -> TransmonParams {
        TransmonParams::new(hz_to_angular(4.958e9), hz_to_angular(-220e6), dim).unwrap()
    }

    #[test]
    fn gates_realize_their_labels() {
        let tr = qubit(2);
        let physics = Physics::ideal(tr, PI / 46.0);
        let sim = Simulator::new(&physics).unwrap();
        for n in [1u32, 3, 41] {
            let gs = GateSet::calibrate(PI / 46.0, n, tr.omega10).unwrap();
            for gate in gs.gates() {
                if gate.label == GateLabel::I {
                    continue;
                }
                let s = gate_schedule(gate, &gs).unwrap();
                let u = sim.propagator(&s, s.end_time()).unwrap();
                let got = label_frame_unitary(&u, &tr, s.end_time());
                let ov = unitary_overlap(&got, &gate.label.ideal_unitary());
                assert!(ov > 1.0 - 1e-12, "n={n} {}: overlap {ov}", gate.label);
            }
        }
    }

    #[test]
    fn y_train_is_a_quarter_period_later() {
        let tr = qubit(2);
        let gs = GateSet::calibrate(PI / 46.0, 1, tr.omega10).unwrap();
        let x = gate_schedule(gs.get(GateLabel::X).unwrap(), &gs).unwrap();
        let y = gate_schedule(gs.get(GateLabel::Y).unwrap(), &gs).unwrap();
        let dt = y.kick_times()[0] - x.kick_times()[0];
        assert!((dt - PI / (2.0 * tr.omega10)).abs() < 1e-20);
    }

    #[test]
    fn sample_precedes_kick_at_equal_time() {
        let tr = qubit(2);
        let sim = Simulator::new(&Physics::ideal(tr, PI)).unwrap();
        let mut s = Schedule::new();
        s.add_train(&PulseTrain::new(1, tr.omega10, 0.0, 1, 1e-9).unwrap());
        let t = s.kick_times()[0];
        let out = sim.run(&s, &DensityMatrix::ground(2), &[t, t + 1e-12]).unwrap();
        assert!(out[0].population(1) < 1e-15);
        assert!((out[1].population(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_decay_matches_t1() {
        let tr = qubit(3);
        let dec = DecoherenceParams { t1_residual: 20e-6, t2_star_residual: 30e-6, t1_per_qp: 1.0, qp_dispersion_factor: 1.0 };
        let sim = Simulator::new(&Physics::ideal(tr, 0.1).with_decoherence(dec)).unwrap();
        let out = sim.run(&Schedule::new(), &DensityMatrix::basis(3, 1), &[10e-6, 20e-6]).unwrap();
        assert!((out[1].population(1) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_marker() {
        let tr = qubit(2);
        let sim = Simulator::new(&Physics::ideal(tr, 0.1)).unwrap();
        let mut s = Schedule::new();
        s.idle(1e-9).unwrap();
        s.add_marker(Marker::Depolarize(0.2));
        let out = sim.final_state(&s, &DensityMatrix::ground(2)).unwrap();
        assert!((out.population(0) - 0.9).abs() < 1e-15);
        assert!(sim.propagator(&s, 1e-9).is_err());
    }

    #[test]
    fn unpoisoned_ideal_gates_have_unit_fidelity() {
        let tr = qubit(2);
        let sim = Simulator::new(&Physics::ideal(tr, PI / 46.0)).unwrap();
        let gs = GateSet::calibrate(PI / 46.0, 3, tr.omega10).unwrap();
        for gate in gs.gates().filter(|g| g.label != GateLabel::I) {
            let f = gate_fidelity(&sim, gate, &gs).unwrap();
            assert!((f - 1.0).abs() < 1e-10, "{}: {f}", gate.label);
        }
    }

    #[test]
    fn schedule_alignment() {
        let mut s = Schedule::new();
        s.idle(1.3).unwrap();
        s.align_to_trigger(std::f64::consts::TAU);
        assert_eq!(s.cursor(), 2.0);
        s.align_to_trigger(std::f64::consts::TAU);
        assert_eq!(s.cursor(), 2.0);
    }

    #[test]
    fn poisoned_decay_follows_closed_form() {
        use crate::qp::{decay_law, QPDecayModel};
        let tr = qubit(2);
        let dec = DecoherenceParams { t1_residual: 23.6e-6, t2_star_residual: 24.4e-6, t1_per_qp: 5e-6, qp_dispersion_factor: 1.0 };
        let model = QPModel::default();
        let phys = Physics::ideal(tr, 0.1).with_decoherence(dec).with_qp(model, DispersionParams::default());
        let sim = Simulator::new(&phys).unwrap();
        let f_d = 4.958e9 / 3.0;
        let t_p = 640.0 / (4.0 * f_d);
        let mut s = Schedule::new();
        s.add_window(DriveWindow { start: 0.0, end: t_p, omega_d: hz_to_angular(f_d) }).unwrap();
        s.idle(t_p).unwrap();
        s.add_marker(Marker::Reset(1));
        let excess = sim.qp_trajectory(&s).unwrap().unwrap().excess_at(t_p);
        assert!(excess > 1.02 && excess < 1.024);
        let eq2 = QPDecayModel {
            n_qp: excess / (model.trapping_rate * dec.t1_per_qp),
            t1_qp: model.trapping_time(),
            t1_r: dec.t1_residual,
        };
        let taus: Vec<f64> = (0..=20).map(|i| i as f64 * 3e-6).collect();
        let times: Vec<f64> = taus.iter().map(|t| t_p + t).collect();
        let out = sim.run(&s, &DensityMatrix::ground(2), &times).unwrap();
        for (tau, rho) in taus.iter().zip(&out) {
            assert!((rho.population(1) - decay_law(*tau, &eq2)).abs() < 1e-9, "tau={tau}");
        }
    }

    #[test]
    fn reset_out_of_range() {
        let sim = Simulator::new(&Physics::ideal(qubit(2), 0.1)).unwrap();
        let mut s = Schedule::new();
        s.add_marker(Marker::Reset(2));
        assert!(matches!(sim.final_state(&s, &DensityMatrix::ground(2)), Err(Error::IndexOutOfRange { .. })));
        assert!(s.add_window(DriveWindow { start: 1.0, end: 0.5, omega_d: 1.0 }).is_err());
    }
}
