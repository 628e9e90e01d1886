//! Standard and interleaved randomized benchmarking on the pulse-level model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{CliffordGroup, GateLabel, CLIFFORD_COUNT};
use crate::engine::{Marker, Physics, Schedule, Simulator};
use crate::error::{Error, FitDiagnostics, Result};
use crate::fit::{levenberg_marquardt, Bounds, LmOptions};
use crate::sequencer::{compile_clifford, CliffordSequence, GateSet};
use crate::state::DensityMatrix;
use crate::transmon::DecoherenceParams;

/// Sequence lengths and randomizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub sequence_lengths: Vec<usize>,
    pub randomizations: usize,
    pub interleaved_gate: Option<GateLabel>,
    pub seed: u64,
    #[serde(default)]
    pub fit_window: FitWindow,
}

/// Which lengths enter the decay fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitWindow {
    #[default]
    All,
    /// Lengths up to the minimum mean survival; later points are excluded
    /// because survival that rises with m lies outside the depolarizing model.
    DecayBranch,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            sequence_lengths: default_lengths(200, 12),
            randomizations: 30,
            interleaved_gate: None,
            seed: 0,
            fit_window: FitWindow::All,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        match errs.into_iter().next() {
            Some((name, reason)) => Err(Error::invalid(name, reason)),
            None => Ok(()),
        }
    }

    pub(crate) fn collect_errors(&self, out: &mut Vec<(&'static str, String)>) {
        if self.sequence_lengths.is_empty() {
            out.push(("sequence_lengths", "must not be empty".into()));
        }
        if self.sequence_lengths.first().is_some_and(|m| *m == 0) {
            out.push(("sequence_lengths", "every length must be at least 1".into()));
        }
        if self.sequence_lengths.windows(2).any(|w| w[1] <= w[0]) {
            out.push(("sequence_lengths", "must be strictly increasing".into()));
        }
        if self.randomizations == 0 {
            out.push(("randomizations", "must be at least 1".into()));
        }
    }
}

/// Roughly logarithmic grid of up to `count` distinct lengths from 1 to `max`.
pub fn default_lengths(max: usize, count: usize) -> Vec<usize> {
    let max = max.max(1);
    let mut v: Vec<usize> = (0..count.max(1))
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 1.0 };
            (max as f64).powf(frac).round() as usize
        })
        .collect();
    v.dedup();
    v
}

/// `m` uniform random Cliffords, each followed by `interleave` when given,
/// then the recovery Clifford.
pub fn generate_rb_sequence<R: Rng + ?Sized>(m: usize, interleave: Option<GateLabel>, rng: &mut R, basis: &GateSet) -> Result<CliffordSequence> {
    if m == 0 {
        return Err(Error::invalid("m", "sequence length must be at least 1"));
    }
    let group = CliffordGroup::get();
    let mut indices = Vec::with_capacity(m * 2 + 1);
    let mut compiled = Vec::new();
    let mut gates_per_clifford = Vec::with_capacity(m * 2 + 1);
    let mut net = 0;
    let interleaved = match interleave {
        Some(label) => Some((group.index_of_gate(label), *basis.get(label)?)),
        None => None,
    };
    for _ in 0..m {
        let c = rng.random_range(0..CLIFFORD_COUNT);
        let gates = compile_clifford(c, basis)?;
        gates_per_clifford.push(gates.len());
        compiled.extend(gates);
        indices.push(c);
        net = group.compose(net, c);
        if let Some((idx, gate)) = interleaved {
            // the physical gate itself, so −X is not replaced by X
            indices.push(idx);
            compiled.push(gate);
            gates_per_clifford.push(1);
            net = group.compose(net, idx);
        }
    }
    let recovery = group.inverse(net);
    let gates = compile_clifford(recovery, basis)?;
    gates_per_clifford.push(gates.len());
    compiled.extend(gates);
    indices.push(recovery);
    Ok(CliffordSequence { indices, compiled, gates_per_clifford })
}

/// Physics, gates and the optional per-Clifford depolarizing hook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbSetup {
    pub physics: Physics,
    pub gates: GateSet,
    /// Depolarizing strength applied after every non-recovery Clifford.
    pub depolarizing: Option<f64>,
}

impl RbSetup {
    /// Gates calibrated at the resonant subharmonic ω₁₀/n.
    pub fn new(physics: Physics, subharmonic: u32) -> Result<Self> {
        let gates = GateSet::calibrate(physics.delta_theta, subharmonic, physics.transmon.omega10)?;
        Ok(Self { physics, gates, depolarizing: None })
    }

    pub fn with_depolarizing(mut self, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::invalid("depolarizing", format!("strength must lie in [0, 1], got {strength}")));
        }
        self.depolarizing = Some(strength);
        Ok(self)
    }
}

/// Schedule for a compiled sequence on the trigger grid.
pub fn sequence_schedule(seq: &CliffordSequence, setup: &RbSetup) -> Result<Schedule> {
    let mut s = Schedule::new();
    let mut gate_iter = seq.compiled.iter();
    let last = seq.gates_per_clifford.len().saturating_sub(1);
    for (i, &count) in seq.gates_per_clifford.iter().enumerate() {
        for gate in gate_iter.by_ref().take(count) {
            s.append_gate(gate, &setup.gates)?;
            s.align_to_trigger(setup.gates.omega_d);
        }
        if i < last {
            if let Some(p) = setup.depolarizing {
                s.add_marker(Marker::Depolarize(p));
            }
        }
    }
    Ok(s)
}

/// Ground-state survival probabilities, `survivals[i][k]` for length `lengths[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTable {
    pub lengths: Vec<usize>,
    pub survivals: Vec<Vec<f64>>,
    pub interleaved_gate: Option<GateLabel>,
}

impl SurvivalTable {
    pub fn means(&self) -> Vec<f64> {
        self.survivals.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect()
    }

    /// Sample standard deviation across randomizations (0 for K = 1).
    pub fn std_devs(&self) -> Vec<f64> {
        self.survivals
            .iter()
            .map(|s| {
                if s.len() < 2 {
                    return 0.0;
                }
                let m = s.iter().sum::<f64>() / s.len() as f64;
                (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
            })
            .collect()
    }
}

fn sequence_rng(seed: u64, m: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m as u64) << 32) ^ k as u64);
    rng
}

/// Simulates every (m, k) sequence and records P₀ after recovery.
pub fn run_rb(config: &RbConfig, setup: &RbSetup) -> Result<SurvivalTable> {
    config.validate()?;
    let sim = Simulator::new(&setup.physics)?;
    let jobs: Vec<(usize, usize)> =
        config.sequence_lengths.iter().flat_map(|&m| (0..config.randomizations).map(move |k| (m, k))).collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, k)| {
            let mut rng = sequence_rng(config.seed, m, k);
            let seq = generate_rb_sequence(m, config.interleaved_gate, &mut rng, &setup.gates)?;
            let schedule = sequence_schedule(&seq, setup)?;
            let state = sim.final_state(&schedule, &DensityMatrix::ground(sim.dim()))?;
            Ok(state.population(0).clamp(0.0, 1.0))
        })
        .collect::<Result<_>>()?;
    Ok(SurvivalTable {
        lengths: config.sequence_lengths.clone(),
        survivals: flat.chunks(config.randomizations).map(<[f64]>::to_vec).collect(),
        interleaved_gate: config.interleaved_gate,
    })
}

/// F(m) = A·pᵐ + B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepolarizingFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub p_err: f64,
    pub residual_norm: f64,
    /// Whether per-length inverse-variance weights were used.
    pub weighted: bool,
    pub diagnostics: FitDiagnostics,
}

impl DepolarizingFit {
    pub fn eval(&self, m: f64) -> f64 {
        self.a * self.p.powf(m) + self.b
    }
}

/// Fits A·pᵐ + B to mean survivals, optionally weighted by `sigmas`.
pub fn fit_depolarizing(lengths: &[usize], means: &[f64], sigmas: Option<&[f64]>) -> Result<DepolarizingFit> {
    if lengths.len() != means.len() || sigmas.is_some_and(|s| s.len() != means.len()) {
        return Err(Error::invalid("means", "length differs from sequence lengths"));
    }
    let mut distinct = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Unidentifiable(format!("{} distinct lengths; at least 3 are required", distinct.len())));
    }
    if means.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("means", "non-finite survival"));
    }
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return Err(Error::Degenerate(format!("survival is constant ({lo}) across lengths; p is indeterminate")));
    }
    let weights: Vec<f64> = match sigmas {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; means.len()],
    };
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::invalid("sigmas", "must be positive and finite"));
    }
    let ms: Vec<f64> = lengths.iter().map(|m| *m as f64).collect();
    let model = (3, ms.len(), |q: &[f64], out: &mut [f64]| {
        for i in 0..ms.len() {
            out[i] = (q[0] * q[2].powf(ms[i]) + q[1] - means[i]) * weights[i];
        }
    });
    let bounds = Bounds { lower: vec![-2.0, 0.0, 1e-9], upper: vec![2.0, 1.0, 1.0] };
    let start = profile_start(&ms, means, &weights);
    let sol = levenberg_marquardt(&model, &start, &bounds, &LmOptions { max_iterations: 5000, ..LmOptions::default() })?;
    let err = sol.standard_errors(true);
    Ok(DepolarizingFit {
        a: sol.params[0],
        b: sol.params[1],
        p: sol.params[2],
        a_err: err[0],
        b_err: err[1],
        p_err: err[2],
        residual_norm: sol.residual_norm(),
        weighted: sigmas.is_some(),
        diagnostics: sol.diagnostics,
    })
}

/// Best (A, B, p) on a grid of p with A and B solved by weighted linear least
/// squares at each node.
fn profile_start(ms: &[f64], means: &[f64], weights: &[f64]) -> [f64; 3] {
    let mut best = (f64::INFINITY, [0.5, 0.5, 0.5]);
    let grid = (1..=400).map(|i| i as f64 / 400.0).chain((1..=300).map(|i| 1.0 - 10f64.powf(-2.0 - 4.0 * i as f64 / 300.0)));
    for p in grid {
        let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..ms.len() {
            let w2 = weights[i] * weights[i];
            let x = p.powf(ms[i]);
            s00 += w2 * x * x;
            s01 += w2 * x;
            s11 += w2;
            t0 += w2 * x * means[i];
            t1 += w2 * means[i];
        }
        let det = s00 * s11 - s01 * s01;
        let (mut a, mut b) = if det.abs() > 1e-300 {
            ((t0 * s11 - t1 * s01) / det, (s00 * t1 - s01 * t0) / det)
        } else {
            (0.0, t1 / s11)
        };
        if !(0.0..=1.0).contains(&b) {
            b = b.clamp(0.0, 1.0);
            a = if s00 > 0.0 { (t0 - b * s01) / s00 } else { 0.0 };
        }
        let a = a.clamp(-2.0, 2.0);
        let cost: f64 = (0..ms.len()).map(|i| (weights[i] * (a * p.powf(ms[i]) + b - means[i])).powi(2)).sum();
        if cost < best.0 {
            best = (cost, [a, b, p]);
        }
    }
    best.1
}

/// Smallest per-length standard error used as a weight, relative to the median.
pub const SIGMA_FLOOR_FRACTION: f64 = 0.01;

/// Fits a survival table: inverse-variance weights when K ≥ 5 and the spread
/// is resolved, unweighted otherwise.
pub fn fit_survival_table(table: &SurvivalTable, window: FitWindow) -> Result<DepolarizingFit> {
    let mut means = table.means();
    let k = table.survivals.first().map_or(0, Vec::len);
    let mut sems: Vec<f64> = table.std_devs().into_iter().map(|s| s / (k as f64).sqrt()).collect();
    let mut lengths = table.lengths.clone();
    if window == FitWindow::DecayBranch {
        let last = means.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        means.truncate(last + 1);
        sems.truncate(last + 1);
        lengths.truncate(last + 1);
    }
    let mut sorted = sems.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    if k < 5 || median < 1e-12 {
        return fit_depolarizing(&lengths, &means, None);
    }
    let floor = (median * SIGMA_FLOOR_FRACTION).max(1e-12);
    let sigmas: Vec<f64> = sems.iter().map(|s| s.max(floor)).collect();
    fit_depolarizing(&lengths, &means, Some(&sigmas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityMode {
    Reference,
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityEstimate {
    /// Clamped to [0, 1].
    pub fidelity: f64,
    /// Before clamping.
    pub raw: f64,
    pub uncertainty: f64,
    /// Interleaved decay slower than the reference beyond the error bars.
    pub unphysical: bool,
}

/// Average Clifford fidelity 1 − (1−p)/2, or interleaved gate fidelity
/// 1 − (1 − p_int/p_ref)/2.
pub fn extract_fidelity(p_ref: &DepolarizingFit, p_int: Option<&DepolarizingFit>, mode: FidelityMode) -> Result<FidelityEstimate> {
    match mode {
        FidelityMode::Reference => {
            let raw = 1.0 - (1.0 - p_ref.p) / 2.0;
            Ok(FidelityEstimate { fidelity: raw.clamp(0.0, 1.0), raw, uncertainty: p_ref.p_err / 2.0, unphysical: false })
        }
        FidelityMode::Interleaved => {
            let int = p_int.ok_or_else(|| Error::invalid("p_int", "interleaved mode needs an interleaved fit"))?;
            if !(p_ref.p > 0.0) {
                return Err(Error::Degenerate("reference decay parameter is zero".into()));
            }
            let r = int.p / p_ref.p;
            let raw = 1.0 - (1.0 - r) / 2.0;
            let rel = ((int.p_err / int.p.max(f64::MIN_POSITIVE)).powi(2) + (p_ref.p_err / p_ref.p).powi(2)).sqrt();
            let uncertainty = r * rel / 2.0;
            let unphysical = int.p - p_ref.p > int.p_err.hypot(p_ref.p_err);
            if unphysical {
                log::warn!("interleaved decay p={} exceeds reference p={} beyond error bars", int.p, p_ref.p);
            }
            Ok(FidelityEstimate { fidelity: raw.clamp(0.0, 1.0), raw, uncertainty, unphysical })
        }
    }
}

/// Reference and interleaved benchmarking of one gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterleavedReport {
    pub gate: GateLabel,
    pub reference: SurvivalTable,
    pub interleaved: SurvivalTable,
    pub reference_fit: DepolarizingFit,
    pub interleaved_fit: DepolarizingFit,
    pub clifford_fidelity: FidelityEstimate,
    pub gate_fidelity: FidelityEstimate,
}

/// Runs the reference curve and one interleaved curve per gate.
pub fn run_interleaved(config: &RbConfig, setup: &RbSetup, gates: &[GateLabel]) -> Result<Vec<InterleavedReport>> {
    let ref_cfg = RbConfig { interleaved_gate: None, ..config.clone() };
    let reference = run_rb(&ref_cfg, setup)?;
    let reference_fit = fit_survival_table(&reference, config.fit_window)?;
    let clifford_fidelity = extract_fidelity(&reference_fit, None, FidelityMode::Reference)?;
    gates
        .iter()
        .map(|&gate| {
            let cfg = RbConfig { interleaved_gate: Some(gate), ..config.clone() };
            let interleaved = run_rb(&cfg, setup)?;
            let interleaved_fit = fit_survival_table(&interleaved, config.fit_window)?;
            let gate_fidelity = extract_fidelity(&reference_fit, Some(&interleaved_fit), FidelityMode::Interleaved)?;
            Ok(InterleavedReport {
                gate,
                reference: reference.clone(),
                interleaved,
                reference_fit: reference_fit.clone(),
                interleaved_fit,
                clifford_fidelity,
                gate_fidelity,
            })
        })
        .collect()
}

/// Gates reported by interleaved benchmarking.
pub const BENCHMARKED_GATES: [GateLabel; 6] =
    [GateLabel::X, GateLabel::X2, GateLabel::MinusX2, GateLabel::Y, GateLabel::Y2, GateLabel::MinusY2];

/// Mean interleaved fidelity over `gates`.
pub fn mean_gate_fidelity(config: &RbConfig, setup: &RbSetup, gates: &[GateLabel]) -> Result<f64> {
    let reports = run_interleaved(config, setup, gates)?;
    Ok(reports.iter().map(|r| r.gate_fidelity.fidelity).sum::<f64>() / reports.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct T1PerQpCalibration {
    pub t1_per_qp: f64,
    pub mean_fidelity: f64,
    pub evaluations: usize,
}

/// Bisects log T1_per_qp inside `bracket` until the mean interleaved fidelity
/// of [`BENCHMARKED_GATES`] is within `tolerance` of `target`.
pub fn calibrate_t1_per_qp(
    config: &RbConfig,
    physics: &Physics,
    subharmonic: u32,
    target: f64,
    bracket: (f64, f64),
    tolerance: f64,
) -> Result<T1PerQpCalibration> {
    let base = physics.decoherence.ok_or_else(|| Error::invalid("decoherence", "calibration needs decoherence parameters"))?;
    if physics.qp.is_none() {
        return Err(Error::invalid("qp", "calibration needs a quasiparticle model"));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("bracket", "need 0 < lower < upper"));
    }
    let mut evaluations = 0;
    let mut eval = |t1: f64| -> Result<f64> {
        evaluations += 1;
        let mut phys = physics.clone();
        phys.decoherence = Some(DecoherenceParams { t1_per_qp: t1, ..base });
        let f = mean_gate_fidelity(config, &RbSetup::new(phys, subharmonic)?, &BENCHMARKED_GATES)?;
        log::info!("T1_per_qp = {t1:e} s: mean fidelity {f:.5}");
        Ok(f)
    };
    let (f_lo, f_hi) = (eval(lo)?, eval(hi)?);
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::invalid("target", format!("fidelity {target} not bracketed by [{f_lo}, {f_hi}]")));
    }
    let mut best = if (f_lo - target).abs() < (f_hi - target).abs() { (lo, f_lo) } else { (hi, f_hi) };
    while (best.1 - target).abs() > tolerance && hi / lo > 1.001 {
        let mid = (lo * hi).sqrt();
        let f = eval(mid)?;
        if (f - target).abs() < (best.1 - target).abs() {
            best = (mid, f);
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(T1PerQpCalibration { t1_per_qp: best.0, mean_fidelity: best.1, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::unitary_overlap;
    use crate::transmon::TransmonParams;
    use crate::units::hz_to_angular;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn ideal_setup() -> RbSetup {
        let tr = TransmonParams::new(hz_to_angular(4.958e9), hz_to_angular(-220e6), 2).unwrap();
        RbSetup::new(Physics::ideal(tr, PI / 46.0), 3).unwrap()
    }

    #[test]
    fn default_grid_is_log_spaced() {
        let g = default_lengths(200, 12);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 200);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn config_validation() {
        let bad = RbConfig { sequence_lengths: vec![3, 2], randomizations: 0, ..RbConfig::default() };
        let mut errs = Vec::new();
        bad.collect_errors(&mut errs);
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn sequences_compose_to_identity() {
        let setup = ideal_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [1, 2, 7, 50] {
            for il in [None, Some(GateLabel::X2), Some(GateLabel::MinusX)] {
                let seq = generate_rb_sequence(m, il, &mut rng, &setup.gates).unwrap();
                assert_eq!(seq.net_clifford(), 0);
                assert!(unitary_overlap(&seq.ideal_unitary(), &crate::clifford::Mat2::identity()) > 1.0 - 1e-8);
            }
        }
    }

    #[test]
    fn interleaved_length_accounting() {
        let setup = ideal_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = generate_rb_sequence(2, Some(GateLabel::X2), &mut rng, &setup.gates).unwrap();
        assert_eq!(seq.indices.len(), 5);
        assert_eq!(seq.gates_per_clifford[1], 1);
        assert_eq!(seq.gates_per_clifford[3], 1);
        assert!(generate_rb_sequence(0, None, &mut rng, &setup.gates).is_err());
    }

    #[test]
    fn uniform_sampling() {
        let setup = ideal_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; CLIFFORD_COUNT];
        let seq = generate_rb_sequence(120_000, None, &mut rng, &setup.gates).unwrap();
        for &c in &seq.indices[..120_000] {
            counts[c] += 1;
        }
        let expected = 120_000.0 / 24.0;
        let sigma = (120_000.0f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn ideal_survival_is_one() {
        let cfg = RbConfig { sequence_lengths: vec![1, 5, 20], randomizations: 3, ..RbConfig::default() };
        let t = run_rb(&cfg, &ideal_setup()).unwrap();
        for row in &t.survivals {
            for s in row {
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
        assert!(matches!(fit_survival_table(&t, FitWindow::All), Err(Error::Degenerate(_))));
    }

    #[test]
    fn depolarizing_hook_gives_analytic_survival() {
        let setup = ideal_setup().with_depolarizing(0.02).unwrap();
        let cfg = RbConfig { sequence_lengths: vec![1, 4, 10], randomizations: 4, ..RbConfig::default() };
        let t = run_rb(&cfg, &setup).unwrap();
        for (m, row) in t.lengths.iter().zip(&t.survivals) {
            let expected = 0.5 + 0.5 * 0.98f64.powi(*m as i32);
            for s in row {
                assert!((s - expected).abs() < 1e-10, "m={m}: {s} vs {expected}");
            }
        }
    }

    #[test]
    fn noiseless_fit() {
        let ms: Vec<usize> = vec![1, 2, 5, 10, 20, 50, 100, 200];
        let f: Vec<f64> = ms.iter().map(|m| 0.5 * 0.99f64.powi(*m as i32) + 0.5).collect();
        let fit = fit_depolarizing(&ms, &f, None).unwrap();
        assert!((fit.p - 0.99).abs() < 1e-6);
        assert!(fit_depolarizing(&ms, &vec![1.0; ms.len()], None).is_err());
        assert!(fit_depolarizing(&ms[..2], &f[..2], None).is_err());
    }

    #[test]
    fn noisy_fit_k50() {
        let ms: Vec<usize> = default_lengths(200, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let survivals: Vec<Vec<f64>> = ms
            .iter()
            .map(|m| (0..50).map(|_| 0.5 * 0.99f64.powi(*m as i32) + 0.5 + noise.sample(&mut rng)).collect())
            .collect();
        let t = SurvivalTable { lengths: ms, survivals, interleaved_gate: None };
        let fit = fit_survival_table(&t, FitWindow::All).unwrap();
        assert!(fit.weighted);
        assert!((fit.p / 0.99 - 1.0).abs() < 0.02);
    }

    fn fit_with(p: f64, err: f64) -> DepolarizingFit {
        DepolarizingFit {
            a: 0.5,
            b: 0.5,
            p,
            a_err: 0.0,
            b_err: 0.0,
            p_err: err,
            residual_norm: 0.0,
            weighted: false,
            diagnostics: FitDiagnostics { iterations: 0, cost: 0.0, damping: 0.0, gradient_norm: 0.0 },
        }
    }

    #[test]
    fn fidelity_formulas() {
        let r = fit_with(0.98, 0.001);
        let i = fit_with(0.94, 0.001);
        let f = extract_fidelity(&r, Some(&i), FidelityMode::Interleaved).unwrap();
        assert!((f.fidelity - (1.0 - (1.0 - 0.94 / 0.98) / 2.0)).abs() < 1e-15);
        assert!((f.fidelity - 0.9796).abs() < 1e-4);
        assert!(!f.unphysical);
        assert_eq!(extract_fidelity(&r, Some(&r), FidelityMode::Interleaved).unwrap().fidelity, 1.0);
        assert_eq!(extract_fidelity(&fit_with(1.0, 0.0), None, FidelityMode::Reference).unwrap().fidelity, 1.0);
        let flagged = extract_fidelity(&i, Some(&r), FidelityMode::Interleaved).unwrap();
        assert!(flagged.unphysical);
        assert!(flagged.raw > 1.0);
        assert!(extract_fidelity(&r, None, FidelityMode::Interleaved).is_err());
    }
}
