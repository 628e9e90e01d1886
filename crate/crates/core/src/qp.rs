//! Quasiparticle poisoning: generation by driver phase slips, trapping-limited
//! recovery, the Poissonian relaxation law and the QP dispersion relation.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FitDiagnostics, Result};
use crate::fit::{levenberg_marquardt, Bounds, LmOptions, LmSolution, Residuals};
use crate::transmon::DecoherenceParams;
use crate::units::{EV, HBAR};

/// QP generation and trapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QPModel {
    /// QPs coupled to the qubit per phase slip.
    pub eta: f64,
    /// Slips before generation turns on; 0 selects the linear model.
    pub turn_on_slips: u64,
    /// Trapping rate s, 1/s.
    pub trapping_rate: f64,
    pub slips_per_cycle: u64,
    pub n_qp_background: f64,
}

impl Default for QPModel {
    fn default() -> Self {
        Self { eta: 1.6e-3, turn_on_slips: 0, trapping_rate: 1.0 / 17.6e-6, slips_per_cycle: 4, n_qp_background: 0.10 }
    }
}

impl QPModel {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        match errs.into_iter().next() {
            Some((name, reason)) => Err(Error::invalid(name, reason)),
            None => Ok(()),
        }
    }

    pub(crate) fn collect_errors(&self, out: &mut Vec<(&'static str, String)>) {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            out.push(("eta", "must be finite and non-negative".into()));
        }
        if !(self.trapping_rate > 0.0) || !self.trapping_rate.is_finite() {
            out.push(("trapping_rate", "must be positive and finite".into()));
        }
        if self.slips_per_cycle == 0 {
            out.push(("slips_per_cycle", "must be at least 1".into()));
        }
        if !(self.n_qp_background >= 0.0) || !self.n_qp_background.is_finite() {
            out.push(("n_qp_background", "must be finite and non-negative".into()));
        }
    }

    /// Name of the turn-on model, for metadata.
    pub fn turn_on_model(&self) -> String {
        if self.turn_on_slips == 0 {
            "linear".into()
        } else {
            format!("threshold(N0={})", self.turn_on_slips)
        }
    }

    pub fn trapping_time(&self) -> f64 {
        1.0 / self.trapping_rate
    }
}

/// Parameters of the Poissonian relaxation law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QPDecayModel {
    pub n_qp: f64,
    /// Qubit lifetime per QP, s.
    pub t1_qp: f64,
    /// Residual lifetime, s (may be infinite).
    pub t1_r: f64,
}

impl QPDecayModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_qp >= 0.0) || !self.n_qp.is_finite() {
            return Err(Error::invalid("n_qp", "must be finite and non-negative"));
        }
        if !(self.t1_qp > 0.0) {
            return Err(Error::invalid("t1_qp", "must be positive"));
        }
        if !(self.t1_r > 0.0) {
            return Err(Error::invalid("t1_r", "must be positive"));
        }
        Ok(())
    }
}

/// Superconducting gap and the empirical slope correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    /// Gap energy Δ, J.
    pub gap: f64,
    pub empirical_factor: f64,
}

impl Default for DispersionParams {
    fn default() -> Self {
        Self { gap: 180e-6 * EV, empirical_factor: 1.5 }
    }
}

impl DispersionParams {
    pub fn from_ev(gap_ev: f64, empirical_factor: f64) -> Self {
        Self { gap: gap_ev * EV, empirical_factor }
    }

    pub fn gap_ev(&self) -> f64 {
        self.gap / EV
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0) || !self.gap.is_finite() {
            return Err(Error::invalid("gap", "must be positive and finite"));
        }
        if !self.empirical_factor.is_finite() {
            return Err(Error::invalid("empirical_factor", "must be finite"));
        }
        Ok(())
    }
}

/// QPs added by `n_slips` phase slips, ignoring trapping.
pub fn qp_added(n_slips: u64, model: &QPModel) -> f64 {
    model.eta * n_slips.saturating_sub(model.turn_on_slips) as f64
}

/// Trapping-limited relaxation of `n_qp` towards background over `dt`.
pub fn qp_relax(n_qp: f64, dt: f64, model: &QPModel) -> f64 {
    let bg = model.n_qp_background;
    bg + (n_qp - bg).max(0.0) * (-model.trapping_rate * dt.max(0.0)).exp()
}

/// Interval during which the SFQ driver is clocked at `omega_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveWindow {
    pub start: f64,
    pub end: f64,
    pub omega_d: f64,
}

impl DriveWindow {
    pub fn slips(&self, slips_per_cycle: u64) -> f64 {
        slips_per_cycle as f64 * self.omega_d / TAU * (self.end - self.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    t: f64,
    /// Excess over background at `t`.
    excess: f64,
    /// Excess generation rate until the next node, 1/s.
    gen: f64,
}

/// Closed-form piecewise-exponential ⟨n_QP⟩(t).
///
/// Before the first node the excess is zero; after the last it decays freely.
#[derive(Debug, Clone, PartialEq)]
pub struct QpTrajectory {
    background: f64,
    s: f64,
    nodes: Vec<Node>,
    total_slips: f64,
}

impl QpTrajectory {
    pub fn background(&self) -> f64 {
        self.background
    }

    /// Phase slips in all drive windows.
    pub fn total_slips(&self) -> f64 {
        self.total_slips
    }

    fn node_index(&self, t: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|n| n.t <= t);
        i.checked_sub(1)
    }

    fn excess_in(&self, node: &Node, u: f64) -> f64 {
        let eq = node.gen / self.s;
        eq + (node.excess - eq) * (-self.s * u).exp()
    }

    /// ∫ excess over [t0 + u0, t0 + u1] within one node's span.
    fn integral_in(&self, node: &Node, u0: f64, u1: f64) -> f64 {
        let eq = node.gen / self.s;
        eq * (u1 - u0) + (node.excess - eq) * (-self.s * u0).exp() * -(-self.s * (u1 - u0)).exp_m1() / self.s
    }

    pub fn excess_at(&self, t: f64) -> f64 {
        match self.node_index(t) {
            None => 0.0,
            Some(i) => self.excess_in(&self.nodes[i], t - self.nodes[i].t),
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.background + self.excess_at(t)
    }

    /// ∫ₐᵇ excess dt.
    pub fn integral_excess(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut acc = 0.0;
        let start = match self.node_index(a) {
            Some(i) => i,
            None => {
                // zero excess up to the first node
                match self.nodes.first() {
                    Some(first) if first.t < b => {
                        return self.integral_excess(first.t, b);
                    }
                    _ => return 0.0,
                }
            }
        };
        let mut lo = a;
        for i in start..self.nodes.len() {
            let node = &self.nodes[i];
            let hi = self.nodes.get(i + 1).map_or(b, |n| n.t.min(b));
            if hi > lo {
                acc += self.integral_in(node, lo - node.t, hi - node.t);
            }
            lo = hi;
            if lo >= b {
                break;
            }
        }
        acc
    }

    /// Mean excess over [a, b]; the point value when the interval is empty.
    pub fn mean_excess(&self, a: f64, b: f64) -> f64 {
        if b > a {
            self.integral_excess(a, b) / (b - a)
        } else {
            self.excess_at(a)
        }
    }
}

/// Solves dn/dt = η·r_slip − s(n − n_bg) exactly for the given drive windows.
pub fn qp_trajectory(windows: &[DriveWindow], model: &QPModel) -> Result<QpTrajectory> {
    model.validate()?;
    for w in windows {
        if !(w.end >= w.start) || !w.start.is_finite() || !w.end.is_finite() || !(w.omega_d > 0.0) {
            return Err(Error::invalid("drive_window", format!("invalid window {w:?}")));
        }
    }
    let s = model.trapping_rate;
    let mut breaks: Vec<f64> = windows.iter().flat_map(|w| [w.start, w.end]).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    // slip rate over each elementary interval (overlapping windows add)
    let rates: Vec<f64> = breaks
        .windows(2)
        .map(|b| {
            windows
                .iter()
                .filter(|w| w.start <= b[0] && w.end >= b[1] && w.end > w.start)
                .map(|w| model.slips_per_cycle as f64 * w.omega_d / TAU)
                .sum()
        })
        .collect();

    let threshold = model.turn_on_slips as f64;
    let mut cumulative = 0.0;
    let mut nodes: Vec<Node> = Vec::with_capacity(breaks.len() + 1);
    let mut excess = 0.0;
    let push = |nodes: &mut Vec<Node>, t: f64, excess: f64, gen: f64| {
        if let Some(last) = nodes.last_mut() {
            if last.t == t {
                last.gen = gen;
                return;
            }
        }
        nodes.push(Node { t, excess, gen });
    };
    for (i, &rate) in rates.iter().enumerate() {
        let (t0, t1) = (breaks[i], breaks[i + 1]);
        let slips = rate * (t1 - t0);
        let mut t = t0;
        if rate > 0.0 && cumulative < threshold && cumulative + slips > threshold {
            // generation switches on inside this interval
            let t_on = t0 + (threshold - cumulative) / rate;
            push(&mut nodes, t0, excess, 0.0);
            excess = advance(excess, 0.0, s, t_on - t0);
            t = t_on;
        }
        let gen = if cumulative + slips <= threshold { 0.0 } else { model.eta * rate };
        push(&mut nodes, t, excess, gen);
        excess = advance(excess, gen, s, t1 - t);
        cumulative += slips;
    }
    if let Some(&t_end) = breaks.last() {
        push(&mut nodes, t_end, excess, 0.0);
    }
    Ok(QpTrajectory { background: model.n_qp_background, s, nodes, total_slips: cumulative })
}

fn advance(x0: f64, gen: f64, s: f64, dt: f64) -> f64 {
    let eq = gen / s;
    eq + (x0 - eq) * (-s * dt).exp()
}

/// P₁(t) = exp[⟨n_QP⟩(e^{−t/T₁,QP} − 1) − t/T₁,R].
pub fn decay_law(t: f64, model: &QPDecayModel) -> f64 {
    let t = t.max(0.0);
    (model.n_qp * (-t / model.t1_qp).exp_m1() - t / model.t1_r).exp()
}

/// Parameters that may be held fixed in [`fit_decay`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecayFix {
    pub t1_qp: Option<f64>,
    pub t1_r: Option<f64>,
}

/// One observed relaxation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub p1: Vec<f64>,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        if times.len() != p1.len() {
            return Err(Error::invalid("p1", "length differs from times"));
        }
        if times.iter().chain(&p1).any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", "non-finite value"));
        }
        if times.iter().any(|&t| t < 0.0) {
            return Err(Error::invalid("times", "must be non-negative"));
        }
        Ok(Self { times, p1 })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Decay depth −ln(min P₁ / max P₁) in decades, plus the time span in decades.
    fn spans(&self) -> (f64, f64) {
        let pmax = self.p1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pmin = self.p1.iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min);
        let depth = if pmax > 0.0 && pmin.is_finite() { (pmax / pmin).log10() } else { 0.0 };
        let tmin = self.times.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
        let tmax = self.times.iter().copied().fold(0.0, f64::max);
        let span = if tmin.is_finite() && tmax > 0.0 { (tmax / tmin).log10() } else { 0.0 };
        (depth, span)
    }
}

/// Estimates and uncertainties for one relaxation curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub model: QPDecayModel,
    pub n_qp_err: f64,
    /// Zero when the parameter was fixed.
    pub t1_qp_err: f64,
    pub t1_r_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFitResult {
    /// One entry per fitted curve, in input order.
    pub curves: Vec<DecayFit>,
    pub residual_norm: f64,
    /// Free parameter names, in covariance order.
    pub parameters: Vec<String>,
    /// Scaled covariance of the free parameters.
    pub covariance: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
}

struct DecayResiduals<'a> {
    curves: &'a [DecayCurve],
    fix: DecayFix,
    m: usize,
}

impl DecayResiduals<'_> {
    /// Free parameters: one n_qp per curve, then log T1_qp and log T1_r unless fixed.
    fn unpack(&self, p: &[f64]) -> (Vec<f64>, f64, f64) {
        let k = self.curves.len();
        let mut idx = k;
        let mut next = |fixed: Option<f64>| match fixed {
            Some(v) => v,
            None => {
                idx += 1;
                p[idx - 1].exp()
            }
        };
        let t1_qp = next(self.fix.t1_qp);
        let t1_r = next(self.fix.t1_r);
        (p[..k].to_vec(), t1_qp, t1_r)
    }
}

impl Residuals for DecayResiduals<'_> {
    fn n_params(&self) -> usize {
        self.curves.len() + self.fix.t1_qp.is_none() as usize + self.fix.t1_r.is_none() as usize
    }

    fn n_residuals(&self) -> usize {
        self.m
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (n, t1_qp, t1_r) = self.unpack(p);
        let mut i = 0;
        for (c, curve) in self.curves.iter().enumerate() {
            let model = QPDecayModel { n_qp: n[c], t1_qp, t1_r };
            for (t, y) in curve.times.iter().zip(&curve.p1) {
                out[i] = decay_law(*t, &model) - y;
                i += 1;
            }
        }
    }
}

/// Fits the relaxation law to a single curve.
pub fn fit_decay(curve: &DecayCurve, fix: DecayFix) -> Result<DecayFitResult> {
    fit_decay_shared(std::slice::from_ref(curve), fix)
}

/// Fits several curves (e.g. poisoned and unpoisoned) with shared lifetimes
/// and one ⟨n_QP⟩ each.
pub fn fit_decay_shared(curves: &[DecayCurve], fix: DecayFix) -> Result<DecayFitResult> {
    if curves.is_empty() {
        return Err(Error::invalid("curves", "at least one decay curve is required"));
    }
    for (name, v) in [("t1_qp", fix.t1_qp), ("t1_r", fix.t1_r)] {
        if let Some(v) = v {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "fixed value must be positive"));
            }
        }
    }
    let free_lifetimes = fix.t1_qp.is_none() as usize + fix.t1_r.is_none() as usize;
    for (i, c) in curves.iter().enumerate() {
        if c.len() < 5 {
            return Err(Error::Unidentifiable(format!("curve {i} has {} samples; at least 5 are required", c.len())));
        }
        let (depth, span) = c.spans();
        if free_lifetimes == 2 && curves.len() == 1 && depth < 2.0 && span < 2.0 {
            return Err(Error::Unidentifiable(format!(
                "curve spans {depth:.2} decades of decay and {span:.2} decades of time; fix T1_qp or T1_r, \
                 or supply at least two decades"
            )));
        }
    }

    let m: usize = curves.iter().map(DecayCurve::len).sum();
    let model = DecayResiduals { curves, fix, m };
    let k = curves.len();
    let np = model.n_params();
    let mut lower = vec![0.0; k];
    let mut upper = vec![1e3; k];
    lower.resize(np, (1e-12f64).ln());
    upper.resize(np, (1e6f64).ln());
    let bounds = Bounds { lower, upper };

    // Multistart over lifetime guesses derived from the apparent 1/e time.
    let t_e = apparent_lifetime(&curves[0]);
    let mut best: Option<LmSolution> = None;
    let mut last_err = None;
    for (fq, n0) in [(0.3, 0.5), (1.0, 1.0), (0.1, 0.1), (3.0, 2.0), (0.03, 0.3)] {
        let mut init = vec![n0; k];
        if fix.t1_qp.is_none() {
            init.push((t_e * fq).ln());
        }
        if fix.t1_r.is_none() {
            init.push((t_e * 1.5).ln());
        }
        match levenberg_marquardt(&model, &init, &bounds, &LmOptions::default()) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let sol = match best {
        Some(s) => s,
        None => return Err(last_err.expect("at least one start ran")),
    };

    let cov = sol.scaled_covariance();
    let (n, t1_qp, t1_r) = model.unpack(&sol.params);
    let mut idx = k;
    let mut log_err = |fixed: Option<f64>, value: f64| -> f64 {
        if fixed.is_some() {
            0.0
        } else {
            idx += 1;
            value * cov[(idx - 1, idx - 1)].max(0.0).sqrt()
        }
    };
    let t1_qp_err = log_err(fix.t1_qp, t1_qp);
    let t1_r_err = log_err(fix.t1_r, t1_r);
    let fits = (0..k)
        .map(|c| DecayFit {
            model: QPDecayModel { n_qp: n[c], t1_qp, t1_r },
            n_qp_err: cov[(c, c)].max(0.0).sqrt(),
            t1_qp_err,
            t1_r_err,
        })
        .collect();
    let mut parameters: Vec<String> = (0..k).map(|c| format!("n_qp[{c}]")).collect();
    if fix.t1_qp.is_none() {
        parameters.push("ln_t1_qp".into());
    }
    if fix.t1_r.is_none() {
        parameters.push("ln_t1_r".into());
    }
    Ok(DecayFitResult {
        curves: fits,
        residual_norm: sol.residual_norm(),
        parameters,
        covariance: (0..np).map(|i| (0..np).map(|j| cov[(i, j)]).collect()).collect(),
        diagnostics: sol.diagnostics,
    })
}

fn apparent_lifetime(curve: &DecayCurve) -> f64 {
    let target = (-1.0f64).exp();
    let tmax = curve.times.iter().copied().fold(0.0, f64::max);
    curve
        .times
        .iter()
        .zip(&curve.p1)
        .find(|(_, p)| **p <= target)
        .map(|(t, _)| *t)
        .unwrap_or(tmax)
        .max(tmax * 1e-3)
        .max(1e-12)
}

/// Exponential recovery n(t) = n_bg + A·e^{−t/τ}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryFit {
    pub background: f64,
    pub amplitude: f64,
    pub trapping_time: f64,
    pub background_err: f64,
    pub amplitude_err: f64,
    pub trapping_time_err: f64,
    pub residual_norm: f64,
    pub diagnostics: FitDiagnostics,
}

/// Fits ⟨n_QP⟩ versus recovery delay to a single exponential plus background.
pub fn fit_recovery(delays: &[f64], n_qp: &[f64]) -> Result<RecoveryFit> {
    if delays.len() != n_qp.len() {
        return Err(Error::invalid("n_qp", "length differs from delays"));
    }
    if delays.len() < 4 {
        return Err(Error::Unidentifiable("recovery fit needs at least 4 points".into()));
    }
    let span = delays.iter().copied().fold(f64::NEG_INFINITY, f64::max) - delays.iter().copied().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::Degenerate("all delays coincide".into()));
    }
    let model = (3, delays.len(), |p: &[f64], out: &mut [f64]| {
        let tau = p[2].exp();
        for (i, t) in delays.iter().enumerate() {
            out[i] = p[0] + p[1] * (-t / tau).exp() - n_qp[i];
        }
    });
    let nmin = n_qp.iter().copied().fold(f64::INFINITY, f64::min);
    let nmax = n_qp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounds = Bounds { lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY, (span * 1e-4).ln()], upper: vec![f64::INFINITY, f64::INFINITY, (span * 1e3).ln()] };
    let mut best: Option<LmSolution> = None;
    for frac in [0.3, 0.1, 1.0] {
        let init = [nmin, nmax - nmin, (span * frac).ln()];
        if let Ok(sol) = levenberg_marquardt(&model, &init, &bounds, &LmOptions::default()) {
            if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or_else(|| Error::FitNonConvergence {
        reason: "recovery fit failed from every start".into(),
        diagnostics: FitDiagnostics { iterations: 0, cost: f64::NAN, damping: f64::NAN, gradient_norm: f64::NAN },
    })?;
    let err = sol.standard_errors(true);
    let tau = sol.params[2].exp();
    Ok(RecoveryFit {
        background: sol.params[0],
        amplitude: sol.params[1],
        trapping_time: tau,
        background_err: err[0],
        amplitude_err: err[1],
        trapping_time_err: tau * err[2],
        residual_norm: sol.residual_norm(),
        diagnostics: sol.diagnostics,
    })
}

/// δω₁₀/Γ = factor·(−½)(1 + π√(ħω₁₀/2Δ)).
pub fn dispersion_ratio(omega10: f64, params: &DispersionParams) -> f64 {
    let energy = HBAR * omega10;
    if energy >= 2.0 * params.gap {
        log::warn!("ħω₁₀ = {energy:e} J is not below 2Δ = {:e} J; dispersion relation is outside its validity range", 2.0 * params.gap);
    }
    params.empirical_factor * -0.5 * (1.0 + PI * (energy / (2.0 * params.gap)).sqrt())
}

/// Relaxation rate and frequency shift for a QP population `n_qp`.
///
/// The shift is additionally scaled by `dec.qp_dispersion_factor` (1 by default).
pub fn rates_from_nqp(n_qp: f64, dec: &DecoherenceParams, disp: &DispersionParams, omega10: f64) -> (f64, f64) {
    let gamma_qp = n_qp / dec.t1_per_qp;
    let shift = dispersion_ratio(omega10, disp) * dec.qp_dispersion_factor * gamma_qp;
    (1.0 / dec.t1_residual + gamma_qp, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::hz_to_angular;

    fn window(start: f64, slips: f64, f_hz: f64) -> DriveWindow {
        DriveWindow { start, end: start + slips / (4.0 * f_hz), omega_d: hz_to_angular(f_hz) }
    }

    #[test]
    fn added_qps() {
        let m = QPModel::default();
        assert_eq!(qp_added(0, &m), 0.0);
        assert!((qp_added(640, &m) - 1.024).abs() < 1e-12);
        let th = QPModel { turn_on_slips: 250, ..m };
        assert_eq!(qp_added(250, &th), 0.0);
        assert!((qp_added(640, &th) - 1.6e-3 * 390.0).abs() < 1e-12);
        assert_eq!(th.turn_on_model(), "threshold(N0=250)");
    }

    #[test]
    fn relaxation() {
        let m = QPModel::default();
        assert_eq!(qp_relax(1.3, 0.0, &m), 1.3);
        let x = qp_relax(1.1, 17.6e-6, &m) - 0.1;
        assert!((x - (-1.0f64).exp()).abs() < 1e-12);
        assert!((qp_relax(1.1, 1.0, &m) - 0.1).abs() < 1e-15);
        assert_eq!(qp_relax(0.05, 1e-6, &m), 0.1);
    }

    #[test]
    fn empty_trajectory_is_background() {
        let t = qp_trajectory(&[], &QPModel::default()).unwrap();
        assert_eq!(t.value_at(-1.0), 0.1);
        assert_eq!(t.value_at(5e-6), 0.1);
        assert_eq!(t.mean_excess(0.0, 1.0), 0.0);
    }

    #[test]
    fn poisoning_pulse_then_idle() {
        let m = QPModel::default();
        let w = window(0.0, 640.0, 1.6e9);
        assert!((w.end - 100e-9).abs() < 1e-18);
        let t = qp_trajectory(&[w], &m).unwrap();
        let at_end = t.excess_at(w.end);
        // closed-form with trapping during the 100 ns pulse
        let g = m.eta * 6.4e9;
        let s = m.trapping_rate;
        let expected = g / s * (1.0 - (-s * 100e-9).exp());
        assert!((at_end - expected).abs() < 1e-12);
        assert!((at_end - 1.024).abs() < 0.01);
        let later = t.excess_at(w.end + 1e-6);
        assert!((later - at_end * (-1.0 / 17.6f64).exp()).abs() < 1e-12);
        assert!((later - 0.965).abs() < 0.005);
    }

    #[test]
    fn steady_state_level() {
        let m = QPModel::default();
        let w = DriveWindow { start: 0.0, end: 1.0, omega_d: hz_to_angular(1.6e9) };
        let t = qp_trajectory(&[w], &m).unwrap();
        let ss = 1.6e-3 * 6.4e9 * 17.6e-6;
        assert!((t.excess_at(0.5) - ss).abs() < 1e-9 * ss);
    }

    #[test]
    fn integral_matches_quadrature() {
        let m = QPModel::default();
        let ws = [window(0.0, 200.0, 1.6e9), window(1e-6, 100.0, 0.5e9)];
        let t = qp_trajectory(&ws, &m).unwrap();
        let (a, b) = (-0.2e-6, 3e-6);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut simpson = t.excess_at(a) + t.excess_at(b);
        for i in 1..n {
            simpson += t.excess_at(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        simpson *= h / 3.0;
        assert!((t.integral_excess(a, b) - simpson).abs() < 1e-9 * simpson.abs());
    }

    #[test]
    fn splitting_windows_is_exact() {
        let m = QPModel::default();
        let w = window(0.0, 640.0, 1.6e9);
        let mid = 0.5 * (w.start + w.end);
        let halves = [DriveWindow { end: mid, ..w }, DriveWindow { start: mid, ..w }];
        let a = qp_trajectory(&[w], &m).unwrap();
        let b = qp_trajectory(&halves, &m).unwrap();
        for t in [20e-9, 50e-9, 100e-9, 2e-6] {
            assert!((a.value_at(t) - b.value_at(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_delays_generation() {
        let m = QPModel { turn_on_slips: 250, ..QPModel::default() };
        let w = window(0.0, 640.0, 1.6e9);
        let t = qp_trajectory(&[w], &m).unwrap();
        assert_eq!(t.excess_at(w.start + 249.0 / 6.4e9), 0.0);
        assert!(t.excess_at(w.end) > 0.0);
        let s = m.trapping_rate;
        let on = 390.0 / 6.4e9;
        let expected = m.eta * 6.4e9 / s * (1.0 - (-s * on).exp());
        assert!((t.excess_at(w.end) - expected).abs() < 1e-12);
    }

    #[test]
    fn decay_law_limits() {
        let m = QPDecayModel { n_qp: 0.0, t1_qp: 3e-6, t1_r: 20e-6 };
        assert_eq!(decay_law(0.0, &QPDecayModel { n_qp: 1.0, ..m }), 1.0);
        assert!((decay_law(20e-6, &m) - (-1.0f64).exp()).abs() < 1e-15);
        let inf = QPDecayModel { n_qp: 1.0, t1_qp: 1e-6, t1_r: f64::INFINITY };
        assert!((decay_law(1e-3, &inf) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn dispersion_values() {
        let bare = DispersionParams::from_ev(180e-6, 1.0);
        let r = dispersion_ratio(hz_to_angular(4.958e9), &bare);
        assert!((r + 0.875).abs() < 1e-3);
        assert!((dispersion_ratio(1e-3, &bare) + 0.5).abs() < 1e-6);
        let scaled = DispersionParams { empirical_factor: 1.5, ..bare };
        assert_eq!(dispersion_ratio(hz_to_angular(4.958e9), &scaled), 1.5 * r);
    }

    #[test]
    fn rate_linearity() {
        let dec = DecoherenceParams { t1_residual: 23.6e-6, t2_star_residual: 24.4e-6, t1_per_qp: 50e-6, qp_dispersion_factor: 1.0 };
        let disp = DispersionParams::default();
        let w = hz_to_angular(4.958e9);
        let (g0, d0) = rates_from_nqp(0.0, &dec, &disp, w);
        assert_eq!(g0, 1.0 / 23.6e-6);
        assert_eq!(d0, 0.0);
        let (g1, d1) = rates_from_nqp(0.7, &dec, &disp, w);
        let (g2, d2) = rates_from_nqp(1.4, &dec, &disp, w);
        assert!(((g2 - g0) - 2.0 * (g1 - g0)).abs() < 1e-9 * g2);
        assert!((d2 - 2.0 * d1).abs() < 1e-12 * d2.abs());
    }

    fn synthetic(model: &QPDecayModel, n: usize, tmax: f64) -> DecayCurve {
        let times: Vec<f64> = (0..n).map(|i| tmax * i as f64 / (n - 1) as f64).collect();
        let p1 = times.iter().map(|t| decay_law(*t, model)).collect();
        DecayCurve::new(times, p1).unwrap()
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let truth = QPDecayModel { n_qp: 1.03, t1_qp: 8e-6, t1_r: 28e-6 };
        let res = fit_decay(&synthetic(&truth, 80, 150e-6), DecayFix::default()).unwrap();
        let m = res.curves[0].model;
        assert!((m.n_qp - 1.03).abs() < 1e-6);
        assert!((m.t1_qp / 8e-6 - 1.0).abs() < 1e-6);
        assert!((m.t1_r / 28e-6 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shallow_curve_needs_fixing() {
        let truth = QPDecayModel { n_qp: 1.03, t1_qp: 8e-6, t1_r: 28e-6 };
        let c = synthetic(&truth, 20, 20e-6);
        assert!(matches!(fit_decay(&c, DecayFix::default()), Err(Error::Unidentifiable(_))));
        let few = synthetic(&truth, 4, 150e-6);
        assert!(fit_decay(&few, DecayFix { t1_qp: Some(8e-6), t1_r: Some(28e-6) }).is_err());
        let fixed = fit_decay(&c, DecayFix { t1_qp: Some(8e-6), t1_r: Some(28e-6) }).unwrap();
        assert!((fixed.curves[0].model.n_qp - 1.03).abs() < 1e-6);
    }

    #[test]
    fn recovery_fit_noiseless() {
        let delays: Vec<f64> = (0..30).map(|i| i as f64 * 3e-6).collect();
        let n: Vec<f64> = delays.iter().map(|t| 0.1 + 2.0 * (-t / 17.6e-6).exp()).collect();
        let f = fit_recovery(&delays, &n).unwrap();
        assert!((f.trapping_time / 17.6e-6 - 1.0).abs() < 1e-7);
        assert!((f.background - 0.1).abs() < 1e-8);
    }
}
