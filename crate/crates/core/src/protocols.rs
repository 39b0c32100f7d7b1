//! End-to-end protocols: dynamic squeezing, the adiabatic ramp, and cat
//! generation, plus the dressed-state and chirp building blocks they share.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{follow_schedule, RampPoint};
use crate::analysis::{jz_moments, parity_weights, rydberg_population, squeezing_db};
use crate::error::{Error, Result};
use crate::evolve::{check_normalized, eigendecompose, propagate_const, Schedule, SpinRotator};
use crate::hilbert::{spin_coherent_state, BasisState, HilbertSpace, StateVector};
use crate::operators::{jc_coupling, jc_hamiltonian, Axis, GroundMode, RydbergLevel};

/// Pre-projection Rydberg population above which a chirp is flagged as too fast.
pub const CHIRP_WARNING_RESIDUAL: f64 = 0.05;

/// Time step of the chirp ramp.
pub const CHIRP_STEP: f64 = 0.01;

/// Default ramp duration of the chirp.
pub const DEFAULT_CHIRP_RAMP_TIME: f64 = 50.0;

/// Angle tolerance of the rotation searches, in radians.
pub const ANGLE_TOL: f64 = 1e-4;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default chirp detuning magnitude, `20 sqrt(N)`.
pub fn default_chirp_detuning(atoms: usize) -> f64 {
    20.0 * (atoms as f64).sqrt()
}

/// Sign of one Rydberg two-level system's dressed state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DressedSign {
    Plus,
    Minus,
}

impl DressedSign {
    pub fn value(self) -> f64 {
        match self {
            DressedSign::Plus => 1.0,
            DressedSign::Minus => -1.0,
        }
    }
}

/// Eigenvector of `H_JC` with ground label `(n_a, N - n_a)`: each Rydberg
/// level is in `(|0> + sign |1>)/sqrt(2)` with its mode, or stays empty when
/// the mode is.
pub fn dressed_state(space: &Arc<HilbertSpace>, n_a: usize, s1: DressedSign, s2: DressedSign) -> Result<StateVector> {
    let amps = dressed_amplitudes(space, n_a, s1, s2)?;
    StateVector::from_amplitudes(space.clone(), amps)
}

/// `s1 sqrt(n_a) + s2 sqrt(n_b)`, the `H_JC` eigenvalue of [`dressed_state`].
pub fn dressed_energy(n_a: usize, n_b: usize, s1: DressedSign, s2: DressedSign) -> f64 {
    s1.value() * (n_a as f64).sqrt() + s2.value() * (n_b as f64).sqrt()
}

fn factor(occupied: usize, sign: DressedSign) -> [f64; 2] {
    if occupied == 0 {
        [1.0, 0.0]
    } else {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [h, sign.value() * h]
    }
}

fn dressed_amplitudes(space: &Arc<HilbertSpace>, n_a: usize, s1: DressedSign, s2: DressedSign) -> Result<DVector<Complex64>> {
    let n = space.atoms();
    if n_a > n {
        return Err(Error::Domain(format!("n_a={n_a} exceeds N={n}")));
    }
    let n_b = n - n_a;
    let (f1, f2) = (factor(n_a, s1), factor(n_b, s2));
    let mut amps = DVector::zeros(space.dim());
    for e1 in 0..2 {
        for e2 in 0..2 {
            let c = f1[e1] * f2[e2];
            if c == 0.0 {
                continue;
            }
            let idx = space.index_of(&BasisState::new(n_a - e1, n_b - e2, e1, e2))?;
            amps[idx] = Complex64::new(c, 0.0);
        }
    }
    Ok(amps)
}

/// How the dressed initial state is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepMode {
    /// Analytic expansion over upper dressed states.
    Ideal,
    /// Simultaneous resonant pulses on both Rydberg transitions.
    Pulsed,
}

impl std::str::FromStr for PrepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(PrepMode::Ideal),
            "pulsed" => Ok(PrepMode::Pulsed),
            other => Err(Error::Config(format!("unknown prep mode `{other}`"))),
        }
    }
}

/// Duration `pi / (4 sqrt(N/2))` of the preparation pulses, which brings a
/// two-level system with coupling `sqrt(N/2)` to an equal superposition.
pub fn prep_pulse_duration(atoms: usize) -> f64 {
    PI / (4.0 * (atoms as f64 / 2.0).sqrt())
}

/// `+x` coherent amplitudes dressed with `(|0> + |1>)/sqrt(2)` on both levels.
///
/// The pulsed variant drives `i a s1+ + i b s2+ + h.c.` from the coherent
/// state, which rotates `|0>` toward `+|1>` and so lands on the upper dressed
/// state of the real `H_JC` that follows.
pub fn prepare_dressed_init(space: &Arc<HilbertSpace>, mode: PrepMode) -> Result<StateVector> {
    let coherent = spin_coherent_state(space, PI / 2.0, 0.0);
    match mode {
        PrepMode::Ideal => {
            let n = space.atoms();
            let mut amps = DVector::zeros(space.dim());
            for n_a in 0..=n {
                let c = coherent.amplitudes()[space.ground_index(n_a)];
                amps += dressed_amplitudes(space, n_a, DressedSign::Plus, DressedSign::Plus)? * c;
            }
            StateVector::normalized(space.clone(), amps)
        }
        PrepMode::Pulsed => {
            let i = Complex64::new(0.0, 1.0);
            let drive = crate::operators::linear_combine(&[
                (1.0, &jc_coupling(space, RydbergLevel::R1, GroundMode::A, i)),
                (1.0, &jc_coupling(space, RydbergLevel::R2, GroundMode::B, i)),
            ])?;
            propagate_const(&coherent, &drive, prep_pulse_duration(space.atoms()))
        }
    }
}

/// Fidelity of the pulsed preparation with the ideal one.
pub fn prep_fidelity(space: &Arc<HilbertSpace>) -> Result<f64> {
    prepare_dressed_init(space, PrepMode::Ideal)?.fidelity(&prepare_dressed_init(space, PrepMode::Pulsed)?)
}

/// Adiabatic limit of a chirp followed by projection: the upper dressed
/// component with ground label `(n_a, n_b)` becomes `|n_a, n_b, 0, 0>`, every
/// other dressed component is discarded. Returns the renormalized state and
/// the kept probability.
pub fn ideal_deexcite(state: &StateVector) -> Result<(StateVector, f64)> {
    let space = state.space();
    let v = state.amplitudes();
    let mut out = DVector::zeros(space.dim());
    for n_a in 0..=space.atoms() {
        let d = dressed_amplitudes(space, n_a, DressedSign::Plus, DressedSign::Plus)?;
        out[space.ground_index(n_a)] = d.dotc(v);
    }
    let kept = out.norm_squared();
    if kept < 1e-12 {
        return Err(Error::Domain("state has no weight on the upper dressed states".into()));
    }
    Ok((StateVector::normalized(space.clone(), out)?, kept))
}

/// Result of [`chirp_deexcite`].
#[derive(Debug, Clone)]
pub struct ChirpOutcome {
    /// Ground-block state after projection and renormalization.
    pub state: StateVector,
    /// Rydberg population before the projection.
    pub residual_rydberg: f64,
    /// Set when the residual exceeds [`CHIRP_WARNING_RESIDUAL`].
    pub warning: bool,
}

/// Evolves under `H_JC + delta(t) (sz1 + sz2)` with `delta` ramped linearly
/// from 0 to `delta_max` over `ramp_time`, then projects onto the ground
/// block.
///
/// A negative `delta_max` carries the upper dressed states into the ground
/// block, a positive one the lower dressed states.
pub fn chirp_deexcite(state: &StateVector, delta_max: f64, ramp_time: f64) -> Result<ChirpOutcome> {
    check_normalized(state)?;
    if !(delta_max.is_finite() && delta_max != 0.0) {
        return Err(Error::Domain(format!("delta_max must be finite and nonzero, got {delta_max}")));
    }
    if !(ramp_time > 0.0 && ramp_time.is_finite()) {
        return Err(Error::Domain(format!("ramp_time must be positive, got {ramp_time}")));
    }
    let space = state.space();
    let pairs1 = two_level_pairs(space, RydbergLevel::R1)?;
    let pairs2 = two_level_pairs(space, RydbergLevel::R2)?;
    let steps = (ramp_time / CHIRP_STEP).ceil().max(1.0) as usize;
    let dt = ramp_time / steps as f64;
    let mut v = state.amplitudes().clone();
    for k in 0..steps {
        let delta = delta_max * (k as f64 + 0.5) / steps as f64;
        apply_two_level(&mut v, &pairs1, delta, dt);
        apply_two_level(&mut v, &pairs2, delta, dt);
    }
    let evolved = StateVector::normalized(space.clone(), v)?;
    let residual = rydberg_population(&evolved)?;
    let (projected, _) = evolved.ground_projection()?;
    Ok(ChirpOutcome { state: projected, residual_rydberg: residual, warning: residual > CHIRP_WARNING_RESIDUAL })
}

/// Dynamic phase `sum_k dt (sqrt(delta_k^2 + n_a) + sqrt(delta_k^2 + n_b))`
/// that [`chirp_deexcite`] imprints on the upper dressed state with ground
/// label `(n_a, n_b)` when it follows adiabatically.
pub fn chirp_phase(n_a: usize, n_b: usize, delta_max: f64, ramp_time: f64) -> f64 {
    let steps = (ramp_time / CHIRP_STEP).ceil().max(1.0) as usize;
    let dt = ramp_time / steps as f64;
    (0..steps)
        .map(|k| {
            let delta = delta_max * (k as f64 + 0.5) / steps as f64;
            dt * ((delta * delta + n_a as f64).sqrt() + (delta * delta + n_b as f64).sqrt())
        })
        .sum()
}

/// [`chirp_deexcite`] followed by removal of the known adiabatic phases
/// [`chirp_phase`] from the ground amplitudes.
pub fn chirp_deexcite_compensated(state: &StateVector, delta_max: f64, ramp_time: f64) -> Result<ChirpOutcome> {
    let mut out = chirp_deexcite(state, delta_max, ramp_time)?;
    let space = out.state.space().clone();
    let n = space.atoms();
    let mut amps = out.state.amplitudes().clone();
    for n_a in 0..=n {
        amps[space.ground_index(n_a)] *= Complex64::from_polar(1.0, chirp_phase(n_a, n - n_a, delta_max, ramp_time));
    }
    out.state = StateVector::normalized(space, amps)?;
    Ok(out)
}

/// `(lower, upper, coupling)` for every pair the given level's JC term links;
/// basis states without a partner are left out.
fn two_level_pairs(space: &Arc<HilbertSpace>, level: RydbergLevel) -> Result<Vec<(usize, Option<usize>, f64)>> {
    let mut out = Vec::new();
    for (i, s) in space.basis().iter().enumerate() {
        let (occupied, mode) = match level {
            RydbergLevel::R1 => (s.n_r1, s.n_a),
            RydbergLevel::R2 => (s.n_r2, s.n_b),
        };
        if occupied == 1 {
            continue;
        }
        if mode == 0 {
            out.push((i, None, 0.0));
            continue;
        }
        let mut t = *s;
        match level {
            RydbergLevel::R1 => {
                t.n_a -= 1;
                t.n_r1 = 1;
            }
            RydbergLevel::R2 => {
                t.n_b -= 1;
                t.n_r2 = 1;
            }
        }
        out.push((i, Some(space.index_of(&t)?), (mode as f64).sqrt()));
    }
    Ok(out)
}

/// Exact `exp(-i dt [[-delta, g], [g, delta]])` on every pair.
fn apply_two_level(v: &mut DVector<Complex64>, pairs: &[(usize, Option<usize>, f64)], delta: f64, dt: f64) {
    for &(lo, hi, g) in pairs {
        match hi {
            None => v[lo] *= Complex64::from_polar(1.0, delta * dt),
            Some(hi) => {
                let w = (delta * delta + g * g).sqrt();
                let (c, s) = ((w * dt).cos(), (w * dt).sin() / w);
                let (x, y) = (v[lo], v[hi]);
                let i = Complex64::new(0.0, 1.0);
                v[lo] = x * c - i * s * (-delta * x + g * y);
                v[hi] = y * c - i * s * (g * x + delta * y);
            }
        }
    }
}

/// Order of the rotation and the de-excitation chirp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOrder {
    RotateThenChirp,
    ChirpThenRotate,
}

impl std::str::FromStr for StepOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotate-then-chirp" => Ok(StepOrder::RotateThenChirp),
            "chirp-then-rotate" => Ok(StepOrder::ChirpThenRotate),
            other => Err(Error::Config(format!("unknown step order `{other}`"))),
        }
    }
}

/// How Rydberg excitations are returned to the ground block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deexcitation {
    Chirp,
    Ideal,
}

impl std::str::FromStr for Deexcitation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chirp" => Ok(Deexcitation::Chirp),
            "ideal" => Ok(Deexcitation::Ideal),
            other => Err(Error::Config(format!("unknown de-excitation `{other}`"))),
        }
    }
}

/// Settings of [`dynamic_squeeze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicConfig {
    /// Fixed JC evolution time; required unless `optimize` is set.
    pub evolve_time: Option<f64>,
    /// Scan the evolution time for the smallest `Var(Jz)`.
    pub optimize: bool,
    pub prep: PrepMode,
    pub order: StepOrder,
    pub deexcitation: Deexcitation,
    /// Chirp detuning magnitude; `20 sqrt(N)` when absent.
    pub chirp_detuning: Option<f64>,
    pub chirp_ramp_time: f64,
    /// Scan window in units of `N`.
    pub scan_min: f64,
    pub scan_max: f64,
    pub scan_points: usize,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            evolve_time: None,
            optimize: false,
            prep: PrepMode::Pulsed,
            order: StepOrder::ChirpThenRotate,
            deexcitation: Deexcitation::Chirp,
            chirp_detuning: None,
            chirp_ramp_time: DEFAULT_CHIRP_RAMP_TIME,
            scan_min: 0.25,
            scan_max: 2.0,
            scan_points: 48,
        }
    }
}

impl DynamicConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.evolve_time, self.optimize) {
            (None, false) => return Err(Error::Config("either evolve_time or optimize is required".into())),
            (Some(t), _) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!("evolve_time must be positive, got {t}")))
            }
            _ => {}
        }
        if let Some(d) = self.chirp_detuning {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("chirp_detuning must be positive, got {d}")));
            }
        }
        if !(self.chirp_ramp_time > 0.0 && self.chirp_ramp_time.is_finite()) {
            return Err(Error::Config("chirp_ramp_time must be positive".into()));
        }
        if !(self.scan_min > 0.0 && self.scan_max > self.scan_min && self.scan_points >= 3) {
            return Err(Error::Config("scan window needs 0 < scan_min < scan_max and at least 3 points".into()));
        }
        Ok(())
    }
}

/// One recorded sample of a protocol trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub f1: f64,
    pub f2: f64,
    /// Squeezing parameter after a virtual de-excitation.
    pub s: f64,
    pub leakage: f64,
    /// `<H0(t)>`.
    pub energy: f64,
    pub extremal_energy: f64,
    pub rydberg_population: f64,
}

/// Outcome of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub protocol: String,
    pub atoms: usize,
    pub metrics: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    pub final_state: StateVector,
    /// Auxiliary named states, such as rotated views, kept out of the JSON.
    pub views: Vec<(String, StateVector)>,
}

#[derive(Serialize)]
struct StateJson {
    basis: Vec<[usize; 4]>,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    protocol: &'a str,
    atoms: usize,
    metrics: &'a BTreeMap<String, f64>,
    flags: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<&'a [TrajectoryPoint]>,
    final_state: StateJson,
}

impl ProtocolReport {
    fn new(protocol: &str, final_state: StateVector) -> Self {
        Self {
            protocol: protocol.into(),
            atoms: final_state.space().atoms(),
            metrics: BTreeMap::new(),
            flags: Vec::new(),
            trajectory: None,
            final_state,
            views: Vec::new(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn view(&self, name: &str) -> Option<&StateVector> {
        self.views.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    fn set(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    /// Checks that every metric is finite and the final state normalized.
    pub fn validate(&self) -> Result<()> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!("metric {k} is {v}")));
        }
        let norm = self.final_state.norm();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::Numerical(format!("final state norm {norm}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let space = self.final_state.space();
        let state = StateJson {
            basis: space.basis().iter().map(|s| [s.n_a, s.n_b, s.n_r1, s.n_r2]).collect(),
            re: self.final_state.amplitudes().iter().map(|z| z.re).collect(),
            im: self.final_state.amplitudes().iter().map(|z| z.im).collect(),
        };
        let json = ReportJson {
            protocol: &self.protocol,
            atoms: self.atoms,
            metrics: &self.metrics,
            flags: &self.flags,
            trajectory: self.trajectory.as_deref(),
            final_state: state,
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }
}

/// Golden-section minimization of `f` on `[lo, hi]` down to width `tol`;
/// returns the best abscissa and value seen.
pub fn golden_section_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimizes a `pi`-periodic function of the angle: coarse grid, then a
/// golden-section refinement around the best grid point. The result lies in
/// `[0, pi)`.
fn minimize_angle(mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let grid = 36;
    let h = PI / grid as f64;
    let best = (0..grid).map(|k| (k as f64 * h, f(k as f64 * h))).min_by(|a, b| a.1.total_cmp(&b.1)).expect("grid");
    let (x, fx) = golden_section_min(&mut f, best.0 - h, best.0 + h, ANGLE_TOL);
    let (x, fx) = if fx <= best.1 { (x, fx) } else { best };
    (x.rem_euclid(PI), fx)
}

fn jz_variance_raw(space: &HilbertSpace, v: &DVector<Complex64>) -> f64 {
    let (mut mean, mut second) = (0.0, 0.0);
    for (s, a) in space.basis().iter().zip(v.iter()) {
        let p = a.norm_sqr();
        mean += p * s.jz();
        second += p * s.jz() * s.jz();
    }
    second - mean * mean
}

fn jz_square_raw(space: &HilbertSpace, v: &DVector<Complex64>) -> f64 {
    space.basis().iter().zip(v.iter()).map(|(s, a)| a.norm_sqr() * s.jz() * s.jz()).sum()
}

/// Dynamic squeezing: dressed preparation, free `H_JC` evolution, rotation
/// about `x` to the narrowest `Jz` distribution, and de-excitation.
pub fn dynamic_squeeze(space: &Arc<HilbertSpace>, config: &DynamicConfig) -> Result<ProtocolReport> {
    config.validate()?;
    let n = space.atoms();
    let prep = prepare_dressed_init(space, config.prep)?;
    let jc = eigendecompose(&jc_hamiltonian(space, 1.0))?;
    let rotator = SpinRotator::new(space, Axis::X)?;
    let best_rotation = |t: f64| {
        let v = jc.evolve_raw(prep.amplitudes(), t);
        minimize_angle(|phi| jz_variance_raw(space, &rotator.rotate_raw(&v, phi)))
    };

    let evolve_time = match (config.evolve_time, config.optimize) {
        (Some(t), false) => t,
        (guess, _) => {
            let (lo, hi) = (config.scan_min * n as f64, config.scan_max * n as f64);
            let step = (hi - lo) / (config.scan_points - 1) as f64;
            let mut grid: Vec<f64> = (0..config.scan_points).map(|k| lo + k as f64 * step).collect();
            if let Some(t) = guess {
                grid.push(t);
            }
            let (t0, v0) = grid
                .iter()
                .map(|&t| (t, best_rotation(t).1))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty scan");
            let (t1, v1) = golden_section_min(|t| best_rotation(t).1, (t0 - step).max(0.0), t0 + step, 1e-3 * n as f64);
            if v1 <= v0 {
                t1
            } else {
                t0
            }
        }
    };

    let evolved = jc.propagate(&prep, evolve_time)?;
    let detuning = -config.chirp_detuning.unwrap_or_else(|| default_chirp_detuning(n));
    let deexcite = |state: &StateVector| -> Result<(StateVector, f64, bool)> {
        match config.deexcitation {
            Deexcitation::Chirp => {
                let out = chirp_deexcite_compensated(state, detuning, config.chirp_ramp_time)?;
                Ok((out.state, out.residual_rydberg, out.warning))
            }
            Deexcitation::Ideal => {
                let (s, kept) = ideal_deexcite(state)?;
                Ok((s, 1.0 - kept, false))
            }
        }
    };
    let (pre_angle, before) = minimize_angle(|phi| jz_variance_raw(space, &rotator.rotate_raw(evolved.amplitudes(), phi)));
    let (angle, (fin, residual, warning)) = match config.order {
        StepOrder::RotateThenChirp => (pre_angle, deexcite(&rotator.rotate(&evolved, pre_angle)?)?),
        StepOrder::ChirpThenRotate => {
            let (ground, residual, warning) = deexcite(&evolved)?;
            let (angle, _) = minimize_angle(|phi| jz_variance_raw(space, &rotator.rotate_raw(ground.amplitudes(), phi)));
            (angle, (rotator.rotate(&ground, angle)?, residual, warning))
        }
    };

    let delta_jz = jz_moments(&fin).1.sqrt();
    let mut report = ProtocolReport::new("dynamic", fin);
    report.set("evolve_time", evolve_time);
    report.set("rotation_angle", angle);
    report.set("delta_jz", delta_jz);
    report.set("squeezing_s", delta_jz * delta_jz / n as f64);
    report.set("squeezing_db", squeezing_db(delta_jz, n));
    report.set("delta_jz_before_deexcitation", before.sqrt());
    report.set("residual_rydberg", residual);
    report.set("prep_fidelity", prep_fidelity(space)?);
    if warning {
        report.flags.push("chirp_residual_above_threshold".into());
    }
    report.validate()?;
    Ok(report)
}

/// Squeezing parameter after a virtual chirp of the JC interaction of
/// strength `f2`: with no interaction nothing is chirped, otherwise the
/// upper dressed components are mapped to the ground block.
pub fn virtual_chirp_squeezing(state: &StateVector, f2: f64) -> Result<f64> {
    let n = state.space().atoms() as f64;
    if f2 == 0.0 {
        return Ok(jz_moments(state).1 / n);
    }
    let (ground, _) = ideal_deexcite(state)?;
    Ok(jz_moments(&ground).1 / n)
}

/// Runs the adiabatic ramp from the `+x` coherent state through `schedule`,
/// recording the squeezing parameter, leakage, and energy at every sample,
/// and finishes with a real chirp.
pub fn adiabatic_squeeze_run(space: &Arc<HilbertSpace>, schedule: &Schedule, compensate: bool) -> Result<ProtocolReport> {
    let n = space.atoms();
    let initial = spin_coherent_state(space, PI / 2.0, 0.0);
    let mut trajectory = Vec::with_capacity(schedule.len());
    let last = follow_schedule(&initial, schedule, compensate, |p: &RampPoint| {
        trajectory.push(TrajectoryPoint {
            t: p.t,
            f1: p.f1,
            f2: p.f2,
            s: virtual_chirp_squeezing(&p.state, p.f2)?,
            leakage: p.leakage,
            energy: p.energy,
            extremal_energy: p.extremal_energy,
            rydberg_population: rydberg_population(&p.state)?,
        });
        Ok(())
    })?;
    let chirp = chirp_deexcite_compensated(&last, -default_chirp_detuning(n), DEFAULT_CHIRP_RAMP_TIME)?;
    let final_s = jz_moments(&chirp.state).1 / n as f64;
    let deviation = trajectory
        .iter()
        .map(|p| ((p.energy - p.extremal_energy) / p.extremal_energy).abs())
        .fold(0.0, f64::max);
    let first = trajectory[0];
    let end = trajectory[trajectory.len() - 1];

    let mut report = ProtocolReport::new("adiabatic", chirp.state);
    report.set("duration", schedule.duration());
    report.set("initial_s", first.s);
    report.set("final_s_virtual", end.s);
    report.set("final_s", final_s);
    report.set("final_delta_jz", (final_s * n as f64).sqrt());
    report.set("max_relative_energy_deviation", deviation);
    report.set("max_leakage", trajectory.iter().map(|p| p.leakage).fold(0.0, f64::max));
    report.set("final_leakage", end.leakage);
    report.set("residual_rydberg", chirp.residual_rydberg);
    report.set("compensated", if compensate { 1.0 } else { 0.0 });
    if chirp.warning {
        report.flags.push("chirp_residual_above_threshold".into());
    }
    report.trajectory = Some(trajectory);
    report.validate()?;
    Ok(report)
}

/// `M = N` for even `N`, `N - 1` for odd `N`: twice the central `n_a` of
/// the parity classification.
fn parity_reference(atoms: usize) -> usize {
    atoms - atoms % 2
}

/// `(tau, tau0)`: the JC1 interaction time `pi sqrt(M/2)` and the duration
/// `pi / (4 sqrt(M/2))` of the closing `b <-> r1` pulse, with `M` as in the
/// parity classification.
pub fn cat_durations(atoms: usize) -> (f64, f64) {
    let half = parity_reference(atoms) as f64 / 2.0;
    (PI * half.sqrt(), PI / (4.0 * half.sqrt()))
}

/// Cat generation: the `+x` coherent state evolves under the single JC
/// coupling of level 1 with mode `a`, then a short pulse on `b <-> r1`
/// returns most of the Rydberg excitation to the ground block.
pub fn cat_generate(space: &Arc<HilbertSpace>) -> Result<ProtocolReport> {
    let n = space.atoms();
    if n < 2 {
        return Err(Error::InvalidEnsemble(format!("cat generation needs N >= 2, got {n}")));
    }
    let (tau, tau0) = cat_durations(n);
    let one = Complex64::new(1.0, 0.0);
    let coherent = spin_coherent_state(space, PI / 2.0, 0.0);
    let after_jc = propagate_const(&coherent, &jc_coupling(space, RydbergLevel::R1, GroundMode::A, one), tau)?;
    let fin = propagate_const(&after_jc, &jc_coupling(space, RydbergLevel::R1, GroundMode::B, -one), tau0)?;

    let (even, odd) = parity_weights(&fin)?;
    let (ground, ground_weight) = fin.ground_projection()?;
    let ry = SpinRotator::new(space, Axis::Y)?;
    let (phi, _) = minimize_angle(|phi| jz_square_raw(space, &ry.rotate_raw(ground.amplitudes(), phi)));
    let rotated_x = SpinRotator::new(space, Axis::X)?.rotate(&fin, PI / 2.0)?;
    let rotated_y = ry.rotate(&fin, PI / 2.0)?;
    let rotated_phi = ry.rotate(&fin, phi)?;
    let (even_phi, odd_phi) = parity_weights(&rotated_phi)?;

    let mut report = ProtocolReport::new("cat", fin);
    report.set("tau", tau);
    report.set("tau0", tau0);
    report.set("even_weight", even);
    report.set("odd_weight", odd);
    report.set("residual_rydberg", 1.0 - ground_weight);
    report.set("intermediate_rydberg", rydberg_population(&after_jc)?);
    report.set("phi_star", phi);
    report.set("even_weight_rotated", even_phi);
    report.set("odd_weight_rotated", odd_phi);
    report.views = vec![("rotated_x".into(), rotated_x), ("rotated_y".into(), rotated_y), ("rotated_phi".into(), rotated_phi)];
    report.validate()?;
    Ok(report)
}

/// Unnormalized second-order image of `|M/2 + delta_n, N - M/2 - delta_n, 0, 0>`
/// under `tau` of JC1 evolution.
fn second_order_terms(space: &Arc<HilbertSpace>, delta_n: i64) -> Result<DVector<Complex64>> {
    let n = space.atoms();
    let m = parity_reference(n) as i64;
    if delta_n.abs() > m / 2 {
        return Err(Error::Domain(format!("|delta_n|={} exceeds {} for N={n}", delta_n.abs(), m / 2)));
    }
    let n_a = m / 2 + delta_n;
    let n_b = n as i64 - n_a;
    let x = (delta_n * delta_n) as f64 * PI / (4.0 * m as f64);
    let i = Complex64::new(0.0, 1.0);
    let (ground, excited, exponent) = if delta_n.rem_euclid(2) == 0 {
        (Complex64::new(1.0, 0.0), i * x, (m + delta_n) / 2)
    } else {
        (Complex64::new(x, 0.0), -i, (m + delta_n - 1) / 2)
    };
    let sign = if exponent.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let mut v = DVector::from_element(space.dim(), ZERO);
    let g = space.find(n_a, n_b, 0, 0).ok_or_else(|| Error::Domain("ground label outside the space".into()))?;
    v[g] = ground * sign;
    if let Some(e) = space.find(n_a - 1, n_b, 1, 0) {
        v[e] = excited * sign;
    }
    Ok(v)
}

/// Second-order perturbative image of a ground basis state, labeled by its
/// parity offset `delta_n`, after the JC1 interaction time of
/// [`cat_durations`]. Normalized.
pub fn second_order_image(space: &Arc<HilbertSpace>, delta_n: i64) -> Result<StateVector> {
    StateVector::normalized(space.clone(), second_order_terms(space, delta_n)?)
}

/// Image of `sum_k a_k |delta_n = k>`, built by linearity from the
/// unnormalized basis images and normalized at the end.
pub fn second_order_superposition(space: &Arc<HilbertSpace>, coefficients: &[(i64, Complex64)]) -> Result<StateVector> {
    if coefficients.is_empty() {
        return Err(Error::Domain("empty superposition".into()));
    }
    let mut v = DVector::from_element(space.dim(), ZERO);
    for &(k, a) in coefficients {
        v += second_order_terms(space, k)? * a;
    }
    StateVector::normalized(space.clone(), v)
}
