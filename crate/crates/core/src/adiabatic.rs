//! Adiabatic transfer from `Jx` to the double JC Hamiltonian.
//!
//! The bare ramp is `H0(t) = f1(t) Jx + f2(t) H_JC`. Non-adiabatic transitions
//! are countered by `alpha1 H_y + alpha2 H_cross`, the least-squares image of
//! the transitionless-driving term inside the available couplings.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{check_normalized, eigendecompose, EigenSystem, Schedule};
use crate::hilbert::{same_space, HilbertSpace, StateVector};
use crate::operators::{collective_spin, jc_coupling, linear_combine, Axis, GroundMode, HermitianOperator, RydbergLevel};

/// Relative degeneracy tolerance for the transitionless-driving denominators.
pub const BERRY_DEGENERACY_RTOL: f64 = 1e-9;

/// Denominator floor of the least-squares compensation solution.
pub const COMPENSATION_DENOM_FLOOR: f64 = 1e-12;

/// Overlap with the previous tracked vector below which the branch choice is
/// reported as ambiguous.
pub const BRANCH_OVERLAP_FLOOR: f64 = 0.5;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// The four operators every adiabatic Hamiltonian is built from.
#[derive(Debug, Clone)]
pub struct ControlOperators {
    pub jx: HermitianOperator,
    pub h_jc: HermitianOperator,
    pub h_y: HermitianOperator,
    pub h_cross: HermitianOperator,
}

impl ControlOperators {
    pub fn new(space: &Arc<HilbertSpace>) -> Self {
        let pair = |first: (RydbergLevel, GroundMode), second: (RydbergLevel, GroundMode), omega: Complex64, label: &str| {
            linear_combine(&[
                (1.0, &jc_coupling(space, first.0, first.1, omega)),
                (1.0, &jc_coupling(space, second.0, second.1, omega)),
            ])
            .expect("same space")
            .with_label(label)
        };
        let direct = ((RydbergLevel::R1, GroundMode::A), (RydbergLevel::R2, GroundMode::B));
        let cross = ((RydbergLevel::R1, GroundMode::B), (RydbergLevel::R2, GroundMode::A));
        Self {
            jx: collective_spin(space, Axis::X),
            h_jc: pair(direct.0, direct.1, ONE, "H_JC"),
            h_y: pair(direct.0, direct.1, I, "H_y"),
            h_cross: pair(cross.0, cross.1, I, "H_cross"),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        self.jx.space()
    }

    /// `f1 Jx + f2 H_JC + alpha1 H_y + alpha2 H_cross`.
    pub fn combined(&self, f1: f64, f2: f64, alpha1: f64, alpha2: f64) -> HermitianOperator {
        let d = self.jx.dim();
        let mut m = DMatrix::zeros(d, d);
        for (c, op) in [(f1, &self.jx), (f2, &self.h_jc), (alpha1, &self.h_y), (alpha2, &self.h_cross)] {
            if c != 0.0 {
                m.zip_apply(op.matrix(), |acc, x| *acc += x * c);
            }
        }
        HermitianOperator::from_parts(
            self.space().clone(),
            m,
            format!("{f1}*Jx + {f2}*H_JC + {alpha1}*H_y + {alpha2}*H_cross"),
        )
    }

    /// The uncompensated ramp Hamiltonian `f1 Jx + f2 H_JC`.
    pub fn bare(&self, f1: f64, f2: f64) -> HermitianOperator {
        self.combined(f1, f2, 0.0, 0.0)
    }
}

/// `f1 Jx + f2 H_JC + alpha1 H_y + alpha2 H_cross`.
pub fn combined_hamiltonian(space: &Arc<HilbertSpace>, f1: f64, f2: f64, alpha1: f64, alpha2: f64) -> HermitianOperator {
    ControlOperators::new(space).combined(f1, f2, alpha1, alpha2)
}

/// Ascending eigenvalues of `x H_JC + (1 - x) Jx` on a grid of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub x: Vec<f64>,
    pub eigenvalues: Vec<Vec<f64>>,
}

impl SpectrumTable {
    pub fn max_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|row| row[row.len() - 1]).collect()
    }
}

pub fn spectrum_scan(space: &Arc<HilbertSpace>, x_grid: &[f64]) -> Result<SpectrumTable> {
    if let Some(x) = x_grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("grid value {x} outside [0, 1]")));
    }
    let ops = ControlOperators::new(space);
    let mut eigenvalues = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let eig = eigendecompose(&ops.bare(1.0 - x, x))?;
        eigenvalues.push(eig.eigenvalues().iter().copied().collect());
    }
    Ok(SpectrumTable { x: x_grid.to_vec(), eigenvalues })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Max,
    Min,
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Branch::Max),
            "min" => Ok(Branch::Min),
            other => Err(Error::Config(format!("unknown branch `{other}`"))),
        }
    }
}

/// Extremal eigenpair of `H0` at one schedule time.
#[derive(Debug, Clone)]
pub struct TrackedEigenstate {
    pub time: f64,
    pub energy: f64,
    pub vector: DVector<Complex64>,
    pub branch: Branch,
    /// Number of eigenvalues within the degeneracy tolerance of the extreme.
    pub cluster_size: usize,
    /// Set when the new vector overlaps the previous one by less than
    /// [`BRANCH_OVERLAP_FLOOR`] in probability.
    pub ambiguous: bool,
}

/// Follows one extremal branch through a sequence of eigensystems, keeping
/// the gauge continuous. Inside a degenerate cluster the previous vector is
/// projected onto the cluster.
#[derive(Debug, Clone)]
pub struct BranchTracker {
    branch: Branch,
    previous: Option<DVector<Complex64>>,
}

impl BranchTracker {
    pub fn new(branch: Branch) -> Self {
        Self { branch, previous: None }
    }

    pub fn previous(&self) -> Option<&DVector<Complex64>> {
        self.previous.as_ref()
    }

    /// Chooses the branch vector of `eig` without advancing the tracker.
    pub fn select(&self, eig: &EigenSystem, h: &HermitianOperator, time: f64) -> TrackedEigenstate {
        let d = eig.dim();
        let tol = BERRY_DEGENERACY_RTOL * h.row_sum_norm().max(1.0);
        let values = eig.eigenvalues();
        let cluster: Vec<usize> = match self.branch {
            Branch::Max => (0..d).rev().take_while(|&k| values[d - 1] - values[k] <= tol).collect(),
            Branch::Min => (0..d).take_while(|&k| values[k] - values[0] <= tol).collect(),
        };
        let (mut vector, ambiguous) = match &self.previous {
            None => (eig.eigenvector(cluster[0]), false),
            Some(prev) => {
                let mut v = DVector::zeros(d);
                for &k in &cluster {
                    let col = eig.eigenvectors().column(k);
                    v.axpy(col.dotc(prev), &col, ONE);
                }
                let weight = v.norm_squared();
                if weight < 1e-24 {
                    (eig.eigenvector(cluster[0]), true)
                } else {
                    v.unscale_mut(weight.sqrt());
                    (v, weight < BRANCH_OVERLAP_FLOOR)
                }
            }
        };
        if let Some(prev) = &self.previous {
            let overlap = vector.dotc(prev);
            if overlap.norm() > 0.0 {
                let phase = overlap / overlap.norm();
                vector.apply(|z| *z *= phase);
            }
        }
        let energy = h.expectation_raw(&vector);
        TrackedEigenstate { time, energy, vector, branch: self.branch, cluster_size: cluster.len(), ambiguous }
    }

    pub fn accept(&mut self, state: &TrackedEigenstate) {
        self.previous = Some(state.vector.clone());
    }

    pub fn advance(&mut self, eig: &EigenSystem, h: &HermitianOperator, time: f64) -> TrackedEigenstate {
        let s = self.select(eig, h, time);
        self.accept(&s);
        s
    }
}

/// Extremal eigenstate of `f1 Jx + f2 H_JC` at every sample of `schedule`.
pub fn tracked_extremal_state(space: &Arc<HilbertSpace>, schedule: &Schedule, branch: Branch) -> Result<Vec<TrackedEigenstate>> {
    let ops = ControlOperators::new(space);
    let mut tracker = BranchTracker::new(branch);
    let mut out = Vec::with_capacity(schedule.len());
    for s in schedule.samples() {
        let h = ops.bare(s.f1, s.f2);
        let eig = eigendecompose(&h)?;
        out.push(tracker.advance(&eig, &h, s.t));
    }
    Ok(out)
}

/// Transitionless-driving term together with the number of eigenvalue pairs
/// skipped as degenerate.
#[derive(Debug, Clone)]
pub struct BerryTerm {
    pub operator: HermitianOperator,
    pub skipped_pairs: usize,
}

/// `H1 = i sum_{m != n} |m><m| dH |n><n| / (E_n - E_m)` with
/// `dH = f1dot Jx + f2dot H_JC`, omitting pairs closer than `degeneracy_tol`.
pub fn berry_h1(space: &Arc<HilbertSpace>, f1dot: f64, f2dot: f64, eig: &EigenSystem, degeneracy_tol: f64) -> Result<BerryTerm> {
    same_space(space, eig.space())?;
    let ops = ControlOperators::new(space);
    berry_h1_with(&ops, f1dot, f2dot, eig, degeneracy_tol)
}

pub(crate) fn berry_h1_with(ops: &ControlOperators, f1dot: f64, f2dot: f64, eig: &EigenSystem, degeneracy_tol: f64) -> Result<BerryTerm> {
    let dh = ops.bare(f1dot, f2dot);
    let v = eig.eigenvectors();
    let e = eig.eigenvalues();
    let mut d = v.adjoint() * dh.matrix() * v;
    let mut skipped = 0;
    let dim = eig.dim();
    for n in 0..dim {
        for m in 0..dim {
            if m == n {
                d[(m, n)] = Complex64::new(0.0, 0.0);
                continue;
            }
            let gap = e[n] - e[m];
            if gap.abs() < degeneracy_tol {
                d[(m, n)] = Complex64::new(0.0, 0.0);
                if m < n {
                    skipped += 1;
                }
            } else {
                d[(m, n)] *= I / gap;
            }
        }
    }
    let h1 = v * d * v.adjoint();
    let h1 = (&h1 + h1.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(BerryTerm { operator: HermitianOperator::from_parts(ops.space().clone(), h1, "H1".into()), skipped_pairs: skipped })
}

/// `H1 psi0` in `O(d^2)` for `psi0` inside the eigenvalue cluster at `energy`.
pub fn berry_h1_apply(dh: &DMatrix<Complex64>, eig: &EigenSystem, psi0: &DVector<Complex64>, energy: f64, degeneracy_tol: f64) -> DVector<Complex64> {
    let v = eig.eigenvectors();
    let coeffs = v.ad_mul(&(dh * psi0));
    let mut scaled = DVector::zeros(eig.dim());
    for (m, c) in coeffs.iter().enumerate() {
        let gap = energy - eig.eigenvalues()[m];
        if gap.abs() >= degeneracy_tol {
            scaled[m] = *c * I / gap;
        }
    }
    v * scaled
}

/// Least-squares compensation amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationFit {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Set when the two couplings are linearly dependent on the state and the
    /// fit falls back to zero.
    pub degenerate: bool,
}

/// Minimizes `|| (alpha1 H_y + alpha2 H_cross - H1) psi0 ||^2` over real
/// amplitudes, using the closed-form solution of the two stationarity
/// conditions.
pub fn compensation_alphas(
    psi0: &StateVector,
    h1: &HermitianOperator,
    hy: &HermitianOperator,
    hycross: &HermitianOperator,
) -> Result<CompensationFit> {
    check_normalized(psi0)?;
    for op in [h1, hy, hycross] {
        same_space(op.space(), psi0.space())?;
    }
    let v = psi0.amplitudes();
    Ok(compensation_from_vectors(&h1.apply_raw(v), &hy.apply_raw(v), &hycross.apply_raw(v)))
}

/// The same fit from `H1 psi0`, `H_y psi0` and `H_cross psi0`.
pub fn compensation_from_vectors(h1_psi: &DVector<Complex64>, hy_psi: &DVector<Complex64>, hc_psi: &DVector<Complex64>) -> CompensationFit {
    let yy = hy_psi.norm_squared();
    let cc = hc_psi.norm_squared();
    let y1 = 2.0 * hy_psi.dotc(h1_psi).re;
    let c1 = 2.0 * hc_psi.dotc(h1_psi).re;
    let yc = 2.0 * hy_psi.dotc(hc_psi).re;
    let denom = 4.0 * yy * cc - yc * yc;
    if denom.abs() < COMPENSATION_DENOM_FLOOR {
        return CompensationFit { alpha1: 0.0, alpha2: 0.0, degenerate: true };
    }
    CompensationFit {
        alpha1: (2.0 * cc * y1 - yc * c1) / denom,
        alpha2: (2.0 * yy * c1 - yc * y1) / denom,
        degenerate: false,
    }
}

/// Minimum-norm least-squares amplitudes, used when the two couplings act
/// on the state in linearly dependent ways and the closed form breaks down.
pub fn compensation_min_norm(h1_psi: &DVector<Complex64>, hy_psi: &DVector<Complex64>, hc_psi: &DVector<Complex64>) -> CompensationFit {
    let gram = nalgebra::Matrix2::new(
        hy_psi.norm_squared(),
        hy_psi.dotc(hc_psi).re,
        hc_psi.dotc(hy_psi).re,
        hc_psi.norm_squared(),
    );
    let rhs = nalgebra::Vector2::new(hy_psi.dotc(h1_psi).re, hc_psi.dotc(h1_psi).re);
    let scale = gram.norm().max(f64::MIN_POSITIVE);
    match gram.pseudo_inverse(1e-10 * scale) {
        Ok(pinv) => {
            let a = pinv * rhs;
            CompensationFit { alpha1: a[0], alpha2: a[1], degenerate: true }
        }
        Err(_) => CompensationFit { alpha1: 0.0, alpha2: 0.0, degenerate: true },
    }
}

/// `|| (alpha1 H_y + alpha2 H_cross - H1) psi0 ||^2`.
pub fn compensation_residual(
    alpha1: f64,
    alpha2: f64,
    h1_psi: &DVector<Complex64>,
    hy_psi: &DVector<Complex64>,
    hc_psi: &DVector<Complex64>,
) -> f64 {
    (hy_psi * Complex64::new(alpha1, 0.0) + hc_psi * Complex64::new(alpha2, 0.0) - h1_psi).norm_squared()
}

/// Settings of the greedy ramp controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedyConfig {
    /// Largest allowed JC strength `f2`.
    pub f2_max: f64,
    /// Largest accepted out-of-branch probability.
    pub leakage_tol: f64,
    /// Time step; every accepted step lasts exactly `dt`.
    pub dt: f64,
    pub compensate: bool,
    /// Rate factor after a rejected trial step.
    pub backoff: f64,
    /// Rate factor after an accepted step.
    pub growth: f64,
    /// Rate of the first trial step, in parameter units per unit time.
    pub initial_rate: f64,
    /// Upper bound on the ramp rate.
    pub max_rate: f64,
    /// Give up when the ramp has not finished by this time.
    pub max_duration: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            f2_max: 1.0,
            leakage_tol: 2e-3,
            dt: 0.05,
            compensate: true,
            backoff: 0.5,
            growth: 1.5,
            initial_rate: 0.1,
            max_rate: 1.0,
            max_duration: 20000.0,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f2_max > 0.0 && self.f2_max.is_finite()) {
            return Err(Error::Config(format!("f2_max must be positive, got {}", self.f2_max)));
        }
        if !(self.leakage_tol > 0.0 && self.leakage_tol < 0.5) {
            return Err(Error::Config(format!("leakage_tol must lie in (0, 0.5), got {}", self.leakage_tol)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.backoff > 0.0 && self.backoff < 1.0) || !(self.growth >= 1.0) {
            return Err(Error::Config("backoff must lie in (0, 1) and growth must be at least 1".into()));
        }
        if !(self.initial_rate > 0.0 && self.max_rate >= self.initial_rate) {
            return Err(Error::Config("rates must satisfy 0 < initial_rate <= max_rate".into()));
        }
        if !(self.max_duration > 0.0) {
            return Err(Error::Config("max_duration must be positive".into()));
        }
        Ok(())
    }
}

/// Schedule produced by [`greedy_schedule`] with controller diagnostics.
#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub schedule: Schedule,
    /// Leakage after every accepted step, aligned with the schedule samples.
    pub leakage: Vec<f64>,
    pub rejected_steps: usize,
    /// Steps taken without moving the controls because every trial move
    /// broke the tolerance.
    pub hold_steps: usize,
    pub final_state: StateVector,
}

impl GreedyOutcome {
    pub fn duration(&self) -> f64 {
        self.schedule.duration()
    }

    pub fn max_leakage(&self) -> f64 {
        self.leakage.iter().copied().fold(0.0, f64::max)
    }
}

/// States even under the simultaneous exchange `a <-> b`, `r1 <-> r2`.
///
/// `Jx`, `H_JC`, `H_y` and `H_cross` all commute with the exchange, and the
/// `+x` coherent state is even, so every ramp stays inside this sector.
#[derive(Debug, Clone)]
pub struct ExchangeSector {
    space: Arc<HilbertSpace>,
    isometry: DMatrix<f64>,
}

impl ExchangeSector {
    pub fn new(space: &Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        for (i, s) in space.basis().iter().enumerate() {
            let j = space.find(s.n_b as i64, s.n_a as i64, s.n_r2, s.n_r1).expect("exchange partner exists");
            if j == i {
                cols.push(vec![(i, 1.0)]);
            } else if j > i {
                cols.push(vec![(i, std::f64::consts::FRAC_1_SQRT_2), (j, std::f64::consts::FRAC_1_SQRT_2)]);
            }
        }
        let mut isometry = DMatrix::zeros(d, cols.len());
        for (k, col) in cols.iter().enumerate() {
            for &(i, x) in col {
                isometry[(i, k)] = x;
            }
        }
        Self { space: space.clone(), isometry }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.isometry.ncols()
    }

    /// Matrix of `op` in the sector basis.
    pub fn reduce(&self, op: &HermitianOperator) -> DMatrix<Complex64> {
        let q = self.isometry.map(|x| Complex64::new(x, 0.0));
        q.transpose() * op.matrix() * q
    }

    pub fn restrict(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        DVector::from_iterator(self.dim(), self.isometry.column_iter().map(|c| c.iter().zip(v.iter()).map(|(q, z)| z * *q).sum()))
    }

    pub fn lift(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.space.dim());
        for (k, col) in self.isometry.column_iter().enumerate() {
            for (i, q) in col.iter().enumerate() {
                if *q != 0.0 {
                    out[i] += v[k] * *q;
                }
            }
        }
        out
    }

    /// Probability of `state` outside the sector.
    pub fn leakage_out(&self, state: &StateVector) -> Result<f64> {
        same_space(&self.space, state.space())?;
        Ok((1.0 - self.restrict(state.amplitudes()).norm_squared()).max(0.0))
    }
}

/// Control operators restricted to the exchange sector.
#[derive(Debug, Clone)]
struct SectorControls {
    sector: ExchangeSector,
    jx: DMatrix<f64>,
    h_jc: DMatrix<f64>,
    h_y: DMatrix<Complex64>,
    h_cross: DMatrix<Complex64>,
}

/// Ascending real eigensystem of a sector Hamiltonian.
#[derive(Debug, Clone)]
struct SectorEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SectorControls {
    fn new(space: &Arc<HilbertSpace>) -> Self {
        let ops = ControlOperators::new(space);
        let sector = ExchangeSector::new(space);
        Self {
            jx: sector.reduce(&ops.jx).map(|z| z.re),
            h_jc: sector.reduce(&ops.h_jc).map(|z| z.re),
            h_y: sector.reduce(&ops.h_y),
            h_cross: sector.reduce(&ops.h_cross),
            sector,
        }
    }

    fn bare(&self, f1: f64, f2: f64) -> DMatrix<f64> {
        &self.jx * f1 + &self.h_jc * f2
    }

    fn eigen(&self, f1: f64, f2: f64) -> Result<SectorEigen> {
        let m = self.bare(f1, f2);
        let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, k| eig.eigenvectors[(i, order[k])]);
        Ok(SectorEigen { values, vectors })
    }

    /// `exp(-i (H0 + alpha1 H_y + alpha2 H_cross) dt) psi`, reusing `bare_eig`
    /// when both amplitudes vanish.
    fn step(&self, bare_eig: &SectorEigen, f1: f64, f2: f64, alpha: (f64, f64), psi: &DVector<Complex64>, dt: f64) -> Result<DVector<Complex64>> {
        if alpha == (0.0, 0.0) {
            let v = bare_eig.vectors.map(|x| Complex64::new(x, 0.0));
            let mut c = v.tr_mul(psi);
            for (k, z) in c.iter_mut().enumerate() {
                *z *= Complex64::from_polar(1.0, -bare_eig.values[k] * dt);
            }
            return Ok(v * c);
        }
        let m = self.bare(f1, f2).map(|x| Complex64::new(x, 0.0))
            + &self.h_y * Complex64::new(alpha.0, 0.0)
            + &self.h_cross * Complex64::new(alpha.1, 0.0);
        let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
        let mut c = eig.eigenvectors.ad_mul(psi);
        for (k, z) in c.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, -eig.eigenvalues[k] * dt);
        }
        Ok(&eig.eigenvectors * c)
    }

    /// Least-squares amplitudes for the move `(f1dot, f2dot)` at the tracked
    /// state `psi0` of `eig`.
    fn alphas(&self, eig: &SectorEigen, psi0: &DVector<f64>, energy: f64, f1dot: f64, f2dot: f64) -> (f64, f64) {
        let dh_psi = (&self.jx * f1dot + &self.h_jc * f2dot) * psi0;
        let scale = eig.values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let tol = BERRY_DEGENERACY_RTOL * scale;
        let coeffs = eig.vectors.tr_mul(&dh_psi);
        let mut u = DVector::<f64>::zeros(psi0.len());
        for (m, c) in coeffs.iter().enumerate() {
            let gap = energy - eig.values[m];
            if gap.abs() >= tol {
                u.axpy(c / gap, &eig.vectors.column(m), 1.0);
            }
        }
        let u = u.map(|x| Complex64::new(0.0, x));
        let psi = psi0.map(|x| Complex64::new(x, 0.0));
        let (y, c) = (&self.h_y * &psi, &self.h_cross * &psi);
        let fit = compensation_from_vectors(&u, &y, &c);
        let fit = if fit.degenerate { compensation_min_norm(&u, &y, &c) } else { fit };
        (fit.alpha1, fit.alpha2)
    }
}

impl SectorEigen {
    /// Highest-energy vector, continued from `previous` inside a degenerate
    /// top cluster and sign-aligned with it.
    fn top(&self, previous: Option<&DVector<f64>>) -> (f64, DVector<f64>) {
        let d = self.values.len();
        let scale = self.values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let tol = BERRY_DEGENERACY_RTOL * scale;
        let cluster: Vec<usize> = (0..d).rev().take_while(|&k| self.values[d - 1] - self.values[k] <= tol).collect();
        let mut v: DVector<f64> = self.vectors.column(d - 1).into_owned();
        if let Some(prev) = previous {
            if cluster.len() > 1 {
                let mut p = DVector::zeros(d);
                for &k in &cluster {
                    let col = self.vectors.column(k);
                    p.axpy(col.dot(prev), &col, 1.0);
                }
                let w = p.norm();
                if w > 1e-12 {
                    v = p / w;
                }
            }
            if v.dot(prev) < 0.0 {
                v.neg_mut();
            }
        }
        (self.values[d - 1], v)
    }
}

fn overlap_probability(real: &DVector<f64>, psi: &DVector<Complex64>) -> f64 {
    real.iter().zip(psi.iter()).map(|(x, z)| z * *x).sum::<Complex64>().norm_sqr()
}

/// Ramps `(f1, f2)` from `(1, 0)` to `(0, f2_max)`: first `f2` rises at fixed
/// `f1`, then `f1` decays. Each step of length `dt` tries the current rate;
/// if the evolved state leaks more than `leakage_tol` out of the tracked
/// extremal eigenstate the rate is multiplied by `backoff` and the step is
/// retried, otherwise the step is kept and the rate grows by `growth`. When
/// the rate underflows the controls are held for one step.
///
/// The ramp runs inside the [`ExchangeSector`], where the tracked state is
/// the highest eigenvector of the sector.
pub fn greedy_schedule(space: &Arc<HilbertSpace>, config: &GreedyConfig) -> Result<GreedyOutcome> {
    config.validate()?;
    let ctl = SectorControls::new(space);
    let dt = config.dt;
    let min_rate = 1e-6;
    let (mut f1, mut f2) = (1.0_f64, 0.0_f64);
    let mut eig0 = ctl.eigen(f1, f2)?;
    let (mut energy, mut tracked) = eig0.top(None);
    let mut psi = tracked.map(|x| Complex64::new(x, 0.0));
    let mut t = 0.0;
    let mut rate = config.initial_rate;
    let mut samples = Vec::new();
    let mut leakage = vec![0.0];
    let (mut rejected, mut holds) = (0usize, 0usize);

    while f1 > 0.0 || f2 < config.f2_max {
        if t > config.max_duration {
            return Err(Error::Numerical(format!(
                "greedy ramp unfinished after t={t:.1} at (f1, f2)=({f1:.3e}, {f2:.3e})"
            )));
        }
        let holding = rate < min_rate;
        let step = if holding { 0.0 } else { rate * dt };
        let (nf1, nf2) = if f2 < config.f2_max { (f1, (f2 + step).min(config.f2_max)) } else { ((f1 - step).max(0.0), f2) };
        let (f1dot, f2dot) = ((nf1 - f1) / dt, (nf2 - f2) / dt);
        let alpha = if config.compensate && !holding { ctl.alphas(&eig0, &tracked, energy, f1dot, f2dot) } else { (0.0, 0.0) };
        let next_psi = ctl.step(&eig0, f1, f2, alpha, &psi, dt)?;
        let eig_next = if holding { eig0.clone() } else { ctl.eigen(nf1, nf2)? };
        let (next_energy, next_tracked) = eig_next.top(Some(&tracked));
        let leak = (1.0 - overlap_probability(&next_tracked, &next_psi)).max(0.0);

        if leak > config.leakage_tol && !holding {
            rejected += 1;
            rate *= config.backoff;
            continue;
        }
        if holding {
            holds += 1;
            rate = min_rate * config.growth;
        } else {
            rate = (rate * config.growth).min(config.max_rate);
        }
        samples.push(crate::evolve::ScheduleSample { t, f1, f2, alpha1: alpha.0, alpha2: alpha.1 });
        leakage.push(leak);
        t += dt;
        f1 = nf1;
        f2 = nf2;
        psi = next_psi;
        tracked = next_tracked;
        energy = next_energy;
        eig0 = eig_next;
    }
    samples.push(crate::evolve::ScheduleSample::new(t, f1, f2));
    let final_state = StateVector::normalized(space.clone(), ctl.sector.lift(&psi))?;
    Ok(GreedyOutcome { schedule: Schedule::new(samples)?, leakage, rejected_steps: rejected, hold_steps: holds, final_state })
}

/// Observables at one schedule sample of [`follow_schedule`].
#[derive(Debug, Clone)]
pub struct RampPoint {
    pub t: f64,
    pub f1: f64,
    pub f2: f64,
    pub state: StateVector,
    /// `<H0(t)>` of the evolving state.
    pub energy: f64,
    /// Highest eigenvalue of `H0(t)` in the exchange sector.
    pub extremal_energy: f64,
    /// `1 - |<psi0(t)|psi(t)>|^2` against the tracked extremal eigenstate.
    pub leakage: f64,
}

/// Evolves `initial` through `schedule`, applying the scheduled compensation
/// amplitudes when `compensate` is set, and hands every sample to `visit`.
/// The initial state must lie in the [`ExchangeSector`].
pub fn follow_schedule(
    initial: &StateVector,
    schedule: &Schedule,
    compensate: bool,
    mut visit: impl FnMut(&RampPoint) -> Result<()>,
) -> Result<StateVector> {
    check_normalized(initial)?;
    let space = initial.space().clone();
    let ctl = SectorControls::new(&space);
    let mut psi = ctl.sector.restrict(initial.amplitudes());
    if (1.0 - psi.norm_squared()).abs() > 1e-9 {
        return Err(Error::Domain("initial state is not exchange symmetric".into()));
    }
    let samples = schedule.samples();
    let mut tracked: Option<DVector<f64>> = None;
    let mut cached: Option<((f64, f64), SectorEigen)> = None;
    for (k, s) in samples.iter().enumerate() {
        let eig = match &cached {
            Some((p, e)) if *p == (s.f1, s.f2) => e.clone(),
            _ => ctl.eigen(s.f1, s.f2)?,
        };
        let (extremal, vector) = eig.top(tracked.as_ref());
        let h0 = ctl.bare(s.f1, s.f2).map(|x| Complex64::new(x, 0.0));
        let energy = psi.dotc(&(h0 * &psi)).re;
        let point = RampPoint {
            t: s.t,
            f1: s.f1,
            f2: s.f2,
            state: StateVector::normalized(space.clone(), ctl.sector.lift(&psi))?,
            energy,
            extremal_energy: extremal,
            leakage: (1.0 - overlap_probability(&vector, &psi)).max(0.0),
        };
        visit(&point)?;
        tracked = Some(vector);
        if let Some(next) = samples.get(k + 1) {
            let alpha = if compensate { (s.alpha1, s.alpha2) } else { (0.0, 0.0) };
            psi = ctl.step(&eig, s.f1, s.f2, alpha, &psi, next.t - s.t)?;
        }
        cached = Some(((s.f1, s.f2), eig));
    }
    StateVector::normalized(space, ctl.sector.lift(&psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{propagate_schedule, ScheduleSample};
    use crate::hilbert::{build_space, spin_coherent_state};
    use crate::operators::jc_hamiltonian;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn linear_ramp(duration: f64, dt: f64) -> Schedule {
        Schedule::from_fn(duration, dt, |t| (1.0 - t / duration, t / duration)).unwrap()
    }

    #[test]
    fn combined_hamiltonian_reduces_to_its_parts() {
        let space = build_space(5).unwrap();
        let jx = collective_spin(&space, Axis::X);
        let h = combined_hamiltonian(&space, 1.0, 0.0, 0.0, 0.0);
        assert!((h.matrix() - jx.matrix()).camax() < 1e-15);
        let h = combined_hamiltonian(&space, 0.0, 1.0, 0.0, 0.0);
        assert!((h.matrix() - jc_hamiltonian(&space, 1.0).matrix()).camax() < 1e-15);
        let h = combined_hamiltonian(&space, 0.3, 0.7, 0.2, -0.1);
        assert!(h.hermiticity_error() < 1e-12);
        assert!(h.respects_rydberg_ladder(1));
    }

    #[test]
    fn spectrum_endpoints_and_continuity() {
        let space = build_space(16).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
        let table = spectrum_scan(&space, &grid).unwrap();
        let top = table.max_eigenvalues();
        assert_abs_diff_eq!(top[0], 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(top[50], 32f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(table.eigenvalues[0][0], -8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(table.eigenvalues[50][0], -(32f64.sqrt()), epsilon = 1e-9);
        let ops = ControlOperators::new(&space);
        let bound = linear_combine(&[(1.0, &ops.h_jc), (-1.0, &ops.jx)]).unwrap().row_sum_norm();
        for w in table.eigenvalues.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!((a - b).abs() <= bound * 0.02 + 1e-12);
            }
        }
        assert!(spectrum_scan(&space, &[1.5]).is_err());
    }

    #[test]
    fn tracked_state_starts_at_the_coherent_state() {
        let space = build_space(7).unwrap();
        let tracked = tracked_extremal_state(&space, &linear_ramp(1.0, 0.1), Branch::Max).unwrap();
        let coherent = spin_coherent_state(&space, PI / 2.0, 0.0);
        let f = tracked[0].vector.dotc(coherent.amplitudes()).norm_sqr();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(tracked[0].energy, 3.5, epsilon = 1e-10);
        for w in tracked.windows(2) {
            let overlap = w[0].vector.dotc(&w[1].vector);
            assert!(overlap.re > 0.0 && overlap.im.abs() < 1e-12);
        }
    }

    #[test]
    fn tracked_state_ends_in_the_upper_dressed_state() {
        let space = build_space(6).unwrap();
        let tracked = tracked_extremal_state(&space, &linear_ramp(1.0, 0.25), Branch::Max).unwrap();
        let last = tracked.last().unwrap();
        let h = 0.5f64;
        let mut want = DVector::zeros(space.dim());
        for (na, nb, r1, r2) in [(3, 3, 0, 0), (2, 3, 1, 0), (3, 2, 0, 1), (2, 2, 1, 1)] {
            want[space.find(na, nb, r1, r2).unwrap()] = Complex64::new(h, 0.0);
        }
        assert_abs_diff_eq!(last.vector.dotc(&want).norm_sqr(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(last.energy, 2.0 * 3f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn berry_term_is_hermitian_and_off_diagonal() {
        let space = build_space(4).unwrap();
        let ops = ControlOperators::new(&space);
        let eig = eigendecompose(&ops.bare(0.6, 0.4)).unwrap();
        let term = berry_h1(&space, -0.5, 0.5, &eig, 1e-9).unwrap();
        assert!(term.operator.hermiticity_error() < 1e-12);
        let inner = eig.eigenvectors().adjoint() * term.operator.matrix() * eig.eigenvectors();
        for k in 0..eig.dim() {
            assert!(inner[(k, k)].norm() < 1e-12);
        }
        let zero = berry_h1(&space, 0.0, 0.0, &eig, 1e-9).unwrap();
        assert!(zero.operator.frobenius_norm() < 1e-14);
        let psi0 = eig.eigenvector(eig.dim() - 1);
        let fast = berry_h1_apply(ops.bare(-0.5, 0.5).matrix(), &eig, &psi0, eig.eigenvalues()[eig.dim() - 1], 1e-9);
        assert!((fast - term.operator.apply_raw(&psi0)).camax() < 1e-12);
    }

    #[test]
    fn transitionless_driving_follows_the_branch() {
        let space = build_space(4).unwrap();
        let ops = ControlOperators::new(&space);
        let duration = 2.0;
        let schedule = linear_ramp(duration, 1e-3);
        let tracked = tracked_extremal_state(&space, &schedule, Branch::Max).unwrap();
        let start = StateVector::from_amplitudes(space.clone(), tracked[0].vector.clone()).unwrap();
        let fidelity = |with_h1: bool| {
            // midpoint controls on every segment
            let states = propagate_schedule(&start, &schedule, |s: &ScheduleSample| {
                let x = (s.t + 0.5e-3) / duration;
                let h0 = ops.bare(1.0 - x, x);
                if !with_h1 {
                    return Ok(h0);
                }
                let eig = eigendecompose(&h0)?;
                let h1 = berry_h1(&space, -1.0 / duration, 1.0 / duration, &eig, 1e-9)?;
                linear_combine(&[(1.0, &h0), (1.0, &h1.operator)])
            })
            .unwrap();
            states
                .iter()
                .zip(&tracked)
                .map(|((_, s), t)| t.vector.dotc(s.amplitudes()).norm_sqr())
                .fold(1.0, f64::min)
        };
        let with = fidelity(true);
        assert!(with >= 1.0 - 1e-5, "fidelity {with}");
        assert!(fidelity(false) < with);
    }

    fn sample_vectors() -> (DVector<Complex64>, DVector<Complex64>, DVector<Complex64>) {
        let space = build_space(5).unwrap();
        let ops = ControlOperators::new(&space);
        let eig = eigendecompose(&ops.bare(0.5, 0.5)).unwrap();
        let psi = eig.eigenvector(eig.dim() - 1);
        let h1 = berry_h1_with(&ops, -0.3, 0.2, &eig, 1e-9).unwrap().operator;
        (h1.apply_raw(&psi), ops.h_y.apply_raw(&psi), ops.h_cross.apply_raw(&psi))
    }

    #[test]
    fn compensation_fit_special_cases() {
        let (u, y, c) = sample_vectors();
        let zero = compensation_from_vectors(&(&u * Complex64::new(0.0, 0.0)), &y, &c);
        assert_eq!((zero.alpha1, zero.alpha2, zero.degenerate), (0.0, 0.0, false));
        let scaled = compensation_from_vectors(&(&y * Complex64::new(0.7, 0.0)), &y, &c);
        assert_abs_diff_eq!(scaled.alpha1, 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(scaled.alpha2, 0.0, epsilon = 1e-10);
        let fit = compensation_from_vectors(&u, &y, &c);
        let best = compensation_residual(fit.alpha1, fit.alpha2, &u, &y, &c);
        for (d1, d2) in [(1e-4, 0.0), (-1e-4, 0.0), (0.0, 1e-4), (0.0, -1e-4)] {
            assert!(compensation_residual(fit.alpha1 + d1, fit.alpha2 + d2, &u, &y, &c) >= best);
        }
        let phase = Complex64::from_polar(1.0, 0.83);
        let rotated = compensation_from_vectors(&(&u * phase), &(&y * phase), &(&c * phase));
        assert_abs_diff_eq!(rotated.alpha1, fit.alpha1, epsilon = 1e-10);
        assert_abs_diff_eq!(rotated.alpha2, fit.alpha2, epsilon = 1e-10);
    }

    #[test]
    fn dependent_couplings_fall_back() {
        let (u, y, _) = sample_vectors();
        let fit = compensation_from_vectors(&u, &y, &y);
        assert!(fit.degenerate);
        let m = compensation_min_norm(&(&y * Complex64::new(0.4, 0.0)), &y, &y);
        assert_abs_diff_eq!(m.alpha1, 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(m.alpha2, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn compensation_alphas_checks_inputs() {
        let space = build_space(3).unwrap();
        let ops = ControlOperators::new(&space);
        let psi = spin_coherent_state(&space, PI / 2.0, 0.0);
        // both couplings act identically on the coherent state
        assert!(compensation_alphas(&psi, &ops.h_y, &ops.h_y, &ops.h_cross).unwrap().degenerate);
        let eig = eigendecompose(&ops.bare(0.5, 0.5)).unwrap();
        let top = StateVector::from_amplitudes(space.clone(), eig.eigenvector(eig.dim() - 1)).unwrap();
        let fit = compensation_alphas(&top, &ops.h_y, &ops.h_y, &ops.h_cross).unwrap();
        assert_abs_diff_eq!(fit.alpha1, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.alpha2, 0.0, epsilon = 1e-9);
        let other = build_space(4).unwrap();
        assert!(compensation_alphas(&spin_coherent_state(&other, 1.0, 0.0), &ops.h_y, &ops.h_y, &ops.h_cross).is_err());
    }

    #[test]
    fn exchange_sector_is_invariant() {
        for n in [1, 4, 7] {
            let space = build_space(n).unwrap();
            let sector = ExchangeSector::new(&space);
            let d = space.dim();
            let fixed = space.basis().iter().filter(|s| s.n_a == s.n_b && s.n_r1 == s.n_r2).count();
            assert_eq!(sector.dim(), (d + fixed) / 2);
            let ops = ControlOperators::new(&space);
            let q = sector.isometry.map(|x| Complex64::new(x, 0.0));
            let projector = &q * q.transpose();
            for op in [&ops.jx, &ops.h_jc, &ops.h_y, &ops.h_cross] {
                let comm = &projector * op.matrix() - op.matrix() * &projector;
                assert!(comm.camax() < 1e-12);
            }
            let coherent = spin_coherent_state(&space, PI / 2.0, 0.0);
            assert!(sector.leakage_out(&coherent).unwrap() < 1e-12);
            let back = sector.lift(&sector.restrict(coherent.amplitudes()));
            assert!((back - coherent.amplitudes()).camax() < 1e-12);
        }
    }

    #[test]
    fn follow_schedule_rejects_asymmetric_states() {
        let space = build_space(3).unwrap();
        let pole = spin_coherent_state(&space, 0.0, 0.0);
        assert!(follow_schedule(&pole, &linear_ramp(1.0, 0.5), false, |_| Ok(())).is_err());
    }

    #[test]
    fn follow_schedule_matches_full_space_propagation() {
        let space = build_space(4).unwrap();
        let ops = ControlOperators::new(&space);
        let samples: Vec<ScheduleSample> = (0..=20)
            .map(|k| ScheduleSample::new(k as f64 * 0.1, 1.0 - k as f64 / 20.0, k as f64 / 20.0).with_alphas(0.1, -0.05))
            .collect();
        let schedule = Schedule::new(samples).unwrap();
        let start = spin_coherent_state(&space, PI / 2.0, 0.0);
        let oracle = propagate_schedule(&start, &schedule, |s| Ok(ops.combined(s.f1, s.f2, s.alpha1, s.alpha2))).unwrap();
        let mut seen = Vec::new();
        let last = follow_schedule(&start, &schedule, true, |p| {
            seen.push(p.state.clone());
            Ok(())
        })
        .unwrap();
        for (s, (_, o)) in seen.iter().zip(&oracle) {
            assert_abs_diff_eq!(s.fidelity(o).unwrap(), 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(last.fidelity(&oracle.last().unwrap().1).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn greedy_schedule_is_monotone_and_complete() {
        let space = build_space(4).unwrap();
        let config = GreedyConfig { leakage_tol: 1e-2, ..GreedyConfig::default() };
        let out = greedy_schedule(&space, &config).unwrap();
        let s = out.schedule.samples();
        assert_eq!((s[0].f1, s[0].f2), (1.0, 0.0));
        let end = s.last().unwrap();
        assert_eq!((end.f1, end.f2), (0.0, 1.0));
        for w in s.windows(2) {
            assert!(w[1].f2 >= w[0].f2 && w[1].f1 <= w[0].f1);
            assert_abs_diff_eq!(w[1].t - w[0].t, config.dt, epsilon = 1e-9);
        }
        assert!(out.max_leakage() <= config.leakage_tol);
        assert_eq!(out.leakage.len(), s.len());
        out.schedule.validate_squeezing(1.0).unwrap();
    }

    #[test]
    fn greedy_config_validation() {
        let space = build_space(2).unwrap();
        for bad in [
            GreedyConfig { leakage_tol: 0.6, ..GreedyConfig::default() },
            GreedyConfig { dt: 0.0, ..GreedyConfig::default() },
            GreedyConfig { backoff: 1.0, ..GreedyConfig::default() },
            GreedyConfig { f2_max: -1.0, ..GreedyConfig::default() },
        ] {
            assert!(matches!(greedy_schedule(&space, &bad), Err(Error::Config(_))));
        }
        let json = r#"{"leakage_tol": 0.01, "bogus": 1}"#;
        assert!(serde_json::from_str::<GreedyConfig>(json).is_err());
    }

    #[test]
    fn branch_parsing() {
        assert_eq!("max".parse::<Branch>().unwrap(), Branch::Max);
        assert!("middle".parse::<Branch>().is_err());
    }
}
