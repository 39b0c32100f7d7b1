//! Exact unitary evolution through dense eigendecomposition.
//!
//! Rotations follow one convention everywhere: `rotate_spin(state, axis, phi)`
//! applies `exp(+i J_axis phi)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{same_space, HilbertSpace, StateVector, NORM_TOL};
use crate::operators::{collective_spin, Axis, HermitianOperator, HERMITIAN_TOL};

/// Relative width of an eigenvalue cluster treated as degenerate.
pub const DEGENERACY_RTOL: f64 = 1e-11;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    space: Arc<HilbertSpace>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<Complex64>,
}

impl EigenSystem {
    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> DVector<Complex64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// `V diag(lambda) V^dagger`.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::new(self.eigenvalues[k], 0.0);
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// Tolerance used to group eigenvalues into degenerate clusters.
    pub fn degeneracy_tol(&self) -> f64 {
        let scale = self.eigenvalues.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        DEGENERACY_RTOL * scale
    }

    /// Index ranges of eigenvalue clusters no wider than `tol` between neighbours.
    pub fn clusters(&self, tol: f64) -> Vec<std::ops::Range<usize>> {
        clusters_of(self.eigenvalues.as_slice(), tol)
    }

    pub(crate) fn evolve_raw(&self, v: &DVector<Complex64>, duration: f64) -> DVector<Complex64> {
        let mut coeffs = self.eigenvectors.ad_mul(v);
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c *= Complex64::from_polar(1.0, -self.eigenvalues[k] * duration);
        }
        &self.eigenvectors * coeffs
    }

    /// `exp(-i H t) state` for the decomposed `H`.
    pub fn propagate(&self, state: &StateVector, duration: f64) -> Result<StateVector> {
        same_space(&self.space, state.space())?;
        if !duration.is_finite() {
            return Err(Error::Domain(format!("non-finite duration {duration}")));
        }
        StateVector::normalized(self.space.clone(), self.evolve_raw(state.amplitudes(), duration))
    }

    /// Dense `exp(-i H t)`.
    pub fn propagator(&self, duration: f64) -> DMatrix<Complex64> {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::from_polar(1.0, -self.eigenvalues[k] * duration);
        }
        scaled * self.eigenvectors.adjoint()
    }
}

fn clusters_of(values: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        if k == values.len() || values[k] - values[k - 1] > tol {
            out.push(start..k);
            start = k;
        }
    }
    out
}

/// Connected components of the coupling graph, each listed in index order and
/// ordered by their smallest index.
fn coupling_components(m: &DMatrix<Complex64>) -> Vec<Vec<usize>> {
    let d = m.nrows();
    let mut parent: Vec<usize> = (0..d).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in 0..d {
        for i in (j + 1)..d {
            if m[(i, j)] != ZERO || m[(j, i)] != ZERO {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; d];
    for i in 0..d {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[slot[r]].push(i);
    }
    comps
}

/// Phase so the first component of at least half the maximal magnitude is
/// real and positive.
fn fix_phase(v: &mut DVector<Complex64>) {
    let max = v.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if max == 0.0 {
        return;
    }
    if let Some(pivot) = v.iter().find(|z| z.norm() >= 0.5 * max).copied() {
        let phase = pivot.conj() / pivot.norm();
        v.apply(|z| *z *= phase);
    }
}

/// Replaces the columns of a degenerate cluster with the Gram-Schmidt
/// orthonormalization of the projected unit vectors `e_0, e_1, ...`, which is
/// independent of the basis the solver happened to return.
fn canonicalize_cluster(vectors: &mut DMatrix<Complex64>, cols: std::ops::Range<usize>) {
    let k = cols.len();
    let d = vectors.nrows();
    let block = vectors.columns(cols.start, k).into_owned();
    let mut chosen: Vec<DVector<Complex64>> = Vec::with_capacity(k);
    let mut used = vec![false; d];
    // loose thresholds first keep the pivots well conditioned
    for threshold in [0.1, 1e-3, 1e-6, 0.0] {
        for i in 0..d {
            if chosen.len() == k {
                break;
            }
            if used[i] {
                continue;
            }
            // P e_i = V (V^dagger e_i) = V conj(row i)
            let coeffs = block.row(i).adjoint();
            let mut w = &block * coeffs;
            for q in &chosen {
                let overlap = q.dotc(&w);
                w.axpy(-overlap, q, Complex64::new(1.0, 0.0));
            }
            let norm = w.norm();
            if norm <= threshold || norm == 0.0 {
                continue;
            }
            used[i] = true;
            w.unscale_mut(norm);
            chosen.push(w);
        }
    }
    debug_assert_eq!(chosen.len(), k);
    for (offset, v) in chosen.into_iter().enumerate() {
        vectors.set_column(cols.start + offset, &v);
    }
}

/// Deterministic eigendecomposition of a Hermitian operator.
///
/// The matrix is split into blocks that no nonzero entry connects, each block
/// is diagonalized separately, and the pairs are merged in ascending order.
/// Within a degenerate cluster the vectors are re-orthogonalized with fixed
/// pivoting; other vectors get a fixed phase.
pub fn eigendecompose(op: &HermitianOperator) -> Result<EigenSystem> {
    let err = op.hermiticity_error();
    let scale = op.matrix().iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    if err > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(op.label().to_string()));
    }
    eigendecompose_matrix(op.space(), op.matrix())
}

pub(crate) fn eigendecompose_matrix(space: &Arc<HilbertSpace>, m: &DMatrix<Complex64>) -> Result<EigenSystem> {
    let d = m.nrows();
    let mut pairs: Vec<(f64, DVector<Complex64>)> = Vec::with_capacity(d);
    for comp in coupling_components(m) {
        let n = comp.len();
        let sub = DMatrix::from_fn(n, n, |i, j| m[(comp[i], comp[j])]);
        let sub = (&sub + sub.adjoint()) * Complex64::new(0.5, 0.0);
        let (values, vectors) = if sub.iter().all(|z| z.im == 0.0) {
            let eig = SymmetricEigen::try_new(sub.map(|z| z.re), f64::EPSILON, 0)
                .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
            (eig.eigenvalues, eig.eigenvectors.map(|x| Complex64::new(x, 0.0)))
        } else {
            let eig = SymmetricEigen::try_new(sub, f64::EPSILON, 0)
                .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
            (eig.eigenvalues, eig.eigenvectors)
        };
        for k in 0..n {
            let mut v = DVector::zeros(d);
            for (local, &global) in comp.iter().enumerate() {
                v[global] = vectors[(local, k)];
            }
            pairs.push((values[k], v));
        }
    }
    if pairs.iter().any(|(e, _)| !e.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let eigenvalues = DVector::from_iterator(d, pairs.iter().map(|p| p.0));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (k, (_, v)) in pairs.iter().enumerate() {
        eigenvectors.set_column(k, v);
    }
    let mut sys = EigenSystem { space: space.clone(), eigenvalues, eigenvectors };
    let tol = sys.degeneracy_tol();
    for range in sys.clusters(tol) {
        if range.len() > 1 {
            canonicalize_cluster(&mut sys.eigenvectors, range);
        } else {
            let mut v = sys.eigenvectors.column(range.start).into_owned();
            fix_phase(&mut v);
            sys.eigenvectors.set_column(range.start, &v);
        }
    }
    Ok(sys)
}

/// `exp(-i H t) state`.
pub fn propagate_const(state: &StateVector, op: &HermitianOperator, duration: f64) -> Result<StateVector> {
    same_space(state.space(), op.space())?;
    check_normalized(state)?;
    eigendecompose(op)?.propagate(state, duration)
}

pub(crate) fn check_normalized(state: &StateVector) -> Result<()> {
    let norm = state.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

/// Control values held constant from `t` until the next sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSample {
    pub t: f64,
    pub f1: f64,
    pub f2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl ScheduleSample {
    pub fn new(t: f64, f1: f64, f2: f64) -> Self {
        Self { t, f1, f2, alpha1: 0.0, alpha2: 0.0 }
    }

    pub fn with_alphas(mut self, alpha1: f64, alpha2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self
    }
}

/// Piecewise-constant control record: sample `k` holds on `[t_k, t_{k+1})`
/// and the last sample only marks the end time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    samples: Vec<ScheduleSample>,
}

impl Schedule {
    pub fn new(samples: Vec<ScheduleSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("schedule has no samples".into()));
        }
        for s in &samples {
            if ![s.t, s.f1, s.f2, s.alpha1, s.alpha2].iter().all(|x| x.is_finite()) {
                return Err(Error::Domain(format!("non-finite schedule sample at t={}", s.t)));
            }
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::Domain(format!("schedule times not increasing at t={}", w[1].t)));
        }
        Ok(Self { samples })
    }

    /// Samples `f(t)` on a uniform grid of step `dt` over `[0, duration]`; the
    /// final sample sits exactly at `duration`.
    pub fn from_fn(duration: f64, dt: f64, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        if !(duration > 0.0 && dt > 0.0) {
            return Err(Error::Domain("duration and dt must be positive".into()));
        }
        let steps = (duration / dt).round().max(1.0) as usize;
        let samples = (0..=steps)
            .map(|k| {
                let t = duration * k as f64 / steps as f64;
                let (f1, f2) = f(t);
                ScheduleSample::new(t, f1, f2)
            })
            .collect();
        Self::new(samples)
    }

    /// Checks the endpoint and range requirements of a squeezing ramp.
    pub fn validate_squeezing(&self, f2_max: f64) -> Result<()> {
        let first = self.samples[0];
        let last = self.samples[self.samples.len() - 1];
        if (first.f1, first.f2) != (1.0, 0.0) || (last.f1, last.f2) != (0.0, 1.0) {
            return Err(Error::Domain("squeezing schedule must run from (f1,f2)=(1,0) to (0,1)".into()));
        }
        if let Some(s) = self.samples.iter().find(|s| s.f2 < 0.0 || s.f2 > f2_max) {
            return Err(Error::Domain(format!("f2={} outside [0, {f2_max}] at t={}", s.f2, s.t)));
        }
        Ok(())
    }

    pub fn samples(&self) -> &[ScheduleSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Splits every segment into `factor` equal pieces holding the same values.
    pub fn refined(&self, factor: usize) -> Schedule {
        let factor = factor.max(1);
        let mut out = Vec::with_capacity(self.samples.len() * factor);
        for w in self.samples.windows(2) {
            for j in 0..factor {
                let mut s = w[0];
                s.t = w[0].t + (w[1].t - w[0].t) * j as f64 / factor as f64;
                out.push(s);
            }
        }
        out.push(self.samples[self.samples.len() - 1]);
        Schedule { samples: out }
    }
}

/// Advances `state` segment by segment, rebuilding the Hamiltonian from each
/// sample; returns the state at every sample time.
pub fn propagate_schedule(
    state: &StateVector,
    schedule: &Schedule,
    mut hamiltonian: impl FnMut(&ScheduleSample) -> Result<HermitianOperator>,
) -> Result<Vec<(f64, StateVector)>> {
    check_normalized(state)?;
    let samples = schedule.samples();
    let mut out = Vec::with_capacity(samples.len());
    let mut current = state.clone();
    out.push((samples[0].t, current.clone()));
    for w in samples.windows(2) {
        let h = hamiltonian(&w[0])?;
        same_space(h.space(), state.space())?;
        current = eigendecompose(&h)?.propagate(&current, w[1].t - w[0].t)?;
        out.push((w[1].t, current.clone()));
    }
    let norm = current.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!("norm drifted to {norm}")));
    }
    Ok(out)
}

/// Cached eigensystem of one collective spin component for repeated rotations.
#[derive(Debug, Clone)]
pub struct SpinRotator {
    axis: Axis,
    eig: EigenSystem,
}

impl SpinRotator {
    pub fn new(space: &Arc<HilbertSpace>, axis: Axis) -> Result<Self> {
        Ok(Self { axis, eig: eigendecompose(&collective_spin(space, axis))? })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    /// `exp(+i J_axis angle) state`.
    pub fn rotate(&self, state: &StateVector, angle: f64) -> Result<StateVector> {
        self.eig.propagate(state, -angle)
    }

    pub(crate) fn rotate_raw(&self, v: &DVector<Complex64>, angle: f64) -> DVector<Complex64> {
        self.eig.evolve_raw(v, -angle)
    }
}

/// `exp(+i J_axis angle) state`.
pub fn rotate_spin(state: &StateVector, axis: Axis, angle: f64) -> Result<StateVector> {
    check_normalized(state)?;
    if axis == Axis::Z {
        let space = state.space();
        let amps = DVector::from_iterator(
            space.dim(),
            space
                .basis()
                .iter()
                .zip(state.amplitudes().iter())
                .map(|(s, a)| a * Complex64::from_polar(1.0, s.jz() * angle)),
        );
        return StateVector::normalized(space.clone(), amps);
    }
    SpinRotator::new(state.space(), axis)?.rotate(state, angle)
}
