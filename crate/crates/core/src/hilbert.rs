//! Blockade-restricted symmetric Hilbert space of an `N`-atom ensemble.
//!
//! Each basis state `|n_a, n_b, n_r1, n_r2>` counts atoms in the two ground
//! levels and the two Rydberg levels. The blockade allows at most one atom
//! per Rydberg level, so the space has exactly `4N` states.
//!
//! Ordering is fixed once: four Rydberg blocks `(n_r1, n_r2)` in the order
//! `(0,0), (1,0), (0,1), (1,1)`, and inside each block `n_a` descends from
//! its maximum to zero. The ground block therefore occupies the first `N+1`
//! positions, starting with `|N,0,0,0>`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest atom number accepted by [`build_space`]; dense matrices beyond
/// this are impractical.
pub const MAX_ATOMS: usize = 256;

/// Normalization tolerance enforced on every [`StateVector`].
pub const NORM_TOL: f64 = 1e-10;

/// Occupation numbers labeling one symmetric basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisState {
    pub n_a: usize,
    pub n_b: usize,
    pub n_r1: usize,
    pub n_r2: usize,
}

impl BasisState {
    pub const fn new(n_a: usize, n_b: usize, n_r1: usize, n_r2: usize) -> Self {
        Self { n_a, n_b, n_r1, n_r2 }
    }

    /// Ground-block state `|n_a, n_b, 0, 0>`.
    pub const fn ground(n_a: usize, n_b: usize) -> Self {
        Self::new(n_a, n_b, 0, 0)
    }

    pub fn total(&self) -> usize {
        self.n_a + self.n_b + self.n_r1 + self.n_r2
    }

    pub fn rydberg_count(&self) -> usize {
        self.n_r1 + self.n_r2
    }

    pub fn is_ground(&self) -> bool {
        self.n_r1 == 0 && self.n_r2 == 0
    }

    /// `(n_a - n_b) / 2`, the collective `Jz` eigenvalue.
    pub fn jz(&self) -> f64 {
        (self.n_a as f64 - self.n_b as f64) / 2.0
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{},{},{}>", self.n_a, self.n_b, self.n_r1, self.n_r2)
    }
}

/// Enumerated basis for a fixed atom number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    atoms: usize,
    basis: Vec<BasisState>,
}

/// Rydberg blocks in storage order.
const BLOCKS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Builds the `4N`-dimensional space for `atoms` atoms.
pub fn build_space(atoms: usize) -> Result<Arc<HilbertSpace>> {
    HilbertSpace::new(atoms).map(Arc::new)
}

impl HilbertSpace {
    pub fn new(atoms: usize) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::InvalidEnsemble("atom number must be at least 1".into()));
        }
        if atoms > MAX_ATOMS {
            return Err(Error::InvalidEnsemble(format!(
                "atom number {atoms} exceeds the supported maximum {MAX_ATOMS}"
            )));
        }
        let mut basis = Vec::with_capacity(4 * atoms);
        for (n_r1, n_r2) in BLOCKS {
            let Some(ground) = atoms.checked_sub(n_r1 + n_r2) else { continue };
            for n_a in (0..=ground).rev() {
                basis.push(BasisState::new(n_a, ground - n_a, n_r1, n_r2));
            }
        }
        debug_assert_eq!(basis.len(), 4 * atoms);
        Ok(Self { atoms, basis })
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[BasisState] {
        &self.basis
    }

    pub fn state(&self, index: usize) -> BasisState {
        self.basis[index]
    }

    fn block_offset(&self, n_r1: usize, n_r2: usize) -> usize {
        let n = self.atoms;
        match (n_r1, n_r2) {
            (0, 0) => 0,
            (1, 0) => n + 1,
            (0, 1) => 2 * n + 1,
            _ => 3 * n + 1,
        }
    }

    /// Position of `state` in the basis, or a domain error when the tuple is
    /// not a member of this space.
    pub fn index_of(&self, state: &BasisState) -> Result<usize> {
        if state.n_r1 > 1 || state.n_r2 > 1 {
            return Err(Error::Domain(format!("{state} violates the Rydberg blockade")));
        }
        if state.total() != self.atoms {
            return Err(Error::Domain(format!(
                "{state} holds {} atoms, space has N={}",
                state.total(),
                self.atoms
            )));
        }
        let ground = self.atoms - state.rydberg_count();
        Ok(self.block_offset(state.n_r1, state.n_r2) + (ground - state.n_a))
    }

    /// Ground-block position of `|n_a, N - n_a, 0, 0>`.
    pub fn ground_index(&self, n_a: usize) -> usize {
        debug_assert!(n_a <= self.atoms);
        self.atoms - n_a
    }

    /// Index of `|n_a, n_b, n_r1, n_r2>` if the tuple belongs to the space.
    pub fn find(&self, n_a: i64, n_b: i64, n_r1: usize, n_r2: usize) -> Option<usize> {
        if n_a < 0 || n_b < 0 {
            return None;
        }
        self.index_of(&BasisState::new(n_a as usize, n_b as usize, n_r1, n_r2)).ok()
    }

    pub fn ground_block_len(&self) -> usize {
        self.atoms + 1
    }
}

/// Free-function form of [`HilbertSpace::index_of`].
pub fn basis_index(space: &HilbertSpace, state: &BasisState) -> Result<usize> {
    space.index_of(state)
}

/// Normalized pure state over a [`HilbertSpace`].
#[derive(Debug, Clone)]
pub struct StateVector {
    space: Arc<HilbertSpace>,
    amplitudes: DVector<Complex64>,
}

impl StateVector {
    /// Wraps `amplitudes`, rejecting vectors whose norm deviates from one.
    pub fn from_amplitudes(space: Arc<HilbertSpace>, amplitudes: DVector<Complex64>) -> Result<Self> {
        check_len(&space, amplitudes.len())?;
        let norm = amplitudes.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { space, amplitudes })
    }

    /// Wraps `amplitudes` after rescaling to unit norm.
    pub fn normalized(space: Arc<HilbertSpace>, mut amplitudes: DVector<Complex64>) -> Result<Self> {
        check_len(&space, amplitudes.len())?;
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::Numerical(format!("cannot normalize a vector of norm {norm}")));
        }
        amplitudes.unscale_mut(norm);
        Ok(Self { space, amplitudes })
    }

    /// The basis state `state` itself.
    pub fn basis(space: Arc<HilbertSpace>, state: &BasisState) -> Result<Self> {
        let idx = space.index_of(state)?;
        let mut amplitudes = DVector::zeros(space.dim());
        amplitudes[idx] = Complex64::new(1.0, 0.0);
        Ok(Self { space, amplitudes })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<Complex64> {
        self.amplitudes
    }

    pub fn amplitude(&self, state: &BasisState) -> Result<Complex64> {
        Ok(self.amplitudes[self.space.index_of(state)?])
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        same_space(&self.space, &other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Multiplies every amplitude by `e^{i phase}`.
    pub fn with_global_phase(&self, phase: f64) -> StateVector {
        let factor = Complex64::from_polar(1.0, phase);
        StateVector { space: self.space.clone(), amplitudes: self.amplitudes.map(|a| a * factor) }
    }

    /// Probability carried by basis states matching `pred`.
    pub fn weight_where(&self, pred: impl Fn(&BasisState) -> bool) -> f64 {
        self.space
            .basis()
            .iter()
            .zip(self.amplitudes.iter())
            .filter(|(s, _)| pred(s))
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Renormalized restriction to the ground block, with the probability the
    /// block carried before renormalization.
    pub fn ground_projection(&self) -> Result<(StateVector, f64)> {
        let mut amps = self.amplitudes.clone();
        for (i, s) in self.space.basis().iter().enumerate() {
            if !s.is_ground() {
                amps[i] = Complex64::new(0.0, 0.0);
            }
        }
        let weight = amps.norm_squared();
        if weight < 1e-12 {
            return Err(Error::Domain("state has no weight on the ground block".into()));
        }
        Ok((StateVector::normalized(self.space.clone(), amps)?, weight))
    }
}

pub(crate) fn check_len(space: &HilbertSpace, len: usize) -> Result<()> {
    if len != space.dim() {
        return Err(Error::Domain(format!(
            "vector length {len} does not match space dimension {}",
            space.dim()
        )));
    }
    Ok(())
}

pub(crate) fn same_space(left: &HilbertSpace, right: &HilbertSpace) -> Result<()> {
    if left.atoms() != right.atoms() {
        return Err(Error::SpaceMismatch { left: left.atoms(), right: right.atoms() });
    }
    Ok(())
}

/// `ln C(n, k)`.
pub(crate) fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Spin coherent state pointing along polar angle `polar` and azimuth
/// `azimuth`, with every atom in `cos(polar/2)|a> + e^{i azimuth} sin(polar/2)|b>`.
///
/// `polar = 0` is the `|N,0,0,0>` pole and `(pi/2, 0)` the maximal-`Jx` state.
pub fn spin_coherent_state(space: &Arc<HilbertSpace>, polar: f64, azimuth: f64) -> StateVector {
    let n = space.atoms();
    let c = (polar / 2.0).cos();
    let s = (polar / 2.0).sin();
    let phase = Complex64::from_polar(1.0, azimuth);
    let mut amps = DVector::zeros(space.dim());
    for n_a in 0..=n {
        let n_b = n - n_a;
        let magnitude = (0.5 * ln_binomial(n, n_a)).exp() * c.powi(n_a as i32) * s.powi(n_b as i32);
        amps[space.ground_index(n_a)] = phase.powi(n_b as i32) * magnitude;
    }
    // the magnitudes are exact up to rounding; renormalize to hold NORM_TOL
    let norm = amps.norm();
    amps.unscale_mut(norm);
    StateVector { space: space.clone(), amplitudes: amps }
}
