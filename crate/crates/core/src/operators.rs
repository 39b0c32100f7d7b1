//! Dense Hamiltonian building blocks on a [`HilbertSpace`].
//!
//! Units: the Jaynes-Cummings coupling `Omega_JC = 1` fixes the energy scale,
//! so times everywhere are measured in `1/|Omega_JC|`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{same_space, BasisState, HilbertSpace, StateVector, NORM_TOL};

/// Entrywise tolerance for the Hermiticity check.
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Config(format!("unknown axis `{other}`"))),
        }
    }
}

/// One of the two blockaded Rydberg levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RydbergLevel {
    R1,
    R2,
}

impl RydbergLevel {
    fn occupation(self, s: &BasisState) -> usize {
        match self {
            RydbergLevel::R1 => s.n_r1,
            RydbergLevel::R2 => s.n_r2,
        }
    }
}

/// Ground level whose population acts as the bosonic mode of a JC coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundMode {
    A,
    B,
}

impl GroundMode {
    fn occupation(self, s: &BasisState) -> usize {
        match self {
            GroundMode::A => s.n_a,
            GroundMode::B => s.n_b,
        }
    }
}

/// Dense Hermitian matrix over a Hilbert space.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    space: Arc<HilbertSpace>,
    matrix: DMatrix<Complex64>,
    label: String,
}

impl HermitianOperator {
    /// Wraps `matrix` after checking shape and Hermiticity.
    pub fn new(space: Arc<HilbertSpace>, matrix: DMatrix<Complex64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Domain(format!(
                "matrix is {}x{}, space dimension is {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let op = Self { space, matrix, label };
        if op.hermiticity_error() > HERMITIAN_TOL {
            return Err(Error::NotHermitian(op.label));
        }
        Ok(op)
    }

    /// Skips the Hermiticity check; callers guarantee the structure.
    pub(crate) fn from_parts(space: Arc<HilbertSpace>, matrix: DMatrix<Complex64>, label: String) -> Self {
        Self { space, matrix, label }
    }

    pub fn zeros(space: &Arc<HilbertSpace>, label: impl Into<String>) -> Self {
        let d = space.dim();
        Self::from_parts(space.clone(), DMatrix::zeros(d, d), label.into())
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest entrywise deviation `|A_ij - conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.matrix.nrows();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Frobenius norm, an upper bound on the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Largest absolute row sum, also an upper bound on the operator norm.
    pub fn row_sum_norm(&self) -> f64 {
        self.matrix.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn apply(&self, state: &StateVector) -> Result<DVector<Complex64>> {
        same_space(&self.space, state.space())?;
        Ok(&self.matrix * state.amplitudes())
    }

    pub(crate) fn apply_raw(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.matrix * v
    }

    /// `<psi|A|psi>` without normalization checks.
    pub(crate) fn expectation_raw(&self, v: &DVector<Complex64>) -> f64 {
        v.dotc(&(&self.matrix * v)).re
    }

    pub fn scaled(&self, factor: f64) -> HermitianOperator {
        Self::from_parts(self.space.clone(), &self.matrix * Complex64::new(factor, 0.0), format!("{factor}*{}", self.label))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `-i [A, B]`, which is Hermitian for Hermitian `A` and `B`.
    pub fn commutator_times_minus_i(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        same_space(&self.space, &other.space)?;
        let c = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Ok(Self::from_parts(
            self.space.clone(),
            c * Complex64::new(0.0, -1.0),
            format!("-i[{}, {}]", self.label, other.label),
        ))
    }

    /// True when no matrix element connects basis states that differ by more
    /// than `max_change` Rydberg excitations.
    pub fn respects_rydberg_ladder(&self, max_change: usize) -> bool {
        let basis = self.space.basis();
        for (i, si) in basis.iter().enumerate() {
            for (j, sj) in basis.iter().enumerate() {
                if self.matrix[(i, j)] != ZERO && si.rydberg_count().abs_diff(sj.rydberg_count()) > max_change {
                    return false;
                }
            }
        }
        true
    }
}

/// Collective spin component `J_axis` of the two ground levels.
///
/// `Jx = (a+ b + a b+)/2`, `Jy = i(a b+ - a+ b)/2`, `Jz = (a+ a - b+ b)/2`;
/// Rydberg occupations are spectators.
pub fn collective_spin(space: &Arc<HilbertSpace>, axis: Axis) -> HermitianOperator {
    let d = space.dim();
    let mut m = DMatrix::zeros(d, d);
    for (i, s) in space.basis().iter().enumerate() {
        match axis {
            Axis::Z => m[(i, i)] = Complex64::new(s.jz(), 0.0),
            Axis::X | Axis::Y => {
                if s.n_b == 0 {
                    continue;
                }
                // a+ b moves one atom from b to a
                let j = space
                    .index_of(&BasisState::new(s.n_a + 1, s.n_b - 1, s.n_r1, s.n_r2))
                    .expect("raised state is in the space");
                let v = 0.5 * (((s.n_a + 1) * s.n_b) as f64).sqrt();
                let (up, down) = match axis {
                    Axis::X => (Complex64::new(v, 0.0), Complex64::new(v, 0.0)),
                    _ => (Complex64::new(0.0, -v), Complex64::new(0.0, v)),
                };
                m[(j, i)] += up;
                m[(i, j)] += down;
            }
        }
    }
    HermitianOperator::from_parts(space.clone(), m, format!("J{axis}"))
}

/// `omega * mode * sigma_+ + conj(omega) * mode^dagger * sigma_-` for one
/// Rydberg level: excites one atom out of `mode` with amplitude
/// `omega * sqrt(n_mode)`.
pub fn jc_coupling(space: &Arc<HilbertSpace>, level: RydbergLevel, mode: GroundMode, omega: Complex64) -> HermitianOperator {
    let d = space.dim();
    let mut m = DMatrix::zeros(d, d);
    for (i, s) in space.basis().iter().enumerate() {
        let n = mode.occupation(s);
        if level.occupation(s) != 0 || n == 0 {
            continue;
        }
        let mut t = *s;
        match mode {
            GroundMode::A => t.n_a -= 1,
            GroundMode::B => t.n_b -= 1,
        }
        match level {
            RydbergLevel::R1 => t.n_r1 = 1,
            RydbergLevel::R2 => t.n_r2 = 1,
        }
        let j = space.index_of(&t).expect("excited state is in the space");
        let g = (n as f64).sqrt();
        m[(j, i)] += omega * g;
        m[(i, j)] += omega.conj() * g;
    }
    HermitianOperator::from_parts(space.clone(), m, format!("JC({level:?},{mode:?};{omega})"))
}

/// `delta * sigma_z` for one Rydberg level, with `sigma_z = +1` when the level
/// is occupied and `-1` otherwise.
pub fn detuning_operator(space: &Arc<HilbertSpace>, level: RydbergLevel, delta: f64) -> HermitianOperator {
    let d = space.dim();
    let mut m = DMatrix::zeros(d, d);
    for (i, s) in space.basis().iter().enumerate() {
        let sign = if level.occupation(s) == 1 { 1.0 } else { -1.0 };
        m[(i, i)] = Complex64::new(delta * sign, 0.0);
    }
    HermitianOperator::from_parts(space.clone(), m, format!("{delta}*sz({level:?})"))
}

/// Resonant double JC Hamiltonian `H_JC = JC(r1, a) + JC(r2, b)` with real
/// coupling `omega`.
pub fn jc_hamiltonian(space: &Arc<HilbertSpace>, omega: f64) -> HermitianOperator {
    let w = Complex64::new(omega, 0.0);
    linear_combine(&[
        (1.0, &jc_coupling(space, RydbergLevel::R1, GroundMode::A, w)),
        (1.0, &jc_coupling(space, RydbergLevel::R2, GroundMode::B, w)),
    ])
    .expect("same space")
    .with_label("H_JC")
}

/// Weighted sum of operators sharing one space.
pub fn linear_combine(terms: &[(f64, &HermitianOperator)]) -> Result<HermitianOperator> {
    let (_, first) = terms.first().ok_or_else(|| Error::Domain("linear_combine needs at least one term".into()))?;
    let space = first.space.clone();
    let d = space.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut label = String::new();
    for (k, (c, op)) in terms.iter().enumerate() {
        same_space(&space, &op.space)?;
        if !c.is_finite() {
            return Err(Error::Domain(format!("non-finite coefficient {c}")));
        }
        if *c != 0.0 {
            m.zip_apply(&op.matrix, |acc, x| *acc += x * *c);
        }
        if k > 0 {
            label.push_str(" + ");
        }
        label.push_str(&format!("{c}*{}", op.label));
    }
    Ok(HermitianOperator::from_parts(space, m, label))
}

/// `(<A>, <A^2> - <A>^2)` in `state`; the variance is clamped at zero.
pub fn expectation_and_variance(op: &HermitianOperator, state: &StateVector) -> Result<(f64, f64)> {
    same_space(op.space(), state.space())?;
    let norm = state.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    let v = state.amplitudes();
    let av = &op.matrix * v;
    let mean = v.dotc(&av);
    if mean.im.abs() > 1e-10 * (1.0 + mean.re.abs()) {
        return Err(Error::Numerical(format!("expectation of {} has imaginary part {}", op.label, mean.im)));
    }
    let second = av.norm_squared();
    let variance = second - mean.re * mean.re;
    Ok((mean.re, variance.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_space, spin_coherent_state};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    const I: Complex64 = Complex64::new(0.0, 1.0);

    fn max_entry_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn jz_single_atom() {
        let space = build_space(1).unwrap();
        let jz = collective_spin(&space, Axis::Z);
        let diag: Vec<f64> = (0..4).map(|i| jz.matrix()[(i, i)].re).collect();
        assert_eq!(diag, vec![0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn angular_momentum_algebra() {
        for n in [1, 2, 6, 13, 32] {
            let space = build_space(n).unwrap();
            let jx = collective_spin(&space, Axis::X);
            let jy = collective_spin(&space, Axis::Y);
            let jz = collective_spin(&space, Axis::Z);
            for (a, b, c) in [(&jx, &jy, &jz), (&jy, &jz, &jx), (&jz, &jx, &jy)] {
                let comm = a.matrix() * b.matrix() - b.matrix() * a.matrix();
                let expect = c.matrix() * I;
                assert!(max_entry_diff(&comm, &expect) < 1e-12, "N={n} {} {}", a.label(), b.label());
            }
        }
    }

    #[test]
    fn all_operators_hermitian() {
        let space = build_space(7).unwrap();
        let ops = [
            collective_spin(&space, Axis::X),
            collective_spin(&space, Axis::Y),
            collective_spin(&space, Axis::Z),
            jc_coupling(&space, RydbergLevel::R1, GroundMode::A, Complex64::new(0.3, -1.7)),
            jc_coupling(&space, RydbergLevel::R2, GroundMode::A, I),
            jc_coupling(&space, RydbergLevel::R1, GroundMode::B, Complex64::new(-2.0, 0.0)),
            detuning_operator(&space, RydbergLevel::R2, 3.5),
        ];
        for op in &ops {
            assert!(op.hermiticity_error() <= HERMITIAN_TOL, "{}", op.label());
        }
    }

    #[test]
    fn single_atom_jc_coupling() {
        let space = build_space(1).unwrap();
        let h = jc_coupling(&space, RydbergLevel::R1, GroundMode::A, Complex64::new(1.0, 0.0));
        let mut expect = DMatrix::zeros(4, 4);
        expect[(0, 2)] = Complex64::new(1.0, 0.0);
        expect[(2, 0)] = Complex64::new(1.0, 0.0);
        assert_eq!(h.matrix(), &expect);
    }

    /// Builds `i(m sigma_+ - m^dagger sigma_-)` directly from ladder-operator
    /// matrices assembled on a larger, unconstrained product basis.
    fn y_phase_oracle(space: &Arc<HilbertSpace>, pairs: &[(RydbergLevel, GroundMode)]) -> DMatrix<Complex64> {
        let d = space.dim();
        let mut out = DMatrix::<Complex64>::zeros(d, d);
        for (j, target) in space.basis().iter().enumerate() {
            for (i, source) in space.basis().iter().enumerate() {
                for &(level, mode) in pairs {
                    // <target| mode sigma_+ |source>
                    let lowered = |s: &BasisState| -> Option<(BasisState, f64)> {
                        let mut t = *s;
                        let n = match mode {
                            GroundMode::A => &mut t.n_a,
                            GroundMode::B => &mut t.n_b,
                        };
                        if *n == 0 {
                            return None;
                        }
                        let amp = (*n as f64).sqrt();
                        *n -= 1;
                        let r = match level {
                            RydbergLevel::R1 => &mut t.n_r1,
                            RydbergLevel::R2 => &mut t.n_r2,
                        };
                        if *r == 1 {
                            return None;
                        }
                        *r = 1;
                        Some((t, amp))
                    };
                    if let Some((t, amp)) = lowered(source) {
                        if t == *target {
                            out[(j, i)] += I * amp;
                        }
                    }
                    // -<target| mode^dagger sigma_- |source> = -conj(<source| mode sigma_+ |target>)
                    if let Some((t, amp)) = lowered(target) {
                        if t == *source {
                            out[(j, i)] -= I * amp;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn y_phase_couplings_match_direct_construction() {
        let space = build_space(4).unwrap();
        let hy = linear_combine(&[
            (1.0, &jc_coupling(&space, RydbergLevel::R1, GroundMode::A, I)),
            (1.0, &jc_coupling(&space, RydbergLevel::R2, GroundMode::B, I)),
        ])
        .unwrap();
        let oracle = y_phase_oracle(&space, &[(RydbergLevel::R1, GroundMode::A), (RydbergLevel::R2, GroundMode::B)]);
        assert!(max_entry_diff(hy.matrix(), &oracle) < 1e-14);

        let cross = linear_combine(&[
            (1.0, &jc_coupling(&space, RydbergLevel::R1, GroundMode::B, I)),
            (1.0, &jc_coupling(&space, RydbergLevel::R2, GroundMode::A, I)),
        ])
        .unwrap();
        let oracle = y_phase_oracle(&space, &[(RydbergLevel::R1, GroundMode::B), (RydbergLevel::R2, GroundMode::A)]);
        assert!(max_entry_diff(cross.matrix(), &oracle) < 1e-14);
    }

    #[test]
    fn jc_changes_one_excitation_and_its_mode() {
        let space = build_space(6).unwrap();
        for level in [RydbergLevel::R1, RydbergLevel::R2] {
            for mode in [GroundMode::A, GroundMode::B] {
                let h = jc_coupling(&space, level, mode, Complex64::new(0.7, 0.2));
                assert!(h.respects_rydberg_ladder(1));
                for (i, si) in space.basis().iter().enumerate() {
                    for (j, sj) in space.basis().iter().enumerate() {
                        if h.matrix()[(i, j)] == ZERO {
                            continue;
                        }
                        let dr = level.occupation(si) as i64 - level.occupation(sj) as i64;
                        let dm = mode.occupation(si) as i64 - mode.occupation(sj) as i64;
                        assert_eq!(dr.abs(), 1);
                        assert_eq!(dm, -dr);
                    }
                }
            }
        }
    }

    #[test]
    fn real_jc_equals_brute_force_adjoint() {
        for n in 1..=6 {
            let space = build_space(n).unwrap();
            let h = jc_coupling(&space, RydbergLevel::R2, GroundMode::A, Complex64::new(1.3, 0.0));
            let adj = h.matrix().adjoint();
            assert!(max_entry_diff(h.matrix(), &adj) == 0.0);
        }
    }

    #[test]
    fn detuning_single_atom() {
        let space = build_space(1).unwrap();
        let d = detuning_operator(&space, RydbergLevel::R1, 2.0);
        let diag: Vec<f64> = (0..4).map(|i| d.matrix()[(i, i)].re).collect();
        assert_eq!(diag, vec![-2.0, -2.0, 2.0, -2.0]);
        let zero = detuning_operator(&space, RydbergLevel::R2, 0.0);
        assert!(zero.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn detuning_trace_matches_block_count() {
        for n in 1..=20 {
            let space = build_space(n).unwrap();
            let occupied = space.basis().iter().filter(|s| s.n_r1 == 1).count() as f64;
            let empty = space.dim() as f64 - occupied;
            let delta = 0.75;
            let tr: f64 = detuning_operator(&space, RydbergLevel::R1, delta).matrix().diagonal().iter().map(|z| z.re).sum();
            assert_abs_diff_eq!(tr, delta * (occupied - empty), epsilon = 1e-12);
            // occupied blocks hold N and N-1 states, empty ones N+1 and N
            assert_abs_diff_eq!(tr, delta * (-2.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_combination_identities() {
        let space = build_space(5).unwrap();
        let jx = collective_spin(&space, Axis::X);
        let hjc = jc_hamiltonian(&space, 1.0);
        let same = linear_combine(&[(1.0, &jx), (0.0, &hjc)]).unwrap();
        assert_eq!(same.matrix(), jx.matrix());
        let zero = linear_combine(&[(1.0, &hjc), (-1.0, &hjc)]).unwrap();
        assert!(zero.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn linear_combine_rejects_mixed_spaces() {
        let a = collective_spin(&build_space(3).unwrap(), Axis::X);
        let b = collective_spin(&build_space(4).unwrap(), Axis::X);
        assert!(matches!(linear_combine(&[(1.0, &a), (1.0, &b)]), Err(Error::SpaceMismatch { .. })));
        assert!(linear_combine(&[]).is_err());
    }

    #[test]
    fn coherent_state_moments() {
        let space = build_space(64).unwrap();
        let psi = spin_coherent_state(&space, FRAC_PI_2, 0.0);
        let (mean, var) = expectation_and_variance(&collective_spin(&space, Axis::Z), &psi).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 16.0, epsilon = 1e-9);

        let space = build_space(10).unwrap();
        let psi = spin_coherent_state(&space, FRAC_PI_2, 0.0);
        let (mean, var) = expectation_and_variance(&collective_spin(&space, Axis::X), &psi).unwrap();
        assert_abs_diff_eq!(mean, 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn dicke_state_has_no_jz_spread() {
        let space = build_space(12).unwrap();
        let psi = StateVector::basis(space.clone(), &BasisState::ground(6, 6)).unwrap();
        let (mean, var) = expectation_and_variance(&collective_spin(&space, Axis::Z), &psi).unwrap();
        assert_eq!((mean, var), (0.0, 0.0));
    }

    #[test]
    fn unnormalized_state_rejected() {
        let space = build_space(2).unwrap();
        let psi = spin_coherent_state(&space, 1.0, 0.0);
        let jz = collective_spin(&space, Axis::Z);
        let other = build_space(3).unwrap();
        let foreign = spin_coherent_state(&other, 1.0, 0.0);
        assert!(matches!(expectation_and_variance(&jz, &foreign), Err(Error::SpaceMismatch { .. })));
        assert!(expectation_and_variance(&jz, &psi).is_ok());
    }
}
