//! Observables: squeezing, population statistics, parity, Rydberg weight and
//! the spin Q-function.
//!
//! The Q-function is the plain squared overlap with spin coherent states, so
//! its values lie in `[0, 1]`; no sphere-measure factor is included.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::check_normalized;
use crate::hilbert::{ln_binomial, StateVector};

/// Default polar resolution of [`q_function`] grids (1 degree).
pub const DEFAULT_POLAR_SAMPLES: usize = 181;
/// Default azimuthal resolution of [`q_function`] grids (1 degree).
pub const DEFAULT_AZIMUTH_SAMPLES: usize = 361;

/// `(<Jz>, Var(Jz))`.
pub fn jz_moments(state: &StateVector) -> (f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (s, a) in state.space().basis().iter().zip(state.amplitudes().iter()) {
        let p = a.norm_sqr();
        mean += p * s.jz();
        second += p * s.jz() * s.jz();
    }
    (mean, (second - mean * mean).max(0.0))
}

/// `Var(Jz) / N`.
pub fn squeezing_parameter(state: &StateVector) -> Result<f64> {
    check_normalized(state)?;
    Ok(jz_moments(state).1 / state.space().atoms() as f64)
}

/// `Delta Jz`, the standard deviation of `Jz`.
pub fn jz_spread(state: &StateVector) -> Result<f64> {
    check_normalized(state)?;
    Ok(jz_moments(state).1.sqrt())
}

/// Squeezing in decibels relative to the coherent-state spread `sqrt(N)/2`.
pub fn squeezing_db(delta_jz: f64, atoms: usize) -> f64 {
    20.0 * ((atoms as f64).sqrt() / 2.0 / delta_jz).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// Only states without Rydberg excitation, renormalized.
    GroundOnly,
    /// Every basis state.
    All,
}

/// Distribution of the number of atoms in level `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `(n_a, probability)` in ascending `n_a`.
    pub bins: Vec<(usize, f64)>,
    /// Probability the selected block carried before renormalization.
    pub block_weight: f64,
}

impl Histogram {
    pub fn probability(&self, n_a: usize) -> f64 {
        self.bins.iter().find(|b| b.0 == n_a).map_or(0.0, |b| b.1)
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// Bins that exceed both neighbours, ignoring values below `floor`.
    pub fn local_maxima(&self, floor: f64) -> Vec<usize> {
        let p: Vec<f64> = self.bins.iter().map(|b| b.1).collect();
        (0..p.len())
            .filter(|&i| {
                let left = if i == 0 { f64::NEG_INFINITY } else { p[i - 1] };
                let right = if i + 1 == p.len() { f64::NEG_INFINITY } else { p[i + 1] };
                p[i] > floor && p[i] > left && p[i] >= right
            })
            .map(|i| self.bins[i].0)
            .collect()
    }
}

pub fn population_histogram(state: &StateVector, block: Block) -> Result<Histogram> {
    check_normalized(state)?;
    let n = state.space().atoms();
    let mut probs = vec![0.0; n + 1];
    for (s, a) in state.space().basis().iter().zip(state.amplitudes().iter()) {
        if block == Block::All || s.is_ground() {
            probs[s.n_a] += a.norm_sqr();
        }
    }
    let weight: f64 = probs.iter().sum();
    if weight < 1e-12 {
        return Err(Error::Domain("selected block carries no probability".into()));
    }
    Ok(Histogram { bins: probs.into_iter().enumerate().map(|(k, p)| (k, p / weight)).collect(), block_weight: weight })
}

/// Offset `n_a - floor(N/2)` used for parity classification.
pub fn delta_n(n_a: usize, atoms: usize) -> i64 {
    n_a as i64 - (atoms / 2) as i64
}

/// `(P(even offset), P(odd offset))` on the renormalized ground block.
pub fn parity_weights(state: &StateVector) -> Result<(f64, f64)> {
    let hist = population_histogram(state, Block::GroundOnly)?;
    let n = state.space().atoms();
    let mut even = 0.0;
    let mut odd = 0.0;
    for &(n_a, p) in &hist.bins {
        if delta_n(n_a, n).rem_euclid(2) == 0 {
            even += p;
        } else {
            odd += p;
        }
    }
    Ok((even, odd))
}

/// Probability of at least one Rydberg excitation.
pub fn rydberg_population(state: &StateVector) -> Result<f64> {
    check_normalized(state)?;
    Ok(state.weight_where(|s| !s.is_ground()))
}

/// Expected number of Rydberg excitations `<n_r1 + n_r2>`.
pub fn rydberg_excitation_number(state: &StateVector) -> Result<f64> {
    check_normalized(state)?;
    Ok(state
        .space()
        .basis()
        .iter()
        .zip(state.amplitudes().iter())
        .map(|(s, a)| s.rydberg_count() as f64 * a.norm_sqr())
        .sum())
}

/// Spin Q-function sampled on a uniform `(polar, azimuth)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    pub polar_samples: usize,
    pub azimuth_samples: usize,
    /// Row `i` is polar angle `pi i / (polar_samples - 1)`, column `j` azimuth
    /// `2 pi j / azimuth_samples`.
    pub values: DMatrix<f64>,
    /// Ground-block probability of the state before renormalization.
    pub ground_weight: f64,
}

impl QGrid {
    pub fn polar(&self, i: usize) -> f64 {
        PI * i as f64 / (self.polar_samples - 1) as f64
    }

    pub fn azimuth(&self, j: usize) -> f64 {
        TAU * j as f64 / self.azimuth_samples as f64
    }

    /// `(row, column, value)` of the global maximum; the first one wins ties.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..self.polar_samples {
            for j in 0..self.azimuth_samples {
                if self.values[(i, j)] > best.2 {
                    best = (i, j, self.values[(i, j)]);
                }
            }
        }
        best
    }
}

/// `Q(polar, azimuth) = |<SCS(polar, azimuth)|psi_ground>|^2` with
/// `psi_ground` the renormalized ground-block restriction of `state`.
pub fn q_function(state: &StateVector, polar_samples: usize, azimuth_samples: usize) -> Result<QGrid> {
    check_normalized(state)?;
    if polar_samples < 2 || azimuth_samples < 2 {
        return Err(Error::Domain("Q-function grids need at least two samples per axis".into()));
    }
    let (ground, weight) = state.ground_projection()?;
    let space = state.space();
    let n = space.atoms();
    let amps: Vec<Complex64> = (0..=n).map(|n_a| ground.amplitudes()[space.ground_index(n_a)]).collect();
    let sqrt_binom: Vec<f64> = (0..=n).map(|n_a| (0.5 * ln_binomial(n, n_a)).exp()).collect();
    let mut values = DMatrix::zeros(polar_samples, azimuth_samples);
    let mut weights = vec![0.0; n + 1];
    let mut grid = QGrid { polar_samples, azimuth_samples, values: DMatrix::zeros(0, 0), ground_weight: weight };
    for i in 0..polar_samples {
        let theta = grid.polar(i);
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        for (n_a, w) in weights.iter_mut().enumerate() {
            *w = sqrt_binom[n_a] * c.powi(n_a as i32) * s.powi((n - n_a) as i32);
        }
        for j in 0..azimuth_samples {
            let phase = Complex64::from_polar(1.0, -grid.azimuth(j));
            // Horner evaluation in powers of the conjugate phase per b atom
            let mut acc = Complex64::new(0.0, 0.0);
            for n_a in 0..=n {
                acc = acc * phase + amps[n_a] * weights[n_a];
            }
            values[(i, j)] = acc.norm_sqr().clamp(0.0, 1.0);
        }
    }
    grid.values = values;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::rotate_spin;
    use crate::hilbert::{build_space, spin_coherent_state, BasisState};
    use crate::operators::Axis;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn coherent_state_squeezing_is_one_quarter() {
        for n in [1, 4, 15, 64] {
            let space = build_space(n).unwrap();
            let psi = spin_coherent_state(&space, FRAC_PI_2, 0.0);
            assert_abs_diff_eq!(squeezing_parameter(&psi).unwrap(), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn dicke_state_is_unsqueezable() {
        let space = build_space(10).unwrap();
        let psi = StateVector::basis(space, &BasisState::ground(5, 5)).unwrap();
        assert_eq!(squeezing_parameter(&psi).unwrap(), 0.0);
        assert_eq!(parity_weights(&psi).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn odd_n_floor() {
        let n = 15;
        let space = build_space(n).unwrap();
        let mut v = DVector::zeros(space.dim());
        v[space.ground_index(8)] = Complex64::new(1.0, 0.0);
        v[space.ground_index(7)] = Complex64::new(1.0, 0.0);
        let psi = StateVector::normalized(space, v).unwrap();
        assert_abs_diff_eq!(squeezing_parameter(&psi).unwrap(), 0.25 / n as f64, epsilon = 1e-14);
    }

    #[test]
    fn db_of_the_headline_value() {
        assert_abs_diff_eq!(squeezing_db(4.0, 64), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(squeezing_db(1.08, 64), 20.0 * (4.0f64 / 1.08).log10(), epsilon = 1e-14);
        assert!(squeezing_db(1.08, 64) > 11.0);
    }

    #[test]
    fn binomial_histogram() {
        let space = build_space(2).unwrap();
        let psi = spin_coherent_state(&space, FRAC_PI_2, 0.0);
        let h = population_histogram(&psi, Block::GroundOnly).unwrap();
        assert_abs_diff_eq!(h.probability(2), 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(h.probability(1), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(h.probability(0), 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(h.block_weight, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_ground_block_is_an_error() {
        let space = build_space(3).unwrap();
        let psi = StateVector::basis(space, &BasisState::new(1, 1, 1, 0)).unwrap();
        assert!(matches!(population_histogram(&psi, Block::GroundOnly), Err(Error::Domain(_))));
        assert!(q_function(&psi, 5, 5).is_err());
        assert_eq!(rydberg_population(&psi).unwrap(), 1.0);
        assert!(population_histogram(&psi, Block::All).is_ok());
    }

    #[test]
    fn ground_states_have_no_rydberg_weight() {
        let space = build_space(6).unwrap();
        let psi = spin_coherent_state(&space, 0.4, 1.0);
        assert_eq!(rydberg_population(&psi).unwrap(), 0.0);
        assert_eq!(rydberg_excitation_number(&psi).unwrap(), 0.0);
    }

    #[test]
    fn q_function_peaks_on_itself() {
        let space = build_space(12).unwrap();
        let psi = spin_coherent_state(&space, FRAC_PI_2, 0.0);
        let q = q_function(&psi, DEFAULT_POLAR_SAMPLES, DEFAULT_AZIMUTH_SAMPLES).unwrap();
        let (i, j, v) = q.argmax();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.polar(i), FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(j, 0);
        assert!(q.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn q_function_matches_direct_overlap() {
        let space = build_space(5).unwrap();
        let psi = spin_coherent_state(&space, 1.0, 0.5);
        let q = q_function(&psi, 7, 9).unwrap();
        for i in 0..7 {
            for j in 0..9 {
                let scs = spin_coherent_state(&space, q.polar(i), q.azimuth(j));
                assert_abs_diff_eq!(q.values[(i, j)], scs.fidelity(&psi).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn q_function_ignores_global_phase() {
        let space = build_space(8).unwrap();
        let psi = spin_coherent_state(&space, 0.7, 2.0);
        let a = q_function(&psi, 19, 36).unwrap();
        let b = q_function(&psi.with_global_phase(1.3), 19, 36).unwrap();
        assert!((a.values - b.values).amax() < 1e-12);
    }

    #[test]
    fn z_rotation_shifts_azimuth() {
        let space = build_space(9).unwrap();
        let psi = spin_coherent_state(&space, 1.2, 0.3);
        let steps = 72;
        let shift = 5;
        let phi = TAU * shift as f64 / steps as f64;
        let a = q_function(&psi, 13, steps).unwrap();
        let b = q_function(&rotate_spin(&psi, Axis::Z, phi).unwrap(), 13, steps).unwrap();
        // exp(+i Jz phi) turns the state by -phi about z
        for i in 0..13 {
            for j in 0..steps {
                assert_abs_diff_eq!(b.values[(i, j)], a.values[(i, (j + shift) % steps)], epsilon = 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn parity_weights_sum_to_one(n in 1usize..=40, polar in 0.0..PI, azimuth in 0.0..TAU) {
                let space = build_space(n).unwrap();
                let psi = spin_coherent_state(&space, polar, azimuth);
                let (e, o) = parity_weights(&psi).unwrap();
                prop_assert!((e + o - 1.0).abs() < 1e-9);
                let h = population_histogram(&psi, Block::All).unwrap();
                prop_assert!((h.total() - 1.0).abs() < 1e-9);
                prop_assert!(h.bins.iter().all(|b| b.1 >= 0.0));
            }

            #[test]
            fn squeezing_invariant_under_z_rotation(n in 1usize..=30, polar in 0.0..PI, phi in -PI..PI) {
                let space = build_space(n).unwrap();
                let psi = rotate_spin(&spin_coherent_state(&space, polar, 0.0), Axis::X, 0.4).unwrap();
                let rotated = rotate_spin(&psi, Axis::Z, phi).unwrap();
                prop_assert!((squeezing_parameter(&psi).unwrap() - squeezing_parameter(&rotated).unwrap()).abs() < 1e-10);
            }
        }
    }
}
