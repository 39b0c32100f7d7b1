//! Simulation of collective spin squeezing and cat-state generation in a
//! Rydberg-blockaded atomic ensemble.
//!
//! The ensemble is described in the symmetric, blockade-restricted space of
//! [`hilbert`]; Hamiltonians come from [`operators`] and are evolved exactly in
//! [`evolve`]. [`adiabatic`] and [`protocols`] implement the squeezing and cat
//! procedures, [`analysis`] the observables, and [`cli`] the command-line tool.

pub mod error;
pub mod adiabatic;
pub mod analysis;
pub mod cli;
pub mod evolve;
pub mod hilbert;
pub mod io;
pub mod operators;
pub mod protocols;

pub use error::{Error, Result};
