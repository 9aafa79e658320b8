//! Numerical laboratory for plane-like minimizers of a fractional
//! Allen-Cahn energy with mesoscopic forcing in a periodic medium.
//!
//! The crate discretizes the nonlocal phase-transition energy on quotient
//! lattices of prescribed integer direction, computes constrained, minimal
//! and unconstrained minimizers, and turns the structural properties of such
//! minimizers (submodular combination, translation ordering, period doubling,
//! uniform interface width, energy growth in balls) into executable checks.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod energy;
pub mod lattice;
pub mod layered;
pub mod model;
pub mod persistence;
pub mod solver;
