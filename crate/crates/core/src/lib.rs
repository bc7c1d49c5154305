//! Periodic homogenization of the Poisson–Boltzmann equation in perforated
//! domains with imperfect interface conditions.

pub mod broken_mesh;
pub mod element;
pub mod geometry;
pub mod assembly;
pub mod solver;
pub mod cell_problems;
pub mod pb_solver;
pub mod config;
pub mod study;
pub mod cli;
