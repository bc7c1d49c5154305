mod common;

use std::sync::Arc;

use nalgebra::DVector;
use pnph::assembly::{
    assemble_interface_penalty, assemble_mass, assemble_minus_boundary_source, assemble_stiffness, MassRegion,
    MaterialModel,
};
use pnph::broken_mesh::{build_domain_mesh, BrokenMesh};
use pnph::geometry::{build_paving, Aabb, CellGeometry};
use pnph::pb_solver::{
    recover_concentrations, solve_micro_pb, IonSystem, NewtonConfig, NonlinearMode, PbProblem,
};
use proptest::prelude::*;

use common::*;

fn cell(dim: usize) -> CellGeometry {
    if dim == 1 {
        CellGeometry::new(1, Aabb::new([0.25, 0.0], [0.75, 0.0]), 0.1).unwrap()
    } else {
        CellGeometry::new(2, Aabb::new([0.25, 0.25], [0.75, 0.75]), 0.1).unwrap()
    }
}

fn domain_mesh(dim: usize, eps: f64, h_cell: f64) -> Arc<BrokenMesh> {
    let paved = build_paving(Aabb::unit(dim), eps, cell(dim), 0.2).unwrap();
    Arc::new(build_domain_mesh(&paved, h_cell).unwrap())
}

#[test]
fn sparse_assembly_matches_closed_form_element_matrices() {
    let mat = MaterialModel::new(2.0, 1.0, 3.0, 1.5).unwrap();
    for dim in [1, 2] {
        let mesh = domain_mesh(dim, 0.5, 0.125);
        let d = dense_micro(&mesh, &mat);
        let scale = max_abs(&d.stiffness);
        assert!(max_abs(&(sparse_to_dense(&assemble_stiffness(&mesh, &mat)) - &d.stiffness)) < 1e-12 * scale);
        assert!(max_abs(&(sparse_to_dense(&assemble_interface_penalty(&mesh, 1.0)) - &d.penalty)) < 1e-13);
        assert!(max_abs(&(sparse_to_dense(&assemble_mass(&mesh, MassRegion::Pore)) - &d.pore_mass)) < 1e-14);
        let src = DVector::from_vec(assemble_minus_boundary_source(&mesh, 1.0));
        assert!((src - &d.minus_source).amax() < 1e-14);
    }
}

#[test]
fn micro_newton_matches_dense_oracle() {
    let mesh = domain_mesh(2, 0.5, 0.25);
    assert!(mesh.dof_count() <= 200, "oracle mesh has {} DOFs", mesh.dof_count());
    let mat = MaterialModel::new(2.0, 1.0, 0.5, 3.0).unwrap();
    let ions = IonSystem::new(vec![1.0, -1.0], 0.5, 1e-12).unwrap();
    let sol = solve_micro_pb(mesh.clone(), &mat, &ions, 0.5, &NewtonConfig::default()).unwrap();
    let oracle = dense_micro_newton(&mesh, &mat, &[1.0, -1.0], 0.5, 0.5);
    let diff = (DVector::from_vec(sol.field.values.clone()) - &oracle).amax();
    assert!(oracle.amax() > 1e-2);
    assert!(diff <= 1e-9 * oracle.amax(), "difference {diff:e}");
}

#[test]
fn one_dimensional_micro_matches_dense_oracle() {
    let mesh = domain_mesh(1, 0.25, 0.125);
    let mat = MaterialModel::new(1.0, 1.0, 2.0, 1.0).unwrap();
    let ions = IonSystem::new(vec![2.0, -1.0, -1.0], 1.0, 1e-12).unwrap();
    let sol = solve_micro_pb(mesh.clone(), &mat, &ions, 0.25, &NewtonConfig::default()).unwrap();
    let oracle = dense_micro_newton(&mesh, &mat, &[2.0, -1.0, -1.0], 1.0, 0.25);
    let diff = (DVector::from_vec(sol.field.values.clone()) - &oracle).amax();
    assert!(diff <= 1e-9 * oracle.amax(), "difference {diff:e}");
}

#[test]
fn small_data_matches_linearized_oracle() {
    let mesh = domain_mesh(2, 0.25, 0.125);
    let mat = MaterialModel::new(1.0, 1.0, 2.0, 1e-3).unwrap();
    let ions = IonSystem::symmetric_pair();
    let sol = solve_micro_pb(mesh.clone(), &mat, &ions, 0.25, &NewtonConfig::default()).unwrap();
    let lin = dense_linearized(&mesh, &mat, &[1.0, -1.0], 1.0, 0.25);
    let diff = (DVector::from_vec(sol.field.values.clone()) - &lin).amax();
    assert!(diff <= 1e-6 * lin.amax(), "relative difference {:e}", diff / lin.amax());

    let cfg = NewtonConfig {
        mode: NonlinearMode::Linearized,
        ..NewtonConfig::default()
    };
    let exact = solve_micro_pb(mesh, &mat, &ions, 0.25, &cfg).unwrap();
    let diff = (DVector::from_vec(exact.field.values) - &lin).amax();
    assert!(diff <= 1e-10 * lin.amax());
}

#[test]
fn jacobian_matches_central_differences() {
    let mesh = domain_mesh(2, 0.5, 0.125);
    let mat = MaterialModel::new(2.0, 1.0, 2.0, 1.0).unwrap();
    let ions = IonSystem::new(vec![1.0, -1.0], 0.1, 1e-12).unwrap();
    let cfg = NewtonConfig::default();
    let problem = PbProblem::micro(mesh.clone(), &mat, 0.5);
    let phi: Vec<f64> = mesh.coords().iter().map(|x| 0.2 * (3.0 * x[0] + x[1]).sin()).collect();
    let dir: Vec<f64> = mesh.coords().iter().map(|x| (5.0 * x[1] - x[0]).cos()).collect();
    let jv = pnph::assembly::mat_vec(&problem.jacobian(&phi, &ions, &cfg), &dir);
    let fd_error = |h: f64| {
        let shift = |s: f64| -> Vec<f64> { phi.iter().zip(&dir).map(|(p, d)| p + s * d).collect() };
        let (rp, _) = problem.residual(&shift(h), &ions, &cfg);
        let (rm, _) = problem.residual(&shift(-h), &ions, &cfg);
        rp.iter()
            .zip(&rm)
            .zip(&jv)
            .map(|((a, b), j)| ((a - b) / (2.0 * h) - j).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (e4, e5) = (fd_error(1e-4), fd_error(1e-5));
    let observed = (e4 / e5).log10();
    assert!(observed >= 1.9, "errors {e4:e} {e5:e}, order {observed}");
}

#[test]
fn zero_data_gives_zero_in_two_iterations() {
    let mesh = domain_mesh(2, 0.25, 0.125);
    let mat = MaterialModel::new(1.0, 1.0, 2.0, 0.0).unwrap();
    let sol = solve_micro_pb(mesh, &mat, &IonSystem::symmetric_pair(), 0.25, &NewtonConfig::default()).unwrap();
    assert!(sol.iterations <= 2);
    assert!(sol.field.values.iter().all(|v| *v == 0.0));
}

#[test]
fn broken_poincare_coercivity_witness() {
    // Smallest eigenvalue of (∇,∇) + (1/ε)([[·]],[[·]]) relative to the broken H¹ Gram matrix.
    for eps in [0.5, 0.25] {
        let mesh = domain_mesh(2, eps, 0.25);
        let mat = MaterialModel::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let d = dense_micro(&mesh, &mat);
        let mass = pnph::assembly::assemble_mass(&mesh, MassRegion::All);
        let energy = restrict(&(&d.stiffness + &d.penalty / eps), &d.free);
        let gram = restrict(&(&d.stiffness + sparse_to_dense(&mass)), &d.free);
        let l = gram.cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let sym = &linv * energy * linv.transpose();
        let min = sym.symmetric_eigenvalues().min();
        assert!(min > 0.0, "K0 = {min}");
    }
}

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn boltzmann_recovery_invariants(values in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
        let mesh = domain_mesh(1, 0.5, 0.125);
        let n = mesh.dof_count();
        let vals: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
        let phi = pnph::broken_mesh::BrokenField::new(mesh.clone(), vals);
        let c = recover_concentrations(&phi, &IonSystem::symmetric_pair());
        for d in 0..n {
            prop_assert!(c[0].values[d] > 0.0 && c[1].values[d] > 0.0);
            prop_assert!((c[0].values[d] * c[1].values[d] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn space_charge_is_monotone(a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let f = boltzmann(&[1.0, -1.0, 2.0, -2.0], 0.7);
        let (fa, _) = f(a);
        let (fb, _) = f(b);
        prop_assert!((fa - fb) * (a - b) >= 0.0);
    }
}
