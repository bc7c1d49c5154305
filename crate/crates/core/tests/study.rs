mod common;

use std::sync::Arc;

use pnph::assembly::MaterialModel;
use pnph::broken_mesh::{build_domain_mesh, jump_trace, BrokenField, BrokenMesh, Region};
use pnph::cell_problems::compute_cell_correctors;
use pnph::config::ToolkitConfig;
use pnph::element::facet_rule;
use pnph::geometry::{build_paving, measures, Aabb, CellGeometry};
use pnph::study::{
    build_corrector, energy_error, interpolate_macro, run_convergence_study, LinearMacroField, MacroPotential,
    StudyError, CSV_HEADER,
};
use proptest::prelude::*;

fn cell(dim: usize) -> CellGeometry {
    if dim == 1 {
        CellGeometry::new(1, Aabb::new([0.25, 0.0], [0.75, 0.0]), 0.1).unwrap()
    } else {
        CellGeometry::new(2, Aabb::new([0.25, 0.25], [0.75, 0.75]), 0.1).unwrap()
    }
}

fn domain_mesh(dim: usize, eps: f64, h: f64) -> Arc<BrokenMesh> {
    let paved = build_paving(Aabb::unit(dim), eps, cell(dim), 0.2).unwrap();
    Arc::new(build_domain_mesh(&paved, h).unwrap())
}

struct Zero;

impl MacroPotential for Zero {
    fn value(&self, _x: &[f64; 2]) -> Option<f64> {
        Some(0.0)
    }
    fn gradient(&self, _x: &[f64; 2]) -> Option<[f64; 2]> {
        Some([0.0; 2])
    }
}

#[test]
fn corrector_of_zero_fields() {
    let mat = MaterialModel::new(1.0, 1.0, 2.0, 1.0).unwrap();
    let c = compute_cell_correctors(&cell(2), &mat, 0.125, 1e-10).unwrap();
    let mesh = domain_mesh(2, 0.25, 0.125);
    let zero_n: Vec<BrokenField> = c.n.iter().map(|f| BrokenField::zeros(f.mesh.clone())).collect();
    let phi0 = LinearMacroField {
        xi: [0.3, -0.7],
        offset: 0.1,
    };
    let phi1 = build_corrector(&phi0, &zero_n, 0.25, &mesh).unwrap();
    let interp = interpolate_macro(&phi0, &mesh).unwrap();
    assert_eq!(phi1.values, interp.values);
    assert!((0..mesh.facets().len()).all(|f| jump_trace(&phi1, f, 0.3).jump.abs() < 1e-15));

    let zero = build_corrector(&Zero, &c.n, 0.25, &mesh).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
}

#[test]
fn corrector_jumps_follow_the_cell_corrector() {
    let mat = MaterialModel::new(1.5, 1.0, 2.0, 1.0).unwrap();
    let xi = [0.8, -0.3];
    for dim in [1, 2] {
        let c = compute_cell_correctors(&cell(dim), &mat, 0.0625, 1e-10).unwrap();
        let eps = 0.25;
        let mesh = domain_mesh(dim, eps, 0.0625);
        let phi0 = LinearMacroField { xi, offset: 0.0 };
        let phi1 = build_corrector(&phi0, &c.n, eps, &mesh).unwrap();
        let cell_facets = c.periodic_mesh.facets();
        for (fi, f) in mesh.facets().iter().enumerate() {
            let local = cell_facets
                .iter()
                .position(|cf| {
                    let y = |x: f64| (x / eps).rem_euclid(1.0);
                    (0..dim).all(|a| {
                        (y(f.endpoints[0][a]) - cf.endpoints[0][a]).abs() < 1e-9
                            && (y(f.endpoints[1][a]) - cf.endpoints[1][a]).abs() < 1e-9
                    }) && cf.normal == f.normal
                })
                .expect("every domain facet has a cell image");
            for &(t, _) in &facet_rule(dim) {
                let expected: f64 = (0..dim).map(|i| eps * xi[i] * jump_trace(&c.n[i], local, t).jump).sum();
                let got = jump_trace(&phi1, fi, t).jump;
                assert!((got - expected).abs() < 1e-13, "dim {dim}: {got} vs {expected}");
                if dim == 1 {
                    // B ≡ 0, so [[φ¹]] = ε ξ A⁰ν/α.
                    let flux = eps * xi[0] * c.a0.a0[0][0] * f.normal[0] / mat.alpha;
                    assert!((got - flux).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn energy_error_examples() {
    let eps = 0.25;
    let mesh = domain_mesh(2, eps, 0.125);
    let f = BrokenField::interpolate(mesh.clone(), |x, _| (x[0] * 3.0).sin() + x[1]);
    assert_eq!(energy_error(&f, &f, eps).unwrap(), (0.0, 0.0));

    let shifted = BrokenField::new(mesh.clone(), f.values.iter().map(|v| v + 2.5).collect());
    let (g, j) = energy_error(&f, &shifted, eps).unwrap();
    assert!(g < 1e-24 && j < 1e-24);

    let indicator = BrokenField::new(
        mesh.clone(),
        f.values
            .iter()
            .zip(mesh.dof_region())
            .map(|(v, r)| v + if *r == Region::Pore { 1.0 } else { 0.0 })
            .collect(),
    );
    let (g, j) = energy_error(&indicator, &f, eps).unwrap();
    let paved = build_paving(Aabb::unit(2), eps, cell(2), 0.2).unwrap();
    let surface = paved.retained.len() as f64 * eps * measures(&cell(2)).surf_omega;
    assert!(g < 1e-20);
    assert!((j - surface / eps).abs() < 1e-12 * surface / eps);

    let other = BrokenField::zeros(domain_mesh(2, eps, 0.0625));
    assert!(matches!(energy_error(&f, &other, eps), Err(StudyError::MeshMismatch)));
}

#[test]
fn corrector_vanishes_as_interface_resistance_vanishes() {
    let eps = 0.25;
    let mesh = domain_mesh(2, eps, 0.125);
    let phi0 = LinearMacroField {
        xi: [1.0, 0.5],
        offset: 0.0,
    };
    let interp = interpolate_macro(&phi0, &mesh).unwrap();
    let mut previous = f64::INFINITY;
    for alpha in [1.0, 10.0, 100.0, 1000.0] {
        let mat = MaterialModel::new(1.0, 1.0, alpha, 1.0).unwrap();
        let c = compute_cell_correctors(&cell(2), &mat, 0.125, 1e-10).unwrap();
        let phi1 = build_corrector(&phi0, &c.n, eps, &mesh).unwrap();
        let diff: Vec<f64> = phi1.values.iter().zip(&interp.values).map(|(a, b)| a - b).collect();
        let norm = (pnph::assembly::grad_norm_sq(&mesh, &diff)
            + pnph::assembly::l2_norm_sq(&mesh, &diff, pnph::assembly::MassRegion::All))
        .sqrt();
        assert!(norm < previous, "alpha {alpha}: {norm} !< {previous}");
        previous = norm;
    }
    assert!(previous < 1e-2);
}

#[test]
fn zero_data_sweep_is_degenerate() {
    let mut cfg = ToolkitConfig::default();
    cfg.material.g = 0.0;
    cfg.study.h_cell = 0.125;
    cfg.study.macro_h = 1.0 / 32.0;
    let report = run_convergence_study(&cfg, 1).unwrap();
    assert!(report.is_complete());
    assert!(report.rows.iter().all(|r| r.energy_err == 0.0));
    assert!(report.fitted_rate.is_nan());
    let json = report.to_json();
    assert!(json["fitted_rate"].is_null());
}

#[test]
fn report_rows_satisfy_invariants() {
    let mut cfg = ToolkitConfig::default();
    cfg.study.h_cell = 0.125;
    cfg.study.macro_h = 1.0 / 64.0;
    let report = run_convergence_study(&cfg, 2).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.windows(2).all(|w| w[1].epsilon < w[0].epsilon));
    for r in &report.rows {
        let sum = r.grad_err_sq + r.jump_err_sq_over_eps;
        assert!((r.energy_err * r.energy_err - sum).abs() <= 2.0 * f64::EPSILON * sum);
        assert!(r.wall_s.is_none());
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first.len(), 9);
    assert_eq!(first[3].parse::<f64>().unwrap(), report.rows[0].energy_err);
    assert_eq!(first[8], "");
    assert_eq!(report.config_hash.len(), 64);
}

#[test]
fn halving_mesh_sizes_changes_errors_by_less_than_ten_percent() {
    let base = ToolkitConfig::default();
    let mut fine = base.clone();
    fine.study.h_cell /= 2.0;
    fine.study.macro_h /= 2.0;
    let a = run_convergence_study(&base, 4).unwrap();
    let b = run_convergence_study(&fine, 4).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let change = (ra.energy_err - rb.energy_err).abs() / rb.energy_err;
        assert!(change <= 0.1, "epsilon {}: change {change}", ra.epsilon);
    }
}

proptest! {
    #![proptest_config(common::proptest_config(16))]

    #[test]
    fn energy_error_is_nonnegative_and_symmetric(seed in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let mesh = domain_mesh(1, 0.25, 0.125);
        let f = |s: usize| BrokenField::interpolate(mesh.clone(), |x, r| {
            seed[s] * x[0] + seed[s + 1] * (7.0 * x[0]).sin() + if r == Region::Pore { seed[s + 2] } else { seed[s + 3] }
        });
        let (a, b) = (f(0), f(4));
        let (g1, j1) = energy_error(&a, &b, 0.25).unwrap();
        let (g2, j2) = energy_error(&b, &a, 0.25).unwrap();
        prop_assert!(g1 >= 0.0 && j1 >= 0.0);
        prop_assert!((g1 - g2).abs() <= 1e-14 * g1.max(1.0) && (j1 - j2).abs() <= 1e-14 * j1.max(1.0));
    }
}
