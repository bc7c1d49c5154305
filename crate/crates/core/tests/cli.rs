mod common;

use std::path::Path;

use pnph::cli::{dispatch, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER};
use pnph::config::{parse_config, parse_config_str, ConfigError, ToolkitConfig};
use pnph::pb_solver::NonlinearMode;
use proptest::prelude::*;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("pnph").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("c.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const FAST: &str = "[study]\nh_cell = 0.125\nmacro_h = 0.03125\n";

#[test]
fn compute_a0_writes_certified_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FAST);
    let out = dir.path().join("a0.json");
    assert_eq!(run(&["compute-a0", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["dim"], 2);
    assert_eq!(v["A0"].as_array().unwrap().len(), 4);
    let cert = &v["certification"];
    assert!(cert["formula_agreement"].as_f64().unwrap() < 1e-8);
    assert!(cert["min_eigenvalue"].as_f64().unwrap() > 0.0);
    assert!(cert["mean_B"].as_f64().unwrap().abs() < 1e-8);
    assert!(cert["interface_residual"].is_number());
    assert_eq!(v["material"]["alpha"], 2.0);
}

#[test]
fn solution_dumps_have_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FAST);
    let out = dir.path().join("micro");
    assert_eq!(
        run(&["solve-micro", "--config", &cfg, "--out", out.to_str().unwrap(), "--epsilon", "0.25"]),
        EXIT_OK
    );
    let potential = std::fs::read_to_string(out.join("potential.csv")).unwrap();
    assert_eq!(potential.lines().next().unwrap(), "dof_id,x,y,value,region");
    let conc = std::fs::read_to_string(out.join("concentrations.csv")).unwrap();
    assert_eq!(conc.lines().next().unwrap(), "dof_id,x,y,c0,c1,region");
    assert!(conc.lines().skip(1).any(|l| l.ends_with(",solid")));

    let mac = dir.path().join("macro");
    assert_eq!(run(&["solve-macro", "--config", &cfg, "--out", mac.to_str().unwrap()]), EXIT_OK);
    assert!(mac.join("potential.csv").exists());

    let cell = dir.path().join("cell");
    assert_eq!(run(&["solve-cell", "--config", &cfg, "--out", cell.to_str().unwrap()]), EXIT_OK);
    for f in ["cell_L.csv", "cell_N1.csv", "cell_N2.csv", "cell.json"] {
        assert!(cell.join(f).exists(), "{f}");
    }
}

#[test]
fn converge_and_verify_lemmas_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FAST);
    let out = dir.path().join("report");
    assert_eq!(run(&["converge", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "epsilon,grad_err_sq,jump_err_sq_over_eps,energy_err,micro_dofs,macro_dofs,newton_micro,newton_macro,wall_s"
    );
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(json["fitted_rate"].as_f64().unwrap() > 0.4);
    assert_eq!(json["config"]["material"]["alpha"], 2.0);
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);

    let lem = dir.path().join("lemmas");
    assert_eq!(run(&["verify-lemmas", "--config", &cfg, "--out", lem.to_str().unwrap()]), EXIT_OK);
    let table = std::fs::read_to_string(lem.join("lemmas.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), FAST);
    assert_eq!(run(&["bogus", "--config", &good]), EXIT_CONFIG);
    assert_eq!(run(&["compute-a0"]), EXIT_CONFIG);
    assert_eq!(run(&["compute-a0", "--config", "/nonexistent/c.cfg"]), EXIT_CONFIG);
    assert_eq!(run(&["--help"]), EXIT_OK);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[ions]\ncharges = [1, −1, 0.5]\n").unwrap();
    assert_eq!(run(&["compute-a0", "--config", bad.to_str().unwrap()]), EXIT_CONFIG);

    // One Newton step cannot reach the tolerance: a solver error, and no output files.
    let failing = dir.path().join("newton.cfg");
    std::fs::write(&failing, format!("{FAST}[solver]\nmax_iter = 1\n[material]\ng = 20\n")).unwrap();
    let out = dir.path().join("micro");
    assert_eq!(
        run(&["solve-micro", "--config", failing.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_SOLVER
    );
    assert!(!out.join("potential.csv").exists());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = "# test config\n[geometry]\ndim = 1\ninclusion_lower = [0.25]\ninclusion_upper = [0.75]\n\
                domain_lower = [0]\ndomain_upper = [2]\n[material]\nsigma_solid = 2\nalpha = 4\n\
                [ions]\ncharges = [2, −1, −1]\nkT = 0.5\n[solver]\nmode = linearized\n\
                [study]\nepsilons = [0.5, 0.25]\nh_cell = 0.125\nmacro_h = 0.0625\nrecord_wall_time = true\n";
    let path = write_config(dir.path(), text);
    let cfg = parse_config(Path::new(&path)).unwrap();
    assert_eq!(cfg.ions.charges, vec![2.0, -1.0, -1.0]);
    assert_eq!(cfg.solver.mode, NonlinearMode::Linearized);
    assert_eq!(cfg.geometry.domain_upper, vec![2.0]);
    let again = parse_config_str(&cfg.to_ini_string()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn non_conforming_epsilon_is_a_validation_error() {
    let err = parse_config_str("[study]\nepsilons = [0.3]\n").unwrap_err();
    assert!(err
        .0
        .iter()
        .any(|e| matches!(e, ConfigError::Validation { field, line: Some(2), .. } if field == "study.epsilons")));
}

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn config_round_trip_is_identity(
        sigma_solid in 0.1f64..10.0,
        sigma_pore in 0.1f64..10.0,
        alpha in 0.01f64..100.0,
        g in -5.0f64..5.0,
        kt in 0.05f64..5.0,
        z in 1.0f64..3.0,
        abs_tol in 1e-14f64..1e-6,
        max_iter in 1usize..200,
        k in 1u32..4,
    ) {
        let mut cfg = ToolkitConfig::default();
        cfg.material.sigma_solid = sigma_solid;
        cfg.material.sigma_pore = sigma_pore;
        cfg.material.alpha = alpha;
        cfg.material.g = g;
        cfg.ions.kt = kt;
        cfg.ions.charges = vec![z, -z];
        cfg.solver.abs_tol = abs_tol;
        cfg.solver.max_iter = max_iter;
        cfg.study.epsilons = (0..k).map(|i| 0.5f64.powi(i as i32 + 1)).collect();
        let text = cfg.to_ini_string();
        let back = parse_config_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_ini_string(), text);
    }
}
