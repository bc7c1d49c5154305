//! Toolkit configuration: a flat INI file with `[section]` headers,
//! `key = value` lines and `#` comments.
//!
//! Parsing never stops at the first problem. Every syntax error and every
//! violated constraint is collected and reported with its line number.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::assembly::MaterialModel;
use crate::broken_mesh::check_cell_resolution;
use crate::geometry::{build_paving, Aabb, CellGeometry};
use crate::pb_solver::{IonSystem, NewtonConfig, NonlinearMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}{field}: {constraint}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation {
        field: String,
        constraint: String,
        line: Option<usize>,
    },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// All problems found in one config file.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometrySection {
    pub dim: usize,
    pub inclusion_lower: Vec<f64>,
    pub inclusion_upper: Vec<f64>,
    pub clearance: f64,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialSection {
    pub sigma_solid: f64,
    pub sigma_pore: f64,
    pub alpha: f64,
    pub g: f64,
    pub k_lower: Option<f64>,
    pub k_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IonsSection {
    pub charges: Vec<f64>,
    pub kt: f64,
    pub neutrality_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSection {
    pub abs_tol: f64,
    pub max_iter: usize,
    pub exp_clamp: f64,
    pub max_halvings: usize,
    pub linear_tol: f64,
    pub mode: NonlinearMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySection {
    pub epsilons: Vec<f64>,
    pub h_cell: f64,
    pub macro_h: f64,
    pub output: String,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolkitConfig {
    pub geometry: GeometrySection,
    pub material: MaterialSection,
    pub ions: IonsSection,
    pub solver: SolverSection,
    pub study: StudySection,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySection {
                dim: 2,
                inclusion_lower: vec![0.25, 0.25],
                inclusion_upper: vec![0.75, 0.75],
                clearance: 0.1,
                domain_lower: vec![0.0, 0.0],
                domain_upper: vec![1.0, 1.0],
                gap: 0.2,
            },
            material: MaterialSection {
                sigma_solid: 1.0,
                sigma_pore: 1.0,
                alpha: 2.0,
                g: 1.0,
                k_lower: None,
                k_upper: None,
            },
            ions: IonsSection {
                charges: vec![1.0, -1.0],
                kt: 1.0,
                neutrality_tol: 1e-12,
            },
            solver: SolverSection {
                abs_tol: 1e-10,
                max_iter: 50,
                exp_clamp: 50.0,
                max_halvings: 20,
                linear_tol: 1e-10,
                mode: NonlinearMode::Boltzmann,
            },
            study: StudySection {
                epsilons: vec![0.5, 0.25, 0.125],
                h_cell: 0.0625,
                macro_h: 1.0 / 128.0,
                output: "report".into(),
                record_wall_time: false,
            },
        }
    }
}

fn point(v: &[f64]) -> [f64; 2] {
    [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

impl ToolkitConfig {
    /// Default configuration for a one-dimensional cell `ω = (0.25, 0.75)` on `Ω = (0,1)`.
    pub fn default_1d() -> Self {
        let mut c = Self::default();
        c.geometry.dim = 1;
        c.geometry.inclusion_lower = vec![0.25];
        c.geometry.inclusion_upper = vec![0.75];
        c.geometry.domain_lower = vec![0.0];
        c.geometry.domain_upper = vec![1.0];
        c
    }

    pub fn cell(&self) -> CellGeometry {
        let g = &self.geometry;
        CellGeometry::new(
            g.dim,
            Aabb::new(point(&g.inclusion_lower), point(&g.inclusion_upper)),
            g.clearance,
        )
        .expect("validated config")
    }

    pub fn domain(&self) -> Aabb {
        Aabb::new(point(&self.geometry.domain_lower), point(&self.geometry.domain_upper))
    }

    pub fn material(&self) -> MaterialModel {
        let m = &self.material;
        let lo = m.k_lower.unwrap_or(m.sigma_solid.min(m.sigma_pore));
        let hi = m.k_upper.unwrap_or(m.sigma_solid.max(m.sigma_pore));
        MaterialModel::with_bounds(m.sigma_solid, m.sigma_pore, lo, hi, m.alpha, m.g).expect("validated config")
    }

    pub fn ions(&self) -> IonSystem {
        IonSystem::new(self.ions.charges.clone(), self.ions.kt, self.ions.neutrality_tol).expect("validated config")
    }

    pub fn newton(&self) -> NewtonConfig {
        let s = &self.solver;
        NewtonConfig {
            abs_tol: s.abs_tol,
            max_iter: s.max_iter,
            exp_clamp: s.exp_clamp,
            max_halvings: s.max_halvings,
            linear_tol: s.linear_tol,
            mode: s.mode,
        }
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_ini_string(&self) -> String {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
        let g = &self.geometry;
        let m = &self.material;
        let i = &self.ions;
        let s = &self.solver;
        let st = &self.study;
        let mut out = String::new();
        let _ = writeln!(out, "[geometry]");
        let _ = writeln!(out, "dim = {}", g.dim);
        let _ = writeln!(out, "inclusion_lower = {}", list(&g.inclusion_lower));
        let _ = writeln!(out, "inclusion_upper = {}", list(&g.inclusion_upper));
        let _ = writeln!(out, "clearance = {:?}", g.clearance);
        let _ = writeln!(out, "domain_lower = {}", list(&g.domain_lower));
        let _ = writeln!(out, "domain_upper = {}", list(&g.domain_upper));
        let _ = writeln!(out, "gap = {:?}", g.gap);
        let _ = writeln!(out, "\n[material]");
        let _ = writeln!(out, "sigma_solid = {:?}", m.sigma_solid);
        let _ = writeln!(out, "sigma_pore = {:?}", m.sigma_pore);
        let _ = writeln!(out, "alpha = {:?}", m.alpha);
        let _ = writeln!(out, "g = {:?}", m.g);
        if let Some(k) = m.k_lower {
            let _ = writeln!(out, "k_lower = {k:?}");
        }
        if let Some(k) = m.k_upper {
            let _ = writeln!(out, "k_upper = {k:?}");
        }
        let _ = writeln!(out, "\n[ions]");
        let _ = writeln!(out, "charges = {}", list(&i.charges));
        let _ = writeln!(out, "kT = {:?}", i.kt);
        let _ = writeln!(out, "neutrality_tol = {:?}", i.neutrality_tol);
        let _ = writeln!(out, "\n[solver]");
        let _ = writeln!(out, "abs_tol = {:?}", s.abs_tol);
        let _ = writeln!(out, "max_iter = {}", s.max_iter);
        let _ = writeln!(out, "exp_clamp = {:?}", s.exp_clamp);
        let _ = writeln!(out, "max_halvings = {}", s.max_halvings);
        let _ = writeln!(out, "linear_tol = {:?}", s.linear_tol);
        let mode = match s.mode {
            NonlinearMode::Boltzmann => "boltzmann",
            NonlinearMode::Linearized => "linearized",
            NonlinearMode::Disabled => "disabled",
        };
        let _ = writeln!(out, "mode = {mode}");
        let _ = writeln!(out, "\n[study]");
        let _ = writeln!(out, "epsilons = {}", list(&st.epsilons));
        let _ = writeln!(out, "h_cell = {:?}", st.h_cell);
        let _ = writeln!(out, "macro_h = {:?}", st.macro_h);
        let _ = writeln!(out, "output = {}", st.output);
        let _ = writeln!(out, "record_wall_time = {}", st.record_wall_time);
        out
    }
}

pub fn parse_config(path: &Path) -> Result<ToolkitConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![ConfigError::Io(format!("{}: {e}", path.display()))]))?;
    parse_config_str(&text)
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const KEYS: &[(&str, &[&str])] = &[
    (
        "geometry",
        &["dim", "inclusion_lower", "inclusion_upper", "clearance", "domain_lower", "domain_upper", "gap"],
    ),
    ("material", &["sigma_solid", "sigma_pore", "alpha", "g", "k_lower", "k_upper"]),
    ("ions", &["charges", "kT", "neutrality_tol"]),
    ("solver", &["abs_tol", "max_iter", "exp_clamp", "max_halvings", "linear_tol", "mode"]),
    ("study", &["epsilons", "h_cell", "macro_h", "output", "record_wall_time"]),
];

fn tokenize(text: &str, errors: &mut Vec<ConfigError>) -> Sections {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                errors.push(ConfigError::Parse {
                    line,
                    message: format!("unknown section [{name}]"),
                });
                current = None;
                continue;
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ConfigError::Parse {
                line,
                message: "expected `key = value`".into(),
            });
            continue;
        };
        let Some(section) = &current else {
            errors.push(ConfigError::Parse {
                line,
                message: "key outside of a known section".into(),
            });
            continue;
        };
        let key = key.trim();
        let allowed = KEYS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            errors.push(ConfigError::Parse {
                line,
                message: format!("unknown key `{key}` in [{section}]"),
            });
            continue;
        }
        let entries = sections.get_mut(section).expect("section registered");
        if let Some(prev) = entries.get(key) {
            errors.push(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
            continue;
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    sections
}

struct Reader<'a> {
    sections: &'a Sections,
    errors: Vec<ConfigError>,
}

impl Reader<'_> {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.entry(section, key).map(|e| e.line)
    }

    fn parse_error(&mut self, line: usize, message: String) {
        self.errors.push(ConfigError::Parse { line, message });
    }

    fn float(&mut self, section: &str, key: &str, default: f64) -> f64 {
        let Some(e) = self.entry(section, key) else { return default };
        let (line, text) = (e.line, normalize_minus(&e.value));
        match text.parse::<f64>() {
            Ok(v) => v,
            Err(_) => {
                self.parse_error(line, format!("`{key}` expects a number, got `{text}`"));
                default
            }
        }
    }

    fn opt_float(&mut self, section: &str, key: &str) -> Option<f64> {
        self.entry(section, key)?;
        Some(self.float(section, key, f64::NAN))
    }

    fn uint(&mut self, section: &str, key: &str, default: usize) -> usize {
        let Some(e) = self.entry(section, key) else { return default };
        let (line, text) = (e.line, e.value.clone());
        match text.parse::<usize>() {
            Ok(v) => v,
            Err(_) => {
                self.parse_error(line, format!("`{key}` expects a non-negative integer, got `{text}`"));
                default
            }
        }
    }

    fn boolean(&mut self, section: &str, key: &str, default: bool) -> bool {
        let Some(e) = self.entry(section, key) else { return default };
        let (line, text) = (e.line, e.value.clone());
        match text.as_str() {
            "true" => true,
            "false" => false,
            _ => {
                self.parse_error(line, format!("`{key}` expects true or false, got `{text}`"));
                default
            }
        }
    }

    fn string(&mut self, section: &str, key: &str, default: &str) -> String {
        self.entry(section, key).map_or_else(|| default.to_string(), |e| e.value.clone())
    }

    fn list(&mut self, section: &str, key: &str, default: &[f64]) -> Vec<f64> {
        let Some(e) = self.entry(section, key) else { return default.to_vec() };
        let (line, text) = (e.line, normalize_minus(&e.value));
        let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
        let mut out = Vec::new();
        for tok in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.parse_error(line, format!("`{key}` has a non-numeric entry `{tok}`"));
                    return default.to_vec();
                }
            }
        }
        out
    }
}

fn normalize_minus(s: &str) -> String {
    s.replace('\u{2212}', "-")
}

pub fn parse_config_str(text: &str) -> Result<ToolkitConfig, ConfigErrors> {
    let mut tok_errors = Vec::new();
    let sections = tokenize(text, &mut tok_errors);
    let mut r = Reader {
        sections: &sections,
        errors: tok_errors,
    };
    let d = ToolkitConfig::default();
    let dim = r.uint("geometry", "dim", d.geometry.dim);
    let (d_lo, d_hi, d_dlo, d_dhi) = if dim == 1 {
        let c = ToolkitConfig::default_1d();
        (
            c.geometry.inclusion_lower,
            c.geometry.inclusion_upper,
            c.geometry.domain_lower,
            c.geometry.domain_upper,
        )
    } else {
        (
            d.geometry.inclusion_lower.clone(),
            d.geometry.inclusion_upper.clone(),
            d.geometry.domain_lower.clone(),
            d.geometry.domain_upper.clone(),
        )
    };
    let cfg = ToolkitConfig {
        geometry: GeometrySection {
            dim,
            inclusion_lower: r.list("geometry", "inclusion_lower", &d_lo),
            inclusion_upper: r.list("geometry", "inclusion_upper", &d_hi),
            clearance: r.float("geometry", "clearance", d.geometry.clearance),
            domain_lower: r.list("geometry", "domain_lower", &d_dlo),
            domain_upper: r.list("geometry", "domain_upper", &d_dhi),
            gap: r.float("geometry", "gap", d.geometry.gap),
        },
        material: MaterialSection {
            sigma_solid: r.float("material", "sigma_solid", d.material.sigma_solid),
            sigma_pore: r.float("material", "sigma_pore", d.material.sigma_pore),
            alpha: r.float("material", "alpha", d.material.alpha),
            g: r.float("material", "g", d.material.g),
            k_lower: r.opt_float("material", "k_lower"),
            k_upper: r.opt_float("material", "k_upper"),
        },
        ions: IonsSection {
            charges: r.list("ions", "charges", &d.ions.charges),
            kt: r.float("ions", "kT", d.ions.kt),
            neutrality_tol: r.float("ions", "neutrality_tol", d.ions.neutrality_tol),
        },
        solver: SolverSection {
            abs_tol: r.float("solver", "abs_tol", d.solver.abs_tol),
            max_iter: r.uint("solver", "max_iter", d.solver.max_iter),
            exp_clamp: r.float("solver", "exp_clamp", d.solver.exp_clamp),
            max_halvings: r.uint("solver", "max_halvings", d.solver.max_halvings),
            linear_tol: r.float("solver", "linear_tol", d.solver.linear_tol),
            mode: {
                let m = r.string("solver", "mode", "boltzmann");
                match m.as_str() {
                    "boltzmann" => NonlinearMode::Boltzmann,
                    "linearized" => NonlinearMode::Linearized,
                    "disabled" => NonlinearMode::Disabled,
                    other => {
                        let line = r.line("solver", "mode").unwrap_or(0);
                        r.parse_error(line, format!("unknown mode `{other}` (boltzmann, linearized, disabled)"));
                        NonlinearMode::Boltzmann
                    }
                }
            },
        },
        study: StudySection {
            epsilons: r.list("study", "epsilons", &d.study.epsilons),
            h_cell: r.float("study", "h_cell", d.study.h_cell),
            macro_h: r.float("study", "macro_h", d.study.macro_h),
            output: r.string("study", "output", &d.study.output),
            record_wall_time: r.boolean("study", "record_wall_time", d.study.record_wall_time),
        },
    };
    let mut errors = r.errors;
    validate(&cfg, &|s, k| sections.get(s).and_then(|m| m.get(k)).map(|e| e.line), &mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Checks every cross-field constraint of the downstream modules.
pub fn validate(cfg: &ToolkitConfig, line_of: &dyn Fn(&str, &str) -> Option<usize>, errors: &mut Vec<ConfigError>) {
    let mut fail = |section: &str, key: &str, constraint: String| {
        errors.push(ConfigError::Validation {
            field: format!("{section}.{key}"),
            constraint,
            line: line_of(section, key),
        });
    };
    let g = &cfg.geometry;
    let mut geometry_ok = true;
    if !(1..=2).contains(&g.dim) {
        fail("geometry", "dim", format!("must be 1 or 2, got {}", g.dim));
        geometry_ok = false;
    }
    for (key, v) in [
        ("inclusion_lower", &g.inclusion_lower),
        ("inclusion_upper", &g.inclusion_upper),
        ("domain_lower", &g.domain_lower),
        ("domain_upper", &g.domain_upper),
    ] {
        if v.len() != g.dim {
            fail("geometry", key, format!("needs {} coordinates, got {}", g.dim, v.len()));
            geometry_ok = false;
        }
    }
    if !(g.gap >= 0.0) {
        fail("geometry", "gap", "must be non-negative".into());
    }
    let mut cell = None;
    if geometry_ok {
        match CellGeometry::new(
            g.dim,
            Aabb::new(point(&g.inclusion_lower), point(&g.inclusion_upper)),
            g.clearance,
        ) {
            Ok(c) => cell = Some(c),
            Err(e) => fail("geometry", "inclusion_lower", e.to_string()),
        }
        if (0..g.dim).any(|i| !(g.domain_upper[i] > g.domain_lower[i])) {
            fail("geometry", "domain_upper", "domain box must be nondegenerate".into());
            geometry_ok = false;
        }
    }

    let m = &cfg.material;
    let lo = m.k_lower.unwrap_or(m.sigma_solid.min(m.sigma_pore));
    let hi = m.k_upper.unwrap_or(m.sigma_solid.max(m.sigma_pore));
    if let Err(crate::assembly::MaterialError::Invalid { field, constraint }) =
        MaterialModel::with_bounds(m.sigma_solid, m.sigma_pore, lo, hi, m.alpha, m.g)
    {
        fail("material", field, constraint);
    }

    let i = &cfg.ions;
    if let Err(e) = IonSystem::new(i.charges.clone(), i.kt, i.neutrality_tol) {
        let key = if !(i.kt > 0.0) { "kT" } else { "charges" };
        fail("ions", key, e.to_string());
    }

    if let Err(e) = cfg.newton().validate() {
        fail("solver", "abs_tol", e.to_string());
    }

    let s = &cfg.study;
    if s.epsilons.is_empty() {
        fail("study", "epsilons", "needs at least one value".into());
    }
    if s.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        fail("study", "epsilons", "all values must be positive".into());
    }
    if s.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        fail("study", "epsilons", "values must be strictly decreasing".into());
    }
    if let Some(cell) = &cell {
        if let Err(e) = check_cell_resolution(cell, s.h_cell) {
            fail("study", "h_cell", e.to_string());
        }
        if geometry_ok {
            let domain = Aabb::new(point(&g.domain_lower), point(&g.domain_upper));
            for &eps in s.epsilons.iter().filter(|e| **e > 0.0) {
                match build_paving(domain, eps, *cell, g.gap) {
                    Ok(p) if !p.is_whole_cell_union() => fail(
                        "study",
                        "epsilons",
                        format!("domain is not a union of whole cells at epsilon = {eps}"),
                    ),
                    Err(e) => fail("study", "epsilons", e.to_string()),
                    Ok(_) => {}
                }
            }
            for axis in 0..g.dim {
                let n = (g.domain_upper[axis] - g.domain_lower[axis]) / s.macro_h;
                if !(s.macro_h > 0.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                    fail("study", "macro_h", "must divide the domain extent into whole elements".into());
                    break;
                }
            }
        }
    }
    if s.output.trim().is_empty() {
        fail("study", "output", "must not be empty".into());
    }
}
