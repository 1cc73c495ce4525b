//! Command implementations. Each returns the text for stdout, the files to
//! write into the output directory, and a status that maps to the exit code.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use eigenmeasure::eigen::{lambda_bar, solve_eigen, EigenError, EigenOptions, Spectrum};
use eigenmeasure::mesh::{build_flat_torus, build_round_sphere, Density, MeshError, SimplicialMesh};
use eigenmeasure::optimizer::{
    eigenmap_index, energy_density, extract_eigenmap, harmonic_residual, maximize, AscentOptions, CertificateOptions,
    Eigenmap, HistoryEntry, InitialDensity, OptimizerError, StopReason,
};
use eigenmeasure::reduced::{graded_grid, numeric_index, ReducedError};
use eigenmeasure::sphere::{analytic_index, hersch_upper_bound_check, sphere_volume, EquatorMap, OracleError};

use crate::config::{ConfigError, RunConfig};

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Thresholds not met or verification disagreement.
    pub const NOT_CONVERGED: i32 = 1;
    pub const CONFIG: i32 = 2;
    /// Unreadable or malformed mesh or density input.
    pub const INPUT: i32 = 3;
    /// Solver or factorization failure.
    pub const NUMERICAL: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("configuration: {0}")]
    Invalid(String),
    #[error("input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => exit::CONFIG,
            CliError::Input(_) => exit::INPUT,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Io(_) => exit::IO,
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        match e {
            MeshError::Parse { .. } => CliError::Input(e.to_string()),
            MeshError::SingularCell { .. } | MeshError::NotClosed { .. } => CliError::Input(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EigenError> for CliError {
    fn from(e: EigenError) -> Self {
        match e {
            EigenError::TooMany { .. } => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::InfeasibleCap { .. } | OptimizerError::OutOfRange { .. } => CliError::Invalid(e.to_string()),
            OptimizerError::Mesh(m) => m.into(),
            OptimizerError::Eigen(m) => m.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Mesh(m) => m.into(),
            OracleError::Eigen(m) => m.into(),
            OracleError::NotConverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => exit::OK,
            Status::NotConverged => exit::NOT_CONVERGED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<(String, String)>,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Oracle,
    IndexVerify,
    Spectrum,
    Optimize,
    HerschCheck,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.threads()?;
    match command {
        Command::Oracle => cmd_oracle(cfg),
        Command::IndexVerify => cmd_index_verify(cfg),
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Optimize => cmd_optimize(cfg),
        Command::HerschCheck => cmd_hersch_check(cfg),
    }
}

/// Configuration keys that affect results; the output location is left out
/// so that reports are byte-identical wherever they are written.
fn config_echo(cfg: &RunConfig) -> BTreeMap<&str, &str> {
    cfg.entries().iter().filter(|(k, _)| k.as_str() != "out_dir").map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

/// Seventeen significant digits.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const ORACLE_HEADER: &str = "m,k,n,sphere_volume,equator_energy,alpha_minus,per_ell,total_index";

/// Closed-form table over `m_min..=m_max`, `k_min..=k_max`.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m_min: usize = cfg.get_or("m_min", 7)?;
    let m_max: usize = cfg.get_or("m_max", 9)?;
    let k_min: usize = cfg.get_or("k_min", 0)?;
    let k_max: usize = cfg.get_or("k_max", 2)?;
    let mut csv = format!("{ORACLE_HEADER}\n");
    for m in m_min..=m_max {
        for k in k_min..=k_max {
            csv.push_str(&oracle_row(m, k));
            csv.push('\n');
        }
    }
    Ok(Outcome { files: vec![("oracle.csv".into(), csv.clone())], stdout: csv, status: Status::Ok })
}

fn oracle_row(m: usize, k: usize) -> String {
    let map = match EquatorMap::new(m, k) {
        Ok(map) => map,
        Err(e) => return format!("{m},{k},,,,,,\"{e}\""),
    };
    let n = map.n();
    let sigma = sphere_volume(m);
    let energy = map.energy();
    match analytic_index(&map) {
        Ok(report) => {
            let per_ell: Vec<String> =
                report.per_ell.iter().map(|c| format!("{}:{}x{}", c.ell, c.count, c.multiplicity)).collect();
            format!(
                "{m},{k},{n},{},{},{},{},{}",
                fmt_f64(sigma),
                fmt_f64(energy),
                fmt_f64(report.alpha_minus),
                per_ell.join(";"),
                report.total
            )
        }
        Err(OracleError::IndexInfinite { .. }) => {
            format!("{m},{k},{n},{},{},,,infinite (n<6)", fmt_f64(sigma), fmt_f64(energy))
        }
        Err(e) => format!("{m},{k},{n},{},{},,,\"{e}\"", fmt_f64(sigma), fmt_f64(energy)),
    }
}

pub const INDEX_VERIFY_HEADER: &str = "m,k,ell,multiplicity,analytic_count,numeric_count,agree,regime";

/// Per-mode comparison of the analytic and the discretized index.
pub fn cmd_index_verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m_max: usize = cfg.get_or("m_max", 10)?;
    let m_limit: usize = cfg.get_or("m_limit", 10)?;
    if m_max > m_limit {
        return Err(CliError::Invalid(format!("m_max = {m_max} exceeds m_limit = {m_limit}")));
    }
    let nodes: usize = cfg.get_or("nodes", 1000)?;
    if nodes < 3 {
        return Err(CliError::Invalid(format!("nodes = {nodes} must be at least 3")));
    }
    let offset: i64 = cfg.get_or("analytic_offset", 0)?;
    let grid = graded_grid(nodes);
    let mut csv = format!("{INDEX_VERIFY_HEADER}\n");
    let mut all_agree = true;
    for m in 3..=m_max {
        for k in 0..=m - 3 {
            let map = EquatorMap::new(m, k)?;
            let analytic = match analytic_index(&map) {
                Ok(r) => r,
                Err(OracleError::IndexInfinite { .. }) => {
                    writeln!(csv, "{m},{k},,,,,,infinite (n<6)").expect("writing to a String cannot fail");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let numeric = match numeric_index(m, k, &grid) {
                Ok(v) => Some(v),
                Err(ReducedError::UnstableCount { .. }) => None,
                Err(e) => return Err(CliError::Numerical(e.to_string())),
            };
            let top = analytic
                .per_ell
                .iter()
                .map(|c| c.ell)
                .chain(numeric.iter().flatten().map(|c| c.ell))
                .max()
                .unwrap_or(0);
            let (mut total_a, mut total_n) = (0i64, 0i64);
            for ell in 0..=top {
                let a = analytic.per_ell.iter().find(|c| c.ell == ell).map_or(0, |c| c.count) as i64 + offset;
                let mult = eigenmeasure::sphere::harmonic_dim(k, ell) as i64;
                let num = numeric.as_ref().map(|v| v.iter().find(|c| c.ell == ell).map_or(0, |c| c.count) as i64);
                let agree = num == Some(a);
                all_agree &= agree;
                total_a += a * mult;
                total_n += num.unwrap_or(0) * mult;
                let num_text = num.map_or("unstable".to_string(), |v| v.to_string());
                writeln!(csv, "{m},{k},{ell},{mult},{a},{num_text},{agree},finite").expect("writing to a String cannot fail");
            }
            let agree = numeric.is_some() && total_a == total_n;
            all_agree &= agree;
            let num_text = if numeric.is_some() { total_n.to_string() } else { "unstable".into() };
            writeln!(csv, "{m},{k},total,,{total_a},{num_text},{agree},finite").expect("writing to a String cannot fail");
        }
    }
    Ok(Outcome {
        files: vec![("index_verify.csv".into(), csv.clone())],
        stdout: csv,
        status: if all_agree { Status::Ok } else { Status::NotConverged },
    })
}

pub fn build_mesh(cfg: &RunConfig) -> Result<SimplicialMesh, CliError> {
    let geometry = cfg.raw("geometry").unwrap_or("sphere");
    let mesh = match geometry {
        "sphere" => build_round_sphere(cfg.get_or("dim", 2)?, cfg.get_or("level", 3)?)?,
        "torus" => build_flat_torus(cfg.get_or("dim", 2)?, cfg.get_or("n_per_axis", 16)?, cfg.get_or("side", 2.0 * PI)?)?,
        "file" => {
            let path: String = cfg.require("mesh")?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
            let mesh = SimplicialMesh::from_text(&text)?;
            mesh.check_closed()?;
            mesh
        }
        other => return Err(CliError::Invalid(format!("geometry must be sphere, torus or file, got {other:?}"))),
    };
    Ok(mesh)
}

/// Density requested by the configuration, without a cap.
pub fn build_density(cfg: &RunConfig, mesh: &SimplicialMesh) -> Result<Density, CliError> {
    match cfg.raw("density").unwrap_or("uniform") {
        "uniform" => Ok(Density::uniform(mesh, 1.0)?),
        "polar_bump" => {
            let height = cfg.get_or("bump_height", 4.0)?;
            let width = cfg.positive("bump_width", 0.5)?;
            let values = (0..mesh.num_cells())
                .map(|c| {
                    let p = mesh.cell_centroid(c);
                    let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let polar = (p[p.len() - 1] / r).clamp(-1.0, 1.0).acos();
                    1.0 + height * (-(polar / width).powi(2)).exp()
                })
                .collect();
            Ok(Density::uncapped(values)?)
        }
        "file" => {
            let path: String = cfg.require("density_file")?;
            read_density_csv(&path, mesh)
        }
        other => Err(CliError::Invalid(format!("density must be uniform, polar_bump or file, got {other:?}"))),
    }
}

/// Reads the `cell,density,...` CSV written by `optimize`.
pub fn read_density_csv(path: &str, mesh: &SimplicialMesh) -> Result<Density, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
    let mut values = vec![f64::NAN; mesh.num_cells()];
    for (line, record) in reader.deserialize::<DensityRow>().enumerate() {
        let row = record.map_err(|e| CliError::Input(format!("{path}: {e}")))?;
        let slot = values
            .get_mut(row.cell)
            .ok_or_else(|| CliError::Input(format!("{path}: row {} names cell {} of {}", line + 2, row.cell, mesh.num_cells())))?;
        *slot = row.density;
    }
    if let Some(c) = values.iter().position(|v| v.is_nan()) {
        return Err(CliError::Input(format!("{path}: no density for cell {c}")));
    }
    Density::uncapped(values).map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Debug, serde::Deserialize, Serialize)]
struct DensityRow {
    cell: usize,
    density: f64,
}

fn eigen_options(cfg: &RunConfig) -> Result<EigenOptions, CliError> {
    Ok(EigenOptions { seed: cfg.get_or("seed", 0)?, tol: cfg.positive("eigen_tol", 1e-11)?, ..EigenOptions::default() })
}

/// Lowest eigenpairs of the configured mesh and density.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mesh = build_mesh(cfg)?;
    let density = build_density(cfg, &mesh)?;
    let count: usize = cfg.get_or("count", 6)?;
    let stiffness = mesh.assemble_stiffness();
    let mass = mesh.assemble_mass(&density)?;
    let spectrum = solve_eigen(&stiffness, &mass, count, &eigen_options(cfg)?)?;
    let json = spectrum.to_json();
    let mut files = vec![("spectrum.json".to_string(), json.clone())];
    if cfg.flag("export_matrices")? {
        files.push(("stiffness.coo".into(), stiffness.to_coo_text()));
        files.push(("mass.coo".into(), mass.to_coo_text()));
    }
    if cfg.flag("export_mesh")? {
        files.push(("mesh.txt".into(), mesh.to_text()));
    }
    Ok(Outcome { stdout: json + "\n", files, status: Status::Ok })
}

#[derive(Debug, Serialize)]
struct MeshSummary {
    dim: usize,
    vertices: usize,
    cells: usize,
    volume: f64,
}

impl MeshSummary {
    fn of(mesh: &SimplicialMesh) -> Self {
        Self { dim: mesh.dim(), vertices: mesh.num_vertices(), cells: mesh.num_cells(), volume: mesh.total_volume() }
    }
}

#[derive(Debug, Serialize)]
struct Thresholds {
    tol_cert: f64,
    tol_s: f64,
    defect_threshold: f64,
    cluster_tol: f64,
}

#[derive(Debug, Serialize)]
struct FinalState {
    lambda_bar: f64,
    lambda_k: f64,
    mass: f64,
    certificate: f64,
    cluster: [usize; 2],
    eigenvalues: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct EigenmapSummary {
    rank: usize,
    defect: f64,
    spherical: bool,
    harmonic_residual: f64,
    energy: f64,
}

#[derive(Debug, Serialize)]
struct OptimizeReport<'a> {
    command: &'static str,
    config: BTreeMap<&'a str, &'a str>,
    mesh: MeshSummary,
    k: usize,
    cap: f64,
    seed: u64,
    threads: usize,
    step_rule: String,
    history: &'a [HistoryEntry],
    stop_reason: StopReason,
    #[serde(rename = "final")]
    final_state: FinalState,
    eigenmap: EigenmapSummary,
    stability_index: usize,
    thresholds: Thresholds,
    status: &'static str,
    exit_code: i32,
}

/// Ascent run with report, density CSV and eigenmap CSV.
pub fn cmd_optimize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mesh = build_mesh(cfg)?;
    let k: usize = cfg.get_or("k", 1)?;
    if k == 0 {
        return Err(CliError::Invalid("k must be at least 1".into()));
    }
    let cap = cfg.positive("cap", 1e3)?;
    let eigen = eigen_options(cfg)?;
    let certificate = CertificateOptions { cluster_tol: cfg.positive("cluster_tol", 1e-2)?, tol_s: cfg.positive("tol_s", 1e-2)? };
    let initial = match cfg.raw("init").unwrap_or("uniform") {
        "uniform" => InitialDensity::Uniform,
        "perturbed" => InitialDensity::Perturbed { amplitude: cfg.positive("perturbation", 0.3)? },
        other => return Err(CliError::Invalid(format!("init must be uniform or perturbed, got {other:?}"))),
    };
    let opts = AscentOptions {
        max_iterations: cfg.get_or("max_iterations", 200)?,
        tol_cert: cfg.positive("tol_cert", 1e-3)?,
        certificate,
        initial_step: cfg.positive("initial_step", 0.5)?,
        initial,
        eigen: eigen.clone(),
        ..AscentOptions::default()
    };
    let defect_threshold = cfg.positive("defect_threshold", 1e-2)?;

    let state = maximize(&mesh, k, cap, &opts)?;
    let map = extract_eigenmap(&state.spectrum, k, certificate.cluster_tol, defect_threshold)?;
    let residual = harmonic_residual(&mesh, &map);
    let energy: f64 = energy_density(&mesh, &map.components).iter().zip(mesh.cell_volumes()).map(|(e, v)| e * v).sum();
    let stability_index = eigenmap_index(&mesh, &map, &eigen)?;
    let cluster = eigenmeasure::eigen::cluster_of(&state.spectrum.eigenvalues, certificate.cluster_tol, k);

    // a zero budget never checks the certificate, so it cannot count as converged
    let converged = opts.max_iterations > 0 && state.certificate < opts.tol_cert && map.spherical;
    let status = if converged { Status::Ok } else { Status::NotConverged };
    let report = OptimizeReport {
        command: "optimize",
        config: config_echo(cfg),
        mesh: MeshSummary::of(&mesh),
        k,
        cap,
        seed: eigen.seed,
        threads: cfg.threads()?,
        step_rule: state.step_rule.clone(),
        history: &state.history,
        stop_reason: state.stop,
        final_state: FinalState {
            lambda_bar: state.lambda_bar,
            lambda_k: state.spectrum.eigenvalues[k],
            mass: state.density.mass(&mesh),
            certificate: state.certificate,
            cluster: [cluster.start, cluster.end - 1],
            eigenvalues: state.spectrum.eigenvalues.clone(),
        },
        eigenmap: EigenmapSummary { rank: map.rank, defect: map.defect, spherical: map.spherical, harmonic_residual: residual, energy },
        stability_index,
        thresholds: Thresholds { tol_cert: opts.tol_cert, tol_s: certificate.tol_s, defect_threshold, cluster_tol: certificate.cluster_tol },
        status: if converged { "converged" } else { "not_converged" },
        exit_code: status.exit_code(),
    };
    let json = eigenmeasure::json::to_string(&report);
    Ok(Outcome {
        files: vec![
            ("report.json".into(), json.clone()),
            ("density.csv".into(), density_csv(&mesh, &state.density)),
            ("eigenmap.csv".into(), eigenmap_csv(&map)),
        ],
        stdout: json + "\n",
        status,
    })
}

pub fn density_csv(mesh: &SimplicialMesh, density: &Density) -> String {
    let mut out = String::from("cell,density,volume\n");
    for (c, (rho, vol)) in density.values().iter().zip(mesh.cell_volumes()).enumerate() {
        writeln!(out, "{c},{},{}", fmt_f64(*rho), fmt_f64(*vol)).expect("writing to a String cannot fail");
    }
    out
}

pub fn eigenmap_csv(map: &Eigenmap) -> String {
    let mut out = String::from("vertex");
    for a in 0..map.rank {
        write!(out, ",u{a}").expect("writing to a String cannot fail");
    }
    out.push_str(",norm\n");
    for (v, norm) in map.pointwise_norm.iter().enumerate() {
        write!(out, "{v}").expect("writing to a String cannot fail");
        for u in &map.components {
            write!(out, ",{}", fmt_f64(u[v])).expect("writing to a String cannot fail");
        }
        writeln!(out, ",{}", fmt_f64(*norm)).expect("writing to a String cannot fail");
    }
    out
}

#[derive(Debug, Serialize)]
struct HerschReport<'a> {
    command: &'static str,
    config: BTreeMap<&'a str, &'a str>,
    mesh: MeshSummary,
    bound: f64,
    per_coordinate: Vec<f64>,
    reference: f64,
    lambda_bar_1: f64,
    center: Vec<f64>,
    center_residual: f64,
    center_iterations: usize,
}

/// Conformally balanced coordinate test functions for `λ_1 · mass` on a sphere mesh.
pub fn cmd_hersch_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mesh = build_mesh(cfg)?;
    let density = build_density(cfg, &mesh)?;
    let bound = hersch_upper_bound_check(&mesh, &density, 1)?;
    let spectrum: Spectrum =
        solve_eigen(&mesh.assemble_stiffness(), &mesh.assemble_mass(&density)?, 1, &eigen_options(cfg)?)?;
    let report = HerschReport {
        command: "hersch-check",
        config: config_echo(cfg),
        mesh: MeshSummary::of(&mesh),
        bound: bound.bound,
        per_coordinate: bound.per_coordinate.clone(),
        reference: bound.reference,
        lambda_bar_1: lambda_bar(&spectrum, density.mass(&mesh), 1),
        center: bound.center.p.clone(),
        center_residual: bound.center.residual,
        center_iterations: bound.center.iterations,
    };
    let json = eigenmeasure::json::to_string(&report);
    Ok(Outcome { files: vec![("hersch.json".into(), json.clone())], stdout: json + "\n", status: Status::Ok })
}
