//! Batch front end: run configurations, the experiment presets, the run
//! pipeline with its on-disk artifacts, and the refinement study driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_rhs, assemble_system, AssemblyOptions, Formulation, Load, Selector, SystemBlocks};
use crate::contact::{rho_threshold, ConstraintResponse, ContactSolver, CouplingMatrices, UzawaConfig, UzawaResult};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{BoundaryMesh, DofLayout, Material, MeshSpec, Point, Region, SideTag, TimeGrid};
use crate::mot_solver::Marcher;
use crate::postprocess::{
    consecutive_rates, displacement_series, energy, energy_csv, eval_interior, fitted_order, fmt_f, l2_spacetime_error,
    multipliers_csv, richardson_reference, trace_at, traces_csv, EnergyReport, Extrapolation,
};

/// A named evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

impl Probe {
    fn new(name: &str, x: f64, y: f64) -> Self {
        Probe { name: name.into(), x, y }
    }

    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

/// Closed-form solutions the run can be checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analytic {
    /// Unit square under a uniform vertical pull on the top side, released at
    /// the bottom after one transit; plane P-waves with `c_P = 1`.
    SquarePull,
}

impl Analytic {
    pub fn displacement(self, t: f64, p: Point) -> [f64; 2] {
        match self {
            Analytic::SquarePull => [0.0, (t + p[1] - 0.5).max(0.0) - (t - p[1] - 1.5).max(0.0)],
        }
    }

    /// `∫₀ᵀ∫_Γ f·u̇`, the exact counterpart of `XᵀSX`.
    pub fn energy(self, t_final: f64) -> f64 {
        match self {
            Analytic::SquarePull => t_final,
        }
    }

    fn validate(self, cfg: &RunConfig) -> Result<()> {
        match self {
            Analytic::SquarePull => {
                if cfg.t_final > 2.0 + 1e-12 {
                    return Err(Error::Config("analytic: square_pull holds for T <= 2 only".into()));
                }
                if (cfg.material.c_p - 1.0).abs() > 1e-12 {
                    return Err(Error::Config("analytic: square_pull needs c_p = 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Everything that defines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mesh: MeshSpec,
    pub material: Material,
    pub t_final: f64,
    pub n_steps: usize,
    pub formulation: Formulation,
    #[serde(default)]
    pub loads: Vec<Load>,
    /// Gap `g(t, x, y)` in the contact direction; the constraint is `u·ν ≥ g`.
    #[serde(default = "zero_expr")]
    pub gap: Expr,
    #[serde(default)]
    pub uzawa: UzawaConfig,
    #[serde(default)]
    pub assembly: AssemblyOptions,
    /// Boundary points whose displacement history is written out.
    #[serde(default)]
    pub traces: Vec<Probe>,
    /// Interior points evaluated through the representation formula.
    #[serde(default)]
    pub interior: Vec<Probe>,
    /// Interior values are written every `interior_stride` steps.
    #[serde(default = "one")]
    pub interior_stride: usize,
    #[serde(default)]
    pub analytic: Option<Analytic>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn zero_expr() -> Expr {
    Expr::constant(0.0)
}

fn one() -> usize {
    1
}

/// Command-line overrides shared by all subcommands.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// Target element length.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Time step; defaults to keeping the configured h/dt ratio.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Final time.
    #[arg(long = "T", global = true)]
    pub t_final: Option<f64>,
    /// symmetric | nonsymmetric
    #[arg(long, global = true)]
    pub formulation: Option<String>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

pub fn mesh_h(spec: &MeshSpec) -> Option<f64> {
    match spec {
        MeshSpec::Slit { h, .. } | MeshSpec::Square { h, .. } | MeshSpec::Circle { h, .. } => Some(*h),
        MeshSpec::File { .. } => None,
    }
}

fn set_mesh_h(spec: &mut MeshSpec, new: f64) -> Result<()> {
    match spec {
        MeshSpec::Slit { h, .. } | MeshSpec::Square { h, .. } | MeshSpec::Circle { h, .. } => {
            *h = new;
            Ok(())
        }
        MeshSpec::File { .. } => Err(Error::Config("--h cannot refine a mesh read from a file".into())),
    }
}

pub fn parse_formulation(s: &str) -> Result<Formulation> {
    match s.trim().to_ascii_lowercase().as_str() {
        "symmetric" | "sym" => Ok(Formulation::Symmetric),
        "nonsymmetric" | "non-symmetric" | "nonsym" => Ok(Formulation::Nonsymmetric),
        other => Err(Error::Config(format!("formulation: unknown value '{other}'"))),
    }
}

fn integer_ratio(len: f64, h: f64) -> bool {
    let q = len / h;
    (q - q.round()).abs() < 1e-8
}

impl RunConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_steps)
    }

    /// Sets `h` and the step, keeping `h/Δt` unless `dt` is given.
    pub fn refine_to(&mut self, h: f64, dt: Option<f64>) -> Result<()> {
        let ratio = mesh_h(&self.mesh).map(|h0| h0 / self.dt());
        set_mesh_h(&mut self.mesh, h)?;
        let dt = match (dt, ratio) {
            (Some(dt), _) => dt,
            (None, Some(r)) => h / r,
            (None, None) => self.dt(),
        };
        self.set_dt(dt)
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        let n = (self.t_final / dt).round();
        if !(dt > 0.0) || n < 1.0 || (n * dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::Config(format!("dt: T={} is not a multiple of {dt}", self.t_final)));
        }
        self.n_steps = n as usize;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(t) = o.t_final {
            let dt = self.dt();
            self.t_final = t;
            self.set_dt(dt)?;
        }
        match (o.h, o.dt) {
            (Some(h), dt) => self.refine_to(h, dt)?,
            (None, Some(dt)) => self.set_dt(dt)?,
            (None, None) => {}
        }
        if let Some(f) = &o.formulation {
            self.formulation = parse_formulation(f)?;
        }
        if let Some(r) = o.rho {
            self.uzawa.rho = r;
        }
        if let Some(e) = o.eps {
            self.uzawa.eps = e;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        Ok(())
    }

    /// Checks the fields the solver does not check itself; messages name the field.
    pub fn validate(&self, mesh: &BoundaryMesh) -> Result<()> {
        self.material.validate().map_err(|e| Error::Config(format!("material: {e}")))?;
        if self.n_steps == 0 || !(self.t_final > 0.0) {
            return Err(Error::Config("t_final/n_steps: need T > 0 and at least one step".into()));
        }
        self.uzawa.validate().map_err(|e| Error::Config(format!("uzawa: {e}")))?;
        if self.interior_stride == 0 {
            return Err(Error::Config("interior_stride: must be >= 1".into()));
        }
        if let MeshSpec::Square { h, side, .. } = self.mesh {
            if !integer_ratio(side, h) {
                return Err(Error::Config(format!("mesh.h: {h} does not divide the side {side}")));
            }
        }
        for (i, load) in self.loads.iter().enumerate() {
            if let Selector::Region { region } = load.select {
                if !mesh.regions.contains(&region) {
                    return Err(Error::Config(format!("loads[{i}].select: no '{}' elements in the mesh", region.name())));
                }
            }
        }
        for (i, p) in self.traces.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Config(format!("traces[{i}]: non-finite coordinates")));
            }
        }
        if let Some(a) = self.analytic {
            a.validate(self)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn load(select: Selector, fx: &str, fy: &str) -> Load {
    Load { select, fx: Expr::parse(fx).expect("preset expression"), fy: Expr::parse(fy).expect("preset expression") }
}

fn side(y: f64) -> Selector {
    Selector::Box { xmin: -0.5, xmax: 0.5, ymin: y, ymax: y }
}

fn vside(x: f64) -> Selector {
    Selector::Box { xmin: x, xmax: x, ymin: -0.5, ymax: 0.5 }
}

fn midpoints() -> Vec<Probe> {
    vec![
        Probe::new("top", 0.0, 0.5),
        Probe::new("right", 0.5, 0.0),
        Probe::new("bottom", 0.0, -0.5),
        Probe::new("left", -0.5, 0.0),
    ]
}

pub const PRESETS: [&str; 7] = ["1", "2t1", "2t2", "3t1", "3t2", "bounce", "4"];

/// The experiment presets; they are ordinary configurations.
pub fn preset(id: &str) -> Result<RunConfig> {
    let unit = Material { rho: 1.0, c_p: 1.0, c_s: std::f64::consts::FRAC_1_SQRT_2 };
    let fast = Material { rho: 1.0, c_p: 2.0, c_s: 1.0 };
    let (n, c) = (SideTag::Neumann, SideTag::Contact);
    let square = |h: f64, tags| MeshSpec::Square { h, side: 1.0, tags };
    let base = RunConfig {
        name: format!("example{id}"),
        mesh: square(0.05, [n; 4]),
        material: unit,
        t_final: 2.0,
        n_steps: 40,
        formulation: Formulation::Nonsymmetric,
        loads: vec![],
        gap: zero_expr(),
        uzawa: UzawaConfig::default(),
        assembly: AssemblyOptions::default(),
        traces: midpoints(),
        interior: vec![],
        interior_stride: 1,
        analytic: None,
        out: None,
    };
    let slit = |pulse: &str| RunConfig {
        mesh: MeshSpec::Slit { h: 0.025, x0: -0.5, x1: 0.5, c0: -0.2, c1: 0.2 },
        material: fast,
        t_final: 3.0,
        n_steps: 240,
        loads: vec![load(Selector::Region { region: Region::Contact }, "0", pulse)],
        uzawa: UzawaConfig { rho: 1e5, eps: 1e-5, ..UzawaConfig::default() },
        traces: vec![Probe::new("mid", 0.0, 0.0)],
        ..base.clone()
    };
    let contact_square = |h: f64, steps: usize, loads: Vec<Load>| RunConfig {
        mesh: square(h, [c, n, n, c]),
        n_steps: steps,
        loads,
        uzawa: UzawaConfig { rho: 1e3, eps: 1e-5, ..UzawaConfig::default() },
        ..base.clone()
    };
    let cfg = match id {
        "1" => RunConfig {
            loads: vec![load(side(0.5), "0", "1"), load(side(-0.5), "0", "-2*H(t-1)")],
            analytic: Some(Analytic::SquarePull),
            ..base.clone()
        },
        "2t1" => slit("-sin(8*pi*t)*H(0.1875-t) + H(t-0.1875)"),
        "2t2" => slit("-sin(16*pi*t)*H(0.21875-t) + H(t-0.21875)"),
        "3t1" => contact_square(0.05, 40, vec![load(side(0.5), "0", "-0.1*H(t)")]),
        "3t2" => contact_square(0.05, 40, vec![load(side(0.5), "0", "-0.1*H(t)"), load(vside(0.5), "-0.1*H(t)", "0")]),
        "bounce" => {
            let pulses: Vec<String> =
                (0..9).map(|k| format!("{}(H(t-{:.1})-H(t-{:.1}))", match k {
                    0 => "",
                    _ if k % 2 == 0 => "+",
                    _ => "-",
                }, 0.1 * k as f64, 0.1 * (k + 1) as f64)).collect();
            let f = format!("0.1*({})", pulses.concat());
            RunConfig {
                uzawa: UzawaConfig { rho: 1e4, eps: 1e-5, ..UzawaConfig::default() },
                ..contact_square(0.0125, 160, vec![load(side(0.5), "0", &f)])
            }
        }
        "4" => RunConfig {
            mesh: MeshSpec::Circle { h: 0.05, radius: 0.2 },
            material: fast,
            t_final: 2.0,
            n_steps: 80,
            formulation: Formulation::Symmetric,
            gap: Expr::parse("(4*sqrt(1-1.5*(t-0.5)^2)-4)*H(1.3-t) - 3.2*H(t-1.3) - y").expect("preset expression"),
            uzawa: UzawaConfig { rho: 1e4, eps: 1e-4, ..UzawaConfig::default() },
            traces: vec![Probe::new("bottom", 0.0, -0.2)],
            interior: vec![Probe::new("barycenter", 0.0, 0.0)],
            interior_stride: 4,
            ..base.clone()
        },
        other => return Err(Error::Config(format!("example: unknown preset '{other}' (expected one of {PRESETS:?})"))),
    };
    Ok(RunConfig { name: format!("example{id}"), ..cfg })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assembly_s: f64,
    pub response_s: f64,
    pub uzawa_s: f64,
    pub postprocess_s: f64,
}

/// Everything a finished run produced.
pub struct RunOutput {
    pub config: RunConfig,
    pub mesh: BoundaryMesh,
    pub layout: DofLayout,
    pub grid: TimeGrid,
    pub blocks: SystemBlocks,
    pub rhs: Vec<DVector<f64>>,
    pub coupling: CouplingMatrices,
    pub solution: UzawaResult,
    pub energy: EnergyReport,
    /// Smallest eigenvalue of `(S⁽⁰⁾ + S⁽⁰⁾ᵀ)/2` of the run's formulation.
    pub min_eig_s0: f64,
    /// The same for the symmetric formulation on this mesh and step.
    pub min_eig_s0_symmetric: f64,
    pub pivot_ratio: f64,
    /// `2 λ_min(sym(B⁻¹))` when the space-time constraint matrix is small enough to form.
    pub rho_threshold: Option<f64>,
    pub timings: Timings,
}

/// Constraint systems up to this size get the admissible-step diagnostic.
const THRESHOLD_MAX_DIM: usize = 2000;

pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Diagonal block `S⁽⁰⁾` of the symmetric formulation for step `dt`.
pub fn symmetric_s0(mesh: &BoundaryMesh, dt: f64, mat: &Material, opts: &AssemblyOptions) -> Result<DMatrix<f64>> {
    let grid = TimeGrid::new(dt, 1)?;
    let layout = DofLayout::new(mesh, &grid);
    let blocks = assemble_system(mesh, &layout, &grid, mat, Formulation::Symmetric, opts)?;
    Ok(blocks.blocks[0].to_dense())
}

/// Assembles, solves and post-processes one configuration.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    let mesh = BoundaryMesh::from_spec(&cfg.mesh)?;
    cfg.validate(&mesh)?;
    let grid = cfg.grid()?;
    let layout = DofLayout::new(&mesh, &grid);
    let mut timings = Timings::default();
    let clock = Instant::now();
    let blocks = assemble_system(&mesh, &layout, &grid, &cfg.material, cfg.formulation, &cfg.assembly)?;
    let rhs = assemble_rhs(&mesh, &layout, &grid, &cfg.loads);
    let coupling = CouplingMatrices::new(&mesh, &layout, &grid, &cfg.gap);
    timings.assembly_s = clock.elapsed().as_secs_f64();
    let s0 = blocks.blocks[0].to_dense();
    let min_eig_s0 = min_sym_eigenvalue(&s0);
    drop(s0);
    let min_eig_s0_symmetric = match cfg.formulation {
        Formulation::Symmetric => min_eig_s0,
        Formulation::Nonsymmetric => min_sym_eigenvalue(&symmetric_s0(&mesh, grid.dt, &cfg.material, &cfg.assembly)?),
    };
    let marcher = Marcher::new(&blocks)?;
    let pivot_ratio = marcher.diag.pivot_ratio;
    let clock = Instant::now();
    let response = match cfg.uzawa.mode {
        crate::contact::UzawaMode::Precomputed => Some(ConstraintResponse::build(&marcher, &coupling)?),
        crate::contact::UzawaMode::Direct => None,
    };
    let dim = layout.n_lambda * layout.n_steps;
    let rho_threshold = match &response {
        Some(r) if dim > 0 && dim <= THRESHOLD_MAX_DIM => Some(rho_threshold(&r.dense())?),
        _ => None,
    };
    timings.response_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let solver = ContactSolver { marcher: &marcher, layout: &layout, coupling: &coupling, rhs: &rhs };
    let solution = solver.solve_with(&cfg.uzawa, response.as_ref())?;
    timings.uzawa_s = clock.elapsed().as_secs_f64();
    drop(response);
    let clock = Instant::now();
    let energy = energy(&blocks, &solution.x);
    timings.postprocess_s = clock.elapsed().as_secs_f64();
    drop(marcher);
    Ok(RunOutput {
        config: cfg.clone(),
        mesh,
        layout,
        grid,
        blocks,
        rhs,
        coupling,
        solution,
        energy,
        min_eig_s0,
        min_eig_s0_symmetric,
        pivot_ratio,
        rho_threshold,
        timings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactDiagnostics {
    pub min_lambda: f64,
    /// `max_j |min(Λ_j, (M̃(U − G))_j)|`.
    pub complementarity: f64,
    /// `‖M̃U‖_∞`.
    pub constraint_scale: f64,
    /// Smallest `u·ν − g` over Gauss points of the contact elements and the time nodes.
    pub min_clearance: f64,
}

pub fn contact_diagnostics(out: &RunOutput) -> ContactDiagnostics {
    let layout = &out.layout;
    let nc = layout.n_lambda;
    let mut d = ContactDiagnostics { min_lambda: 0.0, complementarity: 0.0, constraint_scale: 0.0, min_clearance: f64::INFINITY };
    if nc == 0 {
        d.min_clearance = 0.0;
        return d;
    }
    let lam = &out.solution.lambda;
    d.min_lambda = layout.normal_idx.iter().map(|&i| lam[i]).fold(f64::INFINITY, f64::min);
    for l in 0..layout.n_steps {
        let r = &out.solution.residual[l];
        let mu = r + &out.coupling.gap[l];
        d.constraint_scale = d.constraint_scale.max(mu.amax());
        for j in 0..nc {
            let c = lam[layout.normal_idx[l * nc + j]].min(r[j]).abs();
            d.complementarity = d.complementarity.max(c);
        }
    }
    let series = displacement_series(&out.solution.x, layout);
    let rule = crate::quadrature::gauss_rule(4);
    for &e in &layout.contact_elements {
        let seg = out.mesh.segment(e);
        let nu = out.mesh.contact_dirs[e];
        for &xi in &rule.nodes {
            let p = seg.at(xi);
            for (k, u) in series.iter().enumerate().skip(1) {
                let v = crate::postprocess::trace_value(&out.mesh, layout, u, e, xi);
                let gap = out.config.gap.eval(out.grid.t(k), p[0], p[1]);
                d.min_clearance = d.min_clearance.min(v[0] * nu[0] + v[1] * nu[1] - gap);
            }
        }
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticErrors {
    /// `‖u_h − u‖_{L²((0,T)×Γ)}`, both components.
    pub l2: f64,
    pub l2_u1: f64,
    pub l2_u2: f64,
    pub norm_u1: f64,
    pub norm_u2: f64,
    /// `|E − XᵀSX|`.
    pub energy_squared: f64,
    /// Largest pointwise error of `u₂` over the trace probes and time nodes.
    pub max_probe_error_u2: f64,
}

pub fn analytic_errors(out: &RunOutput, a: Analytic) -> AnalyticErrors {
    let series = displacement_series(&out.solution.x, &out.layout);
    let (mesh, layout, grid) = (&out.mesh, &out.layout, &out.grid);
    let exact = |t: f64, p: Point| a.displacement(t, p);
    let zero = |_: f64, _: Point| [0.0; 2];
    let mut probe = 0.0f64;
    for pr in &out.config.traces {
        for (k, u) in trace_at(mesh, layout, &series, pr.point()).iter().enumerate() {
            probe = probe.max((u[1] - exact(grid.t(k), pr.point())[1]).abs());
        }
    }
    AnalyticErrors {
        l2: l2_spacetime_error(mesh, layout, grid, &series, &[0, 1], exact),
        l2_u1: l2_spacetime_error(mesh, layout, grid, &series, &[0], exact),
        l2_u2: l2_spacetime_error(mesh, layout, grid, &series, &[1], exact),
        norm_u1: l2_spacetime_error(mesh, layout, grid, &series, &[0], zero),
        norm_u2: l2_spacetime_error(mesh, layout, grid, &series, &[1], zero),
        energy_squared: (a.energy(grid.t_final) - out.energy.total).abs(),
        max_probe_error_u2: probe,
    }
}

/// Run summary written as `metadata.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: RunConfig,
    pub h: Option<f64>,
    pub dt: f64,
    pub h_over_dt: Option<f64>,
    pub n_elements: usize,
    pub n_psi: usize,
    pub n_u: usize,
    pub n_contact: usize,
    pub block_size: usize,
    pub min_eig_sym_s0: f64,
    /// Smallest eigenvalue of the symmetric part of the symmetric-formulation `S⁽⁰⁾`.
    pub min_eig_sym_s0_symmetric: f64,
    pub pivot_ratio: f64,
    pub rho_threshold: Option<f64>,
    pub uzawa_iterations: usize,
    pub uzawa_last_update: f64,
    pub energy: f64,
    pub contact: Option<ContactDiagnostics>,
    pub analytic: Option<AnalyticErrors>,
    /// Interior probes closer to Γ than one element.
    pub near_boundary_probes: Vec<String>,
    pub timings: Timings,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

/// Writes traces, multipliers, energies, interior values, the mesh and the metadata.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Metadata> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let cfg = &out.config;
    let series = displacement_series(&out.solution.x, &out.layout);
    let traces: Vec<(String, Vec<[f64; 2]>)> =
        cfg.traces.iter().map(|p| (p.name.clone(), trace_at(&out.mesh, &out.layout, &series, p.point()))).collect();
    write(dir, "traces.csv", &traces_csv(&out.grid, &traces))?;
    write(dir, "energy.csv", &energy_csv(&out.grid, &out.energy))?;
    write(dir, "mesh.csv", &out.mesh.to_csv())?;
    if out.layout.n_lambda > 0 {
        write(dir, "multipliers.csv", &multipliers_csv(&out.grid, &out.layout, &out.solution.lambda))?;
    }
    let mut near = Vec::new();
    if !cfg.interior.is_empty() {
        let mut s = String::from("t,point,u1,u2\n");
        for p in &cfg.interior {
            for k in (0..=out.grid.n_steps).step_by(cfg.interior_stride) {
                let t = out.grid.t(k);
                let v = eval_interior(p.point(), t, &out.solution.x, &out.mesh, &out.layout, &out.grid, &cfg.material)?;
                if v.near_boundary && !near.contains(&p.name) {
                    eprintln!("warning: interior probe '{}' is closer to the boundary than one element", p.name);
                    near.push(p.name.clone());
                }
                s.push_str(&format!("{},{},{},{}\n", fmt_f(t), p.name, fmt_f(v.u[0]), fmt_f(v.u[1])));
            }
        }
        write(dir, "interior.csv", &s)?;
    }
    let h = mesh_h(&cfg.mesh);
    let meta = Metadata {
        config: cfg.clone(),
        h,
        dt: out.grid.dt,
        h_over_dt: h.map(|h| h / out.grid.dt),
        n_elements: out.mesh.n_elements(),
        n_psi: out.layout.n_psi,
        n_u: out.layout.n_u,
        n_contact: out.layout.n_lambda,
        block_size: out.layout.block_size(),
        min_eig_sym_s0: out.min_eig_s0,
        min_eig_sym_s0_symmetric: out.min_eig_s0_symmetric,
        pivot_ratio: out.pivot_ratio,
        rho_threshold: out.rho_threshold,
        uzawa_iterations: out.solution.iterations,
        uzawa_last_update: out.solution.history.last().copied().unwrap_or(0.0),
        energy: out.energy.total,
        contact: (out.layout.n_lambda > 0).then(|| contact_diagnostics(out)),
        analytic: cfg.analytic.map(|a| analytic_errors(out, a)),
        near_boundary_probes: near,
        timings: out.timings.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(format!("metadata: {e}")))?;
    write(dir, "metadata.json", &json)?;
    Ok(meta)
}

/// One level of a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub h: Option<f64>,
    pub dt: f64,
    pub energy: Option<f64>,
    pub analytic: Option<AnalyticErrors>,
    pub uzawa_iterations: Option<usize>,
    /// `category: message` when the level failed.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: Option<f64>,
    pub dt: f64,
    pub quantity: String,
    pub error: f64,
    /// `log₂(err(previous level)/err)`.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub name: String,
    pub levels: Vec<Level>,
    pub rows: Vec<ConvergenceRow>,
    /// Extrapolated energy from the three finest levels when no closed form is known.
    pub reference: Option<Extrapolation>,
    /// Least-squares order per quantity over all successful levels.
    pub fitted_orders: Vec<(String, f64)>,
    pub reference_failure: Option<String>,
}

impl ConvergenceTable {
    pub fn fitted(&self, quantity: &str) -> Option<f64> {
        self.fitted_orders.iter().find(|(q, _)| q == quantity).map(|(_, p)| *p)
    }

    pub fn failed(&self) -> bool {
        self.levels.iter().any(|l| l.failure.is_some()) || self.reference_failure.is_some()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,dt,quantity,error,rate\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.h.map(fmt_f).unwrap_or_default(),
                fmt_f(r.dt),
                r.quantity,
                fmt_f(r.error),
                r.rate.map(fmt_f).unwrap_or_default()
            ));
        }
        s
    }
}

/// Runs `levels` dyadic refinements of `base` (h and Δt halved together).
/// A failing level is recorded and the study continues.
pub fn convergence(base: &RunConfig, levels: usize) -> Result<ConvergenceTable> {
    if levels == 0 {
        return Err(Error::Config("levels: need at least one level".into()));
    }
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        let mut cfg = base.clone();
        let f = 0.5f64.powi(k as i32);
        match mesh_h(&cfg.mesh) {
            Some(h) => cfg.refine_to(h * f, Some(base.dt() * f))?,
            None => cfg.set_dt(base.dt() * f)?,
        }
        let level = match execute(&cfg) {
            Ok(run) => Level {
                h: mesh_h(&cfg.mesh),
                dt: run.grid.dt,
                energy: Some(run.energy.total),
                analytic: cfg.analytic.map(|a| analytic_errors(&run, a)),
                uzawa_iterations: Some(run.solution.iterations),
                failure: None,
            },
            Err(e) => Level {
                h: mesh_h(&cfg.mesh),
                dt: cfg.dt(),
                energy: None,
                analytic: None,
                uzawa_iterations: None,
                failure: Some(format!("{}: {e}", e.category())),
            },
        };
        out.push(level);
    }
    let mut table = ConvergenceTable {
        name: base.name.clone(),
        levels: out,
        rows: vec![],
        reference: None,
        fitted_orders: vec![],
        reference_failure: None,
    };
    let ok: Vec<&Level> = table.levels.iter().filter(|l| l.failure.is_none()).collect();
    let mut series: Vec<(String, Vec<(Option<f64>, f64, f64)>)> = vec![];
    if base.analytic.is_some() {
        let pick = |f: fn(&AnalyticErrors) -> f64| ok.iter().map(|l| (l.h, l.dt, f(l.analytic.as_ref().expect("analytic")))).collect();
        series.push(("l2".into(), pick(|a| a.l2)));
        series.push(("energy_squared".into(), pick(|a| a.energy_squared)));
    } else if ok.len() >= 3 {
        let e: Vec<f64> = ok.iter().map(|l| l.energy.expect("energy")).collect();
        let n = e.len();
        match richardson_reference([e[n - 3], e[n - 2], e[n - 1]]) {
            Ok(r) => {
                table.reference = Some(r);
                series.push(("energy_squared".into(), ok.iter().map(|l| (l.h, l.dt, (l.energy.expect("energy") - r.limit).abs())).collect()));
            }
            Err(e) => table.reference_failure = Some(e.to_string()),
        }
    } else {
        table.reference_failure = Some("extrapolation needs three successful levels".into());
    }
    for (q, pts) in series {
        let errs: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let rates = consecutive_rates(&errs);
        for (i, &(h, dt, err)) in pts.iter().enumerate() {
            let rate = if i == 0 { None } else { Some(rates[i - 1]) };
            table.rows.push(ConvergenceRow { h, dt, quantity: q.clone(), error: err, rate });
        }
        if pts.len() >= 2 && errs.iter().all(|&e| e > 0.0) {
            let hs: Vec<f64> = pts.iter().map(|p| p.0.unwrap_or(p.1)).collect();
            table.fitted_orders.push((q, fitted_order(&hs, &errs)));
        }
    }
    Ok(table)
}

#[derive(Debug, Parser)]
#[command(name = "tdbem", version, about = "Time-domain energetic BEM for 2D elastodynamic contact")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a JSON configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a preset: 1, 2t1, 2t2, 3t1, 3t2, bounce or 4.
    Example {
        id: String,
        /// Print the preset configuration instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Dyadic refinement study; starts from --h, or twice the preset h.
    Convergence {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value = "1", conflicts_with = "config")]
        example: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run_and_write(cfg: &RunConfig) -> Result<serde_json::Value> {
    let out = execute(cfg)?;
    let dir = output_dir(cfg);
    let meta = write_outputs(&out, &dir)?;
    Ok(serde_json::json!({
        "status": "ok",
        "out": dir,
        "energy": meta.energy,
        "uzawa_iterations": meta.uzawa_iterations,
        "min_eig_sym_s0": meta.min_eig_sym_s0,
        "min_eig_sym_s0_symmetric": meta.min_eig_sym_s0_symmetric,
        "analytic": meta.analytic,
        "contact": meta.contact,
    }))
}

fn dispatch(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = RunConfig::read(config)?;
            cfg.apply(&cli.overrides)?;
            run_and_write(&cfg)
        }
        Command::Example { id, print_config } => {
            let mut cfg = preset(id)?;
            cfg.apply(&cli.overrides)?;
            if *print_config {
                return serde_json::to_value(&cfg).map_err(|e| Error::Io(e.to_string()));
            }
            run_and_write(&cfg)
        }
        Command::Convergence { levels, example, config } => {
            let mut cfg = match config {
                Some(p) => RunConfig::read(p)?,
                None => {
                    let mut c = preset(example)?;
                    if cli.overrides.h.is_none() {
                        if let Some(h) = mesh_h(&c.mesh) {
                            let dt = c.dt();
                            c.refine_to(2.0 * h, Some(2.0 * dt))?;
                        }
                    }
                    c
                }
            };
            cfg.apply(&cli.overrides)?;
            let table = convergence(&cfg, *levels)?;
            let dir = output_dir(&cfg);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            write(&dir, "convergence.csv", &table.to_csv())?;
            let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Io(e.to_string()))?;
            write(&dir, "convergence.json", &json)?;
            if let Some(l) = table.levels.iter().find_map(|l| l.failure.clone()) {
                return Err(Error::Extrapolation(format!("refinement study incomplete ({l}); completed levels are in {}", dir.display())));
            }
            if let Some(f) = &table.reference_failure {
                return Err(Error::Extrapolation(f.clone()));
            }
            Ok(serde_json::json!({ "status": "ok", "out": dir, "fitted_orders": table.fitted_orders, "reference": table.reference }))
        }
    }
}

/// Parses arguments, runs, prints a JSON summary and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "status": "error", "category": "usage", "message": e.to_string() }));
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "status": "error", "category": e.category(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}
