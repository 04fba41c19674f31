//! Scenario files: a JSON description of the network, mesh, wind, pollution
//! parameters, discretization and solver settings.
//!
//! Loading reports every problem at once, each with a field path such as
//! `outflows[2].eps_out required`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispersion::{build_road_mesh_map, NodalInitial, PollutionParams, TimeGrid, WindField};
use crate::error::{Error, Result};
use crate::functionals::FunctionalWeights;
use crate::mesh::{read_mesh, TriMesh};
use crate::network::{
    validate_network, BoundaryInflow, BoundaryOutflow, FundamentalDiagram, InitialDensity, Junction, Network, Road,
    TimeSeries,
};
use crate::optimize::{
    ControlEncoder, FollowerConfig, GAConfig, LocalSearchConfig, PollutionProblem, StackelbergConfig, TrafficProblem,
};
use crate::traffic::Discretization;

/// Where the mesh comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSpec {
    /// Mesh file, relative to the scenario file.
    File(PathBuf),
    Rectangle { rectangle: RectangleSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleSpec {
    pub origin: [f64; 2],
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Road cells: a target size or an explicit count per road.
#[derive(Debug, Clone, PartialEq)]
pub enum CellSpec {
    Size(f64),
    Counts(Vec<usize>),
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub net: Network,
    pub mesh_spec: MeshSpec,
    pub mesh: TriMesh,
    pub wind: WindField,
    pub pollution: PollutionParams,
    pub weights: FunctionalWeights,
    pub disc: Discretization,
    pub cell_spec: CellSpec,
    pub substeps: usize,
    pub solver: StackelbergConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    polyline: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fd: Option<FundamentalDiagram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho0: Option<InitialDensity>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JunctionFile {
    incoming: Option<Vec<usize>>,
    outgoing: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InflowFile {
    road: Option<usize>,
    f_in: Option<TimeSeries>,
    cap_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q0: Option<f64>,
    eps_queue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_q: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutflowFile {
    road: Option<usize>,
    f_out: Option<TimeSeries>,
    eps_out: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PollutionFile {
    mu: Option<f64>,
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi0: Option<NodalInitial>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscretizationFile {
    dt: Option<f64>,
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cfl_safety: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    substeps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    polish_ga_best: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    roads: Option<Vec<RoadFile>>,
    #[serde(default)]
    junctions: Vec<JunctionFile>,
    #[serde(default)]
    inflows: Vec<InflowFile>,
    #[serde(default)]
    outflows: Vec<OutflowFile>,
    mesh: Option<MeshSpec>,
    wind: Option<WindField>,
    pollution: Option<PollutionFile>,
    discretization: Option<DiscretizationFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    controls: Option<ControlsFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ga: Option<GAConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leader_local_search: Option<LocalSearchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    follower: Option<FollowerConfig>,
}

/// Collects `path required` messages while unpacking optional fields.
struct Needs(Vec<String>);

impl Needs {
    fn get<T: Clone>(&mut self, v: &Option<T>, path: impl FnOnce() -> String) -> Option<T> {
        if v.is_none() {
            self.0.push(format!("{} required", path()));
        }
        v.clone()
    }
}

impl Scenario {
    /// Reads, parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Scenario::parse(&text, path, &base, &stem)
    }

    /// Parses scenario text; relative mesh paths are resolved against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path, default_id: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: format!("{e}"),
        })?;
        build(file, base, default_id)
    }

    /// Writes the scenario back as JSON; the mesh path is written absolute.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScenarioFile {
            id: Some(self.id.clone()),
            seed: Some(self.seed),
            output_dir: self.output_dir.clone(),
            roads: Some(
                self.net
                    .roads
                    .iter()
                    .zip(&self.net.rho0)
                    .map(|(r, rho0)| RoadFile {
                        polyline: Some(r.polyline().to_vec()),
                        fd: Some(r.fd),
                        gamma: Some(r.gamma),
                        eta: Some(r.eta),
                        eps_density: Some(r.eps_density),
                        rho0: Some(rho0.clone()),
                    })
                    .collect(),
            ),
            junctions: self
                .net
                .junctions
                .iter()
                .map(|j| JunctionFile {
                    incoming: Some(j.incoming.clone()),
                    outgoing: Some(j.outgoing.clone()),
                })
                .collect(),
            inflows: self
                .net
                .inflows
                .iter()
                .map(|b| InflowFile {
                    road: Some(b.road),
                    f_in: Some(b.f_in.clone()),
                    cap_in: Some(b.cap_in),
                    q0: Some(b.q0),
                    eps_queue: Some(b.eps_queue),
                    lambda_q: Some(b.lambda_q),
                })
                .collect(),
            outflows: self
                .net
                .outflows
                .iter()
                .map(|b| OutflowFile {
                    road: Some(b.road),
                    f_out: Some(b.f_out.clone()),
                    eps_out: Some(b.eps_out),
                })
                .collect(),
            mesh: Some(self.mesh_spec.clone()),
            wind: Some(self.wind.clone()),
            pollution: Some(PollutionFile {
                mu: Some(self.pollution.mu),
                kappa: Some(self.pollution.kappa),
                phi0: Some(self.pollution.phi0.clone()),
            }),
            discretization: Some(DiscretizationFile {
                dt: Some(self.disc.dt),
                steps: Some(self.disc.steps),
                cell_size: match &self.cell_spec {
                    CellSpec::Size(s) => Some(*s),
                    CellSpec::Counts(_) => None,
                },
                cells: match &self.cell_spec {
                    CellSpec::Size(_) => None,
                    CellSpec::Counts(c) => Some(c.clone()),
                },
                cfl_safety: Some(self.disc.cfl_safety),
                substeps: Some(self.substeps),
            }),
            controls: Some(ControlsFile {
                beta_lo: Some(self.solver.beta_lo),
                beta_hi: Some(self.solver.beta_hi),
                polish_ga_best: Some(self.solver.polish_ga_best),
            }),
            ga: Some(self.solver.ga.clone()),
            leader_local_search: Some(self.solver.leader_local.clone()),
            follower: Some(self.solver.follower.clone()),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
    }

    /// Routes the scenario seed into every random stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.solver.ga.rng_seed = seed;
        self.solver.follower.seed = seed.wrapping_add(1);
        self.solver.follower.ga.rng_seed = seed.wrapping_add(2);
    }

    /// Switches to restriction bounds `[lo, hi]`, re-checking feasibility.
    pub fn set_beta_bounds(&mut self, lo: f64, hi: f64) -> Result<()> {
        ControlEncoder::beta(&self.net, lo, hi)?;
        self.solver.beta_lo = lo;
        self.solver.beta_hi = hi;
        Ok(())
    }

    pub fn traffic(&self) -> TrafficProblem<'_> {
        TrafficProblem {
            net: &self.net,
            disc: &self.disc,
            weights: &self.weights,
        }
    }

    pub fn pollution_problem(&self) -> PollutionProblem<'_> {
        PollutionProblem {
            mesh: &self.mesh,
            wind: &self.wind,
            params: &self.pollution,
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::from(&self.disc).with_substeps(self.substeps)
    }
}

fn build(file: ScenarioFile, base: &Path, default_id: &str) -> Result<Scenario> {
    let mut need = Needs(Vec::new());
    let mut problems: Vec<String> = Vec::new();

    let mut roads = Vec::new();
    let mut rho0 = Vec::new();
    let road_files = need.get(&file.roads, || "roads".into()).unwrap_or_default();
    for (i, r) in road_files.iter().enumerate() {
        let polyline = need.get(&r.polyline, || format!("roads[{i}].polyline"));
        let fd = need.get(&r.fd, || format!("roads[{i}].fd"));
        let gamma = need.get(&r.gamma, || format!("roads[{i}].gamma"));
        let eta = need.get(&r.eta, || format!("roads[{i}].eta"));
        let eps = need.get(&r.eps_density, || format!("roads[{i}].eps_density"));
        rho0.push(r.rho0.clone().unwrap_or_default());
        if let (Some(p), Some(fd), Some(g), Some(e), Some(eps)) = (polyline, fd, gamma, eta, eps) {
            match Road::new(p, fd, g, e, eps) {
                Ok(road) => roads.push(road),
                Err(e) => problems.push(format!("roads[{i}]: {e}")),
            }
        }
    }
    let junctions: Vec<Junction> = file
        .junctions
        .iter()
        .enumerate()
        .map(|(j, f)| {
            Junction::new(
                need.get(&f.incoming, || format!("junctions[{j}].incoming")).unwrap_or_default(),
                need.get(&f.outgoing, || format!("junctions[{j}].outgoing")).unwrap_or_default(),
            )
        })
        .collect();
    let mut inflows = Vec::new();
    for (y, f) in file.inflows.iter().enumerate() {
        let road = need.get(&f.road, || format!("inflows[{y}].road"));
        let f_in = need.get(&f.f_in, || format!("inflows[{y}].f_in"));
        let cap_in = need.get(&f.cap_in, || format!("inflows[{y}].cap_in"));
        let eps_queue = need.get(&f.eps_queue, || format!("inflows[{y}].eps_queue"));
        if let (Some(road), Some(f_in), Some(cap_in), Some(eps_queue)) = (road, f_in, cap_in, eps_queue) {
            inflows.push(BoundaryInflow {
                road,
                f_in,
                cap_in,
                q0: f.q0.unwrap_or(0.0),
                eps_queue,
                lambda_q: f.lambda_q.unwrap_or(0.0),
            });
        }
    }
    let mut outflows = Vec::new();
    for (z, f) in file.outflows.iter().enumerate() {
        let road = need.get(&f.road, || format!("outflows[{z}].road"));
        let f_out = need.get(&f.f_out, || format!("outflows[{z}].f_out"));
        let eps_out = need.get(&f.eps_out, || format!("outflows[{z}].eps_out"));
        if let (Some(road), Some(f_out), Some(eps_out)) = (road, f_out, eps_out) {
            outflows.push(BoundaryOutflow { road, f_out, eps_out });
        }
    }

    let mesh_spec = need.get(&file.mesh, || "mesh".into());
    let wind = need.get(&file.wind, || "wind".into());
    let pollution_file = need.get(&file.pollution, || "pollution".into()).unwrap_or_default();
    let mu = need.get(&pollution_file.mu, || "pollution.mu".into());
    let kappa = need.get(&pollution_file.kappa, || "pollution.kappa".into());
    let disc_file = need.get(&file.discretization, || "discretization".into()).unwrap_or_default();
    let dt = need.get(&disc_file.dt, || "discretization.dt".into());
    let steps = need.get(&disc_file.steps, || "discretization.steps".into());
    let cell_spec = match (&disc_file.cell_size, &disc_file.cells) {
        (Some(s), None) => Some(CellSpec::Size(*s)),
        (None, Some(c)) => Some(CellSpec::Counts(c.clone())),
        (Some(_), Some(_)) => {
            problems.push("discretization: give either cell_size or cells, not both".into());
            None
        }
        (None, None) => {
            problems.push("discretization.cell_size required (or discretization.cells)".into());
            None
        }
    };
    problems.splice(0..0, need.0);

    let structurally_complete = problems.is_empty();
    let net = Network {
        roads,
        junctions,
        inflows,
        outflows,
        rho0,
    };
    if structurally_complete {
        problems.extend(validate_network(&net).messages());
        for (i, r) in net.rho0.iter().enumerate() {
            let bad = match r {
                InitialDensity::Uniform(v) => !(0.0..=net.roads[i].fd.rho_max()).contains(v),
                InitialDensity::Cells(v) => v.iter().any(|x| !(0.0..=net.roads[i].fd.rho_max()).contains(x)),
            };
            if bad {
                problems.push(format!("roads[{i}].rho0 outside [0, rho_max]"));
            }
        }
    }

    let mesh_spec = mesh_spec.map(|spec| match spec {
        MeshSpec::File(p) => {
            let joined = if p.is_absolute() { p } else { base.join(p) };
            MeshSpec::File(joined.canonicalize().unwrap_or(joined))
        }
        other => other,
    });
    let mesh = match &mesh_spec {
        Some(MeshSpec::File(p)) => read_mesh(p).map_err(|e| problems.push(format!("mesh: {e}"))).ok(),
        Some(MeshSpec::Rectangle { rectangle: r }) => TriMesh::rectangle(r.origin, r.width, r.height, r.nx, r.ny)
            .map_err(|e| problems.push(format!("mesh: {e}")))
            .ok(),
        None => None,
    };

    let pollution = PollutionParams {
        mu: mu.unwrap_or(0.0),
        kappa: kappa.unwrap_or(0.0),
        phi0: pollution_file.phi0.clone().unwrap_or_default(),
    };
    if let Err(Error::Validation(v)) = pollution.check() {
        problems.extend(v.into_iter().map(|m| format!("pollution: {m}")));
    }
    if let (Some(mesh), Some(w)) = (&mesh, &wind) {
        if let Err(e) = w.check(mesh) {
            problems.push(format!("wind: {e}"));
        }
        if let Err(e) = pollution.phi0.values(mesh) {
            problems.push(format!("pollution.phi0: {e}"));
        }
    }

    let mut disc = None;
    if let (true, Some(dt), Some(steps), Some(spec)) = (structurally_complete, dt, steps, &cell_spec) {
        let built = match spec {
            CellSpec::Size(s) => Discretization::with_min_cell_size(&net, dt, steps, *s),
            CellSpec::Counts(c) => Discretization::new(&net, dt, steps, c.clone()),
        };
        match built {
            Ok(d) => {
                let safety = disc_file.cfl_safety.unwrap_or(d.cfl_safety);
                let d = d.with_cfl_safety(safety);
                if let Err(e) = d.check_cfl(&net) {
                    problems.push(format!("discretization: {e}"));
                }
                for (i, r) in net.rho0.iter().enumerate() {
                    if let Err(e) = r.cells(d.cells[i]) {
                        problems.push(format!("roads[{i}].rho0: {e}"));
                    }
                }
                disc = Some(d);
            }
            Err(e) => problems.push(format!("discretization: {e}")),
        }
    }
    if let (Some(d), Some(mesh), Some(w)) = (&disc, &mesh, &wind) {
        if problems.is_empty() {
            match build_road_mesh_map(&net, mesh, d, w) {
                Err(Error::Validation(v)) => problems.extend(v),
                Err(e) => problems.push(e.to_string()),
                Ok(_) => {}
            }
        }
    }
    let substeps = disc_file.substeps.unwrap_or(1);
    if substeps == 0 {
        problems.push("discretization.substeps must be >= 1".into());
    }

    let controls = file.controls.unwrap_or_default();
    let mut solver = StackelbergConfig {
        beta_lo: controls.beta_lo.unwrap_or(0.0),
        beta_hi: controls.beta_hi.unwrap_or(1.0),
        polish_ga_best: controls.polish_ga_best.unwrap_or(true),
        ..StackelbergConfig::default()
    };
    if let Some(ga) = file.ga {
        solver.ga = ga;
    }
    if let Some(ls) = file.leader_local_search {
        solver.leader_local = ls;
    }
    if let Some(f) = file.follower {
        solver.follower = f;
    }
    for (name, r) in [
        ("ga", solver.ga.check()),
        ("leader_local_search", solver.leader_local.check()),
        ("follower.local", solver.follower.local.check()),
        ("follower.ga", solver.follower.ga.check()),
    ] {
        if let Err(Error::Validation(v)) = r {
            problems.extend(v.into_iter().map(|m| format!("{name}: {m}")));
        }
    }
    if structurally_complete {
        match ControlEncoder::beta(&net, solver.beta_lo, solver.beta_hi) {
            Err(Error::Validation(v)) => problems.extend(v),
            Err(e) => problems.push(e.to_string()),
            Ok(_) => {}
        }
    }

    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let weights = FunctionalWeights::from_network(&net);
    let mut scenario = Scenario {
        id: file.id.unwrap_or_else(|| default_id.to_string()),
        net,
        mesh_spec: mesh_spec.unwrap(),
        mesh: mesh.unwrap(),
        wind: wind.unwrap(),
        pollution,
        weights,
        disc: disc.unwrap(),
        cell_spec: cell_spec.unwrap(),
        substeps,
        solver,
        seed: 0,
        output_dir: file.output_dir,
    };
    scenario.apply_seed(file.seed.unwrap_or(0));
    Ok(scenario)
}
