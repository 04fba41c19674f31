//! Pollutant transport on the city mesh and its adjoint.
//!
//! Space: P1 elements with lumped mass. Convection is assembled in
//! skew-symmetric form `S = (C - Cᵀ)/2` plus `½|v·n|` on boundary vertices and
//! stabilized by discrete upwinding, so the operator for `-v` is the exact
//! transpose of the operator for `v`. This yields the Robin condition on the
//! inflow boundary and a free outflow elsewhere. Time: implicit Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{PointLocation, TriMesh};
use crate::network::Network;
use crate::sparse::{bicgstab, CsrMatrix, TripletBuilder};
use crate::traffic::{Discretization, TrafficTrajectory};

const SOLVER_TOL: f64 = 1e-13;
const SOLVER_MAX_ITER: usize = 1000;

/// Wind velocity in km/h, piecewise linear in time and held outside the
/// sampled window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindField {
    Uniform {
        velocity: [f64; 2],
    },
    /// Spatially uniform velocity sampled at increasing times.
    UniformSeries {
        times: Vec<f64>,
        velocities: Vec<[f64; 2]>,
    },
    /// Nodal samples, `values[k][vertex]` at `times[k]`.
    Nodal {
        times: Vec<f64>,
        values: Vec<Vec<[f64; 2]>>,
    },
}

impl Default for WindField {
    fn default() -> Self {
        WindField::Uniform { velocity: [0.0, 0.0] }
    }
}

fn bracket(times: &[f64], t: f64) -> (usize, usize, f64) {
    let last = times.len() - 1;
    if t <= times[0] {
        return (0, 0, 0.0);
    }
    if t >= times[last] {
        return (last, last, 0.0);
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let theta = (t - times[k]) / (times[k + 1] - times[k]);
    (k, k + 1, theta)
}

fn lerp2(a: [f64; 2], b: [f64; 2], theta: f64) -> [f64; 2] {
    [a[0] + theta * (b[0] - a[0]), a[1] + theta * (b[1] - a[1])]
}

impl WindField {
    pub fn uniform(vx: f64, vy: f64) -> Self {
        WindField::Uniform { velocity: [vx, vy] }
    }

    pub fn check(&self, mesh: &TriMesh) -> Result<()> {
        let check_times = |times: &[f64], count: usize| -> Result<()> {
            if times.is_empty() || times.len() != count {
                return Err(Error::Config(format!(
                    "wind has {} times for {count} samples",
                    times.len()
                )));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
                return Err(Error::Config("wind sample times must be finite and strictly increasing".into()));
            }
            Ok(())
        };
        let finite = |v: &[f64; 2]| v[0].is_finite() && v[1].is_finite();
        match self {
            WindField::Uniform { velocity } => {
                if !finite(velocity) {
                    return Err(Error::Config("wind velocity is not finite".into()));
                }
            }
            WindField::UniformSeries { times, velocities } => {
                check_times(times, velocities.len())?;
                if !velocities.iter().all(finite) {
                    return Err(Error::Config("wind velocity is not finite".into()));
                }
            }
            WindField::Nodal { times, values } => {
                check_times(times, values.len())?;
                for (k, v) in values.iter().enumerate() {
                    if v.len() != mesh.vertex_count() {
                        return Err(Error::Shape(format!(
                            "wind sample {k} has {} vectors, mesh has {} vertices",
                            v.len(),
                            mesh.vertex_count()
                        )));
                    }
                    if !v.iter().all(finite) {
                        return Err(Error::Config(format!("wind sample {k} is not finite")));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when the field does not change in time.
    pub fn is_steady(&self) -> bool {
        match self {
            WindField::Uniform { .. } => true,
            WindField::UniformSeries { velocities, .. } => velocities.windows(2).all(|w| w[0] == w[1]),
            WindField::Nodal { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// Nodal velocities at time `t`.
    pub fn nodal_at(&self, mesh: &TriMesh, t: f64) -> Vec<[f64; 2]> {
        match self {
            WindField::Uniform { velocity } => vec![*velocity; mesh.vertex_count()],
            WindField::UniformSeries { times, velocities } => {
                let (a, b, theta) = bracket(times, t);
                vec![lerp2(velocities[a], velocities[b], theta); mesh.vertex_count()]
            }
            WindField::Nodal { times, values } => {
                let (a, b, theta) = bracket(times, t);
                values[a]
                    .iter()
                    .zip(&values[b])
                    .map(|(&va, &vb)| lerp2(va, vb, theta))
                    .collect()
            }
        }
    }

    /// The field `τ ↦ -v(T - τ)` driving the adjoint in reversed time.
    pub fn reversed(&self, horizon: f64) -> WindField {
        let neg = |v: [f64; 2]| [-v[0], -v[1]];
        match self {
            WindField::Uniform { velocity } => WindField::Uniform {
                velocity: neg(*velocity),
            },
            WindField::UniformSeries { times, velocities } => WindField::UniformSeries {
                times: times.iter().rev().map(|t| horizon - t).collect(),
                velocities: velocities.iter().rev().map(|&v| neg(v)).collect(),
            },
            WindField::Nodal { times, values } => WindField::Nodal {
                times: times.iter().rev().map(|t| horizon - t).collect(),
                values: values
                    .iter()
                    .rev()
                    .map(|vs| vs.iter().map(|&v| neg(v)).collect())
                    .collect(),
            },
        }
    }

    /// Per boundary edge: `true` when the midpoint velocity points into the
    /// domain (`v·n < 0`). Ties count as outflow.
    pub fn inflow_edges(&self, mesh: &TriMesh, t: f64) -> Vec<bool> {
        let v = self.nodal_at(mesh, t);
        mesh.boundary_edges()
            .iter()
            .map(|e| {
                let mid = lerp2(v[e.a], v[e.b], 0.5);
                mid[0] * e.normal[0] + mid[1] * e.normal[1] < 0.0
            })
            .collect()
    }
}

/// Nodal initial concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodalInitial {
    Uniform(f64),
    Nodal(Vec<f64>),
}

impl Default for NodalInitial {
    fn default() -> Self {
        NodalInitial::Uniform(0.0)
    }
}

impl NodalInitial {
    pub fn values(&self, mesh: &TriMesh) -> Result<Vec<f64>> {
        match self {
            NodalInitial::Uniform(c) => Ok(vec![*c; mesh.vertex_count()]),
            NodalInitial::Nodal(v) if v.len() == mesh.vertex_count() => Ok(v.clone()),
            NodalInitial::Nodal(v) => Err(Error::Shape(format!(
                "initial concentration has {} values, mesh has {} vertices",
                v.len(),
                mesh.vertex_count()
            ))),
        }
    }
}

/// Diffusion (km²/h), extinction rate (1/h) and initial concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PollutionParams {
    pub mu: f64,
    pub kappa: f64,
    #[serde(default)]
    pub phi0: NodalInitial,
}

impl PollutionParams {
    pub fn new(mu: f64, kappa: f64) -> Self {
        PollutionParams {
            mu,
            kappa,
            phi0: NodalInitial::Uniform(0.0),
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            problems.push(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            problems.push(format!("kappa must be finite and >= 0, got {}", self.kappa));
        }
        let negative = match &self.phi0 {
            NodalInitial::Uniform(c) => !(*c >= 0.0),
            NodalInitial::Nodal(v) => v.iter().any(|c| !(*c >= 0.0)),
        };
        if negative {
            problems.push("phi0 must be >= 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Time grid of a transport solve: the traffic step, optionally subdivided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Self {
        TimeGrid { dt, steps, substeps: 1 }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.dt * n as f64
    }
}

impl From<&Discretization> for TimeGrid {
    fn from(disc: &Discretization) -> Self {
        TimeGrid::new(disc.dt, disc.steps)
    }
}

/// Nodal field at each of the `N + 1` time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldSeries {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl ScalarFieldSeries {
    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn time(&self, n: usize) -> f64 {
        self.dt * n as f64
    }

    pub fn reversed(mut self) -> Self {
        self.values.reverse();
        self
    }

    /// Trapezoid-in-time average over the horizon, per vertex.
    pub fn time_average(&self) -> Vec<f64> {
        let n = self.steps();
        let nv = self.values.first().map_or(0, Vec::len);
        if n == 0 {
            return self.values.first().cloned().unwrap_or_default();
        }
        let mut avg = vec![0.0; nv];
        for (k, slice) in self.values.iter().enumerate() {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 } / n as f64;
            for (a, v) in avg.iter_mut().zip(slice) {
                *a += w * v;
            }
        }
        avg
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Nodal source rates (mass per hour) at each traffic time level.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalLoads {
    pub values: Vec<Vec<f64>>,
}

impl NodalLoads {
    pub fn zeros(levels: usize, vertices: usize) -> Self {
        NodalLoads {
            values: vec![vec![0.0; vertices]; levels],
        }
    }

    pub fn total(&self, n: usize) -> f64 {
        self.values[n].iter().sum()
    }

    pub fn add(&mut self, other: &NodalLoads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Precomputed location of every road cell midpoint and of every inflow
/// point in the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadMeshMap {
    /// `cells[road][cell]`.
    pub cells: Vec<Vec<PointLocation>>,
    /// Boundary vertex nearest the start of each inflow road.
    pub inflow_vertices: Vec<usize>,
    /// `inflow_active[y][n]`: the vertex lies on an inflow edge at step `n`.
    pub inflow_active: Vec<Vec<bool>>,
}

/// Locates the road cell midpoints `σ_i((h + ½)Δs_i)` and the inflow vertices.
pub fn build_road_mesh_map(
    net: &Network,
    mesh: &TriMesh,
    disc: &Discretization,
    wind: &WindField,
) -> Result<RoadMeshMap> {
    if disc.cells.len() != net.roads.len() {
        return Err(Error::Shape(format!(
            "discretization has {} roads, network has {}",
            disc.cells.len(),
            net.roads.len()
        )));
    }
    let mut cells = Vec::with_capacity(net.roads.len());
    let mut outside = Vec::new();
    for (i, road) in net.roads.iter().enumerate() {
        let mut locs = Vec::with_capacity(disc.cells[i]);
        for h in 0..disc.cells[i] {
            let p = road.point_at((h as f64 + 0.5) * disc.ds[i]);
            match mesh.locate(p) {
                Some(loc) => locs.push(loc),
                None => outside.push(format!("road {i} cell {h} midpoint {p:?} lies outside the mesh")),
            }
        }
        cells.push(locs);
    }
    if !outside.is_empty() {
        return Err(Error::Validation(outside));
    }

    let mut vertex_edges = vec![Vec::new(); mesh.vertex_count()];
    for (k, e) in mesh.boundary_edges().iter().enumerate() {
        vertex_edges[e.a].push(k);
        vertex_edges[e.b].push(k);
    }
    let mut inflow_vertices = Vec::with_capacity(net.inflows.len());
    for inflow in &net.inflows {
        let start = net.roads[inflow.road].point_at(0.0);
        let v = mesh
            .nearest_boundary_vertex(start)
            .ok_or_else(|| Error::Config("mesh has no boundary vertices".into()))?;
        inflow_vertices.push(v);
    }
    let mut inflow_active = vec![Vec::with_capacity(disc.steps + 1); net.inflows.len()];
    let steady = wind.is_steady().then(|| wind.inflow_edges(mesh, 0.0));
    for n in 0..=disc.steps {
        let edges = match &steady {
            Some(e) => e.clone(),
            None => wind.inflow_edges(mesh, disc.time(n)),
        };
        for (y, &v) in inflow_vertices.iter().enumerate() {
            inflow_active[y].push(vertex_edges[v].iter().any(|&k| edges[k]));
        }
    }
    Ok(RoadMeshMap {
        cells,
        inflow_vertices,
        inflow_active,
    })
}

/// Emission rate `Δs_i (γ_i f_i(ρ) + η_i ρ)` of every cell, `[n][road][cell]`.
pub fn cell_emissions(traj: &TrafficTrajectory, net: &Network, disc: &Discretization) -> Vec<Vec<Vec<f64>>> {
    traj.states
        .iter()
        .map(|state| {
            state
                .rho
                .iter()
                .enumerate()
                .map(|(i, cells)| {
                    let road = &net.roads[i];
                    cells
                        .iter()
                        .map(|&r| disc.ds[i] * (road.gamma * road.fd.flux_unchecked(r) + road.eta * r))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Distributes the cell emissions to mesh vertices by barycentric weights.
pub fn assemble_emissions(
    traj: &TrafficTrajectory,
    map: &RoadMeshMap,
    net: &Network,
    disc: &Discretization,
    mesh: &TriMesh,
) -> NodalLoads {
    let per_cell = cell_emissions(traj, net, disc);
    let mut loads = NodalLoads::zeros(per_cell.len(), mesh.vertex_count());
    for (n, roads) in per_cell.iter().enumerate() {
        let out = &mut loads.values[n];
        for (i, cells) in roads.iter().enumerate() {
            for (h, e) in cells.iter().enumerate() {
                let loc = &map.cells[i][h];
                for k in 0..3 {
                    out[loc.vertices[k]] += loc.weights[k] * e;
                }
            }
        }
    }
    loads
}

/// Queue point sources `λ_y q_y` on the nearest boundary vertex, active only
/// while that vertex is on the inflow boundary.
pub fn assemble_queue_sources(
    traj: &TrafficTrajectory,
    map: &RoadMeshMap,
    net: &Network,
    mesh: &TriMesh,
) -> NodalLoads {
    let mut loads = NodalLoads::zeros(traj.states.len(), mesh.vertex_count());
    for (n, state) in traj.states.iter().enumerate() {
        for (y, inflow) in net.inflows.iter().enumerate() {
            if inflow.lambda_q != 0.0 && map.inflow_active[y][n] {
                loads.values[n][map.inflow_vertices[y]] += inflow.lambda_q * state.q[y];
            }
        }
    }
    loads
}

/// `I + dt·(κ I - L + ½|B|)` premultiplied by the lumped mass.
fn assemble_system(mesh: &TriMesh, velocity: &[[f64; 2]], mu: f64, kappa: f64, dt: f64) -> CsrMatrix {
    let nv = mesh.vertex_count();
    let mut conv = TripletBuilder::new(nv);
    let mut stiff = TripletBuilder::new(nv);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let grads = mesh.basis_gradients(t);
        let area = mesh.areas()[t];
        let vsum = [
            velocity[tri[0]][0] + velocity[tri[1]][0] + velocity[tri[2]][0],
            velocity[tri[0]][1] + velocity[tri[1]][1] + velocity[tri[2]][1],
        ];
        for a in 0..3 {
            // ∫ φ_a v = |T|/12 (v_a + Σ v_k)
            let w = [
                area / 12.0 * (velocity[tri[a]][0] + vsum[0]),
                area / 12.0 * (velocity[tri[a]][1] + vsum[1]),
            ];
            for b in 0..3 {
                conv.add(tri[a], tri[b], w[0] * grads[b][0] + w[1] * grads[b][1]);
                stiff.add(tri[a], tri[b], area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]));
            }
        }
    }
    let c = conv.build();
    let k = stiff.build();

    let mut boundary = vec![0.0; nv];
    for e in mesh.boundary_edges() {
        let (va, vb) = (velocity[e.a], velocity[e.b]);
        let mid = lerp2(va, vb, 0.5);
        let sign = if mid[0] * e.normal[0] + mid[1] * e.normal[1] < 0.0 { -1.0 } else { 1.0 };
        let dot = |v: [f64; 2]| v[0] * e.normal[0] + v[1] * e.normal[1];
        boundary[e.a] += 0.5 * sign * e.length / 6.0 * (2.0 * dot(va) + dot(vb));
        boundary[e.b] += 0.5 * sign * e.length / 6.0 * (2.0 * dot(vb) + dot(va));
    }

    let mass = mesh.lumped_mass();
    let mut a = TripletBuilder::new(nv);
    for i in 0..nv {
        let mut diag = mass[i] * (1.0 + dt * kappa) + dt * boundary[i];
        for (j, k_ij) in k.row(i) {
            if j == i {
                diag += dt * mu * k_ij;
                continue;
            }
            let s_ij = 0.5 * (c.get(i, j) - c.get(j, i));
            let q_ij = -s_ij - mu * k_ij;
            let q_ji = s_ij - mu * k_ij;
            let d_ij = 0.0f64.max(-q_ij).max(-q_ji);
            a.add(i, j, -dt * (q_ij + d_ij));
            diag += dt * d_ij;
        }
        a.add(i, i, diag);
    }
    a.build()
}

/// Implicit Euler transport solve. `loads(n, out)` fills the nodal source
/// rate at traffic level `n`; substeps interpolate linearly between levels.
pub fn solve_transport(
    mesh: &TriMesh,
    wind: &WindField,
    mu: f64,
    kappa: f64,
    phi0: Vec<f64>,
    grid: TimeGrid,
    mut loads: impl FnMut(usize, &mut [f64]),
) -> Result<ScalarFieldSeries> {
    let nv = mesh.vertex_count();
    if phi0.len() != nv {
        return Err(Error::Shape(format!("initial field has {} values, mesh has {nv}", phi0.len())));
    }
    wind.check(mesh)?;
    let substeps = grid.substeps.max(1);
    let h = grid.dt / substeps as f64;
    let mass = mesh.lumped_mass();
    let steady = wind.is_steady().then(|| assemble_system(mesh, &wind.nodal_at(mesh, 0.0), mu, kappa, h));

    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(phi0);
    let mut prev = vec![0.0; nv];
    let mut next = vec![0.0; nv];
    loads(0, &mut prev);
    let mut rhs = vec![0.0; nv];
    for n in 0..grid.steps {
        next.iter_mut().for_each(|v| *v = 0.0);
        loads(n + 1, &mut next);
        let mut phi = values[n].clone();
        for sub in 0..substeps {
            let theta = (sub + 1) as f64 / substeps as f64;
            let t = grid.time(n) + (sub + 1) as f64 * h;
            for j in 0..nv {
                let load = if substeps == 1 { next[j] } else { prev[j] + theta * (next[j] - prev[j]) };
                rhs[j] = mass[j] * phi[j] + h * load;
            }
            let owned;
            let matrix = match &steady {
                Some(m) => m,
                None => {
                    owned = assemble_system(mesh, &wind.nodal_at(mesh, t), mu, kappa, h);
                    &owned
                }
            };
            let stats = bicgstab(matrix, &rhs, &mut phi, SOLVER_TOL, SOLVER_MAX_ITER);
            if !stats.converged || phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    step: n + 1,
                    reason: format!(
                        "linear solve failed (relative residual {:.3e} after {} iterations)",
                        stats.relative_residual, stats.iterations
                    ),
                });
            }
        }
        values.push(phi);
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(ScalarFieldSeries { dt: grid.dt, values })
}

/// Concentration driven by road emissions and optional queue sources.
pub fn solve_pollution(
    mesh: &TriMesh,
    wind: &WindField,
    params: &PollutionParams,
    grid: TimeGrid,
    emissions: &NodalLoads,
    queue_sources: Option<&NodalLoads>,
) -> Result<ScalarFieldSeries> {
    params.check()?;
    let levels = grid.steps + 1;
    if emissions.values.len() != levels || queue_sources.is_some_and(|q| q.values.len() != levels) {
        return Err(Error::Shape(format!("sources must cover {levels} time levels")));
    }
    let phi0 = params.phi0.values(mesh)?;
    solve_transport(mesh, wind, params.mu, params.kappa, phi0, grid, |n, out| {
        out.copy_from_slice(&emissions.values[n]);
        if let Some(q) = queue_sources {
            for (o, v) in out.iter_mut().zip(&q.values[n]) {
                *o += v;
            }
        }
    })
}

/// Adjoint state `g` with source `1/(T|Ω|)` and `g(T) = 0`, computed as a
/// forward solve under the reversed wind and then reversed in time.
pub fn solve_adjoint(mesh: &TriMesh, wind: &WindField, params: &PollutionParams, grid: TimeGrid) -> Result<ScalarFieldSeries> {
    params.check()?;
    let horizon = grid.horizon();
    if !(horizon > 0.0) {
        return Err(Error::Config("adjoint needs a positive horizon".into()));
    }
    let s = 1.0 / (horizon * mesh.domain_area());
    let source: Vec<f64> = mesh.lumped_mass().iter().map(|m| s * m).collect();
    let reversed = wind.reversed(horizon);
    let h = solve_transport(
        mesh,
        &reversed,
        params.mu,
        params.kappa,
        vec![0.0; mesh.vertex_count()],
        grid,
        |_, out| out.copy_from_slice(&source),
    )?;
    Ok(h.reversed())
}

/// Interpolates every time level of `field` at the road cell midpoints,
/// `[n][road][cell]`.
pub fn eval_on_roads(field: &ScalarFieldSeries, map: &RoadMeshMap) -> Vec<Vec<Vec<f64>>> {
    field
        .values
        .iter()
        .map(|slice| {
            map.cells
                .iter()
                .map(|cells| cells.iter().map(|loc| loc.interpolate(slice)).collect())
                .collect()
        })
        .collect()
}

/// Total mass `Σ m_j φ_j` of a nodal field.
pub fn total_mass(mesh: &TriMesh, values: &[f64]) -> f64 {
    mesh.lumped_mass().iter().zip(values).map(|(m, v)| m * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> TriMesh {
        TriMesh::rectangle([0.0, 0.0], 2.0, 2.0, n, n).unwrap()
    }

    #[test]
    fn zero_sources_zero_field() {
        let mesh = square(4);
        let grid = TimeGrid::new(0.1, 5);
        let loads = NodalLoads::zeros(6, mesh.vertex_count());
        let phi = solve_pollution(&mesh, &WindField::uniform(3.0, 1.0), &PollutionParams::new(0.1, 0.1), grid, &loads, None).unwrap();
        assert_eq!(phi.values.len(), 6);
        assert!(phi.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_source_matches_ode() {
        let mesh = square(3);
        let kappa = 0.6e-2;
        let grid = TimeGrid::new(0.04, 600);
        let levels = grid.steps + 1;
        let loads = NodalLoads {
            values: vec![mesh.lumped_mass().to_vec(); levels],
        };
        let phi = solve_pollution(&mesh, &WindField::default(), &PollutionParams::new(0.3, kappa), grid, &loads, None).unwrap();
        let exact = (1.0 - (-kappa * 24.0f64).exp()) / kappa;
        for v in &phi.values[600] {
            assert!(((v - exact) / exact).abs() < 1e-3);
        }
    }

    #[test]
    fn adjoint_uniform_without_decay() {
        let mesh = square(3);
        let grid = TimeGrid::new(0.25, 8);
        let g = solve_adjoint(&mesh, &WindField::default(), &PollutionParams::new(0.5, 0.0), grid).unwrap();
        let t_end = grid.horizon();
        for (n, slice) in g.values.iter().enumerate() {
            let exact = (t_end - grid.time(n)) / (t_end * mesh.domain_area());
            for v in slice {
                assert!((v - exact).abs() <= 1e-6 * exact.max(1e-300) || (exact == 0.0 && *v == 0.0));
            }
        }
    }

    #[test]
    fn mass_grows_by_emissions() {
        let mesh = square(4);
        let grid = TimeGrid::new(0.05, 10);
        let mut loads = NodalLoads::zeros(11, mesh.vertex_count());
        for (n, l) in loads.values.iter_mut().enumerate() {
            l[7] = 2.0 + n as f64;
            l[12] = 0.5;
        }
        let phi = solve_pollution(&mesh, &WindField::default(), &PollutionParams::new(0.2, 0.0), grid, &loads, None).unwrap();
        for n in 0..10 {
            let growth = total_mass(&mesh, &phi.values[n + 1]) - total_mass(&mesh, &phi.values[n]);
            let expected = grid.dt * loads.total(n + 1);
            assert!(((growth - expected) / expected).abs() < 1e-8);
        }
    }

    #[test]
    fn advected_field_stays_nonnegative() {
        let mesh = square(6);
        let grid = TimeGrid::new(0.02, 30);
        let mut loads = NodalLoads::zeros(31, mesh.vertex_count());
        for l in &mut loads.values {
            l[10] = 5.0;
        }
        let phi = solve_pollution(&mesh, &WindField::uniform(20.0, -7.0), &PollutionParams::new(1e-3, 0.1), grid, &loads, None).unwrap();
        let floor = -1e-9 * phi.max_abs();
        assert!(phi.values.iter().flatten().all(|&v| v >= floor));
    }

    #[test]
    fn reversed_operator_is_transpose() {
        let mesh = square(3);
        let v: Vec<[f64; 2]> = mesh.vertices().iter().map(|p| [1.0 + p[1], 0.5 - p[0]]).collect();
        let neg: Vec<[f64; 2]> = v.iter().map(|w| [-w[0], -w[1]]).collect();
        let a = assemble_system(&mesh, &v, 0.05, 0.2, 0.1);
        let b = assemble_system(&mesh, &neg, 0.05, 0.2, 0.1);
        for i in 0..mesh.vertex_count() {
            for j in 0..mesh.vertex_count() {
                assert!((a.get(i, j) - b.get(j, i)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wind_interpolation_and_reversal() {
        let w = WindField::UniformSeries {
            times: vec![0.0, 1.0],
            velocities: vec![[0.0, 0.0], [2.0, -4.0]],
        };
        let mesh = square(1);
        assert_eq!(w.nodal_at(&mesh, 0.25)[0], [0.5, -1.0]);
        assert_eq!(w.nodal_at(&mesh, 7.0)[0], [2.0, -4.0]);
        let r = w.reversed(2.0);
        // -v(2 - 1.75) = -v(0.25)
        assert_eq!(r.nodal_at(&mesh, 1.75)[0], [-0.5, 1.0]);
        assert!(!w.is_steady());
    }

    #[test]
    fn inflow_edges_follow_midpoint_sign() {
        let mesh = square(2);
        let edges = WindField::uniform(1.0, 0.0).inflow_edges(&mesh, 0.0);
        for (e, inflow) in mesh.boundary_edges().iter().zip(edges) {
            assert_eq!(inflow, e.normal[0] < -0.5);
        }
    }
}
