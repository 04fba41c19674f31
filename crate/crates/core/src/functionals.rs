//! Discrete travel-time and pollution functionals.

use serde::{Deserialize, Serialize};

use crate::dispersion::{cell_emissions, eval_on_roads, total_mass, RoadMeshMap, ScalarFieldSeries};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::network::Network;
use crate::traffic::{Discretization, TrafficTrajectory};

/// Weights of the travel-time functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FunctionalWeights {
    pub eps_density: Vec<f64>,
    pub eps_queue: Vec<f64>,
    pub eps_out: Vec<f64>,
}

impl FunctionalWeights {
    pub fn from_network(net: &Network) -> Self {
        FunctionalWeights {
            eps_density: net.roads.iter().map(|r| r.eps_density).collect(),
            eps_queue: net.inflows.iter().map(|b| b.eps_queue).collect(),
            eps_out: net.outflows.iter().map(|b| b.eps_out).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        FunctionalWeights {
            eps_density: s(&self.eps_density),
            eps_queue: s(&self.eps_queue),
            eps_out: s(&self.eps_out),
        }
    }

    pub fn check(&self, net: &Network) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v, want) in [
            ("eps_density", &self.eps_density, net.roads.len()),
            ("eps_queue", &self.eps_queue, net.inflows.len()),
            ("eps_out", &self.eps_out, net.outflows.len()),
        ] {
            if v.len() != want {
                problems.push(format!("{name} has {} entries, expected {want}", v.len()));
            }
            if let Some(k) = v.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
                problems.push(format!("{name}[{k}] must be finite and >= 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Shape(problems.join("; ")))
        }
    }
}

/// `Δt Σ_{n=0..N} (Σ_y ε^q q + Σ_i ε_i Δs_i Σ_h ρ − Σ_z ε^out f_z)`, where
/// `f_z = min(f_out, D(ρ_{z,M_z}))` is the exit flux at the road end.
pub fn eval_jt(traj: &TrafficTrajectory, weights: &FunctionalWeights, net: &Network, disc: &Discretization) -> Result<f64> {
    weights.check(net)?;
    let mut total = 0.0;
    for state in &traj.states {
        if state.rho.len() != net.roads.len() || state.q.len() != net.inflows.len() {
            return Err(Error::Shape("trajectory does not match the network".into()));
        }
        let mut level = 0.0;
        for (y, q) in state.q.iter().enumerate() {
            level += weights.eps_queue[y] * q;
        }
        for (i, cells) in state.rho.iter().enumerate() {
            level += weights.eps_density[i] * disc.ds[i] * cells.iter().sum::<f64>();
        }
        for (z, out) in net.outflows.iter().enumerate() {
            let road = &net.roads[out.road];
            let rho_end = *state.rho[out.road].last().unwrap_or(&0.0);
            let f = road.fd.demand_unchecked(rho_end).min(out.f_out.at(state.t));
            level -= weights.eps_out[z] * f;
        }
        total += level;
    }
    Ok(traj.dt * total)
}

/// Leader functional through the adjoint, with every traffic-independent
/// quantity precomputed once.
#[derive(Debug, Clone)]
pub struct AdjointEvaluator {
    /// `g` at road cell midpoints, `[n][road][cell]`.
    pub g_roads: Vec<Vec<Vec<f64>>>,
    queue_weights: Vec<Vec<f64>>,
    initial_term: f64,
    dt: f64,
}

impl AdjointEvaluator {
    pub fn new(g: &ScalarFieldSeries, map: &RoadMeshMap, net: &Network, mesh: &TriMesh, phi0: &[f64], disc: &Discretization) -> Result<Self> {
        if g.steps() != disc.steps {
            return Err(Error::Shape(format!(
                "adjoint has {} steps, traffic grid has {}",
                g.steps(),
                disc.steps
            )));
        }
        if (g.dt - disc.dt).abs() > 1e-12 * disc.dt {
            return Err(Error::Shape(format!("adjoint dt {} differs from traffic dt {}", g.dt, disc.dt)));
        }
        if phi0.len() != mesh.vertex_count() || g.values[0].len() != mesh.vertex_count() {
            return Err(Error::Shape("adjoint and initial field must live on the mesh".into()));
        }
        let g_roads = eval_on_roads(g, map);
        let queue_weights = (0..=disc.steps)
            .map(|n| {
                net.inflows
                    .iter()
                    .enumerate()
                    .map(|(y, b)| {
                        if n == 0 || !map.inflow_active[y][n] {
                            0.0
                        } else {
                            b.lambda_q * g_roads[n][b.road][0]
                        }
                    })
                    .collect()
            })
            .collect();
        let initial_term = mesh
            .lumped_mass()
            .iter()
            .zip(phi0)
            .zip(&g.values[0])
            .map(|((m, p), g0)| m * p * g0)
            .sum();
        Ok(AdjointEvaluator {
            g_roads,
            queue_weights,
            initial_term,
            dt: disc.dt,
        })
    }

    /// `Δt Σ_{n≥1} Σ_i Σ_h Δs_i(γf + ηρ) g + Σ_{n≥1} Σ_y λ_y q_y g(σ_y(s_{y,1})) + Σ_j m_j φ⁰_j g⁰_j`.
    /// The queue term carries no `Δt`.
    pub fn evaluate(&self, traj: &TrafficTrajectory, net: &Network, disc: &Discretization) -> Result<f64> {
        if traj.states.len() != self.g_roads.len() {
            return Err(Error::Shape(format!(
                "trajectory has {} levels, adjoint has {}",
                traj.states.len(),
                self.g_roads.len()
            )));
        }
        let emissions = cell_emissions(traj, net, disc);
        let mut emission = 0.0;
        let mut queue = 0.0;
        for (n, e_step) in emissions.iter().enumerate().take(traj.states.len()).skip(1) {
            for (e_road, g_road) in e_step.iter().zip(&self.g_roads[n]) {
                if e_road.len() != g_road.len() {
                    return Err(Error::Shape("cell count differs between trajectory and map".into()));
                }
                emission += e_road.iter().zip(g_road).map(|(e, g)| e * g).sum::<f64>();
            }
            queue += traj.states[n].q.iter().zip(&self.queue_weights[n]).map(|(q, w)| q * w).sum::<f64>();
        }
        Ok(self.dt * emission + queue + self.initial_term)
    }

    pub fn initial_term(&self) -> f64 {
        self.initial_term
    }
}

/// One-shot form of [`AdjointEvaluator::evaluate`].
#[allow(clippy::too_many_arguments)]
pub fn eval_jp_adjoint(
    traj: &TrafficTrajectory,
    g: &ScalarFieldSeries,
    map: &RoadMeshMap,
    net: &Network,
    mesh: &TriMesh,
    phi0: &[f64],
    disc: &Discretization,
) -> Result<f64> {
    AdjointEvaluator::new(g, map, net, mesh, phi0, disc)?.evaluate(traj, net, disc)
}

/// Mean concentration `1/(T|Ω|) ∫∫ φ`: lumped nodal quadrature in space,
/// trapezoid in time.
pub fn eval_jp_direct(phi: &ScalarFieldSeries, mesh: &TriMesh) -> f64 {
    let n = phi.steps();
    if n == 0 {
        return total_mass(mesh, &phi.values[0]) / mesh.domain_area();
    }
    let mut integral = 0.0;
    for (k, slice) in phi.values.iter().enumerate() {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        integral += w * total_mass(mesh, slice);
    }
    integral * phi.dt / (phi.dt * n as f64 * mesh.domain_area())
}

/// Function evaluation counters reported with a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EvalCounts {
    pub traffic_simulations: usize,
    pub adjoint_solves: usize,
    pub jp_evaluations: usize,
    pub follower_solves: usize,
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub id: String,
    #[serde(rename = "JT")]
    pub jt: f64,
    #[serde(rename = "JP")]
    pub jp: f64,
    pub wall_time_s: f64,
    pub evaluations: EvalCounts,
}

/// Fixed-width text table of reports, one line per run.
pub fn format_report_table(rows: &[FunctionalReport]) -> String {
    let width = rows.iter().map(|r| r.id.len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<width$}  {:>14}  {:>14}  {:>10}\n", "scenario", "J_T", "J_P", "time [s]");
    for r in rows {
        s.push_str(&format!("{:<width$}  {:>14.4e}  {:>14.4e}  {:>10.2}\n", r.id, r.jt, r.jp, r.wall_time_s));
    }
    s
}
