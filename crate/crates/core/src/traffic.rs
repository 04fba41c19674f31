//! First-order Godunov (demand/supply) finite-volume solver for the LWR
//! network model with junction coupling and point queues at the entries.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{
    Attachment, ControlSet, FundamentalDiagram, JunctionControl, Network, Topology,
};

pub const DEFAULT_CFL_SAFETY: f64 = 0.9;

/// Space-time grid of a traffic run.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub dt: f64,
    pub steps: usize,
    /// Cell count per road.
    pub cells: Vec<usize>,
    /// Cell size per road.
    pub ds: Vec<f64>,
    pub cfl_safety: f64,
}

impl Discretization {
    pub fn new(net: &Network, dt: f64, steps: usize, cells: Vec<usize>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if cells.len() != net.roads.len() {
            return Err(Error::Shape(format!(
                "{} cell counts for {} roads",
                cells.len(),
                net.roads.len()
            )));
        }
        if let Some(i) = cells.iter().position(|&m| m == 0) {
            return Err(Error::Config(format!("road {i} has zero cells")));
        }
        let ds = net
            .roads
            .iter()
            .zip(&cells)
            .map(|(r, &m)| r.length() / m as f64)
            .collect();
        Ok(Discretization {
            dt,
            steps,
            cells,
            ds,
            cfl_safety: DEFAULT_CFL_SAFETY,
        })
    }

    /// Splits every road into the largest number of equal cells that are at
    /// least `min_cell` long (one cell for roads shorter than that).
    pub fn with_min_cell_size(net: &Network, dt: f64, steps: usize, min_cell: f64) -> Result<Self> {
        if !(min_cell > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {min_cell}")));
        }
        let cells = net
            .roads
            .iter()
            .map(|r| ((r.length() / min_cell).floor() as usize).max(1))
            .collect();
        Discretization::new(net, dt, steps, cells)
    }

    pub fn with_cfl_safety(mut self, safety: f64) -> Self {
        self.cfl_safety = safety;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.dt * n as f64
    }

    /// `dt * max|f'| <= cfl_safety * ds` on every road.
    pub fn check_cfl(&self, net: &Network) -> Result<()> {
        for (i, (road, &ds)) in net.roads.iter().zip(&self.ds).enumerate() {
            let speed = road.fd.max_wave_speed();
            if self.dt * speed > self.cfl_safety * ds * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "CFL violated on road {i}: dt * max|f'| = {} > {} * ds = {}",
                    self.dt * speed,
                    self.cfl_safety,
                    self.cfl_safety * ds
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub t: f64,
    /// Cell densities per road.
    pub rho: Vec<Vec<f64>>,
    /// Queue length per inflow.
    pub q: Vec<f64>,
}

impl TrafficState {
    pub fn initial(net: &Network, disc: &Discretization) -> Result<Self> {
        if net.rho0.len() != net.roads.len() {
            return Err(Error::Shape(format!(
                "rho0 has {} entries for {} roads",
                net.rho0.len(),
                net.roads.len()
            )));
        }
        let rho = net
            .rho0
            .iter()
            .zip(&disc.cells)
            .map(|(init, &m)| init.cells(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrafficState {
            t: 0.0,
            rho,
            q: net.inflows.iter().map(|y| y.q0).collect(),
        })
    }

    /// Vehicles on the roads, `sum_i ds_i sum_h rho_ih`.
    pub fn vehicles_on_roads(&self, disc: &Discretization) -> f64 {
        self.rho
            .iter()
            .zip(&disc.ds)
            .map(|(cells, ds)| ds * cells.iter().sum::<f64>())
            .sum()
    }

    pub fn queued(&self) -> f64 {
        self.q.iter().sum()
    }
}

/// Boundary fluxes applied during one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryFluxes {
    /// Desired inflow rate `f_in(t^n)` per inflow.
    pub demand: Vec<f64>,
    /// Admitted flux into the entry road per inflow.
    pub inflow: Vec<f64>,
    /// Exit flux per outflow.
    pub outflow: Vec<f64>,
}

/// States at `t^0..=t^N` and the boundary fluxes used between them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrajectory {
    pub dt: f64,
    pub states: Vec<TrafficState>,
    /// `fluxes[n]` drove the update from `states[n]` to `states[n + 1]`.
    pub fluxes: Vec<BoundaryFluxes>,
}

impl TrafficTrajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Writes the density table `n,t,road,cell,rho`.
    pub fn write_density_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,t,road,cell,rho")?;
        for (n, state) in self.states.iter().enumerate() {
            for (i, cells) in state.rho.iter().enumerate() {
                for (h, rho) in cells.iter().enumerate() {
                    writeln!(w, "{n},{:.16e},{i},{h},{rho:.16e}", state.t)?;
                }
            }
        }
        Ok(())
    }

    /// Writes the queue table `n,t,inflow_road,q,flux`; `flux` is the admitted
    /// entry flux of the step starting at `t^n` (empty on the last row).
    pub fn write_queue_csv(&self, net: &Network, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,t,inflow_road,q,flux")?;
        for (n, state) in self.states.iter().enumerate() {
            for (y, q) in state.q.iter().enumerate() {
                let road = net.inflows[y].road;
                match self.fluxes.get(n) {
                    Some(f) => writeln!(w, "{n},{:.16e},{road},{q:.16e},{:.16e}", state.t, f.inflow[y])?,
                    None => writeln!(w, "{n},{:.16e},{road},{q:.16e},", state.t)?,
                }
            }
        }
        Ok(())
    }

    pub fn write_csv_files(&self, net: &Network, density: &Path, queues: &Path) -> Result<()> {
        let open = |p: &Path| {
            std::fs::File::create(p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        self.write_density_csv(open(density)?)
            .map_err(|e| Error::io(density, e))?;
        self.write_queue_csv(net, open(queues)?)
            .map_err(|e| Error::io(queues, e))?;
        Ok(())
    }
}

/// Godunov flux `min{D(rho_left), S(rho_right)}` across a cell interface.
pub fn godunov_flux(fd: &FundamentalDiagram, rho_left: f64, rho_right: f64) -> Result<f64> {
    Ok(fd.demand(rho_left)?.min(fd.supply(rho_right)?))
}

fn godunov_unchecked(fd: &FundamentalDiagram, rho_left: f64, rho_right: f64) -> f64 {
    fd.demand_unchecked(rho_left).min(fd.supply_unchecked(rho_right))
}

/// Flows through one junction.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionFlows {
    /// Exit flux of each incoming road.
    pub exit: Vec<f64>,
    /// Entry flux of each outgoing road.
    pub entry: Vec<f64>,
}

/// Coupling fluxes at junction `junction` given the trace densities
/// (last cell of each incoming road, first cell of each outgoing road).
///
/// Each pair `(k, l)` carries `min{alpha_lk D_k, beta_kl S_l}`; the exit and
/// entry flows are row and column sums of the same terms, so the junction
/// conserves vehicles exactly.
pub fn junction_fluxes(
    net: &Network,
    junction: usize,
    end_densities: &[f64],
    start_densities: &[f64],
    control: &JunctionControl,
) -> Result<JunctionFlows> {
    let j = net
        .junctions
        .get(junction)
        .ok_or_else(|| Error::Shape(format!("junction {junction} does not exist")))?;
    let (n_in, n_out) = (j.incoming.len(), j.outgoing.len());
    if end_densities.len() != n_in || start_densities.len() != n_out {
        return Err(Error::Shape(format!(
            "junction {junction}: {n_in} incoming / {n_out} outgoing roads, got {} / {} densities",
            end_densities.len(),
            start_densities.len()
        )));
    }
    check_control_shape(junction, control, n_in, n_out)?;
    let demand = j
        .incoming
        .iter()
        .zip(end_densities)
        .map(|(&k, &rho)| net.roads[k].fd.demand(rho))
        .collect::<Result<Vec<_>>>()?;
    let supply = j
        .outgoing
        .iter()
        .zip(start_densities)
        .map(|(&l, &rho)| net.roads[l].fd.supply(rho))
        .collect::<Result<Vec<_>>>()?;
    let mut flows = JunctionFlows {
        exit: vec![0.0; n_in],
        entry: vec![0.0; n_out],
    };
    couple(control, &demand, &supply, &mut flows.exit, &mut flows.entry);
    Ok(flows)
}

fn check_control_shape(junction: usize, c: &JunctionControl, n_in: usize, n_out: usize) -> Result<()> {
    let ok = c.alpha.len() == n_out
        && c.alpha.iter().all(|r| r.len() == n_in)
        && c.beta.len() == n_in
        && c.beta.iter().all(|r| r.len() == n_out);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "junction {junction}: alpha must be {n_out}x{n_in} and beta {n_in}x{n_out}"
        )))
    }
}

fn couple(c: &JunctionControl, demand: &[f64], supply: &[f64], exit: &mut [f64], entry: &mut [f64]) {
    exit.iter_mut().for_each(|x| *x = 0.0);
    entry.iter_mut().for_each(|x| *x = 0.0);
    for (k, d) in demand.iter().enumerate() {
        for (l, s) in supply.iter().enumerate() {
            let m = (c.alpha[l][k] * d).min(c.beta[k][l] * s);
            exit[k] += m;
            entry[l] += m;
        }
    }
}

/// Admitted entry flux of a queued inflow.
///
/// The queue can discharge `min{f_in + q/dt, cap_in}`; the road accepts at
/// most its supply. Returns `(flow, queue_demand)`.
pub fn inflow_flux(
    fd: &FundamentalDiagram,
    q: f64,
    f_in_now: f64,
    cap_in: f64,
    rho_start: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    if !(q >= 0.0) {
        return Err(Error::Domain {
            value: q,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let supply = fd.supply(rho_start)?;
    let queue_demand = (f_in_now + q / dt).min(cap_in);
    Ok((queue_demand.min(supply), queue_demand))
}

/// Exit flux `min{f_out, D(rho_end)}` at a network outflow.
pub fn outflow_flux(fd: &FundamentalDiagram, rho_end: f64, f_out_now: f64) -> Result<f64> {
    Ok(f_out_now.min(fd.demand(rho_end)?))
}

/// Explicit stepper bound to one network, control set and grid.
pub struct TrafficSolver<'a> {
    net: &'a Network,
    controls: &'a ControlSet,
    disc: &'a Discretization,
    topo: Topology,
    // Interface fluxes per road, M_i + 1 entries.
    interfaces: Vec<Vec<f64>>,
    scratch_demand: Vec<f64>,
    scratch_supply: Vec<f64>,
    scratch_exit: Vec<f64>,
    scratch_entry: Vec<f64>,
}

impl<'a> TrafficSolver<'a> {
    /// Checks shapes and the CFL condition before anything runs.
    pub fn new(net: &'a Network, controls: &'a ControlSet, disc: &'a Discretization) -> Result<Self> {
        let n = net.roads.len();
        if disc.cells.len() != n || disc.ds.len() != n {
            return Err(Error::Shape(format!(
                "discretization covers {} roads, network has {n}",
                disc.cells.len()
            )));
        }
        if controls.junctions.len() != net.junctions.len() {
            return Err(Error::Shape(format!(
                "controls for {} junctions, network has {}",
                controls.junctions.len(),
                net.junctions.len()
            )));
        }
        for (j, junction) in net.junctions.iter().enumerate() {
            if junction.incoming.iter().chain(&junction.outgoing).any(|&r| r >= n) {
                return Err(Error::Shape(format!("junction {j} references a missing road")));
            }
            check_control_shape(j, &controls.junctions[j], junction.incoming.len(), junction.outgoing.len())?;
        }
        if net.inflows.iter().any(|y| y.road >= n) || net.outflows.iter().any(|z| z.road >= n) {
            return Err(Error::Shape("boundary descriptor references a missing road".into()));
        }
        disc.check_cfl(net)?;
        let widest = net
            .junctions
            .iter()
            .map(|j| j.incoming.len().max(j.outgoing.len()))
            .max()
            .unwrap_or(0);
        Ok(TrafficSolver {
            net,
            controls,
            disc,
            topo: net.topology(),
            interfaces: disc.cells.iter().map(|&m| vec![0.0; m + 1]).collect(),
            scratch_demand: Vec::with_capacity(widest),
            scratch_supply: Vec::with_capacity(widest),
            scratch_exit: vec![0.0; widest],
            scratch_entry: vec![0.0; widest],
        })
    }

    /// Advances `state` by one time step in place and returns the boundary
    /// fluxes that were applied.
    pub fn step(&mut self, state: &mut TrafficState) -> BoundaryFluxes {
        let net = self.net;
        let dt = self.disc.dt;
        let t = state.t;

        for (i, road) in net.roads.iter().enumerate() {
            let rho = &state.rho[i];
            let f = &mut self.interfaces[i];
            for h in 1..rho.len() {
                f[h] = godunov_unchecked(&road.fd, rho[h - 1], rho[h]);
            }
            // Endpoints not owned by a junction or boundary stay closed.
            f[0] = 0.0;
            *f.last_mut().unwrap() = 0.0;
        }

        for (j, junction) in net.junctions.iter().enumerate() {
            self.scratch_demand.clear();
            self.scratch_supply.clear();
            for &k in &junction.incoming {
                let rho_end = *state.rho[k].last().unwrap();
                self.scratch_demand.push(net.roads[k].fd.demand_unchecked(rho_end));
            }
            for &l in &junction.outgoing {
                self.scratch_supply.push(net.roads[l].fd.supply_unchecked(state.rho[l][0]));
            }
            let (n_in, n_out) = (junction.incoming.len(), junction.outgoing.len());
            couple(
                &self.controls.junctions[j],
                &self.scratch_demand,
                &self.scratch_supply,
                &mut self.scratch_exit[..n_in],
                &mut self.scratch_entry[..n_out],
            );
            for (slot, &k) in junction.incoming.iter().enumerate() {
                if self.topo.end[k] == (Attachment::Junction { junction: j, slot }) {
                    *self.interfaces[k].last_mut().unwrap() = self.scratch_exit[slot];
                }
            }
            for (slot, &l) in junction.outgoing.iter().enumerate() {
                if self.topo.start[l] == (Attachment::Junction { junction: j, slot }) {
                    self.interfaces[l][0] = self.scratch_entry[slot];
                }
            }
        }

        let mut fluxes = BoundaryFluxes {
            demand: Vec::with_capacity(net.inflows.len()),
            inflow: Vec::with_capacity(net.inflows.len()),
            outflow: Vec::with_capacity(net.outflows.len()),
        };
        for (y, inflow) in net.inflows.iter().enumerate() {
            let fd = &net.roads[inflow.road].fd;
            let f_in = inflow.f_in.at(t).max(0.0);
            let q = state.q[y];
            let queue_demand = (f_in + q / dt).min(inflow.cap_in);
            let mut flow = queue_demand.min(fd.supply_unchecked(state.rho[inflow.road][0]));
            if self.topo.start[inflow.road] == Attachment::Inflow(y) {
                self.interfaces[inflow.road][0] = flow;
            } else {
                flow = 0.0;
            }
            state.q[y] = (q + dt * (f_in - flow)).max(0.0);
            fluxes.demand.push(f_in);
            fluxes.inflow.push(flow);
        }
        for (z, outflow) in net.outflows.iter().enumerate() {
            let road = &net.roads[outflow.road];
            let rho_end = *state.rho[outflow.road].last().unwrap();
            let mut flow = outflow.f_out.at(t).max(0.0).min(road.fd.demand_unchecked(rho_end));
            if self.topo.end[outflow.road] == Attachment::Outflow(z) {
                *self.interfaces[outflow.road].last_mut().unwrap() = flow;
            } else {
                flow = 0.0;
            }
            fluxes.outflow.push(flow);
        }

        for (i, road) in net.roads.iter().enumerate() {
            let lambda = dt / self.disc.ds[i];
            let rho_max = road.fd.rho_max();
            let f = &self.interfaces[i];
            for (h, rho) in state.rho[i].iter_mut().enumerate() {
                *rho = (*rho - lambda * (f[h + 1] - f[h])).clamp(0.0, rho_max);
            }
        }
        state.t = self.disc.time(step_index(t, dt) + 1);
        fluxes
    }
}

// Recovers n from t^n so that times stay exact multiples of dt.
fn step_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

/// Advances a single state by one step (convenience wrapper over
/// [`TrafficSolver`]).
pub fn step(
    state: &TrafficState,
    net: &Network,
    controls: &ControlSet,
    disc: &Discretization,
) -> Result<(TrafficState, BoundaryFluxes)> {
    let mut solver = TrafficSolver::new(net, controls, disc)?;
    let mut next = state.clone();
    let fluxes = solver.step(&mut next);
    Ok((next, fluxes))
}

/// Runs the network model over `disc.steps` steps.
pub fn simulate(net: &Network, controls: &ControlSet, disc: &Discretization) -> Result<TrafficTrajectory> {
    let mut solver = TrafficSolver::new(net, controls, disc)?;
    let mut state = TrafficState::initial(net, disc)?;
    for (i, (cells, road)) in state.rho.iter().zip(&net.roads).enumerate() {
        if cells.iter().any(|&r| !(0.0..=road.fd.rho_max()).contains(&r)) {
            return Err(Error::Config(format!("road {i}: initial density outside [0, rho_max]")));
        }
    }
    let mut states = Vec::with_capacity(disc.steps + 1);
    let mut fluxes = Vec::with_capacity(disc.steps);
    states.push(state.clone());
    for _ in 0..disc.steps {
        fluxes.push(solver.step(&mut state));
        states.push(state.clone());
    }
    Ok(TrafficTrajectory {
        dt: disc.dt,
        states,
        fluxes,
    })
}
