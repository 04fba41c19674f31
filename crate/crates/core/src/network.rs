//! Road network substrate: fundamental diagrams, arc-length parametrized
//! roads, junctions, boundary descriptors and the junction controls
//! (driver preferences `alpha`, entry restrictions `beta`).
//!
//! Everything here is immutable once built and can be shared read-only
//! between concurrent simulations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for the stochasticity checks on `alpha` and `beta`.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Flux-density law of a single road.
///
/// Both families satisfy the usual LWR axioms: `f(0) = f(rho_max) = 0`,
/// concave, Lipschitz, with a single maximum (the capacity) at `rho_crit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FundamentalDiagram {
    /// `f(rho) = v_free * rho * (1 - rho / rho_max)`.
    Greenshields { v_free: f64, rho_max: f64 },
    /// Free-flow branch `v_free * rho` up to `rho_crit`, then a straight
    /// congested branch down to zero at `rho_max`.
    Triangular {
        v_free: f64,
        rho_max: f64,
        rho_crit: f64,
    },
}

impl FundamentalDiagram {
    pub fn greenshields(v_free: f64, rho_max: f64) -> Result<Self> {
        let fd = FundamentalDiagram::Greenshields { v_free, rho_max };
        fd.check()?;
        Ok(fd)
    }

    pub fn triangular(v_free: f64, rho_max: f64, rho_crit: f64) -> Result<Self> {
        let fd = FundamentalDiagram::Triangular {
            v_free,
            rho_max,
            rho_crit,
        };
        fd.check()?;
        Ok(fd)
    }

    /// Checks the parameter ranges that make the diagram admissible.
    pub fn check(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            FundamentalDiagram::Greenshields { v_free, rho_max } => {
                if !ok(v_free) || !ok(rho_max) {
                    return Err(Error::Config(format!(
                        "greenshields diagram needs v_free > 0 and rho_max > 0 (got {v_free}, {rho_max})"
                    )));
                }
            }
            FundamentalDiagram::Triangular {
                v_free,
                rho_max,
                rho_crit,
            } => {
                if !ok(v_free) || !ok(rho_max) || !(rho_crit > 0.0 && rho_crit < rho_max) {
                    return Err(Error::Config(format!(
                        "triangular diagram needs v_free > 0 and 0 < rho_crit < rho_max (got {v_free}, {rho_crit}, {rho_max})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rho_max(&self) -> f64 {
        match *self {
            FundamentalDiagram::Greenshields { rho_max, .. }
            | FundamentalDiagram::Triangular { rho_max, .. } => rho_max,
        }
    }

    pub fn rho_crit(&self) -> f64 {
        match *self {
            FundamentalDiagram::Greenshields { rho_max, .. } => 0.5 * rho_max,
            FundamentalDiagram::Triangular { rho_crit, .. } => rho_crit,
        }
    }

    /// Road capacity `C = f(rho_crit)`.
    pub fn capacity(&self) -> f64 {
        match *self {
            FundamentalDiagram::Greenshields { v_free, rho_max } => 0.25 * v_free * rho_max,
            FundamentalDiagram::Triangular {
                v_free, rho_crit, ..
            } => v_free * rho_crit,
        }
    }

    /// Largest characteristic speed `max |f'(rho)|` over `[0, rho_max]`.
    pub fn max_wave_speed(&self) -> f64 {
        match *self {
            FundamentalDiagram::Greenshields { v_free, .. } => v_free,
            FundamentalDiagram::Triangular {
                v_free,
                rho_max,
                rho_crit,
            } => v_free.max(v_free * rho_crit / (rho_max - rho_crit)),
        }
    }

    fn in_domain(&self, rho: f64) -> Result<()> {
        let rho_max = self.rho_max();
        if rho.is_nan() || !(0.0..=rho_max).contains(&rho) {
            return Err(Error::Domain {
                value: rho,
                lo: 0.0,
                hi: rho_max,
            });
        }
        Ok(())
    }

    /// Flow rate `f(rho)` in vehicles/h.
    pub fn flux(&self, rho: f64) -> Result<f64> {
        self.in_domain(rho)?;
        Ok(self.flux_unchecked(rho))
    }

    /// Demand: `f` below the critical density, capacity above.
    pub fn demand(&self, rho: f64) -> Result<f64> {
        self.in_domain(rho)?;
        Ok(self.demand_unchecked(rho))
    }

    /// Supply: capacity below the critical density, `f` above.
    pub fn supply(&self, rho: f64) -> Result<f64> {
        self.in_domain(rho)?;
        Ok(self.supply_unchecked(rho))
    }

    // The unchecked variants clamp into [0, rho_max]; the solver calls them
    // on states that are admissible up to round-off.
    pub(crate) fn flux_unchecked(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, self.rho_max());
        match *self {
            FundamentalDiagram::Greenshields { v_free, rho_max } => {
                v_free * rho * (1.0 - rho / rho_max)
            }
            FundamentalDiagram::Triangular {
                v_free,
                rho_max,
                rho_crit,
            } => {
                if rho <= rho_crit {
                    v_free * rho
                } else {
                    v_free * rho_crit * (rho_max - rho) / (rho_max - rho_crit)
                }
            }
        }
    }

    pub(crate) fn demand_unchecked(&self, rho: f64) -> f64 {
        if rho <= self.rho_crit() {
            self.flux_unchecked(rho)
        } else {
            self.capacity()
        }
    }

    pub(crate) fn supply_unchecked(&self, rho: f64) -> f64 {
        if rho <= self.rho_crit() {
            self.capacity()
        } else {
            self.flux_unchecked(rho)
        }
    }
}

/// Scalar input given either as a constant or as `(t, value)` samples that
/// are interpolated linearly in time and held constant outside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSeries {
    Constant(f64),
    Samples(Vec<(f64, f64)>),
}

impl TimeSeries {
    pub fn constant(value: f64) -> Self {
        TimeSeries::Constant(value)
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeSeries::Constant(v) => *v,
            TimeSeries::Samples(samples) => {
                let idx = samples.partition_point(|&(ts, _)| ts <= t);
                if idx == 0 {
                    return samples.first().map_or(0.0, |s| s.1);
                }
                if idx == samples.len() {
                    return samples[idx - 1].1;
                }
                let (t0, v0) = samples[idx - 1];
                let (t1, v1) = samples[idx];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            TimeSeries::Constant(v) => vec![*v],
            TimeSeries::Samples(s) => s.iter().map(|p| p.1).collect(),
        }
    }

    /// Problems with the sample layout (empty, unsorted or non-finite).
    pub fn problems(&self) -> Option<String> {
        match self {
            TimeSeries::Constant(v) if !v.is_finite() => Some("non-finite value".into()),
            TimeSeries::Constant(_) => None,
            TimeSeries::Samples(s) if s.is_empty() => Some("empty sample list".into()),
            TimeSeries::Samples(s) => {
                if s.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    Some("non-finite sample".into())
                } else if s.windows(2).any(|w| w[1].0 <= w[0].0) {
                    Some("sample times must increase strictly".into())
                } else {
                    None
                }
            }
        }
    }
}

/// A unidirectional road parametrized by arc length along its polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoadRepr", into = "RoadRepr")]
pub struct Road {
    polyline: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    pub fd: FundamentalDiagram,
    /// Emission per unit flow.
    pub gamma: f64,
    /// Emission per unit density.
    pub eta: f64,
    /// Weight of the road occupancy in the travel cost.
    pub eps_density: f64,
}

impl Road {
    pub fn new(
        polyline: Vec<[f64; 2]>,
        fd: FundamentalDiagram,
        gamma: f64,
        eta: f64,
        eps_density: f64,
    ) -> Result<Self> {
        if polyline.len() < 2 {
            return Err(Error::Config("road polyline needs at least two points".into()));
        }
        if polyline.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("road polyline has non-finite coordinates".into()));
        }
        fd.check()?;
        let mut cumulative = Vec::with_capacity(polyline.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in polyline.windows(2) {
            acc += dist(w[0], w[1]);
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Config("road has zero length".into()));
        }
        Ok(Road {
            polyline,
            cumulative,
            fd,
            gamma,
            eta,
            eps_density,
        })
    }

    /// Straight road between two points.
    pub fn straight(
        from: [f64; 2],
        to: [f64; 2],
        fd: FundamentalDiagram,
        gamma: f64,
        eta: f64,
        eps_density: f64,
    ) -> Result<Self> {
        Road::new(vec![from, to], fd, gamma, eta, eps_density)
    }

    pub fn polyline(&self) -> &[[f64; 2]] {
        &self.polyline
    }

    /// Arc length at each polyline vertex.
    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point at arc length `s` (clamped to `[0, L]`).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let seg = self
            .cumulative
            .partition_point(|&c| c <= s)
            .clamp(1, self.polyline.len() - 1);
        let (a, b) = (self.polyline[seg - 1], self.polyline[seg]);
        let (c0, c1) = (self.cumulative[seg - 1], self.cumulative[seg]);
        let w = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

}

#[derive(Serialize, Deserialize)]
struct RoadRepr {
    polyline: Vec<[f64; 2]>,
    fd: FundamentalDiagram,
    gamma: f64,
    eta: f64,
    eps_density: f64,
}

impl TryFrom<RoadRepr> for Road {
    type Error = Error;

    fn try_from(r: RoadRepr) -> Result<Self> {
        Road::new(r.polyline, r.fd, r.gamma, r.eta, r.eps_density)
    }
}

impl From<Road> for RoadRepr {
    fn from(r: Road) -> Self {
        RoadRepr {
            polyline: r.polyline,
            fd: r.fd,
            gamma: r.gamma,
            eta: r.eta,
            eps_density: r.eps_density,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Junction {
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

impl Junction {
    pub fn new(incoming: Vec<usize>, outgoing: Vec<usize>) -> Self {
        Junction { incoming, outgoing }
    }
}

/// Network entry at the upstream end of road `road`, fed through a point
/// queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInflow {
    pub road: usize,
    /// Desired inflow rate (vehicles/h).
    pub f_in: TimeSeries,
    /// Downstream capacity bounding the queue discharge (vehicles/h).
    pub cap_in: f64,
    /// Initial queue length (vehicles).
    pub q0: f64,
    pub eps_queue: f64,
    /// Queue emission factor.
    pub lambda_q: f64,
}

/// Network exit at the downstream end of road `road`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOutflow {
    pub road: usize,
    /// Maximum outflow rate (vehicles/h).
    pub f_out: TimeSeries,
    pub eps_out: f64,
}

/// Initial density of one road: uniform or one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDensity {
    Uniform(f64),
    Cells(Vec<f64>),
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::Uniform(0.0)
    }
}

impl InitialDensity {
    pub fn cells(&self, count: usize) -> Result<Vec<f64>> {
        match self {
            InitialDensity::Uniform(v) => Ok(vec![*v; count]),
            InitialDensity::Cells(v) if v.len() == count => Ok(v.clone()),
            InitialDensity::Cells(v) => Err(Error::Shape(format!(
                "initial density has {} cells, discretization has {count}",
                v.len()
            ))),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            InitialDensity::Uniform(v) => std::slice::from_ref(v),
            InitialDensity::Cells(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub roads: Vec<Road>,
    pub junctions: Vec<Junction>,
    pub inflows: Vec<BoundaryInflow>,
    pub outflows: Vec<BoundaryOutflow>,
    pub rho0: Vec<InitialDensity>,
}

/// Where a road endpoint is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    /// Junction index and position of the road in the junction's
    /// incoming (road end) or outgoing (road start) list.
    Junction { junction: usize, slot: usize },
    Inflow(usize),
    Outflow(usize),
    Free,
}

/// Endpoint attachments of every road, derived from the network lists.
#[derive(Debug, Clone)]
pub struct Topology {
    pub start: Vec<Attachment>,
    pub end: Vec<Attachment>,
}

impl Network {
    pub fn road_count(&self) -> usize {
        self.roads.len()
    }

    /// Endpoint attachments; the first attachment wins when a road is
    /// attached twice (which `validate_network` reports).
    pub fn topology(&self) -> Topology {
        let n = self.roads.len();
        let mut start = vec![Attachment::Free; n];
        let mut end = vec![Attachment::Free; n];
        for (j, junction) in self.junctions.iter().enumerate() {
            for (slot, &k) in junction.incoming.iter().enumerate() {
                if k < n && end[k] == Attachment::Free {
                    end[k] = Attachment::Junction { junction: j, slot };
                }
            }
            for (slot, &l) in junction.outgoing.iter().enumerate() {
                if l < n && start[l] == Attachment::Free {
                    start[l] = Attachment::Junction { junction: j, slot };
                }
            }
        }
        for (y, inflow) in self.inflows.iter().enumerate() {
            if inflow.road < n && start[inflow.road] == Attachment::Free {
                start[inflow.road] = Attachment::Inflow(y);
            }
        }
        for (z, outflow) in self.outflows.iter().enumerate() {
            if outflow.road < n && end[outflow.road] == Attachment::Free {
                end[outflow.road] = Attachment::Outflow(z);
            }
        }
        Topology { start, end }
    }
}

/// Driver preferences and entry restrictions at one junction.
///
/// `alpha[l][k]` is the share of drivers arriving from the `k`-th incoming
/// road that take the `l`-th outgoing road; `beta[k][l]` is the share of the
/// supply of the `l`-th outgoing road granted to the `k`-th incoming road.
/// Indices are positions in the junction's `incoming`/`outgoing` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionControl {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl JunctionControl {
    /// Uniform split at a junction with `n_in` incoming and `n_out` outgoing roads.
    pub fn uniform(n_in: usize, n_out: usize) -> Self {
        JunctionControl {
            alpha: vec![vec![1.0 / n_out as f64; n_in]; n_out],
            beta: vec![vec![1.0 / n_in as f64; n_out]; n_in],
        }
    }
}

/// Controls for every junction plus the bounds that apply to `beta`.
///
/// The bounds constrain entries of groups with at least two incoming roads;
/// a single incoming road always receives the whole supply (`beta = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub junctions: Vec<JunctionControl>,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl ControlSet {
    pub fn uniform(net: &Network) -> Self {
        ControlSet {
            junctions: net
                .junctions
                .iter()
                .map(|j| JunctionControl::uniform(j.incoming.len(), j.outgoing.len()))
                .collect(),
            beta_lo: 0.0,
            beta_hi: 1.0,
        }
    }

    pub fn with_beta_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.beta_lo = lo;
        self.beta_hi = hi;
        self
    }

    /// Invariant violations of these controls against `net`.
    pub fn violations(&self, net: &Network) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.junctions.len() != net.junctions.len() {
            out.push(Violation::new(
                ViolationKind::ControlShape,
                format!(
                    "controls given for {} junctions, network has {}",
                    self.junctions.len(),
                    net.junctions.len()
                ),
            ));
            return out;
        }
        if !(self.beta_lo >= 0.0 && self.beta_lo <= self.beta_hi && self.beta_hi <= 1.0) {
            out.push(Violation::new(
                ViolationKind::BoundViolation,
                format!(
                    "beta bounds [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                    self.beta_lo, self.beta_hi
                ),
            ));
        }
        for (j, (junction, ctl)) in net.junctions.iter().zip(&self.junctions).enumerate() {
            let (n_in, n_out) = (junction.incoming.len(), junction.outgoing.len());
            let alpha_ok = ctl.alpha.len() == n_out && ctl.alpha.iter().all(|r| r.len() == n_in);
            let beta_ok = ctl.beta.len() == n_in && ctl.beta.iter().all(|r| r.len() == n_out);
            if !alpha_ok || !beta_ok {
                out.push(Violation::new(
                    ViolationKind::ControlShape,
                    format!("junction {j}: alpha must be {n_out}x{n_in} and beta {n_in}x{n_out}"),
                ));
                continue;
            }
            for k in 0..n_in {
                let mut sum = 0.0;
                for l in 0..n_out {
                    let a = ctl.alpha[l][k];
                    if !(0.0..=1.0).contains(&a) {
                        out.push(Violation::new(
                            ViolationKind::BoundViolation,
                            format!("junction {j}: alpha[{l}][{k}] = {a} outside [0, 1]"),
                        ));
                    }
                    sum += a;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::new(
                        ViolationKind::NotStochastic,
                        format!(
                            "junction {j}: preference row not stochastic (incoming {k} sums to {sum})"
                        ),
                    ));
                }
            }
            let (lo, hi) = if n_in >= 2 {
                (self.beta_lo, self.beta_hi)
            } else {
                (0.0, 1.0)
            };
            for l in 0..n_out {
                let mut sum = 0.0;
                for k in 0..n_in {
                    let b = ctl.beta[k][l];
                    if !(b >= lo - STOCHASTIC_TOL && b <= hi + STOCHASTIC_TOL) {
                        out.push(Violation::new(
                            ViolationKind::BoundViolation,
                            format!("junction {j}: beta[{k}][{l}] = {b} outside [{lo}, {hi}]"),
                        ));
                    }
                    sum += b;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::new(
                        ViolationKind::NotStochastic,
                        format!(
                            "junction {j}: restriction column not stochastic (outgoing {l} sums to {sum})"
                        ),
                    ));
                }
            }
        }
        out
    }

    pub fn is_feasible(&self, net: &Network) -> bool {
        self.violations(net).is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    UnknownRoad,
    DanglingEndpoint,
    MultiplyAttached,
    JunctionOverlap,
    EmptyJunctionSide,
    BoundViolation,
    NotStochastic,
    ControlShape,
    BadDiagram,
    BadSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: String) -> Self {
        Violation { kind, message }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.message.clone()).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self.messages()))
        }
    }
}

/// Checks every network invariant and reports all violations found.
pub fn validate_network(net: &Network) -> ValidationReport {
    let mut v = Vec::new();
    let n = net.roads.len();
    let mut push = |kind, msg: String| v.push(Violation::new(kind, msg));

    for (i, road) in net.roads.iter().enumerate() {
        if let Err(e) = road.fd.check() {
            push(ViolationKind::BadDiagram, format!("road {i}: {e}"));
        }
        for (name, x) in [
            ("gamma", road.gamma),
            ("eta", road.eta),
            ("eps_density", road.eps_density),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                push(ViolationKind::BoundViolation, format!("road {i}: {name} = {x} must be >= 0"));
            }
        }
    }

    // Endpoint attachment counts: road end (junction incoming or outflow),
    // road start (junction outgoing or inflow).
    let mut end_count = vec![0usize; n];
    let mut start_count = vec![0usize; n];
    for (j, junction) in net.junctions.iter().enumerate() {
        if junction.incoming.is_empty() || junction.outgoing.is_empty() {
            push(
                ViolationKind::EmptyJunctionSide,
                format!("junction {j}: incoming and outgoing sets must both be nonempty"),
            );
        }
        for &k in &junction.incoming {
            if junction.outgoing.contains(&k) {
                push(
                    ViolationKind::JunctionOverlap,
                    format!("junction {j}: road {k} is both incoming and outgoing"),
                );
            }
        }
        for (side, list, counts) in [
            ("incoming", &junction.incoming, &mut end_count),
            ("outgoing", &junction.outgoing, &mut start_count),
        ] {
            for &r in list.iter() {
                if r >= n {
                    push(ViolationKind::UnknownRoad, format!("junction {j}: {side} road {r} does not exist"));
                } else {
                    counts[r] += 1;
                }
            }
        }
    }
    for (y, inflow) in net.inflows.iter().enumerate() {
        if inflow.road >= n {
            push(ViolationKind::UnknownRoad, format!("inflow {y}: road {} does not exist", inflow.road));
            continue;
        }
        start_count[inflow.road] += 1;
        let road = &net.roads[inflow.road];
        if inflow.cap_in > road.fd.capacity() || !(inflow.cap_in >= 0.0) {
            push(
                ViolationKind::BoundViolation,
                format!(
                    "inflow {y}: cap_in = {} must lie in [0, road capacity {}]",
                    inflow.cap_in,
                    road.fd.capacity()
                ),
            );
        }
        if !(inflow.q0 >= 0.0) {
            push(ViolationKind::BoundViolation, format!("inflow {y}: q0 = {} must be >= 0", inflow.q0));
        }
        for (name, x) in [("eps_queue", inflow.eps_queue), ("lambda_q", inflow.lambda_q)] {
            if !(x >= 0.0) {
                push(ViolationKind::BoundViolation, format!("inflow {y}: {name} = {x} must be >= 0"));
            }
        }
        if let Some(p) = inflow.f_in.problems() {
            push(ViolationKind::BadSeries, format!("inflow {y}: f_in {p}"));
        } else if inflow.f_in.values().iter().any(|&x| x < 0.0) {
            push(ViolationKind::BoundViolation, format!("inflow {y}: f_in must be >= 0"));
        }
    }
    for (z, outflow) in net.outflows.iter().enumerate() {
        if outflow.road >= n {
            push(ViolationKind::UnknownRoad, format!("outflow {z}: road {} does not exist", outflow.road));
            continue;
        }
        end_count[outflow.road] += 1;
        if !(outflow.eps_out >= 0.0) {
            push(ViolationKind::BoundViolation, format!("outflow {z}: eps_out must be >= 0"));
        }
        if let Some(p) = outflow.f_out.problems() {
            push(ViolationKind::BadSeries, format!("outflow {z}: f_out {p}"));
        } else if outflow.f_out.values().iter().any(|&x| x < 0.0) {
            push(ViolationKind::BoundViolation, format!("outflow {z}: f_out must be >= 0"));
        }
    }
    for i in 0..n {
        for (which, count) in [("start", start_count[i]), ("end", end_count[i])] {
            match count {
                1 => {}
                0 => push(
                    ViolationKind::DanglingEndpoint,
                    format!("road {i}: {which} is not attached to a junction or boundary"),
                ),
                _ => push(
                    ViolationKind::MultiplyAttached,
                    format!("road {i}: road multiply attached at its {which} ({count} attachments)"),
                ),
            }
        }
    }

    if net.rho0.len() != n {
        push(
            ViolationKind::BoundViolation,
            format!("rho0 has {} entries, network has {n} roads", net.rho0.len()),
        );
    } else {
        for (i, (road, init)) in net.roads.iter().zip(&net.rho0).enumerate() {
            let rho_max = road.fd.rho_max();
            if init.values().iter().any(|&r| !(0.0..=rho_max).contains(&r)) {
                push(
                    ViolationKind::BoundViolation,
                    format!("road {i}: initial density outside [0, {rho_max}]"),
                );
            }
        }
    }

    ValidationReport { violations: v }
}

/// Network and control invariants together.
pub fn validate_with_controls(net: &Network, controls: &ControlSet) -> ValidationReport {
    let mut report = validate_network(net);
    report.violations.extend(controls.violations(net));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gs() -> FundamentalDiagram {
        FundamentalDiagram::greenshields(60.0, 120.0).unwrap()
    }

    #[test]
    fn greenshields_values() {
        let fd = gs();
        assert_eq!(fd.flux(0.0).unwrap(), 0.0);
        assert_eq!(fd.flux(120.0).unwrap(), 0.0);
        assert_eq!(fd.flux(30.0).unwrap(), 1350.0);
        assert_eq!(fd.capacity(), 1800.0);
        assert_eq!(fd.rho_crit(), 60.0);
    }

    #[test]
    fn demand_supply_values() {
        let fd = gs();
        assert_eq!(fd.demand(0.0).unwrap(), 0.0);
        assert_eq!(fd.supply(120.0).unwrap(), 0.0);
        assert_eq!(fd.demand(30.0).unwrap(), 1350.0);
        assert_eq!(fd.supply(30.0).unwrap(), 1800.0);
        assert_eq!(fd.demand(90.0).unwrap(), 1800.0);
        assert_eq!(fd.supply(90.0).unwrap(), 1350.0);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let fd = gs();
        assert!(matches!(fd.flux(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(fd.demand(120.5), Err(Error::Domain { .. })));
        assert!(matches!(fd.supply(f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn triangular_shape() {
        let fd = FundamentalDiagram::triangular(50.0, 150.0, 30.0).unwrap();
        assert_eq!(fd.capacity(), 1500.0);
        assert_eq!(fd.flux(30.0).unwrap(), 1500.0);
        assert_eq!(fd.flux(150.0).unwrap(), 0.0);
        assert!((fd.flux(90.0).unwrap() - 750.0).abs() < 1e-12);
        assert!(FundamentalDiagram::triangular(50.0, 150.0, 150.0).is_err());
    }

    #[test]
    fn road_arclength() {
        let road = Road::new(
            vec![[0.0, 0.0], [3.0, 4.0], [3.0, 4.0], [3.0, 10.0]],
            gs(),
            0.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert!((road.length() - 11.0).abs() < 1e-12);
        let p = road.point_at(2.5);
        assert!((p[0] - 1.5).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        let p = road.point_at(8.0);
        assert!((p[0] - 3.0).abs() < 1e-12 && (p[1] - 7.0).abs() < 1e-12);
        assert_eq!(road.point_at(50.0), [3.0, 10.0]);
    }

    #[test]
    fn time_series_interpolates() {
        let ts = TimeSeries::Samples(vec![(0.0, 0.0), (1.0, 10.0), (3.0, 30.0)]);
        assert_eq!(ts.at(-1.0), 0.0);
        assert_eq!(ts.at(0.5), 5.0);
        assert_eq!(ts.at(2.0), 20.0);
        assert_eq!(ts.at(9.0), 30.0);
        assert!(TimeSeries::Samples(vec![(1.0, 0.0), (1.0, 1.0)]).problems().is_some());
    }

    fn chain() -> Network {
        let road = |a: f64| Road::straight([a, 0.0], [a + 1.0, 0.0], gs(), 1.0, 0.0, 0.5).unwrap();
        Network {
            roads: vec![road(0.0), road(1.0)],
            junctions: vec![Junction::new(vec![0], vec![1])],
            inflows: vec![BoundaryInflow {
                road: 0,
                f_in: TimeSeries::constant(500.0),
                cap_in: 1800.0,
                q0: 0.0,
                eps_queue: 0.1,
                lambda_q: 0.0,
            }],
            outflows: vec![BoundaryOutflow {
                road: 1,
                f_out: TimeSeries::constant(2000.0),
                eps_out: 0.5,
            }],
            rho0: vec![InitialDensity::Uniform(0.0); 2],
        }
    }

    #[test]
    fn chain_is_valid() {
        let net = chain();
        assert!(validate_network(&net).is_valid());
        assert!(validate_with_controls(&net, &ControlSet::uniform(&net)).is_valid());
    }

    #[test]
    fn multiply_attached_road() {
        let mut net = chain();
        net.junctions.push(Junction::new(vec![0], vec![1]));
        let report = validate_network(&net);
        assert!(report.has(ViolationKind::MultiplyAttached));
        assert!(report.messages().iter().any(|m| m.contains("road multiply attached")));
    }

    #[test]
    fn dangling_and_overlap() {
        let mut net = chain();
        net.outflows.clear();
        net.junctions[0].outgoing.push(0);
        let report = validate_network(&net);
        assert!(report.has(ViolationKind::DanglingEndpoint));
        assert!(report.has(ViolationKind::JunctionOverlap));
    }

    #[test]
    fn alpha_row_not_stochastic() {
        let net = {
            let mut n = chain();
            n.roads.push(Road::straight([1.0, 0.0], [2.0, 1.0], gs(), 1.0, 0.0, 0.5).unwrap());
            n.junctions[0].outgoing.push(2);
            n.outflows.push(BoundaryOutflow {
                road: 2,
                f_out: TimeSeries::constant(2000.0),
                eps_out: 0.5,
            });
            n.rho0.push(InitialDensity::default());
            n
        };
        let mut controls = ControlSet::uniform(&net);
        controls.junctions[0].alpha = vec![vec![0.4], vec![0.5]];
        let report = validate_with_controls(&net, &controls);
        assert!(report.has(ViolationKind::NotStochastic));
        assert!(report.messages().iter().any(|m| m.contains("preference row not stochastic")));
    }

    #[test]
    fn cap_in_above_capacity() {
        let mut net = chain();
        net.inflows[0].cap_in = 2013.0;
        assert!(validate_network(&net).has(ViolationKind::BoundViolation));
    }

    #[test]
    fn topology_attachments() {
        let topo = chain().topology();
        assert_eq!(topo.start[0], Attachment::Inflow(0));
        assert_eq!(topo.end[0], Attachment::Junction { junction: 0, slot: 0 });
        assert_eq!(topo.start[1], Attachment::Junction { junction: 0, slot: 0 });
        assert_eq!(topo.end[1], Attachment::Outflow(0));
    }
}
