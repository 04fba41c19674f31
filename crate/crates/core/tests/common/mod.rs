//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackelberg_traffic::dispersion::{PollutionParams, WindField};
use stackelberg_traffic::mesh::TriMesh;
use stackelberg_traffic::network::{
    BoundaryInflow, BoundaryOutflow, ControlSet, FundamentalDiagram, InitialDensity, Junction, Network, Road,
    TimeSeries,
};
use stackelberg_traffic::optimize::ControlEncoder;
use stackelberg_traffic::scenario::Scenario;
use stackelberg_traffic::traffic::Discretization;

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// A small random network with its mesh, wind, pollution data and controls.
pub struct RandomCase {
    pub net: Network,
    pub controls: ControlSet,
    pub mesh: TriMesh,
    pub wind: WindField,
    pub params: PollutionParams,
    pub disc: Discretization,
}

impl RandomCase {
    /// Same case with the mesh split once and `dt`, `Δs` halved.
    pub fn refined(&self) -> RandomCase {
        let cells = self.disc.cells.iter().map(|c| 2 * c).collect();
        let disc = Discretization::new(&self.net, 0.5 * self.disc.dt, 2 * self.disc.steps, cells).unwrap();
        RandomCase {
            net: self.net.clone(),
            controls: self.controls.clone(),
            mesh: self.mesh.refined().unwrap(),
            wind: self.wind.clone(),
            params: self.params.clone(),
            disc,
        }
    }
}

const WIDTH: f64 = 4.0;
const HEIGHT: f64 = 3.0;

fn node(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.random_range(0.4..WIDTH - 0.4), rng.random_range(0.4..HEIGHT - 0.4)]
}

/// Up to six roads in one of five layouts (series, diverge, merge, diamond,
/// diamond with a trailing diverge), at most 140 triangles.
type Layout = (Vec<Vec<usize>>, Vec<(Vec<usize>, Vec<usize>)>, Vec<usize>, Vec<usize>);

pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = rng.random_range(0..5);
    // roads as node-index polylines; junctions as (incoming, outgoing)
    let (paths, junctions, sources, sinks): Layout =
        match layout {
            0 => (vec![vec![0, 1], vec![1, 2]], vec![(vec![0], vec![1])], vec![0], vec![1]),
            1 => (vec![vec![0, 1], vec![1, 2], vec![1, 3]], vec![(vec![0], vec![1, 2])], vec![0], vec![1, 2]),
            2 => (vec![vec![0, 2], vec![1, 2], vec![2, 3]], vec![(vec![0, 1], vec![2])], vec![0, 1], vec![2]),
            3 => (
                vec![vec![0, 1], vec![1, 3, 2], vec![1, 4, 2], vec![2, 5]],
                vec![(vec![0], vec![1, 2]), (vec![1, 2], vec![3])],
                vec![0],
                vec![3],
            ),
            _ => (
                vec![vec![0, 1], vec![1, 3, 2], vec![1, 4, 2], vec![2, 5], vec![5, 6], vec![5, 7]],
                vec![(vec![0], vec![1, 2]), (vec![1, 2], vec![3]), (vec![3], vec![4, 5])],
                vec![0],
                vec![4, 5],
            ),
        };
    let nodes = paths.iter().flatten().max().unwrap() + 1;
    let mut p: Vec<[f64; 2]> = Vec::new();
    while p.len() < nodes {
        let candidate = node(&mut rng);
        if p.iter().all(|q| (q[0] - candidate[0]).hypot(q[1] - candidate[1]) > 0.5) {
            p.push(candidate);
        }
    }
    let mut roads = Vec::new();
    let mut rho0 = Vec::new();
    for path in &paths {
        let fd = FundamentalDiagram::greenshields(rng.random_range(40.0..70.0), rng.random_range(100.0..150.0)).unwrap();
        rho0.push(InitialDensity::Uniform(rng.random_range(0.0..0.6) * fd.rho_max()));
        let polyline = path.iter().map(|&k| p[k]).collect();
        roads.push(Road::new(polyline, fd, rng.random_range(1e-4..1e-3), rng.random_range(1e-3..1e-2), 1.0).unwrap());
    }
    let inflows = sources
        .iter()
        .map(|&r| {
            let c = roads[r].fd.capacity();
            BoundaryInflow {
                road: r,
                f_in: TimeSeries::constant(rng.random_range(0.3..1.2) * c),
                cap_in: 0.9 * c,
                q0: rng.random_range(0.0..20.0),
                eps_queue: 1.0,
                lambda_q: 0.0,
            }
        })
        .collect();
    let outflows = sinks
        .iter()
        .map(|&r| BoundaryOutflow {
            road: r,
            f_out: TimeSeries::constant(rng.random_range(0.5..1.0) * roads[r].fd.capacity()),
            eps_out: 0.1,
        })
        .collect();
    let net = Network {
        roads,
        junctions: junctions.into_iter().map(|(i, o)| Junction::new(i, o)).collect(),
        inflows,
        outflows,
        rho0,
    };

    let alpha = ControlEncoder::alpha(&net).unwrap();
    let beta = ControlEncoder::beta(&net, 0.0, 1.0).unwrap();
    let base = ControlSet::uniform(&net);
    let with_beta = beta.decode(&beta.layout().random_point(&mut rng), &base);
    let controls = alpha.decode(&alpha.layout().random_point(&mut rng), &with_beta);

    let nx = rng.random_range(6..=10);
    let ny = rng.random_range(4..=7);
    let mesh = TriMesh::rectangle([0.0, 0.0], WIDTH, HEIGHT, nx, ny).unwrap();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(0.0..10.0);
    let wind = WindField::uniform(speed * angle.cos(), speed * angle.sin());
    let mut params = PollutionParams::new(rng.random_range(0.02..0.1), rng.random_range(0.0..0.05));
    params.phi0 = stackelberg_traffic::dispersion::NodalInitial::Uniform(rng.random_range(0.0..0.1));

    let cell = 0.25;
    let v_max = net.roads.iter().map(|r| r.fd.max_wave_speed()).fold(0.0, f64::max);
    let probe = Discretization::with_min_cell_size(&net, 1.0, 1, cell).unwrap();
    let ds_min = probe.ds.iter().copied().fold(f64::INFINITY, f64::min);
    let dt = 0.8 * ds_min / v_max;
    let steps = (0.3 / dt).ceil() as usize;
    let disc = Discretization::with_min_cell_size(&net, dt, steps, cell).unwrap();
    RandomCase {
        net,
        controls,
        mesh,
        wind,
        params,
        disc,
    }
}
