//! Follower best response and the leader-follower (Stackelberg) driver.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ga::{ga_minimize, GAConfig, GenerationStats};
use super::local::{local_minimize, LocalSearchConfig};
use super::simplex::ControlEncoder;
use crate::dispersion::{build_road_mesh_map, solve_adjoint, PollutionParams, ScalarFieldSeries, TimeGrid, WindField};
use crate::error::{Error, Result};
use crate::functionals::{eval_jt, AdjointEvaluator, FunctionalWeights};
use crate::mesh::TriMesh;
use crate::network::{ControlSet, Network};
use crate::traffic::{simulate, Discretization, TrafficTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowerConfig {
    pub starts: usize,
    /// Seed of the random starts; the same starts are used for every leader.
    pub seed: u64,
    pub local: LocalSearchConfig,
    /// Run a GA first and polish its best point locally.
    pub hybrid: bool,
    pub ga: GAConfig,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        FollowerConfig {
            starts: 5,
            seed: 0x5eed,
            local: LocalSearchConfig {
                max_iters: 30,
                kkt_tol: 1e-5,
                ..LocalSearchConfig::default()
            },
            hybrid: false,
            ga: GAConfig {
                population_size: 20,
                max_generations: 30,
                ..GAConfig::default()
            },
        }
    }
}

/// The follower's answer to one leader decision.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerSolution {
    pub controls: ControlSet,
    pub alpha: Vec<f64>,
    pub jt: f64,
    pub starts_ok: usize,
    pub simulations: usize,
}

/// Traffic-side inputs shared by the follower and the leader.
#[derive(Debug, Clone, Copy)]
pub struct TrafficProblem<'a> {
    pub net: &'a Network,
    pub disc: &'a Discretization,
    pub weights: &'a FunctionalWeights,
}

impl TrafficProblem<'_> {
    pub fn travel_cost(&self, controls: &ControlSet) -> Result<(f64, TrafficTrajectory)> {
        let traj = simulate(self.net, controls, self.disc)?;
        let jt = eval_jt(&traj, self.weights, self.net, self.disc)?;
        Ok((jt, traj))
    }
}

/// Best response `α_β` to the restrictions in `beta_controls` (its `alpha`
/// entries are ignored), by multi-start local search or GA + local polish.
/// A start whose simulation fails is discarded.
pub fn solve_follower(problem: TrafficProblem<'_>, beta_controls: &ControlSet, cfg: &FollowerConfig) -> Result<FollowerSolution> {
    let encoder = ControlEncoder::alpha(problem.net)?;
    let layout = encoder.layout();
    let sims = AtomicUsize::new(0);
    let objective = |x: &[f64]| -> f64 {
        sims.fetch_add(1, Ordering::Relaxed);
        match problem.travel_cost(&encoder.decode(x, beta_controls)) {
            Ok((jt, _)) if jt.is_finite() => jt,
            _ => f64::INFINITY,
        }
    };

    let mut starts = vec![layout.uniform()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while starts.len() < cfg.starts.max(1) {
        starts.push(layout.random_point(&mut rng));
    }
    if cfg.hybrid && layout.dim() > 0 {
        let ga = ga_minimize(objective, layout, &cfg.ga, &starts, |_| {})?;
        if ga.best_value.is_finite() {
            starts = vec![ga.best_point];
        }
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut starts_ok = 0;
    for start in &starts {
        let Ok(r) = local_minimize(objective, start, layout, &cfg.local) else {
            continue;
        };
        if !r.value.is_finite() {
            continue;
        }
        starts_ok += 1;
        if best.as_ref().is_none_or(|b| r.value < b.1) {
            best = Some((r.point, r.value));
        }
    }
    let Some((alpha, jt)) = best else {
        // every start failed: surface the simulation error of the first one
        problem.travel_cost(&encoder.decode(&starts[0], beta_controls))?;
        return Err(Error::Numerical {
            step: 0,
            reason: "follower objective is not finite at any start".into(),
        });
    };
    Ok(FollowerSolution {
        controls: encoder.decode(&alpha, beta_controls),
        alpha,
        jt,
        starts_ok,
        simulations: sims.load(Ordering::Relaxed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackelbergConfig {
    pub ga: GAConfig,
    pub leader_local: LocalSearchConfig,
    pub follower: FollowerConfig,
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// Also polish from the GA best when it beats the mean-start result.
    pub polish_ga_best: bool,
}

impl Default for StackelbergConfig {
    fn default() -> Self {
        StackelbergConfig {
            ga: GAConfig {
                population_size: 20,
                max_generations: 20,
                stall_generations: 5,
                ..GAConfig::default()
            },
            leader_local: LocalSearchConfig {
                fd_step: 1e-3,
                max_iters: 15,
                kkt_tol: 1e-4,
                ..LocalSearchConfig::default()
            },
            follower: FollowerConfig::default(),
            beta_lo: 0.0,
            beta_hi: 1.0,
            polish_ga_best: true,
        }
    }
}

/// Pollution-side inputs.
#[derive(Debug, Clone, Copy)]
pub struct PollutionProblem<'a> {
    pub mesh: &'a TriMesh,
    pub wind: &'a WindField,
    pub params: &'a PollutionParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub adjoint_solves: usize,
    pub follower_solves: usize,
    pub follower_cache_hits: usize,
    pub jp_evaluations: usize,
    pub traffic_simulations: usize,
    pub budget_exhausted: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergResult {
    /// `α*` and `β*` together.
    pub controls: ControlSet,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(rename = "JT")]
    pub jt: f64,
    #[serde(rename = "JP")]
    pub jp: f64,
    pub history: Vec<GenerationStats>,
    pub eval_count: usize,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub wall_time_s: f64,
}

const QUANTUM: f64 = 1e-6;

#[derive(Debug, Clone)]
struct LeaderEntry {
    follower: FollowerSolution,
    jp: f64,
}

type Memo = Mutex<HashMap<Vec<i64>, Arc<OnceLock<std::result::Result<LeaderEntry, String>>>>>;

/// Solves the leader problem `min_β J_P(α_β, β)`. The adjoint is computed
/// once unless `adjoint` supplies it.
pub fn solve_stackelberg(
    traffic: TrafficProblem<'_>,
    pollution: PollutionProblem<'_>,
    cfg: &StackelbergConfig,
    adjoint: Option<&ScalarFieldSeries>,
    mut log: impl FnMut(&str),
) -> Result<StackelbergResult> {
    let started = Instant::now();
    let mut diagnostics = Diagnostics::default();
    let computed;
    let g = match adjoint {
        Some(g) => {
            log("adjoint: reusing precomputed field");
            g
        }
        None => {
            log("adjoint: solving");
            computed = solve_adjoint(pollution.mesh, pollution.wind, pollution.params, TimeGrid::from(traffic.disc))?;
            diagnostics.adjoint_solves = 1;
            &computed
        }
    };
    let map = build_road_mesh_map(traffic.net, pollution.mesh, traffic.disc, pollution.wind)?;
    let phi0 = pollution.params.phi0.values(pollution.mesh)?;
    let evaluator = AdjointEvaluator::new(g, &map, traffic.net, pollution.mesh, &phi0, traffic.disc)?;

    let beta_enc = ControlEncoder::beta(traffic.net, cfg.beta_lo, cfg.beta_hi)?;
    let base = ControlSet::uniform(traffic.net).with_beta_bounds(cfg.beta_lo, cfg.beta_hi);
    let layout = beta_enc.layout();

    let memo: Memo = Mutex::new(HashMap::new());
    let lookups = AtomicUsize::new(0);
    let solves = AtomicUsize::new(0);
    let sims = AtomicUsize::new(0);
    let key_of = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| (v / QUANTUM).round() as i64).collect() };
    let leader_eval = |key: &[i64]| -> std::result::Result<LeaderEntry, String> {
        let raw: Vec<f64> = key.iter().map(|&k| k as f64 * QUANTUM).collect();
        let beta_controls = beta_enc.decode(&layout.project(&raw), &base);
        debug_assert!(beta_controls.is_feasible(traffic.net), "{:?}", beta_controls.violations(traffic.net));
        solves.fetch_add(1, Ordering::Relaxed);
        let follower = solve_follower(traffic, &beta_controls, &cfg.follower).map_err(|e| e.to_string())?;
        sims.fetch_add(follower.simulations + 1, Ordering::Relaxed);
        let (_, traj) = traffic.travel_cost(&follower.controls).map_err(|e| e.to_string())?;
        let jp = evaluator.evaluate(&traj, traffic.net, traffic.disc).map_err(|e| e.to_string())?;
        Ok(LeaderEntry { follower, jp })
    };
    let lookup = |x: &[f64]| -> std::result::Result<LeaderEntry, String> {
        lookups.fetch_add(1, Ordering::Relaxed);
        let key = key_of(x);
        let cell = memo.lock().unwrap().entry(key.clone()).or_default().clone();
        cell.get_or_init(|| leader_eval(&key)).clone()
    };
    let objective = |x: &[f64]| -> f64 {
        match lookup(x) {
            Ok(e) if e.jp.is_finite() => e.jp,
            _ => f64::INFINITY,
        }
    };

    let mut history = Vec::new();
    let beta_star = if layout.dim() == 0 {
        log("leader: no free restriction entries");
        Vec::new()
    } else {
        let ga = ga_minimize(objective, layout, &cfg.ga, &[layout.uniform()], |s| {
            log(&s.log_line());
        })?;
        history = ga.history.clone();
        if ga.budget_exhausted {
            diagnostics.budget_exhausted = true;
            diagnostics
                .warnings
                .push(format!("leader GA stopped by its evaluation budget after {} evaluations", ga.evaluations));
        }
        let (mean_start, _) = ga.closest_to_mean().clone();
        log("leader: local search from the member closest to the mean fitness");
        let mut best = local_minimize(objective, &mean_start, layout, &cfg.leader_local)?;
        if cfg.polish_ga_best && ga.best_value < best.value {
            log("leader: local search from the GA best");
            let second = local_minimize(objective, &ga.best_point, layout, &cfg.leader_local)?;
            if second.value < best.value {
                best = second;
            }
        }
        if ga.best_value < best.value {
            best.point = ga.best_point.clone();
            best.value = ga.best_value;
        }
        best.point
    };

    let entry = lookup(&beta_star).map_err(|reason| Error::Numerical { step: 0, reason })?;
    let controls = entry.follower.controls.clone();
    let beta = beta_enc.encode(&controls);
    diagnostics.follower_solves = solves.load(Ordering::Relaxed);
    diagnostics.follower_cache_hits = lookups.load(Ordering::Relaxed) - diagnostics.follower_solves;
    diagnostics.jp_evaluations = diagnostics.follower_solves;
    diagnostics.traffic_simulations = sims.load(Ordering::Relaxed);
    log(&format!(
        "done: JP {:.10e} JT {:.10e} adjoint_solves {} follower_solves {}",
        entry.jp, entry.follower.jt, diagnostics.adjoint_solves, diagnostics.follower_solves
    ));
    Ok(StackelbergResult {
        alpha: entry.follower.alpha.clone(),
        beta,
        controls,
        jt: entry.follower.jt,
        jp: entry.jp,
        history,
        eval_count: lookups.load(Ordering::Relaxed),
        diagnostics,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Follower response and both functionals at a fixed restriction.
pub fn evaluate_fixed_beta(
    traffic: TrafficProblem<'_>,
    evaluator: &AdjointEvaluator,
    beta_controls: &ControlSet,
    cfg: &FollowerConfig,
) -> Result<(FollowerSolution, f64)> {
    let follower = solve_follower(traffic, beta_controls, cfg)?;
    let (_, traj) = traffic.travel_cost(&follower.controls)?;
    let jp = evaluator.evaluate(&traj, traffic.net, traffic.disc)?;
    Ok((follower, jp))
}
