//! Real-coded elitist genetic algorithm over a product of capped simplices.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::SimplexLayout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GAConfig {
    pub population_size: usize,
    pub elite_count: usize,
    pub crossover_fraction: f64,
    pub mutation_scale: f64,
    pub stall_generations: usize,
    pub tol: f64,
    pub max_generations: usize,
    pub rng_seed: u64,
    /// Stop once this many objective evaluations have been spent.
    pub max_evaluations: Option<usize>,
}

impl Default for GAConfig {
    fn default() -> Self {
        GAConfig {
            population_size: 50,
            elite_count: 2,
            crossover_fraction: 0.8,
            mutation_scale: 0.1,
            stall_generations: 10,
            tol: 1e-4,
            max_generations: 100,
            rng_seed: 0,
            max_evaluations: None,
        }
    }
}

impl GAConfig {
    pub fn check(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.population_size < 2 {
            p.push("population_size must be at least 2".to_string());
        }
        if self.elite_count >= self.population_size {
            p.push("elite_count must be below population_size".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_fraction) {
            p.push("crossover_fraction must lie in [0, 1]".into());
        }
        if !(self.mutation_scale >= 0.0 && self.mutation_scale.is_finite()) {
            p.push("mutation_scale must be finite and >= 0".into());
        }
        if !(self.tol > 0.0) {
            p.push("tol must be > 0".into());
        }
        if self.stall_generations == 0 {
            p.push("stall_generations must be >= 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

/// Progress of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub evals: usize,
    #[serde(skip)]
    pub elapsed_s: f64,
}

impl GenerationStats {
    /// `gen best mean evals elapsed` log line.
    pub fn log_line(&self) -> String {
        format!(
            "gen {} best {:.10e} mean {:.10e} evals {} elapsed {:.3}s",
            self.generation, self.best, self.mean, self.evals, self.elapsed_s
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GAResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    /// Final population with its fitness.
    pub population: Vec<(Vec<f64>, f64)>,
    pub budget_exhausted: bool,
}

impl GAResult {
    /// Member whose fitness is closest to the mean finite fitness (lowest
    /// index on ties).
    pub fn closest_to_mean(&self) -> &(Vec<f64>, f64) {
        let finite: Vec<f64> = self.population.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return &self.population[0];
        }
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        let mut best = 0;
        for (i, p) in self.population.iter().enumerate() {
            if (p.1 - mean).abs() < (self.population[best].1 - mean).abs() {
                best = i;
            }
        }
        &self.population[best]
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn evaluate<F: Fn(&[f64]) -> f64 + Sync>(objective: &F, points: &[Vec<f64>]) -> Vec<f64> {
    points.par_iter().map(|x| sanitize(objective(x))).collect()
}

fn tournament<'a>(rng: &mut ChaCha8Rng, pop: &'a [(Vec<f64>, f64)]) -> &'a [f64] {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    if pop[b].1 < pop[a].1 {
        &pop[b].0
    } else {
        &pop[a].0
    }
}

/// Minimizes `objective` over `layout`. Non-finite objective values count as
/// `+∞`. Fitness evaluations of a generation run in parallel; results are
/// collected by index, so the run is reproducible for a fixed seed.
pub fn ga_minimize<F>(
    objective: F,
    layout: &SimplexLayout,
    cfg: &GAConfig,
    initial: &[Vec<f64>],
    mut progress: impl FnMut(&GenerationStats),
) -> Result<GAResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.check()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let budget = cfg.max_evaluations.unwrap_or(usize::MAX);

    let mut points: Vec<Vec<f64>> = initial
        .iter()
        .take(cfg.population_size)
        .map(|x| layout.project(x))
        .collect();
    if points.is_empty() {
        points.push(layout.uniform());
    }
    while points.len() < cfg.population_size {
        points.push(layout.random_point(&mut rng));
    }
    let values = evaluate(&objective, &points);
    let mut evaluations = points.len();
    let mut pop: Vec<(Vec<f64>, f64)> = points.into_iter().zip(values).collect();

    let stats = |generation: usize, pop: &[(Vec<f64>, f64)], evals: usize| {
        let best = pop.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let finite: Vec<f64> = pop.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        GenerationStats {
            generation,
            best,
            mean,
            evals,
            elapsed_s: started.elapsed().as_secs_f64(),
        }
    };
    let mut history = vec![stats(0, &pop, evaluations)];
    progress(&history[0]);

    let spread: Vec<f64> = (0..layout.dim()).map(|i| layout.upper(i) - layout.lower(i)).collect();
    let mut budget_exhausted = false;
    for generation in 1..=cfg.max_generations {
        if evaluations >= budget {
            budget_exhausted = true;
            break;
        }
        let gens = history.len();
        if gens > cfg.stall_generations {
            let old = history[gens - 1 - cfg.stall_generations].best;
            let new = history[gens - 1].best;
            let change = if old.is_finite() && new.is_finite() {
                (old - new).abs() / new.abs().max(f64::MIN_POSITIVE)
            } else {
                f64::INFINITY
            };
            if change < cfg.tol {
                break;
            }
        }

        // stable sort keeps the earlier individual first among equal fitness
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        let n_children = (cfg.population_size - cfg.elite_count).min(budget - evaluations);
        let n_cross = ((cfg.crossover_fraction * n_children as f64).round() as usize).min(n_children);
        let mut children = Vec::with_capacity(n_children);
        for c in 0..n_children {
            let child: Vec<f64> = if c < n_cross {
                let (a, b) = (tournament(&mut rng, &pop), tournament(&mut rng, &pop));
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| {
                        let (lo, hi) = (x.min(y), x.max(y));
                        let d = hi - lo;
                        lo - 0.5 * d + 2.0 * d * rng.random::<f64>()
                    })
                    .collect()
            } else {
                let parent = tournament(&mut rng, &pop).to_vec();
                parent
                    .iter()
                    .zip(&spread)
                    .map(|(&x, &s)| {
                        let sigma = cfg.mutation_scale * s;
                        if sigma > 0.0 {
                            x + Normal::new(0.0, sigma).unwrap().sample(&mut rng)
                        } else {
                            x
                        }
                    })
                    .collect()
            };
            children.push(layout.project(&child));
        }
        let values = evaluate(&objective, &children);
        evaluations += children.len();
        let mut next: Vec<(Vec<f64>, f64)> = pop[..cfg.elite_count].to_vec();
        next.extend(children.into_iter().zip(values));
        // elites are kept even when the budget cut the offspring short
        if next.len() < cfg.population_size {
            next.extend(pop[cfg.elite_count..].iter().take(cfg.population_size - next.len()).cloned());
        }
        pop = next;
        let s = stats(generation, &pop, evaluations);
        progress(&s);
        history.push(s);
    }

    let (best_point, best_value) = pop
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| (p.0.clone(), p.1))
        .unwrap();
    Ok(GAResult {
        best_point,
        best_value,
        history,
        evaluations,
        population: pop,
        budget_exhausted,
    })
}
