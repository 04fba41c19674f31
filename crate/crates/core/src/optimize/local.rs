//! Interior local search: log barrier on the bounds, BFGS in the tangent
//! space of the sum-to-one constraints, central-difference gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::SimplexLayout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSearchConfig {
    pub fd_step: f64,
    /// Initial barrier weight, relative to `max(1, |f(x0)|)`.
    pub barrier_init: f64,
    pub barrier_shrink: f64,
    pub max_iters: usize,
    pub kkt_tol: f64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        LocalSearchConfig {
            fd_step: 1e-4,
            barrier_init: 1e-2,
            barrier_shrink: 0.1,
            max_iters: 200,
            kkt_tol: 1e-6,
        }
    }
}

impl LocalSearchConfig {
    pub fn check(&self) -> Result<()> {
        let mut p = Vec::new();
        if !(self.fd_step > 0.0 && self.fd_step <= 1e-2) {
            p.push(format!("fd_step must lie in (0, 1e-2], got {}", self.fd_step));
        }
        if !(self.kkt_tol > 0.0) {
            p.push("kkt_tol must be > 0".to_string());
        }
        if !(self.barrier_init > 0.0) {
            p.push("barrier_init must be > 0".into());
        }
        if !(self.barrier_shrink > 0.0 && self.barrier_shrink < 1.0) {
            p.push("barrier_shrink must lie in (0, 1)".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    /// Best point evaluated during the search.
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// `‖x − P(x − ∇f / s)‖` at the last iterate, `s = max(1, |f(x0)|)`.
    pub kkt: f64,
    pub converged: bool,
}

const INTERIOR_BLEND: f64 = 1e-3;
const FRACTION_TO_BOUNDARY: f64 = 0.99;
const ARMIJO: f64 = 1e-4;
const INNER_ITERS: usize = 50;

/// Removes the per-group mean so `v` is tangent to `Σ_group x = 1`.
fn to_tangent(layout: &SimplexLayout, v: &mut [f64]) {
    for g in layout.groups() {
        let mean = v[g.range()].iter().sum::<f64>() / g.size as f64;
        v[g.range()].iter_mut().for_each(|x| *x -= mean);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences along `e_i − 1/m` inside each group; the step is
/// reduced so both probes stay within the bounds. Returns the tangent
/// gradient and the probes with their values.
pub fn central_difference_gradient<F>(f: &F, x: &[f64], layout: &SimplexLayout, step: f64) -> (Vec<f64>, Vec<(Vec<f64>, f64)>)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut probes = Vec::with_capacity(2 * x.len());
    let mut steps = Vec::with_capacity(x.len());
    for g in layout.groups() {
        let m = g.size as f64;
        let min_up = x[g.range()].iter().map(|v| g.hi - v).fold(f64::INFINITY, f64::min);
        let min_down = x[g.range()].iter().map(|v| v - g.lo).fold(f64::INFINITY, f64::min);
        for i in g.range() {
            // +h moves x_i up by h(1 − 1/m) and the others down by h/m
            let cap_plus = ((g.hi - x[i]) / (1.0 - 1.0 / m)).min(min_down * m);
            let cap_minus = ((x[i] - g.lo) / (1.0 - 1.0 / m)).min(min_up * m);
            let h = step.min(0.5 * cap_plus).min(0.5 * cap_minus).max(0.0);
            steps.push(h);
            for sign in [1.0, -1.0] {
                let mut p = x.to_vec();
                for j in g.range() {
                    p[j] -= sign * h / m;
                }
                p[i] += sign * h;
                probes.push(p);
            }
        }
    }
    let values: Vec<f64> = probes.par_iter().map(|p| f(p)).collect();
    let grad = steps
        .iter()
        .enumerate()
        .map(|(i, &h)| if h > 0.0 { (values[2 * i] - values[2 * i + 1]) / (2.0 * h) } else { 0.0 })
        .collect();
    (grad, probes.into_iter().zip(values).collect())
}

struct Tracker<'a, F> {
    f: &'a F,
    best: (Vec<f64>, f64),
    evaluations: usize,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Tracker<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        let v = (self.f)(x);
        self.record(x, v);
        v
    }

    fn record(&mut self, x: &[f64], v: f64) {
        self.evaluations += 1;
        if v < self.best.1 {
            self.best = (x.to_vec(), v);
        }
    }

    fn gradient(&mut self, x: &[f64], layout: &SimplexLayout, step: f64) -> Vec<f64> {
        let (g, probes) = central_difference_gradient(self.f, x, layout, step);
        for (p, v) in probes {
            self.record(&p, v);
        }
        g
    }
}

/// Minimizes `f` over `layout` starting from the feasible `x0`.
pub fn local_minimize<F>(f: F, x0: &[f64], layout: &SimplexLayout, cfg: &LocalSearchConfig) -> Result<LocalResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.check()?;
    layout.check(x0, 1e-9).map_err(Error::Infeasible)?;
    let mut t = Tracker {
        f: &f,
        best: (x0.to_vec(), f64::INFINITY),
        evaluations: 0,
    };
    let f0 = t.eval(x0);
    if layout.dim() == 0 {
        return Ok(LocalResult {
            point: x0.to_vec(),
            value: f0,
            iterations: 0,
            evaluations: 1,
            kkt: 0.0,
            converged: true,
        });
    }
    let mut x = if layout.touches_bound(x0, 1e-12) {
        layout.blend_to_interior(x0, INTERIOR_BLEND)
    } else {
        x0.to_vec()
    };
    let mut fx = if x == x0 { f0 } else { t.eval(&x) };
    if !fx.is_finite() {
        return Err(Error::Infeasible("objective is not finite at the start point".into()));
    }
    let scale = fx.abs().max(1.0);
    let n = x.len();
    let lo: Vec<f64> = (0..n).map(|i| layout.lower(i)).collect();
    let hi: Vec<f64> = (0..n).map(|i| layout.upper(i)).collect();

    let barrier = |x: &[f64], mu: f64| -> f64 {
        -mu * (0..n).map(|i| (x[i] - lo[i]).ln() + (hi[i] - x[i]).ln()).sum::<f64>()
    };
    let barrier_grad = |x: &[f64], mu: f64| -> Vec<f64> {
        (0..n).map(|i| -mu / (x[i] - lo[i]) + mu / (hi[i] - x[i])).collect()
    };
    let kkt_of = |x: &[f64], gf: &[f64]| -> f64 {
        let shifted: Vec<f64> = x.iter().zip(gf).map(|(a, g)| a - g / scale).collect();
        let p = layout.project(&shifted);
        p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let identity_on_tangent = || {
        let mut h = vec![vec![0.0; n]; n];
        for g in layout.groups() {
            for i in g.range() {
                for j in g.range() {
                    h[i][j] = if i == j { 1.0 } else { 0.0 } - 1.0 / g.size as f64;
                }
            }
        }
        h
    };

    let mut gf = t.gradient(&x, layout, cfg.fd_step);
    let mut kkt = kkt_of(&x, &gf);
    let mut mu = cfg.barrier_init * scale;
    let mut iterations = 0;
    let mut converged = kkt <= cfg.kkt_tol;
    'stages: while !converged {
        let mut h = identity_on_tangent();
        let mut scaled = false;
        for _ in 0..INNER_ITERS {
            if iterations >= cfg.max_iters {
                break 'stages;
            }
            let mut g: Vec<f64> = gf.iter().zip(barrier_grad(&x, mu)).map(|(a, b)| a + b).collect();
            to_tangent(layout, &mut g);
            let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gnorm <= (0.1 * cfg.kkt_tol * scale).max(0.1 * mu) {
                break;
            }
            let mut p: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
            to_tangent(layout, &mut p);
            if dot(&g, &p) >= 0.0 {
                h = identity_on_tangent();
                p = g.iter().map(|v| -v).collect();
            }
            let mut a_max = 1.0f64;
            for i in 0..n {
                if p[i] < 0.0 {
                    a_max = a_max.min(FRACTION_TO_BOUNDARY * (x[i] - lo[i]) / -p[i]);
                } else if p[i] > 0.0 {
                    a_max = a_max.min(FRACTION_TO_BOUNDARY * (hi[i] - x[i]) / p[i]);
                }
            }
            let phi = fx + barrier(&x, mu);
            let slope = dot(&g, &p);
            let mut a = a_max;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + a * pi).collect();
                let ft = t.eval(&trial);
                if ft.is_finite() && ft + barrier(&trial, mu) <= phi + ARMIJO * a * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                a *= 0.5;
            }
            iterations += 1;
            let Some((x_new, f_new)) = accepted else {
                break;
            };
            let gf_new = t.gradient(&x_new, layout, cfg.fd_step);
            let mut y: Vec<f64> = (0..n)
                .map(|i| (gf_new[i] - gf[i]) + barrier_grad(&x_new, mu)[i] - barrier_grad(&x, mu)[i])
                .collect();
            to_tangent(layout, &mut y);
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                if !scaled {
                    let gamma = sy / dot(&y, &y);
                    h.iter_mut().flatten().for_each(|v| *v *= gamma);
                    scaled = true;
                }
                let rho = 1.0 / sy;
                let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
                let yhy = dot(&y, &hy);
                for i in 0..n {
                    for j in 0..n {
                        h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                    }
                }
            }
            x = x_new;
            fx = f_new;
            gf = gf_new;
        }
        kkt = kkt_of(&x, &gf);
        converged = kkt <= cfg.kkt_tol;
        mu *= cfg.barrier_shrink;
        if mu < 1e-15 * scale {
            break;
        }
    }
    let (point, value) = t.best;
    Ok(LocalResult {
        point,
        value,
        iterations,
        evaluations: t.evaluations,
        kkt,
        converged,
    })
}
