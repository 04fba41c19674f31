//! Products of capped simplices `{x : Σ_group x = 1, lo ≤ x ≤ hi}` and the
//! maps between control sets and flat decision vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{ControlSet, Network};

/// Euclidean projection onto `{x : Σx = 1, lo ≤ x_i ≤ hi}`, i.e.
/// `x_i = clamp(c_i - τ, lo, hi)` with the exact shift `τ`.
pub fn project_capped_simplex(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let m = c.len();
    let c: Vec<f64> = c.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    let total = |tau: f64| c.iter().map(|v| (v - tau).clamp(lo, hi)).sum::<f64>();
    let mut breaks: Vec<f64> = c.iter().flat_map(|v| [v - hi, v - lo]).collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tau = breaks[0];
    if total(breaks[0]) > 1.0 {
        // total decreases from m·hi to m·lo across the breakpoints
        tau = breaks[2 * m - 1];
        for w in breaks.windows(2) {
            let (f0, f1) = (total(w[0]), total(w[1]));
            if f0 >= 1.0 && f1 <= 1.0 {
                tau = if f0 > f1 { w[0] + (f0 - 1.0) * (w[1] - w[0]) / (f0 - f1) } else { w[0] };
                break;
            }
        }
    }
    c.iter().map(|v| (v - tau).clamp(lo, hi)).collect()
}

/// One group of entries summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub offset: usize,
    pub size: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Group {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size
    }
}

/// Feasible set of a flat decision vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimplexLayout {
    groups: Vec<Group>,
    dim: usize,
}

impl SimplexLayout {
    /// `(size, lo, hi)` per group; every group must admit a point with
    /// `lo < x < hi`.
    pub fn new(groups: &[(usize, f64, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(groups.len());
        let mut offset = 0;
        for (g, &(size, lo, hi)) in groups.iter().enumerate() {
            let m = size as f64;
            if size < 2 || !(lo * m < 1.0 && hi * m > 1.0) || lo < 0.0 || hi > 1.0 {
                return Err(Error::Config(format!(
                    "group {g} with {size} entries and bounds [{lo}, {hi}] has no interior"
                )));
            }
            out.push(Group { offset, size, lo, hi });
            offset += size;
        }
        Ok(SimplexLayout { groups: out, dim: offset })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.group_of(i).lo
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.group_of(i).hi
    }

    fn group_of(&self, i: usize) -> &Group {
        let k = self.groups.partition_point(|g| g.offset + g.size <= i);
        &self.groups[k]
    }

    pub fn project(&self, raw: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim);
        for g in &self.groups {
            x.extend(project_capped_simplex(&raw[g.range()], g.lo, g.hi));
        }
        x
    }

    /// The point with every group split evenly.
    pub fn uniform(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(1.0 / g.size as f64, g.size))
            .collect()
    }

    /// `(1 - eps) x + eps · uniform`, strictly interior when `x` is feasible.
    pub fn blend_to_interior(&self, x: &[f64], eps: f64) -> Vec<f64> {
        x.iter().zip(self.uniform()).map(|(a, u)| (1.0 - eps) * a + eps * u).collect()
    }

    /// Names the first violated constraint, if any.
    pub fn check(&self, x: &[f64], tol: f64) -> std::result::Result<(), String> {
        if x.len() != self.dim {
            return Err(format!("point has {} entries, expected {}", x.len(), self.dim));
        }
        for (k, g) in self.groups.iter().enumerate() {
            let part = &x[g.range()];
            if let Some(i) = part.iter().position(|v| !(*v >= g.lo - tol && *v <= g.hi + tol)) {
                return Err(format!(
                    "entry {} = {} of group {k} outside [{}, {}]",
                    g.offset + i,
                    part[i],
                    g.lo,
                    g.hi
                ));
            }
            let sum: f64 = part.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(format!("group {k} sums to {sum}, not 1"));
            }
        }
        Ok(())
    }

    /// True when some entry sits on (or within `tol` of) one of its bounds.
    pub fn touches_bound(&self, x: &[f64], tol: f64) -> bool {
        self.groups.iter().any(|g| x[g.range()].iter().any(|v| v - g.lo <= tol || g.hi - v <= tol))
    }

    /// Raw genes drawn uniformly in each entry's box, then projected.
    pub fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.dim)
            .map(|i| {
                let (lo, hi) = (self.lower(i), self.upper(i));
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect();
        self.project(&raw)
    }
}

/// Which half of the controls a decision vector describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlHalf {
    Alpha,
    Beta,
}

/// Flat view of the free `alpha` or `beta` entries of a control set.
///
/// Groups with a single choice (one outgoing road for `alpha`, one incoming
/// road for `beta`) and groups whose bounds pin every entry are fixed and do
/// not appear in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEncoder {
    half: ControlHalf,
    layout: SimplexLayout,
    /// `(junction, column)` of each free group, aligned with the layout.
    free: Vec<(usize, usize)>,
    /// `(junction, column, value)` of pinned groups.
    pinned: Vec<(usize, usize, f64)>,
}

impl ControlEncoder {
    pub fn alpha(net: &Network) -> Result<Self> {
        let mut groups = Vec::new();
        let mut free = Vec::new();
        let mut pinned = Vec::new();
        for (j, junction) in net.junctions.iter().enumerate() {
            let n_out = junction.outgoing.len();
            for k in 0..junction.incoming.len() {
                if n_out >= 2 {
                    groups.push((n_out, 0.0, 1.0));
                    free.push((j, k));
                } else {
                    pinned.push((j, k, 1.0));
                }
            }
        }
        Ok(ControlEncoder {
            half: ControlHalf::Alpha,
            layout: SimplexLayout::new(&groups)?,
            free,
            pinned,
        })
    }

    /// Fails when `lo·m > 1` or `hi·m < 1` for a junction with `m ≥ 2`
    /// incoming roads.
    pub fn beta(net: &Network, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("beta bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")));
        }
        let mut groups = Vec::new();
        let mut free = Vec::new();
        let mut pinned = Vec::new();
        let mut infeasible = Vec::new();
        for (j, junction) in net.junctions.iter().enumerate() {
            let m = junction.incoming.len();
            let mf = m as f64;
            for l in 0..junction.outgoing.len() {
                if m < 2 {
                    pinned.push((j, l, 1.0));
                } else if lo * mf > 1.0 || hi * mf < 1.0 {
                    infeasible.push(format!(
                        "junction {j}: beta bounds [{lo}, {hi}] infeasible with {m} incoming roads (need lo*{m} <= 1 <= hi*{m})"
                    ));
                    break;
                } else if lo * mf == 1.0 || hi * mf == 1.0 {
                    pinned.push((j, l, 1.0 / mf));
                } else {
                    groups.push((m, lo, hi));
                    free.push((j, l));
                }
            }
        }
        if !infeasible.is_empty() {
            return Err(Error::Validation(infeasible));
        }
        Ok(ControlEncoder {
            half: ControlHalf::Beta,
            layout: SimplexLayout::new(&groups)?,
            free,
            pinned,
        })
    }

    pub fn half(&self) -> ControlHalf {
        self.half
    }

    pub fn layout(&self) -> &SimplexLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn write_group(&self, controls: &mut ControlSet, j: usize, col: usize, values: impl Iterator<Item = f64>) {
        let jc = &mut controls.junctions[j];
        match self.half {
            ControlHalf::Alpha => values.enumerate().for_each(|(l, v)| jc.alpha[l][col] = v),
            ControlHalf::Beta => values.enumerate().for_each(|(k, v)| jc.beta[k][col] = v),
        }
    }

    /// Writes a feasible decision vector into a copy of `base`.
    pub fn decode(&self, x: &[f64], base: &ControlSet) -> ControlSet {
        let mut out = base.clone();
        for &(j, col, value) in &self.pinned {
            let n = match self.half {
                ControlHalf::Alpha => out.junctions[j].alpha.len(),
                ControlHalf::Beta => out.junctions[j].beta.len(),
            };
            self.write_group(&mut out, j, col, std::iter::repeat_n(value, n));
        }
        for (g, &(j, col)) in self.layout.groups().iter().zip(&self.free) {
            self.write_group(&mut out, j, col, x[g.range()].iter().copied());
        }
        out
    }

    /// Projects raw genes, then decodes.
    pub fn decode_raw(&self, raw: &[f64], base: &ControlSet) -> ControlSet {
        self.decode(&self.layout.project(raw), base)
    }

    pub fn encode(&self, controls: &ControlSet) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for &(j, col) in &self.free {
            let jc = &controls.junctions[j];
            match self.half {
                ControlHalf::Alpha => x.extend(jc.alpha.iter().map(|row| row[col])),
                ControlHalf::Beta => x.extend(jc.beta.iter().map(|row| row[col])),
            }
        }
        x
    }
}
