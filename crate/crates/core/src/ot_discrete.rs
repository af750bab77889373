//! Exact discrete Monge transport by enumeration.
//!
//! Intended for small supports (n ≤ 10): every bijection is scored and the
//! cheapest one is returned, ties going to the lexicographically smallest
//! assignment.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const MAX_ENUMERATION: usize = 10;
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    points: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), masses.len())?;
        if points.is_empty() {
            return Err(Error::invalid("distribution needs at least one point"));
        }
        let dim = points[0].len();
        for p in &points {
            check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("support point".into()));
            }
        }
        if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::invalid("masses must be positive"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("masses sum to {total}, not 1")));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i] == points[j] {
                    return Err(Error::invalid(format!("points {i} and {j} coincide")));
                }
            }
        }
        Ok(DiscreteDistribution { points, masses })
    }

    /// Equal masses `1/n` on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Source point `i` is sent to target point `assignment[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportMap {
    pub assignment: Vec<usize>,
}

impl TransportMap {
    pub fn identity(n: usize) -> Self {
        TransportMap {
            assignment: (0..n).collect(),
        }
    }

    pub fn is_bijection(&self, n: usize) -> bool {
        if self.assignment.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        self.assignment
            .iter()
            .all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearTrajectory {
    pub knot_times: Vec<f64>,
    /// `knot_positions[i][k]` is the position of source point `i` at knot `k`.
    pub knot_positions: Vec<Vec<Vec<f64>>>,
}

impl PiecewiseLinearTrajectory {
    pub fn validate(&self) -> Result<()> {
        let t = &self.knot_times;
        if t.len() < 2 || t[0] != 0.0 || t[t.len() - 1] != 1.0 {
            return Err(Error::invalid("knot times must start at 0 and end at 1"));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("knot times must be strictly increasing"));
        }
        for path in &self.knot_positions {
            check_dim(t.len(), path.len())?;
        }
        Ok(())
    }

    /// Position of source point `i` at time `t ∈ [0, 1]`.
    pub fn position(&self, i: usize, t: f64) -> Vec<f64> {
        let times = &self.knot_times;
        let path = &self.knot_positions[i];
        let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
        let w = ((t - times[k - 1]) / (times[k] - times[k - 1])).clamp(0.0, 1.0);
        path[k - 1]
            .iter()
            .zip(&path[k])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

pub fn quadratic_cost(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn plan_cost(map: &TransportMap, src: &DiscreteDistribution, dst: &DiscreteDistribution) -> Result<f64> {
    check_dim(src.len(), dst.len())?;
    if !map.is_bijection(src.len()) {
        return Err(Error::invalid("assignment is not a bijection"));
    }
    let mut total = 0.0;
    for (i, &j) in map.assignment.iter().enumerate() {
        total += quadratic_cost(&src.points[i], &dst.points[j])? * src.masses[i];
    }
    Ok(total)
}

fn check_monge_instance(src: &DiscreteDistribution, dst: &DiscreteDistribution) -> Result<()> {
    check_dim(src.len(), dst.len())?;
    check_dim(src.dim(), dst.dim())?;
    if src.len() > MAX_ENUMERATION {
        return Err(Error::Unsupported(format!(
            "enumeration is limited to {MAX_ENUMERATION} points, got {}",
            src.len()
        )));
    }
    let m = src.masses[0];
    if src.masses.iter().chain(&dst.masses).any(|&v| (v - m).abs() > MASS_TOL) {
        return Err(Error::Unsupported(
            "unequal point masses need mass splitting, which a Monge map cannot do".into(),
        ));
    }
    Ok(())
}

/// Advances `perm` to the next permutation in lexicographic order.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| perm[i] < perm[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).expect("successor exists");
    perm.swap(i, j);
    perm[i + 1..].reverse();
    true
}

pub fn solve_monge(src: &DiscreteDistribution, dst: &DiscreteDistribution) -> Result<(TransportMap, f64)> {
    check_monge_instance(src, dst)?;
    let n = src.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = quadratic_cost(&src.points[i], &dst.points[j])? * src.masses[i];
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if c < best_cost - 1e-12 * best_cost.abs().max(1.0) || best_cost.is_infinite() {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((TransportMap { assignment: best }, best_cost))
}

/// Straight constant-velocity paths along the optimal static assignment.
pub fn solve_monge_time_dependent(
    src: &DiscreteDistribution,
    dst: &DiscreteDistribution,
) -> Result<PiecewiseLinearTrajectory> {
    let (map, _) = solve_monge(src, dst)?;
    Ok(PiecewiseLinearTrajectory {
        knot_times: vec![0.0, 1.0],
        knot_positions: map
            .assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| vec![src.points[i].clone(), dst.points[j].clone()])
            .collect(),
    })
}

/// `Σ_i μ_i ∫ |ż_i|² dt`, exact for piecewise-constant velocities.
pub fn trajectory_cost(traj: &PiecewiseLinearTrajectory, src: &DiscreteDistribution) -> Result<f64> {
    traj.validate()?;
    check_dim(src.len(), traj.knot_positions.len())?;
    let mut total = 0.0;
    for (i, path) in traj.knot_positions.iter().enumerate() {
        let mut action = 0.0;
        for k in 1..path.len() {
            let dt = traj.knot_times[k] - traj.knot_times[k - 1];
            action += quadratic_cost(&path[k], &path[k - 1])? / dt;
        }
        total += action * src.masses[i];
    }
    Ok(total)
}
