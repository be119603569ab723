//! The one-dimensional cell problem defining the surface energy density.
//!
//! `g_star` minimizes the reparametrization-invariant energy over paths
//! joining two orientations; `g_lambda` adds the minimum over the point-group
//! orbit of the second endpoint; `g_infinity` sweeps λ.

mod damage;
mod energy;
mod path;

pub use damage::DamageModel;
pub use energy::{CellEnergy, Functional};
pub use path::{BetaShape, ProfilePath, StartSpec};

use crate::error::{Error, Result};
use crate::exec::{map_range, map_vec, Execution};
use crate::manifold::geodesic_length;
use crate::matrix::MatrixD;
use crate::optimize::{minimize, BoxBounds, DescentOptions};
use crate::pointgroup::PointGroup;

/// Stall threshold on the relative decrease per iteration.
const REL_TOL: f64 = 1e-10;

/// Default λ grid standing in for λ = ∞.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    /// Penalty ratio λ ≥ 0; `f64::INFINITY` selects the sweep over
    /// `lambda_grid`.
    pub lambda: f64,
    pub damage: DamageModel,
    pub n: usize,
    pub multistarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Starts that survive the screening stage.
    pub keep: usize,
    /// Iterations granted to every start during screening.
    pub screen_iters: usize,
    pub lambda_grid: Vec<f64>,
    pub exec: Execution,
}

impl Default for CellParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            damage: DamageModel::default(),
            n: 512,
            multistarts: 12,
            max_iters: 5000,
            grad_tol: 1e-8,
            keep: 3,
            screen_iters: 60,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            exec: Execution::default(),
        }
    }
}

impl CellParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::DomainError(format!(
                "cell problem needs n >= 16, got {}",
                self.n
            )));
        }
        if self.multistarts == 0 || self.keep == 0 {
            return Err(Error::DomainError(
                "multistarts and keep must be >= 1".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::DomainError(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.damage.ell > 0.0) || !(self.damage.v_ceiling > 0.0 && self.damage.v_ceiling < 1.0)
        {
            return Err(Error::DomainError("invalid damage model".into()));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

/// Result of a cell solve.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub value: f64,
    pub path: ProfilePath,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the winning start in the multistart list.
    pub start: usize,
    /// Index of the orbit element G used for the second endpoint.
    pub orbit_index: usize,
}

fn check_orthogonal(m: &MatrixD) -> Result<()> {
    let defect = m.orthogonality_defect();
    if !(defect <= 1e-6) {
        return Err(Error::NotOrthogonal { index: 0, defect });
    }
    Ok(())
}

/// Discrete reparametrization-invariant energy of a path.
pub fn repar_energy(path: &ProfilePath, cp: &CellParams) -> f64 {
    let e = energy_for(path, cp.lambda, cp.damage, Functional::Length);
    e.value_of(&e.pack(path))
}

fn energy_for(
    path: &ProfilePath,
    lambda: f64,
    damage: DamageModel,
    functional: Functional,
) -> CellEnergy {
    CellEnergy {
        rminus: path.beta[0],
        rplus: path.beta[path.len() - 1],
        n: path.len(),
        lambda,
        damage,
        functional,
    }
}

/// Ordered multistart family for the pair (R⁻, R⁺).
pub fn start_specs(rminus: &MatrixD, rplus: &MatrixD, count: usize) -> Vec<StartSpec> {
    let s = rminus.dist(rplus).min(1.0);
    let same_component = rminus.det().signum() == rplus.det().signum()
        && crate::manifold::so_log(&(rminus.transpose() * *rplus)).is_ok();
    let mut specs = vec![StartSpec {
        shape: BetaShape::Jump,
        depth: 1.0,
        ramp: 1.0 / 3.0,
    }];
    let depths = [s.sqrt(), s, 1.0, (0.5 * s).sqrt(), s.powf(0.25)];
    let ramps = [1.0 / 3.0, 0.25];
    for &ramp in &ramps {
        for &depth in &depths {
            if same_component {
                specs.push(StartSpec {
                    shape: BetaShape::Geodesic,
                    depth,
                    ramp,
                });
            }
            specs.push(StartSpec {
                shape: BetaShape::Chord,
                depth,
                ramp,
            });
        }
    }
    specs.truncate(count.max(1));
    specs
}

fn bounds_for(energy: &CellEnergy) -> BoxBounds {
    let nb = (energy.n - 2) * energy.rminus.dim() * energy.rminus.dim();
    let total = energy.num_unknowns();
    let mut lower = vec![f64::NEG_INFINITY; total];
    let mut upper = vec![f64::INFINITY; total];
    for k in nb..total {
        lower[k] = 0.0;
        upper[k] = energy.damage.v_ceiling;
    }
    BoxBounds { lower, upper }
}

/// Endpoint distance below which the pair is treated as coincident.
const NEGLIGIBLE_DIST: f64 = 1e-12;
/// Relative change of the final polish below which a solve counts as
/// converged.
const SETTLED_REL: f64 = 1e-3;
/// Coarsest grid of the refinement schedule.
const COARSE_N: usize = 64;
/// Iteration cap on the coarsest grid.
const COARSE_ITERS: usize = 800;
/// Per-level iteration cap while prolonging to finer grids.
const LEVEL_ITERS: usize = 300;
/// Iteration cap of the final polish on the length.
const POLISH_ITERS: usize = 200;

/// Grid sizes from coarse to fine, ending at `n`.
fn schedule(n: usize) -> Vec<usize> {
    let mut levels = vec![n];
    let mut m = n;
    while m / 2 >= COARSE_N {
        m /= 2;
        levels.push(m);
    }
    levels.reverse();
    levels
}

struct Run {
    path: ProfilePath,
    length: f64,
    iterations: usize,
    converged: bool,
}

fn energies(
    rm: &MatrixD,
    rp: &MatrixD,
    n: usize,
    lambda: f64,
    damage: DamageModel,
) -> (CellEnergy, CellEnergy) {
    let action = CellEnergy {
        rminus: *rm,
        rplus: *rp,
        n,
        lambda,
        damage,
        functional: Functional::Action,
    };
    let mut length = action.clone();
    length.functional = Functional::Length;
    (action, length)
}

fn descend(
    e: &CellEnergy,
    x: &mut [f64],
    max_iters: usize,
    grad_tol: f64,
) -> crate::optimize::DescentReport {
    let bounds = bounds_for(e);
    let opts = DescentOptions {
        max_iters,
        grad_tol,
        rel_tol: REL_TOL,
        ..DescentOptions::default()
    };
    minimize(e, &bounds, x, &opts)
}

fn screen(
    rm: &MatrixD,
    rp: &MatrixD,
    lambda: f64,
    cp: &CellParams,
    n: usize,
    spec: &StartSpec,
) -> Result<Run> {
    let path = ProfilePath::from_spec(rm, rp, n, spec)?;
    let (action, length) = energies(rm, rp, n, lambda, cp.damage);
    let mut x = action.pack(&path);
    let initial = length.value_of(&x);
    let rep = descend(&action, &mut x, cp.screen_iters.min(cp.max_iters), 0.0);
    let len = length.value_of(&x);
    let (path, len) = if len <= initial {
        (action.unpack(&x), len)
    } else {
        (path, initial)
    };
    Ok(Run {
        path,
        length: len,
        iterations: rep.iterations,
        converged: false,
    })
}

/// Carry a screened start through the grid schedule, minimizing the action on
/// every level and polishing the length on the finest one.
fn refine(
    rm: &MatrixD,
    rp: &MatrixD,
    lambda: f64,
    cp: &CellParams,
    levels: &[usize],
    mut run: Run,
) -> Run {
    let mut budget = cp.max_iters.saturating_sub(run.iterations);
    for &m in levels {
        let fresh = run.path.len() == m;
        let path = if fresh {
            run.path.clone()
        } else {
            run.path.resample(m)
        };
        let (action, length) = energies(rm, rp, m, lambda, cp.damage);
        let mut x = action.pack(&path);
        let cap = if fresh { COARSE_ITERS } else { LEVEL_ITERS };
        let rep = descend(&action, &mut x, cap.min(budget), 0.0);
        budget -= rep.iterations;
        run.iterations += rep.iterations;
        let mut len = length.value_of(&x);
        let mut converged = rep.converged();
        if m == cp.n && budget > 0 {
            let mut y = x.clone();
            let rep = descend(&length, &mut y, POLISH_ITERS.min(budget), cp.grad_tol);
            budget -= rep.iterations;
            run.iterations += rep.iterations;
            if rep.value <= len {
                len = rep.value;
                x = y;
            }
            // The length has flat reparametrization directions, so the
            // gradient tolerance is rarely met; a polish that no longer moves
            // the value counts as converged too.
            let settled = rep.initial_value - rep.value <= SETTLED_REL * rep.value.abs();
            converged = rep.reason == crate::optimize::StopReason::GradientTolerance || settled;
        }
        run.path = action.unpack(&x);
        run.length = len;
        run.converged = converged;
    }
    run
}

/// g*_λ(R⁻, R⁺) for finite λ.
fn g_star_finite(rm: &MatrixD, rp: &MatrixD, lambda: f64, cp: &CellParams) -> Result<CellSolution> {
    if rm.dist(rp) <= NEGLIGIBLE_DIST {
        // Rounding-level mismatch (typically an orbit product): the straight
        // chord with v ≡ 1 is already optimal to machine precision.
        let path = ProfilePath::from_spec(
            rm,
            rp,
            cp.n,
            &StartSpec {
                shape: BetaShape::Chord,
                depth: 0.0,
                ramp: 0.5,
            },
        )?;
        let (_, length) = energies(rm, rp, cp.n, lambda, cp.damage);
        return Ok(CellSolution {
            value: length.value_of(&length.pack(&path)),
            path,
            converged: true,
            iterations: 0,
            start: 0,
            orbit_index: 0,
        });
    }
    let levels = schedule(cp.n);
    let specs = start_specs(rm, rp, cp.multistarts);
    let screened: Vec<Result<Run>> = map_range(cp.exec, specs.len(), |k| {
        screen(rm, rp, lambda, cp, levels[0], &specs[k])
    });
    let mut runs = Vec::with_capacity(screened.len());
    for r in screened {
        runs.push(r?);
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].length.total_cmp(&runs[b].length).then(a.cmp(&b)));
    let kept: Vec<usize> = order.iter().copied().take(cp.keep).collect();
    // The best discarded start (often the pinch competitor) is kept as an
    // unrefined fallback, evaluated on the final grid.
    let fallback = order.get(cp.keep).map(|&k| {
        let (_, length) = energies(rm, rp, cp.n, lambda, cp.damage);
        let path = runs[k].path.resample(cp.n);
        let len = length.value_of(&length.pack(&path));
        (
            k,
            Run {
                path,
                length: len,
                iterations: runs[k].iterations,
                converged: false,
            },
        )
    });
    let mut slots: Vec<Option<Run>> = runs.into_iter().map(Some).collect();
    let to_refine: Vec<(usize, Run)> = kept
        .iter()
        .map(|&k| (k, slots[k].take().expect("kept slot filled")))
        .collect();
    // All kept starts are carried to the second-finest grid; only the winner
    // is solved on the finest one.
    let (coarse_levels, fine_level) = levels.split_at(levels.len() - 1);
    let refined = map_vec(cp.exec, to_refine, |(k, run)| {
        (k, refine(rm, rp, lambda, cp, coarse_levels, run))
    });
    let mut best: Option<(usize, Run)> = None;
    for (k, run) in refined {
        if best
            .as_ref()
            .is_none_or(|(bk, b)| run.length < b.length || (run.length == b.length && k < *bk))
        {
            best = Some((k, run));
        }
    }
    let (k, run) = best.expect("at least one start");
    let mut best = Some((k, refine(rm, rp, lambda, cp, fine_level, run)));
    let any_converged = best.as_ref().is_some_and(|(_, r)| r.converged);
    if let Some((k, run)) = fallback {
        if best.as_ref().is_none_or(|(_, b)| run.length < b.length) {
            best = Some((k, run));
        }
    }
    let (start, run) = best.expect("at least one start");
    Ok(CellSolution {
        value: run.length,
        path: run.path,
        converged: any_converged,
        iterations: run.iterations,
        start,
        orbit_index: 0,
    })
}

/// g*_λ(R⁻, R⁺): the smallest discrete energy found over the multistart set.
/// For λ = ∞ this is the maximum over `cp.lambda_grid`.
pub fn g_star(rminus: &MatrixD, rplus: &MatrixD, cp: &CellParams) -> Result<CellSolution> {
    cp.validate()?;
    if rminus.dim() != rplus.dim() {
        return Err(Error::DimensionMismatch {
            expected: rminus.dim(),
            found: rplus.dim(),
        });
    }
    check_orthogonal(rminus)?;
    check_orthogonal(rplus)?;
    if cp.lambda.is_infinite() {
        let mut best: Option<CellSolution> = None;
        for &lam in &cp.lambda_grid {
            let sol = g_star_finite(rminus, rplus, lam, cp)?;
            if best.as_ref().is_none_or(|b| sol.value > b.value) {
                best = Some(sol);
            }
        }
        return best.ok_or_else(|| Error::DomainError("empty lambda grid".into()));
    }
    g_star_finite(rminus, rplus, cp.lambda, cp)
}

/// Rigorous lower bound on g*_λ for endpoints at Frobenius distance `s`.
/// Along any admissible path u = 1 − v stays below its maximum m, so
/// √P·√Q ≥ u·(f|β'| cos φ + |v'| sin φ) gives
/// g ≥ min over m of √((ℓ s log m)² + m⁴).
pub fn g_lower_bound(s: f64, ell: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let a = ell * s;
    // The minimizer solves 2m⁴ = a²|log m|: the left side increases and the
    // right side decreases in m.
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if 2.0 * m.powi(4) < a * a * (-m.ln()) {
            lo = m;
        } else {
            hi = m;
        }
    }
    let m = 0.5 * (lo + hi);
    (a * m.ln()).hypot(m * m).min(1.0)
}

/// g_λ(R⁻, R⁺) = min over G of g*_λ(R⁻, G·R⁺). Orbit elements whose lower
/// bound already exceeds the running minimum are skipped; ties go to the
/// first element in group order.
pub fn g_lambda(
    g: &PointGroup,
    rminus: &MatrixD,
    rplus: &MatrixD,
    cp: &CellParams,
) -> Result<CellSolution> {
    cp.validate()?;
    if rminus.dim() != g.dim() || rplus.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: if rminus.dim() != g.dim() {
                rminus.dim()
            } else {
                rplus.dim()
            },
        });
    }
    let orbit = g.orbit(rplus)?;
    let mut order: Vec<usize> = (0..orbit.len()).collect();
    let dists: Vec<f64> = orbit.iter().map(|m| rminus.dist(m)).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let mut best: Option<CellSolution> = None;
    for &k in &order {
        if let Some(b) = &best {
            // Discretization slack on the bound.
            if 0.9 * g_lower_bound(dists[k], cp.damage.ell) > b.value {
                continue;
            }
        }
        let mut sol = g_star(rminus, &orbit[k], cp)?;
        sol.orbit_index = k;
        let better = match &best {
            None => true,
            Some(b) => sol.value < b.value || (sol.value == b.value && k < b.orbit_index),
        };
        if better {
            best = Some(sol);
        }
    }
    Ok(best.expect("group has at least the identity"))
}

/// Result of a λ sweep.
#[derive(Clone, Debug)]
pub struct LambdaSweep {
    /// (λ, max of g_λ' over λ' ≤ λ) per grid point; nondecreasing.
    pub values: Vec<(f64, f64)>,
    /// Unmaximized g_λ per grid point.
    pub raw: Vec<f64>,
    /// Final running maximum, the g_∞ estimate.
    pub value: f64,
    /// Change of the running maximum at the last grid point.
    pub last_increment: f64,
    pub converged: bool,
}

/// g_∞ ≈ max over the λ grid of g_λ.
pub fn g_infinity(
    g: &PointGroup,
    rminus: &MatrixD,
    rplus: &MatrixD,
    cp: &CellParams,
    lambda_grid: &[f64],
) -> Result<LambdaSweep> {
    if lambda_grid.is_empty() || lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DomainError(
            "lambda grid must be nonempty and increasing".into(),
        ));
    }
    let mut values = Vec::with_capacity(lambda_grid.len());
    let mut raw = Vec::with_capacity(lambda_grid.len());
    let mut running = f64::NEG_INFINITY;
    let mut last_increment = 0.0;
    let mut converged = true;
    for &lam in lambda_grid {
        let sol = g_lambda(g, rminus, rplus, &cp.with_lambda(lam))?;
        converged &= sol.converged;
        let next = running.max(sol.value);
        last_increment = if running.is_finite() {
            next - running
        } else {
            0.0
        };
        running = next;
        values.push((lam, running));
        raw.push(sol.value);
    }
    Ok(LambdaSweep {
        values,
        raw,
        value: running,
        last_increment,
        converged,
    })
}

/// Closed-form competitor bound: min(1, s + L·√s·f(1−√s)) with s = |R⁻ − R⁺|
/// and L the SO(d) geodesic length; 1 once s ≥ 1.
pub fn rs_upper_bound(rminus: &MatrixD, rplus: &MatrixD, dm: &DamageModel) -> Result<f64> {
    check_orthogonal(rminus)?;
    check_orthogonal(rplus)?;
    let s = rminus.dist(rplus);
    if s == 0.0 {
        return Ok(0.0);
    }
    if s >= 1.0 {
        return Ok(1.0);
    }
    let root = s.sqrt();
    let length = match geodesic_length(rminus, rplus) {
        Ok(l) => l,
        // Unreachable for s < 1 (different components are at least 2 apart),
        // kept for completeness with the chord inflation factor C = 1.
        Err(_) => s * (1.0 + s),
    };
    Ok((s + length * root * dm.f(1.0 - root)).min(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsRow {
    pub theta: f64,
    pub s: f64,
    pub g: f64,
    pub ratio: f64,
    pub converged: bool,
}

/// Read–Shockley scaling table g_λ(I, R(θ)) / (s|log s|) for planar angles
/// (radians, positive, decreasing).
pub fn rs_scaling_table(g: &PointGroup, angles: &[f64], cp: &CellParams) -> Result<Vec<RsRow>> {
    if g.dim() != 2 {
        return Err(Error::UnsupportedDimension(g.dim()));
    }
    if angles.iter().any(|&a| !(a > 0.0)) || angles.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::DomainError(
            "angles must be positive and decreasing".into(),
        ));
    }
    let id = MatrixD::identity(2);
    angles
        .iter()
        .map(|&theta| {
            let r = MatrixD::rotation2(theta);
            let s = id.dist(&r);
            let sol = g_lambda(g, &id, &r, cp)?;
            Ok(RsRow {
                theta,
                s,
                g: sol.value,
                ratio: sol.value / (s * s.ln().abs()),
                converged: sol.converged,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
