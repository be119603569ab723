//! Sharp-interface energy on grain maps and the ε-sweep comparing minimized
//! phase-field energies with the cell-problem density.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use crate::cell::{g_lambda, CellParams, CellSolution, Functional, ProfilePath};
use crate::error::{Error, Result};
use crate::exec::map_vec;
use crate::field::{Grid, OrientationField, PhaseField};
use crate::matrix::MatrixD;
use crate::phasefield::{
    minimize_joint, minimize_newton_1d, Coupling, EnergyParams, JointOptions, NewtonOptions,
};
use crate::pointgroup::PointGroup;

/// Labelled partition of a grid with one orientation per label.
#[derive(Clone, Debug, PartialEq)]
pub struct GrainMap {
    pub grid: Grid,
    /// `None` marks cells outside every grain.
    pub labels: Vec<Option<u32>>,
    pub orientations: Vec<MatrixD>,
}

impl GrainMap {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} labels for {} cells",
                self.labels.len(),
                self.grid.len()
            )));
        }
        if let Some(l) = self
            .labels
            .iter()
            .flatten()
            .find(|&&l| l as usize >= self.orientations.len())
        {
            return Err(Error::DomainError(format!("label {l} has no orientation")));
        }
        for (k, r) in self.orientations.iter().enumerate() {
            let defect = r.orthogonality_defect();
            if !(defect <= 1e-10) {
                return Err(Error::NotOrthogonal { index: k, defect });
            }
        }
        Ok(())
    }

    pub fn grain_count(&self) -> usize {
        self.orientations.len()
    }

    /// Cells per label.
    pub fn cell_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.orientations.len()];
        for l in self.labels.iter().flatten() {
            counts[*l as usize] += 1;
        }
        counts
    }

    /// Two grains split at column `split`: columns `< split` carry `left`.
    pub fn two_grain(grid: Grid, split: usize, left: MatrixD, right: MatrixD) -> Self {
        let labels = (0..grid.len())
            .map(|c| Some(u32::from(grid.coords(c).0 >= split)))
            .collect();
        Self {
            grid,
            labels,
            orientations: vec![left, right],
        }
    }
}

type PairKey = ([u64; 9], [u64; 9]);

/// Memo table of g_λ values keyed by unordered pairs of canonical
/// representatives. A table is tied to the first `CellParams` it sees.
#[derive(Debug, Default)]
pub struct GCache {
    inner: Mutex<(Option<CellParams>, HashMap<PairKey, f64>)>,
}

impl GCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bits(m: &MatrixD) -> [u64; 9] {
        let mut out = [0u64; 9];
        for (o, x) in out.iter_mut().zip(m.as_slice()) {
            *o = x.to_bits();
        }
        out
    }

    fn key(a: &MatrixD, b: &MatrixD) -> PairKey {
        let (ka, kb) = (Self::bits(a), Self::bits(b));
        if ka <= kb {
            (ka, kb)
        } else {
            (kb, ka)
        }
    }

    fn get(&self, cp: &CellParams, key: &PairKey) -> Result<Option<f64>> {
        let mut guard = self.inner.lock().expect("cache lock");
        match &guard.0 {
            Some(p) if p != cp => {
                return Err(Error::DomainError(
                    "g cache was filled with different cell parameters".into(),
                ))
            }
            None => guard.0 = Some(cp.clone()),
            _ => {}
        }
        Ok(guard.1.get(key).copied())
    }

    fn put(&self, key: PairKey, value: f64) {
        self.inner.lock().expect("cache lock").1.insert(key, value);
    }
}

/// g_λ for the canonical representatives of the two classes, ordered as in
/// the cache key.
pub fn canonical_g(g: &PointGroup, a: &MatrixD, b: &MatrixD, cp: &CellParams) -> Result<f64> {
    let (ca, cb) = (g.canonical_rep(a)?, g.canonical_rep(b)?);
    let (x, y) = if GCache::bits(&ca) <= GCache::bits(&cb) {
        (ca, cb)
    } else {
        (cb, ca)
    };
    Ok(g_lambda(g, &x, &y, cp)?.value)
}

/// Σ over interior cell edges between different labels of (edge measure) ·
/// g_λ(R_i, R_j); the edge measure is h on 2D grids and 1 on 1D grids.
pub fn sharp_energy(gm: &GrainMap, g: &PointGroup, cp: &CellParams, cache: &GCache) -> Result<f64> {
    gm.validate()?;
    let grid = gm.grid;
    let edge_measure = grid.cell_measure() / grid.h;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for c in 0..grid.len() {
        for n in grid.forward(c) {
            if let (Some(a), Some(b)) = (gm.labels[c], gm.labels[n]) {
                if a != b {
                    let pair = (a.min(b), a.max(b));
                    edges.push(pair);
                    pairs.push(pair);
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let canon: Vec<MatrixD> = gm
        .orientations
        .iter()
        .map(|r| g.canonical_rep(r))
        .collect::<Result<_>>()?;
    let values: Vec<Result<f64>> = map_vec(cp.exec, pairs.clone(), |(a, b)| {
        let key = GCache::key(&canon[a as usize], &canon[b as usize]);
        if let Some(v) = cache.get(cp, &key)? {
            return Ok(v);
        }
        let v = canonical_g(g, &canon[a as usize], &canon[b as usize], cp)?;
        cache.put(key, v);
        Ok(v)
    });
    let mut table = HashMap::with_capacity(pairs.len());
    for (pair, v) in pairs.into_iter().zip(values) {
        table.insert(pair, v?);
    }
    Ok(edges.iter().map(|p| edge_measure * table[p]).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaRow {
    pub eps: f64,
    pub delta_eps: f64,
    pub m_eps: f64,
    pub e_min: f64,
    pub g_target: f64,
    pub ratio: f64,
    pub iters: usize,
    pub wall_ms: u128,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaOptions {
    /// 1 for an interval, 2 for a strip.
    pub dim: usize,
    /// Cells across the interface direction; the physical length is 1.
    pub n: usize,
    /// Cells along the interface in the strip.
    pub strip_cells: usize,
    pub coupling: Coupling,
    /// Descent on the interval profile.
    pub newton: NewtonOptions,
    /// Polish of the replicated profile on the strip.
    pub polish: JointOptions,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 4096,
            strip_cells: 4,
            coupling: Coupling::default(),
            newton: NewtonOptions::default(),
            polish: JointOptions {
                max_rounds: 5,
                iters: 2000,
                tol: 1e-12,
            },
        }
    }
}

/// Stretch a cell-problem path into physical space around `center`: node
/// spacing follows dt = 2√(Q/P), the equipartition parametrization of the
/// profile, and x = center + ε (t − t*) with t* at the deepest point of v.
fn stretched_profile(
    path: &ProfilePath,
    lambda: f64,
    cp: &CellParams,
    eps: f64,
    center: f64,
    xs: &[f64],
) -> Vec<(MatrixD, f64)> {
    let n = path.len();
    let energy = crate::cell::CellEnergy {
        rminus: path.beta[0],
        rplus: path.beta[n - 1],
        n,
        lambda,
        damage: cp.damage,
        functional: Functional::Length,
    };
    let (p_int, q_int) = energy.interval_factors(path);
    let mut t = vec![0.0; n];
    for k in 0..n - 1 {
        let dt = 2.0 * (q_int[k] / p_int[k].max(1e-12)).sqrt();
        t[k + 1] = t[k] + dt.min(50.0);
    }
    let deepest = (0..n)
        .min_by(|&a, &b| path.v[a].total_cmp(&path.v[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    let t_star = if path.v[deepest] < 1.0 {
        t[deepest]
    } else {
        0.5 * t[n - 1]
    };
    xs.iter()
        .map(|&x| {
            let tt = (x - center) / eps + t_star;
            if tt <= t[0] {
                return (path.beta[0], path.v[0]);
            }
            if tt >= t[n - 1] {
                return (path.beta[n - 1], path.v[n - 1]);
            }
            let k = t.partition_point(|&s| s <= tt).min(n - 1) - 1;
            let w = if t[k + 1] > t[k] {
                (tt - t[k]) / (t[k + 1] - t[k])
            } else {
                0.0
            };
            (
                path.beta[k] + (path.beta[k + 1] - path.beta[k]).scale(w),
                path.v[k] + (path.v[k + 1] - path.v[k]) * w,
            )
        })
        .collect()
}

/// Minimized two-grain phase-field energies per ε against g_λ(R⁻, R⁺) with
/// λ taken from the coupling. The outermost columns are pinned to R⁻ and R⁺.
pub fn gamma_sweep(
    rminus: &MatrixD,
    rplus: &MatrixD,
    g: &PointGroup,
    eps_list: &[f64],
    template: &EnergyParams,
    cp: &CellParams,
    opts: &GammaOptions,
) -> Result<(Vec<GammaRow>, CellSolution)> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::DomainError(
            "eps list must be nonempty and decreasing".into(),
        ));
    }
    if opts.dim != 1 && opts.dim != 2 {
        return Err(Error::DomainError(format!(
            "dim must be 1 or 2, got {}",
            opts.dim
        )));
    }
    let h = 1.0 / opts.n as f64;
    let smallest = eps_list[eps_list.len() - 1];
    if smallest / h < 8.0 {
        return Err(Error::DomainError(format!(
            "resolution too coarse: eps/h = {} < 8",
            smallest / h
        )));
    }
    let ny = if opts.dim == 1 {
        1
    } else {
        opts.strip_cells.max(2)
    };
    let grid = Grid::new(opts.n, ny, h)?;
    let cpl = cp.with_lambda(opts.coupling.lambda);
    let target = g_lambda(g, rminus, rplus, &cpl)?;
    let xs: Vec<f64> = (0..opts.n).map(|i| (i as f64 + 0.5) * h).collect();
    let pinned: Vec<usize> = (0..ny)
        .flat_map(|j| [grid.index(0, j), grid.index(opts.n - 1, j)])
        .collect();
    let interface_measure = if opts.dim == 1 { 1.0 } else { ny as f64 * h };
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let start = Instant::now();
        let params = EnergyParams {
            exec: template.exec,
            ..EnergyParams::coupled(eps, &opts.coupling, template.damage, 0.0)?
        };
        let profile = stretched_profile(&target.path, opts.coupling.lambda, &cpl, eps, 0.5, &xs);
        let row = Grid::new(opts.n, 1, h)?;
        let mut u = OrientationField::from_values(row, profile.iter().map(|(b, _)| *b).collect())?;
        let v = PhaseField::from_values(
            row,
            profile.iter().map(|(_, s)| s.clamp(0.0, 1.0)).collect(),
        )?;
        u.values[0] = *rminus;
        u.values[opts.n - 1] = *rplus;
        let mut run = minimize_newton_1d(&u, &v, g, &params, &[0, opts.n - 1], &opts.newton)?;
        let mut iters = run.iterations;
        if ny > 1 {
            let u2 = OrientationField::from_values(
                grid,
                (0..grid.len())
                    .map(|c| run.u.values[grid.coords(c).0])
                    .collect(),
            )?;
            let v2 = PhaseField::from_values(
                grid,
                (0..grid.len())
                    .map(|c| run.v.values[grid.coords(c).0])
                    .collect(),
            )?;
            let strip = minimize_joint(&u2, &v2, g, &params, None, &pinned, &opts.polish)?;
            iters += strip.iterations;
            run = strip;
        }
        let e = run.energy.total / interface_measure;
        let ratio = e / target.value;
        rows.push(GammaRow {
            eps,
            delta_eps: params.delta_eps,
            m_eps: params.m_eps,
            e_min: e,
            g_target: target.value,
            ratio,
            iters,
            wall_ms: start.elapsed().as_millis(),
            converged: run.converged,
        });
    }
    Ok((rows, target))
}

/// CSV rendering of a γ-sweep table (header line included).
pub fn gamma_csv(rows: &[GammaRow]) -> String {
    let mut out = String::from("eps,delta_eps,m_eps,e_min,g_target,ratio,iters,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:e},{:e},{},{},{}\n",
            r.eps, r.delta_eps, r.m_eps, r.e_min, r.g_target, r.ratio, r.iters, r.wall_ms
        ));
    }
    out
}
