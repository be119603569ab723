//! Discrete phase-field energy in quotient form and its alternating
//! minimization.
//!
//! With cell measure μ (h² in 2D, h in 1D) and forward differences:
//!
//! ```text
//! (i)   Σ_c μ f_ε²(v_c) Σ_{n fwd} d_G(u_c, u_n)² / h²
//! (ii)  Σ_c μ [ (1 − v_c)² / 4ε + ε Σ_{n fwd} (v_n − v_c)² / h² ]
//! (iii) Σ_c μ dist²(u_c, O(d)) / δ_ε
//! (iv)  γ FT(u)
//! ```

use std::collections::VecDeque;

use crate::cell::DamageModel;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::field::{Grid, OrientationField, PhaseField};
use crate::manifold::{dist_orthogonal_sq_with_grad, project_ball};
use crate::matrix::MatrixD;
use crate::optimize::{minimize, BoxBounds, DescentOptions, Objective, Projection, StopReason};
use crate::pointgroup::PointGroup;
use crate::segmentation::Fidelity;

/// How δ_ε and M_ε follow ε: δ_ε = ε/λ and M_ε = ε^(−m_power).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub lambda: f64,
    pub m_power: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            m_power: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub eps: f64,
    pub delta_eps: f64,
    pub m_eps: f64,
    pub damage: DamageModel,
    /// Fidelity weight γ.
    pub gamma: f64,
    pub exec: Execution,
}

impl EnergyParams {
    /// Default coupling δ_ε = ε, M_ε = ε^(−1/4).
    pub fn new(eps: f64) -> Result<Self> {
        Self::coupled(eps, &Coupling::default(), DamageModel::default(), 0.0)
    }

    pub fn coupled(eps: f64, c: &Coupling, damage: DamageModel, gamma: f64) -> Result<Self> {
        if !(c.lambda > 0.0) || !c.lambda.is_finite() {
            return Err(Error::DomainError(format!(
                "coupling lambda must be positive and finite, got {}",
                c.lambda
            )));
        }
        let p = Self {
            eps,
            delta_eps: eps / c.lambda,
            m_eps: eps.powf(-c.m_power),
            damage,
            gamma,
            exec: Execution::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("eps", self.eps),
            ("delta_eps", self.delta_eps),
            ("m_eps", self.m_eps),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::DomainError(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::DomainError(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// f_ε(s) = min(M_ε, √ε f(s)) on [0, 1), and M_ε at s = 1.
pub fn f_eps_eval(s: f64, p: &EnergyParams) -> f64 {
    f_eps_with_derivative(s, p).0
}

fn f_eps_with_derivative(s: f64, p: &EnergyParams) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    if s >= 1.0 {
        return (p.m_eps, 0.0);
    }
    let (f, fp) = p.damage.f_with_derivative(s);
    let root = p.eps.sqrt();
    if root * f >= p.m_eps {
        (p.m_eps, 0.0)
    } else {
        (root * f, root * fp)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub grad: f64,
    pub at: f64,
    pub pen: f64,
    pub fid: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(grad: f64, at: f64, pen: f64, fid: f64) -> Self {
        Self {
            grad,
            at,
            pen,
            fid,
            total: grad + at + pen + fid,
        }
    }
}

fn check_inputs(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
) -> Result<()> {
    u.grid.check_same(&v.grid)?;
    if u.d != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: u.d,
        });
    }
    p.validate()
}

/// Σ over forward neighbours of d_G(u_c, u_n)², together with the active
/// orbit element of each forward edge (right, down).
fn edge_terms(u: &OrientationField, g: &PointGroup, exec: Execution) -> Vec<(f64, [usize; 2])> {
    let grid = u.grid;
    map_range(exec, grid.len(), |c| {
        let mut sum = 0.0;
        let mut active = [0usize; 2];
        for (slot, n) in grid.forward(c).enumerate() {
            let (k, d) = g.nearest(&u.values[c], &u.values[n]);
            sum += d * d;
            active[slot] = k;
        }
        (sum, active)
    })
}

/// Energy with per-term breakdown.
pub fn energy_total(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    fidelity: Option<&Fidelity>,
) -> Result<EnergyBreakdown> {
    check_inputs(u, v, g, p)?;
    let grid = u.grid;
    let mu = grid.cell_measure();
    let h2 = grid.h * grid.h;
    let edges = edge_terms(u, g, p.exec);
    let per_cell = map_range(p.exec, grid.len(), |c| {
        let vc = v.values[c];
        let f = f_eps_eval(vc, p);
        let grad = mu * f * f * edges[c].0 / h2;
        let dv2: f64 = grid.forward(c).map(|n| (v.values[n] - vc).powi(2)).sum();
        let at = mu * ((1.0 - vc).powi(2) / (4.0 * p.eps) + p.eps * dv2 / h2);
        let pen = mu * dist_orthogonal_sq_with_grad(&u.values[c]).0 / p.delta_eps;
        (grad, at, pen)
    });
    let (mut grad, mut at, mut pen) = (0.0, 0.0, 0.0);
    for (a, b, c) in per_cell {
        grad += a;
        at += b;
        pen += c;
    }
    let fid = match fidelity {
        Some(ft) if p.gamma > 0.0 => p.gamma * ft.value(u, g, p.exec)?,
        _ => 0.0,
    };
    Ok(EnergyBreakdown::new(grad, at, pen, fid))
}

/// Analytic gradient of the energy with respect to v.
pub fn energy_gradient_v(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
) -> Result<Vec<f64>> {
    check_inputs(u, v, g, p)?;
    let edges = edge_terms(u, g, p.exec);
    let s: Vec<f64> = edges.iter().map(|e| e.0).collect();
    Ok(VObjective { grid: u.grid, s, p }.gradient(&v.values))
}

/// Analytic gradient with respect to u at fixed active orbit elements.
pub fn energy_gradient_u(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    fidelity: Option<&Fidelity>,
) -> Result<Vec<MatrixD>> {
    check_inputs(u, v, g, p)?;
    if let Some(ft) = fidelity.filter(|_| p.gamma > 0.0) {
        ft.check(u, g)?;
    }
    let obj = BetaObjective::new(u, v, g, p, fidelity);
    let mut grad = vec![0.0; u.values.len() * u.dd()];
    obj.eval(&u.flatten(), &mut grad);
    Ok(OrientationField::from_flat(u.grid, u.d, &grad).values)
}

struct VObjective<'a> {
    grid: Grid,
    /// Σ_fwd d_G² per cell, frozen during the v step.
    s: Vec<f64>,
    p: &'a EnergyParams,
}

impl VObjective<'_> {
    fn parts(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let grid = self.grid;
        let mu = grid.cell_measure();
        let h2 = grid.h * grid.h;
        let p = self.p;
        map_range(p.exec, grid.len(), |c| {
            let vc = x[c];
            let (f, fp) = f_eps_with_derivative(vc, p);
            let mut e = mu * (f * f * self.s[c] / h2 + (1.0 - vc).powi(2) / (4.0 * p.eps));
            let mut d = mu * (2.0 * f * fp * self.s[c] / h2 - (1.0 - vc) / (2.0 * p.eps));
            for n in grid.forward(c) {
                let diff = x[n] - vc;
                e += mu * p.eps * diff * diff / h2;
                d -= 2.0 * mu * p.eps * diff / h2;
            }
            for q in grid.backward(c) {
                d += 2.0 * mu * p.eps * (vc - x[q]) / h2;
            }
            (e, d)
        })
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.parts(x).into_iter().map(|(_, d)| d).collect()
    }
}

impl Objective for VObjective<'_> {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (k, (e, d)) in self.parts(x).into_iter().enumerate() {
            total += e;
            grad[k] = d;
        }
        total
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.parts(x).into_iter().map(|(e, _)| e).sum()
    }
}

struct BetaObjective<'a> {
    grid: Grid,
    d: usize,
    /// μ f_ε²(v_c) / h² per cell.
    weight: Vec<f64>,
    /// Active orbit element per forward edge (right, down), frozen.
    active: Vec<[usize; 2]>,
    g: &'a PointGroup,
    p: &'a EnergyParams,
    fidelity: Option<&'a Fidelity>,
}

impl<'a> BetaObjective<'a> {
    fn new(
        u: &OrientationField,
        v: &PhaseField,
        g: &'a PointGroup,
        p: &'a EnergyParams,
        fidelity: Option<&'a Fidelity>,
    ) -> Self {
        let grid = u.grid;
        let mu = grid.cell_measure();
        let h2 = grid.h * grid.h;
        let active = edge_terms(u, g, p.exec).into_iter().map(|e| e.1).collect();
        let weight = v
            .values
            .iter()
            .map(|&vc| mu * f_eps_eval(vc, p).powi(2) / h2)
            .collect();
        Self {
            grid,
            d: u.d,
            weight,
            active,
            g,
            p,
            fidelity: fidelity.filter(|_| p.gamma > 0.0),
        }
    }

    fn cell(&self, x: &[f64], c: usize) -> MatrixD {
        let dd = self.d * self.d;
        let mut m = MatrixD::zeros(self.d);
        m.as_mut_slice().copy_from_slice(&x[c * dd..(c + 1) * dd]);
        m
    }

    /// Per-cell energy (gradient term from its forward edges plus penalty)
    /// and gradient (gathered from all incident edges).
    fn parts(&self, x: &[f64], want_grad: bool) -> Vec<(f64, MatrixD)> {
        self.parts_with(x, &self.weight, want_grad)
    }

    /// γ·FT at `u`, with its gradient added into `grad`.
    fn add_fidelity(&self, u: &OrientationField, grad: &mut [f64]) -> f64 {
        let Some(ft) = self.fidelity else { return 0.0 };
        let dd = self.d * self.d;
        let (val, fg) = ft
            .value_and_gradient(u, self.g, self.p.exec)
            .expect("fidelity inputs checked before descent");
        for (c, m) in fg.iter().enumerate() {
            for (k, gk) in m.as_slice().iter().enumerate() {
                grad[c * dd + k] += self.p.gamma * gk;
            }
        }
        self.p.gamma * val
    }

    /// Σ_fwd |u_c − G* u_n|² per cell with the frozen active elements.
    fn frozen_sums(&self, x: &[f64]) -> Vec<f64> {
        let grid = self.grid;
        let elems = self.g.elements();
        map_range(self.p.exec, grid.len(), |c| {
            let uc = self.cell(x, c);
            grid.forward(c)
                .enumerate()
                .map(|(slot, n)| (uc - elems[self.active[c][slot]] * self.cell(x, n)).norm_sq())
                .sum()
        })
    }

    fn parts_with(&self, x: &[f64], weight: &[f64], want_grad: bool) -> Vec<(f64, MatrixD)> {
        let grid = self.grid;
        let mu = grid.cell_measure();
        let elems = self.g.elements();
        map_range(self.p.exec, grid.len(), |c| {
            let uc = self.cell(x, c);
            let mut e = 0.0;
            let mut grad = MatrixD::zeros(self.d);
            for (slot, n) in grid.forward(c).enumerate() {
                let diff = uc - elems[self.active[c][slot]] * self.cell(x, n);
                e += weight[c] * diff.norm_sq();
                if want_grad {
                    grad += diff.scale(2.0 * weight[c]);
                }
            }
            if want_grad {
                for q in grid.backward(c) {
                    // Edge q → c is the right edge of q when they share a row.
                    let slot = if q + 1 == c && c % grid.nx != 0 {
                        0
                    } else {
                        grid.forward(q).count() - 1
                    };
                    let gk = elems[self.active[q][slot]];
                    let diff = self.cell(x, q) - gk * uc;
                    grad -= (gk.transpose() * diff).scale(2.0 * weight[q]);
                }
            }
            let (d2, dgrad) = dist_orthogonal_sq_with_grad(&uc);
            e += mu * d2 / self.p.delta_eps;
            if want_grad {
                grad += dgrad.scale(mu / self.p.delta_eps);
            }
            (e, grad)
        })
    }
}

impl Objective for BetaObjective<'_> {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let dd = self.d * self.d;
        let u = OrientationField::from_flat(self.grid, self.d, x);
        let mut total = 0.0;
        for (c, (e, gc)) in self.parts(x, true).into_iter().enumerate() {
            total += e;
            grad[c * dd..(c + 1) * dd].copy_from_slice(gc.as_slice());
        }
        total + self.add_fidelity(&u, grad)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut total: f64 = self.parts(x, false).into_iter().map(|(e, _)| e).sum();
        if let Some(ft) = self.fidelity {
            let u = OrientationField::from_flat(self.grid, self.d, x);
            total += self.p.gamma
                * ft.value(&u, self.g, self.p.exec)
                    .expect("fidelity inputs checked before descent");
        }
        total
    }
}

/// Cellwise projection onto the ball ‖·‖_F ≤ √d, with optional pinned cells
/// held at fixed values.
struct BallConstraint {
    d: usize,
    pinned: Vec<(usize, MatrixD)>,
}

impl Projection for BallConstraint {
    fn project(&self, x: &mut [f64]) {
        let dd = self.d * self.d;
        for chunk in x.chunks_exact_mut(dd) {
            let mut m = MatrixD::zeros(self.d);
            m.as_mut_slice().copy_from_slice(chunk);
            chunk.copy_from_slice(project_ball(&m).as_slice());
        }
        for (c, m) in &self.pinned {
            x[c * dd..(c + 1) * dd].copy_from_slice(m.as_slice());
        }
    }

    fn mask_direction(&self, _x: &[f64], _grad: &[f64], dir: &mut [f64]) {
        let dd = self.d * self.d;
        for (c, _) in &self.pinned {
            dir[c * dd..(c + 1) * dd].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn residual(&self, x: &[f64], grad: &[f64]) -> f64 {
        let mut y: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a - b).collect();
        self.project(&mut y);
        y.iter()
            .zip(x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    /// Projected quasi-Newton iterations per step.
    pub inner_iters: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { inner_iters: 20 }
    }
}

/// Outcome of one minimization step.
#[derive(Clone, Debug)]
pub struct Step<T> {
    pub field: T,
    pub before: f64,
    pub after: f64,
    /// No step was accepted; the field is returned unchanged.
    pub line_search_failed: bool,
}

fn inner_options(opts: &SweepOptions) -> DescentOptions {
    DescentOptions {
        max_iters: opts.inner_iters,
        grad_tol: 0.0,
        rel_tol: 1e-14,
        stall_window: 3,
        // The fidelity term is only piecewise smooth; at a kink no direction
        // descends and long backtracking buys nothing.
        max_halvings: 20,
        ..DescentOptions::default()
    }
}

/// One projected descent sweep on v ∈ [0, 1] at fixed u.
pub fn minimize_step_v(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    opts: &SweepOptions,
) -> Result<Step<PhaseField>> {
    check_inputs(u, v, g, p)?;
    let s = edge_terms(u, g, p.exec).into_iter().map(|e| e.0).collect();
    let obj = VObjective { grid: u.grid, s, p };
    let n = v.values.len();
    let bounds = BoxBounds {
        lower: vec![0.0; n],
        upper: vec![1.0; n],
    };
    let mut x = v.values.clone();
    let rep = minimize(&obj, &bounds, &mut x, &inner_options(opts));
    let failed = rep.reason == StopReason::LineSearchFailure
        && rep.iterations <= 1
        && rep.value == rep.initial_value;
    Ok(Step {
        field: PhaseField {
            grid: v.grid,
            values: x,
        },
        before: rep.initial_value,
        after: rep.value,
        line_search_failed: failed,
    })
}

/// One projected descent sweep on u at fixed v, with the active orbit
/// element of every edge frozen at its current value and every cell
/// projected onto the ball ‖·‖_F ≤ √d. Cells listed in `pinned` keep their
/// values.
pub fn minimize_step_beta(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    fidelity: Option<&Fidelity>,
    pinned: &[usize],
    opts: &SweepOptions,
) -> Result<Step<OrientationField>> {
    check_inputs(u, v, g, p)?;
    if let Some(&c) = pinned.iter().find(|&&c| c >= u.grid.len()) {
        return Err(Error::GridMismatch(format!(
            "pinned cell {c} outside the grid"
        )));
    }
    if let Some(ft) = fidelity.filter(|_| p.gamma > 0.0) {
        ft.check(u, g)?;
    }
    let obj = BetaObjective::new(u, v, g, p, fidelity);
    let proj = BallConstraint {
        d: u.d,
        pinned: pinned.iter().map(|&c| (c, u.values[c])).collect(),
    };
    let mut x = u.flatten();
    let rep = minimize(&obj, &proj, &mut x, &inner_options(opts));
    let failed = rep.reason == StopReason::LineSearchFailure
        && rep.iterations <= 1
        && rep.value == rep.initial_value;
    Ok(Step {
        field: OrientationField::from_flat(u.grid, u.d, &x),
        before: rep.initial_value,
        after: rep.value,
        line_search_failed: failed,
    })
}

/// The energy in (u, v) jointly, laid out as `[u flat, v]`, with the active
/// orbit elements frozen.
struct JointObjective<'a> {
    beta: BetaObjective<'a>,
}

impl JointObjective<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.beta.grid.len() * self.beta.d * self.beta.d)
    }

    fn weights(&self, v: &[f64]) -> Vec<f64> {
        let grid = self.beta.grid;
        let scale = grid.cell_measure() / (grid.h * grid.h);
        v.iter()
            .map(|&vc| scale * f_eps_eval(vc, self.beta.p).powi(2))
            .collect()
    }
}

impl Objective for JointObjective<'_> {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let b = &self.beta;
        let dd = b.d * b.d;
        let (xu, xv) = self.split(x);
        let weight = self.weights(xv);
        let s = b.frozen_sums(xu);
        let coupling: f64 = weight.iter().zip(&s).map(|(w, s)| w * s).sum();
        let mut total = -coupling;
        let (gu, gv) = grad.split_at_mut(xu.len());
        for (c, (e, gc)) in b.parts_with(xu, &weight, true).into_iter().enumerate() {
            total += e;
            gu[c * dd..(c + 1) * dd].copy_from_slice(gc.as_slice());
        }
        let vobj = VObjective {
            grid: b.grid,
            s,
            p: b.p,
        };
        for (c, (e, d)) in vobj.parts(xv).into_iter().enumerate() {
            total += e;
            gv[c] = d;
        }
        if b.fidelity.is_some() {
            total += b.add_fidelity(&OrientationField::from_flat(b.grid, b.d, xu), gu);
        }
        total
    }
}

/// Ball constraint on the u block, [0, 1] on the v block.
struct JointConstraint {
    ball: BallConstraint,
    offset: usize,
}

impl Projection for JointConstraint {
    fn project(&self, x: &mut [f64]) {
        let (xu, xv) = x.split_at_mut(self.offset);
        self.ball.project(xu);
        xv.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    fn mask_direction(&self, x: &[f64], grad: &[f64], dir: &mut [f64]) {
        let (du, dv) = dir.split_at_mut(self.offset);
        self.ball
            .mask_direction(&x[..self.offset], &grad[..self.offset], du);
        for ((d, v), g) in dv
            .iter_mut()
            .zip(&x[self.offset..])
            .zip(&grad[self.offset..])
        {
            if (*v <= 0.0 && *g > 0.0) || (*v >= 1.0 && *g < 0.0) {
                *d = 0.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointOptions {
    /// Refreshes of the active orbit elements.
    pub max_rounds: usize,
    /// Quasi-Newton iterations per round.
    pub iters: usize,
    /// Stop once a round lowers the energy by less than this, relatively.
    pub tol: f64,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            max_rounds: 20,
            iters: 20000,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointRun {
    pub u: OrientationField,
    pub v: PhaseField,
    pub energy: EnergyBreakdown,
    pub rounds: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected quasi-Newton descent in (u, v) together. Each round freezes the
/// active orbit elements at the current iterate; rounds repeat until the
/// energy stops moving. Cells in `pinned` keep their u values.
pub fn minimize_joint(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    fidelity: Option<&Fidelity>,
    pinned: &[usize],
    opts: &JointOptions,
) -> Result<JointRun> {
    check_inputs(u, v, g, p)?;
    if let Some(&c) = pinned.iter().find(|&&c| c >= u.grid.len()) {
        return Err(Error::GridMismatch(format!(
            "pinned cell {c} outside the grid"
        )));
    }
    if let Some(ft) = fidelity.filter(|_| p.gamma > 0.0) {
        ft.check(u, g)?;
    }
    let mut u = u.clone();
    let mut v = v.clone();
    let mut energy = energy_total(&u, &v, g, p, fidelity)?;
    let mut rounds = 0;
    let mut iterations = 0;
    let mut converged = energy.total == 0.0;
    while !converged && rounds < opts.max_rounds {
        rounds += 1;
        let obj = JointObjective {
            beta: BetaObjective::new(&u, &v, g, p, fidelity),
        };
        let offset = u.values.len() * u.dd();
        let proj = JointConstraint {
            ball: BallConstraint {
                d: u.d,
                pinned: pinned.iter().map(|&c| (c, u.values[c])).collect(),
            },
            offset,
        };
        let mut x = u.flatten();
        x.extend_from_slice(&v.values);
        let rep = minimize(
            &obj,
            &proj,
            &mut x,
            &DescentOptions {
                max_iters: opts.iters,
                grad_tol: 0.0,
                rel_tol: 1e-15,
                stall_window: 20,
                memory: 12,
                ..DescentOptions::default()
            },
        );
        iterations += rep.iterations;
        let (xu, xv) = x.split_at(offset);
        u = OrientationField::from_flat(u.grid, u.d, xu);
        v = PhaseField {
            grid: v.grid,
            values: xv.to_vec(),
        };
        let next = energy_total(&u, &v, g, p, fidelity)?;
        let change = (energy.total - next.total) / energy.total.abs().max(f64::MIN_POSITIVE);
        energy = next;
        converged = change < opts.tol || energy.total == 0.0;
    }
    Ok(JointRun {
        u,
        v,
        energy,
        rounds,
        iterations,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the energy by less than this,
    /// relatively.
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 400,
            tol: 1e-13,
        }
    }
}

type Block = nalgebra::DMatrix<f64>;

/// Block-tridiagonal Cholesky solve of `(H + shift·D) d = rhs` with
/// symmetric H given by its diagonal blocks and sub-diagonal blocks
/// (`lower[c]` couples cell c to c − 1) and D diagonal. `None` if the
/// shifted matrix is not positive definite.
fn block_tridiagonal_solve(
    diag: &[Block],
    lower: &[Block],
    damp: &[nalgebra::DVector<f64>],
    shift: f64,
    rhs: &[nalgebra::DVector<f64>],
) -> Option<Vec<nalgebra::DVector<f64>>> {
    let n = diag.len();
    let k = diag[0].nrows();
    let mut chol = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for c in 0..n {
        let mut s = diag[c].clone();
        for i in 0..k {
            s[(i, i)] += shift * damp[c][i];
        }
        let mut b = rhs[c].clone();
        if c > 0 {
            let prev: &nalgebra::Cholesky<f64, nalgebra::Dyn> = &chol[c - 1];
            let w = prev.solve(&lower[c].transpose()).transpose();
            s -= &w * lower[c].transpose();
            b -= &w * &y[c - 1];
        }
        chol.push(nalgebra::Cholesky::new(s)?);
        y.push(b);
    }
    let mut d = vec![nalgebra::DVector::zeros(k); n];
    for c in (0..n).rev() {
        let mut b = y[c].clone();
        if c + 1 < n {
            b -= lower[c + 1].transpose() * &d[c + 1];
        }
        d[c] = chol[c].solve(&b);
    }
    Some(d)
}

/// Symmetrized block-tridiagonal Hessian of a one-row joint objective by
/// central differences of the gradient; each colour perturbs every third
/// cell in one component.
fn joint_hessian(obj: &JointObjective, x: &[f64], n: usize, dd: usize) -> (Vec<Block>, Vec<Block>) {
    let k = dd + 1;
    let idx = |c: usize, j: usize| if j < dd { c * dd + j } else { n * dd + c };
    let mut diag = vec![Block::zeros(k, k); n];
    let mut lower = vec![Block::zeros(k, k); n];
    let mut upper = vec![Block::zeros(k, k); n];
    let mut gp = vec![0.0; x.len()];
    let mut gm = vec![0.0; x.len()];
    for colour in 0..3 {
        for j in 0..k {
            let tau = 1e-6;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            for c in (colour..n).step_by(3) {
                xp[idx(c, j)] += tau;
                xm[idx(c, j)] -= tau;
            }
            obj.eval(&xp, &mut gp);
            obj.eval(&xm, &mut gm);
            for src in (colour..n).step_by(3) {
                for row in src.saturating_sub(1)..(src + 2).min(n) {
                    for i in 0..k {
                        let h = (gp[idx(row, i)] - gm[idx(row, i)]) / (2.0 * tau);
                        if row == src {
                            diag[row][(i, j)] = h;
                        } else if row == src + 1 {
                            lower[row][(i, j)] = h;
                        } else {
                            upper[row][(i, j)] = h;
                        }
                    }
                }
            }
        }
    }
    for c in 0..n {
        diag[c] = (&diag[c] + diag[c].transpose()) * 0.5;
        if c > 0 {
            lower[c] = (&lower[c] + upper[c - 1].transpose()) * 0.5;
        }
    }
    (diag, lower)
}

/// Damped Newton descent in (u, v) on a one-row grid. The Hessian of the
/// energy with the active orbit elements frozen is block tridiagonal; it is
/// assembled from central differences of the analytic gradient, perturbing
/// every third cell at once. Pinned cells keep their u values; v stays in
/// [0, 1]. No ball projection is applied during the descent; the result is
/// truncated at the end, which cannot raise the energy.
pub fn minimize_newton_1d(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    p: &EnergyParams,
    pinned: &[usize],
    opts: &NewtonOptions,
) -> Result<JointRun> {
    check_inputs(u, v, g, p)?;
    if u.grid.ny != 1 {
        return Err(Error::GridMismatch(format!(
            "Newton descent needs a single row, got ny = {}",
            u.grid.ny
        )));
    }
    if let Some(&c) = pinned.iter().find(|&&c| c >= u.grid.len()) {
        return Err(Error::GridMismatch(format!(
            "pinned cell {c} outside the grid"
        )));
    }
    let grid = u.grid;
    let n = grid.len();
    let (d, dd) = (u.d, u.dd());
    let k = dd + 1;
    let idx = |c: usize, j: usize| if j < dd { c * dd + j } else { n * dd + c };
    let mut fixed = vec![false; n * k];
    for &c in pinned {
        for j in 0..dd {
            fixed[c * k + j] = true;
        }
    }
    let fields = |x: &[f64]| {
        let (xu, xv) = x.split_at(n * dd);
        (
            OrientationField::from_flat(grid, d, xu),
            PhaseField {
                grid,
                values: xv.to_vec(),
            },
        )
    };
    let mut x = u.flatten();
    x.extend(v.values.iter().map(|s| s.clamp(0.0, 1.0)));
    let (mut cu, mut cv) = fields(&x);
    let mut energy = energy_total(&cu, &cv, g, p, None)?.total;
    let mut grad = vec![0.0; x.len()];
    let mut shift = 0.0f64;
    let mut iterations = 0;
    let mut converged = energy == 0.0;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let obj = JointObjective {
            beta: BetaObjective::new(&cu, &cv, g, p, None),
        };
        obj.eval(&x, &mut grad);
        // Active bounds on v are held like pinned entries for this step.
        let held: Vec<bool> = (0..n * k)
            .map(|r| {
                let (c, j) = (r / k, r % k);
                fixed[r]
                    || (j == dd
                        && ((x[idx(c, j)] <= 0.0 && grad[idx(c, j)] > 0.0)
                            || (x[idx(c, j)] >= 1.0 && grad[idx(c, j)] < 0.0)))
            })
            .collect();
        let (mut diag, mut lower) = joint_hessian(&obj, &x, n, dd);
        for c in 0..n {
            for i in 0..k {
                if held[c * k + i] {
                    for j in 0..k {
                        diag[c][(i, j)] = 0.0;
                        diag[c][(j, i)] = 0.0;
                        lower[c][(i, j)] = 0.0;
                        if c + 1 < n {
                            lower[c + 1][(j, i)] = 0.0;
                        }
                    }
                    diag[c][(i, i)] = 1.0;
                }
            }
        }
        let rhs: Vec<nalgebra::DVector<f64>> = (0..n)
            .map(|c| {
                nalgebra::DVector::from_fn(k, |i, _| {
                    if held[c * k + i] {
                        0.0
                    } else {
                        -grad[idx(c, i)]
                    }
                })
            })
            .collect();
        let floor = 1e-8
            * diag
                .iter()
                .map(|b| (0..k).map(|i| b[(i, i)].abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max)
                .max(1e-300);
        let damp: Vec<nalgebra::DVector<f64>> = diag
            .iter()
            .map(|b| nalgebra::DVector::from_fn(k, |i, _| b[(i, i)].abs().max(floor)))
            .collect();
        let mut accepted = None;
        for _ in 0..60 {
            let Some(step) = block_tridiagonal_solve(&diag, &lower, &damp, shift, &rhs) else {
                shift = (shift * 10.0).max(1e-12);
                continue;
            };
            let mut trial = x.clone();
            for (c, block) in step.iter().enumerate() {
                for (i, delta) in block.iter().enumerate() {
                    let r = idx(c, i);
                    trial[r] += delta;
                    if i == dd {
                        trial[r] = trial[r].clamp(0.0, 1.0);
                    }
                }
            }
            let decrease: f64 = trial
                .iter()
                .zip(&x)
                .zip(&grad)
                .map(|((t, a), g)| g * (t - a))
                .sum();
            let (tu, tv) = fields(&trial);
            let e = energy_total(&tu, &tv, g, p, None)?.total;
            if decrease < 0.0 && e <= energy + 1e-4 * decrease {
                accepted = Some((trial, tu, tv, e));
                shift *= 0.25;
                break;
            }
            shift = (shift * 10.0).max(1e-12);
        }
        let Some((trial, tu, tv, e)) = accepted else {
            // No step lowers the energy: stationary to working precision.
            converged = true;
            break;
        };
        let change = (energy - e) / energy.abs().max(f64::MIN_POSITIVE);
        x = trial;
        cu = tu;
        cv = tv;
        energy = e;
        converged = change < opts.tol;
    }
    let cu = cu.truncated();
    let energy = energy_total(&cu, &cv, g, p, None)?;
    Ok(JointRun {
        u: cu,
        v: cv,
        energy,
        rounds: iterations,
        iterations,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternateOptions {
    /// Decreasing ε values.
    pub schedule: Vec<f64>,
    pub coupling: Coupling,
    /// Sweeps (one v step plus one u step) per stage.
    pub max_sweeps: usize,
    /// Stop a stage once the relative energy change of a sweep is below this.
    pub tol: f64,
    pub sweep: SweepOptions,
}

impl Default for AlternateOptions {
    fn default() -> Self {
        Self {
            schedule: vec![0.1, 0.05, 0.025],
            coupling: Coupling::default(),
            max_sweeps: 200,
            tol: 1e-7,
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub stage: usize,
    pub iter: usize,
    pub energy: EnergyBreakdown,
}

#[derive(Clone, Debug)]
pub struct Alternation {
    pub u: OrientationField,
    pub v: PhaseField,
    pub trace: Vec<TraceRow>,
    /// Parameters of the last stage.
    pub params: EnergyParams,
    /// Sweeps used per stage.
    pub sweeps: Vec<usize>,
    /// Whether every stage met the tolerance before the sweep cap.
    pub converged: bool,
}

impl Alternation {
    pub fn final_energy(&self) -> EnergyBreakdown {
        self.trace.last().map(|r| r.energy).unwrap_or_default()
    }
}

/// CSV rendering of an energy trace (header line included).
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("stage,iter,term_grad,term_at,term_pen,term_fid,total\n");
    for r in trace {
        let e = r.energy;
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}\n",
            r.stage, r.iter, e.grad, e.at, e.pen, e.fid, e.total
        ));
    }
    out
}

/// Alternating minimization with ε-continuation. `base` supplies the damage
/// model, fidelity weight and execution mode; ε, δ_ε and M_ε come from the
/// schedule and coupling.
pub fn alternate_minimize(
    u0: &OrientationField,
    v0: &PhaseField,
    g: &PointGroup,
    base: &EnergyParams,
    opts: &AlternateOptions,
    fidelity: Option<&Fidelity>,
    pinned: &[usize],
) -> Result<Alternation> {
    if opts.schedule.is_empty() || opts.schedule.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::DomainError(
            "eps schedule must be nonempty and decreasing".into(),
        ));
    }
    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut trace = Vec::new();
    let mut sweeps = Vec::with_capacity(opts.schedule.len());
    let mut converged = true;
    let mut params = base.clone();
    for (stage, &eps) in opts.schedule.iter().enumerate() {
        params = EnergyParams {
            exec: base.exec,
            ..EnergyParams::coupled(eps, &opts.coupling, base.damage, base.gamma)?
        };
        let mut e = energy_total(&u, &v, g, &params, fidelity)?;
        trace.push(TraceRow {
            stage,
            iter: 0,
            energy: e,
        });
        let mut done = e.total == 0.0;
        let mut iter = 0;
        while !done && iter < opts.max_sweeps {
            iter += 1;
            let sv = minimize_step_v(&u, &v, g, &params, &opts.sweep)?;
            v = sv.field;
            let sb = minimize_step_beta(&u, &v, g, &params, fidelity, pinned, &opts.sweep)?;
            u = sb.field;
            let next = energy_total(&u, &v, g, &params, fidelity)?;
            let change = (e.total - next.total) / e.total.abs().max(f64::MIN_POSITIVE);
            e = next;
            trace.push(TraceRow {
                stage,
                iter,
                energy: e,
            });
            done = change < opts.tol
                || (sv.line_search_failed && sb.line_search_failed)
                || e.total == 0.0;
        }
        converged &= done;
        sweeps.push(iter);
    }
    Ok(Alternation {
        u,
        v,
        trace,
        params,
        sweeps,
        converged,
    })
}

/// Region-growing lift of a class field to a matrix field: breadth-first
/// from the lowest-index cell of every component, each newly reached cell is
/// replaced by the orbit element nearest to its already aligned parent.
/// Edges whose quotient distance exceeds `threshold` are jumps; they are not
/// traversed and are returned in cell order.
pub fn lift_field(
    u: &OrientationField,
    g: &PointGroup,
    threshold: f64,
) -> Result<(OrientationField, Vec<(usize, usize)>)> {
    if u.d != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: u.d,
        });
    }
    let grid = u.grid;
    let mut jumps = Vec::new();
    let mut is_jump = vec![[false; 2]; grid.len()];
    for (c, flags) in is_jump.iter_mut().enumerate() {
        for (slot, n) in grid.forward(c).enumerate() {
            if g.nearest(&u.values[c], &u.values[n]).1 > threshold {
                flags[slot] = true;
                jumps.push((c, n));
            }
        }
    }
    let jump_between = |a: usize, b: usize| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let slot = if hi == lo + 1 && hi % grid.nx != 0 {
            0
        } else {
            grid.forward(lo).count() - 1
        };
        is_jump[lo][slot]
    };
    let mut aligned = u.values.clone();
    let mut seen = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for root in 0..grid.len() {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        queue.push_back(root);
        while let Some(c) = queue.pop_front() {
            for n in grid.backward(c).chain(grid.forward(c)) {
                if seen[n] || jump_between(c, n) {
                    continue;
                }
                seen[n] = true;
                let (k, _) = g.nearest(&aligned[c], &u.values[n]);
                if k != 0 {
                    aligned[n] = g.elements()[k] * u.values[n];
                }
                queue.push_back(n);
            }
        }
    }
    Ok((OrientationField::from_values(grid, aligned)?, jumps))
}

#[cfg(test)]
mod tests;
