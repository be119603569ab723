//! Lattice fidelity term, synthetic polycrystal images and the segmentation
//! pipeline.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exec::{map_range, map_vec, Execution};
use crate::field::{Grid, OrientationField, PhaseField};
use crate::image::Image;
use crate::manifold::{polar_project, singular_values};
use crate::matrix::MatrixD;
use crate::phasefield::{
    alternate_minimize, minimize_step_beta, AlternateOptions, Alternation, EnergyBreakdown,
    EnergyParams, SweepOptions,
};
use crate::pointgroup::PointGroup;
use crate::sharp::GrainMap;

/// RNG stream used for image noise.
pub const NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSpec {
    /// Probe vectors v_k (length units).
    pub probes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Lattice spacing σ.
    pub sigma: f64,
    /// Standard deviation of the rendered Gaussian atoms.
    pub atom_radius: f64,
}

impl LatticeSpec {
    /// Square lattice probed along both basis vectors with unit weights.
    pub fn square(sigma: f64, atom_radius: f64) -> Result<Self> {
        let s = Self {
            probes: vec![[sigma, 0.0], [0.0, sigma]],
            weights: vec![1.0, 1.0],
            sigma,
            atom_radius,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.atom_radius > 0.0) {
            return Err(Error::DomainError(
                "lattice spacing and atom radius must be positive".into(),
            ));
        }
        if self.probes.len() != self.weights.len() || self.probes.is_empty() {
            return Err(Error::DomainError(
                "need one positive weight per probe vector".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::DomainError("probe weights must be positive".into()));
        }
        if self
            .probes
            .iter()
            .any(|p| p[0].hypot(p[1]) > self.sigma * (1.0 + 1e-12))
        {
            return Err(Error::DomainError(
                "probe vectors must satisfy |v_k| <= sigma".into(),
            ));
        }
        Ok(())
    }
}

/// Half-open cell rectangle `[i0, i1) × [j0, j1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

impl Rect {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i1).contains(&i) && (self.j0..self.j1).contains(&j)
    }
}

/// Margin in pixels keeping every probe point inside the image.
pub fn margin_pixels(image: &Image, lat: &LatticeSpec) -> usize {
    (2.0 * lat.sigma / image.pixel_size - 1e-9).ceil().max(0.0) as usize
}

/// The fidelity term bound to an image, a lattice and an inner domain Ω′.
#[derive(Clone, Debug)]
pub struct Fidelity {
    pub image: Image,
    pub lattice: LatticeSpec,
    pub domain: Rect,
}

impl Fidelity {
    pub fn new(image: Image, lattice: LatticeSpec, domain: Rect) -> Result<Self> {
        lattice.validate()?;
        let m = margin_pixels(&image, &lattice);
        if domain.i0 < m
            || domain.j0 < m
            || domain.i1 + m > image.width
            || domain.j1 + m > image.height
        {
            return Err(Error::DomainTooSmall(format!(
                "domain {domain:?} leaves less than the {m}-pixel margin of a {}x{} image",
                image.width, image.height
            )));
        }
        if domain.i0 >= domain.i1 || domain.j0 >= domain.j1 {
            return Err(Error::DomainTooSmall(format!("empty domain {domain:?}")));
        }
        Ok(Self {
            image,
            lattice,
            domain,
        })
    }

    /// Ω′ as the image shrunk by the 2σ margin.
    pub fn with_margin(image: Image, lattice: LatticeSpec) -> Result<Self> {
        let m = margin_pixels(&image, &lattice);
        let domain = Rect {
            i0: m,
            j0: m,
            i1: image.width.saturating_sub(m),
            j1: image.height.saturating_sub(m),
        };
        Self::new(image, lattice, domain)
    }

    pub(crate) fn check(&self, u: &OrientationField, g: &PointGroup) -> Result<()> {
        if u.d != 2 || g.dim() != 2 {
            return Err(Error::UnsupportedDimension(u.d.max(g.dim())));
        }
        let img = &self.image;
        if u.grid.nx != img.width || u.grid.ny != img.height || u.grid.h != img.pixel_size {
            return Err(Error::GridMismatch(format!(
                "field {}x{} (h={}) vs image {}x{} (pixel {})",
                u.grid.nx, u.grid.ny, u.grid.h, img.width, img.height, img.pixel_size
            )));
        }
        Ok(())
    }

    /// β⁻¹ when β lies in E_β (invertible with ‖β⁻¹‖_op ≤ 2).
    fn inverse_in_mask(beta: &MatrixD) -> Option<MatrixD> {
        let s = singular_values(beta).ok()?;
        if !(s[beta.dim() - 1] >= 0.5) {
            return None;
        }
        beta.inverse()
    }

    fn cell(
        &self,
        u: &OrientationField,
        g: &PointGroup,
        c: usize,
        want_grad: bool,
    ) -> (f64, MatrixD) {
        let grid = u.grid;
        let (i, j) = grid.coords(c);
        let zero = MatrixD::zeros(2);
        if !self.domain.contains(i, j) {
            return (0.0, zero);
        }
        let Some(b) = Self::inverse_in_mask(&u.values[c]) else {
            return (0.0, zero);
        };
        let h = grid.h;
        let (x, y) = (i as f64 * h, j as f64 * h);
        let w0 = self.image.at(i, j);
        let mut val = 0.0;
        let mut grad = zero;
        for (probe, &alpha) in self.lattice.probes.iter().zip(&self.lattice.weights) {
            for gm in g.elements() {
                let gv = gm.mul_vec(probe);
                let disp = b.mul_vec(&gv[..2]);
                let (w, dw) = self.image.sample(x + disp[0], y + disp[1]);
                let r = w - w0;
                val += alpha * r * r;
                if want_grad {
                    // ∂y/∂β · δβ = −β⁻¹ δβ β⁻¹ G v.
                    let a = b.transpose().mul_vec(&dw);
                    let scale = -2.0 * alpha * r;
                    for p in 0..2 {
                        for q in 0..2 {
                            grad[(p, q)] += scale * a[p] * disp[q];
                        }
                    }
                }
            }
        }
        let mu = h * h;
        (mu * val, grad.scale(mu))
    }

    pub fn value(&self, u: &OrientationField, g: &PointGroup, exec: Execution) -> Result<f64> {
        self.check(u, g)?;
        Ok(
            map_range(exec, u.grid.len(), |c| self.cell(u, g, c, false).0)
                .into_iter()
                .sum(),
        )
    }

    pub fn value_and_gradient(
        &self,
        u: &OrientationField,
        g: &PointGroup,
        exec: Execution,
    ) -> Result<(f64, Vec<MatrixD>)> {
        self.check(u, g)?;
        let parts = map_range(exec, u.grid.len(), |c| self.cell(u, g, c, true));
        let total = parts.iter().map(|p| p.0).sum();
        Ok((total, parts.into_iter().map(|p| p.1).collect()))
    }

    /// Fraction of Ω′ cells outside E_β.
    pub fn masked_fraction(&self, u: &OrientationField) -> f64 {
        let r = self.domain;
        let mut masked = 0usize;
        for j in r.j0..r.j1 {
            for i in r.i0..r.i1 {
                if Self::inverse_in_mask(&u.values[u.grid.index(i, j)]).is_none() {
                    masked += 1;
                }
            }
        }
        masked as f64 / ((r.i1 - r.i0) * (r.j1 - r.j0)) as f64
    }
}

/// FT(u) on `domain`.
pub fn fidelity(
    u: &OrientationField,
    img: &Image,
    lat: &LatticeSpec,
    g: &PointGroup,
    domain: Rect,
) -> Result<f64> {
    Fidelity::new(img.clone(), lat.clone(), domain)?.value(u, g, Execution::default())
}

/// Cellwise gradient of FT(u) on `domain`.
pub fn fidelity_gradient(
    u: &OrientationField,
    img: &Image,
    lat: &LatticeSpec,
    g: &PointGroup,
    domain: Rect,
) -> Result<Vec<MatrixD>> {
    Ok(Fidelity::new(img.clone(), lat.clone(), domain)?
        .value_and_gradient(u, g, Execution::default())?
        .1)
}

/// Render Gaussian atoms on the sites R_i·σZ² of every grain (each site kept
/// only where the pixel under it belongs to that grain), add seeded Gaussian
/// noise and clamp to [0, 1].
pub fn synth_image(
    gm: &GrainMap,
    lat: &LatticeSpec,
    noise_sigma: f64,
    seed: u64,
    exec: Execution,
) -> Result<Image> {
    lat.validate()?;
    gm.validate()?;
    if !(noise_sigma >= 0.0) {
        return Err(Error::DomainError("noise level must be >= 0".into()));
    }
    let grid = gm.grid;
    let h = grid.h;
    let (w_len, h_len) = (grid.nx as f64 * h, grid.ny as f64 * h);
    let reach = (w_len.hypot(h_len) / lat.sigma).ceil() as i64 + 1;
    let grains: Vec<usize> = (0..gm.orientations.len()).collect();
    let sites: Vec<Vec<[f64; 2]>> = map_vec(exec, grains, |label| {
        let r = gm.orientations[label];
        let mut out = Vec::new();
        for a in -reach..=reach {
            for b in -reach..=reach {
                let p = r.mul_vec(&[a as f64 * lat.sigma, b as f64 * lat.sigma]);
                let (pi, pj) = ((p[0] / h).round(), (p[1] / h).round());
                if pi < 0.0 || pj < 0.0 || pi >= grid.nx as f64 || pj >= grid.ny as f64 {
                    continue;
                }
                if gm.labels[grid.index(pi as usize, pj as usize)] == Some(label as u32) {
                    out.push([p[0], p[1]]);
                }
            }
        }
        out
    });
    let mut values = vec![0.0; grid.len()];
    let rad = (4.0 * lat.atom_radius / h).ceil() as i64;
    let inv = 1.0 / (2.0 * lat.atom_radius * lat.atom_radius);
    for p in sites.iter().flatten() {
        let (ci, cj) = ((p[0] / h).round() as i64, (p[1] / h).round() as i64);
        for j in (cj - rad).max(0)..=(cj + rad).min(grid.ny as i64 - 1) {
            for i in (ci - rad).max(0)..=(ci + rad).min(grid.nx as i64 - 1) {
                let (dx, dy) = (i as f64 * h - p[0], j as f64 * h - p[1]);
                values[grid.index(i as usize, j as usize)] += (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM);
        let normal =
            Normal::new(0.0, noise_sigma).map_err(|e| Error::DomainError(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Image::new(grid.nx, grid.ny, h, values)
}

/// Grain partition from a solved field: connected components of
/// {v > v_threshold}, grown breadth-first over the remaining cells, then
/// merged when neighbouring components' mean orientations are closer than
/// `angle_merge` (radians) modulo G. Orientations are canonical
/// representatives of the polar-projected, orbit-aligned cell means.
pub fn extract_grain_map(
    u: &OrientationField,
    v: &PhaseField,
    g: &PointGroup,
    v_threshold: f64,
    angle_merge: f64,
) -> Result<GrainMap> {
    u.grid.check_same(&v.grid)?;
    if !(v_threshold > 0.0 && v_threshold < 1.0)
        || !(angle_merge > 0.0 && angle_merge < std::f64::consts::PI)
    {
        return Err(Error::DomainError(
            "thresholds must lie in (0, 1) and (0, pi)".into(),
        ));
    }
    let grid = u.grid;
    let neighbours = |c: usize| grid.backward(c).chain(grid.forward(c));
    // Components of the intact region.
    let mut comp: Vec<Option<usize>> = vec![None; grid.len()];
    let mut count = 0usize;
    let mut queue = VecDeque::new();
    for root in 0..grid.len() {
        if comp[root].is_some() || !(v.values[root] > v_threshold) {
            continue;
        }
        comp[root] = Some(count);
        queue.push_back(root);
        while let Some(c) = queue.pop_front() {
            for n in neighbours(c) {
                if comp[n].is_none() && v.values[n] > v_threshold {
                    comp[n] = Some(count);
                    queue.push_back(n);
                }
            }
        }
        count += 1;
    }
    if count == 0 {
        return Ok(GrainMap {
            grid,
            labels: vec![None; grid.len()],
            orientations: Vec::new(),
        });
    }
    let means: Vec<MatrixD> = (0..count)
        .map(|k| component_mean(u, g, &comp, k))
        .collect::<Result<_>>()?;
    // Grow into the damaged cells so that neighbouring components touch.
    let mut grown = comp.clone();
    let mut queue: VecDeque<usize> = (0..grid.len()).filter(|&c| grown[c].is_some()).collect();
    while let Some(c) = queue.pop_front() {
        for n in neighbours(c) {
            if grown[n].is_none() {
                grown[n] = grown[c];
                queue.push_back(n);
            }
        }
    }
    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let merge_dist = 2.0 * 2f64.sqrt() * (0.5 * angle_merge).sin();
    for c in 0..grid.len() {
        for n in grid.forward(c) {
            let (Some(a), Some(b)) = (grown[c], grown[n]) else {
                continue;
            };
            if a != b && g.quotient_distance(&means[a], &means[b])? < merge_dist {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    // Relabel merged groups in order of first appearance.
    let mut relabel = vec![None; count];
    let mut next = 0u32;
    let mut labels = vec![None; grid.len()];
    for c in 0..grid.len() {
        if let Some(k) = grown[c] {
            let r = find(&mut parent, k);
            let l = *relabel[r].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels[c] = Some(l);
        }
    }
    let merged: Vec<Option<usize>> = labels
        .iter()
        .zip(&comp)
        .map(|(l, k)| k.and(l.map(|l| l as usize)))
        .collect();
    let orientations = (0..next as usize)
        .map(|l| g.canonical_rep(&component_mean(u, g, &merged, l)?))
        .collect::<Result<_>>()?;
    Ok(GrainMap {
        grid,
        labels,
        orientations,
    })
}

/// Polar-projected mean of the cells labelled `k`, each first replaced by
/// its orbit element nearest to the first such cell.
fn component_mean(
    u: &OrientationField,
    g: &PointGroup,
    comp: &[Option<usize>],
    k: usize,
) -> Result<MatrixD> {
    let mut cells = comp
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == Some(k))
        .map(|(c, _)| c);
    let first = cells
        .next()
        .ok_or_else(|| Error::DomainError(format!("empty component {k}")))?;
    let reference = u.values[first];
    let mut sum = reference;
    let mut n = 1.0;
    for c in cells {
        let (idx, _) = g.nearest(&reference, &u.values[c]);
        sum += g.elements()[idx] * u.values[c];
        n += 1.0;
    }
    polar_project(&sum.scale(1.0 / n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentOptions {
    pub alternate: AlternateOptions,
    /// Starting value of v. At v ≡ 1 the truncation M_ε makes the v
    /// subproblem flat, so descent would never open an interface.
    pub v_init: f64,
    /// Quasi-Newton iterations on u alone at v ≡ `v_init` before the
    /// alternation starts.
    pub relax_iters: usize,
    pub v_threshold: f64,
    /// Merge angle in radians.
    pub angle_merge: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            alternate: AlternateOptions {
                schedule: vec![0.1, 0.05],
                max_sweeps: 100,
                tol: 1e-5,
                ..AlternateOptions::default()
            },
            v_init: 0.5,
            relax_iters: 50,
            v_threshold: 0.5,
            angle_merge: 5f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub u: OrientationField,
    pub v: PhaseField,
    pub grains: GrainMap,
    pub energy: EnergyBreakdown,
    pub masked_fraction: f64,
    pub run: Alternation,
}

/// Minimize the phase-field energy plus γ·FT from u ≡ I, v ≡ `v_init` and
/// extract the grain map.
pub fn segment(
    img: &Image,
    lat: &LatticeSpec,
    g: &PointGroup,
    p: &EnergyParams,
    opts: &SegmentOptions,
) -> Result<Segmentation> {
    if lat.sigma < 2.0 * img.pixel_size {
        return Err(Error::DomainError(
            "lattice spacing must cover at least 2 pixels".into(),
        ));
    }
    let grid = Grid::new(img.width, img.height, img.pixel_size)?;
    let fid = Fidelity::with_margin(img.clone(), lat.clone())?;
    let u0 = OrientationField::constant(grid, MatrixD::identity(2));
    let v0 = PhaseField::constant(grid, opts.v_init);
    let first = EnergyParams {
        exec: p.exec,
        ..EnergyParams::coupled(
            opts.alternate.schedule.first().copied().unwrap_or(p.eps),
            &opts.alternate.coupling,
            p.damage,
            p.gamma,
        )?
    };
    let u0 = minimize_step_beta(
        &u0,
        &v0,
        g,
        &first,
        Some(&fid),
        &[],
        &SweepOptions {
            inner_iters: opts.relax_iters,
        },
    )?
    .field;
    let run = alternate_minimize(&u0, &v0, g, p, &opts.alternate, Some(&fid), &[])?;
    let grains = extract_grain_map(&run.u, &run.v, g, opts.v_threshold, opts.angle_merge)?;
    Ok(Segmentation {
        u: run.u.clone(),
        v: run.v.clone(),
        grains,
        energy: run.final_energy(),
        masked_fraction: fid.masked_fraction(&run.u),
        run,
    })
}
