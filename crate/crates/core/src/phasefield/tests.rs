use super::*;
use crate::field::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c4() -> PointGroup {
    PointGroup::cyclic(4).unwrap()
}

fn rot(deg: f64) -> MatrixD {
    MatrixD::rotation2(deg.to_radians())
}

fn params(eps: f64) -> EnergyParams {
    EnergyParams::new(eps).unwrap()
}

/// Orthogonal-ish field with random per-cell gauge and a perturbation.
fn random_u(grid: Grid, g: &PointGroup, rng: &mut ChaCha8Rng, noise: f64) -> OrientationField {
    let vals = (0..grid.len())
        .map(|_| {
            let r = MatrixD::rotation2(rng.random_range(-0.6..0.6));
            let k = rng.random_range(0..g.order());
            let mut m = g.elements()[k] * r;
            for x in m.as_mut_slice() {
                *x += noise * rng.random_range(-1.0..1.0);
            }
            m
        })
        .collect();
    OrientationField::from_values(grid, vals).unwrap()
}

fn random_v(grid: Grid, rng: &mut ChaCha8Rng) -> PhaseField {
    PhaseField::from_values(
        grid,
        (0..grid.len())
            .map(|_| rng.random_range(0.05..0.95))
            .collect(),
    )
    .unwrap()
}

fn two_grain(grid: Grid, left: MatrixD, right: MatrixD) -> OrientationField {
    let vals = (0..grid.len())
        .map(|c| {
            if grid.coords(c).0 < grid.nx / 2 {
                left
            } else {
                right
            }
        })
        .collect();
    OrientationField::from_values(grid, vals).unwrap()
}

#[test]
fn f_eps_examples() {
    let p = params(0.01);
    assert_eq!(f_eps_eval(0.0, &p), 0.0);
    assert_eq!(f_eps_eval(1.0, &p), p.m_eps);
    assert_eq!(f_eps_eval(1.0 - 1e-12, &p), p.m_eps);
    let mut prev = 0.0;
    for k in 0..=100 {
        let f = f_eps_eval(k as f64 / 100.0, &p);
        assert!(f >= prev);
        prev = f;
    }
}

#[test]
fn params_follow_coupling() {
    let p = EnergyParams::coupled(
        0.01,
        &Coupling {
            lambda: 4.0,
            m_power: 0.5,
        },
        DamageModel::default(),
        0.0,
    )
    .unwrap();
    assert!((p.delta_eps - 0.0025).abs() < 1e-15);
    assert!((p.m_eps - 10.0).abs() < 1e-12);
    assert!(EnergyParams::new(0.0).is_err());
    assert!(EnergyParams::coupled(
        0.1,
        &Coupling {
            lambda: 0.0,
            m_power: 0.25
        },
        DamageModel::default(),
        0.0
    )
    .is_err());
}

#[test]
fn energy_examples() {
    let g = c4();
    let grid = Grid::new(6, 4, 0.1).unwrap();
    let p = params(0.05);
    let v1 = PhaseField::constant(grid, 1.0);
    let e = energy_total(
        &OrientationField::constant(grid, rot(17.0)),
        &v1,
        &g,
        &p,
        None,
    )
    .unwrap();
    assert_eq!((e.grad, e.at, e.pen), (0.0, 0.0, 0.0));

    let jump = two_grain(grid, rot(17.0), g.elements()[1] * rot(17.0));
    let e = energy_total(&jump, &v1, &g, &p, None).unwrap();
    assert!(e.grad < 1e-25, "{}", e.grad);

    let e = energy_total(
        &OrientationField::constant(grid, MatrixD::identity(2).scale(2.0)),
        &v1,
        &g,
        &p,
        None,
    )
    .unwrap();
    let expected = 2.0 * (6.0 * 4.0 * 0.01) / p.delta_eps;
    assert!((e.pen - expected).abs() < 1e-12 * expected);

    let other = Grid::new(6, 5, 0.1).unwrap();
    assert!(matches!(
        energy_total(&jump, &PhaseField::constant(other, 1.0), &g, &p, None),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn grad_term_uses_left_node_factor() {
    let g = PointGroup::trivial(2);
    let grid = Grid::new(2, 1, 0.5).unwrap();
    let u = OrientationField::from_values(grid, vec![rot(0.0), rot(10.0)]).unwrap();
    let v = PhaseField::from_values(grid, vec![0.3, 0.9]).unwrap();
    let p = params(0.1);
    let e = energy_total(&u, &v, &g, &p, None).unwrap();
    let d2 = rot(0.0).dist_sq(&rot(10.0));
    let expected = 0.5 * f_eps_eval(0.3, &p).powi(2) * d2 / 0.25;
    assert!((e.grad - expected).abs() < 1e-14);
    let at = 0.5 * ((0.7f64.powi(2) + 0.1f64.powi(2)) / 0.4 + 0.1 * 0.36 / 0.25);
    assert!((e.at - at).abs() < 1e-14);
}

#[test]
fn step_v_examples() {
    let g = c4();
    let grid = Grid::new(5, 5, 0.1).unwrap();
    let u = OrientationField::constant(grid, rot(5.0));
    let p = params(0.05);
    let opts = SweepOptions::default();
    let v1 = PhaseField::constant(grid, 1.0);
    let s = minimize_step_v(&u, &v1, &g, &p, &opts).unwrap();
    assert_eq!(s.field, v1);
    let vh = PhaseField::constant(grid, 0.5);
    let s = minimize_step_v(&u, &vh, &g, &p, &opts).unwrap();
    assert!(s.after < s.before);
    assert!(s.field.values.iter().all(|x| (0.0..=1.0).contains(x)));
    let e0 = energy_total(&u, &vh, &g, &p, None).unwrap().total;
    let e1 = energy_total(&u, &s.field, &g, &p, None).unwrap().total;
    assert!(e1 < e0);
}

#[test]
fn step_beta_examples() {
    let g = c4();
    let grid = Grid::new(5, 4, 0.1).unwrap();
    let p = params(0.05);
    let opts = SweepOptions::default();
    let v1 = PhaseField::constant(grid, 1.0);
    let u = OrientationField::constant(grid, rot(12.0));
    let s = minimize_step_beta(&u, &v1, &g, &p, None, &[], &opts).unwrap();
    assert_eq!(s.field, u);

    let mut bumped = u.clone();
    bumped.values[7][(0, 0)] += 0.1;
    let e0 = energy_total(&bumped, &v1, &g, &p, None).unwrap().total;
    let s = minimize_step_beta(&bumped, &v1, &g, &p, None, &[], &opts).unwrap();
    let e1 = energy_total(&s.field, &v1, &g, &p, None).unwrap().total;
    assert!(e1 < e0);
    assert!(s
        .field
        .values
        .iter()
        .all(|m| m.norm() <= 2f64.sqrt() + 1e-12));

    let s = minimize_step_beta(&bumped, &v1, &g, &p, None, &[7], &opts).unwrap();
    assert_eq!(s.field.values[7], bumped.values[7]);
    assert!(minimize_step_beta(&bumped, &v1, &g, &p, None, &[99], &opts).is_err());
}

#[test]
fn step_beta_projects_large_cells() {
    let g = c4();
    let grid = Grid::new(3, 3, 0.1).unwrap();
    let p = params(0.05);
    let mut u = OrientationField::constant(grid, MatrixD::identity(2));
    u.values[4] = MatrixD::identity(2).scale(3.0);
    let s = minimize_step_beta(
        &u,
        &PhaseField::constant(grid, 1.0),
        &g,
        &p,
        None,
        &[],
        &SweepOptions::default(),
    )
    .unwrap();
    assert!(s
        .field
        .values
        .iter()
        .all(|m| m.norm() <= 2f64.sqrt() + 1e-12));
}

#[test]
fn alternate_ground_truth_stops_at_zero() {
    let g = c4();
    let grid = Grid::new(8, 4, 0.1).unwrap();
    let u = two_grain(grid, rot(3.0), g.elements()[2] * rot(3.0));
    let v = PhaseField::constant(grid, 1.0);
    let run = alternate_minimize(
        &u,
        &v,
        &g,
        &params(0.1),
        &AlternateOptions::default(),
        None,
        &[],
    )
    .unwrap();
    assert!(run.converged);
    assert!(run.sweeps.iter().all(|&k| k <= 1), "{:?}", run.sweeps);
    assert!(run.final_energy().total < 1e-20);
    assert!(run
        .u
        .values
        .iter()
        .zip(&u.values)
        .all(|(a, b)| a.dist(b) < 1e-12));
}

#[test]
fn alternate_trace_is_monotone_per_stage() {
    let g = c4();
    let grid = Grid::new(16, 6, 1.0 / 16.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = random_u(grid, &g, &mut rng, 0.05);
    let v = random_v(grid, &mut rng);
    let opts = AlternateOptions {
        schedule: vec![0.2, 0.1],
        max_sweeps: 15,
        ..AlternateOptions::default()
    };
    let run = alternate_minimize(&u, &v, &g, &params(0.2), &opts, None, &[]).unwrap();
    for w in run.trace.windows(2) {
        if w[0].stage == w[1].stage {
            assert!(
                w[1].energy.total <= w[0].energy.total * (1.0 + 1e-12),
                "{w:?}"
            );
        }
    }
    assert_eq!(run.params.eps, 0.1);
    let csv = trace_csv(&run.trace);
    assert!(csv.starts_with("stage,iter,term_grad,term_at,term_pen,term_fid,total\n"));
    assert_eq!(csv.lines().count(), run.trace.len() + 1);
    assert!(alternate_minimize(
        &u,
        &v,
        &g,
        &params(0.2),
        &AlternateOptions {
            schedule: vec![0.1, 0.2],
            ..opts
        },
        None,
        &[]
    )
    .is_err());
}

#[test]
fn alternation_is_reproducible_across_execution_modes() {
    let g = c4();
    let grid = Grid::new(12, 7, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = random_u(grid, &g, &mut rng, 0.05);
    let v = random_v(grid, &mut rng);
    let opts = AlternateOptions {
        schedule: vec![0.2],
        max_sweeps: 5,
        ..AlternateOptions::default()
    };
    let mut p = params(0.2);
    p.exec = Execution::Sequential;
    let a = alternate_minimize(&u, &v, &g, &p, &opts, None, &[]).unwrap();
    p.exec = Execution::Parallel;
    let b = alternate_minimize(&u, &v, &g, &p, &opts, None, &[]).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.v, b.v);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn lift_examples() {
    let g = c4();
    let grid = Grid::new(4, 3, 0.1).unwrap();
    let u = OrientationField::constant(grid, rot(7.0));
    let (a, jumps) = lift_field(&u, &g, 0.3).unwrap();
    assert_eq!(a, u);
    assert!(jumps.is_empty());

    let line = Grid::new(3, 1, 0.1).unwrap();
    let u =
        OrientationField::from_values(line, vec![rot(0.0), rot(10.0), g.elements()[3] * rot(20.0)])
            .unwrap();
    let (a, jumps) = lift_field(&u, &g, 0.3).unwrap();
    assert!(jumps.is_empty());
    for (m, deg) in a.values.iter().zip([0.0, 10.0, 20.0]) {
        assert!(m.dist(&rot(deg)) < 1e-12);
    }

    let grid = Grid::new(6, 4, 0.1).unwrap();
    let u = two_grain(grid, rot(0.0), rot(30.0));
    let (_, jumps) = lift_field(&u, &g, 0.3).unwrap();
    assert_eq!(jumps.len(), 4);
    assert!(jumps
        .iter()
        .all(|&(c, n)| grid.coords(c).0 == 2 && n == c + 1));
}

#[test]
fn at_profile_energy_tends_to_one() {
    let g = PointGroup::trivial(2);
    let mut errs = Vec::new();
    for eps in [0.04, 0.02, 0.01] {
        let n = 8001;
        let h = 1.0 / n as f64;
        let grid = Grid::new(n, 1, h).unwrap();
        let vals = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h - 0.5;
                1.0 - (-t.abs() / (2.0 * eps)).exp()
            })
            .collect();
        let v = PhaseField::from_values(grid, vals).unwrap();
        let u = OrientationField::constant(grid, MatrixD::identity(2));
        let at = energy_total(&u, &v, &g, &params(eps), None).unwrap().at;
        errs.push((at - 1.0).abs());
    }
    assert!(errs[2] < 1e-2, "{errs:?}");
    assert!(errs[0] > errs[2] || errs[2] < 1e-3, "{errs:?}");
}

/// Directional finite difference against the analytic gradient.
fn check_directional(e: impl Fn(f64) -> f64, analytic: f64, step: f64, tol: f64) {
    let fd = (e(step) - e(-step)) / (2.0 * step);
    let scale = analytic.abs().max(fd.abs()).max(1e-10);
    assert!(
        (fd - analytic).abs() <= tol * scale,
        "fd {fd} analytic {analytic}"
    );
}

#[test]
fn energy_gradients_match_finite_differences() {
    let g = c4();
    let grid = Grid::new(5, 4, 0.2).unwrap();
    let p = params(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let u = random_u(grid, &g, &mut rng, 0.1);
        let v = random_v(grid, &mut rng);
        let dv: Vec<f64> = (0..grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let gv = energy_gradient_v(&u, &v, &g, &p).unwrap();
        let analytic: f64 = gv.iter().zip(&dv).map(|(a, b)| a * b).sum();
        let ev = |t: f64| {
            let w = PhaseField {
                grid,
                values: v.values.iter().zip(&dv).map(|(a, b)| a + t * b).collect(),
            };
            energy_total(&u, &w, &g, &p, None).unwrap().total
        };
        check_directional(ev, analytic, 1e-6, 1e-5);

        let du: Vec<MatrixD> = (0..grid.len())
            .map(|_| {
                MatrixD::from_row_slice(2, &[0; 4].map(|_| rng.random_range(-1.0..1.0))).unwrap()
            })
            .collect();
        let gu = energy_gradient_u(&u, &v, &g, &p, None).unwrap();
        let analytic: f64 = gu.iter().zip(&du).map(|(a, b)| a.dot(b)).sum();
        let eu = |t: f64| {
            let w = OrientationField {
                values: u
                    .values
                    .iter()
                    .zip(&du)
                    .map(|(a, b)| *a + b.scale(t))
                    .collect(),
                ..u.clone()
            };
            energy_total(&w, &v, &g, &p, None).unwrap().total
        };
        check_directional(eu, analytic, 1e-6, 1e-5);
    }
}

#[test]
fn one_dimensional_grids_are_supported() {
    let g = c4();
    let grid = Grid::new(64, 1, 1.0 / 64.0).unwrap();
    let u = two_grain(grid, rot(0.0), rot(20.0));
    let v = PhaseField::constant(grid, 1.0);
    let e = energy_total(&u, &v, &g, &params(0.1), None).unwrap();
    let expected = (1.0 / 64.0)
        * f_eps_eval(1.0, &params(0.1)).powi(2)
        * rot(0.0).dist_sq(&rot(20.0))
        * 64.0
        * 64.0;
    assert!((e.grad - expected).abs() < 1e-10 * expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_gauge_invariant(seed in any::<u64>()) {
        let g = PointGroup::dihedral(4).unwrap();
        let grid = Grid::new(6, 5, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_u(grid, &g, &mut rng, 0.05);
        let v = random_v(grid, &mut rng);
        let gauged = OrientationField {
            values: u.values.iter().map(|m| g.elements()[rng.random_range(0..g.order())] * *m).collect(),
            ..u.clone()
        };
        let p = params(0.1);
        let a = energy_total(&u, &v, &g, &p, None).unwrap();
        let b = energy_total(&gauged, &v, &g, &p, None).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-12 * a.total.max(1.0));
    }

    #[test]
    fn truncation_never_increases_energy(seed in any::<u64>()) {
        let g = c4();
        let grid = Grid::new(5, 5, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_u(grid, &g, &mut rng, 0.8);
        let v = random_v(grid, &mut rng);
        let p = params(0.05);
        let a = energy_total(&u, &v, &g, &p, None).unwrap().total;
        let b = energy_total(&u.truncated(), &v, &g, &p, None).unwrap().total;
        prop_assert!(b <= a * (1.0 + 1e-14));
    }

    #[test]
    fn lift_is_idempotent(seed in any::<u64>()) {
        let g = c4();
        let grid = Grid::new(6, 4, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_u(grid, &g, &mut rng, 0.02);
        let (a, ja) = lift_field(&u, &g, 0.4).unwrap();
        let (b, jb) = lift_field(&a, &g, 0.4).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(ja, jb);
        for (x, y) in a.values.iter().zip(&u.values) {
            prop_assert!(g.quotient_distance(x, y).unwrap() < 1e-12);
        }
    }

    #[test]
    fn step_v_never_increases_energy(seed in any::<u64>()) {
        let g = c4();
        let grid = Grid::new(5, 4, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_u(grid, &g, &mut rng, 0.1);
        let v = random_v(grid, &mut rng);
        let p = params(0.05);
        let s = minimize_step_v(&u, &v, &g, &p, &SweepOptions::default()).unwrap();
        prop_assert!(s.after <= s.before);
        let b = minimize_step_beta(&u, &s.field, &g, &p, None, &[], &SweepOptions::default()).unwrap();
        let e0 = energy_total(&u, &s.field, &g, &p, None).unwrap().total;
        let e1 = energy_total(&b.field, &s.field, &g, &p, None).unwrap().total;
        prop_assert!(e1 <= e0 * (1.0 + 1e-12));
    }
}

#[test]
fn joint_objective_matches_energy_and_differences() {
    let g = c4();
    let grid = Grid::new(7, 1, 0.1).unwrap();
    let p = params(0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let u = random_u(grid, &g, &mut rng, 0.1);
        let v = random_v(grid, &mut rng);
        let obj = JointObjective {
            beta: BetaObjective::new(&u, &v, &g, &p, None),
        };
        let mut x = u.flatten();
        x.extend_from_slice(&v.values);
        let mut grad = vec![0.0; x.len()];
        let e = obj.eval(&x, &mut grad);
        let reference = energy_total(&u, &v, &g, &p, None).unwrap().total;
        assert!((e - reference).abs() < 1e-12 * reference);
        let dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let at = |t: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            obj.value(&y)
        };
        check_directional(at, analytic, 1e-6, 1e-5);
    }
}

#[test]
fn block_hessian_matches_gradient_differences() {
    let g = c4();
    let n = 10;
    let grid = Grid::new(n, 1, 0.1).unwrap();
    let p = params(0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let u = random_u(grid, &g, &mut rng, 0.05).truncated();
        let v = random_v(grid, &mut rng);
        let obj = JointObjective {
            beta: BetaObjective::new(&u, &v, &g, &p, None),
        };
        let mut x = u.flatten();
        x.extend_from_slice(&v.values);
        let dd = u.dd();
        let k = dd + 1;
        let idx = |c: usize, j: usize| if j < dd { c * dd + j } else { n * dd + c };
        let (diag, lower) = joint_hessian(&obj, &x, n, dd);
        let dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let block = |c: usize| nalgebra::DVector::from_fn(k, |i, _| dir[idx(c, i)]);
        let mut hd = vec![0.0; x.len()];
        for c in 0..n {
            let mut r = &diag[c] * block(c);
            if c > 0 {
                r += &lower[c] * block(c - 1);
            }
            if c + 1 < n {
                r += lower[c + 1].transpose() * block(c + 1);
            }
            for i in 0..k {
                hd[idx(c, i)] = r[i];
            }
        }
        let t = 1e-5;
        let shifted = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + s * b).collect();
            let mut gr = vec![0.0; x.len()];
            obj.eval(&y, &mut gr);
            gr
        };
        let (gp, gm) = (shifted(t), shifted(-t));
        let scale = hd.iter().map(|h| h.abs()).fold(0.0, f64::max);
        for r in 0..x.len() {
            let fd = (gp[r] - gm[r]) / (2.0 * t);
            assert!(
                (fd - hd[r]).abs() < 1e-4 * scale,
                "row {r}: {fd} vs {}",
                hd[r]
            );
        }
    }
}
