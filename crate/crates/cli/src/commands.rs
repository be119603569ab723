//! Subcommand tables and implementations.

use std::fmt::Write as _;
use std::io::BufReader;

use polygrain::cell::{g_lambda, rs_scaling_table, CellParams, DamageModel};
use polygrain::field::{Grid, OrientationField, PhaseField};
use polygrain::image::{write_ppm, Image};
use polygrain::phasefield::{
    energy_total, trace_csv, AlternateOptions, Coupling, EnergyParams, SweepOptions,
};
use polygrain::segmentation::{segment, synth_image, Fidelity, LatticeSpec, SegmentOptions};
use polygrain::sharp::{gamma_csv, gamma_sweep, GammaOptions, GrainMap};
use polygrain::{MatrixD, PointGroup};

use crate::config::{key, Key, Settings};
use crate::output::{label_colours, log, write_csv, write_file};
use crate::{Context, Failure};

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
    /// `Ok(false)` means results were written but a solve did not converge.
    pub run: fn(&Settings, &Context) -> Result<bool, Failure>,
}

pub const SPECS: &[Spec] = &[
    Spec {
        name: "group",
        about: "Print and validate a built-in or file-defined point group",
        keys: &[
            key(
                "name",
                "c4",
                "Built-in group: trivial, trivial3, c<n>, d<n>, cubic",
            ),
            key(
                "file",
                "",
                "Group file (dimension line, then one element per line); overrides --name",
            ),
            key("seed", "0", "Random seed"),
        ],
        run: group,
    },
    Spec {
        name: "gtable",
        about: "Tabulate g_lambda(I, R(theta)) over a misorientation sweep",
        keys: &[
            key("group", "c4", "Point group name"),
            key("lambda", "1", "Penalty ratio lambda >= 0"),
            key("theta_max", "45", "Largest angle in degrees"),
            key(
                "steps",
                "16",
                "Number of angles, theta_max*k/steps for k = 1..steps",
            ),
            key("n", "512", "Cell-problem nodes"),
            key("ell", "1", "Damage prefactor ell"),
            key("seed", "0", "Random seed"),
        ],
        run: gtable,
    },
    Spec {
        name: "readshockley",
        about: "Read-Shockley scaling table g/(s|log s|) for small angles",
        keys: &[
            key("group", "trivial", "Point group name"),
            key("angles", "8,4,2,1", "Decreasing angles in degrees"),
            key("lambda", "1", "Penalty ratio lambda >= 0"),
            key("n", "512", "Cell-problem nodes"),
            key("ell", "1", "Damage prefactor ell"),
            key("seed", "0", "Random seed"),
        ],
        run: readshockley,
    },
    Spec {
        name: "cellsolve",
        about: "Solve one cell problem and dump the optimal profile",
        keys: &[
            key("group", "trivial", "Point group name"),
            key(
                "rminus",
                "",
                "Left endpoint, row-major entries [default: identity]",
            ),
            key(
                "rplus",
                "",
                "Right endpoint, row-major entries [default: R(theta)]",
            ),
            key(
                "theta",
                "10",
                "Angle of the default right endpoint in degrees (planar groups)",
            ),
            key("lambda", "1", "Penalty ratio lambda >= 0"),
            key("n", "512", "Cell-problem nodes"),
            key("ell", "1", "Damage prefactor ell"),
            key("seed", "0", "Random seed"),
        ],
        run: cellsolve,
    },
    Spec {
        name: "synth",
        about: "Render a synthetic lattice image of vertical grain stripes (PGM)",
        keys: &[
            key("width", "256", "Image width in pixels"),
            key("height", "256", "Image height in pixels"),
            key("pixel", "", "Physical pixel size [default: 1/width]"),
            key(
                "angles",
                "10,-10",
                "Lattice angles of the stripes, left to right, in degrees",
            ),
            key("sigma", "8", "Lattice spacing in pixels"),
            key("atom_radius", "2", "Gaussian atom radius in pixels"),
            key("noise", "0.02", "Standard deviation of additive noise"),
            key("bits", "16", "Bits per PGM sample, 8 or 16"),
            key("seed", "0", "Random seed for the noise"),
        ],
        run: synth,
    },
    Spec {
        name: "segment",
        about: "Segment a lattice image into grains (PPM + CSV + fields)",
        keys: &[
            key("input", "", "Input PGM (required)"),
            key("pixel", "", "Physical pixel size [default: 1/width]"),
            key("sigma", "8", "Lattice spacing in pixels"),
            key("atom_radius", "2", "Gaussian atom radius in pixels"),
            key("group", "c4", "Point group name"),
            key("gamma", "100", "Fidelity weight"),
            key("schedule", "0.1,0.05", "Decreasing eps values"),
            key("max_sweeps", "100", "Sweeps per eps stage"),
            key("tol", "1e-5", "Relative energy change ending a stage"),
            key("inner_iters", "20", "Quasi-Newton iterations per half-step"),
            key(
                "relax_iters",
                "50",
                "Iterations on u alone before alternating",
            ),
            key("v_init", "0.5", "Initial phase field value"),
            key(
                "v_threshold",
                "0.5",
                "Phase field value separating grains from boundaries",
            ),
            key(
                "angle_merge",
                "5",
                "Merge neighbouring grains closer than this, in degrees",
            ),
            key("lambda", "1", "Coupling lambda = eps/delta_eps"),
            key("m_power", "0.25", "Truncation M_eps = eps^-m_power"),
            key("ell", "1", "Damage prefactor ell"),
            key("seed", "0", "Random seed"),
        ],
        run: segment_cmd,
    },
    Spec {
        name: "gamma",
        about: "Compare minimized two-grain phase-field energies with g_lambda over eps",
        keys: &[
            key("group", "c4", "Point group name"),
            key(
                "rminus",
                "",
                "Left orientation, row-major entries [default: identity]",
            ),
            key(
                "rplus",
                "",
                "Right orientation, row-major entries [default: R(theta)]",
            ),
            key(
                "theta",
                "20",
                "Angle of the default right orientation in degrees",
            ),
            key("eps", "0.1,0.05,0.025,0.01", "Decreasing eps values"),
            key("n", "4096", "Cells across the interface"),
            key("dim", "1", "1 for an interval, 2 for a strip"),
            key("strip_cells", "4", "Cells along the interface for dim = 2"),
            key("lambda", "1", "Coupling lambda = eps/delta_eps"),
            key("m_power", "0.25", "Truncation M_eps = eps^-m_power"),
            key("ell", "1", "Damage prefactor ell"),
            key("cell_n", "512", "Cell-problem nodes for the target value"),
            key("newton_iters", "400", "Newton iterations per eps"),
            key("seed", "0", "Random seed"),
        ],
        run: gamma,
    },
    Spec {
        name: "energy",
        about: "Evaluate the energy breakdown of saved u and v fields",
        keys: &[
            key("u", "", "Orientation field file (required)"),
            key("v", "", "Phase field file (required)"),
            key("eps", "0.1", "eps"),
            key("lambda", "1", "Coupling lambda = eps/delta_eps"),
            key("m_power", "0.25", "Truncation M_eps = eps^-m_power"),
            key("ell", "1", "Damage prefactor ell"),
            key("group", "c4", "Point group name"),
            key("gamma", "0", "Fidelity weight; needs --image"),
            key(
                "image",
                "",
                "PGM for the fidelity term; pixel size is taken from the fields",
            ),
            key("sigma", "8", "Lattice spacing in pixels"),
            key("atom_radius", "2", "Gaussian atom radius in pixels"),
            key("seed", "0", "Random seed"),
        ],
        run: energy,
    },
];

fn named_group(s: &Settings) -> Result<PointGroup, Failure> {
    Ok(PointGroup::named(s.raw("group"))?)
}

fn damage(s: &Settings) -> Result<DamageModel, Failure> {
    let ell: f64 = s.get("ell")?;
    if !(ell > 0.0) {
        return Err(Failure::input("--ell must be positive"));
    }
    Ok(DamageModel::new(ell))
}

fn cell_params(s: &Settings, n_key: &str, ctx: &Context) -> Result<CellParams, Failure> {
    let cp = CellParams {
        lambda: s.get("lambda")?,
        damage: damage(s)?,
        n: s.get(n_key)?,
        exec: ctx.exec,
        ..CellParams::default()
    };
    cp.validate()?;
    Ok(cp)
}

fn coupling(s: &Settings) -> Result<Coupling, Failure> {
    Ok(Coupling {
        lambda: s.get("lambda")?,
        m_power: s.get("m_power")?,
    })
}

fn matrix_or(s: &Settings, k: &str, d: usize, fallback: MatrixD) -> Result<MatrixD, Failure> {
    let entries: Vec<f64> = s.list(k)?;
    if entries.is_empty() {
        return Ok(fallback);
    }
    MatrixD::from_row_slice(d, &entries).map_err(|e| Failure::input(format!("--{k}: {e}")))
}

/// Endpoints from `rminus`/`rplus`, defaulting to I and R(theta).
fn endpoints(s: &Settings, g: &PointGroup) -> Result<(MatrixD, MatrixD), Failure> {
    let d = g.dim();
    let a = matrix_or(s, "rminus", d, MatrixD::identity(d))?;
    let b = if s.raw("rplus").trim().is_empty() {
        if d != 2 {
            return Err(Failure::input(
                "--rplus is required for three-dimensional groups",
            ));
        }
        MatrixD::rotation2(s.get::<f64>("theta")?.to_radians())
    } else {
        matrix_or(s, "rplus", d, MatrixD::identity(d))?
    };
    Ok((a, b))
}

fn entries(m: &MatrixD) -> String {
    m.as_slice()
        .iter()
        .map(|x| format!("{x:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn group(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let file = s.raw("file").trim();
    let g = if file.is_empty() {
        PointGroup::named(s.raw("name"))?
    } else {
        let text = std::fs::read_to_string(file)
            .map_err(|e| Failure::input(format!("cannot read {file}: {e}")))?;
        PointGroup::from_text(&text, polygrain::pointgroup::DEFAULT_TOL)?
    };
    println!("dimension {}", g.dim());
    println!("order {}", g.order());
    println!("separation radius {}", g.separation_radius());
    for (k, e) in g.elements().iter().enumerate() {
        println!("element {k}: {}", entries(e));
    }
    if ctx.out_given {
        let text = g.to_text();
        write_file(ctx, "group.txt", |w| {
            std::io::Write::write_all(w, text.as_bytes()).map_err(|e| Failure::input(e.to_string()))
        })?;
    }
    Ok(true)
}

fn gtable(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let g = named_group(s)?;
    if g.dim() != 2 {
        return Err(Failure::input(
            "gtable sweeps planar rotations; use a planar group",
        ));
    }
    let cp = cell_params(s, "n", ctx)?;
    let theta_max: f64 = s.get("theta_max")?;
    let steps: usize = s.get("steps")?;
    if steps == 0 || !(theta_max > 0.0 && theta_max <= 180.0) {
        return Err(Failure::input(
            "need --steps >= 1 and 0 < --theta-max <= 180",
        ));
    }
    let id = MatrixD::identity(2);
    let mut body = String::from("theta_deg,s,quotient_distance,g,converged\n");
    let mut all = true;
    for k in 1..=steps {
        let theta = theta_max * k as f64 / steps as f64;
        let r = MatrixD::rotation2(theta.to_radians());
        let sol = g_lambda(&g, &id, &r, &cp)?;
        all &= sol.converged;
        let _ = writeln!(
            body,
            "{theta},{:e},{:e},{:e},{}",
            id.dist(&r),
            g.quotient_distance(&id, &r)?,
            sol.value,
            sol.converged
        );
        log("gtable", format!("theta {theta} g {:.6}", sol.value));
    }
    write_csv(ctx, "gtable.csv", "gtable", s, &body)?;
    Ok(all)
}

fn readshockley(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let g = named_group(s)?;
    let cp = cell_params(s, "n", ctx)?;
    let degrees: Vec<f64> = s.list("angles")?;
    let radians: Vec<f64> = degrees.iter().map(|a| a.to_radians()).collect();
    let rows = rs_scaling_table(&g, &radians, &cp)?;
    let mut body = String::from("theta_deg,s,g,ratio,converged\n");
    for (deg, r) in degrees.iter().zip(&rows) {
        let _ = writeln!(
            body,
            "{deg},{:e},{:e},{},{}",
            r.s, r.g, r.ratio, r.converged
        );
        log("readshockley", format!("theta {deg} ratio {:.4}", r.ratio));
    }
    write_csv(ctx, "readshockley.csv", "readshockley", s, &body)?;
    Ok(rows.iter().all(|r| r.converged))
}

fn cellsolve(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let g = named_group(s)?;
    let cp = cell_params(s, "n", ctx)?;
    let (a, b) = endpoints(s, &g)?;
    let sol = g_lambda(&g, &a, &b, &cp)?;
    log(
        "cellsolve",
        format!("g {:.8} after {} iterations", sol.value, sol.iterations),
    );
    let body = format!(
        "g,converged,iterations,start,orbit_index\n{:e},{},{},{},{}\n",
        sol.value, sol.converged, sol.iterations, sol.start, sol.orbit_index
    );
    write_csv(ctx, "cellsolve.csv", "cellsolve", s, &body)?;
    let d = g.dim();
    let mut path = String::from("k,t,v");
    for i in 1..=d {
        for j in 1..=d {
            let _ = write!(path, ",b{i}{j}");
        }
    }
    path.push('\n');
    let n = sol.path.len();
    for k in 0..n {
        let _ = writeln!(
            path,
            "{k},{},{:e},{}",
            k as f64 / (n - 1) as f64,
            sol.path.v[k],
            entries(&sol.path.beta[k])
        );
    }
    write_csv(ctx, "path.csv", "cellsolve", s, &path)?;
    Ok(sol.converged)
}

fn pixel_size(s: &Settings, width: usize) -> Result<f64, Failure> {
    let h = if s.raw("pixel").trim().is_empty() {
        1.0 / width as f64
    } else {
        s.get("pixel")?
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Failure::input("--pixel must be positive"));
    }
    Ok(h)
}

fn lattice(s: &Settings, h: f64) -> Result<LatticeSpec, Failure> {
    let sigma: f64 = s.get("sigma")?;
    let radius: f64 = s.get("atom_radius")?;
    Ok(LatticeSpec::square(sigma * h, radius * h)?)
}

/// Smallest-angle member of the orbit of a planar orientation, in degrees.
fn reduced_angle(g: &PointGroup, m: &MatrixD) -> Result<f64, Failure> {
    let orbit = g.orbit(m)?;
    let angle = |r: &MatrixD| r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    Ok(orbit
        .iter()
        .filter(|r| r.det() > 0.0)
        .map(angle)
        .min_by(|x, y| x.abs().total_cmp(&y.abs()).then(y.total_cmp(x)))
        .unwrap_or_else(|| angle(m)))
}

fn synth(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let (w, h_px): (usize, usize) = (s.get("width")?, s.get("height")?);
    let h = pixel_size(s, w)?;
    let grid = Grid::new(w, h_px, h)?;
    let angles: Vec<f64> = s.list("angles")?;
    if angles.is_empty() || angles.len() > w {
        return Err(Failure::input("--angles needs between 1 and width entries"));
    }
    let m = angles.len();
    let labels = (0..grid.len())
        .map(|c| Some((grid.coords(c).0 * m / w) as u32))
        .collect();
    let gm = GrainMap {
        grid,
        labels,
        orientations: angles
            .iter()
            .map(|a| MatrixD::rotation2(a.to_radians()))
            .collect(),
    };
    let bits: u32 = s.get("bits")?;
    if bits != 8 && bits != 16 {
        return Err(Failure::input("--bits must be 8 or 16"));
    }
    let img = synth_image(
        &gm,
        &lattice(s, h)?,
        s.get("noise")?,
        s.get("seed")?,
        ctx.exec,
    )?;
    let path = write_file(ctx, "synth.pgm", |out| Ok(img.write_pgm(out, bits == 8)?))?;
    log("synth", format!("wrote {}", path.display()));
    let mut body = String::from("label,angle_deg,cell_count\n");
    for (k, (a, n)) in angles.iter().zip(gm.cell_counts()).enumerate() {
        let _ = writeln!(body, "{k},{a},{n}");
    }
    write_csv(ctx, "synth_grains.csv", "synth", s, &body)?;
    Ok(true)
}

fn segment_cmd(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let input = s.raw("input").trim().to_string();
    if input.is_empty() {
        return Err(Failure::input("--input is required"));
    }
    let file = std::fs::File::open(&input)
        .map_err(|e| Failure::input(format!("cannot open {input}: {e}")))?;
    let mut img = Image::read_pgm(&mut BufReader::new(file), 1.0)?;
    img.pixel_size = pixel_size(s, img.width)?;
    let lat = lattice(s, img.pixel_size)?;
    let g = named_group(s)?;
    let schedule: Vec<f64> = s.list("schedule")?;
    let first = *schedule
        .first()
        .ok_or_else(|| Failure::input("--schedule needs at least one value"))?;
    let coupling = coupling(s)?;
    let p = EnergyParams {
        exec: ctx.exec,
        ..EnergyParams::coupled(first, &coupling, damage(s)?, s.get("gamma")?)?
    };
    let opts = SegmentOptions {
        alternate: AlternateOptions {
            schedule,
            coupling,
            max_sweeps: s.get("max_sweeps")?,
            tol: s.get("tol")?,
            sweep: SweepOptions {
                inner_iters: s.get("inner_iters")?,
            },
        },
        v_init: s.get("v_init")?,
        relax_iters: s.get("relax_iters")?,
        v_threshold: s.get("v_threshold")?,
        angle_merge: s.get::<f64>("angle_merge")?.to_radians(),
    };
    if !(0.0..=1.0).contains(&opts.v_init) {
        return Err(Failure::input("--v-init must lie in [0, 1]"));
    }
    let seg = segment(&img, &lat, &g, &p, &opts)?;
    for (stage, (eps, n)) in opts
        .alternate
        .schedule
        .iter()
        .zip(&seg.run.sweeps)
        .enumerate()
    {
        log("segment", format!("stage {stage} eps {eps}: {n} sweeps"));
    }
    let gm = &seg.grains;
    log("segment", format!("{} grains", gm.grain_count()));
    let rgb = label_colours(&gm.labels);
    write_file(ctx, "segment.ppm", |w| {
        Ok(write_ppm(w, img.width, img.height, &rgb)?)
    })?;
    let mut body = String::from("label,u11,u12,u21,u22,lattice_angle_deg,cell_count\n");
    for (k, (o, n)) in gm.orientations.iter().zip(gm.cell_counts()).enumerate() {
        let _ = writeln!(
            body,
            "{k},{},{},{n}",
            entries(o),
            reduced_angle(&g, &o.transpose())?
        );
    }
    write_csv(ctx, "segment.csv", "segment", s, &body)?;
    write_csv(ctx, "trace.csv", "segment", s, &trace_csv(&seg.run.trace))?;
    write_file(ctx, "u.pgf", |w| Ok(seg.u.write_to(w)?))?;
    write_file(ctx, "v.pgf", |w| Ok(seg.v.write_to(w)?))?;
    Ok(seg.run.converged)
}

fn gamma(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let g = named_group(s)?;
    let (a, b) = endpoints(s, &g)?;
    let cp = cell_params(s, "cell_n", ctx)?;
    let eps: Vec<f64> = s.list("eps")?;
    let opts = GammaOptions {
        dim: s.get("dim")?,
        n: s.get("n")?,
        strip_cells: s.get("strip_cells")?,
        coupling: coupling(s)?,
        newton: polygrain::phasefield::NewtonOptions {
            max_iters: s.get("newton_iters")?,
            ..Default::default()
        },
        ..GammaOptions::default()
    };
    let template = EnergyParams {
        exec: ctx.exec,
        ..EnergyParams::coupled(
            eps.first().copied().unwrap_or(1.0),
            &opts.coupling,
            damage(s)?,
            0.0,
        )?
    };
    let (rows, target) = gamma_sweep(&a, &b, &g, &eps, &template, &cp, &opts)?;
    log("gamma", format!("target g {:.8}", target.value));
    for r in &rows {
        log(
            "gamma",
            format!(
                "eps {} E {:.8} ratio {:.5} converged {}",
                r.eps, r.e_min, r.ratio, r.converged
            ),
        );
    }
    write_csv(ctx, "gamma.csv", "gamma", s, &gamma_csv(&rows))?;
    Ok(rows.iter().all(|r| r.converged))
}

fn read_field<T>(
    path: &str,
    what: &str,
    read: impl FnOnce(&mut BufReader<std::fs::File>) -> polygrain::Result<T>,
) -> Result<T, Failure> {
    if path.is_empty() {
        return Err(Failure::input(format!("--{what} is required")));
    }
    let file = std::fs::File::open(path)
        .map_err(|e| Failure::input(format!("cannot open {path}: {e}")))?;
    Ok(read(&mut BufReader::new(file))?)
}

fn energy(s: &Settings, ctx: &Context) -> Result<bool, Failure> {
    let u = read_field(s.raw("u").trim(), "u", OrientationField::read_from)?;
    let v = read_field(s.raw("v").trim(), "v", PhaseField::read_from)?;
    let g = named_group(s)?;
    let p = EnergyParams {
        exec: ctx.exec,
        ..EnergyParams::coupled(s.get("eps")?, &coupling(s)?, damage(s)?, s.get("gamma")?)?
    };
    let image = s.raw("image").trim();
    let fid = if image.is_empty() {
        if p.gamma > 0.0 {
            return Err(Failure::input("--gamma > 0 needs --image"));
        }
        None
    } else {
        let img = read_field(image, "image", |r| Image::read_pgm(r, u.grid.h))?;
        let lat = lattice(s, u.grid.h)?;
        Some(Fidelity::with_margin(img, lat)?)
    };
    let e = energy_total(&u, &v, &g, &p, fid.as_ref())?;
    println!(
        "grad {:e}\nat {:e}\npen {:e}\nfid {:e}\ntotal {:e}",
        e.grad, e.at, e.pen, e.fid, e.total
    );
    let body = format!(
        "eps,delta_eps,m_eps,term_grad,term_at,term_pen,term_fid,total\n{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
        p.eps, p.delta_eps, p.m_eps, e.grad, e.at, e.pen, e.fid, e.total
    );
    write_csv(ctx, "energy.csv", "energy", s, &body)?;
    Ok(true)
}
