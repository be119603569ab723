//! Finite point groups G ⊂ O(d) and the quotient metric on M^{d×d}/G.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::MatrixD;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ORDER: usize = 256;

/// Grid used to snap canonical representatives so that orbit-equivalent
/// inputs produce bit-identical output.
const CANONICAL_QUANTUM: f64 = 1.0 / (1u64 << 36) as f64;

/// A finite subgroup of O(d). Element 0 is always the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGroup {
    d: usize,
    elements: Vec<MatrixD>,
    tol: f64,
}

impl PointGroup {
    /// Breadth-first closure of `{I} ∪ generators` under right multiplication
    /// by the generators.
    pub fn generate(generators: &[MatrixD], d: usize, tol: f64, max_order: usize) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        for (index, g) in generators.iter().enumerate() {
            if g.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: g.dim(),
                });
            }
            let defect = g.orthogonality_defect();
            if !(defect <= tol) {
                return Err(Error::NotOrthogonal { index, defect });
            }
        }
        let mut elements = vec![MatrixD::identity(d)];
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for gen in generators {
                let candidate = elements[i] * *gen;
                if elements.iter().any(|e| e.dist(&candidate) <= tol) {
                    continue;
                }
                if elements.len() >= max_order {
                    return Err(Error::GroupTooLarge { max_order });
                }
                elements.push(candidate);
                queue.push_back(elements.len() - 1);
            }
        }
        for i in 0..elements.len() {
            for j in i + 1..elements.len() {
                if elements[i].dist(&elements[j]) <= 4.0 * tol {
                    return Err(Error::NotSeparated(i, j));
                }
            }
        }
        Ok(Self { d, elements, tol })
    }

    pub fn trivial(d: usize) -> Self {
        Self {
            d,
            elements: vec![MatrixD::identity(d)],
            tol: DEFAULT_TOL,
        }
    }

    /// Planar cyclic group of order `n`.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 || n > 12 {
            return Err(Error::DomainError(format!(
                "cyclic order {n} not in 1..=12"
            )));
        }
        let gens = if n == 1 {
            vec![]
        } else {
            vec![MatrixD::rotation2(2.0 * PI / n as f64)]
        };
        Self::generate(&gens, 2, DEFAULT_TOL, DEFAULT_MAX_ORDER)
    }

    /// Planar dihedral group of order `2n`.
    pub fn dihedral(n: usize) -> Result<Self> {
        if n == 0 || n > 12 {
            return Err(Error::DomainError(format!(
                "dihedral index {n} not in 1..=12"
            )));
        }
        let mut gens = vec![MatrixD::diag(&[1.0, -1.0])];
        if n > 1 {
            gens.insert(0, MatrixD::rotation2(2.0 * PI / n as f64));
        }
        Self::generate(&gens, 2, DEFAULT_TOL, DEFAULT_MAX_ORDER)
    }

    /// Proper rotations of the cube (order 24).
    pub fn cubic() -> Self {
        let gens = [
            MatrixD::from_row_slice(3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            MatrixD::from_row_slice(3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
        ];
        Self::generate(&gens, 3, DEFAULT_TOL, DEFAULT_MAX_ORDER).expect("cube group closes")
    }

    /// Look up a built-in group: `trivial`, `trivial3`, `c<n>`, `d<n>`, `cubic`.
    pub fn named(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        let parse_n = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("unknown group name `{name}`")))
        };
        match lower.as_str() {
            "trivial" | "trivial2" | "c1" => Ok(Self::trivial(2)),
            "trivial3" => Ok(Self::trivial(3)),
            "cubic" | "o" => Ok(Self::cubic()),
            s if s.starts_with('c') => Self::cyclic(parse_n(&s[1..])?),
            s if s.starts_with('d') => Self::dihedral(parse_n(&s[1..])?),
            _ => Err(Error::Parse(format!("unknown group name `{name}`"))),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn elements(&self) -> &[MatrixD] {
        &self.elements
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    #[inline]
    pub fn tol(&self) -> f64 {
        self.tol
    }

    fn check_dim(&self, m: &MatrixD) -> Result<()> {
        if m.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: m.dim(),
            });
        }
        Ok(())
    }

    /// Index of the element minimizing ‖a − G·b‖ and that distance, first
    /// index winning ties.
    pub fn nearest(&self, a: &MatrixD, b: &MatrixD) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, g) in self.elements.iter().enumerate() {
            let d2 = a.dist_sq(&(*g * *b));
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// d_G(a, b) = min_G ‖a − G·b‖_F, evaluated in both argument orders so the
    /// result is exactly symmetric.
    pub fn quotient_distance(&self, a: &MatrixD, b: &MatrixD) -> Result<f64> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        Ok(self.nearest(a, b).1.min(self.nearest(b, a).1))
    }

    pub fn orbit(&self, a: &MatrixD) -> Result<Vec<MatrixD>> {
        self.check_dim(a)?;
        Ok(self.elements.iter().map(|g| *g * *a).collect())
    }

    /// Lexicographically smallest orbit element (row-major), snapped to a
    /// fixed binary grid.
    pub fn canonical_rep(&self, a: &MatrixD) -> Result<MatrixD> {
        let orbit = self.orbit(a)?;
        let cmp_tol = 64.0 * CANONICAL_QUANTUM;
        let mut best = orbit[0];
        for cand in &orbit[1..] {
            if cand.lex_cmp(&best, cmp_tol) == std::cmp::Ordering::Less {
                best = *cand;
            }
        }
        for x in best.as_mut_slice() {
            *x = (*x / CANONICAL_QUANTUM).round() * CANONICAL_QUANTUM;
        }
        Ok(best)
    }

    /// A quarter of the smallest distance between distinct elements; `+∞` for
    /// the trivial group.
    pub fn separation_radius(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.elements.len() {
            for j in i + 1..self.elements.len() {
                min = min.min(self.elements[i].dist(&self.elements[j]));
            }
        }
        0.25 * min
    }

    /// Whether `self` and `other` contain the same elements up to tolerance.
    pub fn same_elements(&self, other: &Self) -> bool {
        let tol = self.tol.max(other.tol);
        self.d == other.d
            && self.order() == other.order()
            && self
                .elements
                .iter()
                .all(|a| other.elements.iter().any(|b| a.dist(b) <= tol))
    }

    /// Plain-text form: `d=<d> order=<n>` then one row-major element per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("d={} order={}\n", self.d, self.order());
        for e in &self.elements {
            let row: Vec<String> = e.as_slice().iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parse the text form, then re-validate it by closure with the listed
    /// elements as generators. The element order of the file is preserved.
    pub fn from_text(text: &str, tol: f64) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty group file".into()))?;
        let mut d = None;
        let mut order = None;
        for tok in header.split_whitespace() {
            match tok.split_once('=') {
                Some(("d", v)) => d = v.parse::<usize>().ok(),
                Some(("order", v)) => order = v.parse::<usize>().ok(),
                _ => return Err(Error::Parse(format!("bad header token `{tok}`"))),
            }
        }
        let (d, order) = match (d, order) {
            (Some(d), Some(o)) => (d, o),
            _ => return Err(Error::Parse(format!("bad header `{header}`"))),
        };
        let mut elements = Vec::with_capacity(order);
        for line in lines {
            let vals = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("`{t}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            elements.push(MatrixD::from_row_slice(d, &vals)?);
        }
        if elements.len() != order {
            return Err(Error::Parse(format!(
                "header declares {order} elements, found {}",
                elements.len()
            )));
        }
        if elements
            .first()
            .map(|e| e.dist(&MatrixD::identity(d)) > tol)
            != Some(false)
        {
            return Err(Error::Parse("first element must be the identity".into()));
        }
        let closed = Self::generate(&elements, d, tol, DEFAULT_MAX_ORDER.max(order))?;
        if closed.order() != order {
            return Err(Error::Parse(format!(
                "listed elements are not closed: closure has order {}",
                closed.order()
            )));
        }
        Ok(Self { d, elements, tol })
    }
}
