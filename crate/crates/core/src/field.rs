//! Cell-centered fields on an `nx × ny` grid, row-major (`j * nx + i`).
//!
//! Binary container: an ASCII header line
//! `POLYGRAIN-FIELD v1 nx=<> ny=<> d=<> h=<>` followed by little-endian f64
//! values, d² per cell (d = 0 marks a scalar phase field).

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::manifold::project_ball;
use crate::matrix::MatrixD;

const MAGIC: &str = "POLYGRAIN-FIELD v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::GridMismatch(format!("empty grid {nx}x{ny}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::DomainError(format!(
                "grid spacing must be positive, got {h}"
            )));
        }
        Ok(Self { nx, ny, h })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    /// Cell measure: h² on a 2D grid, h when one axis has a single cell.
    pub fn cell_measure(&self) -> f64 {
        if self.nx > 1 && self.ny > 1 {
            self.h * self.h
        } else {
            self.h
        }
    }

    /// Forward neighbours (right, then down) of cell `c`.
    #[inline]
    pub fn forward(&self, c: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.coords(c);
        let right = (i + 1 < self.nx).then_some(c + 1);
        let down = (j + 1 < self.ny).then_some(c + self.nx);
        right.into_iter().chain(down)
    }

    /// Backward neighbours (left, then up) of cell `c`.
    #[inline]
    pub fn backward(&self, c: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.coords(c);
        let left = (i > 0).then(|| c - 1);
        let up = (j > 0).then(|| c - self.nx);
        left.into_iter().chain(up)
    }

    /// All forward edges `(c, n)` in cell order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|c| self.forward(c).map(move |n| (c, n)))
            .collect()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny || self.h != other.h {
            return Err(Error::GridMismatch(format!(
                "{}x{} (h={}) vs {}x{} (h={})",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientationField {
    pub grid: Grid,
    pub d: usize,
    pub values: Vec<MatrixD>,
}

impl OrientationField {
    pub fn constant(grid: Grid, value: MatrixD) -> Self {
        Self {
            grid,
            d: value.dim(),
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<MatrixD>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        let d = values.first().map_or(2, MatrixD::dim);
        if values.iter().any(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: 0,
            });
        }
        if values.iter().any(|m| !m.is_finite()) {
            return Err(Error::DomainError("non-finite orientation entry".into()));
        }
        Ok(Self { grid, d, values })
    }

    pub fn dd(&self) -> usize {
        self.d * self.d
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn from_flat(grid: Grid, d: usize, x: &[f64]) -> Self {
        let dd = d * d;
        let values = x
            .chunks_exact(dd)
            .map(|c| {
                let mut m = MatrixD::zeros(d);
                m.as_mut_slice().copy_from_slice(c);
                m
            })
            .collect();
        Self { grid, d, values }
    }

    /// Cellwise truncation onto the ball ‖·‖_F ≤ √d.
    pub fn truncated(&self) -> Self {
        Self {
            grid: self.grid,
            d: self.d,
            values: self.values.iter().map(project_ball).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, &self.grid, self.d)?;
        for m in &self.values {
            for x in m.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let (grid, d) = read_header(r)?;
        if !(1..=3).contains(&d) {
            return Err(Error::Parse(format!(
                "orientation field needs d in 1..=3, got {d}"
            )));
        }
        let raw = read_values(r, grid.len() * d * d)?;
        Self::from_values(grid, OrientationField::from_flat(grid, d, &raw).values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl PhaseField {
    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::DomainError(
                "phase field values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, &self.grid, 0)?;
        for x in &self.values {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let (grid, d) = read_header(r)?;
        if d != 0 {
            return Err(Error::Parse(format!("phase field needs d=0, got {d}")));
        }
        let raw = read_values(r, grid.len())?;
        Self::from_values(grid, raw)
    }
}

fn write_header<W: Write>(w: &mut W, g: &Grid, d: usize) -> Result<()> {
    writeln!(w, "{MAGIC} nx={} ny={} d={d} h={:?}", g.nx, g.ny, g.h)?;
    Ok(())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(Grid, usize)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let rest = line
        .trim_end()
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Parse("missing POLYGRAIN-FIELD v1 header".into()))?;
    let (mut nx, mut ny, mut d, mut h) = (None, None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token {kv:?}")))?;
        let bad = || Error::Parse(format!("bad header value {kv:?}"));
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(|_| bad())?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|_| bad())?),
            "d" => d = Some(v.parse::<usize>().map_err(|_| bad())?),
            "h" => h = Some(v.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(Error::Parse(format!("unknown header key {k:?}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("header lacks {k}"));
    let grid = Grid::new(
        nx.ok_or_else(|| missing("nx"))?,
        ny.ok_or_else(|| missing("ny"))?,
        h.ok_or_else(|| missing("h"))?,
    )?;
    Ok((grid, d.ok_or_else(|| missing("d"))?))
}

fn read_values<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Parse(format!("truncated field data: {e}")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Parse("trailing bytes after field data".into()));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn neighbours() {
        let g = Grid::new(3, 2, 0.5).unwrap();
        assert_eq!(g.forward(0).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(g.forward(2).collect::<Vec<_>>(), vec![5]);
        assert_eq!(g.forward(5).count(), 0);
        assert_eq!(g.backward(4).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(g.edges().len(), 2 * 2 + 3);
        assert_eq!(g.cell_measure(), 0.25);
        assert_eq!(Grid::new(5, 1, 0.5).unwrap().cell_measure(), 0.5);
    }

    #[test]
    fn orientation_roundtrip() {
        let g = Grid::new(3, 2, 0.1).unwrap();
        let vals: Vec<MatrixD> = (0..6)
            .map(|k| MatrixD::rotation2(0.3 * k as f64).scale(1.0 + 1e-3 * k as f64))
            .collect();
        let u = OrientationField::from_values(g, vals).unwrap();
        let mut buf = Vec::new();
        u.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"POLYGRAIN-FIELD v1 nx=3 ny=2 d=2 h=0.1\n"));
        let back = OrientationField::read_from(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn phase_roundtrip_and_errors() {
        let g = Grid::new(4, 1, 0.25).unwrap();
        let v = PhaseField::from_values(g, vec![0.0, 0.5, 0.25, 1.0]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(
            PhaseField::read_from(&mut Cursor::new(buf.clone())).unwrap(),
            v
        );
        assert!(OrientationField::read_from(&mut Cursor::new(buf.clone())).is_err());
        buf.pop();
        assert!(PhaseField::read_from(&mut Cursor::new(buf)).is_err());
        assert!(PhaseField::read_from(&mut Cursor::new(b"garbage\n".to_vec())).is_err());
        assert!(PhaseField::from_values(g, vec![0.0, 1.5, 0.0, 0.0]).is_err());
    }
}
