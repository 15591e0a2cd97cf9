use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{vertex, FrameSource};
use crate::error::{Error, Result};
use crate::linalg::{v3_dot, v3_norm, v3_scale, v3_sub, V3};
use crate::scalar::{lit, to_f64, Real};

/// `nx` points on `[x_min, x_max]` by `ny` points on `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub x_min: T,
    pub x_max: T,
    pub nx: usize,
    pub ny: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(x_min: T, x_max: T, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 3 || !(x_max > x_min) {
            return Err(Error::Domain("grid needs nx ≥ 2, ny ≥ 3 and x_min < x_max".into()));
        }
        Ok(Grid { x_min, x_max, nx, ny })
    }

    pub fn hx(&self) -> T {
        (self.x_max - self.x_min) / T::from_usize(self.nx - 1).unwrap()
    }

    pub fn hy(&self) -> T {
        T::TAU() / T::from_usize(self.ny).unwrap()
    }

    pub fn x(&self, i: usize) -> T {
        self.x_min + self.hx() * T::from_usize(i).unwrap()
    }

    pub fn y(&self, j: usize) -> T {
        self.hy() * T::from_usize(j).unwrap()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceMesh<T> {
    pub grid: Grid<T>,
    pub h: T,
    /// Vertex `(i, j)` at `grid.index(i, j)`.
    pub points: Vec<V3<T>>,
    pub normals: Vec<V3<T>>,
    pub metric: Vec<T>,
    /// Vertices whose evaluation failed; their data is NaN.
    pub holes: Vec<bool>,
    /// The `y = 2π` seam coincides with `y = 0`.
    pub closed_y: bool,
}

/// Evaluates every grid vertex in parallel.
pub fn build_mesh<T: Real, S: FrameSource<T> + ?Sized>(src: &S, grid: &Grid<T>, h: T) -> SurfaceMesh<T> {
    let idx: Vec<(usize, usize)> = (0..grid.nx).flat_map(|i| (0..grid.ny).map(move |j| (i, j))).collect();
    let out: Vec<_> = idx.par_iter().map(|&(i, j)| vertex(src, h, grid.x(i), grid.y(j)).ok()).collect();
    let nan = [T::nan(); 3];
    let mut mesh = SurfaceMesh {
        grid: *grid,
        h,
        points: out.iter().map(|v| v.map_or(nan, |v| v.point)).collect(),
        normals: out.iter().map(|v| v.map_or(nan, |v| v.normal)).collect(),
        metric: out.iter().map(|v| v.map_or(T::nan(), |v| v.metric)).collect(),
        holes: out.iter().map(Option::is_none).collect(),
        closed_y: false,
    };
    let seam: Vec<Option<V3<T>>> = [0, grid.nx - 1]
        .par_iter()
        .map(|&i| vertex(src, h, grid.x(i), T::TAU()).ok().map(|v| v.point))
        .collect();
    let scale = mesh.scale();
    mesh.closed_y = seam.iter().zip([0, grid.nx - 1]).all(|(p, i)| match p {
        Some(p) => v3_norm(v3_sub(*p, mesh.points[grid.index(i, 0)])) <= lit::<T>(1e-8) * scale,
        None => false,
    });
    mesh
}

impl<T: Real> SurfaceMesh<T> {
    pub fn hole_count(&self) -> usize {
        self.holes.iter().filter(|h| **h).count()
    }

    /// Largest coordinate magnitude, at least one.
    pub fn scale(&self) -> T {
        self.points.iter().filter(|p| p[0].is_finite()).fold(T::one(), |s, p| s.max(v3_norm(*p)))
    }

    /// `max | |n| − 1 |`.
    pub fn normal_residual(&self) -> T {
        self.normals.iter().filter(|n| n[0].is_finite()).fold(T::zero(), |s, n| s.max((v3_norm(*n) - T::one()).abs()))
    }

    fn neighbor(&self, i: usize, j: usize, di: isize, dj: isize) -> Option<usize> {
        let g = &self.grid;
        let ii = i as isize + di;
        if ii < 0 || ii >= g.nx as isize {
            return None;
        }
        let mut jj = j as isize + dj;
        if jj < 0 || jj >= g.ny as isize {
            if !self.closed_y {
                return None;
            }
            jj = jj.rem_euclid(g.ny as isize);
        }
        let k = g.index(ii as usize, jj as usize);
        (!self.holes[k]).then_some(k)
    }

    fn derivative(&self, i: usize, j: usize, dir: (isize, isize), step: T) -> Option<V3<T>> {
        let at = |s: isize| self.neighbor(i, j, dir.0 * s, dir.1 * s).map(|k| self.points[k]);
        let c1 = v3_sub(at(1)?, at(-1)?);
        let c2 = v3_sub(at(2)?, at(-2)?);
        Some(v3_scale(v3_sub(v3_scale(c1, lit(8.0)), c2), (lit::<T>(12.0) * step).recip()))
    }

    /// Largest `(| |fₓ|² − |f_y|² | + 2|fₓ·f_y|) / w²` over vertices with a full
    /// fourth-order difference stencil, and the largest `| |fₓ|/w − 1 |` there.
    pub fn conformality_residual(&self) -> (T, T) {
        let g = &self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let mut worst = T::zero();
        let mut metric = T::zero();
        for i in 0..g.nx {
            for j in 0..g.ny {
                let k = g.index(i, j);
                if self.holes[k] {
                    continue;
                }
                let (Some(fx), Some(fy)) = (self.derivative(i, j, (1, 0), hx), self.derivative(i, j, (0, 1), hy)) else {
                    continue;
                };
                let w2 = self.metric[k] * self.metric[k];
                let r = ((v3_dot(fx, fx) - v3_dot(fy, fy)).abs() + lit::<T>(2.0) * v3_dot(fx, fy).abs()) / w2;
                worst = worst.max(r);
                metric = metric.max((v3_norm(fx) / self.metric[k] - T::one()).abs());
            }
        }
        (worst, metric)
    }

    /// `v`, `vn`, and triangulated quads; faces touching holes are dropped.
    pub fn write_obj<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Domain(e.to_string());
        let z = T::zero();
        for (p, h) in self.points.iter().zip(&self.holes) {
            let p = if *h { [z; 3] } else { *p };
            writeln!(out, "v {:.16e} {:.16e} {:.16e}", to_f64(p[0]), to_f64(p[1]), to_f64(p[2])).map_err(io)?;
        }
        for (n, h) in self.normals.iter().zip(&self.holes) {
            let n = if *h { [z; 3] } else { *n };
            writeln!(out, "vn {:.16e} {:.16e} {:.16e}", to_f64(n[0]), to_f64(n[1]), to_f64(n[2])).map_err(io)?;
        }
        let g = &self.grid;
        let jmax = if self.closed_y { g.ny } else { g.ny - 1 };
        for i in 0..g.nx - 1 {
            for j in 0..jmax {
                let j1 = (j + 1) % g.ny;
                let q = [g.index(i, j), g.index(i + 1, j), g.index(i + 1, j1), g.index(i, j1)];
                if q.iter().any(|&k| self.holes[k]) {
                    continue;
                }
                let [a, b, c, d] = q.map(|k| k + 1);
                writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}").map_err(io)?;
                writeln!(out, "f {a}//{a} {c}//{c} {d}//{d}").map_err(io)?;
            }
        }
        Ok(())
    }

    /// One row per vertex: `i, j, x, y, px, py, pz, nx, ny, nz, metric`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(e.to_string());
        w.write_record(["i", "j", "x", "y", "px", "py", "pz", "nx", "ny", "nz", "metric"]).map_err(io)?;
        let f = |v: T| format!("{:.16e}", to_f64(v));
        for i in 0..self.grid.nx {
            for j in 0..self.grid.ny {
                let k = self.grid.index(i, j);
                let (p, n) = (self.points[k], self.normals[k]);
                let row = [
                    i.to_string(),
                    j.to_string(),
                    f(self.grid.x(i)),
                    f(self.grid.y(j)),
                    f(p[0]),
                    f(p[1]),
                    f(p[2]),
                    f(n[0]),
                    f(n[1]),
                    f(n[2]),
                    f(self.metric[k]),
                ];
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }

    /// Vertices `(i, ·)` for `i` in the range, skipping holes.
    pub fn column_points(&self, cols: std::ops::Range<usize>) -> Vec<V3<T>> {
        cols.flat_map(|i| (0..self.grid.ny).map(move |j| (i, j)))
            .map(|(i, j)| self.grid.index(i, j))
            .filter(|&k| !self.holes[k])
            .map(|k| self.points[k])
            .collect()
    }
}
