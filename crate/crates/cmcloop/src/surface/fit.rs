//! Rigid motions and simple shape fits for point clouds.

use crate::error::{Error, Result};
use crate::linalg::{m3_apply, solve_real, sym_eigen, v3_add, v3_dot, v3_norm, v3_scale, v3_sub, M3, V3};
use crate::scalar::{lit, Real};

/// `p ↦ R p + t` with `det R = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid<T> {
    pub rotation: M3<T>,
    pub translation: V3<T>,
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        Rigid { rotation: crate::linalg::m3_identity(), translation: [T::zero(); 3] }
    }

    pub fn apply(&self, p: V3<T>) -> V3<T> {
        v3_add(m3_apply(&self.rotation, p), self.translation)
    }

    pub fn rotate(&self, v: V3<T>) -> V3<T> {
        m3_apply(&self.rotation, v)
    }
}

fn centroid<T: Real>(ps: &[V3<T>]) -> V3<T> {
    let n = T::from_usize(ps.len()).unwrap();
    let s = ps.iter().fold([T::zero(); 3], |s, p| v3_add(s, *p));
    v3_scale(s, n.recip())
}

/// Least-squares proper rigid motion taking `src` onto `dst` (unit-quaternion method,
/// so reflections never occur), and the largest residual distance.
pub fn fit_rigid<T: Real>(src: &[V3<T>], dst: &[V3<T>]) -> Result<(Rigid<T>, T)> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Domain("rigid fit needs at least three matched points".into()));
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut s = [[T::zero(); 3]; 3];
    for (p, q) in src.iter().zip(dst) {
        let (p, q) = (v3_sub(*p, cs), v3_sub(*q, cd));
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = s[i][j] + p[i] * q[j];
            }
        }
    }
    let n = [
        s[0][0] + s[1][1] + s[2][2],
        s[1][2] - s[2][1],
        s[2][0] - s[0][2],
        s[0][1] - s[1][0],
        s[1][2] - s[2][1],
        s[0][0] - s[1][1] - s[2][2],
        s[0][1] + s[1][0],
        s[2][0] + s[0][2],
        s[2][0] - s[0][2],
        s[0][1] + s[1][0],
        -s[0][0] + s[1][1] - s[2][2],
        s[1][2] + s[2][1],
        s[0][1] - s[1][0],
        s[2][0] + s[0][2],
        s[1][2] + s[2][1],
        -s[0][0] - s[1][1] + s[2][2],
    ];
    let (vals, vecs) = sym_eigen(&n, 4);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
    let scale = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() || vals[order[0]] - vals[order[1]] <= lit::<T>(1e-12) * scale {
        return Err(Error::Degenerate("rank-deficient cross-covariance in rigid fit".into()));
    }
    let k = order[0];
    let q: [T; 4] = [0, 1, 2, 3].map(|i| vecs[i * 4 + k]);
    let [w, x, y, z] = q;
    let two = lit::<T>(2.0);
    let rotation = [
        [w * w + x * x - y * y - z * z, two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), w * w - x * x + y * y - z * z, two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), w * w - x * x - y * y + z * z],
    ];
    let translation = v3_sub(cd, m3_apply(&rotation, cs));
    let m = Rigid { rotation, translation };
    let resid = src.iter().zip(dst).fold(T::zero(), |r, (p, q)| r.max(v3_norm(v3_sub(m.apply(*p), *q))));
    Ok((m, resid))
}

/// First-order rigid correction `(ω, t)` minimizing `Σ |dᵢ + ω × pᵢ + t|²`, for
/// deviations `dᵢ` small against the base points `pᵢ`.
pub fn linearized_alignment<T: Real>(base: &[V3<T>], dev: &[V3<T>]) -> Result<(V3<T>, V3<T>)> {
    let c = centroid(base);
    let mut a = vec![T::zero(); 36];
    let mut rhs = vec![T::zero(); 6];
    for (p, d) in base.iter().zip(dev) {
        let q = v3_sub(*p, c);
        // ω × q = J ω with J = −[q]×
        let jw = [[T::zero(), q[2], -q[1]], [-q[2], T::zero(), q[0]], [q[1], -q[0], T::zero()]];
        for r in 0..3 {
            let mut row = [T::zero(); 6];
            row[..3].copy_from_slice(&jw[r]);
            row[3 + r] = T::one();
            for i in 0..6 {
                for j in 0..6 {
                    a[i * 6 + j] = a[i * 6 + j] + row[i] * row[j];
                }
                rhs[i] = rhs[i] - row[i] * d[r];
            }
        }
    }
    let x = solve_real(a, rhs, 6).map_err(|_| Error::Degenerate("rank-deficient alignment system".into()))?;
    let w = [x[0], x[1], x[2]];
    // t was solved for centred points
    let t = v3_sub([x[3], x[4], x[5]], crate::linalg::v3_cross(w, c));
    Ok((w, t))
}

#[derive(Clone, Copy, Debug)]
pub struct Cylinder<T> {
    pub point: V3<T>,
    pub axis: V3<T>,
    pub radius: T,
    /// Variance of the axis distances over their squared mean.
    pub rel_variance: T,
}

/// Axis from the normals (the direction they avoid), then a linear circle fit in the
/// orthogonal plane.
pub fn fit_cylinder<T: Real>(points: &[V3<T>], normals: &[V3<T>]) -> Result<Cylinder<T>> {
    if points.len() < 4 || points.len() != normals.len() {
        return Err(Error::Domain("cylinder fit needs at least four points with normals".into()));
    }
    let mut m = vec![T::zero(); 9];
    for n in normals {
        for i in 0..3 {
            for j in 0..3 {
                m[i * 3 + j] = m[i * 3 + j] + n[i] * n[j];
            }
        }
    }
    let (vals, vecs) = sym_eigen(&m, 3);
    let k = (0..3).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    let axis = [vecs[k], vecs[3 + k], vecs[6 + k]];
    let axis = v3_scale(axis, v3_norm(axis).recip());
    let helper = if axis[0].abs() < lit(0.9) { [T::one(), T::zero(), T::zero()] } else { [T::zero(), T::one(), T::zero()] };
    let u = crate::linalg::v3_cross(axis, helper);
    let u = v3_scale(u, v3_norm(u).recip());
    let v = crate::linalg::v3_cross(axis, u);
    // x² + y² = 2ax + 2by + c
    let mut a = vec![T::zero(); 9];
    let mut rhs = vec![T::zero(); 3];
    for p in points {
        let (x, y) = (v3_dot(*p, u), v3_dot(*p, v));
        let row = [x + x, y + y, T::one()];
        let b = x * x + y * y;
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = a[i * 3 + j] + row[i] * row[j];
            }
            rhs[i] = rhs[i] + row[i] * b;
        }
    }
    let s = solve_real(a, rhs, 3).map_err(|_| Error::Degenerate("degenerate circle fit".into()))?;
    let centre = v3_add(v3_scale(u, s[0]), v3_scale(v, s[1]));
    let ds: Vec<T> = points
        .iter()
        .map(|p| {
            let d = v3_sub(*p, centre);
            v3_norm(v3_sub(d, v3_scale(axis, v3_dot(d, axis))))
        })
        .collect();
    let n = T::from_usize(ds.len()).unwrap();
    let mean = ds.iter().fold(T::zero(), |s, d| s + *d) / n;
    let var = ds.iter().fold(T::zero(), |s, d| s + (*d - mean) * (*d - mean)) / n;
    Ok(Cylinder { point: centre, axis, radius: mean, rel_variance: var / (mean * mean) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rotation_exp;

    #[test]
    fn recovers_rigid_motion() {
        let r = rotation_exp([0.3, -1.1, 0.7]);
        let m = Rigid { rotation: r, translation: [1.0, -2.0, 0.5] };
        let src: Vec<V3<f64>> = (0..20).map(|i| {
            let t = i as f64;
            [t.sin(), (1.3 * t).cos(), 0.1 * t]
        }).collect();
        let dst: Vec<_> = src.iter().map(|p| m.apply(*p)).collect();
        let (fit, res) = fit_rigid(&src, &dst).unwrap();
        assert!(res < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!((fit.rotation[i][j] - r[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reflection_is_not_fitted() {
        let src: Vec<V3<f64>> = vec![[1.0, 0.2, 0.0], [0.0, 1.5, 0.3], [0.1, 0.0, 2.0], [1.0, 1.0, 1.0], [-0.4, 0.7, 0.2]];
        let dst: Vec<_> = src.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let (fit, res) = fit_rigid(&src, &dst).unwrap();
        let r = fit.rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        assert!((det - 1.0).abs() < 1e-12);
        assert!(res > 0.1);
    }

    #[test]
    fn small_motion_linearization() {
        let w = [1e-9, -2e-9, 3e-9];
        let t = [4e-9, 0.0, -1e-9];
        let base: Vec<V3<f64>> = (0..30).map(|i| {
            let s = i as f64 * 0.4;
            [s.cos() + 2.0, s.sin(), 0.2 * s]
        }).collect();
        // dev = −(ω × p + t), so the fit must return (ω, t)
        let dev: Vec<_> = base.iter().map(|p| v3_scale(v3_add(crate::linalg::v3_cross(w, *p), t), -1.0)).collect();
        let (fw, ft) = linearized_alignment(&base, &dev).unwrap();
        assert!(v3_norm(v3_sub(fw, w)) < 1e-20 && v3_norm(v3_sub(ft, t)) < 1e-20);
    }

    #[test]
    fn cylinder_from_samples() {
        let mut ps = Vec::new();
        let mut ns = Vec::new();
        for i in 0..10 {
            for j in 0..12 {
                let th = j as f64 * 0.5;
                ps.push([1.0 + 0.7 * th.cos(), -2.0 + 0.7 * th.sin(), 0.3 * i as f64]);
                ns.push([th.cos(), th.sin(), 0.0]);
            }
        }
        let cyl = fit_cylinder(&ps, &ns).unwrap();
        assert!((cyl.radius - 0.7).abs() < 1e-12 && cyl.rel_variance < 1e-20);
        assert!((cyl.axis[2].abs() - 1.0).abs() < 1e-12);
    }
}
