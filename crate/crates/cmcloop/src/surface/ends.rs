//! Convergence of a perturbed end to its Delaunay model, measured per period window.
//!
//! With `Φ = exp(A log z)·P` and the Delaunay frame `Φ₀ = F₀B₀`,
//! `Φ = F₀·(I + E)·B₀` where `E = B₀(P − I)B₀⁻¹`. Factoring `I + E = U·B'` gives
//! `F = F₀U`, so every surface quantity differs from the Delaunay one by terms linear
//! in `U − I` and `B' − I`, which the factorization returns with relative accuracy.
//! That keeps the deviations meaningful far below the size of the surface itself.
//! `B₀` on `C_r` comes from `B₀(x' + nρ) = B₀(x')·B₀(ρ)ⁿ`.

use num_complex::Complex;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use super::fit::linearized_alignment;
use super::{metric_from_b, normal, p_squared, su2_to_r3, sym_point, DelaunaySource, FrameSource};
use crate::delaunay::{ls_slope, DelaunayProfile};
use crate::error::{Error, Result};
use crate::iwasawa::iwasawa_fixed;
use crate::linalg::{v3_add, v3_cross, v3_norm, v3_sub, M2, V3};
use crate::potential::{zap, Potential, ZapDecomposition};
use crate::scalar::{lit, re, to_f64, Real, C};

#[derive(Clone, Copy, Debug)]
pub struct EndOptions<T> {
    pub windows: usize,
    /// Vertices per window along `x`.
    pub nx: usize,
    pub ny: usize,
    /// Upper end of the first window.
    pub x_top: T,
}

impl<T: Real> Default for EndOptions<T> {
    fn default() -> Self {
        EndOptions { windows: 10, nx: 8, ny: 16, x_top: T::zero() }
    }
}

/// Delaunay data at a vertex and the perturbed surface's deviation from it.
#[derive(Clone, Copy, Debug)]
pub struct VertexDelta<T> {
    pub x: T,
    pub y: T,
    pub f0: V3<T>,
    pub n0: V3<T>,
    pub t0: [V3<T>; 2],
    pub d_point: V3<T>,
    pub d_normal: V3<T>,
    pub d_tangent: [V3<T>; 2],
    /// `w/w₀ − 1`.
    pub metric_ratio_m1: T,
    pub factor_residual: T,
}

impl<T: Real> VertexDelta<T> {
    pub fn point(&self) -> V3<T> {
        v3_add(self.f0, self.d_point)
    }

    pub fn normal(&self) -> V3<T> {
        v3_add(self.n0, self.d_normal)
    }
}

/// `B₀(x')` on `C_r` and its inverse.
pub struct Column<T> {
    pub x: T,
    b: Vec<M2<T>>,
    b_inv: Vec<M2<T>>,
}

pub struct EndSetup<'a, T> {
    pub pot: &'a Potential<T>,
    pub profile: &'a DelaunayProfile<T>,
    pub r: T,
    pub h: T,
    /// The perturbation is `O(zⁿ)`.
    pub n: usize,
    pub zap: ZapDecomposition<T>,
    base: DelaunaySource<'a, T>,
    a: Vec<M2<T>>,
    step: Vec<M2<T>>,
    step_inv: Vec<M2<T>>,
    max_re_mu: T,
}

fn pos_samples<T: Real>(a: &[M2<T>], x: T, r: T) -> Result<Vec<M2<T>>> {
    let phi: Vec<M2<T>> = a.iter().map(|a| (*a * re(x)).exp()).collect();
    let e: Vec<M2<T>> = phi.iter().map(|p| *p - M2::identity()).collect();
    let d = iwasawa_fixed(&e, r)?;
    let f = d.unitary();
    let lams = crate::scalar::circle_points(r, a.len());
    Ok(phi.iter().zip(&lams).map(|(p, &l)| f.at(l).adj() * *p).collect())
}

fn power<T: Real>(m: &[M2<T>], minv: &[M2<T>], n: i64) -> Vec<M2<T>> {
    let src = if n >= 0 { m } else { minv };
    let mut out = vec![M2::identity(); m.len()];
    for _ in 0..n.unsigned_abs() {
        for (o, s) in out.iter_mut().zip(src) {
            *o = *o * *s;
        }
    }
    out
}

/// `|1 + t| − 1` without cancellation.
fn abs1p_m1<T: Real>(t: C<T>) -> T {
    (t.re + t.re + t.norm_sqr()) / ((C::<T>::one() + t).norm() + T::one())
}

/// `g e_j g⁻¹` for `g = diag(p, 1/p)`, from `p²`.
fn twisted<T: Real>(j: usize, p2: C<T>) -> M2<T> {
    let i = C::<T>::i();
    let z = C::<T>::zero();
    if j == 0 {
        M2::new(z, p2, -p2.inv(), z)
    } else {
        M2::new(z, i * p2, i * p2.inv(), z)
    }
}

impl<'a, T: Real> EndSetup<'a, T> {
    /// `m` samples on `C_r`, `z`-series to `order`.
    pub fn new(
        pot: &'a Potential<T>,
        profile: &'a DelaunayProfile<T>,
        r: T,
        m: usize,
        order: usize,
        h: T,
        n: usize,
    ) -> Result<Self> {
        let sp = pot.sample_circle(r, m, order + 1);
        let zap = zap(&sp, order)?;
        let base = DelaunaySource::new(&pot.residue, profile, C::<T>::one(), Vec::new())?;
        let step = pos_samples(&sp.a, profile.rho, r)?;
        let step_inv = step.iter().map(M2::adj).collect();
        let (_, max_re_mu) = sp.re_mu_range();
        Ok(EndSetup { pot, profile, r, h, n, zap, base, a: sp.a.clone(), step, step_inv, max_re_mu })
    }

    pub fn rho(&self) -> T {
        self.profile.rho
    }

    /// `(n+1) − 2·max Re μ` over `C_r`: the predicted decay rate in `x`.
    pub fn floor(&self) -> T {
        T::from_usize(self.n + 1).unwrap() - self.max_re_mu * lit(2.0)
    }

    pub fn column(&self, x: T) -> Result<Column<T>> {
        let b = pos_samples(&self.a, x, self.r)?;
        let b_inv = b.iter().map(M2::adj).collect();
        Ok(Column { x, b, b_inv })
    }

    /// Deviation at `(col.x + k·ρ, y)`, with `B₀(ρ)^k` and its inverse supplied.
    pub fn vertex_delta(&self, col: &Column<T>, k: i64, mk: &[M2<T>], mk_inv: &[M2<T>], y: T) -> Result<VertexDelta<T>> {
        let x = col.x + self.rho() * T::from_i64(k).unwrap();
        let z = Complex::new(x, y).exp();
        let mut e = Vec::with_capacity(mk.len());
        let mut scale = T::zero();
        for s in 0..mk.len() {
            let mut acc = M2::zero();
            for pk in self.zap.p.iter().skip(1).rev() {
                acc = (acc + pk[s]) * z;
            }
            let v = col.b[s] * mk[s] * acc * mk_inv[s] * col.b_inv[s];
            scale = scale.max(v.max_abs());
            e.push(v);
        }
        let lam = self.base.lambda_sym();
        let (f0, f0t) = self.base.frame(x, y)?;
        let f0i = f0.adj();
        let a = self.pot.residue.a;
        let w0 = metric_from_b(self.base.delaunay_b0_diag(x), a, self.h)?;
        let p02 = p_squared(a, self.h, lam);
        let t0 = [0, 1].map(|j| su2_to_r3(&(f0 * twisted(j, p02) * f0i).scale_re(w0)));
        let n0 = normal(&f0);
        let base_point = sym_point(&f0, &f0t, self.h);
        let zero = [T::zero(); 3];
        let mut out = VertexDelta {
            x,
            y,
            f0: base_point,
            n0,
            t0,
            d_point: zero,
            d_normal: zero,
            d_tangent: [zero; 2],
            metric_ratio_m1: T::zero(),
            factor_residual: T::zero(),
        };
        let mut dalpha = C::<T>::zero();
        for (kk, l) in &self.pot.terms {
            dalpha = dalpha + l.coeff(-1).b * z.powi(*kk as i32 + 1);
        }
        if scale == T::zero() && dalpha.is_zero() {
            return Ok(out);
        }
        let (du, dut, db) = if scale == T::zero() {
            (M2::zero(), M2::zero(), C::<T>::zero())
        } else {
            let d = iwasawa_fixed(&e, self.r)?;
            out.factor_residual = d.recon_residual.max(d.unitarity_residual);
            (d.f.at(lam), d.f.d_theta().at(lam), d.b.coeff(0).a)
        };
        let u = M2::identity() + du;
        let ui = u.adj();
        let conj = |m: M2<T>| su2_to_r3(&(f0 * m * f0i));
        out.d_point = conj((dut * ui).scale_re(-lit::<T>(2.0) / self.h));
        out.d_normal = conj(du.commutator(&crate::surface::basis(2)) * ui);
        let t = dalpha / a;
        let ua = abs1p_m1(t);
        let vb = db.re + db.re + db.norm_sqr();
        let ratio = ua + vb + ua * vb;
        out.metric_ratio_m1 = ratio;
        // α/|α| − a/|a|
        let alpha = a + dalpha;
        let dphase = (dalpha * a.norm() - a * (a.norm() * ua)) / (alpha.norm() * a.norm());
        let dp2 = C::<T>::i() * dphase * self.h.signum() / lam;
        let p2 = p02 + dp2;
        for j in 0..2 {
            let et = twisted(j, p2);
            let lower = if j == 0 { dp2 / (p2 * p02) } else { -C::<T>::i() * dp2 / (p2 * p02) };
            let upper = if j == 0 { dp2 } else { C::<T>::i() * dp2 };
            let de = M2::new(C::<T>::zero(), upper, lower, C::<T>::zero());
            let m = (u * et * ui).scale_re(w0 * ratio) + (du.commutator(&et) * ui).scale_re(w0) + de.scale_re(w0);
            out.d_tangent[j] = conj(m);
        }
        Ok(out)
    }

    /// Deviation at an arbitrary vertex.
    pub fn vertex_delta_at(&self, x: T, y: T) -> Result<VertexDelta<T>> {
        let k = (x / self.rho()).floor();
        let xp = x - k * self.rho();
        let k = to_f64(k) as i64;
        let col = self.column(xp)?;
        let mk = power(&self.step, &self.step_inv, k);
        let mk_inv = power(&self.step_inv, &self.step, k);
        self.vertex_delta(&col, k, &mk, &mk_inv, y)
    }

    pub fn run(&self, opts: &EndOptions<T>) -> Result<EndReport<T>> {
        if opts.windows == 0 || opts.nx == 0 || opts.ny < 3 {
            return Err(Error::Domain("need at least one window, nx ≥ 1 and ny ≥ 3".into()));
        }
        let rho = self.rho();
        let cols: Vec<Column<T>> = (0..opts.nx)
            .into_par_iter()
            .map(|i| {
                let off = (T::from_usize(i).unwrap() + lit(0.5)) / T::from_usize(opts.nx).unwrap();
                self.column(opts.x_top - rho + rho * off)
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(opts.windows);
        for w in 0..opts.windows {
            let k = -(w as i64);
            let mk = power(&self.step, &self.step_inv, k);
            let mk_inv = power(&self.step_inv, &self.step, k);
            let idx: Vec<(usize, usize)> = (0..opts.nx).flat_map(|i| (0..opts.ny).map(move |j| (i, j))).collect();
            let deltas: Vec<VertexDelta<T>> = idx
                .par_iter()
                .map(|&(i, j)| {
                    let y = T::TAU() * T::from_usize(j).unwrap() / T::from_usize(opts.ny).unwrap();
                    self.vertex_delta(&cols[i], k, &mk, &mk_inv, y)
                })
                .collect::<Result<_>>()?;
            rows.push(window_row(w + 1, &deltas)?);
        }
        EndReport::new(rows, self.floor())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowRow<T> {
    pub window: usize,
    pub x_center: T,
    /// Before alignment.
    pub c0_raw: T,
    pub c0_dev: T,
    pub c1_dev: T,
    pub metric_ratio_dev: T,
    pub normal_dev: T,
    pub factor_residual: T,
}

fn window_row<T: Real>(window: usize, ds: &[VertexDelta<T>]) -> Result<WindowRow<T>> {
    let n = T::from_usize(ds.len()).unwrap();
    let x_center = ds.iter().fold(T::zero(), |s, d| s + d.x) / n;
    let c0_raw = ds.iter().fold(T::zero(), |s, d| s.max(v3_norm(d.d_point)));
    let (w, t) = if c0_raw == T::zero() {
        ([T::zero(); 3], [T::zero(); 3])
    } else {
        let base: Vec<V3<T>> = ds.iter().map(|d| d.f0).collect();
        let dev: Vec<V3<T>> = ds.iter().map(|d| d.d_point).collect();
        linearized_alignment(&base, &dev)?
    };
    let mut row = WindowRow {
        window,
        x_center,
        c0_raw,
        c0_dev: T::zero(),
        c1_dev: T::zero(),
        metric_ratio_dev: T::zero(),
        normal_dev: T::zero(),
        factor_residual: T::zero(),
    };
    for d in ds {
        let p = v3_add(v3_add(d.d_point, v3_cross(w, d.f0)), t);
        row.c0_dev = row.c0_dev.max(v3_norm(p));
        for j in 0..2 {
            let tj = v3_add(d.d_tangent[j], v3_cross(w, d.t0[j]));
            row.c1_dev = row.c1_dev.max(v3_norm(tj));
        }
        row.normal_dev = row.normal_dev.max(v3_norm(v3_add(d.d_normal, v3_cross(w, d.n0))));
        row.metric_ratio_dev = row.metric_ratio_dev.max(d.metric_ratio_m1.abs());
        row.factor_residual = row.factor_residual.max(d.factor_residual);
    }
    Ok(row)
}

#[derive(Clone, Debug, Serialize)]
pub struct EndReport<T> {
    pub rows: Vec<WindowRow<T>>,
    /// Fitted `d log(dev)/dx`; positive means decay as `x → −∞`.
    pub c0_rate: Option<T>,
    pub c1_rate: Option<T>,
    pub metric_rate: Option<T>,
    pub normal_rate: Option<T>,
    pub floor: T,
}

fn rate<T: Real>(rows: &[WindowRow<T>], get: impl Fn(&WindowRow<T>) -> T) -> Option<T> {
    let pts: Vec<(T, T)> = rows.iter().filter(|r| get(r) > T::zero()).map(|r| (r.x_center, get(r).ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let (xs, ys): (Vec<T>, Vec<T>) = pts.into_iter().unzip();
    Some(ls_slope(&xs, &ys))
}

impl<T: Real> EndReport<T> {
    fn new(rows: Vec<WindowRow<T>>, floor: T) -> Result<Self> {
        Ok(EndReport {
            c0_rate: rate(&rows, |r| r.c0_dev),
            c1_rate: rate(&rows, |r| r.c1_dev),
            metric_rate: rate(&rows, |r| r.metric_ratio_dev),
            normal_rate: rate(&rows, |r| r.normal_dev),
            rows,
            floor,
        })
    }

    /// Each measure strictly decreases over the last `k` windows.
    pub fn monotone_tail(&self, k: usize) -> bool {
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        let dec = |get: &dyn Fn(&WindowRow<T>) -> T| tail.windows(2).all(|p| get(&p[1]) < get(&p[0]));
        dec(&|r| r.c0_dev) && dec(&|r| r.c1_dev) && dec(&|r| r.metric_ratio_dev) && dec(&|r| r.normal_dev)
    }

    pub fn deepest_max(&self) -> T {
        self.rows.last().map_or(T::zero(), |r| r.c0_dev.max(r.c1_dev).max(r.metric_ratio_dev).max(r.normal_dev))
    }

    /// `window_k, c0_dev, c1_dev, metric_ratio_dev, normal_dev`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(e.to_string());
        w.write_record(["window_k", "c0_dev", "c1_dev", "metric_ratio_dev", "normal_dev"]).map_err(io)?;
        let f = |v: T| format!("{:.16e}", to_f64(v));
        for r in &self.rows {
            w.write_record([r.window.to_string(), f(r.c0_dev), f(r.c1_dev), f(r.metric_ratio_dev), f(r.normal_dev)])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

/// Sup of `|f − (f₀ + Δf)|` between a directly factored perturbed surface and the
/// delta route at the given vertices.
pub fn delta_consistency<T: Real>(setup: &EndSetup<'_, T>, pts: &[(T, T)]) -> Result<T> {
    let src = super::PotentialSource::new(setup.pot, &setup.zap, setup.r, C::<T>::one());
    let mut worst = T::zero();
    for &(x, y) in pts {
        let v = super::vertex(&src, setup.h, x, y)?;
        let d = setup.vertex_delta_at(x, y)?;
        worst = worst.max(v3_norm(v3_sub(v.point, d.point())));
        worst = worst.max(v3_norm(v3_sub(v.normal, d.normal())));
        for j in 0..2 {
            worst = worst.max(v3_norm(v3_sub(v.tangents[j], v3_add(d.t0[j], d.d_tangent[j]))) / v.metric);
        }
        let w0 = setup.base_metric(x)?;
        worst = worst.max((v.metric / w0 - T::one() - d.metric_ratio_m1).abs());
    }
    Ok(worst)
}

impl<T: Real> EndSetup<'_, T> {
    pub fn base_metric(&self, x: T) -> Result<T> {
        metric_from_b(self.base.delaunay_b0_diag(x), self.pot.residue.a, self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::DelaunayResidue;
    use crate::loopcore::MatrixLoop;
    use crate::scalar::cplx;

    fn unduloid() -> DelaunayResidue<f64> {
        DelaunayResidue::new(cplx(0.375, 0.0), cplx(0.125, 0.0), 0.0).unwrap()
    }

    fn perturbed(res: DelaunayResidue<f64>, eps: f64) -> Potential<f64> {
        let e21 = M2::new(C::zero(), C::zero(), cplx(eps, 0.0), C::zero());
        Potential::new(res, vec![(1, MatrixLoop::constant(e21))], 10.0).unwrap()
    }

    #[test]
    fn unperturbed_end_has_no_deviation() {
        let res = unduloid();
        let prof = DelaunayProfile::new(&res).unwrap();
        let pot = Potential::unperturbed(res, 10.0);
        let setup = EndSetup::new(&pot, &prof, 0.5, 64, 4, 1.0, 1).unwrap();
        let rep = setup.run(&EndOptions { windows: 2, nx: 2, ny: 4, x_top: 0.0 }).unwrap();
        assert!(rep.deepest_max() == 0.0 && rep.c0_rate.is_none());
    }

    #[test]
    fn delta_route_matches_direct_factorization() {
        let res = unduloid();
        let prof = DelaunayProfile::new(&res).unwrap();
        let pot = perturbed(res, 0.3);
        let setup = EndSetup::new(&pot, &prof, 0.5, 128, 24, 1.0, 1).unwrap();
        let pts = [(-0.5, 0.3), (-2.0, 2.0), (-4.0, 5.0), (-8.0, 1.0)];
        let err = delta_consistency(&setup, &pts).unwrap();
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn end_converges_to_delaunay() {
        let res = unduloid();
        let prof = DelaunayProfile::new(&res).unwrap();
        let pot = perturbed(res, 0.3);
        let setup = EndSetup::new(&pot, &prof, 0.5, 128, 24, 1.0, 1).unwrap();
        let rep = setup.run(&EndOptions { windows: 6, nx: 4, ny: 8, x_top: 0.0 }).unwrap();
        assert!(rep.monotone_tail(5), "{:#?}", rep.rows);
        let c0 = rep.c0_rate.unwrap();
        assert!(c0 >= rep.floor - 0.1, "rate {c0} floor {}", rep.floor);
    }
}
