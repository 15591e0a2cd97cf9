//! r-Iwasawa factorization `Φ = F·B` with `F` r-unitary and `B` r-positive.
//!
//! The unitary factor is analytic on the annulus `r < |λ| < 1/r` and satisfies
//! `F*(λ) = F(λ)^{-1}`. On `C_{1/r}` we therefore know `F = Ψ·B*` with
//! `Ψ = (Φ*)^{-1}`, where `B*` is holomorphic outside the disk of radius `1/r`.
//! Writing `Y_in = B^{-1}` (up to a constant) and `Y_out = B*` we solve
//!
//! ```text
//!   Φ·Y_in  on C_r   and   Ψ·Y_out on C_{1/r}   are the same Laurent series
//! ```
//!
//! for truncated power series `Y_in = I + Σ_{k≥1} y_k λ^k`, `Y_out = Σ_{k≥0} w_k λ^{-k}`,
//! then fix the constant by a Cholesky factor of the mean of `F'ᴴF'` over `S¹`.
//! Everything is done in increments `X − I`, so loops close to the identity keep
//! relative accuracy.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::linalg::{chol_upper_delta, qr2, Lu, M2};
use crate::loopcore::{modes_to_samples, rescale, samples_to_modes, LoopTag, MatrixLoop};
use crate::scalar::{lit, to_f64, Real, C};

#[derive(Clone, Copy, Debug)]
pub struct IwasawaOptions<T> {
    /// Initial number of samples per circle (power of two).
    pub samples: usize,
    /// Largest number of samples tried before giving up.
    pub max_samples: usize,
    /// Upper bound on the truncation order of the positive factor.
    pub band: usize,
    /// Relative residual accepted for reconstruction and unitarity.
    pub tol: T,
}

impl<T: Real> Default for IwasawaOptions<T> {
    fn default() -> Self {
        IwasawaOptions { samples: 256, max_samples: 1024, band: 255, tol: lit(1e-10) }
    }
}

/// Both factors as increments over the identity.
#[derive(Clone, Debug)]
pub struct IwasawaDelta<T> {
    /// `F − I`, analytic on `A_{r,1/r}`.
    pub f: MatrixLoop<T>,
    /// `B − I`, accurate on the closed disk `|λ| ≤ r`.
    pub b: MatrixLoop<T>,
    /// `sup ‖F B − Φ‖ / sup ‖Φ − I‖` on `C_r`.
    pub recon_residual: T,
    /// `sup ‖F* F − I‖` on `C_r`, relative to `sup ‖F‖²`.
    pub unitarity_residual: T,
    /// Largest negative mode of `B` plus the lower-left entry of `B(0)`.
    pub positivity_residual: T,
    /// Sup of `‖Φ − I‖` on `C_r`.
    pub scale: T,
    pub order: usize,
    pub samples: usize,
}

impl<T: Real> IwasawaDelta<T> {
    pub fn unitary(&self) -> MatrixLoop<T> {
        self.f.add(&MatrixLoop::identity()).with_radius(self.f.radius()).with_tag(LoopTag::Unitary)
    }

    pub fn positive(&self) -> MatrixLoop<T> {
        self.b.add(&MatrixLoop::identity()).with_radius(self.b.radius()).with_tag(LoopTag::Positive)
    }
}

#[derive(Clone, Debug)]
pub struct IwasawaPair<T> {
    pub unitary: MatrixLoop<T>,
    pub positive: MatrixLoop<T>,
    /// Sup of `‖F·B − Φ‖` over `C_r` samples.
    pub residual: T,
}

/// Iwasawa factorization of a constant matrix of determinant one.
pub fn qr_constant<T: Real>(m: &M2<T>) -> Result<(M2<T>, M2<T>)> {
    let d = m.det();
    if (d - C::one()).norm() > lit(1e-9) {
        return Err(Error::Precondition(format!("det = {d} is not 1")));
    }
    Ok(qr2(m)?)
}

/// Factorization of a loop given by its Laurent coefficients.
pub fn iwasawa<T: Real>(phi: &MatrixLoop<T>, r: T) -> Result<IwasawaPair<T>> {
    let opts = IwasawaOptions { samples: phi.samples_hint().max(256), ..IwasawaOptions::default() };
    let d = iwasawa_delta(|m| phi.samples_on(r, m).into_iter().map(|x| x - M2::identity()).collect(), r, &opts)?;
    Ok(IwasawaPair {
        unitary: d.unitary(),
        positive: d.positive(),
        residual: d.recon_residual * d.scale.max(T::epsilon()),
    })
}

/// Factorization of `Φ = I + E` where `sampler(m)` returns `E` at the `m` points
/// `r·e^{2πij/m}`.
pub fn iwasawa_delta<T, S>(sampler: S, r: T, opts: &IwasawaOptions<T>) -> Result<IwasawaDelta<T>>
where
    T: Real,
    S: Fn(usize) -> Vec<M2<T>>,
{
    if !(r > T::zero() && r <= T::one()) {
        return Err(Error::Domain(format!("radius {r} outside (0, 1]")));
    }
    let mut m = opts.samples.max(16).next_power_of_two();
    let mut e = sampler(m);
    let mut k = 0usize;
    loop {
        let cap = (m / 4 - 1).min(opts.band);
        let setup = Setup::new(&e, r)?;
        if k == 0 {
            k = (setup.bandwidth() + 8).clamp(12, cap);
        }
        k = k.min(cap);
        let out = setup.solve(k)?;
        let ok = out.recon_residual < opts.tol && out.unitarity_residual < opts.tol;
        if ok && (out.tail < lit(1e-14) || k == cap) {
            return Ok(out.delta);
        }
        if k < cap {
            k = (2 * k).min(cap);
            continue;
        }
        if 2 * m <= opts.max_samples {
            m *= 2;
            e = sampler(m);
            k = (2 * k).min(m / 4 - 1).min(opts.band);
            continue;
        }
        if ok {
            return Ok(out.delta);
        }
        return Err(Error::Factorization(format!(
            "residuals {:.3e} / {:.3e} at order {k} with {m} samples",
            to_f64(out.recon_residual),
            to_f64(out.unitarity_residual)
        )));
    }
}

struct Setup<T> {
    r: T,
    m: usize,
    e: Vec<M2<T>>,
    d: Vec<M2<T>>,
    e_modes: Vec<M2<T>>,
    d_modes: Vec<M2<T>>,
    scale: T,
}

struct Solved<T> {
    delta: IwasawaDelta<T>,
    recon_residual: T,
    unitarity_residual: T,
    tail: T,
}

impl<T: Real> Setup<T> {
    fn new(e: &[M2<T>], r: T) -> Result<Self> {
        let m = e.len();
        // Ψ − I = (I + Eᴴ)^{-1} − I = −(I + Eᴴ)^{-1} Eᴴ, sampled on C_{1/r}.
        let mut d = Vec::with_capacity(m);
        for x in e {
            let xh = x.h();
            let p = M2::identity() + xh;
            let det = p.det();
            if det.norm() < lit(1e-14) {
                return Err(Error::Domain("loop is singular on the circle".into()));
            }
            d.push(-(p.adj() * xh) * det.inv());
        }
        let scale = e.iter().fold(T::zero(), |s, x| s.max(x.op_norm()));
        Ok(Setup { r, m, e_modes: samples_to_modes(e), d_modes: samples_to_modes(&d), e: e.to_vec(), d, scale })
    }

    fn mode(v: &[M2<T>], k: i64) -> M2<T> {
        v[k.rem_euclid(v.len() as i64) as usize]
    }

    /// Highest frequency carrying non-negligible weight in `E` or `Ψ − I`.
    fn bandwidth(&self) -> usize {
        let peak = self.e_modes.iter().chain(&self.d_modes).fold(T::zero(), |s, x| s.max(x.max_abs()));
        let thr = peak * lit(1e-17);
        let m = self.m as i64;
        let mut bw = 0;
        for k in 1..m / 2 {
            let w = [k, -k]
                .iter()
                .map(|&j| Self::mode(&self.e_modes, j).max_abs().max(Self::mode(&self.d_modes, j).max_abs()))
                .fold(T::zero(), |s, x| s.max(x));
            if w > thr {
                bw = k as usize;
            }
        }
        bw
    }

    fn solve(&self, k: usize) -> Result<Solved<T>> {
        let m = self.m;
        let r = self.r;
        let ki = k as i64;
        let nb = 2 * k + 1;
        let n = 2 * nb;
        let mut a = vec![C::zero(); n * n];
        let mut rhs = vec![C::zero(); 2 * n];
        let r2 = r * r;
        let set = |a: &mut Vec<C<T>>, row: usize, col: usize, x: &M2<T>| {
            let (r0, c0) = (2 * row, 2 * col);
            a[c0 * n + r0] = a[c0 * n + r0] + x.a;
            a[(c0 + 1) * n + r0] = a[(c0 + 1) * n + r0] + x.b;
            a[c0 * n + r0 + 1] = a[c0 * n + r0 + 1] + x.c;
            a[(c0 + 1) * n + r0 + 1] = a[(c0 + 1) * n + r0 + 1] + x.d;
        };
        // Unknown blocks: y_1..y_k at 0..k, w_0..w_k at k..=2k.
        for j in -ki..=ki {
            let row = (j + ki) as usize;
            let w2 = r2.powi(j.unsigned_abs() as i32);
            let rhs_blk;
            if j >= 0 {
                for kk in 1..=ki {
                    let mut c = Self::mode(&self.e_modes, j - kk);
                    if j == kk {
                        c += M2::identity();
                    }
                    set(&mut a, row, (kk - 1) as usize, &c);
                }
                for kk in 0..=ki {
                    let mut c = Self::mode(&self.d_modes, j + kk);
                    if j == 0 && kk == 0 {
                        c += M2::identity();
                    }
                    set(&mut a, row, (ki + kk) as usize, &c.scale_re(-w2));
                }
                rhs_blk = Self::mode(&self.d_modes, j).scale_re(w2) - Self::mode(&self.e_modes, j);
            } else {
                for kk in 0..=ki {
                    let mut c = Self::mode(&self.d_modes, j + kk);
                    if kk == -j {
                        c += M2::identity();
                    }
                    set(&mut a, row, (ki + kk) as usize, &c);
                }
                for kk in 1..=ki {
                    let c = Self::mode(&self.e_modes, j - kk).scale_re(-w2);
                    set(&mut a, row, (kk - 1) as usize, &c);
                }
                rhs_blk = Self::mode(&self.e_modes, j).scale_re(w2) - Self::mode(&self.d_modes, j);
            }
            rhs[2 * row] = rhs_blk.a;
            rhs[n + 2 * row] = rhs_blk.b;
            rhs[2 * row + 1] = rhs_blk.c;
            rhs[n + 2 * row + 1] = rhs_blk.d;
        }
        let lu = Lu::factor(a, n).map_err(|e| Error::Factorization(e.to_string()))?;
        let (c0, c1) = rhs.split_at_mut(n);
        lu.solve_in_place(c0);
        lu.solve_in_place(c1);
        let block = |b: usize| M2::new(c0[2 * b], c1[2 * b], c0[2 * b + 1], c1[2 * b + 1]);

        let mut ymodes = vec![M2::zero(); m];
        let mut wmodes = vec![M2::zero(); m];
        let mut peak = T::zero();
        let mut tail = T::zero();
        for kk in 1..=k {
            let y = block(kk - 1);
            ymodes[kk] = y;
            peak = peak.max(y.max_abs());
            if 4 * kk > 3 * k {
                tail = tail.max(y.max_abs());
            }
        }
        for kk in 0..=k {
            let w = block(k + kk);
            wmodes[(m - kk) % m] = w;
            peak = peak.max(w.max_abs());
            if 4 * kk > 3 * k {
                tail = tail.max(w.max_abs());
            }
        }
        let tail = if peak > T::zero() { tail / peak } else { T::zero() };
        let dy = modes_to_samples(&ymodes);
        let dw = modes_to_samples(&wmodes);

        // F' − I on both circles.
        let xin: Vec<M2<T>> = self.e.iter().zip(&dy).map(|(e, y)| *e + *y + *e * *y).collect();
        let xout: Vec<M2<T>> = self.d.iter().zip(&dw).map(|(d, w)| *d + *w + *d * *w).collect();
        let min = samples_to_modes(&xin);
        let mout = samples_to_modes(&xout);
        let half = (m / 2) as i64;
        let mut fco: Vec<M2<T>> = Vec::with_capacity(m);
        for j in -half + 1..half {
            let idx = j.rem_euclid(m as i64) as usize;
            let c = if j < 0 {
                min[idx].scale_re(r.powi(-j as i32))
            } else {
                mout[idx].scale_re(r.powi(j as i32))
            };
            fco.push(c);
        }
        // Mean of F'ᴴF' over S¹ (Parseval).
        let mut gram = M2::zero();
        for c in &fco {
            gram += c.h() * *c;
        }
        let f0 = fco[(half - 1) as usize];
        gram += f0 + f0.h();
        let tm = chol_upper_delta(&gram).map_err(|_| Error::Factorization("Gram matrix not positive".into()))?;
        let t0 = tm + M2::identity();
        let t0inv = t0.inv().ok_or_else(|| Error::Factorization("singular normalization".into()))?;
        let t0inv_m1 = -(t0inv * tm);
        for c in fco.iter_mut() {
            *c = *c * t0inv;
        }
        fco[(half - 1) as usize] += t0inv_m1;
        let f = MatrixLoop::new(-half + 1, fco, r);

        // B − I = Tm (I+δY)^{-1} − (I+δY)^{-1} δY on C_r.
        let mut bd = Vec::with_capacity(m);
        for y in &dy {
            let p = M2::identity() + *y;
            let pinv = p.adj() * p.det().inv();
            bd.push(tm * pinv - pinv * *y);
        }
        let bmodes = samples_to_modes(&bd);
        let mut neg = T::zero();
        let mut bco = Vec::with_capacity(m / 2);
        for j in 0..m / 2 {
            bco.push(rescale(bmodes[j], r, -(j as i64)));
        }
        for j in m / 2..m {
            neg = neg.max(bmodes[j].max_abs());
        }
        let b = MatrixLoop::new(0, bco, r);

        // Residuals.
        let fin = f.samples_on(r, m);
        let fout = f.samples_on(r.recip(), m);
        let scale = self.scale.max(T::min_positive_value());
        let mut recon = T::zero();
        let mut unit = T::zero();
        let mut fpeak = T::one();
        for i in 0..m {
            let fi = fin[i];
            let prod = fi + bd[i] + fi * bd[i] - self.e[i];
            recon = recon.max(prod.op_norm());
            let fo = fout[i];
            let u = fo.h() + fi + fo.h() * fi;
            unit = unit.max(u.op_norm());
            fpeak = fpeak.max((M2::identity() + fi).op_norm() * (M2::identity() + fo).op_norm());
        }
        let b0 = b.coeff(0);
        let posres = neg.max(b0.c.norm()).max((b0.a.im).abs()).max((b0.d.im).abs());
        let recon_rel = recon / scale;
        let unit_rel = unit / (scale.min(T::one()) * fpeak);
        let delta = IwasawaDelta {
            f,
            b,
            recon_residual: recon_rel,
            unitarity_residual: unit_rel,
            positivity_residual: posres / scale.min(T::one()),
            scale: self.scale,
            order: k,
            samples: m,
        };
        Ok(Solved { delta, recon_residual: recon_rel, unitarity_residual: unit_rel, tail })
    }
}

/// [`iwasawa_delta`] at a fixed sample count: `e` holds `Φ − I` on `C_r`.
pub fn iwasawa_fixed<T: Real>(e: &[M2<T>], r: T) -> Result<IwasawaDelta<T>> {
    let m = e.len();
    let opts = IwasawaOptions { samples: m, max_samples: m, ..IwasawaOptions::default() };
    iwasawa_delta(
        |k| {
            assert_eq!(k, m, "sample count is fixed");
            e.to_vec()
        },
        r,
        &opts,
    )
}

/// The unitary `U` relating the factorizations of `X` and `XY`: `Uni(XY) = Uni(X)·U` and `Pos(XY) = U^{-1}·Pos(X)·Y`
/// for a positive loop `Y` and the positive factor `Pos(X)` of `X`.
pub fn shift_split<T: Real>(pos_x: &MatrixLoop<T>, y_positive: &MatrixLoop<T>) -> Result<M2<T>> {
    if y_positive.kmin() < 0 && y_positive.negative_tail() > lit(1e-10) {
        return Err(Error::Precondition("second factor is not holomorphic at λ = 0".into()));
    }
    let p = pos_x.coeff(0) * y_positive.coeff(0);
    let (u, _) = qr2(&p)?;
    Ok(u)
}

/// As above, when `Y(0)` is known directly.
pub fn shift_unitary<T: Real>(pos_x0: &M2<T>, y0: &M2<T>) -> Result<M2<T>> {
    Ok(qr2(&(*pos_x0 * *y0))?.0)
}

/// `sup ‖X − I‖` helper on sample vectors.
pub fn sup_dev<T: Real>(xs: &[M2<T>]) -> T {
    xs.iter().fold(T::zero(), |s, x| s.max((*x - M2::identity()).op_norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn c(re: f64, im: f64) -> C<f64> {
        cplx(re, im)
    }

    #[test]
    fn constant_loops_reduce_to_qr() {
        let m = M2::new(c(1.0, 0.5), c(0.2, 0.0), c(-0.3, 0.1), c(0.0, 0.0));
        let m = m.sl_normalize();
        let (u, t) = qr_constant(&m).unwrap();
        let pair = iwasawa(&MatrixLoop::constant(m), 0.5).unwrap();
        assert!((pair.unitary.at(c(0.7, 0.2)) - u).frob() < 1e-12);
        assert!((pair.positive.at(c(0.1, 0.2)) - t).frob() < 1e-12);
        let rot = M2::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        let (u, t) = qr_constant(&rot).unwrap();
        assert!((u - rot).frob() < 1e-15 && (t - M2::identity()).frob() < 1e-15);
    }

    #[test]
    fn identity_factorizes_trivially() {
        let pair = iwasawa(&MatrixLoop::<f64>::identity(), 0.5).unwrap();
        assert!((pair.unitary.at(c(0.3, 0.9)) - M2::identity()).frob() < 1e-15);
        assert!((pair.positive.at(c(0.3, 0.1)) - M2::identity()).frob() < 1e-15);
    }

    #[test]
    fn unipotent_loop_factorization_is_consistent() {
        // Φ = [[1, λ^{-1} + 0.3 λ], [0, 1]]
        let phi = MatrixLoop::from_terms(
            &[
                (0, M2::identity()),
                (-1, M2::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0))),
                (1, M2::new(c(0.0, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.0, 0.0))),
            ],
            0.6,
        );
        let pair = iwasawa(&phi, 0.6).unwrap();
        assert!(pair.residual < 1e-10);
        let u = pair.unitary.unitarity_residual(&[0.6, 1.0], 32);
        assert!(u < 1e-10, "unitarity {u}");
        let b0 = pair.positive.coeff(0);
        assert!(b0.c.norm() < 1e-12 && b0.a.re > 0.0 && b0.d.re > 0.0);
    }
}
