//! Small dense linear algebra: 2×2 complex matrices, a complex LU for the
//! factorization systems, and a few real helpers for rigid fitting.

use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::{lit, Real, C};

/// 2×2 complex matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct M2<T> {
    pub a: C<T>,
    pub b: C<T>,
    pub c: C<T>,
    pub d: C<T>,
}

impl<T: Real> M2<T> {
    #[inline]
    pub fn new(a: C<T>, b: C<T>, c: C<T>, d: C<T>) -> Self {
        M2 { a, b, c, d }
    }

    pub fn zero() -> Self {
        let z = C::zero();
        M2::new(z, z, z, z)
    }

    pub fn identity() -> Self {
        M2::new(C::one(), C::zero(), C::zero(), C::one())
    }

    pub fn scalar(s: C<T>) -> Self {
        M2::new(s, C::zero(), C::zero(), s)
    }

    pub fn diag(p: C<T>, q: C<T>) -> Self {
        M2::new(p, C::zero(), C::zero(), q)
    }

    /// Builds from row-major `[a, b, c, d]`.
    pub fn from_array(e: [C<T>; 4]) -> Self {
        M2::new(e[0], e[1], e[2], e[3])
    }

    pub fn to_array(&self) -> [C<T>; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> C<T> {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C<T> {
        self.a + self.d
    }

    pub fn adj(&self) -> Self {
        M2::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn inv(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() <= T::min_positive_value() || !finite(det) {
            return None;
        }
        Some(self.adj() * det.inv())
    }

    /// Conjugate transpose.
    pub fn h(&self) -> Self {
        M2::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    pub fn conj(&self) -> Self {
        M2::new(self.a.conj(), self.b.conj(), self.c.conj(), self.d.conj())
    }

    pub fn transpose(&self) -> Self {
        M2::new(self.a, self.c, self.b, self.d)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        M2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn scale_re(&self, s: T) -> Self {
        M2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn frob_sq(&self) -> T {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()
    }

    pub fn frob(&self) -> T {
        self.frob_sq().sqrt()
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> T {
        let f = self.frob_sq();
        let d = self.det().norm();
        let disc = (f * f - lit::<T>(4.0) * d * d).max(T::zero());
        ((f + disc.sqrt()) / lit(2.0)).max(T::zero()).sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.a.norm().max(self.b.norm()).max(self.c.norm()).max(self.d.norm())
    }

    pub fn is_finite(&self) -> bool {
        finite(self.a) && finite(self.b) && finite(self.c) && finite(self.d)
    }

    pub fn mul_vec(&self, v: [C<T>; 2]) -> [C<T>; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    /// Matrix exponential via `exp X = e^{t}(cosh μ + sinh(μ)/μ (X − t))`.
    pub fn exp(&self) -> Self {
        let half = lit::<T>(0.5);
        let t = self.trace() * half;
        let x0 = *self - M2::scalar(t);
        let mu2 = -x0.det();
        let (ch, shc) = cosh_sinhc(mu2);
        (M2::scalar(ch) + x0 * shc) * t.exp()
    }

    /// Square root of `det` used to project onto `SL(2)`.
    pub fn sl_normalize(&self) -> Self {
        let s = self.det().sqrt();
        *self * s.inv()
    }

    pub fn col(&self, j: usize) -> [C<T>; 2] {
        if j == 0 {
            [self.a, self.c]
        } else {
            [self.b, self.d]
        }
    }

    pub fn from_cols(c0: [C<T>; 2], c1: [C<T>; 2]) -> Self {
        M2::new(c0[0], c1[0], c0[1], c1[1])
    }
}

/// `(cosh μ, sinh μ / μ)` as functions of `μ²`; both are even in `μ`.
pub fn cosh_sinhc<T: Real>(mu2: C<T>) -> (C<T>, C<T>) {
    let mu = mu2.sqrt();
    if mu.norm() < lit(1e-3) {
        let one = C::<T>::one();
        let k = |x: f64| re_c(lit::<T>(x));
        let c = one + mu2 * (k(0.5) + mu2 * (k(1.0 / 24.0) + mu2 * k(1.0 / 720.0)));
        let s = one + mu2 * (k(1.0 / 6.0) + mu2 * (k(1.0 / 120.0) + mu2 * k(1.0 / 5040.0)));
        (c, s)
    } else {
        (mu.cosh(), mu.sinh() / mu)
    }
}

impl<T: Real> Add for M2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        M2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl<T: Real> Sub for M2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        M2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl<T: Real> Neg for M2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        M2::new(-self.a, -self.b, -self.c, -self.d)
    }
}

impl<T: Real> Mul for M2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        M2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl<T: Real> Mul<C<T>> for M2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: C<T>) -> Self {
        self.scale(s)
    }
}

impl<T: Real> AddAssign for M2<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for M2<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for M2<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular at pivot {0}")]
    Singular(usize),
    #[error("matrix is not positive definite")]
    NotPositive,
}

/// LU factorization with partial pivoting of a dense complex matrix stored column-major.
pub struct Lu<T> {
    n: usize,
    a: Vec<C<T>>,
    piv: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(mut a: Vec<C<T>>, n: usize) -> Result<Self, LinalgError> {
        assert_eq!(a.len(), n * n);
        let mut piv = vec![0; n];
        let scale = a.iter().fold(T::zero(), |m, z| m.max(z.l1_norm()));
        let tiny = scale * T::epsilon() * lit(1e-3);
        for k in 0..n {
            let col = &a[k * n..(k + 1) * n];
            let mut p = k;
            let mut best = col[k].l1_norm();
            for (i, z) in col.iter().enumerate().skip(k + 1) {
                let v = z.l1_norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best <= tiny || !best.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    a.swap(j * n + k, j * n + p);
                }
            }
            let inv = a[k * n + k].inv();
            for z in a[k * n + k + 1..(k + 1) * n].iter_mut() {
                *z = *z * inv;
            }
            let (left, right) = a.split_at_mut((k + 1) * n);
            let colk = &left[k * n..];
            for j in k + 1..n {
                let colj = &mut right[(j - k - 1) * n..(j - k) * n];
                let akj = colj[k];
                if akj.is_zero() {
                    continue;
                }
                for i in k + 1..n {
                    colj[i] = colj[i] - colk[i] * akj;
                }
            }
        }
        Ok(Lu { n, a, piv })
    }

    pub fn solve_in_place(&self, b: &mut [C<T>]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let bk = b[k];
            if bk.is_zero() {
                continue;
            }
            let col = &self.a[k * n..(k + 1) * n];
            for i in k + 1..n {
                b[i] = b[i] - col[i] * bk;
            }
        }
        for k in (0..n).rev() {
            let col = &self.a[k * n..(k + 1) * n];
            b[k] = b[k] / col[k];
            let bk = b[k];
            for i in 0..k {
                b[i] = b[i] - col[i] * bk;
            }
        }
    }
}

/// Upper-triangular `T` with positive diagonal and `Tᴴ T = I + Δ` for hermitian `Δ`,
/// returned as `T − I` so that small `Δ` keeps full relative precision.
pub fn chol_upper_delta<T: Real>(delta: &M2<T>) -> Result<M2<T>, LinalgError> {
    // Tᴴ T with T = [[t11, t12], [0, t22]]:
    //   t11² = 1 + δ11, conj(t11) t12 = δ12, |t12|² + t22² = 1 + δ22.
    let one = T::one();
    let d11 = delta.a.re;
    let d22 = delta.d.re;
    if one + d11 <= T::zero() {
        return Err(LinalgError::NotPositive);
    }
    let t11m1 = sqrt1pm1(d11);
    let t11 = one + t11m1;
    let t12 = delta.b / t11;
    let arg = d22 - t12.norm_sqr();
    if one + arg <= T::zero() {
        return Err(LinalgError::NotPositive);
    }
    let t22m1 = sqrt1pm1(arg);
    Ok(M2::new(re_c(t11m1), t12, C::zero(), re_c(t22m1)))
}

#[inline]
pub fn finite<T: Real>(z: C<T>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

fn re_c<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

/// `sqrt(1 + x) − 1` without cancellation.
pub fn sqrt1pm1<T: Real>(x: T) -> T {
    x / ((T::one() + x).sqrt() + T::one())
}

/// QR of an invertible constant matrix: `m = U T` with `U` unitary and `T` upper
/// triangular with positive diagonal.
pub fn qr2<T: Real>(m: &M2<T>) -> Result<(M2<T>, M2<T>), LinalgError> {
    let c0 = m.col(0);
    let n0 = (c0[0].norm_sqr() + c0[1].norm_sqr()).sqrt();
    if n0 <= T::min_positive_value() {
        return Err(LinalgError::Singular(0));
    }
    let q0 = [c0[0] / n0, c0[1] / n0];
    let c1 = m.col(1);
    let r01 = q0[0].conj() * c1[0] + q0[1].conj() * c1[1];
    let w = [c1[0] - q0[0] * r01, c1[1] - q0[1] * r01];
    let n1 = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    if n1 <= n0 * T::epsilon() {
        return Err(LinalgError::Singular(1));
    }
    let q1 = [w[0] / n1, w[1] / n1];
    let u = M2::from_cols(q0, q1);
    let t = M2::new(re_c(n0), r01, C::zero(), re_c(n1));
    Ok((u, t))
}

/// Cyclic Jacobi eigen-decomposition of a real symmetric matrix (row-major, n×n).
/// Returns eigenvalues and column eigenvectors (row-major `v[i*n + j]` = component i of vector j).
pub fn sym_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut a = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        let scale: T = (0..n).fold(T::zero(), |s, i| s + a[i * n + i].abs());
        if off == T::zero() || off.sqrt() <= T::epsilon() * lit(1e-2) * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (lit::<T>(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Solves a small dense real system by Gaussian elimination with partial pivoting.
pub fn solve_real<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Result<Vec<T>, LinalgError> {
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if a[p * n + k] == T::zero() {
            return Err(LinalgError::Singular(k));
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            for j in k..n {
                a[i * n + j] = a[i * n + j] - f * a[k * n + j];
            }
            b[i] = b[i] - f * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    Ok(b)
}

pub type V3<T> = [T; 3];
pub type M3<T> = [[T; 3]; 3];

pub fn v3_add<T: Real>(x: V3<T>, y: V3<T>) -> V3<T> {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

pub fn v3_sub<T: Real>(x: V3<T>, y: V3<T>) -> V3<T> {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
}

pub fn v3_scale<T: Real>(x: V3<T>, s: T) -> V3<T> {
    [x[0] * s, x[1] * s, x[2] * s]
}

pub fn v3_dot<T: Real>(x: V3<T>, y: V3<T>) -> T {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

pub fn v3_cross<T: Real>(x: V3<T>, y: V3<T>) -> V3<T> {
    [
        x[1] * y[2] - x[2] * y[1],
        x[2] * y[0] - x[0] * y[2],
        x[0] * y[1] - x[1] * y[0],
    ]
}

pub fn v3_norm<T: Real>(x: V3<T>) -> T {
    v3_dot(x, x).sqrt()
}

pub fn m3_apply<T: Real>(m: &M3<T>, x: V3<T>) -> V3<T> {
    [v3_dot(m[0], x), v3_dot(m[1], x), v3_dot(m[2], x)]
}

pub fn m3_mul<T: Real>(p: &M3<T>, q: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).fold(T::zero(), |s, k| s + p[i][k] * q[k][j]);
        }
    }
    out
}

pub fn m3_identity<T: Real>() -> M3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Rotation `exp([ω]×)` by Rodrigues' formula.
pub fn rotation_exp<T: Real>(w: V3<T>) -> M3<T> {
    let th2 = v3_dot(w, w);
    let th = th2.sqrt();
    let (a, b) = if th < lit(1e-4) {
        (
            T::one() - th2 / lit(6.0) + th2 * th2 / lit(120.0),
            lit::<T>(0.5) - th2 / lit(24.0) + th2 * th2 / lit(720.0),
        )
    } else {
        (th.sin() / th, (T::one() - th.cos()) / th2)
    };
    let k = [[T::zero(), -w[2], w[1]], [w[2], T::zero(), -w[0]], [-w[1], w[0], T::zero()]];
    let k2 = m3_mul(&k, &k);
    let mut r = m3_identity();
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = r[i][j] + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn c(re: f64, im: f64) -> C<f64> {
        cplx(re, im)
    }

    #[test]
    fn exp_of_diagonal_and_nilpotent() {
        let d = M2::diag(c(0.3, 0.1), c(-0.3, -0.1));
        let e = d.exp();
        assert!((e.a - c(0.3, 0.1).exp()).norm() < 1e-15);
        assert!((e.d - c(-0.3, -0.1).exp()).norm() < 1e-15);
        let n = M2::new(c(0.0, 0.0), c(2.0, 1.0), c(0.0, 0.0), c(0.0, 0.0));
        let en = n.exp();
        assert!((en - (M2::identity() + n)).frob() < 1e-15);
    }

    #[test]
    fn op_norm_matches_known_values() {
        let d = M2::diag(c(3.0, 0.0), c(1.0 / 3.0, 0.0));
        assert!((d.op_norm() - 3.0).abs() < 1e-14);
        let (u, _) = qr2(&M2::new(c(1.0, 2.0), c(0.5, 0.0), c(-1.0, 0.3), c(2.0, -1.0))).unwrap();
        assert!((u.op_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lu_solves_dense_system() {
        let n = 7;
        let a: Vec<C<f64>> = (0..n * n)
            .map(|k| {
                let h = |s: u64| ((s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407) >> 33) % 1000) as f64 / 500.0 - 1.0;
                c(h(k as u64), h(k as u64 + 1000))
            })
            .collect();
        let x: Vec<C<f64>> = (0..n).map(|i| c(i as f64, 1.0 - i as f64)).collect();
        let mut b = vec![C::zero(); n];
        for j in 0..n {
            for i in 0..n {
                b[i] += a[j * n + i] * x[j];
            }
        }
        let lu = Lu::factor(a, n).unwrap();
        lu.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn cholesky_delta_reconstructs() {
        let delta = M2::new(c(0.2, 0.0), c(0.1, -0.05), c(0.1, 0.05), c(-0.1, 0.0));
        let tm1 = chol_upper_delta(&delta).unwrap();
        let t = tm1 + M2::identity();
        let back = t.h() * t - M2::identity();
        assert!((back - delta).frob() < 1e-15);
    }

    #[test]
    fn jacobi_eigen_of_small_symmetric() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = sym_eigen(&a, 3);
        for j in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|k| a[i * 3 + k] * vecs[k * 3 + j]).sum();
                assert!((av - vals[j] * vecs[i * 3 + j]).abs() < 1e-12);
            }
        }
    }
}
