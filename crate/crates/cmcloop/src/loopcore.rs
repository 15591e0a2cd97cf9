//! Matrix loops: truncated Laurent series of 2×2 complex matrices in λ.

use num_complex::Complex;
use num_traits::Zero;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::M2;
use crate::scalar::{circle_points, lit, Real, C};

/// The open annulus `inner < |λ| < outer`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annulus<T> {
    pub inner: T,
    pub outer: T,
}

impl<T: Real> Annulus<T> {
    pub fn new(inner: T, outer: T) -> Result<Self> {
        if !(inner > T::zero() && inner < outer) {
            return Err(Error::Domain(format!("annulus needs 0 < inner < outer, got {inner} / {outer}")));
        }
        Ok(Annulus { inner, outer })
    }

    /// `A_{r, 1/r}` for `r < 1`.
    pub fn symmetric(r: T) -> Result<Self> {
        Self::new(r, r.recip())
    }

    pub fn contains(&self, lambda: C<T>) -> bool {
        let m = lambda.norm();
        m > self.inner && m < self.outer
    }

    pub fn inverted(&self) -> Self {
        Annulus { inner: self.outer.recip(), outer: self.inner.recip() }
    }
}

/// Where a sampled supremum is taken.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region<T> {
    Circle(T),
    /// Closed annulus sampled on `rings` concentric circles spaced geometrically.
    Annulus { inner: T, outer: T, rings: usize },
}

impl<T: Real> Region<T> {
    pub fn radii(&self) -> Vec<T> {
        match *self {
            Region::Circle(r) => vec![r],
            Region::Annulus { inner, outer, rings } => {
                let n = rings.max(2);
                let (li, lo) = (inner.ln(), outer.ln());
                (0..n)
                    .map(|k| (li + (lo - li) * T::from_usize(k).unwrap() / T::from_usize(n - 1).unwrap()).exp())
                    .collect()
            }
        }
    }

    pub fn points(&self, m: usize) -> Vec<C<T>> {
        self.radii().into_iter().flat_map(|r| circle_points(r, m)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopTag {
    General,
    Positive,
    Unitary,
}

/// Bandwidth and tolerance settings for loop arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct LoopConfig<T> {
    pub band: usize,
    pub samples: usize,
    pub tol: T,
    pub singular_tol: T,
}

impl<T: Real> Default for LoopConfig<T> {
    fn default() -> Self {
        LoopConfig { band: 64, samples: 256, tol: lit(1e-10), singular_tol: lit(1e-12) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixLoop<T> {
    kmin: i64,
    coeffs: Vec<M2<T>>,
    radius: T,
    annulus: Option<Annulus<T>>,
    samples_hint: usize,
    tag: LoopTag,
}

impl<T: Real> MatrixLoop<T> {
    /// Loop with Laurent coefficients `coeffs[j]` at index `kmin + j`.
    pub fn new(kmin: i64, coeffs: Vec<M2<T>>, radius: T) -> Self {
        let mut l = MatrixLoop { kmin, coeffs, radius, annulus: None, samples_hint: 256, tag: LoopTag::General };
        l.trim();
        l
    }

    pub fn constant(m: M2<T>) -> Self {
        Self::new(0, vec![m], T::one())
    }

    pub fn identity() -> Self {
        Self::constant(M2::identity())
    }

    pub fn monomial(k: i64, m: M2<T>) -> Self {
        Self::new(k, vec![m], T::one())
    }

    /// Builds a loop from the coefficient list `(k, X_k)`; repeated indices add up.
    pub fn from_terms(terms: &[(i64, M2<T>)], radius: T) -> Self {
        if terms.is_empty() {
            return Self::new(0, vec![M2::zero()], radius);
        }
        let kmin = terms.iter().map(|t| t.0).min().unwrap();
        let kmax = terms.iter().map(|t| t.0).max().unwrap();
        let mut coeffs = vec![M2::zero(); (kmax - kmin + 1) as usize];
        for (k, m) in terms {
            coeffs[(k - kmin) as usize] += *m;
        }
        Self::new(kmin, coeffs, radius)
    }

    pub fn with_annulus(mut self, a: Annulus<T>) -> Self {
        self.annulus = Some(a);
        self
    }

    pub fn with_tag(mut self, tag: LoopTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn with_radius(mut self, r: T) -> Self {
        self.radius = r;
        self
    }

    pub fn with_samples_hint(mut self, m: usize) -> Self {
        self.samples_hint = m;
        self
    }

    pub fn kmin(&self) -> i64 {
        self.kmin
    }

    pub fn kmax(&self) -> i64 {
        self.kmin + self.coeffs.len() as i64 - 1
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn annulus(&self) -> Option<Annulus<T>> {
        self.annulus
    }

    pub fn tag(&self) -> LoopTag {
        self.tag
    }

    pub fn samples_hint(&self) -> usize {
        self.samples_hint
    }

    pub fn coeffs(&self) -> &[M2<T>] {
        &self.coeffs
    }

    /// Coefficient at index `k` (zero outside the stored range).
    pub fn coeff(&self, k: i64) -> M2<T> {
        if k < self.kmin || k > self.kmax() {
            M2::zero()
        } else {
            self.coeffs[(k - self.kmin) as usize]
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, M2<T>)> + '_ {
        self.coeffs.iter().enumerate().map(move |(j, m)| (self.kmin + j as i64, *m))
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs.last().map_or(false, |m| m.max_abs().is_zero()) {
            self.coeffs.pop();
        }
        while self.coeffs.len() > 1 && self.coeffs[0].max_abs().is_zero() {
            self.coeffs.remove(0);
            self.kmin += 1;
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(M2::zero());
            self.kmin = 0;
        }
    }

    /// Drops coefficients whose contribution on the primary circle is below `tol`.
    pub fn truncated(&self, tol: T) -> Self {
        let r = self.radius;
        let mut out = self.clone();
        let keep = |k: i64, m: &M2<T>| m.max_abs() * r.powi(k as i32) > tol;
        let first = self.terms().position(|(k, m)| keep(k, &m));
        let last = self.terms().collect::<Vec<_>>().iter().rposition(|(k, m)| keep(*k, m));
        match (first, last) {
            (Some(f), Some(l)) => {
                out.coeffs = self.coeffs[f..=l].to_vec();
                out.kmin = self.kmin + f as i64;
            }
            _ => {
                out.coeffs = vec![M2::zero()];
                out.kmin = 0;
            }
        }
        out
    }

    /// Unchecked two-sided Horner evaluation.
    pub fn at(&self, lambda: C<T>) -> M2<T> {
        let kmax = self.kmax();
        let mut pos = M2::zero();
        if kmax >= 0 {
            for k in (self.kmin.max(0)..=kmax).rev() {
                pos = pos * lambda + self.coeff(k);
            }
            if self.kmin > 0 {
                pos = pos * lambda.powi(self.kmin as i32);
            }
        }
        let mut neg = M2::zero();
        if self.kmin < 0 {
            let li = lambda.inv();
            for k in self.kmin..=kmax.min(-1) {
                neg = (neg + self.coeff(k)) * li;
            }
            if kmax < -1 {
                neg = neg * li.powi((-kmax - 1) as i32);
            }
        }
        pos + neg
    }

    /// Evaluation with the pole check.
    pub fn eval(&self, lambda: C<T>) -> Result<M2<T>> {
        if lambda.is_zero() {
            if self.terms().any(|(k, m)| k < 0 && !m.max_abs().is_zero()) {
                return Err(Error::Pole);
            }
            return Ok(self.coeff(0));
        }
        Ok(self.at(lambda))
    }

    /// `θ`-derivative `∂/∂θ` with `λ = e^{iθ}`, i.e. `iλ d/dλ`.
    pub fn d_theta(&self) -> Self {
        let mut out = self.clone();
        for (j, m) in out.coeffs.iter_mut().enumerate() {
            let k = self.kmin + j as i64;
            *m = m.scale(Complex::new(T::zero(), T::from_i64(k).unwrap()));
        }
        out
    }

    /// `X*(λ) = conj(X(1/conj λ))ᵀ`.
    pub fn star(&self) -> Self {
        let coeffs: Vec<M2<T>> = self.coeffs.iter().rev().map(|m| m.h()).collect();
        let radius = if self.radius > T::zero() { self.radius.recip() } else { self.radius };
        MatrixLoop {
            kmin: -self.kmax(),
            coeffs,
            radius,
            annulus: self.annulus.map(|a| a.inverted()),
            samples_hint: self.samples_hint,
            tag: self.tag,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let kmin = self.kmin.min(other.kmin);
        let kmax = self.kmax().max(other.kmax());
        let coeffs = (kmin..=kmax).map(|k| self.coeff(k) + other.coeff(k)).collect();
        let mut out = MatrixLoop::new(kmin, coeffs, self.radius);
        out.samples_hint = self.samples_hint;
        out
    }

    pub fn scale(&self, s: C<T>) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|m| *m = m.scale(s));
        out
    }

    /// Product by coefficient convolution, truncated to `cfg.band` on each side.
    pub fn mul(&self, other: &Self, cfg: &LoopConfig<T>) -> Result<Self> {
        let kmin = self.kmin + other.kmin;
        let n = self.coeffs.len() + other.coeffs.len() - 1;
        let mut coeffs = vec![M2::zero(); n];
        for (i, x) in self.coeffs.iter().enumerate() {
            for (j, y) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += *x * *y;
            }
        }
        let full = MatrixLoop::new(kmin, coeffs, self.radius);
        full.band_limited(cfg)
    }

    /// Sample-wise inverse, resampled to `cfg.band`.
    pub fn inv(&self, cfg: &LoopConfig<T>) -> Result<Self> {
        let m = cfg.samples.max(self.samples_hint);
        let samples = self.samples(m);
        let mut inv = Vec::with_capacity(m);
        for s in &samples {
            let d = s.det();
            if d.norm() < cfg.singular_tol {
                return Err(Error::SingularLoop(d.norm().to_f64().unwrap_or(0.0)));
            }
            inv.push(s.adj() * d.inv());
        }
        let (out, resid) = Self::from_samples(&inv, self.radius, cfg.band.min(m / 2 - 1));
        if resid > cfg.tol {
            return Err(Error::Bandwidth(resid.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(out.with_samples_hint(m))
    }

    fn band_limited(self, cfg: &LoopConfig<T>) -> Result<Self> {
        let band = cfg.band as i64;
        let r = self.radius;
        let mut resid = T::zero();
        for (k, m) in self.terms() {
            if k < -band || k > band {
                resid = resid + m.max_abs() * r.powi(k as i32);
            }
        }
        if resid > cfg.tol {
            return Err(Error::Bandwidth(resid.to_f64().unwrap_or(f64::NAN)));
        }
        let lo = self.kmin.max(-band);
        let hi = self.kmax().min(band);
        let coeffs = (lo..=hi).map(|k| self.coeff(k)).collect();
        let mut out = MatrixLoop::new(lo, coeffs, self.radius);
        out.samples_hint = self.samples_hint;
        Ok(out)
    }

    /// Values at `m` equispaced points of the primary circle.
    pub fn samples(&self, m: usize) -> Vec<M2<T>> {
        self.samples_on(self.radius, m)
    }

    /// Values at `m` equispaced points of the circle `|λ| = r` (angles `2πj/m`).
    pub fn samples_on(&self, r: T, m: usize) -> Vec<M2<T>> {
        let mut modes = vec![M2::zero(); m];
        let mi = m as i64;
        for (k, c) in self.terms() {
            let idx = k.rem_euclid(mi) as usize;
            modes[idx] += c.scale_re(r.powi(k as i32));
        }
        modes_to_samples(&modes)
    }

    /// Fits `band` coefficients on each side from samples on the circle `|λ| = r`.
    /// Returns the loop and the largest discarded scaled mode.
    pub fn from_samples(samples: &[M2<T>], r: T, band: usize) -> (Self, T) {
        let m = samples.len();
        assert!(2 * band < m, "band {band} too large for {m} samples");
        let modes = samples_to_modes(samples);
        let b = band as i64;
        let mut resid = T::zero();
        let mut coeffs = Vec::with_capacity(2 * band + 1);
        for k in -(m as i64) / 2..(m as i64 + 1) / 2 {
            let mode = modes[k.rem_euclid(m as i64) as usize];
            if k < -b || k > b {
                resid = resid.max(mode.max_abs());
            } else {
                coeffs.push(rescale(mode, r, -k));
            }
        }
        let mut l = MatrixLoop::new(-b, coeffs, r);
        l.samples_hint = m;
        (l, resid)
    }

    /// Loop analytic on `A_{r,1/r}` from samples on `C_r` and on `C_{1/r}` at the same angles.
    /// Negative modes are read on the inner circle and non-negative ones on the outer.
    pub fn from_two_circles(inner: &[M2<T>], outer: &[M2<T>], r: T, band: usize) -> (Self, T) {
        let m = inner.len();
        assert_eq!(m, outer.len());
        assert!(2 * band < m);
        let mi = samples_to_modes(inner);
        let mo = samples_to_modes(outer);
        let b = band as i64;
        let ri = r.recip();
        let mut coeffs = Vec::with_capacity(2 * band + 1);
        let mut resid = T::zero();
        for k in -(m as i64) / 2..(m as i64 + 1) / 2 {
            let idx = k.rem_euclid(m as i64) as usize;
            let tail = if k < 0 { mi[idx] } else { mo[idx] };
            if k < -b || k > b {
                resid = resid.max(tail.max_abs());
                continue;
            }
            coeffs.push(if k < 0 { rescale(mi[idx], r, -k) } else { rescale(mo[idx], ri, -k) });
        }
        let mut l = MatrixLoop::new(-b, coeffs, r);
        l.samples_hint = m;
        (l, resid)
    }

    /// Sampled supremum of the operator norm.
    pub fn sup_norm(&self, region: &Region<T>) -> T {
        region
            .radii()
            .into_iter()
            .flat_map(|r| self.samples_on(r, self.samples_hint))
            .fold(T::zero(), |m, x| m.max(x.op_norm()))
    }

    /// Largest scaled negative coefficient on the primary circle.
    pub fn negative_tail(&self) -> T {
        self.terms()
            .filter(|(k, _)| *k < 0)
            .fold(T::zero(), |m, (k, c)| m.max(c.max_abs() * self.radius.powi(k as i32)))
    }

    /// `sup ‖X*(λ) X(λ) − I‖` over the given radii.
    pub fn unitarity_residual(&self, radii: &[T], m: usize) -> T {
        let mut worst = T::zero();
        for &r in radii {
            for lam in circle_points(r, m) {
                let x = self.at(lam);
                let xs = self.at(Complex::new(T::one(), T::zero()) / lam.conj()).h();
                worst = worst.max((xs * x - M2::identity()).op_norm());
            }
        }
        worst
    }
}

/// Sample-wise product of two sampled loops.
/// `mode·r^k`, dropped when it overflows: such a mode is rounding noise that only
/// matters off the sampling circle, where the fit is meaningless anyway.
pub(crate) fn rescale<T: Real>(mode: M2<T>, r: T, k: i64) -> M2<T> {
    let c = mode.scale_re(r.powi(k as i32));
    if c.is_finite() {
        c
    } else {
        M2::zero()
    }
}

pub fn mul_samples<T: Real>(x: &[M2<T>], y: &[M2<T>]) -> Vec<M2<T>> {
    x.iter().zip(y).map(|(a, b)| *a * *b).collect()
}

/// Forward DFT per entry: `mode[k] = (1/m) Σ_j s_j e^{−2πijk/m}`.
pub fn samples_to_modes<T: Real>(samples: &[M2<T>]) -> Vec<M2<T>> {
    transform(samples, false)
}

/// Inverse of [`samples_to_modes`].
pub fn modes_to_samples<T: Real>(modes: &[M2<T>]) -> Vec<M2<T>> {
    transform(modes, true)
}

fn transform<T: Real>(input: &[M2<T>], inverse: bool) -> Vec<M2<T>> {
    let m = input.len();
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    let mut buf: Vec<C<T>> = Vec::with_capacity(4 * m);
    for e in 0..4 {
        buf.extend(input.iter().map(|x| x.to_array()[e]));
    }
    let mut scratch = vec![C::zero(); fft.get_inplace_scratch_len()];
    for chunk in buf.chunks_mut(m) {
        fft.process_with_scratch(chunk, &mut scratch);
    }
    let scale = if inverse { T::one() } else { T::from_usize(m).unwrap().recip() };
    (0..m)
        .map(|j| M2::new(buf[j] * scale, buf[m + j] * scale, buf[2 * m + j] * scale, buf[3 * m + j] * scale))
        .collect()
}

/// Scalar version of [`samples_to_modes`].
pub fn scalar_modes<T: Real>(samples: &[C<T>]) -> Vec<C<T>> {
    let m = samples.len();
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(m);
    let mut buf = samples.to_vec();
    fft.process(&mut buf);
    let s = T::from_usize(m).unwrap().recip();
    buf.iter_mut().for_each(|z| *z = *z * s);
    buf
}

/// Scalar version of [`modes_to_samples`].
pub fn scalar_samples<T: Real>(modes: &[C<T>]) -> Vec<C<T>> {
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_inverse(modes.len());
    let mut buf = modes.to_vec();
    fft.process(&mut buf);
    buf
}

/// Signed frequency of DFT bin `j` out of `m`.
#[inline]
pub fn freq(j: usize, m: usize) -> i64 {
    if j < (m + 1) / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn c(re: f64, im: f64) -> C<f64> {
        cplx(re, im)
    }

    fn sample_loop() -> MatrixLoop<f64> {
        MatrixLoop::from_terms(
            &[
                (-2, M2::new(c(0.1, 0.2), c(0.0, -0.3), c(0.05, 0.0), c(0.2, 0.1))),
                (0, M2::new(c(1.0, 0.0), c(0.5, 0.5), c(-0.2, 0.1), c(0.7, 0.0))),
                (3, M2::new(c(0.0, 0.1), c(0.3, 0.0), c(0.0, 0.0), c(-0.1, 0.4))),
            ],
            1.0,
        )
    }

    #[test]
    fn monomial_evaluation() {
        let e12 = M2::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let l = MatrixLoop::monomial(-1, e12);
        let v = l.eval(c(2.0, 0.0)).unwrap();
        assert!((v.b - c(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(l.eval(c(0.0, 0.0)), Err(Error::Pole));
        let id = MatrixLoop::<f64>::identity();
        assert_eq!(id.eval(c(0.5, 0.0)).unwrap(), M2::identity());
    }

    #[test]
    fn horner_matches_direct_sum() {
        let l = sample_loop();
        let lam = c(0.6, -0.3);
        let direct = l.terms().fold(M2::zero(), |s, (k, m)| s + m * lam.powi(k as i32));
        assert!((l.at(lam) - direct).frob() < 1e-14);
    }

    #[test]
    fn star_is_an_involution_and_reverses_products() {
        let x = sample_loop();
        assert_eq!(x.star().star(), x);
        let y = x.d_theta().add(&MatrixLoop::identity());
        let cfg = LoopConfig::default();
        let lhs = x.mul(&y, &cfg).unwrap().star();
        let rhs = y.star().mul(&x.star(), &cfg).unwrap();
        for lam in circle_points(0.8, 16) {
            assert!((lhs.at(lam) - rhs.at(lam)).frob() < 1e-12);
        }
    }

    #[test]
    fn dft_round_trip() {
        let l = sample_loop();
        let s = l.samples_on(0.7, 64);
        let (back, resid) = MatrixLoop::from_samples(&s, 0.7, 20);
        assert!(resid < 1e-14);
        for lam in circle_points(0.9, 7) {
            assert!((back.at(lam) - l.at(lam)).frob() < 1e-12);
        }
        let s2 = back.samples_on(0.7, 64);
        for (p, q) in s.iter().zip(&s2) {
            assert!((*p - *q).frob() < 1e-12);
        }
    }

    #[test]
    fn inverse_times_loop_is_identity() {
        let x = sample_loop().add(&MatrixLoop::constant(M2::scalar(c(2.0, 0.0))));
        let cfg = LoopConfig { band: 120, samples: 512, ..LoopConfig::default() };
        let xi = x.inv(&cfg).unwrap();
        let prod = x.mul(&xi, &LoopConfig { band: 200, ..cfg }).unwrap();
        for s in prod.samples(64) {
            assert!((s - M2::identity()).frob() < 1e-10);
        }
    }

    #[test]
    fn two_circle_fit_recovers_laurent_polynomial() {
        let l = sample_loop();
        let r = 0.5;
        let inner = l.samples_on(r, 64);
        let outer = l.samples_on(1.0 / r, 64);
        let (back, _) = MatrixLoop::from_two_circles(&inner, &outer, r, 20);
        for (k, m) in l.terms() {
            assert!((back.coeff(k) - m).frob() < 1e-12);
        }
    }
}
