//! Delaunay residues, their profile function, the closed-form factorization of
//! `exp((x+iy)A)` and the growth exponent `τ`.

use std::io::Write;

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Lambda, Result};
use crate::linalg::{cosh_sinhc, M2};
use crate::loopcore::{scalar_modes, scalar_samples, MatrixLoop};
use crate::ode::{integrate, OdeOptions};
use crate::scalar::{cis, lit, re, sqrt_re_pos, to_f64, Real, C};

/// The residue `A(λ) = [[c, aλ⁻¹ + b̄], [b + āλ, −c]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelaunayResidue<T> {
    pub a: C<T>,
    pub b: C<T>,
    pub c: T,
}

impl<T: Real> DelaunayResidue<T> {
    pub fn new(a: C<T>, b: C<T>, c: T) -> Result<Self> {
        if a.norm() == T::zero() || b.norm() == T::zero() {
            return Err(Error::InvalidResidue("a and b must be nonzero".into()));
        }
        if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite() && c.is_finite()) {
            return Err(Error::InvalidResidue("non-finite coefficient".into()));
        }
        Ok(DelaunayResidue { a, b, c })
    }

    /// `|a|² + |b|² + c²`.
    pub fn k_const(&self) -> T {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c * self.c
    }

    pub fn is_vacuum(&self, tol: T) -> bool {
        (self.a.norm() - self.b.norm()).abs() <= tol && self.c.abs() <= tol
    }

    /// Unchecked evaluation.
    pub fn at(&self, lambda: C<T>) -> M2<T> {
        M2::new(
            re(self.c),
            self.a / lambda + self.b.conj(),
            self.b + self.a.conj() * lambda,
            re(-self.c),
        )
    }

    pub fn matrix(&self, lambda: C<T>) -> Result<M2<T>> {
        if lambda.is_zero() {
            return Err(Error::Pole);
        }
        Ok(self.at(lambda))
    }

    /// `λ A(λ)`, a polynomial in `λ`.
    pub fn lambda_times(&self, lambda: C<T>) -> M2<T> {
        M2::new(
            re(self.c) * lambda,
            self.a + self.b.conj() * lambda,
            (self.b + self.a.conj() * lambda) * lambda,
            re(-self.c) * lambda,
        )
    }

    pub fn mu_sq(&self, lambda: C<T>) -> C<T> {
        re(self.c * self.c) + (self.a / lambda + self.b.conj()) * (self.b + self.a.conj() * lambda)
    }

    /// Eigenvalue with `Re μ ≥ 0`.
    pub fn mu(&self, lambda: C<T>) -> C<T> {
        sqrt_re_pos(self.mu_sq(lambda))
    }

    pub fn as_loop(&self) -> MatrixLoop<T> {
        let z = C::zero();
        MatrixLoop::from_terms(
            &[
                (-1, M2::new(z, self.a, z, z)),
                (0, M2::new(re(self.c), self.b.conj(), self.b, re(-self.c))),
                (1, M2::new(z, z, self.a.conj(), z)),
            ],
            T::one(),
        )
    }

    /// Reads a residue back from a loop, requiring the exact Delaunay pattern.
    pub fn from_loop(l: &MatrixLoop<T>, tol: T) -> Result<Self> {
        let scale = l.terms().fold(T::zero(), |s, (_, m)| s.max(m.max_abs())).max(T::one());
        let t = tol * scale;
        for (k, m) in l.terms() {
            if !(-1..=1).contains(&k) && m.max_abs() > t {
                return Err(Error::InvalidResidue(format!("coefficient at λ^{k} of size {}", to_f64(m.max_abs()))));
            }
        }
        let m1 = l.coeff(-1);
        let m0 = l.coeff(0);
        let p1 = l.coeff(1);
        let bad = [m1.a, m1.c, m1.d, p1.a, p1.b, p1.d].iter().fold(T::zero(), |s, z| s.max(z.norm()));
        let a = m1.b;
        let b = m0.c;
        let cc = m0.a;
        let sym = (p1.c - a.conj()).norm().max((m0.b - b.conj()).norm()).max(cc.im.abs()).max((m0.d + cc).norm());
        if bad > t || sym > t {
            return Err(Error::InvalidResidue(format!(
                "pattern mismatch {:.3e}, symmetry mismatch {:.3e}",
                to_f64(bad),
                to_f64(sym)
            )));
        }
        Self::new(a, b, cc.re)
    }

    pub fn spectral_data(&self, inner: T, outer: T, max_order: usize) -> SpectralData<T> {
        SpectralData::new(self, inner, outer, max_order)
    }
}

/// A point where `μ = k/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonancePoint<T> {
    pub lambda: C<T>,
    pub k: usize,
    pub double: bool,
}

/// Zeros of `det A`, the singular ray and resonance points.
///
/// `det A = 0` on `λ ∈ {ν₁, ν₂}`; both lie on the ray through the unit complex `p`.
/// The closed segment between them is the set where the closed-form factorization
/// breaks down, and the rest of the ray is where `τ` vanishes.
#[derive(Clone, Debug)]
pub struct SpectralData<T> {
    pub nu1: C<T>,
    pub nu2: C<T>,
    pub p: C<T>,
    pub alpha: C<T>,
    pub resonance_points: Vec<ResonancePoint<T>>,
}

impl<T: Real> SpectralData<T> {
    fn new(res: &DelaunayResidue<T>, inner: T, outer: T, max_order: usize) -> Self {
        let q = res.a.conj() * res.b.conj();
        let ab = res.a * res.b;
        let kk = res.k_const();
        let roots = |mid: T| quadratic(q, re(mid), ab);
        let (r1, r2) = roots(kk);
        let (nu1, nu2) = if r1.norm() <= r2.norm() { (r1, r2) } else { (r2, r1) };
        let p = nu1 / nu1.norm();
        let mut resonance_points = Vec::new();
        for k in 1..=max_order {
            let kf = T::from_usize(k).unwrap();
            let mid = kk - kf * kf / lit(4.0);
            let (x1, x2) = roots(mid);
            let disc = mid * mid - lit::<T>(4.0) * ab.norm_sqr();
            let double = disc.abs() <= lit::<T>(1e-12) * mid.abs().max(ab.norm());
            for (i, x) in [x1, x2].into_iter().enumerate() {
                if double && i == 1 {
                    continue;
                }
                let m = x.norm();
                if m >= inner && m <= outer {
                    resonance_points.push(ResonancePoint { lambda: x, k, double });
                }
            }
        }
        SpectralData { nu1, nu2, p, alpha: -p, resonance_points }
    }

    /// Distance from `λ` to the closed segment `[ν₁, ν₂]`.
    pub fn dist_to_segment(&self, lambda: C<T>) -> T {
        seg_dist(lambda, self.nu1, self.nu2)
    }

    /// Whether `λ` lies on the ray through `p` but outside `[ν₁, ν₂]`, within `tol`.
    pub fn on_zero_ray(&self, lambda: C<T>, tol: T) -> bool {
        let t = (lambda * self.p.conj()).re;
        let off = (lambda * self.p.conj()).im.abs();
        off <= tol && t > T::zero() && (t < self.nu1.norm() - tol || t > self.nu2.norm() + tol)
    }
}

fn seg_dist<T: Real>(z: C<T>, a: C<T>, b: C<T>) -> T {
    let d = b - a;
    let l2 = d.norm_sqr();
    if l2 == T::zero() {
        return (z - a).norm();
    }
    let t = ((z - a) * d.conj()).re / l2;
    let t = t.max(T::zero()).min(T::one());
    (z - (a + d * t)).norm()
}

/// Roots of `q x² + m x + c0` using the cancellation-free form.
fn quadratic<T: Real>(q: C<T>, m: C<T>, c0: C<T>) -> (C<T>, C<T>) {
    let disc = (m * m - q * c0 * lit::<T>(4.0)).sqrt();
    let s = if (m.conj() * disc).re >= T::zero() { m + disc } else { m - disc };
    let x1 = -s / (q * lit::<T>(2.0));
    let x2 = if s.is_zero() { x1 } else { -(c0 * lit::<T>(2.0)) / s };
    (x1, x2)
}

/// The periodic profile `v` with `(v')² = −v⁴ + 4Kv² − 16|ab|²`, `v(0) = 2|b|`.
#[derive(Clone, Debug)]
pub struct DelaunayProfile<T> {
    pub rho: T,
    pub vacuum: bool,
    pub vmin: T,
    pub vmax: T,
    /// Period from the complete elliptic integral.
    pub rho_quadrature: T,
    /// Period from turning points of the integrated ODE.
    pub rho_ode: T,
    /// Largest first-integral violation over the table.
    pub ode_residual: T,
    k: T,
    v0: T,
    v: Vec<T>,
    vhat: Vec<C<T>>,
    dvhat: Vec<C<T>>,
}

/// Arithmetic–geometric mean.
pub fn agm<T: Real>(mut a: T, mut b: T) -> T {
    for _ in 0..64 {
        let an = (a + b) / lit(2.0);
        let bn = (a * b).sqrt();
        if (an - bn).abs() <= an * T::epsilon() {
            return an;
        }
        a = an;
        b = bn;
    }
    a
}

impl<T: Real> DelaunayProfile<T> {
    pub fn new(res: &DelaunayResidue<T>) -> Result<Self> {
        let k = res.k_const();
        let ab = (res.a * res.b).norm();
        let v0 = lit::<T>(2.0) * res.b.norm();
        let disc = k * k - lit::<T>(4.0) * ab * ab;
        if disc < -(k * k * lit(1e-14)) {
            return Err(Error::InvalidResidue("profile quartic has no positive root interval".into()));
        }
        let sd = disc.max(T::zero()).sqrt();
        let two = lit::<T>(2.0);
        let vmax = (two * k + two * sd).sqrt();
        let vmin = (two * k - two * sd).max(T::zero()).sqrt();
        if vmin <= T::zero() {
            return Err(Error::InvalidResidue("profile touches zero".into()));
        }
        let rho_quadrature = T::PI() / agm(vmax, vmin);
        let vacuum = res.is_vacuum(lit(1e-14)) || (vmax - vmin) <= vmax * lit(1e-12);
        if vacuum {
            let n = 16;
            let v = vec![v0; n];
            let mut vhat = vec![C::zero(); n];
            vhat[0] = re(v0);
            return Ok(DelaunayProfile {
                rho: rho_quadrature,
                vacuum: true,
                vmin,
                vmax,
                rho_quadrature,
                rho_ode: rho_quadrature,
                ode_residual: T::zero(),
                k,
                v0,
                v,
                vhat,
                dvhat: vec![C::zero(); n],
            });
        }
        let dv0 = -lit::<T>(4.0) * res.c * res.b.norm();
        let rho = rho_quadrature;
        let rho_ode = turning_period(k, v0, dv0, rho)?;
        if (rho_ode - rho).abs() > rho * lit(1e-8) {
            return Err(Error::Inconsistent(format!(
                "profile period mismatch: integral {} vs ODE {}",
                to_f64(rho),
                to_f64(rho_ode)
            )));
        }
        let mut n = 256;
        loop {
            let (v, dv) = tabulate(k, v0, dv0, rho, n)?;
            let vhat = scalar_modes(&v.iter().map(|&x| re(x)).collect::<Vec<_>>());
            let dvhat = scalar_modes(&dv.iter().map(|&x| re(x)).collect::<Vec<_>>());
            let tail = (n / 4..3 * n / 4).fold(T::zero(), |s, j| s.max(vhat[j].norm()));
            if tail <= vhat[0].norm() * lit(1e-15) || n >= 1 << 15 {
                let ode_residual = v.iter().zip(&dv).fold(T::zero(), |s, (&x, &d)| {
                    s.max((d * d + x * x * x * x - lit::<T>(4.0) * k * x * x + lit::<T>(16.0) * ab * ab).abs())
                });
                return Ok(DelaunayProfile {
                    rho,
                    vacuum: false,
                    vmin,
                    vmax,
                    rho_quadrature,
                    rho_ode,
                    ode_residual,
                    k,
                    v0,
                    v,
                    vhat,
                    dvhat,
                });
            }
            n *= 2;
        }
    }

    pub fn v0(&self) -> T {
        self.v0
    }

    pub fn table_len(&self) -> usize {
        self.v.len()
    }

    /// `v(t)` from the trigonometric interpolant.
    pub fn v(&self, t: T) -> T {
        if self.vacuum {
            return self.v0;
        }
        fourier_eval(&self.vhat, self.rho, t)
    }

    pub fn dv(&self, t: T) -> T {
        if self.vacuum {
            return T::zero();
        }
        fourier_eval(&self.dvhat, self.rho, t)
    }

    /// `v` at `n` equispaced points of `[0, ρ)`; `n` a power of two.
    pub fn v_samples(&self, n: usize) -> Vec<T> {
        let nv = self.v.len();
        if self.vacuum {
            return vec![self.v0; n];
        }
        if n <= nv {
            let step = nv / n;
            return (0..n).map(|j| self.v[j * step]).collect();
        }
        let mut modes = vec![C::zero(); n];
        for j in 0..nv {
            let k = crate::loopcore::freq(j, nv);
            if 2 * k.unsigned_abs() as usize == nv {
                continue;
            }
            modes[k.rem_euclid(n as i64) as usize] = self.vhat[j];
        }
        scalar_samples(&modes).iter().map(|z| z.re).collect()
    }

    /// Right-hand side `v'' = −2v³ + 4Kv`.
    pub fn accel(&self, v: T) -> T {
        -lit::<T>(2.0) * v * v * v + lit::<T>(4.0) * self.k * v
    }
}

fn fourier_eval<T: Real>(modes: &[C<T>], period: T, t: T) -> T {
    let n = modes.len();
    let two_pi = T::PI() + T::PI();
    let theta = two_pi * t / period;
    let mut s = modes[0].re;
    let step = cis(theta);
    let mut e = step;
    for k in 1..n / 2 {
        // Real signal: the k and −k terms are conjugate.
        s = s + lit::<T>(2.0) * (modes[k] * e).re;
        e = e * step;
        if k % 64 == 0 {
            e = cis(theta * T::from_usize(k + 1).unwrap());
        }
    }
    s
}

fn profile_rhs<T: Real>(k: T) -> impl FnMut(T, &[C<T>], &mut [C<T>]) {
    move |_t, y, dy| {
        let v = y[0].re;
        dy[0] = y[1];
        dy[1] = re(-lit::<T>(2.0) * v * v * v + lit::<T>(4.0) * k * v);
    }
}

fn profile_opts<T: Real>() -> OdeOptions<T> {
    OdeOptions { rtol: lit(1e-13), atol: lit(1e-15), ..OdeOptions::default() }
}

fn tabulate<T: Real>(k: T, v0: T, dv0: T, rho: T, n: usize) -> Result<(Vec<T>, Vec<T>)> {
    let mut y = vec![re(v0), re(dv0)];
    let mut v = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let h = rho / T::from_usize(n).unwrap();
    let opts = OdeOptions { h0: h, ..profile_opts() };
    for j in 0..n {
        v.push(y[0].re);
        dv.push(y[1].re);
        let t0 = h * T::from_usize(j).unwrap();
        integrate(profile_rhs(k), t0, t0 + h, &mut y, &opts, |_, _| {})?;
    }
    Ok((v, dv))
}

/// Period from two consecutive zeros of `v'` of the integrated ODE.
fn turning_period<T: Real>(k: T, v0: T, dv0: T, rho_guess: T) -> Result<T> {
    let mut traj: Vec<(T, T, T)> = vec![(T::zero(), v0, dv0)];
    let mut y = vec![re(v0), re(dv0)];
    integrate(profile_rhs(k), T::zero(), rho_guess * lit(1.3), &mut y, &profile_opts(), |t, s| {
        traj.push((t, s[0].re, s[1].re))
    })?;
    let mut turns = Vec::new();
    for w in traj.windows(2) {
        let (ta, va, da) = w[0];
        let (_, _, db) = w[1];
        if da * db < T::zero() {
            // Newton on v' = 0 restarting from the left end of the step.
            let mut t = ta + (w[1].0 - ta) * da / (da - db);
            for _ in 0..4 {
                let mut s = vec![re(va), re(da)];
                integrate(profile_rhs(k), ta, t, &mut s, &profile_opts(), |_, _| {})?;
                let acc = -lit::<T>(2.0) * s[0].re.powi(3) + lit::<T>(4.0) * k * s[0].re;
                t = t - s[1].re / acc;
            }
            turns.push(t);
        }
    }
    if turns.len() < 2 {
        return Err(Error::Inconsistent("profile ODE did not reach two turning points".into()));
    }
    Ok(lit::<T>(2.0) * (turns[1] - turns[0]))
}

/// Spectral representation of `ψ(·, λ)` for a fixed `λ`.
#[derive(Clone, Debug)]
pub struct PsiTable<T> {
    pub lambda: C<T>,
    pub sigma: C<T>,
    /// Relative size of the discarded Fourier tail of the integrand.
    pub err_est: T,
    rho: T,
    modes: Vec<C<T>>,
}

impl<T: Real> PsiTable<T> {
    pub fn new(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>, lambda: C<T>) -> Result<Self> {
        let w = res.a.conj() * res.b.conj() * lambda * lit::<T>(4.0);
        if w.is_zero() {
            return Ok(PsiTable { lambda, sigma: C::zero(), err_est: T::zero(), rho: profile.rho, modes: vec![C::zero()] });
        }
        let two = lit::<T>(2.0);
        Self::from_integrand(profile, lambda, |v| {
            let den = w + re(v * v);
            if den.norm() < lit::<T>(1e-13) * (w.norm() + v * v) {
                None
            } else {
                Some(w * two / den)
            }
        })
    }

    /// Table of `x ↦ lim_{λ→0} ψ(x, λ)/λ = 8āb̄ ∫₀ˣ v⁻²`.
    pub fn slope_at_zero(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>) -> Result<Self> {
        let q = res.a.conj() * res.b.conj() * lit::<T>(8.0);
        Self::from_integrand(profile, C::zero(), |v| Some(q / (v * v)))
    }

    fn from_integrand<G: Fn(T) -> Option<C<T>>>(profile: &DelaunayProfile<T>, lambda: C<T>, g: G) -> Result<Self> {
        let mut n = 64usize;
        let max_n = 1usize << 16;
        loop {
            let mut jv = Vec::with_capacity(n);
            for x in profile.v_samples(n) {
                jv.push(g(x).ok_or(Error::NearSingular(Lambda::from(lambda)))?);
            }
            let modes = scalar_modes(&jv);
            let peak = modes.iter().fold(T::zero(), |s, z| s.max(z.norm()));
            let tail = (3 * n / 8..5 * n / 8).fold(T::zero(), |s, j| s.max(modes[j].norm()));
            let err_est = tail / peak.max(T::min_positive_value());
            if err_est < lit(1e-15) || n >= max_n {
                if err_est > lit(1e-8) {
                    return Err(Error::NearSingular(Lambda::from(lambda)));
                }
                let sigma = modes[0] * profile.rho;
                return Ok(PsiTable { lambda, sigma, err_est, rho: profile.rho, modes });
            }
            n *= 2;
        }
    }

    pub fn eval(&self, x: T) -> C<T> {
        let n = self.modes.len();
        let mut s = self.sigma * (x / self.rho);
        if n == 1 {
            return s;
        }
        let two_pi = T::PI() + T::PI();
        let theta = two_pi * x / self.rho;
        let step = cis(theta);
        let mut e = step;
        let mut ei = step.conj();
        for k in 1..n / 2 {
            let kf = T::from_usize(k).unwrap();
            let f = self.rho / (two_pi * kf);
            // k and −k terms: Ĵ_k ρ/(2πik)(e^{ikθ} − 1) + Ĵ_{−k} ρ/(−2πik)(e^{−ikθ} − 1)
            let tp = self.modes[k] * (e - C::one());
            let tm = self.modes[n - k] * (ei - C::one());
            s = s + (tp - tm) * Complex::new(T::zero(), -f);
            e = e * step;
            ei = ei * step.conj();
            if k % 64 == 0 {
                e = cis(theta * (kf + T::one()));
                ei = e.conj();
            }
        }
        s
    }
}

/// `ψ(x, λ)`.
pub fn psi<T: Real>(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>, x: T, lambda: C<T>) -> Result<C<T>> {
    Ok(PsiTable::new(res, profile, lambda)?.eval(x))
}

/// `σ(λ) = ψ(ρ, λ)`.
pub fn sigma<T: Real>(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>, lambda: C<T>) -> Result<C<T>> {
    Ok(PsiTable::new(res, profile, lambda)?.sigma)
}

/// Closed-form unitary and positive factors of `exp((x+iy)A)` at one fixed `λ`.
#[derive(Clone, Debug)]
pub struct ClosedForm<'a, T> {
    res: DelaunayResidue<T>,
    profile: &'a DelaunayProfile<T>,
    pub lambda: C<T>,
    pub table: PsiTable<T>,
    a_mat: M2<T>,
    w: C<T>,
    hu: C<T>,
    s11_0: C<T>,
    /// At `λ = 0` the product `ψA` keeps a finite upper-right limit.
    zero_slope: Option<PsiTable<T>>,
}

impl<'a, T: Real> ClosedForm<'a, T> {
    pub fn new(res: &DelaunayResidue<T>, profile: &'a DelaunayProfile<T>, lambda: C<T>) -> Result<Self> {
        let sd = res.spectral_data(T::zero(), T::zero(), 0);
        let tol = lit::<T>(1e-10) * (T::one() + sd.nu2.norm());
        if sd.dist_to_segment(lambda) <= tol {
            return Err(Error::NearSingular(Lambda::from(lambda)));
        }
        let table = PsiTable::new(res, profile, lambda)?;
        let w = res.a.conj() * res.b.conj() * lambda * lit::<T>(4.0);
        let hu = (res.b / res.b.norm()).sqrt();
        let v0 = profile.v0();
        let s11_0 = (re(v0 * v0) + w) * hu;
        let (a_mat, zero_slope) = if lambda.is_zero() {
            (M2::zero(), Some(PsiTable::slope_at_zero(res, profile)?))
        } else {
            (res.at(lambda), None)
        };
        Ok(ClosedForm { res: *res, profile, lambda, table, a_mat, w, hu, s11_0, zero_slope })
    }

    /// The periodic factor `S(x)` with `S(0) = I`.
    pub fn s(&self, x: T) -> M2<T> {
        let v = self.profile.v(x);
        let dv = self.profile.dv(x);
        let v0 = self.profile.v0();
        let hi = self.hu.inv();
        let c = self.res.c;
        let s1 = M2::new(
            (re(v * v) + self.w) * self.hu,
            re(dv + lit::<T>(2.0) * c * v) * hi,
            C::zero(),
            (self.res.b + self.res.a.conj() * self.lambda) * (lit::<T>(2.0) * v) * hi,
        );
        let ratio = (re(v * v) + self.w) / (re(v0 * v0) + self.w);
        let sq = self.s11_0 * ratio.sqrt() * (v / v0).sqrt();
        s1 * sq.inv()
    }

    /// `(F, B)` at `(x, y)`; requires `λ ≠ 0`.
    pub fn frame(&self, x: T, y: T) -> Result<(M2<T>, M2<T>)> {
        if self.lambda.is_zero() {
            return Err(Error::Pole);
        }
        let psi = self.table.eval(x);
        let s = self.s(x);
        let f = (self.a_mat * (Complex::new(x, y) - psi)).exp() * s;
        let b = s.inv().unwrap_or_else(M2::zero) * (self.a_mat * psi).exp();
        Ok((f, b))
    }

    /// `B(x)`; valid at `λ = 0` too.
    pub fn positive(&self, x: T) -> M2<T> {
        let s = self.s(x);
        let sinv = s.inv().unwrap_or_else(M2::zero);
        if let Some(z) = &self.zero_slope {
            let n = M2::new(C::one(), self.res.a * z.eval(x), C::zero(), C::one());
            return sinv * n;
        }
        sinv * (self.a_mat * self.table.eval(x)).exp()
    }
}

/// `(Uni₁, Pos₁)` of `exp((x+iy)A)` from the closed form.
pub fn closed_form_factorization<T: Real>(
    res: &DelaunayResidue<T>,
    profile: &DelaunayProfile<T>,
    x: T,
    y: T,
    lambda: C<T>,
) -> Result<(M2<T>, M2<T>)> {
    ClosedForm::new(res, profile, lambda)?.frame(x, y)
}

/// `B(x, λ)` by integrating `B_x B^{-1} = η` together with the profile; valid for every `λ`.
pub fn positive_factor_ode<T: Real>(
    res: &DelaunayResidue<T>,
    profile: &DelaunayProfile<T>,
    x: T,
    lambda: C<T>,
    rtol: T,
) -> Result<M2<T>> {
    let u = res.b / res.b.norm();
    let w = res.a.conj() * res.b.conj() * lambda * lit::<T>(4.0);
    let k = profile.k;
    let ui = u.inv();
    let rhs = move |_t: T, y: &[C<T>], dy: &mut [C<T>]| {
        let v = y[0].re;
        let dv = y[1].re;
        dy[0] = y[1];
        dy[1] = re(-lit::<T>(2.0) * v * v * v + lit::<T>(4.0) * k * v);
        let e11 = re(-dv / (lit::<T>(2.0) * v));
        let eta = M2::new(e11, re(v) * ui, w * u / v, -e11);
        let b = M2::new(y[2], y[3], y[4], y[5]);
        let db = eta * b;
        dy[2] = db.a;
        dy[3] = db.b;
        dy[4] = db.c;
        dy[5] = db.d;
    };
    let dv0 = if profile.vacuum { T::zero() } else { profile.dv(T::zero()) };
    let (z, o) = (C::zero(), C::one());
    let mut y = vec![re(profile.v0()), re(dv0), o, z, z, o];
    let opts = OdeOptions { rtol, atol: rtol * lit(1e-3), ..OdeOptions::default() };
    integrate(rhs, T::zero(), x, &mut y, &opts, |_, _| {})?;
    Ok(M2::new(y[2], y[3], y[4], y[5]))
}

/// Growth exponent `τ(λ) = ρ⁻¹ Re(μσ)`, continued across the singular segment through
/// `cosh(μσ) = ½ tr B(ρ, λ)`.
pub fn tau<T: Real>(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>, lambda: C<T>) -> Result<T> {
    if lambda.is_zero() {
        return Err(Error::Pole);
    }
    let sd = res.spectral_data(T::zero(), T::zero(), 0);
    if profile.vacuum {
        let s = sqrt_re_pos(lambda / sd.alpha);
        return Ok(lit::<T>(2.0) * res.b.norm() * s.re);
    }
    let mu = res.mu(lambda);
    let near = sd.dist_to_segment(lambda) < lit(1e-2);
    if !near {
        if let Ok(t) = PsiTable::new(res, profile, lambda) {
            if t.err_est < lit(1e-12) {
                return Ok((mu * t.sigma).re / profile.rho);
            }
        }
    }
    tau_from_trace(res, profile, lambda)
}

/// `τ` from the half trace of `B(ρ, λ)`.
pub fn tau_from_trace<T: Real>(res: &DelaunayResidue<T>, profile: &DelaunayProfile<T>, lambda: C<T>) -> Result<T> {
    let b = positive_factor_ode(res, profile, profile.rho, lambda, lit(1e-12))?;
    let half = b.trace() * lit::<T>(0.5);
    Ok(half.acosh().re.abs() / profile.rho)
}

#[derive(Clone, Copy, Debug)]
pub struct ExpBoundReport<T> {
    pub max_certificate: T,
    /// Largest `‖exp X‖ / (2e^{|Re μ|}(1 + ‖X‖/|μ|))`; at most one.
    pub max_envelope_ratio: T,
}

/// Certificate `‖exp X‖ / e^{|Re μ|}` for traceless `X`, `μ² = −det X`.
pub fn exp_bound_check<T: Real>(xs: &[M2<T>]) -> ExpBoundReport<T> {
    let mut rep = ExpBoundReport { max_certificate: T::zero(), max_envelope_ratio: T::zero() };
    for x in xs {
        let mu2 = -x.det();
        let mu = sqrt_re_pos(mu2);
        let (ch, shc) = cosh_sinhc(mu2);
        let e = M2::scalar(ch) + *x * shc;
        let n = e.op_norm();
        let growth = mu.re.abs().exp();
        rep.max_certificate = rep.max_certificate.max(n / growth);
        let env = lit::<T>(2.0) * growth * (T::one() + x.op_norm() / mu.norm().max(T::min_positive_value()));
        rep.max_envelope_ratio = rep.max_envelope_ratio.max(n / env);
    }
    rep
}

#[derive(Clone, Debug)]
pub struct GrowthRow<T> {
    pub lambda: C<T>,
    pub slope: T,
    pub tau: T,
    pub re_mu: T,
}

impl<T: Real> GrowthRow<T> {
    pub fn within_tau(&self, slack: T) -> bool {
        self.slope <= self.tau + slack
    }

    pub fn within_mu(&self, slack: T) -> bool {
        self.slope <= self.re_mu + slack
    }
}

/// Least-squares slope of `log y` against `x`.
pub fn ls_slope<T: Real>(xs: &[T], ys: &[T]) -> T {
    let n = T::from_usize(xs.len()).unwrap();
    let mx = xs.iter().fold(T::zero(), |s, &x| s + x) / n;
    let my = ys.iter().fold(T::zero(), |s, &y| s + y) / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Fits the slope of `log‖Pos(λ)‖` against `−log|z|`. `pos_factory(|z|)` returns the
/// positive factor at `z = |z|` as a loop accurate on `|λ| ≤ r`.
pub fn growth_measure<T, F>(
    pos_factory: F,
    res: &DelaunayResidue<T>,
    profile: &DelaunayProfile<T>,
    z_mags: &[T],
    lambdas: &[C<T>],
) -> Result<Vec<GrowthRow<T>>>
where
    T: Real,
    F: Fn(T) -> Result<MatrixLoop<T>>,
{
    let mut logs = vec![Vec::with_capacity(z_mags.len()); lambdas.len()];
    let xs: Vec<T> = z_mags.iter().map(|z| -z.ln()).collect();
    for &z in z_mags {
        let pos = pos_factory(z)?;
        for (i, &l) in lambdas.iter().enumerate() {
            logs[i].push(pos.at(l).op_norm().ln());
        }
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for (i, &l) in lambdas.iter().enumerate() {
        rows.push(GrowthRow {
            lambda: l,
            slope: ls_slope(&xs, &logs[i]),
            tau: tau(res, profile, l)?,
            re_mu: res.mu(l).re,
        });
    }
    Ok(rows)
}

/// Writes `λ_re, λ_im, tau, re_mu` rows.
pub fn write_tau_grid<T: Real, W: Write>(
    out: W,
    res: &DelaunayResidue<T>,
    profile: &DelaunayProfile<T>,
    points: &[C<T>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Domain(e.to_string());
    w.write_record(["lambda_re", "lambda_im", "tau", "re_mu"]).map_err(io)?;
    for &l in points {
        let t = tau(res, profile, l)?;
        let m = res.mu(l).re;
        w.write_record([crate::io::fmt17(l.re), crate::io::fmt17(l.im), crate::io::fmt17(t), crate::io::fmt17(m)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Domain(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn c(re: f64, im: f64) -> C<f64> {
        cplx(re, im)
    }

    fn unduloid() -> DelaunayResidue<f64> {
        DelaunayResidue::new(c(0.375, 0.0), c(0.125, 0.0), 0.0).unwrap()
    }

    #[test]
    fn residue_values() {
        let vac = DelaunayResidue::new(c(0.25, 0.0), c(0.25, 0.0), 0.0).unwrap();
        let m = vac.matrix(c(1.0, 0.0)).unwrap();
        assert!((m - M2::new(c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0))).frob() < 1e-15);
        let u = unduloid();
        assert!((u.mu(c(1.0, 0.0)) - c(0.5, 0.0)).norm() < 1e-15);
        assert!(u.as_loop().star() == u.as_loop());
        assert_eq!(u.matrix(c(0.0, 0.0)), Err(Error::Pole));
    }

    #[test]
    fn zeros_and_ray() {
        let sd = unduloid().spectral_data(0.0, 1.0, 4);
        assert!((sd.nu1 - c(-1.0 / 3.0, 0.0)).norm() < 1e-14);
        assert!((sd.nu2 - c(-3.0, 0.0)).norm() < 1e-13);
        assert!((sd.p - c(-1.0, 0.0)).norm() < 1e-14);
        assert!((sd.alpha - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn vacuum_resonances() {
        let vac = DelaunayResidue::new(c(0.25, 0.0), c(0.25, 0.0), 0.0).unwrap();
        let sd = vac.spectral_data(1e-6, 1.0, 3);
        let pts: Vec<(usize, f64)> = sd.resonance_points.iter().map(|p| (p.k, p.lambda.re)).collect();
        assert!(pts.iter().any(|&(k, l)| k == 1 && (l - 1.0).abs() < 1e-12));
        assert!(pts.iter().any(|&(k, l)| k == 2 && (l - (7.0 - 4.0 * 3f64.sqrt())).abs() < 1e-14));
        assert!(pts.iter().any(|&(k, l)| k == 3 && (l - (17.0 - 12.0 * 2f64.sqrt())).abs() < 1e-14));
        for p in &sd.resonance_points {
            assert!((vac.mu(p.lambda) - c(p.k as f64 / 2.0, 0.0)).norm() < 1e-7);
        }
    }

    #[test]
    fn profile_turning_values_and_period() {
        let p = DelaunayProfile::new(&unduloid()).unwrap();
        assert!((p.vmax - 0.75).abs() < 1e-14 && (p.vmin - 0.25).abs() < 1e-14);
        assert!((p.rho - p.rho_ode).abs() < 1e-9);
        assert!(p.ode_residual < 1e-9);
        assert!((p.v(0.0) - 0.25).abs() < 1e-12);
        assert!((p.v(p.rho / 2.0) - 0.75).abs() < 1e-10);
        let vac = DelaunayProfile::new(&DelaunayResidue::new(c(0.25, 0.0), c(0.25, 0.0), 0.0).unwrap()).unwrap();
        assert!(vac.vacuum && (vac.v(1.3) - 0.5).abs() < 1e-15);
        assert!((vac.rho - std::f64::consts::PI * 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_reproduces_exponential() {
        let res = DelaunayResidue::new(c(0.3, 0.0), c(0.2, 0.0), 0.1).unwrap();
        let p = DelaunayProfile::new(&res).unwrap();
        for lam in [c(0.7, 0.2), c(0.9, -0.4), c(-0.2, 0.5)] {
            let cf = ClosedForm::new(&res, &p, lam).unwrap();
            let (f0, b0) = cf.frame(0.0, 0.0).unwrap();
            assert!((f0 - M2::identity()).frob() < 1e-13 && (b0 - M2::identity()).frob() < 1e-13);
            let (f, b) = cf.frame(0.8, -0.3).unwrap();
            let phi = (res.at(lam) * c(0.8, -0.3)).exp();
            assert!((f * b - phi).frob() < 1e-11);
            let bo = positive_factor_ode(&res, &p, 0.8, lam, 1e-12).unwrap();
            assert!((bo - b).frob() < 1e-9, "{:?} vs {:?}", bo, b);
        }
    }

    #[test]
    fn closed_form_matches_numeric_factorization() {
        use crate::iwasawa::{iwasawa_delta, IwasawaOptions};
        use crate::scalar::circle_points;
        let res = unduloid();
        let p = DelaunayProfile::new(&res).unwrap();
        let z = c(0.3, 0.2);
        let sampler = |m: usize| {
            circle_points(1.0, m).into_iter().map(|l| (res.at(l) * z).exp() - M2::identity()).collect()
        };
        let d = iwasawa_delta(sampler, 1.0, &IwasawaOptions::default()).unwrap();
        for lam in [c(0.6, 0.8), c(1.0, 0.0), c(0.0, -1.0), c(-0.6, 0.8)] {
            let (f, _) = closed_form_factorization(&res, &p, 0.3, 0.2, lam).unwrap();
            assert!((d.f.at(lam) + M2::identity() - f).frob() < 1e-8);
        }
        for lam in [c(0.3, 0.2), c(-0.5, 0.1), c(0.0, 0.0)] {
            let b = ClosedForm::new(&res, &p, lam).unwrap().positive(0.3);
            assert!((d.b.at(lam) + M2::identity() - b).frob() < 1e-8, "{lam} {:?} {:?}", d.b.at(lam) + M2::identity(), b);
        }
    }

    #[test]
    fn tau_routes_agree() {
        let res = unduloid();
        let p = DelaunayProfile::new(&res).unwrap();
        for lam in [c(0.5, 0.3), c(0.2, -0.6), c(0.8, 0.0)] {
            let t1 = tau(&res, &p, lam).unwrap();
            let t2 = tau_from_trace(&res, &p, lam).unwrap();
            assert!((t1 - t2).abs() < 1e-8, "{t1} {t2}");
        }
        assert!((tau(&res, &p, c(-0.5, 0.0)).unwrap() - 0.16492).abs() < 1e-4);
        assert!(tau(&res, &p, c(-0.2, 0.0)).unwrap().abs() < 1e-6);
    }
}
