//! Simple factors and dressing.
//!
//! A simple factor with singularity `λ₀` (`0 < |λ₀| < 1`) and line `L ∈ CP¹` is
//! `W·(f^{1/2} π_L + f^{-1/2} π_{L⊥})`, where `f` is the degree-one rational function
//! with a pole at `λ₀`, a zero at `1/conj(λ₀)`, `f* = f⁻¹` and `f(1) = 1`, and `W` is a
//! constant unitary. Conjugations and products of factors sharing `λ₀` only involve
//! the rational part `f π_L + π_{L⊥}`, so the square roots never need to be continued.

use num_traits::{One, Zero};

use crate::delaunay::{ls_slope, ClosedForm, DelaunayProfile, DelaunayResidue};
use crate::error::{Error, Lambda, Result};
use crate::linalg::{qr2, M2};
use crate::loopcore::{samples_to_modes, MatrixLoop};
use crate::scalar::{circle_points, lit, re, to_f64, Real, C};

/// A point of `CP¹` stored as a unit vector.
pub type Line<T> = [C<T>; 2];

pub fn unit_line<T: Real>(v: [C<T>; 2]) -> Result<Line<T>> {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if !(n > T::min_positive_value()) || !n.is_finite() {
        return Err(Error::Degenerate("zero vector does not span a line".into()));
    }
    Ok([v[0] / n, v[1] / n])
}

/// Chordal (Fubini–Study) distance `sin ∠(u, v)` in `[0, 1]`.
pub fn cp1_distance<T: Real>(u: &Line<T>, v: &Line<T>) -> T {
    let nu = u[0].norm_sqr() + u[1].norm_sqr();
    let nv = v[0].norm_sqr() + v[1].norm_sqr();
    // |u ∧ v|² avoids the cancellation in 1 − |⟨u,v⟩|².
    let wedge = (u[0] * v[1] - u[1] * v[0]).norm_sqr();
    (wedge / (nu * nv)).sqrt().min(T::one())
}

/// Orthogonal projection onto the line.
pub fn projector<T: Real>(line: &Line<T>) -> M2<T> {
    let n = line[0].norm_sqr() + line[1].norm_sqr();
    M2::new(line[0] * line[0].conj(), line[0] * line[1].conj(), line[1] * line[0].conj(), line[1] * line[1].conj())
        .scale_re(n.recip())
}

/// Unit eigenvector of `m` for the eigenvalue `e`.
pub fn eigenline<T: Real>(m: &M2<T>, e: C<T>) -> Result<Line<T>> {
    let n = *m - M2::scalar(e);
    let v0 = [n.b, -n.a];
    let v1 = [n.d, -n.c];
    let s0 = v0[0].norm_sqr() + v0[1].norm_sqr();
    let s1 = v1[0].norm_sqr() + v1[1].norm_sqr();
    let scale = m.frob_sq().max(e.norm_sqr()).max(T::min_positive_value());
    if s0.max(s1) <= scale * lit(1e-24) {
        return Err(Error::Degenerate("matrix is scalar; every line is an eigenline".into()));
    }
    unit_line(if s0 >= s1 { v0 } else { v1 })
}

/// `f(λ) = c (λ − q)/(λ − λ₀)` with `q = 1/conj(λ₀)`, normalized by `f(1) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blaschke<T> {
    pub lambda0: C<T>,
    /// The zero `1/conj(λ₀)`.
    pub zero: C<T>,
    c: C<T>,
    /// `1/√((1 − q)/(1 − λ₀))`, fixing `f^{1/2}(1) = 1`.
    s: C<T>,
}

impl<T: Real> Blaschke<T> {
    pub fn new(lambda0: C<T>) -> Result<Self> {
        let m = lambda0.norm();
        if !(m > T::zero()) || (m - T::one()).abs() < lit(1e-12) || !m.is_finite() {
            return Err(Error::Degenerate(format!("singularity {} must lie off 0 and the unit circle", Lambda::from(lambda0))));
        }
        let one = C::<T>::one();
        let q = lambda0.conj().inv();
        let c = (one - lambda0) / (one - q);
        let s = ((one - q) / (one - lambda0)).sqrt().inv();
        Ok(Blaschke { lambda0, zero: q, c, s })
    }

    pub fn eval(&self, lambda: C<T>) -> C<T> {
        self.c * (lambda - self.zero) / (lambda - self.lambda0)
    }

    /// Branch of `f^{1/2}` cut along the segment from `λ₀` to `1/conj(λ₀)`.
    pub fn sqrt(&self, lambda: C<T>) -> C<T> {
        self.s * ((lambda - self.zero) / (lambda - self.lambda0)).sqrt()
    }

    /// `|f*(λ)·f(λ) − 1|`.
    pub fn star_residual(&self, lambda: C<T>) -> T {
        let fs = self.eval(lambda.conj().inv()).conj();
        (fs * self.eval(lambda) - C::one()).norm()
    }

    fn check(&self, lambda: C<T>) -> Result<()> {
        let tol = lit::<T>(1e-13) * (T::one() + self.zero.norm());
        if (lambda - self.lambda0).norm() < tol || (lambda - self.zero).norm() < tol {
            return Err(Error::Domain(format!("λ = {} is a singularity of the simple factor", Lambda::from(lambda))));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    /// `W = I`.
    Unnormalized,
    /// `W` makes the value at `λ = 0` upper triangular with positive diagonal.
    Normalized,
    /// Any constant unitary `W`.
    General,
}

#[derive(Clone, Debug)]
pub struct SimpleFactor<T> {
    pub f: Blaschke<T>,
    pub line: Line<T>,
    pub w: M2<T>,
    pub kind: FactorKind,
    pi: M2<T>,
}

impl<T: Real> SimpleFactor<T> {
    pub fn unnormalized(lambda0: C<T>, line: [C<T>; 2]) -> Result<Self> {
        let line = unit_line(line)?;
        Ok(SimpleFactor { f: Blaschke::new(lambda0)?, line, w: M2::identity(), kind: FactorKind::Unnormalized, pi: projector(&line) })
    }

    pub fn normalized(lambda0: C<T>, line: [C<T>; 2]) -> Result<Self> {
        let mut g = Self::unnormalized(lambda0, line)?;
        let (u, _) = qr2(&g.core(C::zero()))?;
        g.w = u.h();
        g.kind = FactorKind::Normalized;
        Ok(g)
    }

    pub fn general(lambda0: C<T>, line: [C<T>; 2], w: M2<T>) -> Result<Self> {
        let u = (w.h() * w - M2::identity()).op_norm();
        if u > lit(1e-10) {
            return Err(Error::Precondition(format!("prefactor is not unitary (residual {:.3e})", to_f64(u))));
        }
        let mut g = Self::unnormalized(lambda0, line)?;
        g.w = w;
        g.kind = FactorKind::General;
        Ok(g)
    }

    pub fn lambda0(&self) -> C<T> {
        self.f.lambda0
    }

    pub fn projector(&self) -> M2<T> {
        self.pi
    }

    /// `f^{1/2} π_L + f^{-1/2} π_{L⊥}` without the prefactor.
    pub fn core(&self, lambda: C<T>) -> M2<T> {
        let s = self.f.sqrt(lambda);
        let pi = self.pi;
        pi * s + (M2::identity() - pi) * s.inv()
    }

    pub fn eval(&self, lambda: C<T>) -> Result<M2<T>> {
        self.f.check(lambda)?;
        Ok(self.w * self.core(lambda))
    }

    /// Inverse of [`eval`](Self::eval).
    pub fn eval_inv(&self, lambda: C<T>) -> Result<M2<T>> {
        self.f.check(lambda)?;
        let s = self.f.sqrt(lambda);
        let pi = self.pi;
        Ok((pi * s.inv() + (M2::identity() - pi) * s) * self.w.h())
    }

    /// `W (f π_L + π_{L⊥})`, equal to `f^{1/2}·eval`.
    pub fn rational(&self, lambda: C<T>) -> M2<T> {
        let pi = self.pi;
        self.w * (pi * self.f.eval(lambda) + (M2::identity() - pi))
    }

    /// `(f⁻¹ π_L + π_{L⊥}) W⁻¹`, the inverse of [`rational`](Self::rational).
    pub fn rational_inv(&self, lambda: C<T>) -> M2<T> {
        let pi = self.pi;
        (pi * self.f.eval(lambda).inv() + (M2::identity() - pi)) * self.w.h()
    }

    /// `g X g⁻¹` at `λ`.
    pub fn conjugate(&self, x: &M2<T>, lambda: C<T>) -> M2<T> {
        self.rational(lambda) * *x * self.rational_inv(lambda)
    }

    /// `max(|f|^{1/2}, |f|^{-1/2})`, which equals `‖g(λ)‖`.
    pub fn norm_bound(&self, lambda: C<T>) -> T {
        let a = self.f.eval(lambda).norm().sqrt();
        a.max(a.recip())
    }
}

/// `h₁ h₂⁻¹` for two factors with the same singularity.
pub fn factor_ratio<T: Real>(h1: &SimpleFactor<T>, h2: &SimpleFactor<T>, lambda: C<T>) -> Result<M2<T>> {
    let d = (h1.lambda0() - h2.lambda0()).norm();
    if d > lit::<T>(1e-12) * h1.lambda0().norm() {
        return Err(Error::Precondition("factors have different singularities".into()));
    }
    h1.f.check(lambda)?;
    Ok(h1.rational(lambda) * h2.rational_inv(lambda))
}

/// The normalized factor `h` with `g F h⁻¹` unitary, given `F(λ₀)`.
pub fn dressing_partner<T: Real>(g: &SimpleFactor<T>, frame_at_lambda0: &M2<T>) -> Result<SimpleFactor<T>> {
    if !frame_at_lambda0.is_finite() {
        return Err(Error::Domain("frame is not finite at the singularity".into()));
    }
    let v = frame_at_lambda0.h().mul_vec(g.line);
    SimpleFactor::normalized(g.lambda0(), v)
}

/// `g(λ) F h(λ)⁻¹` through the rational parts.
pub fn dressed_value<T: Real>(g: &SimpleFactor<T>, h: &SimpleFactor<T>, frame: &M2<T>, lambda: C<T>) -> M2<T> {
    g.rational(lambda) * *frame * h.rational_inv(lambda)
}

#[derive(Clone, Debug)]
pub struct Dressed<T> {
    /// `g F h⁻¹` on `A_{r,1/r}`.
    pub unitary: MatrixLoop<T>,
    pub h: SimpleFactor<T>,
    /// Largest discarded mode of the two-circle fit.
    pub band_residual: T,
    /// `sup ‖F̃* F̃ − I‖` on `C_r` and `S¹`.
    pub unitarity_residual: T,
}

/// Dresses the unitary frame `F` (evaluated by `frame`) by `g`, sampling `m` points on
/// `C_r` and `C_{1/r}`.
pub fn dress<T, F>(g: &SimpleFactor<T>, frame: F, r: T, m: usize) -> Result<Dressed<T>>
where
    T: Real,
    F: Fn(C<T>) -> Result<M2<T>>,
{
    let l0 = g.lambda0().norm();
    if !(r > T::zero() && r < l0 && l0 < T::one()) {
        return Err(Error::Precondition(format!("singularity must lie in the annulus ({r}, 1)")));
    }
    let h = dressing_partner(g, &frame(g.lambda0())?)?;
    let ri = r.recip();
    let eval_on = |rad: T| -> Result<Vec<M2<T>>> {
        circle_points(rad, m).into_iter().map(|l| Ok(dressed_value(g, &h, &frame(l)?, l))).collect()
    };
    let inner = eval_on(r)?;
    let outer = eval_on(ri)?;
    let (unitary, band_residual) = MatrixLoop::from_two_circles(&inner, &outer, r, m / 2 - 1);
    let unitarity_residual = unitary.unitarity_residual(&[r, T::one()], 32);
    Ok(Dressed { unitary, h, band_residual, unitarity_residual })
}

/// `h·B` as an `r`-loop.
pub fn dress_positive<T: Real>(h: &SimpleFactor<T>, b: &MatrixLoop<T>, r: T, m: usize) -> Result<(MatrixLoop<T>, T)> {
    let s: Vec<M2<T>> = circle_points(r, m).into_iter().map(|l| Ok(h.eval(l)? * b.at(l))).collect::<Result<_>>()?;
    Ok(MatrixLoop::from_samples(&s, r, m / 2 - 1))
}

#[derive(Clone, Debug)]
pub struct SpecialDressing<T> {
    pub factor: SimpleFactor<T>,
    /// `g A g⁻¹` read back as a residue.
    pub residue: DelaunayResidue<T>,
    /// Largest Laurent mode of `g A g⁻¹` outside `λ^{-1}, λ⁰, λ¹`, relative to the largest mode.
    pub tail: T,
    /// `sup |det(g A g⁻¹) − det A|` on the sampling circle.
    pub det_residual: T,
}

/// The normalized factor at `λ₀` whose line is an eigenline of `conj(A(λ₀))ᵀ`
/// (for `conj μ` when `plus`, otherwise `−conj μ`), with the conjugated residue.
pub fn special_dressing<T: Real>(res: &DelaunayResidue<T>, lambda0: C<T>, plus: bool) -> Result<SpecialDressing<T>> {
    if !(lambda0.norm() > T::zero() && lambda0.norm() < T::one()) {
        return Err(Error::Precondition(format!("λ₀ = {} must lie in the punctured unit disk", Lambda::from(lambda0))));
    }
    let a0 = res.at(lambda0);
    let mu = res.mu(lambda0);
    if mu.norm() < lit::<T>(1e-10) * (T::one() + a0.op_norm()) {
        return Err(Error::Degenerate(format!("A(λ₀) is nilpotent at λ₀ = {}", Lambda::from(lambda0))));
    }
    let e = if plus { mu.conj() } else { -mu.conj() };
    let line = eigenline(&a0.h(), e)?;
    let factor = SimpleFactor::normalized(lambda0, line)?;
    let m = 64;
    let lams = circle_points(T::one(), m);
    let xs: Vec<M2<T>> = lams.iter().map(|&l| factor.conjugate(&res.at(l), l)).collect();
    let det_residual = lams.iter().zip(&xs).fold(T::zero(), |s, (&l, x)| s.max((x.det() - res.at(l).det()).norm()));
    let (loop3, tail) = three_term_fit(&xs, T::one());
    let residue = DelaunayResidue::from_loop(&loop3, lit(1e-8))?;
    Ok(SpecialDressing { factor, residue, tail, det_residual })
}

/// Laurent terms `λ^{-1}, λ⁰, λ¹` of samples on `C_r`, and the relative size of the rest.
fn three_term_fit<T: Real>(xs: &[M2<T>], r: T) -> (MatrixLoop<T>, T) {
    let m = xs.len();
    let modes = samples_to_modes(xs);
    let top = modes.iter().fold(T::zero(), |s, x| s.max(x.max_abs())).max(T::min_positive_value());
    let mut tail = T::zero();
    for (j, x) in modes.iter().enumerate() {
        let k = if j <= m / 2 { j as i64 } else { j as i64 - m as i64 };
        if k.abs() > 1 {
            tail = tail.max(x.max_abs() / top);
        }
    }
    let l = MatrixLoop::from_terms(
        &[(-1, modes[m - 1].scale_re(r)), (0, modes[0]), (1, modes[1].scale_re(r.recip()))],
        T::one(),
    );
    (l, tail)
}

#[derive(Clone, Copy, Debug)]
pub struct ExtractOptions<T> {
    /// Samples per circle.
    pub samples: usize,
    /// `‖M₁(λ₀) − ιI‖` above this marks a pole.
    pub pole_tol: T,
    /// Tolerance for reading the remainder's conjugated residue.
    pub residue_tol: T,
}

impl<T: Real> Default for ExtractOptions<T> {
    fn default() -> Self {
        ExtractOptions { samples: 512, pole_tol: lit(1e-6), residue_tol: lit(1e-6) }
    }
}

/// Evidence for one peeled factor.
#[derive(Clone, Copy, Debug)]
pub struct PoleCertificate<T> {
    pub lambda: C<T>,
    pub k: usize,
    /// `‖M₁(λ₀) − ιI‖`.
    pub nilpotent_norm: T,
    /// `‖(M₁(λ₀) − ιI)²‖ / ‖M₁(λ₀) − ιI‖²`; zero for an exactly nilpotent part.
    pub square_ratio: T,
}

#[derive(Clone, Debug)]
pub struct Extraction<T> {
    /// Factors in peeling order: `C₊ = g₁ g₂ ⋯ V`.
    pub factors: Vec<SimpleFactor<T>>,
    pub remainder: MatrixLoop<T>,
    /// `V A V⁻¹`.
    pub residue: DelaunayResidue<T>,
    pub certificates: Vec<PoleCertificate<T>>,
    /// `sup ‖g₁⋯V − C₊‖ / sup ‖C₊‖` on `C_r`.
    pub reconstruction_residual: T,
    /// Relative size of the Laurent modes of `V A V⁻¹` outside `λ^{-1}, λ⁰, λ¹`.
    pub residue_tail: T,
    /// Worst `‖M₁ᴴ M₁ − I‖` on `S¹` over the iterations.
    pub monodromy_unitarity: T,
}

fn monodromy_loop<T: Real>(cp: &[M2<T>], lams: &[C<T>], res: &DelaunayResidue<T>, r: T) -> MatrixLoop<T> {
    let two_pi_i = C::new(T::zero(), T::PI() + T::PI());
    let mut inner = Vec::with_capacity(cp.len());
    let mut outer = Vec::with_capacity(cp.len());
    // Everything is in SL(2), where the adjugate is the exact inverse; `M` reaches
    // e^{2π|Im μ|} on small circles and `adj/det` would lose the reflection.
    for (c, &l) in cp.iter().zip(lams) {
        let m1 = *c * (res.at(l) * two_pi_i).exp() * c.adj();
        outer.push(m1.adj().h());
        inner.push(m1);
    }
    MatrixLoop::from_two_circles(&inner, &outer, r, cp.len() / 2 - 1).0
}

/// Splits a positive `C₊` with unitary `C₊ exp(2πiA) C₊⁻¹` into normalized simple factors at
/// resonance points of `𝒜_{r,1}` and a remainder `V` conjugating `A` to a Delaunay residue.
pub fn extract_simple_factors<T: Real>(
    c_plus: &MatrixLoop<T>,
    res: &DelaunayResidue<T>,
    r: T,
    opts: &ExtractOptions<T>,
) -> Result<Extraction<T>> {
    if !(r > T::zero() && r < T::one()) {
        return Err(Error::Domain(format!("radius {r} outside (0, 1)")));
    }
    let m = opts.samples;
    let lams = circle_points(r, m);
    let original = c_plus.samples_on(r, m);
    let scale = original.iter().fold(T::zero(), |s, x| s.max(x.op_norm()));
    let det_err = original.iter().fold(T::zero(), |s, x| s.max((x.det() - C::one()).norm()));
    if det_err > lit(1e-8) {
        return Err(Error::Precondition(format!("C₊ has det ≠ 1 (residual {:.3e})", to_f64(det_err))));
    }
    let mu_max = lams.iter().fold(T::zero(), |s, &l| s.max(res.mu(l).norm())).max(res.mu(C::one()).norm());
    let kmax = to_f64(mu_max * lit(2.0)).ceil() as usize + 1;
    let lo = r * (T::one() + lit(1e-9));
    let hi = T::one() - lit(1e-9);
    let mut candidates: Vec<_> = res
        .spectral_data(r, T::one(), kmax)
        .resonance_points
        .into_iter()
        .filter(|p| !p.double && p.lambda.norm() > lo && p.lambda.norm() < hi)
        .collect();
    let mut cp = original.clone();
    let mut factors = Vec::new();
    let mut certificates = Vec::new();
    let mut monodromy_unitarity = T::zero();
    let unit_pts = circle_points(T::one(), 64);
    for _ in 0..=candidates.len() {
        let m1 = monodromy_loop(&cp, &lams, res, r);
        let unit = unit_pts.iter().fold(T::zero(), |s, &l| {
            let x = m1.at(l);
            s.max((x.h() * x - M2::identity()).op_norm())
        });
        monodromy_unitarity = monodromy_unitarity.max(unit);
        if unit > lit(1e-6) {
            return Err(Error::Precondition(format!("conjugated monodromy is not unitary (residual {:.3e})", to_f64(unit))));
        }
        let mut pick = None;
        for (i, p) in candidates.iter().enumerate() {
            let iota: T = if p.k % 2 == 0 { T::one() } else { -T::one() };
            let n = m1.at(p.lambda) - M2::scalar(re(iota));
            let nn = n.op_norm();
            if nn > opts.pole_tol && pick.as_ref().map_or(true, |(_, _, best): &(usize, M2<T>, T)| nn > *best) {
                pick = Some((i, n, nn));
            }
        }
        let Some((i, n, nn)) = pick else {
            break;
        };
        let p = candidates.remove(i);
        let square_ratio = (n * n).op_norm() / (nn * nn);
        if square_ratio > lit(1e-4) {
            return Err(Error::Degenerate(format!(
                "M₁ − ιI is not nilpotent at λ = {} (ratio {:.3e})",
                Lambda::from(p.lambda),
                to_f64(square_ratio)
            )));
        }
        certificates.push(PoleCertificate { lambda: p.lambda, k: p.k, nilpotent_norm: nn, square_ratio });
        // Kernel and image of a rank-one nilpotent coincide.
        let (c0, c1) = (n.col(0), n.col(1));
        let u = if c0[0].norm_sqr() + c0[1].norm_sqr() >= c1[0].norm_sqr() + c1[1].norm_sqr() { c0 } else { c1 };
        let psi_u = SimpleFactor::unnormalized(p.lambda, u)?;
        let (q, _) = qr2(&psi_u.core(C::zero()).inv().ok_or(Error::SingularLoop(0.0))?)?;
        let g = SimpleFactor::normalized(p.lambda, q.h().mul_vec(psi_u.line))?;
        for (c, &l) in cp.iter_mut().zip(&lams) {
            *c = g.eval_inv(l)? * *c;
        }
        factors.push(g);
    }
    if let Some(p) = candidates.iter().find(|p| {
        let m1 = monodromy_loop(&cp, &lams, res, r);
        let iota: T = if p.k % 2 == 0 { T::one() } else { -T::one() };
        (m1.at(p.lambda) - M2::scalar(re(iota))).op_norm() > opts.pole_tol
    }) {
        return Err(Error::Extraction(format!("residual pole at λ = {}", Lambda::from(p.lambda))));
    }
    let (remainder, _) = MatrixLoop::from_samples(&cp, r, m / 2 - 1);
    let conj: Vec<M2<T>> = cp
        .iter()
        .zip(&lams)
        .map(|(v, &l)| *v * res.at(l) * v.adj())
        .collect();
    let (loop3, residue_tail) = three_term_fit(&conj, r);
    let residue = DelaunayResidue::from_loop(&loop3, opts.residue_tol)?;
    let mut recon = T::zero();
    for (s, &l) in lams.iter().enumerate() {
        let mut x = remainder.at(l);
        for g in factors.iter().rev() {
            x = g.eval(l)? * x;
        }
        recon = recon.max((x - original[s]).op_norm());
    }
    Ok(Extraction {
        factors,
        remainder,
        residue,
        certificates,
        reconstruction_residual: recon / scale,
        residue_tail,
        monodromy_unitarity,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LimitRow<T> {
    /// `d(L₁, L₂)` in `CP¹`.
    pub line_distance: T,
    /// `sup ‖h₁h₂⁻¹ − I‖` over the region.
    pub ratio_deviation: T,
    /// `sup ‖h₁‖ / max(|f|^{1/2}, |f|^{-1/2})`; one up to rounding.
    pub bound_ratio: T,
}

/// `h₁h₂⁻¹` against `I` on `region` for pairs of lines at a common singularity.
pub fn simple_factor_limit_check<T: Real>(
    lambda0: C<T>,
    lines: &[(Line<T>, Line<T>)],
    region: &[C<T>],
) -> Result<Vec<LimitRow<T>>> {
    lines
        .iter()
        .map(|(l1, l2)| {
            let h1 = SimpleFactor::normalized(lambda0, *l1)?;
            let h2 = SimpleFactor::normalized(lambda0, *l2)?;
            let mut dev = T::zero();
            let mut bound = T::zero();
            for &l in region {
                dev = dev.max((factor_ratio(&h1, &h2, l)? - M2::identity()).op_norm());
                bound = bound.max(h1.eval(l)?.op_norm() / h1.norm_bound(l));
            }
            Ok(LimitRow { line_distance: cp1_distance(l1, l2), ratio_deviation: dev, bound_ratio: bound })
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct BubbletonRow<T> {
    pub x: T,
    /// `sup ‖h₁h₂⁻¹ − I‖` over the unitary region.
    pub unitary_deviation: T,
    /// `sup ‖h₂h₁⁻¹ − I‖` over `C_r`.
    pub positive_deviation: T,
    /// `d(conj(F(λ₀))ᵀL₁, conj(F(λ₀))ᵀL₂)`.
    pub line_distance: T,
    /// `d(exp(xA(λ₀))L₁, L₋)`.
    pub exp_distance: T,
}

#[derive(Clone, Debug)]
pub struct BubbletonReport<T> {
    pub mu: T,
    pub rows: Vec<BubbletonRow<T>>,
    /// Fitted `d log(exp_distance)/dx`; close to `2μ(λ₀)`.
    pub exp_rate: T,
    /// Fitted `d log(unitary_deviation)/dx` over rows above rounding.
    pub unitary_rate: T,
}

/// Lines `conj(F(x, y, λ₀))ᵀ L` for the closed-form Delaunay frame, reduced by periods so
/// large `|x|` never forms huge matrices.
struct DressedLines<'a, T: Real> {
    cf: ClosedForm<'a, T>,
    rho: T,
    /// `conj(exp(−(ρ−σ)A))ᵀ`, applied once per period towards `−∞`.
    back: M2<T>,
    fwd: M2<T>,
}

impl<'a, T: Real> DressedLines<'a, T> {
    fn new(res: &DelaunayResidue<T>, profile: &'a DelaunayProfile<T>, lambda0: C<T>) -> Result<Self> {
        let cf = ClosedForm::new(res, profile, lambda0)?;
        let c = (res.at(lambda0) * (re(profile.rho) - cf.table.sigma)).exp();
        let back = c.inv().ok_or(Error::SingularLoop(0.0))?.h();
        Ok(DressedLines { cf, rho: profile.rho, back, fwd: c.h() })
    }

    fn line(&self, x: T, y: T, l: &Line<T>) -> Result<Line<T>> {
        let n = (x / self.rho).floor();
        let xr = x - n * self.rho;
        let (f, _) = self.cf.frame(xr, y)?;
        // F(x_r + nρ) = Cⁿ F(x_r), so conj(F)ᵀ L = conj(F(x_r))ᵀ (conj(C)ᵀ)ⁿ L.
        let step = if n < T::zero() { self.back } else { self.fwd };
        let mut v = *l;
        for _ in 0..to_f64(n.abs()) as usize {
            v = unit_line(step.mul_vec(v))?;
        }
        unit_line(f.h().mul_vec(v))
    }
}

/// Measures the two comparison quantities between `g₁Φ₀` and `g₂Φ₀` along `xs` and the
/// convergence of `exp(xA(λ₀))L₁` to the contracting eigenline.
#[allow(clippy::too_many_arguments)]
pub fn bubbleton_asymptotics_check<T: Real>(
    res: &DelaunayResidue<T>,
    profile: &DelaunayProfile<T>,
    lambda0: C<T>,
    l1: Line<T>,
    l2: Line<T>,
    xs: &[T],
    r: T,
    region: &[C<T>],
) -> Result<BubbletonReport<T>> {
    let mu_c = res.mu(lambda0);
    if mu_c.im.abs() > lit::<T>(1e-9) * mu_c.norm() || !(mu_c.re > T::zero()) {
        return Err(Error::Precondition(format!("μ(λ₀) = {mu_c} is not a positive real")));
    }
    let mu = mu_c.re;
    if !(lambda0.norm() > r && lambda0.norm() < T::one()) {
        return Err(Error::Precondition(format!("λ₀ must lie in the annulus ({r}, 1)")));
    }
    let a0 = res.at(lambda0);
    let excluded = eigenline(&a0.h(), mu_c.conj())?;
    for l in [&l1, &l2] {
        if cp1_distance(l, &excluded) < lit(1e-8) {
            return Err(Error::Precondition("line equals the excluded eigenline".into()));
        }
    }
    let l_minus = eigenline(&a0, -mu_c)?;
    let lines = DressedLines::new(res, profile, lambda0)?;
    let pos_pts = circle_points(r, 64);
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let g1 = lines.line(x, T::zero(), &l1)?;
        let g2 = lines.line(x, T::zero(), &l2)?;
        let h1 = SimpleFactor::normalized(lambda0, g1)?;
        let h2 = SimpleFactor::normalized(lambda0, g2)?;
        let mut ud = T::zero();
        for &l in region {
            ud = ud.max((factor_ratio(&h1, &h2, l)? - M2::identity()).op_norm());
        }
        let mut pd = T::zero();
        for &l in &pos_pts {
            pd = pd.max((factor_ratio(&h2, &h1, l)? - M2::identity()).op_norm());
        }
        let e = unit_line((a0 * re(x)).exp().mul_vec(l1))?;
        rows.push(BubbletonRow {
            x,
            unitary_deviation: ud,
            positive_deviation: pd,
            line_distance: cp1_distance(&g1, &g2),
            exp_distance: cp1_distance(&e, &l_minus),
        });
    }
    let fit = |sel: &dyn Fn(&BubbletonRow<T>) -> T| {
        let pts: Vec<(T, T)> = rows.iter().filter(|w| sel(w) > lit(1e-12) && sel(w) < lit(1e-2)).map(|w| (w.x, sel(w).ln())).collect();
        if pts.len() < 2 {
            return T::nan();
        }
        let (a, b): (Vec<T>, Vec<T>) = pts.into_iter().unzip();
        ls_slope(&a, &b)
    };
    let exp_rate = fit(&|w| w.exp_distance);
    let unitary_rate = fit(&|w| w.unitary_deviation);
    Ok(BubbletonReport { mu, rows, exp_rate, unitary_rate })
}

/// Points of the annulus `r_in ≤ |λ| ≤ r_out` on `rings` circles, keeping those at distance
/// at least `gap` from every point of `avoid`.
pub fn annulus_region<T: Real>(r_in: T, r_out: T, rings: usize, per_ring: usize, avoid: &[C<T>], gap: T) -> Vec<C<T>> {
    let mut out = Vec::new();
    for i in 0..rings {
        let t = if rings == 1 { T::zero() } else { T::from_usize(i).unwrap() / T::from_usize(rings - 1).unwrap() };
        let rad = r_in * (r_out / r_in).powf(t);
        for l in circle_points(rad, per_ring) {
            if avoid.iter().all(|a| (l - *a).norm() >= gap) {
                out.push(l);
            }
        }
    }
    out
}
