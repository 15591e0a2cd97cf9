//! Sym-formula immersions, conformal factors, moving frames and meshes.
//!
//! `su(2)` is identified with ℝ³ through the basis
//! `e₁ = [[0,1],[−1,0]]`, `e₂ = [[0,i],[i,0]]`, `e₃ = [[i,0],[0,−i]]`, with
//! coordinates `x_j = −½ tr(e_j X)`. Surfaces are parametrized by `x + iy = log z`.

use num_complex::Complex;
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::delaunay::{ClosedForm, DelaunayProfile, DelaunayResidue};
use crate::dressing::{dressing_partner, dressed_value, SimpleFactor};
use crate::error::{Error, Result};
use crate::iwasawa::iwasawa_fixed;
use crate::linalg::{qr2, v3_cross, v3_dot, v3_norm, v3_scale, v3_sub, M2, V3};
use crate::potential::{Potential, ZapDecomposition};
use crate::scalar::{circle_points, lit, re, Real, C};

pub mod ends;
pub mod fit;
mod mesh;

pub use mesh::{build_mesh, Grid, SurfaceMesh};

pub fn basis<T: Real>(j: usize) -> M2<T> {
    let (o, z, i) = (C::<T>::one(), C::<T>::zero(), C::<T>::i());
    match j {
        0 => M2::new(z, o, -o, z),
        1 => M2::new(z, i, i, z),
        _ => M2::new(i, z, z, -i),
    }
}

/// Coordinates of the traceless anti-hermitian part of `x`.
pub fn su2_to_r3<T: Real>(x: &M2<T>) -> V3<T> {
    let h = lit::<T>(-0.5);
    [0, 1, 2].map(|j| ((basis::<T>(j) * *x).trace() * h).re)
}

pub fn r3_to_su2<T: Real>(v: V3<T>) -> M2<T> {
    basis::<T>(0).scale_re(v[0]) + basis::<T>(1).scale_re(v[1]) + basis::<T>(2).scale_re(v[2])
}

/// `−2H⁻¹ F′F⁻¹` from `F` and `F′ = ∂_θF` at a point of `S¹`.
pub fn sym_point<T: Real>(f: &M2<T>, df: &M2<T>, h: T) -> V3<T> {
    su2_to_r3(&(*df * f.adj()).scale_re(-lit::<T>(2.0) / h))
}

/// `sup ‖FᴴF − I‖`, and the nearest element of `SU(2)` when the frame drifted.
pub fn unitary_projection<T: Real>(f: &M2<T>, tol: T) -> Result<(M2<T>, Option<T>)> {
    let dev = (f.h() * *f - M2::identity()).op_norm();
    if dev <= tol {
        return Ok((*f, None));
    }
    let (q, _) = qr2(f)?;
    Ok((q.sl_normalize(), Some(dev)))
}

/// Trapezoidal Cauchy integral for `∂_θ` at `λ` on `S¹`.
#[derive(Clone, Debug)]
pub struct CauchyStencil<T> {
    pub center: C<T>,
    pub radius: T,
    pub nodes: Vec<C<T>>,
}

impl<T: Real> CauchyStencil<T> {
    pub fn new(center: C<T>, radius: T, n: usize) -> Self {
        let nodes = circle_points(radius, n).into_iter().map(|w| center + w).collect();
        CauchyStencil { center, radius, nodes }
    }

    /// `∂_θF = iλ dF/dλ` from values at the nodes.
    pub fn d_theta(&self, values: &[M2<T>]) -> M2<T> {
        let n = T::from_usize(values.len()).unwrap();
        let mut acc = M2::zero();
        for (v, &l) in values.iter().zip(&self.nodes) {
            acc += v.scale((l - self.center).inv());
        }
        acc.scale(C::<T>::i() * self.center / n)
    }
}

/// Anything that yields the unitary frame and its positive part at `x + iy`.
pub trait FrameSource<T: Real>: Sync {
    fn lambda_sym(&self) -> C<T>;
    /// `(F, ∂_θF)` at the Sym point.
    fn frame(&self, x: T, y: T) -> Result<(M2<T>, M2<T>)>;
    /// Upper-left entry of `B(λ = 0)`.
    fn b0_diag(&self, x: T, y: T) -> Result<C<T>>;
    /// `λ⁻¹` coefficient of the upper-right entry of the potential in `x + iy`.
    fn alpha(&self, x: T, y: T) -> C<T>;
}

/// `2|α/H|·|B(0)₁₁|²`.
pub fn metric_from_b<T: Real>(b0_diag: C<T>, alpha: C<T>, h: T) -> Result<T> {
    if alpha.norm() < lit(1e-14) {
        return Err(Error::Domain("branch point: α vanishes".into()));
    }
    Ok(lit::<T>(2.0) * (alpha / re(h)).norm() * b0_diag.norm_sqr())
}

/// `p² = iHα/(λ|Hα|)`.
pub fn p_squared<T: Real>(alpha: C<T>, h: T, lambda: C<T>) -> C<T> {
    let ha = alpha * h;
    C::<T>::i() * ha / (lambda * ha.norm())
}

/// `G = F·diag(p, p⁻¹)`; the sign of `p` follows `prev` when given.
pub fn moving_frame<T: Real>(f: &M2<T>, alpha: C<T>, h: T, lambda: C<T>, prev: Option<C<T>>) -> (M2<T>, C<T>) {
    let mut p = p_squared(alpha, h, lambda).sqrt();
    if let Some(q) = prev {
        if (p - q).norm() > (p + q).norm() {
            p = -p;
        }
    }
    (*f * M2::diag(p, p.inv()), p)
}

/// `G e₃ G⁻¹` in ℝ³.
pub fn normal<T: Real>(g: &M2<T>) -> V3<T> {
    su2_to_r3(&(*g * basis(2) * g.adj()))
}

/// `w G e_j G⁻¹` for `j = 0, 1`: the predicted `∂ₓf` and `∂_yf`.
pub fn frame_tangents<T: Real>(g: &M2<T>, w: T) -> [V3<T>; 2] {
    [0, 1].map(|j| v3_scale(su2_to_r3(&(*g * basis(j) * g.adj())), w))
}

#[derive(Clone, Copy, Debug)]
pub struct Vertex<T> {
    pub point: V3<T>,
    pub normal: V3<T>,
    pub metric: T,
    /// `∂ₓf`, `∂_yf` from the moving frame.
    pub tangents: [V3<T>; 2],
    /// Set when the frame was projected back onto `SU(2)`.
    pub unitary_drift: Option<T>,
}

pub fn vertex<T: Real, S: FrameSource<T> + ?Sized>(src: &S, h: T, x: T, y: T) -> Result<Vertex<T>> {
    let (f, df) = src.frame(x, y)?;
    if !f.is_finite() || !df.is_finite() {
        return Err(Error::Domain("frame is not finite".into()));
    }
    let (f, drift) = unitary_projection(&f, lit(1e-8))?;
    let point = sym_point(&f, &df, h);
    let alpha = src.alpha(x, y);
    let metric = metric_from_b(src.b0_diag(x, y)?, alpha, h)?;
    let (g, _) = moving_frame(&f, alpha, h, src.lambda_sym(), None);
    Ok(Vertex { point, normal: normal(&g), metric, tangents: frame_tangents(&g, metric), unitary_drift: drift })
}

/// Largest `|∂f − wGeG⁻¹|/w` and `|n·∂f|/w` of a vertex against difference quotients.
pub fn frame_relation_residual<T: Real>(v: &Vertex<T>, fx: V3<T>, fy: V3<T>) -> (T, T) {
    let rel = v3_norm(v3_sub(fx, v.tangents[0])).max(v3_norm(v3_sub(fy, v.tangents[1]))) / v.metric;
    let perp = v3_dot(v.normal, fx).abs().max(v3_dot(v.normal, fy).abs()) / v.metric;
    (rel, perp)
}

/// Delaunay frames from the closed form, optionally dressed by simple factors applied
/// left to right.
pub struct DelaunaySource<'a, T> {
    pub residue: DelaunayResidue<T>,
    pub stencil: CauchyStencil<T>,
    center: ClosedForm<'a, T>,
    nodes: Vec<ClosedForm<'a, T>>,
    zero: ClosedForm<'a, T>,
    factors: Vec<SimpleFactor<T>>,
    at_factors: Vec<ClosedForm<'a, T>>,
}

impl<'a, T: Real> DelaunaySource<'a, T> {
    pub fn new(
        res: &DelaunayResidue<T>,
        profile: &'a DelaunayProfile<T>,
        lambda_sym: C<T>,
        factors: Vec<SimpleFactor<T>>,
    ) -> Result<Self> {
        if (lambda_sym.norm() - T::one()).abs() > lit(1e-12) {
            return Err(Error::Domain("Sym point must lie on the unit circle".into()));
        }
        let sd = res.spectral_data(T::zero(), T::zero(), 0);
        let mut gap = sd.dist_to_segment(lambda_sym);
        for g in &factors {
            let l0 = g.lambda0();
            gap = gap.min((lambda_sym - l0).norm()).min((lambda_sym - l0.conj().inv()).norm());
        }
        let radius = lit::<T>(0.02).min(gap * lit(0.25));
        if !(radius > lit(1e-6)) {
            return Err(Error::NearSingular(lambda_sym.into()));
        }
        let stencil = CauchyStencil::new(lambda_sym, radius, 24);
        let center = ClosedForm::new(res, profile, lambda_sym)?;
        let nodes = stencil.nodes.iter().map(|&l| ClosedForm::new(res, profile, l)).collect::<Result<Vec<_>>>()?;
        let zero = ClosedForm::new(res, profile, C::<T>::zero())?;
        let at_factors =
            factors.iter().map(|g| ClosedForm::new(res, profile, g.lambda0())).collect::<Result<Vec<_>>>()?;
        Ok(DelaunaySource { residue: *res, stencil, center, nodes, zero, factors, at_factors })
    }

    /// Dressed `(F(λ_sym), F at the stencil nodes)` and the positive parts' `(0)₁₁` factors.
    fn dressed(&self, x: T, y: T) -> Result<(M2<T>, Vec<M2<T>>, C<T>)> {
        let mut fc = self.center.frame(x, y)?.0;
        let mut fn_: Vec<M2<T>> = self.nodes.iter().map(|cf| cf.frame(x, y).map(|p| p.0)).collect::<Result<_>>()?;
        let mut fl: Vec<M2<T>> = self.at_factors.iter().map(|cf| cf.frame(x, y).map(|p| p.0)).collect::<Result<_>>()?;
        let mut diag = C::<T>::one();
        for (i, g) in self.factors.iter().enumerate() {
            let hf = dressing_partner(g, &fl[i])?;
            diag = diag * hf.eval(C::<T>::zero())?.a;
            fc = dressed_value(g, &hf, &fc, self.center.lambda);
            for (v, &l) in fn_.iter_mut().zip(&self.stencil.nodes) {
                *v = dressed_value(g, &hf, v, l);
            }
            for j in i + 1..self.factors.len() {
                fl[j] = dressed_value(g, &hf, &fl[j], self.factors[j].lambda0());
            }
        }
        Ok((fc, fn_, diag))
    }

    /// `B(x)(0)₁₁` of the undressed frame.
    pub fn delaunay_b0_diag(&self, x: T) -> C<T> {
        self.zero.positive(x).a
    }
}

impl<T: Real> FrameSource<T> for DelaunaySource<'_, T> {
    fn lambda_sym(&self) -> C<T> {
        self.stencil.center
    }

    fn frame(&self, x: T, y: T) -> Result<(M2<T>, M2<T>)> {
        let (f, nodes, _) = self.dressed(x, y)?;
        Ok((f, self.stencil.d_theta(&nodes)))
    }

    fn b0_diag(&self, x: T, y: T) -> Result<C<T>> {
        let base = self.delaunay_b0_diag(x);
        if self.factors.is_empty() {
            return Ok(base);
        }
        Ok(self.dressed(x, y)?.2 * base)
    }

    fn alpha(&self, _x: T, _y: T) -> C<T> {
        self.residue.a
    }
}

/// Frames of a perturbed potential from `Φ = exp(A log z)·P(z)` and a numerical
/// factorization per vertex. Only usable where `Φ` is moderately conditioned.
pub struct PotentialSource<'a, T> {
    pub zap: &'a ZapDecomposition<T>,
    pub r: T,
    pub lambda_sym: C<T>,
    alpha: Box<dyn Fn(C<T>) -> C<T> + Sync + 'a>,
}

impl<'a, T: Real> PotentialSource<'a, T> {
    pub fn new(pot: &'a Potential<T>, zap: &'a ZapDecomposition<T>, r: T, lambda_sym: C<T>) -> Self {
        PotentialSource { zap, r, lambda_sym, alpha: Box::new(move |z| pot.alpha(z)) }
    }

    /// With an explicit `α(z)`.
    pub fn with_alpha<F: Fn(C<T>) -> C<T> + Sync + 'a>(zap: &'a ZapDecomposition<T>, r: T, lambda_sym: C<T>, alpha: F) -> Self {
        PotentialSource { zap, r, lambda_sym, alpha: Box::new(alpha) }
    }

    fn factor(&self, x: T, y: T) -> Result<crate::iwasawa::IwasawaDelta<T>> {
        let e: Vec<M2<T>> =
            self.zap.frame_samples(Complex::new(x, y)).into_iter().map(|p| p - M2::identity()).collect();
        iwasawa_fixed(&e, self.r)
    }
}

impl<T: Real> FrameSource<T> for PotentialSource<'_, T> {
    fn lambda_sym(&self) -> C<T> {
        self.lambda_sym
    }

    fn frame(&self, x: T, y: T) -> Result<(M2<T>, M2<T>)> {
        let d = self.factor(x, y)?;
        let l = self.lambda_sym;
        Ok((d.f.at(l) + M2::identity(), d.f.d_theta().at(l)))
    }

    fn b0_diag(&self, x: T, y: T) -> Result<C<T>> {
        Ok(C::<T>::one() + self.factor(x, y)?.b.coeff(0).a)
    }

    fn alpha(&self, x: T, y: T) -> C<T> {
        (self.alpha)(Complex::new(x, y).exp())
    }
}

/// Sup over a vertex set of `|∂f|/w − 1` for the two directions, with `∂f` from
/// fourth-order central differences at spacing `step`.
pub fn metric_check<T: Real, S: FrameSource<T> + ?Sized>(src: &S, h: T, pts: &[(T, T)], step: T) -> Result<T> {
    let mut worst = T::zero();
    for &(x, y) in pts {
        let v = vertex(src, h, x, y)?;
        let (fx, fy) = richardson_derivatives(src, h, x, y, step)?;
        worst = worst.max((v3_norm(fx) / v.metric - T::one()).abs()).max((v3_norm(fy) / v.metric - T::one()).abs());
    }
    Ok(worst)
}

/// `(∂ₓf, ∂_yf)` by Richardson-extrapolated central differences.
pub fn richardson_derivatives<T: Real, S: FrameSource<T> + ?Sized>(
    src: &S,
    h: T,
    x: T,
    y: T,
    step: T,
) -> Result<(V3<T>, V3<T>)> {
    let p = |x: T, y: T| vertex(src, h, x, y).map(|v| v.point);
    let d = |dx: T, dy: T| -> Result<V3<T>> {
        let c1 = v3_sub(p(x + dx, y + dy)?, p(x - dx, y - dy)?);
        let c2 = v3_sub(p(x + dx + dx, y + dy + dy)?, p(x - dx - dx, y - dy - dy)?);
        // (8 c1 − c2)/(12 step)
        let num = v3_sub(v3_scale(c1, lit(8.0)), c2);
        Ok(v3_scale(num, (lit::<T>(12.0) * step).recip()))
    };
    Ok((d(step, T::zero())?, d(T::zero(), step)?))
}

/// Points of a vertex list, for fitting.
pub fn points_of<T: Real>(vs: &[Vertex<T>]) -> Vec<V3<T>> {
    vs.iter().map(|v| v.point).collect()
}

/// Evaluates vertices in parallel; failures are kept per vertex.
pub fn vertices<T: Real, S: FrameSource<T> + ?Sized>(src: &S, h: T, pts: &[(T, T)]) -> Vec<Result<Vertex<T>>> {
    pts.par_iter().map(|&(x, y)| vertex(src, h, x, y)).collect()
}

/// `n × ∂ₓf` against `∂_yf`: zero for a conformal parametrization with the right orientation.
pub fn orientation_residual<T: Real>(v: &Vertex<T>) -> T {
    v3_norm(v3_sub(v3_cross(v.normal, v.tangents[0]), v.tangents[1])) / v.metric
}
