use cmcloop::delaunay::{tau, DelaunayProfile, DelaunayResidue};
use cmcloop::dressing::SimpleFactor;
use cmcloop::iwasawa::{iwasawa_delta, IwasawaOptions};
use cmcloop::linalg::{rotation_exp, sym_eigen, M2};
use cmcloop::loopcore::{LoopConfig, MatrixLoop};
use cmcloop::scalar::{circle_points, cis, C};
use cmcloop::surface::fit::{fit_rigid, Rigid};
use nalgebra::{DMatrix, Matrix2};
use proptest::prelude::*;

type Z = C<f64>;

fn cplx() -> impl Strategy<Value = Z> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C::new(a, b))
}

fn mat(scale: f64) -> impl Strategy<Value = M2<f64>> {
    (cplx(), cplx(), cplx(), cplx()).prop_map(move |(a, b, c, d)| M2::new(a * scale, b * scale, c * scale, d * scale))
}

fn traceless(scale: f64) -> impl Strategy<Value = M2<f64>> {
    mat(scale).prop_map(|m| {
        let t = m.trace() * 0.5;
        M2::new(m.a - t, m.b, m.c, m.d - t)
    })
}

fn residue() -> impl Strategy<Value = DelaunayResidue<f64>> {
    (0.1..0.45f64, -0.4..0.4f64, -0.1..0.1f64)
        .prop_filter("b away from zero", |(_, b, _)| b.abs() > 0.02)
        .prop_map(|(a, b, c)| DelaunayResidue::new(C::new(a, 0.0), C::new(b, 0.0), c).unwrap())
}

fn dist(x: M2<f64>, y: M2<f64>) -> f64 {
    (x - y).frob() / y.frob().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_matches_dense_exponential(m in mat(2.0)) {
        let n = Matrix2::new(m.a, m.b, m.c, m.d).exp();
        let e = m.exp();
        prop_assert!(dist(e, M2::new(n[(0, 0)], n[(0, 1)], n[(1, 0)], n[(1, 1)])) < 1e-12);
    }

    #[test]
    fn exp_of_traceless_has_unit_determinant(m in traceless(3.0)) {
        prop_assert!((m.exp().det() - C::new(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn symmetric_eigenvalues_match(vals in prop::collection::vec(-2.0..2.0f64, 16)) {
        let mut a = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                a[i * 4 + j] = vals[i * 4 + j] + vals[j * 4 + i];
            }
        }
        let (mut ours, _) = sym_eigen(&a, 4);
        let mut theirs: Vec<f64> = DMatrix::from_row_slice(4, 4, &a).symmetric_eigenvalues().iter().copied().collect();
        ours.sort_by(f64::total_cmp);
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn star_is_an_involution(c0 in mat(1.0), c1 in mat(0.5), c2 in mat(0.5), l in cplx()) {
        let x = MatrixLoop::from_terms(&[(-1, c0), (0, c1), (2, c2)], 1.0);
        let l = if l.norm() < 0.2 { l + 0.5 } else { l };
        prop_assert!(dist(x.star().star().at(l), x.at(l)) < 1e-13);
    }

    #[test]
    fn loop_inverse(x0 in traceless(0.4), x1 in traceless(0.3), x2 in traceless(0.3)) {
        let cfg = LoopConfig::default();
        let phi = |l: Z| (x0 + x1 * l + x2 * l.inv()).exp();
        let (x, _) = MatrixLoop::from_samples(&circle_points(1.0, 256).into_iter().map(phi).collect::<Vec<_>>(), 1.0, 60);
        let prod = x.mul(&x.inv(&cfg).unwrap(), &cfg).unwrap();
        for l in circle_points(1.0, 8) {
            prop_assert!(dist(prod.at(l), M2::identity()) < 1e-9);
        }
    }

    #[test]
    fn simple_factors_are_unimodular(l0 in cplx(), line in (cplx(), cplx()), l in cplx()) {
        prop_assume!(l0.norm() > 0.1 && l0.norm() < 0.95 && line.0.norm() + line.1.norm() > 0.1);
        prop_assume!((l - l0).norm() > 0.05 && l.norm() > 0.05);
        let g = SimpleFactor::normalized(l0, [line.0, line.1]).unwrap();
        let m = g.eval(l).unwrap();
        prop_assert!((m.det() - C::new(1.0, 0.0)).norm() < 1e-9);
        prop_assert!(dist(m * g.eval_inv(l).unwrap(), M2::identity()) < 1e-9);
    }

    #[test]
    fn tau_lies_between_zero_and_re_mu(res in residue(), rad in 0.05..0.98f64, arg in 0.0..std::f64::consts::TAU) {
        let prof = DelaunayProfile::new(&res);
        prop_assume!(prof.is_ok());
        let prof = prof.unwrap();
        let sd = res.spectral_data(0.0, 0.0, 0);
        let l = cis(arg) * rad;
        prop_assume!(sd.dist_to_segment(l) > 1e-2 && !sd.on_zero_ray(l, 1e-2));
        let t = tau(&res, &prof, l).unwrap();
        prop_assert!(t > 0.0 && t <= res.mu(l).re + 1e-8, "τ = {t}, Re μ = {}", res.mu(l).re);
    }

    #[test]
    fn rigid_fit_recovers_motion(w in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), t in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
        let m = Rigid { rotation: rotation_exp([w.0, w.1, w.2]), translation: [t.0, t.1, t.2] };
        let src: Vec<[f64; 3]> = (0..12).map(|i| {
            let s = i as f64;
            [s.cos(), (0.7 * s).sin(), 0.2 * s]
        }).collect();
        let dst: Vec<_> = src.iter().map(|p| m.apply(*p)).collect();
        let (_, resid) = fit_rigid(&src, &dst).unwrap();
        prop_assert!(resid < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn iwasawa_factors_are_unitary_and_positive(x0 in traceless(0.5), x1 in traceless(0.3), xm in traceless(0.3)) {
        let r = 0.6;
        let phi = |l: Z| (xm * l.inv()).exp() * x0.exp() * (x1 * l).exp();
        let d = iwasawa_delta(|m| circle_points(r, m).into_iter().map(|l| phi(l) - M2::identity()).collect(), r, &IwasawaOptions::default()).unwrap();
        prop_assert!(d.recon_residual < 1e-9 && d.unitarity_residual < 1e-9 && d.positivity_residual < 1e-9);
        let b0: M2<f64> = d.b.at(C::new(0.0, 0.0)) + M2::identity();
        prop_assert!(b0.c.norm() < 1e-9 && b0.a.im.abs() < 1e-9 && b0.a.re > 0.0);
    }
}

#[test]
fn small_radius_factorization_stays_finite() {
    let res = DelaunayResidue::new(C::new(0.375, 0.0), C::new(0.125, 0.0), 0.0).unwrap();
    let r = 0.05;
    let e: Vec<M2<f64>> = circle_points(r, 512).into_iter().map(|l| (res.at(l) * C::new(-3.0, 0.4)).exp() - M2::identity()).collect();
    let f = cmcloop::iwasawa::iwasawa_fixed(&e, r).unwrap();
    let b = f.positive();
    for l in circle_points(r, 16) {
        assert!(b.at(l).is_finite());
    }
    assert!(f.recon_residual < 1e-8, "{}", f.recon_residual);
}
