//! Dormand–Prince 5(4) integrator for complex linear systems.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real, C};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step; zero picks one from the interval length.
    pub h0: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        OdeOptions { rtol: lit(1e-11), atol: lit(1e-13), h0: T::zero(), max_steps: 200_000 }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Differences between the 5th and 4th order weights.
const E1: f64 = 35.0 / 384.0 - 5179.0 / 57600.0;
const E3: f64 = 500.0 / 1113.0 - 7571.0 / 16695.0;
const E4: f64 = 125.0 / 192.0 - 393.0 / 640.0;
const E5: f64 = -2187.0 / 6784.0 + 92097.0 / 339200.0;
const E6: f64 = 11.0 / 84.0 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` in place. `post_step` runs after every
/// accepted step and may modify the state (used for determinant renormalization).
pub fn integrate<T, F, P>(
    mut f: F,
    t0: T,
    t1: T,
    y: &mut [C<T>],
    opts: &OdeOptions<T>,
    mut post_step: P,
) -> Result<OdeStats>
where
    T: Real,
    F: FnMut(T, &[C<T>], &mut [C<T>]),
    P: FnMut(T, &mut [C<T>]),
{
    let n = y.len();
    let mut stats = OdeStats::default();
    let span = t1 - t0;
    if span == T::zero() {
        return Ok(stats);
    }
    let dir = span.signum();
    let mut t = t0;
    let mut h = if opts.h0 > T::zero() { opts.h0.min(span.abs()) } else { span.abs() * lit(0.01) };
    let mut k: Vec<Vec<C<T>>> = (0..7).map(|_| vec![C::zero(); n]).collect();
    let mut tmp = vec![C::zero(); n];
    let mut ynew = vec![C::zero(); n];
    f(t, y, &mut k[0]);
    let (l, c2, c3, c4, c5) = (lit::<T>, lit::<T>(C2), lit::<T>(C3), lit::<T>(C4), lit::<T>(C5));
    let hmin = span.abs() * T::epsilon() * lit(16.0);
    while (t1 - t) * dir > T::zero() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Ode(format!("step budget exhausted at t = {t}")));
        }
        let last = (t1 - t).abs() <= h * lit(1.0000001);
        let hs = if last { t1 - t } else { h * dir };
        let stage = |coef: &[(usize, f64)], k: &Vec<Vec<C<T>>>, tmp: &mut Vec<C<T>>, y: &[C<T>]| {
            for i in 0..n {
                let mut s = C::zero();
                for &(j, a) in coef {
                    s = s + k[j][i] * l(a);
                }
                tmp[i] = y[i] + s * hs;
            }
        };
        stage(&[(0, A21)], &k, &mut tmp, y);
        f(t + hs * c2, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &mut tmp, y);
        f(t + hs * c3, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &mut tmp, y);
        f(t + hs * c4, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &mut tmp, y);
        f(t + hs * c5, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &mut tmp, y);
        f(t + hs, &tmp, &mut k[5]);
        stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &k, &mut ynew, y);
        f(t + hs, &ynew, &mut k[6]);
        let mut err = T::zero();
        for i in 0..n {
            let e = (k[0][i] * l(E1) + k[2][i] * l(E3) + k[3][i] * l(E4) + k[4][i] * l(E5) + k[5][i] * l(E6) + k[6][i] * l(E7)) * hs;
            let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
            err = err.max(e.norm() / sc);
        }
        if !err.is_finite() {
            return Err(Error::Ode(format!("non-finite state at t = {t}")));
        }
        if err <= T::one() {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&ynew);
            post_step(t, y);
            stats.accepted += 1;
            // FSAL: the last stage is the first stage of the next step unless the state was modified.
            f(t, y, &mut k[0]);
        } else {
            stats.rejected += 1;
        }
        let fac = if err == T::zero() { l(5.0) } else { (l(0.9) * err.powf(l(-0.2))).min(l(5.0)).max(l(0.2)) };
        h = hs.abs() * fac;
        if h < hmin {
            return Err(Error::Ode(format!("step size collapsed at t = {t}")));
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    #[test]
    fn exponential_growth_and_rotation() {
        let lam: C<f64> = cplx(-0.3, 2.0);
        let mut y = vec![cplx(1.0, 0.0)];
        integrate(|_, y, dy| dy[0] = lam * y[0], 0.0, 3.0, &mut y, &OdeOptions::default(), |_, _| {}).unwrap();
        assert!((y[0] - (lam * 3.0).exp()).norm() < 1e-10);
    }

    #[test]
    fn backward_integration() {
        let mut y = vec![cplx(1.0, 0.0)];
        integrate(|t: f64, _, dy| dy[0] = cplx(t.cos(), 0.0), 2.0, -1.0, &mut y, &OdeOptions::default(), |_, _| {})
            .unwrap();
        let exact = 1.0 + (-1.0f64).sin() - 2.0f64.sin();
        assert!((y[0].re - exact).abs() < 1e-11);
    }
}
