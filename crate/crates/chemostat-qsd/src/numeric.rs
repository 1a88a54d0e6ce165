//! Internal numerical kernels: bisection, adaptive Simpson quadrature and an
//! embedded Dormand-Prince 5(4) integrator for small ODE systems.

use crate::error::{Error, Result};

/// Bisection on a bracketing interval. `f(lo)` and `f(hi)` must have opposite
/// signs (a zero endpoint is returned directly). Iterates until the interval
/// collapses to floating-point resolution.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Numeric(format!(
            "bisection bracket [{lo}, {hi}] does not straddle a root (f = {flo}, {fhi})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval is below f64 resolution
        }
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.is_nan() {
            return Err(Error::Numeric(format!("bisection objective returned NaN at {mid}")));
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tolerances for the embedded Runge-Kutta integrator.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OdeTol {
    pub abs: f64,
    pub rel: f64,
    pub max_step: f64,
}

/// Dormand-Prince 5(4) with adaptive step size. Integrates `y' = f(t, y)`
/// from `t0` to `t1 >= t0` and returns the state at `t1`.
pub(crate) fn integrate<const N: usize, F>(f: &F, t0: f64, y0: [f64; N], t1: f64, tol: &OdeTol) -> Result<[f64; N]>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if !(t1 >= t0) {
        return Err(Error::Domain(format!("integration span [{t0}, {t1}] is reversed")));
    }
    if t1 == t0 {
        return Ok(y0);
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);

    // Crude initial step from the local derivative scale.
    let mut h = {
        let mut d0: f64 = 0.0;
        let mut d1: f64 = 0.0;
        for i in 0..N {
            let sc = tol.abs + tol.rel * y[i].abs();
            d0 = d0.max((y[i] / sc).abs());
            d1 = d1.max((k1[i] / sc).abs());
        }
        let guess = if d1 > 1e-12 { 0.01 * (1.0 + d0) / d1 } else { span };
        guess.min(span).min(tol.max_step)
    };

    let mut steps: u64 = 0;
    while t < t1 {
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::Numeric(format!(
                "ODE integrator exceeded step budget on [{t0}, {t1}] (t = {t}, h = {h})"
            )));
        }
        h = h.min(t1 - t).min(tol.max_step);

        let k2 = stage(f, t, &y, h, 0.2, &[(0.2, &k1)]);
        let k3 = stage(f, t, &y, h, 0.3, &[(3.0 / 40.0, &k1), (9.0 / 40.0, &k2)]);
        let k4 = stage(
            f,
            t,
            &y,
            h,
            0.8,
            &[(44.0 / 45.0, &k1), (-56.0 / 15.0, &k2), (32.0 / 9.0, &k3)],
        );
        let k5 = stage(
            f,
            t,
            &y,
            h,
            8.0 / 9.0,
            &[
                (19372.0 / 6561.0, &k1),
                (-25360.0 / 2187.0, &k2),
                (64448.0 / 6561.0, &k3),
                (-212.0 / 729.0, &k4),
            ],
        );
        let k6 = stage(
            f,
            t,
            &y,
            h,
            1.0,
            &[
                (9017.0 / 3168.0, &k1),
                (-355.0 / 33.0, &k2),
                (46732.0 / 5247.0, &k3),
                (49.0 / 176.0, &k4),
                (-5103.0 / 18656.0, &k5),
            ],
        );
        // 5th-order solution (also the FSAL stage location).
        let mut y5 = y;
        for i in 0..N {
            y5[i] += h
                * (35.0 / 384.0 * k1[i] + 500.0 / 1113.0 * k3[i] + 125.0 / 192.0 * k4[i]
                    - 2187.0 / 6784.0 * k5[i]
                    + 11.0 / 84.0 * k6[i]);
        }
        let k7 = f(t + h, &y5);
        // Embedded 4th-order error estimate.
        let mut err_norm: f64 = 0.0;
        for i in 0..N {
            let e = h
                * ((35.0 / 384.0 - 5179.0 / 57600.0) * k1[i]
                    + (500.0 / 1113.0 - 7571.0 / 16695.0) * k3[i]
                    + (125.0 / 192.0 - 393.0 / 640.0) * k4[i]
                    + (-2187.0 / 6784.0 + 92097.0 / 339200.0) * k5[i]
                    + (11.0 / 84.0 - 187.0 / 2100.0) * k6[i]
                    - 1.0 / 40.0 * k7[i]);
            let sc = tol.abs + tol.rel * y[i].abs().max(y5[i].abs());
            err_norm = err_norm.max((e / sc).abs());
        }

        if err_norm <= 1.0 {
            t += h;
            y = y5;
            k1 = k7; // FSAL
        }
        let factor = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
        if !(h > 0.0) || h < 1e-300 {
            return Err(Error::Numeric(format!("ODE step size underflow at t = {t}")));
        }
    }
    Ok(y)
}

#[inline]
fn stage<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64, c: f64, a: &[(f64, &[f64; N])]) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut yt = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (w, k) in a {
            acc += w * k[i];
        }
        yt[i] += h * acc;
    }
    f(t + c * h, &yt)
}
