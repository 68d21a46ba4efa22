//! The penalty calibration function and its inverse.
//!
//! `dkhi(D, N, x) = E[(X_D − x·X_N/N)₊] / D` for independent chi-square
//! variables `X_D, X_N`; `edkhi` inverts it in `x` at a given level `q`.
//! The level arrives as `−ln q` and may correspond to values far below the
//! smallest positive double (complexity weights reach `e^{-10⁴}` on large
//! trees), so everything runs in log space: the conditional positive-part
//! moment has a cancellation-free asymptotic expansion for large arguments,
//! and the mixing integral over `W = X_N/N` is a log-sum-exp Simpson rule
//! on a logarithmic grid (the integrand's peak has O(1) width there no
//! matter how extreme `x` gets).

use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Inversion tolerance: `|dkhi(x) − q| ≤ q·EDKHI_LOG_TOL` at the returned x.
pub const EDKHI_LOG_TOL: f64 = 1e-10;

/// Survival function of a chi-square with `df` degrees of freedom.
pub fn chi2_survival(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

/// `ln E[(X_D − c)₊] − ln D`, the log positive-part moment of a chi-square
/// scaled by its mean.
///
/// Moderate `c` uses the exact identity `E[(X_D − c)₊] = D·Q_{D+2}(c) −
/// c·Q_D(c)`. Once `z = c/2` dwarfs `ν = D/2`, the two survival terms agree
/// to within `O(1/z)` and the subtraction dies; substituting the divergent
/// series `Γ(a,z) = z^{a−1}e^{−z}[1 + (a−1)/z + …]` for both terms cancels
/// them symbolically first:
///
/// ```text
/// E[(X_D − c)₊] = (2 z^{ν−1} e^{−z} / Γ(ν)) · Σ_{k≥0} (k+1)·(ν−1)⋯(ν−k)/z^k
/// ```
fn ln_positive_part_moment(d: f64, c: f64) -> f64 {
    debug_assert!(d > 0.0 && c >= 0.0);
    if c == 0.0 {
        return 0.0; // E[X_D]/D = 1
    }
    let nu = d / 2.0;
    let z = c / 2.0;
    if z < 4.0 * nu + 60.0 {
        let direct = chi2_survival(d + 2.0, c) - (c / d) * chi2_survival(d, c);
        if direct > 1e-280 {
            return direct.ln();
        }
        // fall through to the series; by construction z is already large
        // relative to ν when the direct value underflows this far.
    }
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    let mut prod = 1.0f64; // (ν−1)(ν−2)⋯(ν−k)
    for k in 1..200 {
        prod *= nu - k as f64;
        let next = (k + 1) as f64 * prod / z.powi(k as i32);
        if next.abs() >= term.abs() {
            break; // divergent tail reached: truncate at the smallest term
        }
        sum += next;
        term = next;
        if next.abs() < 1e-16 * sum.abs() {
            break;
        }
    }
    std::f64::consts::LN_2 + (nu - 1.0) * z.ln() - z - ln_gamma(nu) + sum.max(1e-300).ln() - d.ln()
}

/// `ln f_W(w)` for `W = X_N / N`.
fn ln_density_scaled_chi2(n: f64, w: f64) -> f64 {
    let nu = n / 2.0;
    n.ln() + (nu - 1.0) * (n * w).ln() - n * w / 2.0 - nu * std::f64::consts::LN_2 - ln_gamma(nu)
}

/// `ln dkhi(d, n, x)` by log-sum-exp Simpson quadrature over `u = ln w`.
pub fn ln_dkhi(d: f64, n: f64, x: f64) -> Result<f64> {
    if !(d > 0.0) || !(n >= 2.0) || !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidInput(format!(
            "dkhi needs d > 0, n ≥ 2, x ≥ 0 (got d={d}, n={n}, x={x})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0); // dkhi = 1 exactly
    }
    // Integration window: below w_min the scaled-chi-square mass is
    // negligible on every scale the integral can take; above w_max its own
    // tail has died.
    let w_min = (1e-12f64).min(0.01 * (d + n) / (x + n));
    let mut w_max = 2.0f64;
    while chi2_survival(n, n * w_max) > 1e-30 && w_max < 1e6 {
        w_max *= 2.0;
    }
    let (a, b) = (w_min.ln(), w_max.ln());
    let ln_g = |u: f64| -> f64 {
        let w = u.exp();
        ln_positive_part_moment(d, x * w) + ln_density_scaled_chi2(n, w) + u
    };
    let mut intervals = 512usize;
    let mut last = f64::NAN;
    loop {
        // Simpson weights 1,4,2,…,4,1 over `intervals` panels.
        let h = (b - a) / intervals as f64;
        let mut vals = Vec::with_capacity(intervals + 1);
        let mut max_v = f64::NEG_INFINITY;
        for i in 0..=intervals {
            let coeff: f64 = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = ln_g(a + h * i as f64) + coeff.ln();
            if v > max_v {
                max_v = v;
            }
            vals.push(v);
        }
        if max_v == f64::NEG_INFINITY {
            return Err(Error::QuadratureFailure(format!(
                "integrand vanished everywhere for d={d}, n={n}, x={x}"
            )));
        }
        let sum: f64 = vals.iter().map(|&v| (v - max_v).exp()).sum();
        let ln_s = max_v + sum.ln() + (h / 3.0).ln();
        if (ln_s - last).abs() < 1e-10 {
            return Ok(ln_s.min(0.0)); // dkhi ≤ 1 by definition
        }
        last = ln_s;
        intervals *= 2;
        if intervals > (1 << 17) {
            return Err(Error::QuadratureFailure(format!(
                "no convergence after {intervals} panels for d={d}, n={n}, x={x}"
            )));
        }
    }
}

/// `dkhi(d, n, x)`; exact 1 at x = 0, may underflow to 0 for extreme x.
pub fn dkhi(d: f64, n: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(ln_dkhi(d, n, x)?.exp())
}

/// Inverse of [`dkhi`] in `x` at level `q = e^{−minus_ln_q}`: the unique
/// `x ≥ 0` with `dkhi(d, n, x) = q`. Levels far beyond floating-point range
/// are fine — only the logarithm is ever formed.
pub fn edkhi_neg_log(d: f64, n: f64, minus_ln_q: f64) -> Result<f64> {
    if !(minus_ln_q > 0.0) {
        return Ok(0.0); // q ≥ 1: dkhi(0) = 1 already reaches it
    }
    let target = -minus_ln_q; // ln q
    let f = |ln_x: f64| -> Result<f64> { Ok(ln_dkhi(d, n, ln_x.exp())? - target) };
    // Expand a bracket around ln x = 0, keeping f(lo) > 0 ≥ f(hi).
    let mut lo = 0.0f64; // ln x
    let mut hi = 0.0f64;
    let f0 = f(0.0)?;
    if f0 > 0.0 {
        let mut expanded = false;
        for _ in 0..200 {
            hi += 1.5;
            if f(hi)? <= 0.0 {
                expanded = true;
                break;
            }
            lo = hi;
        }
        if !expanded {
            return Err(Error::RootFindingFailure(format!(
                "bracket expansion failed upward at level {minus_ln_q}"
            )));
        }
    } else {
        let mut expanded = false;
        for _ in 0..200 {
            lo -= 1.5;
            if f(lo)? >= 0.0 {
                expanded = true;
                break;
            }
            hi = lo;
        }
        if !expanded {
            return Err(Error::RootFindingFailure(format!(
                "bracket expansion failed downward at level {minus_ln_q}"
            )));
        }
    }
    // Bisection on ln x (f is strictly decreasing).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= EDKHI_LOG_TOL || (hi - lo) < 1e-14 {
            return Ok(mid.exp());
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::RootFindingFailure(format!(
        "bisection exhausted its budget at level {minus_ln_q}"
    )))
}

/// Inverse of [`dkhi`] at a representable level `q ∈ (0, 1)`.
pub fn edkhi(d: f64, n: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "edkhi level must lie in (0,1), got {q}"
        )));
    }
    edkhi_neg_log(d, n, -q.ln())
}
