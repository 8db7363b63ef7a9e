//! Float helpers backed by `libm` so results do not depend on the platform libm.

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

/// True when `x` is an integer multiple of `unit` (within float noise).
pub(crate) fn is_multiple_of(x: f64, unit: f64) -> bool {
    let k = round(x / unit);
    k >= 1.0 && libm::fabs(x - k * unit) <= 1e-9 * unit.max(1.0)
}

/// Number of whole `unit` steps in `x`; caller has checked `is_multiple_of`.
pub(crate) fn steps_of(x: f64, unit: f64) -> u32 {
    round(x / unit) as u32
}

/// Euclidean remainder: result in `[0, m)` for `m > 0`.
pub(crate) fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = libm::fmod(x, m);
    if r < 0.0 {
        r + m
    } else {
        r
    }
}
