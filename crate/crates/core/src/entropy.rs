//! The relative entropy `F(s) = s log s - s + 1`, its reverse `R(s) = s F(1/s)`,
//! their Legendre conjugates, and the marginal divergence functionals.

use crate::error::{Error, Result};
use crate::measure::{density_ratios, DiscreteMeasure};

/// Recession slope of `F`: `lim F(s)/s = +inf`.
pub const F_INF_SLOPE: f64 = f64::INFINITY;

/// Recession slope of `R`, equal to `F(0) = 1`. Not the value `R(0)`.
pub const R_INF_SLOPE: f64 = 1.0;

/// Pointwise tolerance for the hard equality functional.
pub const HARD_EQUALITY_TOL: f64 = 1e-12;

/// Marginal penalty family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyKind {
    /// Relative entropy with `F(s) = s log s - s + 1`.
    Kl,
    /// Indicator of `{1}`: zero iff the marginal matches the reference.
    HardEquality,
}

#[inline]
pub(crate) fn f_unchecked(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if s.is_infinite() {
        f64::INFINITY
    } else {
        s * s.ln() - s + 1.0
    }
}

pub fn f_entropy(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(s));
    }
    Ok(f_unchecked(s))
}

/// `R(s) = s - log s - 1`, with `R(0) = F'_inf = +inf`.
pub fn r_entropy(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(s));
    }
    if s == 0.0 {
        return Ok(F_INF_SLOPE);
    }
    Ok(r_unchecked(s))
}

#[inline]
pub(crate) fn r_unchecked(s: f64) -> f64 {
    if s == 0.0 {
        f64::INFINITY
    } else {
        s - s.ln() - 1.0
    }
}

/// `F*(phi) = exp(phi) - 1`; overflows to `+inf`.
pub fn f_conjugate(phi: f64) -> f64 {
    phi.exp_m1()
}

/// `R*(psi) = -log(1 - psi)` on `psi < 1`, `+inf` otherwise.
pub fn r_conjugate(psi: f64) -> f64 {
    if psi >= 1.0 {
        f64::INFINITY
    } else {
        -(-psi).ln_1p()
    }
}

/// `sum_x reference F(marginal / reference)` over vectors on a common index set.
/// Mass of `marginal` where `reference` vanishes costs `+inf`.
pub(crate) fn kl_vectors(marginal: &[f64], reference: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&g, &m) in marginal.iter().zip(reference) {
        if m > 0.0 {
            acc += m * f_unchecked(g / m);
        } else if g > 0.0 {
            return f64::INFINITY;
        }
    }
    acc
}

pub(crate) fn hard_vectors(marginal: &[f64], reference: &[f64]) -> f64 {
    let equal = marginal
        .iter()
        .zip(reference)
        .all(|(g, m)| (g - m).abs() <= HARD_EQUALITY_TOL);
    if equal {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Marginal divergence `F(marginal | reference)` of the requested kind.
pub fn divergence(
    marginal: &DiscreteMeasure,
    reference: &DiscreteMeasure,
    kind: EntropyKind,
) -> Result<f64> {
    if !marginal.same_grid(reference) {
        return Err(Error::GridMismatch);
    }
    match kind {
        EntropyKind::Kl => {
            let dec = density_ratios(marginal, reference)?;
            if dec.gamma_perp_mass > 0.0 {
                return Ok(F_INF_SLOPE);
            }
            Ok(dec
                .sigma
                .iter()
                .zip(reference.masses())
                .filter_map(|(s, &m)| s.map(|s| m * f_unchecked(s)))
                .sum::<f64>())
        }
        EntropyKind::HardEquality => Ok(hard_vectors(marginal.masses(), reference.masses())),
    }
}
