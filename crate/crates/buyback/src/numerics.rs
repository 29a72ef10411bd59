//! Closed-form numeric kernel: Lambert W branch −1, competitive-ratio
//! formulas, generalized exponential penalties and their exact integrals over
//! step quantile functions, and the single-resource canonical allocation.

use serde::{Deserialize, Serialize};

use crate::model::AllocationDistribution;
use crate::{Error, Result};

use std::f64::consts::E;

/// Buyback factor at which the general (fractional) ratio switches branch.
pub const GENERAL_BREAKPOINT: f64 = (E - 2.0) / 2.0;

/// Buyback factor at which the deterministic integral ratio switches branch.
pub const DETERMINISTIC_BREAKPOINT: f64 = 1.0 / 3.0;

/// Lambert W, branch −1: the solution `w <= -1` of `w·e^w = x` for
/// `x ∈ [-1/e, 0)`.
///
/// Seeded with the asymptotic expansion `ln(-x) - ln(-ln(-x))` (or a branch
/// point series when `x` is within ~1e-6 of `-1/e`), then polished with
/// Halley iteration to a relative residual of 1e-13.
pub fn lambert_w_m1(x: f64) -> Result<f64> {
    if !x.is_finite() || x >= 0.0 {
        return Err(Error::Domain(format!("lambert_w_m1: x={x} not in [-1/e, 0)")));
    }
    let t = E * x + 1.0; // distance from the branch point, scaled
    if t < -1e-9 {
        return Err(Error::Domain(format!("lambert_w_m1: x={x} below -1/e")));
    }
    if t <= 0.0 {
        // At (or within rounding of) the branch point.
        return Ok(-1.0);
    }
    let mut w = if t < 1e-6 {
        // series around the branch point: w = -1 - p - p^2/3 - ..., p = sqrt(2t)
        let p = (2.0 * t).sqrt();
        -1.0 - p - p * p / 3.0
    } else {
        let l1 = (-x).ln();
        let mut guess = l1 - (-l1).ln();
        if guess >= -1.0 {
            guess = -1.0 - 1e-9;
        }
        guess
    };
    for _ in 0..100 {
        let ew = w.exp();
        if ew == 0.0 {
            // |x| below ~e^-700: the asymptotic seed is the best f64 answer,
            // and the residual cannot be evaluated without underflow
            break;
        }
        let f = w * ew - x;
        if f.abs() <= 1e-13 * x.abs() {
            break;
        }
        let fp = ew * (w + 1.0);
        let fpp = ew * (w + 2.0);
        let denom = fp - f * fpp / (2.0 * fp);
        let step = if denom != 0.0 { f / denom } else { f / fp };
        if !step.is_finite() {
            break;
        }
        let mut next = w - step;
        if next >= -1.0 {
            next = -1.0 - 0.5 * (w + 1.0).abs();
        }
        if next == w {
            break;
        }
        w = next;
    }
    Ok(w.min(-1.0))
}

/// Optimal competitive ratio of general (fractional) algorithms as a function
/// of the buyback factor.
pub fn gamma_general(f: f64) -> f64 {
    assert!(f >= 0.0, "buyback factor must be nonnegative");
    if f <= GENERAL_BREAKPOINT {
        E / (E - (1.0 + f))
    } else {
        -lambert_w_m1(-1.0 / (E * (1.0 + f))).expect("argument in range for f >= 0")
    }
}

/// Optimal competitive ratio of deterministic integral algorithms.
pub fn gamma_deterministic(f: f64) -> f64 {
    assert!(f >= 0.0, "buyback factor must be nonnegative");
    if f <= DETERMINISTIC_BREAKPOINT {
        2.0 / (1.0 - f)
    } else {
        1.0 + 2.0 * f + 2.0 * (f * (1.0 + f)).sqrt()
    }
}

/// The canonical-allocation parameter `ŵ = -(1+f)·W₋₁(-1/(e(1+f)))` that
/// minimizes `ŵ·ln(ŵ)/(ŵ-1-f)`.
pub fn w_hat_star(f: f64) -> f64 {
    assert!(f >= 0.0, "buyback factor must be nonnegative");
    let w = lambert_w_m1(-1.0 / (E * (1.0 + f))).expect("argument in range for f >= 0");
    (-(1.0 + f) * w).max(1.0)
}

/// Generalized exponential penalty `Ψ(y) = τ(λ^y − 1)` with derivative
/// `ψ(y) = τ·ln(λ)·λ^y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub tau: f64,
}

impl PenaltySpec {
    pub fn new(lambda: f64, tau: f64) -> Self {
        assert!(lambda >= 1.0 && tau >= 0.0);
        PenaltySpec { lambda, tau }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.tau * (self.lambda.powf(y) - 1.0)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.tau * self.lambda.ln() * self.lambda.powf(y)
    }

    pub fn ln_lambda(&self) -> f64 {
        self.lambda.ln()
    }
}

/// Penalty parameters for the small buyback regime `f <= (e-2)/2`:
/// `λ = e`, `τ = (1+f)/(e-(1+f))`.
pub fn small_f_penalty(f: f64) -> PenaltySpec {
    assert!((0.0..=GENERAL_BREAKPOINT + 1e-12).contains(&f), "small-f penalty needs f <= (e-2)/2");
    PenaltySpec { lambda: E, tau: (1.0 + f) / (E - (1.0 + f)) }
}

/// Penalty parameters for the large buyback regime `f >= (e-2)/2`:
/// `λ = ŵ*(f)`, `τ = 1/ln(ŵ*(f))`.
pub fn large_f_penalty(f: f64) -> PenaltySpec {
    assert!(f >= GENERAL_BREAKPOINT - 1e-12, "large-f penalty needs f >= (e-2)/2");
    let w_hat = w_hat_star(f);
    PenaltySpec { lambda: w_hat, tau: 1.0 / w_hat.ln() }
}

/// The ratio-optimal penalty parameterization for a buyback factor.
pub fn matching_penalty(f: f64) -> PenaltySpec {
    if f <= GENERAL_BREAKPOINT {
        small_f_penalty(f)
    } else {
        large_f_penalty(f)
    }
}

/// Penalty scalar of the optimal deterministic integral rule.
pub fn deterministic_tau(f: f64) -> f64 {
    assert!(f >= 0.0, "buyback factor must be nonnegative");
    if f <= DETERMINISTIC_BREAKPOINT {
        (1.0 + f) / (1.0 - f)
    } else {
        1.0 + f + (f * (1.0 + f)).sqrt()
    }
}

/// Iterates the step segments `(lo, hi, level)` of the quantile function of a
/// distribution: on `(lo, hi]` the quantile equals `level` (the suffix mass
/// strictly above `lo`).
fn segments(dist: &AllocationDistribution) -> Vec<(f64, f64, f64)> {
    let atoms: Vec<_> = dist.atoms().collect();
    let mut suffix = vec![0.0; atoms.len() + 1];
    for k in (0..atoms.len()).rev() {
        suffix[k] = suffix[k + 1] + atoms[k].mass;
    }
    let mut out = Vec::with_capacity(atoms.len());
    let mut lo = 0.0;
    for (k, atom) in atoms.iter().enumerate() {
        if atom.weight > lo {
            out.push((lo, atom.weight, suffix[k]));
            lo = atom.weight;
        }
    }
    out
}

/// Offline dual value `β = ∫ Ψ(y(w)) dw` in exact closed form over the step
/// quantile of `dist`.
pub fn beta_value(dist: &AllocationDistribution, pen: &PenaltySpec) -> f64 {
    segments(dist)
        .iter()
        .map(|&(lo, hi, level)| (hi - lo) * pen.value(level))
        .sum()
}

/// `∫ Ψ(y(w)) dw` for an arbitrary penalty function; the generic hook used to
/// exercise penalty-agnostic behavior of the single-resource algorithm.
pub fn beta_value_generic(dist: &AllocationDistribution, psi: impl Fn(f64) -> f64) -> f64 {
    segments(dist)
        .iter()
        .map(|&(lo, hi, level)| (hi - lo) * psi(level))
        .sum()
}

/// Exact `∫_a^b ψ(y(w)) dw` over the step quantile of `dist`. Above the top
/// atom the quantile is zero, where `ψ(0) = τ·ln λ` still contributes.
pub fn psi_integral(dist: &AllocationDistribution, pen: &PenaltySpec, a: f64, b: f64) -> f64 {
    assert!(0.0 <= a && a <= b, "integration bounds must satisfy 0 <= a <= b");
    if a == b {
        return 0.0;
    }
    let mut total = 0.0;
    let mut covered = a;
    for (lo, hi, level) in segments(dist) {
        if hi <= a {
            continue;
        }
        if lo >= b {
            break;
        }
        let left = lo.max(a);
        let right = hi.min(b);
        if right > left {
            total += (right - left) * pen.derivative(level);
            covered = right;
        }
    }
    if b > covered {
        total += (b - covered) * pen.derivative(0.0);
    }
    total
}

/// The canonical allocation density `x̂(w) = 1/(w·ln ŵ)`, parameterized by
/// `ŵ >= 1`. Following it after processing the weight continuum up to `w'`
/// leaves holdings supported on `[w'/ŵ, w']`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalAllocation {
    pub w_hat: f64,
}

impl CanonicalAllocation {
    pub fn new(w_hat: f64) -> Self {
        assert!(w_hat >= 1.0);
        CanonicalAllocation { w_hat }
    }

    /// Optimal parameterization for buyback factor `f`.
    pub fn for_factor(f: f64) -> Self {
        CanonicalAllocation { w_hat: w_hat_star(f) }
    }

    pub fn density(&self, w: f64) -> f64 {
        1.0 / (w * self.w_hat.ln())
    }

    /// Quantile `ŷ(w)`: 1 below 1, `1 - ln(w)/ln(ŵ)` on `[1, ŵ]`, 0 above.
    pub fn quantile(&self, w: f64) -> f64 {
        if w <= 1.0 {
            1.0
        } else if w >= self.w_hat {
            0.0
        } else {
            1.0 - w.ln() / self.w_hat.ln()
        }
    }
}

/// Exact profit of the canonical allocation on a weight continuum truncated
/// at `w_max`: `w_max·(ŵ-1-f)/(ŵ·ln ŵ)`, degrading to `w_max` as `ŵ → 1`
/// (the `f = 0` keep-the-max limit).
pub fn canonical_profit(f: f64, w_max: f64) -> f64 {
    assert!(w_max >= 0.0);
    let w_hat = w_hat_star(f);
    if w_hat <= 1.0 + 1e-12 {
        return w_max;
    }
    w_max * (w_hat - 1.0 - f) / (w_hat * w_hat.ln())
}
