//! Standard normal density and distribution function.
//!
//! `erfc` comes from the all-positive-term power series of `erf` below
//! `x = 0.75`, where `1 - erf` loses at most two bits, and from the Laplace
//! continued fraction above it. The continued fraction carries the tail in
//! relative terms, so Φ stays within a few ulps everywhere and `ln Φ` is
//! usable far into the lower tail where Φ itself underflows.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_SQRT_PI};

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const CF_SWITCH: f64 = 0.75;
const MAX_TERMS: usize = 10_000;

/// `erf(x)` for `0 <= x < CF_SWITCH` via `2/√π e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`.
fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let two_x2 = 2.0 * x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..MAX_TERMS {
        term *= two_x2 / (2 * n + 1) as f64;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x * x).exp() * sum
}

/// Denominator `g(x)` of `erfc(x) = e^{-x²} / (√π g(x))`, where
/// `g(x) = x + (1/2)/(x + 1/(x + (3/2)/(x + …)))`. Modified Lentz.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..MAX_TERMS {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// Complementary error function.
#[must_use]
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < CF_SWITCH {
        1.0 - erf_series(x)
    } else {
        (-x * x).exp() / (erfc_continued_fraction(x) * std::f64::consts::PI.sqrt())
    }
}

/// `ln erfc(x)` for `x >= 0`, finite even where `erfc` underflows.
fn ln_erfc_nonneg(x: f64) -> f64 {
    if x < CF_SWITCH {
        (1.0 - erf_series(x)).ln()
    } else {
        -x * x - erfc_continued_fraction(x).ln() - LN_SQRT_PI
    }
}

/// Standard normal density φ(z).
#[inline]
#[must_use]
pub fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `ln φ(z)`.
#[inline]
#[must_use]
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal distribution function Φ(z).
#[must_use]
pub fn cdf(z: f64) -> f64 {
    let x = -z * FRAC_1_SQRT_2;
    if x >= 0.0 {
        0.5 * erfc(x)
    } else {
        1.0 - 0.5 * erfc(-x)
    }
}

/// `ln Φ(z)`.
#[must_use]
pub fn ln_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let x = -z * FRAC_1_SQRT_2;
    if x >= 0.0 {
        -std::f64::consts::LN_2 + ln_erfc_nonneg(x)
    } else {
        (-0.5 * erfc(-x)).ln_1p()
    }
}

/// Inverse Mills ratio φ(u)/Φ(u).
#[must_use]
pub fn inverse_mills(u: f64) -> f64 {
    (ln_pdf(u) - ln_cdf(u)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ at 40 significant digits, rounded to 17.
    const REFERENCE: [(f64, f64); 62] = [
        (-37.0, 5.7255712225245768e-300),
        (-36.25, 4.9685065965404017e-288),
        (-35.5, 2.4576915406619369e-276),
        (-34.75, 6.9299675537404224e-265),
        (-34.0, 1.1138987855743794e-253),
        (-33.25, 1.0206571898843917e-242),
        (-32.5, 5.3314243596788041e-232),
        (-31.75, 1.5876179359245268e-221),
        (-31.0, 2.6952500812005001e-211),
        (-30.25, 2.6086402857412605e-201),
        (-29.5, 1.4394745522291792e-191),
        (-28.75, 4.5287883538797329e-182),
        (-28.0, 8.1238694696594266e-173),
        (-27.25, 8.3092637993474246e-164),
        (-26.5, 4.8461626603033203e-155),
        (-25.75, 1.6117135146044352e-146),
        (-25.0, 3.0566967063825609e-138),
        (-24.25, 3.3060813584979605e-130),
        (-23.5, 2.0393675632499762e-122),
        (-22.75, 7.1750456716690301e-115),
        (-22.0, 1.439892435145079e-107),
        (-21.25, 1.6483280423162501e-100),
        (-20.5, 1.076467325879096e-93),
        (-19.75, 4.010891763113703e-87),
        (-19.0, 8.5272239526309765e-81),
        (-18.25, 1.0345463677570101e-74),
        (-17.5, 7.1634587662350358e-69),
        (-16.75, 2.8313142815440512e-63),
        (-16.0, 6.3887544005380873e-58),
        (-15.25, 8.2316562905314156e-53),
        (-14.5, 6.0574947644152208e-48),
        (-13.75, 2.546476315973957e-43),
        (-13.0, 6.1171643995498797e-39),
        (-12.25, 8.3997960636334177e-35),
        (-11.5, 6.5957714461136751e-31),
        (-10.75, 2.9630808780943586e-27),
        (-10.0, 7.6198530241605261e-24),
        (-9.25, 1.1224633591327983e-20),
        (-8.5, 9.4795348222033184e-18),
        (-7.75, 4.5946274357785955e-15),
        (-7.0, 1.279812543885835e-12),
        (-6.25, 2.0522634252189389e-10),
        (-5.5, 1.8989562465887719e-8),
        (-4.75, 1.0170832425687032e-6),
        (-4.0, 3.1671241833119921e-5),
        (-3.25, 5.7702504239076704e-4),
        (-2.5, 6.2096653257761352e-3),
        (-1.75, 4.005915686381709e-2),
        (-1.0, 1.5865525393145705e-1),
        (-0.25, 4.0129367431707628e-1),
        (0.5, 6.914624612740131e-1),
        (1.25, 8.9435022633314474e-1),
        (2.0, 9.7724986805182079e-1),
        (2.75, 9.9702023676494544e-1),
        (3.5, 9.9976737092096447e-1),
        (4.25, 9.9998931147422507e-1),
        (5.0, 9.9999971334842812e-1),
        (5.75, 9.9999999553782755e-1),
        (6.5, 9.9999999995983999e-1),
        (7.25, 9.9999999999979161e-1),
        (8.0, 9.9999999999999938e-1),
        (8.75, 1.0),
    ];

    #[test]
    fn matches_reference_values() {
        assert_eq!(cdf(0.0), 0.5);
        for (z, expected) in REFERENCE {
            let got = cdf(z);
            // exp(-z²/2) amplifies argument rounding by about z².
            let tol = 2e-15 * (1.0 + z * z);
            assert!(
                ((got - expected) / expected).abs() < tol,
                "Φ({z}) = {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn agrees_with_statrs_erfc() {
        let mut z = -37.0;
        while z <= 9.0 {
            let oracle = 0.5 * statrs::function::erf::erfc(-z * FRAC_1_SQRT_2);
            let got = cdf(z);
            assert!((got - oracle).abs() < 1e-10, "z = {z}: {got} vs {oracle}");
            // statrs erfc is good to roughly 1e-9 relative; the reference values
            // above are the tight check.
            if oracle > 1e-300 {
                assert!(
                    ((got - oracle) / oracle).abs() < 1e-8,
                    "relative error at z = {z}: {got} vs {oracle}"
                );
            }
            z += 0.0137;
        }
    }

    #[test]
    fn log_cdf_survives_underflow() {
        // Mills-ratio asymptotics: ln Φ(z) ≈ ln φ(z) - ln|z| for z → -∞.
        let z = -60.0_f64;
        let asymptotic = ln_pdf(z) - (-z).ln() + (-1.0 / (z * z)).ln_1p();
        assert!((ln_cdf(z) - asymptotic).abs() < 1e-6);
        assert!(ln_cdf(-1e6).is_finite());
        assert!(ln_cdf(40.0) == 0.0 || ln_cdf(40.0).abs() < 1e-300);
    }

    #[test]
    fn inverse_mills_limits() {
        assert!((inverse_mills(0.0) - 2.0 * FRAC_1_SQRT_2PI).abs() < 1e-15);
        // λ(u) ~ -u for u → -∞.
        assert!((inverse_mills(-50.0) / 50.0 - 1.0).abs() < 1e-3);
        assert!(inverse_mills(40.0) < 1e-300);
    }

    #[test]
    fn symmetry() {
        for i in 0..200 {
            let z = -8.0 + 0.08 * i as f64;
            assert!((cdf(z) + cdf(-z) - 1.0).abs() < 2e-16);
        }
    }
}
