//! Points of the circle ℝ/ℤ as 64-bit fixed-point phases.
//!
//! Addition and integer multiples wrap modulo 2⁶⁴, which is exactly
//! reduction modulo 1, so `n·θ mod 1` carries no accumulated rounding for
//! any `n`; the only error is the one-time 2⁻⁶⁴ quantization of θ.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const TWO_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Phase(pub u64);

impl Phase {
    pub const ZERO: Phase = Phase(0);

    pub fn from_f64(x: f64) -> Self {
        let r = x.rem_euclid(1.0);
        // r * 2^64 can round up to 2^64 for r just below 1
        let v = r * TWO_64;
        if v >= TWO_64 {
            Phase(0)
        } else {
            Phase(v as u64)
        }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / TWO_64
    }

    #[inline]
    pub fn add(self, other: Phase) -> Phase {
        Phase(self.0.wrapping_add(other.0))
    }

    #[inline]
    pub fn sub(self, other: Phase) -> Phase {
        Phase(self.0.wrapping_sub(other.0))
    }

    #[inline]
    pub fn neg(self) -> Phase {
        Phase(self.0.wrapping_neg())
    }

    /// `n·self mod 1`
    #[inline]
    pub fn times(self, n: i64) -> Phase {
        Phase(self.0.wrapping_mul(n as u64))
    }

    /// `n·self mod 1` for wide multipliers.
    #[inline]
    pub fn times_wide(self, n: i128) -> Phase {
        Phase(self.0.wrapping_mul(n as u64))
    }

    #[inline]
    pub fn cos(self) -> f64 {
        (TAU * self.to_f64()).cos()
    }

    #[inline]
    pub fn sin(self) -> f64 {
        (TAU * self.to_f64()).sin()
    }

    /// `e^{2πi·self}`
    #[inline]
    pub fn expi(self) -> Complex64 {
        let (s, c) = (TAU * self.to_f64()).sin_cos();
        Complex64::new(c, s)
    }

    /// Distance to 0 on the circle, in [0, 1/2].
    pub fn dist_to_zero(self) -> f64 {
        let x = self.to_f64();
        x.min(1.0 - x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_equals_iterated_addition() {
        let theta = Phase::from_f64(2f64.sqrt() - 1.0);
        let mut x = Phase::from_f64(0.25);
        let x0 = x;
        for n in 1..=1_000_000i64 {
            x = x.add(theta);
            if n % 1000 == 0 {
                assert_eq!(x, x0.add(theta.times(n)));
            }
        }
        let direct = (0.25 + 1_000_000.0 * (2f64.sqrt() - 1.0)).rem_euclid(1.0);
        assert!((x.to_f64() - direct).abs() < 1e-9);
    }

    #[test]
    fn negative_multiples_wrap() {
        let t = Phase::from_f64(0.3);
        assert!((t.times(-1).to_f64() - 0.7).abs() < 1e-15);
        assert_eq!(t.times(-5).add(t.times(5)), Phase::ZERO);
    }

    #[test]
    fn trig() {
        assert!((Phase::from_f64(0.25).sin() - 1.0).abs() < 1e-15);
        assert!((Phase::from_f64(0.5).cos() + 1.0).abs() < 1e-15);
        assert!((Phase::from_f64(-0.25).to_f64() - 0.75).abs() < 1e-15);
        assert_eq!(Phase::from_f64(1.0 - 1e-18), Phase(0));
    }
}
