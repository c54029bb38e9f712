//! Closed probability intervals and signed value ranges.

use serde::{Deserialize, Serialize};

use crate::BoundsError;

/// Slack tolerated when validating endpoints that were produced by floating
/// point arithmetic.
const SNAP: f64 = 1e-9;

/// A closed subinterval of [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Builds an interval, snapping roundoff-sized violations of the
    /// [0, 1] and ordering invariants and rejecting anything larger.
    pub fn new(lo: f64, hi: f64) -> Result<Self, BoundsError> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi + SNAP || lo < -SNAP || hi > 1.0 + SNAP {
            return Err(BoundsError::BadInterval { lo, hi });
        }
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(lo, 1.0);
        Ok(Interval { lo, hi })
    }

    /// The vacuous bound.
    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, p: f64, tol: f64) -> bool {
        p >= self.lo - tol && p <= self.hi + tol
    }

    pub fn is_subset_of(&self, outer: &Interval, tol: f64) -> bool {
        self.lo >= outer.lo - tol && self.hi <= outer.hi + tol
    }
}

/// A closed interval of real values, used for benefit ranges that may be
/// negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub fn new(lo: f64, hi: f64) -> Result<Self, BoundsError> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi + SNAP {
            return Err(BoundsError::BadInterval { lo, hi });
        }
        let hi = hi.max(lo);
        Ok(Span { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn is_subset_of(&self, outer: &Span, tol: f64) -> bool {
        self.lo >= outer.lo - tol && self.hi <= outer.hi + tol
    }

    pub fn entirely_positive(&self) -> bool {
        self.lo > 0.0
    }

    pub fn entirely_negative(&self) -> bool {
        self.hi < 0.0
    }

    pub fn scale(&self, c: f64) -> Span {
        if c >= 0.0 {
            Span { lo: self.lo * c, hi: self.hi * c }
        } else {
            Span { lo: self.hi * c, hi: self.lo * c }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_enforces_the_invariants() {
        let i = Interval::new(0.25, 0.75).unwrap();
        assert_eq!(i.width(), 0.5);
        assert!(Interval::new(0.8, 0.2).is_err());
        assert!(Interval::new(-0.1, 0.5).is_err());
        assert!(Interval::new(0.5, 1.1).is_err());
        assert!(Interval::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn roundoff_is_snapped_not_rejected() {
        let i = Interval::new(-1e-12, 1.0 + 1e-12).unwrap();
        assert_eq!(i, Interval::unit());
        let j = Interval::new(0.5 + 1e-12, 0.5).unwrap();
        assert!(j.lo <= j.hi);
    }

    #[test]
    fn containment_and_nesting_respect_tolerance() {
        let outer = Interval::new(0.1, 0.9).unwrap();
        let inner = Interval::new(0.2, 0.8).unwrap();
        assert!(inner.is_subset_of(&outer, 0.0));
        assert!(!outer.is_subset_of(&inner, 0.0));
        assert!(outer.contains(0.9 + 1e-10, 1e-9));
        assert!(!outer.contains(0.95, 1e-9));
    }

    #[test]
    fn spans_admit_negative_values_and_scale_with_sign() {
        let s = Span::new(-2.75, -0.20).unwrap();
        assert!(s.entirely_negative());
        assert!(!s.entirely_positive());
        let flipped = s.scale(-1.0);
        assert_eq!(flipped, Span::new(0.20, 2.75).unwrap());
        assert!(flipped.entirely_positive());
        assert!(Span::new(1.0, -1.0).is_err());
    }
}
