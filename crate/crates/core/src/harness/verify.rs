//! Elementwise comparison criteria.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::FieldSet;

/// Outcome of a comparison; on failure, the first offending element.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail {
        field: usize,
        index: usize,
        a: f64,
        b: f64,
        ulps: u64,
    },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    fn with_field(self, f: usize) -> Self {
        match self {
            Verdict::Fail {
                index, a, b, ulps, ..
            } => Verdict::Fail {
                field: f,
                index,
                a,
                b,
                ulps,
            },
            v => v,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail {
                field,
                index,
                a,
                b,
                ulps,
            } => write!(
                f,
                "fail: field {field} element {index}: {a:e} vs {b:e} ({ulps} ulp, |diff| {:e})",
                (a - b).abs()
            ),
        }
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "arrays differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn fail<T: Real>(index: usize, a: T, b: T) -> Verdict {
    Verdict::Fail {
        field: 0,
        index,
        a: a.to_f64_lossy(),
        b: b.to_f64_lossy(),
        ulps: a.ulp_distance(b),
    }
}

/// Passes iff `|a - b| <= c + c |b|` elementwise.
pub fn verify_allclose<T: Real>(a: &[T], b: &[T], c: f64) -> Result<Verdict> {
    check_len(a, b)?;
    let c = T::from_f64_lossy(c);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if !((x - y).abs() <= c + c * y.abs()) {
            return Ok(fail(i, x, y));
        }
    }
    Ok(Verdict::Pass)
}

/// Passes iff each pair is fewer than `max_ulp` representable steps apart or
/// closer than `abs_floor`.
pub fn verify_ulp<T: Real>(a: &[T], b: &[T], max_ulp: u64, abs_floor: f64) -> Result<Verdict> {
    check_len(a, b)?;
    let floor = T::from_f64_lossy(abs_floor);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x.ulp_distance(y) >= max_ulp && !((x - y).abs() < floor) {
            return Ok(fail(i, x, y));
        }
    }
    Ok(Verdict::Pass)
}

/// `eps * min(b)`, or zero when the smallest reference value is not positive.
pub fn default_abs_floor<T: Real>(b: &[T]) -> f64 {
    let min = b.iter().fold(f64::INFINITY, |m, v| m.min(v.to_f64_lossy()));
    if min.is_finite() && min > 0.0 {
        T::DTYPE.epsilon() * min
    } else {
        0.0
    }
}

fn per_field<T: Real>(
    a: &FieldSet<T>,
    b: &FieldSet<T>,
    mut check: impl FnMut(&[T], &[T]) -> Result<Verdict>,
) -> Result<Verdict> {
    if a.len() != b.len() || a.shape() != b.shape() {
        return Err(Error::Argument("field sets differ in layout".into()));
    }
    for (j, (fa, fb)) in a.fields().iter().zip(b.fields()).enumerate() {
        let v = check(&fa.interior(), &fb.interior())?;
        if !v.passed() {
            return Ok(v.with_field(j));
        }
    }
    Ok(Verdict::Pass)
}

/// [`verify_allclose`] over the interiors of every field.
pub fn verify_sets_allclose<T: Real>(a: &FieldSet<T>, b: &FieldSet<T>, c: f64) -> Result<Verdict> {
    per_field(a, b, |x, y| verify_allclose(x, y, c))
}

/// [`verify_ulp`] over the interiors of every field, with the default floor
/// computed per reference field.
pub fn verify_sets_ulp<T: Real>(a: &FieldSet<T>, b: &FieldSet<T>, max_ulp: u64) -> Result<Verdict> {
    per_field(a, b, |x, y| verify_ulp(x, y, max_ulp, default_abs_floor(y)))
}

/// Tolerance constant for diffusion comparisons.
pub fn diffusion_c<T: Real>() -> f64 {
    5.0 * T::DTYPE.epsilon()
}

/// Tolerance constant for MHD comparisons.
pub fn mhd_c<T: Real>() -> f64 {
    100.0 * T::DTYPE.epsilon()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn next_up(x: f64, n: u64) -> f64 {
        f64::from_bits(x.to_bits() + n)
    }

    #[test]
    fn allclose_examples() {
        let a = [1.0f64, -2.5, 3.0];
        assert!(verify_allclose(&a, &a, 0.0).unwrap().passed());
        let eps32 = f32::EPSILON as f64;
        assert!(verify_allclose(&[1.0f64], &[1.0 + 1e-7], 5.0 * eps32)
            .unwrap()
            .passed());
        match verify_allclose(&[1.0f64, 2.0, 3.0], &[1.0, 2.5, 3.5], 0.0).unwrap() {
            Verdict::Fail { index, .. } => assert_eq!(index, 1),
            Verdict::Pass => panic!(),
        }
        assert!(verify_allclose(&[1.0f64], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn ulp_examples() {
        let x = 0.7f64;
        assert!(verify_ulp(&[x], &[x], 5, 0.0).unwrap().passed());
        assert!(verify_ulp(&[x], &[next_up(x, 1)], 5, 0.0).unwrap().passed());
        assert!(verify_ulp(&[x], &[next_up(x, 4)], 5, 0.0).unwrap().passed());
        assert!(!verify_ulp(&[x], &[next_up(x, 5)], 5, 0.0).unwrap().passed());
        assert!(!verify_ulp(&[x], &[next_up(x, 8)], 5, 0.0).unwrap().passed());
        assert!(verify_ulp(&[x], &[next_up(x, 8)], 5, 1e-10)
            .unwrap()
            .passed());
        assert!(verify_ulp(&[1.0f32], &[1.0f32, 1.0], 5, 0.0).is_err());
    }

    #[test]
    fn symmetric_verdicts() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [1.0f64, next_up(2.0, 3), 3.0 + 1e-9];
        for c in [0.0, 1e-12, 1e-6] {
            assert_eq!(
                verify_allclose(&a, &b, c).unwrap().passed(),
                verify_allclose(&b, &a, c).unwrap().passed()
            );
        }
        assert_eq!(
            verify_ulp(&a, &b, 5, 0.0).unwrap().passed(),
            verify_ulp(&b, &a, 5, 0.0).unwrap().passed()
        );
    }

    #[test]
    fn abs_floor_from_positive_minimum() {
        assert_eq!(default_abs_floor(&[2.0f64, 4.0]), 2.0 * f64::EPSILON);
        assert_eq!(default_abs_floor(&[-1.0f64, 4.0]), 0.0);
        assert_eq!(default_abs_floor::<f64>(&[]), 0.0);
    }
}
