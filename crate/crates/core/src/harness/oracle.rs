//! Unfused reference evaluation.

use crate::error::{Error, Result};
use crate::fusion::{FusedKernel, QView};
use crate::real::Real;
use crate::stencil::cross_correlate;
use crate::tensor::{FieldSet, PaddedField};

/// Largest extent per axis the oracle accepts.
pub const ORACLE_MAX_EXTENT: usize = 64;

/// Every row of the kernel's matrix applied to every field as a separate
/// whole-array cross-correlation, then the combiner pointwise.
pub fn naive_oracle_step<T: Real>(
    fields: &FieldSet<T>,
    kernel: &FusedKernel<T>,
) -> Result<FieldSet<T>> {
    let dims = fields.shape().dims();
    if dims.iter().any(|&n| n > ORACLE_MAX_EXTENT) {
        return Err(Error::Config(format!(
            "oracle refuses domain {dims:?}; extents are limited to {ORACLE_MAX_EXTENT}"
        )));
    }
    if fields.len() != kernel.n_fields() {
        return Err(Error::Config(format!(
            "kernel expects {} fields, got {}",
            kernel.n_fields(),
            fields.len()
        )));
    }
    let n_f = fields.len();
    let n_s = kernel.n_rows();
    // derived[i][j] = row i applied to field j
    let derived: Vec<Vec<PaddedField<T>>> = kernel
        .matrix()
        .rows()
        .iter()
        .map(|row| {
            fields
                .fields()
                .iter()
                .map(|f| cross_correlate(f, &row.kernel))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = fields.zeros_like();
    let shape = fields.shape();
    let mut q = vec![T::zero(); n_s * n_f];
    let mut values = vec![T::zero(); n_f];
    for idx in 0..shape.len() {
        let [i, j, k] = shape.coords(idx);
        for (row, per_field) in derived.iter().enumerate() {
            for (f, d) in per_field.iter().enumerate() {
                q[row * n_f + f] = d.get(i, j, k);
            }
        }
        kernel
            .combiner()
            .eval(QView::new(&q, n_f), [i, j, k], &mut values);
        for (f, &v) in values.iter().enumerate() {
            out.field_mut(f).set(i, j, k, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BoundaryPolicy, Shape};

    #[test]
    fn refuses_large_domains() {
        let fields = FieldSet::<f64>::new(&["f"], Shape::d1(65), 1, BoundaryPolicy::Periodic);
        let m = crate::fusion::CoefficientMatrix::from_kernels(
            1,
            [("id", crate::stencil::identity_kernel(1))],
        )
        .unwrap();
        let k = FusedKernel::new(
            m,
            std::sync::Arc::new(crate::fusion::PassThrough { row: 0 }),
            1,
        )
        .unwrap();
        assert!(matches!(
            naive_oracle_step(&fields, &k),
            Err(Error::Config(_))
        ));
    }
}
