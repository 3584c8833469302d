//! Problem fixtures shared by the benchmarks.

use fusedstencil::harness::problem::Problem;
use fusedstencil::{parse_problem_spec, Real, Shape};

fn build<T: Real>(spec: &str, shape: Shape, radius: Option<usize>) -> Problem<T> {
    parse_problem_spec(spec)
        .and_then(|s| s.build_at(shape, radius))
        .expect("fixture spec is valid")
}

/// One field on a periodic line, box kernel of radius `r`.
pub fn crosscorr<T: Real>(n: usize, r: usize) -> Problem<T> {
    build(
        "[problem]\nkind = \"crosscorr\"\n[crosscorr]\nradius = 1\nfields = 1\n",
        Shape::d1(n),
        Some(r),
    )
}

/// Explicit heat step, sixth-order Laplacian, on an `n`^3 periodic box.
pub fn diffusion<T: Real>(n: usize) -> Problem<T> {
    build(
        "[problem]\nkind = \"diffusion\"\n[diffusion]\nalpha = 1.0\ndt = 0.01\n",
        Shape::d3(n, n, n),
        None,
    )
}

/// Eight-field compressible MHD right-hand side on an `n`^3 periodic box.
pub fn mhd<T: Real>(n: usize) -> Problem<T> {
    build(
        "[problem]\nkind = \"mhd\"\ninit_range = [-1e-5, 1e-5]\n",
        Shape::d3(n, n, n),
        None,
    )
}
