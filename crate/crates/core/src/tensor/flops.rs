//! FLOP convention shared by the tape's instrumented counter and the
//! analytic accountant. Multiplies and accumulates are counted separately,
//! so an `(a×b)·(b×c)` product costs `2·a·b·c`.
//!
//! Normalizations and activations are charged a fixed number of FLOPs per
//! output scalar. The constants below are the operation counts of the
//! kernels in [`super::kernels`], rounded to whole per-element costs:
//!
//! * softmax: max compare, subtract, exp, accumulate, scale
//! * layer norm: mean accumulate, subtract, square, variance accumulate,
//!   normalize, gain, bias, plus one for the per-row rsqrt amortized
//! * GELU: scale, erf, add, halve, multiply, with erf charged as four

/// Per-scalar cost of softmax over the last axis.
pub const SOFTMAX_PER_SCALAR: u64 = 5;

/// Per-scalar cost of layer normalization including the affine map.
pub const LAYER_NORM_PER_SCALAR: u64 = 8;

/// Per-scalar cost of exact GELU.
pub const GELU_PER_SCALAR: u64 = 8;

/// `(p×q)·(q×r)` matrix product.
pub const fn matmul(p: u64, q: u64, r: u64) -> u64 {
    2 * p * q * r
}

/// Affine map of `rows` vectors from `cin` to `cout` channels, bias included.
pub const fn linear(rows: u64, cin: u64, cout: u64) -> u64 {
    matmul(rows, cin, cout) + rows * cout
}

/// Mean over the index axis of an `n×c` matrix: `n·c` accumulates plus `c`
/// divisions.
pub const fn mean_over_index(n: u64, c: u64) -> u64 {
    n * c + c
}
