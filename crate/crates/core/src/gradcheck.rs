//! Central finite-difference oracle for tape gradients.
//!
//! The oracle only ever evaluates the forward function; it never looks at
//! the tape's adjoints, so it stays independent of the code it checks.

use crate::error::Result;
use crate::tensor::Tensor64;

/// Default step for central differences in 64-bit.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Gradients smaller than this are
/// compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// One compared coordinate.
#[derive(Clone, Debug)]
pub struct GradSample {
    pub table: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `(f(x + h·e) − f(x − h·e)) / 2h` for coordinate `index` of table `table`.
pub fn central_difference<F>(f: &mut F, inputs: &mut [Tensor64], table: usize, index: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[Tensor64]) -> Result<f64>,
{
    let orig = inputs[table].data()[index];
    inputs[table].data_mut()[index] = orig + h;
    let plus = f(inputs);
    inputs[table].data_mut()[index] = orig - h;
    let minus = f(inputs);
    inputs[table].data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Compares `analytic[t][i]` against central differences of `f` at every
/// `(t, i)` in `coords`.
pub fn check<F>(
    mut f: F,
    inputs: &[Tensor64],
    analytic: &[Tensor64],
    coords: &[(usize, usize)],
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor64]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for &(table, index) in coords {
        let numeric = central_difference(&mut f, &mut work, table, index, h)?;
        let a = analytic[table].data()[index];
        report.samples.push(GradSample { table, index, analytic: a, numeric, rel_error: relative_error(a, numeric) });
    }
    Ok(report)
}

/// Every coordinate of every table.
pub fn all_coords(inputs: &[Tensor64]) -> Vec<(usize, usize)> {
    inputs.iter().enumerate().flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i))).collect()
}
