//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::ops::GradPair;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Step size, within `[1e-6, 1e-4]`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor, so that coordinates whose true gradient is zero are
    /// judged by absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

/// Where the worst disagreement was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub block: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Worst>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares each `grad` entry of `params` against the central difference
/// `(f(θ+h) − f(θ−h)) / 2h`. `f` reads the `value` fields; every coordinate
/// is restored bit-exactly after probing.
pub fn finite_diff_check<T, F>(
    params: &mut [GradPair<T>],
    options: GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[GradPair<T>]) -> T,
{
    if !(1e-6..=1e-4).contains(&options.step) {
        return Err(Error::Parameter(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            options.step
        )));
    }
    let h = T::of(options.step);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        tolerance: options.tolerance,
    };
    for block in 0..params.len() {
        for index in 0..params[block].value.len() {
            let original = params[block].value.data()[index];
            params[block].value.data_mut()[index] = original + h;
            let plus = f(params);
            params[block].value.data_mut()[index] = original - h;
            let minus = f(params);
            params[block].value.data_mut()[index] = original;

            let numeric = ((plus - minus) / (h + h)).as_f64();
            let analytic = params[block].grad.data()[index].as_f64();
            let mut err = relative_error(analytic, numeric, options.floor);
            if err.is_nan() {
                err = f64::INFINITY;
            }
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Worst {
                    block,
                    index,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
