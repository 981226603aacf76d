use super::{ParamGrads, ParamStore};
use crate::scalar::Scalar;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares `analytic` against central differences of `loss` around the
/// current values in `params`.
///
/// Per coordinate the error is `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`;
/// the maximum is reported. `max_coords_per_param` evenly subsamples large
/// tensors; `None` checks every coordinate.
pub fn grad_check<T, F>(
    params: &ParamStore<T>,
    analytic: &ParamGrads<T>,
    epsilon: T,
    max_coords_per_param: Option<usize>,
    mut loss: F,
) -> GradCheckReport<T>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> T,
{
    assert!(epsilon > T::zero(), "epsilon must be positive");
    let mut work = params.clone();
    let floor = T::of(1e-8);
    let two = T::of(2.0);
    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        worst: None,
        coords_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = match max_coords_per_param {
            Some(k) if k > 0 && n > k => n / k,
            _ => 1,
        };
        for idx in (0..n).step_by(stride.max(1)) {
            let orig = params.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = orig + epsilon;
            let up = loss(&work);
            work.get_mut(id).data_mut()[idx] = orig - epsilon;
            let down = loss(&work);
            work.get_mut(id).data_mut()[idx] = orig;

            let numeric = (up - down) / (two * epsilon);
            let a = analytic.get(id).data()[idx];
            let err = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), idx));
            }
        }
    }
    report
}
