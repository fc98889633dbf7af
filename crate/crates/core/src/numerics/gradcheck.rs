use super::DenseArray;

/// Floor on the denominator of [`relative_error`] so that coordinates whose
/// true gradient is numerically zero are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Array name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the analytic gradient returned by `f` with central differences
/// over every coordinate of every named array, all in `f64`.
pub fn gradient_check<F>(mut f: F, point: &[(String, DenseArray<f64>)], step: f64) -> GradCheckReport
where
    F: FnMut(&[(String, DenseArray<f64>)]) -> (f64, Vec<DenseArray<f64>>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "one gradient per named array");
    let mut work = point.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for a in 0..point.len() {
        for i in 0..point[a].1.len() {
            let orig = work[a].1.data()[i];
            work[a].1.data_mut()[i] = orig + step;
            let up = f(&work).0;
            work[a].1.data_mut()[i] = orig - step;
            let down = f(&work).0;
            work[a].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[a].data()[i], numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((point[a].0.clone(), i));
            }
        }
    }
    report
}
