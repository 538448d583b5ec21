//! Evaluation metrics over trajectory logs.
//!
//! MAE and RMSE are measured in normalized image units (pixel distance
//! divided by the FoV radius).

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::safety::FovDisc;
use crate::simulator::TrajectoryLog;
use crate::vision::ImageFeature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Percent of samples with the instrument inside the FoV.
    pub fovsr: f64,
    /// `None` when tracking was not sustained.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub avss: f64,
    /// Final motion activity cost.
    pub mac: f64,
}

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::MissingData("empty trajectory".into()));
    }
    Ok(())
}

/// FoV satisfaction rate in percent; boundary points count as inside.
pub fn fovsr_of(points: &[ImageFeature], fov: &FovDisc) -> Result<f64> {
    nonempty(points)?;
    let inside = points.iter().filter(|s| fov.distance(s) <= fov.radius).count();
    Ok(100.0 * inside as f64 / points.len() as f64)
}

/// Mean normalized excursion beyond the FoV boundary.
pub fn avss_of(points: &[ImageFeature], fov: &FovDisc) -> Result<f64> {
    nonempty(points)?;
    let total: f64 = points.iter().map(|s| (fov.distance(s) / fov.radius - 1.0).max(0.0)).sum();
    Ok(total / points.len() as f64)
}

/// `(MAE, RMSE)` of the distance between paired points, divided by `scale`.
pub fn tracking_errors_of(actual: &[ImageFeature], reference: &[ImageFeature], scale: f64) -> Result<(f64, f64)> {
    nonempty(actual)?;
    if actual.len() != reference.len() {
        return Err(Error::Dimension("trajectories differ in length".into()));
    }
    if reference.iter().any(|s| !s.is_finite()) {
        return Err(Error::MissingData("reference trajectory has missing values".into()));
    }
    let n = actual.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in actual.iter().zip(reference) {
        let d = (a.to_vector() - b.to_vector()).norm() / scale;
        abs += d;
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Running sum of `qdot' M qdot`.
pub fn mac_of(qdots: &[Vector6<f64>], m: &Matrix6<f64>) -> Vec<f64> {
    let mut acc = 0.0;
    qdots
        .iter()
        .map(|u| {
            acc += u.dot(&(m * u));
            acc
        })
        .collect()
}

fn true_points(log: &TrajectoryLog) -> Vec<ImageFeature> {
    log.records.iter().map(|r| r.s_true).collect()
}

pub fn fovsr(log: &TrajectoryLog, fov: &FovDisc) -> Result<f64> {
    fovsr_of(&true_points(log), fov)
}

pub fn avss(log: &TrajectoryLog, fov: &FovDisc) -> Result<f64> {
    avss_of(&true_points(log), fov)
}

/// Executed versus predicted instrument pixel, normalized by the FoV radius.
pub fn tracking_errors(log: &TrajectoryLog, fov: &FovDisc) -> Result<(f64, f64)> {
    let nominal: Vec<ImageFeature> = log.records.iter().map(|r| r.s_nominal).collect();
    tracking_errors_of(&true_points(log), &nominal, fov.radius)
}

/// Cumulative motion activity cost and its final value.
pub fn mac(log: &TrajectoryLog, m: &Matrix6<f64>) -> (Vec<f64>, f64) {
    let qdots: Vec<Vector6<f64>> = log.records.iter().map(|r| r.qdot).collect();
    let series = mac_of(&qdots, m);
    let last = series.last().copied().unwrap_or(0.0);
    (series, last)
}

/// All metrics of one log. MAE/RMSE are omitted when FoVSR is below
/// `sustained_threshold` percent.
pub fn evaluate(log: &TrajectoryLog, fov: &FovDisc, m: &Matrix6<f64>, sustained_threshold: f64) -> Result<MetricReport> {
    let fovsr = fovsr(log, fov)?;
    let (mae, rmse) = if fovsr >= sustained_threshold {
        let (a, b) = tracking_errors(log, fov)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(MetricReport { fovsr, mae, rmse, avss: avss(log, fov)?, mac: mac(log, m).1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fov() -> FovDisc {
        FovDisc::new(ImageFeature::new(0.0, 0.0), 100.0).unwrap()
    }

    #[test]
    fn fovsr_and_avss_cases() {
        let inside = ImageFeature::new(10.0, 0.0);
        let boundary = ImageFeature::new(60.0, 80.0);
        assert_eq!(fovsr_of(&[inside, boundary], &fov()).unwrap(), 100.0);
        assert_eq!(fovsr_of(&[inside, ImageFeature::new(200.0, 0.0)], &fov()).unwrap(), 50.0);
        assert_eq!(avss_of(&[ImageFeature::new(200.0, 0.0)], &fov()).unwrap(), 1.0);
        let pts = [inside, inside, inside, ImageFeature::new(0.0, 150.0)];
        assert!((avss_of(&pts, &fov()).unwrap() - 0.125).abs() < 1e-15);
        assert!(fovsr_of(&[], &fov()).is_err());
    }

    #[test]
    fn error_cases() {
        let a = [ImageFeature::new(0.0, 0.0), ImageFeature::new(0.0, 0.0)];
        assert_eq!(tracking_errors_of(&a, &a, 1.0).unwrap(), (0.0, 0.0));
        let b = [ImageFeature::new(0.0, 0.0), ImageFeature::new(2.0, 0.0)];
        let (mae, rmse) = tracking_errors_of(&a, &b, 1.0).unwrap();
        assert!((mae - 1.0).abs() < 1e-15 && (rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mac_cases() {
        let e1 = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(mac_of(&[e1], &Matrix6::identity()), vec![1.0]);
        let mut m = Matrix6::identity();
        m[(0, 0)] = 2.0;
        assert_eq!(mac_of(&[e1], &m), vec![2.0]);
        assert_eq!(mac_of(&[Vector6::zeros(); 3], &m), vec![0.0; 3]);
    }
}
