//! Ensemble statistics over per-path results.

use statrs::statistics::{Data, Median, Statistics};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let mean = xs.mean();
    let se = if xs.len() > 1 {
        xs.std_dev() / (xs.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanSe { mean, se }
}

pub fn median(xs: &[f64]) -> f64 {
    Data::new(xs.to_vec()).median()
}

/// Least-squares line y = intercept + slope·x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let var = x.variance();
    if !(var > 0.0) {
        return None;
    }
    let slope = x.covariance(y) / var;
    Some(LineFit {
        slope,
        intercept: y.mean() - slope * x.mean(),
    })
}

/// |a − b| in units of √(se_a² + se_b²).
pub fn z_score(a: MeanSe, b: MeanSe) -> f64 {
    (a.mean - b.mean).abs() / (a.se * a.se + b.se * b.se).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_fit_is_exact() {
        let x = [0.01f64.ln(), 0.005f64.ln()];
        let y = [1e-2f64.ln(), 5e-3f64.ln()];
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(fit_line(&x[..1], &y[..1]).is_none());
    }

    #[test]
    fn mean_and_standard_error() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample sd √(5/3), divided by √4
        assert!((m.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
