//! Ordinary least squares for power laws in log-log coordinates.

/// Result of fitting `ln y = intercept + slope · ln x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub intercept: f64,
    pub slope: f64,
    /// Root-mean-square residual in log space.
    pub rms: f64,
}

/// Fits a line through `(ln x_i, ln y_i)`. Needs at least two distinct
/// positive abscissae; all ordinates must be positive.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(LogLogFit {
        intercept,
        slope,
        rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs = [0.1, 0.01, 0.001];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let fit = log_log_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.intercept.exp() - 2.0).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(log_log_fit(&[1.0], &[1.0]).is_none());
        assert!(log_log_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
        assert!(log_log_fit(&[1.0, 2.0], &[0.0, 2.0]).is_none());
    }
}
