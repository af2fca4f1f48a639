//! Convergence tables from level-tagged CSVs (`level_<ℓ>.csv`, one row per path).

use std::path::Path;

use hermite_ito::sobolev::format_float;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::stats::{fit_line, median, LineFit};

#[derive(Deserialize)]
struct PathRow {
    dt: f64,
    terminal_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub level: u32,
    pub dt: f64,
    pub paths: usize,
    pub median_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Convergence {
    pub levels: Vec<LevelSummary>,
    /// Least-squares fit of log(median residual) against log(Δt).
    pub fit: LineFit,
}

impl Convergence {
    /// Largest ratio of consecutive medians (finer over coarser); below 1 iff monotone.
    pub fn worst_refinement_ratio(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1].median_residual / w[0].median_residual)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn level_file_name(level: u32) -> String {
    format!("level_{level:02}.csv")
}

fn parse_level(name: &str) -> Option<u32> {
    name.strip_prefix("level_")?.strip_suffix(".csv")?.parse().ok()
}

/// Reads the level CSVs in `dir`, writes convergence.csv and fit.csv there.
pub fn summarize(dir: &Path) -> CliResult<Convergence> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Summary(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for e in entries {
        let e = e?;
        if let Some(level) = e.file_name().to_str().and_then(parse_level) {
            files.push((level, e.path()));
        }
    }
    files.sort();
    if files.len() < 2 {
        return Err(CliError::Summary(format!(
            "{} holds {} level file(s); a slope needs at least two levels",
            dir.display(),
            files.len()
        )));
    }
    let mut levels = Vec::with_capacity(files.len());
    for (level, path) in &files {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows: Vec<PathRow> = rdr.deserialize().collect::<Result<_, _>>()?;
        if rows.is_empty() {
            return Err(CliError::Summary(format!("{} has no rows", path.display())));
        }
        let residuals: Vec<f64> = rows.iter().map(|r| r.terminal_residual).collect();
        levels.push(LevelSummary {
            level: *level,
            dt: rows[0].dt,
            paths: rows.len(),
            median_residual: median(&residuals),
        });
    }
    let x: Vec<f64> = levels.iter().map(|l| l.dt.ln()).collect();
    let y: Vec<f64> = levels.iter().map(|l| l.median_residual.ln()).collect();
    let fit = fit_line(&x, &y).ok_or_else(|| {
        CliError::Summary("slope undefined: levels share one Δt or residuals are not positive".into())
    })?;
    if !fit.slope.is_finite() {
        return Err(CliError::Summary("slope undefined: non-positive median residual".into()));
    }

    let mut w = csv::Writer::from_path(dir.join("convergence.csv"))?;
    w.write_record(["level", "dt", "paths", "median_residual", "log_dt", "log_median_residual"])?;
    for (l, (lx, ly)) in levels.iter().zip(x.iter().zip(&y)) {
        w.write_record([
            l.level.to_string(),
            format_float(l.dt),
            l.paths.to_string(),
            format_float(l.median_residual),
            format_float(*lx),
            format_float(*ly),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("fit.csv"))?;
    w.write_record(["slope", "intercept", "levels"])?;
    w.write_record([format_float(fit.slope), format_float(fit.intercept), levels.len().to_string()])?;
    w.flush()?;
    Ok(Convergence { levels, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_level(dir: &Path, level: u32, dt: f64, residuals: &[f64]) {
        let mut w = csv::Writer::from_path(dir.join(level_file_name(level))).unwrap();
        w.write_record(["path", "dt", "terminal_residual"]).unwrap();
        for (i, r) in residuals.iter().enumerate() {
            w.write_record([i.to_string(), format_float(dt), format_float(*r)]).unwrap();
        }
        w.flush().unwrap();
    }

    #[test]
    fn two_levels_halving_the_residual_give_slope_one() {
        let dir = tempfile::tempdir().unwrap();
        write_level(dir.path(), 1, 0.5, &[1e-2]);
        write_level(dir.path(), 2, 0.25, &[5e-3]);
        let c = summarize(dir.path()).unwrap();
        assert!((c.fit.slope - 1.0).abs() < 1e-12);
        assert!(dir.path().join("convergence.csv").exists());
    }

    #[test]
    fn square_root_residuals_give_slope_one_half() {
        let dir = tempfile::tempdir().unwrap();
        for level in 8..12 {
            let dt = 2f64.powi(-(level as i32));
            // spread around c·√Δt; the median is the middle value
            let base = 0.3 * dt.sqrt();
            write_level(dir.path(), level, dt, &[0.5 * base, base, 3.0 * base]);
        }
        let c = summarize(dir.path()).unwrap();
        assert!((c.fit.slope - 0.5).abs() < 0.05, "{}", c.fit.slope);
        assert!(c.worst_refinement_ratio() < 1.0);
    }

    #[test]
    fn single_level_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_level(dir.path(), 8, 2f64.powi(-8), &[1e-3]);
        let err = summarize(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(summarize(empty.path()).unwrap_err().exit_code(), 2);
    }
}
