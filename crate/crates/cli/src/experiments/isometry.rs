use hermite_ito::integration::{
    bracket_energy, integrate_vs_martingale, integrate_vs_semimartingale, CoeffPath, NormBound,
};
use hermite_ito::paths::{scaled_walk, PathBuilder, RcllPath, Semimartingale, SemimartingaleDecomposition, WalkMode};
use hermite_ito::sobolev::format_float;
use hermite_ito::{HermiteCoeffs, SobolevOrder};

use super::Context;
use crate::error::{in_run, CliResult};
use crate::verdict::Check;

fn coeffs(c: &[f64]) -> HermiteCoeffs {
    HermiteCoeffs::from_vec(1, c.len() - 1, c.to_vec()).expect("finite coefficients")
}

/// A predictable step process with three steps: constant on [0, k/3), then frozen at the
/// walk's values at k/3 and at 2k/3.
fn step_integrand(w: &Semimartingale, k: usize) -> hermite_ito::Result<CoeffPath> {
    let breaks = [k / 3, 2 * k / 3];
    CoeffPath::from_fn(1, 3, w.path.times().to_vec(), |j| {
        let c = if j < breaks[0] {
            vec![0.3, -0.2, 0.1, 0.05]
        } else if j < breaks[1] {
            let x = w.path.value(breaks[0])[0];
            vec![x, 1.0, -x * x, 0.5]
        } else {
            let x = w.path.value(breaks[1])[0];
            vec![x.sin(), x.abs(), 0.2, -x]
        };
        Ok(coeffs(&c))
    })
}

/// The walk's decomposition with the deterministic drift D(t) = drift·t moved from M to A.
fn shifted_decomposition(w: &Semimartingale, drift: f64) -> hermite_ito::Result<SemimartingaleDecomposition> {
    let times = w.path.times();
    let mut m = PathBuilder::with_capacity(1, times.len());
    m.push(times[0], &[0.0])?;
    for j in 1..times.len() {
        let left = w.path.value(j - 1)[0] - drift * times[j];
        let raw = w.path.value(j)[0] - w.path.value(j - 1)[0];
        m.push_jump(times[j], &[left], &[raw], None)?;
    }
    let a = RcllPath::continuous(1, times.to_vec(), times.iter().map(|t| drift * t).collect())?;
    SemimartingaleDecomposition::new(vec![0.0], m.finish(), a, w.decomposition.predictable_bracket(0, 0))
}

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.isometry_enumeration();
    let mut checks = Vec::new();

    let walks = scaled_walk(c.k, WalkMode::Exhaustive, None)?;
    let mut w = csv::Writer::from_writer(ctx.create("isometry.csv")?);
    w.write_record(["p", "paths", "lhs", "rhs", "abs_diff"])?;
    let mut worst = 0.0f64;
    for &p in &c.orders {
        let order = SobolevOrder::new(-p)?;
        let per_path = ctx.per_path(walks.len(), |i| {
            let walk = &walks[i];
            let run = format!("isometry-enumeration walk {i}");
            let g = step_integrand(walk, c.k).map_err(in_run(&run))?;
            let integral = integrate_vs_martingale(&g, &walk.decomposition.martingale).map_err(in_run(&run))?;
            let energy = bracket_energy(&g, &walk.decomposition.predictable_bracket(0, 0), order)
                .map_err(in_run(&run))?;
            Ok((integral.last().norm(order).powi(2), *energy.last().unwrap()))
        })?;
        // equal weights 2^{-k}: both expectations are plain means in path order
        let n = per_path.len() as f64;
        let lhs = per_path.iter().map(|v| v.0).sum::<f64>() / n;
        let rhs = per_path.iter().map(|v| v.1).sum::<f64>() / n;
        let diff = (lhs - rhs).abs();
        worst = worst.max(diff);
        w.write_record([
            format_float(p),
            walks.len().to_string(),
            format_float(lhs),
            format_float(rhs),
            format_float(diff),
        ])?;
        checks.push(Check::at_most(2, &format!("isometry by enumeration (k={}, p={p})", c.k), diff, c.isometry_tol));
    }
    w.flush()?;

    let walks = scaled_walk(c.decomposition_k, WalkMode::Exhaustive, None)?;
    let nb = NormBound {
        order: SobolevOrder::new(0.0)?,
        bound: 1e9,
    };
    let rows = ctx.per_path(walks.len(), |i| {
        let walk = &walks[i];
        let run = format!("isometry-enumeration decomposition walk {i}");
        let g = CoeffPath::from_fn(1, 4, walk.path.times().to_vec(), |j| {
            let x = walk.path.value(j)[0];
            Ok(coeffs(&[1.0, x, x * x, -0.5 * x, 0.25]))
        })
        .map_err(in_run(&run))?;
        let shifted = shifted_decomposition(walk, c.drift).map_err(in_run(&run))?;
        let (a, _) = integrate_vs_semimartingale(&g, &walk.decomposition, nb).map_err(in_run(&run))?;
        let (b, _) = integrate_vs_semimartingale(&g, &shifted, nb).map_err(in_run(&run))?;
        let mut diff = 0.0f64;
        for k in 0..a.len() {
            for (x, y) in a.row(k).iter().zip(b.row(k)) {
                diff = diff.max((x - y).abs());
            }
        }
        Ok((diff, shifted.consistency_error(&walk.path)))
    })?;
    let mut w = csv::Writer::from_writer(ctx.create("decomposition.csv")?);
    w.write_record(["path", "max_abs_diff", "consistency_error"])?;
    for (i, (diff, cons)) in rows.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*diff), format_float(*cons)])?;
    }
    w.flush()?;
    let max_diff = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    checks.push(Check::at_most(
        3,
        &format!("decomposition independence on all {} walks (k={})", walks.len(), c.decomposition_k),
        max_diff,
        c.decomposition_tol,
    ));
    Ok(checks)
}
