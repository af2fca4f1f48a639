use hermite_ito::ito::{local_time_terminal, occupation_kernel_estimate};
use hermite_ito::paths::{simulate_brownian, uniform_grid, Semimartingale};
use hermite_ito::sobolev::format_float;
use hermite_ito::Error;

use super::{uniform_steps, Context};
use crate::error::{in_run, CliResult};
use crate::stats::{mean_se, z_score};
use crate::verdict::Check;

const CRITERION: u32 = 6;
const PROFILE_POINTS: usize = 81;

fn bracket(sm: &Semimartingale) -> hermite_ito::Result<&hermite_ito::paths::BracketPath> {
    sm.bracket(0, 0).ok_or_else(|| Error::Usage("Brownian path without bracket".into()))
}

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.local_time();
    let level = c.level as u64;
    let grid = uniform_grid(c.horizon, uniform_steps(c.level));
    let h = c.bandwidth();
    let cap = c.reconstruction_cap();

    let main = ctx.per_path(c.paths, |i| {
        let run = format!("local-time path {i}");
        let sm = simulate_brownian(1, &grid, &mut ctx.rng(level, i as u64, "brownian")).map_err(in_run(&run))?;
        let br = bracket(&sm).map_err(in_run(&run))?;
        let field = local_time_terminal(&sm.path, br, cap).map_err(in_run(&run))?;
        let kernel = occupation_kernel_estimate(&sm.path, br, c.x, h).map_err(in_run(&run))?;
        let profile = if i == 0 {
            let mut rows = Vec::with_capacity(PROFILE_POINTS);
            for k in 0..PROFILE_POINTS {
                let x = -2.0 + 4.0 * k as f64 / (PROFILE_POINTS - 1) as f64;
                let kx = occupation_kernel_estimate(&sm.path, br, x, h).map_err(in_run(&run))?;
                rows.push((x, field.evaluate(&[x]), kx));
            }
            Some(rows)
        } else {
            None
        };
        Ok((field.evaluate(&[c.x]), kernel, profile))
    })?;
    let oracle = ctx.per_path(c.oracle_paths, |i| {
        let run = format!("local-time oracle path {i}");
        let sm = simulate_brownian(1, &grid, &mut ctx.rng(level, i as u64, "oracle")).map_err(in_run(&run))?;
        occupation_kernel_estimate(&sm.path, bracket(&sm).map_err(in_run(&run))?, c.x, h).map_err(in_run(&run))
    })?;

    let mut w = csv::Writer::from_writer(ctx.create("local_time.csv")?);
    w.write_record(["path", "reconstruction", "kernel"])?;
    for (i, (r, k, _)) in main.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*r), format_float(*k)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(ctx.create("oracle.csv")?);
    w.write_record(["path", "kernel"])?;
    for (i, k) in oracle.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*k)])?;
    }
    w.flush()?;
    if let Some(profile) = &main[0].2 {
        let mut w = csv::Writer::from_writer(ctx.create("profile_path_0000.csv")?);
        w.write_record(["x", "reconstruction", "kernel"])?;
        for (x, r, k) in profile {
            w.write_record([format_float(*x), format_float(*r), format_float(*k)])?;
        }
        w.flush()?;
    }

    let recon = mean_se(&main.iter().map(|v| v.0).collect::<Vec<_>>());
    let kernel = mean_se(&main.iter().map(|v| v.1).collect::<Vec<_>>());
    let orc = mean_se(&oracle);
    let mut w = csv::Writer::from_writer(ctx.create("summary.csv")?);
    w.write_record(["estimator", "paths", "mean", "se", "x", "bandwidth", "cap"])?;
    for (name, m, n) in [
        ("hermite-reconstruction", recon, c.paths),
        ("kernel", kernel, c.paths),
        ("kernel-oracle", orc, c.oracle_paths),
    ] {
        w.write_record([
            name.to_string(),
            n.to_string(),
            format_float(m.mean),
            format_float(m.se),
            format_float(c.x),
            format_float(h),
            cap.to_string(),
        ])?;
    }
    w.flush()?;

    Ok(vec![
        Check::at_most(CRITERION, "reconstruction vs kernel estimate (joint se)", z_score(recon, kernel), c.se_factor),
        Check::at_most(CRITERION, "reconstruction vs independent oracle (joint se)", z_score(recon, orc), c.se_factor),
        Check::at_most(CRITERION, "kernel estimate vs independent oracle (joint se)", z_score(kernel, orc), c.se_factor),
    ])
}
