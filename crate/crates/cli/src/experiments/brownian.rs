use hermite_ito::hermite::MultiIndex;
use hermite_ito::ito::{ito_residual, ItoOptions};
use hermite_ito::paths::{brownian_from_field, uniform_grid, BrownianField};
use hermite_ito::sobolev::format_float;
use hermite_ito::{HermiteCoeffs, Translator};

use super::{create_in, path_file, uniform_steps, Context};
use crate::error::{in_run, CliResult};
use crate::summarize::{level_file_name, summarize, Convergence};
use crate::verdict::Check;

/// What one path contributes to a level table.
pub(super) struct LevelRow {
    pub terminal: f64,
    pub max: f64,
    pub retention: f64,
    pub jumps: usize,
    /// Per-time report CSV, kept for the first few paths.
    pub csv: Option<Vec<u8>>,
}

pub(super) struct Study<'a> {
    pub dir: &'a str,
    pub levels: &'a [u32],
    pub paths: usize,
    pub coupled: bool,
    pub horizon: f64,
    pub path_csvs: usize,
}

/// Runs `f` on every (path, level) with Brownian noise from one field per path (coupled) or
/// one per (path, level), writes `<dir>/level_ℓ.csv`, and summarizes the directory.
pub(super) fn refinement_study<F>(ctx: &Context<'_>, s: &Study<'_>, f: F) -> CliResult<Convergence>
where
    F: Fn(&mut BrownianField, &[f64], u32, usize, bool) -> CliResult<LevelRow> + Sync + Send,
{
    let finest = *s.levels.last().expect("validated non-empty");
    let rows = ctx.per_path(s.paths, |i| {
        let keep = i < s.path_csvs;
        let field_for = |level: u32| {
            let tag = if s.coupled { 0 } else { level as u64 };
            let steps = uniform_steps(if s.coupled { finest } else { level });
            BrownianField::new(
                1,
                s.horizon,
                steps,
                &mut ctx.rng(tag, i as u64, "brownian"),
                ctx.rng(tag, i as u64, "bridge"),
            )
        };
        let mut shared = s.coupled.then(|| field_for(finest));
        let mut out = Vec::with_capacity(s.levels.len());
        for &level in s.levels {
            let grid = uniform_grid(s.horizon, uniform_steps(level));
            let row = match shared.as_mut() {
                Some(field) => f(field, &grid, level, i, keep)?,
                None => f(&mut field_for(level), &grid, level, i, keep)?,
            };
            out.push(row);
        }
        Ok(out)
    })?;
    let dir = ctx.out.join(s.dir);
    for (li, &level) in s.levels.iter().enumerate() {
        let dt = s.horizon / uniform_steps(level) as f64;
        let mut w = csv::Writer::from_writer(create_in(&dir, &level_file_name(level))?);
        w.write_record(["path", "dt", "terminal_residual", "max_residual", "min_retention", "jumps"])?;
        for (i, per_level) in rows.iter().enumerate() {
            let r = &per_level[li];
            w.write_record([
                i.to_string(),
                format_float(dt),
                format_float(r.terminal),
                format_float(r.max),
                format_float(r.retention),
                r.jumps.to_string(),
            ])?;
            if let Some(bytes) = &r.csv {
                std::fs::create_dir_all(dir.join(format!("level_{level:02}")))?;
                std::fs::write(dir.join(path_file(&format!("level_{level:02}"), i)), bytes)?;
            }
        }
        w.flush()?;
    }
    summarize(&dir)
}

/// Monotone decrease of the medians and the fitted slope, as two checks.
pub(super) fn convergence_checks(criterion: u32, what: &str, conv: &Convergence, lo: f64, hi: f64) -> Vec<Check> {
    let mut checks = Vec::new();
    if conv.levels.len() >= 2 {
        checks.push(Check::below(
            criterion,
            &format!("{what}: largest ratio of consecutive median residuals"),
            conv.worst_refinement_ratio(),
            1.0,
        ));
    }
    checks.push(Check::within(
        criterion,
        &format!("{what}: log-log slope of median residual against dt"),
        conv.fit.slope,
        lo,
        hi,
    ));
    checks
}

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.ito_brownian();
    let translator = Translator::new(1, c.n_big)?;
    let phi = HermiteCoeffs::basis_vector(c.n_big, &MultiIndex::new(vec![0]));
    let opts = ItoOptions::new(c.p, c.n_eval);
    let study = Study {
        dir: ".",
        levels: &c.levels,
        paths: c.paths,
        coupled: c.coupled,
        horizon: c.horizon,
        path_csvs: c.path_csvs,
    };
    let conv = refinement_study(ctx, &study, |field, grid, level, i, keep| {
        let run = format!("ito-brownian level {level} path {i}");
        let sm = brownian_from_field(field, grid).map_err(in_run(&run))?;
        let r = ito_residual(&phi, &sm, &translator, &opts).map_err(in_run(&run))?;
        let csv = if keep {
            let mut buf = Vec::new();
            r.write_csv(&mut buf)?;
            Some(buf)
        } else {
            None
        };
        Ok(LevelRow {
            terminal: r.terminal_residual(),
            max: r.max_residual(),
            retention: r.min_retention(),
            jumps: r.jump_count,
            csv,
        })
    })?;
    Ok(convergence_checks(5, "Brownian Ito residual", &conv, c.slope_min, c.slope_max))
}
