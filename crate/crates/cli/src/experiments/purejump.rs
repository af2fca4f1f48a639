use hermite_ito::hermite::MultiIndex;
use hermite_ito::ito::{ito_residual, ItoOptions};
use hermite_ito::paths::{simulate_jump_diffusion, uniform_grid, BrownianField, CompoundPoisson, PathNoise};
use hermite_ito::sobolev::format_float;
use hermite_ito::{HermiteCoeffs, Translator};

use super::{path_file, Context};
use crate::error::{in_run, CliResult};
use crate::verdict::Check;

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.ito_purejump();
    let translator = Translator::new(1, c.n_big)?;
    let phi = HermiteCoeffs::basis_vector(c.n_big, &MultiIndex::new(vec![0]));
    let opts = ItoOptions::new(c.p, c.n_eval);
    let grid = uniform_grid(c.horizon, c.steps);
    let reports = ctx.per_path(c.paths, |i| {
        let run = format!("ito-purejump path {i}");
        // σ = 0: the Brownian field is drawn but never enters the path
        let mut field = BrownianField::new(1, c.horizon, c.steps, &mut ctx.rng(0, i as u64, "brownian"), ctx.rng(0, i as u64, "bridge"));
        let mut noise = PathNoise {
            brownian: &mut field,
            jumps: ctx.rng(0, i as u64, "jumps"),
            seed_tag: i as u64,
        };
        let mut model = CompoundPoisson {
            rate: c.rate,
            scale: c.jump_scale,
        };
        let sm = simulate_jump_diffusion(&mut model, &[0.0], &grid, &mut noise)
            .map_err(in_run(&run))?
            .semimartingale;
        ito_residual(&phi, &sm, &translator, &opts).map_err(in_run(&run))
    })?;
    let mut w = csv::Writer::from_writer(ctx.create("summary.csv")?);
    w.write_record(["path", "jumps", "max_residual", "terminal_residual", "min_retention", "bracket_source"])?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.jump_count.to_string(),
            format_float(r.max_residual()),
            format_float(r.terminal_residual()),
            format_float(r.min_retention()),
            r.bracket_source.as_str().to_string(),
        ])?;
        if i < c.path_csvs {
            r.write_csv(ctx.create(&path_file("paths", i))?)?;
        }
    }
    w.flush()?;
    let worst = reports.iter().map(|r| r.max_residual()).fold(0.0, f64::max);
    Ok(vec![Check::at_most(
        4,
        &format!("pure-jump max residual over {} paths", c.paths),
        worst,
        c.tol,
    )])
}
