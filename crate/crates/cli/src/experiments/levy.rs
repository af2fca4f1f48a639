use hermite_ito::levy::{simulate_fd_sde, spde_residual, LevyEngine, LevyModel, LevyPreset, SpdeOptions, SpdeReport};
use hermite_ito::paths::{uniform_grid, BrownianField, PathNoise};
use hermite_ito::sobolev::format_float;
use hermite_ito::Translator;

use super::brownian::{convergence_checks, refinement_study, LevelRow, Study};
use super::{path_file, uniform_steps, Context};
use crate::config::LevySpde;
use crate::error::{in_run, CliResult};
use crate::verdict::Check;

const CRITERION: u32 = 7;

fn build_model(c: &LevySpde) -> CliResult<LevyModel> {
    let preset = LevyPreset::parse(&c.preset).expect("validated preset");
    let mut model = preset.model(c.n_big)?;
    model.horizon = c.horizon;
    if let Some(eps) = c.epsilon {
        model.epsilon = eps;
    }
    if let Some(bins) = c.bins {
        model.bins = bins;
    }
    model.validate()?;
    Ok(model)
}

fn one_path(
    model: &LevyModel,
    translator: &Translator,
    c: &LevySpde,
    field: &mut BrownianField,
    noise_jumps: hermite_ito::rng::StreamRng,
    grid: &[f64],
    seed_tag: u64,
    compare_ito: bool,
) -> hermite_ito::Result<SpdeReport> {
    let mut engine = LevyEngine::new(model, translator, c.min_retention)?;
    let mut noise = PathNoise {
        brownian: field,
        jumps: noise_jumps,
        seed_tag,
    };
    let run = simulate_fd_sde(&mut engine, grid, &mut noise)?;
    let opts = SpdeOptions {
        n_eval: c.n_eval,
        compare_ito,
        norm_bound: c.norm_bound,
    };
    spde_residual(&mut engine, &run, &opts)
}

fn min_retention(r: &SpdeReport) -> f64 {
    r.retention.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.levy_spde();
    let model = build_model(&c)?;
    let translator = Translator::new(1, c.n_big)?;
    let steps = uniform_steps(c.level);
    let grid = uniform_grid(c.horizon, steps);
    let level = c.level as u64;

    let reports = ctx.per_path(c.paths, |i| {
        let run = format!("levy-spde level {} path {i}", c.level);
        let mut field = BrownianField::new(
            1,
            c.horizon,
            steps,
            &mut ctx.rng(level, i as u64, "brownian"),
            ctx.rng(level, i as u64, "bridge"),
        );
        let jumps = ctx.rng(level, i as u64, "jumps");
        one_path(&model, &translator, &c, &mut field, jumps, &grid, i as u64, true).map_err(in_run(&run))
    })?;

    let mut w = csv::Writer::from_writer(ctx.create("spde.csv")?);
    w.write_record([
        "path",
        "small_jumps",
        "large_jumps",
        "residual_order",
        "terminal_residual",
        "max_residual",
        "rearrangement_gap",
        "ito_gap",
        "small_jump_energy",
        "max_small_jump",
        "second_order_ratio",
        "min_retention",
    ])?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.small_jumps.to_string(),
            r.large_jumps.to_string(),
            format_float(r.residual_order()),
            format_float(r.terminal_residual()),
            format_float(r.max_residual()),
            format_float(r.max_rearrangement_gap()),
            r.max_ito_gap().map_or(String::new(), format_float),
            format_float(r.small_jump_energy),
            format_float(r.max_small_jump),
            format_float(r.second_order_ratio),
            format_float(min_retention(r)),
        ])?;
        if i < c.path_csvs {
            r.write_csv(ctx.create(&path_file("paths", i))?)?;
        }
    }
    w.flush()?;
    let b = model.budget();
    let mut w = csv::Writer::from_writer(ctx.create("budget.csv")?);
    w.write_record(["epsilon", "bins", "tail_second_moment", "quadrature_error", "small_mass", "large_mass"])?;
    w.write_record([
        format_float(model.epsilon),
        model.bins.to_string(),
        format_float(b.tail_second_moment),
        format_float(b.quadrature_error),
        format_float(b.small_mass),
        format_float(b.large_mass),
    ])?;
    w.flush()?;

    let fold = |f: &dyn Fn(&SpdeReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most(
            CRITERION,
            &format!("rearrangement identity on small jumps, max over {} paths", c.paths),
            fold(&|r| r.max_rearrangement_gap()),
            c.gap_tol,
        ),
        Check::at_most(
            CRITERION,
            "SPDE assembly against the Ito assembly on identical paths",
            fold(&|r| r.max_ito_gap().unwrap_or(f64::NAN)),
            c.ito_gap_tol,
        ),
        Check::below(CRITERION, "recorded small jumps stay below the cutoff", fold(&|r| r.max_small_jump), 1.0),
    ];

    if !c.no_jump_levels.is_empty() {
        let calm = model.without_jumps();
        let study = Study {
            dir: "no_jumps",
            levels: &c.no_jump_levels,
            paths: c.no_jump_paths,
            coupled: c.coupled,
            horizon: c.horizon,
            path_csvs: c.path_csvs,
        };
        let conv = refinement_study(ctx, &study, |field, grid, level, i, keep| {
            let run = format!("levy-spde no-jumps level {level} path {i}");
            let jumps = ctx.rng(level as u64, i as u64, "no-jumps");
            let r = one_path(&calm, &translator, &c, field, jumps, grid, i as u64, false).map_err(in_run(&run))?;
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
                retention: min_retention(&r),
                jumps: r.small_jumps + r.large_jumps,
                csv,
            })
        })?;
        checks.extend(convergence_checks(CRITERION, "SPDE residual with nu = 0", &conv, c.slope_min, c.slope_max));
    }
    Ok(checks)
}
