use std::collections::HashMap;

use hermite_ito::hermite::{basis_len, enumerate_multi_indices};
use hermite_ito::operators::{derivative, derivative_matrix, max_identity_deviation};
use hermite_ito::sobolev::format_float;
use hermite_ito::{HermiteCoeffs, SobolevOrder, Translator};
use nalgebra::DMatrix;
use rand::Rng;

use super::Context;
use crate::error::{in_run, CliResult};
use crate::verdict::Check;

const CRITERION: u32 = 1;

fn random_coeffs(d: usize, cap: usize, rng: &mut impl Rng) -> HermiteCoeffs {
    let c = (0..basis_len(d, cap)).map(|_| rng.random_range(-1.0..1.0)).collect();
    HermiteCoeffs::from_vec(d, cap, c).expect("finite coefficients")
}

// ∂_i h_n = √(n_i/2) h_{n−e_i} − √((n_i+1)/2) h_{n+e_i}, placed by looking up multi-indices
// in the enumerated output basis rather than through the rank formula.
fn recurrence_oracle(d: usize, i: usize, cap: usize) -> DMatrix<f64> {
    let cols = enumerate_multi_indices(d, cap);
    let rows: HashMap<Vec<u32>, usize> = enumerate_multi_indices(d, cap + 1)
        .into_iter()
        .enumerate()
        .map(|(r, n)| (n.entries().to_vec(), r))
        .collect();
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (c, n) in cols.iter().enumerate() {
        let ni = n.entries()[i] as f64;
        if let Some(lo) = n.lowered(i) {
            m[(rows[lo.entries()], c)] = (ni / 2.0).sqrt();
        }
        m[(rows[n.raised(i).entries()], c)] = -((ni + 1.0) / 2.0).sqrt();
    }
    m
}

pub fn run(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    let c = ctx.cfg.operator_checks();
    let (big, n_eval) = (c.n_big, c.n_eval);
    let order = |p: f64| SobolevOrder::new(p).expect("finite order");
    let mut w = csv::Writer::from_writer(ctx.create("operator_checks.csv")?);
    w.write_record(["check", "d", "measured", "threshold", "pass"])?;
    let mut checks = Vec::new();
    for &d in &c.dims {
        let run = format!("operator-checks d={d}");
        let translator = Translator::new(d, big).map_err(in_run(&run))?;
        let mut rng = ctx.rng(d as u64, 0, "random-coefficients");

        let mut recurrence = 0.0f64;
        for i in 0..d {
            let got = derivative_matrix(d, i, big).matrix;
            recurrence = recurrence.max((got - recurrence_oracle(d, i, big)).abs().max());
        }

        let mut duality = 0.0f64;
        let mut commutation = 0.0f64;
        for _ in 0..c.samples {
            let phi = random_coeffs(d, big, &mut rng);
            let psi = random_coeffs(d, big - 2, &mut rng);
            for i in 0..d {
                let lhs = derivative(&phi, i).pairing(&psi)?;
                let rhs = -phi.pairing(&derivative(&psi, i))?;
                duality = duality.max((lhs - rhs).abs());
            }
            let phi = random_coeffs(d, big - 8, &mut rng);
            let scale = phi.norm(order(1.0));
            for &s in &c.shifts {
                let x = vec![s; d];
                for i in 0..d {
                    let a = translator.apply(&derivative(&phi, i).resized(big), &x)?;
                    let b = derivative(&translator.apply(&phi, &x)?, i).resized(big);
                    commutation = commutation.max(a.difference(&b).norm_upto(order(0.0), n_eval) / scale);
                }
            }
        }

        let identity = max_identity_deviation(&translator.matrix(&vec![0.0; d])?.matrix);
        let g = vec![c.group_shift; d];
        let product = translator.matrix(&g)?.compose(&translator.matrix(&g.iter().map(|v| -v).collect::<Vec<_>>())?);
        let group = max_identity_deviation(&product.block(n_eval, n_eval));

        for (name, measured, tol) in [
            ("derivative recurrence", recurrence, c.recurrence_tol),
            ("duality sign", duality, c.duality_tol),
            ("translation commutes with derivative", commutation, c.commutation_tol),
            ("T(0) = Id", identity, c.identity_tol),
            ("T(x)T(-x) = Id on the evaluation block", group, c.group_tol),
        ] {
            let check = Check::at_most(CRITERION, &format!("{name} (d={d})"), measured, tol);
            w.write_record([
                name.to_string(),
                d.to_string(),
                format_float(measured),
                format_float(tol),
                check.pass.to_string(),
            ])?;
            checks.push(check);
        }
    }
    w.flush()?;
    Ok(checks)
}
