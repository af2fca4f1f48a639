use hermite_ito::hermite::MultiIndex;
use hermite_ito::ito::jump_compensation_series;
use hermite_ito::operators::derivative;
use hermite_ito::paths::{
    simulate_jump_diffusion, uniform_grid, BrownianField, CompoundPoisson, PathNoise, RcllPath,
};
use hermite_ito::rng::stream;
use hermite_ito::{HermiteCoeffs, SobolevOrder, Translator};

const CAP: usize = 40;
const N_EVAL: usize = 34;
const P: f64 = 1.0;

fn h0() -> HermiteCoeffs {
    HermiteCoeffs::basis_vector(CAP, &MultiIndex::new(vec![0]))
}

fn residual_order() -> SobolevOrder {
    SobolevOrder::new(-P - 1.0).unwrap()
}

fn pure_jump_path(seed: u64) -> RcllPath {
    let mut field = BrownianField::new(1, 1.0, 16, &mut stream(seed, &[1]), stream(seed, &[2]));
    let mut noise = PathNoise {
        brownian: &mut field,
        jumps: stream(seed, &[3]),
        seed_tag: seed,
    };
    let mut model = CompoundPoisson { rate: 3.0, scale: 0.6 };
    simulate_jump_diffusion(&mut model, &[0.0], &uniform_grid(1.0, 16), &mut noise)
        .unwrap()
        .semimartingale
        .path
}

// ‖τ_{x+Δ}φ − τ_xφ + Δ∂τ_xφ‖ / Δ²
fn second_order_ratio(t: &Translator, phi: &HermiteCoeffs, x: f64, dx: f64) -> f64 {
    let before = t.apply(phi, &[x]).unwrap();
    let mut inc = t.apply(phi, &[x + dx]).unwrap().difference(&before);
    inc.axpy(dx, &derivative(&before, 0).resized(CAP));
    inc.norm_upto(residual_order(), N_EVAL) / (dx * dx)
}

#[test]
fn jump_series_is_constant_between_jumps() {
    let t = Translator::new(1, CAP).unwrap();
    for seed in 0..10 {
        let path = pure_jump_path(seed);
        let y = jump_compensation_series(&h0(), &path, &t).unwrap();
        for k in 1..path.len() {
            let change = y.at(k).difference(&y.at(k - 1)).norm_upto(residual_order(), N_EVAL);
            match path.jump_at(k) {
                Some(r) if r.jump[0] != 0.0 => {}
                _ => assert_eq!(change, 0.0, "seed {seed} k {k}"),
            }
        }
    }
}

#[test]
fn jump_series_variation_is_controlled_by_squared_jumps() {
    let t = Translator::new(1, CAP).unwrap();
    let phi = h0();
    let mut probe = 0.0f64;
    for i in -40..=40 {
        for j in 1..=60 {
            let dx = 0.05 * j as f64;
            for s in [dx, -dx] {
                probe = probe.max(second_order_ratio(&t, &phi, 0.1 * i as f64, s));
            }
        }
    }
    assert!(probe.is_finite() && probe > 0.0);

    let mut worst = 0.0f64;
    for seed in 0..100 {
        let path = pure_jump_path(seed);
        let y = jump_compensation_series(&phi, &path, &t).unwrap();
        let mut variation = 0.0;
        let mut squares = 0.0;
        for r in path.jumps() {
            variation += y.at(r.index).difference(&y.at(r.index - 1)).norm_upto(residual_order(), N_EVAL);
            squares += r.jump[0] * r.jump[0];
        }
        if squares > 0.0 {
            worst = worst.max(variation / squares);
        }
    }
    assert!(worst <= 1.1 * probe, "ratio {worst} against probed constant {probe}");
}
