//! The one-dimensional Lévy-driven SDE
//!   dX = b̄(X_{t−})dt + σ̄(X_{t−})dB + ∫_{0<|x|<1} F̄(X_{t−},x) Ñ(dt,dx) + ∫_{|x|≥1} Ḡ(X_{t−},x) N(dt,dx)
//! with σ̄(x) = ⟨σ, τ_xφ⟩, b̄(x) = ⟨b, τ_xφ⟩, and the equation satisfied by Y_t = τ_{X_t}φ:
//!   Y_t = φ + ∫A(Y_{s−})dB + ∫L(Y_{s−})ds
//!       + ∫∫_{0<|x|<1} (τ_{F̄} − Id + F̄∂)Y_{s−} ν(dx)ds + ∫∫_{0<|x|<1} (τ_{F̄} − Id)Y_{s−} Ñ(ds,dx)
//!       + ∫∫_{|x|≥1} (τ_{Ḡ} − Id)Y_{s−} N(ds,dx)
//! where Aψ = −⟨σ,ψ⟩∂ψ and Lψ = ½⟨σ,ψ⟩²∂²ψ − ⟨b,ψ⟩∂ψ.
//!
//! Small jumps live on ε < |x| < 1 and are discretized into log-spaced bins per sign; each
//! bin is an atom at its midpoint carrying the bin's ν-mass. Marks are drawn from these atoms,
//! so the compensator sum over the same atoms is the exact compensator of the simulated
//! jumps. The gap to the continuous measure is reported as an error budget.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::integration::{integrate_vs_fv, integrate_vs_martingale, CoeffPath, NormBound};
use crate::ito::{ito_assemble, ItoOptions, TranslationCache, MIN_CUSHION};
use crate::operators::{delta_coeffs, derivative, Translator};
use crate::paths::{
    simulate_jump_diffusion, JumpDiffusionModel, JumpDiffusionPath, PathBuilder, PathNoise,
    RcllPath,
};
use crate::rng::StreamRng;
use crate::sobolev::{format_float, norm_of_slice, HermiteCoeffs};

/// Marks with |x| below this cutoff are small jumps.
pub const JUMP_CUTOFF: f64 = 1.0;

/// Density of ν on 0 < |x| < 1 (the same on both signs).
#[derive(Clone, Debug, PartialEq)]
pub enum SmallJumpDensity {
    None,
    /// rate/2 per unit length on each side, total mass `rate` on 0 < |x| < 1.
    Uniform { rate: f64 },
    /// c·|x|^{−1−α}, 0 < α < 2.
    StableLike { c: f64, alpha: f64 },
}

impl SmallJumpDensity {
    /// ν((a, b)) on one side, 0 < a < b ≤ 1.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        match *self {
            SmallJumpDensity::None => 0.0,
            SmallJumpDensity::Uniform { rate } => 0.5 * rate * (b - a),
            SmallJumpDensity::StableLike { c, alpha } => c * (a.powf(-alpha) - b.powf(-alpha)) / alpha,
        }
    }

    /// ∫_a^b x² ν(dx) on one side, 0 ≤ a < b ≤ 1.
    pub fn second_moment(&self, a: f64, b: f64) -> f64 {
        match *self {
            SmallJumpDensity::None => 0.0,
            SmallJumpDensity::Uniform { rate } => 0.5 * rate * (b.powi(3) - a.powi(3)) / 3.0,
            SmallJumpDensity::StableLike { c, alpha } => {
                c * (b.powf(2.0 - alpha) - a.powf(2.0 - alpha)) / (2.0 - alpha)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SmallJumpDensity::None => Ok(()),
            SmallJumpDensity::Uniform { rate } if rate.is_finite() && rate >= 0.0 => Ok(()),
            SmallJumpDensity::StableLike { c, alpha }
                if c.is_finite() && c >= 0.0 && alpha > 0.0 && alpha < 2.0 =>
            {
                Ok(())
            }
            ref other => Err(Error::Config(format!("invalid small-jump density {other:?}"))),
        }
    }
}

/// F̄(x̃, m) for small marks m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmallJumpMap {
    /// F̄ = m
    Identity,
    /// F̄ = m·min(1, κ/|x̃|): the jump shrinks far from the origin, |F̄| ≤ |m| < 1.
    Damped { kappa: f64 },
}

impl SmallJumpMap {
    pub fn eval(self, state: f64, mark: f64) -> f64 {
        match self {
            SmallJumpMap::Identity => mark,
            SmallJumpMap::Damped { kappa } => {
                let a = state.abs();
                if a <= kappa {
                    mark
                } else {
                    mark * (kappa / a)
                }
            }
        }
    }
}

/// Ḡ(x̃, m) for large marks m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LargeJumpMap {
    /// Ḡ = m
    Identity,
}

impl LargeJumpMap {
    pub fn eval(self, _state: f64, mark: f64) -> f64 {
        match self {
            LargeJumpMap::Identity => mark,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevyMeasure {
    pub small: SmallJumpDensity,
    /// (position, mass) with |position| ≥ 1
    pub large_atoms: Vec<(f64, f64)>,
}

impl LevyMeasure {
    pub fn zero() -> Self {
        LevyMeasure {
            small: SmallJumpDensity::None,
            large_atoms: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LevyModel {
    /// φ ∈ S_p
    pub phi: HermiteCoeffs,
    /// σ, b ∈ S_{−p}
    pub sigma: HermiteCoeffs,
    pub b: HermiteCoeffs,
    /// Regularity index of φ; residuals are measured in ‖·‖_{p−1}.
    pub p: f64,
    pub measure: LevyMeasure,
    pub epsilon: f64,
    pub bins: usize,
    pub small_map: SmallJumpMap,
    pub large_map: LargeJumpMap,
    pub horizon: f64,
    pub x0: f64,
    /// Freeze σ̄ and b̄ at their values at x0.
    pub frozen: bool,
}

/// The discretized small-jump measure: atoms ±midpoint with bin masses.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallJumpAtoms {
    /// Pairs (m, −m) are adjacent: marks[2i] = m_i > 0, marks[2i+1] = −m_i.
    pub marks: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Error budget of the small-jump truncation and discretization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpBudget {
    /// ∫_{|x|<ε} x² ν(dx): mass dropped by the truncation.
    pub tail_second_moment: f64,
    /// |∫_{ε<|x|<1} x² ν(dx) − Σ m² ν_m|: midpoint-rule error of the bins.
    pub quadrature_error: f64,
    pub small_mass: f64,
    pub large_mass: f64,
}

impl LevyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("phi", &self.phi), ("sigma", &self.sigma), ("b", &self.b)] {
            if c.dim() != 1 {
                return Err(Error::Config(format!("{name} must be one-dimensional")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon = {} outside (0, 1)", self.epsilon)));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !self.x0.is_finite() {
            return Err(Error::Config("horizon and x0 must be finite, horizon > 0".into()));
        }
        self.measure.small.validate()?;
        for &(x, m) in &self.measure.large_atoms {
            if !(x.abs() >= JUMP_CUTOFF && x.is_finite() && m.is_finite() && m >= 0.0) {
                return Err(Error::Config(format!("invalid large-jump atom ({x}, {m})")));
            }
        }
        if let SmallJumpMap::Damped { kappa } = self.small_map {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::Config(format!("damping κ = {kappa} must be positive")));
            }
        }
        Ok(())
    }

    pub fn small_atoms(&self) -> SmallJumpAtoms {
        let mut marks = Vec::new();
        let mut masses = Vec::new();
        if self.measure.small == SmallJumpDensity::None {
            return SmallJumpAtoms { marks, masses };
        }
        let edges: Vec<f64> = (0..=self.bins)
            .map(|i| self.epsilon * (1.0 / self.epsilon).powf(i as f64 / self.bins as f64))
            .collect();
        for w in edges.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let mass = self.measure.small.mass(w[0], w[1]);
            marks.extend([mid, -mid]);
            masses.extend([mass, mass]);
        }
        SmallJumpAtoms { marks, masses }
    }

    pub fn budget(&self) -> JumpBudget {
        let atoms = self.small_atoms();
        let discrete: f64 = atoms.marks.iter().zip(&atoms.masses).map(|(m, v)| m * m * v).sum();
        let continuous = 2.0 * self.measure.small.second_moment(self.epsilon, 1.0);
        JumpBudget {
            tail_second_moment: 2.0 * self.measure.small.second_moment(0.0, self.epsilon),
            quadrature_error: (continuous - discrete).abs(),
            small_mass: atoms.masses.iter().sum(),
            large_mass: self.measure.large_atoms.iter().map(|a| a.1).sum(),
        }
    }

    pub fn without_jumps(&self) -> LevyModel {
        LevyModel {
            measure: LevyMeasure::zero(),
            ..self.clone()
        }
    }
}

/// Named parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevyPreset {
    /// Uniform small jumps, atoms at ±1.5, δ-type σ and b.
    Default,
    /// Default jumps with σ = b = 0.
    PureJump,
    /// Default coefficients with ν ≡ 0.
    NoJumps,
    /// Small-jump density |x|^{−1.8} truncated at ε.
    StableLike,
}

impl LevyPreset {
    pub const ALL: [LevyPreset; 4] = [
        LevyPreset::Default,
        LevyPreset::PureJump,
        LevyPreset::NoJumps,
        LevyPreset::StableLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LevyPreset::Default => "default",
            LevyPreset::PureJump => "pure-jump",
            LevyPreset::NoJumps => "no-jumps",
            LevyPreset::StableLike => "stable-like",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            LevyPreset::Default => {
                "nu = 2 dx on 0<|x|<1 (lambda1 = 4) + 0.25 at each of +-1.5; F(x,m) = m min(1, 1/|x|), G = m; sigma = 0.8 delta_0, b = 0.5 d(delta_0), phi = h_0"
            }
            LevyPreset::PureJump => "default jumps, sigma = b = 0",
            LevyPreset::NoJumps => "default coefficients, nu = 0",
            LevyPreset::StableLike => {
                "nu = 0.5 |x|^(-1.8) dx on eps<|x|<1 + 0.25 at each of +-1.5; default coefficients"
            }
        }
    }

    pub fn parse(name: &str) -> Option<LevyPreset> {
        LevyPreset::ALL.into_iter().find(|p| p.name() == name)
    }

    /// The model at coefficient cap `cap`.
    pub fn model(self, cap: usize) -> Result<LevyModel> {
        let phi = HermiteCoeffs::basis_vector(cap, &crate::hermite::MultiIndex::new(vec![0]))
            .with_label("h0");
        let mut sigma = delta_coeffs(&[0.0], cap)?;
        sigma.scale(0.8);
        let mut b = derivative(&delta_coeffs(&[0.0], cap)?, 0).resized(cap);
        b.scale(0.5);
        let large = vec![(1.5, 0.25), (-1.5, 0.25)];
        let mut model = LevyModel {
            phi,
            sigma: sigma.with_label("0.8 delta_0"),
            b: b.with_label("0.5 d delta_0"),
            p: 1.0,
            measure: LevyMeasure {
                small: SmallJumpDensity::Uniform { rate: 4.0 },
                large_atoms: large,
            },
            epsilon: 0.05,
            bins: 8,
            small_map: SmallJumpMap::Damped { kappa: 1.0 },
            large_map: LargeJumpMap::Identity,
            horizon: 1.0,
            x0: 0.0,
            frozen: false,
        };
        match self {
            LevyPreset::Default => {}
            LevyPreset::PureJump => {
                model.sigma = HermiteCoeffs::zeros(1, cap);
                model.b = HermiteCoeffs::zeros(1, cap);
            }
            LevyPreset::NoJumps => model.measure = LevyMeasure::zero(),
            LevyPreset::StableLike => {
                model.measure.small = SmallJumpDensity::StableLike { c: 0.5, alpha: 0.8 };
            }
        }
        Ok(model)
    }
}

/// Aψ = −⟨σ,ψ⟩∂ψ, at cap N+1.
pub fn apply_a(state: &HermiteCoeffs, sigma: &HermiteCoeffs) -> Result<HermiteCoeffs> {
    let s = sigma.pairing(state)?;
    let mut out = derivative(state, 0);
    out.scale(-s);
    Ok(out)
}

/// Lψ = ½⟨σ,ψ⟩²∂²ψ − ⟨b,ψ⟩∂ψ, at cap N+2.
pub fn apply_l(state: &HermiteCoeffs, sigma: &HermiteCoeffs, b: &HermiteCoeffs) -> Result<HermiteCoeffs> {
    let s = sigma.pairing(state)?;
    let bb = b.pairing(state)?;
    let d1 = derivative(state, 0);
    let mut out = derivative(&d1, 0);
    out.scale(0.5 * s * s);
    out.axpy(-bb, &d1);
    Ok(out)
}

/// σ̄, b̄ and the compensator drift c̄(x̃) = Σ_m F̄(x̃, m) ν_m, evaluated through a shared
/// translation cache (so each state is translated once).
pub struct LevyEngine<'a> {
    pub model: &'a LevyModel,
    pub cache: TranslationCache<'a>,
    pub atoms: SmallJumpAtoms,
    min_retention: f64,
    frozen_at: Option<(f64, f64)>,
}

impl<'a> LevyEngine<'a> {
    pub fn new(model: &'a LevyModel, translator: &'a Translator, min_retention: f64) -> Result<Self> {
        model.validate()?;
        let cap = translator.cap();
        for (name, c) in [("phi", &model.phi), ("sigma", &model.sigma), ("b", &model.b)] {
            if c.cap() > cap {
                return Err(Error::Config(format!("{name} has cap {} above N = {cap}", c.cap())));
            }
        }
        let mut engine = LevyEngine {
            model,
            cache: TranslationCache::new(translator, &model.phi)?,
            atoms: model.small_atoms(),
            min_retention,
            frozen_at: None,
        };
        if model.frozen {
            let s = engine.sigma_bar(model.x0)?;
            let b = engine.b_bar(model.x0)?;
            engine.frozen_at = Some((s, b));
        }
        Ok(engine)
    }

    fn translated(&mut self, x: f64) -> Result<std::rc::Rc<crate::ito::TranslatedState>> {
        let s = self.cache.get(&[x])?;
        if s.retention < self.min_retention {
            return Err(Error::Numeric(format!(
                "mass retention {:.6} below {} at state x = {x}",
                s.retention, self.min_retention
            )));
        }
        Ok(s)
    }

    /// σ̄(x) = ⟨σ, τ_xφ⟩
    pub fn sigma_bar(&mut self, x: f64) -> Result<f64> {
        if let Some((s, _)) = self.frozen_at {
            return Ok(s);
        }
        let s = self.translated(x)?;
        self.model.sigma.pairing(&s.tau)
    }

    /// b̄(x) = ⟨b, τ_xφ⟩
    pub fn b_bar(&mut self, x: f64) -> Result<f64> {
        if let Some((_, b)) = self.frozen_at {
            return Ok(b);
        }
        let s = self.translated(x)?;
        self.model.b.pairing(&s.tau)
    }

    /// Σ_m F̄(x, m) ν_m, summed in ± pairs.
    pub fn compensator(&self, x: f64) -> f64 {
        let f = self.model.small_map;
        self.atoms
            .marks
            .chunks(2)
            .zip(self.atoms.masses.chunks(2))
            .map(|(m, v)| f.eval(x, m[0]) * v[0] + f.eval(x, m[1]) * v[1])
            .sum()
    }

    pub fn total_intensity(&self) -> f64 {
        self.atoms.masses.iter().sum::<f64>() + self.model.measure.large_atoms.iter().map(|a| a.1).sum::<f64>()
    }
}

impl JumpDiffusionModel for LevyEngine<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn drift_and_vol(&mut self, x: &[f64], drift: &mut [f64], vol: &mut [f64]) -> Result<()> {
        drift[0] = self.b_bar(x[0])? - self.compensator(x[0]);
        vol[0] = self.sigma_bar(x[0])?;
        Ok(())
    }

    fn intensity(&self) -> f64 {
        self.total_intensity()
    }

    fn sample_jump(&mut self, left: &[f64], rng: &mut StreamRng, raw: &mut [f64]) -> Result<Option<f64>> {
        let total = self.total_intensity();
        let mut u = rng.random::<f64>() * total;
        for (&m, &v) in self.atoms.marks.iter().zip(&self.atoms.masses) {
            if u < v {
                raw[0] = self.model.small_map.eval(left[0], m);
                return Ok(Some(m));
            }
            u -= v;
        }
        let large = &self.model.measure.large_atoms;
        for (i, &(m, v)) in large.iter().enumerate() {
            if u < v || i + 1 == large.len() {
                raw[0] = self.model.large_map.eval(left[0], m);
                return Ok(Some(m));
            }
            u -= v;
        }
        // rounding left u just above the last small atom and there are no large atoms
        let m = *self.atoms.marks.last().expect("positive intensity has atoms");
        raw[0] = self.model.small_map.eval(left[0], m);
        Ok(Some(m))
    }
}

/// One simulated path of the SDE with its driving noise.
pub fn simulate_fd_sde(
    engine: &mut LevyEngine<'_>,
    grid: &[f64],
    noise: &mut PathNoise<'_>,
) -> Result<JumpDiffusionPath> {
    let x0 = engine.model.x0;
    simulate_jump_diffusion(engine, &[x0], grid, noise)
}

/// Per-time residuals and diagnostics of the SPDE assembly.
#[derive(Clone, Debug)]
pub struct SpdeReport {
    pub times: Vec<f64>,
    pub n_big: usize,
    pub n_eval: usize,
    /// φ ∈ S_p; norms below are ‖·‖_{p−1}.
    pub p: f64,
    pub residual: Vec<f64>,
    pub brownian_term: Vec<f64>,
    pub drift_term: Vec<f64>,
    pub compensator_term: Vec<f64>,
    pub small_jump_term: Vec<f64>,
    pub large_jump_term: Vec<f64>,
    /// ‖N-integral − Ñ-integral − ν⊗ds-integral‖ of (τ_F − Id + F∂)Y on small jumps
    pub rearrangement_gap: Vec<f64>,
    /// ‖RHS_spde − RHS_ito‖, when the Itô assembly was run on the same path
    pub ito_gap: Option<Vec<f64>>,
    pub retention: Vec<f64>,
    pub small_jumps: usize,
    pub large_jumps: usize,
    /// Σ over small jumps of F̄(X_{s−}, m)²
    pub small_jump_energy: f64,
    pub max_small_jump: f64,
    /// max over small jumps of ‖(τ_F − Id + F∂)τ_{X_{s−}}φ‖_{p−1} / F̄²
    pub second_order_ratio: f64,
    pub budget: JumpBudget,
}

impl SpdeReport {
    pub fn terminal_residual(&self) -> f64 {
        *self.residual.last().unwrap()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_rearrangement_gap(&self) -> f64 {
        self.rearrangement_gap.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_ito_gap(&self) -> Option<f64> {
        self.ito_gap.as_ref().map(|g| g.iter().cloned().fold(0.0, f64::max))
    }

    pub fn residual_order(&self) -> f64 {
        self.p - 1.0
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "time",
            "residual",
            "brownian_term_norm",
            "drift_term_norm",
            "compensator_term_norm",
            "small_jump_term_norm",
            "large_jump_term_norm",
            "rearrangement_gap",
            "ito_gap",
            "retention",
        ])?;
        for k in 0..self.times.len() {
            let ito = self.ito_gap.as_ref().map_or(String::new(), |g| format_float(g[k]));
            w.write_record([
                format_float(self.times[k]),
                format_float(self.residual[k]),
                format_float(self.brownian_term[k]),
                format_float(self.drift_term[k]),
                format_float(self.compensator_term[k]),
                format_float(self.small_jump_term[k]),
                format_float(self.large_jump_term[k]),
                format_float(self.rearrangement_gap[k]),
                ito,
                format_float(self.retention[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpdeOptions {
    pub n_eval: usize,
    /// Also assemble the Itô formula on the same path and record the gap.
    pub compare_ito: bool,
    pub norm_bound: f64,
}

// Counting process of the marks equal to `mark` in the path's jump records,
// optionally compensated by rate·t.
fn counting_path(path: &RcllPath, mark: f64, rate: f64) -> Result<RcllPath> {
    let times = path.times();
    let t0 = times[0];
    let mut b = PathBuilder::with_capacity(1, times.len());
    let mut count = 0.0;
    b.push(t0, &[0.0])?;
    for k in 1..times.len() {
        let comp = count - rate * (times[k] - t0);
        match path.jump_at(k) {
            Some(r) if r.mark == Some(mark) => {
                b.push_jump(times[k], &[comp], &[1.0], None)?;
                count += 1.0;
            }
            _ => b.push(times[k], &[comp])?,
        }
    }
    Ok(b.finish())
}

fn add_into(acc: &mut CoeffPath, other: &CoeffPath) {
    for k in 0..acc.len() {
        for (a, b) in acc.row_mut(k).iter_mut().zip(other.row(k)) {
            *a += b;
        }
    }
}

/// Assembles the six terms of the SPDE on a simulated path and measures the residual.
pub fn spde_residual(
    engine: &mut LevyEngine<'_>,
    run: &JumpDiffusionPath,
    opts: &SpdeOptions,
) -> Result<SpdeReport> {
    let cap = engine.cache.cap();
    if opts.n_eval + MIN_CUSHION > cap {
        return Err(Error::Usage(format!(
            "evaluation cap {} leaves a cushion below {MIN_CUSHION} under N = {cap}",
            opts.n_eval
        )));
    }
    let model = engine.model;
    let sm = &run.semimartingale;
    let path = &sm.path;
    let times = path.times().to_vec();
    let n = times.len();
    let q = model.p - 1.0;
    let nb = NormBound {
        order: crate::sobolev::SobolevOrder::new(q)?,
        bound: opts.norm_bound,
    };
    let clock = RcllPath::continuous(1, times.clone(), times.iter().map(|t| t - times[0]).collect())?;

    let mut at = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n);
    let mut drift = Vec::with_capacity(n);
    for k in 0..n {
        let x = path.value(k)[0];
        at.push(engine.translated(x)?);
        sig.push(engine.sigma_bar(x)?);
        drift.push(engine.b_bar(x)?);
    }
    let mut left = BTreeMap::new();
    for r in path.jumps() {
        left.insert(r.index, engine.translated(r.left[0])?);
    }

    // ∫ A(Y_{s−}) dB with A(Y) = −σ̄ ∂Y
    let g_a = CoeffPath::from_fn(1, cap, times.clone(), |k| {
        let mut g = at[k].grad[0].clone();
        g.scale(-sig[k]);
        Ok(g)
    })?;
    let brownian = integrate_vs_martingale(&g_a, &run.brownian)?;

    // ∫ L(Y_{s−}) ds with L(Y) = ½σ̄²∂²Y − b̄ ∂Y
    let g_l = CoeffPath::from_fn(1, cap, times.clone(), |k| {
        let mut g = at[k].hess[0].clone();
        g.scale(0.5 * sig[k] * sig[k]);
        g.axpy(-drift[k], &at[k].grad[0]);
        Ok(g)
    })?;
    let (drift_int, _) = integrate_vs_fv(&g_l, &clock, nb)?;

    // small jumps, one atom at a time
    let atoms = engine.atoms.clone();
    let fmap = model.small_map;
    let mut compensator = CoeffPath::zeros(1, cap, times.clone());
    let mut small = CoeffPath::zeros(1, cap, times.clone());
    let mut n_small = CoeffPath::zeros(1, cap, times.clone());
    let mut nt_small = CoeffPath::zeros(1, cap, times.clone());
    for (&m, &mass) in atoms.marks.iter().zip(&atoms.masses) {
        // H = (τ_F − Id)Y_{s−},  K = H + F ∂Y_{s−}
        let mut h = CoeffPath::zeros(1, cap, times.clone());
        let mut kk = CoeffPath::zeros(1, cap, times.clone());
        for k in 0..n {
            let x = path.value(k)[0];
            let f = fmap.eval(x, m);
            let moved = engine.translated(x + f)?;
            let base = &at[k];
            let hr = h.row_mut(k);
            for (i, o) in hr.iter_mut().enumerate() {
                *o = moved.tau.as_slice()[i] - base.tau.as_slice()[i];
            }
            let kr = kk.row_mut(k);
            for (i, o) in kr.iter_mut().enumerate() {
                *o = moved.tau.as_slice()[i] - base.tau.as_slice()[i] + f * base.grad[0].as_slice()[i];
            }
        }
        for (&k, base) in &left {
            let xl = path.jump_at(k).unwrap().left[0];
            let f = fmap.eval(xl, m);
            let moved = engine.translated(xl + f)?;
            let mut hv = moved.tau.clone();
            hv.axpy(-1.0, &base.tau);
            let mut kv = hv.clone();
            kv.axpy(f, &base.grad[0]);
            h.set_left_limit(k, &hv)?;
            kk.set_left_limit(k, &kv)?;
        }
        let counts = counting_path(path, m, 0.0)?;
        let compensated = counting_path(path, m, mass)?;
        let mut mass_clock = clock.clone();
        if mass != 1.0 {
            mass_clock = RcllPath::continuous(1, times.clone(), times.iter().map(|t| mass * (t - times[0])).collect())?;
        }
        let (c_int, _) = integrate_vs_fv(&kk, &mass_clock, nb)?;
        add_into(&mut compensator, &c_int);
        add_into(&mut small, &integrate_vs_martingale(&h, &compensated)?);
        let (n_int, _) = integrate_vs_fv(&kk, &counts, nb)?;
        add_into(&mut n_small, &n_int);
        add_into(&mut nt_small, &integrate_vs_martingale(&kk, &compensated)?);
    }

    // large jumps: (τ_Ḡ − Id)Y_{s−} paid at each recorded large jump
    let mut large = CoeffPath::zeros(1, cap, times.clone());
    for &(m, _) in &model.measure.large_atoms {
        let mut h = CoeffPath::zeros(1, cap, times.clone());
        for (&k, base) in &left {
            let r = path.jump_at(k).unwrap();
            if r.mark != Some(m) {
                continue;
            }
            let moved = engine.translated(r.left[0] + model.large_map.eval(r.left[0], m))?;
            let mut hv = moved.tau.clone();
            hv.axpy(-1.0, &base.tau);
            h.set_left_limit(k, &hv)?;
        }
        let (l_int, _) = integrate_vs_fv(&h, &counting_path(path, m, 0.0)?, nb)?;
        add_into(&mut large, &l_int);
    }

    let start = at[0].tau.as_slice();
    let mut rhs = CoeffPath::zeros(1, cap, times.clone());
    for k in 0..n {
        let parts = [
            brownian.row(k),
            drift_int.row(k),
            compensator.row(k),
            small.row(k),
            large.row(k),
        ];
        let out = rhs.row_mut(k);
        for i in 0..out.len() {
            out[i] = start[i] + parts.iter().map(|p| p[i]).sum::<f64>();
        }
    }

    let ne = opts.n_eval;
    let norm = |row: &[f64]| norm_of_slice(1, row, q, ne);
    let residual = (0..n)
        .map(|k| {
            let diff: Vec<f64> = at[k].tau.as_slice().iter().zip(rhs.row(k)).map(|(a, b)| a - b).collect();
            norm(&diff)
        })
        .collect();
    let rearrangement_gap = (0..n)
        .map(|k| {
            let diff: Vec<f64> = (0..n_small.row_len())
                .map(|i| n_small.row(k)[i] - nt_small.row(k)[i] - compensator.row(k)[i])
                .collect();
            norm(&diff)
        })
        .collect();

    let ito_gap = if opts.compare_ito {
        let mut io = ItoOptions::new(-model.p, ne);
        io.min_retention = engine.min_retention;
        io.norm_bound = opts.norm_bound;
        let asm = ito_assemble(&mut engine.cache, sm, &io)?;
        Some(
            (0..n)
                .map(|k| {
                    let diff: Vec<f64> = asm.rhs.row(k).iter().zip(rhs.row(k)).map(|(a, b)| a - b).collect();
                    norm(&diff)
                })
                .collect(),
        )
    } else {
        None
    };

    let mut small_jumps = 0;
    let mut large_jumps = 0;
    let mut energy = 0.0;
    let mut max_small: f64 = 0.0;
    let mut ratio: f64 = 0.0;
    for r in path.jumps() {
        let m = r.mark.unwrap_or(0.0);
        if m.abs() < JUMP_CUTOFF {
            small_jumps += 1;
            let f = r.jump[0];
            energy += f * f;
            max_small = max_small.max(f.abs());
            let base = &left[&r.index];
            let moved = engine.translated(path.value(r.index)[0])?;
            let mut v = moved.tau.clone();
            v.axpy(-1.0, &base.tau);
            v.axpy(f, &base.grad[0]);
            if f != 0.0 {
                ratio = ratio.max(norm(v.as_slice()) / (f * f));
            }
        } else {
            large_jumps += 1;
        }
    }

    let retention = (0..n)
        .map(|k| {
            let a = at[k].retention;
            left.get(&k).map_or(a, |s| a.min(s.retention))
        })
        .collect();
    Ok(SpdeReport {
        times,
        n_big: cap,
        n_eval: ne,
        p: model.p,
        residual,
        brownian_term: brownian.norms(nb.order, ne),
        drift_term: drift_int.norms(nb.order, ne),
        compensator_term: compensator.norms(nb.order, ne),
        small_jump_term: small.norms(nb.order, ne),
        large_jump_term: large.norms(nb.order, ne),
        rearrangement_gap,
        ito_gap,
        retention,
        small_jumps,
        large_jumps,
        small_jump_energy: energy,
        max_small_jump: max_small,
        second_order_ratio: ratio,
        budget: model.budget(),
    })
}
