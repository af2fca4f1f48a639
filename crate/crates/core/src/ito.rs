//! Both sides of the Itô formula for τ_{X_t}φ along a simulated rcll semimartingale, and the
//! local-time field ∫ δ_{X_{s−}} d⟨X⟩^c_s.
//!
//! RHS(t) = τ_{X_0}φ − Σ_i ∫ ∂_iτ_{X_{s−}}φ dX^i_s + ½ Σ_{ij} ∫ ∂²_{ij}τ_{X_{s−}}φ d[X^i,X^j]^c_s + Y_t
//! Y_t = Σ_{s≤t} (τ_{X_s}φ − τ_{X_{s−}}φ + Σ_i ΔX^i_s ∂_iτ_{X_{s−}}φ)

use std::collections::HashMap;
use std::io::Write;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::integration::{
    integrate_scalar, integrate_vs_fv, integrate_vs_semimartingale, CoeffPath, NormBound,
    ScalarPath,
};
use crate::operators::{delta_coeffs, derivative, mass_retention, Translator};
use crate::paths::{BracketPath, BracketSource, RcllPath, Semimartingale};
use crate::sobolev::{format_float, HermiteCoeffs, SobolevOrder};

/// Spacing of the grid on which translated states are memoized.
pub const STATE_QUANTUM: f64 = 1e-12;

/// Smallest evaluation cushion N_big − N_eval accepted by residual computations.
pub const MIN_CUSHION: usize = 6;

/// τ_xφ with its first and second derivatives, all truncated to the translator's cap.
#[derive(Clone, Debug)]
pub struct TranslatedState {
    pub tau: HermiteCoeffs,
    /// ∂_iτ_xφ
    pub grad: Vec<HermiteCoeffs>,
    /// ∂_i∂_jτ_xφ, row-major d×d
    pub hess: Vec<HermiteCoeffs>,
    pub retention: f64,
}

/// Memoized translates of a fixed φ, keyed by the state quantized to [`STATE_QUANTUM`].
///
/// One cache per worker; translates of the same state are bitwise identical wherever
/// they are used, which the jump telescoping relies on.
pub struct TranslationCache<'a> {
    translator: &'a Translator,
    phi: HermiteCoeffs,
    map: HashMap<Vec<i64>, Rc<TranslatedState>>,
}

impl<'a> TranslationCache<'a> {
    pub fn new(translator: &'a Translator, phi: &HermiteCoeffs) -> Result<Self> {
        if phi.dim() != translator.dim() {
            return Err(Error::Usage("φ and translator differ in dimension".into()));
        }
        if phi.cap() > translator.cap() {
            return Err(Error::Usage(format!(
                "φ has cap {} above the translator cap {}",
                phi.cap(),
                translator.cap()
            )));
        }
        Ok(TranslationCache {
            translator,
            phi: phi.resized(translator.cap()),
            map: HashMap::new(),
        })
    }

    pub fn phi(&self) -> &HermiteCoeffs {
        &self.phi
    }

    pub fn cap(&self) -> usize {
        self.translator.cap()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&mut self, x: &[f64]) -> Result<Rc<TranslatedState>> {
        let key: Vec<i64> = x.iter().map(|v| (v / STATE_QUANTUM).round() as i64).collect();
        if let Some(s) = self.map.get(&key) {
            return Ok(Rc::clone(s));
        }
        let cap = self.translator.cap();
        let d = self.translator.dim();
        let tau = self.translator.apply(&self.phi, x)?;
        let raw_grad: Vec<HermiteCoeffs> = (0..d).map(|i| derivative(&tau, i)).collect();
        let mut hess = Vec::with_capacity(d * d);
        for i in 0..d {
            for g in &raw_grad {
                hess.push(derivative(g, i).resized(cap));
            }
        }
        let grad = raw_grad.into_iter().map(|g| g.resized(cap)).collect();
        let retention = mass_retention(&self.phi, &tau);
        let state = Rc::new(TranslatedState {
            tau,
            grad,
            hess,
            retention,
        });
        self.map.insert(key, Rc::clone(&state));
        Ok(state)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ItoOptions {
    /// φ ∈ S_{−p}; residuals are measured in ‖·‖_{−p−1}.
    pub p: f64,
    /// N_eval: highest order entering reported norms.
    pub n_eval: usize,
    /// Smallest admissible ‖τ_xφ‖_0/‖φ‖_0 along the path.
    pub min_retention: f64,
    /// R in the norm-boundedness check of the first-order integrand.
    pub norm_bound: f64,
}

impl ItoOptions {
    pub fn new(p: f64, n_eval: usize) -> Self {
        ItoOptions {
            p,
            n_eval,
            min_retention: 0.999,
            norm_bound: 1e12,
        }
    }
}

/// Per-time residuals and term norms of one Itô assembly.
#[derive(Clone, Debug)]
pub struct ItoReport {
    pub times: Vec<f64>,
    pub n_big: usize,
    pub n_eval: usize,
    pub p: f64,
    /// ‖LHS − RHS‖_{−p−1} at N_eval.
    pub residual: Vec<f64>,
    /// ‖Σ_i ∫∂_iτφ dX^i‖_{−p−1/2}
    pub first_order: Vec<f64>,
    /// ‖½Σ∫∂²τφ d[X]^c‖_{−p−1}
    pub second_order: Vec<f64>,
    /// ‖Y_t‖_{−p−1}
    pub jump_series: Vec<f64>,
    /// min of the retention at X(t_k) and X(t_k−)
    pub retention: Vec<f64>,
    pub jump_count: usize,
    pub bracket_source: BracketSource,
}

impl ItoReport {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().cloned().fold(0.0, f64::max)
    }

    pub fn terminal_residual(&self) -> f64 {
        *self.residual.last().unwrap()
    }

    pub fn min_retention(&self) -> f64 {
        self.retention.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn residual_order(&self) -> f64 {
        -self.p - 1.0
    }

    /// CSV: time, residual, term norms, retention.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "time",
            "residual",
            "first_order_norm",
            "second_order_norm",
            "jump_series_norm",
            "retention",
        ])?;
        for k in 0..self.times.len() {
            w.write_record([
                format_float(self.times[k]),
                format_float(self.residual[k]),
                format_float(self.first_order[k]),
                format_float(self.second_order[k]),
                format_float(self.jump_series[k]),
                format_float(self.retention[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coefficient paths of both sides, with the report computed from them.
#[derive(Clone, Debug)]
pub struct ItoAssembly {
    pub lhs: CoeffPath,
    pub rhs: CoeffPath,
    /// Σ_i ∫ ∂_iτ_{X_{s−}}φ dX^i
    pub first_order: CoeffPath,
    /// Σ_{ij} ∫ ∂²_{ij}τ_{X_{s−}}φ d[X^i,X^j]^c (without the factor ½)
    pub second_order: CoeffPath,
    pub jump_series: CoeffPath,
    pub report: ItoReport,
}

fn ord(p: f64) -> SobolevOrder {
    SobolevOrder::new(p).expect("finite order")
}

fn check_caps(cache: &TranslationCache<'_>, n_eval: usize) -> Result<()> {
    if n_eval + MIN_CUSHION > cache.cap() {
        return Err(Error::Usage(format!(
            "evaluation cap {n_eval} leaves a cushion below {MIN_CUSHION} under N = {}",
            cache.cap()
        )));
    }
    Ok(())
}

fn retention_breach(t: f64, r: f64, min: f64) -> Error {
    Error::Numeric(format!(
        "mass retention {r:.6} below {min} at t = {t}: the path leaves the range resolved by the cap"
    ))
}

/// Translates at every grid value and left limit, in time order, enforcing retention.
fn states_along(
    cache: &mut TranslationCache<'_>,
    path: &RcllPath,
    min_retention: f64,
) -> Result<(Vec<Rc<TranslatedState>>, HashMap<usize, Rc<TranslatedState>>)> {
    let mut at = Vec::with_capacity(path.len());
    let mut left = HashMap::new();
    for k in 0..path.len() {
        let t = path.times()[k];
        if let Some(r) = path.jump_at(k) {
            let s = cache.get(&r.left)?;
            if s.retention < min_retention {
                return Err(retention_breach(t, s.retention, min_retention));
            }
            left.insert(k, s);
        }
        let s = cache.get(path.value(k))?;
        if s.retention < min_retention {
            return Err(retention_breach(t, s.retention, min_retention));
        }
        at.push(s);
    }
    Ok((at, left))
}

/// Y_t along the path using translates from `cache`; constant between jump records.
pub fn jump_compensation_series_cached(
    cache: &mut TranslationCache<'_>,
    path: &RcllPath,
) -> Result<CoeffPath> {
    let d = path.dim();
    let cap = cache.cap();
    let mut y = CoeffPath::zeros(d, cap, path.times().to_vec());
    for k in 1..path.len() {
        let prev = y.row(k - 1).to_vec();
        let row = y.row_mut(k);
        row.copy_from_slice(&prev);
        if let Some(r) = path.jump_at(k) {
            let after = cache.get(path.value(k))?;
            let before = cache.get(&r.left)?;
            for (i, o) in row.iter_mut().enumerate() {
                let mut inc = after.tau.as_slice()[i] - before.tau.as_slice()[i];
                for (dx, g) in r.jump.iter().zip(&before.grad) {
                    inc += dx * g.as_slice()[i];
                }
                *o += inc;
            }
        }
    }
    Ok(y)
}

/// Y_t for φ along X, with translates at the translator's cap.
pub fn jump_compensation_series(
    phi: &HermiteCoeffs,
    path: &RcllPath,
    translator: &Translator,
) -> Result<CoeffPath> {
    let mut cache = TranslationCache::new(translator, phi)?;
    jump_compensation_series_cached(&mut cache, path)
}

/// Assembles LHS and RHS of the Itô formula for τ_{X_t}φ and measures the residual.
pub fn ito_assemble(
    cache: &mut TranslationCache<'_>,
    sm: &Semimartingale,
    opts: &ItoOptions,
) -> Result<ItoAssembly> {
    check_caps(cache, opts.n_eval)?;
    let path = &sm.path;
    let d = path.dim();
    if d != cache.translator.dim() {
        return Err(Error::Usage("path and φ differ in dimension".into()));
    }
    let cap = cache.cap();
    let times = path.times().to_vec();
    let (at, left) = states_along(cache, path, opts.min_retention)?;

    let lhs = CoeffPath::from_fn(d, cap, times.clone(), |k| Ok(at[k].tau.clone()))?;

    let first_bound = NormBound {
        order: ord(-opts.p - 0.5),
        bound: opts.norm_bound,
    };
    let mut first = CoeffPath::zeros(d, cap, times.clone());
    for i in 0..d {
        let mut g = CoeffPath::from_fn(d, cap, times.clone(), |k| Ok(at[k].grad[i].clone()))?;
        g.predictable = true;
        for (&k, s) in &left {
            g.set_left_limit(k, &s.grad[i])?;
        }
        let (int, _) = integrate_vs_semimartingale(&g, &sm.decomposition.component(i), first_bound)?;
        first = first.linear_combination(1.0, &int, 1.0)?;
    }

    let second_bound = NormBound {
        order: ord(-opts.p - 1.0),
        bound: opts.norm_bound,
    };
    let mut second = CoeffPath::zeros(d, cap, times.clone());
    for i in 0..d {
        for j in 0..d {
            let br = sm
                .bracket(i, j)
                .ok_or_else(|| Error::Usage(format!("missing bracket [X^{i}, X^{j}]")))?;
            if br.continuous.iter().all(|&c| c == 0.0) {
                continue;
            }
            let mut g = CoeffPath::from_fn(d, cap, times.clone(), |k| Ok(at[k].hess[i * d + j].clone()))?;
            g.predictable = true;
            let (int, _) = integrate_vs_fv(&g, &br.continuous_path(), second_bound)?;
            second = second.linear_combination(1.0, &int, 1.0)?;
        }
    }

    let y = jump_compensation_series_cached(cache, path)?;

    let mut rhs = CoeffPath::zeros(d, cap, times.clone());
    let start = at[0].tau.as_slice();
    for k in 0..rhs.len() {
        let (f, s, j) = (first.row(k), second.row(k), y.row(k));
        let out = rhs.row_mut(k);
        for n in 0..out.len() {
            out[n] = start[n] - f[n] + 0.5 * s[n] + j[n];
        }
    }

    let report = build_report(ReportInputs {
        lhs: &lhs,
        rhs: &rhs,
        first: &first,
        second: &second,
        jumps: &y,
        at: &at,
        left: &left,
        opts,
        cap,
        jump_count: path.jump_count(),
        source: sm.bracket_source,
    });
    Ok(ItoAssembly {
        lhs,
        rhs,
        first_order: first,
        second_order: second,
        jump_series: y,
        report,
    })
}

struct ReportInputs<'r> {
    lhs: &'r CoeffPath,
    rhs: &'r CoeffPath,
    first: &'r CoeffPath,
    second: &'r CoeffPath,
    jumps: &'r CoeffPath,
    at: &'r [Rc<TranslatedState>],
    left: &'r HashMap<usize, Rc<TranslatedState>>,
    opts: &'r ItoOptions,
    cap: usize,
    jump_count: usize,
    source: BracketSource,
}

fn build_report(r: ReportInputs<'_>) -> ItoReport {
    let p = r.opts.p;
    let ne = r.opts.n_eval;
    let d = r.lhs.dim();
    let residual = (0..r.lhs.len())
        .map(|k| {
            let diff: Vec<f64> = r.lhs.row(k).iter().zip(r.rhs.row(k)).map(|(a, b)| a - b).collect();
            crate::sobolev::norm_of_slice(d, &diff, -p - 1.0, ne)
        })
        .collect();
    let mut half = r.second.clone();
    for k in 0..half.len() {
        for v in half.row_mut(k) {
            *v *= 0.5;
        }
    }
    let retention = (0..r.lhs.len())
        .map(|k| {
            let a = r.at[k].retention;
            r.left.get(&k).map_or(a, |s| a.min(s.retention))
        })
        .collect();
    ItoReport {
        times: r.lhs.times().to_vec(),
        n_big: r.cap,
        n_eval: ne,
        p,
        residual,
        first_order: r.first.norms(ord(-p - 0.5), ne),
        second_order: half.norms(ord(-p - 1.0), ne),
        jump_series: r.jumps.norms(ord(-p - 1.0), ne),
        retention,
        jump_count: r.jump_count,
        bracket_source: r.source,
    }
}

/// Residual report of the Itô formula for φ (cap N_big = translator cap) along `sm`.
pub fn ito_residual(
    phi: &HermiteCoeffs,
    sm: &Semimartingale,
    translator: &Translator,
    opts: &ItoOptions,
) -> Result<ItoReport> {
    let mut cache = TranslationCache::new(translator, phi)?;
    Ok(ito_assemble(&mut cache, sm, opts)?.report)
}

/// ⟨RHS(t), ψ⟩ assembled through scalar integrals of f(x) = ⟨τ_xφ, ψ⟩:
/// f(X_t) = f(X_0) + Σ_i∫∂_if dX^i + ½Σ∫∂²_{ij}f d[X^i,X^j]^c + Σ_s(f(X_s) − f(X_{s−}) − ∇f·ΔX_s),
/// with ∂_if(x) = −⟨∂_iτ_xφ, ψ⟩ and ∂²_{ij}f(x) = ⟨∂²_{ij}τ_xφ, ψ⟩.
pub fn ito_rhs_paired(
    cache: &mut TranslationCache<'_>,
    sm: &Semimartingale,
    psi: &HermiteCoeffs,
    opts: &ItoOptions,
) -> Result<Vec<f64>> {
    let path = &sm.path;
    let d = path.dim();
    let (at, left) = states_along(cache, path, opts.min_retention)?;
    let pair = |c: &HermiteCoeffs| c.pairing(psi);
    let n = path.len();
    let mut total = vec![pair(&at[0].tau)?; n];

    for i in 0..d {
        let mut g = ScalarPath {
            values: at.iter().map(|s| pair(&s.grad[i]).map(|v| -v)).collect::<Result<_>>()?,
            left: Default::default(),
        };
        for (&k, s) in &left {
            g.left.insert(k, -pair(&s.grad[i])?);
        }
        let comp = sm.decomposition.component(i);
        let m = integrate_scalar(&g, &comp.martingale)?;
        let a = integrate_scalar(&g, &comp.fv)?;
        for k in 0..n {
            total[k] += m[k] + a[k];
        }
    }
    for i in 0..d {
        for j in 0..d {
            let br = sm
                .bracket(i, j)
                .ok_or_else(|| Error::Usage(format!("missing bracket [X^{i}, X^{j}]")))?;
            let g = ScalarPath {
                values: at.iter().map(|s| pair(&s.hess[i * d + j])).collect::<Result<_>>()?,
                left: Default::default(),
            };
            let v = integrate_scalar(&g, &br.continuous_path())?;
            for k in 0..n {
                total[k] += 0.5 * v[k];
            }
        }
    }
    let mut acc = 0.0;
    for k in 0..n {
        if let Some(r) = path.jump_at(k) {
            let before = &left[&k];
            acc += pair(&at[k].tau)? - pair(&before.tau)?;
            for (dx, g) in r.jump.iter().zip(&before.grad) {
                acc += dx * pair(g)?;
            }
        }
        total[k] += acc;
    }
    Ok(total)
}

fn check_local_time_inputs(path: &RcllPath, bracket: &BracketPath) -> Result<()> {
    if path.dim() != 1 {
        return Err(Error::Usage(format!(
            "local time is defined for one-dimensional paths, got d={}",
            path.dim()
        )));
    }
    if bracket.times != path.times() {
        return Err(Error::Usage("bracket and path grids differ".into()));
    }
    Ok(())
}

/// Coefficients ∫_0^t h_n(X_{s−}) d⟨X⟩^c_s, i.e. the field ∫ δ_{X_{s−}} d⟨X⟩^c_s, for p > 1/4.
pub fn local_time_field(path: &RcllPath, bracket: &BracketPath, cap: usize, p: f64) -> Result<CoeffPath> {
    check_local_time_inputs(path, bracket)?;
    if !(p > 0.25) {
        return Err(Error::Usage(format!(
            "δ_x lies in S_(-p) only for p > 1/4, got p = {p}"
        )));
    }
    let times = path.times().to_vec();
    let mut g = CoeffPath::from_fn(1, cap, times, |k| delta_coeffs(path.value(k), cap))?;
    g.predictable = true;
    for r in path.jumps() {
        g.set_left_limit(r.index, &delta_coeffs(&r.left, cap)?)?;
    }
    let nb = NormBound {
        order: ord(-p),
        bound: f64::MAX,
    };
    Ok(integrate_vs_fv(&g, &bracket.continuous_path(), nb)?.0)
}

/// The terminal row of [`local_time_field`], without materializing the path.
pub fn local_time_terminal(path: &RcllPath, bracket: &BracketPath, cap: usize) -> Result<HermiteCoeffs> {
    check_local_time_inputs(path, bracket)?;
    let mut acc = vec![0.0; cap + 1];
    let mut table = vec![0.0; cap + 1];
    for j in 0..path.len() - 1 {
        // the continuous bracket has no jumps, so only the continuous increment enters
        let dc = bracket.continuous[j + 1] - bracket.continuous[j];
        if dc == 0.0 {
            continue;
        }
        crate::hermite::hermite_functions_into(path.value(j)[0], &mut table);
        for (a, h) in acc.iter_mut().zip(&table) {
            *a += h * dc;
        }
    }
    HermiteCoeffs::from_vec(1, cap, acc)
}

/// Σ_j K_h(x − X(t_j)) Δ⟨X⟩^c_j with the Gaussian kernel of bandwidth h.
pub fn occupation_kernel_estimate(path: &RcllPath, bracket: &BracketPath, x: f64, h: f64) -> Result<f64> {
    check_local_time_inputs(path, bracket)?;
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = 0.0;
    for j in 0..path.len() - 1 {
        let dc = bracket.continuous[j + 1] - bracket.continuous[j];
        let u = (x - path.value(j)[0]) / h;
        acc += norm * (-0.5 * u * u).exp() * dc;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite, MultiIndex};
    use crate::paths::{
        simulate_brownian, simulate_jump_diffusion, uniform_grid, BrownianField,
        CompoundPoisson, PathBuilder, PathNoise, SemimartingaleDecomposition,
    };
    use crate::rng::stream;

    fn h0(cap: usize) -> HermiteCoeffs {
        HermiteCoeffs::basis_vector(cap, &MultiIndex::new(vec![0]))
    }

    fn pure_jump_path(seed: u64, rate: f64) -> Semimartingale {
        let mut field = BrownianField::new(1, 1.0, 64, &mut stream(seed, &[1]), stream(seed, &[2]));
        let mut noise = PathNoise {
            brownian: &mut field,
            jumps: stream(seed, &[3]),
            seed_tag: seed,
        };
        simulate_jump_diffusion(&mut CompoundPoisson { rate, scale: 0.6 }, &[0.0], &uniform_grid(1.0, 64), &mut noise)
            .unwrap()
            .semimartingale
    }

    fn constant_path(x: f64) -> Semimartingale {
        let grid = uniform_grid(1.0, 8);
        let path = RcllPath::continuous(1, grid.clone(), vec![x; 9]).unwrap();
        let zero = RcllPath::continuous(1, grid.clone(), vec![0.0; 9]).unwrap();
        let decomposition = SemimartingaleDecomposition::new(vec![x], zero.clone(), zero, vec![0.0; 9]).unwrap();
        let br = crate::paths::realized_bracket(&path, &path, 0, 0).unwrap();
        Semimartingale {
            path,
            decomposition,
            brackets: vec![br],
            bracket_source: BracketSource::Realized,
        }
    }

    #[test]
    fn constant_path_has_zero_residual() {
        let t = Translator::new(1, 24).unwrap();
        let rep = ito_residual(&h0(24), &constant_path(0.4), &t, &ItoOptions::new(1.0, 18)).unwrap();
        assert!(rep.residual.iter().all(|&r| r == 0.0));
        assert_eq!(rep.jump_count, 0);
    }

    #[test]
    fn cushion_is_enforced() {
        let t = Translator::new(1, 24).unwrap();
        let err = ito_residual(&h0(24), &constant_path(0.0), &t, &ItoOptions::new(1.0, 19));
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn pure_jump_paths_telescope() {
        let t = Translator::new(1, 40).unwrap();
        for seed in 0..10 {
            let sm = pure_jump_path(seed, 3.0);
            let rep = ito_residual(&h0(40), &sm, &t, &ItoOptions::new(1.0, 34)).unwrap();
            assert!(rep.max_residual() < 1e-12, "seed {seed}: {}", rep.max_residual());
        }
    }

    #[test]
    fn single_jump_series_matches_three_term_expression() {
        let t = Translator::new(1, 30).unwrap();
        let phi = h0(30);
        let mut b = PathBuilder::new(1);
        b.push(0.0, &[0.2]).unwrap();
        b.push(0.4, &[0.2]).unwrap();
        b.push_jump(0.5, &[0.2], &[0.3], None).unwrap();
        b.push(1.0, &[0.5]).unwrap();
        let path = b.finish();
        let y = jump_compensation_series(&phi, &path, &t).unwrap();
        assert!(y.row(0).iter().chain(y.row(1)).all(|&v| v == 0.0));
        let dx = path.jump_at(2).unwrap().jump[0];
        let after = t.apply(&phi, &[0.5]).unwrap();
        let before = t.apply(&phi, &[0.2]).unwrap();
        let grad = derivative(&before, 0).resized(30);
        for n in 0..=30 {
            let want = after.as_slice()[n] - before.as_slice()[n] + dx * grad.as_slice()[n];
            assert!((y.row(2)[n] - want).abs() < 1e-15);
            assert_eq!(y.row(3)[n], y.row(2)[n]);
        }
    }

    #[test]
    fn continuous_path_has_no_jump_series() {
        let t = Translator::new(1, 20).unwrap();
        let sm = simulate_brownian(1, &uniform_grid(1.0, 32), &mut stream(1, &[0])).unwrap();
        let y = jump_compensation_series(&h0(20), &sm.path, &t).unwrap();
        assert!((0..y.len()).all(|k| y.row(k).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn jump_increment_is_second_order() {
        let t = Translator::new(1, 40).unwrap();
        let phi = h0(40);
        let p = 1.0;
        let mut ratios = Vec::new();
        for delta in [0.1, 0.05, 0.025] {
            let mut b = PathBuilder::new(1);
            b.push(0.0, &[0.3]).unwrap();
            b.push_jump(1.0, &[0.3], &[delta], None).unwrap();
            let y = jump_compensation_series(&phi, &b.finish(), &t).unwrap();
            let inc = crate::sobolev::norm_of_slice(1, y.row(1), -p - 1.0, 34);
            ratios.push(inc / (delta * delta));
        }
        // ‖ΔY‖ ≈ ½Δ²‖∂²τφ‖: the ratio settles as Δ shrinks
        assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
        assert!((ratios[2] / ratios[1] - 1.0).abs() < 0.05, "{ratios:?}");
        assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.1, "{ratios:?}");
    }

    #[test]
    fn paired_route_matches_coefficient_route() {
        let t = Translator::new(1, 32).unwrap();
        let phi = HermiteCoeffs::from_vec(1, 4, vec![1.0, 0.3, -0.2, 0.0, 0.1]).unwrap();
        let mut field = BrownianField::new(1, 1.0, 128, &mut stream(4, &[1]), stream(4, &[2]));
        let sm = crate::paths::brownian_from_field(&mut field, &uniform_grid(1.0, 128)).unwrap();
        let mut cache = TranslationCache::new(&t, &phi).unwrap();
        let opts = ItoOptions::new(1.0, 26);
        let asm = ito_assemble(&mut cache, &sm, &opts).unwrap();
        for n in 0..6 {
            let psi = HermiteCoeffs::basis_vector(26, &MultiIndex::new(vec![n]));
            let scalar = ito_rhs_paired(&mut cache, &sm, &psi, &opts).unwrap();
            for k in 0..asm.rhs.len() {
                assert!((asm.rhs.at(k).pairing(&psi).unwrap() - scalar[k]).abs() < 1e-10);
            }
        }
        let jumps = pure_jump_path(3, 5.0);
        let asm = ito_assemble(&mut cache, &jumps, &opts).unwrap();
        let psi = HermiteCoeffs::basis_vector(26, &MultiIndex::new(vec![2]));
        let scalar = ito_rhs_paired(&mut cache, &jumps, &psi, &opts).unwrap();
        for k in 0..asm.rhs.len() {
            assert!((asm.rhs.at(k).pairing(&psi).unwrap() - scalar[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn smooth_fv_path_residual_is_first_order_in_dt() {
        // X_t = sin(t) as a pure drift: the residual is the Riemann-sum error, O(Δt)
        let t = Translator::new(1, 30).unwrap();
        let phi = h0(30);
        let mut res = Vec::new();
        for steps in [64usize, 128, 256] {
            let grid = uniform_grid(1.0, steps);
            let vals: Vec<f64> = grid.iter().map(|s| s.sin()).collect();
            let path = RcllPath::continuous(1, grid.clone(), vals.clone()).unwrap();
            let zero = RcllPath::continuous(1, grid.clone(), vec![0.0; grid.len()]).unwrap();
            let fv = RcllPath::continuous(1, grid.clone(), vals).unwrap();
            let decomposition =
                SemimartingaleDecomposition::new(vec![0.0], zero.clone(), fv, vec![0.0; grid.len()]).unwrap();
            let br = crate::paths::BracketPath {
                i: 0,
                j: 0,
                times: grid.clone(),
                full: vec![0.0; grid.len()],
                continuous: vec![0.0; grid.len()],
            };
            let sm = Semimartingale {
                path,
                decomposition,
                brackets: vec![br],
                bracket_source: BracketSource::Model,
            };
            res.push(ito_residual(&phi, &sm, &t, &ItoOptions::new(0.0, 24)).unwrap().terminal_residual());
        }
        assert!((res[0] / res[1] - 2.0).abs() < 0.1, "{res:?}");
        assert!((res[1] / res[2] - 2.0).abs() < 0.1, "{res:?}");
    }

    #[test]
    fn retention_breach_names_time() {
        let t = Translator::new(1, 12).unwrap();
        let grid = uniform_grid(1.0, 4);
        let vals: Vec<f64> = grid.iter().map(|s| 8.0 * s).collect();
        let path = RcllPath::continuous(1, grid.clone(), vals.clone()).unwrap();
        let zero = RcllPath::continuous(1, grid.clone(), vec![0.0; 5]).unwrap();
        let fv = RcllPath::continuous(1, grid.clone(), vals).unwrap();
        let dec = SemimartingaleDecomposition::new(vec![0.0], zero, fv, vec![0.0; 5]).unwrap();
        let br = crate::paths::realized_bracket(&path, &path, 0, 0).unwrap();
        let sm = Semimartingale { path, decomposition: dec, brackets: vec![br], bracket_source: BracketSource::Realized };
        match ito_residual(&h0(12), &sm, &t, &ItoOptions::new(1.0, 6)) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("t = 0.5"), "{msg}"),
            other => panic!("expected retention error, got {other:?}"),
        }
    }

    #[test]
    fn local_time_field_definitions() {
        let grid = uniform_grid(1.0, 256);
        let sm = simulate_brownian(1, &grid, &mut stream(21, &[0])).unwrap();
        let br = sm.bracket(0, 0).unwrap();
        let field = local_time_field(&sm.path, br, 40, 0.3).unwrap();
        let direct: f64 = (0..256).map(|j| hermite(0, sm.path.value(j)[0]) * (grid[j + 1] - grid[j])).sum();
        assert!((field.last().pairing(&h0(0)).unwrap() - direct).abs() < 1e-10);
        let terminal = local_time_terminal(&sm.path, br, 40).unwrap();
        assert_eq!(terminal.as_slice(), field.row(256));

        let jumps = pure_jump_path(2, 3.0);
        let jf = local_time_field(&jumps.path, jumps.bracket(0, 0).unwrap(), 20, 0.3).unwrap();
        assert!((0..jf.len()).all(|k| jf.row(k).iter().all(|&v| v == 0.0)));

        assert!(matches!(local_time_field(&sm.path, br, 10, 0.25), Err(Error::Usage(_))));
        let two = simulate_brownian(2, &grid, &mut stream(1, &[0])).unwrap();
        assert!(matches!(
            local_time_field(&two.path, two.bracket(0, 0).unwrap(), 10, 0.5),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn reconstruction_tracks_kernel_estimate() {
        // one path: sup over x ∈ [−2, 2] of |Hermite reconstruction − kernel estimate|
        // shrinks as the grid refines and the cap follows the kernel bandwidth
        let mut field = BrownianField::new(1, 1.0, 1 << 12, &mut stream(8, &[1]), stream(8, &[2]));
        let mut sup = Vec::new();
        for level in [6u32, 9, 12] {
            let grid = uniform_grid(1.0, 1 << level);
            let sm = crate::paths::brownian_from_field(&mut field, &grid).unwrap();
            let br = sm.bracket(0, 0).unwrap();
            let dt = 1.0 / (1u64 << level) as f64;
            let h = dt.powf(0.4);
            let cap = (1.0 / (std::f64::consts::PI * h * h)).round() as usize;
            let c = local_time_terminal(&sm.path, br, cap).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..=40 {
                let x = -2.0 + 0.1 * i as f64;
                let k = occupation_kernel_estimate(&sm.path, br, x, h).unwrap();
                worst = worst.max((c.evaluate(&[x]) - k).abs());
            }
            sup.push(worst);
        }
        assert!(sup[2] < sup[0], "{sup:?}");
    }
}
