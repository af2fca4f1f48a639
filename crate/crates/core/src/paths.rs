//! Rcll paths on finite grids with explicit jump records, semimartingale decompositions,
//! brackets, and the simulators that produce them.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sobolev::format_float;

#[derive(Clone, Debug, PartialEq)]
pub struct JumpRecord {
    pub index: usize,
    pub time: f64,
    /// X_{s−}
    pub left: Vec<f64>,
    /// ΔX_s, stored as X(s) − X_{s−} computed on the stored values.
    pub jump: Vec<f64>,
    pub mark: Option<f64>,
}

/// A d-dimensional rcll path sampled on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RcllPath {
    d: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    jumps: BTreeMap<usize, JumpRecord>,
}

impl RcllPath {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    pub fn terminal(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    /// X(t_k−): the recorded left limit at a jump, the value elsewhere.
    pub fn left_limit(&self, k: usize) -> &[f64] {
        match self.jumps.get(&k) {
            Some(r) => &r.left,
            None => self.value(k),
        }
    }

    pub fn jump_at(&self, k: usize) -> Option<&JumpRecord> {
        self.jumps.get(&k)
    }

    pub fn jumps(&self) -> impl Iterator<Item = &JumpRecord> {
        self.jumps.values()
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Σ_s |ΔX_s|² over the jump records.
    pub fn jump_energy(&self) -> f64 {
        self.jumps
            .values()
            .map(|r| r.jump.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// The scalar path of coordinate i.
    pub fn component(&self, i: usize) -> RcllPath {
        assert!(i < self.d);
        let values = (0..self.len()).map(|k| self.value(k)[i]).collect();
        let jumps = self
            .jumps
            .iter()
            .map(|(&k, r)| {
                (
                    k,
                    JumpRecord {
                        index: k,
                        time: r.time,
                        left: vec![r.left[i]],
                        jump: vec![r.jump[i]],
                        mark: r.mark,
                    },
                )
            })
            .collect();
        RcllPath {
            d: 1,
            times: self.times.clone(),
            values,
            jumps,
        }
    }

    /// The path restricted to grid indices 0..=k.
    pub fn truncated(&self, k: usize) -> RcllPath {
        RcllPath {
            d: self.d,
            times: self.times[..=k].to_vec(),
            values: self.values[..(k + 1) * self.d].to_vec(),
            jumps: self.jumps.range(..=k).map(|(a, b)| (*a, b.clone())).collect(),
        }
    }

    /// A path without jumps.
    pub fn continuous(d: usize, times: Vec<f64>, values: Vec<f64>) -> Result<RcllPath> {
        let mut b = PathBuilder::new(d);
        if times.len() * d != values.len() {
            return Err(Error::Usage("value array does not match the grid".into()));
        }
        for (k, &t) in times.iter().enumerate() {
            b.push(t, &values[k * d..(k + 1) * d])?;
        }
        Ok(b.finish())
    }

    /// Same grid and jump indices.
    pub fn same_grid(&self, other: &RcllPath) -> bool {
        self.times == other.times
    }

    /// CSV with columns time, x1..xd, jump (1 at jump records).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.d).map(|i| format!("x{i}")));
        header.push("jump".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![format_float(self.times[k])];
            row.extend(self.value(k).iter().map(|v| format_float(*v)));
            row.push(if self.jumps.contains_key(&k) { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Appends grid points to a path in time order.
#[derive(Debug)]
pub struct PathBuilder {
    d: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    jumps: BTreeMap<usize, JumpRecord>,
}

impl PathBuilder {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1);
        PathBuilder {
            d,
            times: Vec::new(),
            values: Vec::new(),
            jumps: BTreeMap::new(),
        }
    }

    pub fn with_capacity(d: usize, points: usize) -> Self {
        let mut b = PathBuilder::new(d);
        b.times.reserve(points);
        b.values.reserve(points * d);
        b
    }

    fn check_time(&self, t: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Usage(format!("point has {} coordinates, path has d={}", x.len(), self.d)));
        }
        if !t.is_finite() {
            return Err(Error::Usage("non-finite time".into()));
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::Usage(format!("grid not strictly increasing at t={t}")));
            }
        }
        Ok(())
    }

    /// A grid point where the path is continuous.
    pub fn push(&mut self, t: f64, x: &[f64]) -> Result<()> {
        self.check_time(t, x)?;
        self.times.push(t);
        self.values.extend_from_slice(x);
        Ok(())
    }

    /// A grid point carrying a jump: X(s) = X_{s−} + raw, ΔX stored as X(s) − X_{s−}.
    pub fn push_jump(&mut self, t: f64, left: &[f64], raw: &[f64], mark: Option<f64>) -> Result<()> {
        self.check_time(t, left)?;
        if self.times.is_empty() {
            return Err(Error::Usage("a path cannot start with a jump".into()));
        }
        let value: Vec<f64> = left.iter().zip(raw).map(|(a, b)| a + b).collect();
        let jump: Vec<f64> = value.iter().zip(left).map(|(v, l)| v - l).collect();
        let index = self.times.len();
        self.times.push(t);
        self.values.extend_from_slice(&value);
        self.jumps.insert(
            index,
            JumpRecord {
                index,
                time: t,
                left: left.to_vec(),
                jump,
                mark,
            },
        );
        Ok(())
    }

    pub fn last(&self) -> Option<&[f64]> {
        if self.times.is_empty() {
            None
        } else {
            Some(&self.values[self.values.len() - self.d..])
        }
    }

    pub fn finish(self) -> RcllPath {
        RcllPath {
            d: self.d,
            times: self.times,
            values: self.values,
            jumps: self.jumps,
        }
    }
}

/// X = X_0 + M + A on a common grid, with ⟨M^i, M^j⟩ per grid point.
#[derive(Clone, Debug)]
pub struct SemimartingaleDecomposition {
    pub x0: Vec<f64>,
    pub martingale: RcllPath,
    pub fv: RcllPath,
    /// d×d row-major block per grid point.
    predictable_bracket: Vec<f64>,
}

impl SemimartingaleDecomposition {
    pub fn new(
        x0: Vec<f64>,
        martingale: RcllPath,
        fv: RcllPath,
        predictable_bracket: Vec<f64>,
    ) -> Result<Self> {
        let d = x0.len();
        if martingale.dim() != d || fv.dim() != d {
            return Err(Error::Usage("decomposition parts disagree in dimension".into()));
        }
        if !martingale.same_grid(&fv) {
            return Err(Error::Usage("decomposition parts live on different grids".into()));
        }
        if predictable_bracket.len() != martingale.len() * d * d {
            return Err(Error::Usage("bracket array does not match the grid".into()));
        }
        if martingale.value(0).iter().chain(fv.value(0)).any(|v| *v != 0.0) {
            return Err(Error::Usage("M(0) and A(0) must vanish".into()));
        }
        Ok(SemimartingaleDecomposition {
            x0,
            martingale,
            fv,
            predictable_bracket,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn times(&self) -> &[f64] {
        self.martingale.times()
    }

    /// ⟨M^i, M^j⟩ along the grid.
    pub fn predictable_bracket(&self, i: usize, j: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.martingale.len())
            .map(|k| self.predictable_bracket[k * d * d + i * d + j])
            .collect()
    }

    pub fn component(&self, i: usize) -> SemimartingaleDecomposition {
        SemimartingaleDecomposition {
            x0: vec![self.x0[i]],
            martingale: self.martingale.component(i),
            fv: self.fv.component(i),
            predictable_bracket: self.predictable_bracket(i, i),
        }
    }

    /// max_k |X(t_k) − (X_0 + M(t_k) + A(t_k))| over all coordinates.
    pub fn consistency_error(&self, path: &RcllPath) -> f64 {
        let mut err: f64 = 0.0;
        for k in 0..path.len() {
            for i in 0..self.dim() {
                let rebuilt = self.x0[i] + self.martingale.value(k)[i] + self.fv.value(k)[i];
                err = err.max((path.value(k)[i] - rebuilt).abs());
            }
        }
        err
    }
}

/// [X^i, X^j] and its continuous part along a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketPath {
    pub i: usize,
    pub j: usize,
    pub times: Vec<f64>,
    pub full: Vec<f64>,
    pub continuous: Vec<f64>,
}

impl BracketPath {
    /// The continuous part as a scalar FV path (integrator for ∫ · d[X^i,X^j]^c).
    pub fn continuous_path(&self) -> RcllPath {
        RcllPath::continuous(1, self.times.clone(), self.continuous.clone())
            .expect("bracket grid is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BracketSource {
    /// Accumulated from the model's volatility.
    Model,
    /// Estimated from path increments.
    Realized,
}

impl BracketSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BracketSource::Model => "model",
            BracketSource::Realized => "realized",
        }
    }
}

/// A path with its decomposition and brackets for every pair i ≤ j.
#[derive(Clone, Debug)]
pub struct Semimartingale {
    pub path: RcllPath,
    pub decomposition: SemimartingaleDecomposition,
    pub brackets: Vec<BracketPath>,
    pub bracket_source: BracketSource,
}

impl Semimartingale {
    pub fn bracket(&self, i: usize, j: usize) -> Option<&BracketPath> {
        let (a, b) = (i.min(j), i.max(j));
        self.brackets.iter().find(|br| br.i == a && br.j == b)
    }
}

/// Realized bracket of two coordinates sharing a grid.
///
/// Increments are split at recorded jumps: the continuous part sums products of the
/// increments up to the left limits, the jump part sums ΔX^iΔX^j, and the full bracket is
/// their sum. Off jump steps this is the plain increment product.
pub fn realized_bracket(path_i: &RcllPath, path_j: &RcllPath, i: usize, j: usize) -> Result<BracketPath> {
    if !path_i.same_grid(path_j) {
        return Err(Error::Usage("realized bracket of paths on different grids".into()));
    }
    if path_i.dim() != 1 || path_j.dim() != 1 {
        return Err(Error::Usage("realized bracket expects scalar paths".into()));
    }
    let n = path_i.len();
    let mut full = Vec::with_capacity(n);
    let mut continuous = Vec::with_capacity(n);
    let (mut c, mut jumps) = (0.0, 0.0);
    full.push(0.0);
    continuous.push(0.0);
    for k in 1..n {
        let a = path_i.left_limit(k)[0] - path_i.value(k - 1)[0];
        let b = path_j.left_limit(k)[0] - path_j.value(k - 1)[0];
        c += a * b;
        if let (Some(ri), Some(rj)) = (path_i.jump_at(k), path_j.jump_at(k)) {
            jumps += ri.jump[0] * rj.jump[0];
        }
        continuous.push(c);
        full.push(c + jumps);
    }
    Ok(BracketPath {
        i: i.min(j),
        j: i.max(j),
        times: path_i.times().to_vec(),
        full,
        continuous,
    })
}

/// t_k = T·k/K. Dyadic K make coarse grids exact subsets of fine ones.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| horizon * (k as f64 / steps as f64))
        .collect()
}

/// Brownian motion with independent N(0, Δt) increments on a grid; A ≡ 0, ⟨M^i⟩_t = t.
pub fn simulate_brownian(d: usize, grid: &[f64], rng: &mut StreamRng) -> Result<Semimartingale> {
    check_grid(grid)?;
    let mut values = vec![0.0; grid.len() * d];
    for k in 1..grid.len() {
        let sd = (grid[k] - grid[k - 1]).sqrt();
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            values[k * d + i] = values[(k - 1) * d + i] + sd * z;
        }
    }
    brownian_semimartingale(d, grid, values)
}

fn brownian_semimartingale(d: usize, grid: &[f64], values: Vec<f64>) -> Result<Semimartingale> {
    let path = RcllPath::continuous(d, grid.to_vec(), values)?;
    let zero = RcllPath::continuous(d, grid.to_vec(), vec![0.0; grid.len() * d])?;
    let t0 = grid[0];
    let mut bracket = vec![0.0; grid.len() * d * d];
    for (k, &t) in grid.iter().enumerate() {
        for i in 0..d {
            bracket[k * d * d + i * d + i] = t - t0;
        }
    }
    let decomposition = SemimartingaleDecomposition::new(vec![0.0; d], path.clone(), zero, bracket)?;
    let mut brackets = Vec::new();
    for i in 0..d {
        for j in i..d {
            let cont: Vec<f64> = grid.iter().map(|&t| if i == j { t - t0 } else { 0.0 }).collect();
            brackets.push(BracketPath {
                i,
                j,
                times: grid.to_vec(),
                full: cont.clone(),
                continuous: cont,
            });
        }
    }
    Ok(Semimartingale {
        path,
        decomposition,
        brackets,
        bracket_source: BracketSource::Model,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Usage("grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !grid.iter().all(|t| t.is_finite()) {
        return Err(Error::Usage("grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Brownian motion drawn once on a fine uniform grid and sampled at arbitrary times.
///
/// Fine-grid times return the drawn values, so every dyadic coarsening sees aggregated
/// fine increments. Other times are filled in by Brownian bridges between the nearest known
/// points, and remembered, so repeated or later queries stay consistent.
#[derive(Clone, Debug)]
pub struct BrownianField {
    d: usize,
    horizon: f64,
    fine_steps: usize,
    fine: Vec<f64>,
    extra: BTreeMap<u64, Vec<f64>>,
    bridge: StreamRng,
}

impl BrownianField {
    pub fn new(d: usize, horizon: f64, fine_steps: usize, increments: &mut StreamRng, bridge: StreamRng) -> Self {
        let sd = (horizon / fine_steps as f64).sqrt();
        let mut fine = vec![0.0; (fine_steps + 1) * d];
        for k in 1..=fine_steps {
            for i in 0..d {
                let z: f64 = StandardNormal.sample(increments);
                fine[k * d + i] = fine[(k - 1) * d + i] + sd * z;
            }
        }
        BrownianField {
            d,
            horizon,
            fine_steps,
            fine,
            extra: BTreeMap::new(),
            bridge,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn fine_time(&self, k: usize) -> f64 {
        self.horizon * (k as f64 / self.fine_steps as f64)
    }

    fn fine_value(&self, k: usize) -> &[f64] {
        &self.fine[k * self.d..(k + 1) * self.d]
    }

    /// B(t) for 0 ≤ t ≤ T.
    pub fn value_at(&mut self, t: f64) -> Vec<f64> {
        assert!((0.0..=self.horizon).contains(&t), "time {t} outside [0, T]");
        let pos = t / self.horizon * self.fine_steps as f64;
        let lo = (pos.floor() as usize).min(self.fine_steps);
        if self.fine_time(lo) == t {
            return self.fine_value(lo).to_vec();
        }
        if lo < self.fine_steps && self.fine_time(lo + 1) == t {
            return self.fine_value(lo + 1).to_vec();
        }
        let key = t.to_bits();
        if let Some(v) = self.extra.get(&key) {
            return v.clone();
        }
        // nearest known neighbours among fine points and earlier bridge samples
        let (mut s, mut a) = (self.fine_time(lo), self.fine_value(lo).to_vec());
        let hi = (lo + 1).min(self.fine_steps);
        let (mut u, mut b) = (self.fine_time(hi), self.fine_value(hi).to_vec());
        if s > t {
            // floor rounding put t just below the grid point lo
            let lo2 = lo.saturating_sub(1);
            s = self.fine_time(lo2);
            a = self.fine_value(lo2).to_vec();
            u = self.fine_time(lo);
            b = self.fine_value(lo).to_vec();
        }
        if let Some((&kb, v)) = self.extra.range(s.to_bits()..key).next_back() {
            let tb = f64::from_bits(kb);
            if tb > s {
                s = tb;
                a = v.clone();
            }
        }
        if let Some((&kb, v)) = self.extra.range(key..u.to_bits()).next() {
            let tb = f64::from_bits(kb);
            if tb < u {
                u = tb;
                b = v.clone();
            }
        }
        let w = (t - s) / (u - s);
        let sd = ((t - s) * (u - t) / (u - s)).sqrt();
        let v: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let z: f64 = StandardNormal.sample(&mut self.bridge);
                x + w * (y - x) + sd * z
            })
            .collect();
        self.extra.insert(key, v.clone());
        v
    }
}

/// Brownian motion on a grid whose points are sampled from a shared field.
pub fn brownian_from_field(field: &mut BrownianField, grid: &[f64]) -> Result<Semimartingale> {
    check_grid(grid)?;
    let d = field.dim();
    let mut values = Vec::with_capacity(grid.len() * d);
    for &t in grid {
        values.extend(field.value_at(t));
    }
    brownian_semimartingale(d, grid, values)
}

/// Poisson arrival times of rate λ in (0, T].
pub fn poisson_times(rate: f64, horizon: f64, rng: &mut StreamRng) -> Vec<f64> {
    let mut times = Vec::new();
    if rate <= 0.0 {
        return times;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > horizon {
            break;
        }
        times.push(t);
    }
    times
}

/// A d-dimensional jump diffusion dX = b(X)dt + σ(X)dB + jumps with finite intensity.
/// Volatility is diagonal: coordinate i is driven by B^i alone.
pub trait JumpDiffusionModel {
    fn dim(&self) -> usize;
    fn drift_and_vol(&mut self, x: &[f64], drift: &mut [f64], vol: &mut [f64]) -> Result<()>;
    fn intensity(&self) -> f64;
    /// Fills the raw jump applied at a jump time given X_{s−}; returns the jump mark.
    fn sample_jump(&mut self, left: &[f64], rng: &mut StreamRng, raw: &mut [f64]) -> Result<Option<f64>>;
}

/// Compound Poisson process with N(0, scale²) jumps at the given rate and no diffusion.
/// The recorded mark is the standard normal draw.
#[derive(Clone, Copy, Debug)]
pub struct CompoundPoisson {
    pub rate: f64,
    pub scale: f64,
}

impl JumpDiffusionModel for CompoundPoisson {
    fn dim(&self) -> usize {
        1
    }

    fn drift_and_vol(&mut self, _x: &[f64], drift: &mut [f64], vol: &mut [f64]) -> Result<()> {
        drift[0] = 0.0;
        vol[0] = 0.0;
        Ok(())
    }

    fn intensity(&self) -> f64 {
        self.rate
    }

    fn sample_jump(&mut self, _left: &[f64], rng: &mut StreamRng, raw: &mut [f64]) -> Result<Option<f64>> {
        let z: f64 = StandardNormal.sample(rng);
        raw[0] = self.scale * z;
        Ok(Some(z))
    }
}

/// The random inputs of one simulated path.
pub struct PathNoise<'a> {
    pub brownian: &'a mut BrownianField,
    pub jumps: StreamRng,
    /// Reported in simulation errors.
    pub seed_tag: u64,
}

#[derive(Clone, Debug)]
pub struct JumpDiffusionPath {
    pub semimartingale: Semimartingale,
    /// The driving Brownian motion on the jump-adapted grid.
    pub brownian: RcllPath,
}

/// Jump-adapted Euler scheme on `grid` (uniform part), with Poisson jump times inserted.
///
/// Between grid points X ← X + b(X)Δt + σ(X)ΔB. At an inserted jump time the Euler step
/// gives X_{s−} and the model's jump is added on top. [X]^c accumulates σ(X_{t_j})²Δt_j.
pub fn simulate_jump_diffusion<M: JumpDiffusionModel>(
    model: &mut M,
    x0: &[f64],
    grid: &[f64],
    noise: &mut PathNoise<'_>,
) -> Result<JumpDiffusionPath> {
    check_grid(grid)?;
    let d = model.dim();
    if x0.len() != d || noise.brownian.dim() != d {
        return Err(Error::Usage("initial state or noise dimension does not match the model".into()));
    }
    let horizon = *grid.last().unwrap();
    let jump_times: Vec<f64> = poisson_times(model.intensity(), horizon - grid[0], &mut noise.jumps)
        .into_iter()
        .map(|t| grid[0] + t)
        .collect();
    let full_grid = merge_times(grid, &jump_times);
    let n = full_grid.len();

    let mut x = PathBuilder::with_capacity(d, n);
    let mut m = PathBuilder::with_capacity(d, n);
    let mut a = PathBuilder::with_capacity(d, n);
    let mut b = PathBuilder::with_capacity(d, n);
    let mut bracket = vec![0.0; n * d * d];
    let mut cont = vec![vec![0.0; n]; d];

    let mut state = x0.to_vec();
    let mut m_val = vec![0.0; d];
    let mut a_val = vec![0.0; d];
    let mut b_prev = noise.brownian.value_at(full_grid[0]);
    x.push(full_grid[0], &state)?;
    m.push(full_grid[0], &m_val)?;
    a.push(full_grid[0], &a_val)?;
    b.push(full_grid[0], &b_prev)?;

    let mut drift = vec![0.0; d];
    let mut vol = vec![0.0; d];
    let mut raw = vec![0.0; d];
    let mut jump_iter = jump_times.iter().peekable();
    for k in 1..n {
        let t = full_grid[k];
        let dt = t - full_grid[k - 1];
        let b_now = noise.brownian.value_at(t);
        model.drift_and_vol(&state, &mut drift, &mut vol)?;
        for i in 0..d {
            let db = b_now[i] - b_prev[i];
            state[i] += drift[i] * dt + vol[i] * db;
            m_val[i] += vol[i] * db;
            a_val[i] += drift[i] * dt;
            cont[i][k] = cont[i][k - 1] + vol[i] * vol[i] * dt;
            bracket[k * d * d + i * d + i] = cont[i][k];
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                seed: noise.seed_tag,
                time: t,
                message: "non-finite state".into(),
            });
        }
        let is_jump = jump_iter.peek().is_some_and(|&&s| s == t);
        if is_jump {
            jump_iter.next();
            let mark = model.sample_jump(&state, &mut noise.jumps, &mut raw)?;
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation {
                    seed: noise.seed_tag,
                    time: t,
                    message: "non-finite jump".into(),
                });
            }
            x.push_jump(t, &state, &raw, mark)?;
            a.push_jump(t, &a_val, &raw, mark)?;
            state = x.last().unwrap().to_vec();
            a_val = a.last().unwrap().to_vec();
        } else {
            x.push(t, &state)?;
            a.push(t, &a_val)?;
        }
        m.push(t, &m_val)?;
        b.push(t, &b_now)?;
        b_prev = b_now;
    }

    let path = x.finish();
    let fv = a.finish();
    let martingale = m.finish();
    let decomposition = SemimartingaleDecomposition::new(x0.to_vec(), martingale, fv, bracket)?;
    let mut brackets = Vec::new();
    for i in 0..d {
        for j in i..d {
            let continuous = if i == j { cont[i].clone() } else { vec![0.0; n] };
            let mut full = continuous.clone();
            let mut acc = 0.0;
            for k in 0..n {
                if let Some(r) = path.jump_at(k) {
                    acc += r.jump[i] * r.jump[j];
                }
                full[k] += acc;
            }
            brackets.push(BracketPath {
                i,
                j,
                times: full_grid.clone(),
                full,
                continuous,
            });
        }
    }
    Ok(JumpDiffusionPath {
        semimartingale: Semimartingale {
            path,
            decomposition,
            brackets,
            bracket_source: BracketSource::Model,
        },
        brownian: b.finish(),
    })
}

/// Sorted union of a grid and extra times inside it; duplicates are kept once.
pub fn merge_times(grid: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len() + extra.len());
    let (mut i, mut j) = (0, 0);
    while i < grid.len() || j < extra.len() {
        let next = match (grid.get(i), extra.get(j)) {
            (Some(&g), Some(&e)) if e < g => {
                j += 1;
                e
            }
            (Some(&g), Some(&e)) if e == g => {
                i += 1;
                j += 1;
                g
            }
            (Some(&g), _) => {
                i += 1;
                g
            }
            (None, Some(&e)) => {
                j += 1;
                e
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

pub enum WalkMode {
    /// All 2^k sign sequences, each with probability 2^{-k}.
    Exhaustive,
    Sampled { count: usize },
}

pub const MAX_EXHAUSTIVE_STEPS: usize = 20;

/// Scaled random walks W_{j/k} = Σ_{i≤j} ε_i/√k with every increment recorded as a jump;
/// M = W, A = 0, ⟨M⟩_{j/k} = j/k.
pub fn scaled_walk(k: usize, mode: WalkMode, rng: Option<&mut StreamRng>) -> Result<Vec<Semimartingale>> {
    if k == 0 {
        return Err(Error::Usage("walk needs at least one step".into()));
    }
    let signs: Vec<Vec<bool>> = match mode {
        WalkMode::Exhaustive => {
            if k > MAX_EXHAUSTIVE_STEPS {
                return Err(Error::Resource(format!(
                    "exhaustive walk with k={k} would enumerate 2^{k} paths (max k={MAX_EXHAUSTIVE_STEPS})"
                )));
            }
            (0..1usize << k)
                .map(|code| (0..k).map(|bit| code >> bit & 1 == 1).collect())
                .collect()
        }
        WalkMode::Sampled { count } => {
            let rng = rng.ok_or_else(|| Error::Usage("sampled walks need a random stream".into()))?;
            (0..count)
                .map(|_| (0..k).map(|_| rng.random::<bool>()).collect())
                .collect()
        }
    };
    let step = 1.0 / (k as f64).sqrt();
    let times: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
    signs.iter().map(|s| walk_path(s, step, &times)).collect()
}

fn walk_path(signs: &[bool], step: f64, times: &[f64]) -> Result<Semimartingale> {
    let mut b = PathBuilder::with_capacity(1, times.len());
    b.push(0.0, &[0.0])?;
    for (j, &up) in signs.iter().enumerate() {
        let left = b.last().unwrap()[0];
        let raw = if up { step } else { -step };
        b.push_jump(times[j + 1], &[left], &[raw], None)?;
    }
    let path = b.finish();
    let zero = RcllPath::continuous(1, times.to_vec(), vec![0.0; times.len()])?;
    let decomposition = SemimartingaleDecomposition::new(vec![0.0], path.clone(), zero, times.to_vec())?;
    let bracket = realized_bracket(&path, &path, 0, 0)?;
    Ok(Semimartingale {
        path,
        decomposition,
        brackets: vec![bracket],
        bracket_source: BracketSource::Realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    struct PureJump {
        rate: f64,
        scale: f64,
    }

    impl JumpDiffusionModel for PureJump {
        fn dim(&self) -> usize {
            1
        }
        fn drift_and_vol(&mut self, _x: &[f64], drift: &mut [f64], vol: &mut [f64]) -> Result<()> {
            drift[0] = 0.0;
            vol[0] = 0.0;
            Ok(())
        }
        fn intensity(&self) -> f64 {
            self.rate
        }
        fn sample_jump(&mut self, _left: &[f64], rng: &mut StreamRng, raw: &mut [f64]) -> Result<Option<f64>> {
            let z: f64 = StandardNormal.sample(rng);
            raw[0] = self.scale * z;
            Ok(Some(z))
        }
    }

    fn field(seed: u64, steps: usize) -> BrownianField {
        BrownianField::new(1, 1.0, steps, &mut stream(seed, &[1]), stream(seed, &[2]))
    }

    #[test]
    fn walk_enumeration_moments() {
        let one = scaled_walk(1, WalkMode::Exhaustive, None).unwrap();
        let ends: Vec<f64> = one.iter().map(|w| w.path.terminal()[0]).collect();
        assert_eq!(ends, vec![-1.0, 1.0]);
        let ten = scaled_walk(10, WalkMode::Exhaustive, None).unwrap();
        assert_eq!(ten.len(), 1024);
        let mean: f64 = ten.iter().map(|w| w.path.terminal()[0]).sum::<f64>() / 1024.0;
        let second: f64 = ten.iter().map(|w| w.path.terminal()[0].powi(2)).sum::<f64>() / 1024.0;
        assert!(mean.abs() < 1e-14);
        assert!((second - 1.0).abs() < 1e-12);
        for w in scaled_walk(3, WalkMode::Exhaustive, None).unwrap() {
            assert!((w.path.jump_energy() - 1.0).abs() < 1e-15);
            assert_eq!(w.path.jump_count(), 3);
        }
    }

    #[test]
    fn walk_limits() {
        assert!(matches!(scaled_walk(21, WalkMode::Exhaustive, None), Err(Error::Resource(_))));
        let mut rng = stream(1, &[0]);
        let s = scaled_walk(30, WalkMode::Sampled { count: 5 }, Some(&mut rng)).unwrap();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn walk_bracket_is_pure_jump() {
        for w in scaled_walk(6, WalkMode::Exhaustive, None).unwrap() {
            let br = w.bracket(0, 0).unwrap();
            assert!(br.continuous.iter().all(|&c| c == 0.0));
            assert!((br.full.last().unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(w.decomposition.predictable_bracket(0, 0)[3], 0.5);
        }
    }

    #[test]
    fn brownian_starts_at_zero_and_has_unit_variance() {
        let grid = uniform_grid(1.0, 16);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for p in 0..n {
            let s = simulate_brownian(1, &grid, &mut stream(3, &[p])).unwrap();
            assert_eq!(s.path.value(0), &[0.0]);
            let v = s.path.terminal()[0].powi(2);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn realized_quadratic_variation_refines_to_t() {
        let mut f = field(11, 1 << 14);
        let mut errs = Vec::new();
        for level in [6, 10, 14] {
            let s = brownian_from_field(&mut f, &uniform_grid(1.0, 1 << level)).unwrap();
            let br = realized_bracket(&s.path, &s.path, 0, 0).unwrap();
            errs.push((br.full.last().unwrap() - 1.0).abs());
        }
        // spread of order Δt^{1/2}: √2·2^{-7} at the finest level
        assert!(errs[2] < 4.0 * 2f64.sqrt() * 2f64.powi(-7), "{errs:?}");
    }

    #[test]
    fn coupled_levels_share_fine_values() {
        let mut f = field(5, 256);
        let fine = brownian_from_field(&mut f, &uniform_grid(1.0, 256)).unwrap();
        let coarse = brownian_from_field(&mut f, &uniform_grid(1.0, 16)).unwrap();
        for k in 0..=16 {
            assert_eq!(coarse.path.value(k), fine.path.value(16 * k));
        }
    }

    #[test]
    fn bridge_samples_are_remembered_and_bracketed() {
        let mut f = field(9, 4);
        let a = f.value_at(0.3);
        assert_eq!(f.value_at(0.3), a);
        let b = f.value_at(0.31);
        let c = f.value_at(0.29);
        assert!(a.iter().chain(&b).chain(&c).all(|v| v.is_finite()));
        // a second field with the same seeds reproduces the same queries
        let mut g = field(9, 4);
        assert_eq!(g.value_at(0.3), a);
        assert_eq!(g.value_at(0.31), b);
    }

    #[test]
    fn bridge_has_correct_variance() {
        // B(1/2) given B(0)=0 and B(1) drawn: variance of B(1/2) is 1/2 overall
        let n = 20_000;
        let mut sq = 0.0;
        for p in 0..n {
            let mut f = field(p, 1);
            sq += f.value_at(0.5)[0].powi(2);
        }
        let v = sq / n as f64;
        assert!((v - 0.5).abs() < 0.03, "{v}");
    }

    #[test]
    fn constant_path_without_activity() {
        let mut model = PureJump { rate: 0.0, scale: 1.0 };
        let mut f = field(1, 8);
        let mut noise = PathNoise { brownian: &mut f, jumps: stream(1, &[3]), seed_tag: 1 };
        let run = simulate_jump_diffusion(&mut model, &[0.25], &uniform_grid(1.0, 8), &mut noise).unwrap();
        assert_eq!(run.semimartingale.path.jump_count(), 0);
        for k in 0..run.semimartingale.path.len() {
            assert_eq!(run.semimartingale.path.value(k), &[0.25]);
        }
    }

    #[test]
    fn poisson_count_mean() {
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|p| poisson_times(2.0, 1.0, &mut stream(4, &[p])).len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 2.0).abs() < 3.0 * (var / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn pure_jump_brackets_and_records() {
        let mut model = PureJump { rate: 3.0, scale: 0.5 };
        for p in 0..50 {
            let mut f = field(p, 64);
            let mut noise = PathNoise { brownian: &mut f, jumps: stream(p, &[7]), seed_tag: p };
            let run = simulate_jump_diffusion(&mut model, &[0.0], &uniform_grid(1.0, 64), &mut noise).unwrap();
            let s = &run.semimartingale;
            let br = s.bracket(0, 0).unwrap();
            assert!(br.continuous.iter().all(|&c| c == 0.0));
            assert_eq!(*br.full.last().unwrap(), s.path.jump_energy());
            for r in s.path.jumps() {
                assert_eq!(s.path.value(r.index)[0] - r.left[0], r.jump[0]);
                assert_eq!(r.left[0], s.path.value(r.index - 1)[0]);
            }
            assert!(s.decomposition.consistency_error(&s.path) < 1e-12);
            let realized = realized_bracket(&s.path, &s.path, 0, 0).unwrap();
            assert!(realized.continuous.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn jump_times_are_grid_points_in_order() {
        let mut model = PureJump { rate: 20.0, scale: 1.0 };
        let mut f = field(2, 16);
        let mut noise = PathNoise { brownian: &mut f, jumps: stream(2, &[7]), seed_tag: 2 };
        let run = simulate_jump_diffusion(&mut model, &[0.0], &uniform_grid(1.0, 16), &mut noise).unwrap();
        let p = &run.semimartingale.path;
        assert!(p.jump_count() > 0);
        assert_eq!(p.len(), 17 + p.jump_count());
        assert!(p.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn determinism() {
        let grid = uniform_grid(1.0, 32);
        let a = simulate_brownian(2, &grid, &mut stream(17, &[0])).unwrap();
        let b = simulate_brownian(2, &grid, &mut stream(17, &[0])).unwrap();
        assert_eq!(a.path, b.path);
    }

    #[test]
    fn bracket_split_and_symmetry() {
        let mut model = PureJump { rate: 5.0, scale: 0.3 };
        let mut f = field(8, 32);
        let mut noise = PathNoise { brownian: &mut f, jumps: stream(8, &[7]), seed_tag: 8 };
        let run = simulate_jump_diffusion(&mut model, &[0.0], &uniform_grid(1.0, 32), &mut noise).unwrap();
        let bm = brownian_from_field(&mut field(9, 64), run.semimartingale.path.times()).unwrap();
        // a jump path plus an independent Brownian path on the same grid
        let mut b = PathBuilder::new(1);
        let x = &run.semimartingale.path;
        for k in 0..x.len() {
            let v = x.value(k)[0] + bm.path.value(k)[0];
            match x.jump_at(k) {
                Some(r) => {
                    let left = r.left[0] + bm.path.value(k)[0];
                    b.push_jump(x.times()[k], &[left], &[v - left], None).unwrap();
                }
                None => b.push(x.times()[k], &[v]).unwrap(),
            }
        }
        let y = b.finish();
        let br = realized_bracket(&y, &y, 0, 0).unwrap();
        let mut jumps = 0.0;
        for k in 0..y.len() {
            if let Some(r) = y.jump_at(k) {
                jumps += r.jump[0] * r.jump[0];
            }
            assert!((br.full[k] - br.continuous[k] - jumps).abs() < 1e-14);
            if k > 0 {
                assert!(br.continuous[k] >= br.continuous[k - 1]);
            }
        }
        let xy = realized_bracket(&y, x, 0, 1).unwrap();
        let yx = realized_bracket(x, &y, 1, 0).unwrap();
        assert_eq!(xy, yx);
    }

    #[test]
    fn merge_keeps_order_and_deduplicates() {
        assert_eq!(merge_times(&[0.0, 0.5, 1.0], &[0.25, 0.5, 0.75]), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn csv_rows_per_point() {
        let w = &scaled_walk(2, WalkMode::Exhaustive, None).unwrap()[0];
        let mut buf = Vec::new();
        w.path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "time,x1,jump");
        assert_eq!(text.lines().count(), 4);
    }
}
