//! Grid-exact stochastic integrals of coefficient-valued integrands against scalar paths.
//!
//! On a step (t_j, t_{j+1}] the integrand is G(t_j). When the integrator jumps at t_{j+1}
//! the step splits into the continuous move I(t_{j+1}−) − I(t_j), paid with G(t_j), and the
//! jump ΔI(t_{j+1}), paid with the predictable value G(t_{j+1}−). That value is the left-limit
//! row recorded on the integrand at t_{j+1} if there is one, G(t_j) otherwise.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::hermite::basis_len;
use crate::paths::{RcllPath, SemimartingaleDecomposition};
use crate::sobolev::{dot, format_float, norm_of_slice, HermiteCoeffs, SobolevOrder};

/// A coefficient vector per grid time, with optional left-limit rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPath {
    d: usize,
    cap: usize,
    times: Vec<f64>,
    data: Vec<f64>,
    left: BTreeMap<usize, Vec<f64>>,
    /// Rows are evaluations at left limits (integrand paths).
    pub predictable: bool,
}

impl CoeffPath {
    pub fn zeros(d: usize, cap: usize, times: Vec<f64>) -> Self {
        let len = basis_len(d, cap);
        CoeffPath {
            d,
            cap,
            data: vec![0.0; len * times.len()],
            times,
            left: BTreeMap::new(),
            predictable: false,
        }
    }

    /// Builds a path from one row per time; rows are truncated or padded to `cap`.
    pub fn from_fn(
        d: usize,
        cap: usize,
        times: Vec<f64>,
        mut row: impl FnMut(usize) -> Result<HermiteCoeffs>,
    ) -> Result<Self> {
        let mut out = CoeffPath::zeros(d, cap, times);
        for k in 0..out.len() {
            let r = row(k)?;
            out.set_row(k, &r)?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn row_len(&self) -> usize {
        basis_len(self.d, self.cap)
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

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn set_row(&mut self, k: usize, c: &HermiteCoeffs) -> Result<()> {
        self.check_shape(c)?;
        let src = c.resized(self.cap);
        self.row_mut(k).copy_from_slice(src.as_slice());
        Ok(())
    }

    /// Records G(t_k−) for use as the predictable value at a jump of the integrator.
    pub fn set_left_limit(&mut self, k: usize, c: &HermiteCoeffs) -> Result<()> {
        self.check_shape(c)?;
        self.left.insert(k, c.resized(self.cap).into_vec());
        Ok(())
    }

    pub fn left_limit_row(&self, k: usize) -> Option<&[f64]> {
        self.left.get(&k).map(|v| v.as_slice())
    }

    pub fn left_limits(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.left.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    fn check_shape(&self, c: &HermiteCoeffs) -> Result<()> {
        if c.dim() != self.d {
            return Err(Error::Usage(format!(
                "row has d={}, path has d={}",
                c.dim(),
                self.d
            )));
        }
        if let Some(v) = c.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coefficient {v} in path row")));
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> HermiteCoeffs {
        HermiteCoeffs::from_vec(self.d, self.cap, self.row(k).to_vec()).expect("row shape")
    }

    pub fn last(&self) -> HermiteCoeffs {
        self.at(self.len() - 1)
    }

    /// Coefficientwise a·self + b·other on a shared grid; left limits combine where either
    /// side has one (the other side contributing its left row or its previous row).
    pub fn linear_combination(&self, a: f64, other: &CoeffPath, b: f64) -> Result<CoeffPath> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (o, x) in out.data.iter_mut().zip(&other.data) {
            *o = a * *o + b * x;
        }
        let keys: Vec<usize> = self.left.keys().chain(other.left.keys()).copied().collect();
        for k in keys {
            let l1 = self.predictable_left(k).to_vec();
            let l2 = other.predictable_left(k);
            let row = l1.iter().zip(l2).map(|(x, y)| a * x + b * y).collect();
            out.left.insert(k, row);
        }
        Ok(out)
    }

    /// G(t_k−) as used at a jump of the integrator at t_k (k ≥ 1).
    pub fn predictable_left(&self, k: usize) -> &[f64] {
        match self.left.get(&k) {
            Some(v) => v,
            None => self.row(k - 1),
        }
    }

    fn check_compatible(&self, other: &CoeffPath) -> Result<()> {
        if self.d != other.d || self.cap != other.cap || self.times != other.times {
            return Err(Error::Usage("coefficient paths differ in shape or grid".into()));
        }
        Ok(())
    }

    /// ‖G(t_k)‖_p restricted to orders ≤ cap, per grid time.
    pub fn norms(&self, p: SobolevOrder, cap: usize) -> Vec<f64> {
        (0..self.len())
            .map(|k| norm_of_slice(self.d, self.row(k), p.value(), cap.min(self.cap)))
            .collect()
    }

    /// The scalar process ⟨G(t), ψ⟩ with its left-limit values.
    pub fn paired(&self, psi: &HermiteCoeffs) -> Result<ScalarPath> {
        if psi.dim() != self.d {
            return Err(Error::Usage("pairing dimensions differ".into()));
        }
        let psi = psi.resized(self.cap);
        let values = (0..self.len()).map(|k| dot(self.row(k), psi.as_slice())).collect();
        let left = self
            .left
            .iter()
            .map(|(k, v)| (*k, dot(v, psi.as_slice())))
            .collect();
        Ok(ScalarPath { values, left })
    }

    /// The path restricted to grid indices 0..=k.
    pub fn truncated(&self, k: usize) -> CoeffPath {
        let n = self.row_len();
        CoeffPath {
            d: self.d,
            cap: self.cap,
            times: self.times[..=k].to_vec(),
            data: self.data[..(k + 1) * n].to_vec(),
            left: self.left.range(..=k).map(|(a, b)| (*a, b.clone())).collect(),
            predictable: self.predictable,
        }
    }

    /// CSV with columns time, c0, c1, … (graded-lex coefficient order).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((0..self.row_len()).map(|i| format!("c{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![format_float(self.times[k])];
            rec.extend(self.row(k).iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A real-valued integrand with optional left-limit values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPath {
    pub values: Vec<f64>,
    pub left: BTreeMap<usize, f64>,
}

impl ScalarPath {
    fn predictable_left(&self, k: usize) -> f64 {
        self.left.get(&k).copied().unwrap_or(self.values[k - 1])
    }
}

fn check_integrator(times: &[f64], integrator: &RcllPath) -> Result<()> {
    if integrator.dim() != 1 {
        return Err(Error::Usage("integrators are scalar paths".into()));
    }
    if integrator.times() != times {
        return Err(Error::Usage("integrand and integrator grids differ".into()));
    }
    Ok(())
}

// Split increments of the integrator on step j → j+1: (continuous part, jump part).
fn split_increment(integrator: &RcllPath, j: usize) -> (f64, Option<f64>) {
    let cont = integrator.left_limit(j + 1)[0] - integrator.value(j)[0];
    (cont, integrator.jump_at(j + 1).map(|r| r.jump[0]))
}

fn stieltjes(g: &CoeffPath, integrator: &RcllPath) -> Result<CoeffPath> {
    check_integrator(&g.times, integrator)?;
    let mut out = CoeffPath::zeros(g.d, g.cap, g.times.clone());
    let n = g.row_len();
    for j in 0..g.len().saturating_sub(1) {
        let (cont, jump) = split_increment(integrator, j);
        let (head, tail) = out.data.split_at_mut((j + 1) * n);
        let prev = &head[j * n..];
        let next = &mut tail[..n];
        let gj = g.row(j);
        match jump {
            Some(dj) => {
                let gl = g.predictable_left(j + 1);
                for i in 0..n {
                    next[i] = prev[i] + gj[i] * cont + gl[i] * dj;
                }
            }
            None => {
                for i in 0..n {
                    next[i] = prev[i] + gj[i] * cont;
                }
            }
        }
    }
    Ok(out)
}

/// ∫ G dM on the grid: Σ_{j<k} G(t_j)·(M(t_{j+1}) − M(t_j)), split at jumps of M.
pub fn integrate_vs_martingale(g: &CoeffPath, m: &RcllPath) -> Result<CoeffPath> {
    stieltjes(g, m)
}

/// The scalar integral ∫ g dI with the same step and jump conventions.
pub fn integrate_scalar(g: &ScalarPath, integrator: &RcllPath) -> Result<Vec<f64>> {
    if integrator.len() != g.values.len() || integrator.dim() != 1 {
        return Err(Error::Usage("scalar integrand and integrator grids differ".into()));
    }
    let mut out = vec![0.0; g.values.len()];
    for j in 0..out.len().saturating_sub(1) {
        let (cont, jump) = split_increment(integrator, j);
        let mut next = out[j] + g.values[j] * cont;
        if let Some(dj) = jump {
            next += g.predictable_left(j + 1) * dj;
        }
        out[j + 1] = next;
    }
    Ok(out)
}

/// Σ_{j<k} ‖G(t_j)‖²_p (⟨M⟩_{j+1} − ⟨M⟩_j): the right side of the Itô isometry, per time.
pub fn bracket_energy(g: &CoeffPath, bracket: &[f64], p: SobolevOrder) -> Result<Vec<f64>> {
    if bracket.len() != g.len() {
        return Err(Error::Usage("bracket and integrand grids differ".into()));
    }
    let norms = g.norms(p, g.cap);
    let mut out = vec![0.0; g.len()];
    for j in 0..g.len().saturating_sub(1) {
        out[j + 1] = out[j] + norms[j] * norms[j] * (bracket[j + 1] - bracket[j]);
    }
    Ok(out)
}

/// Runtime check of norm-boundedness for FV integrals.
#[derive(Clone, Copy, Debug)]
pub struct NormBound {
    /// The Sobolev order q in which ‖G_t‖_q is measured.
    pub order: SobolevOrder,
    /// R: the largest admissible sup_t ‖G_t‖_q.
    pub bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FvDiagnostics {
    /// sup over rows (and left-limit rows) of ‖G‖_q.
    pub max_norm: f64,
    /// V_{[0,T]}(A) on the grid, jumps included.
    pub variation: f64,
    /// ∫ ‖G‖_q |dA| on the grid.
    pub weighted_variation: f64,
    /// R·V: the a priori bound on the weighted variation.
    pub bound: f64,
}

/// ∫ G dA for a finite-variation integrator, with ∫‖G‖|dA| ≤ R·V recorded.
pub fn integrate_vs_fv(g: &CoeffPath, a: &RcllPath, nb: NormBound) -> Result<(CoeffPath, FvDiagnostics)> {
    check_integrator(&g.times, a)?;
    let q = nb.order.value();
    let norm = |row: &[f64]| norm_of_slice(g.d, row, q, g.cap);
    let row_norms: Vec<f64> = (0..g.len()).map(|k| norm(g.row(k))).collect();
    let mut max_norm = row_norms.iter().cloned().fold(0.0, f64::max);
    for (_, row) in g.left_limits() {
        max_norm = max_norm.max(norm(row));
    }
    if !max_norm.is_finite() || max_norm > nb.bound {
        return Err(Error::Numeric(format!(
            "integrand norm {max_norm:e} exceeds the configured bound {:e}",
            nb.bound
        )));
    }
    let mut variation = 0.0;
    let mut weighted = 0.0;
    for j in 0..g.len().saturating_sub(1) {
        let (cont, jump) = split_increment(a, j);
        variation += cont.abs();
        weighted += row_norms[j] * cont.abs();
        if let Some(dj) = jump {
            variation += dj.abs();
            weighted += norm(g.predictable_left(j + 1)) * dj.abs();
        }
    }
    let out = stieltjes(g, a)?;
    Ok((
        out,
        FvDiagnostics {
            max_norm,
            variation,
            weighted_variation: weighted,
            bound: nb.bound * variation,
        },
    ))
}

/// ∫ G dX = ∫ G dM + ∫ G dA for a scalar decomposition X = X_0 + M + A.
pub fn integrate_vs_semimartingale(
    g: &CoeffPath,
    x: &SemimartingaleDecomposition,
    nb: NormBound,
) -> Result<(CoeffPath, FvDiagnostics)> {
    if x.dim() != 1 {
        return Err(Error::Usage("semimartingale integrator must be scalar".into()));
    }
    let m = integrate_vs_martingale(g, &x.martingale)?;
    let (a, diag) = integrate_vs_fv(g, &x.fv, nb)?;
    Ok((m.linear_combination(1.0, &a, 1.0)?, diag))
}
