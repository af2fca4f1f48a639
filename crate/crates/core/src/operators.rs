//! Derivatives ∂_i, translations τ_x and Dirac distributions δ_x as coefficient maps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hermite::{
    basis_len, basis_table, gauss_hermite_rule, hermite_functions_into, multi_index_rank,
    QuadratureRule, MAX_QUADRATURE_NODES,
};
use crate::sobolev::{format_float, HermiteCoeffs, SobolevOrder};

/// Largest coordinate magnitude accepted by translations and Dirac coefficients.
pub const MAX_SHIFT: f64 = 20.0;

/// Tolerance of the T(0) = Id self-check performed when a translator is built.
pub const SELF_CHECK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    /// ∂_i with a zero-based coordinate index.
    Derivative(usize),
    Translation(Vec<f64>),
    Custom(String),
}

/// A dense matrix from cap-N_in coefficients to cap-N_out coefficients.
#[derive(Clone, Debug)]
pub struct CoeffOperator {
    pub d: usize,
    pub cap_in: usize,
    pub cap_out: usize,
    pub kind: OperatorKind,
    pub matrix: DMatrix<f64>,
}

impl CoeffOperator {
    pub fn identity(d: usize, cap: usize) -> Self {
        let n = basis_len(d, cap);
        CoeffOperator {
            d,
            cap_in: cap,
            cap_out: cap,
            kind: OperatorKind::Custom("identity".into()),
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn apply(&self, phi: &HermiteCoeffs) -> HermiteCoeffs {
        assert_eq!(phi.dim(), self.d, "dimension mismatch");
        let input = phi.resized(self.cap_in);
        let v = DVector::from_column_slice(input.as_slice());
        let out = &self.matrix * v;
        HermiteCoeffs::from_vec(self.d, self.cap_out, out.as_slice().to_vec())
            .expect("operator output has the declared shape")
    }

    /// self ∘ other
    pub fn compose(&self, other: &CoeffOperator) -> CoeffOperator {
        assert_eq!(self.d, other.d);
        let inner = basis_len(self.d, self.cap_in);
        let shared = inner.min(other.matrix.nrows());
        let m = self.matrix.columns(0, shared) * other.matrix.rows(0, shared);
        CoeffOperator {
            d: self.d,
            cap_in: other.cap_in,
            cap_out: self.cap_out,
            kind: OperatorKind::Custom("composition".into()),
            matrix: m,
        }
    }

    /// The block mapping orders ≤ cap_in to orders ≤ cap_out.
    pub fn block(&self, cap_out: usize, cap_in: usize) -> DMatrix<f64> {
        let r = basis_len(self.d, cap_out.min(self.cap_out));
        let c = basis_len(self.d, cap_in.min(self.cap_in));
        self.matrix.view((0, 0), (r, c)).into_owned()
    }

    /// Dense CSV dump, one matrix row per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.matrix.row_iter() {
            w.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ∂_i h_n = √(n_i/2) h_{n−e_i} − √((n_i+1)/2) h_{n+e_i}, as a cap-N → cap-(N+1) matrix.
pub fn derivative_matrix(d: usize, i: usize, cap: usize) -> CoeffOperator {
    assert!(i < d, "coordinate {i} out of range for d={d}");
    let cols = basis_len(d, cap);
    let rows = basis_len(d, cap + 1);
    let mut matrix = DMatrix::zeros(rows, cols);
    let table = basis_table(d, cap);
    let mut buf = vec![0u32; d];
    for col in 0..cols {
        buf.copy_from_slice(&table[col * d..(col + 1) * d]);
        let ni = buf[i] as f64;
        if buf[i] > 0 {
            buf[i] -= 1;
            matrix[(multi_index_rank(&buf), col)] = (ni / 2.0).sqrt();
            buf[i] += 1;
        }
        buf[i] += 1;
        matrix[(multi_index_rank(&buf), col)] = -((ni + 1.0) / 2.0).sqrt();
    }
    CoeffOperator {
        d,
        cap_in: cap,
        cap_out: cap + 1,
        kind: OperatorKind::Derivative(i),
        matrix,
    }
}

/// ∂_i φ at cap N+1, applied directly through the recurrence.
pub fn derivative(phi: &HermiteCoeffs, i: usize) -> HermiteCoeffs {
    let d = phi.dim();
    assert!(i < d, "coordinate {i} out of range for d={d}");
    let cap = phi.cap();
    let mut out = HermiteCoeffs::zeros(d, cap + 1);
    let src = phi.as_slice();
    let dst = out.as_mut_slice();
    if d == 1 {
        for (n, &c) in src.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let nf = n as f64;
            if n > 0 {
                dst[n - 1] += (nf / 2.0).sqrt() * c;
            }
            dst[n + 1] -= ((nf + 1.0) / 2.0).sqrt() * c;
        }
        return out;
    }
    let table = basis_table(d, cap);
    let mut buf = vec![0u32; d];
    for (col, &c) in src.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        buf.copy_from_slice(&table[col * d..(col + 1) * d]);
        let ni = buf[i] as f64;
        if buf[i] > 0 {
            buf[i] -= 1;
            dst[multi_index_rank(&buf)] += (ni / 2.0).sqrt() * c;
            buf[i] += 1;
        }
        buf[i] += 1;
        dst[multi_index_rank(&buf)] -= ((ni + 1.0) / 2.0).sqrt() * c;
    }
    out
}

/// Coefficients h_n(x) of δ_x up to order N.
pub fn delta_coeffs(x: &[f64], cap: usize) -> Result<HermiteCoeffs> {
    check_shift(x)?;
    let d = x.len();
    let mut tables = Vec::with_capacity(d);
    for &xi in x {
        let mut t = vec![0.0; cap + 1];
        hermite_functions_into(xi, &mut t);
        tables.push(t);
    }
    let coeffs = if d == 1 {
        tables.pop().unwrap()
    } else {
        let idx = basis_table(d, cap);
        idx.chunks(d)
            .map(|n| n.iter().zip(&tables).map(|(&k, t)| t[k as usize]).product())
            .collect()
    };
    Ok(HermiteCoeffs::from_vec(d, cap, coeffs)?.with_label(format!("delta@{x:?}")))
}

fn check_shift(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Usage("empty point".into()));
    }
    if let Some(v) = x.iter().find(|v| !(v.abs() <= MAX_SHIFT)) {
        return Err(Error::Usage(format!(
            "coordinate {v} outside the supported range |x| <= {MAX_SHIFT}"
        )));
    }
    Ok(())
}

/// Builds translation maps τ_x at a fixed cap by Gauss–Hermite quadrature.
///
/// ⟨τ_x h_m, h_n⟩ = ∫ h_m(u − x/2) h_n(u + x/2) du, and the product of the two Gaussian
/// factors is e^{-u²} e^{-x²/4}, so the rule with Q ≥ N+1 nodes integrates it exactly.
#[derive(Clone, Debug)]
pub struct Translator {
    d: usize,
    cap: usize,
    rule: QuadratureRule,
}

impl Translator {
    pub fn new(d: usize, cap: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Usage("dimension must be at least 1".into()));
        }
        let q = 2 * cap + 12;
        if q > MAX_QUADRATURE_NODES {
            return Err(Error::Config(format!(
                "translation cap {cap} needs {q} quadrature nodes (max {MAX_QUADRATURE_NODES})"
            )));
        }
        let t = Translator {
            d,
            cap,
            rule: gauss_hermite_rule(q)?,
        };
        let id = t.matrix_1d(0.0);
        let dev = max_identity_deviation(&id);
        if dev > SELF_CHECK_TOL {
            return Err(Error::Numeric(format!(
                "translation self-check failed: |T(0) - I| = {dev:e} at N={cap}, Q={q}"
            )));
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn nodes(&self) -> usize {
        self.rule.len()
    }

    /// One-dimensional matrix t_{nm}(x) = ⟨τ_x h_m, h_n⟩ for n, m ≤ N.
    pub fn matrix_1d(&self, x: f64) -> DMatrix<f64> {
        let n1 = self.cap + 1;
        let q = self.rule.len();
        let mut plus = DMatrix::zeros(q, n1);
        let mut minus = DMatrix::zeros(q, n1);
        let mut row = vec![0.0; n1];
        for (k, (&u, &s)) in self.rule.nodes.iter().zip(&self.rule.scaled_weights).enumerate() {
            hermite_functions_into(u + 0.5 * x, &mut row);
            for (j, v) in row.iter().enumerate() {
                plus[(k, j)] = s * v;
            }
            hermite_functions_into(u - 0.5 * x, &mut row);
            for (j, v) in row.iter().enumerate() {
                minus[(k, j)] = *v;
            }
        }
        plus.transpose() * minus
    }

    /// The full matrix of τ_x on cap-N coefficients (tensor product over coordinates).
    pub fn matrix(&self, x: &[f64]) -> Result<CoeffOperator> {
        self.check_point(x)?;
        let factors: Vec<DMatrix<f64>> = x.iter().map(|&xi| self.matrix_1d(xi)).collect();
        let dim = basis_len(self.d, self.cap);
        let idx = basis_table(self.d, self.cap);
        let d = self.d;
        let matrix = DMatrix::from_fn(dim, dim, |r, c| {
            let n = &idx[r * d..(r + 1) * d];
            let m = &idx[c * d..(c + 1) * d];
            factors
                .iter()
                .enumerate()
                .map(|(i, f)| f[(n[i] as usize, m[i] as usize)])
                .product()
        });
        Ok(CoeffOperator {
            d,
            cap_in: self.cap,
            cap_out: self.cap,
            kind: OperatorKind::Translation(x.to_vec()),
            matrix,
        })
    }

    /// Truncated τ_x φ at the translator's cap; φ is padded or truncated to that cap first.
    pub fn apply(&self, phi: &HermiteCoeffs, x: &[f64]) -> Result<HermiteCoeffs> {
        self.check_point(x)?;
        if phi.dim() != self.d {
            return Err(Error::Usage(format!(
                "translator has d={}, input has d={}",
                self.d,
                phi.dim()
            )));
        }
        let input = phi.resized(self.cap);
        let out = if self.d == 1 {
            self.apply_1d(input.as_slice(), x[0])
        } else {
            self.apply_tensor(input.as_slice(), x)
        };
        HermiteCoeffs::from_vec(self.d, self.cap, out)
    }

    // (τ_xφ)_n = Σ_q s_q h_n(u_q + x/2) Σ_m h_m(u_q − x/2) φ_m, O(QN) per call.
    fn apply_1d(&self, phi: &[f64], x: f64) -> Vec<f64> {
        let n1 = self.cap + 1;
        let mut out = vec![0.0; n1];
        let mut row = vec![0.0; n1];
        for (&u, &s) in self.rule.nodes.iter().zip(&self.rule.scaled_weights) {
            hermite_functions_into(u - 0.5 * x, &mut row);
            let g: f64 = s * row.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
            if g == 0.0 {
                continue;
            }
            hermite_functions_into(u + 0.5 * x, &mut row);
            for (o, h) in out.iter_mut().zip(&row) {
                *o += g * h;
            }
        }
        out
    }

    fn apply_tensor(&self, phi: &[f64], x: &[f64]) -> Vec<f64> {
        let factors: Vec<DMatrix<f64>> = x.iter().map(|&xi| self.matrix_1d(xi)).collect();
        let d = self.d;
        let idx = basis_table(d, self.cap);
        let dim = phi.len();
        let mut out = vec![0.0; dim];
        for (r, o) in out.iter_mut().enumerate() {
            let n = &idx[r * d..(r + 1) * d];
            let mut acc = 0.0;
            for (c, &p) in phi.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let m = &idx[c * d..(c + 1) * d];
                let mut t = p;
                for (i, f) in factors.iter().enumerate() {
                    t *= f[(n[i] as usize, m[i] as usize)];
                }
                acc += t;
            }
            *o = acc;
        }
        out
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Usage(format!(
                "translation point has {} coordinates, translator has d={}",
                x.len(),
                self.d
            )));
        }
        check_shift(x)
    }
}

/// τ_x at cap N: builds a translator and its matrix.
pub fn translation_matrix(x: &[f64], cap: usize) -> Result<CoeffOperator> {
    Translator::new(x.len(), cap)?.matrix(x)
}

/// ‖τ_xφ‖_0 / ‖φ‖_0 over the truncation; 1 when φ = 0.
pub fn mass_retention(phi: &HermiteCoeffs, translated: &HermiteCoeffs) -> f64 {
    let zero = SobolevOrder::new(0.0).unwrap();
    let base = phi.norm(zero);
    if base == 0.0 {
        return 1.0;
    }
    translated.norm(zero) / base
}

pub fn max_identity_deviation(m: &DMatrix<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let want = if r == c { 1.0 } else { 0.0 };
            dev = dev.max((m[(r, c)] - want).abs());
        }
    }
    dev
}
