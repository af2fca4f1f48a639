//! Truncated Hermite coefficient vectors, the norms ‖·‖_p and the duality pairing.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hermite::{basis_len, degree_block, enumerate_multi_indices, hermite_functions_into};

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SobolevOrder(f64);

impl SobolevOrder {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::Config(format!("Sobolev order must be finite, got {p}")));
        }
        Ok(SobolevOrder(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Coefficients ⟨φ, h_n⟩ for |n| ≤ cap in graded-lex order.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteCoeffs {
    d: usize,
    cap: usize,
    coeffs: Vec<f64>,
    pub label: String,
}

impl HermiteCoeffs {
    pub fn zeros(d: usize, cap: usize) -> Self {
        assert!(d >= 1);
        HermiteCoeffs {
            d,
            cap,
            coeffs: vec![0.0; basis_len(d, cap)],
            label: String::new(),
        }
    }

    pub fn from_vec(d: usize, cap: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Usage("dimension must be at least 1".into()));
        }
        let want = basis_len(d, cap);
        if coeffs.len() != want {
            return Err(Error::Usage(format!(
                "coefficient vector has length {}, expected {want} for d={d}, N={cap}",
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coefficient at index {i}")));
        }
        Ok(HermiteCoeffs {
            d,
            cap,
            coeffs,
            label: String::new(),
        })
    }

    /// The basis element h_n (one-hot at the rank of `n`).
    pub fn basis_vector(cap: usize, n: &crate::hermite::MultiIndex) -> Self {
        assert!(n.order() <= cap, "basis index above cap");
        let mut c = HermiteCoeffs::zeros(n.dim(), cap);
        c.coeffs[n.rank()] = 1.0;
        c.label = format!("h{:?}", n.entries());
        c
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    /// Drops every coefficient of order above `cap`, or zero-pads up to it.
    /// Graded-lex order makes both operations a prefix/extension of the vector.
    pub fn resized(&self, cap: usize) -> HermiteCoeffs {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(basis_len(self.d, cap), 0.0);
        HermiteCoeffs {
            d: self.d,
            cap,
            coeffs,
            label: self.label.clone(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    /// self += a·other, with `other` truncated or padded to self's cap.
    pub fn axpy(&mut self, a: f64, other: &HermiteCoeffs) {
        assert_eq!(self.d, other.d, "dimension mismatch");
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    /// self − other over the larger of the two caps.
    pub fn difference(&self, other: &HermiteCoeffs) -> HermiteCoeffs {
        assert_eq!(self.d, other.d, "dimension mismatch");
        let cap = self.cap.max(other.cap);
        let mut out = self.resized(cap);
        out.axpy(-1.0, other);
        out
    }

    /// ‖φ‖_p = (Σ_n (2|n|+d)^{2p} c_n²)^{1/2}
    pub fn norm(&self, p: SobolevOrder) -> f64 {
        self.norm_upto(p, self.cap)
    }

    /// ‖·‖_p restricted to orders |n| ≤ cap (the evaluation cap of the cushion protocol).
    pub fn norm_upto(&self, p: SobolevOrder, cap: usize) -> f64 {
        norm_of_slice(self.d, &self.coeffs, p.0, cap.min(self.cap))
    }

    /// Σ_n ⟨φ,h_n⟩⟨ψ,h_n⟩; the shorter vector is zero-padded.
    pub fn pairing(&self, other: &HermiteCoeffs) -> Result<f64> {
        if self.d != other.d {
            return Err(Error::Usage(format!(
                "pairing of d={} with d={}",
                self.d, other.d
            )));
        }
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    /// Σ_n c_n h_n(x).
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d);
        if self.d == 1 {
            let mut table = vec![0.0; self.cap + 1];
            hermite_functions_into(x[0], &mut table);
            return dot(&self.coeffs, &table);
        }
        let tables: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| {
                let mut t = vec![0.0; self.cap + 1];
                hermite_functions_into(xi, &mut t);
                t
            })
            .collect();
        enumerate_multi_indices(self.d, self.cap)
            .iter()
            .zip(&self.coeffs)
            .map(|(n, c)| {
                c * n
                    .entries()
                    .iter()
                    .zip(&tables)
                    .map(|(&k, t)| t[k as usize])
                    .product::<f64>()
            })
            .sum()
    }

    /// One CSV row: d, N, then the coefficients.
    pub fn write_csv<W: Write>(&self, writer: &mut csv::Writer<W>) -> Result<()> {
        let mut row = vec![self.d.to_string(), self.cap.to_string()];
        row.extend(self.coeffs.iter().map(|c| format_float(*c)));
        writer.write_record(&row)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: &mut csv::Reader<R>) -> Result<Vec<HermiteCoeffs>> {
        let mut out = Vec::new();
        for record in reader.records() {
            let record = record?;
            let field = |i: usize| -> Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Usage(format!("coefficient row missing field {i}")))
            };
            let parse_usize = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Usage(format!("bad integer {s:?}: {e}")))
            };
            let d = parse_usize(field(0)?)?;
            let cap = parse_usize(field(1)?)?;
            let coeffs = record
                .iter()
                .skip(2)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Usage(format!("bad coefficient {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(HermiteCoeffs::from_vec(d, cap, coeffs)?);
        }
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_of_slice(d: usize, coeffs: &[f64], p: f64, cap: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..=cap {
        let block = degree_block(d, k);
        if block.start >= coeffs.len() {
            break;
        }
        let end = block.end.min(coeffs.len());
        let sq: f64 = coeffs[block.start..end].iter().map(|c| c * c).sum();
        if sq != 0.0 {
            let w = (2.0 * k as f64 + d as f64).powf(2.0 * p);
            total += w * sq;
        }
    }
    total.sqrt()
}

/// Shortest representation that round-trips exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite_functions, MultiIndex};

    fn ord(p: f64) -> SobolevOrder {
        SobolevOrder::new(p).unwrap()
    }

    #[test]
    fn basis_vector_norms() {
        for k in 0..8 {
            let h = HermiteCoeffs::basis_vector(10, &MultiIndex::new(vec![k]));
            for p in [-1.0, -0.5, 0.0, 0.3, 2.0] {
                let want = (2.0 * k as f64 + 1.0).powf(p);
                assert!((h.norm(ord(p)) - want).abs() < 1e-12 * want);
            }
        }
        let h = HermiteCoeffs::basis_vector(5, &MultiIndex::new(vec![1, 2]));
        assert!((h.norm(ord(1.0)) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm() {
        assert_eq!(HermiteCoeffs::zeros(2, 4).norm(ord(1.5)), 0.0);
    }

    #[test]
    fn truncated_delta_norm_matches_direct_sum() {
        let table = hermite_functions(0.0, 50);
        let delta = HermiteCoeffs::from_vec(1, 50, table.clone()).unwrap();
        let direct: f64 = table
            .iter()
            .enumerate()
            .map(|(k, h)| h * h / (2.0 * k as f64 + 1.0))
            .sum::<f64>()
            .sqrt();
        assert!((delta.norm(ord(-0.5)) - direct).abs() < 1e-14);
    }

    #[test]
    fn pairing_basics() {
        let h0 = HermiteCoeffs::basis_vector(3, &MultiIndex::new(vec![0]));
        let h1 = HermiteCoeffs::basis_vector(5, &MultiIndex::new(vec![1]));
        assert_eq!(h0.pairing(&h0).unwrap(), 1.0);
        assert_eq!(h0.pairing(&h1).unwrap(), 0.0);
        let other = HermiteCoeffs::zeros(2, 3);
        assert!(matches!(h0.pairing(&other), Err(Error::Usage(_))));
    }

    #[test]
    fn from_vec_validates() {
        assert!(HermiteCoeffs::from_vec(2, 2, vec![0.0; 5]).is_err());
        assert!(HermiteCoeffs::from_vec(1, 1, vec![0.0, f64::NAN]).is_err());
        assert!(HermiteCoeffs::from_vec(2, 2, vec![0.0; 6]).is_ok());
        assert!(SobolevOrder::new(f64::INFINITY).is_err());
    }

    #[test]
    fn resize_is_prefix() {
        let c = HermiteCoeffs::from_vec(2, 2, (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(c.resized(1).as_slice(), &[0.0, 1.0, 2.0]);
        let padded = c.resized(3);
        assert_eq!(padded.len(), 10);
        assert_eq!(&padded.as_slice()[..6], c.as_slice());
    }

    #[test]
    fn evaluate_matches_basis_functions() {
        let c = HermiteCoeffs::from_vec(2, 2, vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.75]).unwrap();
        let x = [0.3, -1.1];
        let hx = hermite_functions(x[0], 2);
        let hy = hermite_functions(x[1], 2);
        let want = 0.5 * hx[0] * hy[0] - hx[1] * hy[0] + 0.25 * hx[0] * hy[1]
            + 2.0 * hx[2] * hy[0]
            - 0.75 * hx[0] * hy[2];
        assert!((c.evaluate(&x) - want).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let c = HermiteCoeffs::from_vec(2, 1, vec![0.1, -2.5e-17, 3.0]).unwrap();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
        c.write_csv(&mut w).unwrap();
        let bytes = w.into_inner().unwrap();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(bytes.as_slice());
        let back = HermiteCoeffs::read_csv(&mut r).unwrap();
        assert_eq!(back[0].as_slice(), c.as_slice());
        assert_eq!((back[0].dim(), back[0].cap()), (2, 1));
    }
}
