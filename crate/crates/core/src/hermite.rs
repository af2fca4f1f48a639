//! Multi-index bookkeeping, L²-orthonormal Hermite functions and Gauss–Hermite rules.
//!
//! Convention: h_n(x) = (2^n n! √π)^{-1/2} H_n(x) e^{-x²/2}, so that {h_n} is orthonormal
//! in L²(R). In d dimensions h_n(x) = ∏ h_{n_i}(x_i).

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Coordinates beyond this magnitude evaluate to zero.
pub const EVAL_LIMIT: f64 = 40.0;

pub const MAX_QUADRATURE_NODES: usize = 200;

/// π^{-1/4}
pub const H0_AT_ZERO: f64 = 0.751_125_544_464_942_5;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        assert!(!entries.is_empty(), "multi-index needs at least one entry");
        MultiIndex(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// n + e_i
    pub fn raised(&self, i: usize) -> MultiIndex {
        let mut e = self.0.clone();
        e[i] += 1;
        MultiIndex(e)
    }

    /// n − e_i, or None when n_i = 0.
    pub fn lowered(&self, i: usize) -> Option<MultiIndex> {
        if self.0[i] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[i] -= 1;
        Some(MultiIndex(e))
    }

    /// Position in the graded-lex enumeration.
    pub fn rank(&self) -> usize {
        multi_index_rank(&self.0)
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
    }
    acc as usize
}

/// Number of multi-indices in Z_+^d with |n| ≤ cap.
pub fn basis_len(d: usize, cap: usize) -> usize {
    binomial(cap + d, d)
}

/// Index range occupied by the multi-indices of order exactly k.
pub fn degree_block(d: usize, k: usize) -> std::ops::Range<usize> {
    let start = if k == 0 { 0 } else { basis_len(d, k - 1) };
    start..basis_len(d, k)
}

/// Graded-lex rank: by order, then descending first entry, recursively.
pub fn multi_index_rank(n: &[u32]) -> usize {
    let d = n.len();
    let k: usize = n.iter().map(|&e| e as usize).sum();
    let mut r = degree_block(d, k).start;
    let mut rem = k;
    for (i, &ni) in n.iter().enumerate().take(d.saturating_sub(1)) {
        let ni = ni as usize;
        let e = d - 1 - i;
        // indices of the same order whose i-th entry exceeds n_i come first
        if rem > ni {
            r += binomial(rem - ni - 1 + e, e);
        }
        rem -= ni;
    }
    r
}

/// All n ∈ Z_+^d with |n| ≤ cap, in graded-lex order. Length C(cap+d, d).
pub fn enumerate_multi_indices(d: usize, cap: usize) -> Vec<MultiIndex> {
    assert!(d >= 1, "dimension must be at least 1");
    let mut out = Vec::with_capacity(basis_len(d, cap));
    let mut buf = vec![0u32; d];
    for k in 0..=cap {
        compositions(k, 0, &mut buf, &mut out);
    }
    out
}

fn compositions(rem: usize, pos: usize, buf: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos == buf.len() - 1 {
        buf[pos] = rem as u32;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for first in (0..=rem).rev() {
        buf[pos] = first as u32;
        compositions(rem - first, pos + 1, buf, out);
    }
}

/// Flat table of basis multi-indices, `d` entries per row.
pub fn basis_table(d: usize, cap: usize) -> Vec<u32> {
    enumerate_multi_indices(d, cap)
        .into_iter()
        .flat_map(|m| m.0)
        .collect()
}

struct RecurrenceCoeffs {
    up: Vec<f64>,
    back: Vec<f64>,
}

const CACHED_DEGREES: usize = 2048;

fn recurrence_coeffs() -> &'static RecurrenceCoeffs {
    static COEFFS: OnceLock<RecurrenceCoeffs> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let up = (0..CACHED_DEGREES)
            .map(|k| (2.0 / (k as f64 + 1.0)).sqrt())
            .collect();
        let back = (0..CACHED_DEGREES)
            .map(|k| (k as f64 / (k as f64 + 1.0)).sqrt())
            .collect();
        RecurrenceCoeffs { up, back }
    })
}

/// Fills `out[k] = h_k(x)` for k < out.len().
///
/// h_{k+1} = √(2/(k+1)) x h_k − √(k/(k+1)) h_{k−1}, started from h_0 = π^{-1/4} e^{-x²/2}.
pub fn hermite_functions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    if !(x.abs() <= EVAL_LIMIT) {
        out.fill(0.0);
        return;
    }
    let half_sq = 0.5 * x * x;
    if half_sq > 600.0 || out.len() > CACHED_DEGREES {
        scaled_recurrence(x, out);
        return;
    }
    let rc = recurrence_coeffs();
    out[0] = H0_AT_ZERO * (-half_sq).exp();
    if out.len() > 1 {
        out[1] = rc.up[0] * x * out[0];
    }
    for k in 1..out.len() - 1 {
        out[k + 1] = rc.up[k] * x * out[k] - rc.back[k] * out[k - 1];
    }
}

// Same recurrence on values rescaled by e^{x²/2}, with the exponent tracked separately so
// that neither the Gaussian factor nor the polynomial growth leaves the float range.
fn scaled_recurrence(x: f64, out: &mut [f64]) {
    const RESCALE: f64 = 1e150;
    let mut log_scale = -0.5 * x * x;
    let mut factor = log_scale.exp();
    let mut prev = 0.0;
    let mut cur = H0_AT_ZERO;
    out[0] = cur * factor;
    for k in 0..out.len() - 1 {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += RESCALE.ln();
            factor = log_scale.exp();
        }
        out[k + 1] = cur * factor;
    }
}

/// h_0(x), …, h_{nmax}(x).
pub fn hermite_functions(x: f64, nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    hermite_functions_into(x, &mut out);
    out
}

/// The single 1-d function h_n(x).
pub fn hermite(n: usize, x: f64) -> f64 {
    hermite_functions(x, n)[n]
}

/// h_n(x) = ∏_i h_{n_i}(x_i).
pub fn eval_hermite(n: &MultiIndex, x: &[f64]) -> f64 {
    assert_eq!(n.dim(), x.len(), "multi-index and point dimensions differ");
    n.entries()
        .iter()
        .zip(x)
        .map(|(&ni, &xi)| hermite(ni as usize, xi))
        .product()
}

/// Gauss–Hermite rule for the weight e^{-x²}.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// w_q e^{u_q²}: the weights to use against integrands that already carry e^{-x²}.
    pub scaled_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ w_q f(u_q), approximating ∫ f(x) e^{-x²} dx.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(u))
            .sum()
    }
}

/// Golub–Welsch eigenvalues of the Jacobi matrix, Newton-polished, with Christoffel weights.
pub fn gauss_hermite_rule(q: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_QUADRATURE_NODES).contains(&q) {
        return Err(Error::Config(format!(
            "quadrature node count {q} outside 1..={MAX_QUADRATURE_NODES}"
        )));
    }
    let jacobi = DMatrix::from_fn(q, q, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let mut table = vec![0.0; q + 1];
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            hermite_functions_into(*x, &mut table);
            let denom = (2.0 * q as f64).sqrt() * table[q - 1];
            if denom == 0.0 {
                break;
            }
            let step = table[q] / denom;
            *x -= step;
            if step.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // enforce the reflection symmetry of the rule
    for i in 0..q / 2 {
        let m = 0.5 * (nodes[q - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[q - 1 - i] = m;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }

    let mut weights = Vec::with_capacity(q);
    let mut scaled_weights = Vec::with_capacity(q);
    let mut table = vec![0.0; q];
    for &x in &nodes {
        hermite_functions_into(x, &mut table);
        let s = 1.0 / table.iter().map(|h| h * h).sum::<f64>();
        scaled_weights.push(s);
        weights.push(s * (-x * x).exp());
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        scaled_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_examples() {
        let one: Vec<Vec<u32>> = enumerate_multi_indices(1, 2)
            .into_iter()
            .map(|m| m.0)
            .collect();
        assert_eq!(one, vec![vec![0], vec![1], vec![2]]);
        let two: Vec<Vec<u32>> = enumerate_multi_indices(2, 1)
            .into_iter()
            .map(|m| m.0)
            .collect();
        assert_eq!(two, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn enumeration_length_matches_brute_force() {
        let mut count = 0;
        for a in 0..=4 {
            for b in 0..=4 {
                for c in 0..=4 {
                    if a + b + c <= 4 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 35);
        assert_eq!(enumerate_multi_indices(3, 4).len(), count);
    }

    #[test]
    fn rank_inverts_enumeration() {
        for d in 1..=4 {
            for (i, m) in enumerate_multi_indices(d, 7).iter().enumerate() {
                assert_eq!(m.rank(), i, "d={d} m={m:?}");
            }
        }
    }

    #[test]
    fn degree_blocks_tile_the_basis() {
        let list = enumerate_multi_indices(3, 5);
        for k in 0..=5 {
            for i in degree_block(3, k) {
                assert_eq!(list[i].order(), k);
            }
        }
    }

    #[test]
    fn h0_at_zero() {
        assert!((hermite(0, 0.0) - std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
        assert!((hermite(0, 0.0) - 0.751126).abs() < 1e-6);
        assert_eq!(hermite(1, 0.0), 0.0);
    }

    #[test]
    fn closed_forms_low_degree() {
        let pi = std::f64::consts::PI;
        for &x in &[-2.3f64, -0.4, 0.0, 0.9, 3.1] {
            let g = pi.powf(-0.25) * (-x * x / 2.0).exp();
            let h = hermite_functions(x, 3);
            assert!((h[0] - g).abs() < 1e-15);
            assert!((h[1] - 2f64.sqrt() * x * g).abs() < 1e-14);
            assert!((h[2] - (2.0 * x * x - 1.0) / 2f64.sqrt() * g).abs() < 1e-14);
            assert!((h[3] - (2.0 * x * x * x - 3.0 * x) / 3f64.sqrt() * g).abs() < 1e-14);
        }
    }

    #[test]
    fn beyond_limit_is_zero() {
        assert!(hermite_functions(40.5, 10).iter().all(|&v| v == 0.0));
        assert!(hermite_functions(f64::NAN, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_path_matches_plain_path() {
        let mut plain = vec![0.0; 300];
        let mut scaled = vec![0.0; 300];
        for &x in &[0.3, 5.0, 17.0, 24.0] {
            hermite_functions_into(x, &mut plain);
            scaled_recurrence(x, &mut scaled);
            for k in 0..300 {
                assert!(
                    (plain[k] - scaled[k]).abs() <= 1e-12 * plain[k].abs().max(1e-300),
                    "x={x} k={k}"
                );
            }
        }
    }

    #[test]
    fn high_degree_near_turning_point_is_finite() {
        // turning point of h_800 is √1601 ≈ 40; the naive start e^{-x²/2} underflows there
        let h = hermite_functions(36.0, 800);
        assert!(h.iter().all(|v| v.is_finite()));
        assert!(h[800].abs() > 1e-3);
    }

    #[test]
    fn recurrence_consistent_with_finite_differences() {
        let step = 1e-5;
        for i in 0..200 {
            let x = -8.0 + 16.0 * i as f64 / 199.0;
            let plus = hermite_functions(x + step, 32);
            let minus = hermite_functions(x - step, 32);
            let at = hermite_functions(x, 32);
            for k in 0..=30 {
                let fd = (plus[k] - minus[k]) / (2.0 * step);
                let lower = if k > 0 { (k as f64 / 2.0).sqrt() * at[k - 1] } else { 0.0 };
                let rec = lower - ((k as f64 + 1.0) / 2.0).sqrt() * at[k + 1];
                assert!((fd - rec).abs() < 1e-6, "k={k} x={x}: {fd} vs {rec}");
            }
        }
    }

    #[test]
    fn quadrature_small_rules() {
        let pi = std::f64::consts::PI;
        let r1 = gauss_hermite_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - pi.sqrt()).abs() < 1e-14);
        let r2 = gauss_hermite_rule(2).unwrap();
        let s = 0.5f64.sqrt();
        assert!((r2.nodes[0] + s).abs() < 1e-15 && (r2.nodes[1] - s).abs() < 1e-15);
        for w in &r2.weights {
            assert!((w - pi.sqrt() / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_out_of_range() {
        assert!(matches!(gauss_hermite_rule(0), Err(Error::Config(_))));
        assert!(matches!(gauss_hermite_rule(201), Err(Error::Config(_))));
    }

    // ∫ x^{2j} e^{-x²} dx = Γ(j + 1/2); odd moments vanish.
    fn gaussian_moment(deg: usize) -> f64 {
        if deg % 2 == 1 {
            return 0.0;
        }
        let mut g = std::f64::consts::PI.sqrt();
        for i in 0..deg / 2 {
            g *= i as f64 + 0.5;
        }
        g
    }

    #[test]
    fn quadrature_moments_and_mass() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        for q in [1, 2, 3, 5, 8, 13, 20, 40, 64, 100, 150, 200] {
            let rule = gauss_hermite_rule(q).unwrap();
            let mass: f64 = rule.weights.iter().sum();
            assert!((mass - sqrt_pi).abs() < 1e-12, "q={q} mass={mass}");
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for deg in 0..=(2 * q - 1).min(20) {
                let got = rule.integrate(|x| x.powi(deg as i32));
                let want = gaussian_moment(deg);
                let scale = gaussian_moment(deg + deg % 2).max(1.0);
                assert!((got - want).abs() < 1e-12 * scale, "q={q} deg={deg}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn orthonormality_via_quadrature() {
        let rule = gauss_hermite_rule(60).unwrap();
        let tables: Vec<Vec<f64>> = rule.nodes.iter().map(|&u| hermite_functions(u, 10)).collect();
        for m in 0..=10 {
            for n in 0..=10 {
                let g: f64 = tables
                    .iter()
                    .zip(&rule.scaled_weights)
                    .map(|(h, s)| s * h[m] * h[n])
                    .sum();
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "m={m} n={n} g={g}");
            }
        }
    }

    #[test]
    fn gram_identity_two_dimensions() {
        let k = 15;
        let rule = gauss_hermite_rule(2 * k + 2).unwrap();
        let basis = enumerate_multi_indices(2, k);
        let tables: Vec<Vec<f64>> = rule.nodes.iter().map(|&u| hermite_functions(u, k)).collect();
        let q = rule.len();
        for (a, ma) in basis.iter().enumerate() {
            for (b, mb) in basis.iter().enumerate().skip(a) {
                let mut g = 0.0;
                for i in 0..q {
                    for j in 0..q {
                        let (ea, eb) = (ma.entries(), mb.entries());
                        g += rule.scaled_weights[i]
                            * rule.scaled_weights[j]
                            * tables[i][ea[0] as usize]
                            * tables[j][ea[1] as usize]
                            * tables[i][eb[0] as usize]
                            * tables[j][eb[1] as usize];
                    }
                }
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "{ma:?} {mb:?} g={g}");
            }
        }
    }
}
