//! Cubic B-spline basis, quantile knot placement and the second-order
//! difference penalty.
//!
//! The basis uses an open (clamped) knot vector: both boundary knots are
//! repeated `degree + 1` times, so `B_1(lo) = 1` and `B_q(hi) = 1`.
//! Evaluation outside `[lo, hi]` is clamped to the nearest boundary.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;
/// Number of basis functions that can be nonzero at a point.
pub const ORDER: usize = DEGREE + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    interior_knots: Vec<f64>,
    boundary_knots: (f64, f64),
    #[serde(skip)]
    knots: Vec<f64>,
}

/// The nonzero stretch of a basis vector: entries `start..start + ORDER`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    pub start: usize,
    pub values: [f64; ORDER],
}

impl BasisRow {
    #[inline]
    pub fn dot(&self, coef: &[f64]) -> f64 {
        let c = &coef[self.start..self.start + ORDER];
        self.values[0] * c[0] + self.values[1] * c[1] + self.values[2] * c[2] + self.values[3] * c[3]
    }

    /// `out[start + k] += scale * values[k]`.
    #[inline]
    pub fn axpy(&self, scale: f64, out: &mut [f64]) {
        let o = &mut out[self.start..self.start + ORDER];
        for k in 0..ORDER {
            o[k] += scale * self.values[k];
        }
    }

    pub fn to_dense(&self, q: usize) -> Vec<f64> {
        let mut v = vec![0.0; q];
        self.axpy(1.0, &mut v);
        v
    }
}

impl SplineBasis {
    /// Builds a cubic basis from explicit knots.
    pub fn new(interior_knots: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::DegenerateKnots(format!("boundary ({lo}, {hi}) is not an interval")));
        }
        let mut prev = lo;
        for &k in &interior_knots {
            if !(k > prev && k < hi) {
                return Err(Error::DegenerateKnots(format!(
                    "interior knots must be strictly increasing inside ({lo}, {hi})"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(interior_knots.len() + 2 * ORDER);
        knots.extend(std::iter::repeat(lo).take(ORDER));
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat(hi).take(ORDER));
        Ok(Self { degree: DEGREE, interior_knots, boundary_knots: (lo, hi), knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary_knots(&self) -> (f64, f64) {
        self.boundary_knots
    }

    /// Basis dimension `q_n`.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + ORDER
    }

    /// Full knot vector including the repeated boundary knots.
    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// Restores the knot vector after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        let (lo, hi) = self.boundary_knots;
        Self::new(self.interior_knots, lo, hi)
    }

    /// The nonzero basis values at `t` (clamped to the boundary).
    pub fn eval_row(&self, t: f64) -> BasisRow {
        let (lo, hi) = self.boundary_knots;
        let t = if t.is_nan() { lo } else { t.clamp(lo, hi) };
        let knots = &self.knots;
        let q = self.dim();
        // knot span mu with knots[mu] <= t < knots[mu+1]; the last span is closed.
        let span = if t >= hi {
            q - 1
        } else {
            // first index with knots[i] > t, minus one
            knots.partition_point(|&k| k <= t) - 1
        };

        // Cox-de Boor recursion on the ORDER nonzero functions, order by order.
        let mut values = [0.0; ORDER];
        values[0] = 1.0;
        for r in 1..=DEGREE {
            let mut saved = 0.0;
            for s in 0..r {
                let right = knots[span + s + 1];
                let left = knots[span + s + 1 - r];
                let denom = right - left;
                let term = if denom > 0.0 { values[s] / denom } else { 0.0 };
                values[s] = saved + (right - t) * term;
                saved = (t - left) * term;
            }
            values[r] = saved;
        }
        BasisRow { start: span - DEGREE, values }
    }

    /// `(B_1(t), ..., B_q(t))`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_row(t).to_dense(self.dim())
    }

    /// `sum_j gamma_j B_j(t)`.
    pub fn spline_eval(&self, gamma: &[f64], t: f64) -> Result<f64> {
        if gamma.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: gamma.len() });
        }
        Ok(self.eval_row(t).dot(gamma))
    }

    /// Greville abscissae: the knot averages at which coefficients reproduce
    /// linear functions exactly.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.knots[j + 1..j + 1 + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }
}

/// Number of interior knots for a sample of size `n`: the smallest `m` with `m^3 >= n`.
pub fn interior_knot_count(n: usize) -> usize {
    let mut m = 0usize;
    while m * m * m < n {
        m += 1;
    }
    m
}

/// Linear-interpolation (type 7) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Knot placement from pooled finite observation times: `ceil(n^(1/3))`
/// interior knots (unless overridden) at equally spaced type-7 quantiles,
/// boundary knots at the extremes.
pub fn make_knots(times: &[f64], n: usize, interior_override: Option<usize>) -> Result<SplineBasis> {
    if times.is_empty() {
        return Err(Error::DegenerateKnots("no finite observation times".into()));
    }
    if n < 2 {
        return Err(Error::DegenerateKnots(format!("sample size {n} is below 2")));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::DegenerateKnots(format!("observation time {t} is not finite and positive")));
    }
    let m = interior_override.unwrap_or_else(|| interior_knot_count(n));
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < m + 2 {
        return Err(Error::DegenerateKnots(format!(
            "{} distinct observation times cannot support {m} interior knots",
            distinct.len()
        )));
    }
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];

    let mut interior = Vec::with_capacity(m);
    for k in 1..=m {
        let mut knot = quantile_sorted(&sorted, k as f64 / (m + 1) as f64);
        let prev = interior.last().copied().unwrap_or(lo);
        if knot <= prev {
            // tie: move halfway toward the next distinct endpoint
            let next = distinct.iter().copied().find(|&v| v > prev).unwrap_or(hi);
            knot = 0.5 * (prev + next);
        }
        if knot >= hi {
            knot = 0.5 * (prev + hi);
        }
        if !(knot > prev && knot < hi) {
            return Err(Error::DegenerateKnots("could not separate tied quantile knots".into()));
        }
        interior.push(knot);
    }
    SplineBasis::new(interior, lo, hi)
}

/// Second-order difference operator and its Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub d_matrix: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn new(q: usize) -> Result<Self> {
        if q < 3 {
            return Err(Error::Domain(format!("difference penalty needs q_n >= 3, got {q}")));
        }
        let mut d = DMatrix::zeros(q - 2, q);
        for r in 0..q - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        let gram = d.transpose() * &d;
        Ok(Self { d_matrix: d, gram })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// Rank of the Gram matrix, `q_n - 2`.
    pub fn rank(&self) -> usize {
        self.dim() - 2
    }

    /// `||D gamma||^2`.
    pub fn norm_sq(&self, gamma: &[f64]) -> f64 {
        gamma.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).map(|x| x * x).sum()
    }

    /// `out += scale * D'D gamma`.
    pub fn add_gram_times(&self, gamma: &[f64], scale: f64, out: &mut [f64]) {
        for (r, w) in gamma.windows(3).enumerate() {
            let diff = scale * (w[0] - 2.0 * w[1] + w[2]);
            out[r] += diff;
            out[r + 1] -= 2.0 * diff;
            out[r + 2] += diff;
        }
    }
}

pub fn penalty_matrix(q: usize) -> Result<PenaltyMatrix> {
    PenaltyMatrix::new(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_5() -> SplineBasis {
        SplineBasis::new(vec![1.0, 1.5, 3.0, 4.2, 6.0], 0.2, 8.0).unwrap()
    }

    /// Textbook Cox-de Boor recursion with 0/0 := 0 as an oracle.
    fn cox_de_boor(knots: &[f64], j: usize, p: usize, t: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[j] <= t && t < knots[j + 1];
            let closing = last && t == knots[j + 1] && knots[j] < knots[j + 1]
                && knots[j + 1..].iter().all(|&k| k == knots[j + 1]);
            return if inside || closing { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[j + p] - knots[j];
        if d1 > 0.0 {
            v += (t - knots[j]) / d1 * cox_de_boor(knots, j, p - 1, t, last);
        }
        let d2 = knots[j + p + 1] - knots[j + 1];
        if d2 > 0.0 {
            v += (knots[j + p + 1] - t) / d2 * cox_de_boor(knots, j + 1, p - 1, t, last);
        }
        v
    }

    #[test]
    fn knot_counts() {
        assert_eq!(interior_knot_count(100), 5);
        assert_eq!(interior_knot_count(94), 5);
        assert_eq!(interior_knot_count(8), 2);
        assert_eq!(interior_knot_count(27), 3);
        assert_eq!(interior_knot_count(28), 4);
        assert_eq!(interior_knot_count(50), 4);
    }

    #[test]
    fn knots_at_type7_quantiles() {
        let times: Vec<f64> = (1..=9).map(f64::from).collect();
        let b = make_knots(&times, 8, None).unwrap();
        // h = 8p: p = 1/3 -> 3 + 2/3, p = 2/3 -> 6 + 1/3
        let k = b.interior_knots();
        assert_eq!(k.len(), 2);
        assert!((k[0] - 11.0 / 3.0).abs() < 1e-12);
        assert!((k[1] - 19.0 / 3.0).abs() < 1e-12);
        assert_eq!(b.boundary_knots(), (1.0, 9.0));
        assert_eq!(b.dim(), 6);
        assert_eq!(b.knot_vector().len(), 2 + 2 * ORDER);
    }

    #[test]
    fn tied_quantiles_are_separated() {
        let mut times = vec![5.0; 40];
        times.extend([1.0, 2.0, 3.0, 9.0, 10.0, 11.0, 12.0]);
        let b = make_knots(&times, 100, None).unwrap();
        let k = b.interior_knots();
        assert_eq!(k.len(), 5);
        assert!(k.windows(2).all(|w| w[0] < w[1]));
        assert!(k[0] > 1.0 && k[4] < 12.0);
    }

    #[test]
    fn too_few_distinct_times() {
        let times = vec![1.0, 2.0, 2.0, 3.0];
        assert!(matches!(make_knots(&times, 100, None), Err(Error::DegenerateKnots(_))));
        assert!(make_knots(&[], 10, None).is_err());
        assert!(make_knots(&[1.0, -2.0, 3.0], 10, None).is_err());
    }

    #[test]
    fn boundary_values() {
        let b = basis_5();
        let v = b.eval(0.2);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        let w = b.eval(8.0);
        assert_eq!(w[b.dim() - 1], 1.0);
        // clamped extrapolation
        assert_eq!(b.eval(-3.0), v);
        assert_eq!(b.eval(100.0), w);
    }

    #[test]
    fn single_interval_is_bernstein() {
        let b = SplineBasis::new(vec![], 2.0, 4.0).unwrap();
        let v = b.eval(3.0);
        let bern = [1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
        for (a, e) in v.iter().zip(bern) {
            assert!((a - e).abs() < 1e-15);
        }
        for k in 0..=20 {
            let t = 2.0 + 0.1 * k as f64;
            let s = (t - 2.0) / 2.0;
            let bern = [(1.0 - s).powi(3), 3.0 * s * (1.0 - s).powi(2), 3.0 * s * s * (1.0 - s), s.powi(3)];
            for (a, e) in b.eval(t).iter().zip(bern) {
                assert!((a - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        let b = basis_5();
        let knots = b.knot_vector().to_vec();
        for k in 0..=400 {
            let t = 0.2 + 7.8 * k as f64 / 400.0;
            let v = b.eval(t);
            for j in 0..b.dim() {
                let o = cox_de_boor(&knots, j, DEGREE, t, k == 400);
                assert!((v[j] - o).abs() < 1e-13, "B_{j}({t}): {} vs {o}", v[j]);
            }
        }
    }

    #[test]
    fn partition_of_unity_and_local_support() {
        let b = basis_5();
        for k in 0..1000 {
            let t = 0.2 + 7.8 * k as f64 / 999.0;
            let v = b.eval(t);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!(v.iter().filter(|&&x| x != 0.0).count() <= ORDER);
        }
    }

    #[test]
    fn constant_and_linear_reproduction() {
        let b = basis_5();
        let c = vec![2.5; b.dim()];
        let g = b.greville();
        let ramp: Vec<f64> = g.iter().map(|x| 3.0 * x - 1.0).collect();
        for k in 0..=200 {
            let t = 0.2 + 7.8 * k as f64 / 200.0;
            assert!((b.spline_eval(&c, t).unwrap() - 2.5).abs() < 1e-12);
            assert!((b.spline_eval(&ramp, t).unwrap() - (3.0 * t - 1.0)).abs() < 1e-10);
        }
        assert!(b.spline_eval(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn monotone_coefficients_give_monotone_spline() {
        let b = basis_5();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut gamma = vec![rng.gen_range(-3.0..3.0)];
            for _ in 1..b.dim() {
                let last = *gamma.last().unwrap();
                let step = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) };
                gamma.push(last + step);
            }
            let t1 = rng.gen_range(0.0..8.5);
            let t2 = rng.gen_range(0.0..8.5);
            let (a, c) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let va = b.spline_eval(&gamma, a).unwrap();
            let vc = b.spline_eval(&gamma, c).unwrap();
            assert!(va <= vc + 1e-12);
        }
    }

    #[test]
    fn penalty_examples() {
        let p = penalty_matrix(4).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0]);
        assert_eq!(p.d_matrix, expected);
        assert_eq!(p.norm_sq(&[0.0, 0.0, 1.0, 3.0]), 2.0);
        assert_eq!(p.norm_sq(&[1.0, 3.0, 5.0, 7.0]), 0.0);
        assert!(penalty_matrix(2).is_err());
        for row in p.d_matrix.row_iter() {
            assert_eq!(row.sum(), 0.0);
        }
    }

    #[test]
    fn gram_rank_and_null_space() {
        for q in [3, 6, 9, 12] {
            let p = penalty_matrix(q).unwrap();
            assert_eq!(p.gram, p.gram.transpose());
            let eig = p.gram.clone().symmetric_eigen();
            let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let rank = eig.eigenvalues.iter().filter(|&&e| e > 1e-9 * max).count();
            assert_eq!(rank, q - 2);
            assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10 * max));
            let affine = nalgebra::DVector::from_fn(q, |j, _| 0.7 - 1.3 * j as f64);
            assert!((&p.gram * affine).amax() < 1e-10);
        }
    }

    #[test]
    fn gram_product_matches_dense() {
        let p = penalty_matrix(7).unwrap();
        let g = [0.3, -1.0, 2.0, 2.5, 4.0, -0.5, 1.0];
        let mut out = vec![0.0; 7];
        p.add_gram_times(&g, 2.0, &mut out);
        let dense = &p.gram * nalgebra::DVector::from_row_slice(&g) * 2.0;
        for j in 0..7 {
            assert!((out[j] - dense[j]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn row_matches_dense_eval(t in -1.0f64..9.0) {
            let b = basis_5();
            let row = b.eval_row(t);
            let dense = b.eval(t);
            prop_assert!(row.start + ORDER <= b.dim());
            prop_assert_eq!(row.to_dense(b.dim()), dense);
        }
    }
}
