use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Clamped B-spline basis on `[knots[degree], knots[len - degree - 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BsplineBasis {
    /// Full knot vector, nondecreasing, with at least `2 * degree + 2` entries.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        ensure!(knots.len() >= 2 * degree + 2, Validation, "need at least {} knots", 2 * degree + 2);
        ensure!(knots.iter().all(|k| k.is_finite()), Validation, "knots must be finite");
        ensure!(knots.windows(2).all(|w| w[0] <= w[1]), Validation, "knots must be nondecreasing");
        let b = Self { knots, degree };
        let (lo, hi) = b.domain();
        ensure!(lo < hi, Validation, "empty spline domain");
        Ok(b)
    }

    /// Clamped basis with `n_basis` functions and evenly spaced interior knots.
    pub fn uniform(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Result<Self> {
        ensure!(n_basis > degree, Validation, "n_basis must exceed degree");
        ensure!(lo < hi, Validation, "empty spline domain");
        let interior = n_basis - degree - 1;
        let inner = (1..=interior).map(|j| lo + (hi - lo) * j as f64 / (interior + 1) as f64);
        Self::clamped(lo, hi, inner.collect(), degree)
    }

    /// Clamped basis with interior knots at evenly spaced quantiles of
    /// `values`. A zero-width range is widened by 0.5 on each side; tied
    /// quantiles fall back to evenly spaced knots.
    pub fn quantile(values: &[f64], n_basis: usize, degree: usize) -> Result<Self> {
        ensure!(!values.is_empty(), Validation, "no values to place knots on");
        ensure!(n_basis > degree, Validation, "n_basis must exceed degree");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (sorted[0], sorted[sorted.len() - 1]);
        if lo >= hi {
            lo -= 0.5;
            hi += 0.5;
            return Self::uniform(lo, hi, n_basis, degree);
        }
        let interior = n_basis - degree - 1;
        let inner: Vec<f64> = (1..=interior)
            .map(|j| quantile_sorted(&sorted, j as f64 / (interior + 1) as f64))
            .collect();
        let strictly = std::iter::once(lo)
            .chain(inner.iter().copied())
            .chain(std::iter::once(hi))
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[0] < w[1]);
        if strictly {
            Self::clamped(lo, hi, inner, degree)
        } else {
            Self::uniform(lo, hi, n_basis, degree)
        }
    }

    fn clamped(lo: f64, hi: f64, inner: Vec<f64>, degree: usize) -> Result<Self> {
        let mut knots = vec![lo; degree + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::from_knots(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.knots.len() - self.degree - 1])
    }

    /// Index `s` with `knots[s] <= x < knots[s + 1]`, using the last
    /// non-empty span at the right end.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.len();
        if x >= self.knots[n] {
            let mut s = n - 1;
            while self.knots[s] >= self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of all basis functions at `x`. Points outside the domain are
    /// clamped to it, with a warning.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        if self.evaluate_into(x, &mut out) {
            let (lo, hi) = self.domain();
            log::warn!("spline argument {x} outside [{lo}, {hi}], clamped");
        }
        out
    }

    /// Like [`evaluate`](Self::evaluate) but silent; returns whether `x` was clamped.
    pub(crate) fn evaluate_into(&self, x: f64, out: &mut [f64]) -> bool {
        let (lo, hi) = self.domain();
        let clamped = x < lo || x > hi;
        let x = x.clamp(lo, hi);
        let p = self.degree;
        let s = self.span(x);
        let k = &self.knots;
        // Cox-de Boor triangle for the p + 1 non-zero functions.
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - k[s + 1 - j];
            right[j] = k[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out.fill(0.0);
        for (j, v) in n.into_iter().enumerate() {
            out[s - p + j] = v;
        }
        clamped
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// `m(x) = sum_s w_s b_s(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsplineCurve {
    pub basis: BsplineBasis,
    pub weights: Vec<f64>,
}

impl BsplineCurve {
    pub fn new(basis: BsplineBasis, weights: Vec<f64>) -> Result<Self> {
        ensure!(
            weights.len() == basis.len(),
            Contract,
            "{} weights for {} basis functions",
            weights.len(),
            basis.len()
        );
        Ok(Self { basis, weights })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (v, clamped) = self.eval_quiet(x);
        if clamped {
            let (lo, hi) = self.basis.domain();
            log::warn!("spline argument {x} outside [{lo}, {hi}], clamped");
        }
        v
    }

    pub(crate) fn eval_quiet(&self, x: f64) -> (f64, bool) {
        let mut b = vec![0.0; self.basis.len()];
        let clamped = self.basis.evaluate_into(x, &mut b);
        (b.iter().zip(&self.weights).map(|(b, w)| b * w).sum(), clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_hat_midway_is_half_half() {
        let b = BsplineBasis::from_knots(vec![0.0, 0.0, 1.0, 2.0, 3.0, 3.0], 1).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.evaluate(1.5), vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn right_end_is_last_basis() {
        let b = BsplineBasis::uniform(0.0, 1.0, 10, 3).unwrap();
        let v = b.evaluate(1.0);
        assert_eq!(v[9], 1.0);
        assert!(v[..9].iter().all(|&x| x == 0.0));
        let v = b.evaluate(0.0);
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn sums_to_one_at_knots_and_between() {
        let b = BsplineBasis::uniform(-2.0, 3.0, 10, 3).unwrap();
        for &x in b.knots().iter().chain(&[-1.234, 0.0, 2.999]) {
            let s: f64 = b.evaluate(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
        }
    }

    #[test]
    fn out_of_domain_clamps() {
        let b = BsplineBasis::uniform(0.0, 1.0, 6, 3).unwrap();
        assert_eq!(b.evaluate(-5.0), b.evaluate(0.0));
        assert_eq!(b.evaluate(7.0), b.evaluate(1.0));
    }

    #[test]
    fn quantile_knots_handle_ties_and_constants() {
        let b = BsplineBasis::quantile(&[2.0; 20], 10, 3).unwrap();
        assert_eq!(b.domain(), (1.5, 2.5));
        let mut v = vec![0.0; 30];
        v[29] = 1.0;
        let b = BsplineBasis::quantile(&v, 10, 3).unwrap();
        assert_eq!(b.domain(), (0.0, 1.0));
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn identity_is_representable() {
        // Greville abscissae reproduce linear functions exactly.
        let b = BsplineBasis::uniform(0.0, 4.0, 7, 3).unwrap();
        let k = b.knots();
        let w: Vec<f64> = (0..b.len()).map(|s| (k[s + 1] + k[s + 2] + k[s + 3]) / 3.0).collect();
        let c = BsplineCurve::new(b, w).unwrap();
        for x in [0.0, 0.3, 1.7, 2.0, 3.99, 4.0] {
            assert!((c.eval(x) - x).abs() < 1e-12);
        }
    }
}
