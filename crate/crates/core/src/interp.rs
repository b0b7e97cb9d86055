//! Monotone piecewise cubic Hermite interpolation on a strictly increasing
//! table.

use crate::Real;

/// Piecewise cubic Hermite interpolant through `(xs[i], ys[i])` with slopes
/// `ds[i]`. Slopes are limited (Fritsch–Carlson) so the interpolant is
/// monotone whenever the data are.
#[derive(Debug, Clone)]
pub struct MonotoneCubic<T: Real> {
    xs: Vec<T>,
    ys: Vec<T>,
    ds: Vec<T>,
}

impl<T: Real> MonotoneCubic<T> {
    /// Builds the interpolant from values and slope estimates. Requires
    /// strictly increasing `xs` and `ys` of at least two points.
    pub fn new(xs: Vec<T>, ys: Vec<T>, mut ds: Vec<T>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len() && ys.len() == ds.len());
        let n = xs.len();
        for i in 0..n - 1 {
            let secant = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
            for d in [i, i + 1] {
                if ds[d] < T::zero() {
                    ds[d] = T::zero();
                }
            }
            if secant <= T::zero() {
                ds[i] = T::zero();
                ds[i + 1] = T::zero();
                continue;
            }
            let a = ds[i] / secant;
            let b = ds[i + 1] / secant;
            let r2 = a * a + b * b;
            let nine = T::lit(9.0);
            if r2 > nine {
                let tau = T::lit(3.0) / r2.sqrt();
                ds[i] = tau * a * secant;
                ds[i + 1] = tau * b * secant;
            }
        }
        Self { xs, ys, ds }
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn domain(&self) -> (T, T) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn range(&self) -> (T, T) {
        (self.ys[0], self.ys[self.ys.len() - 1])
    }

    /// Index `i` with `xs[i] <= x <= xs[i+1]`, clamped to the table.
    fn segment(&self, x: T) -> usize {
        let n = self.xs.len();
        let i = self.xs.partition_point(|&v| v <= x);
        i.saturating_sub(1).min(n - 2)
    }

    #[inline]
    fn eval_in(&self, i: usize, x: T) -> T {
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }

    #[inline]
    fn deriv_in(&self, i: usize, x: T) -> T {
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let six = T::lit(6.0);
        let d00 = (six * s2 - six * s) / h;
        let d10 = T::lit(3.0) * s2 - T::lit(4.0) * s + T::one();
        let d01 = (six * s - six * s2) / h;
        let d11 = T::lit(3.0) * s2 - T::lit(2.0) * s;
        d00 * self.ys[i] + d10 * self.ds[i] + d01 * self.ys[i + 1] + d11 * self.ds[i + 1]
    }

    /// Interpolated value; extrapolates with the end cubics outside the table.
    pub fn eval(&self, x: T) -> T {
        self.eval_in(self.segment(x), x)
    }

    pub fn derivative(&self, x: T) -> T {
        self.deriv_in(self.segment(x), x)
    }

    /// Inverse of the interpolant for `y` inside its range: the segment is
    /// found by binary search on the values, then safeguarded Newton with a
    /// bisection fallback solves the cubic.
    pub fn invert(&self, y: T) -> T {
        let (y0, y1) = self.range();
        if y <= y0 {
            return self.xs[0];
        }
        if y >= y1 {
            return self.xs[self.xs.len() - 1];
        }
        let n = self.ys.len();
        let i = self.ys.partition_point(|&v| v <= y).saturating_sub(1).min(n - 2);
        let (mut lo, mut hi) = (self.xs[i], self.xs[i + 1]);
        // secant start
        let mut x = lo + (hi - lo) * (y - self.ys[i]) / (self.ys[i + 1] - self.ys[i]);
        for _ in 0..100 {
            let r = self.eval_in(i, x) - y;
            if r == T::zero() {
                return x;
            }
            if r < T::zero() {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.deriv_in(i, x);
            let newton = x - r / d;
            let next = if d > T::zero() && newton > lo && newton < hi {
                newton
            } else {
                T::lit(0.5) * (lo + hi)
            };
            if (next - x).abs() <= T::epsilon() * x.abs().max(T::min_positive_value()) {
                return next;
            }
            x = next;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cubic_table(n: usize) -> MonotoneCubic<f64> {
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().map(|x| x + x * x * x).collect();
        let ds = xs.iter().map(|x| 1.0 + 3.0 * x * x).collect();
        MonotoneCubic::new(xs, ys, ds)
    }

    #[test]
    fn reproduces_cubic_exactly() {
        let c = cubic_table(5);
        for k in 0..100 {
            let x = -1.0 + 2.0 * k as f64 / 99.0;
            assert!((c.eval(x) - (x + x * x * x)).abs() < 1e-13);
        }
    }

    #[test]
    fn limiter_keeps_monotone() {
        // steep step data with overshooting slopes
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![0.0, 0.01, 0.99, 1.0];
        let ds = vec![5.0, 5.0, 5.0, 5.0];
        let c = MonotoneCubic::new(xs, ys, ds);
        let mut prev = c.eval(0.0);
        for k in 1..=300 {
            let v = c.eval(3.0 * k as f64 / 300.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn inverse_round_trip(x in -1.0f64..1.0) {
            let c = cubic_table(33);
            let y = c.eval(x);
            prop_assert!((c.invert(y) - x).abs() < 1e-13);
        }
    }
}
