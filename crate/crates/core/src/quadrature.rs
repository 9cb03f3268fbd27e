//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

/// Adaptive Simpson integrator with an absolute error target.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveSimpson {
    pub tolerance: f64,
    pub max_depth: u32,
}

impl Default for AdaptiveSimpson {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_depth: 50,
        }
    }
}

struct Panel {
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

impl AdaptiveSimpson {
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        self.integrate_with_breaks(f, a, b, &[])
    }

    /// Integrates over `[a, b]`, using every break inside the interval as a
    /// panel boundary. The error budget is shared in proportion to length.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Numerical(format!("non-finite bounds [{a}, {b}]")));
        }
        if a == b {
            return Ok(0.0);
        }
        if a > b {
            return self.integrate_with_breaks(f, b, a, breaks).map(|v| -v);
        }
        let mut knots = vec![a];
        let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        inner.sort_by(f64::total_cmp);
        knots.extend(inner);
        knots.push(b);

        let span = b - a;
        let mut total = 0.0;
        for w in knots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let eps = self.tolerance * (hi - lo) / span;
            total += self.panel(&f, lo, hi, eps)?;
        }
        Ok(total)
    }

    fn panel<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, eps: f64) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = simpson(a, b, fa, fm, fb);
        let p = Panel {
            a,
            m,
            b,
            fa,
            fm,
            fb,
            whole,
        };
        self.refine(f, p, eps, self.max_depth)
    }

    fn refine<F: Fn(f64) -> f64>(&self, f: &F, p: Panel, eps: f64, depth: u32) -> Result<f64> {
        let Panel {
            a,
            m,
            b,
            fa,
            fm,
            fb,
            whole,
        } = p;
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand not finite on [{a}, {b}]"
            )));
        }
        if delta.abs() <= 15.0 * eps {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Numerical(format!(
                "adaptive Simpson did not converge on [{a}, {b}] (residual {:.3e})",
                delta.abs() / 15.0
            )));
        }
        let l = Panel {
            a,
            m: lm,
            b: m,
            fa,
            fm: flm,
            fb: fm,
            whole: left,
        };
        let r = Panel {
            a: m,
            m: rm,
            b,
            fa: fm,
            fm: frm,
            fb,
            whole: right,
        };
        Ok(self.refine(f, l, 0.5 * eps, depth - 1)? + self.refine(f, r, 0.5 * eps, depth - 1)?)
    }
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for x in values {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + carry
}
