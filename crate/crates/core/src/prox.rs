//! Exact proximal operator of the 1D (weighted) total variation.
//!
//! Solves
//!
//! ```text
//! min_u  1/2 sum_i f_i (u_i - y_i)^2 + lambda sum_i w_i |u_{i+1} - u_i|
//! ```
//!
//! by dynamic programming on the derivatives of the forward messages, which
//! are piecewise linear. Each step clips the derivative at `+-lambda w_i` and
//! records the two clip points; the backward pass clamps between them. The
//! cost is linear in `n` up to the amortized knot bookkeeping and the result
//! is exact up to roundoff. Fidelity weights `f_i` default to one.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxProblem {
    pub input: Vec<f64>,
    pub lambda: f64,
    /// Interface weights, `n - 1` positive values.
    pub weights: Option<Vec<f64>>,
    /// Per-cell weights of the quadratic term, `n` positive values.
    pub fidelity: Option<Vec<f64>>,
}

impl ProxProblem {
    pub fn new(input: Vec<f64>, lambda: f64) -> Self {
        Self {
            input,
            lambda,
            weights: None,
            fidelity: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_fidelity(mut self, fidelity: Vec<f64>) -> Self {
        self.fidelity = Some(fidelity);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.input.len();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prox weight must be positive, got {}",
                self.lambda
            )));
        }
        if self.input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prox input must be finite".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() + 1 != n.max(1) {
                return Err(Error::InvalidInput(format!(
                    "expected {} interface weights, got {}",
                    n.saturating_sub(1),
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput("interface weights must be positive".into()));
            }
        }
        if let Some(f) = &self.fidelity {
            if f.len() != n {
                return Err(Error::InvalidInput(format!(
                    "expected {n} fidelity weights, got {}",
                    f.len()
                )));
            }
            if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput("fidelity weights must be positive".into()));
            }
        }
        Ok(())
    }

    /// Value of the prox objective at `u`.
    pub fn objective(&self, u: &[f64]) -> f64 {
        let n = self.input.len();
        let mut total = 0.0;
        for i in 0..n {
            let f = self.fidelity.as_ref().map_or(1.0, |f| f[i]);
            total += 0.5 * f * (u[i] - self.input[i]).powi(2);
        }
        for i in 0..n.saturating_sub(1) {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            total += self.lambda * w * (u[i + 1] - u[i]).abs();
        }
        total
    }
}

/// Checked entry point: validates the problem and solves it.
pub fn tv_prox(problem: &ProxProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    let mut out = vec![0.0; problem.input.len()];
    solve_into(
        &problem.input,
        problem.lambda,
        problem.weights.as_deref(),
        problem.fidelity.as_deref(),
        &mut out,
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Knot {
    x: f64,
    ds: f64,
    dc: f64,
}

/// Unchecked solver used in hot loops.
pub(crate) fn solve_into(
    y: &[f64],
    lambda: f64,
    weights: Option<&[f64]>,
    fidelity: Option<&[f64]>,
    out: &mut [f64],
) {
    let n = y.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        out[0] = y[0];
        return;
    }
    let fid = |i: usize| fidelity.map_or(1.0, |f| f[i]);
    let lam = |i: usize| lambda * weights.map_or(1.0, |w| w[i]);

    let mut knots: VecDeque<Knot> = VecDeque::with_capacity(2 * n);
    let mut lower = vec![0.0; n - 1];
    let mut upper = vec![0.0; n - 1];

    // The derivative of the current message plus data term is piecewise
    // linear, value `s * x + c` on each piece. Track the outermost pieces.
    let f0 = fid(0);
    let (mut ls, mut lc) = (f0, -f0 * y[0]);
    let (mut rs, mut rc) = (f0, -f0 * y[0]);

    for k in 0..n - 1 {
        let l = lam(k);

        let (mut s, mut c) = (ls, lc);
        while let Some(kn) = knots.front() {
            if s * kn.x + c < -l {
                s += kn.ds;
                c += kn.dc;
                knots.pop_front();
            } else {
                break;
            }
        }
        let t_minus = (-l - c) / s;
        let (sl, cl) = (s, c);

        let (mut s, mut c) = (rs, rc);
        while let Some(kn) = knots.back() {
            if s * kn.x + c > l {
                s -= kn.ds;
                c -= kn.dc;
                knots.pop_back();
            } else {
                break;
            }
        }
        let t_plus = (l - c) / s;
        let (sr, cr) = (s, c);

        lower[k] = t_minus;
        upper[k] = t_plus.max(t_minus);
        knots.push_front(Knot {
            x: t_minus,
            ds: sl,
            dc: cl + l,
        });
        knots.push_back(Knot {
            x: t_plus,
            ds: -sr,
            dc: l - cr,
        });

        let f = fid(k + 1);
        ls = f;
        lc = -l - f * y[k + 1];
        rs = f;
        rc = l - f * y[k + 1];
    }

    let (mut s, mut c) = (ls, lc);
    while let Some(kn) = knots.front() {
        if s * kn.x + c < 0.0 {
            s += kn.ds;
            c += kn.dc;
            knots.pop_front();
        } else {
            break;
        }
    }
    out[n - 1] = -c / s;
    for k in (0..n - 1).rev() {
        out[k] = out[k + 1].clamp(lower[k], upper[k]);
    }
}
