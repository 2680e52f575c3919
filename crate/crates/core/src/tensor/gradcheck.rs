//! Central-difference verification of reverse-mode gradients.
//!
//! Runs in f64 only: single precision leaves too little headroom between
//! truncation error of the difference quotient and round-off.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_coord: usize,
    /// Coordinates actually compared.
    pub checked: usize,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Compares an analytic gradient of `value_fn` at `x` against central
/// differences with step `eps`, on the given coordinates (all if empty).
pub fn finite_diff_compare(
    mut value_fn: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradcheckReport> {
    if analytic.dims() != x.dims() {
        return Err(Error::Shape(format!(
            "gradient dims {:?} do not match input dims {:?}",
            analytic.dims(),
            x.dims()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step {eps} must be positive")));
    }
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..x.numel()).collect();
        &all
    } else {
        coords
    };

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_coord: coords[0],
        checked: 0,
        pass: true,
    };
    let mut xp = x.clone();
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::Shape(format!(
                "gradcheck coordinate {i} out of range for {} elements",
                x.numel()
            )));
        }
        let x0 = x.data()[i];
        xp.data_mut()[i] = x0 + eps;
        let fp = value_fn(&xp)?;
        xp.data_mut()[i] = x0 - eps;
        let fm = value_fn(&xp)?;
        xp.data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at coordinate {i} is not finite"
            )));
        }
        let a = analytic.data()[i];
        let re = rel_err(a, numeric);
        let ae = (a - numeric).abs();
        if re > report.max_rel_err {
            report.max_rel_err = re;
            report.worst_coord = i;
        }
        report.max_abs_err = report.max_abs_err.max(ae);
        report.checked += 1;
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

/// Builds the graph via `f`, runs backward from its scalar output, and checks
/// the gradient w.r.t. `x` by central differences.
///
/// `sample`: `None` checks every coordinate; `Some((n, seed))` checks a
/// seeded random subset of `n` coordinates (for large inputs).
pub fn gradcheck(
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
    eps: f64,
    tol: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradcheckReport> {
    let analytic = {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true)?;
        let out = f(&mut g, xv)?;
        g.backward(out)?;
        g.grad(xv)
            .ok_or_else(|| Error::Graph("gradcheck target received no gradient".into()))?
            .clone()
    };

    let coords: Vec<usize> = match sample {
        None => Vec::new(),
        Some((n, seed)) => {
            let mut all: Vec<usize> = (0..x.numel()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.shuffle(&mut rng);
            all.truncate(n.min(x.numel()));
            all
        }
    };

    finite_diff_compare(
        |xt| {
            let mut g = Graph::new();
            let xv = g.leaf(xt.clone(), false)?;
            let out = f(&mut g, xv)?;
            let v = g.value(out);
            if v.numel() != 1 {
                return Err(Error::Graph(format!(
                    "gradcheck output must be scalar, got dims {:?}",
                    v.dims()
                )));
            }
            Ok(v.data()[0])
        },
        x,
        &analytic,
        eps,
        tol,
        &coords,
    )
}
