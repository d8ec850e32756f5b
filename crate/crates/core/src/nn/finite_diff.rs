//! Central finite differences, used by the Jacobian diagnostics and as the
//! reference against which hand-derived gradients are checked.

use ndarray::{Array, ArrayView, Dimension};

use super::params::{ParamSet, Params};
use super::real::Real;

/// Gradient of a scalar function of an array by central differences.
pub fn numeric_grad<T: Real, D: Dimension>(
    x: &Array<T, D>,
    mut f: impl FnMut(&Array<T, D>) -> T,
    step: f64,
) -> Array<T, D> {
    let mut probe = x.clone();
    let mut out = Array::zeros(x.raw_dim());
    let h = T::lit(step);
    for i in 0..x.len() {
        let orig = probe.as_slice_memory_order().expect("contiguous")[i];
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig + h;
        let up = f(&probe);
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig - h;
        let down = f(&probe);
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig;
        out.as_slice_memory_order_mut().expect("contiguous")[i] = (up - down) / (h + h);
    }
    out
}

/// Central-difference gradient of a scalar loss with respect to every
/// parameter, laid out like `Params` itself.
pub fn numeric_param_grads<T: Real>(params: &Params<T>, mut loss: impl FnMut(&Params<T>) -> T, step: f64) -> Vec<ndarray::ArrayD<T>> {
    let mut probe = params.clone();
    let h = T::lit(step);
    let n = params.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let len = params.iter().nth(k).map(|(_, v)| v.len()).unwrap_or(0);
        let mut g = ndarray::ArrayD::zeros(params.iter().nth(k).unwrap().1.raw_dim());
        for i in 0..len {
            let orig = nth_scalar(&mut probe, k, i, None);
            nth_scalar(&mut probe, k, i, Some(orig + h));
            let up = loss(&probe);
            nth_scalar(&mut probe, k, i, Some(orig - h));
            let down = loss(&probe);
            nth_scalar(&mut probe, k, i, Some(orig));
            g.as_slice_memory_order_mut().expect("contiguous")[i] = (up - down) / (h + h);
        }
        out.push(g);
    }
    out
}

fn nth_scalar<T: Real>(p: &mut Params<T>, k: usize, i: usize, set: Option<T>) -> T {
    let v = p.values_mut().nth(k).expect("param index");
    let s = v.as_slice_memory_order_mut().expect("contiguous");
    if let Some(x) = set {
        s[i] = x;
    }
    s[i]
}

/// Relative error with an absolute floor, so near-zero entries compare on
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between two arrays.
pub fn max_rel_err<T: Real, D: Dimension>(analytic: ArrayView<T, D>, numeric: ArrayView<T, D>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &b)| rel_err(a.as_f64(), b.as_f64()))
        .fold(0.0, f64::max)
}

pub fn assert_rel_close<T: Real, D: Dimension>(analytic: ArrayView<T, D>, numeric: ArrayView<T, D>, tol: f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    let e = max_rel_err(analytic, numeric);
    assert!(e < tol, "max relative error {e:e} exceeds {tol:e}");
}

/// Largest relative error between accumulated parameter gradients and their
/// finite-difference estimate, with the name of the worst parameter.
pub fn param_grad_error<T: Real>(ps: &ParamSet<T>, loss: impl FnMut(&Params<T>) -> T, step: f64) -> (f64, String) {
    let numeric = numeric_param_grads(&ps.params, loss, step);
    let mut worst = (0.0, String::new());
    for (((name, _), g), n) in ps.params.iter().zip(ps.grads.iter()).zip(&numeric) {
        let e = max_rel_err(g.view(), n.view());
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, name.to_string());
        }
    }
    worst
}

pub fn assert_grad_close<T: Real>(ps: &ParamSet<T>, loss: impl FnMut(&Params<T>) -> T, tol: f64) {
    let (e, name) = param_grad_error(ps, loss, 1e-4);
    assert!(e < tol, "parameter {name}: relative error {e:e} exceeds {tol:e}");
}
