//! Central finite-difference gradient checks.

use crate::error::Result;

use super::graph::{Graph, Tensor};
use super::params::{Binder, ParamSet};

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `backward` gradients of `f` at `x` against
/// `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` and returns the largest relative error.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Tensor) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let xt = g.variable(x.to_vec(), shape)?;
    let loss = f(&mut g, xt)?;
    g.backward(loss)?;
    let analytic = g.grad(xt).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |point: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xt = g.variable(point, shape)?;
        let l = f(&mut g, xt)?;
        Ok(g.scalar(l))
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check over every entry of a parameter set. `f` builds the loss
/// by binding parameters from the set it is handed.
pub fn grad_check_params<F>(params: &ParamSet, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &mut Binder, &ParamSet) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let loss = f(&mut g, &mut binder, params)?;
    g.backward(loss)?;
    let analytic = binder.grads(&g);

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    for name in names {
        let len = params.get(&name)?.values.len();
        for i in 0..len {
            let base = params.get(&name)?.values[i];
            let mut eval = |value: f64, probe: &mut ParamSet| -> Result<f64> {
                probe.get_mut(&name).expect("parameter present").values[i] = value;
                let mut g = Graph::new();
                let mut b = Binder::new();
                let l = f(&mut g, &mut b, probe)?;
                Ok(g.scalar(l))
            };
            let up = eval(base + h, &mut probe)?;
            let down = eval(base - h, &mut probe)?;
            probe.get_mut(&name).expect("parameter present").values[i] = base;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(&name).map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
