//! Row-wise primitives shared by the forward and backward passes.

use ndarray::{Array1, Array2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let cols = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / cols;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| v * inv);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx`; accumulates gain and bias gradients when given.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    param_grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dg, db)) = param_grads {
        *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let cols = dy.ncols() as f64;
    let mut dx = dy * g;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut d, xh, &inv| {
            let mean_d = d.sum() / cols;
            let mean_dx = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
            Zip::from(&mut d).and(&xh).for_each(|v, &x| {
                *v = inv * (*v - mean_d - x * mean_dx);
            });
        });
    dx
}

/// Softmax over each row.
pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Softmax of row `t` over columns `0..=t`; later columns are set to zero.
pub fn causal_softmax_rows(s: &mut Array2<f64>) {
    for (t, mut row) in s.rows_mut().into_iter().enumerate() {
        let visible = t + 1;
        let max = row.iter().take(visible).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (u, v) in row.iter_mut().enumerate() {
            if u < visible {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.iter_mut().take(visible).for_each(|v| *v /= sum);
    }
}

/// Gradient through a row softmax: `a * (da - rowsum(da * a))`.
pub fn softmax_backward(a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut ds = da.clone();
    Zip::from(ds.rows_mut()).and(a.rows()).for_each(|mut d, p| {
        let dot = d.iter().zip(p.iter()).map(|(x, y)| x * y).sum::<f64>();
        Zip::from(&mut d).and(&p).for_each(|v, &pv| *v = pv * (*v - dot));
    });
    ds
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable `log(softmax(row))[target]`.
pub fn log_softmax_at(row: ndarray::ArrayView1<f64>, target: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[target] - lse
}
