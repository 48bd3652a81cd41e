//! Dense vector kernels over row-major slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `out = M x` for `M` with `out.len()` rows of `x.len()` columns.
pub fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += M x`
pub fn matvec_acc(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += M^T y`
pub fn matvec_t_acc(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yi != 0.0 {
            axpy(yi, row, out);
        }
    }
}

/// `M += y x^T`
pub fn outer_acc(y: &[f64], x: &[f64], m: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(m.chunks_exact_mut(cols)) {
        if yi != 0.0 {
            axpy(yi, x, row);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
