//! Dense vector helpers over `[f64]`.
//!
//! Every reduction runs in ascending index order so results do not depend
//! on how callers schedule work.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Row-major `m * v` for a square `d x d` matrix.
pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    m.chunks_exact(d).map(|row| dot(row, v)).collect()
}

/// Mean of equal-length vectors, summed in slice order.
pub fn mean_of<'a, I>(vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a Vec<f64>>,
{
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        add_assign(&mut acc, v);
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

/// Shortest text that parses back to the identical bit pattern; scientific
/// notation outside `[1e-4, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub(crate) fn encode_floats(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| format_float(x)).collect()
}

pub(crate) fn decode_floats(v: &[String]) -> crate::Result<Vec<f64>> {
    v.iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| crate::Error::Format(format!("bad float literal {s:?}")))
        })
        .collect()
}
