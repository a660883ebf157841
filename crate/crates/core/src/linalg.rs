//! Small vector helpers. Reductions run in `f64` in index order.

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm64(a: &[f64]) -> f64 {
    dot64(a, a).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let na = norm64(a);
    let nb = norm64(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot64(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn to_f64(a: &[f32]) -> Vec<f64> {
    a.iter().map(|&v| v as f64).collect()
}
