//! Small helpers on `&[f64]` vectors.

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Radial projection onto the closed ball `B(0, radius)`.
pub fn clamp_to_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let n = norm(x);
    if n <= radius || n == 0.0 {
        x.to_vec()
    } else {
        let s = radius / n;
        x.iter().map(|v| v * s).collect()
    }
}

/// Nodes of the cubic lattice `spacing · Z^dim` inside the closed ball
/// `B(0, radius)`, row-major and in lexicographic order.
pub fn ball_lattice(dim: usize, radius: f64, spacing: f64) -> Vec<f64> {
    let n = (radius / spacing).floor() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-n; dim];
    let r2 = radius * radius * (1.0 + 1e-12);
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * spacing).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= r2 {
            out.extend_from_slice(&p);
        }
        let mut k = dim;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if idx[k] < n {
                idx[k] += 1;
                break;
            }
            idx[k] = -n;
        }
    }
}
