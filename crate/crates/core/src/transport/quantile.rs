//! Monotone (north-west corner on sorted supports) coupling on the real line.
//! Optimal for every convex cost `|x - y|^p`, `p >= 1`.

use std::cmp::Ordering;

fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Sparse coupling entries `(i, j, mass)` between two weighted point sets in 1-D.
pub(crate) fn couple(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> Vec<(usize, usize, f64)> {
    let ox = sorted_order(xs);
    let oy = sorted_order(ys);
    let mut out = Vec::with_capacity(xs.len() + ys.len());
    let (mut a, mut b) = (0, 0);
    let mut ra = wx[ox[0]];
    let mut rb = wy[oy[0]];
    loop {
        let m = ra.min(rb);
        if m > 0.0 {
            out.push((ox[a], oy[b], m));
        }
        ra -= m;
        rb -= m;
        // Advance whichever side is exhausted; on the final atoms absorb rounding.
        let last_a = a + 1 == ox.len();
        let last_b = b + 1 == oy.len();
        if last_a && last_b {
            let rest = ra.max(rb);
            if rest > 0.0 {
                match out.last_mut() {
                    Some(e) if e.0 == ox[a] && e.1 == oy[b] => e.2 += rest,
                    _ => out.push((ox[a], oy[b], rest)),
                }
            }
            break;
        }
        if (ra <= rb && !last_a) || last_b {
            a += 1;
            ra += wx[ox[a]];
        } else {
            b += 1;
            rb += wy[oy[b]];
        }
    }
    out
}
