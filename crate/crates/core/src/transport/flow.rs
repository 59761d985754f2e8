//! Successive shortest paths with Johnson potentials on the complete bipartite
//! transportation network. Forward arcs have unbounded capacity; supplies and
//! demands are the two sets of weights.

const EPS: f64 = 1e-15;

/// Sparse optimal coupling `(i, j, mass)` for a row-major `m x n` cost matrix.
pub(crate) fn transport(cost: &[f64], supply: &[f64], demand: &[f64]) -> Vec<(usize, usize, f64)> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);
    // Node layout: 0 = super source, 1..=m sources, m+1..=m+n sinks, m+n+1 = super sink.
    let nodes = m + n + 2;
    let sink = nodes - 1;
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![0.0f64; m * n];
    let mut pot = vec![0.0f64; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        if !sup.iter().any(|&s| s > EPS) || !dem.iter().any(|&d| d > EPS) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[0] = 0.0;
        loop {
            // Dense selection; the lowest index wins ties.
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < best {
                    best = d;
                    u = k;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            let du = dist[u];
            let relax = |v: usize, c: f64, dist: &mut [f64], prev: &mut [usize]| {
                let rc = (c + pot[u] - pot[v]).max(0.0);
                let nd = du + rc;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == 0 {
                for i in 0..m {
                    if sup[i] > EPS && !done[1 + i] {
                        relax(1 + i, 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                for j in 0..n {
                    let v = 1 + m + j;
                    if !done[v] {
                        relax(v, cost[i * n + j], &mut dist, &mut prev);
                    }
                }
            } else {
                let j = u - 1 - m;
                for i in 0..m {
                    let v = 1 + i;
                    if flow[i * n + j] > EPS && !done[v] {
                        relax(v, -cost[i * n + j], &mut dist, &mut prev);
                    }
                }
                if dem[j] > EPS && !done[sink] {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let cap = dist[sink];
        for k in 0..nodes {
            pot[k] += dist[k].min(cap);
        }

        // Bottleneck along the path.
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            if u == 0 {
                bottleneck = bottleneck.min(sup[v - 1]);
            } else if v == sink {
                bottleneck = bottleneck.min(dem[u - 1 - m]);
            } else if u > m {
                // Backward arc sink j -> source i cancels flow on (i, j).
                bottleneck = bottleneck.min(flow[(v - 1) * n + (u - 1 - m)]);
            }
            v = u;
        }
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            if u == 0 {
                sup[v - 1] -= bottleneck;
            } else if v == sink {
                dem[u - 1 - m] -= bottleneck;
            } else if u > m {
                let e = &mut flow[(v - 1) * n + (u - 1 - m)];
                *e = (*e - bottleneck).max(0.0);
            } else {
                flow[(u - 1) * n + (v - 1 - m)] += bottleneck;
            }
            v = u;
        }
    }

    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = flow[i * n + j];
            if f > 0.0 {
                out.push((i, j, f));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_three() {
        // Sources at 0 and 1, sinks at 0, 0.5, 1 on a line with cost |x - y|.
        let xs = [0.0f64, 1.0];
        let ys = [0.0, 0.5, 1.0];
        let mut c = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                c[i * 3 + j] = (xs[i] - ys[j]).abs();
            }
        }
        let e = transport(&c, &[0.5, 0.5], &[0.25, 0.5, 0.25]);
        let total: f64 = e.iter().map(|&(i, j, f)| f * c[i * 3 + j]).sum();
        assert!((total - 0.25).abs() < 1e-15);
    }
}
