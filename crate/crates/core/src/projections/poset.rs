//! Weighted least-squares isotonic regression on a partial order.
//!
//! Recursive partitioning: for a block with weighted mean `m`, the elements
//! whose fitted value exceeds `m` form the maximum-weight upper set under
//! weights `w_i (v_i - m)`. That closure problem is a minimum cut. Splitting
//! never crosses a binding constraint, so the recursion on each half is
//! independent and the fixed point is the exact projection.

use std::collections::VecDeque;

/// Minimize `sum_i w_i (z_i - v_i)^2` subject to `z[lo] <= z[hi]` for every
/// `(lo, hi)` in `edges`. Weights must be positive.
pub fn isotonic_poset(values: &[f64], weights: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    let n = values.len();
    assert_eq!(weights.len(), n);
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }

    let mut in_block = vec![usize::MAX; n];
    let mut stack: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut block_id = 0usize;
    while let Some(block) = stack.pop() {
        let tw: f64 = block.iter().map(|&i| weights[i]).sum();
        let mean = block.iter().map(|&i| weights[i] * values[i]).sum::<f64>() / tw;
        block_id += 1;
        for &i in &block {
            in_block[i] = block_id;
        }
        let upper = if block.len() > 1 {
            max_upper_set(&block, &in_block, block_id, values, weights, edges, mean)
        } else {
            None
        };
        match upper {
            Some(upper) => {
                for &i in &upper {
                    in_block[i] = usize::MAX;
                }
                let lower: Vec<usize> = block.iter().copied().filter(|&i| in_block[i] != usize::MAX).collect();
                stack.push(upper);
                stack.push(lower);
            }
            None => {
                for &i in &block {
                    out[i] = mean;
                }
            }
        }
    }
    out
}

/// Upper set `U` of `block` maximizing `sum_{i in U} w_i (v_i - mean)`, if
/// its value is strictly positive.
fn max_upper_set(
    block: &[usize],
    in_block: &[usize],
    block_id: usize,
    values: &[f64],
    weights: &[f64],
    edges: &[(usize, usize)],
    mean: f64,
) -> Option<Vec<usize>> {
    let k = block.len();
    let mut local = vec![usize::MAX; values.len()];
    for (li, &i) in block.iter().enumerate() {
        local[i] = li;
    }
    let source = k;
    let sink = k + 1;
    let mut net = FlowNetwork::new(k + 2);
    let mut positive = 0.0;
    let mut scale = 0.0;
    for (li, &i) in block.iter().enumerate() {
        let c = weights[i] * (values[i] - mean);
        scale += c.abs();
        if c > 0.0 {
            net.add_edge(source, li, c);
            positive += c;
        } else if c < 0.0 {
            net.add_edge(li, sink, -c);
        }
    }
    if scale == 0.0 {
        return None;
    }
    for &(lo, hi) in edges {
        if in_block[lo] == block_id && in_block[hi] == block_id {
            net.add_edge(local[lo], local[hi], f64::INFINITY);
        }
    }
    let eps = 1e-13 * scale;
    let flow = net.max_flow(source, sink, eps);
    if positive - flow <= 1e-11 * scale {
        return None;
    }
    let reach = net.reachable(source, eps);
    let upper: Vec<usize> = (0..k).filter(|&li| reach[li]).map(|li| block[li]).collect();
    if upper.is_empty() || upper.len() == k {
        return None;
    }
    Some(upper)
}

struct Edge {
    to: usize,
    cap: f64,
}

/// Dinic max-flow on a small dense-ish graph.
struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    fn levels(&self, s: usize, eps: f64) -> Vec<i64> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let edge = &self.edges[e];
                if edge.cap > eps && level[edge.to] < 0 {
                    level[edge.to] = level[u] + 1;
                    queue.push_back(edge.to);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, pushed: f64, level: &[i64], iter: &mut [usize], eps: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adj[u].len() {
            let e = self.adj[u][iter[u]];
            let (to, cap) = (self.edges[e].to, self.edges[e].cap);
            if cap > eps && level[to] == level[u] + 1 {
                let got = self.augment(to, t, pushed.min(cap), level, iter, eps);
                if got > 0.0 {
                    self.edges[e].cap -= got;
                    self.edges[e ^ 1].cap += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.levels(s, eps);
            if level[t] < 0 {
                return total;
            }
            let mut iter = vec![0; self.adj.len()];
            loop {
                let f = self.augment(s, t, f64::INFINITY, &level, &mut iter, eps);
                if f <= eps {
                    break;
                }
                total += f;
            }
        }
    }

    fn reachable(&self, s: usize, eps: f64) -> Vec<bool> {
        self.levels(s, eps).into_iter().map(|l| l >= 0).collect()
    }
}
