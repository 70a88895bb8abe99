use super::SparseMat;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Minimum-degree fill-reducing ordering of the graph of `A + Aᵀ`.
///
/// Returns `perm` with `perm[k]` the original index eliminated at step `k`.
/// Elimination is simulated on an explicit quotient-free graph; ties are broken
/// by the smaller vertex index so the result is deterministic.
pub fn minimum_degree(a: &SparseMat) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] ← (adj[u] ∪ nbrs) \ {u, v}
            merged.clear();
            let old = &adj[u];
            let (mut p, mut q) = (0, 0);
            while p < old.len() || q < nbrs.len() {
                let next = if q == nbrs.len() || (p < old.len() && old[p] < nbrs[q]) {
                    p += 1;
                    old[p - 1]
                } else if p == old.len() || nbrs[q] < old[p] {
                    q += 1;
                    nbrs[q - 1]
                } else {
                    p += 1;
                    q += 1;
                    old[p - 1]
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    perm
}

/// Inverse of a permutation.
pub(crate) fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}
