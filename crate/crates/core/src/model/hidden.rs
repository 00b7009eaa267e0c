use std::cmp::Ordering;

/// Discrete hidden-concept structure of one date. Hidden concept `k` is
/// seeded by the stock at batch position `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenGraph {
    /// Most similar other concept of each stock.
    pub targets: Vec<usize>,
    /// Surviving concepts as seed positions, ascending by stable key.
    pub concepts: Vec<usize>,
    /// `(stock position, concept seed position)`, sorted by the stable keys of
    /// both ends.
    pub edges: Vec<(usize, usize)>,
}

impl HiddenGraph {
    /// `concepts.len() x n` 0/1 membership matrix, rows in `concepts` order.
    pub fn mask(&self, n: usize) -> Vec<f64> {
        let mut slot = vec![usize::MAX; n];
        for (s, &k) in self.concepts.iter().enumerate() {
            slot[k] = s;
        }
        let mut m = vec![0.0; self.concepts.len() * n];
        for &(i, k) in &self.edges {
            m[slot[k] * n + i] = 1.0;
        }
        m
    }

    pub fn degree(&self, stock: usize) -> usize {
        self.edges.iter().filter(|&&(i, _)| i == stock).count()
    }
}

/// Build the hidden-concept graph from `gamma`, row-major `n x n` with
/// `gamma[k * n + i]` the similarity of stock `i` to concept `k`.
///
/// Each stock links to its most similar concept other than its own, ties to
/// the smallest key. Concepts nobody links to are dropped. Each stock whose
/// own concept survived also links to it. Requires `n >= 2`.
pub fn discover_hidden_edges(gamma: &[f64], keys: &[usize]) -> HiddenGraph {
    let n = keys.len();
    assert!(n >= 2, "hidden concepts need at least two stocks");
    assert_eq!(gamma.len(), n * n);
    let targets: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i)
                // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
                .max_by(|&a, &b| match (gamma[a * n + i] + 0.0).total_cmp(&(gamma[b * n + i] + 0.0)) {
                    Ordering::Equal => keys[b].cmp(&keys[a]),
                    o => o,
                })
                .expect("n >= 2")
        })
        .collect();
    let mut alive = vec![false; n];
    for &k in &targets {
        alive[k] = true;
    }
    let mut concepts: Vec<usize> = (0..n).filter(|&k| alive[k]).collect();
    concepts.sort_by_key(|&k| keys[k]);
    let mut edges: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, &k)| (i, k)).collect();
    edges.extend((0..n).filter(|&i| alive[i]).map(|i| (i, i)));
    edges.sort_by_key(|&(i, k)| (keys[i], keys[k]));
    HiddenGraph { targets, concepts, edges }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Similarity table whose argmaxes are H2, H1, H2 for stocks 1, 2, 3.
    fn three_stock_gamma() -> Vec<f64> {
        // rows = concepts, columns = stocks
        vec![
            1.0, 0.9, 0.2, //
            0.8, 1.0, 0.7, //
            0.1, 0.3, 1.0,
        ]
    }

    #[test]
    fn unlinked_concept_is_deleted() {
        let h = discover_hidden_edges(&three_stock_gamma(), &[0, 1, 2]);
        assert_eq!(h.targets, vec![1, 0, 1]);
        assert_eq!(h.concepts, vec![0, 1]);
        assert_eq!(h.edges, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 1)]);
        assert_eq!(h.degree(2), 1);
    }

    #[test]
    fn ties_go_to_the_smallest_key_not_position() {
        let gamma = vec![
            1.0, 0.5, 0.5, //
            0.5, 1.0, 0.5, //
            0.5, 0.5, 1.0,
        ];
        let h = discover_hidden_edges(&gamma, &[10, 30, 20]);
        // stock key 10 picks key 20 (position 2); the others pick key 10.
        assert_eq!(h.targets, vec![2, 0, 0]);
        assert_eq!(h.concepts, vec![0, 2]);
    }

    #[test]
    fn identical_pair_links_both_ways() {
        let h = discover_hidden_edges(&[1.0, 1.0, 1.0, 1.0], &[0, 1]);
        assert_eq!(h.concepts, vec![0, 1]);
        assert_eq!(h.edges, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(h.mask(2), vec![1.0; 4]);
    }
}
