//! Hidden-concept similarity export with clustered row and column order.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use kodama::{linkage, Method};

use crate::error::{io_err, Result};
use crate::model::ForwardTrace;

/// Leaf order of an average-linkage dendrogram over Euclidean distances
/// between `rows`. Deterministic for a given input.
pub fn cluster_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let n = rows.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
            condensed.push(d.sqrt());
        }
    }
    let dendrogram = linkage(&mut condensed, n, Method::Average);
    let steps = dendrogram.steps();
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + steps.len() - 1];
    while let Some(c) = stack.pop() {
        if c < n {
            order.push(c);
        } else {
            let s = &steps[c - n];
            stack.push(s.cluster2);
            stack.push(s.cluster1);
        }
    }
    order
}

/// Similarities of every stock to every surviving hidden concept, plus the
/// discovered edges with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenExport {
    pub date: NaiveDate,
    pub stocks: Vec<String>,
    /// Named after the seeding stock.
    pub concepts: Vec<String>,
    /// `stocks x concepts`.
    pub matrix: Vec<Vec<f64>>,
    /// `(stock, concept, weight)`.
    pub edges: Vec<(String, String, f64)>,
}

pub fn concept_name(stock: &str) -> String {
    format!("H_{stock}")
}

impl HiddenExport {
    /// `None` when the hidden module did not run on this pass. `names` maps
    /// batch positions to stock ids.
    pub fn from_trace<T: hist_autodiff::Element>(
        date: NaiveDate,
        trace: &ForwardTrace<T>,
        names: &[String],
    ) -> Option<Self> {
        let (gamma, hidden) = (trace.gamma.as_ref()?, trace.hidden.as_ref()?);
        let n = names.len();
        let g = gamma.to_f64_vec();
        let matrix = (0..n).map(|i| hidden.concepts.iter().map(|&k| g[k * n + i]).collect()).collect();
        let edges = hidden
            .edges
            .iter()
            .map(|&(i, k)| (names[i].clone(), concept_name(&names[k]), g[k * n + i]))
            .collect();
        Some(Self {
            date,
            stocks: names.to_vec(),
            concepts: hidden.concepts.iter().map(|&k| concept_name(&names[k])).collect(),
            matrix,
            edges,
        })
    }

    /// Reorder rows and columns by [`cluster_order`].
    pub fn clustered(&self) -> Self {
        let rows = cluster_order(&self.matrix);
        let columns: Vec<Vec<f64>> =
            (0..self.concepts.len()).map(|c| self.matrix.iter().map(|r| r[c]).collect()).collect();
        let cols = cluster_order(&columns);
        Self {
            date: self.date,
            stocks: rows.iter().map(|&r| self.stocks[r].clone()).collect(),
            concepts: cols.iter().map(|&c| self.concepts[c].clone()).collect(),
            matrix: rows.iter().map(|&r| cols.iter().map(|&c| self.matrix[r][c]).collect()).collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn write_matrix(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("stock");
        for c in &self.concepts {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (s, row) in self.stocks.iter().zip(&self.matrix) {
            out.push_str(s);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(io_err(path))
    }

    pub fn write_edges(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        let mut out = String::from("date,stock,hidden_concept,weight\n");
        for (s, c, w) in &self.edges {
            out.push_str(&format!("{},{s},{c},{w}\n", self.date));
        }
        f.write_all(out.as_bytes()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_end_up_contiguous() {
        // rows 0, 2, 4 near one point and 1, 3 near another
        let rows = vec![
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![0.1, 0.0],
            vec![5.1, 4.9],
            vec![0.05, 0.05],
        ];
        let order = cluster_order(&rows);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let block: Vec<bool> = order.iter().map(|&i| i % 2 == 0).collect();
        let switches = block.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1);
    }

    #[test]
    fn tiny_inputs_keep_their_order() {
        assert_eq!(cluster_order(&[vec![1.0], vec![0.0]]), vec![0, 1]);
        assert!(cluster_order(&[]).is_empty());
    }
}
