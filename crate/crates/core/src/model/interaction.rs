use std::collections::HashMap;

use crate::ndgrad::{Scalar, Tensor};
use crate::textpipe::{IdfTable, TermSequence};

/// Query-by-passage exact-match matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl InteractionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            [self.rows, self.cols],
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("capacities are at least 1")
    }
}

/// Entry `(i, j)` is the IDF of query term `i` when it equals passage term
/// `j` as a string, 1 instead of the IDF when `idf_weighting` is off, and 0
/// otherwise. Padding positions never match.
pub fn build_interaction_matrix(
    q: &TermSequence,
    d: &TermSequence,
    idf: &IdfTable,
    idf_weighting: bool,
) -> InteractionMatrix {
    let (rows, cols) = (q.capacity(), d.capacity());
    let mut data = vec![0.0; rows * cols];
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in d.tokens().iter().enumerate() {
        positions.entry(t.as_str()).or_default().push(j);
    }
    for (i, t) in q.tokens().iter().enumerate() {
        let Some(js) = positions.get(t.as_str()) else {
            continue;
        };
        let w = if idf_weighting { idf.idf(t) } else { 1.0 };
        for &j in js {
            data[i * cols + j] = w;
        }
    }
    InteractionMatrix { rows, cols, data }
}
