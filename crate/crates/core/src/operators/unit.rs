use serde::{Deserialize, Serialize};

/// Feature vector of a data unit. Sparse indices are 0-based and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Dense(Vec<f64>),
    Sparse { indices: Vec<u32>, values: Vec<f64> },
}

impl Features {
    /// Highest index that carries a value plus one (the dimension this vector needs).
    pub fn min_dim(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Sparse { indices, .. } => indices.last().map_or(0, |&i| i as usize + 1),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Features::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            Features::Sparse { values, .. } => values.iter().filter(|x| **x != 0.0).count(),
        }
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Features::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
            Features::Sparse { indices, values } => indices.iter().zip(values).map(|(&i, v)| v * w[i as usize]).sum(),
        }
    }

    /// `acc += scale * x`
    #[inline]
    pub fn axpy(&self, scale: f64, acc: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self {
            Features::Dense(v) => {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += scale * x;
                }
            }
            Features::Sparse { indices, values } => {
                for (&i, x) in indices.iter().zip(values) {
                    acc[i as usize] += scale * x;
                }
            }
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.axpy(1.0, &mut out);
        out
    }
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataUnit {
    pub label: f64,
    pub features: Features,
}

impl DataUnit {
    pub fn dense(label: f64, x: Vec<f64>) -> Self {
        DataUnit {
            label,
            features: Features::Dense(x),
        }
    }

    pub fn sparse(label: f64, indices: Vec<u32>, values: Vec<f64>) -> Self {
        DataUnit {
            label,
            features: Features::Sparse { indices, values },
        }
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.features.dot(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_and_dense_agree() {
        let w = [0.5, -1.0, 2.0, 0.0];
        let s = DataUnit::sparse(1.0, vec![0, 2], vec![2.0, 3.0]);
        let d = DataUnit::dense(1.0, vec![2.0, 0.0, 3.0, 0.0]);
        assert_eq!(s.dot(&w), d.dot(&w));
        assert_eq!(s.features.to_dense(4), vec![2.0, 0.0, 3.0, 0.0]);
        assert_eq!(s.features.min_dim(), 3);
        assert_eq!(d.features.nnz(), 2);
    }
}
