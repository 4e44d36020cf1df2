use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// k-nearest-neighbour regression under L1 feature distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    features: Array2<f64>,
    labels: Array2<f64>,
    k: usize,
}

pub const DEFAULT_K: usize = 7;

impl KnnModel {
    pub fn new(features: Array2<f64>, labels: Array2<f64>, k: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset("k-NN needs at least one training row".into()));
        }
        if labels.nrows() != features.nrows() {
            return Err(Error::shape(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.nrows()
            )));
        }
        if k == 0 || k > features.nrows() {
            return Err(Error::config(format!("k = {k} must lie in 1..={}", features.nrows())));
        }
        Ok(Self { features, labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Training rows of the `k` nearest neighbours, closest first; equal
    /// distances favour the lower row index.
    pub fn neighbours(&self, query: ArrayView1<f64>) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .features
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| (row.iter().zip(query).map(|(a, b)| (a - b).abs()).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict_one(&self, query: ArrayView1<f64>) -> Array1<f64> {
        let mut acc = Array1::zeros(self.labels.ncols());
        for i in self.neighbours(query) {
            acc += &self.labels.row(i);
        }
        acc / self.k as f64
    }

    /// Mean neighbour label for every query row (queries run in parallel).
    pub fn predict(&self, queries: ArrayView2<f64>) -> Result<Array2<f64>> {
        if queries.ncols() != self.features.ncols() {
            return Err(Error::shape(format!(
                "query width {} vs training width {}",
                queries.ncols(),
                self.features.ncols()
            )));
        }
        let rows: Vec<Array1<f64>> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| self.predict_one(queries.row(i)))
            .collect();
        let mut out = Array2::zeros((queries.nrows(), self.labels.ncols()));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&r);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use ndarray::{array, Axis};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    #[test]
    fn exact_match_with_k1() {
        let f = array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]];
        let l = array![[10.0, 0.0], [20.0, 0.0], [30.0, 0.0]];
        let m = KnnModel::new(f.clone(), l, 1).unwrap();
        assert_eq!(m.predict(f.slice(ndarray::s![1..2, ..])).unwrap(), array![[20.0, 0.0]]);
    }

    #[test]
    fn full_k_is_global_mean() {
        let f = array![[0.0], [1.0], [5.0], [9.0]];
        let l = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let m = KnnModel::new(f, l, 4).unwrap();
        assert_eq!(m.predict(array![[100.0]].view()).unwrap(), array![[4.0, 5.0]]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let f = array![[1.0], [-1.0], [1.0]];
        let l = array![[1.0], [2.0], [3.0]];
        let m = KnnModel::new(f, l, 2).unwrap();
        assert_eq!(m.neighbours(array![0.0].view()), vec![0, 1]);
    }

    #[test]
    fn invalid_k() {
        let f = array![[0.0]];
        assert!(KnnModel::new(f.clone(), array![[0.0]], 0).is_err());
        assert!(KnnModel::new(f, array![[0.0]], 2).is_err());
    }

    fn brute_force(f: &Array2<f64>, l: &Array2<f64>, q: ArrayView1<f64>, k: usize) -> Array1<f64> {
        let mut idx: Vec<usize> = (0..f.nrows()).collect();
        let dist = |i: usize| f.row(i).iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        idx.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(a.cmp(&b)));
        idx[..k].iter().fold(Array1::zeros(l.ncols()), |acc, &i| acc + &l.row(i)) / k as f64
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(seed in any::<u64>(), n in 1usize..100, k in 1usize..10) {
            let k = k.min(n);
            let mut r = Rng::seed_from_u64(seed);
            // coarse grid values produce plenty of distance ties
            let f = Array2::from_shape_fn((n, 3), |_| r.gen_range(0..4) as f64);
            let l = Array2::from_shape_fn((n, 2), |_| r.gen_range(-5.0..5.0));
            let q = Array2::from_shape_fn((5, 3), |_| r.gen_range(0..4) as f64);
            let m = KnnModel::new(f.clone(), l.clone(), k).unwrap();
            let p = m.predict(q.view()).unwrap();
            for (i, row) in q.axis_iter(Axis(0)).enumerate() {
                prop_assert_eq!(p.row(i).to_owned(), brute_force(&f, &l, row, k));
            }
        }

        #[test]
        fn row_permutation_does_not_change_predictions(seed in any::<u64>(), n in 8usize..60) {
            let mut r = Rng::seed_from_u64(seed);
            let f = Array2::from_shape_fn((n, 4), |_| r.gen_range(-1.0..1.0));
            let l = Array2::from_shape_fn((n, 2), |_| r.gen_range(-5.0..5.0));
            let q = Array2::from_shape_fn((6, 4), |_| r.gen_range(-1.0..1.0));
            let perm: Vec<usize> = (0..n).rev().collect();
            let a = KnnModel::new(f.clone(), l.clone(), 7).unwrap().predict(q.view()).unwrap();
            let b = KnnModel::new(f.select(Axis(0), &perm), l.select(Axis(0), &perm), 7)
                .unwrap()
                .predict(q.view())
                .unwrap();
            // continuous features: no ties, so neighbours and their summation
            // order are permutation-free
            prop_assert_eq!(a, b);
        }
    }
}
