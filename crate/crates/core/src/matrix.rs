/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match its shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.cols, data)
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance accumulated in `sq_dist` order, or `None` once the
/// running sum exceeds `bound`. Partial sums of non-negative terms never
/// decrease, so abandoning cannot drop a row that would have qualified.
fn sq_dist_within(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(16).zip(b.chunks(16)) {
        for (x, y) in ca.iter().zip(cb) {
            acc += (x - y) * (x - y);
        }
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

/// Indices of the `k` rows of `m` nearest to `query` (excluding `skip`),
/// ordered by distance then index.
pub fn nearest_rows(m: &Matrix, candidates: &[usize], query: &[f64], skip: Option<usize>, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    // sorted best-so-far, at most k long
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &c in candidates {
        if Some(c) == skip {
            continue;
        }
        let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
        let Some(d) = sq_dist_within(m.row(c), query, bound) else { continue };
        let item = (d, c);
        if best.len() == k && cmp(&item, &best[k - 1]).is_ge() {
            continue;
        }
        let pos = best.partition_point(|e| cmp(e, &item).is_lt());
        best.insert(pos, item);
        best.truncate(k);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_rows_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let (n, d) = (rng.gen_range(1..40), rng.gen_range(1..40));
            // coarse grid values force distance ties
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| f64::from(rng.gen_range(0..3u8))).collect()).collect();
            let m = Matrix::from_rows(&rows);
            let cand: Vec<usize> = (0..n).rev().collect();
            let q = rng.gen_range(0..n);
            let k = rng.gen_range(0..n + 2);
            let mut all: Vec<(f64, usize)> = cand.iter().filter(|&&c| c != q).map(|&c| (sq_dist(m.row(c), m.row(q)), c)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.into_iter().take(k).map(|x| x.1).collect();
            assert_eq!(nearest_rows(&m, &cand, m.row(q), Some(q), k), want, "trial {trial}");
        }
    }
}
