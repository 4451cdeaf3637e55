//! Per-dimension standardization stored as non-trainable buffers, so it
//! travels with the checkpoint.

use rawvox_nn::{ParamId, ParamStore, Real, Tensor};

/// Compression applied to magnitudes before standardization.
pub fn mag_transform(m: f32) -> f32 {
    m.ln_1p()
}

#[derive(Clone, Debug)]
pub struct Scaler {
    mean: ParamId,
    std: ParamId,
    dim: usize,
}

impl Scaler {
    pub const STD_FLOOR: f64 = 1e-3;

    /// Registers an identity scaler (`mean = 0`, `std = 1`).
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let mean = store.add(format!("{name}.mean"), Tensor::zeros(&[dim]), false);
        let std = store.add(format!("{name}.std"), Tensor::full(&[dim], T::one()), false);
        Self { mean, std, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fits mean and population std over `rows` (each `dim` wide).
    pub fn fit<'a, T: Real>(&self, store: &mut ParamStore<T>, rows: impl IntoIterator<Item = &'a [f32]>) {
        let mut sum = vec![0.0f64; self.dim];
        let mut sq = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for r in rows {
            assert_eq!(r.len(), self.dim, "scaler row width");
            for (i, &v) in r.iter().enumerate() {
                sum[i] += v as f64;
                sq[i] += (v as f64) * (v as f64);
            }
            n += 1;
        }
        if n == 0 {
            return;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(Self::STD_FLOOR)).collect();
        store.get_mut(self.mean).data_mut().iter_mut().zip(&mean).for_each(|(d, &m)| *d = T::lit(m));
        store.get_mut(self.std).data_mut().iter_mut().zip(&std).for_each(|(d, &s)| *d = T::lit(s));
    }

    /// Copies fitted statistics from a scaler in another store.
    pub fn copy_from<T: Real>(&self, store: &mut ParamStore<T>, other: &Scaler, other_store: &ParamStore<T>) {
        assert_eq!(self.dim, other.dim, "scaler width");
        *store.get_mut(self.mean) = other_store.get(other.mean).clone();
        *store.get_mut(self.std) = other_store.get(other.std).clone();
    }

    pub fn mean<'a, T: Real>(&self, store: &'a ParamStore<T>) -> &'a [T] {
        store.get(self.mean).data()
    }

    pub fn std<'a, T: Real>(&self, store: &'a ParamStore<T>) -> &'a [T] {
        store.get(self.std).data()
    }

    pub fn normalize<T: Real>(&self, store: &ParamStore<T>, data: &[f32]) -> Vec<T> {
        let (m, s) = (self.mean(store), self.std(store));
        data.iter().enumerate().map(|(i, &v)| (T::lit(v as f64) - m[i % self.dim]) / s[i % self.dim]).collect()
    }

    pub fn denormalize<T: Real>(&self, store: &ParamStore<T>, data: &[T]) -> Vec<f32> {
        let (m, s) = (self.mean(store), self.std(store));
        data.iter().enumerate().map(|(i, &v)| (v * s[i % self.dim] + m[i % self.dim]).as_f64() as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_normalize_denormalize() {
        let mut store = ParamStore::<f64>::new();
        let s = Scaler::new(&mut store, "x", 2);
        let rows = [[1.0f32, 10.0], [3.0, 10.0]];
        s.fit(&mut store, rows.iter().map(|r| r.as_slice()));
        assert_eq!(s.mean(&store), &[2.0, 10.0]);
        assert_eq!(s.std(&store), &[1.0, Scaler::STD_FLOOR]);
        let n = s.normalize(&store, &[3.0, 10.0, 1.0, 10.0]);
        assert_eq!(n, vec![1.0, 0.0, -1.0, 0.0]);
        assert_eq!(s.denormalize(&store, &n), vec![3.0, 10.0, 1.0, 10.0]);
        assert_eq!(store.num_trainable(), 0);
    }
}
