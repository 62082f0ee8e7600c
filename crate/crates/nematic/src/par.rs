//! Rayon-backed executor.

use nematic_core::exec::Exec;
use rayon::prelude::*;

/// Runs the core loops on a dedicated rayon pool.
#[derive(Debug)]
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `threads = 0` lets rayon pick the number of threads.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Rayon { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Exec for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    fn chunks_mut<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        self.pool.install(|| data.par_chunks_mut(chunk.max(1)).enumerate().for_each(|(i, c)| f(i, c)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nematic_core::exec::{ordered_sum, Sequential};

    #[test]
    fn matches_sequential_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let par = Rayon::new(4).unwrap().map(10_000, f);
        let seq = Sequential.map(10_000, f);
        assert_eq!(par, seq);
        assert_eq!(ordered_sum(&par).to_bits(), ordered_sum(&seq).to_bits());
        let mut data = vec![0usize; 1000];
        Rayon::new(3).unwrap().chunks_mut(&mut data, 64, |c, s| s.iter_mut().for_each(|x| *x = c));
        assert_eq!(data[999], 999 / 64);
    }
}
