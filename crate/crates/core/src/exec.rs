//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper maps an index range to independent outputs; results are
//! collected in index order so the output is identical for any worker count.

/// Execution policy for the inner loops of table construction and scaling sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Evaluates `f` on `0..n` and returns the outputs in index order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fills `out[k] = f(k)` for every slot.
pub fn fill<T, F>(exec: Exec, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && out.len() > 1 {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(k, slot)| *slot = f(k));
        return;
    }
    let _ = exec;
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = f(k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let f = |k: usize| (k as f64).sqrt().sin();
        let a = map_range(Exec::Sequential, 1000, f);
        let b = map_range(Exec::Parallel, 1000, f);
        assert_eq!(a, b);
        let mut c = vec![0.0; 1000];
        fill(Exec::Parallel, &mut c, f);
        assert_eq!(a, c);
    }
}
