/// A collection of trainable scalars exposed as an ordered list of slices.
///
/// The order is fixed per type and is shared by the optimizer state, the
/// finite-difference oracle and the snapshot format. Two values with the same
/// structure yield slices of identical lengths in identical order.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;

    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Number of scalars actually allocated.
    fn scalar_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Copy of every scalar in slice order.
    fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += other`, slice by slice. Panics on structural mismatch.
    fn add_assign_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.slices();
        let dst = self.slices_mut();
        assert_eq!(src.len(), dst.len(), "parameter structure mismatch");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.len(), s.len(), "parameter structure mismatch");
            d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, 1e-8)` between two
/// structurally identical parameter sets, with the flat index where it occurs.
pub fn max_relative_error<P: ParamSet>(a: &P, b: &P) -> (f64, usize) {
    let (fa, fb) = (a.flatten(), b.flatten());
    assert_eq!(fa.len(), fb.len(), "parameter structure mismatch");
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| relative_error(*x, *y))
        .enumerate()
        .fold(
            (0.0, 0),
            |best, (i, e)| if e > best.0 { (e, i) } else { best },
        )
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
