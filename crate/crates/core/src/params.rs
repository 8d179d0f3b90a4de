//! Uniform access to the named parameter blocks of a model.
//!
//! Gradients share the type of the parameters they belong to, so every
//! optimizer and checker operation works through this trait.

pub trait Params {
    /// Visit every block in the canonical (checkpoint) order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, d| n += d.len());
        n
    }

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, d| flat.extend_from_slice(d));
        flat
    }

    /// Overwrite every entry from `flat`, which must hold `num_params()` values.
    fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut at = 0;
        self.visit_mut(&mut |_, d| {
            let n = d.len();
            d.copy_from_slice(&flat[at..at + n]);
            at += n;
        });
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x = value));
    }

    fn scale(&mut self, alpha: f64) {
        self.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x *= alpha));
    }

    /// `self += alpha · other`; both must have the same layout.
    fn axpy(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.to_flat();
        assert_eq!(src.len(), self.num_params(), "parameter layout differs");
        let mut at = 0;
        self.visit_mut(&mut |_, d| {
            let n = d.len();
            for (x, s) in d.iter_mut().zip(&src[at..at + n]) {
                *x += alpha * s;
            }
            at += n;
        });
    }

    fn sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, d| s += d.iter().map(|x| x * x).sum::<f64>());
        s
    }

    /// Name of the first block holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        let mut hit = None;
        self.visit(&mut |name, d| {
            if hit.is_none() && d.iter().any(|x| !x.is_finite()) {
                hit = Some(name.to_string());
            }
        });
        hit
    }
}

/// Forward `visit` to a sub-block set with `prefix.` prepended to each name.
pub(crate) fn visit_prefixed<P: Params + ?Sized>(
    p: &P,
    prefix: &str,
    f: &mut dyn FnMut(&str, &[f64]),
) {
    p.visit(&mut |name, d| f(&format!("{prefix}.{name}"), d));
}

pub(crate) fn visit_prefixed_mut<P: Params + ?Sized>(
    p: &mut P,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    p.visit_mut(&mut |name, d| f(&format!("{prefix}.{name}"), d));
}
