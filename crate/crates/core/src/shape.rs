//! Mixed-radix indexing for joint input and output tuples.
//!
//! Every dense table in this crate is addressed by a joint index: party 0 is
//! the most significant digit and the last party varies fastest. `Shape`
//! owns the per-party radices and converts between flat indices and digit
//! tuples.

/// Sizes of each party's label set, with flat-index helpers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    sizes: Vec<usize>,
}

impl Shape {
    /// Builds a shape from per-party set sizes. Every size must be nonzero.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(
            sizes.iter().all(|&s| s > 0),
            "shape sizes must be nonzero, got {sizes:?}"
        );
        Shape { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn parties(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, party: usize) -> usize {
        self.sizes[party]
    }

    /// Total number of joint tuples. Panics on overflow rather than wrapping.
    pub fn len(&self) -> usize {
        self.sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .expect("joint index space overflows usize")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens a digit tuple; digits must be in range.
    pub fn flatten(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.sizes.len());
        let mut flat = 0usize;
        for (d, &s) in digits.iter().zip(&self.sizes) {
            debug_assert!(*d < s);
            flat = flat * s + d;
        }
        flat
    }

    /// Writes the digit tuple of `flat` into `out`.
    pub fn unflatten_into(&self, flat: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.sizes.len());
        let mut rest = flat;
        for (slot, &s) in out.iter_mut().zip(&self.sizes).rev() {
            *slot = rest % s;
            rest /= s;
        }
        debug_assert_eq!(rest, 0, "flat index out of range");
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.sizes.len()];
        self.unflatten_into(flat, &mut out);
        out
    }

    /// Iterates all digit tuples in flat-index order, reusing one buffer.
    pub fn for_each(&self, mut f: impl FnMut(usize, &[usize])) {
        let total = self.len();
        let mut digits = vec![0usize; self.sizes.len()];
        for flat in 0..total {
            f(flat, &digits);
            // Odometer increment, last digit fastest.
            for pos in (0..digits.len()).rev() {
                digits[pos] += 1;
                if digits[pos] < self.sizes[pos] {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_is_party_major() {
        let shape = Shape::new(vec![2, 3]);
        assert_eq!(shape.len(), 6);
        assert_eq!(shape.flatten(&[0, 0]), 0);
        assert_eq!(shape.flatten(&[0, 2]), 2);
        assert_eq!(shape.flatten(&[1, 0]), 3);
        assert_eq!(shape.flatten(&[1, 2]), 5);
    }

    #[test]
    fn unflatten_round_trips() {
        let shape = Shape::new(vec![3, 2, 4]);
        for flat in 0..shape.len() {
            assert_eq!(shape.flatten(&shape.unflatten(flat)), flat);
        }
    }

    #[test]
    fn for_each_visits_in_flat_order() {
        let shape = Shape::new(vec![2, 2]);
        let mut seen = Vec::new();
        shape.for_each(|flat, digits| seen.push((flat, digits.to_vec())));
        assert_eq!(
            seen,
            vec![
                (0, vec![0, 0]),
                (1, vec![0, 1]),
                (2, vec![1, 0]),
                (3, vec![1, 1]),
            ]
        );
    }

    #[test]
    #[should_panic]
    fn zero_size_rejected() {
        Shape::new(vec![2, 0]);
    }
}
