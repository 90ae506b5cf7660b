use serde::{Deserialize, Serialize};

/// Tally of primitive floating-point operations recorded by the counting
/// kernels.
///
/// `flops()` is the arithmetic cost model (everything except comparisons);
/// `total()` additionally includes comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub multiplications: u64,
    pub additions: u64,
    pub divisions: u64,
    pub exponentiations: u64,
    pub square_roots: u64,
    pub comparisons: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flops(&self) -> u64 {
        self.multiplications
            + self.additions
            + self.divisions
            + self.exponentiations
            + self.square_roots
    }

    pub fn total(&self) -> u64 {
        self.flops() + self.comparisons
    }

    pub fn merge(&mut self, other: &OpCounter) {
        self.multiplications += other.multiplications;
        self.additions += other.additions;
        self.divisions += other.divisions;
        self.exponentiations += other.exponentiations;
        self.square_roots += other.square_roots;
        self.comparisons += other.comparisons;
    }
}

impl std::ops::Add for OpCounter {
    type Output = OpCounter;

    fn add(mut self, rhs: OpCounter) -> OpCounter {
        self.merge(&rhs);
        self
    }
}

impl std::iter::Sum for OpCounter {
    fn sum<I: Iterator<Item = OpCounter>>(iter: I) -> Self {
        iter.fold(OpCounter::default(), |a, b| a + b)
    }
}

/// Applies `f` to the counter when one is attached.
#[inline]
pub(crate) fn record(counter: &mut Option<&mut OpCounter>, f: impl FnOnce(&mut OpCounter)) {
    if let Some(c) = counter.as_deref_mut() {
        f(c);
    }
}
