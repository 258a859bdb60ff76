use serde::{Deserialize, Serialize};

/// Closed integer interval `{lo, ..., hi}`. Empty when `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub const fn new(lo: i64, hi: i64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(x: i64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// The segment `V_n = (-n/2, n/2] ∩ Z`.
    pub fn segment(n: u64) -> Self {
        let n = n as i64;
        // floor(-n/2) + 1 ..= floor(n/2)
        Interval::new((-n).div_euclid(2) + 1, n.div_euclid(2))
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn len(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.hi - self.lo + 1) as u64
        }
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        !self.is_empty() && !other.is_empty() && self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn shift(&self, by: i64) -> Interval {
        Interval::new(self.lo + by, self.hi + by)
    }

    /// Widen by `left` sites on the left and `right` on the right.
    pub fn widen(&self, left: u64, right: u64) -> Interval {
        Interval::new(self.lo - left as i64, self.hi + right as i64)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = i64> {
        self.lo..=self.hi.max(self.lo - 1)
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Integer-indexed storage that grows on demand in both directions.
/// Reads outside the materialized range return `T::default()`.
#[derive(Debug, Clone, Default)]
pub struct DenseMap<T> {
    lo: i64,
    data: Vec<T>,
}

impl<T: Copy + Default + PartialEq> DenseMap<T> {
    pub fn new() -> Self {
        DenseMap { lo: 0, data: Vec::new() }
    }

    pub fn with_range(range: Interval) -> Self {
        DenseMap {
            lo: range.lo,
            data: vec![T::default(); range.len() as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: i64) -> T {
        let i = x.wrapping_sub(self.lo);
        if i >= 0 && (i as usize) < self.data.len() {
            self.data[i as usize]
        } else {
            T::default()
        }
    }

    #[inline]
    pub fn get_mut(&mut self, x: i64) -> &mut T {
        let i = x.wrapping_sub(self.lo);
        if i < 0 || i as usize >= self.data.len() {
            self.grow_to(x);
        }
        let i = (x - self.lo) as usize;
        &mut self.data[i]
    }

    fn grow_to(&mut self, x: i64) {
        if self.data.is_empty() {
            self.lo = x;
            self.data.push(T::default());
            return;
        }
        let hi = self.lo + self.data.len() as i64 - 1;
        if x < self.lo {
            let extra = ((self.lo - x) as usize).max(self.data.len());
            let mut data = vec![T::default(); extra];
            data.extend_from_slice(&self.data);
            self.data = data;
            self.lo -= extra as i64;
        } else if x > hi {
            let extra = ((x - hi) as usize).max(self.data.len());
            self.data.resize(self.data.len() + extra, T::default());
        }
    }

    /// Materialized sites with a non-default value, in increasing order.
    pub fn nonzero(&self) -> impl Iterator<Item = (i64, T)> + '_ {
        let d = T::default();
        self.data
            .iter()
            .enumerate()
            .filter(move |(_, v)| **v != d)
            .map(move |(i, v)| (self.lo + i as i64, *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_matches_half_open_definition() {
        assert_eq!(Interval::segment(1), Interval::new(0, 0));
        assert_eq!(Interval::segment(4), Interval::new(-1, 2));
        assert_eq!(Interval::segment(5), Interval::new(-2, 2));
        for n in 1..40u64 {
            let v = Interval::segment(n);
            assert_eq!(v.len(), n);
            // (-n/2, n/2]
            assert!((v.lo as f64) > -(n as f64) / 2.0);
            assert!((v.lo as f64 - 1.0) <= -(n as f64) / 2.0);
            assert!((v.hi as f64) <= n as f64 / 2.0);
            assert!(v.contains(0));
        }
    }

    #[test]
    fn dense_map_grows_both_ways() {
        let mut m: DenseMap<u32> = DenseMap::new();
        *m.get_mut(5) += 1;
        *m.get_mut(-3) += 2;
        *m.get_mut(40) += 3;
        assert_eq!(m.get(5), 1);
        assert_eq!(m.get(-3), 2);
        assert_eq!(m.get(40), 3);
        assert_eq!(m.get(1000), 0);
        let nz: Vec<_> = m.nonzero().collect();
        assert_eq!(nz, vec![(-3, 2), (5, 1), (40, 3)]);
    }
}
