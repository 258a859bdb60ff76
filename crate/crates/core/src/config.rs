//! Particle configurations on a finite window of Z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{DenseMap, Interval};

/// Occupancy of one site. A site holds at most one sleeping particle, so
/// sleeping is a tag of its own rather than a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SiteContent {
    #[default]
    Empty,
    Sleeping,
    /// `k >= 1` active particles.
    Active(u32),
}

impl SiteContent {
    /// `k` active particles, `Empty` when `k == 0`.
    pub fn active(k: u32) -> Self {
        if k == 0 {
            SiteContent::Empty
        } else {
            SiteContent::Active(k)
        }
    }

    /// Number of particles, sleeping or not.
    #[inline]
    pub fn count(self) -> u32 {
        match self {
            SiteContent::Empty => 0,
            SiteContent::Sleeping => 1,
            SiteContent::Active(k) => k,
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        matches!(self, SiteContent::Active(_))
    }

    #[inline]
    pub fn is_stable(self) -> bool {
        !self.is_active()
    }

    /// Content after one particle arrives; an arrival wakes a sleeper.
    #[inline]
    pub fn with_arrival(self) -> Self {
        match self {
            SiteContent::Empty => SiteContent::Active(1),
            SiteContent::Sleeping => SiteContent::Active(2),
            SiteContent::Active(k) => SiteContent::Active(k + 1),
        }
    }
}

/// Configuration on `window`, plus the number of particles killed so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Config {
    window: Interval,
    sites: Vec<SiteContent>,
    pub killed: u64,
}

impl Config {
    pub fn empty(window: Interval) -> Self {
        Config {
            window,
            sites: vec![SiteContent::Empty; window.len() as usize],
            killed: 0,
        }
    }

    /// All-active configuration with `counts[i]` particles at `start + i`.
    pub fn from_counts(window: Interval, start: i64, counts: &[u32]) -> Result<Self> {
        let mut config = Config::empty(window);
        for (i, &c) in counts.iter().enumerate() {
            let x = start + i as i64;
            if c > 0 {
                config.set(x, SiteContent::Active(c))?;
            }
        }
        Ok(config)
    }

    pub fn window(&self) -> Interval {
        self.window
    }

    #[inline]
    pub fn get(&self, x: i64) -> SiteContent {
        if self.window.contains(x) {
            self.sites[(x - self.window.lo) as usize]
        } else {
            SiteContent::Empty
        }
    }

    pub fn set(&mut self, x: i64, content: SiteContent) -> Result<()> {
        let i = self.index(x)?;
        self.sites[i] = content;
        Ok(())
    }

    #[inline]
    pub(crate) fn index(&self, x: i64) -> Result<usize> {
        if self.window.contains(x) {
            Ok((x - self.window.lo) as usize)
        } else {
            Err(Error::WindowOverflow {
                site: x,
                lo: self.window.lo,
                hi: self.window.hi,
            })
        }
    }

    pub fn sites_mut(&mut self) -> &mut [SiteContent] {
        &mut self.sites
    }

    pub fn sites(&self) -> &[SiteContent] {
        &self.sites
    }

    /// Particles present in the window (sleeping ones included).
    pub fn total_particles(&self) -> u64 {
        self.sites.iter().map(|s| s.count() as u64).sum()
    }

    pub fn particles_in(&self, region: Interval) -> u64 {
        region.iter().map(|x| self.get(x).count() as u64).sum()
    }

    /// Sites holding active particles, in increasing order.
    pub fn active_sites(&self) -> impl Iterator<Item = i64> + '_ {
        let lo = self.window.lo;
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_active())
            .map(move |(i, _)| lo + i as i64)
    }

    /// True iff no site of `region` holds an active particle.
    pub fn is_stable_in(&self, region: Interval) -> bool {
        region.iter().all(|x| self.get(x).is_stable())
    }

    pub fn is_empty_in(&self, region: Interval) -> bool {
        region.iter().all(|x| self.get(x) == SiteContent::Empty)
    }

    /// Copy of this configuration on a larger (or equal) window.
    pub fn rewindow(&self, window: Interval) -> Result<Self> {
        let mut out = Config::empty(window);
        out.killed = self.killed;
        for (i, &s) in self.sites.iter().enumerate() {
            if s != SiteContent::Empty {
                out.set(self.window.lo + i as i64, s)?;
            }
        }
        Ok(out)
    }

    /// Sitewise particle counts `self(x) <= other(x)`, on the union of windows.
    pub fn count_le(&self, other: &Config) -> bool {
        let lo = self.window.lo.min(other.window.lo);
        let hi = self.window.hi.max(other.window.hi);
        (lo..=hi).all(|x| self.get(x).count() <= other.get(x).count())
    }
}

/// Free-standing form of [`Config::is_stable_in`].
pub fn is_stable_in(config: &Config, region: Interval) -> bool {
    config.is_stable_in(region)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_zero_is_empty() {
        assert_eq!(SiteContent::active(0), SiteContent::Empty);
        assert_eq!(SiteContent::active(3), SiteContent::Active(3));
    }

    #[test]
    fn arrival_wakes_sleeper() {
        assert_eq!(SiteContent::Sleeping.with_arrival(), SiteContent::Active(2));
        assert_eq!(SiteContent::Empty.with_arrival(), SiteContent::Active(1));
    }

    #[test]
    fn stability_examples() {
        let w = Interval::new(-3, 3);
        let mut c = Config::empty(w);
        assert!(c.is_stable_in(w));
        c.set(1, SiteContent::Sleeping).unwrap();
        assert!(c.is_stable_in(w));
        c.set(-2, SiteContent::Active(1)).unwrap();
        assert!(!c.is_stable_in(w));
        assert!(c.is_stable_in(Interval::new(0, 3)));
        assert_eq!(c.total_particles(), 2);
    }

    #[test]
    fn set_outside_window_fails() {
        let mut c = Config::empty(Interval::new(0, 2));
        assert!(matches!(
            c.set(5, SiteContent::Sleeping),
            Err(Error::WindowOverflow { site: 5, .. })
        ));
    }
}

/// Per-site toppling counts.
#[derive(Debug, Clone, Default)]
pub struct Odometer {
    counts: DenseMap<u32>,
}

impl Odometer {
    pub fn new() -> Self {
        Odometer::default()
    }

    #[inline]
    pub fn get(&self, x: i64) -> u32 {
        self.counts.get(x)
    }

    #[inline]
    pub fn increment(&mut self, x: i64) {
        *self.counts.get_mut(x) += 1;
    }

    pub fn add(&mut self, x: i64, by: u32) {
        if by > 0 {
            *self.counts.get_mut(x) += by;
        }
    }

    /// Sites with a nonzero count, in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, u32)> + '_ {
        self.counts.nonzero()
    }

    pub fn total(&self) -> u64 {
        self.iter().map(|(_, c)| c as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.iter().next().is_none()
    }

    /// Pointwise `self <= other`.
    pub fn le(&self, other: &Odometer) -> bool {
        self.iter().all(|(x, c)| c <= other.get(x))
    }

    /// Copy keeping only the sites of `region`.
    pub fn restricted(&self, region: Interval) -> Odometer {
        let mut out = Odometer::new();
        for (x, c) in self.iter().filter(|(x, _)| region.contains(*x)) {
            out.add(x, c);
        }
        out
    }

    pub fn to_vec(&self, region: Interval) -> Vec<u32> {
        region.iter().map(|x| self.get(x)).collect()
    }
}

impl PartialEq for Odometer {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Eq for Odometer {}
