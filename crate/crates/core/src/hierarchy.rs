//! Enumeration of hierarchy multi-indices with O(1) neighbour lookup.

use std::collections::HashMap;

use crate::{Error, Result};

pub const ABSENT: u32 = u32::MAX;

/// Default ceiling on the number of indices a space may hold.
pub const DEFAULT_LIMIT: usize = 5_000_000;

/// Mode layout for the two-axis ring bath: `mode = axis * (K + 1) + k`, with
/// axis 0 = x, 1 = y and `k = 0` the Drude pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeLayout {
    pub k_terms: usize,
    pub axes: usize,
}

impl ModeLayout {
    pub fn n_modes(&self) -> usize {
        self.axes * (self.k_terms + 1)
    }

    pub fn mode(&self, axis: usize, k: usize) -> usize {
        axis * (self.k_terms + 1) + k
    }

    pub fn split(&self, mode: usize) -> (usize, usize) {
        (mode / (self.k_terms + 1), mode % (self.k_terms + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyIndex<'a> {
    pub counts: &'a [u8],
}

impl HierarchyIndex<'_> {
    pub fn level(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }
}

#[derive(Debug, Clone)]
pub struct HierarchySpace {
    pub n_modes: usize,
    pub n_trunc: usize,
    counts: Vec<u8>,
    levels: Vec<u8>,
    raise: Vec<u32>,
    lower: Vec<u32>,
    lookup: HashMap<Vec<u8>, u32>,
}

pub fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Ring hierarchy with `2 (K + 1)` modes.
pub fn enumerate_hierarchy(k_terms: usize, n_trunc: usize) -> Result<HierarchySpace> {
    HierarchySpace::new(2 * (k_terms + 1), n_trunc, DEFAULT_LIMIT)
}

impl HierarchySpace {
    pub fn new(n_modes: usize, n_trunc: usize, limit: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument(
                "hierarchy needs at least one mode".into(),
            ));
        }
        if n_trunc > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "truncation {n_trunc} above 255"
            )));
        }
        let count = binomial((n_modes + n_trunc) as u64, n_trunc as u64);
        if count > limit as u128 || count >= ABSENT as u128 {
            return Err(Error::Capacity { count, limit });
        }
        let count = count as usize;
        let mut counts = Vec::with_capacity(count * n_modes);
        let mut levels = Vec::with_capacity(count);
        let mut cur = vec![0u8; n_modes];
        for level in 0..=n_trunc {
            compositions(level, 0, &mut cur, &mut |c| {
                counts.extend_from_slice(c);
                levels.push(level as u8);
            });
        }
        debug_assert_eq!(levels.len(), count);
        let lookup: HashMap<Vec<u8>, u32> = (0..count)
            .map(|i| (counts[i * n_modes..(i + 1) * n_modes].to_vec(), i as u32))
            .collect();
        let mut raise = vec![ABSENT; count * n_modes];
        let mut lower = vec![ABSENT; count * n_modes];
        let mut key = vec![0u8; n_modes];
        for i in 0..count {
            key.copy_from_slice(&counts[i * n_modes..(i + 1) * n_modes]);
            if (levels[i] as usize) < n_trunc {
                for m in 0..n_modes {
                    key[m] += 1;
                    let j = lookup[&key];
                    key[m] -= 1;
                    raise[i * n_modes + m] = j;
                    lower[j as usize * n_modes + m] = i as u32;
                }
            }
        }
        Ok(Self {
            n_modes,
            n_trunc,
            counts,
            levels,
            raise,
            lower,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index(&self, i: usize) -> HierarchyIndex<'_> {
        HierarchyIndex {
            counts: &self.counts[i * self.n_modes..(i + 1) * self.n_modes],
        }
    }

    pub fn counts(&self, i: usize) -> &[u8] {
        &self.counts[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn level(&self, i: usize) -> usize {
        self.levels[i] as usize
    }

    pub fn position(&self, counts: &[u8]) -> Option<usize> {
        self.lookup.get(counts).map(|&i| i as usize)
    }

    /// Position of `n + e_mode`, if within truncation.
    pub fn raise(&self, i: usize, mode: usize) -> Option<usize> {
        let j = self.raise[i * self.n_modes + mode];
        (j != ABSENT).then_some(j as usize)
    }

    /// Position of `n - e_mode`, if that count is positive.
    pub fn lower(&self, i: usize, mode: usize) -> Option<usize> {
        let j = self.lower[i * self.n_modes + mode];
        (j != ABSENT).then_some(j as usize)
    }

    /// `sum_m counts[m] * rates[m]`.
    pub fn decay(&self, i: usize, rates: &[f64]) -> f64 {
        self.counts(i)
            .iter()
            .zip(rates)
            .map(|(&c, r)| c as f64 * r)
            .sum()
    }
}

fn compositions(remaining: usize, slot: usize, cur: &mut [u8], emit: &mut impl FnMut(&[u8])) {
    if slot + 1 == cur.len() {
        cur[slot] = remaining as u8;
        emit(cur);
        cur[slot] = 0;
        return;
    }
    for c in (0..=remaining).rev() {
        cur[slot] = c as u8;
        compositions(remaining - c, slot + 1, cur, emit);
    }
    cur[slot] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        let h = enumerate_hierarchy(0, 1).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.counts(0), &[0, 0]);
        assert_eq!(enumerate_hierarchy(1, 2).unwrap().len(), 15);
        assert_eq!(enumerate_hierarchy(3, 0).unwrap().len(), 1);
    }

    #[test]
    fn neighbours_are_inverse() {
        let h = enumerate_hierarchy(1, 3).unwrap();
        for i in 0..h.len() {
            for m in 0..h.n_modes {
                if let Some(j) = h.raise(i, m) {
                    assert_eq!(h.lower(j, m), Some(i));
                    assert_eq!(h.level(j), h.level(i) + 1);
                } else {
                    assert_eq!(h.level(i), 3);
                }
                if let Some(j) = h.lower(i, m) {
                    assert_eq!(h.raise(j, m), Some(i));
                } else {
                    assert_eq!(h.counts(i)[m], 0);
                }
            }
        }
    }

    #[test]
    fn capacity_error() {
        match HierarchySpace::new(10, 8, 1000) {
            Err(Error::Capacity { count, .. }) => assert_eq!(count, 43758),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layout_roundtrip() {
        let l = ModeLayout {
            k_terms: 4,
            axes: 2,
        };
        assert_eq!(l.n_modes(), 10);
        for m in 0..10 {
            let (a, k) = l.split(m);
            assert_eq!(l.mode(a, k), m);
        }
    }
}
