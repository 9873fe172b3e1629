//! Fixed-width binary feature vectors.
//!
//! A [`Pattern`] is any subset of the vocabulary. Logged queries use the same
//! type: a query is simply the pattern of features it mentions.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{LogrError, Result};

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    width: usize,
    words: Vec<u64>,
}

impl Pattern {
    pub fn empty(width: usize) -> Self {
        Pattern {
            width,
            words: vec![0; width.div_ceil(WORD)],
        }
    }

    pub fn full(width: usize) -> Self {
        let mut p = Self::empty(width);
        for i in 0..width {
            p.set(i);
        }
        p
    }

    /// Builds a pattern from the ids of its set features.
    ///
    /// Panics if an id is out of range.
    pub fn from_ids<I: IntoIterator<Item = usize>>(width: usize, ids: I) -> Self {
        let mut p = Self::empty(width);
        for id in ids {
            p.set(id);
        }
        p
    }

    pub fn try_from_ids<I: IntoIterator<Item = usize>>(width: usize, ids: I) -> Result<Self> {
        let mut p = Self::empty(width);
        for id in ids {
            if id >= width {
                return Err(LogrError::InvalidArgument(format!(
                    "feature id {id} out of range for width {width}"
                )));
            }
            p.set(id);
        }
        Ok(p)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self::from_ids(
            bits.len(),
            bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i),
        )
    }

    /// Low `width` bits of `mask`, bit i = feature i. Requires `width <= 64`.
    pub fn from_mask(width: usize, mask: u64) -> Self {
        assert!(width <= WORD, "mask patterns are limited to 64 features");
        let mut p = Self::empty(width);
        if width > 0 {
            let keep = if width == WORD {
                u64::MAX
            } else {
                (1u64 << width) - 1
            };
            p.words[0] = mask & keep;
        }
        p
    }

    /// Inverse of [`Pattern::from_mask`]; `None` when wider than 64.
    pub fn to_mask(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.width, "feature {i} out of range {}", self.width);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    pub fn clear(&mut self, i: usize) {
        assert!(i < self.width, "feature {i} out of range {}", self.width);
        self.words[i / WORD] &= !(1 << (i % WORD));
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.width && self.words[i / WORD] & (1 << (i % WORD)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Ids of set features, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    pub fn ids(&self) -> Vec<usize> {
        self.ones().collect()
    }

    fn check_width(&self, other: &Pattern) -> Result<()> {
        if self.width != other.width {
            return Err(LogrError::WidthMismatch {
                expected: self.width,
                actual: other.width,
            });
        }
        Ok(())
    }

    /// True iff every feature of `b` is present in `self` (`self ⊇ b`).
    pub fn contains(&self, b: &Pattern) -> Result<bool> {
        self.check_width(b)?;
        Ok(self.contains_unchecked(b))
    }

    pub(crate) fn contains_unchecked(&self, b: &Pattern) -> bool {
        self.words
            .iter()
            .zip(&b.words)
            .all(|(q, b)| q & b == *b)
    }

    pub fn union(&self, other: &Pattern) -> Result<Pattern> {
        self.check_width(other)?;
        Ok(Pattern {
            width: self.width,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a | b)
                .collect(),
        })
    }

    pub fn hamming(&self, other: &Pattern) -> Result<usize> {
        self.check_width(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }
}

impl Ord for Pattern {
    /// Width first, then lexicographic on the ascending id lists.
    fn cmp(&self, other: &Self) -> Ordering {
        self.width
            .cmp(&other.width)
            .then_with(|| self.ones().cmp(other.ones()))
    }
}

impl PartialOrd for Pattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for i in 0..self.width {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        write!(f, ")")
    }
}
