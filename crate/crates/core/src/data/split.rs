use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown subset `{s}`"))),
        }
    }
}

/// `(train, val, test)` sizes: the first two are floors, test takes the rest.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<(usize, usize, usize)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!("split fractions {fractions:?} must lie in [0, 1]")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    // The epsilon absorbs products like 0.6·4940 landing just below an integer.
    let floor = |f: f64| num_traits::Float::floor(f * n as f64 + 1e-9) as usize;
    let train = floor(fractions[0]).min(n);
    let val = floor(fractions[1]).min(n - train);
    Ok((train, val, n - train - val))
}

/// Stems in lexicographic order with their subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    entries: Vec<(String, Split)>,
}

impl DatasetIndex {
    pub fn from_entries(mut entries: Vec<(String, Split)>) -> Result<Self> {
        entries.sort();
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Config(format!("stem `{}` listed twice", w[0].0)));
        }
        Ok(DatasetIndex { entries })
    }

    pub fn entries(&self) -> &[(String, Split)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subset(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |(_, s)| *s == split).map(|(stem, _)| stem.as_str())
    }

    pub fn split_of(&self, stem: &str) -> Option<Split> {
        self.entries.binary_search_by(|(s, _)| s.as_str().cmp(stem)).ok().map(|i| self.entries[i].1)
    }

    /// `(train, val, test)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |s| self.subset(s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// One `stem<TAB>subset` line per stem, sorted, LF endings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (stem, split) in &self.entries {
            out.push_str(stem);
            out.push('\t');
            out.push_str(split.name());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (stem, split) =
                line.split_once('\t').ok_or_else(|| Error::Config(format!("split file line {} has no tab", i + 1)))?;
            entries.push((stem.to_string(), split.parse()?));
        }
        Self::from_entries(entries)
    }
}

/// Seeded Fisher–Yates over the sorted stems, then contiguous train/val/test blocks.
pub fn split_dataset<S: AsRef<str>>(stems: &[S], fractions: [f64; 3], seed: u64) -> Result<DatasetIndex> {
    if stems.is_empty() {
        return Err(Error::Empty("stem list"));
    }
    let mut order: Vec<String> = stems.iter().map(|s| s.as_ref().to_string()).collect();
    order.sort();
    let (train, val, _) = split_counts(order.len(), fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, stem)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (stem, split)
        })
        .collect();
    DatasetIndex::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stems(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:05}")).collect()
    }

    #[test]
    fn full_dataset_counts() {
        assert_eq!(split_counts(4940, DEFAULT_FRACTIONS).unwrap(), (2964, 988, 988));
        assert_eq!(split_counts(10920, DEFAULT_FRACTIONS).unwrap(), (6552, 2184, 2184));
    }

    #[test]
    fn bad_fractions() {
        assert!(split_counts(10, [0.5, 0.2, 0.2]).is_err());
        assert!(split_counts(10, [1.2, -0.1, -0.1]).is_err());
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(split_dataset::<&str>(&[], DEFAULT_FRACTIONS, 0), Err(Error::Empty("stem list")));
    }

    #[test]
    fn input_order_does_not_matter() {
        let s = stems(50);
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(
            split_dataset(&s, DEFAULT_FRACTIONS, 3).unwrap(),
            split_dataset(&rev, DEFAULT_FRACTIONS, 3).unwrap()
        );
    }

    #[test]
    fn text_roundtrip() {
        let idx = split_dataset(&stems(20), DEFAULT_FRACTIONS, 9).unwrap();
        let text = idx.to_text();
        assert!(text.starts_with("img00000\t"));
        assert_eq!(DatasetIndex::parse(&text).unwrap(), idx);
        assert!(DatasetIndex::parse("a\ttrain\na\tval\n").is_err());
        assert!(DatasetIndex::parse("a train\n").is_err());
    }
}
