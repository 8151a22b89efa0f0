use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::SliceRecord;
use crate::error::{Error, Result};
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Record indices per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

impl DatasetSplit {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Split of every record index, in record order.
    pub fn assignment(&self, len: usize) -> Vec<Option<Split>> {
        let mut out = vec![None; len];
        for s in [Split::Train, Split::Validation, Split::Test] {
            for &i in self.get(s) {
                out[i] = Some(s);
            }
        }
        out
    }
}

pub const MIN_RECORDS: usize = 5;

/// Splits records so that no volume id straddles two splits.
pub fn split_dataset(
    records: &[SliceRecord],
    seed: u64,
    test_fraction: f64,
    validation_fraction: f64,
) -> Result<DatasetSplit> {
    let groups: Vec<&str> = records.iter().map(|r| r.provenance.volume.as_str()).collect();
    split_groups(&groups, seed, test_fraction, validation_fraction)
}

/// Group-aware split over per-record group ids. Groups are shuffled by
/// `seed`; test takes whole groups until it holds at least
/// `round(test_fraction · N)` records, then validation does the same with
/// `validation_fraction` of what is left, and the rest is train.
pub fn split_groups<S: AsRef<str>>(
    groups: &[S],
    seed: u64,
    test_fraction: f64,
    validation_fraction: f64,
) -> Result<DatasetSplit> {
    for f in [test_fraction, validation_fraction] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Argument(format!("split fraction {f} outside (0, 1)")));
        }
    }
    if groups.len() < MIN_RECORDS {
        return Err(Error::Split(format!(
            "{} records; at least {MIN_RECORDS} are needed",
            groups.len()
        )));
    }
    let mut members: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_ref()).or_default().push(i);
    }
    if members.len() < 3 {
        return Err(Error::Split(format!(
            "{} distinct volumes cannot populate train, validation and test",
            members.len()
        )));
    }
    let mut order: Vec<&Vec<usize>> = members.values().collect();
    RngState::derive(seed, &[0x5b11]).shuffle(&mut order);

    let mut rest = order.as_slice();
    // `keep` groups are reserved for the splits still to be filled.
    let take = |rest: &mut &[&Vec<usize>], target: usize, keep: usize| -> Vec<usize> {
        let mut out = Vec::new();
        while out.len() < target && rest.len() > keep {
            out.extend_from_slice(rest[0]);
            *rest = &rest[1..];
        }
        out
    };
    let n = groups.len();
    let mut test = take(&mut rest, ((test_fraction * n as f64).round() as usize).max(1), 2);
    let pool: usize = rest.iter().map(|g| g.len()).sum();
    let mut validation = take(&mut rest, ((validation_fraction * pool as f64).round() as usize).max(1), 1);
    let mut train: Vec<usize> = rest.iter().flat_map(|g| g.iter().copied()).collect();
    if test.is_empty() || validation.is_empty() || train.is_empty() {
        return Err(Error::Split("too few volumes to populate every split".into()));
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        test_fraction,
        validation_fraction,
    })
}
