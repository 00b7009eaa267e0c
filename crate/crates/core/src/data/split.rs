use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::panels::Panels;
use crate::error::{HistError, Result};

/// Closed date interval `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: DateRange,
    pub valid: DateRange,
    pub test: DateRange,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            train: DateRange { start: d(2007, 1, 1), end: d(2014, 12, 31) },
            valid: DateRange { start: d(2015, 1, 1), end: d(2016, 12, 31) },
            test: DateRange { start: d(2017, 1, 1), end: d(2020, 12, 31) },
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [("train", &self.train), ("valid", &self.valid), ("test", &self.test)];
        for (name, r) in named {
            if r.start > r.end {
                return Err(HistError::Config(format!("{name} range starts after it ends")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if named[i].1.overlaps(named[j].1) {
                    return Err(HistError::Config(format!("{} and {} ranges overlap", named[i].0, named[j].0)));
                }
            }
        }
        Ok(())
    }

    pub fn range(&self, split: Split) -> &DateRange {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Labeled panel date indices falling inside the split.
    pub fn dates(&self, panels: &Panels, split: Split) -> Vec<usize> {
        let range = self.range(split);
        panels.labeled_dates().into_iter().filter(|&t| range.contains(panels.dates()[t])).collect()
    }
}
