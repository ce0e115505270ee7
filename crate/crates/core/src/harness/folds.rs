//! Subject-disjoint cross-validation splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stfeat::VideoMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvProtocol {
    LeaveOneSubjectOut,
    /// Subjects shuffled with the seed and dealt round-robin into `k` folds.
    PersonKFold { k: usize, seed: u64 },
}

impl std::str::FromStr for CvProtocol {
    type Err = Error;

    /// `loso`, `kfold:K` or `kfold:K:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown protocol `{s}` (loso|kfold:K[:SEED])"));
        if s == "loso" {
            return Ok(CvProtocol::LeaveOneSubjectOut);
        }
        let mut parts = s.split(':');
        if parts.next() != Some("kfold") {
            return Err(bad());
        }
        let k = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let seed = match parts.next() {
            Some(v) => v.parse().map_err(|_| bad())?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(CvProtocol::PersonKFold { k, seed })
    }
}

impl std::fmt::Display for CvProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CvProtocol::LeaveOneSubjectOut => write!(f, "loso"),
            CvProtocol::PersonKFold { k, seed } => write!(f, "kfold:{k}:{seed}"),
        }
    }
}

/// Clip indices (into the manifest order) of one split, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_subjects: Vec<String>,
}

pub fn make_folds(metas: &[VideoMeta], protocol: CvProtocol) -> Result<Vec<Fold>> {
    let subjects: Vec<&str> = metas
        .iter()
        .map(|m| m.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let groups: Vec<Vec<&str>> = match protocol {
        CvProtocol::LeaveOneSubjectOut => {
            if subjects.len() < 2 {
                return Err(Error::TooFewSubjects {
                    subjects: subjects.len(),
                    folds: 2,
                });
            }
            subjects.iter().map(|s| vec![*s]).collect()
        }
        CvProtocol::PersonKFold { k, seed } => {
            if k < 2 || subjects.len() < k {
                return Err(Error::TooFewSubjects {
                    subjects: subjects.len(),
                    folds: k,
                });
            }
            let mut shuffled = subjects.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut groups = vec![Vec::new(); k];
            for (i, s) in shuffled.into_iter().enumerate() {
                groups[i % k].push(s);
            }
            for g in &mut groups {
                g.sort_unstable();
            }
            groups
        }
    };
    Ok(groups
        .into_iter()
        .map(|group| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..metas.len()).partition(|&i| group.contains(&metas[i].subject_id.as_str()));
            Fold {
                train,
                test,
                test_subjects: group.into_iter().map(String::from).collect(),
            }
        })
        .collect())
}
