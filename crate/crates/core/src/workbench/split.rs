use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::dataset::DatasetManifest;

/// Sample indices of the three subject-disjoint partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn parts(&self) -> [(&'static str, &Vec<usize>); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }

    /// Verifies against `manifest` that indices are valid, no sample is used
    /// twice, no split is empty, and every subject lands in exactly one split.
    pub fn check_leakage(&self, manifest: &DatasetManifest) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, idx) in self.parts() {
            if idx.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
            for &i in idx {
                let subject = manifest.subject_ids.get(i).ok_or_else(|| {
                    Error::Data(format!("{name} split references missing sample {i}"))
                })?;
                if !seen.insert(i) {
                    return Err(Error::Data(format!(
                        "sample {i} appears in more than one split"
                    )));
                }
                if let Some(prev) = owner.insert(subject, name) {
                    if prev != name {
                        return Err(Error::Data(format!(
                            "subject {subject} leaks between {prev} and {name} splits"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Distinct subjects in order of first appearance.
fn subjects(manifest: &DatasetManifest) -> Vec<&str> {
    let mut seen = BTreeSet::new();
    manifest
        .subject_ids
        .iter()
        .map(String::as_str)
        .filter(|s| seen.insert(*s))
        .collect()
}

fn collect(manifest: &DatasetManifest, groups: [BTreeSet<&str>; 3]) -> Splits {
    let pick = |g: &BTreeSet<&str>| {
        (0..manifest.n_samples)
            .filter(|&i| g.contains(manifest.subject_ids[i].as_str()))
            .collect()
    };
    Splits {
        train: pick(&groups[0]),
        val: pick(&groups[1]),
        test: pick(&groups[2]),
    }
}

/// Subject counts per split: floor of each fraction, leftovers to train, then
/// val, then test; an empty split then takes one subject from the largest.
pub fn split_counts(n_subjects: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut counts = fractions.map(|f| (f * n_subjects as f64).floor() as usize);
    let mut i = 0;
    while counts.iter().sum::<usize>() < n_subjects {
        counts[i % 3] += 1;
        i += 1;
    }
    for k in 0..3 {
        if counts[k] == 0 {
            let largest = (0..3)
                .max_by_key(|&j| (counts[j], usize::MAX - j))
                .expect("three splits");
            counts[largest] -= 1;
            counts[k] += 1;
        }
    }
    counts
}

/// Shuffles subjects with `seed` and partitions them by `fractions`.
pub fn split_by_subject(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<Splits> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut subj = subjects(manifest);
    if subj.len() < 3 {
        return Err(Error::Data(format!(
            "subject-wise splitting needs at least 3 subjects, found {}",
            subj.len()
        )));
    }
    subj.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = split_counts(subj.len(), fractions);
    let groups = [
        subj[..a].iter().copied().collect(),
        subj[a..a + b].iter().copied().collect(),
        subj[a + b..].iter().copied().collect(),
    ];
    let splits = collect(manifest, groups);
    splits.check_leakage(manifest)?;
    Ok(splits)
}

/// Numeric part of a subject id such as `S017` or `17`.
pub fn subject_number(id: &str) -> Option<u32> {
    let digits = id.trim_start_matches(|c: char| !c.is_ascii_digit());
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Assigns subjects by inclusive numeric ranges, e.g. `[[1, 70], [71, 89], [90, 109]]`.
pub fn split_by_subject_ranges(
    manifest: &DatasetManifest,
    ranges: [[u32; 2]; 3],
) -> Result<Splits> {
    for (i, r) in ranges.iter().enumerate() {
        if r[0] > r[1] {
            return Err(Error::Data(format!("range {r:?} is empty")));
        }
        for other in &ranges[..i] {
            if r[0] <= other[1] && other[0] <= r[1] {
                return Err(Error::Data(format!("ranges {other:?} and {r:?} overlap")));
            }
        }
    }
    let mut by_number: BTreeMap<u32, &str> = BTreeMap::new();
    for s in subjects(manifest) {
        let n = subject_number(s)
            .ok_or_else(|| Error::Data(format!("subject id {s:?} has no numeric part")))?;
        if by_number.insert(n, s).is_some() {
            return Err(Error::Data(format!("two subject ids share the number {n}")));
        }
    }
    let mut groups: [BTreeSet<&str>; 3] = Default::default();
    for (g, r) in groups.iter_mut().zip(&ranges) {
        for n in r[0]..=r[1] {
            let s = by_number.get(&n).ok_or_else(|| {
                Error::Data(format!("range {r:?} references missing subject {n}"))
            })?;
            g.insert(s);
        }
    }
    if let Some((n, s)) = by_number
        .iter()
        .find(|(_, s)| !groups.iter().any(|g| g.contains(*s)))
    {
        return Err(Error::Data(format!(
            "subject {s} (number {n}) is not covered by any range"
        )));
    }
    let splits = collect(manifest, groups);
    splits.check_leakage(manifest)?;
    Ok(splits)
}
