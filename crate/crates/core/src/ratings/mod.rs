//! Perceptual dissimilarity ratings → common instrument set → target timbre space.

mod mds;

pub use mds::{mds, smacof_refine, MdsResult, TimbreTarget};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RatingsError {
    #[error("study `{0}` has a degenerate rating scale (min == max)")]
    DegenerateScale(String),
    #[error("study `{0}` mixes different rating scales")]
    InconsistentScale(String),
    #[error("rating {value} lies outside [{min}, {max}] in study `{study}`")]
    ValueOutOfScale { study: String, value: f64, min: f64, max: f64 },
    #[error("rating compares `{0}` with itself")]
    SelfPair(String),
    #[error("no instrument pair is shared across studies")]
    NoCommonPairs,
    #[error("no ratings for pair ({0}, {1})")]
    MissingPair(String, String),
    #[error("normalized rating {0} is outside [0, 1]")]
    NotNormalized(f64),
    #[error("dimension {dims} is not valid for {count} instruments")]
    BadDimension { dims: usize, count: usize },
    #[error("dissimilarity matrix is invalid: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// One subject's rating of one instrument pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub study: String,
    pub subject: String,
    pub instrument_a: String,
    pub instrument_b: String,
    pub value: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

/// Map every record of every study onto `[0, 1]` using its study's scale.
///
/// Runs over all records (all instruments of each study) before any
/// instrument filtering.
pub fn normalize_study(records: &[RatingRecord]) -> Result<Vec<RatingRecord>, RatingsError> {
    let mut scales: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in records {
        if r.instrument_a == r.instrument_b {
            return Err(RatingsError::SelfPair(r.instrument_a.clone()));
        }
        match scales.get(r.study.as_str()) {
            Some(&s) if s != (r.scale_min, r.scale_max) => {
                return Err(RatingsError::InconsistentScale(r.study.clone()))
            }
            Some(_) => {}
            None => {
                scales.insert(&r.study, (r.scale_min, r.scale_max));
            }
        }
        if !(r.scale_max > r.scale_min) {
            return Err(RatingsError::DegenerateScale(r.study.clone()));
        }
        if !(r.value >= r.scale_min && r.value <= r.scale_max) {
            return Err(RatingsError::ValueOutOfScale {
                study: r.study.clone(),
                value: r.value,
                min: r.scale_min,
                max: r.scale_max,
            });
        }
    }
    Ok(records
        .iter()
        .map(|r| RatingRecord {
            value: (r.value - r.scale_min) / (r.scale_max - r.scale_min),
            scale_min: 0.0,
            scale_max: 1.0,
            ..r.clone()
        })
        .collect())
}

/// Instrument list per study, in first-appearance order.
pub fn study_instruments(records: &[RatingRecord]) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for r in records {
        let idx = match out.iter().position(|(s, _)| *s == r.study) {
            Some(i) => i,
            None => {
                out.push((r.study.clone(), Vec::new()));
                out.len() - 1
            }
        };
        for name in [&r.instrument_a, &r.instrument_b] {
            if !out[idx].1.contains(name) {
                out[idx].1.push(name.clone());
            }
        }
    }
    out
}

/// Largest instrument set whose every pair has been rated in some study.
///
/// Each study is assumed to rate all pairs of its own instruments. With a
/// single study the result is that study's list. With several, only
/// instruments that co-occur in at least two studies are candidates, and
/// the largest fully-covered subset among them is returned (ties broken by
/// the lexicographically smallest sorted name list). The result is sorted
/// by first appearance across the input.
pub fn select_common_instruments(studies: &[Vec<String>]) -> Result<Vec<String>, RatingsError> {
    match studies {
        [] => return Err(RatingsError::NoCommonPairs),
        [only] => {
            let mut seen = Vec::new();
            for n in only {
                if !seen.contains(n) {
                    seen.push(n.clone());
                }
            }
            return Ok(seen);
        }
        _ => {}
    }

    let mut order: Vec<String> = Vec::new();
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for s in studies {
        let uniq: BTreeSet<&str> = s.iter().map(String::as_str).collect();
        for n in s {
            if !order.contains(n) {
                order.push(n.clone());
            }
        }
        for n in uniq {
            *count.entry(n).or_default() += 1;
        }
    }
    let candidates: Vec<&String> = order.iter().filter(|n| count[n.as_str()] >= 2).collect();
    let k = candidates.len();
    let mut covered = vec![vec![false; k]; k];
    for s in studies {
        let idx: Vec<usize> = (0..k).filter(|&i| s.contains(candidates[i])).collect();
        for &i in &idx {
            for &j in &idx {
                covered[i][j] = true;
            }
        }
    }

    let mut best: Vec<usize> = Vec::new();
    let mut current = Vec::new();
    let all: Vec<usize> = (0..k).collect();
    max_clique(&covered, &mut current, all, Vec::new(), &mut best, &candidates);
    if best.len() < 2 {
        return Err(RatingsError::NoCommonPairs);
    }
    best.sort_unstable();
    Ok(best.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Bron–Kerbosch without pivoting; the candidate graphs here are tiny.
fn max_clique(
    adj: &[Vec<bool>],
    current: &mut Vec<usize>,
    mut p: Vec<usize>,
    mut x: Vec<usize>,
    best: &mut Vec<usize>,
    names: &[&String],
) {
    if p.is_empty() && x.is_empty() {
        if current.len() > best.len()
            || (current.len() == best.len() && sorted_names(current, names) < sorted_names(best, names))
        {
            *best = current.clone();
        }
        return;
    }
    if current.len() + p.len() < best.len() {
        return;
    }
    while let Some(&v) = p.first() {
        current.push(v);
        let np = p.iter().copied().filter(|&u| u != v && adj[v][u]).collect();
        let nx = x.iter().copied().filter(|&u| adj[v][u]).collect();
        max_clique(adj, current, np, nx, best, names);
        current.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

fn sorted_names<'a>(idx: &[usize], names: &[&'a String]) -> Vec<&'a String> {
    let mut v: Vec<&String> = idx.iter().map(|&i| names[i]).collect();
    v.sort();
    v
}

/// Policy for instrument pairs that have no rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MissingPairPolicy {
    #[default]
    Error,
    /// Fill with the mean of all available pair means.
    ImputeGrandMean,
}

/// Symmetric, zero-diagonal matrix of dissimilarities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub instruments: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DissimilarityMatrix {
    pub fn new(instruments: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, RatingsError> {
        let n = instruments.len();
        let bad = |m: &str| Err(RatingsError::InvalidMatrix(m.into()));
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return bad("shape does not match instrument list");
        }
        for i in 0..n {
            if values[i][i] != 0.0 {
                return bad("non-zero diagonal");
            }
            for j in 0..n {
                let v = values[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return bad("entry outside [0, 1]");
                }
                if (v - values[j][i]).abs() > 1e-12 {
                    return bad("not symmetric");
                }
            }
        }
        Ok(Self { instruments, values })
    }

    pub fn len(&self) -> usize {
        self.instruments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instruments.is_empty()
    }
}

/// Mean normalized rating per pair of `instruments`, unweighted across
/// subjects and studies. Records for other instruments are ignored.
pub fn aggregate(
    records: &[RatingRecord],
    instruments: &[String],
    policy: MissingPairPolicy,
) -> Result<DissimilarityMatrix, RatingsError> {
    let n = instruments.len();
    let index = |name: &str| instruments.iter().position(|s| s == name);
    let mut sum = vec![vec![0.0; n]; n];
    let mut count = vec![vec![0usize; n]; n];
    for r in records {
        if !(0.0..=1.0).contains(&r.value) {
            return Err(RatingsError::NotNormalized(r.value));
        }
        if let (Some(i), Some(j)) = (index(&r.instrument_a), index(&r.instrument_b)) {
            if i == j {
                return Err(RatingsError::SelfPair(r.instrument_a.clone()));
            }
            sum[i][j] += r.value;
            sum[j][i] += r.value;
            count[i][j] += 1;
            count[j][i] += 1;
        }
    }
    let mut values = vec![vec![0.0; n]; n];
    let mut missing = Vec::new();
    let (mut grand, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if count[i][j] == 0 {
                missing.push((i, j));
            } else {
                let m = sum[i][j] / count[i][j] as f64;
                values[i][j] = m;
                values[j][i] = m;
                grand += m;
                pairs += 1;
            }
        }
    }
    if let Some(&(i, j)) = missing.first() {
        match policy {
            MissingPairPolicy::Error => {
                return Err(RatingsError::MissingPair(instruments[i].clone(), instruments[j].clone()))
            }
            MissingPairPolicy::ImputeGrandMean => {
                if pairs == 0 {
                    return Err(RatingsError::MissingPair(instruments[i].clone(), instruments[j].clone()));
                }
                let g = grand / pairs as f64;
                log::warn!("imputing {} missing pairs with grand mean {g:.4}", missing.len());
                for (i, j) in missing {
                    values[i][j] = g;
                    values[j][i] = g;
                }
            }
        }
    }
    DissimilarityMatrix::new(instruments.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rec(study: &str, a: &str, b: &str, value: f64, lo: f64, hi: f64) -> RatingRecord {
        RatingRecord {
            study: study.into(),
            subject: "s1".into(),
            instrument_a: a.into(),
            instrument_b: b.into(),
            value,
            scale_min: lo,
            scale_max: hi,
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        let out = normalize_study(&[
            rec("krumhansl", "a", "b", 9.0, 1.0, 9.0),
            rec("grey", "a", "b", 0.3, 0.0, 1.0),
            rec("mcadams", "a", "b", 1.0, 1.0, 16.0),
        ])
        .unwrap();
        assert_eq!(out[0].value, 1.0);
        assert_eq!(out[1].value, 0.3);
        assert_eq!(out[2].value, 0.0);
    }

    #[test]
    fn normalization_errors() {
        assert_eq!(
            normalize_study(&[rec("x", "a", "b", 1.0, 1.0, 1.0)]),
            Err(RatingsError::DegenerateScale("x".into()))
        );
        assert!(matches!(
            normalize_study(&[rec("x", "a", "b", 1.0, 0.0, 1.0), rec("x", "a", "c", 1.0, 0.0, 2.0)]),
            Err(RatingsError::InconsistentScale(_))
        ));
        assert!(matches!(
            normalize_study(&[rec("x", "a", "b", 3.0, 0.0, 1.0)]),
            Err(RatingsError::ValueOutOfScale { .. })
        ));
    }

    #[test]
    fn single_study_selects_everything() {
        let s = vec![names(&["Piano", "Flute", "Tuba"])];
        assert_eq!(select_common_instruments(&s).unwrap(), names(&["Piano", "Flute", "Tuba"]));
    }

    #[test]
    fn disjoint_studies_fail() {
        let s = vec![names(&["a", "b", "c"]), names(&["d", "e", "f"])];
        assert_eq!(select_common_instruments(&s), Err(RatingsError::NoCommonPairs));
    }

    #[test]
    fn overlapping_studies_select_covered_set() {
        // a,b,c appear together twice; d co-occurs with a only once.
        let s = vec![
            names(&["a", "b", "c", "x"]),
            names(&["a", "b", "c", "d"]),
            names(&["d", "y"]),
        ];
        assert_eq!(select_common_instruments(&s).unwrap(), names(&["a", "b", "c", "d"]));
        // drop d from the second study: d no longer co-occurs with b/c
        let s2 = vec![names(&["a", "b", "c", "d"]), names(&["a", "b", "c"]), names(&["d", "a"])];
        assert_eq!(select_common_instruments(&s2).unwrap(), names(&["a", "b", "c", "d"]));
        let s3 = vec![names(&["a", "b", "c"]), names(&["a", "b", "c"]), names(&["d", "a"]), names(&["d", "e"])];
        assert_eq!(select_common_instruments(&s3).unwrap(), names(&["a", "b", "c"]));
    }

    #[test]
    fn twelve_instrument_layout() {
        let twelve = names(&[
            "Piano", "Cello", "Violin", "Flute", "Clarinet", "Trombone", "French Horn",
            "English Horn", "Oboe", "Saxophone", "Trumpet", "Tuba",
        ]);
        let mut a = twelve[..8].to_vec();
        a.push("Harpsichord".into());
        let mut b = twelve[4..].to_vec();
        b.push("Vibraphone".into());
        let c = twelve.clone();
        let d = names(&["Piano", "Harp", "Marimba"]);
        let got = select_common_instruments(&[a, b, c, d]).unwrap();
        assert_eq!(got, twelve);
    }

    #[test]
    fn aggregate_means_and_symmetry() {
        let recs = vec![
            rec("s", "a", "b", 0.2, 0.0, 1.0),
            rec("s", "b", "a", 0.4, 0.0, 1.0),
            rec("s", "a", "c", 1.0, 0.0, 1.0),
            rec("s", "b", "c", 0.5, 0.0, 1.0),
            rec("s", "a", "z", 0.9, 0.0, 1.0),
        ];
        let m = aggregate(&recs, &names(&["a", "b", "c"]), MissingPairPolicy::Error).unwrap();
        assert!((m.values[0][1] - 0.3).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(m.values[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
    }

    #[test]
    fn missing_pairs() {
        let recs = vec![rec("s", "a", "b", 0.2, 0.0, 1.0), rec("s", "a", "c", 0.6, 0.0, 1.0)];
        let inst = names(&["a", "b", "c"]);
        assert_eq!(
            aggregate(&recs, &inst, MissingPairPolicy::Error),
            Err(RatingsError::MissingPair("b".into(), "c".into()))
        );
        let m = aggregate(&recs, &inst, MissingPairPolicy::ImputeGrandMean).unwrap();
        assert!((m.values[1][2] - 0.4).abs() < 1e-15);
    }
}
