use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ingest::N_TARGETS;

use super::HarnessError;

/// Most frequent class among one trial's window predictions; ties go to the
/// lowest class id. `None` for an empty slice.
pub fn majority_vote(preds: &[usize]) -> Option<usize> {
    let top = *preds.iter().max()?;
    let mut counts = vec![0usize; top + 1];
    for &p in preds {
        counts[p] += 1;
    }
    // max_by_key keeps the last maximum, so scan in reverse.
    counts.iter().enumerate().rev().max_by_key(|&(_, &c)| c).map(|(i, _)| i)
}

/// `counts[i][j]` = number of windows with label `i` predicted as `j`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>, HarnessError> {
    if preds.len() != labels.len() {
        return Err(HarnessError::InvalidConfig(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(HarnessError::ClassOutOfRange {
                class: p.max(l),
                classes,
            });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Row percentages rounded half up; an empty row renders as zeros.
pub fn render_percent(counts: &[Vec<u64>]) -> Vec<Vec<u32>> {
    counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0
                    } else {
                        // floor(100·c/total + 1/2) without floating point.
                        ((200 * c + total) / (2 * total)) as u32
                    }
                })
                .collect()
        })
        .collect()
}

/// Accuracy on one target's windows, or a marker that the target had none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetAccuracy {
    Present(f64),
    Absent,
}

impl TargetAccuracy {
    pub fn value(self) -> Option<f64> {
        match self {
            TargetAccuracy::Present(v) => Some(v),
            TargetAccuracy::Absent => None,
        }
    }
}

impl std::fmt::Display for TargetAccuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetAccuracy::Present(v) => write!(f, "{v}"),
            TargetAccuracy::Absent => write!(f, "absent"),
        }
    }
}

impl Serialize for TargetAccuracy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TargetAccuracy::Present(v) => s.serialize_f64(*v),
            TargetAccuracy::Absent => s.serialize_str("absent"),
        }
    }
}

impl<'de> Deserialize<'de> for TargetAccuracy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TargetAccuracy::Present(v)),
            Raw::Text(t) if t == "absent" => Ok(TargetAccuracy::Absent),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected target accuracy '{t}'"))),
        }
    }
}

/// Accuracy and window count for each of the nine targets.
pub fn per_target_accuracy(preds: &[usize], labels: &[usize], targets: &[u8]) -> (Vec<TargetAccuracy>, Vec<usize>) {
    let mut hits = [0usize; N_TARGETS];
    let mut counts = [0usize; N_TARGETS];
    for ((&p, &l), &t) in preds.iter().zip(labels).zip(targets) {
        let t = usize::from(t);
        if t < N_TARGETS {
            counts[t] += 1;
            hits[t] += usize::from(p == l);
        }
    }
    let acc = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| {
            if n == 0 {
                TargetAccuracy::Absent
            } else {
                TargetAccuracy::Present(h as f64 / n as f64)
            }
        })
        .collect();
    (acc, counts.to_vec())
}

/// Fraction of positions where `preds` equals `labels`; 0 for empty input.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64
}

/// Element `(n−1)/2` of the sorted values: the lower median for even counts.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}
