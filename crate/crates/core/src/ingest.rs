//! Trial files, manifests and the validated [`Catalog`].
//!
//! A trial file is UTF-8 CSV with the header `t,x,y,z` (seconds, meters), one
//! sample per row. A manifest is a JSON array of
//! `{"file", "participant", "target", "trial", "fs"}` entries whose `file`
//! paths are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of targets in the center-out layout.
pub const N_TARGETS: usize = 9;

/// Maximum deviation of a timestamp step from `1/fs`.
pub const SPACING_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing trial file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("malformed CSV row {row} in {path}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("trial {key}: needs at least 2 samples, got {got}")]
    TooShort { key: TrialKey, got: usize },
    #[error("trial {key}: non-finite value at sample {index}")]
    NonFinite { key: TrialKey, index: usize },
    #[error("trial {key}: non-monotonic time at sample {index}")]
    NonMonotonic { key: TrialKey, index: usize },
    #[error("trial {key}: non-uniform sampling at sample {index} (step {step} s, expected {expected} s)")]
    NonUniform {
        key: TrialKey,
        index: usize,
        step: f64,
        expected: f64,
    },
    #[error("trial {key}: sampling rate must be positive and finite, got {fs}")]
    BadRate { key: TrialKey, fs: f64 },
    #[error("trial {key}: target id must be in 0..=8")]
    BadTarget { key: TrialKey },
    #[error("duplicate trial key {0}")]
    Duplicate(TrialKey),
    #[error("inconsistent sampling rate: {found} Hz vs {expected} Hz (trial {key})")]
    MixedRates {
        key: TrialKey,
        found: f64,
        expected: f64,
    },
    #[error("participant {0} is not in the catalog")]
    UnknownParticipant(u32),
}

/// Identity of one trial inside a catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub participant: u32,
    pub target: u8,
    pub trial: u32,
}

impl std::fmt::Display for TrialKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(participant {}, target {}, trial {})",
            self.participant, self.target, self.trial
        )
    }
}

/// One transport movement: `T` position triples in meters at rate `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub participant_id: u32,
    pub target_id: u8,
    pub trial_id: u32,
    pub fs: f64,
    pub samples: Vec<[f64; 3]>,
}

impl Trial {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            participant: self.participant_id,
            target: self.target_id,
            trial: self.trial_id,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel `c` (0 = x, 1 = y, 2 = z) as a contiguous vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    /// Timestamp of sample `k`, starting at zero.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.fs
    }
}

/// Identity fields accompanying raw rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMeta {
    pub participant: u32,
    pub target: u8,
    pub trial: u32,
    pub fs: f64,
}

impl TrialMeta {
    fn key(&self) -> TrialKey {
        TrialKey {
            participant: self.participant,
            target: self.target,
            trial: self.trial,
        }
    }
}

/// Validate parsed `[t, x, y, z]` rows into a [`Trial`].
pub fn validate_trial(rows: &[[f64; 4]], meta: TrialMeta) -> Result<Trial, IngestError> {
    let key = meta.key();
    if !(meta.fs.is_finite() && meta.fs > 0.0) {
        return Err(IngestError::BadRate { key, fs: meta.fs });
    }
    if meta.target as usize >= N_TARGETS {
        return Err(IngestError::BadTarget { key });
    }
    if rows.len() < 2 {
        return Err(IngestError::TooShort {
            key,
            got: rows.len(),
        });
    }
    if let Some(index) = rows
        .iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(IngestError::NonFinite { key, index });
    }
    let expected = 1.0 / meta.fs;
    for (i, pair) in rows.windows(2).enumerate() {
        let step = pair[1][0] - pair[0][0];
        if step <= 0.0 {
            return Err(IngestError::NonMonotonic { key, index: i + 1 });
        }
        if (step - expected).abs() > SPACING_TOLERANCE_S {
            return Err(IngestError::NonUniform {
                key,
                index: i + 1,
                step,
                expected,
            });
        }
    }
    Ok(Trial {
        participant_id: meta.participant,
        target_id: meta.target,
        trial_id: meta.trial,
        fs: meta.fs,
        samples: rows.iter().map(|r| [r[1], r[2], r[3]]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    pub id: u32,
    pub n_trials: usize,
}

/// An immutable, validated set of trials sharing one sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    n_participants: u32,
    participants: Vec<ParticipantMeta>,
    trials: Vec<Trial>,
    provenance: String,
}

impl Catalog {
    /// Build a catalog, enforcing key uniqueness and a single sampling rate.
    /// The participant count is one past the largest participant id.
    pub fn new(trials: Vec<Trial>, provenance: impl Into<String>) -> Result<Self, IngestError> {
        let mut seen = HashSet::with_capacity(trials.len());
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        let fs = trials.first().map(|t| t.fs);
        for t in &trials {
            if !seen.insert(t.key()) {
                return Err(IngestError::Duplicate(t.key()));
            }
            if let Some(fs) = fs {
                if t.fs != fs {
                    return Err(IngestError::MixedRates {
                        key: t.key(),
                        found: t.fs,
                        expected: fs,
                    });
                }
            }
            *counts.entry(t.participant_id).or_default() += 1;
        }
        let n_participants = counts.keys().next_back().map_or(0, |&p| p + 1);
        Ok(Self {
            n_participants,
            participants: counts
                .into_iter()
                .map(|(id, n_trials)| ParticipantMeta { id, n_trials })
                .collect(),
            trials,
            provenance: provenance.into(),
        })
    }

    pub fn n_participants(&self) -> u32 {
        self.n_participants
    }

    /// Participants that have at least one trial, ascending by id.
    pub fn participants(&self) -> &[ParticipantMeta] {
        &self.participants
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    /// Shared sampling rate, `None` for an empty catalog.
    pub fn fs(&self) -> Option<f64> {
        self.trials.first().map(|t| t.fs)
    }

    pub fn find(&self, key: TrialKey) -> Option<&Trial> {
        self.trials.iter().find(|t| t.key() == key)
    }

    /// Restrict to the given participant ids, keeping manifest order.
    pub fn subset(&self, ids: &[u32]) -> Result<Catalog, IngestError> {
        for &id in ids {
            if !self.participants.iter().any(|p| p.id == id) {
                return Err(IngestError::UnknownParticipant(id));
            }
        }
        let keep: HashSet<u32> = ids.iter().copied().collect();
        let trials = self
            .trials
            .iter()
            .filter(|t| keep.contains(&t.participant_id))
            .cloned()
            .collect();
        let mut out = Catalog::new(trials, format!("{} [subset]", self.provenance))?;
        out.n_participants = self.n_participants;
        Ok(out)
    }
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub participant: u32,
    pub target: u8,
    pub trial: u32,
    pub fs: f64,
}

/// Parse a trial CSV into `[t, x, y, z]` rows.
pub fn read_trial_csv(path: &Path) -> Result<Vec<[f64; 4]>, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let header = reader.headers().map_err(|e| IngestError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["t", "x", "y", "z"] {
        return Err(IngestError::MalformedRow {
            path: path.to_path_buf(),
            row: 0,
            message: format!("expected header t,x,y,z, got {:?}", header),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let malformed = |message: String| IngestError::MalformedRow {
            path: path.to_path_buf(),
            row,
            message,
        };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != 4 {
            return Err(malformed(format!("expected 4 fields, got {}", record.len())));
        }
        let mut out = [0.0; 4];
        for (slot, field) in out.iter_mut().zip(record.iter()) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| malformed(format!("{field:?}: {e}")))?;
        }
        rows.push(out);
    }
    Ok(rows)
}

/// Write a trial as CSV. Values use the shortest representation that parses
/// back to the identical `f64`, so a write/read cycle is bit-exact.
pub fn write_trial_csv(path: &Path, trial: &Trial) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "t,x,y,z")?;
    for (k, s) in trial.samples.iter().enumerate() {
        writeln!(out, "{:?},{:?},{:?},{:?}", trial.time(k), s[0], s[1], s[2])?;
    }
    out.flush()
}

/// Load and validate every trial referenced by a manifest.
pub fn load_catalog(manifest_path: &Path) -> Result<Catalog, IngestError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| IngestError::Read {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| IngestError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut trials = Vec::with_capacity(entries.len());
    for entry in &entries {
        let rows = read_trial_csv(&base.join(&entry.file))?;
        trials.push(validate_trial(
            &rows,
            TrialMeta {
                participant: entry.participant,
                target: entry.target,
                trial: entry.trial,
                fs: entry.fs,
            },
        )?);
    }
    Catalog::new(trials, manifest_path.display().to_string())
}

/// File name used for a trial when exporting a catalog.
pub fn trial_file_name(key: TrialKey) -> String {
    format!(
        "p{:03}_t{}_r{:04}.csv",
        key.participant, key.target, key.trial
    )
}

/// Write every trial plus `manifest.json` into `dir`; returns the manifest path.
pub fn write_catalog(dir: &Path, catalog: &Catalog) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(catalog.len());
    for trial in catalog.trials() {
        let file = trial_file_name(trial.key());
        write_trial_csv(&dir.join(&file), trial)?;
        entries.push(ManifestEntry {
            file,
            participant: trial.participant_id,
            target: trial.target_id,
            trial: trial.trial_id,
            fs: trial.fs,
        });
    }
    let manifest = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&entries).map_err(std::io::Error::other)?;
    fs::write(&manifest, json + "\n")?;
    Ok(manifest)
}
