use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::ingest::{Catalog, Trial, TrialKey};

use super::{compute_norm_stats, design_butterworth, filter_catalog, normalize_trial, DspError, FilterSpec, NormStats, DEFAULT_GUARD_EPS};

/// Position channels per sample.
pub const CHANNELS: usize = 3;

const MAGIC: &[u8; 4] = b"TJW1";
const NO_FOLD: u32 = u32::MAX;

/// One `CHANNELS × width` window, channel-major, with its trial's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    pub participant: u32,
    pub target: u8,
    pub trial: u32,
}

/// Cut a trial into `floor(T/w)` consecutive non-overlapping windows from
/// sample 0; the trailing `T mod w` samples are dropped.
pub fn window_trial(trial: &Trial, w: usize) -> Vec<Window> {
    if w == 0 {
        return Vec::new();
    }
    trial
        .samples
        .chunks_exact(w)
        .map(|chunk| {
            let mut data = Vec::with_capacity(CHANNELS * w);
            for c in 0..CHANNELS {
                data.extend(chunk.iter().map(|s| s[c]));
            }
            Window {
                data,
                participant: trial.participant_id,
                target: trial.target_id,
                trial: trial.trial_id,
            }
        })
        .collect()
}

/// Fixed-length labeled windows in an `N × C × W` block of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub channels: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u32>,
    pub target_ids: Vec<u8>,
    pub trial_ids: Vec<u32>,
    pub norm_stats: Option<NormStats>,
    pub fold_tag: Option<u32>,
}

impl WindowSet {
    pub fn empty(width: usize) -> Self {
        Self {
            channels: CHANNELS,
            width,
            data: Vec::new(),
            labels: Vec::new(),
            target_ids: Vec::new(),
            trial_ids: Vec::new(),
            norm_stats: None,
            fold_tag: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.channels * self.width
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let n = self.window_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn trial_key(&self, i: usize) -> TrialKey {
        TrialKey {
            participant: self.labels[i],
            target: self.target_ids[i],
            trial: self.trial_ids[i],
        }
    }

    pub fn push(&mut self, w: &Window) {
        debug_assert_eq!(w.data.len(), self.window_len());
        self.data.extend(w.data.iter().map(|&v| v as f32));
        self.labels.push(w.participant);
        self.target_ids.push(w.target);
        self.trial_ids.push(w.trial);
    }

    /// Windows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        let mut out = WindowSet {
            norm_stats: self.norm_stats.clone(),
            fold_tag: self.fold_tag,
            ..WindowSet::empty(self.width)
        };
        out.channels = self.channels;
        for &i in indices {
            out.data.extend_from_slice(self.window(i));
            out.labels.push(self.labels[i]);
            out.target_ids.push(self.target_ids[i]);
            out.trial_ids.push(self.trial_ids[i]);
        }
        out
    }
}

/// Window already-normalized trials into a set stamped with `stats`.
pub fn windows_from_trials<'a>(
    trials: impl IntoIterator<Item = &'a Trial>,
    w: usize,
    stats: Option<NormStats>,
    fold_tag: Option<u32>,
) -> WindowSet {
    let mut set = WindowSet {
        norm_stats: stats,
        fold_tag,
        ..WindowSet::empty(w)
    };
    for t in trials {
        for win in window_trial(t, w) {
            set.push(&win);
        }
    }
    set
}

/// Where z-score statistics come from.
#[derive(Debug, Clone)]
pub enum StatsSource<'a> {
    /// Precomputed statistics, applied unchanged.
    Given(NormStats),
    /// Compute from these trials after filtering, in catalog order.
    Training { keys: &'a [TrialKey], tag: String },
}

/// Filter, normalize and window every trial of the catalog.
pub fn preprocess(
    catalog: &Catalog,
    spec: &FilterSpec,
    w: usize,
    stats_source: StatsSource<'_>,
) -> Result<WindowSet, DspError> {
    if catalog.is_empty() {
        return Ok(WindowSet::empty(w));
    }
    let chain = design_butterworth(spec)?;
    let filtered = filter_catalog(&chain, catalog, spec.mode)?;
    let stats = match stats_source {
        StatsSource::Given(s) => s,
        StatsSource::Training { keys, tag } => {
            let keep: std::collections::HashSet<&TrialKey> = keys.iter().collect();
            let training: Vec<&Trial> = filtered
                .trials()
                .iter()
                .filter(|t| keep.contains(&t.key()))
                .collect();
            compute_norm_stats(training.iter().copied(), DEFAULT_GUARD_EPS, tag)?
        }
    };
    let normalized: Vec<Trial> = filtered
        .trials()
        .iter()
        .map(|t| normalize_trial(t, &stats))
        .collect();
    Ok(windows_from_trials(&normalized, w, Some(stats), None))
}

/// Sidecar path holding a window file's normalization statistics.
pub fn stats_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".stats.json");
    PathBuf::from(name)
}

fn label16(v: u32) -> Result<[u8; 2], DspError> {
    u16::try_from(v)
        .map(|x| x.to_le_bytes())
        .map_err(|_| DspError::LabelOverflow(v))
}

/// Binary layout: magic `TJW1`; little-endian u32 N, C, W and fold tag
/// (`u32::MAX` when none); N (participant, target, trial) u16 triples; then
/// N·C·W f32 samples, window-major, channel-second, time-last. Statistics go
/// to a JSON sidecar next to the file.
pub fn write_windowset(path: &Path, set: &WindowSet) -> Result<(), DspError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    for v in [
        set.len() as u32,
        set.channels as u32,
        set.width as u32,
        set.fold_tag.unwrap_or(NO_FOLD),
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for i in 0..set.len() {
        out.write_all(&label16(set.labels[i])?)?;
        out.write_all(&label16(set.target_ids[i] as u32)?)?;
        out.write_all(&label16(set.trial_ids[i])?)?;
    }
    for v in &set.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    let sidecar = stats_sidecar(path);
    if let Some(stats) = &set.norm_stats {
        let json = serde_json::to_string_pretty(stats).map_err(|e| DspError::Format(e.to_string()))?;
        fs::write(sidecar, json + "\n")?;
    }
    Ok(())
}

pub fn read_windowset(path: &Path) -> Result<WindowSet, DspError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(DspError::Format(format!("{}: bad magic", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (n, c, w, fold) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize, u32_at(16));
    let expected = 20 + n * 6 + n * c * w * 4;
    if bytes.len() != expected {
        return Err(DspError::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let mut set = WindowSet {
        channels: c,
        width: w,
        fold_tag: (fold != NO_FOLD).then_some(fold),
        ..WindowSet::empty(w)
    };
    for i in 0..n {
        let o = 20 + 6 * i;
        set.labels.push(u16_at(o) as u32);
        let target = u16_at(o + 2);
        set.target_ids
            .push(u8::try_from(target).map_err(|_| DspError::Format(format!("target id {target} out of range")))?);
        set.trial_ids.push(u16_at(o + 4) as u32);
    }
    let start = 20 + 6 * n;
    set.data = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let sidecar = stats_sidecar(path);
    if sidecar.exists() {
        let text = fs::read_to_string(sidecar)?;
        set.norm_stats = Some(serde_json::from_str(&text).map_err(|e| DspError::Format(e.to_string()))?);
    }
    Ok(set)
}
