//! Synthetic center-out transport datasets.
//!
//! Each subject is described by a [`SubjectSignature`]. A trial moves along the
//! straight start-to-target line with a minimum-jerk displacement profile and
//! adds a vertical arc, a lateral deflection, a tremor oscillation and white
//! measurement noise on top. Everything is a pure function of the seeds; the
//! per-trial stream is seeded with
//! `derive_seed(master_seed, [participant, target, trial])`
//! (see [`crate::rng`]).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, Catalog, Trial, N_TARGETS};
use crate::rng::{self, derive_seed};

#[derive(Debug, Error, PartialEq)]
pub enum SyngenError {
    #[error("normalized time {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("invalid signature: {0}")]
    BadSignature(String),
    #[error("invalid generator parameters: {0}")]
    BadParameters(String),
}

/// Minimum-jerk displacement fraction `10τ³ − 15τ⁴ + 6τ⁵`.
pub fn minimum_jerk_profile(tau: f64) -> Result<f64, SyngenError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SyngenError::TauOutOfRange(tau));
    }
    Ok(tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau)))
}

/// Individual kinematic parameters of one synthetic subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectSignature {
    pub duration_s: f64,
    pub arc_height_m: f64,
    pub lateral_curve_m: f64,
    pub tremor_amp_m: f64,
    pub tremor_hz: f64,
    pub noise_sigma_m: f64,
}

impl SubjectSignature {
    pub fn validate(&self, fs: f64) -> Result<(), SyngenError> {
        let bad = |m: &str| Err(SyngenError::BadSignature(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if !(self.tremor_hz > 0.0 && self.tremor_hz < fs / 2.0) {
            return bad("tremor_hz must lie in (0, fs/2)");
        }
        if !(self.arc_height_m >= 0.0 && self.tremor_amp_m >= 0.0 && self.noise_sigma_m >= 0.0) {
            return bad("amplitudes must be non-negative");
        }
        if !self.lateral_curve_m.is_finite() {
            return bad("lateral_curve_m must be finite");
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 6] {
        [
            self.duration_s,
            self.arc_height_m,
            self.lateral_curve_m,
            self.tremor_amp_m,
            self.tremor_hz,
            self.noise_sigma_m,
        ]
    }

    fn from_array(v: [f64; 6]) -> Self {
        Self {
            duration_s: v[0],
            arc_height_m: v[1],
            lateral_curve_m: v[2],
            tremor_amp_m: v[3],
            tremor_hz: v[4],
            noise_sigma_m: v[5],
        }
    }

    /// Euclidean distance in the raw parameter space.
    pub fn distance(&self, other: &Self) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Ranges subject signatures are drawn from, as `(low, high)` per field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureRanges {
    pub duration_s: (f64, f64),
    pub arc_height_m: (f64, f64),
    pub lateral_curve_m: (f64, f64),
    pub tremor_amp_m: (f64, f64),
    pub tremor_hz: (f64, f64),
    pub noise_sigma_m: (f64, f64),
}

impl Default for SignatureRanges {
    fn default() -> Self {
        Self {
            duration_s: (0.6, 1.4),
            arc_height_m: (0.0, 0.08),
            lateral_curve_m: (-0.05, 0.05),
            tremor_amp_m: (0.0, 0.004),
            tremor_hz: (3.0, 6.0),
            noise_sigma_m: (0.0005, 0.002),
        }
    }
}

impl SignatureRanges {
    fn as_array(&self) -> [(f64, f64); 6] {
        [
            self.duration_s,
            self.arc_height_m,
            self.lateral_curve_m,
            self.tremor_amp_m,
            self.tremor_hz,
            self.noise_sigma_m,
        ]
    }
}

/// Start point and the nine target directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub start: [f64; 3],
    pub radius_m: f64,
    /// Azimuths in degrees, counter-clockwise from +x, index 0 leftmost.
    pub target_angles_deg: [f64; N_TARGETS],
}

impl Default for TaskLayout {
    /// Radius 0.3 m, a 180° fan at 22.5° spacing, target 4 straight ahead (+y).
    fn default() -> Self {
        let mut angles = [0.0; N_TARGETS];
        for (i, a) in angles.iter_mut().enumerate() {
            *a = 180.0 - 22.5 * i as f64;
        }
        Self {
            start: [0.0; 3],
            radius_m: 0.3,
            target_angles_deg: angles,
        }
    }
}

impl TaskLayout {
    pub fn validate(&self) -> Result<(), SyngenError> {
        if !self.target_angles_deg.windows(2).all(|w| w[0] > w[1]) {
            return Err(SyngenError::BadParameters(
                "target angles must decrease strictly left to right".into(),
            ));
        }
        if !(self.radius_m > 0.0) {
            return Err(SyngenError::BadParameters("radius must be positive".into()));
        }
        Ok(())
    }

    /// Horizontal unit direction towards target `id`.
    pub fn direction(&self, id: u8) -> [f64; 2] {
        // Measured from straight ahead so the middle target is exactly (0, 1).
        let off = (90.0 - self.target_angles_deg[id as usize]).to_radians();
        [off.sin(), off.cos()]
    }

    pub fn target_point(&self, id: u8) -> [f64; 3] {
        let [dx, dy] = self.direction(id);
        [
            self.start[0] + self.radius_m * dx,
            self.start[1] + self.radius_m * dy,
            self.start[2],
        ]
    }
}

/// Synthesize one trial. The tremor acts along `(1, 1, 1)/√3` with a phase
/// drawn from the trial's stream; noise is i.i.d. per axis.
pub fn synth_trial(
    sig: &SubjectSignature,
    layout: &TaskLayout,
    participant: u32,
    target_id: u8,
    trial_id: u32,
    fs: f64,
    seed: u64,
) -> Result<Trial, SyngenError> {
    sig.validate(fs)?;
    layout.validate()?;
    if target_id as usize >= N_TARGETS {
        return Err(SyngenError::BadParameters(format!(
            "target id {target_id} out of range"
        )));
    }
    let steps = (sig.duration_s * fs).round() as usize;
    if steps < 1 {
        return Err(SyngenError::BadParameters(
            "duration too short for the sampling rate".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let phase = 2.0 * PI * rng::uniform_open0(&mut rng);
    let [ux, uy] = layout.direction(target_id);
    let lateral = [-uy, ux];
    let tremor_axis = 1.0 / 3f64.sqrt();
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let tau = k as f64 / steps as f64;
        let t = k as f64 / fs;
        let s = minimum_jerk_profile(tau)?;
        let bump = (PI * tau).sin();
        let tremor = sig.tremor_amp_m * (2.0 * PI * sig.tremor_hz * t + phase).sin() * tremor_axis;
        let along = layout.radius_m * s;
        let side = sig.lateral_curve_m * bump;
        let mut p = [
            layout.start[0] + along * ux + side * lateral[0] + tremor,
            layout.start[1] + along * uy + side * lateral[1] + tremor,
            layout.start[2] + sig.arc_height_m * bump + tremor,
        ];
        if sig.noise_sigma_m > 0.0 {
            for v in &mut p {
                *v += sig.noise_sigma_m * rng::gaussian(&mut rng);
            }
        }
        samples.push(p);
    }
    Ok(Trial {
        participant_id: participant,
        target_id,
        trial_id,
        fs,
        samples,
    })
}

/// Parameters for [`synth_catalog`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: u32,
    pub trials_per_target: u32,
    pub separation: f64,
    pub master_seed: u64,
    pub fs: f64,
    pub layout: TaskLayout,
    pub ranges: SignatureRanges,
}

impl SynthConfig {
    pub fn new(n_subjects: u32, trials_per_target: u32, separation: f64, master_seed: u64) -> Self {
        Self {
            n_subjects,
            trials_per_target,
            separation,
            master_seed,
            fs: 250.0,
            layout: TaskLayout::default(),
            ranges: SignatureRanges::default(),
        }
    }
}

/// Stream id for the signature permutation draw, distinct from any participant id.
const SIGNATURE_STREAM: u64 = u64::MAX;

/// Per-subject signatures on an evenly spaced grid over each range.
///
/// Every field takes the `n` grid values `low + (high − low)·i/(n − 1)`, assigned
/// to subjects through an independent seeded permutation per field, then pulled
/// towards the range midpoint: `mid + separation·(grid − mid)`.
pub fn draw_signatures(config: &SynthConfig) -> Result<Vec<SubjectSignature>, SyngenError> {
    let n = config.n_subjects as usize;
    if n < 2 {
        return Err(SyngenError::BadParameters("need at least 2 subjects".into()));
    }
    if !(0.0..=1.0).contains(&config.separation) {
        return Err(SyngenError::BadParameters(
            "separation must lie in [0, 1]".into(),
        ));
    }
    let mut rng = rng::seeded(derive_seed(config.master_seed, &[SIGNATURE_STREAM]));
    let ranges = config.ranges.as_array();
    let mut fields = vec![[0.0; 6]; n];
    for (d, &(lo, hi)) in ranges.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mid = 0.5 * (lo + hi);
        for (subject, &slot) in order.iter().enumerate() {
            let grid = lo + (hi - lo) * slot as f64 / (n - 1) as f64;
            fields[subject][d] = mid + config.separation * (grid - mid);
        }
    }
    let sigs: Vec<SubjectSignature> = fields.into_iter().map(SubjectSignature::from_array).collect();
    for s in &sigs {
        s.validate(config.fs)?;
    }
    Ok(sigs)
}

/// Generate a full catalog: every subject performs `trials_per_target` movements
/// to each of the nine targets, in a shuffled order. Trial ids number the
/// movements of a subject in presentation order.
pub fn synth_catalog(
    config: &SynthConfig,
) -> Result<(Catalog, Vec<SubjectSignature>), SyngenError> {
    let sigs = draw_signatures(config)?;
    let mut trials =
        Vec::with_capacity(sigs.len() * N_TARGETS * config.trials_per_target as usize);
    for (p, sig) in sigs.iter().enumerate() {
        let p = p as u32;
        let mut order: Vec<u8> = (0..N_TARGETS as u8)
            .flat_map(|t| std::iter::repeat_n(t, config.trials_per_target as usize))
            .collect();
        let mut rng = rng::seeded(derive_seed(config.master_seed, &[p as u64, SIGNATURE_STREAM]));
        order.shuffle(&mut rng);
        for (trial_id, &target) in order.iter().enumerate() {
            let trial_id = trial_id as u32;
            let seed = derive_seed(
                config.master_seed,
                &[p as u64, target as u64, trial_id as u64],
            );
            trials.push(synth_trial(
                sig,
                &config.layout,
                p,
                target,
                trial_id,
                config.fs,
                seed,
            )?);
        }
    }
    let catalog = Catalog::new(
        trials,
        format!(
            "syngen n={} k={} separation={} seed={}",
            config.n_subjects, config.trials_per_target, config.separation, config.master_seed
        ),
    )
    .map_err(|e| SyngenError::BadParameters(e.to_string()))?;
    Ok((catalog, sigs))
}

/// Write trial CSVs, `manifest.json` and `signatures.csv` into `dir`.
/// Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    catalog: &Catalog,
    signatures: &[SubjectSignature],
) -> std::io::Result<PathBuf> {
    let manifest = ingest::write_catalog(dir, catalog)?;
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("signatures.csv"))?);
    writeln!(
        out,
        "participant,duration_s,arc_height_m,lateral_curve_m,tremor_amp_m,tremor_hz,noise_sigma_m"
    )?;
    for (p, s) in signatures.iter().enumerate() {
        writeln!(
            out,
            "{p},{:?},{:?},{:?},{:?},{:?},{:?}",
            s.duration_s, s.arc_height_m, s.lateral_curve_m, s.tremor_amp_m, s.tremor_hz, s.noise_sigma_m
        )?;
    }
    out.flush()?;
    Ok(manifest)
}
