use crate::ingest::{Catalog, Trial};

use super::{Biquad, DspError, FilterMode, SosChain};

/// Direct-form-II-transposed state of one section.
#[derive(Debug, Clone, Copy, Default)]
struct SectionState {
    s1: f64,
    s2: f64,
}

impl SectionState {
    /// State in which a constant input `u` produces a constant output.
    fn steady(sec: &Biquad, u: f64) -> Self {
        let y = sec.dc_gain() * u;
        Self {
            s1: y - sec.b0 * u,
            s2: sec.b2 * u - sec.a2 * y,
        }
    }

    #[inline]
    fn step(&mut self, sec: &Biquad, x: f64) -> f64 {
        let y = sec.b0 * x + self.s1;
        self.s1 = sec.b1 * x - sec.a1 * y + self.s2;
        self.s2 = sec.b2 * x - sec.a2 * y;
        y
    }
}

/// Run the cascade over `x` in place. With `steady_from` set, every section
/// starts in its steady state for that constant input level; otherwise at rest.
fn run_cascade(chain: &SosChain, x: &mut [f64], steady_from: Option<f64>) {
    let mut level = steady_from.map(|u| u * chain.overall_gain);
    for v in x.iter_mut() {
        *v *= chain.overall_gain;
    }
    for sec in &chain.sections {
        let mut st = match level {
            Some(u) => SectionState::steady(sec, u),
            None => SectionState::default(),
        };
        for v in x.iter_mut() {
            *v = st.step(sec, *v);
        }
        level = level.map(|u| u * sec.dc_gain());
    }
}

/// Reflection padding length used by zero-phase filtering.
fn pad_len(chain: &SosChain, len: usize) -> usize {
    (3 * chain.order()).min(len.saturating_sub(1))
}

/// Filter one channel.
///
/// Causal mode starts from rest. Zero-phase mode extends the signal at both
/// ends by `3·order` samples of odd reflection (`2·x[0] − x[i]`), runs the
/// cascade forward and then backward from steady-state initial conditions,
/// and crops the extension again.
pub fn filter_signal(chain: &SosChain, x: &[f64], mode: FilterMode) -> Result<Vec<f64>, DspError> {
    match mode {
        FilterMode::Causal => {
            let mut y = x.to_vec();
            run_cascade(chain, &mut y, None);
            Ok(y)
        }
        FilterMode::ZeroPhase => {
            let needed = chain.order() + 1;
            if x.len() < needed {
                return Err(DspError::TooShort {
                    len: x.len(),
                    needed,
                });
            }
            let n = x.len();
            let pad = pad_len(chain, n);
            let mut ext = Vec::with_capacity(n + 2 * pad);
            ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
            ext.extend_from_slice(x);
            ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
            let first = ext[0];
            run_cascade(chain, &mut ext, Some(first));
            ext.reverse();
            let first = ext[0];
            run_cascade(chain, &mut ext, Some(first));
            ext.reverse();
            Ok(ext[pad..pad + n].to_vec())
        }
    }
}

/// Filter each channel of a trial independently.
pub fn filter_trial(chain: &SosChain, trial: &Trial, mode: FilterMode) -> Result<Trial, DspError> {
    if (trial.fs - chain.fs_hz).abs() > 1e-9 * chain.fs_hz {
        return Err(DspError::RateMismatch {
            designed: chain.fs_hz,
            actual: trial.fs,
        });
    }
    let mut out = trial.clone();
    for c in 0..3 {
        let y = filter_signal(chain, &trial.channel(c), mode)?;
        for (s, v) in out.samples.iter_mut().zip(y) {
            s[c] = v;
        }
    }
    Ok(out)
}

/// Filter every trial of a catalog, keeping order and identity.
pub fn filter_catalog(chain: &SosChain, catalog: &Catalog, mode: FilterMode) -> Result<Catalog, DspError> {
    let trials = catalog
        .trials()
        .iter()
        .map(|t| filter_trial(chain, t, mode))
        .collect::<Result<Vec<_>, _>>()?;
    Catalog::new(trials, catalog.provenance()).map_err(|e| DspError::Format(e.to_string()))
}
