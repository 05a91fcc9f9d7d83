use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every stimulus runs for three seconds.
pub const STIMULUS_DURATION_MS: f64 = 3000.0;

const GRAY_LEAD_MS: f64 = 500.0;

/// The eight drifting-grating orientations, in degrees.
pub const GRATING_ORIENTATIONS: [u32; 8] = [0, 45, 90, 135, 180, 225, 270, 315];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Stimulus {
    Flash,
    Movie,
    Gratings {
        orientation_deg: u32,
        temporal_freq_hz: f64,
    },
}

impl Stimulus {
    /// Drifting gratings at 2 Hz.
    pub fn gratings(orientation_deg: u32) -> Self {
        Stimulus::Gratings {
            orientation_deg,
            temporal_freq_hz: 2.0,
        }
    }

    /// The three stimuli of the experiment grid.
    pub fn standard_set() -> [Stimulus; 3] {
        [Stimulus::Flash, Stimulus::Movie, Stimulus::gratings(90)]
    }

    /// First background trial of this family's block of ten.
    pub fn bkg_family_base(&self) -> Result<u32> {
        match self {
            Stimulus::Flash => Ok(90),
            Stimulus::Movie => Ok(80),
            Stimulus::Gratings { orientation_deg, .. } => {
                let idx = orientation_index(*orientation_deg)?;
                Ok(10 * idx as u32)
            }
        }
    }

    pub fn timeline(&self, rates: &LgnRates) -> Result<StimulusTimeline> {
        match self {
            Stimulus::Flash => Ok(flash_timeline_with(rates)),
            Stimulus::Movie => Ok(movie_timeline_with(rates)),
            Stimulus::Gratings {
                orientation_deg,
                temporal_freq_hz,
            } => gratings_timeline_with(*orientation_deg, *temporal_freq_hz, rates),
        }
    }

    pub(crate) fn stream_code(&self) -> u64 {
        match self {
            Stimulus::Flash => 1,
            Stimulus::Movie => 2,
            Stimulus::Gratings { orientation_deg, .. } => 16 + u64::from(*orientation_deg),
        }
    }
}

impl fmt::Display for Stimulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stimulus::Flash => f.write_str("flash"),
            Stimulus::Movie => f.write_str("movie"),
            Stimulus::Gratings { orientation_deg, .. } => write!(f, "gratings{orientation_deg}"),
        }
    }
}

impl FromStr for Stimulus {
    type Err = Error;

    /// Accepts `flash`, `movie`, `gratings` (90 degrees) or `gratings<deg>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "flash" => Ok(Stimulus::Flash),
            "movie" => Ok(Stimulus::Movie),
            "gratings" => Ok(Stimulus::gratings(90)),
            other => {
                let deg = other
                    .strip_prefix("gratings")
                    .and_then(|d| d.trim_start_matches(':').parse::<u32>().ok())
                    .ok_or_else(|| Error::config("stimulus", format!("unknown stimulus {s:?}")))?;
                orientation_index(deg)?;
                Ok(Stimulus::gratings(deg))
            }
        }
    }
}

fn orientation_index(deg: u32) -> Result<usize> {
    GRATING_ORIENTATIONS
        .iter()
        .position(|&o| o == deg)
        .ok_or_else(|| {
            Error::config(
                "orientation_deg",
                format!("{deg} is not one of {GRATING_ORIENTATIONS:?}"),
            )
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Gray,
    OnFlash,
    OffFlash,
    MovieScene { index: u32 },
    Grating { orientation_deg: u32, temporal_freq_hz: f64 },
}

impl EventKind {
    pub fn label(&self) -> String {
        match self {
            EventKind::Gray => "gray".into(),
            EventKind::OnFlash => "on_flash".into(),
            EventKind::OffFlash => "off_flash".into(),
            EventKind::MovieScene { index } => format!("scene{index}"),
            EventKind::Grating { orientation_deg, .. } => format!("grating{orientation_deg}"),
        }
    }
}

/// Per-source firing rate (Hz) over an event. Times are measured from the
/// event's start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RateProfile {
    Constant { hz: f64 },
    /// `onset_hz` for the first `onset_ms`, then `sustained_hz`.
    Transient {
        onset_hz: f64,
        onset_ms: f64,
        sustained_hz: f64,
    },
    /// `mean_hz + amplitude_hz * sin(2π f t)`.
    Sinusoid {
        mean_hz: f64,
        amplitude_hz: f64,
        freq_hz: f64,
    },
}

impl RateProfile {
    pub fn rate_at(&self, event_start: f64, t: f64) -> f64 {
        let local = t - event_start;
        match *self {
            RateProfile::Constant { hz } => hz,
            RateProfile::Transient {
                onset_hz,
                onset_ms,
                sustained_hz,
            } => {
                if local < onset_ms {
                    onset_hz
                } else {
                    sustained_hz
                }
            }
            RateProfile::Sinusoid {
                mean_hz,
                amplitude_hz,
                freq_hz,
            } => mean_hz + amplitude_hz * (TAU * freq_hz * local / 1000.0).sin(),
        }
    }

    /// Upper bound of the rate on `[t0, t1)`.
    pub fn max_rate(&self, _t0: f64, _t1: f64) -> f64 {
        match *self {
            RateProfile::Constant { hz } => hz,
            RateProfile::Transient {
                onset_hz,
                sustained_hz,
                ..
            } => onset_hz.max(sustained_hz),
            RateProfile::Sinusoid {
                mean_hz,
                amplitude_hz,
                ..
            } => mean_hz + amplitude_hz.abs(),
        }
    }

    /// Minimum of the rate over any time.
    pub fn min_rate(&self) -> f64 {
        match *self {
            RateProfile::Constant { hz } => hz,
            RateProfile::Transient {
                onset_hz,
                sustained_hz,
                ..
            } => onset_hz.min(sustained_hz),
            RateProfile::Sinusoid {
                mean_hz,
                amplitude_hz,
                ..
            } => mean_hz - amplitude_hz.abs(),
        }
    }

    /// `∫ rate dt` over `[a, b)` in Hz·ms.
    pub fn integral(&self, event_start: f64, a: f64, b: f64) -> f64 {
        let (la, lb) = (a - event_start, b - event_start);
        match *self {
            RateProfile::Constant { hz } => hz * (b - a),
            RateProfile::Transient {
                onset_hz,
                onset_ms,
                sustained_hz,
            } => {
                let onset = (lb.min(onset_ms) - la.min(onset_ms)).max(0.0);
                onset_hz * onset + sustained_hz * ((b - a) - onset)
            }
            RateProfile::Sinusoid {
                mean_hz,
                amplitude_hz,
                freq_hz,
            } => {
                let w = TAU * freq_hz / 1000.0;
                mean_hz * (b - a) + amplitude_hz * ((w * la).cos() - (w * lb).cos()) / w
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub kind: EventKind,
    pub t_start: f64,
    pub t_end: f64,
    pub rate: RateProfile,
}

impl StimulusEvent {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusTimeline {
    pub stimulus: Stimulus,
    pub events: Vec<StimulusEvent>,
    pub total_duration: f64,
}

impl StimulusTimeline {
    /// Checks contiguity, coverage of `[0, total_duration)` and non-negative rates.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.t_start != cursor {
                return Err(Error::config(
                    format!("events[{i}].t_start"),
                    format!("expected {cursor}, found {}", ev.t_start),
                ));
            }
            if !(ev.t_start < ev.t_end) {
                return Err(Error::config(format!("events[{i}]"), "t_start must precede t_end"));
            }
            if ev.rate.min_rate() < 0.0 {
                return Err(Error::config(format!("events[{i}].rate"), "rate must be non-negative"));
            }
            cursor = ev.t_end;
        }
        if cursor != self.total_duration {
            return Err(Error::config(
                "total_duration",
                format!("events end at {cursor}, timeline claims {}", self.total_duration),
            ));
        }
        Ok(())
    }

    /// Event active at `t`, if any.
    pub fn event_at(&self, t: f64) -> Option<&StimulusEvent> {
        self.events.iter().find(|e| e.t_start <= t && t < e.t_end)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.event_at(t).map_or(0.0, |e| e.rate.rate_at(e.t_start, t))
    }
}

/// Tunable LGN rate calibration (Hz per source).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgnRates {
    pub gray: f64,
    pub on_flash: f64,
    pub off_flash: f64,
    /// Sustained rate of scenes 41, 42 and 43.
    pub movie_scenes: [f64; 3],
    pub movie_onset: f64,
    pub movie_onset_ms: f64,
    pub grating_mean: f64,
    pub grating_amplitude: f64,
}

impl Default for LgnRates {
    fn default() -> Self {
        LgnRates {
            gray: 2.0,
            on_flash: 20.0,
            off_flash: 12.0,
            movie_scenes: [12.0, 15.0, 8.0],
            movie_onset: 25.0,
            movie_onset_ms: 50.0,
            grating_mean: 10.0,
            grating_amplitude: 8.0,
        }
    }
}

impl LgnRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gray,
            self.on_flash,
            self.off_flash,
            self.movie_scenes[0],
            self.movie_scenes[1],
            self.movie_scenes[2],
            self.movie_onset,
            self.grating_mean - self.grating_amplitude.abs(),
        ];
        if all.iter().any(|r| !(*r >= 0.0)) || !(self.movie_onset_ms >= 0.0) {
            return Err(Error::config("inputs.rates", "rates must be non-negative"));
        }
        Ok(())
    }
}

fn event(kind: EventKind, t_start: f64, t_end: f64, rate: RateProfile) -> StimulusEvent {
    StimulusEvent {
        kind,
        t_start,
        t_end,
        rate,
    }
}

fn gray(t0: f64, t1: f64, rates: &LgnRates) -> StimulusEvent {
    event(EventKind::Gray, t0, t1, RateProfile::Constant { hz: rates.gray })
}

/// Gray, ON-flash, gray, OFF-flash, gray; padded with gray to 3000 ms.
pub fn flash_timeline() -> StimulusTimeline {
    flash_timeline_with(&LgnRates::default())
}

pub fn flash_timeline_with(rates: &LgnRates) -> StimulusTimeline {
    StimulusTimeline {
        stimulus: Stimulus::Flash,
        events: vec![
            gray(0.0, 500.0, rates),
            event(EventKind::OnFlash, 500.0, 750.0, RateProfile::Constant { hz: rates.on_flash }),
            gray(750.0, 1750.0, rates),
            event(EventKind::OffFlash, 1750.0, 2000.0, RateProfile::Constant { hz: rates.off_flash }),
            gray(2000.0, 2500.0, rates),
            gray(2500.0, STIMULUS_DURATION_MS, rates),
        ],
        total_duration: STIMULUS_DURATION_MS,
    }
}

/// Gray lead-in followed by scenes 41, 42 (one second each) and 43 (half a second).
pub fn movie_timeline() -> StimulusTimeline {
    movie_timeline_with(&LgnRates::default())
}

pub fn movie_timeline_with(rates: &LgnRates) -> StimulusTimeline {
    let scene = |index: u32, t0: f64, t1: f64, sustained: f64| {
        event(
            EventKind::MovieScene { index },
            t0,
            t1,
            RateProfile::Transient {
                onset_hz: rates.movie_onset,
                onset_ms: rates.movie_onset_ms,
                sustained_hz: sustained,
            },
        )
    };
    StimulusTimeline {
        stimulus: Stimulus::Movie,
        events: vec![
            gray(0.0, GRAY_LEAD_MS, rates),
            scene(41, 500.0, 1500.0, rates.movie_scenes[0]),
            scene(42, 1500.0, 2500.0, rates.movie_scenes[1]),
            scene(43, 2500.0, STIMULUS_DURATION_MS, rates.movie_scenes[2]),
        ],
        total_duration: STIMULUS_DURATION_MS,
    }
}

/// Gray lead-in followed by 2500 ms of drifting gratings.
pub fn gratings_timeline(orientation_deg: u32, temporal_freq_hz: f64) -> Result<StimulusTimeline> {
    gratings_timeline_with(orientation_deg, temporal_freq_hz, &LgnRates::default())
}

pub fn gratings_timeline_with(
    orientation_deg: u32,
    temporal_freq_hz: f64,
    rates: &LgnRates,
) -> Result<StimulusTimeline> {
    orientation_index(orientation_deg)?;
    if !(temporal_freq_hz > 0.0 && temporal_freq_hz.is_finite()) {
        return Err(Error::config("temporal_freq_hz", "must be positive"));
    }
    Ok(StimulusTimeline {
        stimulus: Stimulus::Gratings {
            orientation_deg,
            temporal_freq_hz,
        },
        events: vec![
            gray(0.0, GRAY_LEAD_MS, rates),
            event(
                EventKind::Grating {
                    orientation_deg,
                    temporal_freq_hz,
                },
                GRAY_LEAD_MS,
                STIMULUS_DURATION_MS,
                RateProfile::Sinusoid {
                    mean_hz: rates.grating_mean,
                    amplitude_hz: rates.grating_amplitude,
                    freq_hz: temporal_freq_hz,
                },
            ),
        ],
        total_duration: STIMULUS_DURATION_MS,
    })
}
