//! Deterministic multi-subject gait cohort. Joint angles are
//! phase-shifted sinusoid mixtures of a common gait phase with
//! hip/knee/ankle-like amplitude profiles; sEMG channels are
//! band-limited noise carriers amplitude-modulated by phase-locked
//! activation envelopes. The envelope timing and burst shape form a
//! cohort-wide synergy template (with small per-subject deviations), so
//! the envelope-pattern → joint-angle relationship transfers across
//! subjects, while channel gains, spectral tilt, and the full-rank
//! channel mixing stay subject-specific, keeping identity decodable.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::dsp::RawRecording;
use crate::error::{Error, Result};

/// Cohort description. `fs` is the sEMG rate; angles are produced at
/// `fs / 5` (500 Hz sEMG pairs with 100 Hz kinematics), which exercises
/// the resampling stage of preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub gait_period_s: f64,
    pub fs: f64,
    pub duration_s: f64,
    pub n_channels: usize,
    pub n_joints: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 4,
            gait_period_s: 1.2,
            fs: 500.0,
            duration_s: 60.0,
            n_channels: 5,
            n_joints: 3,
            noise_level: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_channels == 0 || self.n_joints == 0 {
            return Err(Error::Config(
                "cohort needs at least one subject, channel, and joint".into(),
            ));
        }
        for (name, v) in [
            ("gait_period_s", self.gait_period_s),
            ("fs", self.fs),
            ("duration_s", self.duration_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Range {
                    what: format!("synthesis {name}"),
                    value: v,
                    limit: "> 0 and finite".into(),
                });
            }
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::Range {
                what: "synthesis noise_level".into(),
                value: self.noise_level,
                limit: "≥ 0 and finite".into(),
            });
        }
        Ok(())
    }

    /// Kinematics sample rate.
    pub fn fs_ang(&self) -> f64 {
        self.fs / 5.0
    }
}

/// (center, fundamental amplitude, second-harmonic amplitude) in
/// degrees for hip-, knee-, and ankle-like joints; extra joints cycle
/// through the three profiles. Chosen so every mixture stays inside
/// [−30°, 90°] before the safety clamp.
const JOINT_PROFILES: [(f64, f64, f64); 3] = [
    (12.0, 18.0, 3.0),
    (32.0, 26.0, 6.0),
    (0.0, 18.0, 4.0),
];

const ANGLE_MIN: f64 = -30.0;
const ANGLE_MAX: f64 = 90.0;

/// Subject-specific channel mixing: identity plus bounded off-diagonal
/// noise, strictly diagonally dominant and therefore always invertible.
pub fn mixing_matrix(c: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = if c > 1 { 0.8 / (c - 1) as f64 } else { 0.0 };
    let mut m = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            m[i * c + j] = if i == j {
                1.0
            } else {
                rng.gen_range(-bound..bound)
            };
        }
    }
    m
}

/// Band-limited (20–150 Hz) noise carrier: a fixed-size bank of random
/// sinusoids, which keeps the spectrum inside the band by construction.
/// `tilt` skews the amplitude distribution across the band (positive
/// favors high frequencies), modeling per-subject electrode and tissue
/// filtering — a cue that survives per-channel standardization.
fn carrier_bank(rng: &mut impl Rng, components: usize, tilt: f64) -> Vec<(f64, f64, f64)> {
    (0..components)
        .map(|_| {
            let f = rng.gen_range(20.0..150.0);
            let shape = 1.0 + tilt * (f - 85.0) / 65.0;
            (
                f,
                shape * rng.gen_range(0.5..1.5) / (components as f64).sqrt(),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect()
}

/// Generates the whole cohort; one recording per subject, identical
/// output for identical specs.
pub fn generate_synthetic_cohort(spec: &SynthSpec) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs_ang = spec.fs_ang();
    let t_emg = (spec.duration_s * spec.fs).round() as usize;
    let t_ang = (spec.duration_s * fs_ang).round() as usize;
    let (c, n) = (spec.n_channels, spec.n_joints);
    let mut cohort = Vec::with_capacity(spec.n_subjects);

    // Cohort-wide muscle-synergy template: when each channel bursts
    // within the gait cycle and how sharply. Subjects deviate only
    // mildly from it, so one gait-phase decoder works for everyone.
    let base_env_phase: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let base_env_power: Vec<f64> = (0..c).map(|_| rng.gen_range(1.5..4.0)).collect();

    for subject in 0..spec.n_subjects {
        // Subject idiosyncrasies: gait phase offset, per-joint phase
        // tweaks, envelope deviations, spectral tilt, channel gains,
        // and the mixer.
        let subject_phase = rng.gen_range(0.0..2.0 * PI);
        let joint_phase: Vec<f64> = (0..n)
            .map(|j| j as f64 * 0.6 * PI + rng.gen_range(-0.1..0.1))
            .collect();
        let env_phase: Vec<f64> = base_env_phase
            .iter()
            .map(|p| p + rng.gen_range(-0.15..0.15))
            .collect();
        let env_power: Vec<f64> = base_env_power
            .iter()
            .map(|p| (p + rng.gen_range(-0.2..0.2)).max(1.0))
            .collect();
        let env_gain: Vec<f64> = (0..c).map(|_| rng.gen_range(0.7..1.3)).collect();
        let tilt = rng.gen_range(-0.4..0.4);
        let mix = mixing_matrix(c, &mut rng);
        let banks: Vec<Vec<(f64, f64, f64)>> =
            (0..c).map(|_| carrier_bank(&mut rng, 24, tilt)).collect();

        let mut angles = vec![0.0; t_ang * n];
        for i in 0..t_ang {
            let phi = 2.0 * PI * i as f64 / (spec.gait_period_s * fs_ang) + subject_phase;
            for j in 0..n {
                let (center, amp, harm) = JOINT_PROFILES[j % JOINT_PROFILES.len()];
                let v = center
                    + amp * (phi + joint_phase[j]).sin()
                    + harm * (2.0 * phi + joint_phase[j]).sin();
                angles[i * n + j] = v.clamp(ANGLE_MIN, ANGLE_MAX);
            }
        }

        // Per-channel gait-locked sources, then the channel mixer.
        let mut sources = vec![0.0; t_emg * c];
        for ch in 0..c {
            for i in 0..t_emg {
                let phi =
                    2.0 * PI * i as f64 / (spec.gait_period_s * spec.fs) + subject_phase;
                let burst = 0.5 + 0.5 * (phi + env_phase[ch]).sin();
                let envelope = env_gain[ch] * (0.15 + 0.85 * burst.powf(env_power[ch]));
                let t_s = i as f64 / spec.fs;
                let carrier: f64 = banks[ch]
                    .iter()
                    .map(|(f, a, theta)| a * (2.0 * PI * f * t_s + theta).sin())
                    .sum();
                sources[i * c + ch] = envelope * carrier;
            }
        }
        let mut semg = vec![0.0; t_emg * c];
        for i in 0..t_emg {
            let row = &sources[i * c..(i + 1) * c];
            for out_ch in 0..c {
                let mixed: f64 = (0..c)
                    .map(|j| mix[out_ch * c + j] * row[j])
                    .sum();
                semg[i * c + out_ch] =
                    mixed + spec.noise_level * rng.gen_range(-1.0..1.0);
            }
        }

        cohort.push(RawRecording {
            semg: Tensor::new(semg, &[t_emg, c])?,
            angles: Tensor::new(angles, &[t_ang, n])?,
            subject_id: subject,
            condition: "synthetic-gait".into(),
            fs_emg: spec.fs,
            fs_ang,
        });
    }
    Ok(cohort)
}
