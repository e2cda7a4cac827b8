//! Offline sEMG preprocessing: powerline notch and high-pass filtering,
//! angle resampling, Z-score standardization, sliding-window
//! segmentation, and a binary cache container for the result.

mod container;
mod filter;
mod resample;
mod window;
mod zscore;

pub use container::{load_stats, load_windows, save_stats, save_windows, NormStats};
pub use filter::{design_butter_highpass, design_notch, filt_zero_phase, BiquadCascade};
pub use resample::resample_linear;
pub use window::{segment_windows, window_params, WindowedDataset};
pub use zscore::ChannelStats;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One subject's raw capture: sEMG in millivolts and joint angles in
/// degrees, each on its own sample clock.
#[derive(Clone, Debug)]
pub struct RawRecording {
    /// [T_e × c] sEMG samples at `fs_emg` Hz.
    pub semg: Tensor,
    /// [T_a × n] joint angles at `fs_ang` Hz.
    pub angles: Tensor,
    pub subject_id: usize,
    /// Free-form capture tag (slope, speed, ...).
    pub condition: String,
    pub fs_emg: f64,
    pub fs_ang: f64,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if self.fs_emg <= 0.0 || self.fs_ang <= 0.0 {
            return Err(Error::Range {
                what: "sample rate".into(),
                value: self.fs_emg.min(self.fs_ang),
                limit: "> 0".into(),
            });
        }
        if self.semg.rank() != 2 || self.angles.rank() != 2 {
            return Err(Error::InvalidArgument(
                "recording streams must be 2-D [samples × channels]".into(),
            ));
        }
        let dur_e = self.semg.dim(0) as f64 / self.fs_emg;
        let dur_a = self.angles.dim(0) as f64 / self.fs_ang;
        let tol = (1.0 / self.fs_emg).max(1.0 / self.fs_ang);
        if (dur_e - dur_a).abs() > tol {
            return Err(Error::Contract(format!(
                "sEMG ({dur_e:.3} s) and angle ({dur_a:.3} s) durations disagree by more \
                 than one sample period"
            )));
        }
        Ok(())
    }
}

/// Filters the sEMG stream (50 Hz notch, then 4th-order 20 Hz high-pass,
/// both zero-phase), resamples angles onto the sEMG clock, and trims
/// both streams to their common length. Standardization is *not*
/// applied here: its statistics must come from the training split.
pub fn preprocess_recording(rec: &RawRecording) -> Result<(Tensor, Tensor)> {
    rec.validate()?;
    let notch = design_notch(50.0, rec.fs_emg, 35.0)?;
    let hp = design_butter_highpass(4, 20.0, rec.fs_emg)?;
    let semg = filt_zero_phase(&hp, &filt_zero_phase(&notch, &rec.semg)?)?;
    let angles = resample_linear(&rec.angles, rec.fs_ang, rec.fs_emg)?;
    let common = semg.dim(0).min(angles.dim(0));
    let trim = |x: &Tensor| {
        let c = x.dim(1);
        Tensor::new(x.values()[..common * c].to_vec(), &[common, c])
    };
    Ok((trim(&semg)?, trim(&angles)?))
}
