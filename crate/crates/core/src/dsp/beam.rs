//! Six fixed delay-and-sum beams covering the full circle.

use crate::array::{ArrayGeometry, MultichannelClip};
use crate::dsp::fracdelay::FractionalDelay;
use crate::{Error, Result};

/// Steering directions and the per-microphone alignment filters.
#[derive(Debug, Clone)]
pub struct BeamSet {
    pub steering_azimuths_deg: Vec<f64>,
    /// Per beam, per microphone arrival delay in seconds.
    pub delays: Vec<Vec<f64>>,
    sample_rate: u32,
    filters: Vec<Vec<FractionalDelay>>,
}

impl BeamSet {
    pub const AZIMUTHS: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];

    pub fn six(geometry: &ArrayGeometry) -> Result<Self> {
        Self::with_azimuths(geometry, &Self::AZIMUTHS)
    }

    pub fn with_azimuths(geometry: &ArrayGeometry, azimuths: &[f64]) -> Result<Self> {
        geometry.validate()?;
        let delays: Vec<Vec<f64>> = azimuths
            .iter()
            .map(|&az| (0..geometry.num_mics()).map(|m| geometry.delay_seconds(m, az)).collect())
            .collect();
        let sr = geometry.sample_rate as f64;
        // compensate the arrival delay: shift mic m by -tau_m
        let filters = delays
            .iter()
            .map(|d| d.iter().map(|&tau| FractionalDelay::new(-tau * sr)).collect())
            .collect();
        Ok(Self {
            steering_azimuths_deg: azimuths.to_vec(),
            delays,
            sample_rate: geometry.sample_rate,
            filters,
        })
    }

    pub fn len(&self) -> usize {
        self.steering_azimuths_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steering_azimuths_deg.is_empty()
    }

    pub fn num_mics(&self) -> usize {
        self.delays.first().map_or(0, Vec::len)
    }

    /// Beam outputs for microphone signals given in double precision.
    pub fn apply(&self, mics: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if mics.len() != self.num_mics() {
            return Err(Error::Config(format!(
                "beam set expects {} microphones, clip has {}",
                self.num_mics(),
                mics.len()
            )));
        }
        let n = mics.first().map_or(0, Vec::len);
        let gain = 1.0 / mics.len() as f64;
        Ok(self
            .filters
            .iter()
            .map(|beam| {
                let mut out = vec![0.0; n];
                for (filter, x) in beam.iter().zip(mics) {
                    filter.accumulate(x, gain, &mut out);
                }
                out
            })
            .collect())
    }
}

/// Delay-and-sum beams for a clip: beam `b` is the average of all
/// microphones after aligning a plane wave from `steering_azimuths_deg[b]`.
pub fn beamform(clip: &MultichannelClip, beams: &BeamSet) -> Result<Vec<Vec<f64>>> {
    if clip.sample_rate != beams.sample_rate {
        return Err(Error::Config(format!(
            "clip sample rate {} does not match beam set {}",
            clip.sample_rate, beams.sample_rate
        )));
    }
    let mics: Vec<Vec<f64>> = (0..clip.num_channels()).map(|m| clip.channel_f64(m)).collect();
    beams.apply(&mics)
}
