use serde::{Deserialize, Serialize};

use crate::{Error, Result, SAMPLE_RATE};

/// Radius of the six-microphone ring in meters.
pub const RING_RADIUS_M: f64 = 0.042;
const POSITION_TOL: f64 = 1e-9;

/// Planar microphone array: one center (omni) microphone plus a ring of six.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 2]>,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::smart_speaker()
    }
}

impl ArrayGeometry {
    /// Center mic at the origin, ring mics at 0°, 60°, …, 300°.
    pub fn smart_speaker() -> Self {
        let mut mic_positions = vec![[0.0, 0.0]];
        for m in 0..6 {
            let a = (60.0 * m as f64).to_radians();
            mic_positions.push([RING_RADIUS_M * a.cos(), RING_RADIUS_M * a.sin()]);
        }
        Self {
            mic_positions,
            sample_rate: SAMPLE_RATE,
            speed_of_sound: 343.0,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Largest microphone distance from the origin.
    pub fn radius(&self) -> f64 {
        self.mic_positions
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.len() != 7 {
            return Err(Error::Geometry(format!(
                "expected 7 microphones, got {}",
                self.mic_positions.len()
            )));
        }
        if self.mic_positions[0] != [0.0, 0.0] {
            return Err(Error::Geometry("microphone 0 must sit at the origin".into()));
        }
        let mut prev_angle: Option<f64> = None;
        for (m, p) in self.mic_positions.iter().enumerate().skip(1) {
            let r = p[0].hypot(p[1]);
            if (r - RING_RADIUS_M).abs() > POSITION_TOL {
                return Err(Error::Geometry(format!("mic {m} at radius {r}")));
            }
            let angle = p[1].atan2(p[0]).to_degrees();
            if let Some(prev) = prev_angle {
                let step = (angle - prev).rem_euclid(360.0);
                if (step - 60.0).abs() > 1e-6 {
                    return Err(Error::Geometry(format!("mic {m} spacing {step}°")));
                }
            }
            prev_angle = Some(angle);
        }
        if !(self.speed_of_sound > 0.0) || self.sample_rate == 0 {
            return Err(Error::Geometry("non-positive speed of sound or sample rate".into()));
        }
        Ok(())
    }

    /// Plane-wave arrival delay at `mic` relative to the center, in seconds,
    /// for a far-field source at `azimuth_deg`: `-(r_m · u) / c`.
    pub fn delay_seconds(&self, mic: usize, azimuth_deg: f64) -> f64 {
        let a = azimuth_deg.to_radians();
        let p = self.mic_positions[mic];
        -(p[0] * a.cos() + p[1] * a.sin()) / self.speed_of_sound
    }

    pub fn delay_samples(&self, mic: usize, azimuth_deg: f64) -> f64 {
        self.delay_seconds(mic, azimuth_deg) * self.sample_rate as f64
    }

    /// Delays of all microphones in samples.
    pub fn steering_delays(&self, azimuth_deg: f64) -> Vec<f64> {
        (0..self.num_mics())
            .map(|m| self.delay_samples(m, azimuth_deg))
            .collect()
    }
}
