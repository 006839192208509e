//! Bistatic two-sphere geometry: two scatterers at the ends of a rotating
//! beam, illuminated by a transmitter and observed by a separate receiver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BistaticScenario {
    pub tx_pos: Vec3,
    pub rx_pos: Vec3,
    /// Pivot of the beam; the beam rotates in the horizontal plane through it.
    pub rotation_center: Vec3,
    /// Full beam length; spheres sit at radius `beam_length / 2`.
    pub beam_length: f64,
    pub rpm: f64,
    pub carrier_hz: f64,
    pub start_angle_deg: f64,
}

impl Default for BistaticScenario {
    /// Anechoic-chamber layout: 2.24 m Tx-Rx baseline, 3 m beam at 60 rpm,
    /// 5.9 GHz carrier. The pivot position is not documented; it is placed
    /// 2.5 m off the baseline so the spheres never cross the direct path.
    fn default() -> Self {
        Self {
            tx_pos: [-1.12, 0.0, 0.0],
            rx_pos: [1.12, 0.0, 0.0],
            rotation_center: [0.0, 2.5, 0.0],
            beam_length: 3.0,
            rpm: 60.0,
            carrier_hz: 5.9e9,
            start_angle_deg: 0.0,
        }
    }
}

/// Delay and Doppler of one sphere sampled at the requested instants.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereTrajectory {
    pub times: Vec<f64>,
    /// Bistatic delay in seconds.
    pub delays_s: Vec<f64>,
    /// Doppler shift in Hz.
    pub dopplers_hz: Vec<f64>,
}

impl BistaticScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.beam_length > 0.0) {
            return Err(Error::Validation("beam length must be positive".into()));
        }
        if !self.rpm.is_finite() || !self.carrier_hz.is_finite() || self.carrier_hz <= 0.0 {
            return Err(Error::Validation("rpm and carrier must be finite, carrier positive".into()));
        }
        if norm(sub(self.tx_pos, self.rx_pos)) == 0.0 {
            return Err(Error::Validation("transmitter and receiver must not coincide".into()));
        }
        Ok(())
    }

    /// Direct-path delay in seconds.
    pub fn los_delay(&self) -> f64 {
        norm(sub(self.tx_pos, self.rx_pos)) / SPEED_OF_LIGHT
    }

    fn angular_rate(&self) -> f64 {
        self.rpm / 60.0 * std::f64::consts::TAU
    }

    /// Position and velocity of sphere `index` (0 or 1) at time `t`.
    fn kinematics(&self, index: usize, t: f64) -> (Vec3, Vec3) {
        let r = self.beam_length / 2.0;
        let w = self.angular_rate();
        let phi = self.start_angle_deg.to_radians() + w * t + index as f64 * std::f64::consts::PI;
        let c = self.rotation_center;
        let pos = [c[0] + r * phi.cos(), c[1] + r * phi.sin(), c[2]];
        let vel = [-r * w * phi.sin(), r * w * phi.cos(), 0.0];
        (pos, vel)
    }

    /// Tx → sphere → Rx path length in meters.
    pub fn path_length(&self, index: usize, t: f64) -> f64 {
        let (p, _) = self.kinematics(index, t);
        norm(sub(p, self.tx_pos)) + norm(sub(p, self.rx_pos))
    }

    /// Time derivative of the bistatic path length in m/s.
    pub fn path_rate(&self, index: usize, t: f64) -> f64 {
        let (p, v) = self.kinematics(index, t);
        let to_tx = sub(p, self.tx_pos);
        let to_rx = sub(p, self.rx_pos);
        dot(to_tx, v) / norm(to_tx) + dot(to_rx, v) / norm(to_rx)
    }
}

/// Delay/Doppler trajectories of both spheres (π apart on the beam).
pub fn sphere_scenario(scn: &BistaticScenario, times: &[f64]) -> Result<[SphereTrajectory; 2]> {
    scn.validate()?;
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("times must be strictly increasing".into()));
    }
    let track = |index: usize| SphereTrajectory {
        times: times.to_vec(),
        delays_s: times.iter().map(|&t| scn.path_length(index, t) / SPEED_OF_LIGHT).collect(),
        dopplers_hz: times
            .iter()
            .map(|&t| -scn.carrier_hz / SPEED_OF_LIGHT * scn.path_rate(index, t))
            .collect(),
    };
    Ok([track(0), track(1)])
}
