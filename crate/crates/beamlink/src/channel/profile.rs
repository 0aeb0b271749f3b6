//! Tapped-delay-line power-delay profiles (3GPP TR 38.901 TDL-A/B/C).
//!
//! Delays are normalized and scale with the desired RMS delay spread; powers
//! are renormalized so the linear tap powers sum to one (0 dB total).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdlModel {
    A,
    B,
    C,
}

impl TdlModel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(TdlModel::A),
            1 => Some(TdlModel::B),
            2 => Some(TdlModel::C),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            TdlModel::A => 0,
            TdlModel::B => 1,
            TdlModel::C => 2,
        }
    }
}

impl fmt::Display for TdlModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TdlModel::A => write!(f, "TDL-A"),
            TdlModel::B => write!(f, "TDL-B"),
            TdlModel::C => write!(f, "TDL-C"),
        }
    }
}

/// Normalized (delay, power-dB) pairs, TR 38.901 tables 7.7.2-1..3.
const TDL_A: &[(f64, f64)] = &[
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1718, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
];

const TDL_B: &[(f64, f64)] = &[
    (0.0000, 0.0),
    (0.1072, -2.2),
    (0.2155, -4.0),
    (0.2095, -3.2),
    (0.2870, -9.8),
    (0.2986, -1.2),
    (0.3752, -3.4),
    (0.5055, -5.2),
    (0.3681, -7.6),
    (0.3697, -3.0),
    (0.5700, -8.9),
    (0.5283, -9.0),
    (1.1021, -4.8),
    (1.2756, -5.7),
    (1.5474, -7.5),
    (1.7842, -1.9),
    (2.0169, -7.6),
    (2.8294, -12.2),
    (3.0219, -9.8),
    (3.6187, -11.4),
    (4.1067, -14.9),
    (4.2790, -9.2),
    (4.7834, -11.3),
];

const TDL_C: &[(f64, f64)] = &[
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

/// A tapped-delay-line profile with unit total linear power.
#[derive(Debug, Clone)]
pub struct TdlProfile {
    pub model: TdlModel,
    /// Unitless delays; multiply by the RMS delay spread to get seconds.
    pub normalized_delays: Vec<f64>,
    /// Linear tap powers summing to 1.
    pub powers: Vec<f64>,
}

impl TdlProfile {
    pub fn new(model: TdlModel) -> Self {
        let table = match model {
            TdlModel::A => TDL_A,
            TdlModel::B => TDL_B,
            TdlModel::C => TDL_C,
        };
        let normalized_delays: Vec<f64> = table.iter().map(|&(d, _)| d).collect();
        let mut powers: Vec<f64> = table.iter().map(|&(_, p)| 10f64.powf(p / 10.0)).collect();
        let total: f64 = powers.iter().sum();
        for p in powers.iter_mut() {
            *p /= total;
        }
        TdlProfile {
            model,
            normalized_delays,
            powers,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.powers.len()
    }
}
