//! Time-evolving channel realizations from a TDL profile with Jakes Doppler.
//!
//! Each tap gain per antenna pair evolves as a Gaussian-weighted sum of
//! sinusoids; the channel is piecewise-constant per OFDM symbol. Frequency
//! responses come from the tap delays directly: a single complex tap per
//! subcarrier (no ISI/ICI).

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::profile::{TdlModel, TdlProfile};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;
const SINUSOIDS_PER_TAP: usize = 32;

/// OFDM numerology shared by channel rendering and the PHY chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// OFDM symbols per slot.
    pub s: usize,
    /// Subcarriers.
    pub f: usize,
    /// Subcarrier spacing in Hz.
    pub scs_hz: f64,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Slot duration in seconds.
    pub slot_duration_s: f64,
    /// Base-station antennas.
    pub n_rx: usize,
    /// MIMO layers / UE antennas.
    pub n_tx: usize,
}

impl GridSpec {
    /// Table defaults at desk scale: `prbs` resource blocks of 12 subcarriers.
    pub fn desk(prbs: usize) -> Self {
        GridSpec {
            s: 14,
            f: prbs * 12,
            scs_hz: 30e3,
            carrier_hz: 4e9,
            slot_duration_s: 0.5e-3,
            n_rx: 4,
            n_tx: 2,
        }
    }

    pub fn symbol_duration_s(&self) -> f64 {
        self.slot_duration_s / self.s as f64
    }

    /// Subcarrier baseband frequency, centered on the grid.
    pub fn subcarrier_hz(&self, idx: usize) -> f64 {
        (idx as f64 - self.f as f64 / 2.0) * self.scs_hz
    }

    pub fn res_per_slot(&self) -> usize {
        self.s * self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationMeta {
    pub model: TdlModel,
    pub delay_spread_ns: f32,
    pub velocity_kmh: f32,
    pub seed: u64,
    /// Set when parameters fall outside the validated ranges
    /// (10-300 ns, 0-30 km/h); generation still proceeds.
    pub out_of_range: bool,
}

/// Frequency responses for consecutive slots: `[n_slots][s][f][n_rx][n_tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub meta: RealizationMeta,
    pub n_slots: usize,
    pub s: usize,
    pub f: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub data: Vec<Complex<f32>>,
}

impl ChannelRealization {
    #[inline]
    pub fn at(&self, slot: usize, sym: usize, sc: usize, rx: usize, tx: usize) -> Complex<f32> {
        let idx = (((slot * self.s + sym) * self.f + sc) * self.n_rx + rx) * self.n_tx + tx;
        self.data[idx]
    }

    fn slot_slice(&self, slot: usize) -> &[Complex<f32>] {
        let n = self.s * self.f * self.n_rx * self.n_tx;
        &self.data[slot * n..(slot + 1) * n]
    }

    /// Uplink-orientation tensor [s, f, n_rx, n_tx, 2] for one slot.
    pub fn slot_tensor<R: Real>(&self, slot: usize) -> Tensor<R> {
        let src = self.slot_slice(slot);
        let mut data = Vec::with_capacity(src.len() * 2);
        for v in src {
            data.push(R::from_f64_lossy(v.re as f64));
            data.push(R::from_f64_lossy(v.im as f64));
        }
        Tensor::from_vec(&[self.s, self.f, self.n_rx, self.n_tx, 2], data)
    }

    /// Downlink-orientation tensor [s, f, n_tx, n_rx, 2] for one slot: the
    /// per-RE transpose of the stored uplink response (TDD reciprocity).
    pub fn slot_tensor_transposed<R: Real>(&self, slot: usize) -> Tensor<R> {
        let mut data = vec![R::zero(); self.s * self.f * self.n_rx * self.n_tx * 2];
        let mut i = 0;
        for sym in 0..self.s {
            for sc in 0..self.f {
                for tx in 0..self.n_tx {
                    for rx in 0..self.n_rx {
                        let v = self.at(slot, sym, sc, rx, tx);
                        data[i] = R::from_f64_lossy(v.re as f64);
                        data[i + 1] = R::from_f64_lossy(v.im as f64);
                        i += 2;
                    }
                }
            }
        }
        Tensor::from_vec(&[self.s, self.f, self.n_tx, self.n_rx, 2], data)
    }

    /// Mean of |H|^2 over all stored entries (normalization diagnostic).
    pub fn mean_power(&self) -> f64 {
        let total: f64 = self.data.iter().map(|v| v.norm_sqr() as f64).sum();
        total / self.data.len() as f64
    }
}

/// Uplink/downlink channel pair for a prediction length `tau`:
/// H_UL at slot 0 in [s, f, n_rx, n_tx, 2], H_DL at slot `tau` transposed.
pub fn slot_pair<R: Real>(
    realization: &ChannelRealization,
    tau: usize,
) -> Result<(Tensor<R>, Tensor<R>)> {
    if tau < 1 || tau >= realization.n_slots {
        return Err(Error::TauOutOfRange {
            tau,
            max: realization.n_slots - 1,
        });
    }
    Ok((
        realization.slot_tensor(0),
        realization.slot_tensor_transposed(tau),
    ))
}

pub fn max_doppler_hz(velocity_kmh: f64, carrier_hz: f64) -> f64 {
    velocity_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

struct TapOscillators {
    amp: Vec<Complex<f64>>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

impl TapOscillators {
    fn draw(rng: &mut ChaCha8Rng, f_d: f64) -> Self {
        let n = SINUSOIDS_PER_TAP;
        let mut amp = Vec::with_capacity(n);
        let mut freq = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for _ in 0..n {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            amp.push(Complex::new(re, im));
            let angle: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            freq.push(f_d * angle.cos());
            phase.push(rng.gen_range(0.0..std::f64::consts::TAU));
        }
        TapOscillators { amp, freq, phase }
    }

    fn gain_at(&self, t: f64) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for i in 0..self.amp.len() {
            let psi = std::f64::consts::TAU * self.freq[i] * t + self.phase[i];
            acc += self.amp[i] * Complex::new(psi.cos(), psi.sin());
        }
        acc / (2.0 * self.amp.len() as f64).sqrt()
    }
}

/// Generate one realization: deterministic in `seed`.
///
/// Tap gains are renormalized so the total path-gain power averaged over the
/// stored time span is exactly 0 dB.
pub fn generate_realization(
    profile: &TdlProfile,
    delay_spread_ns: f64,
    velocity_kmh: f64,
    grid: &GridSpec,
    n_slots: usize,
    seed: u64,
) -> Result<ChannelRealization> {
    if n_slots < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_slots must be >= 2, got {n_slots}"
        )));
    }
    let out_of_range = !(10.0..=300.0).contains(&delay_spread_ns)
        || !(0.0..=30.0).contains(&velocity_kmh);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_d = max_doppler_hz(velocity_kmh, grid.carrier_hz);
    let n_taps = profile.n_taps();
    let (n_rx, n_tx) = (grid.n_rx, grid.n_tx);
    let pairs = n_rx * n_tx;

    // i.i.d. oscillators per (tap, rx, tx)
    let mut oscillators = Vec::with_capacity(n_taps * pairs);
    for _ in 0..n_taps * pairs {
        oscillators.push(TapOscillators::draw(&mut rng, f_d));
    }

    let n_times = n_slots * grid.s;
    let t_sym = grid.symbol_duration_s();

    // g[time][tap][pair], scaled by sqrt(tap power)
    let mut gains = vec![Complex::new(0.0f64, 0.0); n_times * n_taps * pairs];
    for (ti, g_t) in gains.chunks_mut(n_taps * pairs).enumerate() {
        let t = ti as f64 * t_sym;
        for tap in 0..n_taps {
            let scale = profile.powers[tap].sqrt();
            for p in 0..pairs {
                g_t[tap * pairs + p] = oscillators[tap * pairs + p].gain_at(t) * scale;
            }
        }
    }

    // normalize: time-averaged total path-gain power (per antenna pair) = 1
    let total: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
    let mean_power = total / (n_times * pairs) as f64;
    let norm = mean_power.sqrt().recip();
    for g in gains.iter_mut() {
        *g *= norm;
    }

    // per-(tap, subcarrier) steering: exp(-j 2 pi f_sc d_tap)
    let ds_s = delay_spread_ns * 1e-9;
    let mut steer = vec![Complex::new(0.0f64, 0.0); n_taps * grid.f];
    for tap in 0..n_taps {
        let delay = profile.normalized_delays[tap] * ds_s;
        for sc in 0..grid.f {
            let phi = -std::f64::consts::TAU * grid.subcarrier_hz(sc) * delay;
            steer[tap * grid.f + sc] = Complex::new(phi.cos(), phi.sin());
        }
    }

    let mut rendered = vec![Complex::new(0.0f64, 0.0); n_times * grid.f * pairs];
    for ti in 0..n_times {
        let g_t = &gains[ti * n_taps * pairs..(ti + 1) * n_taps * pairs];
        for sc in 0..grid.f {
            let base = (ti * grid.f + sc) * pairs;
            for p in 0..pairs {
                let mut acc = Complex::new(0.0f64, 0.0);
                for tap in 0..n_taps {
                    acc += g_t[tap * pairs + p] * steer[tap * grid.f + sc];
                }
                rendered[base + p] = acc;
            }
        }
    }

    // On narrow grids the whole band can sit inside one coherence bandwidth,
    // so the per-RE power of a single realization deviates from the path-gain
    // normalization. Re-scale once more so the stored mean |H|^2 is 0 dB.
    let re_power: f64 =
        rendered.iter().map(|v| v.norm_sqr()).sum::<f64>() / rendered.len() as f64;
    let re_norm = re_power.sqrt().recip();
    let data: Vec<Complex<f32>> = rendered
        .iter()
        .map(|v| Complex::new((v.re * re_norm) as f32, (v.im * re_norm) as f32))
        .collect();

    Ok(ChannelRealization {
        meta: RealizationMeta {
            model: profile.model,
            delay_spread_ns: delay_spread_ns as f32,
            velocity_kmh: velocity_kmh as f32,
            seed,
            out_of_range,
        },
        n_slots,
        s: grid.s,
        f: grid.f,
        n_rx,
        n_tx,
        data,
    })
}
