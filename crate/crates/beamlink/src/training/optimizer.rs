//! Layerwise-adaptive optimizer: per-tensor first/second moments with bias
//! correction, scaled by the trust ratio ||theta|| / ||update||. A plain
//! adaptive-moment mode (trust ratio forced to 1) is available as fallback.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::Param;

pub const OPT_MAGIC: [u8; 4] = *b"DTXO";
pub const OPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct LambConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_trust_ratio: f64,
    /// Skip the layerwise trust ratio (plain adaptive moments).
    pub adam_only: bool,
}

impl Default for LambConfig {
    fn default() -> Self {
        LambConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
            max_trust_ratio: 10.0,
            adam_only: false,
        }
    }
}

#[derive(Debug)]
pub struct Lamb<R: Real> {
    pub config: LambConfig,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    step_count: u64,
}

impl<R: Real> Lamb<R> {
    pub fn new(config: LambConfig, params: &[Param<R>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Lamb {
            config,
            m,
            v,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameters; `grads[i]` pairs with `params[i]`
    /// (missing gradients leave the parameter untouched).
    pub fn step(
        &mut self,
        params: &mut [Param<R>],
        grads: &[Option<Tensor<R>>],
        lr: f64,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let beta1 = R::from_f64_lossy(c.beta1);
        let beta2 = R::from_f64_lossy(c.beta2);
        let one = R::one();

        for (i, p) in params.iter_mut().enumerate() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if !g.all_finite() {
                return Err(Error::NonFiniteGrad {
                    name: p.name.clone(),
                });
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let gd = g.data();
            let mut update = vec![R::zero(); gd.len()];
            let mut norm_theta = 0.0f64;
            let mut norm_update = 0.0f64;
            for j in 0..gd.len() {
                m[j] = beta1 * m[j] + (one - beta1) * gd[j];
                v[j] = beta2 * v[j] + (one - beta2) * gd[j] * gd[j];
                let m_hat = m[j].to_f64_lossy() / bc1;
                let v_hat = v[j].to_f64_lossy() / bc2;
                let mut u = m_hat / (v_hat.sqrt() + c.eps);
                if c.weight_decay != 0.0 {
                    u += c.weight_decay * p.value.data()[j].to_f64_lossy();
                }
                update[j] = R::from_f64_lossy(u);
                norm_update += u * u;
                norm_theta += p.value.data()[j].to_f64_lossy().powi(2);
            }
            let norm_theta = norm_theta.sqrt();
            let norm_update = norm_update.sqrt();
            let ratio = if c.adam_only || norm_theta == 0.0 || norm_update == 0.0 {
                1.0
            } else {
                (norm_theta / norm_update).min(c.max_trust_ratio)
            };
            let step = R::from_f64_lossy(lr * ratio);
            for (w, &u) in p.value.data_mut().iter_mut().zip(&update) {
                *w -= step * u;
            }
        }
        Ok(())
    }

    /// Persist moments and step count (f32 planes) next to a checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(&OPT_MAGIC)?;
        w.write_all(&OPT_VERSION.to_le_bytes())?;
        w.write_all(&self.step_count.to_le_bytes())?;
        w.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for (m, v) in self.m.iter().zip(&self.v) {
            w.write_all(&(m.numel() as u32).to_le_bytes())?;
            for &x in m.data() {
                w.write_all(&(x.to_f64_lossy() as f32).to_le_bytes())?;
            }
            for &x in v.data() {
                w.write_all(&(x.to_f64_lossy() as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Restore a sidecar saved by [`Lamb::save`]; shapes come from `params`.
    pub fn load(
        path: impl AsRef<Path>,
        config: LambConfig,
        params: &[Param<R>],
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != OPT_MAGIC {
            return Err(Error::BadMagic {
                path: path.display().to_string(),
                expected: OPT_MAGIC,
            });
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != OPT_VERSION {
            return Err(Error::BadVersion {
                path: path.display().to_string(),
                found: version,
                expected: OPT_VERSION,
            });
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let step_count = u64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if n != params.len() {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                detail: format!("{n} moment tensors vs {} parameters", params.len()),
            });
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for p in params {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            if len != p.value.numel() {
                return Err(Error::CorruptFile {
                    path: path.display().to_string(),
                    detail: format!("moment length {len} vs parameter {}", p.name),
                });
            }
            let mut read_plane = |len: usize| -> Result<Vec<R>> {
                let mut buf = vec![0u8; len * 4];
                r.read_exact(&mut buf)?;
                Ok(buf
                    .chunks_exact(4)
                    .map(|c| R::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect())
            };
            m.push(Tensor::from_vec(p.value.shape(), read_plane(len)?));
            v.push(Tensor::from_vec(p.value.shape(), read_plane(len)?));
        }
        Ok(Lamb {
            config,
            m,
            v,
            step_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(name: &str, data: Vec<f64>) -> Param<f64> {
        Param {
            name: name.into(),
            value: Tensor::from_vec(&[data.len()], data),
        }
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut params = vec![param("a", vec![1.0, -2.0])];
        let mut opt = Lamb::new(LambConfig::default(), &params);
        opt.step(&mut params, &[None], 0.1).unwrap();
        assert_eq!(params[0].value.data(), &[1.0, -2.0]);
        // explicit zero gradient also leaves the parameter in place
        let zeros = Some(Tensor::zeros(&[2]));
        opt.step(&mut params, &[zeros], 0.1).unwrap();
        assert_eq!(params[0].value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn descends_quadratic() {
        let mut params = vec![param("theta", vec![1.0])];
        let mut opt = Lamb::new(LambConfig::default(), &params);
        let mut value = 1.0f64;
        for _ in 0..200 {
            let grad = Some(Tensor::from_vec(&[1], vec![2.0 * value]));
            opt.step(&mut params, &[grad], 0.05).unwrap();
            value = params[0].value.data()[0];
        }
        assert!(value * value < 1.0, "f did not decrease: {value}");
    }

    #[test]
    fn trust_ratio_unity_when_norms_match() {
        // first step, beta moments collapse to the gradient itself:
        // update = g / (|g| + eps) elementwise -> unit-ish; craft norms equal
        let cfg = LambConfig {
            eps: 0.0,
            ..Default::default()
        };
        let mut params = vec![param("w", vec![3.0, 4.0])];
        let mut opt = Lamb::new(cfg, &params);
        // any gradient gives update entries +-1 on the first step (sign of g),
        // so ||update|| = sqrt(2); scale theta to the same norm
        params[0].value = Tensor::from_vec(&[2], vec![1.0, 1.0]);
        let g = Some(Tensor::from_vec(&[2], vec![0.5, -0.25]));
        opt.step(&mut params, &[g], 0.1).unwrap();
        // theta -= lr * 1.0 * sign(g)
        let got = params[0].value.data();
        assert!((got[0] - (1.0 - 0.1)).abs() < 1e-12);
        assert!((got[1] - (1.0 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn layerwise_scale_invariance_of_direction() {
        // scaling theta and grad by c > 0 leaves the update direction and
        // the relative step unchanged (eps = 0, wd = 0, no ratio clamp)
        let cfg = LambConfig {
            eps: 0.0,
            max_trust_ratio: f64::INFINITY,
            ..Default::default()
        };
        let theta = vec![0.6, -1.1, 2.2];
        let grad = vec![0.3, 0.9, -0.2];
        let run = |c: f64| {
            let mut params = vec![param("w", theta.iter().map(|&x| c * x).collect())];
            let mut opt = Lamb::new(cfg, &params);
            let g = Some(Tensor::from_vec(&[3], grad.iter().map(|&x| c * x).collect()));
            opt.step(&mut params, &[g], 0.01).unwrap();
            // relative parameter change
            params[0]
                .value
                .data()
                .iter()
                .zip(&theta)
                .map(|(&after, &before)| after / c - before)
                .collect::<Vec<f64>>()
        };
        let base = run(1.0);
        for c in [0.1, 7.0, 120.0] {
            let scaled = run(c);
            for (a, b) in base.iter().zip(&scaled) {
                assert!((a - b).abs() < 1e-9, "c={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = vec![param("conv.w", vec![1.0])];
        let mut opt = Lamb::new(LambConfig::default(), &params);
        let g = Some(Tensor::from_vec(&[1], vec![f64::NAN]));
        let err = opt.step(&mut params, &[g], 0.1).unwrap_err();
        match err {
            Error::NonFiniteGrad { name } => assert_eq!(name, "conv.w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.dtxo");
        let mut params = vec![param("a", vec![1.0f64, 2.0]), param("b", vec![3.0])];
        let mut opt = Lamb::new(LambConfig::default(), &params);
        let g0 = Some(Tensor::from_vec(&[2], vec![0.1, -0.2]));
        let g1 = Some(Tensor::from_vec(&[1], vec![0.3]));
        opt.step(&mut params, &[g0, g1], 0.01).unwrap();
        opt.save(&path).unwrap();
        let loaded = Lamb::<f64>::load(&path, LambConfig::default(), &params).unwrap();
        assert_eq!(loaded.step_count(), 1);
        for (a, b) in loaded.m.iter().zip(&opt.m) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((*x as f32 - *y as f32).abs() == 0.0);
            }
        }
    }
}
