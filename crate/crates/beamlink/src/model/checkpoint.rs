//! Model checkpoints: config echo plus named parameter tensors and norm
//! buffers, little-endian 32-bit floats. Round trips are bit-exact for f32
//! models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{BlockSpec, ModelConfig};
use super::net::{Param, PredictorNet};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: [u8; 4] = *b"DTXM";
pub const CKPT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_f32_slice<R: Real>(w: &mut impl Write, data: &[R]) -> Result<()> {
    for &v in data {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32_vec<R: Real>(r: &mut impl Read, n: usize) -> Result<Vec<R>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| R::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect())
}

pub fn save_checkpoint<R: Real>(path: impl AsRef<Path>, net: &PredictorNet<R>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&CKPT_MAGIC)?;
    write_u32(&mut w, CKPT_VERSION)?;
    let c = &net.config;
    for v in [c.n_rx, c.n_tx, c.history, c.tau_max, c.conv_in_channels, c.blocks.len()] {
        write_u32(&mut w, v as u32)?;
    }
    for b in &c.blocks {
        for v in [b.channels, b.filter.0, b.filter.1, b.dilation.0, b.dilation.1] {
            write_u32(&mut w, v as u32)?;
        }
    }
    write_f64(&mut w, c.l2_penalty)?;

    write_u32(&mut w, net.params.len() as u32)?;
    for p in &net.params {
        let name = p.name.as_bytes();
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name)?;
        write_u32(&mut w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            write_u32(&mut w, d as u32)?;
        }
        write_f32_slice(&mut w, p.value.data())?;
    }
    write_u32(&mut w, net.norm_stats.len() as u32)?;
    for (mean, var) in &net.norm_stats {
        write_u32(&mut w, mean.len() as u32)?;
        write_f32_slice(&mut w, mean)?;
        write_f32_slice(&mut w, var)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<PredictorNet<R>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.display().to_string()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: CKPT_MAGIC,
        });
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::BadVersion {
            path: path.display().to_string(),
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let n_rx = read_u32(&mut r)? as usize;
    let n_tx = read_u32(&mut r)? as usize;
    let history = read_u32(&mut r)? as usize;
    let tau_max = read_u32(&mut r)? as usize;
    let conv_in_channels = read_u32(&mut r)? as usize;
    let n_blocks = read_u32(&mut r)? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let channels = read_u32(&mut r)? as usize;
        let fh = read_u32(&mut r)? as usize;
        let fw = read_u32(&mut r)? as usize;
        let dh = read_u32(&mut r)? as usize;
        let dw = read_u32(&mut r)? as usize;
        blocks.push(BlockSpec {
            channels,
            filter: (fh, fw),
            dilation: (dh, dw),
        });
    }
    let l2_penalty = read_f64(&mut r)?;
    let config = ModelConfig {
        n_rx,
        n_tx,
        history,
        tau_max,
        conv_in_channels,
        blocks,
        l2_penalty,
    };

    let n_params = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let data = read_f32_vec::<R>(&mut r, n)?;
        params.push(Param {
            name: String::from_utf8(name).map_err(|_| Error::CorruptFile {
                path: path.display().to_string(),
                detail: "non-utf8 parameter name".into(),
            })?,
            value: Tensor::from_vec(&shape, data),
        });
    }
    let n_stats = read_u32(&mut r)? as usize;
    let mut norm_stats = Vec::with_capacity(n_stats);
    for _ in 0..n_stats {
        let len = read_u32(&mut r)? as usize;
        let mean = read_f32_vec::<R>(&mut r, len)?;
        let var = read_f32_vec::<R>(&mut r, len)?;
        norm_stats.push((mean, var));
    }

    // cross-check against a freshly derived layout
    let reference = PredictorNet::<R>::init(config.clone(), 0)?;
    if reference.params.len() != params.len()
        || reference
            .params
            .iter()
            .zip(&params)
            .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
    {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            detail: "parameter layout does not match the stored config".into(),
        });
    }
    Ok(PredictorNet {
        config,
        params,
        norm_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dtxm");
        let cfg = ModelConfig::xxs(4, 2, 1, 6);
        let net = PredictorNet::<f32>::init(cfg, 33).unwrap();
        save_checkpoint(&path, &net).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.config, net.config);
        assert_eq!(loaded.params.len(), net.params.len());
        for (a, b) in loaded.params.iter().zip(&net.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
        assert_eq!(loaded.norm_stats, net.norm_stats);
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.dtxm");
        assert!(matches!(
            load_checkpoint::<f32>(&missing).unwrap_err(),
            Error::MissingCheckpoint(_)
        ));
        let bad = dir.path().join("bad.dtxm");
        std::fs::write(&bad, b"XXXX0000000000000000").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&bad).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }
}
