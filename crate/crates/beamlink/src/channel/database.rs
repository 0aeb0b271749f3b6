//! File-backed channel realization database.
//!
//! Layout (little-endian): magic "DTXC", version u32, record count u64,
//! n_slots/s/f/n_rx/n_tx u32, scs/carrier/slot-duration f64, then fixed-size
//! records of metadata followed by interleaved 32-bit float complex planes.
//! Fixed record size allows streaming random access without loading the file.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use num_complex::Complex;

use super::generate::{ChannelRealization, GridSpec, RealizationMeta};
use super::profile::TdlModel;
use crate::error::{Error, Result};

pub const DB_MAGIC: [u8; 4] = *b"DTXC";
pub const DB_VERSION: u32 = 1;

const HEADER_LEN: u64 = 4 + 4 + 8 + 5 * 4 + 3 * 8;
const META_LEN: u64 = 1 + 4 + 4 + 8 + 1;

/// Read-only handle over a realization database; reads are positioned, so a
/// shared reference is safe to use from multiple threads.
#[derive(Debug)]
pub struct ChannelDatabase {
    file: File,
    path: PathBuf,
    grid: GridSpec,
    n_slots: usize,
    count: u64,
}

fn record_len(grid: &GridSpec, n_slots: usize) -> u64 {
    META_LEN + (n_slots * grid.s * grid.f * grid.n_rx * grid.n_tx * 8) as u64
}

pub fn save_database(
    path: impl AsRef<Path>,
    grid: &GridSpec,
    n_slots: usize,
    realizations: &[ChannelRealization],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DB_MAGIC)?;
    w.write_all(&DB_VERSION.to_le_bytes())?;
    w.write_all(&(realizations.len() as u64).to_le_bytes())?;
    for dim in [n_slots, grid.s, grid.f, grid.n_rx, grid.n_tx] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in [grid.scs_hz, grid.carrier_hz, grid.slot_duration_s] {
        w.write_all(&v.to_le_bytes())?;
    }
    let expect = n_slots * grid.s * grid.f * grid.n_rx * grid.n_tx;
    for r in realizations {
        if r.n_slots != n_slots || r.data.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "realization dims {}x{}x{}x{}x{} do not match database dims",
                r.n_slots, r.s, r.f, r.n_rx, r.n_tx
            )));
        }
        w.write_all(&[r.meta.model.as_u8()])?;
        w.write_all(&r.meta.delay_spread_ns.to_le_bytes())?;
        w.write_all(&r.meta.velocity_kmh.to_le_bytes())?;
        w.write_all(&r.meta.seed.to_le_bytes())?;
        w.write_all(&[r.meta.out_of_range as u8])?;
        for v in &r.data {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

impl ChannelDatabase {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| Error::CorruptFile {
            path: path.display().to_string(),
            detail: "file shorter than header".into(),
        })?;
        if header[0..4] != DB_MAGIC {
            return Err(Error::BadMagic {
                path: path.display().to_string(),
                expected: DB_MAGIC,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != DB_VERSION {
            return Err(Error::BadVersion {
                path: path.display().to_string(),
                found: version,
                expected: DB_VERSION,
            });
        }
        let count = u64_at(8);
        let n_slots = u32_at(16) as usize;
        let grid = GridSpec {
            s: u32_at(20) as usize,
            f: u32_at(24) as usize,
            n_rx: u32_at(28) as usize,
            n_tx: u32_at(32) as usize,
            scs_hz: f64_at(36),
            carrier_hz: f64_at(44),
            slot_duration_s: f64_at(52),
        };
        let expected_len = HEADER_LEN + count * record_len(&grid, n_slots);
        let actual_len = file.metadata()?.len();
        if actual_len != expected_len {
            let actual_records =
                actual_len.saturating_sub(HEADER_LEN) / record_len(&grid, n_slots);
            return Err(Error::RecordCountMismatch {
                path: path.display().to_string(),
                declared: count,
                actual: actual_records,
            });
        }
        Ok(ChannelDatabase {
            file,
            path,
            grid,
            n_slots,
            count,
        })
    }

    pub fn len(&self) -> usize {
        self.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Read one realization; positioned read, safe concurrently.
    pub fn read(&self, idx: usize) -> Result<ChannelRealization> {
        if idx as u64 >= self.count {
            return Err(Error::InvalidArgument(format!(
                "record {idx} out of range ({} records)",
                self.count
            )));
        }
        let rec_len = record_len(&self.grid, self.n_slots);
        let offset = HEADER_LEN + idx as u64 * rec_len;
        let mut buf = vec![0u8; rec_len as usize];
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|_| Error::CorruptFile {
                path: self.path.display().to_string(),
                detail: format!("record {idx} truncated"),
            })?;
        let model = TdlModel::from_u8(buf[0]).ok_or_else(|| Error::CorruptFile {
            path: self.path.display().to_string(),
            detail: format!("record {idx}: bad model id {}", buf[0]),
        })?;
        let meta = RealizationMeta {
            model,
            delay_spread_ns: f32::from_le_bytes(buf[1..5].try_into().unwrap()),
            velocity_kmh: f32::from_le_bytes(buf[5..9].try_into().unwrap()),
            seed: u64::from_le_bytes(buf[9..17].try_into().unwrap()),
            out_of_range: buf[17] != 0,
        };
        let n = self.n_slots * self.grid.s * self.grid.f * self.grid.n_rx * self.grid.n_tx;
        let mut data = Vec::with_capacity(n);
        let body = &buf[META_LEN as usize..];
        for i in 0..n {
            let re = f32::from_le_bytes(body[8 * i..8 * i + 4].try_into().unwrap());
            let im = f32::from_le_bytes(body[8 * i + 4..8 * i + 8].try_into().unwrap());
            data.push(Complex::new(re, im));
        }
        Ok(ChannelRealization {
            meta,
            n_slots: self.n_slots,
            s: self.grid.s,
            f: self.grid.f,
            n_rx: self.grid.n_rx,
            n_tx: self.grid.n_tx,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate::generate_realization;
    use crate::channel::profile::TdlProfile;

    fn make(seeds: &[u64]) -> (GridSpec, Vec<ChannelRealization>) {
        let grid = GridSpec::desk(1);
        let profile = TdlProfile::new(TdlModel::A);
        let rs = seeds
            .iter()
            .map(|&s| generate_realization(&profile, 80.0, 15.0, &grid, 3, s).unwrap())
            .collect();
        (grid, rs)
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ch.dtxc");
        let (grid, rs) = make(&[1, 2, 3]);
        save_database(&path, &grid, 3, &rs).unwrap();
        let db = ChannelDatabase::open(&path).unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.grid(), &grid);
        for (i, r) in rs.iter().enumerate() {
            let loaded = db.read(i).unwrap();
            assert_eq!(&loaded, r, "record {i} not bit-exact");
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dtxc");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx")
            .unwrap();
        let err = ChannelDatabase::open(&path).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }), "{err:?}");
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.dtxc");
        let (grid, rs) = make(&[4, 5]);
        save_database(&path, &grid, 3, &rs).unwrap();
        // truncate away part of the last record
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 64]).unwrap();
        let err = ChannelDatabase::open(&path).unwrap_err();
        assert!(matches!(err, Error::RecordCountMismatch { declared: 2, .. }), "{err:?}");
    }
}
