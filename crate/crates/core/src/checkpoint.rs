//! Binary checkpoint format: versioned header, the resolved run
//! configuration as text, then named parameter blobs (little-endian f32)
//! in a fixed iteration order, optionally followed by optimizer state.
//! Reload is bit-exact.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::optim::OptimizerState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LTFCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated or corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    /// Resolved run configuration, key=value lines.
    pub config_text: String,
    /// Training step the parameters correspond to.
    pub step: u64,
    pub params: Vec<(String, Tensor<f32>)>,
    pub opt: Option<OptimizerState<f32>>,
}

/// FNV-1a over bytes; used for config hashes and manifest checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_string(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> io::Result<()> {
    write_u32(w, t.rank() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_buf(r: &mut impl Read, n: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Corrupt(format!("expected {n} more bytes")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(read_exact_buf(r, 4)?.try_into().unwrap()))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    Ok(u64::from_le_bytes(read_exact_buf(r, 8)?.try_into().unwrap()))
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let n = read_u32(r)? as usize;
    String::from_utf8(read_exact_buf(r, n)?)
        .map_err(|_| CheckpointError::Corrupt("invalid utf-8 string".into()))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor<f32>, CheckpointError> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(CheckpointError::Corrupt(format!("rank {rank} too large")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let bytes = read_exact_buf(r, numel * 4)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(shape, data))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u64(&mut w, self.config_hash)?;
        write_u64(&mut w, self.step)?;
        write_string(&mut w, &self.config_text)?;
        write_u32(&mut w, self.params.len() as u32)?;
        for (name, t) in &self.params {
            write_string(&mut w, name)?;
            write_tensor(&mut w, t)?;
        }
        match &self.opt {
            None => w.write_all(&[0u8])?,
            Some(opt) => {
                w.write_all(&[1u8])?;
                write_u64(&mut w, opt.step)?;
                for t in opt.m.iter().chain(&opt.v) {
                    write_tensor(&mut w, t)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let mut r = io::BufReader::new(std::fs::File::open(path)?);
        let magic = read_exact_buf(&mut r, 8)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let config_hash = read_u64(&mut r)?;
        let step = read_u64(&mut r)?;
        let config_text = read_string(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = read_string(&mut r)?;
            let t = read_tensor(&mut r)?;
            params.push((name, t));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|_| CheckpointError::Corrupt("missing optimizer flag".into()))?;
        let opt = if flag[0] == 1 {
            let ostep = read_u64(&mut r)?;
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                m.push(read_tensor(&mut r)?);
            }
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(read_tensor(&mut r)?);
            }
            Some(OptimizerState { m, v, step: ostep })
        } else {
            None
        };
        Ok(Checkpoint {
            config_hash,
            config_text,
            step,
            params,
            opt,
        })
    }
}

/// Text manifest of the parameter list: `name<TAB>shape<TAB>checksum`
/// per line, in iteration order. Used to diff runs and to assert the
/// absence of positional parameters.
pub fn manifest(params: &[(String, Tensor<f32>)]) -> String {
    let mut out = String::new();
    for (name, t) in params {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let shape = t
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        out.push_str(&format!("{name}\t{shape}\t{:016x}\n", fnv1a64(&bytes)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let params = vec![
            (
                "wte".to_string(),
                Tensor::from_f64s(&[3, 2], &[0.1, -0.2, 0.3, 1.5e-7, -4.0, 2.25]),
            ),
            ("head.b".to_string(), Tensor::from_f64s(&[2], &[0.0, -0.0])),
        ];
        let refs: Vec<&Tensor<f32>> = params.iter().map(|(_, t)| t).collect();
        let mut opt = OptimizerState::new_like(&refs);
        opt.step = 7;
        opt.m[0].data_mut()[0] = 0.125;
        Checkpoint {
            config_hash: 0xDEAD_BEEF,
            config_text: "task = parity\nseed = 3\n".to_string(),
            step: 42,
            params,
            opt: Some(opt),
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
        // Bitwise equality of the float payloads.
        for ((_, a), (_, b)) in ck.params.iter().zip(&back.params) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn manifest_lists_all_params_with_checksums() {
        let ck = sample_checkpoint();
        let m = manifest(&ck.params);
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("wte\t3x2\t"));
        assert!(lines[1].starts_with("head.b\t2\t"));
    }
}
