//! Binary checkpoint format: versioned header, named f32 parameter blobs,
//! optimizer moments, epoch counter, and the rng provenance (master seed).
//! Together with the counter-based stream scheme this is enough to resume
//! a run bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CUBECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form run kind, e.g. "ssl", "jitter", "supervised".
    pub tag: String,
    pub master_seed: u64,
    /// Epochs completed when this checkpoint was written.
    pub epoch: u32,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam: Option<AdamSnapshot>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        write_u32(&mut buf, VERSION);
        write_str(&mut buf, &self.tag);
        buf.extend_from_slice(&self.master_seed.to_le_bytes());
        write_u32(&mut buf, self.epoch);

        write_u32(&mut buf, self.params.len() as u32);
        for (name, tensor) in &self.params {
            write_str(&mut buf, name);
            write_u32(&mut buf, tensor.shape().len() as u32);
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }

        match &self.adam {
            None => buf.push(0),
            Some(a) => {
                buf.push(1);
                buf.extend_from_slice(&a.t.to_le_bytes());
                write_u32(&mut buf, a.m.len() as u32);
                for (m, v) in a.m.iter().zip(&a.v) {
                    write_u32(&mut buf, m.len() as u32);
                    for &x in m {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                    for &x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }

        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, pos: 0 };

        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(format!("{path:?}: bad magic")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{path:?}: unsupported version {version}"
            )));
        }
        let tag = r.string()?;
        let master_seed = r.u64()?;
        let epoch = r.u32()?;

        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(r.f32()?);
            }
            params.push((name, Tensor::new(shape, data)?));
        }

        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let slots = r.u32()? as usize;
                let mut m = Vec::with_capacity(slots);
                let mut v = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let len = r.u32()? as usize;
                    let mut mi = Vec::with_capacity(len);
                    for _ in 0..len {
                        mi.push(r.f32()?);
                    }
                    let mut vi = Vec::with_capacity(len);
                    for _ in 0..len {
                        vi.push(r.f32()?);
                    }
                    m.push(mi);
                    v.push(vi);
                }
                Some(AdamSnapshot { t, m, v })
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "{path:?}: bad optimizer flag {other}"
                )))
            }
        };

        Ok(Checkpoint {
            tag,
            master_seed,
            epoch,
            params,
            adam,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    write_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad string: {e}")))
    }
}
