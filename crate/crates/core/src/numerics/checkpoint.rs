//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"LRCK"
//! version  u32            (currently 1)
//! step     u64            optimizer step counter
//! 3 × record section      parameters, Adam first moments, Adam second moments
//!
//! section  := count u32, record*
//! record   := name_len u32, name bytes (UTF-8), rank u32, dims u64 × rank,
//!             values f64 × prod(dims)
//! ```
//!
//! Moment sections are empty for a checkpoint taken before the first update.

use std::io::{self, Read, Write};
use std::path::Path;

use super::{Adam, NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"LRCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub step: u64,
    pub first_moments: ParamStore,
    pub second_moments: ParamStore,
}

impl Checkpoint {
    pub fn new(params: &ParamStore, optimizer: Option<&Adam>) -> Self {
        match optimizer {
            Some(opt) => Self {
                params: params.clone(),
                step: opt.step_count(),
                first_moments: opt.first_moments().clone(),
                second_moments: opt.second_moments().clone(),
            },
            None => Self {
                params: params.clone(),
                step: 0,
                first_moments: ParamStore::new(),
                second_moments: ParamStore::new(),
            },
        }
    }

    pub fn optimizer(&self, lr: f64) -> Adam {
        Adam::from_state(
            lr,
            self.step,
            self.first_moments.clone(),
            self.second_moments.clone(),
        )
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        for section in [&self.params, &self.first_moments, &self.second_moments] {
            write_section(w, section)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NumericsError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let step = read_u64(r)?;
        let params = read_section(r)?;
        let first_moments = read_section(r)?;
        let second_moments = read_section(r)?;
        Ok(Self {
            params,
            step,
            first_moments,
            second_moments,
        })
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let bytes = std::fs::read(path)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_section(w: &mut impl Write, store: &ParamStore) -> io::Result<()> {
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_section(r: &mut impl Read) -> Result<ParamStore, NumericsError> {
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(truncated)?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

fn truncated(_: io::Error) -> NumericsError {
    NumericsError::Checkpoint("truncated file".into())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, NumericsError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_first_record_layout() {
        let mut p = ParamStore::new();
        p.insert("ab", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()).unwrap();
        let mut buf = Vec::new();
        Checkpoint::new(&p, None).write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"LRCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        assert_eq!(&buf[24..26], b"ab");
        assert_eq!(u32::from_le_bytes(buf[26..30].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[30..38].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[38..46].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 54 + 8);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(&[3])).unwrap();
        let mut buf = Vec::new();
        Checkpoint::new(&p, None).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
