//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! | field          | type        |
//! |----------------|-------------|
//! | magic `GFCK`   | 4 bytes     |
//! | format version | u32         |
//! | data dim       | u32         |
//! | hidden layers  | u32         |
//! | width          | u32         |
//! | class count    | u32         |
//! | embedding dim  | u32         |
//! | iteration      | u64         |
//! | seed           | u64         |
//! | sigma_data     | f64 (0 = no preconditioning) |
//! | param count    | u64         |
//! | parameters     | f64 x count, in [`network`](super::network) order |

use std::path::Path;

use super::network::{Architecture, DenoiserModel, Preconditioning};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFCK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 8 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub iteration: u64,
    pub seed: u64,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| ck(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("slice length"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.model.architecture();
        let params = self.model.params();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [a.data_dim, a.hidden_layers, a.width, a.num_classes, a.embed_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.model.preconditioning().sigma_data().to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if &r.take::<4>()? != MAGIC {
            return Err(ck("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ck(format!("unsupported format version {version}")));
        }
        let arch = Architecture {
            data_dim: r.u32()? as usize,
            hidden_layers: r.u32()? as usize,
            width: r.u32()? as usize,
            num_classes: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
        };
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let sigma_data = r.f64()?;
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(ck(format!(
                "header declares {count} parameters, architecture needs {}",
                arch.param_count()
            )));
        }
        if buf.len() != HEADER_LEN + 8 * count {
            return Err(ck(format!(
                "expected {} bytes, found {}",
                HEADER_LEN + 8 * count,
                buf.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(r.f64()?);
        }
        let model =
            DenoiserModel::from_params(arch, Preconditioning::from_sigma_data(sigma_data), params)?;
        Ok(Self {
            model,
            iteration,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ck(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| ck(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn sample() -> Checkpoint {
        let arch = Architecture {
            data_dim: 2,
            hidden_layers: 2,
            width: 5,
            num_classes: 3,
            embed_dim: 3,
        };
        let mut rng = Rng::new(9);
        Checkpoint {
            model: DenoiserModel::init(arch, Preconditioning::Edm { sigma_data: 1.7 }, &mut rng)
                .unwrap(),
            iteration: 1234,
            seed: 9,
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"GFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[28..36].try_into().unwrap()), 1234);
    }

    #[test]
    fn truncated_or_corrupt_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
