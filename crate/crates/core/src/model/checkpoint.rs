use std::path::Path;

use super::{ModelError, Result};

const MAGIC: &[u8; 4] = b"IQCK";
const VERSION: u16 = 1;

/// The model state saved at the best validation epoch.
///
/// On-disk layout, little-endian:
///
/// ```text
/// magic "IQCK" | version u16 | kind_len u16 | kind utf-8
/// | epoch u32 | val_loss f64 | payload_len u64 | payload | crc32 u32
/// ```
///
/// The trailing CRC covers every preceding byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Backend name the state belongs to.
    pub kind: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub state: Vec<u8>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, epoch: usize, val_loss: f64, state: Vec<u8>) -> Result<Self> {
        if !val_loss.is_finite() {
            return Err(ModelError::Checkpoint(format!("validation loss {val_loss} is not finite")));
        }
        Ok(Self {
            kind: kind.into(),
            epoch,
            val_loss,
            state,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let kind = self.kind.as_bytes();
        let mut out = Vec::with_capacity(32 + kind.len() + self.state.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(kind.len() as u16).to_le_bytes());
        out.extend_from_slice(kind);
        out.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&(self.state.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.state);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| ModelError::Checkpoint(msg.to_string());
        if bytes.len() < 4 + 4 {
            return Err(bad("truncated"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body).to_le_bytes() != crc {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { bytes: body };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let kind_len = u16::from_le_bytes(r.array()?) as usize;
        let kind = String::from_utf8(r.take(kind_len)?.to_vec()).map_err(|_| bad("kind is not utf-8"))?;
        let epoch = u32::from_le_bytes(r.array()?) as usize;
        let val_loss = f64::from_le_bytes(r.array()?);
        let len = u64::from_le_bytes(r.array()?) as usize;
        let state = r.take(len)?.to_vec();
        if !r.bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::new(kind, epoch, val_loss, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(ModelError::Checkpoint("truncated".to_string()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let c = Checkpoint::new("baseline", 7, 0.125, vec![1, 2, 3, 250]).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);

        let mut flipped = bytes.clone();
        flipped[12] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"junk").is_err());
    }

    #[test]
    fn rejects_non_finite_loss() {
        assert!(Checkpoint::new("x", 1, f64::NAN, vec![]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/model.ckpt");
        let c = Checkpoint::new("baseline", 3, 1.5, vec![9; 100]).unwrap();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
