//! Versioned container of named blocks.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"MTCK"
//! version u32 (= 1)
//! count   u32
//! count x block:
//!   name_len u32, name utf-8 bytes
//!   kind     u8   0 = f64 tensor, 1 = u64, 2 = raw bytes
//!   kind 0:  rows u64, cols u64, rows*cols f64 (row-major)
//!   kind 1:  value u64
//!   kind 2:  len u64, bytes
//! ```
//!
//! Blocks are written in insertion order; names are unique.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Tensor(Tensor),
    U64(u64),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    blocks: Vec<(String, Block)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn put(&mut self, name: &str, block: Block) {
        match self.blocks.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = block,
            None => self.blocks.push((name.to_string(), block)),
        }
    }

    pub fn put_tensor(&mut self, name: &str, t: Tensor) {
        self.put(name, Block::Tensor(t));
    }

    pub fn put_u64(&mut self, name: &str, v: u64) {
        self.put(name, Block::U64(v));
    }

    pub fn put_bytes(&mut self, name: &str, b: Vec<u8>) {
        self.put(name, Block::Bytes(b));
    }

    pub fn get(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Checkpoint(format!("missing block '{name}'")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name)? {
            Block::Tensor(t) => Ok(t),
            _ => Err(Error::Checkpoint(format!("block '{name}' is not a tensor"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.get(name)? {
            Block::U64(v) => Ok(*v),
            _ => Err(Error::Checkpoint(format!(
                "block '{name}' is not an integer"
            ))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Block::Bytes(b) => Ok(b),
            _ => Err(Error::Checkpoint(format!(
                "block '{name}' is not a byte block"
            ))),
        }
    }

    /// Seed, stream and word position of a ChaCha generator.
    pub fn put_rng(&mut self, name: &str, rng: &ChaCha8Rng) {
        let mut b = rng.get_seed().to_vec();
        b.extend_from_slice(&rng.get_stream().to_le_bytes());
        b.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        self.put_bytes(name, b);
    }

    pub fn rng(&self, name: &str) -> Result<ChaCha8Rng> {
        let b = self.bytes(name)?;
        if b.len() != 32 + 8 + 16 {
            return Err(Error::Checkpoint(format!(
                "block '{name}' is not a generator state"
            )));
        }
        let mut rng = ChaCha8Rng::from_seed(b[..32].try_into().expect("32 bytes"));
        rng.set_stream(u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")));
        rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")));
        Ok(rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, block) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match block {
                Block::Tensor(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
                    out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
                    for v in t.iter() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Block::U64(v) => {
                    out.push(1);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Block::Bytes(b) => {
                    out.push(2);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("block name is not utf-8".into()))?;
            let block = match r.take(1)?[0] {
                0 => {
                    let rows = r.u64()? as usize;
                    let cols = r.u64()? as usize;
                    let n = rows
                        .checked_mul(cols)
                        .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
                    let mut vals = Vec::with_capacity(n.min(bytes.len() / 8));
                    for _ in 0..n {
                        vals.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
                    }
                    Block::Tensor(
                        Array2::from_shape_vec((rows, cols), vals).expect("shape checked"),
                    )
                }
                1 => Block::U64(r.u64()?),
                2 => {
                    let n = r.u64()? as usize;
                    Block::Bytes(r.take(n)?.to_vec())
                }
                k => return Err(Error::Checkpoint(format!("unknown block kind {k}"))),
            };
            if ck.blocks.iter().any(|(n, _)| *n == name) {
                return Err(Error::Checkpoint(format!("duplicate block '{name}'")));
            }
            ck.blocks.push((name, block));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }

    /// Writes through a temporary file and renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let mut ck = Checkpoint::new();
        ck.put_tensor("a", array![[1.5, -0.0], [f64::MIN_POSITIVE, 3.0]]);
        ck.put_u64("step", 42);
        ck.put_bytes("rng", vec![1, 2, 3]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(
            back.tensor("a").unwrap()[[0, 1]].to_bits(),
            (-0.0f64).to_bits()
        );
        assert_eq!(back.u64("step").unwrap(), 42);
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a", "step", "rng"]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut ck = Checkpoint::new();
        ck.put_u64("x", 1);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn generator_state_round_trip() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.set_stream(7);
        let _: u64 = rng.random();
        let _: u32 = rng.random();
        let mut ck = Checkpoint::new();
        ck.put_rng("rng", &rng);
        let mut back = Checkpoint::from_bytes(&ck.to_bytes())
            .unwrap()
            .rng("rng")
            .unwrap();
        for _ in 0..5 {
            assert_eq!(back.random::<u64>(), rng.random::<u64>());
        }
    }

    #[test]
    fn missing_and_mistyped_blocks() {
        let mut ck = Checkpoint::new();
        ck.put_u64("x", 1);
        assert!(ck.tensor("x").is_err());
        assert!(ck.u64("y").is_err());
    }
}
