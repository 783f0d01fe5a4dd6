//! Flat binary tensor format used for checkpoints.
//!
//! Layout: `b"FCNT"`, version `u16`, rank `u8`, `rank` extents as `u64`, then
//! the row-major values as `f64`. Every integer and float is little-endian.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"FCNT";
pub const TENSOR_VERSION: u16 = 1;

pub fn write_tensor<W: Write>(tensor: &Tensor, mut out: W) -> std::io::Result<()> {
    let rank = u8::try_from(tensor.rank())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor rank exceeds 255"))?;
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&TENSOR_VERSION.to_le_bytes())?;
    out.write_all(&[rank])?;
    for &extent in tensor.shape() {
        out.write_all(&(extent as u64).to_le_bytes())?;
    }
    for &v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one complete blob; trailing bytes are an error.
pub fn read_tensor<R: Read>(mut input: R) -> Result<Tensor> {
    let t = read_tensor_prefix(&mut input)?;
    let mut trailing = [0u8; 1];
    let n = input.read(&mut trailing).map_err(|e| Error::format("tensor blob", e.to_string()))?;
    if n != 0 {
        return Err(Error::format("tensor blob", "trailing bytes after tensor data"));
    }
    Ok(t)
}

/// Reads one blob from the front of a stream and leaves the rest unread.
pub(crate) fn read_tensor_prefix<R: Read>(mut input: R) -> Result<Tensor> {
    let io = |e: std::io::Error| Error::format("tensor blob", e.to_string());

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format("tensor blob", format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    input.read_exact(&mut version).map_err(io)?;
    let version = u16::from_le_bytes(version);
    if version != TENSOR_VERSION {
        return Err(Error::format("tensor blob", format!("unsupported version {version}")));
    }
    let mut rank = [0u8; 1];
    input.read_exact(&mut rank).map_err(io)?;

    let mut shape = Vec::with_capacity(rank[0] as usize);
    let mut word = [0u8; 8];
    for _ in 0..rank[0] {
        input.read_exact(&mut word).map_err(io)?;
        let extent = usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| Error::format("tensor blob", "extent does not fit in usize"))?;
        shape.push(extent);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::format("tensor blob", "element count overflows"))?;

    let mut data = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        input.read_exact(&mut word).map_err(io)?;
        data.push(f64::from_le_bytes(word));
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FCNT");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 2);
        assert_eq!(&buf[7..15], &2u64.to_le_bytes());
        assert_eq!(&buf[15..23], &1u64.to_le_bytes());
        assert_eq!(&buf[23..31], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 4 + 2 + 1 + 16 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::ones(&[3]);
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(&bad[..]).is_err());
        assert!(read_tensor(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_tensor(&long[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            shape in prop::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&shape, 3.0, &mut rng);
            let mut buf = Vec::new();
            write_tensor(&t, &mut buf).unwrap();
            let back = read_tensor(&buf[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
