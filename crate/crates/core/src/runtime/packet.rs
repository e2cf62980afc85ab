//! Bit-packed feature packets exchanged between cascaded layers.
//!
//! A packet carries `n_packages` packages of `blocks_per_package` blocks,
//! each a `q_bits`-wide unsigned code. Block `p·width + b` (package-major)
//! occupies stream bits `[k·Q, (k+1)·Q)` with `k` its index; the stream is
//! little-endian, least significant bit first within each byte.

use crate::error::{AmuError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeaturePacket {
    pub n_packages: usize,
    pub blocks_per_package: usize,
    pub q_bits: u8,
    pub payload: Vec<u8>,
}

/// Unpacked blocks, package-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub n_packages: usize,
    pub width: usize,
    pub blocks: Vec<u32>,
}

impl BlockGrid {
    #[inline]
    pub fn get(&self, package: usize, block: usize) -> u32 {
        self.blocks[package * self.width + block]
    }

    pub fn package(&self, package: usize) -> &[u32] {
        &self.blocks[package * self.width..(package + 1) * self.width]
    }
}

fn payload_bytes(n_blocks: usize, q_bits: u8) -> usize {
    (n_blocks * q_bits as usize).div_ceil(8)
}

impl FeaturePacket {
    /// Packs package-major `blocks`; every block must be below `2^q_bits`.
    pub fn pack(n_packages: usize, blocks_per_package: usize, q_bits: u8, blocks: &[u32]) -> Result<Self> {
        if !(1..=16).contains(&q_bits) {
            return Err(AmuError::config(format!("block width {q_bits} outside [1, 16]")));
        }
        if blocks.len() != n_packages * blocks_per_package {
            return Err(AmuError::config(format!(
                "{} blocks for a {n_packages}x{blocks_per_package} packet",
                blocks.len()
            )));
        }
        let limit = 1u32 << q_bits;
        if let Some(&bad) = blocks.iter().find(|&&b| b >= limit) {
            return Err(AmuError::config(format!("block value {bad} does not fit {q_bits} bits")));
        }
        let mut payload = vec![0u8; payload_bytes(blocks.len(), q_bits)];
        let q = q_bits as usize;
        for (k, &value) in blocks.iter().enumerate() {
            let mut bit = k * q;
            let mut v = value;
            let mut remaining = q;
            while remaining > 0 {
                let byte = bit / 8;
                let shift = bit % 8;
                let take = remaining.min(8 - shift);
                let mask = ((1u32 << take) - 1) as u8;
                payload[byte] |= ((v as u8) & mask) << shift;
                v >>= take;
                bit += take;
                remaining -= take;
            }
        }
        Ok(FeaturePacket { n_packages, blocks_per_package, q_bits, payload })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_packages * self.blocks_per_package
    }

    /// Extracts every block by shift and mask.
    pub fn unpack(&self) -> Result<BlockGrid> {
        if !(1..=16).contains(&self.q_bits) {
            return Err(AmuError::format(format!("block width {} outside [1, 16]", self.q_bits)));
        }
        let n = self.n_blocks();
        let expected = payload_bytes(n, self.q_bits);
        if self.payload.len() != expected {
            return Err(AmuError::format(format!(
                "payload holds {} bytes, a {}x{} packet of {}-bit blocks needs {expected}",
                self.payload.len(),
                self.n_packages,
                self.blocks_per_package,
                self.q_bits
            )));
        }
        let q = self.q_bits as usize;
        let blocks = (0..n)
            .map(|k| {
                let mut bit = k * q;
                let mut out = 0u32;
                let mut got = 0;
                while got < q {
                    let byte = bit / 8;
                    let shift = bit % 8;
                    let take = (q - got).min(8 - shift);
                    let part = (u32::from(self.payload[byte]) >> shift) & ((1 << take) - 1);
                    out |= part << got;
                    got += take;
                    bit += take;
                }
                out
            })
            .collect();
        Ok(BlockGrid { n_packages: self.n_packages, width: self.blocks_per_package, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_ones_one_bit() {
        let p = FeaturePacket { n_packages: 3, blocks_per_package: 5, q_bits: 1, payload: vec![0xff, 0x7f] };
        assert!(p.unpack().unwrap().blocks.iter().all(|&b| b == 1));
    }

    #[test]
    fn hand_computed_nibbles() {
        // two packages of three 4-bit blocks: bytes 0x21 0x43 0x65 hold
        // 1, 2 | 3, 4 | 5, 6 low nibble first
        let p = FeaturePacket { n_packages: 2, blocks_per_package: 3, q_bits: 4, payload: vec![0x21, 0x43, 0x65] };
        let grid = p.unpack().unwrap();
        assert_eq!(grid.package(0), &[1, 2, 3]);
        assert_eq!(grid.package(1), &[4, 5, 6]);
        assert_eq!(FeaturePacket::pack(2, 3, 4, &[1, 2, 3, 4, 5, 6]).unwrap(), p);
    }

    #[test]
    fn straddling_byte_boundaries() {
        let p = FeaturePacket::pack(1, 3, 3, &[0b101, 0b011, 0b110]).unwrap();
        // stream bits 0..9, LSB first: 1 0 1 | 1 1 0 | 0 1 1
        assert_eq!(p.payload, vec![0b1001_1101, 0b0000_0001]);
    }

    #[test]
    fn payload_length_mismatch() {
        let p = FeaturePacket { n_packages: 2, blocks_per_package: 4, q_bits: 2, payload: vec![0; 3] };
        assert!(matches!(p.unpack(), Err(AmuError::Format(_))));
    }

    #[test]
    fn rejects_oversized_block() {
        assert!(FeaturePacket::pack(1, 2, 2, &[1, 4]).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(q in 1u8..=16, packages in 1usize..6, width in 1usize..20, seed in any::<u64>()) {
            let mut s = seed;
            let blocks: Vec<u32> = (0..packages * width)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) as u32) & ((1u32 << q) - 1)
                })
                .collect();
            let p = FeaturePacket::pack(packages, width, q, &blocks).unwrap();
            prop_assert_eq!(p.payload.len() * 8 >= packages * width * q as usize, true);
            prop_assert_eq!(p.unpack().unwrap().blocks, blocks);
        }
    }
}
