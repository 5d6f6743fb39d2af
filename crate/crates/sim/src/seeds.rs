//! Labeled substreams off one master seed.
//!
//! Every random consumer (world noise, each link direction, pixel noise)
//! gets its own stream derived from the scenario seed and a stable label,
//! so adding a consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn sub_seed(master: u64, label: &str, index: u64) -> u64 {
    mix64(mix64(master ^ fnv1a(label)) ^ index)
}

pub fn substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = substream(7, "world", 0);
        let mut b = substream(7, "link-up", 0);
        let mut b2 = substream(7, "link-up", 1);
        let (x, y, z) = (a.next_u64(), b.next_u64(), b2.next_u64());
        assert_ne!(x, y);
        assert_ne!(y, z);
        // Re-derivation reproduces the stream exactly.
        assert_eq!(substream(7, "world", 0).next_u64(), x);
    }
}
