//! Stable seed derivation. `std::hash` makes no cross-version guarantees, so
//! derived seeds use SplitMix64 and FNV-1a explicitly.

/// SplitMix64 finalizer applied to `base` combined with `salt`.
pub fn derive(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn derive_str(base: u64, salt: &str) -> u64 {
    derive(base, fnv1a(salt.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn derive_separates_salts() {
        assert_ne!(derive(1, 0), derive(1, 1));
        assert_ne!(derive(0, 1), derive(1, 0));
        assert_eq!(derive_str(7, "rec-1"), derive_str(7, "rec-1"));
    }
}
