//! Order-independent seed derivation.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the parts, each terminated by a 0xff separator so
/// that `["ab", "c"]` and `["a", "bc"]` differ.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&base.to_le_bytes());
    for p in parts {
        eat(p.as_bytes());
        eat(&[0xff]);
    }
    h
}
