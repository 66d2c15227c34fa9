//! AES-128 with capture of the last-round register transition.
//!
//! The modelled datapath holds the 128-bit round state in a single register.
//! At the final clock edge that register switches from the state after round 9
//! to the ciphertext, and that switch is what the power model and the attack
//! both look at.
//!
//! State bytes are kept in the usual column-major order: byte `r + 4 * c`
//! sits in row `r`, column `c`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

const fn gf_inv(a: u8) -> u8 {
    // a^254 in GF(2^8); maps 0 to 0
    let mut result = 1u8;
    let mut base = a;
    let mut e = 254u32;
    while e != 0 {
        if e & 1 != 0 {
            result = gf_mul(result, base);
        }
        base = gf_mul(base, base);
        e >>= 1;
    }
    if a == 0 {
        0
    } else {
        result
    }
}

const fn build_sbox() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        let x = gf_inv(i as u8);
        table[i] =
            x ^ x.rotate_left(1) ^ x.rotate_left(2) ^ x.rotate_left(3) ^ x.rotate_left(4) ^ 0x63;
        i += 1;
    }
    table
}

const fn build_inv_sbox(sbox: &[u8; 256]) -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        table[sbox[i] as usize] = i as u8;
        i += 1;
    }
    table
}

/// The AES substitution box.
pub const SBOX: [u8; 256] = build_sbox();
/// Inverse of [`SBOX`].
pub const INV_SBOX: [u8; 256] = build_inv_sbox(&SBOX);

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

#[inline]
pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

#[inline]
pub fn inv_sbox(x: u8) -> u8 {
    INV_SBOX[x as usize]
}

const fn build_shiftrows_source() -> [usize; 16] {
    let mut table = [0usize; 16];
    let mut p = 0;
    while p < 16 {
        let row = p % 4;
        let col = p / 4;
        table[p] = row + 4 * ((col + row) % 4);
        p += 1;
    }
    table
}

/// `SHIFTROWS_SOURCE[p]` is the state position whose byte ends up at
/// position `p` after ShiftRows.
pub const SHIFTROWS_SOURCE: [usize; 16] = build_shiftrows_source();

/// Position of the round-9 state byte that, after SubBytes and ShiftRows,
/// lands at ciphertext position `pos`.
pub fn shiftrows_source(pos: usize) -> Result<usize> {
    SHIFTROWS_SOURCE.get(pos).copied().ok_or(Error::OutOfRange {
        what: "state position",
        value: pos,
        bound: 16,
    })
}

macro_rules! byte_block {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
        pub struct $name(pub [u8; 16]);

        impl $name {
            pub const fn new(bytes: [u8; 16]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; 16] {
                &self.0
            }

            /// Lowercase hex, no separators.
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self> {
                let mut out = [0u8; 16];
                hex::decode_to_slice(s.trim(), &mut out)
                    .map_err(|e| Error::Parse(format!("bad 128-bit hex `{s}`: {e}")))?;
                Ok(Self(out))
            }
        }

        impl TryFrom<&[u8]> for $name {
            type Error = Error;

            fn try_from(bytes: &[u8]) -> Result<Self> {
                let arr: [u8; 16] = bytes.try_into().map_err(|_| {
                    Error::Parse(format!("expected 16 bytes, got {}", bytes.len()))
                })?;
                Ok(Self(arr))
            }
        }

        impl From<[u8; 16]> for $name {
            fn from(bytes: [u8; 16]) -> Self {
                Self(bytes)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::from_hex(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

byte_block!(
    /// A 128-bit AES state, plaintext or ciphertext, in column-major order.
    Block
);
byte_block!(
    /// A 128-bit AES key (the cipher key, or a round key).
    AesKey
);

impl From<AesKey> for Block {
    fn from(k: AesKey) -> Self {
        Block(k.0)
    }
}

impl From<Block> for AesKey {
    fn from(b: Block) -> Self {
        AesKey(b.0)
    }
}

/// Eleven round keys of AES-128, index 0 being the cipher key itself.
pub type KeySchedule = [Block; 11];

/// Next round key from the previous one.
pub(crate) fn next_round_key(prev: &[u8; 16], round: usize) -> [u8; 16] {
    let mut out = [0u8; 16];
    let t = [
        SBOX[prev[13] as usize] ^ RCON[round - 1],
        SBOX[prev[14] as usize],
        SBOX[prev[15] as usize],
        SBOX[prev[12] as usize],
    ];
    for i in 0..4 {
        out[i] = prev[i] ^ t[i];
    }
    for i in 4..16 {
        out[i] = prev[i] ^ out[i - 4];
    }
    out
}

/// Inverse of [`next_round_key`].
pub(crate) fn prev_round_key(next: &[u8; 16], round: usize) -> [u8; 16] {
    let mut out = [0u8; 16];
    for i in (4..16).rev() {
        out[i] = next[i] ^ next[i - 4];
    }
    let t = [
        SBOX[out[13] as usize] ^ RCON[round - 1],
        SBOX[out[14] as usize],
        SBOX[out[15] as usize],
        SBOX[out[12] as usize],
    ];
    for i in 0..4 {
        out[i] = next[i] ^ t[i];
    }
    out
}

/// AES-128 key expansion.
pub fn expand_key(key: &AesKey) -> KeySchedule {
    let mut rk = [Block::default(); 11];
    rk[0] = Block(key.0);
    for round in 1..=10 {
        rk[round] = Block(next_round_key(&rk[round - 1].0, round));
    }
    rk
}

fn sub_bytes(s: &mut [u8; 16]) {
    for b in s.iter_mut() {
        *b = SBOX[*b as usize];
    }
}

fn shift_rows(s: &mut [u8; 16]) {
    let src = *s;
    for (p, b) in s.iter_mut().enumerate() {
        *b = src[SHIFTROWS_SOURCE[p]];
    }
}

fn mix_columns(s: &mut [u8; 16]) {
    for col in s.chunks_exact_mut(4) {
        let [a0, a1, a2, a3] = [col[0], col[1], col[2], col[3]];
        col[0] = gf_mul(a0, 2) ^ gf_mul(a1, 3) ^ a2 ^ a3;
        col[1] = a0 ^ gf_mul(a1, 2) ^ gf_mul(a2, 3) ^ a3;
        col[2] = a0 ^ a1 ^ gf_mul(a2, 2) ^ gf_mul(a3, 3);
        col[3] = gf_mul(a0, 3) ^ a1 ^ a2 ^ gf_mul(a3, 2);
    }
}

fn add_round_key(s: &mut [u8; 16], k: &Block) {
    for (b, k) in s.iter_mut().zip(k.0.iter()) {
        *b ^= k;
    }
}

/// The final AES round: SubBytes, ShiftRows, AddRoundKey (no MixColumns).
pub fn final_round(state: &Block, round_key_10: &Block) -> Block {
    let mut s = state.0;
    sub_bytes(&mut s);
    shift_rows(&mut s);
    add_round_key(&mut s, round_key_10);
    Block(s)
}

/// One AES-128 encryption together with the register contents around the
/// last clock edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncryptionRecord {
    pub plaintext: Block,
    pub ciphertext: Block,
    /// State after round 9, the register value before the final update.
    pub round9_state: Block,
    pub round_key_10: Block,
}

impl EncryptionRecord {
    /// Transition of the round-state register at the final clock edge.
    pub fn last_round_transitions(&self) -> TransitionCount {
        register_transitions(&self.round9_state, &self.ciphertext)
    }
}

/// Encrypts with a precomputed key schedule.
pub fn encrypt_with_schedule(schedule: &KeySchedule, plaintext: &Block) -> EncryptionRecord {
    let mut s = plaintext.0;
    add_round_key(&mut s, &schedule[0]);
    for rk in &schedule[1..10] {
        sub_bytes(&mut s);
        shift_rows(&mut s);
        mix_columns(&mut s);
        add_round_key(&mut s, rk);
    }
    let round9_state = Block(s);
    let ciphertext = final_round(&round9_state, &schedule[10]);
    EncryptionRecord {
        plaintext: *plaintext,
        ciphertext,
        round9_state,
        round_key_10: schedule[10],
    }
}

/// AES-128 encryption of one block.
pub fn encrypt(key: &AesKey, plaintext: &Block) -> EncryptionRecord {
    encrypt_with_schedule(&expand_key(key), plaintext)
}

/// Bit transitions of a 128-bit register between two consecutive values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TransitionCount {
    /// Bits rising 0 -> 1.
    pub n01: u32,
    /// Bits falling 1 -> 0.
    pub n10: u32,
    /// Bits holding their value.
    pub n_stable: u32,
}

impl TransitionCount {
    /// Hamming distance between the two register values.
    pub fn hamming_distance(&self) -> u32 {
        self.n01 + self.n10
    }
}

pub fn register_transitions(before: &Block, after: &Block) -> TransitionCount {
    let b = u128::from_le_bytes(before.0);
    let a = u128::from_le_bytes(after.0);
    let n01 = (!b & a).count_ones();
    let n10 = (b & !a).count_ones();
    TransitionCount {
        n01,
        n10,
        n_stable: 128 - n01 - n10,
    }
}
