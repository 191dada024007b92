//! AFL-style byte-level mutators applied to one literal value.

use rand::Rng;

use super::MutatorKind;

/// Upper bound on a mutated value's length.
pub const MAX_VALUE_LEN: usize = 4096;
const ARITH_MAX: u64 = 35;
const MAX_INSERT: usize = 16;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 19] = [
    -128, -1, 0, 1, 16, 32, 64, 100, 127, -32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767,
];
pub const INTERESTING_32: [i32; 27] = [
    -128,
    -1,
    0,
    1,
    16,
    32,
    64,
    100,
    127,
    -32768,
    -129,
    128,
    255,
    256,
    512,
    1000,
    1024,
    4096,
    32767,
    -2_147_483_648,
    -100_663_046,
    -32769,
    32768,
    65535,
    65536,
    100_663_045,
    2_147_483_647,
];

/// Applies one byte-level mutator. Sequence-level kinds return the input
/// unchanged; so do size-reducing and in-place kinds on inputs too short
/// for them.
pub fn apply_byte_mutator<R: Rng + ?Sized>(
    kind: MutatorKind,
    input: &[u8],
    rng: &mut R,
) -> Vec<u8> {
    let mut v = input.to_vec();
    let n = v.len();
    use MutatorKind::*;
    match kind {
        BitFlip if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] ^= 1 << rng.gen_range(0..8);
        }
        ByteAdd if n > 0 => {
            let i = rng.gen_range(0..n);
            let delta = 1 + rng.gen_range(0..ARITH_MAX) as u8;
            v[i] = if rng.gen() {
                v[i].wrapping_add(delta)
            } else {
                v[i].wrapping_sub(delta)
            };
        }
        ByteDec if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] = v[i].wrapping_sub(1);
        }
        ByteInc if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] = v[i].wrapping_add(1);
        }
        ByteFlip if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] = !v[i];
        }
        ByteNeg if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] = v[i].wrapping_neg();
        }
        ByteRand if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] ^= rng.gen_range(1..=255u8);
        }
        ByteInteresting if n > 0 => {
            let i = rng.gen_range(0..n);
            v[i] = INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as u8;
        }
        WordAdd => add_le(&mut v, 2, rng),
        DwordAdd => add_le(&mut v, 4, rng),
        QwordAdd => add_le(&mut v, 8, rng),
        WordInteresting if n >= 2 => {
            let val = INTERESTING_16[rng.gen_range(0..INTERESTING_16.len())];
            let at = rng.gen_range(0..=n - 2);
            v[at..at + 2].copy_from_slice(&val.to_le_bytes());
        }
        DwordInteresting if n >= 4 => {
            let val = INTERESTING_32[rng.gen_range(0..INTERESTING_32.len())];
            let at = rng.gen_range(0..=n - 4);
            v[at..at + 4].copy_from_slice(&val.to_le_bytes());
        }
        BytesDelete if n > 0 => {
            let (start, len) = range(n, rng);
            v.drain(start..start + len);
        }
        BytesExpand if n > 0 => {
            let (start, len) = range(n, rng);
            let copy = v[start..start + len].to_vec();
            v.splice(start..start, copy);
        }
        BytesInsert => {
            let byte = if n > 0 {
                v[rng.gen_range(0..n)]
            } else {
                rng.gen()
            };
            let amount = rng.gen_range(1..=MAX_INSERT);
            let at = rng.gen_range(0..=n);
            v.splice(at..at, std::iter::repeat_n(byte, amount));
        }
        BytesRandInsert => {
            let byte: u8 = rng.gen();
            let amount = rng.gen_range(1..=MAX_INSERT);
            let at = rng.gen_range(0..=n);
            v.splice(at..at, std::iter::repeat_n(byte, amount));
        }
        BytesInsertCopy if n > 0 => {
            let (start, len) = range(n, rng);
            let copy = v[start..start + len].to_vec();
            let at = rng.gen_range(0..=n);
            v.splice(at..at, copy);
        }
        BytesSet if n > 0 => {
            let byte = v[rng.gen_range(0..n)];
            let (start, len) = range(n, rng);
            v[start..start + len].fill(byte);
        }
        BytesRandSet if n > 0 => {
            let byte: u8 = rng.gen();
            let (start, len) = range(n, rng);
            v[start..start + len].fill(byte);
        }
        BytesCopy if n > 1 => {
            let src = rng.gen_range(0..n);
            let dst = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - src.max(dst));
            v.copy_within(src..src + len, dst);
        }
        BytesSwap if n > 1 => {
            let len = rng.gen_range(1..=n / 2);
            let a = rng.gen_range(0..=n - 2 * len);
            let b = rng.gen_range(a + len..=n - len);
            let (left, right) = v.split_at_mut(b);
            left[a..a + len].swap_with_slice(&mut right[..len]);
        }
        _ => {}
    }
    v.truncate(MAX_VALUE_LEN);
    v
}

/// A random non-empty range inside `0..n`.
fn range<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let start = rng.gen_range(0..n);
    let len = rng.gen_range(1..=n - start);
    (start, len)
}

fn add_le<R: Rng + ?Sized>(v: &mut [u8], width: usize, rng: &mut R) {
    if v.len() < width {
        return;
    }
    let at = rng.gen_range(0..=v.len() - width);
    let mut buf = [0u8; 8];
    buf[..width].copy_from_slice(&v[at..at + width]);
    let cur = u64::from_le_bytes(buf);
    let delta = 1 + rng.gen_range(0..ARITH_MAX);
    let next = if rng.gen() {
        cur.wrapping_add(delta)
    } else {
        cur.wrapping_sub(delta)
    };
    v[at..at + width].copy_from_slice(&next.to_le_bytes()[..width]);
}
