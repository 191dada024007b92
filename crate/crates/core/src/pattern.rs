//! Seeded generation of strings matching a regular expression.
//!
//! Works on the `regex-syntax` HIR. Anchors and word boundaries generate
//! nothing; unbounded repetitions are capped at `min + UNBOUNDED_EXTRA`.

use rand::Rng;
use regex_syntax::hir::{Class, Hir, HirKind};

/// Longest string the generator is allowed to produce, in characters.
pub(crate) const MAX_LEN: usize = 256;
const UNBOUNDED_EXTRA: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub(crate) enum PatternError {
    #[error("invalid pattern: {0}")]
    Invalid(String),
    #[error("pattern matches no string of length <= {MAX_LEN}")]
    Unsatisfiable,
}

pub(crate) fn generate<R: Rng + ?Sized>(
    pattern: &str,
    rng: &mut R,
) -> Result<String, PatternError> {
    let hir = regex_syntax::ParserBuilder::new()
        .build()
        .parse(pattern)
        .map_err(|e| PatternError::Invalid(e.to_string()))?;
    let mut out = String::new();
    emit(&hir, rng, &mut out)?;
    if out.chars().count() > MAX_LEN {
        return Err(PatternError::Unsatisfiable);
    }
    Ok(out)
}

fn emit<R: Rng + ?Sized>(hir: &Hir, rng: &mut R, out: &mut String) -> Result<(), PatternError> {
    if out.len() > 4 * MAX_LEN {
        return Err(PatternError::Unsatisfiable);
    }
    match hir.kind() {
        HirKind::Empty | HirKind::Look(_) => Ok(()),
        HirKind::Literal(lit) => {
            let s = std::str::from_utf8(&lit.0).map_err(|_| PatternError::Unsatisfiable)?;
            out.push_str(s);
            Ok(())
        }
        HirKind::Class(Class::Unicode(class)) => {
            let ranges = class.ranges();
            let total: u64 = ranges
                .iter()
                .map(|r| u64::from(r.end()) - u64::from(r.start()) + 1)
                .sum();
            if total == 0 {
                return Err(PatternError::Unsatisfiable);
            }
            let mut pick = rng.gen_range(0..total);
            for r in ranges {
                let width = u64::from(r.end()) - u64::from(r.start()) + 1;
                if pick < width {
                    // Surrogate gaps are already excluded by regex-syntax.
                    let c = char::from_u32(u32::from(r.start()) + pick as u32)
                        .ok_or(PatternError::Unsatisfiable)?;
                    out.push(c);
                    return Ok(());
                }
                pick -= width;
            }
            Err(PatternError::Unsatisfiable)
        }
        HirKind::Class(Class::Bytes(class)) => {
            let ascii: Vec<u8> = class
                .ranges()
                .iter()
                .flat_map(|r| r.start()..=r.end())
                .filter(u8::is_ascii)
                .collect();
            if ascii.is_empty() {
                return Err(PatternError::Unsatisfiable);
            }
            out.push(char::from(ascii[rng.gen_range(0..ascii.len())]));
            Ok(())
        }
        HirKind::Repetition(rep) => {
            let max = rep.max.unwrap_or(rep.min.saturating_add(UNBOUNDED_EXTRA));
            let max = max
                .min(rep.min.saturating_add(UNBOUNDED_EXTRA))
                .max(rep.min);
            if rep.min as usize > MAX_LEN {
                return Err(PatternError::Unsatisfiable);
            }
            let n = rng.gen_range(rep.min..=max);
            for _ in 0..n {
                emit(&rep.sub, rng, out)?;
            }
            Ok(())
        }
        HirKind::Capture(cap) => emit(&cap.sub, rng, out),
        HirKind::Concat(parts) => parts.iter().try_for_each(|p| emit(p, rng, out)),
        HirKind::Alternation(alts) => {
            let i = rng.gen_range(0..alts.len());
            emit(&alts[i], rng, out)
        }
    }
}
