//! Flat binary checkpoint with a versioned header, plus a text dump.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   b"GVCK"
//! version u32            (= 1)
//! heads   u32
//! repeated per head:
//!   tag_len u16, tag utf-8 bytes      e.g. "generator.proposal"
//!   features u32, actions u32
//!   features * actions f64 weights, row-major
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{GeneratorParams, Head, VerifierParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GVCK";
const VERSION: u32 = 1;

fn named_heads<'a>(g: &'a GeneratorParams, v: &'a VerifierParams) -> Vec<(&'static str, &'a Head)> {
    g.heads().into_iter().chain(v.heads()).collect()
}

pub fn write_checkpoint(w: &mut impl Write, g: &GeneratorParams, v: &VerifierParams) -> Result<()> {
    let heads = named_heads(g, v);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(heads.len() as u32).to_le_bytes())?;
    for (tag, h) in heads {
        w.write_all(&(tag.len() as u16).to_le_bytes())?;
        w.write_all(tag.as_bytes())?;
        w.write_all(&(h.features as u32).to_le_bytes())?;
        w.write_all(&(h.actions as u32).to_le_bytes())?;
        for x in &h.weights {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(GeneratorParams, VerifierParams)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = read_u32(r)? as usize;
    let mut heads = std::collections::BTreeMap::new();
    for _ in 0..n {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut tag = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|_| Error::Checkpoint("tag not utf-8".into()))?;
        let features = read_u32(r)? as usize;
        let actions = read_u32(r)? as usize;
        let mut weights = Vec::with_capacity(features * actions);
        let mut b = [0u8; 8];
        for _ in 0..features * actions {
            r.read_exact(&mut b)?;
            weights.push(f64::from_le_bytes(b));
        }
        heads.insert(
            tag,
            Head {
                features,
                actions,
                weights,
            },
        );
    }
    let mut take = |tag: &str| {
        heads
            .remove(tag)
            .ok_or_else(|| Error::Checkpoint(format!("missing head {tag}")))
    };
    let g = GeneratorParams {
        proposal: take("generator.proposal")?,
        revision: take("generator.revision")?,
        action: take("generator.action")?,
    };
    let v = VerifierParams {
        intervene: take("verifier.intervene")?,
        template: take("verifier.template")?,
    };
    if !g.is_finite() || !v.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok((g, v))
}

/// Human-diffable dump: one header line per head, one line per feature row.
pub fn text_dump(g: &GeneratorParams, v: &VerifierParams) -> String {
    let mut s = format!("# gvlab checkpoint v{VERSION}\n");
    for (tag, h) in named_heads(g, v) {
        let _ = writeln!(s, "[{tag}] {}x{}", h.features, h.actions);
        for i in 0..h.features {
            let row: Vec<String> = (0..h.actions)
                .map(|j| format!("{:+.17e}", h.get(i, j)))
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s
}
