//! Binary checkpoint of a [`StrategyState`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "FCLSTATE"
//! version    u32      1
//! kind       u8       0 none, 1 ewc, 2 online-ewc, 3 si, 4 lwf
//! segments   u32 count, then per segment:
//!              u32 name length, UTF-8 name, u32 rank, rank × u64 dims
//! payload    per kind, every vector is P × f64 (P = parameter count):
//!              ewc         u64 tasks, then per task anchor, fisher
//!              online-ewc  u64 tasks seen, u8 present, [anchor, fisher]
//!              si          omega, importance, u8 present, [anchor],
//!                          u8 present, [task start]
//!              lwf         u8 present, [teacher]
//! crc32      u32 over every preceding byte
//! ```

use std::path::Path;
use std::sync::Arc;

use crate::engine::{ParamLayout, ParamVector, Segment};
use crate::error::{Error, Result};
use crate::strategies::{
    Anchor, EwcState, FisherDiag, LwfState, OnlineEwcState, SiState, StrategyKind, StrategyState,
};

pub const MAGIC: &[u8; 8] = b"FCLSTATE";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn optional(&mut self, v: Option<&ParamVector>) {
        self.u8(u8::from(v.is_some()));
        if let Some(p) = v {
            self.vector(p.values());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::StateCorruption(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("count overflows usize"))
    }
    fn vector(&mut self, len: usize) -> Result<Vec<f64>> {
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| corrupt("vector too long"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn params(&mut self, layout: &Arc<ParamLayout>) -> Result<ParamVector> {
        let values = self.vector(layout.len())?;
        ParamVector::from_values(layout.clone(), values)
    }
    fn optional(&mut self, layout: &Arc<ParamLayout>) -> Result<Option<ParamVector>> {
        match self.u8()? {
            0 => Ok(None),
            1 => self.params(layout).map(Some),
            f => Err(corrupt(format!("invalid presence flag {f}"))),
        }
    }
    fn fisher(&mut self, len: usize) -> Result<FisherDiag> {
        FisherDiag::new(self.vector(len)?)
    }
}

fn check_vectors(state: &StrategyState, layout: &ParamLayout) -> Result<()> {
    let n = layout.len();
    let mut lens: Vec<usize> = Vec::new();
    let mut params: Vec<&ParamVector> = Vec::new();
    match state {
        StrategyState::None => {}
        StrategyState::Ewc(s) => {
            for a in &s.tasks {
                params.push(&a.params);
                lens.push(a.fisher.len());
            }
        }
        StrategyState::OnlineEwc(s) => {
            if let Some(a) = &s.running {
                params.push(&a.params);
                lens.push(a.fisher.len());
            }
        }
        StrategyState::Si(s) => {
            lens.extend([s.omega.len(), s.importance.len()]);
            params.extend(s.anchor.iter().chain(s.task_start.iter()));
        }
        StrategyState::Lwf(s) => params.extend(s.teacher.iter()),
    }
    for p in params {
        p.check_congruent(layout)?;
    }
    if let Some(bad) = lens.into_iter().find(|&l| l != n) {
        return Err(corrupt(format!("state vector of length {bad} for {n} parameters")));
    }
    Ok(())
}

/// Serializes `state` over parameters laid out as `layout`.
pub fn encode_state(state: &StrategyState, layout: &ParamLayout) -> Result<Vec<u8>> {
    check_vectors(state, layout)?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(state.kind().tag());
    w.u32(layout.segments().len() as u32);
    for seg in layout.segments() {
        w.u32(seg.name.len() as u32);
        w.0.extend_from_slice(seg.name.as_bytes());
        w.u32(seg.shape.len() as u32);
        for &d in &seg.shape {
            w.u64(d as u64);
        }
    }
    match state {
        StrategyState::None => {}
        StrategyState::Ewc(s) => {
            w.u64(s.tasks.len() as u64);
            for a in &s.tasks {
                w.vector(a.params.values());
                w.vector(a.fisher.values());
            }
        }
        StrategyState::OnlineEwc(s) => {
            w.u64(s.tasks_seen as u64);
            w.u8(u8::from(s.running.is_some()));
            if let Some(a) = &s.running {
                w.vector(a.params.values());
                w.vector(a.fisher.values());
            }
        }
        StrategyState::Si(s) => {
            w.vector(&s.omega);
            w.vector(&s.importance);
            w.optional(s.anchor.as_ref());
            w.optional(s.task_start.as_ref());
        }
        StrategyState::Lwf(s) => w.optional(s.teacher.as_ref()),
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

/// Inverse of [`encode_state`]; the layout is rebuilt from the segment table.
pub fn decode_state(bytes: &[u8]) -> Result<(StrategyState, Arc<ParamLayout>)> {
    if bytes.len() < MAGIC.len() + 4 + 1 + 4 + 4 {
        return Err(corrupt("checkpoint shorter than its header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("not a strategy checkpoint (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checkpoint checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let tag = r.u8()?;
    let kind = StrategyKind::from_tag(tag).ok_or_else(|| corrupt(format!("unknown strategy tag {tag}")))?;
    let n_segments = r.u32()? as usize;
    let mut segments = Vec::with_capacity(n_segments.min(1024));
    let mut offset = 0;
    for _ in 0..n_segments {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("segment name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product();
        segments.push(Segment {
            name,
            offset,
            len,
            shape,
        });
        offset += len;
    }
    let layout = Arc::new(ParamLayout::from_segments(segments).map_err(|e| corrupt(e.to_string()))?);
    let n = layout.len();
    let state = match kind {
        StrategyKind::None => StrategyState::None,
        StrategyKind::Ewc => {
            let count = r.count()?;
            let mut tasks = Vec::new();
            for _ in 0..count {
                let params = r.params(&layout)?;
                let fisher = r.fisher(n)?;
                tasks.push(Anchor { params, fisher });
            }
            StrategyState::Ewc(EwcState { tasks })
        }
        StrategyKind::OnlineEwc => {
            let tasks_seen = r.count()?;
            let running = match r.u8()? {
                0 => None,
                1 => Some(Anchor {
                    params: r.params(&layout)?,
                    fisher: r.fisher(n)?,
                }),
                f => return Err(corrupt(format!("invalid presence flag {f}"))),
            };
            StrategyState::OnlineEwc(OnlineEwcState { running, tasks_seen })
        }
        StrategyKind::Si => {
            let omega = r.vector(n)?;
            let importance = r.vector(n)?;
            if importance.iter().any(|v| !(*v >= 0.0)) {
                return Err(corrupt("negative SI importance"));
            }
            StrategyState::Si(SiState {
                omega,
                importance,
                anchor: r.optional(&layout)?,
                task_start: r.optional(&layout)?,
            })
        }
        StrategyKind::Lwf => StrategyState::Lwf(LwfState {
            teacher: r.optional(&layout)?,
        }),
    };
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes in checkpoint", body.len() - r.pos)));
    }
    Ok((state, layout))
}

pub fn save_state(path: &Path, state: &StrategyState, layout: &ParamLayout) -> Result<()> {
    let bytes = encode_state(state, layout)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_state(path: &Path) -> Result<(StrategyState, Arc<ParamLayout>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_state(&bytes)
}
