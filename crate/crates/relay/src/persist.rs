//! Append-only journal with periodic snapshots.
//!
//! `journal.log` holds one frame per mutation; `snapshot.bin` holds the full
//! registry and pending queues as of the last compaction. Recovery loads the
//! snapshot and replays the journal, dropping a torn tail. Endpoints and
//! objects are not persisted.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use agentry_core::wire::{open_frame, read_frame, FrameBuilder, WireReader, WireWriter};
use agentry_core::{BehaviorSpec, CodecError};

use crate::store::{Mutation, Record, Store};

const REC_REGISTER: u8 = 0x50;
const REC_CLOSE: u8 = 0x51;
const REC_PUT: u8 = 0x52;
const REC_POP: u8 = 0x53;
const REC_REQUEUE: u8 = 0x54;
const REC_SNAPSHOT_ENTITY: u8 = 0x5f;

const MAX_RECORD: usize = u32::MAX as usize;

fn entity_field(b: &mut FrameBuilder, id: &agentry_core::EntityId) -> Result<(), CodecError> {
    let mut w = WireWriter::new();
    w.entity(id);
    b.field(&w.into_inner())?;
    Ok(())
}

fn spec_field(b: &mut FrameBuilder, spec: &Option<BehaviorSpec>) -> Result<(), CodecError> {
    match spec {
        Some(s) => {
            b.field(&[1])?;
            b.field(&s.encode())?;
        }
        None => {
            b.field(&[0])?;
        }
    }
    Ok(())
}

fn read_spec(r: &mut WireReader<'_>) -> Result<Option<BehaviorSpec>, CodecError> {
    Ok(match r.u8_field()? {
        0 => None,
        _ => Some(BehaviorSpec::decode(r.field()?)?),
    })
}

fn encode_mutation(m: &Mutation) -> Result<Vec<u8>, CodecError> {
    let mut b;
    match m {
        Mutation::Register { entity, spec } => {
            b = FrameBuilder::new(REC_REGISTER);
            entity_field(&mut b, entity)?;
            spec_field(&mut b, spec)?;
        }
        Mutation::Close { entity } => {
            b = FrameBuilder::new(REC_CLOSE);
            entity_field(&mut b, entity)?;
        }
        Mutation::Put { dest, envelope } => {
            b = FrameBuilder::new(REC_PUT);
            entity_field(&mut b, dest)?;
            b.field(envelope)?;
        }
        Mutation::Pop { entity, count } => {
            b = FrameBuilder::new(REC_POP);
            entity_field(&mut b, entity)?;
            b.field(&count.to_be_bytes())?;
        }
        Mutation::Requeue { entity, envelopes } => {
            b = FrameBuilder::new(REC_REQUEUE);
            entity_field(&mut b, entity)?;
            b.field(&(envelopes.len() as u32).to_be_bytes())?;
            for e in envelopes {
                b.field(e)?;
            }
        }
    }
    b.finish()
}

fn decode_mutation(frame: &[u8]) -> Result<Mutation, CodecError> {
    let (op, mut r) = open_frame(frame)?;
    let m = match op {
        REC_REGISTER => Mutation::Register {
            entity: r.entity_field()?,
            spec: read_spec(&mut r)?,
        },
        REC_CLOSE => Mutation::Close {
            entity: r.entity_field()?,
        },
        REC_PUT => Mutation::Put {
            dest: r.entity_field()?,
            envelope: r.field()?.to_vec(),
        },
        REC_POP => Mutation::Pop {
            entity: r.entity_field()?,
            count: r.u32_field()?,
        },
        REC_REQUEUE => {
            let entity = r.entity_field()?;
            let n = r.u32_field()?;
            let mut envelopes = Vec::new();
            for _ in 0..n {
                envelopes.push(r.field()?.to_vec());
            }
            Mutation::Requeue { entity, envelopes }
        }
        other => {
            return Err(CodecError::UnknownKind {
                found: other,
                offset: 5,
            })
        }
    };
    r.finish()?;
    Ok(m)
}

fn encode_snapshot_entity(
    id: &agentry_core::EntityId,
    rec: &Record,
) -> Result<Vec<u8>, CodecError> {
    let mut b = FrameBuilder::new(REC_SNAPSHOT_ENTITY);
    entity_field(&mut b, id)?;
    spec_field(&mut b, &rec.spec)?;
    b.field(&[rec.open as u8])?;
    b.field(&(rec.pending.len() as u32).to_be_bytes())?;
    for p in &rec.pending {
        b.field(p)?;
    }
    b.finish()
}

fn decode_snapshot_entity(
    frame: &[u8],
) -> Result<(agentry_core::EntityId, Record), CodecError> {
    let (op, mut r) = open_frame(frame)?;
    if op != REC_SNAPSHOT_ENTITY {
        return Err(CodecError::UnknownKind {
            found: op,
            offset: 5,
        });
    }
    let id = r.entity_field()?;
    let spec = read_spec(&mut r)?;
    let open = r.u8_field()? != 0;
    let n = r.u32_field()?;
    let mut pending = std::collections::VecDeque::new();
    for _ in 0..n {
        pending.push_back(r.field()?.to_vec());
    }
    r.finish()?;
    Ok((
        id,
        Record {
            spec,
            endpoint: None,
            open,
            pending,
        },
    ))
}

/// Reads frames until EOF or the first damaged frame. Returns the frames and
/// the byte length of the intact prefix.
fn read_all_frames(path: &Path) -> io::Result<(Vec<Vec<u8>>, u64)> {
    let mut data = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut data)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e),
    }
    let mut frames = Vec::new();
    let mut cursor = &data[..];
    let mut good = 0u64;
    while !cursor.is_empty() {
        match read_frame(&mut cursor, MAX_RECORD) {
            Ok(f) => {
                good += f.len() as u64;
                frames.push(f);
            }
            Err(_) => break,
        }
    }
    Ok((frames, good))
}

pub(crate) struct Journal {
    dir: PathBuf,
    log: File,
    since_snapshot: usize,
    snapshot_every: usize,
}

impl Journal {
    /// Opens (or creates) the data directory and rebuilds the store from it.
    pub fn open(dir: &Path, snapshot_every: usize) -> io::Result<(Journal, Store)> {
        fs::create_dir_all(dir)?;
        let mut store = Store::default();
        let (snap, _) = read_all_frames(&dir.join("snapshot.bin"))?;
        for f in snap {
            match decode_snapshot_entity(&f) {
                Ok((id, rec)) => {
                    store.entities.insert(id, rec);
                }
                Err(e) => {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string()));
                }
            }
        }
        let log_path = dir.join("journal.log");
        let (frames, good_len) = read_all_frames(&log_path)?;
        let mut replayed = 0;
        for f in frames {
            match decode_mutation(&f) {
                Ok(m) => {
                    store.replay(m);
                    replayed += 1;
                }
                Err(e) => {
                    log::warn!("stopping journal replay at damaged record: {e}");
                    break;
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        // drop a torn tail left by a crash mid-append
        if log.metadata()?.len() > good_len {
            log.set_len(good_len)?;
        }
        log::info!(
            "recovered {} entities ({} journal records) from {}",
            store.entities.len(),
            replayed,
            dir.display()
        );
        Ok((
            Journal {
                dir: dir.to_path_buf(),
                log,
                since_snapshot: replayed,
                snapshot_every,
            },
            store,
        ))
    }

    pub fn append(&mut self, m: &Mutation) -> io::Result<()> {
        let frame =
            encode_mutation(m).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.log.write_all(&frame)?;
        if matches!(m, Mutation::Register { .. } | Mutation::Close { .. }) {
            self.log.sync_data()?;
        }
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn needs_snapshot(&self) -> bool {
        self.since_snapshot >= self.snapshot_every
    }

    /// Writes a full snapshot and truncates the journal.
    pub fn snapshot(&mut self, store: &Store) -> io::Result<()> {
        let tmp = self.dir.join("snapshot.bin.tmp");
        {
            let mut f = File::create(&tmp)?;
            for (id, rec) in &store.entities {
                let frame = encode_snapshot_entity(id, rec)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
                f.write_all(&frame)?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join("snapshot.bin"))?;
        self.log.set_len(0)?;
        self.log.sync_all()?;
        self.since_snapshot = 0;
        Ok(())
    }
}
