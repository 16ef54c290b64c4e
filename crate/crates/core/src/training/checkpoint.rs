//! Binary checkpoints: config, named parameters, optimizer and rng state.
//!
//! Layout, little-endian: magic `ASTC`, version u32, config text (u32 length
//! + UTF-8 `key=value` lines), parameter count u32, then per parameter its
//! name, rank u32, extents u32 each, element width u32 and data; then the
//! optimizer block (step u64, lr/beta1/beta2/eps f64, moment count u32, each
//! first and second moment in parameter order); then the rng block (seed 32
//! bytes, stream u64, word position u128); finally a CRC-32 of everything
//! before it.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::adam::{AdamConfig, AdamState};
use super::trainer::{EpochRecord, Session, TrainConfig, TrainPhase, TrainState};
use crate::binio::{check_width, put_f64, put_len, put_str, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Precision, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASTC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_text<T: Real>(session: &Session<T>) -> String {
    let mut out = String::new();
    out.push_str(&format!("precision={}\n", T::PRECISION));
    for (k, v) in session.model.cfg.to_kv() {
        out.push_str(&format!("model.{k}={v}\n"));
    }
    for (k, v) in session.cfg.to_kv() {
        out.push_str(&format!("train.{k}={v}\n"));
    }
    out.push_str(&format!("phase={}\n", session.state.phase));
    out.push_str(&format!("epoch_in_phase={}\n", session.state.epoch_in_phase));
    for r in &session.state.history {
        out.push_str(&format!("history={r}\n"));
    }
    out
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Real>(session: &Session<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &config_text(session));

    let store = &session.model.store;
    put_len(&mut out, store.len())?;
    for (_, p) in store.iter() {
        put_str(&mut out, &p.name);
        put_len(&mut out, p.value.rank())?;
        for &e in p.value.shape() {
            put_len(&mut out, e)?;
        }
        put_u32(&mut out, T::WIDTH);
        put_tensor(&mut out, &p.value);
    }

    let adam = &session.state.adam;
    put_u64(&mut out, adam.t);
    for h in [adam.cfg.lr, adam.cfg.beta1, adam.cfg.beta2, adam.cfg.eps] {
        put_f64(&mut out, h);
    }
    put_len(&mut out, adam.m.len())?;
    for (m, v) in adam.m.iter().zip(&adam.v) {
        put_tensor(&mut out, m);
        put_tensor(&mut out, v);
    }

    let rng = &session.state.rng;
    out.extend_from_slice(&rng.get_seed());
    put_u64(&mut out, rng.get_stream());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());

    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Header {
    precision: Precision,
    model: ModelConfig,
    train: TrainConfig,
    phase: TrainPhase,
    epoch_in_phase: usize,
    history: Vec<EpochRecord>,
}

fn parse_config(text: &str, offset: usize) -> Result<Header> {
    let bad = |msg: String| Error::format(offset, msg);
    let mut precision = None;
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let mut phase = None;
    let mut epoch_in_phase = None;
    let mut history = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("config line without `=`: `{line}`")))?;
        let wrap = |e: Error| bad(format!("config `{key}`: {e}"));
        let known = if let Some(k) = key.strip_prefix("model.") {
            model.apply_kv(k, value).map_err(wrap)?
        } else if let Some(k) = key.strip_prefix("train.") {
            train.apply_kv(k, value).map_err(wrap)?
        } else {
            match key {
                "precision" => precision = Some(value.parse::<Precision>().map_err(wrap)?),
                "phase" => phase = Some(value.parse::<TrainPhase>().map_err(wrap)?),
                "epoch_in_phase" => {
                    epoch_in_phase = Some(value.parse().map_err(|_| bad(format!("bad epoch `{value}`")))?)
                }
                "history" => history.push(value.parse().map_err(wrap)?),
                _ => return Err(bad(format!("unknown config key `{key}`"))),
            }
            true
        };
        if !known {
            return Err(bad(format!("unknown config key `{key}`")));
        }
    }
    model.validate().map_err(|e| bad(e.to_string()))?;
    train.validate().map_err(|e| bad(e.to_string()))?;
    Ok(Header {
        precision: precision.ok_or_else(|| bad("missing precision".into()))?,
        model,
        train,
        phase: phase.ok_or_else(|| bad("missing phase".into()))?,
        epoch_in_phase: epoch_in_phase.ok_or_else(|| bad("missing epoch_in_phase".into()))?,
        history,
    })
}

fn read_preamble(bytes: &[u8]) -> Result<(Reader<'_>, Header)> {
    let body_len = bytes
        .len()
        .checked_sub(4)
        .ok_or_else(|| Error::format(0, "file too short"))?;
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(Error::format(body_len, "checksum mismatch"));
    }
    let at = r.pos();
    let text = r.string("config block")?;
    let header = parse_config(&text, at)?;
    Ok((Reader::new(&bytes[..body_len]).skip_to(r.pos()), header))
}

/// Precision a checkpoint was written at, so callers can pick the element type.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    Ok(read_preamble(bytes)?.1.precision)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Session<T>> {
    let (mut r, h) = read_preamble(bytes)?;
    if h.precision != T::PRECISION {
        return Err(Error::format(
            0,
            format!("checkpoint holds {} precision, {} requested", h.precision, T::PRECISION),
        ));
    }
    let mut model = Model::<T>::new(h.model, 0)?;

    let at = r.pos();
    let count = r.u32("parameter count")? as usize;
    if count != model.store.len() {
        return Err(Error::format(
            at,
            format!("{count} parameters stored, model has {}", model.store.len()),
        ));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = r.pos();
        let name = r.string("parameter name")?;
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| Error::format(at, format!("unknown parameter `{name}`")))?;
        if !seen.insert(id) {
            return Err(Error::format(at, format!("parameter `{name}` stored twice")));
        }
        let rank = r.u32("rank")? as usize;
        let at = r.pos();
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        if shape != model.store.value(id).shape() {
            return Err(Error::format(
                at,
                format!("`{name}` has shape {shape:?}, model expects {:?}", model.store.value(id).shape()),
            ));
        }
        let at = r.pos();
        let width = r.u32("element width")?;
        check_width(width, at)?;
        if width != T::WIDTH {
            return Err(Error::format(at, format!("element width {width} does not match {}", T::WIDTH)));
        }
        let len = model.store.value(id).len();
        let data = r.reals::<T>(len, width, "parameter data")?;
        model.store.get_mut(id).value.data_mut().copy_from_slice(&data);
    }

    let t = r.u64("optimizer step")?;
    let cfg = AdamConfig {
        lr: r.f64("lr")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        eps: r.f64("eps")?,
    };
    let at = r.pos();
    let moments = r.u32("moment count")? as usize;
    if moments != model.store.len() {
        return Err(Error::format(at, format!("{moments} moment pairs for {} parameters", model.store.len())));
    }
    let mut adam = AdamState::new(cfg, &model.store);
    adam.t = t;
    for i in 0..moments {
        let len = adam.m[i].len();
        let m = r.reals::<T>(len, T::WIDTH, "first moment")?;
        adam.m[i].data_mut().copy_from_slice(&m);
        let v = r.reals::<T>(len, T::WIDTH, "second moment")?;
        adam.v[i].data_mut().copy_from_slice(&v);
    }

    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng position")?;
    r.finish()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let state = TrainState {
        phase: h.phase,
        epoch_in_phase: h.epoch_in_phase,
        adam,
        rng,
        history: h.history,
    };
    Session::from_parts(model, h.train, state)
}

pub fn save_checkpoint<T: Real>(session: &Session<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(session)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Session<T>> {
    decode_checkpoint(&fs::read(path)?)
}
