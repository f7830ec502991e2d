//! Line-oriented dataset files. All floats are written with Rust's shortest
//! round-trip formatting, so values survive a write/read cycle bit-exactly
//! on every platform.
//!
//! Dense samples (`.sumds`):
//!   header  `sumds 1 d=<D> n=<N>`
//!   record  `<user>\t<label>\t<target>\t<history>`
//!     target  = comma-joined floats (D of them)
//!     history = ';'-joined events, each `<ts>:<comma-joined floats>`;
//!               empty field for an empty history
//!
//! Id samples (`.sumids`):
//!   header  `sumids 1 n=<N>`
//!   record  `<user>\t<label>\t<target_idx>\t<ts>:<item_idx>;...`
//!
//! Vocabulary (`.sumvocab`):
//!   header  `sumvocab 1 items=<N> cats=<M>`
//!   N lines `i\t<item_id>\t<cat_idx>\t<pv_count>`
//!   M lines `c\t<cat_id>`
//!
//! Item table (`.sumitems`):
//!   header  `sumitems 1 d=<D> n=<N>`
//!   N lines `<idx>\t<comma-joined floats>`

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::encoder::Event;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::Vector;
use crate::trainer::{IdSample, Vocab};

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Data(format!("bad float in {what}: {e}")))
        })
        .collect()
}

fn header_field(token: Option<&str>, key: &str) -> Result<usize> {
    let tok = token.ok_or_else(|| Error::Data(format!("missing header field {key}")))?;
    let (k, v) = tok
        .split_once('=')
        .ok_or_else(|| Error::Data(format!("malformed header field {tok}")))?;
    if k != key {
        return Err(Error::Data(format!("expected header field {key}, got {k}")));
    }
    v.parse()
        .map_err(|e| Error::Data(format!("bad header value for {key}: {e}")))
}

pub fn write_dense(path: &Path, samples: &[Sample], d: usize) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sumds 1 d={d} n={}", samples.len())?;
    for s in samples {
        let history = s
            .history
            .iter()
            .map(|e| format!("{}:{}", e.timestamp, join_floats(e.x.as_slice())))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.user_id,
            s.label,
            join_floats(s.target.as_slice()),
            history
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<(Vec<Sample>, usize)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty dataset file".into()))??;
    let mut toks = header.split(' ');
    if toks.next() != Some("sumds") || toks.next() != Some("1") {
        return Err(Error::Data("not a dense dataset file (sumds 1)".into()));
    }
    let d = header_field(toks.next(), "d")?;
    let n = header_field(toks.next(), "n")?;

    let mut samples = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (user, label, target, history) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        );
        let (Some(user), Some(label), Some(target), Some(history)) =
            (user, label, target, history)
        else {
            return Err(Error::Data(format!("record {i}: expected 4 fields")));
        };
        let label: u8 = label
            .parse()
            .map_err(|e| Error::Data(format!("record {i}: bad label: {e}")))?;
        let target = Vector::new(parse_floats(target, "target")?)?;
        if target.len() != d {
            return Err(Error::Data(format!("record {i}: target dim != {d}")));
        }
        let mut events = Vec::new();
        if !history.is_empty() {
            for ev in history.split(';') {
                let (ts, emb) = ev
                    .split_once(':')
                    .ok_or_else(|| Error::Data(format!("record {i}: malformed event")))?;
                let ts: i64 = ts
                    .parse()
                    .map_err(|e| Error::Data(format!("record {i}: bad timestamp: {e}")))?;
                let x = Vector::new(parse_floats(emb, "event")?)?;
                if x.len() != d {
                    return Err(Error::Data(format!("record {i}: event dim != {d}")));
                }
                events.push(Event::new(user, x, ts));
            }
        }
        samples.push(Sample {
            user_id: user.to_string(),
            history: events,
            target,
            label,
        });
    }
    if samples.len() != n {
        return Err(Error::Data(format!(
            "header says {n} samples, file has {}",
            samples.len()
        )));
    }
    Ok((samples, d))
}

pub fn write_id_samples(path: &Path, samples: &[IdSample]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sumids 1 n={}", samples.len())?;
    for s in samples {
        let history = s
            .history
            .iter()
            .map(|(item, ts)| format!("{ts}:{item}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(out, "{}\t{}\t{}\t{}", s.user_id, s.label, s.target, history)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_id_samples(path: &Path) -> Result<Vec<IdSample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty dataset file".into()))??;
    let mut toks = header.split(' ');
    if toks.next() != Some("sumids") || toks.next() != Some("1") {
        return Err(Error::Data("not an id dataset file (sumids 1)".into()));
    }
    let n = header_field(toks.next(), "n")?;
    let mut samples = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!("record {i}: expected 4 fields")));
        }
        let label: u8 = fields[1]
            .parse()
            .map_err(|e| Error::Data(format!("record {i}: bad label: {e}")))?;
        let target: u32 = fields[2]
            .parse()
            .map_err(|e| Error::Data(format!("record {i}: bad target: {e}")))?;
        let mut history = Vec::new();
        if !fields[3].is_empty() {
            for ev in fields[3].split(';') {
                let (ts, item) = ev
                    .split_once(':')
                    .ok_or_else(|| Error::Data(format!("record {i}: malformed event")))?;
                history.push((
                    item.parse()
                        .map_err(|e| Error::Data(format!("record {i}: bad item: {e}")))?,
                    ts.parse()
                        .map_err(|e| Error::Data(format!("record {i}: bad ts: {e}")))?,
                ));
            }
        }
        samples.push(IdSample {
            user_id: fields[0].to_string(),
            history,
            target,
            label,
        });
    }
    if samples.len() != n {
        return Err(Error::Data(format!(
            "header says {n} samples, file has {}",
            samples.len()
        )));
    }
    Ok(samples)
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "sumvocab 1 items={} cats={}",
        vocab.n_items(),
        vocab.n_cats()
    )?;
    for i in 0..vocab.n_items() {
        writeln!(
            out,
            "i\t{}\t{}\t{}",
            vocab.item_ids[i], vocab.item_cat[i], vocab.pv_counts[i]
        )?;
    }
    for c in &vocab.cat_ids {
        writeln!(out, "c\t{c}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty vocab file".into()))??;
    let mut toks = header.split(' ');
    if toks.next() != Some("sumvocab") || toks.next() != Some("1") {
        return Err(Error::Data("not a vocab file (sumvocab 1)".into()));
    }
    let n_items = header_field(toks.next(), "items")?;
    let n_cats = header_field(toks.next(), "cats")?;
    let mut vocab = Vocab {
        item_ids: Vec::with_capacity(n_items),
        cat_ids: Vec::with_capacity(n_cats),
        item_cat: Vec::with_capacity(n_items),
        pv_counts: Vec::with_capacity(n_items),
    };
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "i" if fields.len() == 4 => {
                vocab.item_ids.push(fields[1].to_string());
                vocab.item_cat.push(
                    fields[2]
                        .parse()
                        .map_err(|e| Error::Data(format!("bad cat index: {e}")))?,
                );
                vocab.pv_counts.push(
                    fields[3]
                        .parse()
                        .map_err(|e| Error::Data(format!("bad pv count: {e}")))?,
                );
            }
            "c" if fields.len() == 2 => vocab.cat_ids.push(fields[1].to_string()),
            _ => return Err(Error::Data(format!("malformed vocab line: {line}"))),
        }
    }
    if vocab.n_items() != n_items || vocab.n_cats() != n_cats {
        return Err(Error::Data("vocab counts disagree with header".into()));
    }
    vocab.validate()?;
    Ok(vocab)
}

pub fn write_items(path: &Path, items: &[Vector], d: usize) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sumitems 1 d={d} n={}", items.len())?;
    for (i, item) in items.iter().enumerate() {
        writeln!(out, "{i}\t{}", join_floats(item.as_slice()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_items(path: &Path) -> Result<(Vec<Vector>, usize)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty items file".into()))??;
    let mut toks = header.split(' ');
    if toks.next() != Some("sumitems") || toks.next() != Some("1") {
        return Err(Error::Data("not an items file (sumitems 1)".into()));
    }
    let d = header_field(toks.next(), "d")?;
    let n = header_field(toks.next(), "n")?;
    let mut items = Vec::with_capacity(n);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (_, emb) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data("malformed item line".into()))?;
        let v = Vector::new(parse_floats(emb, "item")?)?;
        if v.len() != d {
            return Err(Error::Data(format!("item dim != {d}")));
        }
        items.push(v);
    }
    if items.len() != n {
        return Err(Error::Data("item count disagrees with header".into()));
    }
    Ok((items, d))
}
