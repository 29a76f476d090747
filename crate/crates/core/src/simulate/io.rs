use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{CensoredObservation, Jump};
use crate::error::{Error, Result};
use crate::model::StateSpace;

const CENSOR: &str = "CENSOR";

/// Writes `id,time,from,to` records; each observation ends with one `CENSOR` record
/// carrying the censoring time (`inf` when uncensored) and the state occupied then.
pub fn write_dataset<W: Write>(
    obs: &[CensoredObservation],
    states: &StateSpace,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "time", "from", "to"])?;
    for o in obs {
        let id = o.id.to_string();
        for j in &o.jumps {
            w.write_record([
                id.as_str(),
                &j.time.to_string(),
                states.label(j.from),
                states.label(j.to),
            ])?;
        }
        let last = o.jumps.last().map_or(o.initial, |j| j.to);
        w.write_record([
            id.as_str(),
            &o.censoring.to_string(),
            states.label(last),
            CENSOR,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(
    obs: &[CensoredObservation],
    states: &StateSpace,
    path: &Path,
) -> Result<()> {
    write_dataset(obs, states, BufWriter::new(File::create(path)?))
}

struct Partial {
    initial: usize,
    jumps: Vec<Jump>,
    censoring: Option<f64>,
    first_line: u64,
}

/// Reads a dataset written by [`write_dataset`]; observations are returned sorted by id.
pub fn read_dataset<R: Read>(
    input: R,
    states: &StateSpace,
    origin: &Path,
) -> Result<Vec<CensoredObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "time", "from", "to"] {
        return Err(parse_err(1, "expected header id,time,from,to".into()));
    }
    let mut partial: BTreeMap<u64, Partial> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, got {}", rec.len()),
            ));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid id {:?}", &rec[0])))?;
        let time: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid time {:?}", &rec[1])))?;
        let state = |s: &str| {
            states
                .index_of(s.trim())
                .ok_or_else(|| parse_err(line, format!("unknown state {s:?}")))
        };
        let from = state(&rec[2])?;
        let entry = partial.entry(id).or_insert(Partial {
            initial: from,
            jumps: Vec::new(),
            censoring: None,
            first_line: line,
        });
        if entry.censoring.is_some() {
            return Err(parse_err(
                line,
                format!("record for id {id} after its CENSOR record"),
            ));
        }
        let current = entry.jumps.last().map_or(entry.initial, |j| j.to);
        if from != current {
            return Err(parse_err(
                line,
                format!(
                    "id {id}: from state {} but path is in {}",
                    &rec[2],
                    states.label(current)
                ),
            ));
        }
        if rec[3].trim() == CENSOR {
            entry.censoring = Some(time);
        } else {
            let to = state(&rec[3])?;
            if time.is_nan() || time.is_infinite() {
                return Err(parse_err(line, format!("jump time {time} must be finite")));
            }
            entry.jumps.push(Jump { time, from, to });
        }
    }
    partial
        .into_iter()
        .map(|(id, p)| {
            let censoring = p
                .censoring
                .ok_or_else(|| parse_err(p.first_line, format!("id {id} has no CENSOR record")))?;
            let absorbed = p.jumps.last().is_some_and(|j| states.is_absorbing(j.to));
            let obs = CensoredObservation {
                id,
                initial: p.initial,
                jumps: p.jumps,
                censoring,
                absorbed,
            };
            obs.validate(states)
                .map_err(|e| parse_err(p.first_line, e.to_string()))?;
            Ok(obs)
        })
        .collect()
}

pub fn read_dataset_file(path: &Path, states: &StateSpace) -> Result<Vec<CensoredObservation>> {
    let f = File::open(path).map_err(|e| Error::Parse {
        path: PathBuf::from(path),
        line: 0,
        msg: e.to_string(),
    })?;
    read_dataset(BufReader::new(f), states, path)
}
