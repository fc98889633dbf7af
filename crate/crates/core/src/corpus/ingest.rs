use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::DateTime;

use super::Interaction;
use crate::error::{Error, Result};

/// Column layouts accepted on input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// `user<TAB>item<TAB>timestamp`, epoch seconds.
    Tsv,
    /// Public Reddit comment dump: CSV with a header naming the user,
    /// subreddit and UTC-seconds columns.
    Reddit,
    /// Last.fm 1K listening log: `user, ISO-8601 time, artist id, artist
    /// name, track id, track name`. The artist is the item.
    Lastfm,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(InputFormat::Tsv),
            "reddit" => Ok(InputFormat::Reddit),
            "lastfm" => Ok(InputFormat::Lastfm),
            other => Err(Error::Usage(format!(
                "unknown input format {other:?} (expected tsv, reddit or lastfm)"
            ))),
        }
    }
}

pub fn read_interactions_file(path: &Path, format: InputFormat) -> Result<Vec<Interaction>> {
    let file = File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    read_interactions(BufReader::new(file), format)
}

pub fn read_interactions<R: Read>(reader: R, format: InputFormat) -> Result<Vec<Interaction>> {
    match format {
        InputFormat::Tsv => read_tsv(BufReader::new(reader)),
        InputFormat::Reddit => read_reddit(reader),
        InputFormat::Lastfm => read_lastfm(BufReader::new(reader)),
    }
}

fn bad_line(lineno: usize, msg: impl std::fmt::Display) -> Error {
    Error::Ingestion(format!("line {lineno}: {msg}"))
}

fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if i == 0 && fields == ["user", "item", "timestamp"] {
            continue;
        }
        if fields.len() != 3 {
            return Err(bad_line(i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let ts: i64 = fields[2]
            .parse()
            .map_err(|_| bad_line(i + 1, format!("bad timestamp {:?}", fields[2])))?;
        out.push(Interaction::new(fields[0], fields[1], ts).map_err(|e| bad_line(i + 1, e))?);
    }
    Ok(out)
}

fn read_reddit<R: Read>(reader: R) -> Result<Vec<Interaction>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("reddit header: {e}")))?
        .clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim()))
            .ok_or_else(|| Error::Ingestion(format!("reddit header lacks any of {names:?}")))
    };
    let user_col = find(&["username", "author", "user"])?;
    let item_col = find(&["subreddit"])?;
    let time_col = find(&["utc", "created_utc", "timestamp"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad_line(i + 2, e))?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let ts: f64 = get(time_col)
            .parse()
            .map_err(|_| bad_line(i + 2, format!("bad utc {:?}", get(time_col))))?;
        out.push(
            Interaction::new(get(user_col), get(item_col), ts.floor() as i64)
                .map_err(|e| bad_line(i + 2, e))?,
        );
    }
    Ok(out)
}

fn read_lastfm<R: BufRead>(reader: R) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad_line(i + 1, "expected at least 4 fields"));
        }
        let ts = DateTime::parse_from_rfc3339(fields[1])
            .map_err(|e| bad_line(i + 1, format!("bad time {:?}: {e}", fields[1])))?
            .timestamp();
        // rows without an artist MBID fall back to the artist name
        let artist = if fields[2].is_empty() { fields[3] } else { fields[2] };
        if artist.is_empty() {
            continue;
        }
        out.push(Interaction::new(fields[0], artist, ts).map_err(|e| bad_line(i + 1, e))?);
    }
    Ok(out)
}
