//! Line-oriented preprocessed corpus file.
//!
//! ```text
//! #VOCAB<TAB>1<TAB>item-string
//! ...
//! user<TAB>start_time<TAB>3,1,2      (training sessions, oldest first)
//! #TEST
//! user<TAB>start_time<TAB>4,1        (test sessions)
//! ```
//!
//! Every user block carries its own `#TEST` marker.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Corpus, ItemId, ItemVocabulary, Session, UserHistory};
use crate::error::{Error, Result};

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    for (id, item) in corpus.vocab.iter() {
        writeln!(w, "#VOCAB\t{id}\t{item}")?;
    }
    for u in &corpus.users {
        if u.user.starts_with('#') {
            return Err(Error::Format(format!("user id {:?} starts with '#'", u.user)));
        }
        for s in &u.train {
            write_session(&mut w, &u.user, s)?;
        }
        writeln!(w, "#TEST")?;
        for s in &u.test {
            write_session(&mut w, &u.user, s)?;
        }
    }
    Ok(())
}

fn write_session<W: Write>(w: &mut W, user: &str, s: &Session) -> Result<()> {
    let items: Vec<String> = s.items.iter().map(ItemId::to_string).collect();
    writeln!(w, "{user}\t{}\t{}", s.start_time, items.join(","))?;
    Ok(())
}

/// Writes through a temporary file and renames it into place.
pub fn write_corpus_file(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_corpus_file(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Format(format!("cannot open corpus {}: {e}", path.display())))?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut vocab_items: Vec<String> = Vec::new();
    let mut users: Vec<UserHistory> = Vec::new();
    let mut in_test = false;
    let bad = |n: usize, msg: String| Error::Format(format!("corpus line {n}: {msg}"));

    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#VOCAB\t") {
            if !users.is_empty() {
                return Err(bad(n, "vocabulary entry after sessions".into()));
            }
            let (id, item) = rest
                .split_once('\t')
                .ok_or_else(|| bad(n, "malformed vocabulary entry".into()))?;
            let id: usize = id.parse().map_err(|_| bad(n, format!("bad id {id:?}")))?;
            if id != vocab_items.len() + 1 {
                return Err(bad(n, format!("vocabulary ids must be dense, got {id}")));
            }
            vocab_items.push(item.to_string());
            continue;
        }
        if line == "#TEST" {
            if users.is_empty() || in_test {
                return Err(bad(n, "unexpected #TEST marker".into()));
            }
            in_test = true;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(n, format!("expected 3 fields, found {}", fields.len())));
        }
        let start: i64 = fields[1]
            .parse()
            .map_err(|_| bad(n, format!("bad start time {:?}", fields[1])))?;
        let items = fields[2]
            .split(',')
            .map(|t| match t.parse::<u32>() {
                Ok(id) if id >= 1 && id as usize <= vocab_items.len() => Ok(ItemId(id)),
                _ => Err(bad(n, format!("item id {t:?} outside 1..={}", vocab_items.len()))),
            })
            .collect::<Result<Vec<_>>>()?;
        let session = Session::new(items, start);
        let same_user = users.last().is_some_and(|u| u.user == fields[0]);
        if !same_user {
            if users.last().is_some() && !in_test {
                return Err(bad(n, "user block without #TEST marker".into()));
            }
            users.push(UserHistory {
                user: fields[0].to_string(),
                train: Vec::new(),
                test: Vec::new(),
            });
            in_test = false;
        }
        let u = users.last_mut().unwrap();
        if in_test {
            u.test.push(session);
        } else {
            u.train.push(session);
        }
    }
    if users.last().is_some() && !in_test {
        return Err(Error::Format("last user block lacks #TEST marker".into()));
    }
    Ok(Corpus {
        vocab: ItemVocabulary::from_items(vocab_items)?,
        users,
    })
}
