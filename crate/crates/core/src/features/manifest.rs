//! Tab-separated text files: dataset manifests, ground truth and query lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Rect;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: PathBuf,
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn malformed(kind: &'static str, line: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        kind,
        line,
        reason: reason.into(),
    }
}

/// Reads `image_id<TAB>path` lines. Relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let (id, p) = line
            .split_once('\t')
            .ok_or_else(|| malformed("manifest", n, "expected image_id<TAB>path"))?;
        if id.is_empty() || p.is_empty() {
            return Err(malformed("manifest", n, "empty field"));
        }
        if !seen.insert(id.to_string()) {
            return Err(malformed("manifest", n, format!("duplicate image id {id}")));
        }
        let p = Path::new(p);
        let resolved = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        };
        out.push(ManifestEntry {
            image_id: id.to_string(),
            path: resolved,
        });
    }
    Ok(out)
}

/// Writes entries with paths made relative to the manifest directory where
/// possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        writeln!(text, "{}\t{}", e.image_id, p.display()).unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

/// Relevance judgements of one query, as read from a ground truth file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Relevance {
    pub good: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

/// Reads `query_id<TAB>good|junk<TAB>image_id` lines.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, Relevance>> {
    let text = fs::read_to_string(path)?;
    let mut out: BTreeMap<String, Relevance> = BTreeMap::new();
    for (n, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [qid, kind, image] = fields[..] else {
            return Err(malformed("ground truth", n, "expected 3 tab-separated fields"));
        };
        let entry = out.entry(qid.to_string()).or_default();
        let target = match kind {
            "good" => &mut entry.good,
            "junk" => &mut entry.junk,
            other => {
                return Err(malformed(
                    "ground truth",
                    n,
                    format!("label must be good or junk, got {other:?}"),
                ))
            }
        };
        target.insert(image.to_string());
    }
    for (qid, rel) in &out {
        if let Some(both) = rel.good.intersection(&rel.junk).next() {
            return Err(malformed(
                "ground truth",
                0,
                format!("query {qid}: image {both} is both good and junk"),
            ));
        }
    }
    Ok(out)
}

pub fn write_ground_truth(
    path: impl AsRef<Path>,
    truth: &BTreeMap<String, Relevance>,
) -> Result<()> {
    let mut text = String::new();
    for (qid, rel) in truth {
        for g in &rel.good {
            writeln!(text, "{qid}\tgood\t{g}").unwrap();
        }
        for j in &rel.junk {
            writeln!(text, "{qid}\tjunk\t{j}").unwrap();
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// One region-of-interest query: the keypoints of `source_image` that fall
/// inside `roi`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub query_id: String,
    pub source_image: String,
    pub roi: Option<Rect>,
}

/// Reads `query_id<TAB>image_id[<TAB>X,Y,W,H]` lines.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<QuerySpec>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let (qid, src, roi) = match fields[..] {
            [q, s] => (q, s, None),
            [q, s, r] => (q, s, Some(r.parse::<Rect>().map_err(|e| malformed("queries", n, e.to_string()))?)),
            _ => return Err(malformed("queries", n, "expected 2 or 3 tab-separated fields")),
        };
        out.push(QuerySpec {
            query_id: qid.to_string(),
            source_image: src.to_string(),
            roi,
        });
    }
    Ok(out)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[QuerySpec]) -> Result<()> {
    let mut text = String::new();
    for q in queries {
        match &q.roi {
            Some(r) => writeln!(text, "{}\t{}\t{}", q.query_id, q.source_image, r).unwrap(),
            None => writeln!(text, "{}\t{}", q.query_id, q.source_image).unwrap(),
        }
    }
    fs::write(path, text)?;
    Ok(())
}
