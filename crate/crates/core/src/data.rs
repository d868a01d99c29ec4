//! Dataset records, manifests and their line-oriented file format.
//!
//! A manifest file is UTF-8. The first line is a JSON object of generation
//! metadata; every following line is one record with tab-separated fields
//! `path content_id method_id scale role height width channels split_tag`.
//! Scored manifests append a tenth `quality` field.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Method id carried by LR and HR records.
pub const NO_METHOD: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "SR")]
    Sr,
    /// Half-scale copy of an SR record.
    #[serde(rename = "DS")]
    Ds,
}

impl Role {
    pub fn token(self) -> &'static str {
        match self {
            Role::Lr => "LR",
            Role::Hr => "HR",
            Role::Sr => "SR",
            Role::Ds => "DS",
        }
    }

    pub fn is_degraded(self) -> bool {
        matches!(self, Role::Sr | Role::Ds)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LR" => Ok(Role::Lr),
            "HR" => Ok(Role::Hr),
            "SR" => Ok(Role::Sr),
            "DS" => Ok(Role::Ds),
            other => Err(format!("unknown role token {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Pretext,
    DownTrain,
    DownTest,
    #[default]
    Unassigned,
}

impl SplitTag {
    pub fn token(self) -> &'static str {
        match self {
            SplitTag::Pretext => "pretext",
            SplitTag::DownTrain => "down_train",
            SplitTag::DownTest => "down_test",
            SplitTag::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretext" => Ok(SplitTag::Pretext),
            "down_train" => Ok(SplitTag::DownTrain),
            "down_test" => Ok(SplitTag::DownTest),
            "unassigned" => Ok(SplitTag::Unassigned),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub content_id: String,
    pub method_id: String,
    pub scale: f64,
    pub role: Role,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Identity of a record inside a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub content_id: String,
    pub method_id: String,
    scale_bits: u64,
    pub role: Role,
}

impl RecordKey {
    pub fn scale(&self) -> f64 {
        f64::from_bits(self.scale_bits)
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(content_id={}, method_id={}, scale={}, role={})",
            self.content_id,
            self.method_id,
            self.scale(),
            self.role
        )
    }
}

impl ImageRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            content_id: self.content_id.clone(),
            method_id: self.method_id.clone(),
            scale_bits: self.scale.to_bits(),
            role: self.role,
        }
    }

    /// Resolve `path` against the directory holding the manifest.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    fn check(&self) -> Result<()> {
        let key = self.key();
        for (name, field) in [
            ("path", &self.path),
            ("content_id", &self.content_id),
            ("method_id", &self.method_id),
        ] {
            if field.is_empty() || field.contains(['\t', '\n', '\r']) {
                return Err(Error::Invariant(format!(
                    "record {key}: field {name} is empty or contains tab/newline"
                )));
            }
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Invariant(format!(
                "record {key}: scale must be a positive real"
            )));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Invariant(format!("record {key}: zero dimension")));
        }
        if self.role.is_degraded() && (self.method_id == NO_METHOD || self.scale <= 1.0) {
            return Err(Error::Invariant(format!(
                "record {key}: {} records need a real method_id and scale > 1",
                self.role
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record: ImageRecord,
    pub split: SplitTag,
}

pub type Metadata = BTreeMap<String, serde_json::Value>;

/// Per-role record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RoleCounts {
    pub lr: usize,
    pub hr: usize,
    pub sr: usize,
    pub ds: usize,
}

impl RoleCounts {
    pub fn total(&self) -> usize {
        self.lr + self.hr + self.sr + self.ds
    }
}

/// Validated, immutable collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    metadata: Metadata,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(metadata: Metadata, entries: Vec<ManifestEntry>) -> Result<Self> {
        let records: Vec<&ImageRecord> = entries.iter().map(|e| &e.record).collect();
        validate_records(&records, true)?;
        Ok(Self { metadata, entries })
    }

    pub fn empty(metadata: Metadata) -> Self {
        Self {
            metadata,
            entries: Vec::new(),
        }
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn summary(&self) -> RoleCounts {
        let mut counts = RoleCounts::default();
        for r in self.records() {
            match r.role {
                Role::Lr => counts.lr += 1,
                Role::Hr => counts.hr += 1,
                Role::Sr => counts.sr += 1,
                Role::Ds => counts.ds += 1,
            }
        }
        counts
    }

    /// Copy with split tags rewritten by `f`.
    pub fn with_splits(&self, f: impl Fn(&ImageRecord) -> SplitTag) -> Self {
        Self {
            metadata: self.metadata.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    record: e.record.clone(),
                    split: f(&e.record),
                })
                .collect(),
        }
    }
}

/// Shared record-level and cross-record checks. `require_lr_sources`
/// enforces that every SR content has an LR record (pretext manifests);
/// scored manifests of third-party SR images skip it.
fn validate_records(records: &[&ImageRecord], require_lr_sources: bool) -> Result<()> {
    let mut seen: HashSet<RecordKey> = HashSet::with_capacity(records.len());
    let mut sr_dims: HashMap<RecordKey, (usize, usize)> = HashMap::new();
    let mut lr_contents: HashSet<&str> = HashSet::new();
    for r in records {
        r.check()?;
        let key = r.key();
        if !seen.insert(key.clone()) {
            return Err(Error::Invariant(format!("duplicate record key {key}")));
        }
        match r.role {
            Role::Sr => {
                sr_dims.insert(key, (r.height, r.width));
            }
            Role::Lr => {
                lr_contents.insert(r.content_id.as_str());
            }
            _ => {}
        }
    }
    for r in records {
        match r.role {
            Role::Ds => {
                let mut src_key = r.key();
                src_key.role = Role::Sr;
                let Some(&(h, w)) = sr_dims.get(&src_key) else {
                    return Err(Error::Invariant(format!(
                        "DS record {} has no SR source record",
                        r.key()
                    )));
                };
                if r.height != h / 2 || r.width != w / 2 {
                    return Err(Error::Invariant(format!(
                        "DS record {} has dims {}x{}, expected {}x{} (half of {h}x{w})",
                        r.key(),
                        r.height,
                        r.width,
                        h / 2,
                        w / 2
                    )));
                }
            }
            Role::Sr if require_lr_sources && !lr_contents.contains(r.content_id.as_str()) => {
                return Err(Error::Invariant(format!(
                    "SR record {} has no LR record with the same content_id",
                    r.key()
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

fn record_fields(r: &ImageRecord, split: SplitTag) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.path, r.content_id, r.method_id, r.scale, r.role, r.height, r.width, r.channels, split
    )
}

fn parse_record(fields: &[&str], path: &Path, line: usize) -> Result<(ImageRecord, SplitTag)> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let num = |name: &str, s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|e| err(format!("field {name}: {e}")))
    };
    let scale: f64 = fields[3]
        .parse()
        .map_err(|e| err(format!("field scale: {e}")))?;
    let role: Role = fields[4].parse().map_err(err)?;
    let split: SplitTag = fields[8].parse().map_err(err)?;
    Ok((
        ImageRecord {
            path: fields[0].to_string(),
            content_id: fields[1].to_string(),
            method_id: fields[2].to_string(),
            scale,
            role,
            height: num("height", fields[5])?,
            width: num("width", fields[6])?,
            channels: num("channels", fields[7])?,
        },
        split,
    ))
}

fn write_lines(path: &Path, metadata: &Metadata, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(metadata)
        .map_err(|e| Error::InvalidArgument(format!("metadata not serializable: {e}")))?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for line in lines {
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the header and splits data lines into fields, checking the column count.
fn read_lines(path: &Path, columns: usize) -> Result<(Metadata, Vec<(usize, Vec<String>)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "missing metadata line".into(),
            })
        }
    };
    let metadata: Metadata = serde_json::from_str(&header).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("metadata is not a JSON object: {e}"),
    })?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected {columns} fields, found {}", fields.len()),
            });
        }
        rows.push((lineno, fields));
    }
    Ok((metadata, rows))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let records: Vec<&ImageRecord> = manifest.records().collect();
    validate_records(&records, true)?;
    write_lines(
        path,
        &manifest.metadata,
        manifest
            .entries
            .iter()
            .map(|e| record_fields(&e.record, e.split)),
    )
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let (metadata, rows) = read_lines(path, 9)?;
    let mut entries = Vec::with_capacity(rows.len());
    for (lineno, fields) in &rows {
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        let (record, split) = parse_record(&refs, path, *lineno)?;
        entries.push(ManifestEntry { record, split });
    }
    Manifest::new(metadata, entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub record: ImageRecord,
    pub quality: f64,
}

/// Manifest of SR images with ground-truth quality scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredManifest {
    metadata: Metadata,
    items: Vec<ScoredRecord>,
}

impl ScoredManifest {
    pub fn new(metadata: Metadata, items: Vec<ScoredRecord>) -> Result<Self> {
        for item in &items {
            if !item.quality.is_finite() {
                return Err(Error::Invariant(format!(
                    "record {} has non-finite quality",
                    item.record.key()
                )));
            }
        }
        let records: Vec<&ImageRecord> = items.iter().map(|s| &s.record).collect();
        validate_records(&records, false)?;
        Ok(Self { metadata, items })
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn items(&self) -> &[ScoredRecord] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn write_scored_manifest(manifest: &ScoredManifest, path: &Path) -> Result<()> {
    write_lines(
        path,
        &manifest.metadata,
        manifest.items.iter().map(|s| {
            format!(
                "{}\t{}",
                record_fields(&s.record, SplitTag::Unassigned),
                s.quality
            )
        }),
    )
}

pub fn read_scored_manifest(path: &Path) -> Result<ScoredManifest> {
    let (metadata, rows) = read_lines(path, 10)?;
    let mut items = Vec::with_capacity(rows.len());
    for (lineno, fields) in &rows {
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        let (record, _) = parse_record(&refs[..9], path, *lineno)?;
        let quality: f64 = refs[9].parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: *lineno,
            message: format!("field quality: {e}"),
        })?;
        items.push(ScoredRecord { record, quality });
    }
    ScoredManifest::new(metadata, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(content: &str, method: &str, scale: f64, role: Role, h: usize, w: usize) -> ImageRecord {
        ImageRecord {
            path: format!("{content}_{method}_{scale}_{role}.png"),
            content_id: content.into(),
            method_id: method.into(),
            scale,
            role,
            height: h,
            width: w,
            channels: 3,
        }
    }

    fn entry(r: ImageRecord, split: SplitTag) -> ManifestEntry {
        ManifestEntry { record: r, split }
    }

    fn sample() -> Manifest {
        let mut meta = Metadata::new();
        meta.insert("seed".into(), serde_json::json!(7));
        Manifest::new(
            meta,
            vec![
                entry(rec("a", NO_METHOD, 1.0, Role::Lr, 10, 11), SplitTag::Unassigned),
                entry(rec("a", "bicubic", 2.5, Role::Sr, 25, 28), SplitTag::Pretext),
                entry(rec("a", "bicubic", 2.5, Role::Ds, 12, 14), SplitTag::Pretext),
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_manifest_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let m = Manifest::empty(Metadata::new());
        write_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "{}\n");
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn three_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let m = sample();
        write_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_manifest(&p).unwrap(), m);
        let counts = m.summary();
        assert_eq!((counts.lr, counts.sr, counts.ds, counts.total()), (1, 1, 1, 3));
    }

    #[test]
    fn duplicate_key_rejected() {
        let r = rec("a", NO_METHOD, 1.0, Role::Lr, 4, 4);
        let err = Manifest::new(
            Metadata::new(),
            vec![entry(r.clone(), SplitTag::Unassigned), entry(r, SplitTag::Pretext)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invariant(ref m) if m.contains("duplicate")), "{err}");
    }

    #[test]
    fn ds_dims_must_halve_source() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let m = sample();
        write_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\tDS\t12\t14\t", "\tDS\t13\t14\t");
        std::fs::write(&p, text).unwrap();
        let err = read_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("DS record"), "{err}");
    }

    #[test]
    fn unknown_role_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        write_manifest(&sample(), &p).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\tSR\t", "\tXR\t");
        std::fs::write(&p, text).unwrap();
        match read_manifest(&p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("XR"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sr_needs_lr_source_and_real_method() {
        let err = Manifest::new(
            Metadata::new(),
            vec![entry(rec("x", "m", 2.0, Role::Sr, 4, 4), SplitTag::Pretext)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("no LR record"));
        let err = Manifest::new(
            Metadata::new(),
            vec![
                entry(rec("x", NO_METHOD, 1.0, Role::Lr, 2, 2), SplitTag::Unassigned),
                entry(rec("x", NO_METHOD, 2.0, Role::Sr, 4, 4), SplitTag::Pretext),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("scale > 1"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_manifest(Path::new("/nonexistent/m.tsv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.tsv"));
    }

    #[test]
    fn scored_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        let m = ScoredManifest::new(
            Metadata::new(),
            vec![
                ScoredRecord {
                    record: rec("a", "m1", 2.0, Role::Sr, 8, 8),
                    quality: 3.25,
                },
                ScoredRecord {
                    record: rec("b", "m1", 2.0, Role::Sr, 8, 8),
                    quality: -0.1,
                },
            ],
        )
        .unwrap();
        write_scored_manifest(&m, &p).unwrap();
        assert_eq!(read_scored_manifest(&p).unwrap(), m);
        assert!(ScoredManifest::new(
            Metadata::new(),
            vec![ScoredRecord {
                record: rec("a", "m1", 2.0, Role::Sr, 8, 8),
                quality: f64::NAN
            }]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_valid_manifests_round_trip(
            contents in proptest::collection::btree_set("[a-z]{1,6}", 1..5),
            scale in 1.01f64..8.0,
            h in 2usize..300,
            w in 2usize..300,
            tags in proptest::collection::vec(0u8..4, 1..5),
        ) {
            let mut entries = Vec::new();
            for (i, c) in contents.iter().enumerate() {
                let split = [SplitTag::Pretext, SplitTag::DownTrain, SplitTag::DownTest, SplitTag::Unassigned][tags[i % tags.len()] as usize];
                entries.push(entry(rec(c, NO_METHOD, 1.0, Role::Lr, h, w), SplitTag::Unassigned));
                entries.push(entry(rec(c, "op", scale, Role::Sr, h, w), split));
                entries.push(entry(rec(c, "op", scale, Role::Ds, h / 2, w / 2), split));
            }
            let m = Manifest::new(Metadata::new(), entries).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.tsv");
            write_manifest(&m, &p).unwrap();
            prop_assert_eq!(read_manifest(&p).unwrap(), m);
        }
    }
}
