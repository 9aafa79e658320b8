//! Deterministic serialization: binary field snapshots with checksums,
//! JSON-lines check reports, CSV scaling tables and the experiment manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{build_quotient, Direction, Field, LatticeError, LatticeQuotient, UnitCellField};

const MAGIC: &[u8; 8] = b"PLKFLD01";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a field snapshot: {0}")]
    BadHeader(String),
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,
    #[error("snapshot does not match the target lattice: {0}")]
    LatticeMismatch(String),
    #[error("duplicate report key: {0}")]
    DuplicateKey(String),
    #[error("non-finite value under key {0}")]
    NonFinite(String),
    #[error("manifest artifact missing or corrupt: {0}")]
    BadArtifact(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Header of a field snapshot, sufficient to rebuild its lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub dim: u32,
    pub n: u32,
    pub omega: Vec<i64>,
    pub multipliers: Vec<u64>,
    pub strip: (f64, f64),
    pub margin: f64,
    pub model_hash: u64,
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.buf.len() {
            return Err(PersistError::BadHeader("truncated snapshot".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, PersistError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_field(field: &Field, model_hash: u64) -> Vec<u8> {
    let lat = field.lattice();
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(lat.dim() as u32);
    w.u32(lat.resolution());
    for &o in lat.direction().components() {
        w.i64(o);
    }
    for &m in lat.multipliers() {
        w.u64(m);
    }
    let (a, b) = lat.strip();
    w.f64(a);
    w.f64(b);
    w.f64(lat.margin());
    w.u64(model_hash);
    let cell_len = field.far_low().values().len() as u64;
    w.u64(cell_len);
    for &v in field.far_low().values() {
        w.f64(v);
    }
    for &v in field.far_high().values() {
        w.f64(v);
    }
    w.u64(lat.node_count() as u64);
    for &v in field.interior() {
        w.f64(v);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Writes a snapshot; returns the hex checksum of the payload.
pub fn save_field(field: &Field, model_hash: u64, path: &Path) -> Result<String, PersistError> {
    let bytes = encode_field(field, model_hash);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, &bytes)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn decode(bytes: &[u8]) -> Result<(SnapshotHeader, Vec<f64>, Vec<f64>, Vec<f64>), PersistError> {
    if bytes.len() < MAGIC.len() + 36 {
        return Err(PersistError::BadHeader("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(PersistError::BadHeader("bad magic".into()));
    }
    // checksum covers everything before the final 32 bytes
    if bytes.len() < 32 {
        return Err(PersistError::ChecksumMismatch);
    }
    let (payload, check) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != check {
        return Err(PersistError::ChecksumMismatch);
    }
    let mut r = ByteReader {
        buf: payload,
        pos: 8,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(PersistError::BadVersion(version));
    }
    let dim = r.u32()?;
    if !(1..=3).contains(&dim) {
        return Err(PersistError::BadHeader(format!("dimension {dim}")));
    }
    let n = r.u32()?;
    let mut omega = Vec::with_capacity(dim as usize);
    for _ in 0..dim {
        omega.push(r.i64()?);
    }
    let mut multipliers = Vec::with_capacity(dim as usize - 1);
    for _ in 0..dim - 1 {
        multipliers.push(r.u64()?);
    }
    let a = r.f64()?;
    let b = r.f64()?;
    let margin = r.f64()?;
    let model_hash = r.u64()?;
    let cell_len = r.u64()? as usize;
    let mut plus = Vec::with_capacity(cell_len);
    for _ in 0..cell_len {
        plus.push(r.f64()?);
    }
    let mut minus = Vec::with_capacity(cell_len);
    for _ in 0..cell_len {
        minus.push(r.f64()?);
    }
    let count = r.u64()? as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64()?);
    }
    if r.pos != payload.len() {
        return Err(PersistError::BadHeader("trailing bytes".into()));
    }
    Ok((
        SnapshotHeader {
            dim,
            n,
            omega,
            multipliers,
            strip: (a, b),
            margin,
            model_hash,
        },
        plus,
        minus,
        values,
    ))
}

/// Loads a snapshot, rebuilding the lattice recorded in its header.
pub fn load_field(path: &Path) -> Result<(Field, SnapshotHeader), PersistError> {
    let bytes = std::fs::read(path)?;
    let (header, plus, minus, values) = decode(&bytes)?;
    let direction = Direction::new(&header.omega)?;
    let lattice = Arc::new(build_quotient(
        direction,
        &header.multipliers,
        header.n,
        header.strip.0,
        header.strip.1,
        header.margin,
    )?);
    if lattice.node_count() != values.len() {
        return Err(PersistError::BadHeader(format!(
            "lattice rebuild expects {} nodes, snapshot holds {}",
            lattice.node_count(),
            values.len()
        )));
    }
    let far_low = Arc::new(UnitCellField::new(header.dim as usize, header.n, plus)?);
    let far_high = Arc::new(UnitCellField::new(header.dim as usize, header.n, minus)?);
    let field = Field::new(lattice, values, far_low, far_high, f64::INFINITY)?;
    Ok((field, header))
}

/// Loads a snapshot that must live on the given lattice.
pub fn load_field_for(
    lattice: &Arc<LatticeQuotient>,
    path: &Path,
) -> Result<(Field, SnapshotHeader), PersistError> {
    let (field, header) = load_field(path)?;
    let want = (
        lattice.dim() as u32,
        lattice.resolution(),
        lattice.direction().components().to_vec(),
        lattice.multipliers().to_vec(),
        lattice.strip(),
        lattice.margin(),
    );
    let got = (
        header.dim,
        header.n,
        header.omega.clone(),
        header.multipliers.clone(),
        header.strip,
        header.margin,
    );
    if want != got {
        return Err(PersistError::LatticeMismatch(format!(
            "snapshot {got:?} vs lattice {want:?}"
        )));
    }
    Ok((field, header))
}

/// A JSON value restricted to what check reports need.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    FloatList(Vec<f64>),
    IntList(Vec<i64>),
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}
impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}
impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}
impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}
impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::FloatList(v)
    }
}
impl From<Vec<i64>> for Value {
    fn from(v: Vec<i64>) -> Self {
        Value::IntList(v)
    }
}

/// Floating values are written with 17 significant digits so they parse back
/// bit-exactly.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn escape_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// One check record; keys are unique and serialized in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: BTreeMap<String, Value>,
}

impl Record {
    pub fn new(check: &str) -> Self {
        let mut r = Record::default();
        r.entries.insert("check".into(), Value::Str(check.into()));
        r
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> Result<&mut Self, PersistError> {
        let value = value.into();
        match &value {
            Value::Float(x) if !x.is_finite() => {
                return Err(PersistError::NonFinite(key.into()))
            }
            Value::FloatList(xs) if xs.iter().any(|x| !x.is_finite()) => {
                return Err(PersistError::NonFinite(key.into()))
            }
            _ => {}
        }
        if self.entries.contains_key(key) {
            return Err(PersistError::DuplicateKey(key.into()));
        }
        self.entries.insert(key.into(), value);
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn to_json_line(&self) -> String {
        let mut parts = Vec::with_capacity(self.entries.len());
        for (k, v) in &self.entries {
            let rendered = match v {
                Value::Bool(b) => b.to_string(),
                Value::Int(i) => i.to_string(),
                Value::Float(x) => fmt_float(*x),
                Value::Str(s) => format!("\"{}\"", escape_json(s)),
                Value::FloatList(xs) => {
                    let items: Vec<String> = xs.iter().map(|x| fmt_float(*x)).collect();
                    format!("[{}]", items.join(","))
                }
                Value::IntList(xs) => {
                    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                    format!("[{}]", items.join(","))
                }
            };
            parts.push(format!("\"{}\":{}", escape_json(k), rendered));
        }
        format!("{{{}}}", parts.join(","))
    }
}

/// Writes one record per line.
pub fn write_report(records: &[Record], path: &Path) -> Result<(), PersistError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()?;
    Ok(())
}

/// Scaling table: one row per ball radius.
pub fn write_scaling_csv(
    rows: &[(f64, crate::model::EnergyBreakdown)],
    path: &Path,
) -> Result<(), PersistError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "R,E_total,E_kinetic,E_potential,E_meso")?;
    for (r, e) in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_float(*r),
            fmt_float(e.total),
            fmt_float(e.kinetic()),
            fmt_float(e.potential),
            fmt_float(e.mesoscopic)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, PersistError> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestArtifact {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility trail of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub seed: u64,
    /// Resolved configuration echoed as TOML text.
    pub config: String,
    pub snapshots: Vec<ManifestArtifact>,
    pub reports: Vec<ManifestArtifact>,
}

impl ExperimentManifest {
    pub fn new(seed: u64, config: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            snapshots: Vec::new(),
            reports: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PersistError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Confirms every referenced artifact exists and hashes to its record.
    pub fn verify(&self, base: &Path) -> Result<(), PersistError> {
        for a in self.snapshots.iter().chain(&self.reports) {
            let p: PathBuf = base.join(&a.path);
            if !p.is_file() {
                return Err(PersistError::BadArtifact(a.path.clone()));
            }
            if sha256_file(&p)? != a.sha256 {
                return Err(PersistError::BadArtifact(a.path.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_quotient;
    use proptest::prelude::*;

    fn sample_field(omega: &[i64]) -> Field {
        let lat = Arc::new(
            build_quotient(Direction::new(omega).unwrap(), &[1], 4, 0.0, 2.0, 1.0).unwrap(),
        );
        let lo = Arc::new(UnitCellField::from_fn(2, 4, |x| 1.0 - 0.01 * x[0]));
        let hi = Arc::new(UnitCellField::constant(2, 4, -1.0));
        Field::from_fn(lat, lo, hi, |x| (1.3 * x[0] - 0.4 * x[1]).sin())
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.plk");
        let f = sample_field(&[1, 0]);
        save_field(&f, 0xabcd, &path).unwrap();
        let (g, header) = load_field(&path).unwrap();
        assert_eq!(f.interior(), g.interior());
        assert_eq!(f.far_low().values(), g.far_low().values());
        assert_eq!(f.far_high().values(), g.far_high().values());
        assert_eq!(header.model_hash, 0xabcd);
    }

    #[test]
    fn truncated_snapshot_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.plk");
        let f = sample_field(&[1, 0]);
        save_field(&f, 1, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_field(&path),
            Err(PersistError::ChecksumMismatch) | Err(PersistError::BadHeader(_))
        ));
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.plk");
        let f = sample_field(&[1, 0]);
        save_field(&f, 1, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_field(&path), Err(PersistError::ChecksumMismatch)));
    }

    #[test]
    fn lattice_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.plk");
        let f = sample_field(&[2, 1]);
        save_field(&f, 1, &path).unwrap();
        let other = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 2.0, 1.0).unwrap(),
        );
        assert!(matches!(
            load_field_for(&other, &path),
            Err(PersistError::LatticeMismatch(_))
        ));
    }

    #[test]
    fn record_roundtrip_and_duplicates() {
        let mut r = Record::new("demo");
        r.set("value", 0.1 + 0.2).unwrap();
        r.set("count", 3usize).unwrap();
        r.set("pass", true).unwrap();
        r.set("radii", vec![3.0, 4.5]).unwrap();
        let line = r.to_json_line();
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["value"].as_f64().unwrap(), 0.1 + 0.2);
        assert_eq!(parsed["count"].as_i64().unwrap(), 3);
        assert_eq!(parsed["check"].as_str().unwrap(), "demo");
        assert!(matches!(
            r.set("value", 1.0),
            Err(PersistError::DuplicateKey(_))
        ));
        assert!(matches!(
            Record::new("x").set("bad", f64::NAN),
            Err(PersistError::NonFinite(_))
        ));
    }

    #[test]
    fn empty_report_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checks.jsonl");
        write_report(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }

    #[test]
    fn manifest_verification() {
        let dir = tempfile::tempdir().unwrap();
        let snap = dir.path().join("a.plk");
        let f = sample_field(&[1, 0]);
        save_field(&f, 7, &snap).unwrap();
        let mut manifest = ExperimentManifest::new(42, "seed = 42".into());
        manifest.snapshots.push(ManifestArtifact {
            path: "a.plk".into(),
            sha256: sha256_file(&snap).unwrap(),
        });
        let mpath = dir.path().join("manifest.json");
        manifest.write(&mpath).unwrap();
        let loaded = ExperimentManifest::load(&mpath).unwrap();
        assert_eq!(loaded, manifest);
        loaded.verify(dir.path()).unwrap();
        // corrupt the artifact
        let mut bytes = std::fs::read(&snap).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&snap, bytes).unwrap();
        assert!(loaded.verify(dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn float_format_roundtrips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }

        #[test]
        fn snapshot_values_roundtrip(vals in proptest::collection::vec(-1.05f64..1.05, 13)) {
            let lat = Arc::new(
                build_quotient(Direction::new(&[1]).unwrap(), &[], 4, 0.0, 1.0, 1.2).unwrap(),
            );
            prop_assert_eq!(vals.len(), lat.node_count());
            let lo = Arc::new(UnitCellField::constant(1, 4, 1.0));
            let hi = Arc::new(UnitCellField::constant(1, 4, -1.0));
            let f = Field::new(lat, vals, lo, hi, 1.05).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.plk");
            save_field(&f, 9, &path).unwrap();
            let (g, _) = load_field(&path).unwrap();
            prop_assert_eq!(f.interior(), g.interior());
        }
    }
}
