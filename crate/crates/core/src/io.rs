//! Raw volume and atlas files, and the cohort manifest.
//!
//! Volume file: `LSVOL1\n`, an ASCII line `dx dy dz\n`, then `dx·dy·dz`
//! little-endian f32 voxels in x-fastest order. Atlas files use the magic
//! `LSATL1\n` and little-endian u32 labels.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::volume::{voxel_count, AtlasMap, ClassLabel, Cohort, Subject, Volume, VolumeError};

pub const VOLUME_MAGIC: &[u8] = b"LSVOL1\n";
pub const ATLAS_MAGIC: &[u8] = b"LSATL1\n";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dimension overflow in header")]
    DimOverflow,
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn encode_header(magic: &[u8], dims: [usize; 3], payload_len: usize) -> Vec<u8> {
    let line = format!("{} {} {}\n", dims[0], dims[1], dims[2]);
    let mut out = Vec::with_capacity(magic.len() + line.len() + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(line.as_bytes());
    out
}

/// Parses magic and dims line, returning dims and the payload slice checked
/// to hold exactly `elem_size` bytes per voxel.
fn decode_header<'a>(
    bytes: &'a [u8],
    magic: &'static [u8],
    elem_size: usize,
) -> Result<([usize; 3], &'a [u8]), FormatError> {
    let expected = std::str::from_utf8(magic).unwrap_or("?");
    if !bytes.starts_with(magic) {
        return Err(FormatError::BadMagic { expected });
    }
    let rest = &bytes[magic.len()..];
    let nl = rest
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::Header("missing dims line".into()))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| FormatError::Header("dims line is not ASCII".into()))?;
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() != 3 {
        return Err(FormatError::Header(format!("expected 3 dims, got {:?}", line)));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(FormatError::Header(format!("bad dimension {p:?}")));
        }
        *d = p.parse().map_err(|_| FormatError::DimOverflow)?;
    }
    let n = match voxel_count(dims) {
        Ok(n) => n,
        Err(VolumeError::DimOverflow(_)) => return Err(FormatError::DimOverflow),
        Err(e) => return Err(e.into()),
    };
    let need = n.checked_mul(elem_size).ok_or(FormatError::DimOverflow)?;
    let payload = &rest[nl + 1..];
    if payload.len() < need {
        return Err(FormatError::Truncated { expected: need, found: payload.len() });
    }
    if payload.len() > need {
        return Err(FormatError::Trailing(payload.len() - need));
    }
    Ok((dims, payload))
}

pub fn encode_volume(volume: &Volume) -> Vec<u8> {
    let mut out = encode_header(VOLUME_MAGIC, volume.dims(), volume.len() * 4);
    for &v in volume.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume, FormatError> {
    let (dims, payload) = decode_header(bytes, VOLUME_MAGIC, 4)?;
    let voxels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume::new(dims, voxels)?)
}

pub fn encode_atlas(atlas: &AtlasMap) -> Vec<u8> {
    let mut out = encode_header(ATLAS_MAGIC, atlas.dims(), atlas.labels().len() * 4);
    for &l in atlas.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_atlas(bytes: &[u8]) -> Result<AtlasMap, FormatError> {
    let (dims, payload) = decode_header(bytes, ATLAS_MAGIC, 4)?;
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(AtlasMap::from_labels(dims, labels)?)
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode_volume(volume)).map_err(io_err(path))
}

pub fn load_volume(path: &Path) -> Result<Volume, FormatError> {
    decode_volume(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_atlas(atlas: &AtlasMap, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode_atlas(atlas)).map_err(io_err(path))
}

pub fn load_atlas(path: &Path) -> Result<AtlasMap, FormatError> {
    decode_atlas(&fs::read(path).map_err(io_err(path))?)
}

/// One manifest row: `id,class_label,volume_path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub class_label: ClassLabel,
    pub volume_path: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, FormatError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let want = ["id", "class_label", "volume_path"];
    if headers.len() != 3 || headers.iter().zip(want).any(|(h, w)| h.trim() != w) {
        return Err(FormatError::Manifest { line: 1, msg: format!("expected header {}", want.join(",")) });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(FormatError::Manifest { line, msg: format!("expected 3 fields, got {}", rec.len()) });
        }
        let class_label = ClassLabel::parse(&rec[1])
            .ok_or_else(|| FormatError::Manifest { line, msg: format!("bad class label {:?}", &rec[1]) })?;
        if rec[0].is_empty() {
            return Err(FormatError::Manifest { line, msg: "empty subject id".into() });
        }
        out.push(ManifestEntry { id: rec[0].to_string(), class_label, volume_path: rec[2].to_string() });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["id", "class_label", "volume_path"]).expect("in-memory write");
    for e in entries {
        w.write_record([e.id.as_str(), &e.class_label.code().to_string(), e.volume_path.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Writes `manifest.csv`, `atlas.lsatl` and one volume per subject under
/// `dir/volumes/`.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<(), FormatError> {
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(io_err(&vol_dir))?;
    save_atlas(cohort.atlas(), &dir.join("atlas.lsatl"))?;
    let mut entries = Vec::with_capacity(cohort.len());
    for s in cohort.subjects() {
        let rel = format!("volumes/{}.lsvol", s.id);
        save_volume(&s.volume, &dir.join(&rel))?;
        entries.push(ManifestEntry { id: s.id.clone(), class_label: s.class_label, volume_path: rel });
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, format_manifest(&entries)).map_err(io_err(&manifest))
}

/// Loads a cohort written by [`save_cohort`]; relative volume paths resolve
/// against `dir`.
pub fn load_cohort(dir: &Path, seed: u64) -> Result<Cohort, FormatError> {
    let manifest = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let atlas = load_atlas(&dir.join("atlas.lsatl"))?;
    let subjects = parse_manifest(&text)?
        .into_iter()
        .map(|e| {
            let p = Path::new(&e.volume_path);
            let path = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
            Ok(Subject { id: e.id, class_label: e.class_label, volume: load_volume(&path)? })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(Cohort::new(subjects, atlas, seed)?)
}
