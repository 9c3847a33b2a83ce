//! On-disk artifact formats: stack files, float and label rasters,
//! scatterer rasters, object-height CSV and JSON reports.
//!
//! Binary artifacts are a `<name>.json` metadata sidecar plus a `<name>.bin`
//! little-endian payload. The sidecar carries the SHA-256 of the payload and
//! of its own canonical JSON (computed with `metadata_sha256` empty); both are
//! verified on read. Every file is written to a temporary sibling and renamed
//! into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::AcquisitionGeometry;
use crate::heightfusion::{HeightFlag, ObjectHeight};
use crate::inversion::{Method, Scatterer, ScattererSet};
use crate::raster::Raster;
use crate::stack::{InterferogramStack, PixelSpacing, StackLayer};

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Byte offset of a serde_json error position.
fn json_offset(text: &str, err: &serde_json::Error) -> u64 {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)) as u64
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: json_offset(text, &e),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_json(path, &text)
}

/// `<base>.json` and `<base>.bin`.
pub fn artifact_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

/// Metadata common to every binary artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadInfo {
    pub kind: String,
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub payload_file: String,
    pub payload_bytes: u64,
    pub payload_sha256: String,
    pub metadata_sha256: String,
}

trait Sidecar: Serialize + DeserializeOwned + Clone {
    fn info(&self) -> &PayloadInfo;
    fn info_mut(&mut self) -> &mut PayloadInfo;
}

fn metadata_hash<M: Sidecar>(meta: &M) -> Result<String> {
    let mut blank = meta.clone();
    blank.info_mut().metadata_sha256.clear();
    Ok(sha256_hex(&serde_json::to_vec(&blank)?))
}

fn write_artifact<M: Sidecar>(base: &Path, mut meta: M, payload: &[u8]) -> Result<()> {
    let (json, bin) = artifact_paths(base);
    {
        let info = meta.info_mut();
        info.version = FORMAT_VERSION;
        info.payload_file = bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        info.payload_bytes = payload.len() as u64;
        info.payload_sha256 = sha256_hex(payload);
    }
    meta.info_mut().metadata_sha256 = metadata_hash(&meta)?;
    write_atomic(&bin, payload)?;
    write_json(&json, &meta)
}

fn read_artifact<M: Sidecar>(base: &Path, kind: &str, expected_bytes: impl Fn(&M) -> u64) -> Result<(M, Vec<u8>)> {
    let (json, _) = artifact_paths(base);
    let meta: M = read_json(&json)?;
    let format_err = |message: String| Error::Format {
        path: json.clone(),
        message,
    };
    let info = meta.info().clone();
    if info.kind != kind {
        return Err(format_err(format!("expected a {kind} artifact, found {}", info.kind)));
    }
    if info.version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported format version {}", info.version)));
    }
    if metadata_hash(&meta)? != info.metadata_sha256 {
        return Err(format_err("metadata hash mismatch".into()));
    }
    let bin = json.with_file_name(&info.payload_file);
    let payload = fs::read(&bin)?;
    let expected = expected_bytes(&meta);
    if payload.len() as u64 != expected || info.payload_bytes != expected {
        return Err(Error::Format {
            path: bin,
            message: format!("payload has {} bytes, expected {expected}", payload.len()),
        });
    }
    if sha256_hex(&payload) != info.payload_sha256 {
        return Err(Error::Format {
            path: bin,
            message: "payload hash mismatch".into(),
        });
    }
    Ok((meta, payload))
}

fn info(kind: &str, width: usize, height: usize) -> PayloadInfo {
    PayloadInfo {
        kind: kind.into(),
        version: FORMAT_VERSION,
        width,
        height,
        payload_file: String::new(),
        payload_bytes: 0,
        payload_sha256: String::new(),
        metadata_sha256: String::new(),
    }
}

fn f32_at(bytes: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4-byte slice"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackMetadata {
    #[serde(flatten)]
    pub info: PayloadInfo,
    pub layers: usize,
    pub geometry: AcquisitionGeometry,
    pub pixel_spacing: PixelSpacing,
    pub seed: Option<u64>,
}

impl Sidecar for StackMetadata {
    fn info(&self) -> &PayloadInfo {
        &self.info
    }
    fn info_mut(&mut self) -> &mut PayloadInfo {
        &mut self.info
    }
}

pub const STACK_KIND: &str = "interferogram-stack";

/// Payload: every layer's interferogram as interleaved `(re, im)` f32,
/// then `I1`, `I2` planes per layer; all row-major little-endian.
pub fn write_stack(base: &Path, stack: &InterferogramStack, seed: Option<u64>) -> Result<()> {
    let (w, h, n) = (stack.width(), stack.height(), stack.len());
    let mut payload = Vec::with_capacity(w * h * n * 16);
    for layer in stack.layers() {
        for z in layer.interferogram.data() {
            payload.extend_from_slice(&z.re.to_le_bytes());
            payload.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    for layer in stack.layers() {
        for plane in [&layer.master_intensity, &layer.slave_intensity] {
            for v in plane.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let meta = StackMetadata {
        info: info(STACK_KIND, w, h),
        layers: n,
        geometry: stack.geometry().clone(),
        pixel_spacing: stack.pixel_spacing(),
        seed,
    };
    write_artifact(base, meta, &payload)
}

pub fn read_stack(base: &Path) -> Result<(InterferogramStack, StackMetadata)> {
    let (meta, payload) = read_artifact::<StackMetadata>(base, STACK_KIND, |m| {
        (m.info.width * m.info.height * m.layers * 16) as u64
    })?;
    let (w, h, n) = (meta.info.width, meta.info.height, meta.layers);
    let px = w * h;
    let mut layers = Vec::with_capacity(n);
    for k in 0..n {
        let z: Vec<Complex32> = (0..px)
            .map(|i| {
                let j = 2 * (k * px + i);
                Complex32::new(f32_at(&payload, j), f32_at(&payload, j + 1))
            })
            .collect();
        let plane = |p: usize| -> Vec<f32> {
            let base = 2 * n * px + p * px;
            (0..px).map(|i| f32_at(&payload, base + i)).collect()
        };
        layers.push(StackLayer {
            interferogram: Raster::from_vec(w, h, z)?,
            master_intensity: Raster::from_vec(w, h, plane(2 * k))?,
            slave_intensity: Raster::from_vec(w, h, plane(2 * k + 1))?,
        });
    }
    let stack = InterferogramStack::new(meta.geometry.clone(), meta.pixel_spacing, layers)?;
    Ok((stack, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsMetadata {
    #[serde(flatten)]
    pub info: PayloadInfo,
    pub bands: Vec<String>,
}

impl Sidecar for BandsMetadata {
    fn info(&self) -> &PayloadInfo {
        &self.info
    }
    fn info_mut(&mut self) -> &mut PayloadInfo {
        &mut self.info
    }
}

pub const BANDS_KIND: &str = "float-raster";

/// Named f32 bands, one row-major plane after another.
pub fn write_bands(base: &Path, bands: &[(&str, &Raster<f32>)]) -> Result<()> {
    let first = bands
        .first()
        .ok_or_else(|| Error::InvalidArgument("raster file needs at least one band".into()))?
        .1;
    if bands.iter().any(|(_, r)| !r.same_shape(first)) {
        return Err(Error::Dimension("bands differ in size".into()));
    }
    let mut payload = Vec::with_capacity(bands.len() * first.len() * 4);
    for (_, r) in bands {
        for v in r.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = BandsMetadata {
        info: info(BANDS_KIND, first.width(), first.height()),
        bands: bands.iter().map(|(n, _)| n.to_string()).collect(),
    };
    write_artifact(base, meta, &payload)
}

pub fn read_bands(base: &Path) -> Result<Vec<(String, Raster<f32>)>> {
    let (meta, payload) = read_artifact::<BandsMetadata>(base, BANDS_KIND, |m| {
        (m.info.width * m.info.height * m.bands.len() * 4) as u64
    })?;
    let px = meta.info.width * meta.info.height;
    meta.bands
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let data = (0..px).map(|i| f32_at(&payload, b * px + i)).collect();
            Ok((name.clone(), Raster::from_vec(meta.info.width, meta.info.height, data)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsMetadata {
    #[serde(flatten)]
    pub info: PayloadInfo,
}

impl Sidecar for LabelsMetadata {
    fn info(&self) -> &PayloadInfo {
        &self.info
    }
    fn info_mut(&mut self) -> &mut PayloadInfo {
        &mut self.info
    }
}

pub const LABELS_KIND: &str = "label-raster";

/// u32 labels, row-major little-endian.
pub fn write_labels(base: &Path, labels: &Raster<u32>) -> Result<()> {
    let payload: Vec<u8> = labels.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let meta = LabelsMetadata {
        info: info(LABELS_KIND, labels.width(), labels.height()),
    };
    write_artifact(base, meta, &payload)
}

pub fn read_labels(base: &Path) -> Result<Raster<u32>> {
    let (meta, payload) =
        read_artifact::<LabelsMetadata>(base, LABELS_KIND, |m| (m.info.width * m.info.height * 4) as u64)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Raster::from_vec(meta.info.width, meta.info.height, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterersMetadata {
    #[serde(flatten)]
    pub info: PayloadInfo,
    pub max_order: usize,
    pub record_bytes: usize,
}

impl Sidecar for ScatterersMetadata {
    fn info(&self) -> &PayloadInfo {
        &self.info
    }
    fn info_mut(&mut self) -> &mut PayloadInfo {
        &mut self.info
    }
}

pub const SCATTERERS_KIND: &str = "scatterer-raster";
pub const MAX_STORED_ORDER: usize = 2;
const RECORD_BYTES: usize = 8 + 8 + MAX_STORED_ORDER * 16;

/// Fixed 48-byte record per pixel: order u8, method code u8, converged u8,
/// 5 pad bytes, score f64, then `(elevation, power)` f64 pairs for up to two
/// scatterers (unused slots zero).
pub fn write_scatterers(base: &Path, sets: &Raster<ScattererSet>) -> Result<()> {
    let mut payload = Vec::with_capacity(sets.len() * RECORD_BYTES);
    for set in sets.data() {
        if set.order() > MAX_STORED_ORDER {
            return Err(Error::InvalidArgument(format!(
                "pixel holds {} scatterers, the file stores at most {MAX_STORED_ORDER}",
                set.order()
            )));
        }
        payload.extend_from_slice(&[set.order() as u8, set.method.code(), set.converged as u8, 0, 0, 0, 0, 0]);
        payload.extend_from_slice(&set.score.to_le_bytes());
        for k in 0..MAX_STORED_ORDER {
            let (e, p) = set.scatterers.get(k).map_or((0.0, 0.0), |s| (s.elevation, s.power));
            payload.extend_from_slice(&e.to_le_bytes());
            payload.extend_from_slice(&p.to_le_bytes());
        }
    }
    let meta = ScatterersMetadata {
        info: info(SCATTERERS_KIND, sets.width(), sets.height()),
        max_order: MAX_STORED_ORDER,
        record_bytes: RECORD_BYTES,
    };
    write_artifact(base, meta, &payload)
}

pub fn read_scatterers(base: &Path) -> Result<Raster<ScattererSet>> {
    let (meta, payload) = read_artifact::<ScatterersMetadata>(base, SCATTERERS_KIND, |m| {
        (m.info.width * m.info.height * m.record_bytes) as u64
    })?;
    let (json, _) = artifact_paths(base);
    if meta.record_bytes != RECORD_BYTES || meta.max_order != MAX_STORED_ORDER {
        return Err(Error::Format {
            path: json,
            message: "unsupported scatterer record layout".into(),
        });
    }
    let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().expect("8-byte slice"));
    let mut sets = Vec::with_capacity(meta.info.width * meta.info.height);
    for (i, rec) in payload.chunks_exact(RECORD_BYTES).enumerate() {
        let bad = |what: &str| Error::Format {
            path: json.clone(),
            message: format!("record {i}: {what}"),
        };
        let order = rec[0] as usize;
        if order > MAX_STORED_ORDER {
            return Err(bad("order out of range"));
        }
        let method = Method::from_code(rec[1]).ok_or_else(|| bad("unknown method code"))?;
        let scatterers = (0..order)
            .map(|k| Scatterer {
                elevation: f64_at(rec, 16 + 16 * k),
                power: f64_at(rec, 24 + 16 * k),
            })
            .collect();
        sets.push(ScattererSet {
            scatterers,
            score: f64_at(rec, 8),
            method,
            converged: rec[2] != 0,
        });
    }
    Raster::from_vec(meta.info.width, meta.info.height, sets)
}

#[derive(Serialize, Deserialize)]
struct HeightRow {
    id: u32,
    height: Option<f64>,
    count: usize,
    robust_std: f64,
    flag: String,
}

/// Columns `id,height,count,robust_std,flag`; `height` is empty for objects
/// without an estimate.
pub fn write_heights_csv(path: &Path, heights: &[ObjectHeight]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in heights {
        w.serialize(HeightRow {
            id: h.id,
            height: h.height,
            count: h.count,
            robust_std: h.robust_std,
            flag: h.flag.as_str().into(),
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_heights_csv(path: &Path) -> Result<Vec<ObjectHeight>> {
    let bytes = fs::read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for row in r.deserialize::<HeightRow>() {
        let parse_err = |offset: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            offset,
            message,
        };
        let row = row.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            parse_err(offset, e.to_string())
        })?;
        let flag = HeightFlag::parse(&row.flag).ok_or_else(|| parse_err(0, format!("unknown flag {:?}", row.flag)))?;
        out.push(ObjectHeight {
            id: row.id,
            height: row.height,
            count: row.count,
            robust_std: row.robust_std,
            flag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> AcquisitionGeometry {
        AcquisitionGeometry::from_arrays(0.031, 600_000.0, &[-420.0, 130.0], &[100.0, 150.0]).unwrap()
    }

    fn stack() -> InterferogramStack {
        let layer = |k: f32| StackLayer {
            interferogram: Raster::from_fn(4, 3, |r, c| Complex32::new(r as f32 + k, c as f32 * -0.5)),
            master_intensity: Raster::from_fn(4, 3, |r, c| (r * 4 + c) as f32 + 0.25),
            slave_intensity: Raster::from_fn(4, 3, |r, c| 1.0 / (1.0 + (r + c) as f32) + k),
        };
        InterferogramStack::new(geometry(), PixelSpacing::default(), vec![layer(0.0), layer(7.0)]).unwrap()
    }

    #[test]
    fn stack_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        let s = stack();
        write_stack(&base, &s, Some(9)).unwrap();
        assert_eq!(fs::metadata(base.with_extension("bin")).unwrap().len(), 4 * 3 * 2 * 16);
        let (back, meta) = read_stack(&base).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta.seed, Some(9));
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        write_stack(&base, &stack(), None).unwrap();
        let bin = base.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[5] ^= 1;
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_stack(&base), Err(Error::Format { .. })));
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_stack(&base), Err(Error::Format { .. })));
    }

    #[test]
    fn tampered_metadata_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        write_stack(&base, &stack(), Some(1)).unwrap();
        let json = base.with_extension("json");
        let text = fs::read_to_string(&json).unwrap().replace("\"seed\": 1", "\"seed\": 2");
        fs::write(&json, text).unwrap();
        assert!(matches!(read_stack(&base), Err(Error::Format { .. })));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        fs::write(base.with_extension("json"), "{\n  \"kind\": ]").unwrap();
        match read_stack(&base) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scatterers_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sets = Raster::from_fn(3, 2, |r, c| ScattererSet {
            scatterers: (0..(r + c) % 3)
                .map(|k| Scatterer {
                    elevation: k as f64 * 10.5 - 1.0 / 3.0,
                    power: 0.1 + c as f64,
                })
                .collect(),
            score: r as f64 * 1.25,
            method: if (r + c) % 3 == 2 { Method::Cs } else { Method::Nls },
            converged: c != 1,
        });
        write_scatterers(&dir.path().join("s"), &sets).unwrap();
        assert_eq!(read_scatterers(&dir.path().join("s")).unwrap(), sets);

        let labels = Raster::from_fn(5, 4, |r, c| (r * c) as u32);
        write_labels(&dir.path().join("l"), &labels).unwrap();
        assert_eq!(read_labels(&dir.path().join("l")).unwrap(), labels);

        let band = Raster::from_fn(5, 4, |r, c| r as f32 - c as f32 * 0.1);
        write_bands(&dir.path().join("b"), &[("a", &band), ("b", &band)]).unwrap();
        let back = read_bands(&dir.path().join("b")).unwrap();
        assert_eq!(back[1], ("b".to_string(), band));
    }

    #[test]
    fn heights_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let heights = vec![
            ObjectHeight {
                id: 1,
                height: Some(12.345678901234),
                count: 40,
                robust_std: 0.5,
                flag: HeightFlag::Ok,
            },
            ObjectHeight {
                id: 2,
                height: None,
                count: 0,
                robust_std: 0.0,
                flag: HeightFlag::NoEstimate,
            },
        ];
        write_heights_csv(&path, &heights).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,height,count,robust_std,flag\n"));
        assert_eq!(read_heights_csv(&path).unwrap(), heights);
    }
}
