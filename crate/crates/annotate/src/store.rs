//! On-disk annotation store.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.json                      every current record
//! records/<image>/<annotator>.pts    one shape per (image, annotator)
//! ```
//!
//! Path components are percent-encoded ids. Every file is written to a
//! temporary sibling, synced, and renamed into place; the manifest is
//! rewritten after the shape file, so an acknowledged save survives a
//! crash. Shapes are rounded to the 6-decimal precision of the pts files on
//! the way in, so memory and disk always agree.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use facelm::dataset::{format_coord, parse_pts, write_pts};
use facelm::geometry::{Point2, Shape68};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

const MANIFEST: &str = "manifest.json";
const RECORDS: &str = "records";

/// Everything except `-`, `.` and `_` among the non-alphanumerics.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_');

fn encode(id: &str) -> String {
    let s = utf8_percent_encode(id, COMPONENT).to_string();
    // "." and ".." are not usable as path components
    match s.as_str() {
        "." => "%2E".into(),
        ".." => "%2E%2E".into(),
        _ => s,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    pub shape: Shape68,
    /// Milliseconds since the Unix epoch.
    pub saved_at: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    image: String,
    annotator: String,
    file: String,
    saved_at: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    records: Vec<ManifestEntry>,
}

/// Rounds to the precision stored on disk.
pub fn quantize(shape: &Shape68) -> Shape68 {
    let q = |v: f64| format_coord(v).parse::<f64>().expect("formatted float parses");
    shape.map(|p| Point2::new(q(p.x), q(p.y)))
}

/// Current records keyed by image then annotator, plus their averages.
#[derive(Debug)]
pub struct RecordStore {
    root: PathBuf,
    records: BTreeMap<String, BTreeMap<String, AnnotationRecord>>,
    ground_truth: BTreeMap<String, Shape68>,
}

impl RecordStore {
    /// Opens (or creates) the store at `root`, reloading every record in
    /// the manifest.
    pub fn open(root: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(root.join(RECORDS)).map_err(|e| ServiceError::io(root, e))?;
        let manifest_path = root.join(MANIFEST);
        let manifest: Manifest = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| {
                ServiceError::Storage(format!("{}: {e}", manifest_path.display()))
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(ServiceError::io(&manifest_path, e)),
        };
        let mut store = RecordStore {
            root: root.to_path_buf(),
            records: BTreeMap::new(),
            ground_truth: BTreeMap::new(),
        };
        for entry in manifest.records {
            let path = root.join(&entry.file);
            let text = fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, e))?;
            let points = parse_pts(&text)
                .map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))?;
            let shape = Shape68::from_slice(&points)
                .map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))?;
            store.records.entry(entry.image.clone()).or_default().insert(
                entry.annotator.clone(),
                AnnotationRecord {
                    image_id: entry.image,
                    annotator_id: entry.annotator,
                    shape,
                    saved_at: entry.saved_at,
                },
            );
        }
        let images: Vec<String> = store.records.keys().cloned().collect();
        for id in images {
            store.recompute(&id);
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record(&self, image_id: &str, annotator_id: &str) -> Option<&AnnotationRecord> {
        self.records.get(image_id)?.get(annotator_id)
    }

    pub fn records_for(&self, image_id: &str) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.get(image_id).into_iter().flat_map(|m| m.values())
    }

    pub fn ground_truth(&self, image_id: &str) -> Option<&Shape68> {
        self.ground_truth.get(image_id)
    }

    pub fn ground_truths(&self) -> &BTreeMap<String, Shape68> {
        &self.ground_truth
    }

    fn recompute(&mut self, image_id: &str) {
        let shapes: Vec<Shape68> = self.records_for(image_id).map(|r| r.shape).collect();
        match Shape68::mean(&shapes) {
            Some(mean) => {
                self.ground_truth.insert(image_id.to_string(), mean);
            }
            None => {
                self.ground_truth.remove(image_id);
            }
        }
    }

    fn relative_file(image_id: &str, annotator_id: &str) -> String {
        format!("{RECORDS}/{}/{}.pts", encode(image_id), encode(annotator_id))
    }

    /// Upserts and persists a record, then refreshes the image's ground
    /// truth. Returns the stored (quantized) record.
    pub fn save(
        &mut self,
        image_id: &str,
        annotator_id: &str,
        shape: &Shape68,
    ) -> Result<AnnotationRecord, ServiceError> {
        let shape = quantize(shape);
        let rel = Self::relative_file(image_id, annotator_id);
        let path = self.root.join(&rel);
        let dir = path.parent().expect("record file has a parent");
        fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        atomic_write(&path, write_pts(shape.points()).as_bytes())?;

        let saved_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let record = AnnotationRecord {
            image_id: image_id.to_string(),
            annotator_id: annotator_id.to_string(),
            shape,
            saved_at,
        };
        let previous = self
            .records
            .entry(image_id.to_string())
            .or_default()
            .insert(annotator_id.to_string(), record.clone());
        if let Err(e) = self.write_manifest() {
            // keep memory consistent with what is durably on disk
            let slot = self.records.get_mut(image_id).expect("just inserted");
            match previous {
                Some(p) => {
                    slot.insert(annotator_id.to_string(), p);
                }
                None => {
                    slot.remove(annotator_id);
                }
            }
            return Err(e);
        }
        self.recompute(image_id);
        Ok(record)
    }

    fn write_manifest(&self) -> Result<(), ServiceError> {
        let manifest = Manifest {
            records: self
                .records
                .values()
                .flat_map(|m| m.values())
                .map(|r| ManifestEntry {
                    image: r.image_id.clone(),
                    annotator: r.annotator_id.clone(),
                    file: Self::relative_file(&r.image_id, &r.annotator_id),
                    saved_at: r.saved_at,
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        atomic_write(&self.root.join(MANIFEST), &bytes)
    }
}

/// Writes `bytes` to a temporary sibling, syncs it and renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| ServiceError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ServiceError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))?;
    if let Some(dir) = path.parent() {
        // directory sync makes the rename itself durable; not all
        // platforms allow opening a directory, so failure is ignored
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}
