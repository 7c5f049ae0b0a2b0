//! Line-oriented manifest files.
//!
//! ```text
//! version=1
//! name=synthetic-source-train
//! L=4
//! N=20
//! H=32
//! W=16
//! C=3
//! seed=7
//! synthetic=1
//! images/0000_c1_000000.png<TAB>0<TAB>1<TAB>train<TAB>
//! ```
//!
//! Records are `path, identity, camera, split, provenance` separated by tabs;
//! an empty provenance field means none. UTF-8, LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::record::{DatasetManifest, ImageRecord, ImageRef, Split};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = render_manifest(manifest)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn render_manifest(m: &DatasetManifest) -> Result<String> {
    m.validate()?;
    if m.name.contains(['\n', '\r']) {
        return Err(Error::InvalidRecord("manifest name contains a line break".into()));
    }
    let synthetic = match m.records.first() {
        None => false,
        Some(first) => {
            if m.records.iter().any(|r| r.is_synthetic != first.is_synthetic) {
                return Err(Error::InvalidRecord(
                    "records mix synthetic and real images; split the manifest".into(),
                ));
            }
            first.is_synthetic
        }
    };
    let mut out = String::new();
    let seed = m.seed.map(|s| s.to_string()).unwrap_or_default();
    writeln!(out, "version={MANIFEST_VERSION}").unwrap();
    writeln!(out, "name={}", m.name).unwrap();
    writeln!(out, "L={}", m.num_cameras).unwrap();
    writeln!(out, "N={}", m.num_identities).unwrap();
    writeln!(out, "H={}", m.image_height).unwrap();
    writeln!(out, "W={}", m.image_width).unwrap();
    writeln!(out, "C={}", m.image_channels).unwrap();
    writeln!(out, "seed={seed}").unwrap();
    writeln!(out, "synthetic={}", synthetic as u8).unwrap();
    for (i, r) in m.records.iter().enumerate() {
        let path = match &r.image {
            ImageRef::Path(p) => p
                .to_str()
                .ok_or_else(|| Error::InvalidRecord(format!("record {i}: non UTF-8 path")))?,
            ImageRef::Inline(_) => {
                return Err(Error::InvalidRecord(format!(
                    "record {i} holds an inline image; materialize images before saving"
                )))
            }
        };
        let provenance = r.provenance.as_deref().unwrap_or("");
        for field in [path, provenance] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidRecord(format!("record {i}: field {field:?} contains a separator")));
            }
        }
        if path.is_empty() {
            return Err(Error::InvalidRecord(format!("record {i}: empty path")));
        }
        writeln!(out, "{path}\t{}\t{}\t{}\t{provenance}", r.identity, r.camera, r.split).unwrap();
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let err = |line: usize, message: String| Error::ManifestFormat {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut version = None;
    let mut name = None;
    let mut cameras = None;
    let mut identities = None;
    let (mut h, mut w, mut c) = (None, None, None);
    let mut seed: Option<Option<u64>> = None;
    let mut synthetic = None;
    let mut records = Vec::new();

    let num = |line: usize, key: &str, v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|_| err(line, format!("{key}: expected a non-negative integer, got {v:?}")))
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        if line.contains('\t') {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(lineno, format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            let identity: i64 = fields[1]
                .parse()
                .map_err(|_| err(lineno, format!("bad identity {:?}", fields[1])))?;
            let camera_raw: i64 = fields[2]
                .parse()
                .map_err(|_| err(lineno, format!("bad camera {:?}", fields[2])))?;
            let split: Split = fields[3].parse().map_err(|e: Error| err(lineno, e.to_string()))?;
            let l = cameras.ok_or_else(|| err(lineno, "record before L= header".into()))?;
            if camera_raw < 1 || camera_raw as usize > l {
                return Err(Error::CameraOutOfRange {
                    camera: camera_raw,
                    num_cameras: l,
                });
            }
            records.push(ImageRecord {
                image: ImageRef::Path(PathBuf::from(fields[0])),
                identity,
                camera: camera_raw as u32,
                split,
                is_synthetic: false,
                provenance: (!fields[4].is_empty()).then(|| fields[4].to_string()),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, format!("expected key=value header, got {line:?}")))?;
        if !records.is_empty() {
            return Err(err(lineno, "header line after records".into()));
        }
        match key {
            "version" => {
                if value != MANIFEST_VERSION.to_string() {
                    return Err(Error::ManifestVersion {
                        found: value.to_string(),
                        expected: MANIFEST_VERSION,
                    });
                }
                version = Some(());
            }
            "name" => name = Some(value.to_string()),
            "L" => cameras = Some(num(lineno, key, value)?),
            "N" => identities = Some(num(lineno, key, value)?),
            "H" => h = Some(num(lineno, key, value)?),
            "W" => w = Some(num(lineno, key, value)?),
            "C" => c = Some(num(lineno, key, value)?),
            "seed" => {
                seed = Some(if value.is_empty() {
                    None
                } else {
                    Some(value.parse().map_err(|_| err(lineno, format!("bad seed {value:?}")))?)
                })
            }
            "synthetic" => {
                synthetic = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(lineno, format!("bad synthetic flag {value:?}"))),
                })
            }
            other => return Err(err(lineno, format!("unknown header key {other:?}"))),
        }
    }

    if version.is_none() {
        return Err(Error::ManifestVersion {
            found: "missing".into(),
            expected: MANIFEST_VERSION,
        });
    }
    let missing = |k: &str| err(0, format!("missing header {k}="));
    let synthetic = synthetic.ok_or_else(|| missing("synthetic"))?;
    for r in &mut records {
        r.is_synthetic = synthetic;
    }
    let m = DatasetManifest {
        name: name.ok_or_else(|| missing("name"))?,
        records,
        num_cameras: cameras.ok_or_else(|| missing("L"))?,
        num_identities: identities.ok_or_else(|| missing("N"))?,
        image_height: h.ok_or_else(|| missing("H"))?,
        image_width: w.ok_or_else(|| missing("W"))?,
        image_channels: c.ok_or_else(|| missing("C"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    m.validate()?;
    Ok(m)
}

/// File stem following the `<identity>_c<camera>_<index>` convention.
pub(crate) fn reid_file_stem(identity: i64, camera: u32, index: usize) -> String {
    if identity < 0 {
        format!("{identity}_c{camera}_{index:06}")
    } else {
        format!("{identity:04}_c{camera}_{index:06}")
    }
}

/// Writes every inline image as a PNG under `manifest_dir/image_subdir` and
/// returns a copy whose records reference those files relative to
/// `manifest_dir`. Path-backed records are left untouched.
pub fn materialize_images(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    image_subdir: &str,
) -> Result<DatasetManifest> {
    let dir = manifest_dir.join(image_subdir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = manifest.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        if let ImageRef::Inline(img) = &r.image {
            let file = format!("{}.png", reid_file_stem(r.identity, r.camera, i));
            img.save_png(&dir.join(&file))?;
            r.image = ImageRef::Path(Path::new(image_subdir).join(file));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(path: &str, identity: i64, camera: u32, split: Split) -> ImageRecord {
        ImageRecord {
            image: ImageRef::Path(path.into()),
            identity,
            camera,
            split,
            is_synthetic: true,
            provenance: None,
        }
    }

    #[test]
    fn round_trip() {
        let mut recs = vec![
            record("a/0001_c1.png", 1, 1, Split::Train),
            record("a/0002_c2.png", 2, 2, Split::Train),
            record("a/-1_c3.png", -1, 3, Split::Gallery),
        ];
        recs[1].provenance = Some("translated-from:a/0002_c1.png".into());
        let m = DatasetManifest::new("demo", recs, 6, (32, 16, 3), Some(7)).unwrap();
        assert_eq!(m.num_identities, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.manifest");
        save_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::new("empty", vec![], 6, (32, 16, 3), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.manifest");
        save_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.num_identities, 0);
        assert!(back.records.is_empty());
        assert_eq!(back, m);
    }

    #[test]
    fn camera_out_of_range() {
        let text = "version=1\nname=x\nL=6\nN=1\nH=32\nW=16\nC=3\nseed=\nsynthetic=0\nimg.png\t1\t9\ttrain\t\n";
        let err = parse_manifest(text, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("camera out of range"), "{err}");
    }

    #[test]
    fn version_mismatch_and_missing_file() {
        let text = "version=2\nname=x\nL=6\nN=0\nH=32\nW=16\nC=3\nseed=\nsynthetic=0\n";
        assert!(matches!(parse_manifest(text, Path::new("x")), Err(Error::ManifestVersion { .. })));
        assert!(matches!(load_manifest(Path::new("/nonexistent/m")), Err(Error::Io { .. })));
    }

    #[test]
    fn identity_count_mismatch_rejected() {
        let text = "version=1\nname=x\nL=6\nN=3\nH=32\nW=16\nC=3\nseed=\nsynthetic=0\nimg.png\t1\t2\ttrain\t\n";
        assert!(parse_manifest(text, Path::new("x")).is_err());
    }

    #[test]
    fn inline_images_must_be_materialized() {
        use std::sync::Arc;
        let img = crate::image::ImageTensor::filled(4, 2, 3, 0.0);
        let rec = ImageRecord {
            image: ImageRef::Inline(Arc::new(img)),
            ..record("unused", 0, 1, Split::Train)
        };
        let m = DatasetManifest::new("x", vec![rec], 2, (4, 2, 3), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_manifest(&m, &dir.path().join("m")).is_err());
        let mat = materialize_images(&m, dir.path(), "images").unwrap();
        assert_eq!(mat.records[0].image, ImageRef::Path("images/0000_c1_000000.png".into()));
        save_manifest(&mat, &dir.path().join("m")).unwrap();
        assert!(dir.path().join("images/0000_c1_000000.png").exists());
    }
}
