use std::fs;
use std::path::Path;

use super::filename::parse_reid_filename;
use super::record::{DatasetManifest, ImageRecord, ImageRef, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Manifests for a real dataset laid out as `bounding_box_train/`, `query/`
/// and `bounding_box_test/`.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedDataset {
    pub train: DatasetManifest,
    pub query: DatasetManifest,
    pub gallery: DatasetManifest,
}

const SUBDIRS: [(&str, Split); 3] = [
    ("bounding_box_train", Split::Train),
    ("query", Split::Query),
    ("bounding_box_test", Split::Gallery),
];

fn is_image(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    [".jpg", ".jpeg", ".png", ".bmp"].iter().any(|ext| lower.ends_with(ext))
}

/// Scans a Market-1501-style directory. Record paths are `root` joined with
/// the subdirectory and file name; the camera count is the largest camera
/// id seen and the image size is read from the first image.
pub fn ingest_reid_directory(root: &Path, name: &str) -> Result<IngestedDataset> {
    let mut parts: Vec<Vec<ImageRecord>> = Vec::new();
    let mut max_cam = 0u32;
    let mut first_image = None;
    for (sub, split) in SUBDIRS {
        let dir = root.join(sub);
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| is_image(n))
            .collect();
        names.sort();
        let mut recs = Vec::with_capacity(names.len());
        for file in names {
            let (identity, camera) = parse_reid_filename(&file)?;
            max_cam = max_cam.max(camera);
            let path = dir.join(&file);
            if first_image.is_none() {
                first_image = Some(path.clone());
            }
            recs.push(ImageRecord {
                image: ImageRef::Path(path),
                identity,
                camera,
                split,
                is_synthetic: false,
                provenance: None,
            });
        }
        parts.push(recs);
    }
    let first = first_image.ok_or_else(|| Error::Precondition(format!("no images under {}", root.display())))?;
    let shape = ImageTensor::load_png(&first)?.shape();
    let mut parts = parts.into_iter();
    let mut next = |suffix: &str| {
        DatasetManifest::new(
            format!("{name}-{suffix}"),
            parts.next().unwrap(),
            max_cam as usize,
            shape,
            None,
        )
    };
    Ok(IngestedDataset {
        train: next("train")?,
        query: next("query")?,
        gallery: next("gallery")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingests_market_layout() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::filled(8, 4, 3, 0.0);
        let files = [
            ("bounding_box_train", "0002_c1s1_000451_03.png"),
            ("bounding_box_train", "0007_c2s1_000100_01.png"),
            ("query", "0011_c3s1_000001_00.png"),
            ("bounding_box_test", "0011_c1s1_000001_00.png"),
            ("bounding_box_test", "-1_c6s1_000001_00.png"),
        ];
        for (sub, f) in files {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            img.save_png(&dir.path().join(sub).join(f)).unwrap();
        }
        std::fs::write(dir.path().join("query/Thumbs.db"), b"x").unwrap();
        let d = ingest_reid_directory(dir.path(), "mini").unwrap();
        assert_eq!(d.train.len(), 2);
        assert_eq!(d.train.num_identities, 2);
        assert_eq!(d.query.len(), 1);
        assert_eq!(d.gallery.records[0].identity, -1);
        assert_eq!(d.gallery.num_cameras, 6);
        assert_eq!(d.train.image_shape(), (8, 4, 3));
    }

    #[test]
    fn bad_filename_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["bounding_box_train", "query", "bounding_box_test"] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        }
        ImageTensor::filled(8, 4, 3, 0.0)
            .save_png(&dir.path().join("query/banana.png"))
            .unwrap();
        assert!(matches!(ingest_reid_directory(dir.path(), "x"), Err(Error::Filename(_))));
    }
}
