//! Dataset manifests: which images exist, their labels, ground-truth boxes,
//! feature-map tensors, and the weaksup/fullsup/test split roles.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::BBox;
use crate::tensor::read_header;

pub type GroundTruthBox = BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainWeaksup,
    TrainFullsup,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainWeaksup, Split::TrainFullsup, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::TrainWeaksup => "train_weaksup",
            Split::TrainFullsup => "train_fullsup",
            Split::Test => "test",
        }
    }

    /// Splits whose images are scored and therefore need ground truth.
    pub fn is_scored(self) -> bool {
        !matches!(self, Split::TrainWeaksup)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub image_id: String,
    pub class_index: usize,
    pub image_size: ImageSize,
    /// Resolved against the manifest's directory.
    pub featuremap_path: PathBuf,
    pub gt_boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub class_count: usize,
    /// Optional classifier weight tensor, shape (N, C).
    pub weights_path: Option<PathBuf>,
    entries: Vec<ImageEntry>,
    by_id: HashMap<String, usize>,
    splits: HashMap<Split, Vec<String>>,
}

// on-disk layout

#[derive(Debug, Deserialize, Serialize)]
pub struct ManifestFile {
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    pub splits: SplitsFile,
    pub images: Vec<ImageFile>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct SplitsFile {
    #[serde(default)]
    pub train_weaksup: Vec<String>,
    #[serde(default)]
    pub train_fullsup: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ImageFile {
    pub id: String,
    pub class_index: usize,
    pub width: u32,
    pub height: u32,
    pub featuremap: String,
    pub gt_boxes: Vec<BoxFile>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct BoxFile {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    DatasetManifest::from_json(&text, base)
}

impl DatasetManifest {
    /// Parses and eagerly validates a manifest; tensor paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| Error::SchemaError(e.to_string()))?;
        Self::from_file(file, base_dir)
    }

    pub fn from_file(file: ManifestFile, base_dir: &Path) -> Result<Self> {
        if file.class_count == 0 {
            return Err(Error::SchemaError("class_count must be at least 1".into()));
        }

        let mut entries = Vec::with_capacity(file.images.len());
        let mut by_id = HashMap::new();
        for img in file.images {
            if by_id.insert(img.id.clone(), entries.len()).is_some() {
                return Err(Error::SchemaError(format!("duplicate image id {}", img.id)));
            }
            if img.class_index >= file.class_count {
                return Err(Error::SchemaError(format!(
                    "image {}: class_index {} not below class_count {}",
                    img.id, img.class_index, file.class_count
                )));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::SchemaError(format!("image {}: zero image size", img.id)));
            }
            let mut gt_boxes = Vec::with_capacity(img.gt_boxes.len());
            for b in &img.gt_boxes {
                let bbox = BBox::new(b.x_min, b.y_min, b.x_max, b.y_max).ok_or_else(|| {
                    Error::SchemaError(format!("image {}: degenerate box {:?}", img.id, b))
                })?;
                if b.x_max > img.width || b.y_max > img.height {
                    return Err(Error::BoxOutOfBounds {
                        image_id: img.id.clone(),
                        bbox: [b.x_min, b.y_min, b.x_max, b.y_max],
                        width: img.width,
                        height: img.height,
                    });
                }
                gt_boxes.push(bbox);
            }
            entries.push(ImageEntry {
                featuremap_path: base_dir.join(&img.featuremap),
                image_id: img.id,
                class_index: img.class_index,
                image_size: ImageSize { width: img.width, height: img.height },
                gt_boxes,
            });
        }

        let mut splits = HashMap::new();
        for (split, ids) in [
            (Split::TrainWeaksup, file.splits.train_weaksup),
            (Split::TrainFullsup, file.splits.train_fullsup),
            (Split::Test, file.splits.test),
        ] {
            let mut seen = HashSet::new();
            for id in &ids {
                let Some(&idx) = by_id.get(id) else {
                    return Err(Error::SchemaError(format!("split {split} references unknown image {id}")));
                };
                if !seen.insert(id.as_str()) {
                    return Err(Error::SchemaError(format!("split {split} lists image {id} twice")));
                }
                if split.is_scored() && entries[idx].gt_boxes.is_empty() {
                    return Err(Error::SchemaError(format!("image {id} in scored split {split} has no gt_boxes")));
                }
            }
            splits.insert(split, ids);
        }
        let test: HashSet<&String> = splits[&Split::Test].iter().collect();
        if let Some(id) = splits[&Split::TrainFullsup].iter().filter(|id| test.contains(id)).min() {
            return Err(Error::OverlappingSplits(id.clone()));
        }

        let weights_path = file.weights.map(|w| base_dir.join(w));
        let manifest = DatasetManifest { class_count: file.class_count, weights_path, entries, by_id, splits };
        manifest.check_tensors()?;
        Ok(manifest)
    }

    fn check_tensors(&self) -> Result<()> {
        let weight_shape = match &self.weights_path {
            Some(p) => {
                let header = read_header(p).map_err(|e| Error::DanglingTensorRef {
                    image_id: "<weights>".into(),
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
                match header.shape.as_slice() {
                    &[n, c] if c == self.class_count => Some(n),
                    shape => {
                        return Err(Error::DanglingTensorRef {
                            image_id: "<weights>".into(),
                            path: p.clone(),
                            reason: format!("expected shape (N, {}), found {:?}", self.class_count, shape),
                        })
                    }
                }
            }
            None => None,
        };

        for e in &self.entries {
            let dangling = |reason: String| Error::DanglingTensorRef {
                image_id: e.image_id.clone(),
                path: e.featuremap_path.clone(),
                reason,
            };
            let header = read_header(&e.featuremap_path).map_err(|err| dangling(err.to_string()))?;
            let &[n, rows, cols] = header.shape.as_slice() else {
                return Err(dangling(format!("expected a (N, I, J) stack, found shape {:?}", header.shape)));
            };
            if let Some(wn) = weight_shape {
                if wn != n {
                    return Err(dangling(format!("{n} channels but weights have {wn} rows")));
                }
            }
            if rows as u64 > e.image_size.height as u64 || cols as u64 > e.image_size.width as u64 {
                return Err(dangling(format!(
                    "{rows}x{cols} grid exceeds the {}x{} image",
                    e.image_size.width, e.image_size.height
                )));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ImageEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageEntry> {
        self.by_id.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Entries of a split, in the order the manifest lists them.
    pub fn split(&self, split: Split) -> Vec<&ImageEntry> {
        self.split_ids(split).iter().map(|id| &self.entries[self.by_id[id]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{write_tensor, Tensor};
    use serde_json::json;

    fn fixture(dir: &Path) {
        let t = Tensor::from_vec(vec![2, 3, 3], vec![1.0f32; 18]).unwrap();
        write_tensor(dir.join("a.npy"), &t).unwrap();
        write_tensor(dir.join("b.npy"), &t).unwrap();
    }

    fn base() -> serde_json::Value {
        json!({
            "class_count": 1,
            "splits": {"train_weaksup": [], "train_fullsup": ["a"], "test": ["b"]},
            "images": [
                {"id": "a", "class_index": 0, "width": 30, "height": 30, "featuremap": "a.npy",
                 "gt_boxes": [{"x_min": 0, "y_min": 0, "x_max": 10, "y_max": 10}]},
                {"id": "b", "class_index": 0, "width": 30, "height": 30, "featuremap": "b.npy",
                 "gt_boxes": [{"x_min": 5, "y_min": 5, "x_max": 30, "y_max": 30}]}
            ]
        })
    }

    fn parse(v: &serde_json::Value, dir: &Path) -> Result<DatasetManifest> {
        DatasetManifest::from_json(&v.to_string(), dir)
    }

    #[test]
    fn minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let v = json!({
            "class_count": 1,
            "splits": {"test": ["a"]},
            "images": [{"id": "a", "class_index": 0, "width": 8, "height": 8, "featuremap": "a.npy",
                        "gt_boxes": [{"x_min": 1, "y_min": 1, "x_max": 4, "y_max": 4}]}]
        });
        let m = parse(&v, dir.path()).unwrap();
        assert_eq!(m.entries().len(), 1);
        assert_eq!(m.split(Split::Test)[0].image_id, "a");
        assert!(m.split(Split::TrainFullsup).is_empty());
    }

    #[test]
    fn overlapping_splits() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut v = base();
        v["splits"]["test"] = json!(["a", "b"]);
        assert!(matches!(parse(&v, dir.path()), Err(Error::OverlappingSplits(id)) if id == "a"));
    }

    #[test]
    fn box_out_of_bounds() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut v = base();
        v["images"][1]["gt_boxes"][0]["x_max"] = json!(31);
        assert!(matches!(parse(&v, dir.path()), Err(Error::BoxOutOfBounds { .. })));
    }

    #[test]
    fn dangling_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut v = base();
        v["images"][0]["featuremap"] = json!("missing.npy");
        assert!(matches!(parse(&v, dir.path()), Err(Error::DanglingTensorRef { .. })));

        let mut v = base();
        v["images"][0]["class_index"] = json!(3);
        assert!(matches!(parse(&v, dir.path()), Err(Error::SchemaError(_))));

        let mut v = base();
        v["images"][0]["gt_boxes"] = json!([]);
        assert!(matches!(parse(&v, dir.path()), Err(Error::SchemaError(_))));

        let mut v = base();
        v["splits"]["test"] = json!(["zzz"]);
        assert!(matches!(parse(&v, dir.path()), Err(Error::SchemaError(_))));

        assert!(matches!(DatasetManifest::from_json("{", dir.path()), Err(Error::SchemaError(_))));
    }

    #[test]
    fn weights_shape_checked() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write_tensor(dir.path().join("w.npy"), &Tensor::from_vec(vec![2, 1], vec![1.0f64, 2.0]).unwrap()).unwrap();
        write_tensor(dir.path().join("w3.npy"), &Tensor::from_vec(vec![3, 1], vec![1.0f64; 3]).unwrap()).unwrap();
        let mut v = base();
        v["weights"] = json!("w.npy");
        assert!(parse(&v, dir.path()).unwrap().weights_path.is_some());
        v["weights"] = json!("w3.npy");
        assert!(matches!(parse(&v, dir.path()), Err(Error::DanglingTensorRef { .. })));
    }

    #[test]
    fn validation_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        for bad in [false, true] {
            let mut v = base();
            if bad {
                v["images"][0]["gt_boxes"][0]["y_max"] = json!(99);
            }
            let forward = parse(&v, dir.path()).is_ok();
            let imgs = v["images"].as_array_mut().unwrap();
            imgs.reverse();
            let reversed = parse(&v, dir.path()).is_ok();
            assert_eq!(forward, reversed);
            assert_eq!(forward, !bad);
        }
    }
}
