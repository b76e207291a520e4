//! Dataset manifest (JSON lines) and ROI feature file (binary) I/O.
//!
//! Manifest layout: a header line `{"vocab_size": N, "feature_dim": D}`
//! followed by one product object per line. Image entries are paths to ROI
//! feature files, relative to the manifest's directory.
//!
//! ROI feature file layout (little-endian): magic `MRHPFEAT`, u32 version
//! (= 1), u32 m, u32 dim, then m·dim f32 values row-major. Values are
//! widened to f64 on load.

use super::{Dataset, DatasetError, ProductRecord, Result, ReviewRecord, RoiFeatureMatrix};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const ROI_MAGIC: &[u8; 8] = b"MRHPFEAT";
pub const ROI_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    vocab_size: usize,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ReviewLine {
    review_id: String,
    tokens: Vec<u32>,
    images: Vec<String>,
    label: i64,
}

#[derive(Serialize, Deserialize)]
struct ProductLine {
    product_id: String,
    tokens: Vec<u32>,
    images: Vec<String>,
    reviews: Vec<ReviewLine>,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read one ROI feature file.
pub fn load_roi_features(path: &Path) -> Result<RoiFeatureMatrix> {
    let display = path.display().to_string();
    let mut file = BufReader::new(fs::File::open(path).map_err(|e| io_err(path, e))?);

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| DatasetError::Truncated {
        path: display.clone(),
    })?;
    if &magic != ROI_MAGIC {
        return Err(DatasetError::BadMagic { path: display });
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |file: &mut BufReader<fs::File>| -> Result<u32> {
        file.read_exact(&mut u32buf).map_err(|_| DatasetError::Truncated {
            path: display.clone(),
        })?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut file)?;
    if version != ROI_VERSION {
        return Err(DatasetError::BadVersion {
            path: path.display().to_string(),
            version,
        });
    }
    let m = read_u32(&mut file)? as usize;
    let dim = read_u32(&mut file)? as usize;
    if m == 0 {
        return Err(DatasetError::ZeroObjects {
            path: path.display().to_string(),
        });
    }

    let mut payload = vec![0u8; m * dim * 4];
    file.read_exact(&mut payload).map_err(|_| DatasetError::Truncated {
        path: path.display().to_string(),
    })?;
    // no trailing garbage
    let mut extra = [0u8; 1];
    if file.read(&mut extra).map_err(|e| io_err(path, e))? != 0 {
        return Err(DatasetError::Truncated {
            path: path.display().to_string(),
        });
    }

    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(DatasetError::NonFiniteFeature {
            path: path.display().to_string(),
        });
    }
    RoiFeatureMatrix::new(m, dim, values)
}

/// Write one ROI feature file. Values are narrowed to f32, matching what a
/// load would produce.
pub fn write_roi_features(path: &Path, mat: &RoiFeatureMatrix) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?);
    file.write_all(ROI_MAGIC).map_err(|e| io_err(path, e))?;
    file.write_all(&ROI_VERSION.to_le_bytes()).map_err(|e| io_err(path, e))?;
    file.write_all(&(mat.objects() as u32).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    file.write_all(&(mat.dim() as u32).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    for &v in mat.values() {
        file.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
    }
    file.flush().map_err(|e| io_err(path, e))
}

/// Load and fully validate a dataset from its manifest path.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let file = BufReader::new(fs::File::open(manifest).map_err(|e| io_err(manifest, e))?);
    let mut lines = file.lines().enumerate();

    let header: Header = match lines.next() {
        Some((_, Ok(line))) => serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
            line: 1,
            reason: e.to_string(),
        })?,
        Some((_, Err(e))) => return Err(io_err(manifest, e)),
        None => {
            return Err(DatasetError::MalformedLine {
                line: 1,
                reason: "empty manifest".into(),
            })
        }
    };

    let mut products = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ProductLine = serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        products.push(resolve_product(parsed, &base, header.feature_dim)?);
    }

    let dataset = Dataset {
        vocab_size: header.vocab_size,
        feature_dim: header.feature_dim,
        products,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn resolve_product(line: ProductLine, base: &Path, feature_dim: usize) -> Result<ProductRecord> {
    let mut reviews = Vec::with_capacity(line.reviews.len());
    for review in line.reviews {
        if review.label < 0 || review.label > super::MAX_LABEL as i64 {
            return Err(DatasetError::LabelOutOfRange {
                review_id: review.review_id,
                label: review.label,
            });
        }
        reviews.push(ReviewRecord {
            label: review.label as u8,
            tokens: review.tokens,
            image_features: load_feature_list(&review.images, base, feature_dim)?,
            review_id: review.review_id,
        });
    }
    Ok(ProductRecord {
        tokens: line.tokens,
        image_features: load_feature_list(&line.images, base, feature_dim)?,
        reviews,
        product_id: line.product_id,
    })
}

fn load_feature_list(paths: &[String], base: &Path, feature_dim: usize) -> Result<Vec<RoiFeatureMatrix>> {
    paths
        .iter()
        .map(|rel| {
            let path = base.join(rel);
            let mat = load_roi_features(&path)?;
            if mat.dim() != feature_dim {
                return Err(DatasetError::DimMismatch {
                    path: path.display().to_string(),
                    expected: feature_dim,
                    found: mat.dim(),
                });
            }
            Ok(mat)
        })
        .collect()
}

/// Write a dataset as `manifest.jsonl` plus a `features/` directory under
/// `dir`. Returns the manifest path. Feature files are named after their
/// record ids, so writing the same dataset twice is byte-identical.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| io_err(&features_dir, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = BufWriter::new(fs::File::create(&manifest_path).map_err(|e| io_err(&manifest_path, e))?);

    let header = Header {
        vocab_size: dataset.vocab_size,
        feature_dim: dataset.feature_dim,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header json"))
        .map_err(|e| io_err(&manifest_path, e))?;

    for product in &dataset.products {
        let images = write_feature_list(&product.image_features, &product.product_id, dir)?;
        let mut reviews = Vec::with_capacity(product.reviews.len());
        for review in &product.reviews {
            let review_images =
                write_feature_list(&review.image_features, &review.review_id, dir)?;
            reviews.push(ReviewLine {
                review_id: review.review_id.clone(),
                tokens: review.tokens.clone(),
                images: review_images,
                label: review.label as i64,
            });
        }
        let line = ProductLine {
            product_id: product.product_id.clone(),
            tokens: product.tokens.clone(),
            images,
            reviews,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("product json"))
            .map_err(|e| io_err(&manifest_path, e))?;
    }
    out.flush().map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

fn write_feature_list(
    mats: &[RoiFeatureMatrix],
    record_id: &str,
    dir: &Path,
) -> Result<Vec<String>> {
    let mut rels = Vec::with_capacity(mats.len());
    for (k, mat) in mats.iter().enumerate() {
        let rel = format!("features/{record_id}_{k}.roi");
        write_roi_features(&dir.join(&rel), mat)?;
        rels.push(rel);
    }
    Ok(rels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(m: usize, dim: usize, scale: f64) -> RoiFeatureMatrix {
        let values = (0..m * dim).map(|i| i as f64 * scale).collect();
        RoiFeatureMatrix::new(m, dim, values).unwrap()
    }

    fn sample_dataset() -> Dataset {
        Dataset {
            vocab_size: 16,
            feature_dim: 4,
            products: vec![
                ProductRecord {
                    product_id: "p0".into(),
                    tokens: vec![1, 2, 3, 4],
                    image_features: vec![feat(2, 4, 0.5)],
                    reviews: vec![
                        ReviewRecord {
                            review_id: "p0_r0".into(),
                            tokens: vec![5, 6, 7],
                            image_features: vec![feat(1, 4, 0.25)],
                            label: 4,
                        },
                        ReviewRecord {
                            review_id: "p0_r1".into(),
                            tokens: vec![8, 9, 10],
                            image_features: vec![],
                            label: 1,
                        },
                    ],
                },
                ProductRecord {
                    product_id: "p1".into(),
                    tokens: vec![3, 3, 3],
                    image_features: vec![],
                    reviews: vec![
                        ReviewRecord {
                            review_id: "p1_r0".into(),
                            tokens: vec![2, 2, 2],
                            image_features: vec![],
                            label: 0,
                        },
                        ReviewRecord {
                            review_id: "p1_r1".into(),
                            tokens: vec![1, 1, 1, 1],
                            image_features: vec![feat(3, 4, -0.125)],
                            label: 3,
                        },
                    ],
                },
            ],
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().display().to_string();
                    files.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn round_trip_is_structurally_identical_and_byte_stable() {
        let tmp = tempfile::tempdir().unwrap();
        let first = tmp.path().join("first");
        let manifest = save_dataset(&sample_dataset(), &first).unwrap();
        let loaded = load_dataset(&manifest).unwrap();

        assert_eq!(loaded.vocab_size, 16);
        assert_eq!(loaded.products.len(), 2);
        assert_eq!(loaded.products[0].reviews[0].label, 4);
        assert_eq!(loaded.products[0].reviews[0].tokens, vec![5, 6, 7]);
        assert_eq!(
            loaded.products[0].image_features[0].values(),
            sample_dataset().products[0].image_features[0].values()
        );

        // write → load → write is byte-identical
        let second = tmp.path().join("second");
        save_dataset(&loaded, &second).unwrap();
        assert_eq!(dir_bytes(&first), dir_bytes(&second));
    }

    #[test]
    fn label_out_of_range_line_names_review() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tmp.path().join("manifest.jsonl");
        let mut f = fs::File::create(&manifest).unwrap();
        writeln!(f, r#"{{"vocab_size": 8, "feature_dim": 2}}"#).unwrap();
        writeln!(
            f,
            r#"{{"product_id":"p","tokens":[1,2,3],"images":[],"reviews":[{{"review_id":"bad_r","tokens":[1,2,3],"images":[],"label":7}},{{"review_id":"ok_r","tokens":[1,2,3],"images":[],"label":1}}]}}"#
        )
        .unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(err.to_string().contains("bad_r"), "{err}");
    }

    #[test]
    fn roi_fixture_loads_expected_values() {
        // hand-constructed file: m=1, dim=4, values [1,2,3,4]
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("fixture.roi");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MRHPFEAT");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let mat = load_roi_features(&path).unwrap();
        assert_eq!(mat.objects(), 1);
        assert_eq!(mat.dim(), 4);
        assert_eq!(mat.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn truncated_roi_file_errors_without_partial_result() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("trunc.roi");
        let mat = feat(2, 3, 1.0);
        write_roi_features(&path, &mat).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(matches!(
            load_roi_features(&path),
            Err(DatasetError::Truncated { .. })
        ));
    }

    #[test]
    fn bad_magic_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.roi");
        fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_roi_features(&path),
            Err(DatasetError::BadMagic { .. })
        ));
    }

    #[test]
    fn zero_object_file_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("zero.roi");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MRHPFEAT");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_roi_features(&path),
            Err(DatasetError::ZeroObjects { .. })
        ));
    }

    #[test]
    fn manifest_dim_mismatch_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        fs::create_dir_all(dir.join("features")).unwrap();
        write_roi_features(&dir.join("features/x.roi"), &feat(1, 3, 1.0)).unwrap();
        let manifest = dir.join("manifest.jsonl");
        let mut f = fs::File::create(&manifest).unwrap();
        writeln!(f, r#"{{"vocab_size": 8, "feature_dim": 2}}"#).unwrap();
        writeln!(
            f,
            r#"{{"product_id":"p","tokens":[1,2,3],"images":["features/x.roi"],"reviews":[{{"review_id":"r0","tokens":[1,2,3],"images":[],"label":1}},{{"review_id":"r1","tokens":[1,2,3],"images":[],"label":2}}]}}"#
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&manifest),
            Err(DatasetError::DimMismatch { .. })
        ));
    }
}
