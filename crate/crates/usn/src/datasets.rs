//! Dataset ingestion: IDX image files (plain or gzipped), generic numeric
//! CSV tables, subsampling/splitting, and synthetic blob generation for
//! tests. Features are stored feature-by-sample so a sample is a column,
//! matching the layer kernels.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sparselinalg::DenseMatrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An immutable labeled dataset. `features` is feature x sample, `labels`
/// is one-hot class x sample; every label column sums to exactly 1.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: DenseMatrix,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.cols()
    }

    pub fn n_features(&self) -> usize {
        self.features.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.rows()
    }

    /// Gathers the given sample columns into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_cols(indices),
            labels: self.labels.select_cols(indices),
            class_names: self.class_names.clone(),
        }
    }

    /// Class index of each sample (argmax of the one-hot column).
    pub fn label_indices(&self) -> Vec<usize> {
        (0..self.n_samples())
            .map(|b| {
                (0..self.n_classes())
                    .max_by(|&i, &j| {
                        self.labels
                            .get(i, b)
                            .partial_cmp(&self.labels.get(j, b))
                            .unwrap()
                    })
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Reads a file fully, transparently gunzipping when the path ends in `.gz`.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!("truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Loads a big-endian IDX image/label file pair. Image pixels are scaled to
/// [0,1] by /255 and each image is flattened to rows*cols features; label
/// values become one-hot rows with digit-string class names. The two files
/// must agree on the sample count.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_bytes(images_path)?;
    let magic = be_u32(&img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(&img, 4, "image count")? as usize;
    let rows = be_u32(&img, 8, "image rows")? as usize;
    let cols = be_u32(&img, 12, "image cols")? as usize;
    let n_features = rows * cols;
    let expected = 16 + count * n_features;
    if img.len() < expected {
        return Err(Error::Parse {
            offset: img.len() as u64,
            message: format!("image data truncated, expected {expected} bytes"),
        });
    }

    let lab = read_bytes(labels_path)?;
    let magic = be_u32(&lab, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = be_u32(&lab, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    if lab.len() < 8 + count {
        return Err(Error::Parse {
            offset: lab.len() as u64,
            message: format!("label data truncated, expected {} bytes", 8 + count),
        });
    }

    // column-major fill: pixel f of sample b
    let mut features = DenseMatrix::zeros(n_features, count);
    for b in 0..count {
        let base = 16 + b * n_features;
        for f in 0..n_features {
            features.set(f, b, img[base + f] as f64 / 255.0);
        }
    }
    let raw: &[u8] = &lab[8..8 + count];
    let n_classes = raw.iter().copied().max().map(|m| m as usize + 1).unwrap_or(1);
    let mut labels = DenseMatrix::zeros(n_classes, count);
    for (b, &c) in raw.iter().enumerate() {
        labels.set(c as usize, b, 1.0);
    }
    Ok(Dataset {
        features,
        labels,
        class_names: (0..n_classes).map(|c| c.to_string()).collect(),
    })
}

/// Loads a rectangular numeric CSV with a header row. `label_column` names
/// the label column; every other column is a feature. Labels are one-hot
/// over the distinct label values sorted lexicographically.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::CsvParse {
        row: 0,
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Config(format!("no column named {label_column:?}")))?;
    let n_features = headers.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, counting the header
        let record = record.map_err(|e| Error::CsvParse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::CsvParse {
                row,
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        let mut feats = Vec::with_capacity(n_features);
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(field.to_string());
            } else {
                feats.push(field.trim().parse::<f64>().map_err(|_| Error::CsvParse {
                    row,
                    message: format!("non-numeric feature value {field:?}"),
                })?);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            row: 1,
            message: "no data rows".into(),
        });
    }

    let mut class_names: Vec<String> = raw_labels.clone();
    class_names.sort();
    class_names.dedup();
    let count = rows.len();
    let mut features = DenseMatrix::zeros(n_features, count);
    for (b, feats) in rows.iter().enumerate() {
        for (f, &v) in feats.iter().enumerate() {
            features.set(f, b, v);
        }
    }
    let mut labels = DenseMatrix::zeros(class_names.len(), count);
    for (b, name) in raw_labels.iter().enumerate() {
        let c = class_names.binary_search(name).unwrap();
        labels.set(c, b, 1.0);
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("CSV feature values".into()));
    }
    Ok(Dataset {
        features,
        labels,
        class_names,
    })
}

/// Seeded shuffle then disjoint split into `n_train` + `n_val` samples.
/// With `stratified` the per-class sample counts of the source are
/// preserved proportionally in both parts (largest-remainder rounding).
pub fn subsample_split(
    dataset: &Dataset,
    n_train: usize,
    n_val: usize,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset)> {
    let total = dataset.n_samples();
    if n_train + n_val > total {
        return Err(Error::Domain(format!(
            "requested {n_train}+{n_val} samples from {total}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (train_idx, val_idx) = if stratified {
        let label_of = dataset.label_indices();
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
        for (i, &c) in label_of.iter().enumerate() {
            per_class[c].push(i);
        }
        for class in per_class.iter_mut() {
            class.shuffle(&mut rng);
        }
        let counts: Vec<usize> = per_class.iter().map(|c| c.len()).collect();
        let train_alloc = largest_remainder(&counts, n_train);
        let mut train = Vec::with_capacity(n_train);
        let mut remaining_counts = Vec::with_capacity(counts.len());
        for (class, &take) in per_class.iter().zip(&train_alloc) {
            train.extend_from_slice(&class[..take]);
            remaining_counts.push(class.len() - take);
        }
        let val_alloc = largest_remainder(&remaining_counts, n_val);
        let mut val = Vec::with_capacity(n_val);
        for ((class, &skip), &take) in per_class.iter().zip(&train_alloc).zip(&val_alloc) {
            val.extend_from_slice(&class[skip..skip + take]);
        }
        (train, val)
    } else {
        let mut indices: Vec<usize> = (0..total).collect();
        indices.shuffle(&mut rng);
        let train = indices[..n_train].to_vec();
        let val = indices[n_train..n_train + n_val].to_vec();
        (train, val)
    };
    Ok((dataset.select(&train_idx), dataset.select(&val_idx)))
}

/// Distributes `target` over buckets proportionally to `counts`, flooring
/// then handing the shortfall to the largest fractional parts. Allocations
/// never exceed the bucket counts.
fn largest_remainder(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    assert!(target <= total);
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = Vec::with_capacity(counts.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(counts.len());
    let mut assigned = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        let share = target as f64 * c as f64 / total as f64;
        let floor = (share.floor() as usize).min(c);
        alloc.push(floor);
        assigned += floor;
        fracs.push((share - floor as f64, i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut k = 0usize;
    while assigned < target {
        let i = fracs[k % fracs.len()].1;
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            assigned += 1;
        }
        k += 1;
    }
    alloc
}

/// Gaussian blobs with unit within-class deviation at seeded random
/// centers. Centers are rescaled so every pairwise center distance is at
/// least `separation` times the within-class deviation.
pub fn synthetic_blobs(
    n_classes: usize,
    n_features: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes == 0 || n_features == 0 || n_per_class == 0 || separation <= 0.0 {
        return Err(Error::Domain("blob parameters must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let normal = StandardNormal;
    let mut centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_features).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            let d: f64 = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if n_classes > 1 && min_dist < separation {
        let scale = separation / min_dist.max(f64::MIN_POSITIVE);
        for c in centers.iter_mut() {
            for v in c.iter_mut() {
                *v *= scale;
            }
        }
    }
    let count = n_classes * n_per_class;
    let mut features = DenseMatrix::zeros(n_features, count);
    let mut labels = DenseMatrix::zeros(n_classes, count);
    for c in 0..n_classes {
        for k in 0..n_per_class {
            let b = c * n_per_class + k;
            for f in 0..n_features {
                let noise: f64 = normal.sample(&mut rng);
                features.set(f, b, centers[c][f] + noise);
            }
            labels.set(c, b, 1.0);
        }
    }
    Ok(Dataset {
        features,
        labels,
        class_names: (0..n_classes).map(|c| format!("class{c}")).collect(),
    })
}
