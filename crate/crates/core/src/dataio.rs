//! Dataset ingestion and preparation: feature CSV, big-endian IDX images,
//! the complementary-label dataset file, synthetic Gaussian blobs,
//! train/validation splitting, and train-statistics standardization.

use std::path::Path;

use thiserror::Error;

use crate::labelgen::ComplementaryDataset;
use crate::numeric::{Matrix, PrngStream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at {path} row {row}, column {col}: {msg}")]
    Parse { path: String, row: usize, col: usize, msg: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("label '{value}' at row {row} is not a non-negative integer")]
    NonIntegerLabel { row: usize, value: String },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path} is truncated: needed {needed} bytes, found {found}")]
    Truncated { path: String, needed: usize, found: usize },
    #[error("dataset with {n} instances is too small (minimum {min})")]
    TooSmall { n: usize, min: usize },
    #[error("duplicate complementary label at row {row}")]
    DuplicateCl { row: usize },
    #[error("label {label} at row {row} out of range for k={k}")]
    Range { row: usize, label: usize, k: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Ordinary-label dataset: features plus one label in [0, k) per row.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub k: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        k: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if features.rows() == 0 {
            return Err(DataError::TooSmall { n: 0, min: 1 });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(DataError::Range { row, label, k });
        }
        Ok(LabeledDataset { features, labels, k, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            name: self.name.clone(),
        }
    }
}

/// Validation split parameters; the paper-style default reserves 10%.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, seed: u64) -> Result<Self, DataError> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(DataError::Invalid(format!(
                "validation fraction must lie in (0,1), got {validation_fraction}"
            )));
        }
        Ok(SplitSpec { validation_fraction, seed })
    }
}

/// Load a headerless CSV of decimal features with an optional final integer
/// label column. `k` is inferred as 1 + max(label) unless overridden.
pub fn load_features_csv(
    path: &Path,
    has_label: bool,
    k_override: Option<usize>,
) -> Result<LabeledDataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let pathstr = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, line) in text.lines().enumerate() {
        let row_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if let Some(w) = width {
            if fields.len() != w {
                return Err(DataError::RaggedRows {
                    row: row_no,
                    expected: w,
                    found: fields.len(),
                });
            }
        } else {
            if has_label && fields.len() < 2 {
                return Err(DataError::Parse {
                    path: pathstr,
                    row: row_no,
                    col: 1,
                    msg: "need at least one feature and one label".into(),
                });
            }
            width = Some(fields.len());
        }
        let nfeat = if has_label { fields.len() - 1 } else { fields.len() };
        let mut feats = Vec::with_capacity(nfeat);
        for (col, field) in fields[..nfeat].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|e: std::num::ParseFloatError| {
                DataError::Parse {
                    path: pathstr.clone(),
                    row: row_no,
                    col: col + 1,
                    msg: e.to_string(),
                }
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: row_no, col: col + 1 });
            }
            feats.push(v);
        }
        if has_label {
            let raw = fields[nfeat].trim();
            let label = parse_integral_label(raw).ok_or_else(|| DataError::NonIntegerLabel {
                row: row_no,
                value: raw.to_string(),
            })?;
            labels.push(label);
        }
        rows.push(feats);
    }

    if rows.is_empty() {
        return Err(DataError::TooSmall { n: 0, min: 1 });
    }
    let features = Matrix::from_rows(&rows)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    if !has_label {
        labels = vec![0; features.rows()];
    }
    let k = k_override.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    LabeledDataset::new(features, labels, k, name)
}

/// Accepts "3" and decimal spellings of integers like "3.0", but not "1.5".
fn parse_integral_label(s: &str) -> Option<usize> {
    if let Ok(v) = s.parse::<usize>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    if f.fract() == 0.0 && f >= 0.0 && f <= usize::MAX as f64 {
        Some(f as usize)
    } else {
        None
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label pair (the MNIST family format). Pixels are scaled
/// to [0,1] by /255 and images flattened to rows*cols features.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let images = std::fs::read(images_path)?;
    let labels_raw = std::fs::read(labels_path)?;

    let img_path = images_path.display().to_string();
    let lab_path = labels_path.display().to_string();

    let magic = read_be_u32(&images, 0, &img_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { path: img_path, expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let magic = read_be_u32(&labels_raw, 0, &lab_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { path: lab_path, expected: IDX_LABELS_MAGIC, found: magic });
    }

    let n_images = read_be_u32(&images, 4, &img_path)? as usize;
    let rows = read_be_u32(&images, 8, &img_path)? as usize;
    let cols = read_be_u32(&images, 12, &img_path)? as usize;
    let n_labels = read_be_u32(&labels_raw, 4, &lab_path)? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch { images: n_images, labels: n_labels });
    }

    let d = rows * cols;
    let needed = 16 + n_images * d;
    if images.len() < needed {
        return Err(DataError::Truncated { path: img_path, needed, found: images.len() });
    }
    let needed_labels = 8 + n_labels;
    if labels_raw.len() < needed_labels {
        return Err(DataError::Truncated {
            path: lab_path,
            needed: needed_labels,
            found: labels_raw.len(),
        });
    }

    let mut data = Vec::with_capacity(n_images * d);
    data.extend(images[16..16 + n_images * d].iter().map(|&b| b as f64 / 255.0));
    let features = Matrix::from_vec(n_images, d, data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let labels: Vec<usize> = labels_raw[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    LabeledDataset::new(features, labels, k, name)
}

fn read_be_u32(buf: &[u8], offset: usize, path: &str) -> Result<u32, DataError> {
    let end = offset + 4;
    if buf.len() < end {
        return Err(DataError::Truncated { path: path.to_string(), needed: end, found: buf.len() });
    }
    Ok(u32::from_be_bytes([buf[offset], buf[offset + 1], buf[offset + 2], buf[offset + 3]]))
}

/// Synthetic Gaussian blobs: class c gets an isotropic unit-variance cloud of
/// `per_class` points around `separation * e_{c mod d}`, pushed further out on
/// each wrap so classes never collide for large separation.
pub fn synth_gaussians(
    k: usize,
    per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> LabeledDataset {
    assert!(k > 2 && d >= 2 && per_class > 0, "synth_gaussians preconditions");
    let n = k * per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut rng = PrngStream::new(seed);
    for c in 0..k {
        let axis = c % d;
        let radius = separation * (1 + c / d) as f64;
        for i in 0..per_class {
            let row = features.row_mut(c * per_class + i);
            for v in row.iter_mut() {
                *v = rng.next_gaussian();
            }
            row[axis] += radius;
        }
        labels.extend(std::iter::repeat(c).take(per_class));
    }
    LabeledDataset::new(features, labels, k, format!("synth-k{k}-d{d}"))
        .expect("synthetic data is well-formed by construction")
}

/// Index split shared by every splitter: uniform shuffle by seed, first
/// ceil(n * fraction) indices to the second part. Disjoint and exhaustive.
pub fn split_indices(
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if n < 10 {
        return Err(DataError::TooSmall { n, min: 10 });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    PrngStream::new(seed).shuffle(&mut indices);
    let n_held = (n as f64 * fraction).ceil() as usize;
    let held = indices[..n_held].to_vec();
    let rest = indices[n_held..].to_vec();
    Ok((rest, held))
}

/// Uniform shuffle by seed, first ceil(n * fraction) rows to validation.
pub fn split_train_val(
    ds: &LabeledDataset,
    spec: SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (train_idx, val_idx) = split_indices(ds.len(), spec.validation_fraction, spec.seed)?;
    Ok((ds.subset(&train_idx), ds.subset(&val_idx)))
}

/// Per-feature affine transform derived from a training set: subtract the
/// mean, divide by the standard deviation. Zero-variance features are only
/// centered.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Statistics come from `train` only.
    pub fn fit(train: &LabeledDataset) -> Standardizer {
        let (n, d) = (train.features.rows(), train.features.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(train.features.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(train.features.row(i)).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> LabeledDataset {
        let mut out = ds.clone();
        self.apply_matrix(&mut out.features);
        out
    }

    pub fn apply_matrix(&self, features: &mut Matrix) {
        for i in 0..features.rows() {
            for ((v, &m), &s) in features.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Fit on `train`, transform `train` and every dataset in `others` with the
/// train statistics.
pub fn standardize(
    train: &LabeledDataset,
    others: &[&LabeledDataset],
) -> (LabeledDataset, Vec<LabeledDataset>) {
    let standardizer = Standardizer::fit(train);
    let train_out = standardizer.apply(train);
    let others_out = others.iter().map(|ds| standardizer.apply(ds)).collect();
    (train_out, others_out)
}

/// Save a complementary dataset as text. Header lines carry the class count
/// and feature width; each row is `<d floats>,<cl;cl;...>[,<true label>]`.
pub fn save_cl_dataset(ds: &ComplementaryDataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&format!("# k={}\n", ds.k));
    out.push_str(&format!("# d={}\n", ds.features.cols()));
    for i in 0..ds.len() {
        let feats: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&feats.join(","));
        out.push(',');
        let cls: Vec<String> = ds.cl_sets[i].iter().map(|c| c.to_string()).collect();
        out.push_str(&cls.join(";"));
        if let Some(labels) = &ds.true_labels {
            out.push_str(&format!(",{}", labels[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load the format written by [`save_cl_dataset`]. The `# d=` header line is
/// optional; without it the feature width is inferred from the position of
/// the semicolon-joined field (falling back to "last field is the CL set"
/// when no row has more than one complementary label).
pub fn load_cl_dataset(path: &Path) -> Result<ComplementaryDataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let pathstr = path.display().to_string();
    let mut k: Option<usize> = None;
    let mut d: Option<usize> = None;

    let mut data_lines: Vec<(usize, &str)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("k=") {
                k = Some(v.trim().parse().map_err(|_| DataError::Parse {
                    path: pathstr.clone(),
                    row: row_no,
                    col: 1,
                    msg: format!("bad k header '{v}'"),
                })?);
            } else if let Some(v) = rest.strip_prefix("d=") {
                d = Some(v.trim().parse().map_err(|_| DataError::Parse {
                    path: pathstr.clone(),
                    row: row_no,
                    col: 1,
                    msg: format!("bad d header '{v}'"),
                })?);
            }
            continue;
        }
        data_lines.push((row_no, trimmed));
    }

    let k = k.ok_or_else(|| DataError::Parse {
        path: pathstr.clone(),
        row: 1,
        col: 1,
        msg: "missing '# k=<K>' header".into(),
    })?;
    if data_lines.is_empty() {
        return Err(DataError::TooSmall { n: 0, min: 1 });
    }

    // Without a d header, locate the CL field by its ';' in some row.
    let d = match d {
        Some(d) => d,
        None => infer_feature_width(&data_lines, &pathstr)?,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cl_sets: Vec<Vec<usize>> = Vec::new();
    let mut true_labels: Vec<usize> = Vec::new();
    let mut labeled: Option<bool> = None;

    for &(row_no, line) in &data_lines {
        let fields: Vec<&str> = line.split(',').collect();
        let has_label = match fields.len().checked_sub(d) {
            Some(1) => false,
            Some(2) => true,
            _ => {
                return Err(DataError::RaggedRows {
                    row: row_no,
                    expected: d + 1,
                    found: fields.len(),
                })
            }
        };
        if let Some(prev) = labeled {
            if prev != has_label {
                return Err(DataError::RaggedRows {
                    row: row_no,
                    expected: d + 1 + prev as usize,
                    found: fields.len(),
                });
            }
        } else {
            labeled = Some(has_label);
        }

        let mut feats = Vec::with_capacity(d);
        for (col, field) in fields[..d].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|e: std::num::ParseFloatError| {
                DataError::Parse {
                    path: pathstr.clone(),
                    row: row_no,
                    col: col + 1,
                    msg: e.to_string(),
                }
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: row_no, col: col + 1 });
            }
            feats.push(v);
        }

        let mut set = Vec::new();
        for part in fields[d].split(';') {
            let c: usize = part.trim().parse().map_err(|_| DataError::Parse {
                path: pathstr.clone(),
                row: row_no,
                col: d + 1,
                msg: format!("bad complementary label '{part}'"),
            })?;
            if c >= k {
                return Err(DataError::Range { row: row_no, label: c, k });
            }
            if set.contains(&c) {
                return Err(DataError::DuplicateCl { row: row_no });
            }
            set.push(c);
        }

        if has_label {
            let raw = fields[d + 1].trim();
            let y = parse_integral_label(raw).ok_or_else(|| DataError::NonIntegerLabel {
                row: row_no,
                value: raw.to_string(),
            })?;
            if y >= k {
                return Err(DataError::Range { row: row_no, label: y, k });
            }
            true_labels.push(y);
        }

        rows.push(feats);
        cl_sets.push(set);
    }

    let features = Matrix::from_rows(&rows).map_err(|e| DataError::Invalid(e.to_string()))?;
    let true_labels = if labeled == Some(true) { Some(true_labels) } else { None };
    ComplementaryDataset::new(features, cl_sets, true_labels, k)
        .map_err(|e| DataError::Invalid(e.to_string()))
}

fn infer_feature_width(
    data_lines: &[(usize, &str)],
    path: &str,
) -> Result<usize, DataError> {
    for &(row_no, line) in data_lines {
        let fields: Vec<&str> = line.split(',').collect();
        if let Some(pos) = fields.iter().position(|f| f.contains(';')) {
            if pos == 0 {
                return Err(DataError::Parse {
                    path: path.to_string(),
                    row: row_no,
                    col: 1,
                    msg: "row starts with a complementary-label set".into(),
                });
            }
            return Ok(pos);
        }
    }
    // Every set is a singleton; assume the last field is the CL set.
    let (_, first) = data_lines[0];
    Ok(first.split(',').count() - 1)
}

/// Convenience wrapper so small IDX fixtures can be built in tests.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<(), DataError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_be_bytes());
    buf.extend_from_slice(&(rows as u32).to_be_bytes());
    buf.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        buf.extend_from_slice(img);
    }
    std::fs::write(images_path, buf)?;

    let mut buf = Vec::new();
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(labels_path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn csv_small_file() {
        let (_dir, path) = write_tmp("1.0,2.0,0\n0.5,0.1,1\n2.2,3.3,0\n");
        let ds = load_features_csv(&path, true, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.k, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.features.row(1), &[0.5, 0.1]);
    }

    #[test]
    fn csv_ragged_and_bad_label() {
        let (_dir, path) = write_tmp("1,2,0\n1,2,3,0\n");
        assert!(matches!(
            load_features_csv(&path, true, None),
            Err(DataError::RaggedRows { row: 2, .. })
        ));
        let (_dir, path) = write_tmp("1,2,1.5\n");
        assert!(matches!(
            load_features_csv(&path, true, None),
            Err(DataError::NonIntegerLabel { row: 1, .. })
        ));
        let (_dir, path) = write_tmp("1,inf,0\n");
        assert!(load_features_csv(&path, true, None).is_err());
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        let images = vec![vec![0u8, 255, 128, 64], vec![1, 2, 3, 4]];
        write_idx(&img, &lab, &images, &[3, 7], 2, 2).unwrap();

        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels, vec![3, 7]);
        assert!((ds.features[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((ds.features[(0, 2)] - 128.0 / 255.0).abs() < 1e-15);

        // Swapped paths trip the magic check.
        assert!(matches!(load_idx(&lab, &img), Err(DataError::BadMagic { .. })));

        // Truncated labels file.
        let truncated = dir.path().join("lab2");
        let full = std::fs::read(&lab).unwrap();
        std::fs::write(&truncated, &full[..full.len() - 1]).unwrap();
        assert!(matches!(load_idx(&img, &truncated), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn synth_is_deterministic_and_separable() {
        let a = synth_gaussians(3, 50, 2, 8.0, 11);
        let b = synth_gaussians(3, 50, 2, 8.0, 11);
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 150);

        // Nearest-mean on true means classifies almost perfectly at sep=8.
        let means = [[8.0, 0.0], [0.0, 8.0], [16.0, 0.0]];
        let correct = (0..a.len())
            .filter(|&i| {
                let x = a.features.row(i);
                let best = (0..3)
                    .min_by(|&p, &q| {
                        let dp: f64 =
                            (0..2).map(|j| (x[j] - means[p][j]).powi(2)).sum::<f64>();
                        let dq: f64 =
                            (0..2).map(|j| (x[j] - means[q][j]).powi(2)).sum::<f64>();
                        dp.partial_cmp(&dq).unwrap()
                    })
                    .unwrap();
                best == a.labels[i]
            })
            .count();
        assert!(correct as f64 / a.len() as f64 > 0.99);
    }

    #[test]
    fn split_shapes_and_determinism() {
        let ds = synth_gaussians(4, 25, 2, 5.0, 3);
        let spec = SplitSpec::new(0.10, 9).unwrap();
        let (train, val) = split_train_val(&ds, spec).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(train.len(), 90);

        let (train2, val2) = split_train_val(&ds, spec).unwrap();
        assert_eq!(train.labels, train2.labels);
        assert_eq!(val.features.data(), val2.features.data());

        // Disjoint and exhaustive: use the feature row as identity.
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for part in [&train, &val] {
            for i in 0..part.len() {
                seen.push(part.features.row(i).iter().map(|v| v.to_bits()).collect());
            }
        }
        seen.sort();
        let mut all: Vec<Vec<u64>> = (0..ds.len())
            .map(|i| ds.features.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        assert_eq!(seen, all);

        let tiny = synth_gaussians(3, 1, 2, 5.0, 3);
        assert!(matches!(
            split_train_val(&tiny, spec),
            Err(DataError::TooSmall { n: 3, .. })
        ));
    }

    #[test]
    fn standardize_train_stats() {
        let features = Matrix::from_rows(&[
            vec![3.0, 5.0],
            vec![7.0, 5.0],
            vec![5.0, 5.0],
        ])
        .unwrap();
        let train = LabeledDataset::new(features, vec![0, 1, 2], 3, "t").unwrap();
        // Column 0: mean 5, population sd sqrt(8/3); column 1 constant.
        let other_features = Matrix::from_rows(&[vec![9.0, 1.0]]).unwrap();
        let other = LabeledDataset::new(other_features, vec![0], 3, "o").unwrap();

        let (train_s, others) = standardize(&train, &[&other]);
        for j in 0..2 {
            let mean: f64 =
                (0..3).map(|i| train_s.features[(i, j)]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
        }
        // Constant column: centered only.
        assert_eq!(train_s.features[(0, 1)], 0.0);
        assert_eq!(others[0].features[(0, 1)], -4.0);

        // Spec'd example with sd exactly 2 (columns mean 5, sd 2).
        let features = Matrix::from_rows(&[vec![3.0], vec![7.0]]).unwrap();
        let train2 = LabeledDataset::new(features, vec![0, 1], 3, "t2").unwrap();
        let value = Matrix::from_rows(&[vec![9.0]]).unwrap();
        let probe = LabeledDataset::new(value, vec![0], 3, "p").unwrap();
        let (_, out) = standardize(&train2, &[&probe]);
        assert!((out[0].features[(0, 0)] - 2.0).abs() < 1e-12);

        // Idempotence on already-standardized data.
        let (twice, _) = standardize(&train_s, &[]);
        assert!(twice.features.max_abs_diff(&train_s.features) < 1e-9);
    }

    #[test]
    fn cl_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.cl");
        let features = Matrix::from_rows(&[
            vec![0.25, -1.5],
            vec![1e-7, 42.0],
            vec![3.0, 4.0],
        ])
        .unwrap();
        let ds = ComplementaryDataset::new(
            features,
            vec![vec![1, 3], vec![0], vec![2]],
            Some(vec![0, 2, 1]),
            4,
        )
        .unwrap();
        save_cl_dataset(&ds, &path).unwrap();
        let loaded = load_cl_dataset(&path).unwrap();
        assert_eq!(loaded.k, 4);
        assert_eq!(loaded.cl_sets, ds.cl_sets);
        assert_eq!(loaded.true_labels, ds.true_labels);
        assert_eq!(loaded.features.data(), ds.features.data());
    }

    #[test]
    fn cl_file_spec_row_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.cl");
        std::fs::write(&path, "# k=4\n0.1,0.2,1;3,0\n").unwrap();
        let ds = load_cl_dataset(&path).unwrap();
        assert_eq!(ds.features.row(0), &[0.1, 0.2]);
        assert_eq!(ds.cl_sets[0], vec![1, 3]);
        assert_eq!(ds.true_labels, Some(vec![0]));
    }

    #[test]
    fn cl_file_rejects_range_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cl");
        std::fs::write(&path, "# k=4\n# d=2\n0.1,0.2,4,0\n").unwrap();
        assert!(matches!(load_cl_dataset(&path), Err(DataError::Range { .. })));
        std::fs::write(&path, "# k=4\n0.1,0.2,1;1,0\n").unwrap();
        assert!(matches!(load_cl_dataset(&path), Err(DataError::DuplicateCl { row: 2 })));
        std::fs::write(&path, "0.1,0.2,1,0\n").unwrap();
        assert!(load_cl_dataset(&path).is_err()); // missing k header
    }
}
