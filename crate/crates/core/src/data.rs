//! Datasets: in-memory representation, a seeded Gaussian-blob generator,
//! and CSV / IDX loaders.
//!
//! CSV layout: header `f0,...,f{d-1},label`, one example per data row.
//! IDX is the big-endian ubyte image/label pair format (magic `0x803`
//! for images, `0x801` for labels); pixels are scaled into `[0, 1]`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// A labeled dataset: features `n x d`, one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S = f64> {
    features: Matrix<S>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(features: Matrix<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimMismatch {
                context: "Dataset::new",
                expected: format!("{} labels", features.rows()),
                got: format!("{}", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        if !features.all_finite() {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn features(&self) -> &Matrix<S> {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset<S> {
        Dataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Example count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }

    /// Classes with at least one example, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Feature batch and label slice for the given row indices.
    pub fn batch(&self, indices: &[usize]) -> (Matrix<S>, Vec<usize>) {
        (
            self.features.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Seeded Gaussian-blob generator.
///
/// Each class gets a mean drawn uniformly on the unit sphere (seeded);
/// examples are `mean + spread * standard normal noise`. Generated
/// examples are shuffled. `generate_split` reuses the same class means
/// for the held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter {
                name: "classes",
                message: format!("need >= 2, got {}", self.classes),
            });
        }
        if self.dim < 2 {
            return Err(Error::InvalidParameter {
                name: "dim",
                message: format!("need >= 2, got {}", self.dim),
            });
        }
        if self.per_class < 1 {
            return Err(Error::InvalidParameter {
                name: "per_class",
                message: "need >= 1 example per class".into(),
            });
        }
        if self.spread < 0.0 {
            return Err(Error::InvalidParameter {
                name: "spread",
                message: format!("must be >= 0, got {}", self.spread),
            });
        }
        Ok(())
    }

    fn class_means(&self, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..self.dim).map(|_| rng.next_normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    return v.into_iter().map(|x| x / norm).collect();
                }
            })
            .collect()
    }

    fn draw<S: Scalar>(
        &self,
        means: &[Vec<f64>],
        per_class: usize,
        rng: &mut SplitMix64,
    ) -> Result<Dataset<S>> {
        let n = self.classes * per_class;
        let mut features = Matrix::zeros(n, self.dim);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let dst = features.row_mut(row);
                for (j, &m) in mean.iter().enumerate() {
                    dst[j] = S::from_f64_c(m + self.spread * rng.next_normal());
                }
                labels.push(c);
                row += 1;
            }
        }
        // Shuffle examples; labels follow the same permutation.
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let features = features.gather_rows(&order);
        let labels = order.into_iter().map(|i| labels[i]).collect();
        Dataset::new(features, labels, self.classes)
    }

    pub fn generate<S: Scalar>(&self) -> Result<Dataset<S>> {
        self.validate()?;
        let mut rng = SplitMix64::new(self.seed);
        let means = self.class_means(&mut rng);
        self.draw(&means, self.per_class, &mut rng)
    }

    /// Training set plus a held-out test set from the same class means.
    pub fn generate_split<S: Scalar>(&self, test_per_class: usize) -> Result<(Dataset<S>, Dataset<S>)> {
        self.validate()?;
        if test_per_class < 1 {
            return Err(Error::InvalidParameter {
                name: "test_per_class",
                message: "need >= 1 example per class".into(),
            });
        }
        let mut rng = SplitMix64::new(self.seed);
        let means = self.class_means(&mut rng);
        let train = self.draw(&means, self.per_class, &mut rng)?;
        let test = self.draw(&means, test_per_class, &mut rng)?;
        Ok((train, test))
    }
}

// ---- CSV -------------------------------------------------------------

/// Load the documented CSV layout. `num_classes` is inferred as
/// `max label + 1`.
pub fn load_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string())
}

fn parse_csv<S: Scalar>(text: &str, path: &str) -> Result<Dataset<S>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.into(),
        location: "line 1".into(),
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(Error::Parse {
            path: path.into(),
            location: "line 1".into(),
            message: format!("expected header `f0,...,f{{d-1}},label`, got `{header}`"),
        });
    }
    let dim = cols.len() - 1;
    for (j, col) in cols[..dim].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(Error::Parse {
                path: path.into(),
                location: "line 1".into(),
                message: format!("expected column `f{j}`, got `{col}`"),
            });
        }
    }

    let mut data: Vec<S> = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                path: path.into(),
                location: format!("line {line_no}"),
                message: format!("expected {} fields, got {}", dim + 1, fields.len()),
            });
        }
        for (j, field) in fields[..dim].iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                location: format!("line {line_no}, column f{j}"),
                message: format!("not a number: `{field}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    location: format!("line {line_no}, column f{j}"),
                    message: "non-finite feature value".into(),
                });
            }
            data.push(S::from_f64_c(value));
        }
        let label: usize = fields[dim].trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            location: format!("line {line_no}, column label"),
            message: format!("not a class index: `{}`", fields[dim]),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            location: "end of file".into(),
            message: "no data rows".into(),
        });
    }
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)
}

/// Write the documented CSV layout. Float formatting round-trips exactly.
pub fn save_csv<S: Scalar>(dataset: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = dataset.dim();
    let header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    writeln!(file, "{},label", header.join(","))?;
    for (row, &label) in dataset.features.iter_rows().zip(dataset.labels.iter()) {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(file, "{},{label}", fields.join(","))?;
    }
    Ok(())
}

// ---- IDX -------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            path: path.into(),
            location: format!("offset {offset}"),
            message: "truncated file".into(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX ubyte image/label pair, pixels scaled to `[0, 1]`.
pub fn load_idx<S: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<S>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let mut images = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut images)?;
    let mut labels_raw = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut labels_raw)?;

    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();

    let magic = read_u32_be(&images, 0, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            path: ipath,
            location: "offset 0".into(),
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&images, 4, &ipath)? as usize;
    let rows = read_u32_be(&images, 8, &ipath)? as usize;
    let cols = read_u32_be(&images, 12, &ipath)? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if images.len() != expected {
        return Err(Error::Parse {
            path: ipath,
            location: format!("offset {}", images.len().min(expected)),
            message: format!("expected {expected} bytes for {n} images of {rows}x{cols}"),
        });
    }

    let magic = read_u32_be(&labels_raw, 0, &lpath)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            path: lpath,
            location: "offset 0".into(),
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_u32_be(&labels_raw, 4, &lpath)? as usize;
    if n_labels != n {
        return Err(Error::Parse {
            path: lpath,
            location: "offset 4".into(),
            message: format!("{n_labels} labels for {n} images"),
        });
    }
    if labels_raw.len() != 8 + n {
        return Err(Error::Parse {
            path: lpath,
            location: format!("offset {}", labels_raw.len().min(8 + n)),
            message: format!("expected {} bytes", 8 + n),
        });
    }

    let scale = S::from_f64_c(1.0 / 255.0);
    let data: Vec<S> = images[16..]
        .iter()
        .map(|&b| S::from_f64_c(b as f64) * scale)
        .collect();
    let labels: Vec<usize> = labels_raw[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)
}
