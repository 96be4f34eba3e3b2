//! Dataset ingestion, label encoding, synthetic data, and matrix persistence.
//!
//! The FABM binary format is the bit-exact interchange format:
//!
//! ```text
//! bytes  0-3:   magic "FABM"
//! bytes  4-7:   format version, u32 LE (= 1)
//! byte   8:     dtype code, u8 (1 = f32, 2 = f64)
//! bytes  9-11:  reserved, zero
//! bytes 12-19:  rows, u64 LE
//! bytes 20-27:  cols, u64 LE
//! bytes 28.. :  rows*cols values, row-major, LE
//! ```
//!
//! CSV ingestion is RFC-4180 style numeric data: comma separator, decimal
//! point, no header row unless `skip_header` is set.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::{self, TAG_SPLIT, TAG_SYNTH_BETA, TAG_SYNTH_NOISE, TAG_SYNTH_X};

const MAGIC: &[u8; 4] = b"FABM";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// On-disk element type of a FABM file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

/// A dense row-major matrix plus the storage dtype it round-trips through.
///
/// In-memory values are always f64; `dtype` only governs persistence, so a
/// file loaded and saved again is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub data: Array2<f64>,
    pub dtype: Dtype,
}

impl DenseMatrix {
    pub fn new(data: Array2<f64>) -> Self {
        DenseMatrix { data, dtype: Dtype::F64 }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

impl From<Array2<f64>> for DenseMatrix {
    fn from(data: Array2<f64>) -> Self {
        DenseMatrix::new(data)
    }
}

/// A classification dataset: representation vectors plus integer labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {num_classes}")));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "feature rows ({}) and label count ({}) disagree",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::Data(format!(
                "label {} at row {bad} is outside [0, {num_classes})",
                labels[bad]
            )));
        }
        Ok(LabeledDataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row subset in the given (already ordered) index order.
    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// One-hot (optionally demeaned) label targets.
#[derive(Debug, Clone)]
pub struct EncodedLabels {
    pub matrix: Array2<f64>,
    /// Training-sample column means; zeros when `demeaned` is false, so
    /// re-adding them is always valid at prediction time.
    pub column_means: Vec<f64>,
    pub demeaned: bool,
}

/// Loads a matrix from FABM (sniffed by magic) or headerless CSV.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    load_matrix_opts(path, false)
}

/// Like [`load_matrix`], with an optional header-line skip for CSV inputs.
pub fn load_matrix_opts(path: impl AsRef<Path>, csv_skip_header: bool) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
    if got == 4 && &magic == MAGIC {
        let mut rest = Vec::new();
        file.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        let mut bytes = magic.to_vec();
        bytes.extend_from_slice(&rest);
        parse_fabm(&bytes)
    } else {
        load_matrix_csv(path, csv_skip_header)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn parse_fabm(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "FABM header is {HEADER_LEN} bytes, file has only {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported FABM version {version}")));
    }
    let dtype = Dtype::from_code(bytes[8])?;
    if bytes[9..12] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("rows*cols overflows".into()))?;
    let elem = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let expected = HEADER_LEN + count * elem;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {rows}x{cols} {dtype:?}, file has {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    let body = &bytes[HEADER_LEN..];
    match dtype {
        Dtype::F64 => {
            for chunk in body.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        Dtype::F32 => {
            for chunk in body.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite entry at row {}, col {}",
            bad / cols.max(1),
            bad % cols.max(1)
        )));
    }
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Format(format!("shape error: {e}")))?;
    Ok(DenseMatrix { data, dtype })
}

/// Loads a numeric CSV file; `skip_header` drops the first line.
pub fn load_matrix_csv(path: impl AsRef<Path>, skip_header: bool) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 && skip_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Format(format!(
                    "line {}: expected {c} fields, found {}",
                    idx + 1,
                    fields.len()
                )));
            }
            _ => {}
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("line {}, field {}: cannot parse '{field}'", idx + 1, col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite entry at row {rows}, col {col}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Format(format!("shape error: {e}")))?;
    Ok(DenseMatrix { data, dtype: Dtype::F64 })
}

/// Writes a matrix in the FABM format using its recorded dtype.
pub fn save_matrix(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut w, MAGIC)?;
    write(&mut w, &FORMAT_VERSION.to_le_bytes())?;
    write(&mut w, &[m.dtype.code(), 0, 0, 0])?;
    write(&mut w, &(m.rows() as u64).to_le_bytes())?;
    write(&mut w, &(m.cols() as u64).to_le_bytes())?;
    match m.dtype {
        Dtype::F64 => {
            for v in m.data.iter() {
                write(&mut w, &v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in m.data.iter() {
                write(&mut w, &(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Saves integer labels as an Nx1 f64 FABM matrix.
pub fn save_labels(labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    let data = Array2::from_shape_vec((labels.len(), 1), labels.iter().map(|&l| l as f64).collect())
        .expect("shape");
    save_matrix(&DenseMatrix::new(data), path)
}

/// Loads labels from an Nx1 matrix file; entries must be nonnegative integers.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    load_labels_opts(path, false)
}

/// Like [`load_labels`], with an optional header-line skip for CSV inputs.
pub fn load_labels_opts(path: impl AsRef<Path>, csv_skip_header: bool) -> Result<Vec<u32>> {
    let m = load_matrix_opts(path, csv_skip_header)?;
    if m.cols() != 1 {
        return Err(Error::Data(format!("label file must have 1 column, found {}", m.cols())));
    }
    m.data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                Err(Error::Data(format!("label at row {i} is not a class index: {v}")))
            } else {
                Ok(v as u32)
            }
        })
        .collect()
}

/// One-hot encodes labels; with `demean`, subtracts each column's training
/// mean and records the means for prediction-time re-adding.
pub fn one_hot_encode(labels: &[u32], num_classes: usize, demean: bool) -> Result<EncodedLabels> {
    let n = labels.len();
    let mut matrix = Array2::<f64>::zeros((n, num_classes));
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= num_classes {
            return Err(Error::Data(format!(
                "label {label} at row {i} is outside [0, {num_classes})"
            )));
        }
        matrix[[i, label as usize]] = 1.0;
    }
    let mut column_means = vec![0.0; num_classes];
    if demean && n > 0 {
        for (k, mean) in column_means.iter_mut().enumerate() {
            *mean = matrix.column(k).sum() / n as f64;
        }
        for mut row in matrix.rows_mut() {
            for k in 0..num_classes {
                row[k] -= column_means[k];
            }
        }
    }
    Ok(EncodedLabels { matrix, column_means, demeaned: demean })
}

/// Synthetic binary classification task: standard normal design, linear
/// response plus unit noise, labels split at the strict sample median.
pub fn synth_classification(n: usize, d: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {n}")));
    }
    if d < 1 {
        return Err(Error::Data("need at least 1 feature".into()));
    }
    let mut x_values = vec![0.0f64; n * d];
    seeding::fill_gaussian(&mut seeding::stream_rng(seed, TAG_SYNTH_X, 0), 1.0, &mut x_values);
    let features = Array2::from_shape_vec((n, d), x_values).expect("shape");

    let mut beta = vec![0.0f64; d];
    seeding::fill_gaussian(&mut seeding::stream_rng(seed, TAG_SYNTH_BETA, 0), 1.0, &mut beta);
    let mut noise = vec![0.0f64; n];
    seeding::fill_gaussian(&mut seeding::stream_rng(seed, TAG_SYNTH_NOISE, 0), 1.0, &mut noise);

    let beta_col = Array2::from_shape_vec((d, 1), beta).expect("shape");
    let response = crate::linalg::matmul(features.view(), false, beta_col.view(), false);
    let mut resp: Vec<f64> = response.column(0).iter().zip(noise.iter()).map(|(r, e)| r + e).collect();
    let median = sample_median(&resp);
    let labels: Vec<u32> = resp.drain(..).map(|y| u32::from(y > median)).collect();
    LabeledDataset::new(features, labels, 2)
}

fn sample_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    }
}

/// Splits into a train set with exactly `n_train / K` rows per class (sampled
/// without replacement) and the remainder as test. Row order within each part
/// follows the original dataset.
pub fn train_test_split_stratified(
    ds: &LabeledDataset,
    n_train: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let k = ds.num_classes;
    if n_train % k != 0 {
        return Err(Error::Data(format!(
            "n_train ({n_train}) must be divisible by the number of classes ({k})"
        )));
    }
    let per_class = n_train / k;
    let mut train_idx = Vec::with_capacity(n_train);
    let mut in_train = vec![false; ds.len()];
    for class in 0..k {
        let mut members: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.labels[i] as usize == class).collect();
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} members, need {per_class} for the train split",
                members.len()
            )));
        }
        let mut rng = seeding::stream_rng(seed, TAG_SPLIT, class as u64);
        members.shuffle(&mut rng);
        for &i in members.iter().take(per_class) {
            in_train[i] = true;
            train_idx.push(i);
        }
    }
    train_idx.sort_unstable();
    let test_idx: Vec<usize> = (0..ds.len()).filter(|&i| !in_train[i]).collect();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}
