//! LIBSVM ingestion, synthetic generators and train/test splits.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::problems::{CsrMatrix, Dataset, Features, LabelEncoding};

/// Fraction of labels flipped by the synthetic generators.
pub const LABEL_NOISE: f64 = 0.1;

/// One parsed line: a raw label and 1-based `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmRecord {
    pub label: f64,
    pub pairs: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    pub encoding: LabelEncoding,
    /// Feature dimension; defaults to the largest index seen.
    pub dim: Option<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            encoding: LabelEncoding::PlusMinusOne,
            dim: None,
        }
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<LibsvmRecord>> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let err = |message: String| Error::Parse { line: lineno, message };
    let mut tokens = content.split_whitespace();
    let label_tok = tokens.next().expect("nonempty line has a token");
    let label: f64 = label_tok.parse().map_err(|_| err(format!("bad label {label_tok:?}")))?;
    if !label.is_finite() {
        return Err(err(format!("non-finite label {label_tok:?}")));
    }
    let mut pairs = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("expected index:value, found {tok:?}")))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("bad index in {tok:?}")))?;
        if idx == 0 {
            return Err(err("indices are 1-based".into()));
        }
        let val: f64 = val.parse().map_err(|_| err(format!("bad value in {tok:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value in {tok:?}")));
        }
        if pairs.last().is_some_and(|&(prev, _)| prev >= idx) {
            return Err(err(format!("index {idx} does not increase")));
        }
        pairs.push((idx, val));
    }
    Ok(Some(LibsvmRecord { label, pairs }))
}

/// Reads LIBSVM records, skipping blank lines and `#` comments.
pub fn parse_records<R: BufRead>(input: R) -> Result<Vec<LibsvmRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if let Some(rec) = parse_line(&line?, i + 1)? {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Parses LIBSVM text into a dataset.
///
/// Two distinct raw labels are mapped by numeric order: the smaller one
/// becomes the negative class. A file with a single label maps it to the
/// positive class iff it is positive. Gzip input is detected and
/// decompressed transparently.
pub fn parse_libsvm<R: Read>(input: R, opts: &ParseOptions) -> Result<Dataset> {
    let mut reader = BufReader::new(input);
    let gz = {
        let head = reader.fill_buf()?;
        head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b
    };
    let records = if gz {
        parse_records(BufReader::new(MultiGzDecoder::new(reader)))?
    } else {
        parse_records(reader)?
    };
    build_dataset(&records, opts)
}

pub fn load_libsvm(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<Dataset> {
    parse_libsvm(File::open(path)?, opts)
}

fn build_dataset(records: &[LibsvmRecord], opts: &ParseOptions) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut distinct: Vec<f64> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if !distinct.contains(&r.label) {
            distinct.push(r.label);
            if distinct.len() > 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("more than two distinct labels ({distinct:?})"),
                });
            }
        }
    }
    let positive = match distinct[..] {
        [only] => (only > 0.0).then_some(only),
        [a, b] => Some(a.max(b)),
        _ => unreachable!(),
    };
    let max_index = records.iter().filter_map(|r| r.pairs.last().map(|p| p.0)).max().unwrap_or(0);
    let d = match opts.dim {
        Some(d) if d < max_index => {
            return Err(Error::InvalidConfig(format!("dimension {d} is smaller than feature index {max_index}")));
        }
        Some(d) => d,
        None => max_index,
    };
    let rows: Vec<Vec<(usize, f64)>> = records
        .iter()
        .map(|r| r.pairs.iter().map(|&(j, v)| (j - 1, v)).collect())
        .collect();
    let labels = records
        .iter()
        .map(|r| {
            if Some(r.label) == positive {
                opts.encoding.positive()
            } else {
                opts.encoding.negative()
            }
        })
        .collect();
    Dataset::new(Features::auto(CsrMatrix::from_rows(d, &rows)?), labels, opts.encoding)
}

/// Writes `ds` in LIBSVM format with shortest round-trip float formatting.
pub fn serialize_libsvm<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for i in 0..ds.n() {
        let y = ds.labels()[i];
        let label = match ds.encoding() {
            LabelEncoding::PlusMinusOne if y > 0.0 => "+1",
            LabelEncoding::PlusMinusOne => "-1",
            LabelEncoding::ZeroOne if y > 0.0 => "1",
            LabelEncoding::ZeroOne => "0",
        };
        write!(out, "{label}")?;
        for (j, v) in ds.features().row_nonzeros(i) {
            write!(out, " {}:{v:?}", j + 1)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Gaussian features with column scales log-spaced in `[1, kappa]` and
/// labels from a planted linear model with 10% label noise. Dense storage,
/// `±1` labels.
pub fn synth_logistic(n: usize, d: usize, kappa: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig("synthetic data needs n, d ≥ 1".into()));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::InvalidConfig(format!("condition spread must be ≥ 1, got {kappa}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = column_scales(d, kappa);
    let planted: Vec<f64> = scales
        .iter()
        .map(|s| rng.sample::<f64, _>(StandardNormal) / (s * (d as f64).sqrt()))
        .collect();
    let x = DenseMatrix::from_fn(n, d, |_, j| scales[j] * rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|i| noisy_label(crate::linalg::dot(x.row(i), &planted), &mut rng)).collect();
    Dataset::new(Features::Dense(x), labels, LabelEncoding::PlusMinusOne)
}

/// Column scales `kappa^{j/(d−1)}`.
pub fn column_scales(d: usize, kappa: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d).map(|j| kappa.powf(j as f64 / (d - 1) as f64)).collect()
}

fn noisy_label(margin: f64, rng: &mut ChaCha8Rng) -> f64 {
    let y = if margin >= 0.0 { 1.0 } else { -1.0 };
    if rng.random::<f64>() < LABEL_NOISE {
        -y
    } else {
        y
    }
}

/// Sparse counterpart of [`synth_logistic`]: each row holds `nnz_per_row`
/// standard Gaussian entries at uniformly drawn columns. CSR storage.
pub fn synth_sparse_logistic(n: usize, d: usize, nnz_per_row: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || nnz_per_row == 0 || nnz_per_row > d {
        return Err(Error::InvalidConfig(format!(
            "invalid sparse layout n={n}, d={d}, nnz_per_row={nnz_per_row}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * (d as f64 / nnz_per_row as f64).sqrt())
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut cols = rand::seq::index::sample(&mut rng, d, nnz_per_row).into_vec();
        cols.sort_unstable();
        let row: Vec<(usize, f64)> = cols.into_iter().map(|j| (j, rng.sample(StandardNormal))).collect();
        let margin: f64 = row.iter().map(|&(j, v)| v * planted[j]).sum::<f64>() / (d as f64).sqrt();
        labels.push(noisy_label(margin, &mut rng));
        rows.push(row);
    }
    Dataset::new(Features::Sparse(CsrMatrix::from_rows(d, &rows)?), labels, LabelEncoding::PlusMinusOne)
}

/// Seeded shuffle split into `(train, test)`; `round(fraction·n)` samples go
/// to the test set, at least one on each side.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n(), test_fraction, seed)?;
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Index sets behind [`split`], each sorted ascending.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!("cannot split {n} samples")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
