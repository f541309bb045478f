//! Calibration datasets, their on-disk formats, and deterministic splits.
//!
//! The binary LCDS layout (little-endian) is the magic `LCALDS01`, then
//! `u64 n, m, C, flags`, then for each set flag in order: features as f32
//! (n x m, row-major), logits as f32 (n x C), labels as u32 (n), priors as
//! f64 (C). Flag bits: 0 features, 1 logits, 2 labels, 3 priors.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Rng};

const MAGIC: &[u8; 8] = b"LCALDS01";
const FLAG_FEATURES: u64 = 1;
const FLAG_LOGITS: u64 = 2;
const FLAG_LABELS: u64 = 4;
const FLAG_PRIORS: u64 = 8;
const PRIOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// `.csv` files are CSV; everything else is LCDS binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Features, logits and labels of `n` examples together with the class
/// weights used by class-wise metrics. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    features: Array2<f64>,
    logits: Array2<f64>,
    labels: Vec<usize>,
    priors: Vec<f64>,
    explicit_priors: bool,
}

impl CalibrationDataset {
    /// Validates and builds a dataset. When `priors` is `None` they are the
    /// label frequencies.
    pub fn new(
        features: Array2<f64>,
        logits: Array2<f64>,
        labels: Vec<usize>,
        priors: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::RejectedEmptyDataset);
        }
        if features.nrows() != n || logits.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels, {} feature rows, {} logit rows",
                n,
                features.nrows(),
                logits.nrows()
            )));
        }
        let c = logits.ncols();
        if c < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 classes, got {c}")));
        }
        for (row, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: y as i64,
                    classes: c,
                });
            }
        }
        check_finite(features.view(), "features")?;
        check_finite(logits.view(), "logits")?;
        let explicit_priors = priors.is_some();
        let priors = match priors {
            Some(p) => {
                validate_priors(&p, c)?;
                p
            }
            None => label_frequencies(&labels, c),
        };
        Ok(Self {
            features,
            logits,
            labels,
            priors,
            explicit_priors,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// True when priors came from an explicit record rather than the labels.
    pub fn has_explicit_priors(&self) -> bool {
        self.explicit_priors
    }

    /// Row-wise softmax of the logits.
    pub fn probs(&self) -> ProbabilityMatrix {
        ProbabilityMatrix(softmax_rows(self.logits.view()).expect("logits are finite"))
    }

    pub fn with_priors(&self, priors: Vec<f64>) -> Result<Self> {
        validate_priors(&priors, self.classes())?;
        Ok(Self {
            priors,
            explicit_priors: true,
            ..self.clone()
        })
    }

    /// Rows `idx` in the given order, with priors recomputed from their labels.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let features = self.features.select(ndarray::Axis(0), idx);
        let logits = self.logits.select(ndarray::Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, logits, labels, None)
    }
}

/// Matrix whose rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix(Array2<f64>);

impl ProbabilityMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {i} is not on the simplex")));
            }
        }
        Ok(Self(probs))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Logits whose softmax reproduces these rows: ln p, floored at ln 1e-300
    /// and shifted so each row's maximum is 0.
    pub fn to_logits(&self) -> Array2<f64> {
        let mut out = self.0.mapv(|p| p.max(1e-300).ln());
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| v - max);
        }
        out
    }
}

fn check_finite(a: ArrayView2<f64>, what: &'static str) -> Result<()> {
    for (row, r) in a.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row, what });
        }
    }
    Ok(())
}

fn validate_priors(p: &[f64], c: usize) -> Result<()> {
    if p.len() != c {
        return Err(Error::InvalidDataset(format!("{} priors for {c} classes", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > PRIOR_TOL {
        return Err(Error::InvalidDataset(format!("priors must be nonnegative and sum to 1, got {p:?}")));
    }
    Ok(())
}

/// Normalized label histogram.
pub fn label_frequencies(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

pub fn load_dataset(path: &Path, format: Format) -> Result<CalibrationDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Binary => decode_binary(&bytes),
        Format::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::CsvParse {
                line: 1,
                message: e.to_string(),
            })?;
            decode_csv(&text)
        }
    }
}

pub fn save_dataset(d: &CalibrationDataset, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_binary(d),
        Format::Csv => encode_csv(d).into_bytes(),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_binary(d: &CalibrationDataset) -> Vec<u8> {
    let (n, m, c) = (d.n(), d.m(), d.classes());
    let mut flags = FLAG_FEATURES | FLAG_LOGITS | FLAG_LABELS;
    if d.explicit_priors {
        flags |= FLAG_PRIORS;
    }
    let mut out = Vec::with_capacity(40 + 4 * n * (m + c + 1) + 8 * c);
    out.extend_from_slice(MAGIC);
    for v in [n as u64, m as u64, c as u64, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in d.features.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in d.logits.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &d.labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    if d.explicit_priors {
        for &p in &d.priors {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedFile {
                offset: self.bytes.len() as u64,
                section,
            }),
        }
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f32_matrix(&mut self, rows: usize, cols: usize, section: &'static str) -> Result<Array2<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|k| k.checked_mul(4))
            .ok_or(Error::TruncatedFile {
                offset: self.pos as u64,
                section,
            })?;
        let raw = self.take(len, section)?;
        let vals = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<CalibrationDataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic").map_err(|_| Error::MagicMismatch { offset: 0 })?;
    if magic != MAGIC {
        let offset = magic.iter().zip(MAGIC).position(|(a, b)| a != b).unwrap_or(0);
        return Err(Error::MagicMismatch { offset: offset as u64 });
    }
    let n = r.u64("header")? as usize;
    let m = r.u64("header")? as usize;
    let c = r.u64("header")? as usize;
    let flags = r.u64("header")?;
    if n == 0 {
        return Err(Error::RejectedEmptyDataset);
    }
    if flags & FLAG_LOGITS == 0 || flags & FLAG_LABELS == 0 {
        return Err(Error::InvalidDataset("logits and labels sections are required".into()));
    }
    let features = if flags & FLAG_FEATURES != 0 {
        r.f32_matrix(n, m, "features")?
    } else {
        Array2::zeros((n, 0))
    };
    let logits_start = r.pos;
    let logits = r.f32_matrix(n, c, "logits")?;
    let labels_start = r.pos;
    let raw = r.take(n.saturating_mul(4), "labels")?;
    let mut labels = Vec::with_capacity(n);
    for (row, b) in raw.chunks_exact(4).enumerate() {
        let y = u32::from_le_bytes(b.try_into().unwrap()) as usize;
        if y >= c {
            log::debug!("label out of range at byte offset {}", labels_start + 4 * row);
            return Err(Error::LabelOutOfRange {
                row,
                label: y as i64,
                classes: c,
            });
        }
        labels.push(y);
    }
    let priors = if flags & FLAG_PRIORS != 0 {
        let raw = r.take(c * 8, "priors")?;
        Some(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    } else {
        None
    };
    let _ = logits_start;
    CalibrationDataset::new(features, logits, labels, priors)
}

/// Shortest decimal that round-trips the value rounded to `digits`
/// significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v);
    format!("{rounded}")
}

pub fn encode_csv(d: &CalibrationDataset) -> String {
    let mut header: Vec<String> = (0..d.m()).map(|j| format!("f{j}")).collect();
    header.extend((0..d.classes()).map(|j| format!("l{j}")));
    header.push("label".into());
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..d.n() {
        let mut cells: Vec<String> = d.features.row(i).iter().map(|&v| format_sig(v, 9)).collect();
        cells.extend(d.logits.row(i).iter().map(|&v| format_sig(v, 9)));
        cells.push(d.labels[i].to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<CalibrationDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::RejectedEmptyDataset)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let m = cols.iter().take_while(|c| c.starts_with('f')).count();
    let c = cols[m..].iter().take_while(|c| c.starts_with('l') && **c != "label").count();
    let expected: Vec<String> = (0..m)
        .map(|j| format!("f{j}"))
        .chain((0..c).map(|j| format!("l{j}")))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if cols != expected {
        return Err(Error::CsvParse {
            line: 1,
            message: format!("header must be f0..,l0..,label; got {header}"),
        });
    }
    let mut feats = Vec::new();
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != m + c + 1 {
            return Err(Error::CsvParse {
                line: lineno,
                message: format!("expected {} fields, got {}", m + c + 1, cells.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::CsvParse {
                line: lineno,
                message: format!("{s:?}: {e}"),
            })
        };
        for s in &cells[..m] {
            feats.push(parse(s)?);
        }
        for s in &cells[m..m + c] {
            logits.push(parse(s)?);
        }
        let y: i64 = cells[m + c].parse().map_err(|e| Error::CsvParse {
            line: lineno,
            message: format!("label {:?}: {e}", cells[m + c]),
        })?;
        if y < 0 || y as usize >= c {
            return Err(Error::LabelOutOfRange {
                row: labels.len(),
                label: y,
                classes: c,
            });
        }
        labels.push(y as usize);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::RejectedEmptyDataset);
    }
    let features = Array2::from_shape_vec((n, m), feats).expect("row lengths checked");
    let logits = Array2::from_shape_vec((n, c), logits).expect("row lengths checked");
    CalibrationDataset::new(features, logits, labels, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub fractions: Vec<(String, f64)>,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().map(|(_, f)| f).sum();
        if self.fractions.is_empty()
            || self.fractions.iter().any(|(_, f)| !(*f > 0.0))
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(Error::FractionSumInvalid { sum });
        }
        Ok(())
    }

    /// Part sizes: floor of each share, with leftover rows given to the parts
    /// with the largest fractional remainders (earlier parts win ties).
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let raw: Vec<f64> = self.fractions.iter().map(|(_, f)| f * n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let assigned: usize = sizes.iter().sum();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &k in order.iter().take(n.saturating_sub(assigned)) {
            sizes[k] += 1;
        }
        Ok(sizes)
    }
}

/// Seeded disjoint partition of the rows. Rows keep their original relative
/// order inside each part, and priors are recomputed from each part's labels.
pub fn split(d: &CalibrationDataset, spec: &SplitSpec) -> Result<Vec<(String, CalibrationDataset)>> {
    let sizes = spec.sizes(d.n())?;
    let mut perm: Vec<usize> = (0..d.n()).collect();
    Rng::new(spec.seed).shuffle(&mut perm);
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for ((name, _), size) in spec.fractions.iter().zip(sizes) {
        let mut idx = perm[start..start + size].to_vec();
        idx.sort_unstable();
        start += size;
        out.push((name.clone(), d.select_rows(&idx)?));
    }
    Ok(out)
}

/// Same labels and priors with new features and logits.
pub fn replace_representation(
    d: &CalibrationDataset,
    new_features: Array2<f64>,
    new_logits: Array2<f64>,
) -> Result<CalibrationDataset> {
    if new_features.nrows() != d.n() || new_logits.nrows() != d.n() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} rows, replacement has {} feature and {} logit rows",
            d.n(),
            new_features.nrows(),
            new_logits.nrows()
        )));
    }
    if new_logits.ncols() != d.classes() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, replacement logits have {} columns",
            d.classes(),
            new_logits.ncols()
        )));
    }
    let priors = d.explicit_priors.then(|| d.priors.clone());
    let mut out = CalibrationDataset::new(new_features, new_logits, d.labels.clone(), priors)?;
    out.priors = d.priors.clone();
    Ok(out)
}
