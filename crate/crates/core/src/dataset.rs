//! Frozen-embedding datasets: validation, the LEMB v1 binary and TSV file
//! formats, seeded splitting and the unknown-group synthetic generator.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "LEMB" | u32 version=1 | u32 flags (bit 0: groups) | u64 n | u32 dim
//!        | u32 num_classes | u32 num_groups
//! n × ( dim × f32 | u32 label | [u32 group] )
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::fmt::format_sig;
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"LEMB";
pub const VERSION: u32 = 1;
pub const FLAG_GROUPS: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + 4 + 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("byte offset {offset}: {message}")]
    Binary { offset: usize, message: String },
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid synthetic config: {0}")]
    Synthetic(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// On-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Binary,
    Tsv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Binary => "lemb",
            Format::Tsv => "tsv",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(Format::Binary),
            "tsv" => Ok(Format::Tsv),
            other => Err(format!("unknown format `{other}` (expected binary or tsv)")),
        }
    }
}

/// `n` frozen embeddings with class labels and optional group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    embeddings: DenseMatrix,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    num_classes: usize,
    num_groups: usize,
}

impl EmbeddingDataset {
    /// Validates every invariant: `n ≥ 1`, `d ≥ 1`, finite entries, labels
    /// below `num_classes`, groups (if any) below `num_groups`.
    pub fn new(
        embeddings: DenseMatrix,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        num_classes: usize,
        num_groups: usize,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if n == 0 {
            return Err(DatasetError::Invalid("dataset has no examples".into()));
        }
        if embeddings.cols() == 0 {
            return Err(DatasetError::Invalid("embedding dimension is zero".into()));
        }
        if labels.len() != n {
            return Err(DatasetError::Invalid(format!("{} labels for {n} examples", labels.len())));
        }
        if let Some(i) = embeddings.first_non_finite() {
            let d = embeddings.cols();
            return Err(DatasetError::Invalid(format!(
                "non-finite embedding value at example {} coordinate {}",
                i / d,
                i % d
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(DatasetError::Invalid(format!(
                "example {i}: label {} out of range for {num_classes} classes",
                labels[i]
            )));
        }
        match &groups {
            Some(g) => {
                if g.len() != n {
                    return Err(DatasetError::Invalid(format!("{} groups for {n} examples", g.len())));
                }
                if let Some(i) = g.iter().position(|&x| x >= num_groups) {
                    return Err(DatasetError::Invalid(format!(
                        "example {i}: group {} out of range for {num_groups} groups",
                        g[i]
                    )));
                }
            }
            None if num_groups != 0 => {
                return Err(DatasetError::Invalid("num_groups must be 0 without group labels".into()));
            }
            None => {}
        }
        Ok(Self { embeddings, labels, groups, num_classes, num_groups })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    /// Examples at `indices`, in that order. Counts (classes, groups) are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.embeddings.row(i));
        }
        let embeddings = DenseMatrix::from_vec(indices.len(), d, data).expect("row-aligned buffer");
        Self::new(
            embeddings,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            self.num_classes,
            self.num_groups,
        )
    }

    /// Indices of the examples in `group`.
    pub fn group_members(&self, group: usize) -> Vec<usize> {
        match &self.groups {
            Some(g) => g.iter().enumerate().filter(|(_, &x)| x == group).map(|(i, _)| i).collect(),
            None => Vec::new(),
        }
    }

    /// Examples whose group is in `keep`.
    pub fn restrict_to_groups(&self, keep: &[usize]) -> Result<Self> {
        let groups =
            self.groups.as_ref().ok_or_else(|| DatasetError::Invalid("dataset has no group annotations".into()))?;
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep.contains(&groups[i])).collect();
        self.subset(&idx)
    }
}

// ---------------------------------------------------------------------------
// binary format

pub fn encode_binary(ds: &EmbeddingDataset) -> Vec<u8> {
    let with_groups = ds.groups.is_some();
    let record = ds.dim() * 4 + 4 + if with_groups { 4 } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + ds.n() * record);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(if with_groups { FLAG_GROUPS } else { 0 }).to_le_bytes());
    out.extend_from_slice(&(ds.n() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(if with_groups { ds.num_groups as u32 } else { 0 }).to_le_bytes());
    for i in 0..ds.n() {
        for &x in ds.embedding(i) {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.extend_from_slice(&(ds.labels[i] as u32).to_le_bytes());
        if let Some(g) = &ds.groups {
            out.extend_from_slice(&(g[i] as u32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(DatasetError::Binary {
                offset: self.pos,
                message: format!("truncated while reading {what} ({} bytes available)", self.bytes.len() - self.pos),
            });
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let bin = |offset: usize, message: String| DatasetError::Binary { offset, message };

    let magic = cur.take::<4>("magic")?;
    if magic != MAGIC {
        return Err(bin(0, format!("bad magic {magic:02x?}, expected \"LEMB\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(bin(4, format!("unsupported version {version}")));
    }
    let flags = cur.u32("flags")?;
    if flags & !FLAG_GROUPS != 0 {
        return Err(bin(8, format!("unknown flag bits {flags:#x}")));
    }
    let with_groups = flags & FLAG_GROUPS != 0;
    let n = cur.u64("n")?;
    let dim = cur.u32("dim")? as usize;
    let num_classes = cur.u32("num_classes")? as usize;
    let num_groups = cur.u32("num_groups")? as usize;
    if n == 0 {
        return Err(bin(12, "empty payload (n = 0)".into()));
    }
    if dim == 0 {
        return Err(bin(20, "dim = 0".into()));
    }
    if !with_groups && num_groups != 0 {
        return Err(bin(28, format!("num_groups = {num_groups} but the groups flag is clear")));
    }
    let record = dim * 4 + 4 + if with_groups { 4 } else { 0 };
    let n = usize::try_from(n).map_err(|_| bin(12, format!("n = {n} does not fit in memory")))?;
    let expected = n.checked_mul(record).and_then(|p| p.checked_add(HEADER_LEN));
    match expected {
        Some(len) if len == bytes.len() => {}
        Some(len) if len > bytes.len() => {
            let complete = (bytes.len() - HEADER_LEN) / record;
            return Err(bin(
                HEADER_LEN + complete * record,
                format!("truncated: header declares {n} records of {record} bytes, file ends inside record {complete}"),
            ));
        }
        Some(len) => return Err(bin(len, format!("{} trailing bytes after the last record", bytes.len() - len))),
        None => return Err(bin(12, "declared size overflows".into())),
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut groups = with_groups.then(|| Vec::with_capacity(n));
    for i in 0..n {
        for _ in 0..dim {
            let at = cur.pos;
            let x = cur.f32("embedding")?;
            if !x.is_finite() {
                return Err(bin(at, format!("example {i}: non-finite embedding value {x}")));
            }
            data.push(x as f64);
        }
        let at = cur.pos;
        let y = cur.u32("label")? as usize;
        if y >= num_classes {
            return Err(bin(at, format!("example {i}: label {y} out of range for {num_classes} classes")));
        }
        labels.push(y);
        if let Some(g) = groups.as_mut() {
            let at = cur.pos;
            let gi = cur.u32("group")? as usize;
            if gi >= num_groups {
                return Err(bin(at, format!("example {i}: group {gi} out of range for {num_groups} groups")));
            }
            g.push(gi);
        }
    }
    let embeddings = DenseMatrix::from_vec(n, dim, data).expect("row-aligned buffer");
    EmbeddingDataset::new(embeddings, labels, groups, num_classes, num_groups)
}

// ---------------------------------------------------------------------------
// TSV format

pub fn encode_tsv(ds: &EmbeddingDataset) -> String {
    let g = if ds.groups.is_some() { ds.num_groups } else { 0 };
    let mut out = format!("# lemb-tsv v1 n={} d={} c={} g={}\n", ds.n(), ds.dim(), ds.num_classes, g);
    for i in 0..ds.n() {
        for &x in ds.embedding(i) {
            out.push_str(&format_sig((x as f32) as f64, 9));
            out.push('\t');
        }
        out.push_str(&ds.labels[i].to_string());
        if let Some(groups) = &ds.groups {
            out.push('\t');
            out.push_str(&groups[i].to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> std::result::Result<[usize; 4], String> {
    let rest = line
        .strip_prefix("# lemb-tsv v1")
        .ok_or_else(|| format!("expected `# lemb-tsv v1 ...` header, got `{line}`"))?;
    let mut vals = [None; 4];
    for tok in rest.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| format!("malformed header field `{tok}`"))?;
        let slot = match key {
            "n" => 0,
            "d" => 1,
            "c" => 2,
            "g" => 3,
            _ => return Err(format!("unknown header field `{key}`")),
        };
        vals[slot] = Some(value.parse::<usize>().map_err(|e| format!("header field `{tok}`: {e}"))?);
    }
    let mut out = [0; 4];
    for (i, name) in ["n", "d", "c", "g"].iter().enumerate() {
        out[i] = vals[i].ok_or_else(|| format!("header is missing `{name}=`"))?;
    }
    Ok(out)
}

pub fn decode_tsv(text: &str) -> Result<EmbeddingDataset> {
    let tsv = |line: usize, message: String| DatasetError::Tsv { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| tsv(1, "empty file".into()))?;
    let [n, dim, num_classes, num_groups] = parse_header(header).map_err(|m| tsv(1, m))?;
    if n == 0 {
        return Err(tsv(1, "empty payload (n = 0)".into()));
    }
    if dim == 0 {
        return Err(tsv(1, "d = 0".into()));
    }
    let with_groups = num_groups > 0;
    let fields = dim + 1 + usize::from(with_groups);

    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut groups = with_groups.then(|| Vec::with_capacity(n));
    let mut rows = 0;
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        if rows == n {
            return Err(tsv(line_no, format!("more rows than the declared n={n}")));
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != fields {
            return Err(tsv(line_no, format!("expected {fields} fields, found {}", cols.len())));
        }
        for (j, c) in cols[..dim].iter().enumerate() {
            let x: f32 = c.parse().map_err(|_| tsv(line_no, format!("column {}: bad float `{c}`", j + 1)))?;
            if !x.is_finite() {
                return Err(tsv(line_no, format!("column {}: non-finite value", j + 1)));
            }
            data.push(x as f64);
        }
        let y: usize = cols[dim].parse().map_err(|_| tsv(line_no, format!("bad label `{}`", cols[dim])))?;
        if y >= num_classes {
            return Err(tsv(line_no, format!("label {y} out of range for c={num_classes}")));
        }
        labels.push(y);
        if let Some(g) = groups.as_mut() {
            let raw = cols[dim + 1];
            let gi: usize = raw.parse().map_err(|_| tsv(line_no, format!("bad group `{raw}`")))?;
            if gi >= num_groups {
                return Err(tsv(line_no, format!("group {gi} out of range for g={num_groups}")));
            }
            g.push(gi);
        }
        rows += 1;
    }
    if rows != n {
        return Err(tsv(text.lines().count() + 1, format!("file ends after {rows} rows, header declares n={n}")));
    }
    let embeddings = DenseMatrix::from_vec(n, dim, data).expect("row-aligned buffer");
    EmbeddingDataset::new(embeddings, labels, groups, num_classes, num_groups)
}

pub fn read_dataset(path: impl AsRef<Path>, format: Format) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    match format {
        Format::Binary => decode_binary(&fs::read(path).map_err(io_err)?),
        Format::Tsv => decode_tsv(&fs::read_to_string(path).map_err(io_err)?),
    }
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        Format::Binary => encode_binary(ds),
        Format::Tsv => encode_tsv(ds).into_bytes(),
    };
    let mut file = fs::File::create(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    file.write_all(&bytes).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

// ---------------------------------------------------------------------------
// splitting

/// Named fractions and a shuffle seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub fractions: Vec<(String, f64)>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new<S: Into<String>>(fractions: impl IntoIterator<Item = (S, f64)>, seed: u64) -> Self {
        Self { fractions: fractions.into_iter().map(|(n, f)| (n.into(), f)).collect(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(DatasetError::Split("no fractions given".into()));
        }
        for (name, f) in &self.fractions {
            if !(f.is_finite() && *f > 0.0) {
                return Err(DatasetError::Split(format!("fraction for `{name}` must be positive, got {f}")));
            }
        }
        let sum: f64 = self.fractions.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` examples: floor for every part but the last.
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut sizes = Vec::with_capacity(self.fractions.len());
        let mut used = 0usize;
        for (i, (name, f)) in self.fractions.iter().enumerate() {
            let size = if i + 1 == self.fractions.len() {
                n.saturating_sub(used)
            } else {
                // 1e-9 absorbs representation error, e.g. 0.6·2100 = 1259.999…
                (f * n as f64 + 1e-9).floor() as usize
            };
            if size == 0 {
                return Err(DatasetError::Split(format!("fraction {f} for `{name}` yields zero of {n} examples")));
            }
            used += size;
            sizes.push(size);
        }
        if used != n {
            return Err(DatasetError::Split(format!("fractions over-allocate {used} of {n} examples")));
        }
        Ok(sizes)
    }
}

/// One named part of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPart {
    pub name: String,
    /// Indices into the source dataset, in shuffled order.
    pub indices: Vec<usize>,
    pub data: EmbeddingDataset,
}

/// Seeded shuffle, then contiguous slices in the order of `spec.fractions`.
pub fn split_dataset(ds: &EmbeddingDataset, spec: &SplitSpec) -> Result<Vec<SplitPart>> {
    let sizes = spec.sizes(ds.n())?;
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for ((name, _), size) in spec.fractions.iter().zip(sizes) {
        let indices = order[start..start + size].to_vec();
        start += size;
        parts.push(SplitPart { name: name.clone(), data: ds.subset(&indices)?, indices });
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// synthetic unknown-group benchmark

/// Generator parameters. Group 0 is the unknown group; groups `1..=N` are known.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_known_groups: usize,
    /// Size of the unknown group relative to each known group.
    pub unknown_ratio: f64,
    pub samples_per_known_group: usize,
    pub stable_dim: usize,
    pub signal_strength: f64,
    pub label_noise_sd: f64,
    pub spurious_noise_sd: f64,
    pub unknown_corr_strength: f64,
    pub unknown_anticorr_strength: f64,
    pub known_corr_strength: f64,
    pub known_anticorr_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_known_groups: 2,
            unknown_ratio: 0.1,
            samples_per_known_group: 1000,
            stable_dim: 5,
            signal_strength: 1.5,
            label_noise_sd: 0.8,
            spurious_noise_sd: 0.5,
            unknown_corr_strength: 4.5,
            unknown_anticorr_strength: 3.0,
            known_corr_strength: 4.0,
            known_anticorr_strength: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn unknown_group_size(&self) -> usize {
        (self.unknown_ratio * self.samples_per_known_group as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::Synthetic(m));
        if !(self.unknown_ratio > 0.0 && self.unknown_ratio <= 1.0) {
            return bad(format!("unknown_ratio must lie in (0, 1], got {}", self.unknown_ratio));
        }
        if self.stable_dim == 0 {
            return bad("stable_dim must be at least 1".into());
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("unknown_corr_strength", self.unknown_corr_strength),
            ("unknown_anticorr_strength", self.unknown_anticorr_strength),
            ("known_corr_strength", self.known_corr_strength),
            ("known_anticorr_strength", self.known_anticorr_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("label_noise_sd", self.label_noise_sd), ("spurious_noise_sd", self.spurious_noise_sd)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.unknown_group_size() == 0 {
            return bad(format!(
                "unknown group rounds to zero examples (ratio {} of {} per known group)",
                self.unknown_ratio, self.samples_per_known_group
            ));
        }
        Ok(())
    }
}

/// Draws the two-class unknown-group benchmark.
///
/// Feature layout is `[spurious_0, spurious_1, stable_1..stable_m]`. Labels
/// are `1[θᵀx + ε > 0]` with `θ` uniform on the sphere scaled to
/// `signal_strength`. The unknown group (0) correlates spurious feature 0
/// with the label and anti-correlates feature 1; known groups do the
/// opposite. Examples are emitted group by group, unknown group first.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<EmbeddingDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = config.stable_dim;
    let dim = m + 2;

    let mut theta: Vec<f64> = loop {
        let t: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        if t.iter().any(|x: &f64| *x != 0.0) {
            break t;
        }
    };
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    theta.iter_mut().for_each(|x| *x *= config.signal_strength / norm);

    let unknown = config.unknown_group_size();
    let n = unknown + config.num_known_groups * config.samples_per_known_group;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);

    let sizes =
        std::iter::once((0, unknown)).chain((1..=config.num_known_groups).map(|g| (g, config.samples_per_known_group)));
    for (group, count) in sizes {
        for _ in 0..count {
            let stable: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let eps: f64 = config.label_noise_sd * rng.sample::<f64, _>(StandardNormal);
            let score: f64 = theta.iter().zip(&stable).map(|(t, x)| t * x).sum::<f64>() + eps;
            let y = usize::from(score > 0.0);
            let s = if y == 1 { 1.0 } else { -1.0 };
            let noise0: f64 = config.spurious_noise_sd * rng.sample::<f64, _>(StandardNormal);
            let noise1: f64 = config.spurious_noise_sd * rng.sample::<f64, _>(StandardNormal);
            let (f0, f1) = if group == 0 {
                (config.unknown_corr_strength * s + noise0, -config.unknown_anticorr_strength * s + noise1)
            } else {
                (-config.known_anticorr_strength * s + noise0, config.known_corr_strength * s + noise1)
            };
            data.push(f0);
            data.push(f1);
            data.extend_from_slice(&stable);
            labels.push(y);
            groups.push(group);
        }
    }
    let embeddings = DenseMatrix::from_vec(n, dim, data).expect("row-aligned buffer");
    EmbeddingDataset::new(embeddings, labels, Some(groups), 2, config.num_known_groups + 1)
}
