//! Sparse incomplete rating matrices: ingestion, splitting, and synthesis.
//!
//! An [`HdiMatrix`] stores the known entries of a high-dimensional incomplete
//! matrix as rating triples grouped by row, with a dual per-column index.
//! Matrices are immutable after construction and safe to share across threads.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::LatentFactors;

/// One known entry: node `row` rates node `col` with `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    ParseLine { line: usize, reason: String },
    #[error("duplicate entry for ({user}, {item}): lines {first_line} and {second_line}")]
    DuplicateLine {
        user: String,
        item: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateCell { row: usize, col: usize },
    #[error("entry ({row}, {col}) out of bounds for {num_rows}x{num_cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        num_rows: usize,
        num_cols: usize,
    },
    #[error("non-finite value at ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },
    #[error("input contains no data lines")]
    Empty,
    #[error("split requires at least 10 entries, got {found}")]
    TooFewEntries { found: usize },
    #[error("invalid split spec: {reason}")]
    InvalidSplit { reason: String },
    #[error("invalid synthetic spec: {reason}")]
    InvalidSynthetic { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Supported input file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `user::item::rating::timestamp` lines.
    MovielensDat,
    /// `user,item,rating[,timestamp]` lines with an optional header.
    Csv,
}

impl std::str::FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "movielens-dat" => Ok(DataFormat::MovielensDat),
            "csv" => Ok(DataFormat::Csv),
            other => Err(format!(
                "unknown format '{other}' (expected 'movielens-dat' or 'csv')"
            )),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataFormat::MovielensDat => write!(f, "movielens-dat"),
            DataFormat::Csv => write!(f, "csv"),
        }
    }
}

/// The known-entry set of an incomplete matrix, indexed by row and by column.
///
/// Entries are stored grouped by row (insertion order within a row), so each
/// row's entries form one contiguous slice. A flat per-column index maps every
/// column to the positions of its entries.
#[derive(Debug, Clone)]
pub struct HdiMatrix {
    num_rows: usize,
    num_cols: usize,
    entries: Vec<RatingTriple>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    col_positions: Vec<usize>,
}

impl HdiMatrix {
    /// Builds a matrix from triples, validating bounds, finiteness, and
    /// duplicate (row, col) pairs. Triples may arrive in any order.
    pub fn from_triples(
        num_rows: usize,
        num_cols: usize,
        triples: Vec<RatingTriple>,
    ) -> Result<Self, DataError> {
        let mut seen = HashMap::with_capacity(triples.len());
        for t in &triples {
            if t.row >= num_rows || t.col >= num_cols {
                return Err(DataError::IndexOutOfBounds {
                    row: t.row,
                    col: t.col,
                    num_rows,
                    num_cols,
                });
            }
            if !t.value.is_finite() {
                return Err(DataError::NonFiniteValue {
                    row: t.row,
                    col: t.col,
                });
            }
            if seen.insert((t.row, t.col), ()).is_some() {
                return Err(DataError::DuplicateCell {
                    row: t.row,
                    col: t.col,
                });
            }
        }

        // Stable counting sort by row keeps insertion order within each row.
        let mut row_counts = vec![0usize; num_rows + 1];
        for t in &triples {
            row_counts[t.row + 1] += 1;
        }
        let mut row_offsets = row_counts;
        for m in 0..num_rows {
            row_offsets[m + 1] += row_offsets[m];
        }
        let mut entries = vec![
            RatingTriple {
                row: 0,
                col: 0,
                value: 0.0
            };
            triples.len()
        ];
        let mut cursor = row_offsets.clone();
        for t in triples {
            entries[cursor[t.row]] = t;
            cursor[t.row] += 1;
        }

        let mut col_counts = vec![0usize; num_cols + 1];
        for t in &entries {
            col_counts[t.col + 1] += 1;
        }
        let mut col_offsets = col_counts;
        for n in 0..num_cols {
            col_offsets[n + 1] += col_offsets[n];
        }
        let mut col_positions = vec![0usize; entries.len()];
        let mut cursor = col_offsets.clone();
        for (pos, t) in entries.iter().enumerate() {
            col_positions[cursor[t.col]] = pos;
            cursor[t.col] += 1;
        }

        Ok(Self {
            num_rows,
            num_cols,
            entries,
            row_offsets,
            col_offsets,
            col_positions,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    /// Number of known entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of cells that are known.
    pub fn density(&self) -> f64 {
        if self.num_rows == 0 || self.num_cols == 0 {
            return 0.0;
        }
        self.entries.len() as f64 / (self.num_rows as f64 * self.num_cols as f64)
    }

    /// All entries, grouped by row.
    pub fn entries(&self) -> &[RatingTriple] {
        &self.entries
    }

    /// The contiguous slice of entries whose row is `m`.
    pub fn row_entries(&self, m: usize) -> &[RatingTriple] {
        &self.entries[self.row_offsets[m]..self.row_offsets[m + 1]]
    }

    /// Positions (into [`entries`](Self::entries)) of entries whose column is `n`.
    pub fn col_entry_positions(&self, n: usize) -> &[usize] {
        &self.col_positions[self.col_offsets[n]..self.col_offsets[n + 1]]
    }

    /// Counts of rows and columns with no known entries.
    pub fn cold_node_counts(&self) -> (usize, usize) {
        let cold_rows = (0..self.num_rows)
            .filter(|&m| self.row_offsets[m] == self.row_offsets[m + 1])
            .count();
        let cold_cols = (0..self.num_cols)
            .filter(|&n| self.col_offsets[n] == self.col_offsets[n + 1])
            .count();
        (cold_rows, cold_cols)
    }

    /// Writes the canonical `row,col,value` csv with a header and LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"row,col,value\n")?;
        for t in &self.entries {
            writeln!(w, "{},{},{:.16e}", t.row, t.col, t.value)?;
        }
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Original node labels retained by the parser; index order is first appearance.
#[derive(Debug, Clone)]
pub struct IdMap {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    row_index: HashMap<String, usize>,
    col_index: HashMap<String, usize>,
}

impl IdMap {
    pub fn row_label(&self, m: usize) -> &str {
        &self.row_labels[m]
    }

    pub fn col_label(&self, n: usize) -> &str {
        &self.col_labels[n]
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.row_index.get(label).copied()
    }

    pub fn col_index(&self, label: &str) -> Option<usize> {
        self.col_index.get(label).copied()
    }
}

/// A parsed matrix together with its reversible id map.
#[derive(Debug, Clone)]
pub struct ParsedRatings {
    pub matrix: HdiMatrix,
    pub id_map: IdMap,
}

struct Remapper {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Remapper {
    fn new() -> Self {
        Self {
            labels: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), i);
        i
    }
}

/// Parses a rating stream, remapping ids to dense 0-based indices in
/// first-appearance order. Timestamps are ignored. Exact duplicate
/// (user, item) pairs are rejected, citing both offending lines.
pub fn parse_ratings<R: BufRead>(reader: R, format: DataFormat) -> Result<ParsedRatings, DataError> {
    let mut rows = Remapper::new();
    let mut cols = Remapper::new();
    let mut triples: Vec<RatingTriple> = Vec::new();
    let mut first_seen: HashMap<(usize, usize), usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = line?;
        let line = raw.strip_suffix('\r').unwrap_or(&raw);
        if line.is_empty() {
            continue;
        }

        let fields: Vec<&str> = match format {
            DataFormat::MovielensDat => line.split("::").collect(),
            DataFormat::Csv => line.split(',').collect(),
        };
        let field_count_ok = match format {
            DataFormat::MovielensDat => fields.len() == 4,
            DataFormat::Csv => fields.len() == 3 || fields.len() == 4,
        };
        if !field_count_ok {
            return Err(DataError::ParseLine {
                line: line_no,
                reason: format!("expected {format} fields, got {} fields", fields.len()),
            });
        }

        let user = fields[0].trim();
        let item = fields[1].trim();
        let rating_field = fields[2].trim();
        let rating = match rating_field.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                return Err(DataError::ParseLine {
                    line: line_no,
                    reason: format!("non-finite rating '{rating_field}'"),
                });
            }
            Err(_) => {
                // A csv file may start with a header line such as
                // `user,item,rating`; only the first line qualifies.
                if format == DataFormat::Csv && line_no == 1 {
                    continue;
                }
                return Err(DataError::ParseLine {
                    line: line_no,
                    reason: format!("non-numeric rating '{rating_field}'"),
                });
            }
        };

        let m = rows.intern(user);
        let n = cols.intern(item);
        if let Some(&first_line) = first_seen.get(&(m, n)) {
            return Err(DataError::DuplicateLine {
                user: user.to_string(),
                item: item.to_string(),
                first_line,
                second_line: line_no,
            });
        }
        first_seen.insert((m, n), line_no);
        triples.push(RatingTriple {
            row: m,
            col: n,
            value: rating,
        });
    }

    if triples.is_empty() {
        return Err(DataError::Empty);
    }

    let matrix = HdiMatrix::from_triples(rows.labels.len(), cols.labels.len(), triples)?;
    Ok(ParsedRatings {
        matrix,
        id_map: IdMap {
            row_labels: rows.labels,
            col_labels: cols.labels,
            row_index: rows.index,
            col_index: cols.index,
        },
    })
}

/// Fractions for a train/validation/test partition plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self, DataError> {
        let spec = Self {
            train_fraction: train,
            validation_fraction: validation,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fractions = [
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
        ];
        for f in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(DataError::InvalidSplit {
                    reason: format!("fraction {f} outside [0, 1]"),
                });
            }
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit {
                reason: format!("fractions sum to {sum}, expected 1"),
            });
        }
        Ok(())
    }

    /// Parses a `train,validation,test` fraction list, e.g. `0.8,0.1,0.1`.
    pub fn parse_fractions(s: &str, seed: u64) -> Result<Self, DataError> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(DataError::InvalidSplit {
                reason: format!("expected three comma-separated fractions, got '{s}'"),
            });
        }
        let mut vals = [0.0f64; 3];
        for (i, p) in parts.iter().enumerate() {
            vals[i] = p.trim().parse().map_err(|_| DataError::InvalidSplit {
                reason: format!("non-numeric fraction '{p}'"),
            })?;
        }
        Self::new(vals[0], vals[1], vals[2], seed)
    }
}

/// Partitions entries disjointly by a seeded uniform shuffle, then slices by
/// fractions (train and validation counts round down, test takes the rest).
/// All three outputs keep the input's dimensions.
pub fn split_ratings(
    matrix: &HdiMatrix,
    spec: &SplitSpec,
) -> Result<(HdiMatrix, HdiMatrix, HdiMatrix), DataError> {
    spec.validate()?;
    let total = matrix.len();
    if total < 10 {
        return Err(DataError::TooFewEntries { found: total });
    }

    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let n_train = (total as f64 * spec.train_fraction).floor() as usize;
    let n_val = (total as f64 * spec.validation_fraction).floor() as usize;

    let take = |positions: &[usize]| -> Vec<RatingTriple> {
        positions.iter().map(|&p| matrix.entries()[p]).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);

    Ok((
        HdiMatrix::from_triples(matrix.num_rows, matrix.num_cols, train)?,
        HdiMatrix::from_triples(matrix.num_rows, matrix.num_cols, val)?,
        HdiMatrix::from_triples(matrix.num_rows, matrix.num_cols, test)?,
    ))
}

/// Output of [`generate_synthetic`]: the observed matrix, the factors that
/// generated it, and whether any row or column ended up with no entries.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub matrix: HdiMatrix,
    pub ground_truth: LatentFactors,
    pub has_cold_nodes: bool,
}

/// Samples a low-rank-plus-noise matrix at the requested density.
///
/// Ground-truth factor entries are uniform in [0, 1); each observed cell holds
/// the factor product plus Gaussian noise. Cold rows or columns are flagged,
/// not rejected.
pub fn generate_synthetic(
    num_rows: usize,
    num_cols: usize,
    rank: usize,
    density: f64,
    noise_std: f64,
    seed: u64,
) -> Result<SyntheticData, DataError> {
    if num_rows == 0 || num_cols == 0 {
        return Err(DataError::InvalidSynthetic {
            reason: "dimensions must be positive".into(),
        });
    }
    if rank == 0 || rank > num_rows.min(num_cols) {
        return Err(DataError::InvalidSynthetic {
            reason: format!("rank {rank} outside [1, min({num_rows}, {num_cols})]"),
        });
    }
    if density.is_nan() || density <= 0.0 || density > 1.0 {
        return Err(DataError::InvalidSynthetic {
            reason: format!("density {density} outside (0, 1]"),
        });
    }
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(DataError::InvalidSynthetic {
            reason: format!("noise_std {noise_std} must be non-negative"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..num_rows * rank).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..num_cols * rank).map(|_| rng.random::<f64>()).collect();
    let ground_truth = LatentFactors::from_parts(num_rows, num_cols, rank, x, y)
        .expect("uniform draws are finite");

    let total_cells = num_rows * num_cols;
    let target = ((total_cells as f64 * density).round() as usize)
        .clamp(1, total_cells);
    let cells = sample_distinct_cells(&mut rng, total_cells, target);

    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).expect("validated noise_std"))
    } else {
        None
    };
    let triples: Vec<RatingTriple> = cells
        .into_iter()
        .map(|cell| {
            let row = cell / num_cols;
            let col = cell % num_cols;
            let mut value = ground_truth.dot(row, col);
            if let Some(dist) = &noise {
                value += dist.sample(&mut rng);
            }
            RatingTriple { row, col, value }
        })
        .collect();

    let matrix = HdiMatrix::from_triples(num_rows, num_cols, triples)?;
    let (cold_rows, cold_cols) = matrix.cold_node_counts();
    Ok(SyntheticData {
        matrix,
        ground_truth,
        has_cold_nodes: cold_rows > 0 || cold_cols > 0,
    })
}

fn sample_distinct_cells(rng: &mut ChaCha8Rng, total: usize, target: usize) -> Vec<usize> {
    if target * 2 >= total {
        // Dense case: partial Fisher-Yates over all cells.
        let mut all: Vec<usize> = (0..total).collect();
        for i in 0..target {
            let j = rng.random_range(i..total);
            all.swap(i, j);
        }
        all.truncate(target);
        all
    } else {
        let mut chosen = std::collections::HashSet::with_capacity(target);
        let mut cells = Vec::with_capacity(target);
        while cells.len() < target {
            let cell = rng.random_range(0..total);
            if chosen.insert(cell) {
                cells.push(cell);
            }
        }
        cells
    }
}
