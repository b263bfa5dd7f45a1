use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::datagen::stream;
use crate::error::{PnnError, Result};
use crate::linalg::SymMatrix;
use crate::stats::Dataset;

const SPLIT_STREAM: u64 = 20;

fn parse_cell(path: &Path, row: usize, col: usize, cell: &str) -> Result<f64> {
    let parse_err = |msg: String| PnnError::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(format!("'{}' is not a number", cell.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(format!("non-finite value '{}'", cell.trim())));
    }
    Ok(v)
}

/// Reads a comma-separated numeric table; rows and columns in errors are
/// 1-based positions in the file.
fn read_table(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| PnnError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_reader(file);
    let offset = usize::from(header);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1 + offset;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => PnnError::io(path, std::io::Error::other(e.to_string())),
            _ => PnnError::Parse {
                path: path.to_path_buf(),
                row,
                col: 0,
                msg: e.to_string(),
            },
        })?;
        let values = record
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(path, row, j + 1, cell))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
            if values.len() != first {
                return Err(PnnError::Parse {
                    path: path.to_path_buf(),
                    row,
                    col: values.len().min(first) + 1,
                    msg: format!("expected {first} columns, found {}", values.len()),
                });
            }
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Loads an `n x t` feature table, one node per row and one sample per column.
pub fn load_csv_features(features: &Path, header: bool) -> Result<DMatrix<f64>> {
    let rows = read_table(features, header)?;
    if rows.is_empty() {
        return Err(PnnError::Format(format!("{} holds no data rows", features.display())));
    }
    let (n, t) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, t, |i, j| rows[i][j]))
}

/// Loads a feature table as in [`load_csv_features`] and `t` targets, one
/// per line.
pub fn load_csv_dataset(features: &Path, targets: &Path, header: bool) -> Result<Dataset> {
    let x = load_csv_features(features, header)?;
    let t = x.ncols();

    let trows = read_table(targets, header)?;
    if let Some((i, r)) = trows.iter().enumerate().find(|(_, r)| r.len() != 1) {
        return Err(PnnError::Parse {
            path: targets.to_path_buf(),
            row: i + 1 + usize::from(header),
            col: 2,
            msg: format!("expected one target per line, found {} values", r.len()),
        });
    }
    if trows.len() != t {
        return Err(PnnError::dim(format!(
            "{} has {t} sample columns but {} has {} targets",
            features.display(),
            targets.display(),
            trows.len()
        )));
    }
    let y = DVector::from_iterator(t, trows.into_iter().map(|r| r[0]));
    Dataset::new(x, y)
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = Vec<f64>> + 'a) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PnnError::io(path, std::io::Error::other(e)))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        w.write_record(&cells).map_err(|e| PnnError::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| PnnError::io(path, e))
}

/// Writes a dataset in the layout [`load_csv_dataset`] reads, without header.
pub fn write_csv_dataset(d: &Dataset, features: &Path, targets: &Path) -> Result<()> {
    write_rows(features, d.x.row_iter().map(|r| r.iter().copied().collect()))?;
    write_rows(targets, d.y.iter().map(|v| vec![*v]))
}

pub fn write_csv_matrix(m: &SymMatrix, path: &Path) -> Result<()> {
    write_rows(path, m.as_matrix().row_iter().map(|r| r.iter().copied().collect()))
}

/// Train, validation and test parts with the sample indices they hold.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: [Vec<usize>; 3],
}

pub fn validate_fractions(fractions: &[f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(PnnError::arg(format!("split fractions must be positive, got {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PnnError::arg(format!("split fractions must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Part sizes: train and validation round down, test takes the rest.
pub fn split_sizes(t: usize, fractions: &[f64; 3]) -> [usize; 3] {
    // The slack keeps products such as 0.29 * 100 from flooring to 28.
    let floor = |f: f64| (t as f64 * f + 1e-9).floor() as usize;
    let train = floor(fractions[0]).min(t);
    let val = floor(fractions[1]).min(t - train);
    [train, val, t - train - val]
}

/// Seeded shuffle of the sample indices, sliced by `fractions`.
pub fn split_dataset(d: &Dataset, fractions: &[f64; 3], seed: u64) -> Result<Split> {
    validate_fractions(fractions)?;
    let sizes = split_sizes(d.t(), fractions);
    if sizes.contains(&0) {
        return Err(PnnError::arg(format!(
            "splitting {} samples by {fractions:?} leaves an empty part",
            d.t()
        )));
    }
    let mut perm: Vec<usize> = (0..d.t()).collect();
    perm.shuffle(&mut stream(seed, SPLIT_STREAM));
    let train = perm[..sizes[0]].to_vec();
    let val = perm[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = perm[sizes[0] + sizes[1]..].to_vec();
    Ok(Split {
        train: d.subset(&train),
        val: d.subset(&val),
        test: d.subset(&test),
        indices: [train, val, test],
    })
}
