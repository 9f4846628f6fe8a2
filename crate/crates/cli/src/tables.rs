//! CSV formats: label tables (`item,identity,camera`) and partitions
//! (`item,cluster`).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use partcc_core::tensor::{LabelRow, LabelTable, Partition};

const LABEL_HEADER: &str = "item,identity,camera";
const PARTITION_HEADER: &str = "item,cluster";

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: bad header {found:?} (expected {expected:?})", path.display())]
    BadHeader {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: item indices must cover 0..{n} exactly once; {problem}", path.display())]
    BadItemSet {
        path: PathBuf,
        n: usize,
        problem: String,
    },
    #[error(transparent)]
    Invalid(#[from] partcc_core::Error),
}

fn io_err(path: &Path, source: io::Error) -> TableError {
    TableError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), TableError> {
    let tmp = path.with_extension("csv.tmp");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

pub fn write_labels(path: &Path, table: &LabelTable) -> Result<(), TableError> {
    let mut out = String::with_capacity(32 * (table.len() + 1));
    out.push_str(LABEL_HEADER);
    out.push('\n');
    for row in table.rows() {
        out.push_str(&format!("{},{},{}\n", row.item, row.identity, row.camera));
    }
    write_atomic(path, &out)
}

pub fn read_labels(path: &Path) -> Result<LabelTable, TableError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    check_header(path, lines.next(), LABEL_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_fields::<3>(path, i + 2, line)?;
        rows.push(LabelRow {
            item: parse(path, i + 2, fields[0], "item")?,
            identity: parse(path, i + 2, fields[1], "identity")?,
            camera: parse(path, i + 2, fields[2], "camera")?,
        });
    }
    Ok(LabelTable::new(rows)?)
}

/// Write a full partition, one row per item in index order.
pub fn write_partition(path: &Path, partition: &Partition) -> Result<(), TableError> {
    let mut out = String::with_capacity(16 * (partition.n_items() + 1));
    out.push_str(PARTITION_HEADER);
    out.push('\n');
    for (item, &cluster) in partition.assignment().iter().enumerate() {
        out.push_str(&format!("{item},{cluster}\n"));
    }
    write_atomic(path, &out)
}

/// Write a cluster assignment over a subset of items (pseudo-labels).
pub fn write_partition_subset(
    path: &Path,
    items: &[usize],
    clusters: &[u32],
) -> Result<(), TableError> {
    let mut out = String::with_capacity(16 * (items.len() + 1));
    out.push_str(PARTITION_HEADER);
    out.push('\n');
    for (&item, &cluster) in items.iter().zip(clusters.iter()) {
        out.push_str(&format!("{item},{cluster}\n"));
    }
    write_atomic(path, &out)
}

/// Read a full partition. Items may appear in any order but must cover
/// `0..n` exactly once; cluster ids are relabeled densely in item order.
pub fn read_partition(path: &Path) -> Result<Partition, TableError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    check_header(path, lines.next(), PARTITION_HEADER)?;
    let mut pairs: Vec<(usize, u64)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_fields::<2>(path, i + 2, line)?;
        pairs.push((
            parse(path, i + 2, fields[0], "item")?,
            parse(path, i + 2, fields[1], "cluster")?,
        ));
    }
    pairs.sort_by_key(|&(item, _)| item);
    let n = pairs.len();
    for (expected, &(item, _)) in pairs.iter().enumerate() {
        if item != expected {
            return Err(TableError::BadItemSet {
                path: path.to_path_buf(),
                n,
                problem: if pairs.iter().filter(|&&(i, _)| i == item).count() > 1 {
                    format!("item {item} appears more than once")
                } else {
                    format!("item {expected} is missing")
                },
            });
        }
    }
    let labels: Vec<u64> = pairs.into_iter().map(|(_, c)| c).collect();
    Ok(Partition::from_labels(&labels))
}

fn check_header(
    path: &Path,
    line: Option<&str>,
    expected: &'static str,
) -> Result<(), TableError> {
    match line {
        Some(found) if found.trim_end() == expected => Ok(()),
        other => Err(TableError::BadHeader {
            path: path.to_path_buf(),
            expected,
            found: other.unwrap_or("<empty file>").to_string(),
        }),
    }
}

fn split_fields<'a, const N: usize>(
    path: &Path,
    line_no: usize,
    line: &'a str,
) -> Result<[&'a str; N], TableError> {
    let mut fields = line.split(',');
    let mut out = [""; N];
    for slot in out.iter_mut() {
        *slot = fields.next().ok_or_else(|| TableError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {N} comma-separated fields"),
        })?;
    }
    if fields.next().is_some() {
        return Err(TableError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {N} comma-separated fields"),
        });
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    name: &str,
) -> Result<T, TableError> {
    field.trim().parse().map_err(|_| TableError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid {name} value {field:?}"),
    })
}
