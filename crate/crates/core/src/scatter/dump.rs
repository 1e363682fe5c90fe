//! Feature dump: raw little-endian f32 rows plus a text header sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, ShdlError};

/// One named map inside a flattened feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderEntry {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub descriptor: String,
}

/// Flattening order of a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureHeader {
    pub entries: Vec<HeaderEntry>,
}

impl FeatureHeader {
    pub fn dim(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.rows * e.cols)
    }

    pub fn push(&mut self, descriptor: String, rows: usize, cols: usize) {
        let offset = self.dim();
        self.entries.push(HeaderEntry {
            offset,
            rows,
            cols,
            descriptor,
        });
    }

    pub fn extend(&mut self, other: &FeatureHeader) {
        for e in &other.entries {
            self.push(e.descriptor.clone(), e.rows, e.cols);
        }
    }
}

/// Contents of a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub header: FeatureHeader,
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

fn sidecar(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

const MAGIC: &str = "shdl-features 1";

/// Writes `<prefix>.f32` and `<prefix>.hdr`. `labels` is empty or one per row.
pub fn write_feature_dump(
    prefix: &Path,
    header: &FeatureHeader,
    rows: &[Vec<f32>],
    labels: &[usize],
) -> Result<()> {
    let dim = header.dim();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(ShdlError::Dimension(format!(
            "row {i} has {} values, header declares {dim}",
            r.len()
        )));
    }
    if !labels.is_empty() && labels.len() != rows.len() {
        return Err(ShdlError::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.len()
        )));
    }
    let mut data = BufWriter::new(fs::File::create(sidecar(prefix, ".f32"))?);
    for r in rows {
        for v in r {
            data.write_all(&v.to_le_bytes())?;
        }
    }
    data.flush()?;

    let mut hdr = BufWriter::new(fs::File::create(sidecar(prefix, ".hdr"))?);
    writeln!(hdr, "{MAGIC}")?;
    writeln!(hdr, "count {}", rows.len())?;
    writeln!(hdr, "dim {dim}")?;
    let labels: Vec<String> = labels.iter().map(usize::to_string).collect();
    writeln!(hdr, "labels {}", labels.join(" "))?;
    for e in &header.entries {
        writeln!(hdr, "path {} {}x{} {}", e.offset, e.rows, e.cols, e.descriptor)?;
    }
    hdr.flush()?;
    Ok(())
}

fn bad(line: usize, message: impl Into<String>) -> ShdlError {
    ShdlError::Format {
        offset: line as u64,
        message: format!("header line {line}: {}", message.into()),
    }
}

/// Reads a dump written by [`write_feature_dump`].
pub fn read_feature_dump(prefix: &Path) -> Result<FeatureDump> {
    let text = fs::read_to_string(sidecar(prefix, ".hdr"))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, format!("missing {what}")));

    let (n, magic) = next("magic")?;
    if magic != MAGIC {
        return Err(bad(n, "unrecognised magic"));
    }
    let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
            .map(str::to_owned)
            .ok_or_else(|| bad(n, format!("expected `{key}`")))
    };
    let count_line = next("count")?;
    let count: usize = field(count_line, "count")?
        .parse()
        .map_err(|_| bad(count_line.0, "bad count"))?;
    let dim_line = next("dim")?;
    let dim: usize = field(dim_line, "dim")?
        .parse()
        .map_err(|_| bad(dim_line.0, "bad dim"))?;
    let label_line = next("labels")?;
    let labels = field(label_line, "labels")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(label_line.0, "bad label")))
        .collect::<Result<Vec<usize>>>()?;

    let mut header = FeatureHeader::default();
    for (n, line) in lines {
        let mut parts = line.splitn(4, ' ');
        let (Some("path"), Some(off), Some(shape), Some(desc)) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(n, "malformed path entry"));
        };
        let (r, c) = shape.split_once('x').ok_or_else(|| bad(n, "malformed shape"))?;
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad number"));
        let (off, rows, cols) = (parse(off)?, parse(r)?, parse(c)?);
        if off != header.dim() {
            return Err(bad(n, format!("offset {off} does not follow {}", header.dim())));
        }
        header.push(desc.to_owned(), rows, cols);
    }
    if header.dim() != dim {
        return Err(bad(0, format!("paths cover {} values, dim says {dim}", header.dim())));
    }
    if !labels.is_empty() && labels.len() != count {
        return Err(bad(0, "label count mismatch"));
    }

    let bytes = fs::read(sidecar(prefix, ".f32"))?;
    if bytes.len() != count * dim * 4 {
        return Err(ShdlError::Format {
            offset: bytes.len() as u64,
            message: format!("expected {} bytes of f32 data", count * dim * 4),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let rows = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks(dim).map(<[f32]>::to_vec).collect()
    };
    Ok(FeatureDump {
        header,
        rows,
        labels,
    })
}
