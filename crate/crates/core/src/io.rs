//! File formats: data-matrix CSV with a JSON descriptor, plain numeric CSV
//! tables, and JSON encodings for matrices.
//!
//! Numbers are written in plain decimal with 17 significant digits and
//! trailing zeros trimmed, so every `f64` round-trips exactly and repeated
//! runs produce byte-identical files.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, DataMode, Layout};
use crate::error::{DpcError, Result};

/// Plain-decimal rendering with 17 significant digits.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let (int_part, frac_part) = if exp >= 0 {
        let split = (exp + 1) as usize;
        if split >= digits.len() {
            (format!("{}{}", digits, "0".repeat(split - digits.len())), String::new())
        } else {
            (digits[..split].to_string(), digits[split..].to_string())
        }
    } else {
        (
            "0".to_string(),
            format!("{}{}", "0".repeat((-exp - 1) as usize), digits),
        )
    };
    let frac = frac_part.trim_end_matches('0');
    let mut out = String::with_capacity(int_part.len() + frac.len() + 2);
    if negative {
        out.push('-');
    }
    out.push_str(&int_part);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out
}

pub fn parse_number(s: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t
            .parse::<f64>()
            .map_err(|_| DpcError::Parse(format!("not a number: {t:?}"))),
    }
}

/// Row-major `{rows, cols, data}` encoding for `DMatrix` fields.
pub mod matrix_json {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    pub struct Encoded {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    pub fn encode(m: &DMatrix<f64>) -> Encoded {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        Encoded {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn decode(e: Encoded) -> Result<DMatrix<f64>, String> {
        if e.rows * e.cols != e.data.len() {
            return Err(format!(
                "matrix of shape {}x{} needs {} entries, got {}",
                e.rows,
                e.cols,
                e.rows * e.cols,
                e.data.len()
            ));
        }
        Ok(DMatrix::from_row_slice(e.rows, e.cols, &e.data))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        encode(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        decode(Encoded::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Plain JSON array encoding for `DVector` fields.
pub mod vector_json {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Metadata stored next to a data CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataDescriptor {
    pub csv: String,
    pub layout: Layout,
    pub ell: usize,
    pub lag_hint: Option<usize>,
    pub seed: Option<u64>,
}

/// `(role, block, row)` label of every row of `D`.
pub fn row_labels(layout: &Layout) -> Vec<(&'static str, usize, usize)> {
    let mut out = Vec::new();
    let mut push = |role: &'static str, steps: usize, dim: usize| {
        for k in 0..steps {
            for i in 0..dim {
                out.push((role, k, i));
            }
        }
    };
    match layout.mode {
        DataMode::Io => {
            push("u_p", layout.n_p, layout.m);
            push("y_p", layout.n_p, layout.p);
        }
        DataMode::StateSpace => push("x0", 1, layout.p),
    }
    push("u", layout.n_f, layout.m);
    push("y", layout.n_f, layout.p);
    out
}

pub fn write_data_csv<W: Write>(d: &DataMatrix, out: W) -> Result<()> {
    if d.has_ones_row() {
        return Err(DpcError::InvalidParameter(
            "augmented data matrices are not exported; save the original".into(),
        ));
    }
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["role".to_string(), "block".into(), "row".into()];
    header.extend((0..d.ell()).map(|j| format!("c{j}")));
    wtr.write_record(&header)?;
    let full = d.d();
    for (i, (role, block, row)) in row_labels(d.layout()).into_iter().enumerate() {
        let mut rec = vec![role.to_string(), block.to_string(), row.to_string()];
        rec.extend(full.row(i).iter().map(|&x| format_number(x)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_data_csv<R: Read>(input: R, layout: Layout) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "role" || &header[1] != "block" || &header[2] != "row" {
        return Err(DpcError::Parse(
            "data CSV header must start with role,block,row followed by data columns".into(),
        ));
    }
    let ell = header.len() - 3;
    let labels = row_labels(&layout);
    let mut full = DMatrix::zeros(labels.len(), ell);
    let mut count = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let Some(&(role, block, row)) = labels.get(i) else {
            return Err(DpcError::DimensionMismatch {
                context: "data CSV rows".into(),
                expected: labels.len(),
                found: i + 1,
            });
        };
        if &rec[0] != role || rec[1].trim() != block.to_string() || rec[2].trim() != row.to_string() {
            return Err(DpcError::Parse(format!(
                "row {}: expected label {role},{block},{row}, found {},{},{}",
                i + 1,
                &rec[0],
                &rec[1],
                &rec[2]
            )));
        }
        for j in 0..ell {
            full[(i, j)] = parse_number(&rec[3 + j])?;
        }
        count += 1;
    }
    if count != labels.len() {
        return Err(DpcError::DimensionMismatch {
            context: "data CSV rows".into(),
            expected: labels.len(),
            found: count,
        });
    }
    let (xi, u) = (layout.xi_dim(), layout.u_dim());
    let w = full.rows(0, xi).into_owned();
    let uu = full.rows(xi, u).into_owned();
    let y = full.rows(xi + u, layout.y_dim()).into_owned();
    DataMatrix::new(w, uu, y, layout)
}

/// Write `<stem>.csv` and `<stem>.json` into `dir`; returns the descriptor path.
pub fn save_data(d: &DataMatrix, dir: &Path, stem: &str, seed: Option<u64>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let csv_name = format!("{stem}.csv");
    let mut buf = Vec::new();
    write_data_csv(d, &mut buf)?;
    fs::write(dir.join(&csv_name), buf)?;
    let desc = DataDescriptor {
        csv: csv_name,
        layout: *d.layout(),
        ell: d.ell(),
        lag_hint: d.lag_hint(),
        seed,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &desc)?;
    Ok(path)
}

/// Load a data matrix from its JSON descriptor (CSV path resolved relative
/// to the descriptor).
pub fn load_data(descriptor: &Path) -> Result<(DataMatrix, DataDescriptor)> {
    let desc: DataDescriptor = serde_json::from_str(&fs::read_to_string(descriptor)?)?;
    let base = descriptor.parent().unwrap_or_else(|| Path::new("."));
    let file = fs::File::open(base.join(&desc.csv))?;
    let mut d = read_data_csv(file, desc.layout)?;
    if d.ell() != desc.ell {
        return Err(DpcError::DimensionMismatch {
            context: "data CSV columns".into(),
            expected: desc.ell,
            found: d.ell(),
        });
    }
    if let Some(lag) = desc.lag_hint {
        d = d.with_lag_hint(lag);
    }
    Ok((d, desc))
}

/// Read numbers from a CSV holding a single row or a single column.
/// A non-numeric first line is treated as a header.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.nrows() == 1 || m.ncols() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(DpcError::Parse(format!(
            "{}: expected a single row or column, found {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(parse_number).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(e) if i == 0 => {
                let _ = e;
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(DpcError::EmptyInput(format!("{} has no numeric rows", path.display())));
    }
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Numeric table with a header line.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(DpcError::DimensionMismatch {
                context: "table row".into(),
                expected: header.len(),
                found: r.len(),
            });
        }
        wtr.write_record(r.iter().map(|&x| format_number(x)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_table_file(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_table(&mut buf, header, rows)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
