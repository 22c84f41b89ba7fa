//! CSV ingestion of functional datasets and lossless tabular output.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Curves, FunctionalData};
use crate::error::{invalid, Result, SlosError};

/// Decimal with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Which columns of an input file hold the response and sample labels.
/// Every other column header must be a numeric grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvLayout {
    pub response: String,
    pub id: Option<String>,
    /// Defaults to the span of the grid.
    pub domain: Option<(f64, f64)>,
}

impl CsvLayout {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            id: None,
            domain: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_domain(mut self, start: f64, end: f64) -> Self {
        self.domain = Some((start, end));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub data: FunctionalData,
    pub labels: Option<Vec<String>>,
    pub response_name: String,
}

impl FunctionalDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        self.data.curves.grid()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.data.curves.domain()
    }
}

fn parse_error(row: usize, column: usize, detail: impl Into<String>) -> SlosError {
    SlosError::Parse {
        row,
        column,
        detail: detail.into(),
    }
}

fn parse_number(text: &str, row: usize, column: usize) -> Result<f64> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(parse_error(row, column, "missing value"));
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(row, column, format!("not a finite number: {t:?}"))),
    }
}

/// Reads a dataset from CSV. Rows and columns in errors are 1-based, with
/// the header on row 1.
pub fn load_csv(path: impl AsRef<Path>, layout: &CsvLayout) -> Result<FunctionalDataset> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_csv(&text, layout)
}

pub fn parse_csv(text: &str, layout: &CsvLayout) -> Result<FunctionalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_error(1, 1, "file is empty")),
    };

    let mut response_col = None;
    let mut id_col = None;
    let mut grid_cols = Vec::new();
    let mut grid = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if name == layout.response {
            response_col = Some(c);
        } else if layout.id.as_deref() == Some(name) {
            id_col = Some(c);
        } else {
            match name.parse::<f64>() {
                Ok(t) if t.is_finite() => {
                    grid_cols.push(c);
                    grid.push(t);
                }
                _ => return Err(parse_error(1, c + 1, format!("grid header {name:?} is not numeric"))),
            }
        }
    }
    let response_col =
        response_col.ok_or_else(|| parse_error(1, 1, format!("no response column named {:?}", layout.response)))?;
    if let (Some(id), None) = (&layout.id, id_col) {
        return Err(parse_error(1, 1, format!("no id column named {id:?}")));
    }
    if grid.is_empty() {
        return Err(parse_error(1, 1, "no covariate columns"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(parse_error(1, 1, "grid header must be strictly increasing"));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut responses = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in records.enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != header.len() {
            return Err(parse_error(
                row,
                record.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for &c in &grid_cols {
            rows.push(parse_number(&record[c], row, c + 1)?);
        }
        responses.push(parse_number(&record[response_col], row, response_col + 1)?);
        if let Some(c) = id_col {
            labels.push(record[c].to_string());
        }
    }
    let n = responses.len();
    if n < 2 {
        return Err(parse_error(n + 2, 1, format!("need at least two samples, found {n}")));
    }
    let k = grid.len();
    let values = DMatrix::from_row_slice(n, k, &rows);
    let domain = layout.domain.unwrap_or((grid[0], grid[k - 1]));
    let curves = Curves::new(grid, domain, values)?;
    let data = FunctionalData::new(curves, DVector::from_vec(responses))?;
    Ok(FunctionalDataset {
        data,
        labels: id_col.map(|_| labels),
        response_name: layout.response.clone(),
    })
}

/// Writes a dataset in the layout `load_csv` reads.
pub fn write_dataset<W: Write>(dataset: &FunctionalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    if dataset.labels.is_some() {
        header.push("id".to_string());
    }
    header.push(dataset.response_name.clone());
    header.extend(dataset.grid().iter().map(|&t| fmt_f64(t)));
    w.write_record(&header)?;
    let x = dataset.data.curves.values();
    for i in 0..dataset.len() {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(l) = &dataset.labels {
            rec.push(l[i].clone());
        }
        rec.push(fmt_f64(dataset.data.responses[i]));
        rec.extend(x.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A rectangular table of already-formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Writes CSV, optionally preceded by a `#` comment line.
    pub fn write<W: Write>(&self, mut writer: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let file = BufWriter::new(File::create(path.as_ref())?);
        self.write(file, comment)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(File::open(path.as_ref())?)
    }

    pub fn column(&self, name: &str) -> Result<Vec<String>> {
        let c = match self.header.iter().position(|h| h == name) {
            Some(c) => c,
            None => return invalid(format!("no column {name:?}")),
        };
        Ok(self.rows.iter().map(|r| r[c].clone()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SlosError::InvalidArgument(format!("no column {name:?}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>()
                    .map_err(|_| parse_error(i + 2, c + 1, format!("not a number: {:?}", r[c])))
            })
            .collect()
    }
}
