//! Tabular data, quantile normalization and sliding windows.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Shape(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Shape("columns differ in length".into()));
            }
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!("duplicate column `{n}`")));
            }
        }
        Ok(Self { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.into()))
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Table {
        Table {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }

    /// Reads a headered CSV. Every column in `required` must be present;
    /// all columns must be numeric.
    pub fn read_csv(path: impl AsRef<Path>, required: &[&str]) -> Result<Table> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, required)
    }

    pub fn parse_csv(text: &str, required: &[&str]) -> Result<Table> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("CSV file has no header".into()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        for r in required {
            if !names.iter().any(|n| n == r) {
                return Err(Error::MissingColumn(r.to_string()));
            }
        }
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            for (c, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: names[c].clone(),
                    value: cell.to_string(),
                })?;
                columns[c].push(v);
            }
        }
        Table::new(names, columns)
    }

    /// Writes a headered CSV with shortest round-trip float formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.names)?;
        let mut record = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows() {
            record.clear();
            record.extend(self.columns.iter().map(|c| format!("{:?}", c[r])));
            w.write_record(&record)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ASCII output"))
    }
}

/// Maps a column onto `(0, 1)` through its interpolated empirical CDF with
/// plotting positions `(i - 0.5) / n`. Tied values share the mean position
/// of their block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Distinct fit values, ascending.
    references: Vec<f64>,
    /// CDF position of each distinct value, strictly ascending.
    positions: Vec<f64>,
    n_fit: usize,
}

impl QuantileTransform {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("cannot fit a quantile transform to no values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite value in fit data".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let nf = n as f64;
        let mut references = Vec::new();
        let mut positions = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // positions (k + 0.5)/n for k in i..=j, averaged
            let mean_rank = (i + j) as f64 / 2.0;
            references.push(sorted[i]);
            positions.push((mean_rank + 0.5) / nf);
            i = j + 1;
        }
        Ok(Self {
            references,
            positions,
            n_fit: n,
        })
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    /// Fewer than two distinct values: every input maps to the single
    /// position and the inverse returns the single value.
    pub fn is_constant(&self) -> bool {
        self.references.len() < 2
    }

    pub fn references(&self) -> &[f64] {
        &self.references
    }

    pub fn transform(&self, v: f64) -> f64 {
        let (r, p) = (&self.references, &self.positions);
        let last = r.len() - 1;
        if v <= r[0] || self.is_constant() {
            return p[0];
        }
        if v >= r[last] {
            return p[last];
        }
        let i = r.partition_point(|&x| x <= v);
        if r[i - 1] == v {
            return p[i - 1];
        }
        let t = (v - r[i - 1]) / (r[i] - r[i - 1]);
        p[i - 1] + t * (p[i] - p[i - 1])
    }

    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!(
                "inverse transform needs u in [0, 1], got {u}"
            )));
        }
        let (r, p) = (&self.references, &self.positions);
        let last = r.len() - 1;
        if u <= p[0] || self.is_constant() {
            return Ok(r[0]);
        }
        if u >= p[last] {
            return Ok(r[last]);
        }
        let i = p.partition_point(|&x| x <= u);
        if p[i - 1] == u {
            return Ok(r[i - 1]);
        }
        let t = (u - p[i - 1]) / (p[i] - p[i - 1]);
        Ok(r[i - 1] + t * (r[i] - r[i - 1]))
    }

    pub fn transform_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.transform(v)).collect()
    }

    /// Inverse transform, clamping `u` into `[0, 1]` first.
    pub fn inverse_clamped(&self, u: f64) -> f64 {
        self.inverse(u.clamp(0.0, 1.0)).expect("clamped into range")
    }
}

/// One quantile transform per named column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub names: Vec<String>,
    pub transforms: Vec<QuantileTransform>,
}

impl Normalizer {
    /// Fits each listed column on the rows in `fit_rows` only.
    pub fn fit(table: &Table, names: &[String], fit_rows: Range<usize>) -> Result<Self> {
        if fit_rows.end > table.n_rows() || fit_rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fit rows {fit_rows:?} outside a table of {} rows",
                table.n_rows()
            )));
        }
        let transforms = names
            .iter()
            .map(|n| QuantileTransform::fit(&table.column(n)?[fit_rows.clone()]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: names.to_vec(),
            transforms,
        })
    }

    pub fn get(&self, name: &str) -> Result<&QuantileTransform> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.transforms[i])
            .ok_or_else(|| Error::MissingColumn(name.into()))
    }

    /// Transforms the fitted columns, leaving any others untouched.
    pub fn apply(&self, table: &Table) -> Result<Table> {
        let mut columns = table.columns().to_vec();
        for (name, t) in self.names.iter().zip(&self.transforms) {
            let i = table
                .names()
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?;
            columns[i] = t.transform_all(&columns[i]);
        }
        Table::new(table.names().to_vec(), columns)
    }
}

/// Sliding-window samples. Row `s` of `inputs` holds, for each input
/// variable in `input_names` order, its values at `t-W+1 ..= t` where
/// `t = timestamps[s]`; `targets[s]` is the target at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub input_names: Vec<String>,
    pub target_name: String,
    pub window: usize,
    pub inputs: DMatrix<f64>,
    pub targets: Vec<f64>,
    pub timestamps: Vec<usize>,
    pub normalizer: Option<Normalizer>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_names.len() * self.window
    }

    pub fn target_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.targets)
    }

    /// Window of sample `s` as an `n_inputs × window` matrix.
    pub fn window_matrix(&self, s: usize) -> DMatrix<f64> {
        let row: Vec<f64> = self.inputs.row(s).iter().copied().collect();
        DMatrix::from_row_slice(self.input_names.len(), self.window, &row)
    }

    pub fn subset(&self, range: Range<usize>) -> WindowedDataset {
        WindowedDataset {
            input_names: self.input_names.clone(),
            target_name: self.target_name.clone(),
            window: self.window,
            inputs: self.inputs.rows(range.start, range.len()).into_owned(),
            targets: self.targets[range.clone()].to_vec(),
            timestamps: self.timestamps[range].to_vec(),
            normalizer: self.normalizer.clone(),
        }
    }

    /// Holds out the final `fraction` of samples, keeping time order.
    /// Both parts are non-empty.
    pub fn split_tail(&self, fraction: f64) -> Result<(WindowedDataset, WindowedDataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must be in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "need at least two samples to hold some out".into(),
            ));
        }
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let cut = n - held;
        Ok((self.subset(0..cut), self.subset(cut..n)))
    }

    /// Splits by timestamp: samples ending before `t` and the rest.
    pub fn split_at_time(&self, t: usize) -> (WindowedDataset, WindowedDataset) {
        let cut = self.timestamps.partition_point(|&s| s < t);
        (self.subset(0..cut), self.subset(cut..self.len()))
    }
}

/// Builds one sample per `t` in `W-1 ..= T-1` from the (already
/// normalized) table.
pub fn make_windows(
    table: &Table,
    input_names: &[String],
    target_name: &str,
    window: usize,
) -> Result<WindowedDataset> {
    if window == 0 {
        return Err(Error::InvalidArgument("window size must be at least 1".into()));
    }
    if input_names.is_empty() {
        return Err(Error::InvalidArgument("no input columns".into()));
    }
    let inputs: Vec<&[f64]> = input_names
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<_>>()?;
    let target = table.column(target_name)?;
    let t_len = table.n_rows();
    if t_len < window {
        return Err(Error::InvalidArgument(format!(
            "series of length {t_len} is shorter than the window {window}"
        )));
    }
    let n = t_len - window + 1;
    let width = input_names.len() * window;
    let mut data = Vec::with_capacity(n * width);
    for s in 0..n {
        for col in &inputs {
            data.extend_from_slice(&col[s..s + window]);
        }
    }
    Ok(WindowedDataset {
        input_names: input_names.to_vec(),
        target_name: target_name.into(),
        window,
        inputs: DMatrix::from_row_slice(n, width, &data),
        targets: target[window - 1..].to_vec(),
        timestamps: (window - 1..t_len).collect(),
        normalizer: None,
    })
}

/// Train and test windows from one table. Normalizers (inputs and target)
/// are fitted on rows `0..train_end` only and applied unchanged to every
/// row. Training samples end before `train_end`, test samples end at or
/// after `test_start`; a window may reach back across either boundary for
/// its history.
pub fn prepare_split(
    table: &Table,
    input_names: &[String],
    target_name: &str,
    window: usize,
    train_end: usize,
    test_start: usize,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if train_end > test_start || test_start >= table.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "need train_end <= test_start < {} rows, got {train_end} and {test_start}",
            table.n_rows()
        )));
    }
    let mut names = input_names.to_vec();
    names.push(target_name.to_string());
    let normalizer = Normalizer::fit(table, &names, 0..train_end)?;
    let normalized = normalizer.apply(table)?;
    let mut all = make_windows(&normalized, input_names, target_name, window)?;
    all.normalizer = Some(normalizer);
    let (train, _) = all.split_at_time(train_end);
    let (_, test) = all.split_at_time(test_start);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "window size leaves no training or test samples".into(),
        ));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn transform_examples() {
        let t = QuantileTransform::fit(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(t.transform(2.0), 0.5);
        assert_eq!(t.transform(1.0), 1.0 / 6.0);
        assert_eq!(t.transform(-10.0), 1.0 / 6.0);
        assert_eq!(t.transform(99.0), 5.0 / 6.0);
        assert_eq!(t.inverse(0.5).unwrap(), 2.0);
        assert_eq!(t.inverse(0.0).unwrap(), 1.0);
        assert_eq!(t.inverse(1.0).unwrap(), 3.0);
        assert!(t.inverse(1.5).is_err());
        assert!(t.inverse(-0.1).is_err());
    }

    #[test]
    fn ties_share_mean_position() {
        let t = QuantileTransform::fit(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        // positions 1/8, 3/8, 5/8, 7/8; tied pair averages to 1/2
        assert_eq!(t.transform(2.0), 0.5);
        assert_eq!(t.references(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_column() {
        let t = QuantileTransform::fit(&[4.0, 4.0]).unwrap();
        assert!(t.is_constant());
        assert_eq!(t.transform(-1.0), 0.5);
        assert_eq!(t.transform(7.0), 0.5);
        assert_eq!(t.inverse(0.9).unwrap(), 4.0);
        assert!(QuantileTransform::fit(&[]).is_err());
    }

    #[test]
    fn window_counts() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let table = Table::new(names(&["a", "y"]), vec![t.clone(), t]).unwrap();
        let ds = make_windows(&table, &names(&["a"]), "y", 1).unwrap();
        assert_eq!(ds.len(), 10);
        let ds = make_windows(&table, &names(&["a"]), "y", 5).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.inputs.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.targets[0], 4.0);
        assert_eq!(ds.timestamps[0], 4);
        assert!(make_windows(&table, &names(&["a"]), "y", 11).is_err());
        assert!(matches!(
            make_windows(&table, &names(&["b"]), "y", 1),
            Err(Error::MissingColumn(c)) if c == "b"
        ));
    }

    #[test]
    fn window_rows_are_input_major() {
        let table = Table::new(
            names(&["a", "b", "y"]),
            vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0], vec![0.0; 3]],
        )
        .unwrap();
        let ds = make_windows(&table, &names(&["b", "a"]), "y", 2).unwrap();
        assert_eq!(ds.inputs.row(1).iter().copied().collect::<Vec<_>>(), vec![20.0, 30.0, 2.0, 3.0]);
        assert_eq!(ds.window_matrix(1), DMatrix::from_row_slice(2, 2, &[20.0, 30.0, 2.0, 3.0]));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(Table::parse_csv("", &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            Table::parse_csv("a,b\n1,2\n", &["c"]),
            Err(Error::MissingColumn(c)) if c == "c"
        ));
        match Table::parse_csv("a,b\n1,2\n3,x\n", &[]) {
            Err(Error::NonNumeric { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "b", "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tail_split_sizes() {
        let t: Vec<f64> = (0..20).map(f64::from).collect();
        let table = Table::new(names(&["a", "y"]), vec![t.clone(), t]).unwrap();
        let ds = make_windows(&table, &names(&["a"]), "y", 1).unwrap();
        let (a, b) = ds.split_tail(0.1).unwrap();
        assert_eq!((a.len(), b.len()), (18, 2));
        assert_eq!(b.timestamps, vec![18, 19]);
    }
}
