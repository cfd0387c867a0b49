//! Dataset ingestion, chronological splits, global normalisation and
//! stride-1 sliding windows.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multivariate series stored row-major, `rows × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub name: String,
    pub timestamps: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl SeriesTable {
    pub fn new(name: impl Into<String>, columns: Vec<String>, timestamps: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let d = columns.len();
        if d == 0 || timestamps.is_empty() || values.len() != timestamps.len() * d {
            return Err(Error::Load {
                row: 0,
                column: 0,
                message: format!(
                    "table needs at least one row and column ({} rows, {d} columns, {} values)",
                    timestamps.len(),
                    values.len()
                ),
            });
        }
        Ok(Self {
            name: name.into(),
            timestamps,
            columns,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dims() + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(col).step_by(self.dims()).copied()
    }
}

/// Reads an ETT-style CSV: a `date` column followed by numeric columns.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, name)
}

pub fn read_csv<R: std::io::Read>(reader: R, name: String) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let load_err = |row: usize, column: usize, message: String| Error::Load { row, column, message };

    let header = rdr
        .headers()
        .map_err(|e| load_err(1, 0, e.to_string()))?
        .clone();
    if header.get(0).map(str::trim) != Some("date") {
        return Err(load_err(1, 1, "first column must be named `date`".into()));
    }
    if header.len() < 2 {
        return Err(load_err(1, 2, "no value columns".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // 1-based row numbers counting the header line.
        let row = i + 2;
        let rec = rec.map_err(|e| load_err(row, 0, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(load_err(row, rec.len() + 1, format!(
                "expected {} cells, found {}",
                header.len(),
                rec.len()
            )));
        }
        timestamps.push(rec[0].to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| load_err(row, c + 1, format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(load_err(row, c + 1, format!("missing or non-finite value `{cell}`")));
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(load_err(2, 0, "table has no data rows".into()));
    }
    SeriesTable::new(name, columns, timestamps, values)
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    /// 6:2:2, used for the ETT family.
    pub fn ett() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }

    /// 7:1:2, used for every other dataset.
    pub fn other() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }

    pub fn for_family(family: &str) -> Result<Self> {
        match family {
            "ett" => Ok(Self::ett()),
            "other" => Ok(Self::other()),
            f => Err(Error::config(format!("dataset family must be ett|other, got `{f}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0 && *f < 1.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("invalid split ratios {parts:?}")));
        }
        Ok(())
    }
}

/// Contiguous train | val | test row ranges with floor boundaries; rows
/// lost to flooring fall into the test segment.
pub fn split(rows: usize, spec: &SplitSpec) -> Result<[Range<usize>; 3]> {
    spec.validate()?;
    // The small bias keeps e.g. 10·(0.7+0.1) from flooring to 7.
    let boundary = |frac: f64| ((rows as f64) * frac + 1e-9).floor() as usize;
    let a = boundary(spec.train);
    let b = boundary(spec.train + spec.val).max(a);
    let ranges = [0..a, a..b, b..rows];
    if ranges.iter().any(|r| r.is_empty()) {
        return Err(Error::config(format!("split of {rows} rows leaves an empty segment: {ranges:?}")));
    }
    Ok(ranges)
}

/// Per-column affine normalisation fitted on the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const ZSCORE_EPS: f64 = 1e-8;

impl ZScore {
    pub fn fit(table: &SeriesTable, train: Range<usize>) -> Result<Self> {
        if train.len() < 2 || train.end > table.rows() {
            return Err(Error::config(format!("degenerate training range {train:?}")));
        }
        let d = table.dims();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for r in train.clone() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += table.get(r, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in train {
            for (c, v) in var.iter_mut().enumerate() {
                let e = table.get(r, c) - mean[c];
                *v += e * e;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, table: &SeriesTable) -> SeriesTable {
        let mut out = table.clone();
        let d = table.dims();
        for (i, v) in out.values.iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.mean[c]) / (self.std[c] + ZSCORE_EPS);
        }
        out
    }

    pub fn inverse(&self, table: &SeriesTable) -> SeriesTable {
        let mut out = table.clone();
        let d = table.dims();
        for (i, v) in out.values.iter_mut().enumerate() {
            let c = i % d;
            *v = *v * (self.std[c] + ZSCORE_EPS) + self.mean[c];
        }
        out
    }
}

/// A batch of windows in channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `batch × d × L`
    pub inputs: Tensor,
    /// `batch × d × P`
    pub targets: Tensor,
    /// Absolute row index of each window's first input step.
    pub origins: Vec<usize>,
}

/// All stride-1 windows of one split segment.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    table: &'a SeriesTable,
    segment: Range<usize>,
    lookback: usize,
    horizon: usize,
}

impl<'a> Windows<'a> {
    pub fn new(table: &'a SeriesTable, segment: Range<usize>, lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::config("lookback and horizon must be positive"));
        }
        if segment.end > table.rows() || segment.len() < lookback + horizon {
            return Err(Error::config(format!(
                "segment {segment:?} is too short for lookback {lookback} + horizon {horizon}"
            )));
        }
        Ok(Self {
            table,
            segment,
            lookback,
            horizon,
        })
    }

    /// `seg_len - L - P + 1`.
    pub fn len(&self) -> usize {
        self.segment.len() - self.lookback - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self, index: usize) -> usize {
        self.segment.start + index
    }

    /// Gathers the windows with the given indices (relative to the segment).
    pub fn batch(&self, indices: &[usize]) -> Result<WindowBatch> {
        let d = self.table.dims();
        let (l, p) = (self.lookback, self.horizon);
        let mut inputs = Vec::with_capacity(indices.len() * d * l);
        let mut targets = Vec::with_capacity(indices.len() * d * p);
        let mut origins = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("window {i} out of range 0..{}", self.len())));
            }
            let o = self.origin(i);
            for c in 0..d {
                inputs.extend((o..o + l).map(|r| self.table.get(r, c)));
                targets.extend((o + l..o + l + p).map(|r| self.table.get(r, c)));
            }
            origins.push(o);
        }
        let b = indices.len();
        Ok(WindowBatch {
            inputs: Tensor::new(vec![b, d, l], inputs)?,
            targets: Tensor::new(vec![b, d, p], targets)?,
            origins,
        })
    }

    /// Windows in order, `batch_size` at a time (the last batch may be short).
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Result<WindowBatch>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let bs = batch_size.max(1);
        (0..idx.len().div_ceil(bs)).map(move |k| {
            let end = ((k + 1) * bs).min(idx.len());
            self.batch(&idx[k * bs..end])
        })
    }
}

/// Normalised table plus its three segments.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: SeriesTable,
    pub zscore: ZScore,
    pub ranges: [Range<usize>; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Segment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Segment::Train),
            "val" => Ok(Segment::Val),
            "test" => Ok(Segment::Test),
            other => Err(Error::config(format!("split must be val|test, got `{other}`"))),
        }
    }

    fn index(self) -> usize {
        match self {
            Segment::Train => 0,
            Segment::Val => 1,
            Segment::Test => 2,
        }
    }
}

impl Dataset {
    /// Splits `raw` and z-scores every column with training statistics.
    pub fn prepare(raw: &SeriesTable, spec: &SplitSpec) -> Result<Self> {
        let ranges = split(raw.rows(), spec)?;
        let zscore = ZScore::fit(raw, ranges[0].clone())?;
        Ok(Self {
            table: zscore.transform(raw),
            zscore,
            ranges,
        })
    }

    pub fn windows(&self, seg: Segment, lookback: usize, horizon: usize) -> Result<Windows<'_>> {
        Windows::new(&self.table, self.ranges[seg.index()].clone(), lookback, horizon)
    }
}

/// `sin(2πt/period) + slope·t` for every column, `t = 0..rows`, with a
/// per-column phase shift.
pub fn synthetic_table(rows: usize, dims: usize, period: f64, slope: f64) -> SeriesTable {
    let mut values = Vec::with_capacity(rows * dims);
    for t in 0..rows {
        for c in 0..dims {
            let phase = c as f64 * 0.7;
            values.push((2.0 * std::f64::consts::PI * t as f64 / period + phase).sin() + slope * t as f64);
        }
    }
    let timestamps = (0..rows).map(|t| format!("t{t}")).collect();
    let columns = (0..dims).map(|c| format!("v{c}")).collect();
    SeriesTable::new("synthetic", columns, timestamps, values).expect("non-empty synthetic table")
}

/// Writes a table in the layout accepted by [`load_csv`].
pub fn write_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    let mut header = vec!["date".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for r in 0..table.rows() {
        let mut rec = vec![table.timestamps[r].clone()];
        rec.extend((0..table.dims()).map(|c| format!("{:e}", table.get(r, c))));
        w.write_record(&rec).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: usize, d: usize) -> SeriesTable {
        let values = (0..rows * d).map(|i| i as f64).collect();
        SeriesTable::new(
            "t",
            (0..d).map(|c| format!("c{c}")).collect(),
            (0..rows).map(|r| r.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn csv_layout_and_errors() {
        let ok = "date,HUFL,OT\n2016-07-01 00:00:00,1.5,2\n2016-07-01 01:00:00,3,4\n2016-07-01 02:00:00,5,6e-1\n";
        let t = read_csv(ok.as_bytes(), "x".into()).unwrap();
        assert_eq!((t.rows(), t.dims()), (3, 2));
        assert_eq!(t.get(2, 1), 0.6);

        let nan = "date,a,b\nx,1,2\ny,NaN,3\n";
        match read_csv(nan.as_bytes(), "x".into()) {
            Err(Error::Load { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let empty_cell = "date,a\nx,\n";
        assert!(matches!(read_csv(empty_cell.as_bytes(), "x".into()), Err(Error::Load { .. })));
        let no_date = "time,a\nx,1\n";
        assert!(matches!(read_csv(no_date.as_bytes(), "x".into()), Err(Error::Load { .. })));
        assert!(matches!(read_csv("date,a\n".as_bytes(), "x".into()), Err(Error::Load { .. })));
        assert!(matches!(load_csv("/definitely/not/here.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split(100, &SplitSpec::ett()).unwrap(), [0..60, 60..80, 80..100]);
        assert_eq!(split(101, &SplitSpec::ett()).unwrap(), [0..60, 60..80, 80..101]);
        assert_eq!(split(10, &SplitSpec::other()).unwrap(), [0..7, 7..8, 8..10]);
        assert!(split(3, &SplitSpec::other()).is_err());
    }

    #[test]
    fn zscore_shares_train_statistics() {
        let mut t = table(6, 1);
        t.values = vec![1.0, 2.0, 3.0, 11.0, 12.0, 13.0];
        let z = ZScore::fit(&t, 0..3).unwrap();
        assert_eq!(z.mean, vec![2.0]);
        let n = z.transform(&t);
        assert!(n.values[..3].iter().sum::<f64>().abs() < 1e-12);
        let val_mean = n.values[3..].iter().sum::<f64>() / 3.0;
        assert!((val_mean - 10.0 / (z.std[0] + ZSCORE_EPS)).abs() < 1e-12);
        let back = z.inverse(&n);
        for (a, b) in back.values.iter().zip(&t.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zscore_ignores_non_train_rows() {
        let t = table(20, 2);
        let before = ZScore::fit(&t, 0..12).unwrap();
        let mut m = t.clone();
        for v in &mut m.values[24..] {
            *v = -1e6;
        }
        assert_eq!(ZScore::fit(&m, 0..12).unwrap(), before);
    }

    #[test]
    fn window_examples() {
        let t = table(10, 1);
        let w = Windows::new(&t, 0..10, 4, 2).unwrap();
        assert_eq!(w.len(), 5);
        let b = w.batch(&[0]).unwrap();
        assert_eq!(b.inputs.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.targets.data(), &[4.0, 5.0]);
        assert_eq!(Windows::new(&t, 0..6, 4, 2).unwrap().len(), 1);
        assert!(Windows::new(&t, 0..5, 4, 2).is_err());
        let sizes: Vec<usize> = w.batches(2).map(|b| b.unwrap().origins.len()).collect();
        assert_eq!(sizes, [2, 2, 1]);
    }

    #[test]
    fn channel_major_layout() {
        let t = table(8, 2);
        let w = Windows::new(&t, 2..8, 3, 1).unwrap();
        let b = w.batch(&[1]).unwrap();
        // origin row 3; column 0 values are 2·r, column 1 values 2·r + 1
        assert_eq!(b.inputs.data(), &[6.0, 8.0, 10.0, 7.0, 9.0, 11.0]);
        assert_eq!(b.targets.data(), &[12.0, 13.0]);
        assert_eq!(b.origins, vec![3]);
    }

    #[test]
    fn synthetic_round_trips_through_csv() {
        let t = synthetic_table(30, 2, 24.0, 0.01);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&t, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.values, t.values);
        assert_eq!(back.columns, t.columns);
    }

    proptest! {
        #[test]
        fn windows_stay_inside_segments(rows in 40usize..400, l in 1usize..8, p in 1usize..8, ett in any::<bool>()) {
            let spec = if ett { SplitSpec::ett() } else { SplitSpec::other() };
            let t = table(rows, 1);
            let ranges = split(rows, &spec).unwrap();
            prop_assert_eq!(ranges[0].start, 0);
            prop_assert_eq!(ranges[2].end, rows);
            prop_assert_eq!(ranges[0].end, ranges[1].start);
            prop_assert_eq!(ranges[1].end, ranges[2].start);
            for seg in ranges {
                if let Ok(w) = Windows::new(&t, seg.clone(), l, p) {
                    prop_assert_eq!(w.len(), seg.len() - l - p + 1);
                    let origins: Vec<usize> = (0..w.len()).map(|i| w.origin(i)).collect();
                    prop_assert_eq!(origins.first().copied(), Some(seg.start));
                    for o in origins {
                        prop_assert!(o >= seg.start && o + l + p <= seg.end);
                    }
                }
            }
        }
    }
}
