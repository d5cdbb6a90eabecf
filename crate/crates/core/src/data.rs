//! Data containers, sample splitting, quantiles and break grids.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_SPLIT};

/// Observations `x` (n × p), an optional knockoff matrix of the same shape,
/// and the response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub x_knock: Option<DMatrix<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, x_knock: Option<DMatrix<f64>>, y: Vec<f64>) -> Result<Self> {
        let ds = Dataset { x, x_knock, y };
        validate(&ds)?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn knockoffs(&self) -> Result<&DMatrix<f64>> {
        self.x_knock.as_ref().ok_or(Error::MissingKnockoffs)
    }

    /// Restricts every component to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows.iter()),
            x_knock: self.x_knock.as_ref().map(|k| k.select_rows(rows.iter())),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Contiguous view of column `j` of a column-major matrix.
pub fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

fn check_finite(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { matrix: name, row: i, col: j });
        }
    }
    Ok(())
}

pub fn validate(ds: &Dataset) -> Result<()> {
    let (n, p) = ds.x.shape();
    if p == 0 {
        return Err(Error::ShapeMismatch("feature matrix has no columns".into()));
    }
    if ds.y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "x has {n} rows but y has length {}",
            ds.y.len()
        )));
    }
    if let Some(k) = &ds.x_knock {
        if k.shape() != (n, p) {
            return Err(Error::ShapeMismatch(format!(
                "x is {n}x{p} but knockoffs are {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
    }
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    check_finite(&ds.x, "x")?;
    if let Some(k) = &ds.x_knock {
        check_finite(k, "x_knock")?;
    }
    if let Some(i) = ds.y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { matrix: "y", row: i, col: 0 });
    }
    Ok(())
}

/// Nearest integer, ties to even. Used wherever a fraction of a sample size
/// is turned into a count.
pub fn nearest_int(v: f64) -> usize {
    v.round_ties_even().max(0.0) as usize
}

/// Partition of `0..n` into the rows used for the statistic and the rows
/// used for break/feature screening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSplit {
    pub idx_stat: Vec<usize>,
    pub idx_screen: Vec<usize>,
}

pub fn split_sample(n: usize, gamma0: f64, seed: u64) -> Result<SampleSplit> {
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::BadFraction(gamma0));
    }
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, got: n });
    }
    let n1 = nearest_int(gamma0 * n as f64).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, &[STREAM_SPLIT, n as u64]));
    let mut idx_stat = idx[..n1].to_vec();
    let mut idx_screen = idx[n1..].to_vec();
    idx_stat.sort_unstable();
    idx_screen.sort_unstable();
    Ok(SampleSplit { idx_stat, idx_screen })
}

/// Type-7 sample quantile (linear interpolation between order statistics).
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-feature break candidates, each list strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakGrid {
    pub candidates_per_feature: Vec<Vec<f64>>,
    pub r_count: usize,
}

impl BreakGrid {
    /// The same single break for every feature.
    pub fn constant(p: usize, a: f64) -> Self {
        BreakGrid { candidates_per_feature: vec![vec![a]; p], r_count: 1 }
    }

    /// The same predetermined candidate list for every feature.
    pub fn fixed(p: usize, candidates: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyGrid(0));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("break candidates must be strictly increasing".into()));
        }
        let r_count = candidates.len();
        Ok(BreakGrid { candidates_per_feature: vec![candidates; p], r_count })
    }

    pub fn feature(&self, l: usize) -> &[f64] {
        &self.candidates_per_feature[l]
    }
}

/// `r_count` evenly spaced candidates between the first and third quartiles
/// of each column. Columns whose quartiles coincide get the single candidate.
pub fn build_break_grid(screen_cols: &DMatrix<f64>, r_count: usize) -> Result<BreakGrid> {
    if r_count == 0 {
        return Err(Error::InvalidConfig("r_count must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(screen_cols.ncols());
    for l in 0..screen_cols.ncols() {
        let mut sorted = column(screen_cols, l).to_vec();
        if sorted.is_empty() {
            return Err(Error::EmptyColumn(l));
        }
        sorted.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&sorted, 0.25);
        let hi = quantile_sorted(&sorted, 0.75);
        if hi <= lo || r_count == 1 {
            out.push(vec![lo]);
            continue;
        }
        let step = (hi - lo) / (r_count - 1) as f64;
        let mut grid: Vec<f64> = (0..r_count).map(|r| lo + step * r as f64).collect();
        grid[r_count - 1] = hi;
        out.push(grid);
    }
    Ok(BreakGrid { candidates_per_feature: out, r_count })
}

/// Columns parsed from a data file: `x1..xp`, optionally `xk1..xkp`, optionally `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub x: DMatrix<f64>,
    pub x_knock: Option<DMatrix<f64>>,
    pub y: Option<Vec<f64>>,
}

impl CsvTable {
    pub fn into_dataset(self) -> Result<Dataset> {
        let y = self
            .y
            .ok_or_else(|| Error::Csv("missing response column `y`".into()))?;
        Dataset::new(self.x, self.x_knock, y)
    }
}

enum Col {
    X(usize),
    Xk(usize),
    Y,
}

fn parse_header(name: &str) -> Option<Col> {
    let idx = |s: &str| s.parse::<usize>().ok().filter(|&i| i >= 1 && !s.starts_with('0'));
    if name == "y" {
        Some(Col::Y)
    } else if let Some(rest) = name.strip_prefix("xk") {
        idx(rest).map(|i| Col::Xk(i - 1))
    } else if let Some(rest) = name.strip_prefix('x') {
        idx(rest).map(|i| Col::X(i - 1))
    } else {
        None
    }
}

/// Reads a comma-separated file with a header row. Feature columns must be
/// exactly `x1..xp`; knockoff columns, when present, exactly `xk1..xkp`.
pub fn read_csv<R: Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = Vec::with_capacity(headers.len());
    let (mut px, mut pk, mut has_y) = (0usize, 0usize, false);
    for h in headers.iter() {
        let c = parse_header(h.trim())
            .ok_or_else(|| Error::Csv(format!("unrecognized column name `{h}`")))?;
        match c {
            Col::X(i) => px = px.max(i + 1),
            Col::Xk(i) => pk = pk.max(i + 1),
            Col::Y if has_y => return Err(Error::Csv("duplicate column `y`".into())),
            Col::Y => has_y = true,
        }
        cols.push(c);
    }
    let nx = cols.iter().filter(|c| matches!(c, Col::X(_))).count();
    let nk = cols.iter().filter(|c| matches!(c, Col::Xk(_))).count();
    if px == 0 || nx != px {
        return Err(Error::Csv("feature columns must be exactly x1..xp".into()));
    }
    if nk != pk || (pk != 0 && pk != px) {
        return Err(Error::Csv("knockoff columns must be exactly xk1..xkp".into()));
    }

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ks: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut xrow = vec![0.0; px];
        let mut krow = vec![0.0; pk];
        for (c, field) in cols.iter().zip(rec.iter()) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Csv(format!("row {}: cannot parse `{field}` as a number", r + 1))
            })?;
            match *c {
                Col::X(i) => xrow[i] = v,
                Col::Xk(i) => krow[i] = v,
                Col::Y => ys.push(v),
            }
        }
        xs.push(xrow);
        ks.push(krow);
    }
    let n = xs.len();
    let x = DMatrix::from_fn(n, px, |i, j| xs[i][j]);
    let x_knock = (pk > 0).then(|| DMatrix::from_fn(n, pk, |i, j| ks[i][j]));
    Ok(CsvTable { x, x_knock, y: has_y.then_some(ys) })
}

/// Writes `x1..xp`, then `xk1..xkp` if present, then `y` if present.
pub fn write_csv<W: Write>(
    writer: W,
    x: &DMatrix<f64>,
    x_knock: Option<&DMatrix<f64>>,
    y: Option<&[f64]>,
) -> Result<()> {
    let (n, p) = x.shape();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if x_knock.is_some() {
        header.extend((1..=p).map(|j| format!("xk{j}")));
    }
    if y.is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec: Vec<String> = (0..p).map(|j| x[(i, j)].to_string()).collect();
        if let Some(k) = x_knock {
            rec.extend((0..p).map(|j| k[(i, j)].to_string()));
        }
        if let Some(y) = y {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Dataset {
        let x = DMatrix::from_row_slice(4, 2, &[1., 2., 3., 4., 5., 6., 7., 8.]);
        Dataset { x, x_knock: None, y: vec![1., 2., 3., 4.] }
    }

    #[test]
    fn validate_accepts_finite_data() {
        assert!(validate(&small()).is_ok());
    }

    #[test]
    fn validate_reports_nan_location() {
        let mut ds = small();
        ds.y[2] = f64::NAN;
        assert_eq!(
            validate(&ds),
            Err(Error::NonFiniteValue { matrix: "y", row: 2, col: 0 })
        );
        let mut ds = small();
        ds.x[(3, 1)] = f64::INFINITY;
        assert_eq!(
            validate(&ds),
            Err(Error::NonFiniteValue { matrix: "x", row: 3, col: 1 })
        );
    }

    #[test]
    fn validate_rejects_knockoff_shape() {
        let mut ds = small();
        ds.x_knock = Some(DMatrix::zeros(4, 3));
        assert!(matches!(validate(&ds), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn validate_rejects_single_row() {
        let ds = Dataset { x: DMatrix::zeros(1, 2), x_knock: None, y: vec![0.0] };
        assert_eq!(validate(&ds), Err(Error::TooFewRows { needed: 2, got: 1 }));
    }

    #[test]
    fn split_sizes() {
        let s = split_sample(700, 1.0 / 3.0, 1).unwrap();
        assert_eq!(s.idx_stat.len(), 233);
        assert_eq!(s.idx_screen.len(), 467);
        let s = split_sample(6, 0.5, 1).unwrap();
        assert_eq!((s.idx_stat.len(), s.idx_screen.len()), (3, 3));
        assert_eq!(split_sample(500, 2.0 / 3.0, 9).unwrap().idx_stat.len(), 333);
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        assert_eq!(split_sample(50, 0.5, 3).unwrap(), split_sample(50, 0.5, 3).unwrap());
        assert_ne!(split_sample(50, 0.5, 3).unwrap(), split_sample(50, 0.5, 4).unwrap());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert_eq!(split_sample(10, 0.0, 0), Err(Error::BadFraction(0.0)));
        assert_eq!(split_sample(10, 1.0, 0), Err(Error::BadFraction(1.0)));
    }

    #[test]
    fn nearest_int_ties_to_even() {
        assert_eq!(nearest_int(2.5), 2);
        assert_eq!(nearest_int(3.5), 4);
        assert_eq!(nearest_int(233.333), 233);
    }

    #[test]
    fn grid_examples() {
        let col = DMatrix::from_column_slice(5, 1, &[4., 0., 2., 1., 3.]);
        assert_eq!(build_break_grid(&col, 3).unwrap().feature(0), &[1.0, 2.0, 3.0]);

        let bin = DMatrix::from_column_slice(8, 1, &[0., 1., 0., 1., 0., 1., 1., 0.]);
        assert_eq!(build_break_grid(&bin, 2).unwrap().feature(0), &[0.0, 1.0]);

        let c = DMatrix::from_element(6, 1, 2.5);
        assert_eq!(build_break_grid(&c, 100).unwrap().feature(0), &[2.5]);

        assert_eq!(build_break_grid(&DMatrix::zeros(0, 1), 3), Err(Error::EmptyColumn(0)));
    }

    #[test]
    fn csv_round_trip() {
        let ds = small();
        let k = ds.x.map(|v| v * 0.5);
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds.x, Some(&k), Some(&ds.y)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,xk1,xk2,y\n"));
        let t = read_csv(buf.as_slice()).unwrap();
        assert_eq!(t.x, ds.x);
        assert_eq!(t.x_knock, Some(k));
        assert_eq!(t.y.as_deref(), Some(&ds.y[..]));
    }

    #[test]
    fn csv_rejects_bad_headers() {
        for text in [
            "x1,x3,y\n1,2,3\n",
            "x1,foo,y\n1,2,3\n",
            "x1,x2,xk1,y\n1,2,3,4\n",
            "x0,y\n1,2\n",
            "y\n1\n",
        ] {
            assert!(read_csv(text.as_bytes()).is_err(), "{text}");
        }
        // column order is free
        let t = read_csv("y,x2,x1\n3,2,1\n".as_bytes()).unwrap();
        assert_eq!(t.x[(0, 0)], 1.0);
        assert_eq!(t.x[(0, 1)], 2.0);
    }

    proptest! {
        #[test]
        fn split_partitions(n in 3usize..10_000, g in prop::sample::select(vec![1.0/3.0, 0.5, 2.0/3.0]), seed: u64) {
            let s = split_sample(n, g, seed).unwrap();
            prop_assert_eq!(s.idx_stat.len(), nearest_int(g * n as f64).clamp(1, n - 1));
            let mut all: Vec<usize> = s.idx_stat.iter().chain(&s.idx_screen).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn grid_uniform_spacing(vals in prop::collection::vec(-1e3f64..1e3, 4..60), r in 2usize..120) {
            let m = DMatrix::from_column_slice(vals.len(), 1, &vals);
            let g = build_break_grid(&m, r).unwrap();
            let c = g.feature(0);
            if c.len() > 1 {
                prop_assert_eq!(c.len(), r);
                let step = (c[r - 1] - c[0]) / (r - 1) as f64;
                let scale = c[0].abs().max(c[r - 1].abs()).max(step.abs());
                for w in c.windows(2) {
                    prop_assert!(w[1] > w[0]);
                    prop_assert!(((w[1] - w[0]) - step).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
