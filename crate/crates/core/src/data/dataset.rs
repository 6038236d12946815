//! In-memory multi-label dataset and its line-oriented text format.
//!
//! ```text
//! n L p
//! # meta: key=value key=value ...
//! 0,3<TAB>0.25 -1.5 ...
//! ```
//!
//! Label indices are zero-based. Features use the shortest decimal that
//! round-trips, so write → read reproduces every bit. Instances are stored in
//! split order (train, then validation, then test); the split sizes live in
//! the `split=` meta key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Number of instances in each split; instances are laid out contiguously in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    pub features: Matrix,
    pub labels: LabelMatrix,
    pub split: SplitSizes,
    /// Provenance: generator name, PRNG identifier, seed and parameters.
    pub meta: BTreeMap<String, String>,
}

impl MultiLabelDataset {
    pub fn new(features: Matrix, labels: LabelMatrix, split: SplitSizes, meta: BTreeMap<String, String>) -> Result<Self> {
        if features.nrows() != labels.len() || split.total() != labels.len() {
            return Err(Error::domain(format!(
                "inconsistent dataset: {} feature rows, {} label rows, split total {}",
                features.nrows(),
                labels.len(),
                split.total()
            )));
        }
        Ok(Self {
            features,
            labels,
            split,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.num_labels()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.split.train {
            Split::Train
        } else if index < self.split.train + self.split.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Features and labels of one split.
    pub fn part(&self, split: Split) -> (Matrix, LabelMatrix) {
        let range = self.split.range(split);
        let idx: Vec<usize> = range.clone().collect();
        (
            self.features.slice(ndarray::s![range, ..]).to_owned(),
            self.labels.select(&idx),
        )
    }

    /// Keeps the given training instances (indices into the train split, in
    /// order) and all validation and test instances.
    pub fn with_train_subset(&self, train_indices: &[usize]) -> Self {
        let mut idx: Vec<usize> = train_indices.to_vec();
        idx.extend(self.split.train..self.len());
        let features = self.features.select(ndarray::Axis(0), &idx);
        let labels = self.labels.select(&idx);
        let split = SplitSizes {
            train: train_indices.len(),
            ..self.split
        };
        let mut meta = self.meta.clone();
        meta.insert("split".into(), format_split(&split));
        Self {
            features,
            labels,
            split,
            meta,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.len(), self.num_labels(), self.num_features());
        let mut meta = self.meta.clone();
        meta.insert("split".into(), format_split(&self.split));
        let pairs: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "# meta: {}", pairs.join(" "));
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let labels: Vec<String> = self.labels.row(i).iter().map(|j| j.to_string()).collect();
            out.push_str(&labels.join(","));
            out.push('\t');
            let feats: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&feats.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (header_line, header) = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() || (l.starts_with('#') && !l.starts_with("# meta:")) => continue,
                Some(x) => break x,
                None => return Err(parse_err(1, 1, "missing header `n L p`")),
            }
        };
        let dims = parse_usizes(header, header_line)?;
        if dims.len() != 3 {
            return Err(parse_err(header_line, 1, "header must be `n L p`"));
        }
        let (n, num_labels, p) = (dims[0], dims[1], dims[2]);

        let mut meta = BTreeMap::new();
        let mut labels = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n * p);
        for (line_no, line) in lines {
            if let Some(rest) = line.strip_prefix("# meta:") {
                for kv in rest.split_whitespace() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| parse_err(line_no, 1, format!("malformed meta entry `{kv}`")))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if labels.len() == n {
                return Err(parse_err(line_no, 1, format!("more than the declared {n} instances")));
            }
            let (label_field, feature_field) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(line_no, 1, "expected `labels<TAB>features`"))?;
            if label_field.trim().is_empty() {
                return Err(parse_err(line_no, 1, "empty label field: instances with zero labels rejected"));
            }
            let mut row = Vec::new();
            let mut col = 1;
            for tok in label_field.split(',') {
                let j: usize = tok
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, col, format!("invalid label index `{tok}`")))?;
                if j >= num_labels {
                    return Err(parse_err(
                        line_no,
                        col,
                        format!("label index {j} out of range for L = {num_labels}"),
                    ));
                }
                row.push(j);
                col += tok.len() + 1;
            }
            labels.push(row);
            let mut count = 0;
            let mut col = label_field.len() + 2;
            for tok in feature_field.split(' ').filter(|t| !t.is_empty()) {
                let x: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(line_no, col, format!("invalid feature `{tok}`")))?;
                if !x.is_finite() {
                    return Err(parse_err(line_no, col, "non-finite feature"));
                }
                features.push(x);
                count += 1;
                col += tok.len() + 1;
            }
            if count != p {
                return Err(parse_err(line_no, col, format!("expected {p} features, found {count}")));
            }
        }
        if labels.len() != n {
            return Err(parse_err(
                text.lines().count().max(1),
                1,
                format!("declared {n} instances, found {}", labels.len()),
            ));
        }
        let split = match meta.get("split") {
            Some(s) => parse_split(s).ok_or_else(|| parse_err(header_line + 1, 1, format!("malformed split `{s}`")))?,
            None => SplitSizes {
                train: n,
                val: 0,
                test: 0,
            },
        };
        if split.total() != n {
            return Err(parse_err(header_line + 1, 1, "split sizes do not add up to n"));
        }
        meta.remove("split");
        let labels = LabelMatrix::new(num_labels, labels)?;
        let features = Matrix::from_shape_vec((n, p), features).expect("length checked per row");
        Self::new(features, labels, split, meta)
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn parse_usizes(line: &str, line_no: usize) -> Result<Vec<usize>> {
    let mut col = 1;
    let mut out = Vec::new();
    for tok in line.split(' ') {
        if !tok.is_empty() {
            out.push(
                tok.parse()
                    .map_err(|_| parse_err(line_no, col, format!("expected an integer, found `{tok}`")))?,
            );
        }
        col += tok.len() + 1;
    }
    Ok(out)
}

fn format_split(s: &SplitSizes) -> String {
    format!("{},{},{}", s.train, s.val, s.test)
}

fn parse_split(s: &str) -> Option<SplitSizes> {
    let parts: Vec<usize> = s.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
    match parts.as_slice() {
        [train, val, test] => Some(SplitSizes {
            train: *train,
            val: *val,
            test: *test,
        }),
        _ => None,
    }
}

pub fn write_dataset(dataset: &MultiLabelDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset.to_text())?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<MultiLabelDataset> {
    MultiLabelDataset::from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_label_is_a_parse_error() {
        let text = "2 5 2\n0,1\t0.5 1\n7\t1 2\n";
        match MultiLabelDataset::from_text(text) {
            Err(Error::Parse { line, column, message }) => {
                assert_eq!((line, column), (3, 1));
                assert!(message.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_label_field_is_rejected() {
        let err = MultiLabelDataset::from_text("1 3 1\n\t0.5\n").unwrap_err();
        assert!(err.to_string().contains("instances with zero labels rejected"), "{err}");
    }

    #[test]
    fn wrong_feature_count_and_garbage() {
        assert!(matches!(
            MultiLabelDataset::from_text("1 3 2\n0\t0.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        match MultiLabelDataset::from_text("1 3 2\n0\t0.5 x1\n") {
            Err(Error::Parse { line: 2, column: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(MultiLabelDataset::from_text("1 3\n").is_err());
        assert!(MultiLabelDataset::from_text("2 3 1\n0\t1\n").is_err());
    }

    #[test]
    fn awkward_floats_round_trip() {
        let feats = Matrix::from_shape_vec(
            (2, 3),
            vec![0.1 + 0.2, -0.0, 1e-300, 123456789.123456789, f64::MIN_POSITIVE, -7.5e20],
        )
        .unwrap();
        let labels = LabelMatrix::new(4, vec![vec![0, 3], vec![2]]).unwrap();
        let split = SplitSizes { train: 1, val: 0, test: 1 };
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "9".into());
        let ds = MultiLabelDataset::new(feats, labels, split, meta).unwrap();
        let back = MultiLabelDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
