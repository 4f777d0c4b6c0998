//! Balanced, split, leak-free training samples: inventory loading, buffered
//! negative sampling, stratified splitting, and vector/patch extraction.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridStack;
use crate::nn::Tensor;
use crate::util::rng;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("inventory: {0}")]
    Inventory(String),
    #[error("need {needed} eligible cells for negatives, found {eligible}")]
    NotEnoughEligible { needed: usize, eligible: usize },
    #[error("need at least one landslide")]
    NoLandslides,
    #[error("split needs at least 2 points per class (positives {pos}, negatives {neg})")]
    TooFewPerClass { pos: usize, neg: usize },
    #[error("train fraction {0} leaves an empty partition")]
    EmptyPartition(f64),
    #[error("point ({x}, {y}) does not map to a valid cell")]
    InvalidCell { x: f64, y: f64 },
    #[error("window of size {size} at ({x}, {y}) leaves the raster or touches nodata")]
    PatchRejected { x: f64, y: f64, size: usize },
    #[error("window size must be odd, got {0}")]
    EvenWindow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InventoryPoint {
    pub x: f64,
    pub y: f64,
    /// 1 = landslide, 0 = non-landslide
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<InventoryPoint>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl SampleSet {
    pub fn partition(&self, which: Split) -> Vec<InventoryPoint> {
        self.points
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// n x p feature matrix, row-major. `labels` is empty for unlabeled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * p, "feature matrix data length");
        Self {
            n,
            p,
            data,
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), p, data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.p + j]).collect()
    }
}

/// h x w x p window of band values, laid out as `[(r * w + c) * p + b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    pub h: usize,
    pub w: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl PatchTensor {
    pub fn at(&self, r: usize, c: usize, b: usize) -> f64 {
        self.data[(r * self.w + c) * self.p + b]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub dropped_outside: usize,
    pub dropped_invalid: usize,
    pub merged_duplicates: usize,
}

/// Parses inventory CSV text (`x,y` header, extra columns ignored). Retained
/// points are snapped to the center of their cell; several points in one cell
/// collapse into one.
pub fn parse_inventory(
    text: &str,
    stack: &GridStack,
) -> Result<(Vec<InventoryPoint>, LoadReport), SamplingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| SamplingError::Inventory(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| SamplingError::Inventory(format!("missing `{name}` column")))
    };
    let (xi, yi) = (col("x")?, col("y")?);

    let h = stack.header;
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    let mut report = LoadReport::default();
    let mut rows = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SamplingError::Inventory(e.to_string()))?;
        rows += 1;
        let num = |i: usize| -> Result<f64, SamplingError> {
            let tok = rec.get(i).unwrap_or("");
            tok.parse::<f64>().map_err(|_| {
                SamplingError::Inventory(format!("line {}: non-numeric coordinate `{tok}`", k + 2))
            })
        };
        let (x, y) = (num(xi)?, num(yi)?);
        let Some((r, c)) = h.cell_of(x, y) else {
            report.dropped_outside += 1;
            continue;
        };
        if !stack.is_valid(r, c) {
            report.dropped_invalid += 1;
            continue;
        }
        if !seen.insert((r, c)) {
            report.merged_duplicates += 1;
            continue;
        }
        let (cx, cy) = h.cell_center(r, c);
        points.push(InventoryPoint {
            x: cx,
            y: cy,
            label: 1,
        });
    }
    if rows == 0 {
        return Err(SamplingError::Inventory("empty inventory".into()));
    }
    report.loaded = points.len();
    Ok((points, report))
}

pub fn load_inventory(
    path: impl AsRef<Path>,
    stack: &GridStack,
) -> Result<(Vec<InventoryPoint>, LoadReport), SamplingError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SamplingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_inventory(&text, stack)
}

pub fn write_inventory(points: &[InventoryPoint], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = String::from("x,y\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    std::fs::write(path, out)
}

/// True when the size x size window centered on (row, col) is in bounds and fully valid.
pub fn window_feasible(stack: &GridStack, row: usize, col: usize, size: usize) -> bool {
    let half = size / 2;
    let h = stack.header;
    if row < half || col < half || row + half >= h.nrows || col + half >= h.ncols {
        return false;
    }
    (row - half..=row + half).all(|r| (col - half..=col + half).all(|c| stack.is_valid(r, c)))
}

/// Draws exactly `landslides.len()` label-0 cell-center points, uniformly and
/// without replacement, among cells whose `window` neighborhood is fully valid
/// and whose center lies strictly farther than `buffer_m` from every landslide.
pub fn sample_negatives(
    landslides: &[InventoryPoint],
    stack: &GridStack,
    buffer_m: f64,
    window: usize,
    seed: u64,
) -> Result<Vec<InventoryPoint>, SamplingError> {
    if landslides.is_empty() {
        return Err(SamplingError::NoLandslides);
    }
    let h = stack.header;
    let occupied: HashSet<(usize, usize)> = landslides
        .iter()
        .filter_map(|p| h.cell_of(p.x, p.y))
        .collect();
    let b2 = buffer_m * buffer_m;
    let mut eligible = Vec::new();
    for r in 0..h.nrows {
        for c in 0..h.ncols {
            if occupied.contains(&(r, c)) || !window_feasible(stack, r, c, window.max(1)) {
                continue;
            }
            let (x, y) = h.cell_center(r, c);
            let far = landslides
                .iter()
                .all(|p| (p.x - x).powi(2) + (p.y - y).powi(2) > b2);
            if far {
                eligible.push((r, c));
            }
        }
    }
    let needed = landslides.len();
    if eligible.len() < needed {
        return Err(SamplingError::NotEnoughEligible {
            needed,
            eligible: eligible.len(),
        });
    }
    let mut rng = rng(seed);
    let (chosen, _) = eligible.partial_shuffle(&mut rng, needed);
    Ok(chosen
        .iter()
        .map(|&(r, c)| {
            let (x, y) = h.cell_center(r, c);
            InventoryPoint { x, y, label: 0 }
        })
        .collect())
}

/// Stratified random split: within each label class, `round(train_fraction * n_class)`
/// points go to training.
pub fn split(
    points: Vec<InventoryPoint>,
    train_fraction: f64,
    seed: u64,
) -> Result<SampleSet, SamplingError> {
    let pos: Vec<usize> = (0..points.len()).filter(|&i| points[i].label == 1).collect();
    let neg: Vec<usize> = (0..points.len()).filter(|&i| points[i].label == 0).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(SamplingError::TooFewPerClass {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let mut rng = rng(seed);
    let mut assign = vec![Split::Validation; points.len()];
    for mut class in [pos, neg] {
        let n_train = (train_fraction * class.len() as f64).round() as usize;
        if n_train == 0 || n_train >= class.len() {
            return Err(SamplingError::EmptyPartition(train_fraction));
        }
        class.shuffle(&mut rng);
        for &i in &class[..n_train] {
            assign[i] = Split::Train;
        }
    }
    Ok(SampleSet {
        points,
        split: assign,
        seed,
    })
}

fn valid_cell(stack: &GridStack, point: &InventoryPoint) -> Result<(usize, usize), SamplingError> {
    stack
        .header
        .cell_of(point.x, point.y)
        .filter(|&(r, c)| stack.is_valid(r, c))
        .ok_or(SamplingError::InvalidCell {
            x: point.x,
            y: point.y,
        })
}

pub fn extract_vector(stack: &GridStack, point: &InventoryPoint) -> Result<Vec<f64>, SamplingError> {
    let (r, c) = valid_cell(stack, point)?;
    Ok(stack.cell_vector(r, c))
}

pub fn extract_patch(
    stack: &GridStack,
    point: &InventoryPoint,
    size: usize,
) -> Result<PatchTensor, SamplingError> {
    if size % 2 == 0 {
        return Err(SamplingError::EvenWindow(size));
    }
    let rejected = SamplingError::PatchRejected {
        x: point.x,
        y: point.y,
        size,
    };
    let Some((row, col)) = stack.header.cell_of(point.x, point.y) else {
        return Err(rejected);
    };
    if !window_feasible(stack, row, col, size) {
        return Err(rejected);
    }
    Ok(patch_at(stack, row, col, size))
}

/// Model input tensor for the cell at (row, col): the band vector when
/// `input_shape` is `[p]`, otherwise the `[h, w, p]` window centered on it.
pub fn model_input(stack: &GridStack, input_shape: &[usize], row: usize, col: usize) -> Tensor {
    if input_shape.len() == 1 {
        Tensor::new(vec![stack.band_count()], stack.cell_vector(row, col))
    } else {
        let patch = patch_at(stack, row, col, input_shape[0]);
        Tensor::new(vec![patch.h, patch.w, patch.p], patch.data)
    }
}

/// Window extraction without feasibility checks; callers guarantee the window is valid.
pub(crate) fn patch_at(stack: &GridStack, row: usize, col: usize, size: usize) -> PatchTensor {
    let half = size / 2;
    let p = stack.band_count();
    let mut data = Vec::with_capacity(size * size * p);
    for r in row - half..=row + half {
        for c in col - half..=col + half {
            let i = stack.header.ncols * r + c;
            data.extend(stack.bands.iter().map(|b| b.values[i]));
        }
    }
    PatchTensor {
        h: size,
        w: size,
        p,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{stack, Grid, GridHeader};

    fn const_stack(n: usize, p: usize, v: f64) -> GridStack {
        let h = GridHeader::new(n, n, 0.0, 0.0, 30.0);
        stack(
            (0..p).map(|_| Grid::filled(h, v)).collect(),
            (0..p).map(|i| format!("b{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn inventory_center_outside_and_duplicates() {
        let st = const_stack(10, 1, 1.0);
        let text = "x,y,id\n45,45,a\n10000,5,b\n";
        let (pts, rep) = parse_inventory(text, &st).unwrap();
        assert_eq!(pts, vec![InventoryPoint { x: 45.0, y: 45.0, label: 1 }]);
        assert_eq!(rep.dropped_outside, 1);

        let (pts, rep) = parse_inventory("x,y\n61,62\n88,89\n", &st).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (75.0, 75.0));
        assert_eq!(rep.merged_duplicates, 1);
    }

    #[test]
    fn inventory_errors() {
        let st = const_stack(4, 1, 1.0);
        assert!(parse_inventory("x,z\n1,2\n", &st).is_err());
        assert!(parse_inventory("x,y\n", &st).is_err());
    }

    #[test]
    fn negatives_respect_buffer() {
        let st = const_stack(100, 1, 1.0);
        let ls = vec![InventoryPoint { x: 1515.0, y: 1515.0, label: 1 }];
        for seed in 0..20 {
            let neg = sample_negatives(&ls, &st, 150.0, 1, seed).unwrap();
            assert_eq!(neg.len(), 1);
            let d = ((neg[0].x - 1515.0).powi(2) + (neg[0].y - 1515.0).powi(2)).sqrt();
            assert!(d > 150.0);
        }
    }

    #[test]
    fn zero_buffer_allows_neighbors() {
        let st = const_stack(2, 1, 1.0);
        let ls = vec![InventoryPoint { x: 15.0, y: 15.0, label: 1 }];
        let neg = sample_negatives(&ls, &st, 0.0, 1, 1).unwrap();
        assert_ne!((neg[0].x, neg[0].y), (15.0, 15.0));
    }

    #[test]
    fn negatives_insufficient() {
        let st = const_stack(5, 1, 1.0);
        let ls = vec![InventoryPoint { x: 75.0, y: 75.0, label: 1 }];
        let err = sample_negatives(&ls, &st, 150.0, 1, 1).unwrap_err();
        assert!(matches!(err, SamplingError::NotEnoughEligible { eligible: 0, .. }));
    }

    fn balanced(n: usize) -> Vec<InventoryPoint> {
        (0..2 * n)
            .map(|i| InventoryPoint {
                x: i as f64,
                y: 0.0,
                label: (i < n) as u8,
            })
            .collect()
    }

    #[test]
    fn split_counts() {
        let s = split(balanced(10), 0.7, 3).unwrap();
        let count = |lab: u8, sp: Split| {
            s.points
                .iter()
                .zip(&s.split)
                .filter(|(p, q)| p.label == lab && **q == sp)
                .count()
        };
        assert_eq!((count(1, Split::Train), count(0, Split::Train)), (7, 7));
        assert_eq!((count(1, Split::Validation), count(0, Split::Validation)), (3, 3));
        let s2 = split(balanced(10), 0.7, 4).unwrap();
        assert_ne!(s.split, s2.split);
    }

    #[test]
    fn split_degenerate() {
        assert!(matches!(
            split(balanced(10), 1.0, 0),
            Err(SamplingError::EmptyPartition(_))
        ));
        assert!(matches!(
            split(balanced(1), 0.7, 0),
            Err(SamplingError::TooFewPerClass { .. })
        ));
    }

    #[test]
    fn vectors_and_patches() {
        let st = const_stack(5, 3, 7.0);
        let pt = InventoryPoint { x: 75.0, y: 75.0, label: 1 };
        assert_eq!(extract_vector(&st, &pt).unwrap(), vec![7.0; 3]);
        let patch = extract_patch(&st, &pt, 1).unwrap();
        assert_eq!(patch.data, vec![7.0; 3]);
        assert!(matches!(extract_patch(&st, &pt, 4), Err(SamplingError::EvenWindow(4))));
    }

    #[test]
    fn patch_near_edge_rejected() {
        let st = const_stack(20, 1, 1.0);
        // row 3, col 10
        let (x, y) = st.header.cell_center(3, 10);
        let pt = InventoryPoint { x, y, label: 1 };
        assert!(matches!(
            extract_patch(&st, &pt, 11),
            Err(SamplingError::PatchRejected { .. })
        ));
    }

    #[test]
    fn patch_follows_ramp() {
        let h = GridHeader::new(20, 20, 0.0, 0.0, 30.0);
        let ramp = Grid::new(h, (0..400).map(|i| (i / 20) as f64 * 100.0 + (i % 20) as f64).collect()).unwrap();
        let st = stack(vec![ramp], vec!["ramp".into()]).unwrap();
        let (x, y) = st.header.cell_center(9, 8);
        let patch = extract_patch(&st, &InventoryPoint { x, y, label: 0 }, 5).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let expect = (9 - 2 + r) as f64 * 100.0 + (8 - 2 + c) as f64;
                assert_eq!(patch.at(r, c, 0), expect);
            }
        }
    }
}
