//! Full-raster inference, natural-breaks classification and per-class
//! landslide occupancy.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridStack};
use crate::nn::{forward, Checkpoint, NnError};
use crate::reduce::{pca_hash, standardize_stack, transform_stack, PcaModel};
use crate::sampling::{model_input, window_feasible, InventoryPoint};
use crate::util::rng;

pub const DEFAULT_CLASSES: usize = 5;
pub const DEFAULT_JENKS_CAP: usize = 10_000;
pub const CLASS_NAMES: [&str; 5] = ["very low", "low", "moderate", "high", "very high"];

#[derive(Debug, Error)]
pub enum MapError {
    #[error("stack has {got} bands after transformation, model expects {expected}")]
    BandMismatch { expected: usize, got: usize },
    #[error("checkpoint references PCA model {0} but none was supplied")]
    MissingReducer(String),
    #[error("supplied PCA model does not match the checkpoint reference ({expected} vs {got})")]
    ReducerMismatch { expected: String, got: String },
    #[error("need at least {needed} distinct values for natural breaks, found {found}")]
    TooFewDistinct { needed: usize, found: usize },
    #[error("breaks must be strictly ascending")]
    NonAscending,
    #[error("need at least one class")]
    NoClasses,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Scores every feasible cell of `stack` with the checkpoint. The stack is
/// transformed exactly as training samples were: optional PCA, then the
/// checkpoint's per-band standardization. Infeasible cells are nodata.
pub fn infer_raster(ckpt: &Checkpoint, stack: &GridStack, reducer: Option<&PcaModel>) -> Result<Grid, MapError> {
    infer_raster_with(ckpt, stack, reducer, true)
}

/// As [`infer_raster`]; `parallel` splits the work by rows.
pub fn infer_raster_with(
    ckpt: &Checkpoint,
    stack: &GridStack,
    reducer: Option<&PcaModel>,
    parallel: bool,
) -> Result<Grid, MapError> {
    match (&ckpt.pca_ref, reducer) {
        (Some(r), None) => return Err(MapError::MissingReducer(r.clone())),
        (Some(r), Some(m)) => {
            let got = pca_hash(m);
            if &got != r {
                return Err(MapError::ReducerMismatch {
                    expected: r.clone(),
                    got,
                });
            }
        }
        _ => {}
    }
    let mut prepared = match reducer {
        Some(m) if ckpt.pca_ref.is_some() => transform_stack(stack, m),
        _ => stack.clone(),
    };
    let spec = &ckpt.spec;
    let expected = *spec.input_shape.last().unwrap();
    if prepared.band_count() != expected {
        return Err(MapError::BandMismatch {
            expected,
            got: prepared.band_count(),
        });
    }
    if let Some(s) = &ckpt.standardizer {
        if s.dim() != expected {
            return Err(MapError::BandMismatch { expected, got: s.dim() });
        }
        prepared = standardize_stack(&prepared, s);
    }
    let window = if spec.input_shape.len() == 3 { spec.input_shape[0] } else { 1 };
    let h = prepared.header;
    let score_row = |r: usize| -> Result<Vec<f64>, NnError> {
        (0..h.ncols)
            .map(|c| {
                if window_feasible(&prepared, r, c, window) {
                    forward(spec, &ckpt.weights, &model_input(&prepared, &spec.input_shape, r, c))
                } else {
                    Ok(h.nodata)
                }
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if parallel {
        (0..h.nrows).into_par_iter().map(score_row).collect::<Result<_, _>>()?
    } else {
        (0..h.nrows).map(score_row).collect::<Result<_, _>>()?
    };
    Ok(Grid {
        header: h,
        values: rows.concat(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JenksResult {
    /// Upper bounds of the lowest `n_classes - 1` classes.
    pub breaks: Vec<f64>,
    pub n_classes: usize,
    pub cap: usize,
    pub seed: u64,
    pub subsample_size: usize,
}

/// Within-class sum of squared deviations of sorted values split into classes
/// ending at the given exclusive end indices.
pub fn within_class_ssd(sorted: &[f64], ends: &[usize]) -> f64 {
    let mut start = 0;
    let mut total = 0.0;
    for &end in ends {
        let class = &sorted[start..end];
        let m = class.iter().sum::<f64>() / class.len() as f64;
        total += class.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        start = end;
    }
    total
}

/// Exact natural breaks (Fisher's optimal partition of sorted values) by
/// dynamic programming. Classes never split a run of equal values. Inputs
/// larger than `cap` are replaced by a seeded uniform subsample of size `cap`.
pub fn jenks_breaks(values: &[f64], n_classes: usize, cap: usize, seed: u64) -> Result<JenksResult, MapError> {
    if n_classes == 0 {
        return Err(MapError::NoClasses);
    }
    let mut xs: Vec<f64> = if values.len() > cap {
        let mut r = rng(seed);
        let mut idx = sample(&mut r, values.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| values[i]).collect()
    } else {
        values.to_vec()
    };
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let distinct = if xs.is_empty() {
        0
    } else {
        1 + xs.windows(2).filter(|w| w[0] != w[1]).count()
    };
    if distinct < n_classes {
        return Err(MapError::TooFewDistinct {
            needed: n_classes,
            found: distinct,
        });
    }
    let ends = optimal_partition(&xs, n_classes);
    Ok(JenksResult {
        breaks: ends[..n_classes - 1].iter().map(|&e| xs[e - 1]).collect(),
        n_classes,
        cap,
        seed,
        subsample_size: xs.len(),
    })
}

/// Exclusive end index of each class in the optimal partition.
fn optimal_partition(xs: &[f64], k: usize) -> Vec<usize> {
    let n = xs.len();
    let center = xs.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &x) in xs.iter().enumerate() {
        let d = x - center;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    // cost of xs[i..j]
    let cost = |i: usize, j: usize| {
        let s = s1[j] - s1[i];
        ((s2[j] - s2[i]) - s * s / (j - i) as f64).max(0.0)
    };
    // a class may start at i only if it does not split equal values
    let can_cut: Vec<bool> = (0..=n).map(|i| i == 0 || i == n || xs[i - 1] < xs[i]).collect();

    let inf = f64::INFINITY;
    // best[c][j]: optimal cost of the first j values in c + 1 classes
    let mut best = vec![vec![inf; n + 1]; k];
    let mut arg = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        if can_cut[j] {
            best[0][j] = cost(0, j);
        }
    }
    for c in 1..k {
        for j in (c + 1)..=n {
            if !can_cut[j] {
                continue;
            }
            let mut b = inf;
            let mut a = 0;
            for i in c..j {
                if !can_cut[i] || best[c - 1][i] == inf {
                    continue;
                }
                let v = best[c - 1][i] + cost(i, j);
                if v < b {
                    b = v;
                    a = i;
                }
            }
            best[c][j] = b;
            arg[c][j] = a;
        }
    }
    let mut ends = vec![0; k];
    let mut j = n;
    for c in (0..k).rev() {
        ends[c] = j;
        j = arg[c][j];
    }
    ends
}

/// Class of a value: 1 + number of breaks strictly below it, so a value equal
/// to a break belongs to the lower class.
pub fn class_of(value: f64, breaks: &[f64]) -> usize {
    1 + breaks.iter().take_while(|&&b| b < value).count()
}

pub fn classify(scores: &Grid, breaks: &[f64]) -> Result<Grid, MapError> {
    if breaks.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MapError::NonAscending);
    }
    let nodata = scores.header.nodata;
    let values = scores
        .values
        .iter()
        .map(|&v| {
            if scores.is_valid_value(v) {
                class_of(v, breaks) as f64
            } else {
                nodata
            }
        })
        .collect();
    Ok(Grid {
        header: scores.header,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub class: usize,
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub classes: Vec<OccupancyRow>,
    /// Landslides on nodata cells or outside the raster.
    pub unclassified: usize,
    pub total: usize,
}

impl OccupancyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,percent\n");
        for r in &self.classes {
            out.push_str(&format!("{},{},{}\n", r.class, r.count, r.percent));
        }
        out
    }
}

/// Percentage of landslide points per class, over points that land on classified cells.
pub fn occupancy(classes: &Grid, landslides: &[InventoryPoint], n_classes: usize) -> OccupancyReport {
    let mut counts = vec![0usize; n_classes];
    let mut unclassified = 0;
    for p in landslides {
        let class = classes
            .header
            .cell_of(p.x, p.y)
            .map(|(r, c)| classes.get(r, c))
            .filter(|&v| classes.is_valid_value(v))
            .map(|v| v as usize)
            .filter(|&k| (1..=n_classes).contains(&k));
        match class {
            Some(k) => counts[k - 1] += 1,
            None => unclassified += 1,
        }
    }
    let classified: usize = counts.iter().sum();
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| OccupancyRow {
            class: i + 1,
            name: if n_classes == CLASS_NAMES.len() {
                CLASS_NAMES[i].to_string()
            } else {
                format!("class {}", i + 1)
            },
            count,
            percent: if classified > 0 {
                100.0 * count as f64 / classified as f64
            } else {
                0.0
            },
        })
        .collect();
    OccupancyReport {
        classes: rows,
        unclassified,
        total: landslides.len(),
    }
}
