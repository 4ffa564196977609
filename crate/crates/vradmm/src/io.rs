//! Data ingestion: the LIBSVM text format, the thresholded-correlation
//! graph that builds the fused constraint matrix A = [G; I], seeded
//! synthetic datasets for benchmarks and tests, and the train/test split.

use crate::linalg::SparseMatrix;
use crate::model::{ConstraintSpec, ModelError, ProblemSpec, Regularizer, Sample, SmoothSum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("graph threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A parsed dataset: samples with labels already mapped to -1/+1 and the
/// feature dimension (max seen index + 1, or a declared override).
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub samples: Vec<Sample>,
    pub dimension: usize,
}

impl RawDataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Raises the dimension (never shrinks); for datasets whose trailing
    /// features happen to be absent from the parsed subset.
    pub fn pad_dimension(&mut self, d: usize) {
        if d > self.dimension {
            self.dimension = d;
        }
    }
}

fn tokens_with_cols(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (idx, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..idx]));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out
}

/// Parses the `label idx:val ...` LIBSVM format. Indices are 1-based in the
/// file and mapped to 0-based; labels {0,1} or {1,2} are auto-mapped onto
/// {-1,+1} (logged); blank lines and '#' comments are skipped. Any
/// malformed token is an error carrying its line and column.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<RawDataset, IoError> {
    struct RawRow {
        line_no: usize,
        label: f64,
        features: Vec<(usize, f64)>,
    }
    let mut rows: Vec<RawRow> = Vec::new();
    let mut max_index = 0usize;
    for (line_idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = line_idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks = tokens_with_cols(&line);
        let (label_col, label_tok) = toks[0];
        let label: f64 = label_tok.parse().map_err(|_| IoError::Parse {
            line: line_no,
            col: label_col + 1,
            msg: format!("cannot parse label {label_tok:?}"),
        })?;
        if !matches!(label, -1.0 | 0.0 | 1.0 | 2.0) {
            return Err(IoError::Parse {
                line: line_no,
                col: label_col + 1,
                msg: format!("unsupported label {label}; expected -1/+1, 0/1 or 1/2"),
            });
        }
        let mut features = Vec::with_capacity(toks.len() - 1);
        let mut prev_index: Option<usize> = None;
        for &(col, tok) in &toks[1..] {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| IoError::Parse {
                line: line_no,
                col: col + 1,
                msg: format!("expected index:value, got {tok:?}"),
            })?;
            let one_based: usize = idx_str.parse().map_err(|_| IoError::Parse {
                line: line_no,
                col: col + 1,
                msg: format!("cannot parse feature index {idx_str:?}"),
            })?;
            if one_based == 0 {
                return Err(IoError::Parse {
                    line: line_no,
                    col: col + 1,
                    msg: "feature indices are 1-based; got 0".into(),
                });
            }
            let value: f64 = val_str.parse().map_err(|_| IoError::Parse {
                line: line_no,
                col: col + 1 + idx_str.len() + 1,
                msg: format!("cannot parse feature value {val_str:?}"),
            })?;
            if !value.is_finite() {
                return Err(IoError::Parse {
                    line: line_no,
                    col: col + 1 + idx_str.len() + 1,
                    msg: format!("non-finite feature value {value}"),
                });
            }
            let index = one_based - 1;
            if let Some(prev) = prev_index {
                if index <= prev {
                    return Err(IoError::Parse {
                        line: line_no,
                        col: col + 1,
                        msg: format!(
                            "feature indices must be strictly increasing ({} after {})",
                            one_based,
                            prev + 1
                        ),
                    });
                }
            }
            prev_index = Some(index);
            max_index = max_index.max(index);
            features.push((index, value));
        }
        rows.push(RawRow {
            line_no,
            label,
            features,
        });
    }

    // decide the label mapping from the set actually present
    let has = |v: f64| rows.iter().any(|r| r.label == v);
    let (lo, hi) = if has(-1.0) {
        if has(0.0) || has(2.0) {
            let bad = rows
                .iter()
                .find(|r| r.label == 0.0 || r.label == 2.0)
                .unwrap();
            return Err(IoError::Parse {
                line: bad.line_no,
                col: 1,
                msg: format!("label {} mixes with -1/+1 labels", bad.label),
            });
        }
        (-1.0, 1.0)
    } else if has(0.0) {
        if has(2.0) {
            let bad = rows.iter().find(|r| r.label == 2.0).unwrap();
            return Err(IoError::Parse {
                line: bad.line_no,
                col: 1,
                msg: "label 2 mixes with 0/1 labels".into(),
            });
        }
        log::info!("libsvm labels {{0,1}} mapped to {{-1,+1}}");
        (0.0, 1.0)
    } else if has(2.0) {
        log::info!("libsvm labels {{1,2}} mapped to {{-1,+1}}");
        (1.0, 2.0)
    } else {
        (-1.0, 1.0) // only +1 present
    };

    let dimension = if rows.iter().all(|r| r.features.is_empty()) {
        0
    } else {
        max_index + 1
    };
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let label = if row.label == hi {
            1.0
        } else if row.label == lo {
            -1.0
        } else {
            1.0 // only reachable when the set is {-1, +1} or a singleton
        };
        let (indices, values): (Vec<usize>, Vec<f64>) = row.features.into_iter().unzip();
        samples.push(
            Sample::new(indices, values, label).map_err(|e| IoError::Parse {
                line: row.line_no,
                col: 1,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(RawDataset { samples, dimension })
}

/// Writes the dataset back in LIBSVM form (1-based indices); the inverse of
/// [`parse_libsvm`] up to label normalization.
pub fn serialize_libsvm<W: Write>(dataset: &RawDataset, w: &mut W) -> std::io::Result<()> {
    for s in &dataset.samples {
        if s.label() > 0.0 {
            write!(w, "+1")?;
        } else {
            write!(w, "-1")?;
        }
        for (idx, val) in s.features() {
            write!(w, " {}:{}", idx + 1, val)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// sign of the correlation; the G row is e_i - sign * e_j.
    pub sign: f64,
}

/// Feature-coupling graph: one edge per feature pair whose absolute Pearson
/// correlation reaches the threshold.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub edges: Vec<GraphEdge>,
    pub threshold: f64,
}

/// Thresholded-correlation stand-in for sparse inverse covariance
/// estimation: cheap, deterministic, and it preserves the fused-lasso role
/// of G (rows coupling correlated feature pairs). Zero-variance features
/// are excluded from the correlation (logged), never an error.
pub fn build_graph(dataset: &RawDataset, tau: f64) -> Result<GraphSpec, IoError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(IoError::InvalidThreshold(tau));
    }
    let d = dataset.dimension;
    let n = dataset.n() as f64;
    let mut sum = vec![0.0f64; d];
    let mut sum_sq = vec![0.0f64; d];
    let mut cross = vec![0.0f64; d * d]; // upper triangle used
    for s in &dataset.samples {
        let feats: Vec<(usize, f64)> = s.features().collect();
        for &(i, vi) in &feats {
            sum[i] += vi;
            sum_sq[i] += vi * vi;
        }
        for a in 0..feats.len() {
            for b in (a + 1)..feats.len() {
                let (i, vi) = feats[a];
                let (j, vj) = feats[b];
                cross[i * d + j] += vi * vj;
            }
        }
    }
    let mut variance = vec![0.0f64; d];
    let mut excluded = 0usize;
    for j in 0..d {
        let mean = sum[j] / n;
        variance[j] = (sum_sq[j] / n - mean * mean).max(0.0);
        if variance[j] <= 1e-24 {
            excluded += 1;
        }
    }
    if excluded > 0 {
        log::info!("build_graph: {excluded} zero-variance features excluded from correlation");
    }
    let mut edges = Vec::new();
    for i in 0..d {
        if variance[i] <= 1e-24 {
            continue;
        }
        for j in (i + 1)..d {
            if variance[j] <= 1e-24 {
                continue;
            }
            let cov = cross[i * d + j] / n - (sum[i] / n) * (sum[j] / n);
            let corr = cov / (variance[i] * variance[j]).sqrt();
            if corr.abs() >= tau {
                edges.push(GraphEdge {
                    i,
                    j,
                    sign: corr.signum(),
                });
            }
        }
    }
    Ok(GraphSpec {
        edges,
        threshold: tau,
    })
}

/// A = [G; I]: one difference row e_i - sign * e_j per edge, stacked above
/// the identity. With no edges A is exactly the identity.
pub fn assemble_a(graph: &GraphSpec, d: usize) -> SparseMatrix {
    let mut rows = Vec::with_capacity(graph.edges.len() + d);
    for e in &graph.edges {
        rows.push(vec![(e.i, 1.0), (e.j, -e.sign)]);
    }
    for k in 0..d {
        rows.push(vec![(k, 1.0)]);
    }
    SparseMatrix::from_rows(&rows, d).expect("edge rows are sorted pairs")
}

/// Full pipeline: correlation graph, A = [G; I], and the composite problem
/// with the given regularization weights.
pub fn problem_from_dataset(
    dataset: &RawDataset,
    lambda1: f64,
    lambda2: f64,
    tau: f64,
) -> Result<ProblemSpec, IoError> {
    let graph = build_graph(dataset, tau)?;
    let a = assemble_a(&graph, dataset.dimension);
    let smooth = SmoothSum::new(dataset.samples.clone(), lambda2, dataset.dimension)?;
    Ok(ProblemSpec::new(
        smooth,
        Regularizer::new(lambda1)?,
        ConstraintSpec::graph_guided(a),
    )?)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Dense synthetic classification data with grouped feature correlations
/// (features within a group share a latent factor, so the correlation graph
/// finds edges) and labels from a planted linear model with flips.
pub fn synth_correlated(n: usize, d: usize, groups: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let groups = groups.max(1).min(d);
    let w: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let factors: Vec<f64> = (0..groups).map(|_| gauss(&mut rng)).collect();
        let mut vals = Vec::with_capacity(d);
        for j in 0..d {
            vals.push(factors[j % groups] + 0.4 * gauss(&mut rng));
        }
        let score: f64 = w.iter().zip(vals.iter()).map(|(a, b)| a * b).sum();
        let label = if score + 0.3 * gauss(&mut rng) >= 0.0 {
            1.0
        } else {
            -1.0
        };
        samples.push(Sample::new((0..d).collect(), vals, label).unwrap());
    }
    RawDataset {
        samples,
        dimension: d,
    }
}

/// Sparse binary data in the shape of the a9a adult dataset: 123 one-hot
/// features, about 14 active per sample, co-occurring feature pairs (so the
/// correlation graph is nontrivial), labels from a planted logistic model.
pub fn synth_a9a_like(n: usize, seed: u64) -> RawDataset {
    let d = 123usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let w: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut on = vec![false; d];
        // categorical blocks: one feature per block of ~8
        for block in 0..8 {
            let base = block * 12;
            let pick = base + rng.gen_range(0..12.min(d - base));
            on[pick] = true;
        }
        // co-occurring pairs drive the correlation graph
        for pair in 0..6 {
            if rng.gen::<f64>() < 0.35 {
                let i = 96 + 2 * pair;
                on[i] = true;
                on[i + 1] = true;
            }
        }
        // a few uniform extras
        for _ in 0..4 {
            on[rng.gen_range(0..d)] = true;
        }
        let indices: Vec<usize> = (0..d).filter(|&j| on[j]).collect();
        let values = vec![1.0; indices.len()];
        let score: f64 = indices.iter().map(|&j| w[j]).sum();
        let z = score * 0.8 + 0.5 * gauss(&mut rng);
        let label = if z >= 0.0 { 1.0 } else { -1.0 };
        samples.push(Sample::new(indices, values, label).unwrap());
    }
    RawDataset {
        samples,
        dimension: d,
    }
}

/// Deterministic half/half split by seeded shuffle.
pub fn split_train_test(dataset: &RawDataset, seed: u64) -> (RawDataset, RawDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    for k in (1..order.len()).rev() {
        let swap = rng.gen_range(0..=k);
        order.swap(k, swap);
    }
    let half = dataset.n().div_ceil(2);
    let train: Vec<Sample> = order[..half]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let test: Vec<Sample> = order[half..]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    (
        RawDataset {
            samples: train,
            dimension: dataset.dimension,
        },
        RawDataset {
            samples: test,
            dimension: dataset.dimension,
        },
    )
}
