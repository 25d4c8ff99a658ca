use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{GamError, ModelSpec, SmoothTermSpec};
use crate::splines::{SmoothBasis, TensorBasis};

/// Eigenvalues this far below the largest count as the penalty null space.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum TermKind {
    Intercept,
    Linear,
    Smooth {
        basis: SmoothBasis,
        data_min: f64,
        data_max: f64,
    },
    Tensor { basis: TensorBasis },
}

#[derive(Debug, Clone)]
pub struct TermBlock {
    pub label: String,
    pub cols: Range<usize>,
    pub kind: TermKind,
}

/// One penalty attached to a column block. Tensor smooths attach several
/// penalties to the same block; `shares_block` marks that case.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub label: String,
    pub cols: Range<usize>,
    /// Block-local penalty matrix (cols.len() square).
    pub s: DMatrix<f64>,
    pub rank: usize,
    /// Sum of log positive eigenvalues of `s`.
    pub logdet_pos: f64,
    /// `sqrt_rows' * sqrt_rows = s`, rank x cols.len().
    pub sqrt_rows: DMatrix<f64>,
    pub shares_block: bool,
}

/// Design matrix with per-smooth penalty blocks, ready for penalized least
/// squares.
#[derive(Debug, Clone)]
pub struct PenalizedDesign {
    pub z: DMatrix<f64>,
    pub labels: Vec<String>,
    pub terms: Vec<TermBlock>,
    pub penalties: Vec<PenaltyBlock>,
    /// Null-space dimension of the total penalty (columns never shrunk).
    pub null_dim: usize,
    /// Smooth terms dropped because their input series was constant.
    pub dropped_terms: Vec<String>,
}

impl PenalizedDesign {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn term(&self, label: &str) -> Option<&TermBlock> {
        self.terms.iter().find(|t| t.label == label)
    }

    /// Total penalty `sum_j lambda_j S_j` embedded in the full coefficient
    /// space.
    pub fn total_penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.p();
        let mut s = DMatrix::zeros(p, p);
        for (pb, &lam) in self.penalties.iter().zip(lambdas) {
            let offset = pb.cols.start;
            for i in 0..pb.s.nrows() {
                for j in 0..pb.s.ncols() {
                    s[(offset + i, offset + j)] += lam * pb.s[(i, j)];
                }
            }
        }
        s
    }

    /// Builds the design for `spec` over named columns. Smooth terms whose
    /// series is constant are dropped (their contribution folds into the
    /// intercept); the drop is recorded.
    pub fn build(
        spec: &ModelSpec,
        data: &BTreeMap<String, Vec<f64>>,
    ) -> Result<(Self, DVector<f64>), GamError> {
        spec.validate()?;
        let series = |name: &str| -> Result<&Vec<f64>, GamError> {
            data.get(name)
                .ok_or_else(|| GamError::UnknownSeries(name.to_string()))
        };
        let y_raw = series(&spec.response)?;
        let n = y_raw.len();
        for (name, col) in data {
            if col.len() != n {
                return Err(GamError::LengthMismatch(name.clone()));
            }
        }
        let y = DVector::from_column_slice(y_raw);

        let is_constant = |s: &[f64]| {
            let (lo, hi) = s
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0)
        };

        let mut blocks: Vec<(TermBlock, DMatrix<f64>)> = Vec::new();
        let mut penalties: Vec<PenaltyBlock> = Vec::new();
        let mut dropped = Vec::new();
        let mut col = 0usize;

        let intercept = TermBlock {
            label: "intercept".into(),
            cols: 0..1,
            kind: TermKind::Intercept,
        };
        blocks.push((intercept, DMatrix::from_element(n, 1, 1.0)));
        col += 1;

        for name in &spec.linear {
            let x = series(name)?;
            blocks.push((
                TermBlock {
                    label: name.clone(),
                    cols: col..col + 1,
                    kind: TermKind::Linear,
                },
                DMatrix::from_column_slice(n, 1, x),
            ));
            col += 1;
        }

        for term in &spec.smooths {
            match term {
                SmoothTermSpec::Univariate { series: name, k } => {
                    let x = series(name)?;
                    let label = format!("s({name})");
                    if is_constant(x) {
                        dropped.push(label);
                        continue;
                    }
                    let basis = SmoothBasis::build(x, *k)?;
                    let design = basis.constrained_matrix(x);
                    let width = design.ncols();
                    let s = basis.constrained_penalty();
                    penalties.push(penalty_block(&label, col..col + width, s, false)?);
                    let (lo, hi) = (
                        x.iter().cloned().fold(f64::MAX, f64::min),
                        x.iter().cloned().fold(f64::MIN, f64::max),
                    );
                    blocks.push((
                        TermBlock {
                            label: format!("s({name})"),
                            cols: col..col + width,
                            kind: TermKind::Smooth {
                                basis,
                                data_min: lo,
                                data_max: hi,
                            },
                        },
                        design,
                    ));
                    col += width;
                }
                SmoothTermSpec::Tensor {
                    series: names,
                    k_marginal,
                } => {
                    let x1 = series(&names[0])?;
                    let x2 = series(&names[1])?;
                    let x3 = series(&names[2])?;
                    let label = format!("te({},{},{})", names[0], names[1], names[2]);
                    if is_constant(x1) || is_constant(x2) || is_constant(x3) {
                        return Err(GamError::ConstantTensorMargin(label));
                    }
                    let basis = TensorBasis::build(x1, x2, x3, *k_marginal)?;
                    let design = basis.constrained_matrix(x1, x2, x3);
                    let width = design.ncols();
                    for (m, s) in basis.constrained_penalties().into_iter().enumerate() {
                        penalties.push(penalty_block(
                            &format!("{label}[{}]", m + 1),
                            col..col + width,
                            s,
                            true,
                        )?);
                    }
                    blocks.push((
                        TermBlock {
                            label,
                            cols: col..col + width,
                            kind: TermKind::Tensor { basis },
                        },
                        design,
                    ));
                    col += width;
                }
            }
        }

        let p = col;
        let mut z = DMatrix::zeros(n, p);
        let mut labels = Vec::with_capacity(p);
        let mut terms = Vec::with_capacity(blocks.len());
        for (block, cols) in blocks {
            z.view_mut((0, block.cols.start), (n, cols.ncols()))
                .copy_from(&cols);
            match block.kind {
                TermKind::Intercept => labels.push("intercept".to_string()),
                TermKind::Linear => labels.push(block.label.clone()),
                _ => {
                    for j in 0..cols.ncols() {
                        labels.push(format!("{}[{}]", block.label, j + 1));
                    }
                }
            }
            terms.push(block);
        }

        // Null dimension of the total penalty: unpenalized columns plus the
        // per-block null spaces (shared blocks pool their penalties first).
        let mut penalized_rank = 0usize;
        let mut seen_shared: Vec<Range<usize>> = Vec::new();
        for pb in &penalties {
            if pb.shares_block {
                if seen_shared.contains(&pb.cols) {
                    continue;
                }
                seen_shared.push(pb.cols.clone());
                let mut pooled = DMatrix::zeros(pb.cols.len(), pb.cols.len());
                for other in penalties.iter().filter(|o| o.cols == pb.cols) {
                    pooled += &other.s;
                }
                penalized_rank += matrix_rank(&pooled);
            } else {
                penalized_rank += pb.rank;
            }
        }
        let null_dim = p - penalized_rank;

        Ok((
            Self {
                z,
                labels,
                terms,
                penalties,
                null_dim,
                dropped_terms: dropped,
            },
            y,
        ))
    }

    /// Columns that are linear combinations of earlier columns, by modified
    /// Gram-Schmidt with a relative tolerance.
    pub fn aliased_columns(&self) -> Vec<String> {
        let n = self.n();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut aliased = Vec::new();
        for j in 0..self.p() {
            let col = self.z.column(j).into_owned();
            let scale = col.norm();
            if scale == 0.0 {
                aliased.push(self.labels[j].clone());
                continue;
            }
            let mut r = col.clone();
            for q in &basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
            // Re-orthogonalize once for numerical safety.
            for q in &basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
            if r.norm() <= 1e-8 * scale * (n as f64).sqrt().max(1.0) {
                aliased.push(self.labels[j].clone());
            } else {
                let norm = r.norm();
                basis.push(r / norm);
            }
        }
        aliased
    }
}

fn penalty_block(
    label: &str,
    cols: Range<usize>,
    s: DMatrix<f64>,
    shares_block: bool,
) -> Result<PenaltyBlock, GamError> {
    let (rank, logdet_pos, sqrt_rows) = penalty_decomposition(&s);
    Ok(PenaltyBlock {
        label: label.to_string(),
        cols,
        s,
        rank,
        logdet_pos,
        sqrt_rows,
        shares_block,
    })
}

/// Rank, log pseudo-determinant and a square-root factor of a PSD matrix.
pub(crate) fn penalty_decomposition(s: &DMatrix<f64>) -> (usize, f64, DMatrix<f64>) {
    let eig = s.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max_eig * RANK_TOL;
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    let rank = kept.len();
    let logdet: f64 = kept.iter().map(|&i| eig.eigenvalues[i].ln()).sum();
    let mut rows = DMatrix::zeros(rank, s.ncols());
    for (r, &i) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for c in 0..s.ncols() {
            rows[(r, c)] = scale * eig.eigenvectors[(c, i)];
        }
    }
    (rank, logdet, rows)
}

fn matrix_rank(s: &DMatrix<f64>) -> usize {
    let eig = s.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max_eig * RANK_TOL;
    eig.eigenvalues.iter().filter(|&&v| v > tol).count()
}
