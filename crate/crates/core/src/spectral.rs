//! Fourier decomposition of a finite-dimensional model by joint block
//! diagonalization of its shift operators.
//!
//! The decomposition is read off the symmetric commutant
//! `{M = Mᵀ : M S_i = S_i M for all i}`:
//!
//! 1. the commutant is the null space of a linear map on symmetric matrices;
//! 2. a random element of it is drawn with a fixed seed;
//! 3. its eigenspaces, with numerically equal eigenvalues grouped, are the
//!    invariant blocks;
//! 4. blocks are ordered by size, then by eigenvalue order.
//!
//! For non-symmetric shifts the commutant is also required to commute with
//! every `S_iᵀ`, which keeps the basis orthogonal. Over the reals the blocks
//! are the finest the commutant can separate; they are not claimed to be
//! irreducible over ℂ.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asm::{polynomial_matrix, ShiftSet, Signal};
use crate::error::{ensure_dim, ensure_generators, Error, Result};
use crate::linalg;
use crate::ncpoly::NcPolynomial;
use crate::rng;

pub const DEFAULT_SEED: u64 = 0xA15E;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_GROUPING: f64 = 1e-6;
/// Minimum relative singular-value gap separating the commutant from the
/// rest of the spectrum.
pub const MIN_NULL_GAP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JbdOptions {
    /// Off-block leakage allowed, relative to ‖S_i‖_F.
    pub tol: f64,
    /// Eigenvalues of the commutant element closer than `grouping · spread`
    /// share a block.
    pub grouping: f64,
    pub seed: u64,
}

impl Default for JbdOptions {
    fn default() -> Self {
        JbdOptions {
            tol: DEFAULT_TOL,
            grouping: DEFAULT_GROUPING,
            seed: DEFAULT_SEED,
        }
    }
}

impl JbdOptions {
    pub fn with_tol(tol: f64) -> Self {
        JbdOptions { tol, ..Self::default() }
    }
}

/// Orthogonal basis `U` and block partition with `Uᵀ S_i U` block diagonal.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    basis: DMatrix<f64>,
    blocks: Vec<Range<usize>>,
    /// `block_shifts[j][i]` is the restriction of shift `i` to block `j`.
    block_shifts: Vec<Vec<DMatrix<f64>>>,
    offblock_residual: f64,
    commutant_dim: usize,
}

impl SpectralDecomposition {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn block_shifts(&self, block: usize) -> &[DMatrix<f64>] {
        &self.block_shifts[block]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_generators(&self) -> usize {
        self.block_shifts[0].len()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Largest `‖Uᵀ S_i U − blockdiag‖_F / ‖S_i‖_F` over the shifts.
    pub fn offblock_residual(&self) -> f64 {
        self.offblock_residual
    }

    pub fn commutant_dim(&self) -> usize {
        self.commutant_dim
    }

    /// Columns of `U` spanning block `j`.
    pub fn block_basis(&self, block: usize) -> DMatrix<f64> {
        let r = &self.blocks[block];
        self.basis.columns(r.start, r.len()).into_owned()
    }

    /// The block restrictions of block `j` as a shift set of their own.
    pub fn restricted_shifts(&self, block: usize) -> ShiftSet {
        ShiftSet::new(self.block_shifts[block].clone()).expect("blocks are non-empty and square")
    }

    /// Matrix frequencies `(Λ_1, …, Λ_m)` for every block. With `pad`, every
    /// block is zero-padded to the largest block size.
    pub fn matrix_frequencies(&self, pad: bool) -> Vec<MatrixFrequency> {
        let d = self.blocks.iter().map(|b| b.len()).max().unwrap_or(0);
        self.block_shifts
            .iter()
            .enumerate()
            .map(|(j, lambdas)| {
                let f = MatrixFrequency {
                    block_index: j,
                    lambdas: lambdas.clone(),
                };
                if pad {
                    f.padded(d)
                } else {
                    f
                }
            })
            .collect()
    }
}

/// Restriction of all shifts to one invariant block.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFrequency {
    pub block_index: usize,
    pub lambdas: Vec<DMatrix<f64>>,
}

impl MatrixFrequency {
    pub fn size(&self) -> usize {
        self.lambdas[0].nrows()
    }

    pub fn padded(&self, d: usize) -> MatrixFrequency {
        let lambdas = self
            .lambdas
            .iter()
            .map(|l| {
                let mut out = DMatrix::zeros(d, d);
                let k = l.nrows().min(d);
                out.view_mut((0, 0), (k, k)).copy_from(&l.view((0, 0), (k, k)));
                out
            })
            .collect();
        MatrixFrequency {
            block_index: self.block_index,
            lambdas,
        }
    }
}

/// Summary written by the `spectra` command.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectraReport {
    pub block_sizes: Vec<usize>,
    pub offblock_residual: f64,
    pub basis_file: String,
}

/// Index of the symmetric basis element `(p, q)`, `p <= q`.
fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for p in 0..n {
        for q in p..n {
            out.push((p, q));
        }
    }
    out
}

fn sym_element(n: usize, pairs: &[(usize, usize)], coords: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (&(p, q), &c) in pairs.iter().zip(coords) {
        if p == q {
            m[(p, p)] += c;
        } else {
            m[(p, q)] += c * r;
            m[(q, p)] += c * r;
        }
    }
    m
}

/// Orthonormal basis (coordinates in the symmetric basis) of the symmetric
/// commutant of `generators`.
fn symmetric_commutant(generators: &[DMatrix<f64>], n: usize) -> Result<Vec<Vec<f64>>> {
    let pairs = sym_pairs(n);
    let unknowns = pairs.len();
    let rows = generators.len() * n * n;
    let mut a = DMatrix::zeros(rows, unknowns);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (col, &(p, q)) in pairs.iter().enumerate() {
        for (g, t) in generators.iter().enumerate() {
            let base = g * n * n;
            // (E T - T E) for E the normalized symmetric unit at (p, q).
            let mut put = |i: usize, j: usize, v: f64| {
                a[(base + i * n + j, col)] += v;
            };
            let w = if p == q { 1.0 } else { r };
            for j in 0..n {
                // E T: row p receives w·T[q, :], row q receives w·T[p, :].
                put(p, j, w * t[(q, j)]);
                if p != q {
                    put(q, j, w * t[(p, j)]);
                }
            }
            for i in 0..n {
                // T E: column q receives w·T[:, p], column p receives w·T[:, q].
                put(i, q, -w * t[(i, p)]);
                if p != q {
                    put(i, p, -w * t[(i, q)]);
                }
            }
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonConvergence("SVD failed".into()))?;
    let sigma = svd.singular_values;
    let sigma_max = sigma.iter().fold(0.0_f64, |m, &s| m.max(s));
    if sigma_max == 0.0 {
        return Ok((0..unknowns)
            .map(|k| (0..unknowns).map(|c| if c == k { 1.0 } else { 0.0 }).collect())
            .collect());
    }
    let threshold = 1e-9 * sigma_max;
    let mut null = Vec::new();
    let mut largest_null = 0.0_f64;
    let mut smallest_kept = f64::INFINITY;
    for (k, &s) in sigma.iter().enumerate() {
        if s <= threshold {
            largest_null = largest_null.max(s);
            null.push(v_t.row(k).iter().copied().collect::<Vec<f64>>());
        } else {
            smallest_kept = smallest_kept.min(s);
        }
    }
    // v_t only has min(rows, unknowns) rows; rows >= unknowns always holds here.
    if smallest_kept.is_finite() && (smallest_kept - largest_null) / sigma_max < MIN_NULL_GAP {
        return Err(Error::NonConvergence(format!(
            "commutant rank is ambiguous: singular-value gap {:.3e}",
            (smallest_kept - largest_null) / sigma_max
        )));
    }
    if null.is_empty() {
        return Err(Error::NonConvergence(
            "empty commutant (the identity should always commute)".into(),
        ));
    }
    Ok(null)
}

/// Finds an orthogonal `U` and the finest block partition with
/// `‖Uᵀ S_i U − blockdiag(Σ_j^{(i)})‖_F <= tol · ‖S_i‖_F` for every shift.
pub fn joint_block_diagonalize(s: &ShiftSet, opts: &JbdOptions) -> Result<SpectralDecomposition> {
    let n = s.dim();
    let symmetric = s.is_symmetric(1e-12);
    let mut generators: Vec<DMatrix<f64>> = Vec::new();
    for shift in s.shifts() {
        let scale = shift.norm();
        if scale == 0.0 {
            continue;
        }
        let normalized = shift / scale;
        if !symmetric {
            generators.push(normalized.transpose());
        }
        generators.push(normalized);
    }

    let null = if generators.is_empty() {
        symmetric_commutant(&[DMatrix::zeros(n, n)], n)?
    } else {
        symmetric_commutant(&generators, n)?
    };
    let commutant_dim = null.len();
    let pairs = sym_pairs(n);

    let (basis, blocks) = if commutant_dim == 1 {
        (DMatrix::identity(n, n), vec![0..n])
    } else {
        let mut r = rng::seeded(opts.seed);
        let mut coords = vec![0.0; pairs.len()];
        for v in &null {
            let c = rng::normal(&mut r);
            for (acc, x) in coords.iter_mut().zip(v) {
                *acc += c * x;
            }
        }
        let m = sym_element(n, &pairs, &coords);
        split_eigenspaces(m, opts.grouping)
    };

    let mut block_shifts = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let u = basis.columns(b.start, b.len());
        block_shifts.push(
            s.shifts()
                .iter()
                .map(|shift| u.transpose() * shift * u)
                .collect::<Vec<_>>(),
        );
    }

    let mut residual = 0.0_f64;
    for (i, shift) in s.shifts().iter().enumerate() {
        let norm = shift.norm();
        if norm == 0.0 {
            continue;
        }
        let rotated = basis.transpose() * shift * &basis;
        let diag: Vec<DMatrix<f64>> = block_shifts.iter().map(|b| b[i].clone()).collect();
        let leak = (rotated - linalg::block_diagonal(&diag)).norm() / norm;
        residual = residual.max(leak);
    }
    if residual > opts.tol {
        return Err(Error::NonConvergence(format!(
            "off-block residual {residual:.3e} exceeds tolerance {:.3e}",
            opts.tol
        )));
    }

    Ok(SpectralDecomposition {
        basis,
        blocks,
        block_shifts,
        offblock_residual: residual,
        commutant_dim,
    })
}

fn split_eigenspaces(m: DMatrix<f64>, grouping: f64) -> (DMatrix<f64>, Vec<Range<usize>>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let spread = values[n - 1] - values[0];
    let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    if spread <= 1e-12 * scale {
        groups.push((0..n).collect());
    } else {
        let mut current = vec![0];
        for k in 1..n {
            if values[k] - values[k - 1] <= grouping * spread {
                current.push(k);
            } else {
                groups.push(std::mem::take(&mut current));
                current.push(k);
            }
        }
        groups.push(current);
    }
    // Size first, eigenvalue order second.
    let mut indexed: Vec<(usize, Vec<usize>)> = groups.into_iter().enumerate().collect();
    indexed.sort_by_key(|(pos, g)| (g.len(), *pos));

    let mut basis = DMatrix::zeros(n, n);
    let mut blocks = Vec::with_capacity(indexed.len());
    let mut col = 0;
    for (_, g) in indexed {
        let start = col;
        for k in g {
            basis.column_mut(col).copy_from(&eig.eigenvectors.column(order[k]));
            col += 1;
        }
        blocks.push(start..col);
    }
    (basis, blocks)
}

/// Blockwise frequency response `p(Σ_j^{(1)}, …, Σ_j^{(m)})` for every block.
pub fn frequency_response(p: &NcPolynomial, d: &SpectralDecomposition) -> Result<Vec<DMatrix<f64>>> {
    ensure_generators(p.num_generators(), d.num_generators())?;
    Ok(d.block_shifts
        .iter()
        .map(|lambdas| polynomial_matrix(p, lambdas))
        .collect())
}

/// `x̂ = Uᵀ x`, split by blocks.
pub fn fourier_transform(x: &Signal, d: &SpectralDecomposition) -> Result<Vec<DVector<f64>>> {
    ensure_dim(d.dim(), x.len())?;
    let xhat = d.basis.tr_mul(x);
    Ok(d.blocks
        .iter()
        .map(|b| xhat.rows(b.start, b.len()).into_owned())
        .collect())
}

/// Reassembles `U x̂` from block components.
pub fn inverse_fourier_transform(components: &[DVector<f64>], d: &SpectralDecomposition) -> Result<Signal> {
    ensure_dim(d.num_blocks(), components.len())?;
    let mut xhat = DVector::zeros(d.dim());
    for (c, b) in components.iter().zip(&d.blocks) {
        ensure_dim(b.len(), c.len())?;
        xhat.rows_mut(b.start, b.len()).copy_from(c);
    }
    Ok(&d.basis * xhat)
}
