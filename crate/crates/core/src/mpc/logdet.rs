//! Shared matrices and the square-root-free secure LDL log-determinant.

use super::arith::{add_public, add_shared, mul_batch, sub_shared};
use super::fixed::RingElement;
use super::network::{PartyNetwork, SharedValue};
use super::recip_log::{secure_log_batch, secure_reciprocal, LogParams, RecipParams};
use super::triples::TripleDealer;
use super::MpcError;
use crate::linalg::Matrix;

/// A matrix of additively shared fixed-point entries.
#[derive(Debug, Clone)]
pub struct SharedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<SharedValue>,
}

impl SharedMatrix {
    pub fn entry(&self, i: usize, j: usize) -> &SharedValue {
        &self.entries[i * self.cols + j]
    }

    fn entry_mut(&mut self, i: usize, j: usize) -> &mut SharedValue {
        &mut self.entries[i * self.cols + j]
    }

    /// Share a plaintext matrix held by `owner`.
    pub fn share(m: &Matrix, owner: usize, net: &mut PartyNetwork) -> Result<Self, MpcError> {
        let mut entries = Vec::with_capacity(m.rows() * m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                entries.push(net.share_real_from(owner, m[(i, j)])?);
            }
        }
        Ok(SharedMatrix { rows: m.rows(), cols: m.cols(), entries })
    }

    pub fn add(&self, other: &SharedMatrix) -> Result<SharedMatrix, MpcError> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(MpcError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| add_shared(a, b))
            .collect::<Result<_, _>>()?;
        Ok(SharedMatrix { rows: self.rows, cols: self.cols, entries })
    }

    /// Add a public constant to the diagonal (local).
    pub fn add_diag_public(&self, c: f64) -> Result<SharedMatrix, MpcError> {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            *out.entry_mut(i, i) = add_public(self.entry(i, i), c)?;
        }
        Ok(out)
    }

    /// Reveal every entry; logs one broadcast per entry.
    pub fn reveal(&self, net: &mut PartyNetwork) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = net.reveal(self.entry(i, j), None);
            }
        }
        m
    }
}

/// Shared matrix product via batched Beaver multiplication: one broadcast
/// round for the whole product, one triple per scalar multiplication.
pub fn mat_mul_shared(
    a: &SharedMatrix,
    b: &SharedMatrix,
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<SharedMatrix, MpcError> {
    if a.cols != b.rows {
        return Err(MpcError::DimensionMismatch(format!(
            "{}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut lhs = Vec::with_capacity(a.rows * a.cols * b.cols);
    let mut rhs = Vec::with_capacity(lhs.capacity());
    for i in 0..a.rows {
        for j in 0..b.cols {
            for k in 0..a.cols {
                lhs.push(a.entry(i, k).clone());
                rhs.push(b.entry(k, j).clone());
            }
        }
    }
    let prods = mul_batch(&lhs, &rhs, dealer, net)?;
    let mut entries = Vec::with_capacity(a.rows * b.cols);
    let mut idx = 0;
    for _ in 0..a.rows {
        for _ in 0..b.cols {
            let mut acc = prods[idx].clone();
            idx += 1;
            for _ in 1..a.cols {
                acc = add_shared(&acc, &prods[idx])?;
                idx += 1;
            }
            entries.push(acc);
        }
    }
    Ok(SharedMatrix { rows: a.rows, cols: b.cols, entries })
}

/// Options for the secure log-determinant. `pivot_lo`/`pivot_hi` declare
/// the band the plaintext LDL pivots are known to live in; the reciprocal
/// seed and the pivot pre-shift for the logarithm are derived from them.
#[derive(Debug, Clone, Copy)]
pub struct LogdetOptions {
    pub pivot_lo: f64,
    pub pivot_hi: f64,
    pub recip_iters: Option<usize>,
    pub log_iters: Option<usize>,
}

impl Default for LogdetOptions {
    fn default() -> Self {
        LogdetOptions { pivot_lo: 2f64.powi(-4), pivot_hi: 2f64.powi(6), recip_iters: None, log_iters: None }
    }
}

/// log det A for a shared symmetric positive definite matrix.
///
/// Runs the same square-root-free LDL recurrence as the plaintext kernel:
/// one secure reciprocal per pivot drives the column scaling, Schur
/// updates are batched Beaver multiplications, and the pivots are shifted
/// below one and passed through the batched Householder logarithm. The
/// shift is a public power of two, corrected after the fact.
pub fn secure_ldl_logdet(
    a: &SharedMatrix,
    opts: LogdetOptions,
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<SharedValue, MpcError> {
    if a.rows != a.cols {
        return Err(MpcError::DimensionMismatch(format!("{}x{} not square", a.rows, a.cols)));
    }
    let n = a.rows;
    if n == 0 {
        let zero = SharedValue {
            shares: vec![RingElement(0); net.party_count()],
            cfg: net.config(),
        };
        return Ok(zero);
    }

    let mut recip_params = RecipParams::for_domain(opts.pivot_lo, opts.pivot_hi);
    if let Some(it) = opts.recip_iters {
        recip_params = recip_params.with_iters(it);
    }

    let mut work = a.clone();
    let mut pivots = Vec::with_capacity(n);
    for j in 0..n {
        let d_j = work.entry(j, j).clone();
        pivots.push(d_j.clone());
        if j + 1 == n {
            break;
        }
        let r_j = secure_reciprocal(&d_j, recip_params, dealer, net)?;
        // Column of L below the pivot, in one round.
        let col: Vec<SharedValue> = (j + 1..n).map(|i| work.entry(i, j).clone()).collect();
        let reps: Vec<SharedValue> = col.iter().map(|_| r_j.clone()).collect();
        let l_col = mul_batch(&col, &reps, dealer, net)?;
        // Schur complement update on the trailing block, in one round.
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for (li, i) in l_col.iter().zip(j + 1..n) {
            for k in j + 1..=i {
                lhs.push(li.clone());
                rhs.push(work.entry(j, k).clone());
            }
        }
        let prods = mul_batch(&lhs, &rhs, dealer, net)?;
        let mut idx = 0;
        for i in j + 1..n {
            for k in j + 1..=i {
                let updated = sub_shared(work.entry(i, k), &prods[idx])?;
                idx += 1;
                *work.entry_mut(i, k) = updated.clone();
                if i != k {
                    *work.entry_mut(k, i) = updated;
                }
            }
        }
    }

    // Shift pivots below one so all Householder targets sit on the
    // high-accuracy side, then correct by n * shift * ln 2 in public.
    let shift = opts.pivot_hi.log2().ceil() as i32;
    let scaled: Vec<SharedValue> =
        pivots.iter().map(|d| super::arith::scale_pow2(d, -shift)).collect();
    let mut log_params = LogParams::for_domain(opts.pivot_lo * 2f64.powi(-shift), 1.0);
    if let Some(it) = opts.log_iters {
        log_params = log_params.with_iters(it);
    }
    let logs = secure_log_batch(&scaled, log_params, dealer, net)?;
    let mut acc = logs[0].clone();
    for l in &logs[1..] {
        acc = add_shared(&acc, l)?;
    }
    add_public(&acc, n as f64 * shift as f64 * std::f64::consts::LN_2)
}
