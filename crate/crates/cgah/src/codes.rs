//! Bit-packed ±1 codes, Hamming-similarity scoring, top-k retrieval, and the
//! orthogonality-constrained delegate update.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grouping::{group_affinity, GroupProfile};


/// Packed ±1 codes for one entity set: bit 1 encodes +1, bit 0 encodes -1.
///
/// Each entity owns `ceil(r / 64)` little-endian 64-bit words; unused high
/// bits of the last word stay zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodeSet {
    count: usize,
    r: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

/// Borrowed view of a single packed code.
#[derive(Debug, Clone, Copy)]
pub struct CodeView<'a> {
    pub words: &'a [u64],
    pub len: usize,
}

impl BinaryCodeSet {
    pub fn new(count: usize, r: usize) -> Self {
        assert!(r >= 1, "code length must be at least 1");
        let words_per_code = r.div_ceil(64);
        Self { count, r, words_per_code, words: vec![0; count * words_per_code] }
    }

    /// Pack a batch of ±1 vectors. Any entry other than +1/-1 is rejected.
    pub fn pack(codes: &[Vec<i8>]) -> Result<Self> {
        let r = codes.first().map_or(0, |c| c.len());
        if r == 0 {
            return Err(Error::InvalidValue("cannot pack empty codes".into()));
        }
        let mut set = Self::new(codes.len(), r);
        for (e, code) in codes.iter().enumerate() {
            if code.len() != r {
                return Err(Error::DimensionMismatch("ragged code lengths".into()));
            }
            for (k, &v) in code.iter().enumerate() {
                match v {
                    1 => set.set_bit(e, k, 1),
                    -1 => set.set_bit(e, k, -1),
                    other => {
                        return Err(Error::InvalidValue(format!(
                            "code entry must be +1 or -1, got {other}"
                        )))
                    }
                }
            }
        }
        Ok(set)
    }

    /// Pack the signs of real values, breaking zeros to +1. Row-major, one
    /// row of `r` values per entity.
    pub fn from_sign(values: &[f64], count: usize, r: usize) -> Result<Self> {
        if values.len() != count * r {
            return Err(Error::DimensionMismatch("sign buffer size".into()));
        }
        let mut set = Self::new(count, r);
        for e in 0..count {
            for k in 0..r {
                set.set_bit(e, k, if values[e * r + k] < 0.0 { -1 } else { 1 });
            }
        }
        Ok(set)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn code_len(&self) -> usize {
        self.r
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(count: usize, r: usize, words: Vec<u64>) -> Result<Self> {
        let wpc = r.div_ceil(64);
        if words.len() != count * wpc {
            return Err(Error::DimensionMismatch("packed word buffer size".into()));
        }
        // Unused high bits must be zero for popcount scans to be exact.
        if !r.is_multiple_of(64) {
            let mask = (1u64 << (r % 64)) - 1;
            for e in 0..count {
                if words[e * wpc + wpc - 1] & !mask != 0 {
                    return Err(Error::InvalidValue("nonzero padding bits in packed code".into()));
                }
            }
        }
        Ok(Self { count, r, words_per_code: wpc, words })
    }

    pub fn view(&self, e: usize) -> CodeView<'_> {
        CodeView { words: &self.words[e * self.words_per_code..(e + 1) * self.words_per_code], len: self.r }
    }

    /// Logical ±1 value of bit `k` of entity `e`.
    pub fn get_bit(&self, e: usize, k: usize) -> i8 {
        let w = self.words[e * self.words_per_code + k / 64];
        if (w >> (k % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn set_bit(&mut self, e: usize, k: usize, value: i8) {
        debug_assert!(value == 1 || value == -1);
        let w = &mut self.words[e * self.words_per_code + k / 64];
        if value == 1 {
            *w |= 1 << (k % 64);
        } else {
            *w &= !(1 << (k % 64));
        }
    }

    /// Unpack one code to its logical ±1 vector.
    pub fn unpack(&self, e: usize) -> Vec<i8> {
        (0..self.r).map(|k| self.get_bit(e, k)).collect()
    }

    /// Mutable word slices for disjoint per-entity updates.
    pub(crate) fn words_mut(&mut self) -> (&mut [u64], usize) {
        (&mut self.words, self.words_per_code)
    }

    /// Mean of each bit position over entities, used for row-centering.
    fn bit_means(&self) -> Vec<f64> {
        let mut sums = vec![0i64; self.r];
        for e in 0..self.count {
            for (k, s) in sums.iter_mut().enumerate() {
                *s += self.get_bit(e, k) as i64;
            }
        }
        sums.into_iter().map(|s| s as f64 / self.count as f64).collect()
    }
}

/// Hamming distance between two equal-length packed codes.
pub fn hamming_distance(a: CodeView<'_>, b: CodeView<'_>) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::DimensionMismatch(format!("code lengths {} vs {}", a.len, b.len)));
    }
    Ok(a.words.iter().zip(b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Integer inner product of two ±1 codes via popcount: `r - 2 * hamming`.
pub fn code_dot(a: CodeView<'_>, b: CodeView<'_>) -> Result<i64> {
    Ok(a.len as i64 - 2 * hamming_distance(a, b)? as i64)
}

/// Hamming similarity `1/2 + (b . d) / 2r`, in [0, 1].
///
/// The inner product is taken over the packed words with popcount, so this
/// equals `1 - hamming / r` with no elementwise arithmetic.
pub fn hamming_similarity(a: CodeView<'_>, b: CodeView<'_>) -> Result<f64> {
    let dot = code_dot(a, b)?;
    Ok(0.5 + dot as f64 / (2.0 * a.len as f64))
}

/// Preference score: group affinity times Hamming similarity.
pub fn predict_preference(s: f64, b: CodeView<'_>, d: CodeView<'_>) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidValue(format!("affinity {s} outside (0, 1)")));
    }
    Ok(s * hamming_similarity(b, d)?)
}

/// Rank items for one user by affinity-weighted Hamming similarity.
///
/// Items in `exclude` (sorted indices) are never returned. Ties break toward
/// the lower item index. Returns at most `k` `(item, score)` pairs.
///
/// The item range is scanned in fixed-size shards that may run on separate
/// workers; per-shard results merge in shard order, so the ranking does not
/// depend on scheduling.
pub fn topk(
    user: usize,
    user_codes: &BinaryCodeSet,
    item_codes: &BinaryCodeSet,
    p: &GroupProfile,
    q: &GroupProfile,
    k: usize,
    exclude: &[u32],
) -> Result<Vec<(u32, f64)>> {
    assert!(k >= 1, "k must be at least 1");
    if user_codes.code_len() != item_codes.code_len() {
        return Err(Error::DimensionMismatch(format!(
            "code lengths {} vs {}",
            user_codes.code_len(),
            item_codes.code_len()
        )));
    }
    if p.kappa() != q.kappa() {
        return Err(Error::DimensionMismatch("profile kappa mismatch".into()));
    }
    let b = user_codes.view(user);
    let pu = p.row(user);
    const SHARD: usize = 8192;
    let n = item_codes.count();
    let n_shards = n.div_ceil(SHARD).max(1);
    let shards: Vec<Vec<(u32, f64)>> = crate::par::map_collect(n_shards, |shard| {
        let lo = shard * SHARD;
        let hi = (lo + SHARD).min(n);
        let mut scored: Vec<(u32, f64)> = Vec::with_capacity((hi - lo).min(k + exclude.len()));
        for j in lo..hi {
            if exclude.binary_search(&(j as u32)).is_ok() {
                continue;
            }
            let s = group_affinity(pu, q.row(j)).unwrap();
            let score = s * hamming_similarity(b, item_codes.view(j)).unwrap();
            scored.push((j as u32, score));
        }
        scored.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    });
    let mut merged: Vec<(u32, f64)> = shards.into_iter().flatten().collect();
    merged.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    merged.truncate(k);
    Ok(merged)
}

/// Real-valued delegate of a code set, row-major `count x r`.
///
/// After [`update_delegate`] every bit column sums to zero and the column
/// Gram matrix equals `count * I`, the relaxed balance/decorrelation set.
#[derive(Debug, Clone, PartialEq)]
pub struct DelegateMatrix {
    count: usize,
    r: usize,
    values: Vec<f64>,
}

impl DelegateMatrix {
    pub fn from_values(count: usize, r: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != count * r {
            return Err(Error::DimensionMismatch("delegate buffer size".into()));
        }
        Ok(Self { count, r, values })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn code_len(&self) -> usize {
        self.r
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.values[e * self.r..(e + 1) * self.r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `max_k | sum_e X[e][k] |`, the balance-constraint residual.
    pub fn max_abs_bit_sum(&self) -> f64 {
        (0..self.r)
            .map(|k| (0..self.count).map(|e| self.values[e * self.r + k]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of `X^T X - count * I`, the decorrelation residual.
    pub fn gram_deviation(&self) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.r {
            for b in 0..self.r {
                let mut g = 0.0;
                for e in 0..self.count {
                    g += self.values[e * self.r + a] * self.values[e * self.r + b];
                }
                if a == b {
                    g -= self.count as f64;
                }
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    /// `sum_e B[e] . X[e]`, the alignment the delegate update maximizes.
    pub fn trace_alignment(&self, codes: &BinaryCodeSet) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.count {
            for k in 0..self.r {
                acc += codes.get_bit(e, k) as f64 * self.values[e * self.r + k];
            }
        }
        acc
    }
}

/// Paired delegates for the user and item code sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DelegatePair {
    pub x: DelegateMatrix,
    pub y: DelegateMatrix,
}

const SINGULAR_TOL: f64 = 1e-9;

/// Orthonormal completion: extend `basis` (columns of length `dim`) to
/// `target` columns by Gram-Schmidt over the standard basis, staying
/// orthogonal to every column of `extra_orthogonal_to` as well.
fn complete_basis(
    basis: &DMatrix<f64>,
    extra_orthogonal_to: Option<&DMatrix<f64>>,
    target: usize,
) -> Result<DMatrix<f64>> {
    let dim = basis.nrows();
    let mut cols: Vec<DMatrix<f64>> = Vec::new();
    let deficit = target - basis.ncols();
    if deficit == 0 {
        return Ok(DMatrix::zeros(dim, 0));
    }
    'candidates: for cand in 0..dim {
        if cols.len() == deficit {
            break;
        }
        let mut v = DMatrix::zeros(dim, 1);
        v[(cand, 0)] = 1.0;
        for src in [Some(basis), extra_orthogonal_to].into_iter().flatten() {
            for c in 0..src.ncols() {
                let col = src.column(c);
                let proj: f64 = (0..dim).map(|i| v[(i, 0)] * col[i]).sum();
                for i in 0..dim {
                    v[(i, 0)] -= proj * col[i];
                }
            }
        }
        for prev in &cols {
            let proj: f64 = (0..dim).map(|i| v[(i, 0)] * prev[(i, 0)]).sum();
            for i in 0..dim {
                v[(i, 0)] -= proj * prev[(i, 0)];
            }
        }
        let norm: f64 = (0..dim).map(|i| v[(i, 0)] * v[(i, 0)]).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue 'candidates;
        }
        for i in 0..dim {
            v[(i, 0)] /= norm;
        }
        cols.push(v);
    }
    if cols.len() < deficit {
        return Err(Error::InternalConsistency(
            "could not complete an orthonormal basis for the delegate update".into(),
        ));
    }
    let mut out = DMatrix::zeros(dim, deficit);
    for (c, v) in cols.iter().enumerate() {
        out.set_column(c, &v.column(0));
    }
    Ok(out)
}

/// Solve `max tr(B^T X)` over delegates with zero bit-column sums and
/// `X^T X = count * I` via SVD of the bit-centered code matrix.
///
/// The centered matrix `Bc = B - 1 mean^T` is decomposed as `W S Z^T`; the
/// maximizer is `sqrt(count) [W W_hat][Z Z_hat]^T`, where the completions
/// `W_hat` (orthogonal to the left vectors and to the all-ones direction)
/// and `Z_hat` come from Gram-Schmidt over the standard basis.
pub fn update_delegate(codes: &BinaryCodeSet) -> Result<DelegateMatrix> {
    let n = codes.count();
    let r = codes.code_len();
    if n <= r {
        return Err(Error::InvalidValue(format!(
            "delegate update needs more entities ({n}) than code bits ({r})"
        )));
    }
    let means = codes.bit_means();
    let mut centered = DMatrix::<f64>::zeros(n, r);
    for e in 0..n {
        for k in 0..r {
            centered[(e, k)] = codes.get_bit(e, k) as f64 - means[k];
        }
    }
    let svd = centered.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Divergence("SVD did not produce U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Divergence("SVD did not produce V^T".into()))?;
    let rank = svd.singular_values.iter().filter(|&&s| s > SINGULAR_TOL).count();

    // Keep only columns for nonzero singular values.
    let w = u.columns(0, rank).into_owned();
    let z = v_t.rows(0, rank).transpose();

    let ones = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
    let w_hat = complete_basis(&w, Some(&ones), rank + (r - rank))?;
    let z_hat = complete_basis(&z, None, r)?;

    let mut w_full = DMatrix::zeros(n, r);
    let mut z_full = DMatrix::zeros(r, r);
    for c in 0..rank {
        w_full.set_column(c, &w.column(c));
        z_full.set_column(c, &z.column(c));
    }
    for c in rank..r {
        w_full.set_column(c, &w_hat.column(c - rank));
        z_full.set_column(c, &z_hat.column(c - rank));
    }

    let x = (n as f64).sqrt() * w_full * z_full.transpose();
    DelegateMatrix::from_values(n, r, x.transpose().as_slice().to_vec())
}

/// Upper bound `n * r` on the delegate alignment; attained iff the codes
/// themselves satisfy both constraints.
pub fn alignment_bound(codes: &BinaryCodeSet) -> f64 {
    (codes.count() * codes.code_len()) as f64
}
