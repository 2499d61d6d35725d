//! Dense symmetric indefinite factorization.
//!
//! `LdlFactor` computes `P A Pᵀ = L D Lᵀ` with Bunch-Kaufman partial pivoting,
//! where `L` is unit lower triangular and `D` is block diagonal with 1×1 and
//! 2×2 blocks. The inertia of `A` is read off `D`, which is what the KKT
//! machinery uses to certify second-order sufficiency and to drive the
//! Hessian regularization in the SQP solver.
//!
//! The matrix is first reordered by reverse Cuthill-McKee and factored in
//! band storage that widens on demand when pivoting creates fill, so banded
//! KKT systems such as multiple-shooting transcriptions factor in
//! near-linear time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sprs::CsMat;

/// Bunch-Kaufman pivot threshold, (1 + sqrt(17)) / 8.
const BK_ALPHA: f64 = 0.640_388_203_202_208_4;

/// Number of positive, negative and zero eigenvalues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    pub fn new(positive: usize, negative: usize, zero: usize) -> Self {
        Self {
            positive,
            negative,
            zero,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pivot {
    One,
    /// First row of a 2×2 block; the following row is its partner.
    TwoFirst,
    TwoSecond,
}

/// Lower band storage: column `j` holds rows `j..=j + w` contiguously.
#[derive(Clone, Debug)]
struct Band {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            data: vec![0.0; n * (w + 1)],
        }
    }

    #[inline]
    fn stride(&self) -> usize {
        self.w + 1
    }

    /// Entry `(i, j)` for `i ≥ j`; zero outside the band.
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        if i - j > self.w {
            0.0
        } else {
            self.data[i - j + j * self.stride()]
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i >= j && i - j <= self.w);
        let s = self.stride();
        &mut self.data[i - j + j * s]
    }

    /// Rows `j..=hi` of column `j`.
    #[inline]
    fn col(&self, j: usize, hi: usize) -> &[f64] {
        let s = j * self.stride();
        &self.data[s..s + hi - j + 1]
    }

    fn grow(&mut self, w: usize) {
        let w = w.min(self.n.saturating_sub(1));
        if w <= self.w {
            return;
        }
        let (old, new) = (self.stride(), w + 1);
        let mut data = vec![0.0; self.n * new];
        for j in 0..self.n {
            data[j * new..j * new + old].copy_from_slice(&self.data[j * old..(j + 1) * old]);
        }
        self.data = data;
        self.w = w;
    }
}

#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    /// Strictly lower part holds L, the diagonal and the first sub-diagonal
    /// of 2×2 blocks hold D.
    a: Band,
    perm: Vec<usize>,
    pivots: Vec<Pivot>,
    /// Bound on the last row with a nonzero entry of L in each column.
    last: Vec<usize>,
    ordering: Vec<usize>,
    scale: f64,
    inertia: Inertia,
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity pattern of `m`
/// (lower triangle read). Matrices with the same pattern can share it through
/// [`LdlFactor::with_ordering`].
pub fn symmetric_ordering(m: &DMatrix<f64>) -> Vec<usize> {
    ordering_from_entries(m.nrows(), &lower_entries(m))
}

/// As [`symmetric_ordering`] for a matrix given by its lower-triangle entries.
pub fn ordering_from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut adjacency: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(i, j, v) in entries {
        if i != j && v != 0.0 {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    indptr.push(0);
    for row in &mut adjacency {
        row.sort_unstable();
        row.dedup();
        indices.extend_from_slice(row);
        indptr.push(indices.len());
    }
    let ones = vec![1u8; indices.len()];
    let pattern = CsMat::new((n, n), indptr, indices, ones);
    sprs::linalg::reverse_cuthill_mckee(pattern.view())
        .perm
        .vec()
}

/// Nonzero entries `(i, j, v)` with `i ≥ j` of a square matrix.
pub fn lower_entries(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    let data = m.as_slice();
    let mut out = Vec::new();
    for j in 0..n {
        for (i, &v) in data[j * n + j..(j + 1) * n].iter().enumerate() {
            if v != 0.0 {
                out.push((i + j, j, v));
            }
        }
    }
    out
}

impl LdlFactor {
    /// Factorizes the symmetric matrix `m`; only its lower triangle is read.
    ///
    /// Pivots with magnitude below `1e-13 * max|m_ij|` are counted as zero
    /// eigenvalues, in which case [`LdlFactor::is_singular`] returns true and
    /// solves are refused.
    pub fn new(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "LDL factorization requires a square matrix");
        Self::with_ordering(m, &symmetric_ordering(m))
    }

    /// As [`LdlFactor::new`] with a precomputed symmetric ordering. Any
    /// permutation gives a correct factorization; a good one keeps it cheap.
    pub fn with_ordering(m: &DMatrix<f64>, ordering: &[usize]) -> Self {
        assert!(m.is_square(), "LDL factorization requires a square matrix");
        Self::from_entries(m.nrows(), &lower_entries(m), ordering)
    }

    /// Factorizes the symmetric `n × n` matrix whose lower triangle is given
    /// by `entries` (`i ≥ j`, duplicates summed) under `ordering`.
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)], ordering: &[usize]) -> Self {
        assert_eq!(ordering.len(), n, "ordering length must match the matrix");
        let mut perm = ordering.to_vec();
        let mut position = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            position[old] = new;
        }
        let mut width = 0;
        let mut scale = 0.0f64;
        let placed: Vec<(usize, usize, f64)> = entries
            .iter()
            .filter(|e| e.2 != 0.0)
            .map(|&(i, j, v)| {
                debug_assert!(i >= j && i < n);
                let (r, c) = (position[i].max(position[j]), position[i].min(position[j]));
                width = width.max(r - c);
                (r, c, v)
            })
            .collect();
        // Room for the fill of a few off-diagonal pivots before regrowing.
        let mut a = Band::new(n, (2 * width + 2).min(n.saturating_sub(1)));
        // hi[j] bounds the last nonzero row of column j.
        let mut hi: Vec<usize> = (0..n).collect();
        for (r, c, v) in placed {
            *a.at(r, c) += v;
            hi[c] = hi[c].max(r);
        }
        for j in 0..n {
            for &v in a.col(j, hi[j]) {
                scale = scale.max(v.abs());
            }
        }
        let tiny = 1e-13 * scale.max(f64::MIN_POSITIVE);
        let mut pivots = vec![Pivot::One; n];
        let mut inertia = Inertia::default();

        let mut k = 0;
        while k < n {
            let absakk = a.get(k, k).abs();
            let (imax, colmax) = column_max(&a, k, hi[k]);

            if absakk.max(colmax) <= tiny {
                // Whole remaining column is negligible: zero pivot.
                inertia.zero += 1;
                for i in k..=hi[k] {
                    *a.at(i, k) = 0.0;
                }
                k += 1;
                continue;
            }

            let mut kstep = 1;
            let kp;
            if absakk >= BK_ALPHA * colmax {
                kp = k;
            } else {
                let rowmax = row_max(&a, k, imax, hi[imax]);
                if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                    kp = k;
                } else if a.get(imax, imax).abs() >= BK_ALPHA * rowmax {
                    kp = imax;
                } else {
                    kp = imax;
                    kstep = 2;
                }
            }

            let kk = k + kstep - 1;
            if kp != kk {
                symmetric_swap(&mut a, kk, kp, &mut hi);
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let d = a.get(k, k);
                let h = hi[k];
                if d.abs() <= tiny {
                    inertia.zero += 1;
                    for i in k..=h {
                        *a.at(i, k) = 0.0;
                    }
                } else {
                    if d > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    let r = 1.0 / d;
                    rank_one_update(&mut a, k, r, h);
                    for j in k + 1..=h {
                        hi[j] = hi[j].max(h);
                        *a.at(j, k) *= r;
                    }
                }
                pivots[k] = Pivot::One;
            } else {
                let d11 = a.get(k, k);
                let d21 = a.get(k + 1, k);
                let d22 = a.get(k + 1, k + 1);
                let det = d11 * d22 - d21 * d21;
                // Eigenvalue signs of the 2×2 block.
                if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if det > 0.0 {
                    if d11 + d22 > 0.0 {
                        inertia.positive += 2;
                    } else {
                        inertia.negative += 2;
                    }
                } else {
                    inertia.zero += 1;
                    if d11 + d22 > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                }
                let h = hi[k].max(hi[k + 1]);
                if h - k > a.w {
                    a.grow(h - k);
                }
                rank_two_update(&mut a, k, d11, d21, d22, h);
                hi[k] = h;
                hi[k + 1] = h;
                for j in k + 2..=h {
                    hi[j] = hi[j].max(h);
                }
                pivots[k] = Pivot::TwoFirst;
                pivots[k + 1] = Pivot::TwoSecond;
            }
            k += kstep;
        }

        Self {
            n,
            a,
            perm,
            pivots,
            last: hi,
            ordering: ordering.to_vec(),
            scale,
            inertia,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Largest entry magnitude of the factored matrix.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The symmetric ordering applied before pivoting.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn is_singular(&self) -> bool {
        self.inertia.zero > 0
    }

    /// Solves `A x = b`. Returns `None` if the factorization is singular.
    pub fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        if self.is_singular() {
            return None;
        }
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        self.solve_permuted_in_place(&mut x);
        let mut out = DVector::zeros(n);
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = x[k];
        }
        Some(out)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if self.is_singular() {
            return None;
        }
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Some(out)
    }

    /// `x[k+1..=last] -= L[.., k] * xk`.
    #[inline]
    fn eliminate(&self, x: &mut [f64], k: usize, xk: f64) {
        if xk != 0.0 {
            let col = self.a.col(k, self.last[k]);
            for (xi, l) in x[k + 1..=self.last[k]].iter_mut().zip(&col[1..]) {
                *xi -= l * xk;
            }
        }
    }

    /// `x[k+1..=last] · L[.., k]`.
    #[inline]
    fn dot_below(&self, x: &[f64], k: usize) -> f64 {
        let col = self.a.col(k, self.last[k]);
        x[k + 1..=self.last[k]]
            .iter()
            .zip(&col[1..])
            .map(|(xi, l)| xi * l)
            .sum()
    }

    fn solve_permuted_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let a = &self.a;
        // L y = b
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One => {
                    let xk = x[k];
                    self.eliminate(x, k, xk);
                    k += 1;
                }
                _ => {
                    let (x0, x1) = (x[k], x[k + 1]);
                    // The block's own sub-diagonal entry belongs to D.
                    let saved = x[k + 1];
                    self.eliminate(x, k, x0);
                    x[k + 1] = saved;
                    self.eliminate(x, k + 1, x1);
                    k += 2;
                }
            }
        }
        // D z = y
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One => {
                    x[k] /= a.get(k, k);
                    k += 1;
                }
                _ => {
                    let d11 = a.get(k, k);
                    let d21 = a.get(k + 1, k);
                    let d22 = a.get(k + 1, k + 1);
                    let det = d11 * d22 - d21 * d21;
                    let (y0, y1) = (x[k], x[k + 1]);
                    x[k] = (d22 * y0 - d21 * y1) / det;
                    x[k + 1] = (d11 * y1 - d21 * y0) / det;
                    k += 2;
                }
            }
        }
        // Lᵀ x = z
        let mut k = n;
        while k > 0 {
            let j = k - 1;
            match self.pivots[j] {
                Pivot::One => {
                    x[j] -= self.dot_below(x, j);
                    k -= 1;
                }
                _ => {
                    // j is the second row of a 2×2 block starting at j - 1.
                    let f = j - 1;
                    x[j] -= self.dot_below(x, j);
                    // Skip the in-block entry of column f.
                    let col = a.col(f, self.last[f]);
                    let s: f64 = x[j + 1..=self.last[f].max(j)]
                        .iter()
                        .zip(col.get(2..).unwrap_or(&[]))
                        .map(|(xi, l)| xi * l)
                        .sum();
                    x[f] -= s;
                    k -= 2;
                }
            }
        }
    }
}

fn column_max(a: &Band, k: usize, hi: usize) -> (usize, f64) {
    let mut imax = k;
    let mut colmax = 0.0;
    for (off, v) in a.col(k, hi).iter().enumerate().skip(1) {
        let v = v.abs();
        if v > colmax {
            colmax = v;
            imax = k + off;
        }
    }
    (imax, colmax)
}

/// Largest off-diagonal magnitude in row/column `imax` of the trailing block.
fn row_max(a: &Band, k: usize, imax: usize, hi: usize) -> f64 {
    let mut m = 0.0f64;
    for j in k.max(imax.saturating_sub(a.w))..imax {
        m = m.max(a.get(imax, j).abs());
    }
    for v in &a.col(imax, hi)[1..] {
        m = m.max(v.abs());
    }
    m
}

/// Swaps rows and columns `r < s` of the lower-stored symmetric matrix,
/// including the already computed columns of L, keeping the column bounds
/// `hi` valid and widening the band when the swap needs it.
fn symmetric_swap(a: &mut Band, r: usize, s: usize, hi: &mut [usize]) {
    debug_assert!(r < s);
    let bound = hi[r].max(hi[s]).max(s);
    let lo = r.saturating_sub(a.w);
    let mut need = bound - r;
    for j in lo..r {
        if a.get(r, j) != 0.0 {
            need = need.max(s - j);
        }
    }
    a.grow(need);
    for j in lo..r {
        let (x, y) = (a.get(r, j), a.get(s, j));
        if x != 0.0 || y != 0.0 {
            *a.at(r, j) = y;
            *a.at(s, j) = x;
            if x != 0.0 {
                hi[j] = hi[j].max(s);
            }
        }
    }
    let (drr, dss) = (a.get(r, r), a.get(s, s));
    *a.at(r, r) = dss;
    *a.at(s, s) = drr;
    for j in r + 1..s {
        let (x, y) = (a.get(j, r), a.get(s, j));
        *a.at(j, r) = y;
        *a.at(s, j) = x;
        if x != 0.0 {
            hi[j] = hi[j].max(s);
        }
    }
    for i in s + 1..=bound {
        let (x, y) = (a.get(i, r), a.get(i, s));
        *a.at(i, r) = y;
        *a.at(i, s) = x;
    }
    hi[r] = bound;
    hi[s] = bound;
}

fn rank_one_update(a: &mut Band, k: usize, r: f64, hi: usize) {
    let st = a.stride();
    for j in k + 1..=hi {
        let ajk = a.get(j, k);
        if ajk == 0.0 {
            continue;
        }
        let f = r * ajk;
        let (head, tail) = a.data.split_at_mut(j * st);
        let ck = &head[k * st + (j - k)..k * st + (hi - k) + 1];
        for (x, y) in tail[..hi - j + 1].iter_mut().zip(ck) {
            *x -= f * y;
        }
    }
}

fn rank_two_update(a: &mut Band, k: usize, d11: f64, d21: f64, d22: f64, hi: usize) {
    // D⁻¹ = [d22 -d21; -d21 d11] / det, applied to the pair of columns.
    let det = d11 * d22 - d21 * d21;
    let st = a.stride();
    let len = hi.saturating_sub(k + 1);
    // Multipliers for every trailing row, computed before any update.
    let c0: Vec<f64> = (k + 2..=hi).map(|i| a.get(i, k)).collect();
    let c1: Vec<f64> = (k + 2..=hi).map(|i| a.get(i, k + 1)).collect();
    let w0: Vec<f64> = (0..len)
        .map(|t| (d22 * c0[t] - d21 * c1[t]) / det)
        .collect();
    let w1: Vec<f64> = (0..len)
        .map(|t| (d11 * c1[t] - d21 * c0[t]) / det)
        .collect();
    for t in 0..len {
        let (f0, f1) = (w0[t], w1[t]);
        if f0 == 0.0 && f1 == 0.0 {
            continue;
        }
        let j = k + 2 + t;
        let col = &mut a.data[j * st..j * st + hi - j + 1];
        for (u, x) in col.iter_mut().enumerate() {
            *x -= c0[t + u] * f0 + c1[t + u] * f1;
        }
    }
    for t in 0..len {
        *a.at(k + 2 + t, k) = w0[t];
        *a.at(k + 2 + t, k + 1) = w1[t];
    }
}

/// The saddle-point matrix `[[H + δI, Aᵀ], [A, −δ_c I]]` kept as its
/// lower-triangle nonzeros, so assembly and products cost what the sparsity
/// pattern costs rather than the dense dimension.
#[derive(Clone, Debug)]
pub struct SaddleMatrix {
    n: usize,
    m: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SaddleMatrix {
    pub fn new(h: &DMatrix<f64>, a: &DMatrix<f64>) -> Self {
        Self::shifted(h, a, 0.0, 0.0)
    }

    pub fn shifted(h: &DMatrix<f64>, a: &DMatrix<f64>, delta: f64, delta_c: f64) -> Self {
        let n = h.nrows();
        let m = a.nrows();
        assert_eq!(
            a.ncols(),
            n,
            "constraint Jacobian width must match the Hessian"
        );
        let mut entries = Vec::new();
        let hs = h.as_slice();
        for j in 0..n {
            let d = hs[j * n + j] + delta;
            if d != 0.0 {
                entries.push((j, j, d));
            }
            for (i, &v) in hs[j * n + j + 1..(j + 1) * n].iter().enumerate() {
                if v != 0.0 {
                    entries.push((i + j + 1, j, v));
                }
            }
            for (i, &v) in a.column(j).iter().enumerate() {
                if v != 0.0 {
                    entries.push((n + i, j, v));
                }
            }
        }
        if delta_c != 0.0 {
            entries.extend((n..n + m).map(|i| (i, i, -delta_c)));
        }
        Self { n, m, entries }
    }

    /// Same blocks with different shifts on the diagonal.
    pub fn with_shifts(&self, delta: f64, delta_c: f64) -> Self {
        let mut entries = self.entries.clone();
        let mut diag = vec![false; self.n + self.m];
        for e in &mut entries {
            if e.0 == e.1 {
                diag[e.0] = true;
                e.2 += if e.0 < self.n { delta } else { -delta_c };
            }
        }
        for (i, seen) in diag.into_iter().enumerate() {
            let shift = if i < self.n { delta } else { -delta_c };
            if !seen && shift != 0.0 {
                entries.push((i, i, shift));
            }
        }
        Self {
            n: self.n,
            m: self.m,
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `K x`.
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut k = DMatrix::zeros(d, d);
        for &(i, j, v) in &self.entries {
            k[(i, j)] += v;
            if i != j {
                k[(j, i)] += v;
            }
        }
        k
    }

    pub fn factor(&self, ordering: &[usize]) -> LdlFactor {
        LdlFactor::from_entries(self.dim(), &self.entries, ordering)
    }

    pub fn ordering(&self) -> Vec<usize> {
        ordering_from_entries(self.dim(), &self.entries)
    }
}

/// Assembles `[[H, Aᵀ], [A, 0]]` for `H` (n×n) and `A` (m×n).
pub fn saddle_matrix(h: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let m = a.nrows();
    let dim = n + m;
    let mut k = DMatrix::zeros(dim, dim);
    let out = k.as_mut_slice();
    let (hs, as_) = (h.as_slice(), a.as_slice());
    for j in 0..n {
        out[j * dim..j * dim + n].copy_from_slice(&hs[j * n..(j + 1) * n]);
        out[j * dim + n..(j + 1) * dim].copy_from_slice(&as_[j * m..(j + 1) * m]);
        for i in 0..m {
            out[j + (n + i) * dim] = as_[i + j * m];
        }
    }
    k
}
