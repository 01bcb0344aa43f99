//! Interpolative decomposition and randomized two-sided low-rank
//! approximation.

use faer::{Mat, MatRef, Par};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::{column_norms, gather_cols, gather_rows, mul};

/// Singular values / pivots below this fraction of the largest are dropped by
/// [`orth`] and [`pinv`].
pub const RANK_CUTOFF: f64 = 1e-14;

/// `A(:, redundant) ≈ A(:, skeleton) · interp`, indices local to `A`'s columns.
#[derive(Clone, Debug)]
pub struct IdResult {
    pub skeleton: Vec<usize>,
    pub redundant: Vec<usize>,
    pub interp: Mat<f64>,
}

impl IdResult {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }
}

/// ε-accurate interpolative decomposition by column-pivoted QR, truncated at
/// the first pivot `|R_kk| ≤ ε |R_00|`.
///
/// Tall inputs are first reduced by a blocked unpivoted QR; the pivoted QR
/// then runs on the square triangular factor, which has the same column
/// Gram matrix and hence the same pivots.
pub fn interp_decomp(a: MatRef<'_, f64>, tol: f64) -> IdResult {
    if a.nrows() > 2 * a.ncols() && a.ncols() > 0 {
        let r0 = a.qr().thin_R().to_owned();
        return interp_decomp_square(r0.as_ref(), tol);
    }
    interp_decomp_square(a, tol)
}

fn interp_decomp_square(a: MatRef<'_, f64>, tol: f64) -> IdResult {
    let k = a.ncols();
    let all_redundant = || IdResult {
        skeleton: Vec::new(),
        redundant: (0..k).collect(),
        interp: Mat::zeros(0, k),
    };
    if k == 0 || a.nrows() == 0 {
        return all_redundant();
    }
    let qr = a.col_piv_qr();
    let r = qr.thin_R();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 || !lead.is_finite() {
        return all_redundant();
    }
    let size = r.nrows().min(k);
    let rank = (0..size).find(|&i| r[(i, i)].abs() <= tol * lead).unwrap_or(size);
    let perm = qr.P().arrays().0;
    let skeleton = perm[..rank].to_vec();
    let redundant = perm[rank..].to_vec();
    let mut interp = r.get(..rank, rank..).to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(r.get(..rank, ..rank), interp.as_mut(), Par::Seq);
    IdResult {
        skeleton,
        redundant,
        interp,
    }
}

/// Orthonormal basis for the columns of `y` by Householder QR; empty when
/// `y` is zero or not finite. Rank deficiency is left to the caller's
/// pseudoinverse.
pub fn orth(y: MatRef<'_, f64>) -> Mat<f64> {
    let m = y.nrows();
    let norm = y.norm_l2();
    if y.ncols() == 0 || m == 0 || norm == 0.0 || !norm.is_finite() {
        return Mat::zeros(m, 0);
    }
    let k = y.ncols().min(m);
    y.qr().compute_thin_Q().get(.., ..k).to_owned()
}

/// Truncated pseudoinverse; also returns the number of singular values kept.
pub fn pinv(a: MatRef<'_, f64>) -> (Mat<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (Mat::zeros(n, m), 0);
    }
    let svd = match a.thin_svd() {
        Ok(s) => s,
        // Non-convergence (non-finite input): report effective rank 0.
        Err(_) => return (Mat::zeros(n, m), 0),
    };
    let s = svd.S().column_vector();
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    if smax == 0.0 {
        return (Mat::zeros(n, m), 0);
    }
    let kept: Vec<usize> = (0..s.nrows()).filter(|&i| s[i] > RANK_CUTOFF * smax).collect();
    let u = svd.U();
    let v = svd.V();
    let vs = Mat::from_fn(n, kept.len(), |i, j| v[(i, kept[j])] / s[kept[j]]);
    let ut = Mat::from_fn(kept.len(), m, |i, j| u[(j, kept[i])]);
    (mul(vs.as_ref(), ut.as_ref()), kept.len())
}

/// Matrix with i.i.d. standard normal entries, filled column by column.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> Mat<f64> {
    let mut out = Mat::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            out[(i, j)] = rng.sample(StandardNormal);
        }
    }
    out
}

/// An approximation of one off-diagonal block, either factored as
/// `U₁ C U₂ᵀ` or, when the sketch covered every column, stored densely.
#[derive(Clone, Debug)]
pub struct LowRankBlock {
    repr: Repr,
    effective_rank: usize,
}

#[derive(Clone, Debug)]
enum Repr {
    Factored { u_left: Mat<f64>, core: Mat<f64>, u_right: Mat<f64> },
    Dense(Mat<f64>),
}

impl LowRankBlock {
    pub fn zero(m1: usize, m2: usize) -> Self {
        LowRankBlock {
            repr: Repr::Factored {
                u_left: Mat::zeros(m1, 0),
                core: Mat::zeros(0, 0),
                u_right: Mat::zeros(m2, 0),
            },
            effective_rank: 0,
        }
    }

    /// Number of basis columns (the smaller of the two sides); the smaller
    /// dimension for a dense block.
    pub fn rank(&self) -> usize {
        match &self.repr {
            Repr::Factored { u_left, u_right, .. } => u_left.ncols().min(u_right.ncols()),
            Repr::Dense(a) => a.nrows().min(a.ncols()),
        }
    }

    /// Basis width behind the core's solves, fewer if a pseudoinverse
    /// fallback truncated; the rank of a dense block.
    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    pub fn nrows(&self) -> usize {
        match &self.repr {
            Repr::Factored { u_left, .. } => u_left.nrows(),
            Repr::Dense(a) => a.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match &self.repr {
            Repr::Factored { u_right, .. } => u_right.nrows(),
            Repr::Dense(a) => a.ncols(),
        }
    }

    /// Block times `x` (`x` has `ncols()` rows).
    pub fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        match &self.repr {
            Repr::Factored { u_left, core, u_right } => {
                let t = mul(u_right.transpose(), x);
                let t = mul(core.as_ref(), t.as_ref());
                mul(u_left.as_ref(), t.as_ref())
            }
            Repr::Dense(a) => mul(a.as_ref(), x),
        }
    }

    /// Transposed block times `x` (`x` has `nrows()` rows).
    pub fn apply_t(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        match &self.repr {
            Repr::Factored { u_left, core, u_right } => {
                let t = mul(u_left.transpose(), x);
                let t = mul(core.transpose(), t.as_ref());
                mul(u_right.as_ref(), t.as_ref())
            }
            Repr::Dense(a) => mul(a.transpose(), x),
        }
    }

    /// `A(:, cols) · x`, for an `x` that vanishes outside `cols`.
    pub fn apply_cols(&self, cols: &[usize], x: MatRef<'_, f64>) -> Mat<f64> {
        match &self.repr {
            Repr::Factored { u_left, core, u_right } => {
                let t = mul(gather_rows(u_right.as_ref(), cols).transpose(), x);
                let t = mul(core.as_ref(), t.as_ref());
                mul(u_left.as_ref(), t.as_ref())
            }
            Repr::Dense(a) => mul(gather_cols(a.as_ref(), cols).as_ref(), x),
        }
    }

    /// `A(rows, :)ᵀ · x`.
    pub fn apply_t_rows(&self, rows: &[usize], x: MatRef<'_, f64>) -> Mat<f64> {
        match &self.repr {
            Repr::Factored { u_left, core, u_right } => {
                let t = mul(gather_rows(u_left.as_ref(), rows).transpose(), x);
                let t = mul(core.transpose(), t.as_ref());
                mul(u_right.as_ref(), t.as_ref())
            }
            Repr::Dense(a) => mul(gather_rows(a.as_ref(), rows).transpose(), x),
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        match &self.repr {
            Repr::Factored { u_left, core, u_right } => {
                let t = mul(u_left.as_ref(), core.as_ref());
                mul(t.as_ref(), u_right.transpose())
            }
            Repr::Dense(a) => a.clone(),
        }
    }
}

/// Two-sided approximation from precomputed sketches: `y1 = A·w1` and
/// `y2 = Aᵀ·w2`. The core is `(w2ᵀU₁)⁻¹ (w2ᵀ A w1) (U₂ᵀw1)⁻¹`, in the
/// least-squares sense.
pub fn lowrank_from_sketches(
    w1: MatRef<'_, f64>,
    y1: MatRef<'_, f64>,
    w2: MatRef<'_, f64>,
    y2: MatRef<'_, f64>,
) -> LowRankBlock {
    let (m1, m2) = (y1.nrows(), y2.nrows());
    let u1 = orth(y1);
    let u2 = orth(y2);
    if u1.ncols() == 0 || u2.ncols() == 0 {
        return LowRankBlock::zero(m1, m2);
    }
    // Both systems are a Gaussian sketch against an orthonormal basis, so
    // they are well conditioned and a QR solve suffices; the pseudoinverse
    // is the fallback for a numerically singular one.
    let middle = mul(w2.transpose(), y1);
    let a1 = mul(w2.transpose(), u1.as_ref());
    let (x, r1) = match try_lstsq(a1.as_ref(), middle.as_ref()) {
        Some(x) => (x, u1.ncols()),
        None => {
            let (p, r) = pinv(a1.as_ref());
            (mul(p.as_ref(), middle.as_ref()), r)
        }
    };
    // core · (U₂ᵀw1) = x  ⇔  (w1ᵀU₂) · coreᵀ = xᵀ.
    let a2 = mul(w1.transpose(), u2.as_ref());
    let (core_t, r2) = match try_lstsq(a2.as_ref(), x.transpose()) {
        Some(c) => (c, u2.ncols()),
        None => {
            let (p, r) = pinv(a2.as_ref());
            (mul(p.as_ref(), x.transpose()), r)
        }
    };
    LowRankBlock {
        repr: Repr::Factored {
            u_left: u1,
            core: core_t.transpose().to_owned(),
            u_right: u2,
        },
        effective_rank: r1.min(r2),
    }
}

/// Exact recovery when the probes span the whole column space
/// (`w1.ncols() ≥ w1.nrows()` and likewise for `w2`): the average of
/// `y1·w1⁺` and `(y2·w2⁺)ᵀ`, each by least squares.
pub fn dense_from_sketches(w1: MatRef<'_, f64>, y1: MatRef<'_, f64>, w2: MatRef<'_, f64>, y2: MatRef<'_, f64>) -> LowRankBlock {
    let (m1, m2) = (y1.nrows(), y2.nrows());
    assert!(w1.ncols() >= m2 && w2.ncols() >= m1, "sketch narrower than the block");
    // A w1 = y1  ⇔  w1ᵀ Aᵀ = y1ᵀ.
    let at = lstsq(w1.transpose(), y1.transpose());
    let a2 = lstsq(w2.transpose(), y2.transpose());
    let a = Mat::from_fn(m1, m2, |i, j| 0.5 * (at[(j, i)] + a2[(i, j)]));
    LowRankBlock {
        effective_rank: m1.min(m2),
        repr: Repr::Dense(a),
    }
}

/// [`lstsq`], or `None` if `a` is not numerically full column rank.
fn try_lstsq(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let n = a.ncols();
    if a.nrows() < n {
        return None;
    }
    if n == 0 {
        return Some(Mat::zeros(0, b.ncols()));
    }
    let qr = a.qr();
    let r = qr.thin_R();
    let d: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    let dmax = d.iter().copied().fold(0.0, f64::max);
    if !(dmax > 0.0) || d.iter().any(|&v| v <= 1e3 * f64::EPSILON * n as f64 * dmax) {
        return None;
    }
    let mut x = mul(qr.compute_thin_Q().transpose(), b);
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(r, x.as_mut(), Par::Seq);
    Some(x)
}

/// Least-squares solution of a tall, full-column-rank system.
fn lstsq(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let n = a.ncols();
    if n == 0 {
        return Mat::zeros(0, b.ncols());
    }
    let qr = a.qr();
    let qtb = mul(qr.compute_thin_Q().transpose(), b);
    let r = qr.thin_R();
    let mut x = qtb;
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(r, x.as_mut(), Par::Seq);
    x
}

/// Randomized two-sided approximation of an `m1 × m2` black box with target
/// rank `r` and oversampling `c`.
pub fn randomized_lowrank<R, F, G>(apply: F, apply_t: G, m1: usize, m2: usize, r: usize, c: usize, rng: &mut R) -> LowRankBlock
where
    R: Rng + ?Sized,
    F: Fn(MatRef<'_, f64>) -> Mat<f64>,
    G: Fn(MatRef<'_, f64>) -> Mat<f64>,
{
    let w = (r + c).min(m1.min(m2));
    let w1 = gaussian(rng, m2, w);
    let w2 = gaussian(rng, m1, w);
    let y1 = apply(w1.as_ref());
    let y2 = apply_t(w2.as_ref());
    lowrank_from_sketches(w1.as_ref(), y1.as_ref(), w2.as_ref(), y2.as_ref())
}

#[derive(Clone, Debug)]
pub struct AdaptiveLowRank {
    pub block: LowRankBlock,
    /// Final sketch width.
    pub width: usize,
    /// A posteriori relative error estimate.
    pub error: f64,
    /// The width reached `min(m1, m2)` without meeting the tolerance.
    pub no_compression: bool,
}

/// Number of fresh probes in each a posteriori error check.
pub const CHECK_PROBES: usize = 5;

/// Grow the sketch width from `r0` by `growth` until the residual on
/// [`CHECK_PROBES`] fresh Gaussian vectors is at most `tol` relative to the
/// block's response on the same vectors. Earlier probe columns are reused.
pub fn adaptive_rank_lowrank<R, F, G>(
    apply: F,
    apply_t: G,
    m1: usize,
    m2: usize,
    tol: f64,
    r0: usize,
    growth: usize,
    rng: &mut R,
) -> AdaptiveLowRank
where
    R: Rng + ?Sized,
    F: Fn(MatRef<'_, f64>) -> Mat<f64>,
    G: Fn(MatRef<'_, f64>) -> Mat<f64>,
{
    let cap = m1.min(m2);
    let growth = growth.max(2);
    let mut w = r0.max(1).min(cap);
    let mut w1 = Mat::zeros(m2, 0);
    let mut w2 = Mat::zeros(m1, 0);
    let mut y1 = Mat::zeros(m1, 0);
    let mut y2 = Mat::zeros(m2, 0);
    loop {
        let extra = w - w1.ncols();
        let n1 = gaussian(rng, m2, extra);
        let n2 = gaussian(rng, m1, extra);
        w1 = hcat(w1.as_ref(), n1.as_ref());
        w2 = hcat(w2.as_ref(), n2.as_ref());
        y1 = hcat(y1.as_ref(), apply(n1.as_ref()).as_ref());
        y2 = hcat(y2.as_ref(), apply_t(n2.as_ref()).as_ref());
        let block = lowrank_from_sketches(w1.as_ref(), y1.as_ref(), w2.as_ref(), y2.as_ref());

        let c1 = gaussian(rng, m2, CHECK_PROBES);
        let c2 = gaussian(rng, m1, CHECK_PROBES);
        let s1 = apply(c1.as_ref());
        let s2 = apply_t(c2.as_ref());
        let r1 = &s1 - block.apply(c1.as_ref());
        let r2 = &s2 - block.apply_t(c2.as_ref());
        let scale = max_of(&column_norms(s1.as_ref())).max(max_of(&column_norms(s2.as_ref())));
        let resid = max_of(&column_norms(r1.as_ref())).max(max_of(&column_norms(r2.as_ref())));
        let error = if scale == 0.0 { 0.0 } else { resid / scale };
        if error <= tol || w >= cap {
            return AdaptiveLowRank {
                block,
                width: w,
                error,
                no_compression: error > tol || (w >= cap && cap > r0),
            };
        }
        w = (w * growth).min(cap);
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// `[a, b]`.
pub fn hcat(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let k = a.ncols();
    Mat::from_fn(a.nrows(), k + b.ncols(), |i, j| if j < k { a[(i, j)] } else { b[(i, j - k)] })
}

/// Power-iteration estimate of ‖A‖₂.
pub fn spectral_norm<R: Rng + ?Sized>(a: MatRef<'_, f64>, iters: usize, rng: &mut R) -> f64 {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = gaussian(rng, a.ncols(), 1);
    let mut est = 0.0;
    for _ in 0..iters {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return 0.0;
        }
        v = v * faer::Scale(1.0 / nv);
        let av = mul(a, v.as_ref());
        est = av.norm_l2();
        v = mul(a.transpose(), av.as_ref());
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn id_residual(a: MatRef<'_, f64>, id: &IdResult) -> Mat<f64> {
        let s = crate::dense::gather_cols(a, &id.skeleton);
        let r = crate::dense::gather_cols(a, &id.redundant);
        r - mul(s.as_ref(), id.interp.as_ref())
    }

    #[test]
    fn id_of_duplicated_column() {
        let a = Mat::from_fn(3, 2, |i, _| (i + 1) as f64);
        let id = interp_decomp(a.as_ref(), 1e-12);
        assert_eq!(id.rank(), 1);
        assert!(id_residual(a.as_ref(), &id).norm_l2() <= 1e-14);
    }

    #[test]
    fn id_of_low_rank_product() {
        let mut g = rng(1);
        let a = mul(gaussian(&mut g, 40, 5).as_ref(), gaussian(&mut g, 5, 50).as_ref());
        let id = interp_decomp(a.as_ref(), 1e-10);
        assert_eq!(id.rank(), 5);
        let norm = spectral_norm(a.as_ref(), 50, &mut g);
        let res = spectral_norm(id_residual(a.as_ref(), &id).as_ref(), 50, &mut g);
        assert!(res <= 1e-10 * norm);
        // Skeleton columns are columns of A itself.
        let mut all: Vec<usize> = id.skeleton.iter().chain(&id.redundant).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn id_of_identity_and_zero() {
        let id = interp_decomp(Mat::<f64>::identity(4, 4).as_ref(), 1e-12);
        assert_eq!(id.rank(), 4);
        assert!(id.redundant.is_empty());
        let id = interp_decomp(Mat::<f64>::zeros(3, 4).as_ref(), 1e-12);
        assert_eq!(id.rank(), 0);
        assert_eq!(id.redundant.len(), 4);
        assert_eq!(id.interp.shape(), (0, 4));
    }

    #[test]
    fn randomized_rank_three() {
        let mut g = rng(2);
        let a = mul(gaussian(&mut g, 60, 3).as_ref(), gaussian(&mut g, 3, 45).as_ref());
        let blk = randomized_lowrank(|x| mul(a.as_ref(), x), |x| mul(a.transpose(), x), 60, 45, 3, 8, &mut g);
        let err = (blk.to_dense() - &a).norm_l2();
        let norm = spectral_norm(a.as_ref(), 50, &mut g);
        assert!(err <= 1e-10 * norm, "{err} vs {norm}");
    }

    #[test]
    fn randomized_zero() {
        let mut g = rng(3);
        let a = Mat::<f64>::zeros(20, 30);
        let blk = randomized_lowrank(|x| mul(a.as_ref(), x), |x| mul(a.transpose(), x), 20, 30, 4, 8, &mut g);
        assert_eq!(blk.to_dense().norm_l2(), 0.0);
    }

    fn geometric(m: usize, n: usize, g: &mut ChaCha8Rng) -> (Mat<f64>, Vec<f64>) {
        let q1 = orth(gaussian(g, m, m.min(n)).as_ref());
        let q2 = orth(gaussian(g, n, m.min(n)).as_ref());
        let s: Vec<f64> = (0..m.min(n)).map(|i| 10f64.powi(-(i as i32))).collect();
        let scaled = Mat::from_fn(m, s.len(), |i, j| q1[(i, j)] * s[j]);
        (mul(scaled.as_ref(), q2.transpose()), s)
    }

    #[test]
    fn randomized_near_optimal_on_geometric_decay() {
        let mut g = rng(4);
        let (a, s) = geometric(50, 40, &mut g);
        let blk = randomized_lowrank(|x| mul(a.as_ref(), x), |x| mul(a.transpose(), x), 50, 40, 10, 8, &mut g);
        let err = spectral_norm((blk.to_dense() - &a).as_ref(), 100, &mut g);
        assert!(err <= 20.0 * s[10], "{err} vs {}", s[10]);
    }

    #[test]
    fn adaptive_cases() {
        let mut g = rng(5);
        let a = mul(gaussian(&mut g, 50, 5).as_ref(), gaussian(&mut g, 5, 50).as_ref());
        let res = adaptive_rank_lowrank(|x| mul(a.as_ref(), x), |x| mul(a.transpose(), x), 50, 50, 1e-8, 2, 2, &mut g);
        assert!(res.width >= 5);
        assert!(res.error <= 1e-8);
        assert!(!res.no_compression);
        assert!((res.block.to_dense() - &a).norm_l2() <= 1e-8 * a.norm_l2());

        let z = Mat::<f64>::zeros(30, 30);
        let res = adaptive_rank_lowrank(|x| mul(z.as_ref(), x), |x| mul(z.transpose(), x), 30, 30, 1e-6, 4, 2, &mut g);
        assert_eq!(res.width, 4);
        assert_eq!(res.block.to_dense().norm_l2(), 0.0);

        let eye = Mat::<f64>::identity(64, 64);
        let res = adaptive_rank_lowrank(|x| mul(eye.as_ref(), x), |x| mul(eye.transpose(), x), 64, 64, 1e-6, 4, 2, &mut g);
        assert_eq!(res.width, 64);
        assert!(res.no_compression);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = mul(gaussian(&mut rng(9), 30, 4).as_ref(), gaussian(&mut rng(10), 4, 30).as_ref());
        let run = |seed| {
            randomized_lowrank(|x| mul(a.as_ref(), x), |x| mul(a.transpose(), x), 30, 30, 4, 8, &mut rng(seed)).to_dense()
        };
        assert_eq!(run(11), run(11));
    }

    fn product(seed: u64, m: usize, r: usize, k: usize) -> Mat<f64> {
        let mut g = rng(seed);
        mul(gaussian(&mut g, m, r).as_ref(), gaussian(&mut g, r, k).as_ref())
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { cases: 64, rng_seed: proptest::test_runner::RngSeed::Fixed(5), ..Default::default() })]

        #[test]
        fn id_partitions_and_meets_tolerance(seed in 0u64..1000, m in 1usize..80, k in 1usize..60, r in 0usize..12, tol_exp in 4i32..12) {
            let tol = 10f64.powi(-tol_exp);
            let r = r.min(m).min(k);
            let a = product(seed, m, r, k);
            let id = interp_decomp(a.as_ref(), tol);
            proptest::prop_assert!(id.rank() <= r);
            let mut all: Vec<usize> = id.skeleton.iter().chain(&id.redundant).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
            let res = id_residual(a.as_ref(), &id).norm_l2();
            proptest::prop_assert!(res <= 10.0 * (k as f64).sqrt() * tol * a.norm_l2().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn sketches_recover_exact_low_rank(seed in 0u64..1000, m1 in 8usize..60, m2 in 8usize..60, r in 1usize..6) {
            let a = product(seed, m1, r, m2);
            let mut g = rng(seed + 1);
            let w = r + 3;
            let (w1, w2) = (gaussian(&mut g, m2, w), gaussian(&mut g, m1, w));
            let blk = lowrank_from_sketches(w1.as_ref(), mul(a.as_ref(), w1.as_ref()).as_ref(), w2.as_ref(), mul(a.transpose(), w2.as_ref()).as_ref());
            proptest::prop_assert!((blk.to_dense() - &a).norm_l2() <= 1e-8 * a.norm_l2());

            let (w1, w2) = (gaussian(&mut g, m2, m2.max(m1)), gaussian(&mut g, m1, m2.max(m1)));
            let blk = dense_from_sketches(w1.as_ref(), mul(a.as_ref(), w1.as_ref()).as_ref(), w2.as_ref(), mul(a.transpose(), w2.as_ref()).as_ref());
            proptest::prop_assert!(blk.is_dense());
            proptest::prop_assert!((blk.to_dense() - &a).norm_l2() <= 1e-8 * a.norm_l2());

            // Restricted applies agree with the full ones on matching supports.
            let cols: Vec<usize> = (0..m2).step_by(3).collect();
            let x = gaussian(&mut g, cols.len(), 2);
            let mut full = Mat::zeros(m2, 2);
            crate::dense::scatter_rows(full.as_mut(), &cols, x.as_ref());
            proptest::prop_assert!((blk.apply_cols(&cols, x.as_ref()) - blk.apply(full.as_ref())).norm_l2() <= 1e-12 * a.norm_l2());
        }
    }
}
