//! Trace estimation for symmetric black-box operators: weak-admissibility
//! matrix peeling over a quadtree, and the Hutchinson baseline.
//!
//! Peeling walks the tree top-down. At level ℓ every parent's children are
//! sibling boxes whose interactions are assumed low rank. Probes supported on
//! the k-th child of every parent are pushed through the operator with all
//! previously recovered levels subtracted; the response restricted to a
//! sibling gives a column sample of that sibling block, and symmetry gives
//! the matching row sample. After the last level the remainder is block
//! diagonal over leaves, and identity probes read those blocks off directly.

use std::time::Instant;

use faer::{Mat, MatRef};
use rand::Rng;

use crate::dense::{column_norms, gather_rows, mul, scatter_rows};
use crate::error::{Error, Result};
use crate::geom::{NodeId, QuadTree};
use crate::lowrank::{dense_from_sketches, gaussian, hcat, lowrank_from_sketches, LowRankBlock, CHECK_PROBES};
use crate::rskelf::SkelFactorization;

/// A linear operator available only through products with blocks of vectors.
pub trait BlackBox: Sync {
    fn dim(&self) -> usize;
    /// `G · x` for an `n × k` block.
    fn apply(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>>;
}

/// An explicit matrix as a black box.
pub struct DenseOperator(pub Mat<f64>);

impl BlackBox for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        check_dim(self.dim(), x.nrows())?;
        Ok(mul(self.0.as_ref(), x))
    }
}

/// A closure as a black box.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(MatRef<'_, f64>) -> Mat<f64> + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        FnOperator { n, f }
    }
}

impl<F> BlackBox for FnOperator<F>
where
    F: Fn(MatRef<'_, f64>) -> Mat<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        check_dim(self.n, x.nrows())?;
        Ok((self.f)(x))
    }
}

fn check_dim(n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::Dimension { expected: n, got });
    }
    Ok(())
}

/// `x ↦ ½(F⁻¹(F_i x) + F_i(F⁻¹ x))`, symmetric by construction, whose trace
/// approximates `Tr(Σ⁻¹Σ_i)`.
pub struct SymmetrizedProduct<'a> {
    f: &'a SkelFactorization,
    fi: &'a SkelFactorization,
}

pub fn build_symmetrized_product<'a>(f: &'a SkelFactorization, fi: &'a SkelFactorization) -> Result<SymmetrizedProduct<'a>> {
    check_dim(f.n(), fi.n())?;
    Ok(SymmetrizedProduct { f, fi })
}

impl BlackBox for SymmetrizedProduct<'_> {
    fn dim(&self) -> usize {
        self.f.n()
    }

    fn apply(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let a = self.f.solve_mat(self.fi.apply_mat(x)?.as_ref())?;
        let b = self.fi.apply_mat(self.f.solve_mat(x)?.as_ref())?;
        Ok((a + b) * faer::Scale(0.5))
    }
}

/// Relative asymmetry `|xᵀGy − yᵀGx| / (‖x‖‖Gy‖ + ‖y‖‖Gx‖)` on two random
/// vectors.
pub fn asymmetry<R: Rng + ?Sized>(op: &dyn BlackBox, rng: &mut R) -> Result<f64> {
    let v = gaussian(rng, op.dim(), 2);
    let gv = op.apply(v.as_ref())?;
    let xgy: f64 = (0..v.nrows()).map(|i| v[(i, 0)] * gv[(i, 1)]).sum();
    let ygx: f64 = (0..v.nrows()).map(|i| v[(i, 1)] * gv[(i, 0)]).sum();
    let vn = column_norms(v.as_ref());
    let gn = column_norms(gv.as_ref());
    let scale = vn[0] * gn[1] + vn[1] * gn[0];
    Ok(if scale == 0.0 { 0.0 } else { (xgy - ygx).abs() / scale })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeelOptions {
    /// Target relative accuracy ε_peel of every sibling block.
    pub tol: f64,
    /// Initial rank guess.
    pub r0: usize,
    /// Oversampling added to the initial rank.
    pub oversample: usize,
    /// Width multiplier per adaptive step.
    pub growth: usize,
    /// Largest accepted relative asymmetry of the operator. An unsymmetrized
    /// product is off by order one, while rounding in ill-conditioned solves
    /// reaches about 1e-7.
    pub symmetry_tol: f64,
}

impl Default for PeelOptions {
    fn default() -> Self {
        PeelOptions {
            tol: 1e-6,
            r0: 16,
            oversample: 8,
            growth: 2,
            symmetry_tol: 1e-4,
        }
    }
}

/// `G_{ij} ≈ block` for sibling boxes `i`, `j`; `G_{ji}` is its transpose.
#[derive(Clone, Debug)]
pub struct PairBlock {
    pub i: NodeId,
    pub j: NodeId,
    pub block: LowRankBlock,
}

#[derive(Clone, Debug)]
pub struct PeelLevel {
    pub level: usize,
    pub pairs: Vec<PairBlock>,
    /// Probe columns per child group.
    pub width: usize,
    /// Worst a posteriori residual over the level's pairs, relative to the
    /// largest block response seen so far, at the final width; if the probes
    /// widened to full rank, the last error observed before (0 if they
    /// started there).
    pub error: f64,
    /// The tolerance was not met: either the probes grew to the size of the
    /// largest child box and the blocks were recovered densely, or widening
    /// stopped reducing the residual.
    pub capped: bool,
}

impl PeelLevel {
    pub fn max_rank(&self) -> usize {
        self.pairs.iter().map(|p| p.block.rank()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct PeelResult {
    pub levels: Vec<PeelLevel>,
    /// Dense diagonal block of every leaf.
    pub leaf_blocks: Vec<(NodeId, Mat<f64>)>,
    pub trace: f64,
    /// Σ|G_ii| over the extracted diagonal; large relative to |trace| flags
    /// cancellation.
    pub abs_diag_sum: f64,
    /// Columns pushed through the operator, including checks.
    pub matvecs: usize,
    pub seconds: f64,
}

impl PeelResult {
    pub fn any_capped(&self) -> bool {
        self.levels.iter().any(|l| l.capped)
    }
}

/// Applies `G − Σ_{m<upto} G^{(m)}` using the stored sibling blocks.
struct Peeled<'a> {
    op: &'a dyn BlackBox,
    tree: &'a QuadTree,
    levels: &'a [PeelLevel],
}

impl Peeled<'_> {
    fn apply(&self, x: MatRef<'_, f64>, matvecs: &mut usize) -> Result<Mat<f64>> {
        let mut y = self.op.apply(x)?;
        *matvecs += x.ncols();
        if self.levels.is_empty() {
            return Ok(y);
        }
        // Probes are supported on a few boxes; blocks only need the columns
        // where `x` is nonzero.
        let nonzero: Vec<bool> = (0..x.nrows()).map(|i| (0..x.ncols()).any(|j| x[(i, j)] != 0.0)).collect();
        let support = |idx: &[usize]| -> (Vec<usize>, Vec<usize>) {
            idx.iter().enumerate().filter(|&(_, &g)| nonzero[g]).map(|(l, &g)| (l, g)).unzip()
        };
        for level in self.levels {
            for p in &level.pairs {
                let (ii, ij) = (self.tree.indices(p.i), self.tree.indices(p.j));
                let (lj, gj) = support(ij);
                if !lj.is_empty() {
                    let yi = gather_rows(y.as_ref(), ii) - p.block.apply_cols(&lj, gather_rows(x, &gj).as_ref());
                    scatter_rows(y.as_mut(), ii, yi.as_ref());
                }
                let (li, gi) = support(ii);
                if !li.is_empty() {
                    let yj = gather_rows(y.as_ref(), ij) - p.block.apply_t_rows(&li, gather_rows(x, &gi).as_ref());
                    scatter_rows(y.as_mut(), ij, yj.as_ref());
                }
            }
        }
        Ok(y)
    }
}

/// `G·x` with every sibling block recovered in `result` subtracted; for an
/// accurate peel this is block diagonal over the leaves.
pub fn remainder_apply(op: &dyn BlackBox, tree: &QuadTree, result: &PeelResult, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_dim(op.dim(), tree.n_points())?;
    let peeled = Peeled {
        op,
        tree,
        levels: &result.levels,
    };
    peeled.apply(x, &mut 0)
}

/// Trace of a symmetric operator by weak-admissibility peeling over `tree`.
pub fn peel_trace<R: Rng + ?Sized>(op: &dyn BlackBox, tree: &QuadTree, opts: &PeelOptions, rng: &mut R) -> Result<PeelResult> {
    let start = Instant::now();
    let n = op.dim();
    check_dim(n, tree.n_points())?;
    if !(opts.tol > 0.0) {
        return Err(Error::input("peeling tolerance must be positive"));
    }
    let mut matvecs = 2;
    let asym = asymmetry(op, rng)?;
    if asym > opts.symmetry_tol {
        return Err(Error::NotSymmetric(asym));
    }

    let mut levels: Vec<PeelLevel> = Vec::new();
    // Largest block response seen so far. Residuals are measured against it
    // rather than against each block's own response: weak blocks would
    // otherwise fail on the error left over from coarser levels.
    let mut scale: f64 = 0.0;
    for level in 1..=tree.depth() {
        let parents: Vec<NodeId> = tree
            .nodes_at(level - 1)
            .iter()
            .copied()
            .filter(|&p| !tree.node(p).is_leaf())
            .collect();
        let children: Vec<NodeId> = parents.iter().flat_map(|&p| tree.node(p).children.iter().copied()).collect();
        let groups = parents.iter().map(|&p| tree.node(p).children.len()).max().unwrap_or(0);
        let cap = children.iter().map(|&c| tree.node(c).len()).max().unwrap_or(0);
        let peeled = Peeled {
            op,
            tree,
            levels: &levels,
        };

        // Probes per child box, and per group the operator's response to
        // the probes of every parent's k-th child.
        let mut probes: Vec<Mat<f64>> = children.iter().map(|&c| Mat::zeros(tree.node(c).len(), 0)).collect();
        let mut sketches: Vec<Mat<f64>> = (0..groups).map(|_| Mat::zeros(n, 0)).collect();
        let mut width = (opts.r0 + opts.oversample).min(cap);
        let mut last_error = 0.0;
        let mut prev_error = f64::INFINITY;
        let (pairs, error, capped) = loop {
            // The check probes ride along in the same products, and join the
            // sketch if the width has to grow.
            let extra = width - probes.first().map_or(0, |p| p.ncols());
            let n_check = if width < cap { CHECK_PROBES } else { 0 };
            let cols: Vec<Mat<f64>> = children
                .iter()
                .map(|&c| gaussian(rng, tree.node(c).len(), extra + n_check))
                .collect();
            let out = grouped_apply(&peeled, tree, &children, &cols, groups, extra + n_check, &mut matvecs)?;
            for (p, c) in probes.iter_mut().zip(&cols) {
                *p = hcat(p.as_ref(), c.get(.., ..extra));
            }
            for (s, y) in sketches.iter_mut().zip(&out) {
                *s = hcat(s.as_ref(), y.get(.., ..extra));
            }

            // Once the probes span every child box the blocks follow exactly
            // from the sketches, so there is nothing left to check.
            let full = width >= cap;
            let pairs = sibling_blocks(tree, &parents, &children, &probes, &sketches, full);
            if full {
                break (pairs, last_error, true);
            }

            let checks: Vec<MatRef<'_, f64>> = cols.iter().map(|c| c.get(.., extra..)).collect();
            let responses: Vec<MatRef<'_, f64>> = out.iter().map(|y| y.get(.., extra..)).collect();
            let (resid, level_scale) = check_pairs(tree, &parents, &children, &pairs, &checks, &responses);
            scale = scale.max(level_scale);
            let error = if resid > 0.0 { resid / scale.max(f64::MIN_POSITIVE) } else { 0.0 };
            if error <= opts.tol {
                break (pairs, error, false);
            }
            // Once the blocks are roughly right, a residual that shrinks
            // slower than the width grows is the error left by coarser
            // levels, which wider probes cannot remove.
            let growth = opts.growth.max(2);
            if error <= opts.tol.sqrt() && error * growth as f64 > prev_error {
                break (pairs, error, true);
            }
            last_error = error;
            prev_error = error;
            let next = (width * growth).min(cap);
            let reuse = n_check.min(next - width);
            for (p, c) in probes.iter_mut().zip(&cols) {
                *p = hcat(p.as_ref(), c.get(.., extra..extra + reuse));
            }
            for (s, y) in sketches.iter_mut().zip(&out) {
                *s = hcat(s.as_ref(), y.get(.., extra..extra + reuse));
            }
            width = next;
        };
        levels.push(PeelLevel {
            level,
            pairs,
            width,
            error,
            capped,
        });
    }

    // Identity probes, one column per position within a leaf.
    let leaves: Vec<NodeId> = tree.leaves().collect();
    let width = tree.max_leaf_size();
    let mut e = Mat::zeros(n, width);
    for &l in &leaves {
        for (a, &i) in tree.indices(l).iter().enumerate() {
            e[(i, a)] = 1.0;
        }
    }
    let peeled = Peeled {
        op,
        tree,
        levels: &levels,
    };
    let h = peeled.apply(e.as_ref(), &mut matvecs)?;
    let mut trace = 0.0;
    let mut abs_diag_sum = 0.0;
    let mut leaf_blocks = Vec::with_capacity(leaves.len());
    for &l in &leaves {
        let idx = tree.indices(l);
        let block = Mat::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], b)]);
        for a in 0..idx.len() {
            trace += block[(a, a)];
            abs_diag_sum += block[(a, a)].abs();
        }
        leaf_blocks.push((l, block));
    }
    Ok(PeelResult {
        levels,
        leaf_blocks,
        trace,
        abs_diag_sum,
        matvecs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// For each child index k, apply the peeled operator to the block that
/// carries `cols[c]` on every child `c` in position k.
#[allow(clippy::too_many_arguments)]
fn grouped_apply(
    peeled: &Peeled<'_>,
    tree: &QuadTree,
    children: &[NodeId],
    cols: &[Mat<f64>],
    groups: usize,
    width: usize,
    matvecs: &mut usize,
) -> Result<Vec<Mat<f64>>> {
    let n = tree.n_points();
    let mut out = Vec::with_capacity(groups);
    for k in 0..groups {
        if width == 0 {
            out.push(Mat::zeros(n, 0));
            continue;
        }
        let mut x = Mat::zeros(n, width);
        for (ci, &c) in children.iter().enumerate() {
            if tree.node(c).child_index == k {
                scatter_rows(x.as_mut(), tree.indices(c), cols[ci].as_ref());
            }
        }
        out.push(peeled.apply(x.as_ref(), matvecs)?);
    }
    Ok(out)
}

fn sibling_pairs<'a>(tree: &'a QuadTree, parents: &'a [NodeId], children: &'a [NodeId]) -> impl Iterator<Item = (usize, usize)> + 'a {
    // Children of one parent are contiguous in `children`.
    let mut offset = 0;
    let mut out = Vec::new();
    for &p in parents {
        let m = tree.node(p).children.len();
        for a in 0..m {
            for b in a + 1..m {
                out.push((offset + a, offset + b));
            }
        }
        offset += m;
    }
    debug_assert_eq!(offset, children.len());
    out.into_iter()
}

fn sibling_blocks(
    tree: &QuadTree,
    parents: &[NodeId],
    children: &[NodeId],
    probes: &[Mat<f64>],
    sketches: &[Mat<f64>],
    full: bool,
) -> Vec<PairBlock> {
    sibling_pairs(tree, parents, children)
        .map(|(a, b)| {
            let (ci, cj) = (children[a], children[b]);
            let (ii, ij) = (tree.indices(ci), tree.indices(cj));
            // G_ij W_j: probes of group k(j) read on box i; G_ji W_i likewise.
            let y1 = gather_rows(sketches[tree.node(cj).child_index].as_ref(), ii);
            let y2 = gather_rows(sketches[tree.node(ci).child_index].as_ref(), ij);
            PairBlock {
                i: ci,
                j: cj,
                block: if full {
                    dense_from_sketches(probes[b].as_ref(), y1.as_ref(), probes[a].as_ref(), y2.as_ref())
                } else {
                    lowrank_from_sketches(probes[b].as_ref(), y1.as_ref(), probes[a].as_ref(), y2.as_ref())
                },
            }
        })
        .collect()
}

fn check_pairs(
    tree: &QuadTree,
    parents: &[NodeId],
    children: &[NodeId],
    pairs: &[PairBlock],
    checks: &[MatRef<'_, f64>],
    responses: &[MatRef<'_, f64>],
) -> (f64, f64) {
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let (mut worst, mut top): (f64, f64) = (0.0, 0.0);
    for ((a, b), pair) in sibling_pairs(tree, parents, children).zip(pairs) {
        let (ci, cj) = (children[a], children[b]);
        let (ii, ij) = (tree.indices(ci), tree.indices(cj));
        let y1 = gather_rows(responses[tree.node(cj).child_index], ii);
        let y2 = gather_rows(responses[tree.node(ci).child_index], ij);
        let r1 = &y1 - pair.block.apply(checks[b]);
        let r2 = &y2 - pair.block.apply_t(checks[a]);
        let scale = max(column_norms(y1.as_ref())).max(max(column_norms(y2.as_ref())));
        let resid = max(column_norms(r1.as_ref())).max(max(column_norms(r2.as_ref())));
        worst = worst.max(resid);
        top = top.max(scale);
    }
    (worst, top)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HutchinsonResult {
    pub estimate: f64,
    /// Sample variance of the individual quadratic forms.
    pub variance: f64,
    pub matvecs: usize,
}

/// `(1/q) Σ uᵢᵀ G uᵢ` with Rademacher `uᵢ`.
pub fn hutchinson_trace<R: Rng + ?Sized>(op: &dyn BlackBox, q: usize, rng: &mut R) -> Result<HutchinsonResult> {
    if q == 0 {
        return Err(Error::input("Hutchinson needs at least one sample"));
    }
    let n = op.dim();
    const BATCH: usize = 64;
    let mut forms = Vec::with_capacity(q);
    while forms.len() < q {
        let k = BATCH.min(q - forms.len());
        let mut u = Mat::zeros(n, k);
        for j in 0..k {
            for i in 0..n {
                u[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let gu = op.apply(u.as_ref())?;
        for j in 0..k {
            forms.push((0..n).map(|i| u[(i, j)] * gu[(i, j)]).sum::<f64>());
        }
    }
    let mean = forms.iter().sum::<f64>() / q as f64;
    let variance = if q > 1 {
        forms.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (q - 1) as f64
    } else {
        0.0
    };
    Ok(HutchinsonResult {
        estimate: mean,
        variance,
        matvecs: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PointSet;
    use crate::kernel::{Anisotropy, Family, KernelModel, Nugget, Which};
    use crate::oracle::dense_sigma;
    use crate::rskelf::FactorOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn grid_tree(side: usize, n_occ: usize) -> (PointSet, QuadTree) {
        let pts = PointSet::grid(side, 100.0).unwrap();
        let tree = QuadTree::build(&pts, n_occ).unwrap();
        (pts, tree)
    }

    #[test]
    fn identity_is_exact() {
        let (_, tree) = grid_tree(16, 8);
        let op = FnOperator::new(256, |x: MatRef<'_, f64>| x.to_owned());
        let res = peel_trace(&op, &tree, &PeelOptions::default(), &mut rng(1)).unwrap();
        assert_eq!(res.trace, 256.0);
        for l in &res.levels {
            for p in &l.pairs {
                assert_eq!(p.block.to_dense().norm_l2(), 0.0);
            }
        }
    }

    #[test]
    fn block_diagonal_operator_is_exact() {
        let (_, tree) = grid_tree(16, 16);
        let mut g = Mat::zeros(256, 256);
        let mut r = rng(2);
        let mut exact = 0.0;
        for l in tree.leaves() {
            let idx = tree.indices(l);
            let b = gaussian(&mut r, idx.len(), idx.len());
            for (a, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    g[(i, j)] = b[(a, c)] + b[(c, a)];
                }
                exact += g[(i, i)];
            }
        }
        let res = peel_trace(&DenseOperator(g), &tree, &PeelOptions::default(), &mut rng(3)).unwrap();
        assert!((res.trace - exact).abs() <= 1e-12 * res.abs_diag_sum);
    }

    #[test]
    fn rejects_nonsymmetric_operator() {
        let (_, tree) = grid_tree(4, 4);
        let g = gaussian(&mut rng(4), 16, 16);
        let err = peel_trace(&DenseOperator(g), &tree, &PeelOptions::default(), &mut rng(5)).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn dense_kernel_trace_and_block_diagonality() {
        let model = KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(1e-4), vec![10.0, 7.0]).unwrap();
        let (pts, tree) = grid_tree(32, 64);
        let sigma = dense_sigma(&model, &pts);
        let exact: f64 = (0..1024).map(|i| sigma[(i, i)]).sum();
        let op = DenseOperator(sigma.clone());
        let opts = PeelOptions::default();
        let res = peel_trace(&op, &tree, &opts, &mut rng(6)).unwrap();
        assert!((res.trace - exact).abs() / exact <= 1e-5);

        // After removing every recovered level the remainder is block diagonal.
        let norm = sigma.norm_l2();
        let peeled = Peeled { op: &op, tree: &tree, levels: &res.levels };
        let mut mv = 0;
        for l in tree.leaves().take(6) {
            let idx = tree.indices(l);
            let mut x = Mat::zeros(1024, 2);
            let w = gaussian(&mut rng(7), idx.len(), 2);
            scatter_rows(x.as_mut(), idx, w.as_ref());
            let mut y = peeled.apply(x.as_ref(), &mut mv).unwrap();
            for &i in idx {
                y[(i, 0)] = 0.0;
                y[(i, 1)] = 0.0;
            }
            assert!(y.norm_l2() <= 10.0 * opts.tol * norm * w.norm_l2(), "leaf {l}");
        }
    }

    #[test]
    fn symmetrized_product_matches_dense() {
        let model = KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(1e-4), vec![10.0, 7.0]).unwrap();
        let (pts, tree) = grid_tree(12, 16);
        let opts = FactorOptions { tol: 1e-10, ..Default::default() };
        let f = SkelFactorization::factor(&model, &pts, &tree, Which::Sigma, &opts).unwrap();
        let f1 = SkelFactorization::factor(&model, &pts, &tree, Which::Deriv(0), &opts).unwrap();
        let op = build_symmetrized_product(&f, &f1).unwrap();
        let n = pts.len();
        let got = op.apply(Mat::<f64>::identity(n, n).as_ref()).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let d = model.assemble_block(&pts, &idx, &idx, Which::Deriv(0));
        let expect = crate::oracle::dense_symmetrized_product(&dense_sigma(&model, &pts), &d).unwrap();
        assert!((&got - &expect).norm_l2() <= 1e-8 * expect.norm_l2());
        assert_eq!(op.apply(Mat::<f64>::zeros(n, 1).as_ref()).unwrap().norm_l2(), 0.0);

        // F_i = F gives the identity.
        let same = build_symmetrized_product(&f, &f).unwrap();
        let res = peel_trace(&same, &tree, &PeelOptions::default(), &mut rng(8)).unwrap();
        assert!((res.trace - n as f64).abs() <= 1e-6 * n as f64);
    }

    #[test]
    fn hutchinson_identity_and_diagonal() {
        let op = FnOperator::new(50, |x: MatRef<'_, f64>| x.to_owned());
        for q in [1, 7, 100] {
            assert_eq!(hutchinson_trace(&op, q, &mut rng(q as u64)).unwrap().estimate, 50.0);
        }
        let mut r = rng(9);
        let d: Vec<f64> = (0..100).map(|_| r.random_range(-1.0..3.0)).collect();
        let exact: f64 = d.iter().sum();
        let g = Mat::from_fn(100, 100, |i, j| if i == j { d[i] } else { 0.0 });
        // Every Rademacher quadratic form of a diagonal matrix equals its trace.
        let op = DenseOperator(g);
        let trials: Vec<f64> = (0..1000).map(|_| hutchinson_trace(&op, 4, &mut r).unwrap().estimate).collect();
        let mean = trials.iter().sum::<f64>() / 1000.0;
        assert!((mean - exact).abs() <= 1e-9 * exact.abs());
        assert!(hutchinson_trace(&op, 0, &mut r).is_err());
    }

    #[test]
    fn hutchinson_is_unbiased_on_dense_matrix() {
        let mut r = rng(10);
        let a = gaussian(&mut r, 100, 100);
        let g = &a + a.transpose();
        let exact: f64 = (0..100).map(|i| g[(i, i)]).sum();
        let op = DenseOperator(g);
        let trials: Vec<f64> = (0..1000).map(|_| hutchinson_trace(&op, 1, &mut r).unwrap().estimate).collect();
        let mean = trials.iter().sum::<f64>() / 1000.0;
        let var = trials.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((mean - exact).abs() <= 3.0 * (var / 1000.0).sqrt());
    }

    #[test]
    fn linearity_probe() {
        let mut r = rng(11);
        let model = KernelModel::new(Family::Matern52, Anisotropy::Isotropic, Nugget::Fixed(1e-3), vec![8.0]).unwrap();
        let (pts, tree) = grid_tree(16, 16);
        let f = SkelFactorization::factor(&model, &pts, &tree, Which::Sigma, &FactorOptions::default()).unwrap();
        let op = build_symmetrized_product(&f, &f).unwrap();
        let x = gaussian(&mut r, 256, 1);
        let y = gaussian(&mut r, 256, 1);
        let lhs = op.apply((&x + &y).as_ref()).unwrap();
        let rhs = op.apply(x.as_ref()).unwrap() + op.apply(y.as_ref()).unwrap();
        assert!((&lhs - &rhs).norm_l2() <= 1e-12 * rhs.norm_l2().max(1.0) * 10.0);
    }
}
