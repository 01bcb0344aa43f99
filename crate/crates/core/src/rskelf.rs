//! Recursive skeletonization factorization of a kernel matrix.
//!
//! Boxes are processed from the leaves up. For a box with active DOFs `I`, an
//! interpolative decomposition of its off-box interactions splits `I` into
//! skeleton `S` and redundant `R` with `A(:, R) ≈ A(:, S) T`. Two block
//! operations then decouple `R` from everything else:
//!
//! ```text
//!   B    = A_SR − A_SS T
//!   D_R  = A_RR − TᵀA_SR − A_SRᵀT + TᵀA_SS T      (redundant block, factored)
//!   E    = B D_R⁻¹
//!   A_SS ← A_SS − E Bᵀ                            (passed to the parent)
//! ```
//!
//! Writing `G_b` for the box transform `x_S += E x_R; x_R += Tᵀ x_S`, the
//! result is `F = G_1 ⋯ G_K · D · G_Kᵀ ⋯ G_1ᵀ` with `D` block diagonal over
//! every redundant block plus the dense block of DOFs that survive to the
//! root. Off-box entries of the working matrix are never modified, so they
//! are always read straight from the kernel.

use std::ops::Range;

use faer::prelude::{Reborrow, ReborrowMut};
use faer::{Mat, MatMut, MatRef};
use rand::Rng;
use rayon::prelude::*;

use crate::dense::{col_vec, gather_rows, gemm_add, mul, scatter_rows, submatrix, symmetrize, to_vec, SymFactor};
use crate::error::{Error, Result};
use crate::geom::{NodeId, Point, PointSet, QuadTree};
use crate::kernel::{KernelModel, Which};
use crate::lowrank::{gaussian, interp_decomp};

/// Artificial points on concentric rings around a box, standing in for the
/// far field when compressing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyAnnulus {
    /// Inner ring radius as a multiple of the box's circumscribed radius.
    pub r_in: f64,
    /// Outer ring radius; also the near-field cutoff.
    pub r_out: f64,
    pub n_rings: usize,
    pub n_angles: usize,
}

impl Default for ProxyAnnulus {
    fn default() -> Self {
        ProxyAnnulus {
            r_in: 1.5,
            r_out: 2.5,
            n_rings: 4,
            n_angles: 64,
        }
    }
}

impl ProxyAnnulus {
    /// Default radii with `n_prox` points: four rings when `n_prox` is a
    /// multiple of four, otherwise a single ring at the outer radius.
    pub fn with_count(n_prox: usize) -> Result<Self> {
        if n_prox == 0 {
            return Err(Error::input("n_prox must be positive"));
        }
        let (n_rings, n_angles) = if n_prox % 4 == 0 && n_prox >= 8 {
            (4, n_prox / 4)
        } else {
            (1, n_prox)
        };
        Ok(ProxyAnnulus {
            n_rings,
            n_angles,
            ..Self::default()
        })
    }

    pub fn n_prox(&self) -> usize {
        self.n_rings * self.n_angles
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_in > 1.0 && self.r_out >= self.r_in && self.r_out.is_finite()) {
            return Err(Error::input(format!(
                "proxy radii must satisfy 1 < r_in ≤ r_out, got ({}, {})",
                self.r_in, self.r_out
            )));
        }
        if self.n_prox() == 0 {
            return Err(Error::input("proxy annulus needs at least one point"));
        }
        Ok(())
    }

    /// Proxy points for a box with the given center and circumscribed radius.
    pub fn points(&self, center: Point, radius: f64) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.n_prox());
        for k in 0..self.n_rings {
            let t = if self.n_rings == 1 {
                1.0
            } else {
                k as f64 / (self.n_rings - 1) as f64
            };
            let rho = radius * (self.r_in + t * (self.r_out - self.r_in));
            for a in 0..self.n_angles {
                let phi = std::f64::consts::TAU * a as f64 / self.n_angles as f64;
                out.push([center[0] + rho * phi.cos(), center[1] + rho * phi.sin()]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorOptions {
    /// ID tolerance ε_fact.
    pub tol: f64,
    pub proxy: ProxyAnnulus,
}

impl Default for FactorOptions {
    fn default() -> Self {
        FactorOptions {
            tol: 1e-9,
            proxy: ProxyAnnulus::default(),
        }
    }
}

/// The elimination record of one box.
#[derive(Clone, Debug)]
pub struct BoxElimination {
    pub node: NodeId,
    pub level: usize,
    /// Global DOF indices kept active for the parent.
    pub skeleton: Vec<usize>,
    /// Global DOF indices eliminated here.
    pub redundant: Vec<usize>,
    /// `T`, `|S| × |R|`.
    pub interp: Mat<f64>,
    /// `E = B D_R⁻¹`, `|S| × |R|`.
    pub elim: Mat<f64>,
    /// Factor of the decoupled redundant block `D_R`.
    pub block: SymFactor,
}

#[derive(Clone, Debug, Default)]
pub struct FactorStats {
    pub boxes: usize,
    pub top_size: usize,
    pub max_skeleton: usize,
    /// `(level, Σ|S|, Σ|R|)` per processed level, deepest first.
    pub per_level: Vec<(usize, usize, usize)>,
    /// Blocks that fell back from Cholesky to a symmetric indefinite factor.
    pub indefinite_blocks: usize,
}

/// `F ≈ Σ` (or `Σ_i`) as a product of sparse box transforms and a block
/// diagonal. Immutable once built; safe to share across threads.
#[derive(Clone, Debug)]
pub struct SkelFactorization {
    n: usize,
    which: Which,
    tol: f64,
    boxes: Vec<BoxElimination>,
    /// Ranges into `boxes`, one per level, deepest first.
    levels: Vec<Range<usize>>,
    top_idx: Vec<usize>,
    top: SymFactor,
    spd: bool,
    stats: FactorStats,
}

struct Active {
    idx: Vec<usize>,
    /// Working diagonal block on `idx` after the node's own elimination.
    block: Mat<f64>,
}

impl SkelFactorization {
    /// Factor `Σ` (`which = Sigma`) or `Σ_i` (`which = Deriv(i)`).
    ///
    /// Σ blocks are Cholesky-factored with a symmetric indefinite fallback;
    /// derivative matrices are not definite and always use the indefinite
    /// factor.
    pub fn factor(
        model: &KernelModel,
        points: &PointSet,
        tree: &QuadTree,
        which: Which,
        opts: &FactorOptions,
    ) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return Err(Error::input("factorization tolerance must be positive"));
        }
        opts.proxy.validate()?;
        if tree.n_points() != points.len() {
            return Err(Error::Dimension {
                expected: points.len(),
                got: tree.n_points(),
            });
        }
        if let Which::Deriv(i) | Which::Shifted(i, _) = which {
            if i >= model.p() {
                return Err(Error::input(format!("parameter index {i} out of range 0..{}", model.p())));
            }
        }
        let prefer_chol = which == Which::Sigma;
        let coords = points.coords();
        let mut active: Vec<Option<Active>> = (0..tree.nodes().len()).map(|_| None).collect();
        let mut boxes = Vec::new();
        let mut levels = Vec::new();
        let mut stats = FactorStats::default();

        for level in (1..=tree.depth()).rev() {
            let nodes = tree.nodes_at(level);
            // Working index sets and diagonal blocks before this level.
            let inputs: Vec<(Vec<usize>, Mat<f64>)> = nodes
                .par_iter()
                .map(|&id| node_block(model, points, tree, id, &active, which))
                .collect();
            // The near field lives in the level partition: boxes at this level
            // plus leaves that stopped subdividing above it.
            let mut parts: Vec<(NodeId, &[usize])> = nodes.iter().zip(&inputs).map(|(&id, (idx, _))| (id, idx.as_slice())).collect();
            for (id, node) in tree.nodes().iter().enumerate() {
                if node.level < level && node.is_leaf() {
                    parts.push((id, tree.indices(id)));
                }
            }

            let results: Vec<Result<(BoxElimination, Active)>> = nodes
                .par_iter()
                .zip(inputs.par_iter())
                .map(|(&id, (idx, a))| {
                    let node = tree.node(id);
                    let radius = node.radius();
                    let cutoff = opts.proxy.r_out * radius;
                    let mut near = Vec::new();
                    for &(other, set) in &parts {
                        if other == id || box_distance(tree, other, node.center) >= cutoff {
                            continue;
                        }
                        near.extend(set.iter().copied().filter(|&j| dist(coords[j], node.center) < cutoff));
                    }
                    let proxies = opts.proxy.points(node.center, radius);
                    eliminate(model, points, id, level, idx, a, &near, &proxies, which, opts.tol, prefer_chol)
                })
                .collect();

            let start = boxes.len();
            let (mut s_total, mut r_total) = (0, 0);
            for (&id, res) in nodes.iter().zip(results) {
                let (elim, act) = res?;
                s_total += elim.skeleton.len();
                r_total += elim.redundant.len();
                stats.max_skeleton = stats.max_skeleton.max(elim.skeleton.len());
                stats.indefinite_blocks += usize::from(prefer_chol && !elim.block.is_cholesky());
                active[id] = Some(act);
                if !elim.redundant.is_empty() {
                    boxes.push(elim);
                }
            }
            // Children are no longer needed once their parent holds their skeletons.
            for &id in nodes {
                for &c in &tree.node(id).children {
                    active[c] = None;
                }
            }
            levels.push(start..boxes.len());
            stats.per_level.push((level, s_total, r_total));
        }

        let (top_idx, top_block) = node_block(model, points, tree, tree.root(), &active, which);
        let top = SymFactor::new(top_block, prefer_chol).map_err(|_| Error::Singular { level: 0, node: tree.root() })?;
        stats.indefinite_blocks += usize::from(prefer_chol && !top.is_cholesky() && !top_idx.is_empty());
        stats.boxes = boxes.len();
        stats.top_size = top_idx.len();
        let spd = prefer_chol && stats.indefinite_blocks == 0;
        Ok(SkelFactorization {
            n: points.len(),
            which,
            tol: opts.tol,
            boxes,
            levels,
            top_idx,
            top,
            spd,
            stats,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn which(&self) -> Which {
        self.which
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// True when every block has a Cholesky factor (so sampling is possible).
    pub fn is_spd(&self) -> bool {
        self.spd
    }

    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }

    pub fn boxes(&self) -> &[BoxElimination] {
        &self.boxes
    }

    /// DOFs that survive to the dense root block.
    pub fn top_indices(&self) -> &[usize] {
        &self.top_idx
    }

    /// log|F|, summed over all block factors.
    pub fn logdet(&self) -> f64 {
        self.boxes.iter().map(|b| b.block.logdet()).sum::<f64>() + self.top.logdet()
    }

    /// Number of negative eigenvalues of the block diagonal (inertia of F).
    pub fn negative_count(&self) -> usize {
        self.boxes.iter().map(|b| b.block.negative_count()).sum::<usize>() + self.top.negative_count()
    }

    /// Sign of det F.
    pub fn det_sign(&self) -> f64 {
        if self.negative_count() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn check(&self, rows: usize) -> Result<()> {
        if rows != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: rows,
            });
        }
        Ok(())
    }

    /// `F · x` for an `n × k` block.
    pub fn apply_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check(x.nrows())?;
        let mut y = x.to_owned();
        self.sweep_gt(y.as_mut());
        self.sweep_d(y.as_mut(), Diag::Apply);
        self.sweep_g(y.as_mut());
        Ok(y)
    }

    /// `F⁻¹ · x`.
    pub fn solve_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check(x.nrows())?;
        let mut y = x.to_owned();
        self.sweep_ginv(y.as_mut());
        self.sweep_d(y.as_mut(), Diag::Solve);
        self.sweep_ginvt(y.as_mut());
        Ok(y)
    }

    /// `F^{1/2} · x` with `F^{1/2} = G_1 ⋯ G_K · L` and `D = L Lᵀ`.
    pub fn apply_sqrt_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check(x.nrows())?;
        self.require_spd()?;
        let mut y = x.to_owned();
        self.sweep_d(y.as_mut(), Diag::Sqrt);
        self.sweep_g(y.as_mut());
        Ok(y)
    }

    /// `(F^{1/2})ᵀ · x`.
    pub fn apply_sqrt_t_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check(x.nrows())?;
        self.require_spd()?;
        let mut y = x.to_owned();
        self.sweep_gt(y.as_mut());
        self.sweep_d(y.as_mut(), Diag::SqrtT);
        Ok(y)
    }

    /// `F^{-1/2} · x`, the inverse of [`Self::apply_sqrt_mat`].
    pub fn apply_inv_sqrt_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check(x.nrows())?;
        self.require_spd()?;
        let mut y = x.to_owned();
        self.sweep_ginv(y.as_mut());
        self.sweep_d(y.as_mut(), Diag::InvSqrt);
        Ok(y)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.apply_mat(col_vec(x).as_ref())?.as_ref()))
    }

    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.solve_mat(col_vec(x).as_ref())?.as_ref()))
    }

    pub fn apply_sqrt(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.apply_sqrt_mat(col_vec(x).as_ref())?.as_ref()))
    }

    pub fn apply_sqrt_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.apply_sqrt_t_mat(col_vec(x).as_ref())?.as_ref()))
    }

    pub fn apply_inv_sqrt(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(to_vec(self.apply_inv_sqrt_mat(col_vec(x).as_ref())?.as_ref()))
    }

    /// A draw `F^{1/2} w`, `w` standard normal.
    pub fn sample_gp<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.require_spd()?;
        let w = gaussian(rng, self.n, 1);
        Ok(to_vec(self.apply_sqrt_mat(w.as_ref())?.as_ref()))
    }

    fn require_spd(&self) -> Result<()> {
        if !self.spd {
            return Err(Error::NotPositiveDefinite(
                "square root needs a factorization with only Cholesky blocks".into(),
            ));
        }
        Ok(())
    }

    /// Apply `op` to every box of every level in the given level order; boxes
    /// within a level touch disjoint rows and run in parallel.
    fn sweep<F>(&self, mut x: MatMut<'_, f64>, deep_first: bool, op: F)
    where
        F: Fn(&BoxElimination, &mut Mat<f64>, &mut Mat<f64>) + Sync,
    {
        let order: Vec<&Range<usize>> = if deep_first {
            self.levels.iter().collect()
        } else {
            self.levels.iter().rev().collect()
        };
        for range in order {
            let xr = x.rb();
            let updates: Vec<(Mat<f64>, Mat<f64>)> = self.boxes[range.clone()]
                .par_iter()
                .map(|b| {
                    let mut s = gather_rows(xr, &b.skeleton);
                    let mut r = gather_rows(xr, &b.redundant);
                    op(b, &mut s, &mut r);
                    (s, r)
                })
                .collect();
            for (b, (s, r)) in self.boxes[range.clone()].iter().zip(updates) {
                scatter_rows(x.rb_mut(), &b.skeleton, s.as_ref());
                scatter_rows(x.rb_mut(), &b.redundant, r.as_ref());
            }
        }
    }

    /// `G_Kᵀ ⋯ G_1ᵀ x`: `x_S += T x_R; x_R += Eᵀ x_S`.
    fn sweep_gt(&self, x: MatMut<'_, f64>) {
        self.sweep(x, true, |b, s, r| {
            gemm_add(s.as_mut(), b.interp.as_ref(), r.as_ref(), 1.0);
            gemm_add(r.as_mut(), b.elim.transpose(), s.as_ref(), 1.0);
        });
    }

    /// `G_1 ⋯ G_K x`: `x_S += E x_R; x_R += Tᵀ x_S`.
    fn sweep_g(&self, x: MatMut<'_, f64>) {
        self.sweep(x, false, |b, s, r| {
            gemm_add(s.as_mut(), b.elim.as_ref(), r.as_ref(), 1.0);
            gemm_add(r.as_mut(), b.interp.transpose(), s.as_ref(), 1.0);
        });
    }

    /// `G_K⁻¹ ⋯ G_1⁻¹ x`.
    fn sweep_ginv(&self, x: MatMut<'_, f64>) {
        self.sweep(x, true, |b, s, r| {
            gemm_add(r.as_mut(), b.interp.transpose(), s.as_ref(), -1.0);
            gemm_add(s.as_mut(), b.elim.as_ref(), r.as_ref(), -1.0);
        });
    }

    /// `G_1⁻ᵀ ⋯ G_K⁻ᵀ x`.
    fn sweep_ginvt(&self, x: MatMut<'_, f64>) {
        self.sweep(x, false, |b, s, r| {
            gemm_add(r.as_mut(), b.elim.transpose(), s.as_ref(), -1.0);
            gemm_add(s.as_mut(), b.interp.as_ref(), r.as_ref(), -1.0);
        });
    }

    fn sweep_d(&self, mut x: MatMut<'_, f64>, mode: Diag) {
        let xr = x.rb();
        let mut jobs: Vec<(&[usize], &SymFactor)> = self.boxes.iter().map(|b| (b.redundant.as_slice(), &b.block)).collect();
        jobs.push((self.top_idx.as_slice(), &self.top));
        let out: Vec<Mat<f64>> = jobs
            .par_iter()
            .map(|&(idx, f)| {
                let v = gather_rows(xr, idx);
                diag_op(f, v, mode)
            })
            .collect();
        for ((idx, _), v) in jobs.iter().zip(out) {
            scatter_rows(x.rb_mut(), idx, v.as_ref());
        }
    }
}

#[derive(Clone, Copy)]
enum Diag {
    Apply,
    Solve,
    Sqrt,
    SqrtT,
    InvSqrt,
}

fn diag_op(f: &SymFactor, mut v: Mat<f64>, mode: Diag) -> Mat<f64> {
    if f.dim() == 0 {
        return v;
    }
    match mode {
        Diag::Apply => f.apply(v.as_ref()),
        Diag::Solve => {
            f.solve_in_place(v.as_mut());
            v
        }
        // Only reachable on the all-Cholesky path (checked by the callers).
        Diag::Sqrt => mul(f.sqrt_factor().expect("Cholesky block"), v.as_ref()),
        Diag::SqrtT => mul(f.sqrt_factor().expect("Cholesky block").transpose(), v.as_ref()),
        Diag::InvSqrt => {
            let l = f.sqrt_factor().expect("Cholesky block");
            faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, v.as_mut(), faer::Par::Seq);
            v
        }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to the square of node `id` (0 inside).
fn box_distance(tree: &QuadTree, id: NodeId, p: Point) -> f64 {
    let n = tree.node(id);
    let dx = ((p[0] - n.center[0]).abs() - n.half_width).max(0.0);
    let dy = ((p[1] - n.center[1]).abs() - n.half_width).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Active DOFs of a node and its working diagonal block: the raw kernel block
/// for a leaf, otherwise the children's skeletons with their updated blocks
/// on the diagonal and kernel entries between children.
fn node_block(
    model: &KernelModel,
    points: &PointSet,
    tree: &QuadTree,
    id: NodeId,
    active: &[Option<Active>],
    which: Which,
) -> (Vec<usize>, Mat<f64>) {
    let node = tree.node(id);
    if node.is_leaf() {
        let idx = tree.indices(id).to_vec();
        let a = model.assemble_block(points, &idx, &idx, which);
        return (idx, a);
    }
    let parts: Vec<&Active> = node
        .children
        .iter()
        .map(|&c| active[c].as_ref().expect("children are processed before their parent"))
        .collect();
    let idx: Vec<usize> = parts.iter().flat_map(|p| p.idx.iter().copied()).collect();
    let mut a = Mat::zeros(idx.len(), idx.len());
    let mut offsets = Vec::with_capacity(parts.len());
    let mut off = 0;
    for p in &parts {
        offsets.push(off);
        off += p.idx.len();
    }
    for (ci, pi) in parts.iter().enumerate() {
        let oi = offsets[ci];
        a.as_mut()
            .submatrix_mut(oi, oi, pi.idx.len(), pi.idx.len())
            .copy_from(pi.block.as_ref());
        for (cj, pj) in parts.iter().enumerate().skip(ci + 1) {
            let oj = offsets[cj];
            let k = model.assemble_block(points, &pi.idx, &pj.idx, which);
            a.as_mut().submatrix_mut(oi, oj, pi.idx.len(), pj.idx.len()).copy_from(k.as_ref());
            a.as_mut()
                .submatrix_mut(oj, oi, pj.idx.len(), pi.idx.len())
                .copy_from(k.transpose());
        }
    }
    (idx, a)
}

/// Compress and eliminate one box with active DOFs `idx` and working block `a`.
#[allow(clippy::too_many_arguments)]
fn eliminate(
    model: &KernelModel,
    points: &PointSet,
    id: NodeId,
    level: usize,
    idx: &[usize],
    a: &Mat<f64>,
    near: &[usize],
    proxies: &[Point],
    which: Which,
    tol: f64,
    prefer_chol: bool,
) -> Result<(BoxElimination, Active)> {
    let k = idx.len();
    let empty = |idx: Vec<usize>, block: Mat<f64>| {
        let s = idx.len();
        (
            BoxElimination {
                node: id,
                level,
                skeleton: idx.clone(),
                redundant: Vec::new(),
                interp: Mat::zeros(s, 0),
                elim: Mat::zeros(s, 0),
                block: SymFactor::new(Mat::zeros(0, 0), prefer_chol).expect("empty block"),
            },
            Active { idx, block },
        )
    };
    if k == 0 {
        return Ok(empty(Vec::new(), Mat::zeros(0, 0)));
    }

    // Off-box interactions: near-field kernel rows stacked on proxy rows.
    let far = model.assemble_cross(proxies, points, idx, which);
    let mut rows = Mat::zeros(near.len() + proxies.len(), k);
    if !near.is_empty() {
        let nb = model.assemble_block(points, near, idx, which);
        rows.as_mut().submatrix_mut(0, 0, near.len(), k).copy_from(nb.as_ref());
    }
    rows.as_mut().submatrix_mut(near.len(), 0, proxies.len(), k).copy_from(far.as_ref());
    let id_res = interp_decomp(rows.as_ref(), tol);
    if id_res.redundant.is_empty() {
        return Ok(empty(idx.to_vec(), a.clone()));
    }

    let (s, r) = (&id_res.skeleton, &id_res.redundant);
    let t = &id_res.interp;
    let a_ss = submatrix(a.as_ref(), s, s);
    let a_sr = submatrix(a.as_ref(), s, r);
    let a_rr = submatrix(a.as_ref(), r, r);

    // B = A_SR − A_SS T
    let mut b = a_sr.clone();
    gemm_add(b.as_mut(), a_ss.as_ref(), t.as_ref(), -1.0);
    // D_R = A_RR − TᵀA_SR − A_SRᵀT + TᵀA_SS T = A_RR − TᵀA_SR − BᵀT
    let mut d = a_rr;
    gemm_add(d.as_mut(), t.transpose(), a_sr.as_ref(), -1.0);
    gemm_add(d.as_mut(), b.transpose(), t.as_ref(), -1.0);
    symmetrize(&mut d);
    let block = SymFactor::new(d, prefer_chol).map_err(|_| Error::Singular { level, node: id })?;

    // E = B D_R⁻¹, computed as (D_R⁻¹ Bᵀ)ᵀ.
    let mut et = b.transpose().to_owned();
    block.solve_in_place(et.as_mut());
    let e = et.transpose().to_owned();

    let mut a_new = a_ss;
    gemm_add(a_new.as_mut(), e.as_ref(), b.transpose(), -1.0);
    symmetrize(&mut a_new);

    let skeleton: Vec<usize> = s.iter().map(|&i| idx[i]).collect();
    let redundant: Vec<usize> = r.iter().map(|&i| idx[i]).collect();
    Ok((
        BoxElimination {
            node: id,
            level,
            skeleton: skeleton.clone(),
            redundant,
            interp: id_res.interp,
            elim: e,
            block,
        },
        Active {
            idx: skeleton,
            block: a_new,
        },
    ))
}
