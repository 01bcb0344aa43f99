//! Gaussian-process log-likelihood, score, profile likelihood and kriging on
//! top of the skeletonization factorization and peeled traces.
//!
//! One evaluation factors Σ once, uses it for the quadratic form and the
//! log-determinant, and then for every requested parameter factors Σ_i and
//! peels the trace of `½(F⁻¹F_i + F_iF⁻¹)`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dense::{dot, to_vec};
use crate::error::{Error, Result};
use crate::geom::{PointSet, QuadTree};
use crate::kernel::{KernelModel, Which};
use crate::lowrank::gaussian;
use crate::peel::{build_symmetrized_product, peel_trace, PeelOptions};
use crate::rskelf::{FactorOptions, SkelFactorization};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Locations with one observed value each.
#[derive(Clone, Debug)]
pub struct Observations {
    pub points: PointSet,
    pub z: Vec<f64>,
}

impl Observations {
    pub fn new(points: PointSet, z: Vec<f64>) -> Result<Self> {
        if z.len() != points.len() {
            return Err(Error::Dimension {
                expected: points.len(),
                got: z.len(),
            });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("observation {i} is not finite")));
        }
        Ok(Observations { points, z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub fact: FactorOptions,
    pub peel: PeelOptions,
    pub n_occ: usize,
    /// Base seed; each parameter's peeling draws from its own stream.
    pub seed: u64,
    /// Unknown constant mean and variance level, profiled out.
    pub profile: bool,
    /// Gradient components to compute; `None` means all of θ.
    pub params: Option<Vec<usize>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            fact: FactorOptions::default(),
            peel: PeelOptions::default(),
            n_occ: 64,
            seed: 0,
            profile: false,
            params: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.fact.tol < self.peel.tol) {
            return Err(Error::input(format!(
                "factorization tolerance ({:e}) must be smaller than peeling tolerance ({:e})",
                self.fact.tol, self.peel.tol
            )));
        }
        Ok(())
    }

    fn params(&self, model: &KernelModel) -> Result<Vec<usize>> {
        match &self.params {
            None => Ok((0..model.p()).collect()),
            Some(list) => {
                if let Some(&bad) = list.iter().find(|&&i| i >= model.p()) {
                    return Err(Error::input(format!("parameter index {bad} out of range 0..{}", model.p())));
                }
                Ok(list.clone())
            }
        }
    }
}

/// RNG for parameter `i` under base seed `seed`.
pub fn param_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

/// Per-parameter pieces of the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTerm {
    pub param: usize,
    /// Peeled `Tr(Σ⁻¹Σ_i)`.
    pub trace: f64,
    /// `uᵀ F_i u` with `u` the relevant solve against the data.
    pub quad: f64,
    pub abs_diag_sum: f64,
    pub matvecs: usize,
    /// Largest sibling-block rank over all peeling levels.
    pub max_rank: usize,
    /// Some peeling level hit its width cap.
    pub capped: bool,
    /// `c` when `Σ_i + cΣ` was factored instead of Σ_i; the peeled trace and
    /// `quad` have `c·n` and `c·uᵀFu` removed.
    pub shift: f64,
    pub t_factor: f64,
    pub t_peel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEstimates {
    /// Generalized least-squares mean `𝟏ᵀΣ⁻¹z / 𝟏ᵀΣ⁻¹𝟏`.
    pub mu: f64,
    /// `(z − μ𝟏)ᵀΣ⁻¹(z − μ𝟏) / n`.
    pub sigma2: f64,
    /// `zᵀ(Σ + 𝟏𝟏ᵀ)⁻¹z`.
    pub q: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub n: usize,
    pub eps_fact: f64,
    pub eps_peel: f64,
    pub tree_depth: usize,
    pub top_size: usize,
    pub max_skeleton: usize,
    pub indefinite_blocks: usize,
    /// Factorization of Σ and every Σ_i.
    pub t_factor: f64,
    pub t_peel: f64,
    pub t_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodReport {
    pub loglik: f64,
    /// One entry per element of `params`.
    pub gradient: Vec<f64>,
    pub params: Vec<usize>,
    /// `zᵀF⁻¹z` (or `Q` under the profile model).
    pub quad_form: f64,
    pub logdet: f64,
    pub terms: Vec<TraceTerm>,
    pub profile: Option<ProfileEstimates>,
    pub diagnostics: Diagnostics,
}

impl LikelihoodReport {
    /// Largest absolute gradient component.
    pub fn grad_inf_norm(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn build_tree(points: &PointSet, opts: &EvalOptions) -> Result<QuadTree> {
    QuadTree::build(points, opts.n_occ)
}

/// `−½zᵀF⁻¹z − ½log|F| − (n/2)log 2π`, with the factorization for reuse.
pub fn loglik(obs: &Observations, model: &KernelModel, opts: &EvalOptions) -> Result<(f64, SkelFactorization)> {
    let tree = build_tree(&obs.points, opts)?;
    let f = factor_sigma(obs, model, &tree, opts)?;
    let u = f.solve(&obs.z)?;
    Ok((loglik_value(obs, &f, &u), f))
}

fn loglik_value(obs: &Observations, f: &SkelFactorization, u: &[f64]) -> f64 {
    -0.5 * dot(&obs.z, u) - 0.5 * f.logdet() - 0.5 * obs.len() as f64 * LN_2PI
}

fn factor_sigma(obs: &Observations, model: &KernelModel, tree: &QuadTree, opts: &EvalOptions) -> Result<SkelFactorization> {
    let f = SkelFactorization::factor(model, &obs.points, tree, Which::Sigma, &opts.fact).map_err(|e| e.context("factor Σ"))?;
    if f.negative_count() > 0 {
        return Err(Error::NotPositiveDefinite(format!(
            "factorization of Σ has {} negative eigenvalues; increase the nugget",
            f.negative_count()
        )));
    }
    Ok(f)
}

/// Factor Σ_i, or `Σ_i + cΣ` with `c = 1/θ_i` (1 for the nugget) when a block of Σ_i is exactly
/// singular. Returns the factorization and `c` (0 without the shift).
fn factor_derivative(
    obs: &Observations,
    model: &KernelModel,
    tree: &QuadTree,
    i: usize,
    opts: &EvalOptions,
) -> Result<(SkelFactorization, f64)> {
    match SkelFactorization::factor(model, &obs.points, tree, Which::Deriv(i), &opts.fact) {
        Err(Error::Singular { .. }) => {
            let c = if model.nugget_index() == Some(i) { 1.0 } else { 1.0 / model.theta()[i] };
            Ok((SkelFactorization::factor(model, &obs.points, tree, Which::Shifted(i, c), &opts.fact)?, c))
        }
        other => other.map(|fi| (fi, 0.0)),
    }
}

/// Factor Σ_i, peel the trace term, and form `uᵀF_i u`.
fn trace_term(
    obs: &Observations,
    model: &KernelModel,
    tree: &QuadTree,
    f: &SkelFactorization,
    u: &[f64],
    i: usize,
    opts: &EvalOptions,
) -> Result<TraceTerm> {
    let stage = format!("parameter {i}");
    let t0 = Instant::now();
    let (fi, shift) = factor_derivative(obs, model, tree, i, opts).map_err(|e| e.context(&stage))?;
    let t_factor = t0.elapsed().as_secs_f64();
    let mut quad = dot(u, &fi.apply(u)?);
    if shift != 0.0 {
        quad -= shift * dot(u, &f.apply(u)?);
    }
    let t1 = Instant::now();
    let op = build_symmetrized_product(f, &fi)?;
    let peel = peel_trace(&op, tree, &opts.peel, &mut param_rng(opts.seed, i)).map_err(|e| e.context(&stage))?;
    let t_peel = t1.elapsed().as_secs_f64();
    Ok(TraceTerm {
        param: i,
        trace: peel.trace - shift * obs.len() as f64,
        quad,
        shift,
        abs_diag_sum: peel.abs_diag_sum,
        matvecs: peel.matvecs,
        max_rank: peel.levels.iter().map(|l| l.max_rank()).max().unwrap_or(0),
        capped: peel.any_capped(),
        t_factor,
        t_peel,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResult {
    pub gradient: Vec<f64>,
    pub terms: Vec<TraceTerm>,
}

/// `ĝ_i = ½ zᵀF⁻¹F_iF⁻¹z − ½ Tr(Σ⁻¹Σ_i)` for the requested parameters,
/// reusing the factorization `f` of Σ.
pub fn score(obs: &Observations, model: &KernelModel, opts: &EvalOptions, f: &SkelFactorization) -> Result<ScoreResult> {
    opts.validate()?;
    let tree = build_tree(&obs.points, opts)?;
    let u = f.solve(&obs.z)?;
    let terms = all_terms(obs, model, &tree, f, &u, opts)?;
    Ok(ScoreResult {
        gradient: terms.iter().map(|t| 0.5 * t.quad - 0.5 * t.trace).collect(),
        terms,
    })
}

fn all_terms(
    obs: &Observations,
    model: &KernelModel,
    tree: &QuadTree,
    f: &SkelFactorization,
    u: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<TraceTerm>> {
    opts.params(model)?
        .par_iter()
        .map(|&i| trace_term(obs, model, tree, f, u, i, opts))
        .collect()
}

/// Sherman–Morrison pieces for `(Σ + 𝟏𝟏ᵀ)⁻¹` over a factorization of Σ.
pub struct RankOneSolver<'a> {
    f: &'a SkelFactorization,
    /// `F⁻¹𝟏`.
    v: Vec<f64>,
    /// `1 + 𝟏ᵀF⁻¹𝟏`.
    denom: f64,
}

impl<'a> RankOneSolver<'a> {
    pub fn new(f: &'a SkelFactorization) -> Result<Self> {
        let v = f.solve(&vec![1.0; f.n()])?;
        let denom = 1.0 + v.iter().sum::<f64>();
        if !(denom > 0.0) {
            return Err(Error::numerical(format!("rank-one update is singular: 1 + 𝟏ᵀF⁻¹𝟏 = {denom:e}")));
        }
        Ok(RankOneSolver { f, v, denom })
    }

    /// `(F + 𝟏𝟏ᵀ)⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let u = self.f.solve(b)?;
        Ok(self.correct(u))
    }

    fn correct(&self, mut u: Vec<f64>) -> Vec<f64> {
        let c = u.iter().sum::<f64>() / self.denom;
        for (ui, vi) in u.iter_mut().zip(&self.v) {
            *ui -= c * vi;
        }
        u
    }

    /// `𝟏ᵀF⁻¹𝟏`.
    pub fn ones_quad(&self) -> f64 {
        self.denom - 1.0
    }
}

/// Profile pieces shared by the value and the gradient.
pub struct ProfileParts {
    pub f: SkelFactorization,
    /// `(F + 𝟏𝟏ᵀ)⁻¹z`.
    pub y: Vec<f64>,
    pub estimates: ProfileEstimates,
}

fn profile_parts(obs: &Observations, f: SkelFactorization) -> Result<ProfileParts> {
    let rank_one = RankOneSolver::new(&f)?;
    let u = f.solve(&obs.z)?;
    let y = rank_one.correct(u.clone());
    let q = dot(&obs.z, &y);
    if !(q > 0.0) {
        return Err(Error::numerical(format!("profile quadratic form is not positive: {q:e}")));
    }
    let one_u: f64 = u.iter().sum();
    let one_v = rank_one.ones_quad();
    let mu = one_u / one_v;
    let n = obs.len() as f64;
    // (z − μ𝟏)ᵀF⁻¹(z − μ𝟏) = zᵀu − 2μ𝟏ᵀu + μ²𝟏ᵀv
    let sigma2 = (dot(&obs.z, &u) - 2.0 * mu * one_u + mu * mu * one_v) / n;
    drop(rank_one);
    Ok(ProfileParts {
        f,
        y,
        estimates: ProfileEstimates { mu, sigma2, q },
    })
}

fn profile_value(n: usize, logdet: f64, q: f64) -> f64 {
    let n = n as f64;
    -0.5 * logdet - 0.5 * n * q.ln() + 0.5 * n * (n.ln() - 1.0 - 2.0 * std::f64::consts::PI)
}

/// `ℓ̃ = −½log|F| − (n/2)log Q + (n/2)(log n − 1 − 2π)`, `Q = zᵀ(F + 𝟏𝟏ᵀ)⁻¹z`.
pub fn profile_loglik(obs: &Observations, model: &KernelModel, opts: &EvalOptions) -> Result<(f64, ProfileParts)> {
    let tree = build_tree(&obs.points, opts)?;
    let f = factor_sigma(obs, model, &tree, opts)?;
    let parts = profile_parts(obs, f)?;
    Ok((profile_value(obs.len(), parts.f.logdet(), parts.estimates.q), parts))
}

/// `g̃_i = −½Tr(Σ⁻¹Σ_i) + (n/2) yᵀF_i y / Q` with `y = (F + 𝟏𝟏ᵀ)⁻¹z`.
pub fn profile_score(obs: &Observations, model: &KernelModel, opts: &EvalOptions, parts: &ProfileParts) -> Result<ScoreResult> {
    opts.validate()?;
    let tree = build_tree(&obs.points, opts)?;
    let terms = all_terms(obs, model, &tree, &parts.f, &parts.y, opts)?;
    let half_n = 0.5 * obs.len() as f64;
    Ok(ScoreResult {
        gradient: terms
            .iter()
            .map(|t| -0.5 * t.trace + half_n * t.quad / parts.estimates.q)
            .collect(),
        terms,
    })
}

/// Full evaluation: value, gradient for the requested parameters, and
/// diagnostics.
pub fn evaluate(obs: &Observations, model: &KernelModel, opts: &EvalOptions) -> Result<LikelihoodReport> {
    opts.validate()?;
    let start = Instant::now();
    let tree = build_tree(&obs.points, opts)?;
    let f = factor_sigma(obs, model, &tree, opts)?;
    let t_sigma = start.elapsed().as_secs_f64();
    let stats = f.stats().clone();

    let (loglik, quad_form, logdet, profile, f, weights) = if opts.profile {
        let parts = profile_parts(obs, f)?;
        let ll = profile_value(obs.len(), parts.f.logdet(), parts.estimates.q);
        let (q, logdet) = (parts.estimates.q, parts.f.logdet());
        (ll, q, logdet, Some(parts.estimates), parts.f, parts.y)
    } else {
        let u = f.solve(&obs.z)?;
        let ll = loglik_value(obs, &f, &u);
        let quad = dot(&obs.z, &u);
        let logdet = f.logdet();
        (ll, quad, logdet, None, f, u)
    };

    let terms = all_terms(obs, model, &tree, &f, &weights, opts)?;
    let half_n = 0.5 * obs.len() as f64;
    let gradient = terms
        .iter()
        .map(|t| match &profile {
            None => 0.5 * t.quad - 0.5 * t.trace,
            Some(p) => -0.5 * t.trace + half_n * t.quad / p.q,
        })
        .collect();

    let diagnostics = Diagnostics {
        n: obs.len(),
        eps_fact: opts.fact.tol,
        eps_peel: opts.peel.tol,
        tree_depth: tree.depth(),
        top_size: stats.top_size,
        max_skeleton: stats.max_skeleton,
        indefinite_blocks: stats.indefinite_blocks,
        t_factor: t_sigma + terms.iter().map(|t| t.t_factor).sum::<f64>(),
        t_peel: terms.iter().map(|t| t.t_peel).sum(),
        t_total: start.elapsed().as_secs_f64(),
    };
    Ok(LikelihoodReport {
        loglik,
        gradient,
        params: terms.iter().map(|t| t.param).collect(),
        quad_form,
        logdet,
        terms,
        profile,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    Mean,
    Sample,
}

/// Conditional mean or a conditional draw at the test locations.
///
/// `f_joint` factors the covariance over `[test; train]` (test points first)
/// and `f_train` the training block. The mean is the test part of
/// `F_joint [0; F_train⁻¹z]`; a draw adds `v₁ − (F_joint [0; F_train⁻¹v₂])₁`
/// with `v = F_joint^{1/2} w`.
pub fn conditional_predict<R: Rng + ?Sized>(
    f_joint: &SkelFactorization,
    f_train: &SkelFactorization,
    z: &[f64],
    mode: PredictMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n_train = f_train.n();
    if z.len() != n_train {
        return Err(Error::Dimension {
            expected: n_train,
            got: z.len(),
        });
    }
    if f_joint.n() < n_train {
        return Err(Error::input("joint factorization is smaller than the training set"));
    }
    let n_test = f_joint.n() - n_train;
    let cross = |v: &[f64]| -> Result<Vec<f64>> {
        let mut padded = vec![0.0; n_test];
        padded.extend(f_train.solve(v)?);
        let full = f_joint.apply(&padded)?;
        Ok(full[..n_test].to_vec())
    };
    let mut out = cross(z)?;
    if mode == PredictMode::Sample {
        if !f_joint.is_spd() {
            return Err(Error::NotPositiveDefinite("conditional sampling needs an SPD joint factorization".into()));
        }
        let w = gaussian(rng, f_joint.n(), 1);
        let v = to_vec(f_joint.apply_sqrt_mat(w.as_ref())?.as_ref());
        let correction = cross(&v[n_test..])?;
        for k in 0..n_test {
            out[k] += v[k] - correction[k];
        }
    }
    Ok(out)
}

/// Factor the training and joint covariances and predict at `test`.
pub fn krige(
    train: &Observations,
    test: &PointSet,
    model: &KernelModel,
    opts: &EvalOptions,
    mode: PredictMode,
) -> Result<Vec<f64>> {
    let train_tree = build_tree(&train.points, opts)?;
    let f_train = factor_sigma(train, model, &train_tree, opts)?;
    let joint_points = test.concat(&train.points);
    let joint_tree = build_tree(&joint_points, opts)?;
    let f_joint = SkelFactorization::factor(model, &joint_points, &joint_tree, Which::Sigma, &opts.fact)
        .map_err(|e| e.context("factor joint Σ"))?;
    let mut rng = param_rng(opts.seed, usize::MAX - 1);
    conditional_predict(&f_joint, &f_train, &train.z, mode, &mut rng)
}

/// Draw synthetic observations `z = F^{1/2} w` at the given locations.
pub fn sample_observations(points: PointSet, model: &KernelModel, opts: &EvalOptions) -> Result<Observations> {
    let tree = build_tree(&points, opts)?;
    let f = SkelFactorization::factor(model, &points, &tree, Which::Sigma, &opts.fact)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let z = f.sample_gp(&mut rng)?;
    Observations::new(points, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::rel_err;
    use crate::kernel::{Anisotropy, Family, Nugget};
    use crate::oracle::{
        dense_conditional_mean, dense_loglik, dense_loglik_and_score, dense_profile_loglik, dense_sigma, fd_gradient,
        DenseChol, DenseProblem,
    };

    fn model(theta: Vec<f64>) -> KernelModel {
        KernelModel::new(Family::Matern32, Anisotropy::PerAxis, Nugget::Fixed(1e-4), theta).unwrap()
    }

    fn synthetic(side: usize, m: &KernelModel, seed: u64) -> Observations {
        let opts = EvalOptions { seed, ..Default::default() };
        sample_observations(PointSet::grid(side, 100.0).unwrap(), m, &opts).unwrap()
    }

    #[test]
    fn scalar_case() {
        let obs = Observations::new(PointSet::new(vec![[0.0, 0.0]]).unwrap(), vec![1.0]).unwrap();
        let (ll, _) = loglik(&obs, &model(vec![10.0, 7.0]), &EvalOptions::default()).unwrap();
        let expect = -0.5 / 1.0001 - 0.5 * 1.0001f64.ln() - 0.5 * LN_2PI;
        assert!((ll - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_data_leaves_logdet_only() {
        let m = model(vec![10.0, 7.0]);
        let obs = Observations::new(PointSet::grid(8, 100.0).unwrap(), vec![0.0; 64]).unwrap();
        let (ll, f) = loglik(&obs, &m, &EvalOptions::default()).unwrap();
        assert!((ll - (-0.5 * f.logdet() - 32.0 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_dense() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(16, &m, 1);
        let rep = evaluate(&obs, &m, &EvalOptions::default()).unwrap();
        let (ll, g) = dense_loglik_and_score(&DenseProblem::new(&m, &obs.points, &obs.z).unwrap()).unwrap();
        assert!((rep.loglik - ll).abs() <= 1e-6 * ll.abs());
        for (a, b) in rep.gradient.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
        let again = evaluate(&obs, &m, &EvalOptions::default()).unwrap();
        assert_eq!(rep.loglik, again.loglik);
        assert_eq!(rep.gradient, again.gradient);
    }

    #[test]
    fn no_free_parameters() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(8, &m, 2);
        let opts = EvalOptions { params: Some(vec![]), ..Default::default() };
        let rep = evaluate(&obs, &m, &opts).unwrap();
        assert!(rep.gradient.is_empty() && rep.terms.is_empty());
        assert!(rep.loglik.is_finite());
    }

    #[test]
    fn self_derivative_identity() {
        // Feeding F itself as the derivative gives Tr(F⁻¹F) = n.
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(12, &m, 3);
        let opts = EvalOptions::default();
        let tree = QuadTree::build(&obs.points, opts.n_occ).unwrap();
        let f = factor_sigma(&obs, &m, &tree, &opts).unwrap();
        let u = f.solve(&obs.z).unwrap();
        let op = build_symmetrized_product(&f, &f).unwrap();
        let tr = peel_trace(&op, &tree, &opts.peel, &mut param_rng(0, 0)).unwrap().trace;
        let g = 0.5 * dot(&u, &f.apply(&u).unwrap()) - 0.5 * tr;
        let expect = 0.5 * dot(&obs.z, &u) - 0.5 * obs.len() as f64;
        assert!((g - expect).abs() <= 1e-6 * expect.abs().max(1.0));
    }

    #[test]
    fn shifted_derivative_recovers_gradient() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(16, &m, 3);
        let opts = EvalOptions::default();
        let tree = QuadTree::build(&obs.points, opts.n_occ).unwrap();
        let f = factor_sigma(&obs, &m, &tree, &opts).unwrap();
        let u = f.solve(&obs.z).unwrap();
        let (_, dense) = dense_loglik_and_score(&DenseProblem::new(&m, &obs.points, &obs.z).unwrap()).unwrap();
        for i in 0..2 {
            let c = 0.3;
            let fi = SkelFactorization::factor(&m, &obs.points, &tree, Which::Shifted(i, c), &opts.fact).unwrap();
            let op = build_symmetrized_product(&f, &fi).unwrap();
            let tr = peel_trace(&op, &tree, &opts.peel, &mut param_rng(0, i)).unwrap().trace - c * obs.len() as f64;
            let quad = dot(&u, &fi.apply(&u).unwrap()) - c * dot(&u, &f.apply(&u).unwrap());
            let g = 0.5 * quad - 0.5 * tr;
            assert!((g - dense[i]).abs() <= 1e-4 * dense[i].abs().max(1.0), "{g} vs {}", dense[i]);
        }
    }

    #[test]
    fn rejects_tolerance_inversion() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(4, &m, 4);
        let mut opts = EvalOptions::default();
        opts.fact.tol = 1e-5;
        assert!(matches!(evaluate(&obs, &m, &opts), Err(Error::Input(_))));
    }

    #[test]
    fn translation_invariance() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(16, &m, 5);
        let shifted = Observations::new(obs.points.translated([1234.5, -77.25]), obs.z.clone()).unwrap();
        let a = loglik(&obs, &m, &EvalOptions::default()).unwrap().0;
        let b = loglik(&shifted, &m, &EvalOptions::default()).unwrap().0;
        assert!((a - b).abs() <= 1e-8 * a.abs());
    }

    #[test]
    fn profile_matches_dense_and_fd() {
        let m = model(vec![10.0, 7.0]);
        let mut obs = synthetic(16, &m, 6);
        for v in obs.z.iter_mut() {
            *v = 2.0 + 1.5 * *v;
        }
        let opts = EvalOptions { profile: true, ..Default::default() };
        let rep = evaluate(&obs, &m, &opts).unwrap();
        let dense = dense_profile_loglik(&m, &obs.points, &obs.z).unwrap();
        assert!((rep.loglik - dense).abs() <= 1e-6 * dense.abs());
        let h: Vec<f64> = m.theta().iter().map(|t| 1e-5 * t).collect();
        let fd = fd_gradient(|th| dense_profile_loglik(&m.with_theta(th).unwrap(), &obs.points, &obs.z).unwrap(), m.theta(), &h);
        for (a, b) in rep.gradient.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
        let est = rep.profile.unwrap();
        assert!((est.mu - 2.0).abs() < 1.5 && est.sigma2 > 0.5);
    }

    #[test]
    fn sherman_morrison_matches_dense() {
        let m = model(vec![10.0, 7.0]);
        let pts = PointSet::grid(16, 100.0).unwrap();
        let tree = QuadTree::build(&pts, 64).unwrap();
        let f = SkelFactorization::factor(&m, &pts, &tree, Which::Sigma, &FactorOptions::default()).unwrap();
        let solver = RankOneSolver::new(&f).unwrap();
        let mut s = dense_sigma(&m, &pts);
        for j in 0..256 {
            for i in 0..256 {
                s[(i, j)] += 1.0;
            }
        }
        let b: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
        let exact = DenseChol::new(&s).unwrap().solve(&b);
        assert!(rel_err(&solver.solve(&b).unwrap(), &exact) <= 1e-8);
        // z = 𝟏 is the worst case for the update but stays well posed.
        let ones = Observations::new(pts.clone(), vec![1.0; 256]).unwrap();
        let opts = EvalOptions { profile: true, ..Default::default() };
        assert!(evaluate(&ones, &m, &opts).unwrap().loglik.is_finite());
    }

    #[test]
    fn conditional_mean_matches_dense() {
        use rand::Rng;
        let m = model(vec![10.0, 7.0]);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let train_pts = PointSet::new((0..200).map(|_| [r.random_range(0.0..100.0), r.random_range(0.0..100.0)]).collect()).unwrap();
        let test_pts = PointSet::new((0..50).map(|_| [r.random_range(0.0..100.0), r.random_range(0.0..100.0)]).collect()).unwrap();
        let opts = EvalOptions { n_occ: 16, ..Default::default() };
        let train = sample_observations(train_pts, &m, &opts).unwrap();
        let got = krige(&train, &test_pts, &m, &opts, PredictMode::Mean).unwrap();
        let expect = dense_conditional_mean(&m, &train.points, &test_pts, &train.z).unwrap();
        assert!(rel_err(&got, &expect) <= 1e-6);
    }

    #[test]
    fn far_and_coincident_predictions() {
        let m = model(vec![10.0, 7.0]);
        let train = synthetic(8, &m, 9);
        let test = PointSet::new(vec![[1e4, 1e4], train.points.get(10)]).unwrap();
        let opts = EvalOptions::default();
        let mean = krige(&train, &test, &m, &opts, PredictMode::Mean).unwrap();
        assert!(mean[0].abs() < 1e-12);
        assert!((mean[1] - train.z[10]).abs() < 1e-2);
        // Far from the data the conditional draw has the prior variance.
        let draws: Vec<f64> = (0..200)
            .map(|s| {
                let o = EvalOptions { seed: s, ..opts.clone() };
                krige(&train, &test, &m, &o, PredictMode::Sample).unwrap()[0]
            })
            .collect();
        let var = draws.iter().map(|d| d * d).sum::<f64>() / 200.0;
        assert!((var - 1.0001).abs() < 0.3, "{var}");
        let a = krige(&train, &test, &m, &opts, PredictMode::Sample).unwrap();
        assert_eq!(a, krige(&train, &test, &m, &opts, PredictMode::Sample).unwrap());
    }

    #[test]
    fn analytic_gradient_beats_fd_of_approximate_loglik() {
        let m = model(vec![10.0, 7.0]);
        let obs = synthetic(16, &m, 10);
        let mut opts = EvalOptions::default();
        opts.fact.tol = 1e-12;
        let rep = evaluate(&obs, &m, &opts).unwrap();
        let h: Vec<f64> = m.theta().iter().map(|t| 1e-4 * t).collect();
        let fd = fd_gradient(|th| loglik(&obs, &m.with_theta(th).unwrap(), &opts).unwrap().0, m.theta(), &h);
        for (a, b) in rep.gradient.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0), "{a} vs {b}");
        }
        let dense = fd_gradient(|th| dense_loglik(&m.with_theta(th).unwrap(), &obs.points, &obs.z).unwrap(), m.theta(), &h);
        for (a, b) in rep.gradient.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0));
        }
    }
}
