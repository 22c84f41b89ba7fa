//! Penalized least squares with roughness and fSCAD penalties, solved by
//! iterated local quadratic approximation.
//!
//! Every fit runs on a [`Problem`]: one or more coefficient blocks, each with
//! its own B-spline basis and design columns, plus an optional intercept
//! column in front. The single-regressor fit is the one-block case.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bspline::{BSplineBasis, SplineFunction};
use crate::data::{Curves, FunctionalData};
use crate::error::{invalid, Result, SlosError};
use crate::quadrature::trapezoid_weights;
use crate::scad::{fscad_approx, ScadParams, ShrinkRule};

/// Which coefficients are pinned to zero once subintervals die.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinRule {
    /// Pin a coefficient when every subinterval in its support is dead.
    Coefficient,
    /// Pin every coefficient supported on a dead subinterval.
    Subinterval,
}

/// Effective degrees of freedom reported for a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfRule {
    /// Hat-matrix trace of the final LQA system, sparsity weights included.
    Lqa,
    /// Hat-matrix trace of the roughness-penalized fit on the live support.
    /// The LQA weights act like a ridge on coefficients SCAD treats as
    /// nearly selected, which makes `Lqa` undercount the cost of keeping a
    /// region alive.
    Support,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub gamma: f64,
    pub scad: ScadParams,
    pub num_subintervals: usize,
    pub degree: usize,
    pub deriv_order: usize,
    pub max_iterations: usize,
    /// Relative change in the coefficient vector.
    pub convergence_tol: f64,
    pub shrink: ShrinkRule,
    pub pin_rule: PinRule,
    pub df_rule: DfRule,
    pub fit_intercept: bool,
    /// Enforce `β(start) = β(end)`.
    pub periodic: bool,
}

impl FitConfig {
    pub fn new(num_subintervals: usize) -> Self {
        Self {
            gamma: 0.0,
            scad: ScadParams::with_lambda(0.0).expect("zero lambda is valid"),
            num_subintervals,
            degree: 3,
            deriv_order: 2,
            max_iterations: 100,
            convergence_tol: 1e-6,
            shrink: ShrinkRule::default(),
            pin_rule: PinRule::Subinterval,
            df_rule: DfRule::Support,
            fit_intercept: true,
            periodic: false,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.scad = ScadParams::new(lambda, self.scad.a())?;
        Ok(self)
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self.deriv_order = self.deriv_order.min(degree);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.scad.lambda()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subintervals == 0 {
            return invalid("number of subintervals must be at least 1");
        }
        if self.deriv_order > self.degree {
            return invalid(format!(
                "penalty order {} exceeds degree {}",
                self.deriv_order, self.degree
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return invalid("convergence_tol must be positive");
        }
        if !(self.shrink.relative >= 0.0 && self.shrink.floor > 0.0) {
            return invalid("shrink threshold must be positive");
        }
        if self.periodic && self.degree == 0 {
            return invalid("periodic constraint needs degree at least 1");
        }
        Ok(())
    }

    pub fn basis(&self, domain: (f64, f64)) -> Result<BSplineBasis> {
        BSplineBasis::on_interval(domain.0, domain.1, self.num_subintervals, self.degree)
    }

    fn block_penalty(&self) -> BlockPenalty {
        BlockPenalty {
            gamma: self.gamma,
            scad: self.scad,
            periodic: self.periodic,
        }
    }

    fn control(&self) -> IterationControl {
        IterationControl {
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            shrink: self.shrink,
            pin_rule: self.pin_rule,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockStructure {
    pub(crate) basis: BSplineBasis,
    pub(crate) offset: usize,
    pub(crate) roughness: DMatrix<f64>,
    pub(crate) local_grams: Vec<DMatrix<f64>>,
}

impl BlockStructure {
    fn size(&self) -> usize {
        self.basis.size()
    }

    /// `c_j = √(M/T) ∥β_[j]∥₂` from the block's slice of `b`.
    fn magnitudes(&self, b: &DVector<f64>) -> Vec<f64> {
        let q = self.basis.degree() + 1;
        let scale = self.basis.num_subintervals() as f64 / self.basis.domain_length();
        self.local_grams
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let local = b.rows(self.offset + j, q);
                let sq = (local.transpose() * g * local)[(0, 0)];
                (scale * sq.max(0.0)).sqrt()
            })
            .collect()
    }
}

/// Design, responses and penalty structure shared by every fit of one dataset.
#[derive(Debug)]
pub struct Problem {
    intercept: bool,
    design: DMatrix<f64>,
    responses: DVector<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    blocks: Vec<BlockStructure>,
}

impl Problem {
    /// One regressor on `basis`.
    pub fn single(basis: BSplineBasis, data: &FunctionalData, deriv_order: usize, intercept: bool) -> Result<Self> {
        let u = basis.design_matrix(data.curves.values(), data.curves.grid())?;
        Self::from_designs(vec![(basis, u, deriv_order)], data.responses.clone(), intercept)
    }

    /// Column-catenated blocks `(basis, U_k, m_k)`.
    pub fn from_designs(
        parts: Vec<(BSplineBasis, DMatrix<f64>, usize)>,
        responses: DVector<f64>,
        intercept: bool,
    ) -> Result<Self> {
        let n = responses.len();
        if n < 2 {
            return invalid("need at least two samples");
        }
        if parts.is_empty() {
            return invalid("need at least one coefficient block");
        }
        let lead = usize::from(intercept);
        let total: usize = lead + parts.iter().map(|(b, _, _)| b.size()).sum::<usize>();
        let mut design = DMatrix::zeros(n, total);
        if intercept {
            design.column_mut(0).fill(1.0);
        }
        let mut blocks = Vec::with_capacity(parts.len());
        let mut offset = lead;
        for (basis, u, m) in parts {
            if u.nrows() != n || u.ncols() != basis.size() {
                return invalid(format!(
                    "design block is {}x{}, expected {}x{}",
                    u.nrows(),
                    u.ncols(),
                    n,
                    basis.size()
                ));
            }
            design.columns_mut(offset, basis.size()).copy_from(&u);
            let roughness = basis.penalty_matrix(m)?;
            let local_grams = basis.local_blocks(0, basis.degree() + 1)?;
            let size = basis.size();
            blocks.push(BlockStructure {
                basis,
                offset,
                roughness,
                local_grams,
            });
            offset += size;
        }
        let gram = design.tr_mul(&design);
        let rhs = design.tr_mul(&responses);
        Ok(Self {
            intercept,
            design,
            responses,
            gram,
            rhs,
            blocks,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.responses.len()
    }

    pub fn num_params(&self) -> usize {
        self.design.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_basis(&self, k: usize) -> &BSplineBasis {
        &self.blocks[k].basis
    }

    pub fn rss(&self, b: &DVector<f64>) -> f64 {
        (&self.responses - &self.design * b).norm_squared()
    }

    fn roughness_value(&self, b: &DVector<f64>, penalties: &[BlockPenalty]) -> f64 {
        self.blocks
            .iter()
            .zip(penalties)
            .map(|(blk, pen)| {
                if pen.gamma == 0.0 {
                    return 0.0;
                }
                let local = b.rows(blk.offset, blk.size());
                pen.gamma * (local.transpose() * &blk.roughness * local)[(0, 0)]
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockPenalty {
    pub(crate) gamma: f64,
    pub(crate) scad: ScadParams,
    pub(crate) periodic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct IterationControl {
    pub(crate) max_iterations: usize,
    pub(crate) convergence_tol: f64,
    pub(crate) shrink: ShrinkRule,
    pub(crate) pin_rule: PinRule,
}

/// Surrogate values around one LQA update: `R_i` at the incoming iterate
/// (with the current pins applied) and at its minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateStep {
    pub before: f64,
    pub after: f64,
}

/// The linear system behind the final iterate.
///
/// `penalty` is `Σ γ_k V_k + W` embedded at full size, so the surrogate is
/// `R(b) = RSS(b)/n + bᵀ penalty b + constant`, minimized over free
/// parameters (unpinned, with periodic pairs folded together).
#[derive(Debug)]
pub struct FinalSystem {
    problem: Arc<Problem>,
    penalty: DMatrix<f64>,
    roughness: DMatrix<f64>,
    surrogate_constant: f64,
    free_map: Vec<Option<usize>>,
    num_free: usize,
}

impl FinalSystem {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn free_map(&self) -> &[Option<usize>] {
        &self.free_map
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    /// `R(b)` for a full-length parameter vector.
    pub fn surrogate(&self, b: &DVector<f64>) -> f64 {
        let n = self.problem.num_samples() as f64;
        self.problem.rss(b) / n + (b.transpose() * &self.penalty * b)[(0, 0)] + self.surrogate_constant
    }

    pub fn expand(&self, free: &DVector<f64>) -> DVector<f64> {
        expand(&self.free_map, free)
    }

    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_free);
        for (i, f) in self.free_map.iter().enumerate().rev() {
            if let Some(f) = f {
                out[*f] = full[i];
            }
        }
        out
    }

    /// Design with pinned columns removed and folded columns summed.
    pub fn reduced_design(&self) -> DMatrix<f64> {
        reduce_columns(&self.problem.design, &self.free_map, self.num_free)
    }

    /// `Ũᵀ Ũ + n (Σ γ V + W)` on free parameters.
    pub fn reduced_lhs(&self) -> DMatrix<f64> {
        let n = self.problem.num_samples() as f64;
        let a = &self.problem.gram + &self.penalty * n;
        reduce_matrix(&a, &self.free_map, self.num_free)
    }

    /// Trace of the hat matrix `Ũ (ŨᵀŨ + nΣγV + nW)⁻¹ Ũᵀ`.
    pub fn hat_trace(&self) -> f64 {
        self.trace_with(&self.penalty)
    }

    /// Trace of `Ũ (ŨᵀŨ + nΣγV)⁻¹ Ũᵀ`: the roughness-penalized refit on the
    /// live support, with the sparsity weights left out.
    pub fn support_trace(&self) -> f64 {
        self.trace_with(&self.roughness)
    }

    fn trace_with(&self, penalty: &DMatrix<f64>) -> f64 {
        if self.num_free == 0 {
            return 0.0;
        }
        let n = self.problem.num_samples() as f64;
        let u = self.reduced_design();
        let pen = reduce_matrix(penalty, &self.free_map, self.num_free);
        if let Some(qr) = StackedQr::new(&u, &pen, n) {
            return qr.hat_trace(&u);
        }
        let lhs = reduce_matrix(&(&self.problem.gram + penalty * n), &self.free_map, self.num_free);
        let gram = reduce_matrix(&self.problem.gram, &self.free_map, self.num_free);
        spd_solve_matrix(&lhs, &gram).map_or(f64::NAN, |x| x.trace())
    }
}

fn expand(free_map: &[Option<usize>], free: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(free_map.len(), free_map.iter().map(|f| f.map_or(0.0, |f| free[f])))
}

fn reduce_columns(u: &DMatrix<f64>, map: &[Option<usize>], q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.nrows(), q);
    for (i, f) in map.iter().enumerate() {
        if let Some(f) = f {
            let mut col = out.column_mut(*f);
            col += u.column(i);
        }
    }
    out
}

fn reduce_matrix(a: &DMatrix<f64>, map: &[Option<usize>], q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(q, q);
    for (i, fi) in map.iter().enumerate() {
        let Some(fi) = fi else { continue };
        for (j, fj) in map.iter().enumerate() {
            if let Some(fj) = fj {
                out[(*fi, *fj)] += a[(i, j)];
            }
        }
    }
    out
}

fn reduce_vector(v: &DVector<f64>, map: &[Option<usize>], q: usize) -> DVector<f64> {
    let mut out = DVector::zeros(q);
    for (i, f) in map.iter().enumerate() {
        if let Some(f) = f {
            out[*f] += v[i];
        }
    }
    out
}

/// Smallest acceptable squared Cholesky pivot of the unit-diagonal system.
const MIN_SCALED_PIVOT: f64 = 1e-14;

fn jacobi_scaled_cholesky(a: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    let q = a.nrows();
    let mut s = DVector::zeros(q);
    for i in 0..q {
        let d = a[(i, i)];
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        s[i] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(q, q, |i, j| a[(i, j)] * s[i] * s[j]);
    let chol = scaled.cholesky()?;
    let l = chol.l_dirty();
    if (0..q).any(|i| l[(i, i)].powi(2) < MIN_SCALED_PIVOT || !l[(i, i)].is_finite()) {
        return None;
    }
    Some((chol, s))
}

/// Solves a symmetric positive-definite system; `None` when it is
/// numerically singular.
pub(crate) fn spd_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let (chol, s) = jacobi_scaled_cholesky(a)?;
    let scaled_rhs = rhs.component_mul(&s);
    Some(chol.solve(&scaled_rhs).component_mul(&s))
}

fn spd_solve_matrix(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (chol, s) = jacobi_scaled_cholesky(a)?;
    let mut scaled = rhs.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= s[i];
    }
    let mut x = chol.solve(&scaled);
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= s[i];
    }
    Some(x)
}

/// Smallest acceptable diagonal of `R`, relative to its largest, in the
/// column-normalized stacked factorization.
const MIN_STACKED_DIAGONAL: f64 = 1e-10;

/// QR factorization of `[Ũ; √n L]` with `LᵀL` the penalty. It solves the same
/// normal equations as the Cholesky path with the square root of its
/// condition number, so it copes with very large roughness weights.
struct StackedQr {
    r: DMatrix<f64>,
    scale: DVector<f64>,
    q: DMatrix<f64>,
}

impl StackedQr {
    fn new(u: &DMatrix<f64>, penalty: &DMatrix<f64>, n: f64) -> Option<Self> {
        let q = u.ncols();
        let (rows, _) = u.shape();
        let eig = nalgebra::SymmetricEigen::new(penalty.clone());
        // Eigenvalues at roundoff level belong to the penalty's null space.
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = top * q as f64 * f64::EPSILON;
        let mut stacked = DMatrix::zeros(rows + q, q);
        stacked.rows_mut(0, rows).copy_from(u);
        for k in 0..q {
            let lambda = eig.eigenvalues[k];
            let root = if lambda > floor { (n * lambda).sqrt() } else { 0.0 };
            for j in 0..q {
                stacked[(rows + k, j)] = root * eig.eigenvectors[(j, k)];
            }
        }
        let mut scale = DVector::zeros(q);
        for j in 0..q {
            let norm = stacked.column(j).norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return None;
            }
            scale[j] = 1.0 / norm;
            stacked.column_mut(j).scale_mut(scale[j]);
        }
        let qr = stacked.qr();
        let r = qr.r();
        let largest = (0..q).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..q).any(|i| !(r[(i, i)].abs() >= MIN_STACKED_DIAGONAL * largest)) {
            return None;
        }
        Some(Self { r, scale, q: qr.q() })
    }

    fn solve(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        let rows = y.len();
        let qty = self.q.rows(0, rows).tr_mul(y);
        let x = self.r.solve_upper_triangular(&qty)?;
        Some(x.component_mul(&self.scale))
    }

    /// `‖Ũ (ŨᵀŨ + nLᵀL)⁻¹ᐟ²‖²_F`, the hat-matrix trace.
    fn hat_trace(&self, u: &DMatrix<f64>) -> f64 {
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.scale[j];
        }
        match self.r.tr_solve_upper_triangular(&scaled.transpose()) {
            Some(z) => z.norm_squared(),
            None => f64::NAN,
        }
    }
}

pub(crate) struct EngineFit {
    pub(crate) coefficients: DVector<f64>,
    pub(crate) pinned: Vec<bool>,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
    pub(crate) objective_trace: Vec<f64>,
    pub(crate) surrogate_trace: Vec<SurrogateStep>,
    pub(crate) system: FinalSystem,
}

impl EngineFit {
    pub(crate) fn rss(&self) -> f64 {
        self.system.problem.rss(&self.coefficients)
    }

    pub(crate) fn block_coefficients(&self, k: usize) -> Vec<f64> {
        let blk = &self.system.problem.blocks[k];
        self.coefficients.rows(blk.offset, blk.size()).iter().copied().collect()
    }

    pub(crate) fn mu(&self) -> f64 {
        if self.system.problem.intercept {
            self.coefficients[0]
        } else {
            0.0
        }
    }

    /// Subinterval `j` is inactive when all of its supporting coefficients are pinned.
    pub(crate) fn active_mask(&self, k: usize) -> Vec<bool> {
        let blk = &self.system.problem.blocks[k];
        let d = blk.basis.degree();
        (0..blk.basis.num_subintervals())
            .map(|j| !(j..=j + d).all(|c| self.pinned[blk.offset + c]))
            .collect()
    }
}

struct Engine<'a> {
    problem: &'a Arc<Problem>,
    penalties: &'a [BlockPenalty],
    control: IterationControl,
    base: DMatrix<f64>,
    roughness: DMatrix<f64>,
    n: f64,
}

struct Pass {
    coefficients: DVector<f64>,
    weights: DMatrix<f64>,
    constant: f64,
    map: Vec<Option<usize>>,
    num_free: usize,
}

impl<'a> Engine<'a> {
    fn new(problem: &'a Arc<Problem>, penalties: &'a [BlockPenalty], control: IterationControl) -> Self {
        let p = problem.num_params();
        let mut roughness = DMatrix::zeros(p, p);
        for (blk, pen) in problem.blocks.iter().zip(penalties) {
            if pen.gamma > 0.0 {
                let mut view = roughness.view_mut((blk.offset, blk.offset), (blk.size(), blk.size()));
                view += &blk.roughness * pen.gamma;
            }
        }
        let n = problem.num_samples() as f64;
        let base = &problem.gram + &roughness * n;
        Self {
            problem,
            penalties,
            control,
            base,
            roughness,
            n,
        }
    }

    fn free_map(&self, pinned: &[bool]) -> (Vec<Option<usize>>, usize) {
        let p = self.problem.num_params();
        let mut map = vec![None; p];
        let mut next = 0;
        for i in 0..p {
            if !pinned[i] {
                map[i] = Some(next);
                next += 1;
            }
        }
        for (blk, pen) in self.problem.blocks.iter().zip(self.penalties) {
            if pen.periodic {
                let first = blk.offset;
                let last = blk.offset + blk.size() - 1;
                map[last] = map[first];
            }
        }
        // Renumber so free indices stay dense after folding.
        let mut renumber = vec![usize::MAX; next];
        let mut count = 0;
        for f in map.iter_mut().flatten() {
            if renumber[*f] == usize::MAX {
                renumber[*f] = count;
                count += 1;
            }
            *f = renumber[*f];
        }
        (map, count)
    }

    fn objective(&self, b: &DVector<f64>) -> f64 {
        let rss = self.problem.rss(b) / self.n;
        let rough = self.problem.roughness_value(b, self.penalties);
        let sparse: f64 = self
            .problem
            .blocks
            .iter()
            .zip(self.penalties)
            .filter(|(_, pen)| pen.scad.lambda() > 0.0)
            .map(|(blk, pen)| blk.magnitudes(b).iter().map(|&c| pen.scad.penalty(c)).sum::<f64>())
            .sum();
        rss + rough + sparse
    }

    /// Marks newly dead subintervals. The threshold is relative to the
    /// magnitudes of the initial estimate, so a fit that shrinks towards zero
    /// uniformly still reaches exact zeros.
    fn update_dead(
        &self,
        b: &DVector<f64>,
        dead: &mut [Vec<bool>],
        reference: &[Vec<f64>],
        shrink: ShrinkRule,
    ) -> (Vec<Vec<f64>>, bool) {
        let mut changed = false;
        let mags: Vec<Vec<f64>> = self.problem.blocks.iter().map(|blk| blk.magnitudes(b)).collect();
        for (((c, pen), dead_k), base) in mags.iter().zip(self.penalties).zip(dead.iter_mut()).zip(reference) {
            if pen.scad.lambda() == 0.0 {
                continue;
            }
            let threshold = shrink.threshold(base);
            for (j, &cj) in c.iter().enumerate() {
                if !dead_k[j] && cj <= threshold {
                    dead_k[j] = true;
                    changed = true;
                }
            }
        }
        (mags, changed)
    }

    fn pins(&self, dead: &[Vec<bool>]) -> Vec<bool> {
        let mut pinned = vec![false; self.problem.num_params()];
        for ((blk, pen), dead_k) in self.problem.blocks.iter().zip(self.penalties).zip(dead) {
            for k in 0..blk.size() {
                let mut support = blk.basis.support(k);
                pinned[blk.offset + k] = match self.control.pin_rule {
                    PinRule::Coefficient => support.all(|j| dead_k[j]),
                    PinRule::Subinterval => support.any(|j| dead_k[j]),
                };
            }
            if pen.periodic {
                let first = blk.offset;
                let last = blk.offset + blk.size() - 1;
                let either = pinned[first] || pinned[last];
                pinned[first] = either;
                pinned[last] = either;
            }
        }
        pinned
    }

    fn lqa(&self, mags: &[Vec<f64>], dead: &[Vec<bool>]) -> (DMatrix<f64>, f64) {
        let p = self.problem.num_params();
        let mut w = DMatrix::zeros(p, p);
        let mut constant = 0.0;
        for (((blk, pen), c), dead_k) in self.problem.blocks.iter().zip(self.penalties).zip(mags).zip(dead) {
            if pen.scad.lambda() == 0.0 {
                continue;
            }
            let scale = blk.basis.num_subintervals() as f64 / blk.basis.domain_length();
            let q = blk.basis.degree() + 1;
            for (j, g) in blk.local_grams.iter().enumerate() {
                if dead_k[j] {
                    continue;
                }
                let deriv = pen.scad.derivative(c[j]);
                constant += pen.scad.penalty(c[j]) - 0.5 * deriv * c[j];
                if deriv == 0.0 {
                    continue;
                }
                let weight = 0.5 * deriv * scale / c[j];
                let mut view = w.view_mut((blk.offset + j, blk.offset + j), (q, q));
                view += g * weight;
            }
        }
        (w, constant)
    }

    fn solve_with(&self, weights: &DMatrix<f64>, pinned: &[bool]) -> Option<(DVector<f64>, Vec<Option<usize>>, usize)> {
        let (map, q) = self.free_map(pinned);
        let a = &self.base + weights * self.n;
        let lhs = reduce_matrix(&a, &map, q);
        let rhs = reduce_vector(&self.problem.rhs, &map, q);
        let theta = match spd_solve(&lhs, &rhs) {
            Some(theta) => theta,
            None => {
                let u = reduce_columns(&self.problem.design, &map, q);
                let pen = reduce_matrix(&(&self.roughness + weights), &map, q);
                StackedQr::new(&u, &pen, self.n)?.solve(&self.problem.responses)?
            }
        };
        Some((expand(&map, &theta), map, q))
    }

    fn pass(
        &self,
        b: &DVector<f64>,
        dead: &mut [Vec<bool>],
        reference: &[Vec<f64>],
        shrink: ShrinkRule,
    ) -> (Option<Pass>, bool, Vec<bool>) {
        let (mags, changed) = self.update_dead(b, dead, reference, shrink);
        let pinned = self.pins(dead);
        let (weights, constant) = self.lqa(&mags, dead);
        let pass = self
            .solve_with(&weights, &pinned)
            .map(|(coefficients, map, num_free)| Pass {
                coefficients,
                weights,
                constant,
                map,
                num_free,
            });
        (pass, changed, pinned)
    }

    fn surrogate(&self, b: &DVector<f64>, weights: &DMatrix<f64>, constant: f64) -> f64 {
        self.problem.rss(b) / self.n + (b.transpose() * (&self.roughness + weights) * b)[(0, 0)] + constant
    }

    fn run(self) -> Result<EngineFit> {
        let p = self.problem.num_params();
        let no_pins = vec![false; p];
        let zero = DMatrix::zeros(p, p);
        let (map0, q0) = self.free_map(&no_pins);
        let unpenalized = self
            .penalties
            .iter()
            .all(|pen| pen.gamma == 0.0 && pen.scad.lambda() == 0.0);
        if unpenalized && self.problem.num_samples() < q0 {
            return Err(SlosError::IllConditioned {
                iteration: 0,
                detail: format!(
                    "{} samples for {} unpenalized coefficients",
                    self.problem.num_samples(),
                    q0
                ),
            });
        }
        let (mut b, _, _) = self
            .solve_with(&zero, &no_pins)
            .ok_or_else(|| SlosError::IllConditioned {
                iteration: 0,
                detail: "initial smoothing-spline system is singular".into(),
            })?;
        let mut objective_trace = vec![self.objective(&b)];
        let mut surrogate_trace = Vec::new();
        let sparse = self.penalties.iter().any(|pen| pen.scad.lambda() > 0.0);
        if !sparse {
            let system = FinalSystem {
                problem: Arc::clone(self.problem),
                penalty: self.roughness.clone(),
                roughness: self.roughness.clone(),
                surrogate_constant: 0.0,
                free_map: map0,
                num_free: q0,
            };
            return Ok(EngineFit {
                coefficients: b,
                pinned: no_pins,
                iterations: 0,
                converged: true,
                objective_trace,
                surrogate_trace,
                system,
            });
        }

        let mut dead: Vec<Vec<bool>> = self
            .problem
            .blocks
            .iter()
            .map(|blk| vec![false; blk.basis.num_subintervals()])
            .collect();
        let reference: Vec<Vec<f64>> = self.problem.blocks.iter().map(|blk| blk.magnitudes(&b)).collect();
        let mut pinned = no_pins;
        let mut last: Option<Pass> = None;
        let mut converged = false;
        let mut iterations = 0;
        for iter in 1..=self.control.max_iterations {
            iterations = iter;
            let (mut pass, mut changed, mut pins) = self.pass(&b, &mut dead, &reference, self.control.shrink);
            if pass.is_none() {
                let (retry, retry_changed, retry_pins) =
                    self.pass(&b, &mut dead, &reference, self.control.shrink.scaled(10.0));
                pass = retry;
                changed |= retry_changed;
                pins = retry_pins;
            }
            let pass = pass.ok_or_else(|| SlosError::IllConditioned {
                iteration: iter,
                detail: "LQA system is singular after extra shrinkage".into(),
            })?;
            pinned = pins;

            let mut projected = b.clone();
            for (i, &pin) in pinned.iter().enumerate() {
                if pin {
                    projected[i] = 0.0;
                }
            }
            let before = self.surrogate(&projected, &pass.weights, pass.constant);
            let after = self.surrogate(&pass.coefficients, &pass.weights, pass.constant);
            surrogate_trace.push(SurrogateStep { before, after });
            objective_trace.push(self.objective(&pass.coefficients));

            let change = (&pass.coefficients - &b).norm() / b.norm().max(1.0);
            b = pass.coefficients.clone();
            last = Some(pass);
            if change < self.control.convergence_tol && !changed {
                converged = true;
                break;
            }
        }
        let pass = last.expect("at least one iteration runs");
        let system = FinalSystem {
            problem: Arc::clone(self.problem),
            penalty: &self.roughness + &pass.weights,
            roughness: self.roughness.clone(),
            surrogate_constant: pass.constant,
            free_map: pass.map,
            num_free: pass.num_free,
        };
        Ok(EngineFit {
            coefficients: b,
            pinned,
            iterations,
            converged,
            objective_trace,
            surrogate_trace,
            system,
        })
    }
}

pub(crate) fn run_engine(
    problem: &Arc<Problem>,
    penalties: &[BlockPenalty],
    control: IterationControl,
) -> Result<EngineFit> {
    if penalties.len() != problem.num_blocks() {
        return invalid(format!(
            "{} penalty settings for {} blocks",
            penalties.len(),
            problem.num_blocks()
        ));
    }
    Engine::new(problem, penalties, control).run()
}

/// Output of a single-regressor fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: SplineFunction,
    pub mu_hat: f64,
    /// `false` marks a subinterval on which `β̂` is identically zero.
    pub active_mask: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the initial estimate and after every iteration.
    pub objective_trace: Vec<f64>,
    pub surrogate_trace: Vec<SurrogateStep>,
    pub rss: f64,
    pub df: f64,
    pub residual_variance: f64,
    pub config: FitConfig,
    pub system: Arc<FinalSystem>,
}

impl FitResult {
    pub fn num_samples(&self) -> usize {
        self.system.problem.num_samples()
    }

    /// Full parameter vector (intercept first, when fitted).
    pub fn parameters(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.system.problem.num_params());
        if self.system.problem.intercept {
            out.push(self.mu_hat);
        }
        out.extend_from_slice(self.beta_hat.coefficients());
        DVector::from_vec(out)
    }

    /// Closed intervals where `β̂` is identically zero, merged.
    pub fn null_intervals(&self) -> Vec<(f64, f64)> {
        mask_intervals(self.beta_hat.basis(), &self.active_mask, false)
    }

    /// Closed intervals where `β̂` may be nonzero, merged.
    pub fn active_intervals(&self) -> Vec<(f64, f64)> {
        mask_intervals(self.beta_hat.basis(), &self.active_mask, true)
    }
}

fn mask_intervals(basis: &BSplineBasis, mask: &[bool], want: bool) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (j, &m) in mask.iter().enumerate() {
        if m != want {
            continue;
        }
        let (a, b) = basis.subinterval(j);
        match out.last_mut() {
            Some(last) if j > 0 && mask[j - 1] == want => last.1 = b,
            _ => out.push((a, b)),
        }
    }
    out
}

fn df_and_variance(system: &FinalSystem, rss: f64, rule: DfRule) -> (f64, f64) {
    let df = match rule {
        DfRule::Lqa => system.hat_trace(),
        DfRule::Support => system.support_trace(),
    };
    let n = system.problem.num_samples() as f64;
    let variance = if n - df > 0.0 { rss / (n - df) } else { f64::INFINITY };
    (df, variance)
}

/// Fits the estimator on a prepared single-block problem.
pub fn fit_problem(problem: &Arc<Problem>, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if problem.num_blocks() != 1 {
        return invalid("fit_problem expects a single-regressor problem");
    }
    let basis = problem.block_basis(0).clone();
    if basis.num_subintervals() != config.num_subintervals || basis.degree() != config.degree {
        return invalid("problem basis does not match the configuration");
    }
    if problem.has_intercept() != config.fit_intercept {
        return invalid("problem intercept does not match the configuration");
    }
    let engine = run_engine(problem, &[config.block_penalty()], config.control())?;
    let rss = engine.rss();
    let (df, residual_variance) = df_and_variance(&engine.system, rss, config.df_rule);
    let beta_hat = SplineFunction::new(basis, engine.block_coefficients(0))?;
    Ok(FitResult {
        beta_hat,
        mu_hat: engine.mu(),
        active_mask: engine.active_mask(0),
        iterations: engine.iterations,
        converged: engine.converged,
        objective_trace: engine.objective_trace,
        surrogate_trace: engine.surrogate_trace,
        rss,
        df,
        residual_variance,
        config: config.clone(),
        system: Arc::new(engine.system),
    })
}

pub fn build_problem(data: &FunctionalData, config: &FitConfig) -> Result<Arc<Problem>> {
    config.validate()?;
    let basis = config.basis(data.curves.domain())?;
    Ok(Arc::new(Problem::single(
        basis,
        data,
        config.deriv_order,
        config.fit_intercept,
    )?))
}

/// Fits one functional regressor.
pub fn fit(data: &FunctionalData, config: &FitConfig) -> Result<FitResult> {
    let problem = build_problem(data, config)?;
    fit_problem(&problem, config)
}

/// Joint fit of several regressors sharing one intercept.
#[derive(Debug, Clone)]
pub struct MultiFitResult {
    pub fits: Vec<FitResult>,
    pub mu_hat: f64,
}

/// Fits `Y = μ + Σ_k ∫ X_k β_k + ε`. Iteration settings and the intercept
/// flag come from the first configuration.
pub fn fit_multi(regressors: &[Curves], responses: &DVector<f64>, configs: &[FitConfig]) -> Result<MultiFitResult> {
    if regressors.is_empty() || regressors.len() != configs.len() {
        return invalid("need one configuration per regressor");
    }
    let mut parts = Vec::with_capacity(regressors.len());
    for (curves, config) in regressors.iter().zip(configs) {
        config.validate()?;
        if curves.len() != responses.len() {
            return invalid("every regressor must have one curve per response");
        }
        let basis = config.basis(curves.domain())?;
        let u = basis.design_matrix(curves.values(), curves.grid())?;
        parts.push((basis, u, config.deriv_order));
    }
    let lead = &configs[0];
    let problem = Arc::new(Problem::from_designs(parts, responses.clone(), lead.fit_intercept)?);
    let penalties: Vec<BlockPenalty> = configs.iter().map(FitConfig::block_penalty).collect();
    let engine = run_engine(&problem, &penalties, lead.control())?;
    let rss = engine.rss();
    let (df, residual_variance) = df_and_variance(&engine.system, rss, lead.df_rule);
    let system = Arc::new(engine.system);
    let mu_hat = if problem.has_intercept() {
        engine.coefficients[0]
    } else {
        0.0
    };
    let mut fits = Vec::with_capacity(configs.len());
    for (k, config) in configs.iter().enumerate() {
        let blk = &problem.blocks[k];
        let coef = engine
            .coefficients
            .rows(blk.offset, blk.size())
            .iter()
            .copied()
            .collect();
        let d = blk.basis.degree();
        let mask = (0..blk.basis.num_subintervals())
            .map(|j| !(j..=j + d).all(|c| engine.pinned[blk.offset + c]))
            .collect();
        fits.push(FitResult {
            beta_hat: SplineFunction::new(blk.basis.clone(), coef)?,
            mu_hat,
            active_mask: mask,
            iterations: engine.iterations,
            converged: engine.converged,
            objective_trace: engine.objective_trace.clone(),
            surrogate_trace: engine.surrogate_trace.clone(),
            rss,
            df,
            residual_variance,
            config: config.clone(),
            system: Arc::clone(&system),
        });
    }
    Ok(MultiFitResult { fits, mu_hat })
}

/// A fitted coefficient function.
pub trait CoefficientFunction {
    fn beta(&self, t: f64) -> f64;
}

/// Anything that maps covariate curves to predicted responses.
pub trait Predictor: CoefficientFunction {
    fn intercept(&self) -> f64;

    /// `ŷ_i = μ̂ + ∫ X_i β̂` by trapezoid quadrature on the curves' grid.
    fn predict(&self, curves: &Curves) -> Result<DVector<f64>> {
        let grid = curves.grid();
        let w = trapezoid_weights(grid);
        let weighted: DVector<f64> =
            DVector::from_iterator(grid.len(), grid.iter().zip(&w).map(|(&t, &wk)| wk * self.beta(t)));
        let mut y = curves.values() * weighted;
        y.add_scalar_mut(self.intercept());
        Ok(y)
    }
}

impl CoefficientFunction for SplineFunction {
    fn beta(&self, t: f64) -> f64 {
        self.value(t)
    }
}

impl CoefficientFunction for FitResult {
    fn beta(&self, t: f64) -> f64 {
        self.beta_hat.value(t)
    }
}

impl Predictor for FitResult {
    fn intercept(&self) -> f64 {
        self.mu_hat
    }

    fn predict(&self, curves: &Curves) -> Result<DVector<f64>> {
        let basis = self.beta_hat.basis();
        let (a, b) = curves.domain();
        let tol = 1e-9 * basis.domain_length();
        if (a - basis.domain_start()).abs() > tol || (b - basis.domain_end()).abs() > tol {
            return invalid(format!(
                "curves on [{a}, {b}] but model fitted on [{}, {}]",
                basis.domain_start(),
                basis.domain_end()
            ));
        }
        let grid = curves.grid();
        let w = trapezoid_weights(grid);
        let weighted = DVector::from_iterator(
            grid.len(),
            grid.iter().zip(&w).map(|(&t, &wk)| wk * self.beta_hat.value(t)),
        );
        let mut y = curves.values() * weighted;
        y.add_scalar_mut(self.mu_hat);
        Ok(y)
    }
}

pub fn predict(result: &FitResult, curves: &Curves) -> Result<DVector<f64>> {
    result.predict(curves)
}

pub fn predict_multi(result: &MultiFitResult, regressors: &[Curves]) -> Result<DVector<f64>> {
    if regressors.len() != result.fits.len() {
        return invalid("need one set of curves per regressor");
    }
    let mut total = DVector::from_element(regressors[0].len(), result.mu_hat);
    for (fit, curves) in result.fits.iter().zip(regressors) {
        let y = fit.predict(curves)?;
        total += y.add_scalar(-fit.mu_hat);
    }
    Ok(total)
}

/// `Q(β, μ) = RSS/n + γ bᵀVb + Σ_j p_λ(c_j)`.
pub fn objective(beta: &SplineFunction, mu: f64, data: &FunctionalData, config: &FitConfig) -> Result<f64> {
    if data.is_empty() {
        return invalid("data must be nonempty");
    }
    let basis = beta.basis();
    if basis.size() != config.num_subintervals + config.degree {
        return invalid("coefficient function does not match the configuration");
    }
    let u = basis.design_matrix(data.curves.values(), data.curves.grid())?;
    let b = DVector::from_column_slice(beta.coefficients());
    let resid = &data.responses - u * &b;
    let rss = resid.add_scalar(-mu).norm_squared() / data.len() as f64;
    let rough = if config.gamma > 0.0 {
        let v = basis.penalty_matrix(config.deriv_order)?;
        config.gamma * (b.transpose() * v * &b)[(0, 0)]
    } else {
        0.0
    };
    Ok(rss + rough + fscad_approx(beta, &config.scad))
}
