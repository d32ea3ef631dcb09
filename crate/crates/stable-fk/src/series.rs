//! Recursive quadrature for the perturbation terms `q_n` and their
//! dominating majorants `qbar_n`, plus the singular-kernel integrals they
//! are driven by.
//!
//! Tables live on a uniform space mesh of cell midpoints over `[-R, R]` and
//! at the times `m h`, `m = 1..=K`. Each recursion layer is a time
//! convolution of spatial convolutions: the inner integral applies the
//! cell-averaged singular kernel to the previous layer, the outer integral
//! applies cell-averaged density rows. Cell averages (antiderivative
//! differences) keep the short-time density spike mass-correct on the mesh.
//! The time rule pairs the tabulated factor at cell right endpoints with the
//! directly evaluable density at the complementary times, so the endpoint
//! blow-ups at `s = 0` and `s = t` are never sampled; the `s in [0, h]` cell
//! uses the density row at `h/2` against the top-of-range table value.
//!
//! Two table families share the engine: a slice fixes the terminal argument
//! `z` and tabulates `q_n(t, y, z)` over the mesh; the integrated family
//! tabulates `int q_n(t, x, z) m(dz)`, whose base case is the exact unit
//! mass, with analytic completions for the kernel and density mass lost to
//! domain truncation.

use crate::fft::{Convolver, Spectrum};
use crate::jumpalgebra::binomial;
use crate::kernel::{DensityError, DensityEvaluator, Envelope};
use crate::model::{
    symmetrize, Certificate, ModelSpec, PerturbProfile, PerturbationF, SymmetrizedModel,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("grid radius {radius} is below the required 5 t_max^(1/alpha) = {required}")]
    RadiusTooSmall { radius: f64, required: f64 },
    #[error("{0} is not a table time (positive multiple of {1} within the horizon)")]
    NotATableTime(f64, f64),
    #[error("order {got} exceeds the built table order {built}")]
    OrderTooHigh { got: usize, built: usize },
    #[error("point {0} lies outside the grid")]
    OutsideGrid(f64),
    #[error("grid needs at least {0} cells/nodes")]
    GridTooCoarse(usize),
}

/// Quadrature grid: table times `m h` for `m = 1..=time_count` and a uniform
/// midpoint mesh of `space_cells` cells over `[-radius, radius]`, with the
/// geometric grading ratio used by the local singular integrals.
#[derive(Debug, Clone)]
pub struct Grid {
    pub time_step: f64,
    pub time_count: usize,
    pub radius: f64,
    pub space_cells: usize,
    pub diag_ratio: f64,
}

impl Grid {
    pub fn new(
        t_max: f64,
        time_count: usize,
        radius: f64,
        space_cells: usize,
        alpha: f64,
    ) -> Result<Self, SeriesError> {
        if time_count < 2 || space_cells < 8 {
            return Err(SeriesError::GridTooCoarse(8));
        }
        let required = 5.0 * t_max.powf(1.0 / alpha);
        if radius < required {
            return Err(SeriesError::RadiusTooSmall { radius, required });
        }
        Ok(Grid {
            time_step: t_max / time_count as f64,
            time_count,
            radius,
            space_cells,
            diag_ratio: 0.7,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.time_step * self.time_count as f64
    }

    pub fn delta(&self) -> f64 {
        2.0 * self.radius / self.space_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.delta()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.space_cells).map(|i| self.node(i)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.time_count)
            .map(|m| m as f64 * self.time_step)
            .collect()
    }

    /// Index of the table time `t = m h` (0-based, so `t = (i+1) h`).
    pub fn time_index(&self, t: f64) -> Result<usize, SeriesError> {
        let ratio = t / self.time_step;
        let m = ratio.round();
        if m < 1.0 || m > self.time_count as f64 || (ratio - m).abs() > 1e-9 * m.max(1.0) {
            return Err(SeriesError::NotATableTime(t, self.time_step));
        }
        Ok(m as usize - 1)
    }

    /// Index of the mesh node nearest to `x`.
    pub fn nearest_node(&self, x: f64) -> Result<usize, SeriesError> {
        if x < -self.radius || x > self.radius {
            return Err(SeriesError::OutsideGrid(x));
        }
        let raw = ((x + self.radius) / self.delta() - 0.5).round();
        Ok((raw.max(0.0) as usize).min(self.space_cells - 1))
    }
}

/// Integral of `coeff * profile(u)^power * |u|^-(1+alpha)` over one side
/// `[a, b]` with `0 < a <= b` (`b` may be infinite), where `side = +1`
/// evaluates the profile at `+u` and `side = -1` at `-u`.
fn profile_power_integral_one_side(
    profile: &PerturbProfile,
    power: u32,
    coeff: f64,
    alpha: f64,
    a: f64,
    b: f64,
    side: f64,
) -> f64 {
    debug_assert!(a >= 0.0 && b >= a);
    if b <= a || coeff == 0.0 {
        return 0.0;
    }
    let plaw = |lo: f64, hi: f64| -> f64 {
        // int_lo^hi u^-(1+alpha) du
        if hi.is_infinite() {
            lo.powf(-alpha) / alpha
        } else {
            (lo.powf(-alpha) - hi.powf(-alpha)) / alpha
        }
    };
    match *profile {
        PerturbProfile::Zero => 0.0,
        PerturbProfile::Threshold { c, delta } => {
            let lo = a.max(delta);
            if b <= lo {
                0.0
            } else {
                coeff * c.powi(power as i32) * plaw(lo, b)
            }
        }
        PerturbProfile::ThresholdOneSided {
            c,
            delta,
            toward_positive,
        } => {
            let active = if side > 0.0 {
                toward_positive
            } else {
                !toward_positive
            };
            if !active {
                return 0.0;
            }
            let lo = a.max(delta);
            if b <= lo {
                0.0
            } else {
                coeff * c.powi(power as i32) * plaw(lo, b)
            }
        }
        PerturbProfile::HolderBump { beta, lambda } => {
            let lam = lambda.powi(power as i32) * coeff;
            let mut acc = 0.0;
            // Inside |u| <= 1 the profile is lambda u^beta.
            let lo = a.max(1e-300);
            let hi_in = b.min(1.0);
            if hi_in > lo {
                let p = power as f64 * beta - 1.0 - alpha;
                // p + 1 = power*beta - alpha > 0 by the certificate.
                acc += lam * (hi_in.powf(p + 1.0) - lo.powf(p + 1.0)) / (p + 1.0);
            }
            // Beyond unit distance the profile is capped at lambda.
            let lo_out = a.max(1.0);
            if b > lo_out {
                acc += lam * plaw(lo_out, b);
            }
            acc
        }
    }
}

/// Integral of `coeff * profile(u)^power * |u|^-(1+alpha)` over the signed
/// offset interval `[a, b]` (may straddle zero).
fn profile_power_integral(
    profile: &PerturbProfile,
    power: u32,
    coeff: f64,
    alpha: f64,
    a: f64,
    b: f64,
) -> f64 {
    debug_assert!(b >= a);
    let mut acc = 0.0;
    if b > 0.0 {
        acc += profile_power_integral_one_side(profile, power, coeff, alpha, a.max(0.0), b, 1.0);
    }
    if a < 0.0 {
        acc += profile_power_integral_one_side(
            profile,
            power,
            coeff,
            alpha,
            (-b).max(0.0),
            -a,
            -1.0,
        );
    }
    acc
}

/// Density of the singular measure: `h(w) = int Fbar(w,y) |w-y|^-(d+a) dy`
/// by graded-mesh quadrature over `[w - R, w + R]` (geometric rings toward
/// the diagonal, `subdiv` midpoint cells per ring) with the analytic tail
/// `L R^-a / a` per side beyond the truncation.
pub fn mu_density(
    spec: &ModelSpec,
    sym: &SymmetrizedModel,
    w: f64,
    grid: &Grid,
    subdiv: usize,
) -> f64 {
    let alpha = spec.alpha;
    let radius = grid.radius;
    let floor = match sym.certificate {
        Certificate::HardCutoff { delta } => delta.min(radius),
        // The certificate makes the integrand o(r^{beta - 1 - alpha});
        // truncating at this floor loses a negligible power of it.
        Certificate::HolderDecay { .. } => radius * 1e-12,
    };
    let subdiv = subdiv.max(1);
    let mut total = 0.0;
    for side in [-1.0, 1.0] {
        let mut outer = radius;
        while outer > floor {
            let inner = (outer * grid.diag_ratio).max(floor);
            let width = (outer - inner) / subdiv as f64;
            for k in 0..subdiv {
                let r = inner + (k as f64 + 0.5) * width;
                let y = w + side * r;
                total += sym.eval(&[w], &[y]) * r.powf(-(1.0 + alpha)) * width;
            }
            outer = inner;
        }
        total += sym.bound_l * radius.powf(-alpha) / alpha;
    }
    total
}

/// Which recursion family a table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `q_n`: density rows `p`, kernel `2C(w,y) F(w,y)^i`.
    Signed,
    /// `qbar_n`: density rows `pbar`, kernel `Cbar Fbar(w,y)^i`.
    Dominating,
}

enum SIdx {
    /// `s = u * h`, `u >= 1`.
    Step(usize),
    /// `s = h / 2`.
    Half,
}

/// Convolution backend: fast (FFT over translation-invariant rows) or dense
/// (direct sums, for state-dependent kernels and user tables).
trait ConvBackend: Sync {
    type Row: Send + Sync;
    type Acc: Send;
    fn lift(&self, row: &[f64]) -> Self::Row;
    fn new_acc(&self) -> Self::Acc;
    fn add_p(&self, acc: &mut Self::Acc, s: SIdx, row: &Self::Row, scale: f64);
    fn extract(&self, acc: Self::Acc) -> Vec<f64>;
    /// Applies the i-th power kernel to per-node weights (already including
    /// the reference-density factor and the cell width).
    fn apply_kappa(&self, i: usize, weights: &[f64]) -> Vec<f64>;
    /// `sum_w p(s, x, w) M(w) delta` over the mesh, per node `x`.
    fn p_meshmass(&self, s: SIdx) -> Option<&[f64]>;
    /// Kernel mass `int K_i(w, y) m(dy)` (mesh + analytic tails), per `w`.
    fn kappa_mass(&self, i: usize) -> Option<&[f64]>;
    /// Analytic kernel tails beyond each mesh edge, per `w`: `(toward -R,
    /// toward +R)`.
    fn kappa_edge_tails(&self, i: usize) -> Option<(&[f64], &[f64])>;
}

/// Shared geometry and model data for a build.
struct BuildCtx<'a> {
    spec: &'a ModelSpec,
    grid: &'a Grid,
    eval: &'a DensityEvaluator,
    family: Family,
    n_max: usize,
    /// `M(y) * delta` per node.
    m_weights: Vec<f64>,
}

impl<'a> BuildCtx<'a> {
    fn new(
        spec: &'a ModelSpec,
        grid: &'a Grid,
        eval: &'a DensityEvaluator,
        family: Family,
        n_max: usize,
    ) -> Self {
        let delta = grid.delta();
        let m_weights = grid
            .nodes()
            .iter()
            .map(|&y| spec.density_m.eval(&[y]) * delta)
            .collect();
        BuildCtx {
            spec,
            grid,
            eval,
            family,
            n_max,
            m_weights,
        }
    }

    fn bar(&self) -> bool {
        self.family == Family::Dominating
    }
}

/// FFT backend over translation-invariant density rows and kernel rows.
struct FftBackend {
    conv: Convolver,
    n_space: usize,
    /// Cell-averaged density rows (offset-indexed, length 2N-1) and their
    /// spectra; index `u-1` holds `s = u h`.
    prow_specs: Vec<Spectrum>,
    prow_half_spec: Spectrum,
    kappa_specs: Vec<Spectrum>,
    meshmass: Vec<Vec<f64>>,
    meshmass_half: Vec<f64>,
    kappa_mass: Vec<Vec<f64>>,
    kappa_tail_neg: Vec<Vec<f64>>,
    kappa_tail_pos: Vec<Vec<f64>>,
}

impl FftBackend {
    fn new(ctx: &BuildCtx, profile: &PerturbProfile, kernel_coeff: f64) -> Result<Self, SeriesError> {
        let grid = ctx.grid;
        let n = grid.space_cells;
        let delta = grid.delta();
        let conv = Convolver::new(3 * n - 2);
        let bar_factor = if ctx.bar() { 2.0 } else { 1.0 };

        // Density rows: cell averages of p(s, |offset|) over offset cells.
        let offsets = 2 * n - 1;
        let mut prow_specs = Vec::with_capacity(grid.time_count);
        let mut meshmass = Vec::with_capacity(grid.time_count);
        let build_row = |s: f64| -> Result<(Vec<f64>, Vec<f64>), SeriesError> {
            let prepared = ctx.eval.prepared_profile(s)?;
            let mut row = Vec::with_capacity(offsets);
            for j in 0..offsets {
                let center = (j as isize - (n as isize - 1)) as f64 * delta;
                row.push(
                    bar_factor * prepared.cell_average(center - 0.5 * delta, center + 0.5 * delta),
                );
            }
            // Mesh mass per node x: bar_factor * M-weighted mass of the row
            // within [-R, R]; exact via the antiderivative for constant M,
            // cell sums otherwise.
            let mut mass = Vec::with_capacity(n);
            for ix in 0..n {
                let x = grid.node(ix);
                let mm = if ctx.spec.density_m.is_constant() {
                    let m = ctx.spec.density_m.eval(&[x]);
                    bar_factor
                        * m
                        * (prepared.antiderivative(grid.radius - x)
                            - prepared.antiderivative(-grid.radius - x))
                } else {
                    let mut acc = 0.0;
                    for iy in 0..n {
                        acc += row[ix + n - 1 - iy] * ctx.m_weights[iy];
                    }
                    acc
                };
                mass.push(mm);
            }
            Ok((row, mass))
        };
        for u in 1..=grid.time_count {
            let (row, mass) = build_row(u as f64 * grid.time_step)?;
            prow_specs.push(conv.forward(&row));
            meshmass.push(mass);
        }
        let (row_half, meshmass_half) = build_row(0.5 * grid.time_step)?;
        let prow_half_spec = conv.forward(&row_half);

        // Kernel rows per power i: exact cell integrals of the profile
        // kernel, averaged over the cell.
        let mut kappa_specs = Vec::with_capacity(ctx.n_max);
        let mut kappa_mass = Vec::with_capacity(ctx.n_max);
        let mut kappa_tail_neg = Vec::with_capacity(ctx.n_max);
        let mut kappa_tail_pos = Vec::with_capacity(ctx.n_max);
        for i in 1..=ctx.n_max as u32 {
            let mut row = Vec::with_capacity(offsets);
            for j in 0..offsets {
                let center = (j as isize - (n as isize - 1)) as f64 * delta;
                let cell = profile_power_integral(
                    profile,
                    i,
                    kernel_coeff,
                    ctx.spec.alpha,
                    center - 0.5 * delta,
                    center + 0.5 * delta,
                ) / delta;
                row.push(cell);
            }
            // Tails beyond the mesh edges and full kernel mass per node.
            let mut tneg = Vec::with_capacity(n);
            let mut tpos = Vec::with_capacity(n);
            let mut mass = Vec::with_capacity(n);
            let m_lo_node = ctx.spec.density_m.eval(&[-grid.radius]);
            let m_hi_node = ctx.spec.density_m.eval(&[grid.radius]);
            for iw in 0..n {
                let w = grid.node(iw);
                let dist_neg = w + grid.radius;
                let dist_pos = grid.radius - w;
                let tail_n = profile_power_integral_one_side(
                    profile,
                    i,
                    kernel_coeff,
                    ctx.spec.alpha,
                    dist_neg,
                    f64::INFINITY,
                    -1.0,
                ) * m_lo_node;
                let tail_p = profile_power_integral_one_side(
                    profile,
                    i,
                    kernel_coeff,
                    ctx.spec.alpha,
                    dist_pos,
                    f64::INFINITY,
                    1.0,
                ) * m_hi_node;
                let mut mesh_part = 0.0;
                for iy in 0..n {
                    mesh_part += row[iw + n - 1 - iy] * ctx.m_weights[iy];
                }
                tneg.push(tail_n);
                tpos.push(tail_p);
                mass.push(mesh_part + tail_n + tail_p);
            }
            kappa_specs.push(conv.forward(&row));
            kappa_mass.push(mass);
            kappa_tail_neg.push(tneg);
            kappa_tail_pos.push(tpos);
        }

        Ok(FftBackend {
            conv,
            n_space: n,
            prow_specs,
            prow_half_spec,
            kappa_specs,
            meshmass,
            meshmass_half,
            kappa_mass,
            kappa_tail_neg,
            kappa_tail_pos,
        })
    }
}

impl ConvBackend for FftBackend {
    type Row = Spectrum;
    type Acc = Spectrum;

    fn lift(&self, row: &[f64]) -> Spectrum {
        self.conv.forward(row)
    }

    fn new_acc(&self) -> Spectrum {
        Spectrum::zeros(self.conv.size())
    }

    fn add_p(&self, acc: &mut Spectrum, s: SIdx, row: &Spectrum, scale: f64) {
        let spec = match s {
            SIdx::Step(u) => &self.prow_specs[u - 1],
            SIdx::Half => &self.prow_half_spec,
        };
        acc.accumulate_product(spec, row, scale);
    }

    fn extract(&self, acc: Spectrum) -> Vec<f64> {
        let full = self.conv.inverse(&acc);
        full[self.n_space - 1..2 * self.n_space - 1].to_vec()
    }

    fn apply_kappa(&self, i: usize, weights: &[f64]) -> Vec<f64> {
        let mut acc = Spectrum::zeros(self.conv.size());
        acc.accumulate_product(&self.kappa_specs[i - 1], &self.conv.forward(weights), 1.0);
        let full = self.conv.inverse(&acc);
        full[self.n_space - 1..2 * self.n_space - 1].to_vec()
    }

    fn p_meshmass(&self, s: SIdx) -> Option<&[f64]> {
        Some(match s {
            SIdx::Step(u) => &self.meshmass[u - 1],
            SIdx::Half => &self.meshmass_half,
        })
    }

    fn kappa_mass(&self, i: usize) -> Option<&[f64]> {
        Some(&self.kappa_mass[i - 1])
    }

    fn kappa_edge_tails(&self, i: usize) -> Option<(&[f64], &[f64])> {
        Some((&self.kappa_tail_neg[i - 1], &self.kappa_tail_pos[i - 1]))
    }
}

/// Dense backend: direct sums with pointwise kernel evaluation. Intended
/// for reduced grids; no analytic completions.
struct DenseBackend {
    /// p(s, x, w) matrices; index `u-1` for `s = u h`, last is `s = h/2`.
    pmat: Vec<Vec<f64>>,
    n_space: usize,
    /// K_i(w, y) matrices per power.
    kmat: Vec<Vec<f64>>,
}

impl DenseBackend {
    fn new(ctx: &BuildCtx, pert: Option<&PerturbationF>, sym: Option<&SymmetrizedModel>) -> Result<Self, SeriesError> {
        let grid = ctx.grid;
        let n = grid.space_cells;
        let nodes = grid.nodes();
        let delta = grid.delta();
        let mut pmat = Vec::with_capacity(grid.time_count + 1);
        let mut s_values: Vec<f64> = (1..=grid.time_count)
            .map(|u| u as f64 * grid.time_step)
            .collect();
        s_values.push(0.5 * grid.time_step);
        for s in s_values {
            let mut mat = vec![0.0; n * n];
            if ctx.eval.is_translation_invariant() {
                // Cell-averaged rows keep the short-time spike mass-correct.
                let prepared = ctx.eval.prepared_profile(s)?;
                let factor = if ctx.bar() { 2.0 } else { 1.0 };
                for (ix, &x) in nodes.iter().enumerate() {
                    for (iw, &w) in nodes.iter().enumerate() {
                        let center = w - x;
                        mat[ix * n + iw] = factor
                            * prepared.cell_average(center - 0.5 * delta, center + 0.5 * delta);
                    }
                }
            } else {
                for (ix, &x) in nodes.iter().enumerate() {
                    for (iw, &w) in nodes.iter().enumerate() {
                        mat[ix * n + iw] = if ctx.bar() {
                            ctx.eval.density_bar(s, &[x], &[w])?
                        } else {
                            ctx.eval.density(s, &[x], &[w])?
                        };
                    }
                }
            }
            pmat.push(mat);
        }
        let alpha = ctx.spec.alpha;
        // Singular factor per power: the exact cell average of
        // F^i |u|^-(1+alpha) when the perturbation profile is known,
        // point values (zero on the diagonal) otherwise.
        let family_profile = match ctx.family {
            Family::Signed => pert.and_then(|p| p.profile),
            Family::Dominating => sym.and_then(|s| s.profile),
        };
        let mut kmat = Vec::with_capacity(ctx.n_max);
        for i in 1..=ctx.n_max as u32 {
            let mut mat = vec![0.0; n * n];
            for (iw, &w) in nodes.iter().enumerate() {
                for (iy, &y) in nodes.iter().enumerate() {
                    let coeff = match ctx.family {
                        Family::Signed => ctx.spec.kernel.eval(&[w], &[y]),
                        Family::Dominating => ctx.spec.c_bar,
                    };
                    let singular = if let Some(profile) = &family_profile {
                        let u = y - w;
                        profile_power_integral(
                            profile,
                            i,
                            1.0,
                            alpha,
                            u - 0.5 * delta,
                            u + 0.5 * delta,
                        ) / delta
                    } else if iw == iy {
                        // F vanishes on the diagonal faster than the pole.
                        0.0
                    } else {
                        let fval = match ctx.family {
                            Family::Signed => pert
                                .expect("signed family carries the perturbation")
                                .eval(&[w], &[y]),
                            Family::Dominating => sym
                                .expect("dominating family carries the symmetrization")
                                .eval(&[w], &[y]),
                        };
                        fval.powi(i as i32) * (w - y).abs().powf(-(1.0 + alpha))
                    };
                    mat[iw * n + iy] = coeff * singular;
                }
            }
            kmat.push(mat);
        }
        Ok(DenseBackend {
            pmat,
            n_space: n,
            kmat,
        })
    }

    fn pmat_for(&self, s: &SIdx) -> &[f64] {
        match s {
            SIdx::Step(u) => &self.pmat[*u - 1],
            SIdx::Half => self.pmat.last().unwrap(),
        }
    }
}

impl ConvBackend for DenseBackend {
    type Row = Vec<f64>;
    type Acc = Vec<f64>;

    fn lift(&self, row: &[f64]) -> Vec<f64> {
        row.to_vec()
    }

    fn new_acc(&self) -> Vec<f64> {
        vec![0.0; self.n_space]
    }

    fn add_p(&self, acc: &mut Vec<f64>, s: SIdx, row: &Vec<f64>, scale: f64) {
        let mat = self.pmat_for(&s);
        let n = self.n_space;
        for ix in 0..n {
            let mut dot = 0.0;
            for iw in 0..n {
                dot += mat[ix * n + iw] * row[iw];
            }
            acc[ix] += scale * dot;
        }
    }

    fn extract(&self, acc: Vec<f64>) -> Vec<f64> {
        acc
    }

    fn apply_kappa(&self, i: usize, weights: &[f64]) -> Vec<f64> {
        let n = self.n_space;
        let mat = &self.kmat[i - 1];
        let mut out = vec![0.0; n];
        for iw in 0..n {
            let mut dot = 0.0;
            for iy in 0..n {
                dot += mat[iw * n + iy] * weights[iy];
            }
            out[iw] = dot;
        }
        out
    }

    fn p_meshmass(&self, _s: SIdx) -> Option<&[f64]> {
        None
    }

    fn kappa_mass(&self, _i: usize) -> Option<&[f64]> {
        None
    }

    fn kappa_edge_tails(&self, _i: usize) -> Option<(&[f64], &[f64])> {
        None
    }
}

/// Grid-sampled perturbation-term tables for one fixed terminal point:
/// `layers[n][m][iy]` holds `q_n((m+1) h, node_iy, z)` (or `qbar_n`). The
/// `n = 0` layer stores cell averages of the base density, which is what
/// the recursion integrates against.
#[derive(Debug, Clone)]
pub struct SliceTables {
    pub family: Family,
    pub z_index: usize,
    pub n_max: usize,
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl SliceTables {
    pub fn value(&self, n: usize, time_index: usize, node: usize) -> f64 {
        self.layers[n][time_index][node]
    }
}

/// Mass-integrated tables `layers[n][m][ix] ~ int q_n((m+1) h, x, z) m(dz)`
/// (equal to the n-th moment of the additive functional started at `x`).
#[derive(Debug, Clone)]
pub struct IntegratedTables {
    pub family: Family,
    pub n_max: usize,
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl IntegratedTables {
    pub fn value(&self, n: usize, time_index: usize, node: usize) -> f64 {
        self.layers[n][time_index][node]
    }
}

fn binom_f64(n: usize, i: usize) -> f64 {
    binomial(n as u32, i as u32).expect("series order stays far below 60") as f64
}

fn can_use_fft(ctx: &BuildCtx, pert: &PerturbationF, sym: &SymmetrizedModel) -> bool {
    if !ctx.eval.is_translation_invariant() {
        return false;
    }
    match ctx.family {
        Family::Signed => pert.profile.is_some() && ctx.spec.kernel.is_constant(),
        Family::Dominating => sym.profile.is_some(),
    }
}

fn family_profile(ctx: &BuildCtx, pert: &PerturbationF, sym: &SymmetrizedModel) -> (PerturbProfile, f64) {
    match ctx.family {
        Family::Signed => (
            pert.profile.expect("checked by can_use_fft"),
            ctx.spec.kernel.eval(&[0.0], &[0.0]),
        ),
        Family::Dominating => (sym.profile.expect("checked by can_use_fft"), ctx.spec.c_bar),
    }
}

/// Builds the recursion layers above a supplied base layer.
///
/// `base_rows[m][iy]` is layer 0 at table times. When `integrated` is set,
/// the trapezoid time rule with the known `tau = 0` values is used and the
/// analytic mass completions are applied; otherwise the endpoint-safe
/// product rule for the slice tables.
fn build_layers<B: ConvBackend>(
    ctx: &BuildCtx,
    backend: &B,
    base_rows: Vec<Vec<f64>>,
    integrated: bool,
) -> Vec<Vec<Vec<f64>>> {
    let grid = ctx.grid;
    let k_times = grid.time_count;
    let n_space = grid.space_cells;
    let h = grid.time_step;
    let mut layers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(ctx.n_max + 1);
    layers.push(base_rows);

    for n in 1..=ctx.n_max {
        // Inner rows per i: G_i[l][w] applies the kernel to layer n-i at
        // table time (l+1) h; index l = K holds the analytic tau = 0 row
        // (integrated family only).
        let mut inner: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
        for i in 1..=n {
            let source = &layers[n - i];
            let mut rows: Vec<Vec<f64>> = (0..k_times)
                .into_par_iter()
                .map(|l| {
                    let weights: Vec<f64> = (0..n_space)
                        .map(|iy| source[l][iy] * ctx.m_weights[iy])
                        .collect();
                    let mut row = backend.apply_kappa(i, &weights);
                    if integrated {
                        if let Some((tail_neg, tail_pos)) = backend.kappa_edge_tails(i) {
                            for iw in 0..n_space {
                                row[iw] += tail_neg[iw] * source[l][0]
                                    + tail_pos[iw] * source[l][n_space - 1];
                            }
                        }
                    }
                    row
                })
                .collect();
            if integrated {
                // tau = 0: lower layers vanish except the unit mass at n = i.
                let zero_row = if n == i {
                    backend
                        .kappa_mass(i)
                        .map(|m| m.to_vec())
                        .unwrap_or_else(|| {
                            let weights = ctx.m_weights.clone();
                            backend.apply_kappa(i, &weights)
                        })
                } else {
                    vec![0.0; n_space]
                };
                rows.push(zero_row);
            }
            inner.push(rows);
        }

        // The outer integral runs against m(dw): weight by M(w) delta
        // before lifting. The direct s = 0 term and the edge completions
        // consume the raw rows.
        let lifted: Vec<Vec<B::Row>> = inner
            .par_iter()
            .map(|rows| {
                rows.iter()
                    .map(|r| {
                        let weighted: Vec<f64> = r
                            .iter()
                            .zip(&ctx.m_weights)
                            .map(|(v, mw)| v * mw)
                            .collect();
                        backend.lift(&weighted)
                    })
                    .collect()
            })
            .collect();

        let layer: Vec<Vec<f64>> = (0..k_times)
            .into_par_iter()
            .map(|mi| {
                let m = mi + 1;
                let mut acc = backend.new_acc();
                let mut direct = vec![0.0; n_space];
                for (iv, rows) in inner.iter().enumerate() {
                    let i = iv + 1;
                    let coeff = binom_f64(n, i);
                    if integrated {
                        // Trapezoid over tau' nodes l = 0..=m; the l = m node
                        // has s = 0 where the density row is the identity.
                        for l in 0..m {
                            let w_l = if l == 0 { 0.5 } else { 1.0 };
                            let row_idx = if l == 0 { k_times } else { l - 1 };
                            let scale = coeff * h * w_l;
                            backend.add_p(&mut acc, SIdx::Step(m - l), &lifted[iv][row_idx], scale);
                            if let Some(meshmass) = backend.p_meshmass(SIdx::Step(m - l)) {
                                let g = &rows[row_idx];
                                let edge = 0.5 * (g[0] + g[n_space - 1]);
                                for ix in 0..n_space {
                                    direct[ix] += scale * (1.0 - meshmass[ix]) * edge;
                                }
                            }
                        }
                        for (ix, d) in direct.iter_mut().enumerate() {
                            *d += coeff * 0.5 * h * rows[mi][ix];
                        }
                    } else {
                        // Endpoint-safe product rule: q-side at cell right
                        // endpoints, density at the complementary times; the
                        // s in [0, h] cell pairs the h/2 density row with the
                        // top table value.
                        for l in 1..m {
                            backend.add_p(
                                &mut acc,
                                SIdx::Step(m - l),
                                &lifted[iv][l - 1],
                                coeff * h,
                            );
                        }
                        backend.add_p(&mut acc, SIdx::Half, &lifted[iv][mi], coeff * h);
                    }
                }
                let mut out = backend.extract(acc);
                for ix in 0..n_space {
                    out[ix] += direct[ix];
                }
                out
            })
            .collect();
        layers.push(layer);
    }
    layers
}

/// Builds `q_n(t, y, z)` (or `qbar_n`) tables over the mesh for the fixed
/// terminal node `z = node(z_index)`.
pub fn build_slice(
    spec: &ModelSpec,
    pert: &PerturbationF,
    grid: &Grid,
    eval: &DensityEvaluator,
    z_index: usize,
    n_max: usize,
    family: Family,
) -> Result<SliceTables, SeriesError> {
    let sym = symmetrize(pert);
    let ctx = BuildCtx::new(spec, grid, eval, family, n_max);
    let n_space = grid.space_cells;
    let bar = ctx.bar();
    let z = grid.node(z_index);

    // Base layer: cell averages of the density around each node, terminal
    // argument fixed at z.
    let mut base: Vec<Vec<f64>> = Vec::with_capacity(grid.time_count);
    for m in 1..=grid.time_count {
        let s = m as f64 * grid.time_step;
        let row: Vec<f64> = if eval.is_translation_invariant() {
            let prepared = eval.prepared_profile(s)?;
            let delta = grid.delta();
            (0..n_space)
                .map(|iy| {
                    let center = grid.node(iy) - z;
                    let factor = if bar { 2.0 } else { 1.0 };
                    factor * prepared.cell_average(center - 0.5 * delta, center + 0.5 * delta)
                })
                .collect()
        } else {
            (0..n_space)
                .map(|iy| {
                    let y = grid.node(iy);
                    if bar {
                        eval.density_bar(s, &[y], &[z])
                    } else {
                        eval.density(s, &[y], &[z])
                    }
                })
                .collect::<Result<Vec<f64>, DensityError>>()?
        };
        base.push(row);
    }

    let layers = if can_use_fft(&ctx, pert, &sym) {
        let (profile, coeff) = family_profile(&ctx, pert, &sym);
        let backend = FftBackend::new(&ctx, &profile, coeff)?;
        build_layers(&ctx, &backend, base, false)
    } else {
        let backend = DenseBackend::new(&ctx, Some(pert), Some(&sym))?;
        build_layers(&ctx, &backend, base, false)
    };

    Ok(SliceTables {
        family,
        z_index,
        n_max,
        layers,
    })
}

/// Builds the mass-integrated tables: layer 0 is the exact unit mass of the
/// conservative density, higher layers integrate the recursion over the
/// terminal argument.
pub fn build_integrated(
    spec: &ModelSpec,
    pert: &PerturbationF,
    grid: &Grid,
    eval: &DensityEvaluator,
    n_max: usize,
    family: Family,
) -> Result<IntegratedTables, SeriesError> {
    let sym = symmetrize(pert);
    let ctx = BuildCtx::new(spec, grid, eval, family, n_max);
    let unit = if ctx.bar() { 2.0 } else { 1.0 };
    let base: Vec<Vec<f64>> = (0..grid.time_count)
        .map(|_| vec![unit; grid.space_cells])
        .collect();

    let layers = if can_use_fft(&ctx, pert, &sym) {
        let (profile, coeff) = family_profile(&ctx, pert, &sym);
        let backend = FftBackend::new(&ctx, &profile, coeff)?;
        build_layers(&ctx, &backend, base, true)
    } else {
        let backend = DenseBackend::new(&ctx, Some(pert), Some(&sym))?;
        build_layers(&ctx, &backend, base, true)
    };

    Ok(IntegratedTables {
        family,
        n_max,
        layers,
    })
}

/// The Kato-functional curve `C_t = sup_x int_0^t int pbar(s,x,w) mu(dw) ds`
/// at the table times, evaluated with the same time nodes as the recursion
/// so the growth-bound induction transfers to the discrete tables.
#[derive(Debug, Clone)]
pub struct KatoCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// mu-density at the mesh nodes.
    pub mu_nodes: Vec<f64>,
}

impl KatoCurve {
    pub fn value_at(&self, grid: &Grid, t: f64) -> Result<f64, SeriesError> {
        Ok(self.values[grid.time_index(t)?])
    }
}

/// Computes the Kato curve; `subdiv` is the per-ring refinement of the
/// mu-density quadrature.
pub fn kato_curve(
    spec: &ModelSpec,
    sym: &SymmetrizedModel,
    grid: &Grid,
    eval: &DensityEvaluator,
    subdiv: usize,
) -> Result<KatoCurve, SeriesError> {
    let n = grid.space_cells;
    let nodes = grid.nodes();
    let delta = grid.delta();
    let mu_nodes: Vec<f64> = nodes
        .par_iter()
        .map(|&w| mu_density(spec, sym, w, grid, subdiv))
        .collect();

    // mass_mu(s, x) = sum_w pbar(s, x, w) mu(w) delta + edge completion.
    let h = grid.time_step;
    let s_nodes: Vec<f64> = std::iter::once(0.5 * h)
        .chain((1..grid.time_count).map(|u| u as f64 * h))
        .collect();
    let invariant = eval.is_translation_invariant();
    let mu_edge = 0.5 * (mu_nodes[0] + mu_nodes[n - 1]);
    let mass_rows: Vec<Vec<f64>> = s_nodes
        .par_iter()
        .map(|&s| {
            if invariant {
                let prepared = eval.prepared_profile(s)?;
                let mut row = Vec::with_capacity(n);
                for ix in 0..n {
                    let x = nodes[ix];
                    let mut acc = 0.0;
                    for iy in 0..n {
                        let center = nodes[iy] - x;
                        let cell =
                            prepared.cell_average(center - 0.5 * delta, center + 0.5 * delta);
                        acc += 2.0 * cell * mu_nodes[iy] * delta;
                    }
                    // Lebesgue mass lost beyond the mesh, completed with the
                    // edge mu value.
                    let inside = 2.0
                        * (prepared.antiderivative(grid.radius - x)
                            - prepared.antiderivative(-grid.radius - x));
                    acc += (2.0 - inside).max(0.0) * mu_edge;
                    row.push(acc);
                }
                Ok(row)
            } else {
                let mut row = Vec::with_capacity(n);
                for ix in 0..n {
                    let x = nodes[ix];
                    let mut acc = 0.0;
                    for iy in 0..n {
                        acc += eval.density_bar(s, &[x], &[nodes[iy]])? * mu_nodes[iy] * delta;
                    }
                    row.push(acc);
                }
                Ok(row)
            }
        })
        .collect::<Result<Vec<Vec<f64>>, SeriesError>>()?;

    // C_{m h} uses the recursion's s-nodes: {h/2, h, ..., (m-1) h}.
    let mut values = Vec::with_capacity(grid.time_count);
    let mut running: Vec<f64> = mass_rows[0].clone(); // the h/2 node
    for m in 1..=grid.time_count {
        if m >= 2 {
            for (ix, row) in running.iter_mut().enumerate() {
                *row += mass_rows[m - 1][ix];
            }
        }
        let sup = running.iter().fold(0.0f64, |a, &b| a.max(b)) * h;
        values.push(sup);
    }
    Ok(KatoCurve {
        times: grid.times(),
        values,
        mu_nodes,
    })
}

/// Truncated signed series value with its geometric tail bound.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedDensity {
    pub value: f64,
    pub tail: f64,
    /// Whether `t` lies within the certified range `t <= t3`.
    pub certified: bool,
}

/// `q^{(N)}(t, x, z) = sum_{n<=N} (-1)^n q_n / n!` from a slice at `z`,
/// with the `n = 0` term evaluated pointwise, plus the geometric tail
/// `tail_coeff K^{N+1} / (1-K) envelope(t, |x-z|)` (valid for `t <= t3`;
/// outside that range the value is still returned, flagged uncertified).
#[allow(clippy::too_many_arguments)]
pub fn truncated_density(
    spec: &ModelSpec,
    grid: &Grid,
    eval: &DensityEvaluator,
    slice: &SliceTables,
    n_trunc: usize,
    tail_coeff: f64,
    k_ratio: f64,
    t3: Option<f64>,
    t: f64,
    x_index: usize,
) -> Result<TruncatedDensity, SeriesError> {
    if n_trunc > slice.n_max {
        return Err(SeriesError::OrderTooHigh {
            got: n_trunc,
            built: slice.n_max,
        });
    }
    debug_assert_eq!(slice.family, Family::Signed);
    let m = grid.time_index(t)?;
    let x = grid.node(x_index);
    let z = grid.node(slice.z_index);
    let mut value = eval.density(t, &[x], &[z])?;
    let mut factorial = 1.0;
    for n in 1..=n_trunc {
        factorial *= n as f64;
        let term = slice.layers[n][m][x_index] / factorial;
        value += if n % 2 == 0 { term } else { -term };
    }
    let envelope = Envelope::from_model(spec).eval(t, (x - z).abs())?;
    let tail = tail_coeff * k_ratio.powi(n_trunc as i32 + 1) / (1.0 - k_ratio) * envelope;
    let certified = t3.is_some_and(|limit| t <= limit + 1e-12);
    Ok(TruncatedDensity {
        value,
        tail,
        certified,
    })
}

/// Truncated-series row `q^{(N)}(t, x, y)` over all mesh nodes `y`, read
/// from a slice built for the transposed model at `x` (integration
/// convention: the base layer stays cell-averaged).
pub fn truncated_row(slice: &SliceTables, n_trunc: usize, time_index: usize) -> Vec<f64> {
    let n_space = slice.layers[0][time_index].len();
    let mut row = slice.layers[0][time_index].clone();
    let mut factorial = 1.0;
    for n in 1..=n_trunc {
        factorial *= n as f64;
        for iy in 0..n_space {
            let term = slice.layers[n][time_index][iy] / factorial;
            row[iy] += if n % 2 == 0 { term } else { -term };
        }
    }
    row
}

/// Worst change of the dominating tables under grid halving, normalized by
/// each order's row scale (the largest table value at that time): the
/// achieved self-convergence residual. Callers compare it against their
/// declared tolerance; a coarse grid is reported, never silently accepted.
pub fn self_convergence_residual(
    spec: &ModelSpec,
    pert: &PerturbationF,
    grid: &Grid,
    eval: &DensityEvaluator,
    z_position: f64,
    n_max: usize,
) -> Result<f64, SeriesError> {
    let coarse_grid = Grid {
        time_step: grid.time_step * 2.0,
        time_count: grid.time_count / 2,
        radius: grid.radius,
        space_cells: grid.space_cells / 2,
        diag_ratio: grid.diag_ratio,
    };
    if coarse_grid.time_count < 2 || coarse_grid.space_cells < 16 {
        return Err(SeriesError::GridTooCoarse(16));
    }
    let zf = grid.nearest_node(z_position)?;
    let zc = coarse_grid.nearest_node(z_position)?;
    let fine = build_slice(spec, pert, grid, eval, zf, n_max, Family::Dominating)?;
    let coarse = build_slice(spec, pert, &coarse_grid, eval, zc, n_max, Family::Dominating)?;
    let mut worst = 0.0f64;
    for n in 1..=n_max {
        for mc in 0..coarse_grid.time_count {
            let t = (mc + 1) as f64 * coarse_grid.time_step;
            let mf = grid.time_index(t)?;
            let row_scale = fine.layers[n][mf]
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if row_scale <= 1e-300 {
                continue;
            }
            // Compare on a spread of probe positions away from the edges.
            for &x in &[-0.5 * grid.radius, -1.0, 0.0, 1.0, 0.5 * grid.radius] {
                let a = coarse.value(n, mc, coarse_grid.nearest_node(x)?);
                let b = fine.value(n, mf, grid.nearest_node(x)?);
                worst = worst.max((a - b).abs() / row_scale);
            }
        }
    }
    Ok(worst)
}

/// Chapman-Kolmogorov defect of the truncated series:
/// `| int q^{(N)}(t,x,y) q^{(N)}(s,y,z) m(dy) - q^{(N)}(t+s,x,z) |`.
///
/// `dual_at_x` must be a signed slice built for the transposed model and
/// perturbation at `x`; `primal_at_z` a signed slice at `z`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_residual(
    spec: &ModelSpec,
    grid: &Grid,
    eval: &DensityEvaluator,
    dual_at_x: &SliceTables,
    primal_at_z: &SliceTables,
    n_trunc: usize,
    t: f64,
    s: f64,
) -> Result<f64, SeriesError> {
    let mt = grid.time_index(t)?;
    let ms = grid.time_index(s)?;
    let row_t = truncated_row(dual_at_x, n_trunc, mt);
    let row_s = truncated_row(primal_at_z, n_trunc, ms);
    let delta = grid.delta();
    let mut integral = 0.0;
    for iy in 0..grid.space_cells {
        let m_weight = spec.density_m.eval(&[grid.node(iy)]) * delta;
        integral += row_t[iy] * row_s[iy] * m_weight;
    }
    let reference = truncated_density(
        spec,
        grid,
        eval,
        primal_at_z,
        n_trunc,
        0.0,
        0.5,
        None,
        t + s,
        dual_at_x.z_index,
    )?
    .value;
    Ok((integral - reference).abs())
}
