//! Baseline transition densities, their symmetrization and the two-sided
//! comparison envelope.
//!
//! Three density modes are supported: the closed-form Cauchy density
//! (`d = 1`, `alpha = 1`), numerical inversion of the stable characteristic
//! function `exp(-t |w|^alpha)` in one dimension, and interpolated user
//! tables. The first two are translation invariant and expose a radial
//! profile together with its antiderivative, which the quadrature modules
//! use for cell-exact integration.

use crate::model::{Baseline, ModelSpec};
use std::f64::consts::FRAC_1_PI;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("baseline {0:?} does not support d = {1}, alpha = {2}")]
    UnsupportedMode(Baseline, usize, f64),
    #[error("query ({t}, {x}, {y}) outside the table range")]
    OutOfTable { t: f64, x: f64, y: f64 },
    #[error("table parse error at line {line}: {message}")]
    TableParse { line: usize, message: String },
    #[error("table grid is not rectangular: expected {expected} rows, found {found}")]
    TableNotRectangular { expected: usize, found: usize },
    #[error("non-finite density value at ({t}, {x}, {y})")]
    NonFinite { t: f64, x: f64, y: f64 },
}

/// The comparison profile `t^{-d/a} (1 /\ t^{1/a}/r)^{d+a}`.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub dim: usize,
    pub alpha: f64,
}

impl Envelope {
    pub fn new(dim: usize, alpha: f64) -> Self {
        Envelope { dim, alpha }
    }

    pub fn from_model(spec: &ModelSpec) -> Self {
        Envelope {
            dim: spec.dim,
            alpha: spec.alpha,
        }
    }

    /// Evaluates the envelope at separation `r >= 0`; errors for `t <= 0`.
    pub fn eval(&self, t: f64, r: f64) -> Result<f64, DensityError> {
        if !(t > 0.0) {
            return Err(DensityError::NonPositiveTime(t));
        }
        let d = self.dim as f64;
        let body = t.powf(-d / self.alpha);
        if r <= 0.0 {
            return Ok(body);
        }
        let ratio = (t.powf(1.0 / self.alpha) / r).min(1.0);
        Ok(body * ratio.powf(d + self.alpha))
    }

    /// Tail integral `int_{|y - x| > radius} envelope(t, |y - x|) dy` in
    /// one dimension, for `radius >= t^{1/alpha}`.
    pub fn tail_mass_1d(&self, t: f64, radius: f64) -> f64 {
        debug_assert!(self.dim == 1);
        debug_assert!(radius >= t.powf(1.0 / self.alpha));
        2.0 * t * radius.powf(-self.alpha) / self.alpha
    }
}

/// Fourier-inversion parameters: cutoff `Omega = cutoff_factor * t^{-1/a}`
/// and the trapezoid node count.
#[derive(Debug, Clone, Copy)]
pub struct FourierParams {
    pub cutoff_factor: f64,
    pub nodes: usize,
}

impl Default for FourierParams {
    fn default() -> Self {
        FourierParams {
            cutoff_factor: 40.0,
            nodes: 1 << 14,
        }
    }
}

/// Interpolated user-supplied density table over a rectangular
/// `(t, x, y)` grid.
#[derive(Debug, Clone)]
pub struct UserTable {
    t_axis: Vec<f64>,
    x_axis: Vec<f64>,
    y_axis: Vec<f64>,
    /// Row-major over (t, x, y).
    values: Vec<f64>,
}

impl UserTable {
    /// Parses CSV text with header `t,x,y,p`; the rows must cover a full
    /// rectangular grid (in any order).
    pub fn parse_csv(text: &str) -> Result<Self, DensityError> {
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if idx == 0 || rows.is_empty() && line.chars().next().is_some_and(|c| c.is_alphabetic())
            {
                let header: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
                if header == ["t", "x", "y", "p"] {
                    continue;
                }
                if line.chars().next().is_some_and(|c| c.is_alphabetic()) {
                    return Err(DensityError::TableParse {
                        line: idx + 1,
                        message: format!("expected header t,x,y,p, got '{line}'"),
                    });
                }
            }
            let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
            if fields.len() != 4 {
                return Err(DensityError::TableParse {
                    line: idx + 1,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let mut parsed = [0.0; 4];
            for (k, field) in fields.iter().enumerate() {
                parsed[k] = field.parse::<f64>().map_err(|e| DensityError::TableParse {
                    line: idx + 1,
                    message: format!("bad number '{field}': {e}"),
                })?;
            }
            rows.push((parsed[0], parsed[1], parsed[2], parsed[3]));
        }

        let mut t_axis: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut x_axis: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let mut y_axis: Vec<f64> = rows.iter().map(|r| r.2).collect();
        for axis in [&mut t_axis, &mut x_axis, &mut y_axis] {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        let expected = t_axis.len() * x_axis.len() * y_axis.len();
        if rows.len() != expected {
            return Err(DensityError::TableNotRectangular {
                expected,
                found: rows.len(),
            });
        }
        let nx = x_axis.len();
        let ny = y_axis.len();
        let mut values = vec![f64::NAN; expected];
        let locate = |axis: &[f64], v: f64| axis.partition_point(|a| *a < v);
        for (t, x, y, p) in rows {
            let it = locate(&t_axis, t);
            let ix = locate(&x_axis, x);
            let iy = locate(&y_axis, y);
            values[(it * nx + ix) * ny + iy] = p;
        }
        Ok(UserTable {
            t_axis,
            x_axis,
            y_axis,
            values,
        })
    }

    fn bracket(axis: &[f64], v: f64) -> Option<(usize, f64)> {
        if axis.is_empty() || v < axis[0] || v > *axis.last().unwrap() {
            return None;
        }
        if axis.len() == 1 {
            return Some((0, 0.0));
        }
        let hi = axis.partition_point(|a| *a <= v).min(axis.len() - 1).max(1);
        let lo = hi - 1;
        let span = axis[hi] - axis[lo];
        let w = if span > 0.0 { (v - axis[lo]) / span } else { 0.0 };
        Some((lo, w))
    }

    fn value(&self, it: usize, ix: usize, iy: usize) -> f64 {
        self.values[(it * self.x_axis.len() + ix) * self.y_axis.len() + iy]
    }

    /// Multilinear interpolation in (t, x, y); `None` outside the grid.
    pub fn interpolate(&self, t: f64, x: f64, y: f64) -> Option<f64> {
        let (it, wt) = Self::bracket(&self.t_axis, t)?;
        let (ix, wx) = Self::bracket(&self.x_axis, x)?;
        let (iy, wy) = Self::bracket(&self.y_axis, y)?;
        let it1 = (it + 1).min(self.t_axis.len() - 1);
        let ix1 = (ix + 1).min(self.x_axis.len() - 1);
        let iy1 = (iy + 1).min(self.y_axis.len() - 1);
        let mut acc = 0.0;
        for (jt, ct) in [(it, 1.0 - wt), (it1, wt)] {
            for (jx, cx) in [(ix, 1.0 - wx), (ix1, wx)] {
                for (jy, cy) in [(iy, 1.0 - wy), (iy1, wy)] {
                    acc += ct * cx * cy * self.value(jt, jx, jy);
                }
            }
        }
        Some(acc)
    }
}

/// Evaluator for the baseline density `p(t,x,y)` (with respect to `m`).
#[derive(Debug)]
pub struct DensityEvaluator {
    pub mode: Baseline,
    pub dim: usize,
    pub alpha: f64,
    pub fourier: FourierParams,
    table: Option<UserTable>,
    /// Number of negative interpolated values clamped to zero.
    clamped: AtomicU64,
}

impl DensityEvaluator {
    pub fn new(
        mode: Baseline,
        dim: usize,
        alpha: f64,
        fourier: FourierParams,
    ) -> Result<Self, DensityError> {
        match &mode {
            Baseline::CauchyClosedForm if dim != 1 || alpha != 1.0 => {
                return Err(DensityError::UnsupportedMode(mode, dim, alpha));
            }
            Baseline::FourierInversion1D if dim != 1 => {
                return Err(DensityError::UnsupportedMode(mode, dim, alpha));
            }
            _ => {}
        }
        let table = match &mode {
            Baseline::UserTable(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| DensityError::TableParse {
                    line: 0,
                    message: format!("cannot read '{path}': {e}"),
                })?;
                Some(UserTable::parse_csv(&text)?)
            }
            _ => None,
        };
        Ok(DensityEvaluator {
            mode,
            dim,
            alpha,
            fourier,
            table,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn from_model(spec: &ModelSpec) -> Result<Self, DensityError> {
        Self::new(
            spec.baseline.clone(),
            spec.dim,
            spec.alpha,
            FourierParams::default(),
        )
    }

    pub fn from_model_with(spec: &ModelSpec, fourier: FourierParams) -> Result<Self, DensityError> {
        Self::new(spec.baseline.clone(), spec.dim, spec.alpha, fourier)
    }

    /// Count of negative interpolated table values clamped to zero so far.
    pub fn clamped_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// True when `p(t,x,y)` depends on `(x,y)` only through `|x - y|`.
    pub fn is_translation_invariant(&self) -> bool {
        !matches!(self.mode, Baseline::UserTable(_))
    }

    /// `p(t,x,y)`.
    pub fn density(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, DensityError> {
        if !(t > 0.0) {
            return Err(DensityError::NonPositiveTime(t));
        }
        match &self.mode {
            Baseline::CauchyClosedForm | Baseline::FourierInversion1D => {
                self.profile(t, crate::model::dist(x, y))
            }
            Baseline::UserTable(_) => {
                let table = self.table.as_ref().unwrap();
                let v = table
                    .interpolate(t, x[0], y[0])
                    .ok_or(DensityError::OutOfTable {
                        t,
                        x: x[0],
                        y: y[0],
                    })?;
                if !v.is_finite() {
                    return Err(DensityError::NonFinite {
                        t,
                        x: x[0],
                        y: y[0],
                    });
                }
                if v < 0.0 {
                    self.clamped.fetch_add(1, Ordering::Relaxed);
                    Ok(0.0)
                } else {
                    Ok(v)
                }
            }
        }
    }

    /// `pbar(t,x,y) = p(t,x,y) + p(t,y,x)`, symmetric in `(x,y)`.
    pub fn density_bar(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, DensityError> {
        Ok(self.density(t, x, y)? + self.density(t, y, x)?)
    }

    /// Radial profile `p(t, r)` for translation-invariant modes.
    pub fn profile(&self, t: f64, r: f64) -> Result<f64, DensityError> {
        if !(t > 0.0) {
            return Err(DensityError::NonPositiveTime(t));
        }
        match &self.mode {
            Baseline::CauchyClosedForm => Ok(FRAC_1_PI * t / (t * t + r * r)),
            Baseline::FourierInversion1D => Ok(self.prepared_profile(t)?.density(r)),
            Baseline::UserTable(_) => Err(DensityError::UnsupportedMode(
                self.mode.clone(),
                self.dim,
                self.alpha,
            )),
        }
    }

    /// Signed antiderivative `G(t, u) = int_0^u p(t, v) dv` of the radial
    /// profile (odd in `u`); cell averages of `p` are differences of `G`.
    pub fn profile_antiderivative(&self, t: f64, u: f64) -> Result<f64, DensityError> {
        if !(t > 0.0) {
            return Err(DensityError::NonPositiveTime(t));
        }
        match &self.mode {
            Baseline::CauchyClosedForm => Ok(FRAC_1_PI * (u / t).atan()),
            Baseline::FourierInversion1D => Ok(self.prepared_profile(t)?.antiderivative(u)),
            Baseline::UserTable(_) => Err(DensityError::UnsupportedMode(
                self.mode.clone(),
                self.dim,
                self.alpha,
            )),
        }
    }

    /// Precomputes the inversion weights for a fixed `t`, for fast repeated
    /// evaluation across `r`.
    pub fn prepared_profile(&self, t: f64) -> Result<PreparedProfile, DensityError> {
        if !(t > 0.0) {
            return Err(DensityError::NonPositiveTime(t));
        }
        match &self.mode {
            Baseline::CauchyClosedForm => Ok(PreparedProfile::Cauchy { t }),
            Baseline::FourierInversion1D => {
                let omega_max = self.fourier.cutoff_factor * t.powf(-1.0 / self.alpha);
                let n = self.fourier.nodes.max(8);
                let step = omega_max / n as f64;
                // Trapezoid weights for exp(-t w^alpha) at w_k = k * step.
                let decay: Vec<f64> = (0..=n)
                    .map(|k| {
                        let w = k as f64 * step;
                        let mut v = (-t * w.powf(self.alpha)).exp();
                        if k == 0 || k == n {
                            v *= 0.5;
                        }
                        v
                    })
                    .collect();
                // Euler-Maclaurin endpoint slope of cos(wr) exp(-t w^alpha)
                // at w = 0 is r-independent: -t for alpha = 1, 0 for
                // alpha > 1 (and unbounded for alpha < 1, where no
                // correction is applied).
                let slope0 = if self.alpha == 1.0 { -t } else { 0.0 };
                let correct0 = self.alpha >= 1.0;
                Ok(PreparedProfile::Fourier {
                    t,
                    alpha: self.alpha,
                    step,
                    omega_max,
                    decay,
                    slope0,
                    correct0,
                })
            }
            Baseline::UserTable(_) => Err(DensityError::UnsupportedMode(
                self.mode.clone(),
                self.dim,
                self.alpha,
            )),
        }
    }
}

/// Per-time evaluation context for a translation-invariant density.
pub enum PreparedProfile {
    Cauchy {
        t: f64,
    },
    Fourier {
        t: f64,
        alpha: f64,
        step: f64,
        omega_max: f64,
        decay: Vec<f64>,
        slope0: f64,
        correct0: bool,
    },
}

impl PreparedProfile {
    /// `p(t, r)`.
    pub fn density(&self, r: f64) -> f64 {
        match self {
            PreparedProfile::Cauchy { t } => FRAC_1_PI * t / (t * t + r * r),
            PreparedProfile::Fourier {
                t,
                alpha,
                step,
                omega_max,
                decay,
                slope0,
                correct0,
            } => {
                let mut sum = 0.0;
                for (k, dk) in decay.iter().enumerate() {
                    let w = k as f64 * step;
                    sum += dk * (w * r).cos();
                }
                let mut integral = sum * step;
                if *correct0 {
                    // Trapezoid endpoint correction: subtract
                    // h^2/12 (f'(Omega) - f'(0)).
                    let tail = (-t * omega_max.powf(*alpha)).exp();
                    let slope_end = tail
                        * (-r * (omega_max * r).sin()
                            - t * alpha * omega_max.powf(alpha - 1.0) * (omega_max * r).cos());
                    integral -= step * step / 12.0 * (slope_end - slope0);
                }
                (integral * FRAC_1_PI).max(0.0)
            }
        }
    }

    /// `G(t, u) = int_0^u p(t, v) dv` (odd in `u`).
    pub fn antiderivative(&self, u: f64) -> f64 {
        match self {
            PreparedProfile::Cauchy { t } => FRAC_1_PI * (u / t).atan(),
            PreparedProfile::Fourier {
                t,
                alpha,
                step,
                omega_max,
                decay,
                correct0,
                ..
            } => {
                let mut sum = 0.0;
                for (k, dk) in decay.iter().enumerate() {
                    let w = k as f64 * step;
                    let kernel = if k == 0 { u } else { (w * u).sin() / w };
                    sum += dk * kernel;
                }
                let mut integral = sum * step;
                if *correct0 {
                    let slope0 = if *alpha == 1.0 { -t * u } else { 0.0 };
                    let tail = (-t * omega_max.powf(*alpha)).exp();
                    let s = (omega_max * u).sin();
                    let c = (omega_max * u).cos();
                    let slope_end = tail
                        * (u * c / omega_max - s / (omega_max * omega_max)
                            - t * alpha * omega_max.powf(alpha - 1.0) * s / omega_max);
                    integral -= step * step / 12.0 * (slope_end - slope0);
                }
                integral * FRAC_1_PI
            }
        }
    }

    /// Cell average `(G(b) - G(a)) / (b - a)` of the profile over `[a, b]`
    /// in the signed offset variable.
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        debug_assert!(b > a);
        (self.antiderivative(b) - self.antiderivative(a)) / (b - a)
    }
}

/// Empirical envelope-comparison bounds: min and max of
/// `p(t, r) / envelope(t, r)` over the grid. These are candidate values for
/// the envelope constants.
pub fn sandwich_ratio(
    eval: &DensityEvaluator,
    envelope: &Envelope,
    t_grid: &[f64],
    r_grid: &[f64],
) -> Result<(f64, f64), DensityError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in t_grid {
        let prepared = eval.prepared_profile(t)?;
        for &r in r_grid {
            let ratio = prepared.density(r) / envelope.eval(t, r)?;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    Ok((lo, hi))
}

/// Numerically integrated mass `int pbar(t,x,y) m(dy)` over
/// `[x - radius, x + radius]` plus envelope-based tail bounds; returns
/// `(lower, upper)` estimates bracketing the true mass.
pub fn mass_bounds_1d(
    eval: &DensityEvaluator,
    spec: &ModelSpec,
    t: f64,
    x: f64,
    radius: f64,
    cells: usize,
) -> Result<(f64, f64), DensityError> {
    let envelope = Envelope::from_model(spec);
    let numeric = if eval.is_translation_invariant() && spec.density_m.is_constant() {
        let m = spec.density_m.eval(&[x]);
        let prepared = eval.prepared_profile(t)?;
        // pbar = 2p for the invariant (hence symmetric) modes.
        2.0 * m * (prepared.antiderivative(radius) - prepared.antiderivative(-radius))
    } else {
        let h = 2.0 * radius / cells as f64;
        let mut acc = 0.0;
        for i in 0..cells {
            let y = x - radius + (i as f64 + 0.5) * h;
            acc += eval.density_bar(t, &[x], &[y])? * spec.density_m.eval(&[y]) * h;
        }
        acc
    };
    let tail_envelope = envelope.tail_mass_1d(t, radius);
    // pbar is bounded by 2 M1 and 2 M2 times the envelope.
    let tail_lo = 2.0 * spec.envelope_lo * spec.m_lo * tail_envelope;
    let tail_hi = 2.0 * spec.envelope_hi * spec.m_hi * tail_envelope;
    Ok((numeric + tail_lo, numeric + tail_hi))
}

/// Measured mass bounds `(D1, D2)` over a `(t, x)` grid.
pub fn measure_mass_bounds(
    eval: &DensityEvaluator,
    spec: &ModelSpec,
    t_grid: &[f64],
    x_grid: &[f64],
    radius: f64,
    cells: usize,
) -> Result<(f64, f64), DensityError> {
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::NEG_INFINITY;
    for &t in t_grid {
        for &x in x_grid {
            let (lo, hi) = mass_bounds_1d(eval, spec, t, x, radius, cells)?;
            d1 = d1.min(lo);
            d2 = d2.max(hi);
        }
    }
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn cauchy_eval() -> DensityEvaluator {
        DensityEvaluator::from_model(&ModelSpec::cauchy_baseline()).unwrap()
    }

    #[test]
    fn envelope_closed_forms() {
        let env = Envelope::new(1, 1.0);
        assert_eq!(env.eval(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(env.eval(1.0, 2.0).unwrap(), 0.25);
        assert_eq!(env.eval(4.0, 0.0).unwrap(), 0.25);
        assert!(env.eval(0.0, 1.0).is_err());
        assert!(env.eval(-1.0, 1.0).is_err());
    }

    #[test]
    fn envelope_nonincreasing_in_r() {
        let env = Envelope::new(1, 0.7);
        for t in [0.1, 0.5, 2.0] {
            let mut last = f64::INFINITY;
            for k in 0..200 {
                let r = k as f64 * 0.05;
                let v = env.eval(t, r).unwrap();
                assert!(v <= last + 1e-15);
                assert!(v > 0.0);
                last = v;
            }
        }
    }

    #[test]
    fn cauchy_closed_form_values() {
        let eval = cauchy_eval();
        let p00 = eval.density(1.0, &[0.0], &[0.0]).unwrap();
        assert!((p00 - FRAC_1_PI).abs() < 1e-15);
        let p01 = eval.density(1.0, &[0.0], &[1.0]).unwrap();
        assert!((p01 - 0.5 * FRAC_1_PI).abs() < 1e-15);
    }

    #[test]
    fn density_bar_doubles_and_is_symmetric() {
        let eval = cauchy_eval();
        let pb = eval.density_bar(1.0, &[0.0], &[1.0]).unwrap();
        assert!((pb - FRAC_1_PI).abs() < 1e-15);
        let a = eval.density_bar(0.7, &[0.2], &[-1.4]).unwrap();
        let b = eval.density_bar(0.7, &[-1.4], &[0.2]).unwrap();
        assert_eq!(a, b);
        let c = eval.density_bar(1.0, &[0.0], &[0.0]).unwrap();
        assert!((c - 2.0 * FRAC_1_PI).abs() < 1e-15);
    }

    #[test]
    fn fourier_matches_cauchy_at_alpha_one() {
        let eval = DensityEvaluator::new(
            Baseline::FourierInversion1D,
            1,
            1.0,
            FourierParams::default(),
        )
        .unwrap();
        let exact = cauchy_eval();
        for &t in &[0.1, 0.3, 1.0, 4.0] {
            let prepared = eval.prepared_profile(t).unwrap();
            for k in 0..=20 {
                let r = k as f64 * 0.5;
                let a = prepared.density(r);
                let b = exact.profile(t, r).unwrap();
                assert!(
                    (a - b).abs() < 1e-6,
                    "t={t} r={r}: fourier={a}, cauchy={b}"
                );
            }
        }
    }

    #[test]
    fn fourier_antiderivative_matches_atan() {
        let eval = DensityEvaluator::new(
            Baseline::FourierInversion1D,
            1,
            1.0,
            FourierParams::default(),
        )
        .unwrap();
        for &t in &[0.2, 1.0, 2.5] {
            let prepared = eval.prepared_profile(t).unwrap();
            for &u in &[-6.0, -1.0, -0.1, 0.0, 0.3, 2.0, 8.0] {
                let got = prepared.antiderivative(u);
                let want = FRAC_1_PI * (u / t).atan();
                assert!(
                    (got - want).abs() < 1e-6,
                    "t={t} u={u}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn cauchy_sandwich_is_within_half_pi_and_pi() {
        let eval = cauchy_eval();
        let env = Envelope::new(1, 1.0);
        let t_grid: Vec<f64> = (1..=50).map(|i| 0.08 * i as f64).collect();
        let r_grid: Vec<f64> = (0..50).map(|i| 0.2 * i as f64).collect();
        let (lo, hi) = sandwich_ratio(&eval, &env, &t_grid, &r_grid).unwrap();
        assert!(lo >= 0.5 * FRAC_1_PI - 1e-12, "lo = {lo}");
        assert!(hi <= FRAC_1_PI + 1e-12, "hi = {hi}");
    }

    #[test]
    fn envelope_as_its_own_density_has_unit_ratio() {
        let env = Envelope::new(1, 1.0);
        // A one-point grid at r = 0: the Cauchy ratio is exactly 1/pi.
        let eval = cauchy_eval();
        let (lo, hi) = sandwich_ratio(&eval, &env, &[1.0], &[0.0]).unwrap();
        assert!((lo - FRAC_1_PI).abs() < 1e-14);
        assert!((hi - FRAC_1_PI).abs() < 1e-14);
        // And the envelope divided by itself is identically 1.
        for &t in &[0.3, 1.0, 2.0] {
            for &r in &[0.0, 0.5, 3.0] {
                let v = env.eval(t, r).unwrap() / env.eval(t, r).unwrap();
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn mass_stays_within_measured_bounds() {
        let spec = ModelSpec::cauchy_baseline();
        let eval = cauchy_eval();
        // For M = 1 the pbar mass is exactly 2; quadrature plus tails must
        // bracket it within the 1e-3 mass tolerance, and the bracket itself
        // must sit inside [2 m_lo (1 - eps), 2 m_hi (1 + eps)].
        let eps_mass = 1e-3;
        for &t in &[0.1, 0.5, 2.0, 4.0] {
            let (lo, hi) = mass_bounds_1d(&eval, &spec, t, 0.3, 4000.0, 64).unwrap();
            assert!(lo <= 2.0 && 2.0 <= hi, "t={t}: ({lo}, {hi})");
            assert!(hi - lo < 2.0 * 2e-3, "t={t}: bracket too wide ({lo}, {hi})");
            assert!(lo >= 2.0 * spec.m_lo * (1.0 - eps_mass), "t={t}: lo {lo}");
            assert!(hi <= 2.0 * spec.m_hi * (1.0 + eps_mass), "t={t}: hi {hi}");
        }
    }

    #[test]
    fn user_table_parses_interpolates_and_clamps() {
        let csv = "t,x,y,p\n\
                   1,0,0,0.3\n1,0,1,0.1\n1,1,0,0.1\n1,1,1,0.3\n\
                   2,0,0,0.2\n2,0,1,-0.05\n2,1,0,0.1\n2,1,1,0.2\n";
        let table = UserTable::parse_csv(csv).unwrap();
        assert_eq!(table.interpolate(1.0, 0.0, 0.0), Some(0.3));
        let mid = table.interpolate(1.0, 0.5, 0.5).unwrap();
        assert!((mid - 0.2).abs() < 1e-12);
        assert!(table.interpolate(3.0, 0.0, 0.0).is_none());
        assert!(table.interpolate(1.5, -0.2, 0.0).is_none());
    }

    #[test]
    fn user_table_rejects_ragged_grids() {
        let csv = "t,x,y,p\n1,0,0,0.3\n1,0,1,0.1\n1,1,0,0.1\n";
        assert!(matches!(
            UserTable::parse_csv(csv),
            Err(DensityError::TableNotRectangular { .. })
        ));
    }

    #[test]
    fn negative_table_values_are_clamped_and_counted() {
        let dir = std::env::temp_dir().join("stable_fk_table_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("neg.csv");
        std::fs::write(
            &path,
            "t,x,y,p\n1,0,0,-0.2\n1,0,1,0.1\n1,1,0,0.1\n1,1,1,0.3\n",
        )
        .unwrap();
        let eval = DensityEvaluator::new(
            Baseline::UserTable(path.to_string_lossy().into_owned()),
            1,
            1.0,
            FourierParams::default(),
        )
        .unwrap();
        assert_eq!(eval.density(1.0, &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(eval.clamped_count(), 1);
        assert!(matches!(
            eval.density(1.0, &[5.0], &[0.0]),
            Err(DensityError::OutOfTable { .. })
        ));
    }

    #[test]
    fn fourier_profile_is_nonnegative_for_small_alpha() {
        // No endpoint correction below alpha = 1; values must still be
        // finite and nonnegative on the default range.
        let eval = DensityEvaluator::new(
            Baseline::FourierInversion1D,
            1,
            0.7,
            FourierParams::default(),
        )
        .unwrap();
        let prepared = eval.prepared_profile(0.5).unwrap();
        let mass_check = prepared.antiderivative(50.0) - prepared.antiderivative(-50.0);
        assert!(mass_check > 0.9 && mass_check < 1.05, "mass {mass_check}");
        for k in 0..40 {
            let v = prepared.density(k as f64 * 0.25);
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    const FRAC_1_PI: f64 = std::f64::consts::FRAC_1_PI;
}
