//! Seeded simulation of stable-like jump paths with explicit jump records,
//! and Monte Carlo estimators driven by those records.
//!
//! Jumps are generated in independent size bands, each drawing from its own
//! substream of a counter-based generator. The band boundaries are chosen so
//! that for a hard-cutoff perturbation the jumps feeding the additive
//! functional live in their own band: shrinking the small-jump cutoff then
//! leaves every `A_t`-statistic bit-identical. State-dependent kernels are
//! handled by thinning the dominating isotropic rate; the constant-kernel
//! isotropic baseline accepts every proposal.
//!
//! Small jumps below the cutoff are either discarded (exact for `A_t` under
//! a hard cutoff at or above the cutoff) or completed: a further Poisson
//! band down to `epsilon / floor_ratio` plus a variance-matched Gaussian
//! increment for the residual dust, so the terminal position keeps the
//! correct law up to the central-limit approximation of the sub-floor dust.

use crate::jumpalgebra::{self, JumpSequence};
use crate::model::{Certificate, ModelSpec, PerturbationF, MAX_DIM};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("small-jump cutoff must be positive (epsilon = {0})")]
    NonPositiveEpsilon(f64),
    #[error("horizon must be positive (t = {0})")]
    NonPositiveHorizon(f64),
    #[error("query time {query} exceeds the configured horizon {horizon}")]
    BeyondHorizon { query: f64, horizon: f64 },
    #[error("at least one path is required")]
    NoPaths,
    #[error("dimension {0} not supported (1..=3)")]
    BadDimension(usize),
    #[error("stable remainder mode requires a constant kernel and constant reference density")]
    RemainderNeedsConstantKernel,
}

/// How position mass below the large-jump cutoff is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallJumpMode {
    /// Ignore jumps below `epsilon`; exact for `A_t` whenever the
    /// perturbation has a hard cutoff at `delta >= epsilon`.
    Discard,
    /// Complete the position law: an extra Poisson band down to
    /// `epsilon / floor_ratio` plus Gaussian dust for the remainder.
    /// Constant-kernel isotropic baselines only.
    StableRemainder,
}

/// Simulation configuration.
#[derive(Debug, Clone, Copy)]
pub struct PathConfig {
    /// Large-jump cutoff; jumps with `|h| >= epsilon` are recorded.
    pub epsilon: f64,
    pub t_horizon: f64,
    /// Radius within which user-supplied kernels were validated; paths are
    /// not confined, the value is carried into reports.
    pub r_sim: f64,
    pub small_jump_mode: SmallJumpMode,
    /// Ratio between `epsilon` and the completion-band floor.
    pub floor_ratio: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            epsilon: 0.5,
            t_horizon: 1.0,
            r_sim: 10.0,
            small_jump_mode: SmallJumpMode::Discard,
            floor_ratio: 64.0,
        }
    }
}

/// One seeded substream: `(seed, index)` determines the path exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        RngStream { seed, index }
    }

    /// Independent generator for one size band of this path.
    fn band_rng(&self, band: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index * BAND_COUNT + band);
        rng
    }
}

const BAND_COUNT: u64 = 4;
const BAND_PRIMARY: u64 = 0; // jumps >= split (split = hard cutoff when valid)
const BAND_SECONDARY: u64 = 1; // jumps in [epsilon, split)
const BAND_COMPLETION: u64 = 2; // jumps in [floor, epsilon), remainder mode
const BAND_DUST: u64 = 3; // Gaussian dust, remainder mode

/// One accepted jump with its pre and post states.
#[derive(Debug, Clone, Copy)]
pub struct JumpRecord {
    pub time: f64,
    pub x_pre: [f64; MAX_DIM],
    pub x_post: [f64; MAX_DIM],
}

/// A simulated path: initial point, recorded large jumps, terminal state.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub dim: usize,
    pub x0: [f64; MAX_DIM],
    pub jumps: Vec<JumpRecord>,
    pub x_terminal: [f64; MAX_DIM],
}

impl SimulatedPath {
    /// Jump marks `(s_j, F(X_{s_j-}, X_{s_j}))` for the additive functional.
    pub fn jump_sequence(&self, pert: &PerturbationF, t_horizon: f64) -> JumpSequence<f64> {
        let marks: Vec<(f64, f64)> = self
            .jumps
            .iter()
            .map(|j| {
                (
                    j.time,
                    pert.eval(&j.x_pre[..self.dim], &j.x_post[..self.dim]),
                )
            })
            .collect();
        JumpSequence::from_pairs(&marks, t_horizon).expect("recorded jump times are ordered")
    }

    /// `A_t` evaluated from the recorded jumps.
    pub fn additive_functional(&self, pert: &PerturbationF, t: f64) -> f64 {
        jumpalgebra::additive_functional(&self.jump_sequence(pert, t.max(self.last_time())), t)
            .expect("t within horizon by construction")
    }

    fn last_time(&self) -> f64 {
        self.jumps.last().map_or(0.0, |j| j.time)
    }
}

/// Surface measure of the unit sphere in `d` dimensions, `d <= 3`.
fn sphere_surface(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked on entry"),
    }
}

/// Rate of the dominating isotropic band `a <= |h| < b` with kernel bound
/// `c_bar` and density bound `m_hi`:
/// `c_bar m_hi S_d (a^-alpha - b^-alpha) / alpha`.
fn band_rate(d: usize, alpha: f64, c_bar: f64, m_hi: f64, a: f64, b: f64) -> f64 {
    let upper = if b.is_finite() { b.powf(-alpha) } else { 0.0 };
    c_bar * m_hi * sphere_surface(d) * (a.powf(-alpha) - upper) / alpha
}

/// Expected rate of large jumps (`|h| >= epsilon`) for a constant-kernel
/// isotropic model; for state-dependent kernels this is the dominating rate
/// used by the thinning loop.
pub fn large_jump_rate(spec: &ModelSpec, epsilon: f64) -> Result<f64, SimError> {
    if !(epsilon > 0.0) {
        return Err(SimError::NonPositiveEpsilon(epsilon));
    }
    if spec.dim == 0 || spec.dim > MAX_DIM {
        return Err(SimError::BadDimension(spec.dim));
    }
    Ok(band_rate(
        spec.dim,
        spec.alpha,
        spec.c_bar,
        spec.m_hi,
        epsilon,
        f64::INFINITY,
    ))
}

/// Per-coordinate variance rate of the sub-floor jump dust.
fn dust_variance_rate(d: usize, alpha: f64, c2: f64, m: f64, floor: f64) -> f64 {
    c2 * m * sphere_surface(d) * floor.powf(2.0 - alpha) / ((2.0 - alpha) * d as f64)
}

/// Draw `|h|` from the normalized band density `r^-(1+alpha)` on `[a, b)`.
fn sample_band_radius(rng: &mut ChaCha8Rng, alpha: f64, a: f64, b: f64) -> f64 {
    let upper = if b.is_finite() { b.powf(-alpha) } else { 0.0 };
    let u: f64 = rng.random();
    (a.powf(-alpha) - u * (a.powf(-alpha) - upper)).powf(-1.0 / alpha)
}

/// Uniform direction on the unit sphere, `d <= 3`.
fn sample_direction(rng: &mut ChaCha8Rng, d: usize) -> [f64; MAX_DIM] {
    let mut dir = [0.0; MAX_DIM];
    match d {
        1 => {
            dir[0] = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        }
        2 => {
            let theta = 2.0 * PI * rng.random::<f64>();
            dir[0] = theta.cos();
            dir[1] = theta.sin();
        }
        3 => {
            let z = 2.0 * rng.random::<f64>() - 1.0;
            let theta = 2.0 * PI * rng.random::<f64>();
            let s = (1.0 - z * z).max(0.0).sqrt();
            dir[0] = s * theta.cos();
            dir[1] = s * theta.sin();
            dir[2] = z;
        }
        _ => unreachable!(),
    }
    dir
}

/// Standard normal via Box-Muller; consumes two uniforms.
fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Standard symmetric alpha-stable variate by the Chambers-Mallows-Stuck
/// inverse construction (characteristic function `exp(-|w|^alpha)`). Kept as
/// the exact-law oracle for distribution tests of the layered construction.
pub fn standard_symmetric_stable(alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u = PI * (rng.random::<f64>() - 0.5);
    if (alpha - 1.0).abs() < 1e-12 {
        return u.tan();
    }
    let w: f64 = -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln();
    let s = (alpha * u).sin() / u.cos().powf(1.0 / alpha);
    let c = ((1.0 - alpha) * u).cos() / w;
    s * c.powf((1.0 - alpha) / alpha)
}

/// Levy density coefficient of the standard symmetric alpha-stable law,
/// `Gamma(1+alpha) sin(pi alpha / 2) / pi`; a constant-kernel model with
/// `2C * M` equal to this value is the standard process itself.
pub fn standard_levy_coefficient(alpha: f64) -> f64 {
    gamma_1p(alpha) * (PI * alpha / 2.0).sin() / PI
}

// Gamma(1 + a) for a in (0, 2), via Lanczos.
fn gamma_1p(a: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let z = a; // Gamma(1 + a) with z = a
    let mut x = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * x
}

struct Band {
    rng: ChaCha8Rng,
    rate: f64,
    lo: f64,
    hi: f64,
    record: bool,
    next_time: f64,
}

impl Band {
    fn advance(&mut self) {
        let u: f64 = self.rng.random::<f64>().max(f64::MIN_POSITIVE);
        self.next_time += -u.ln() / self.rate;
    }
}

/// Simulates one path of the jump chain on `[0, t_horizon]`.
///
/// Large jumps (`|h| >= epsilon`) arrive at the state-dependent intensity
/// determined by the Levy system, realized by thinning against
/// `c_bar * m_hi`; their times, pre/post states and the terminal state are
/// recorded. See the module docs for the small-jump treatment.
pub fn sample_path(
    spec: &ModelSpec,
    pert: &PerturbationF,
    cfg: &PathConfig,
    x0: &[f64],
    stream: RngStream,
) -> Result<SimulatedPath, SimError> {
    if !(cfg.epsilon > 0.0) {
        return Err(SimError::NonPositiveEpsilon(cfg.epsilon));
    }
    if !(cfg.t_horizon > 0.0) {
        return Err(SimError::NonPositiveHorizon(cfg.t_horizon));
    }
    let d = spec.dim;
    if d == 0 || d > MAX_DIM {
        return Err(SimError::BadDimension(d));
    }
    let remainder = cfg.small_jump_mode == SmallJumpMode::StableRemainder;
    if remainder && !(spec.kernel.is_constant() && spec.density_m.is_constant()) {
        return Err(SimError::RemainderNeedsConstantKernel);
    }

    // The primary band starts at the perturbation's hard cutoff when that
    // lies at or above epsilon, so A_t-statistics do not depend on epsilon.
    let split = match pert.certificate {
        Certificate::HardCutoff { delta } if delta >= cfg.epsilon && delta.is_finite() => delta,
        _ => cfg.epsilon,
    };

    let mut bands = Vec::new();
    let mut push_band = |band_id: u64, lo: f64, hi: f64, record: bool| {
        if hi <= lo {
            return;
        }
        let rate = band_rate(d, spec.alpha, spec.c_bar, spec.m_hi, lo, hi);
        if rate <= 0.0 {
            return;
        }
        let mut band = Band {
            rng: stream.band_rng(band_id),
            rate,
            lo,
            hi,
            record,
            next_time: 0.0,
        };
        band.advance();
        bands.push(band);
    };
    push_band(BAND_PRIMARY, split, f64::INFINITY, true);
    push_band(BAND_SECONDARY, cfg.epsilon, split, true);
    let floor = cfg.epsilon / cfg.floor_ratio.max(1.0);
    if remainder {
        push_band(BAND_COMPLETION, floor, cfg.epsilon, false);
    }

    let dust_sd_rate = if remainder {
        let c2 = spec.kernel.eval(&[0.0; MAX_DIM][..d], &[0.0; MAX_DIM][..d]);
        let m = spec.density_m.eval(&[0.0; MAX_DIM][..d]);
        dust_variance_rate(d, spec.alpha, c2, m, floor).sqrt()
    } else {
        0.0
    };
    let mut dust_rng = stream.band_rng(BAND_DUST);

    let mut x = [0.0; MAX_DIM];
    x[..d].copy_from_slice(&x0[..d]);
    let mut clock = 0.0;
    let mut jumps = Vec::new();

    loop {
        let (next_idx, next_time) = match bands
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.next_time.total_cmp(&b.1.next_time))
        {
            Some((idx, band)) => (idx, band.next_time),
            None => break,
        };
        if next_time > cfg.t_horizon {
            break;
        }
        // Dust accrued since the last event.
        if dust_sd_rate > 0.0 {
            let dt = next_time - clock;
            let step_sd = dust_sd_rate * dt.sqrt();
            for coord in x.iter_mut().take(d) {
                *coord += step_sd * sample_normal(&mut dust_rng);
            }
        }
        clock = next_time;

        let band = &mut bands[next_idx];
        let radius = sample_band_radius(&mut band.rng, spec.alpha, band.lo, band.hi);
        let dir = sample_direction(&mut band.rng, d);
        let mut target = x;
        for k in 0..d {
            target[k] += radius * dir[k];
        }
        let accept_u: f64 = band.rng.random();
        let accept_prob = spec.kernel.eval(&x[..d], &target[..d])
            * spec.density_m.eval(&target[..d])
            / (spec.c_bar * spec.m_hi);
        let record = band.record;
        band.advance();
        if accept_u < accept_prob {
            if record {
                jumps.push(JumpRecord {
                    time: clock,
                    x_pre: x,
                    x_post: target,
                });
            }
            x = target;
        }
    }

    if dust_sd_rate > 0.0 {
        let dt = cfg.t_horizon - clock;
        if dt > 0.0 {
            let step_sd = dust_sd_rate * dt.sqrt();
            for coord in x.iter_mut().take(d) {
                *coord += step_sd * sample_normal(&mut dust_rng);
            }
        }
    }

    let mut x0_arr = [0.0; MAX_DIM];
    x0_arr[..d].copy_from_slice(&x0[..d]);
    Ok(SimulatedPath {
        dim: d,
        x0: x0_arr,
        jumps,
        x_terminal: x,
    })
}

/// Deterministic pairwise sum: the reduction order depends only on the
/// length, so parallel and serial path generation agree bit-for-bit.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean and standard error with the deterministic reduction.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, f64::INFINITY);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn run_paths<V>(
    spec: &ModelSpec,
    pert: &PerturbationF,
    cfg: &PathConfig,
    x0: &[f64],
    t: f64,
    n_paths: u64,
    stream: RngStream,
    per_path: V,
) -> Result<Vec<f64>, SimError>
where
    V: Fn(&SimulatedPath) -> f64 + Sync,
{
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    if t > cfg.t_horizon {
        return Err(SimError::BeyondHorizon {
            query: t,
            horizon: cfg.t_horizon,
        });
    }
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = sample_path(
                spec,
                pert,
                cfg,
                x0,
                RngStream::new(stream.seed, stream.index + i),
            )?;
            Ok(per_path(&path))
        })
        .collect()
}

/// Monte Carlo estimate of `S_t f(x) = E_x[exp(-A_t) f(X_t)]`.
pub fn feynman_kac_mc(
    spec: &ModelSpec,
    pert: &PerturbationF,
    cfg: &PathConfig,
    x0: &[f64],
    f: impl Fn(&[f64]) -> f64 + Sync,
    t: f64,
    n_paths: u64,
    stream: RngStream,
) -> Result<(f64, f64), SimError> {
    let values = run_paths(spec, pert, cfg, x0, t, n_paths, stream, |path| {
        (-path.additive_functional(pert, t)).exp() * f(&path.x_terminal[..path.dim])
    })?;
    Ok(mean_and_se(&values))
}

/// Monte Carlo estimate of `E_x[A_t^n g(X_t)]`.
pub fn moment_mc(
    spec: &ModelSpec,
    pert: &PerturbationF,
    cfg: &PathConfig,
    x0: &[f64],
    g: impl Fn(&[f64]) -> f64 + Sync,
    t: f64,
    n: u32,
    n_paths: u64,
    stream: RngStream,
) -> Result<(f64, f64), SimError> {
    let values = run_paths(spec, pert, cfg, x0, t, n_paths, stream, |path| {
        path.additive_functional(pert, t).powi(n as i32) * g(&path.x_terminal[..path.dim])
    })?;
    Ok(mean_and_se(&values))
}

/// Small-ball ratio estimate.
#[derive(Debug, Clone, Copy)]
pub struct SmallBallEstimate {
    /// `E_x[exp(-A_t) 1_{B_r}(X_t)] / m(B_r)`.
    pub value: f64,
    pub std_error: f64,
    /// Number of paths that ended inside the ball; zero hits flags an
    /// inconclusive cell (infinite relative error).
    pub hits: u64,
}

/// `m(B_r(z))` for the ball around `z`.
pub fn ball_mass(spec: &ModelSpec, z: &[f64], r: f64) -> f64 {
    let d = spec.dim;
    let volume = match d {
        1 => 2.0 * r,
        2 => PI * r * r,
        3 => 4.0 / 3.0 * PI * r * r * r,
        _ => unreachable!(),
    };
    if spec.density_m.is_constant() {
        return volume * spec.density_m.eval(&z[..d]);
    }
    // Midpoint quadrature of M over the bounding box, restricted to the ball.
    let cells = 32usize;
    let h = 2.0 * r / cells as f64;
    let mut acc = 0.0;
    let mut point = [0.0; MAX_DIM];
    let total = cells.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut r2 = 0.0;
        for k in 0..d {
            let i = rem % cells;
            rem /= cells;
            let offset = -r + (i as f64 + 0.5) * h;
            point[k] = z[k] + offset;
            r2 += offset * offset;
        }
        if r2 <= r * r {
            acc += spec.density_m.eval(&point[..d]) * h.powi(d as i32);
        }
    }
    acc
}

/// Monte Carlo estimate of `E_x[exp(-A_t) 1_{B_r(z)}(X_t)] / m(B_r)`, the
/// small-ball approximation of the semigroup density at `(t, x, z)`.
pub fn smallball_density_mc(
    spec: &ModelSpec,
    pert: &PerturbationF,
    cfg: &PathConfig,
    x0: &[f64],
    z: &[f64],
    r: f64,
    t: f64,
    n_paths: u64,
    stream: RngStream,
) -> Result<SmallBallEstimate, SimError> {
    assert!(r > 0.0, "ball radius must be positive");
    let mass = ball_mass(spec, z, r);
    let values = run_paths(spec, pert, cfg, x0, t, n_paths, stream, |path| {
        if crate::model::dist(&path.x_terminal[..path.dim], &z[..path.dim]) <= r {
            (-path.additive_functional(pert, t)).exp() / mass
        } else {
            0.0
        }
    })?;
    let hits = values.iter().filter(|v| **v != 0.0).count() as u64;
    let (value, std_error) = mean_and_se(&values);
    if hits == 0 {
        return Ok(SmallBallEstimate {
            value: 0.0,
            std_error: f64::INFINITY,
            hits: 0,
        });
    }
    Ok(SmallBallEstimate {
        value,
        std_error,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, PerturbationF};
    use std::f64::consts::FRAC_1_PI;

    fn baseline() -> (ModelSpec, PathConfig) {
        let spec = ModelSpec::cauchy_baseline();
        let cfg = PathConfig {
            epsilon: 0.5,
            t_horizon: 1.0,
            ..PathConfig::default()
        };
        (spec, cfg)
    }

    #[test]
    fn same_stream_reproduces_the_path() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let a = sample_path(&spec, &pert, &cfg, &[0.0], RngStream::new(7, 3)).unwrap();
        let b = sample_path(&spec, &pert, &cfg, &[0.0], RngStream::new(7, 3)).unwrap();
        assert_eq!(a.jumps.len(), b.jumps.len());
        for (ja, jb) in a.jumps.iter().zip(&b.jumps) {
            assert_eq!(ja.time, jb.time);
            assert_eq!(ja.x_post, jb.x_post);
        }
        assert_eq!(a.x_terminal, b.x_terminal);
    }

    #[test]
    fn huge_cutoff_freezes_the_path() {
        let (spec, mut cfg) = baseline();
        cfg.epsilon = 1e9;
        let pert = PerturbationF::zero();
        let path = sample_path(&spec, &pert, &cfg, &[1.5], RngStream::new(1, 0)).unwrap();
        assert!(path.jumps.is_empty());
        assert_eq!(path.x_terminal[0], 1.5);
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let (spec, mut cfg) = baseline();
        cfg.epsilon = 0.0;
        let pert = PerturbationF::zero();
        assert!(matches!(
            sample_path(&spec, &pert, &cfg, &[0.0], RngStream::new(1, 0)),
            Err(SimError::NonPositiveEpsilon(_))
        ));
        assert!(large_jump_rate(&spec, 0.0).is_err());
    }

    #[test]
    fn large_jump_rate_closed_form() {
        // 2C = 1/pi, d = 1, alpha = 1, epsilon = 0.5: rate = 2 (1/pi) / 0.5.
        let (spec, _) = baseline();
        let rate = large_jump_rate(&spec, 0.5).unwrap();
        assert!((rate - 4.0 * FRAC_1_PI).abs() < 1e-14);
    }

    #[test]
    fn empirical_jump_count_matches_the_levy_tail() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::zero();
        let n_paths = 20_000u64;
        let lambda = large_jump_rate(&spec, cfg.epsilon).unwrap();
        let counts: Vec<f64> = (0..n_paths)
            .map(|i| {
                sample_path(&spec, &pert, &cfg, &[0.0], RngStream::new(11, i))
                    .unwrap()
                    .jumps
                    .len() as f64
            })
            .collect();
        let (mean, se) = mean_and_se(&counts);
        assert!(
            (mean - lambda).abs() <= 3.0 * se,
            "mean {mean} vs lambda {lambda} (se {se})"
        );
    }

    #[test]
    fn fk_of_constant_one_is_exact_without_perturbation() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::zero();
        let (est, se) =
            feynman_kac_mc(&spec, &pert, &cfg, &[0.0], |_| 1.0, 1.0, 200, RngStream::new(3, 0))
                .unwrap();
        assert_eq!(est, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn fk_of_zero_function_is_zero() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let (est, _) =
            feynman_kac_mc(&spec, &pert, &cfg, &[0.0], |_| 0.0, 1.0, 100, RngStream::new(3, 0))
                .unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn moment_zero_is_exactly_one() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let (est, se) = moment_mc(
            &spec,
            &pert,
            &cfg,
            &[0.0],
            |_| 1.0,
            1.0,
            0,
            150,
            RngStream::new(5, 0),
        )
        .unwrap();
        assert_eq!(est, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn zero_paths_is_an_error() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::zero();
        assert!(matches!(
            moment_mc(&spec, &pert, &cfg, &[0.0], |_| 1.0, 1.0, 1, 0, RngStream::new(1, 0)),
            Err(SimError::NoPaths)
        ));
    }

    #[test]
    fn shrinking_epsilon_leaves_functional_statistics_bit_identical() {
        // A_t only sees jumps >= delta; the band construction keeps those in
        // their own substream, so any epsilon <= delta gives the same A_t.
        let (spec, _) = baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let run = |eps: f64| {
            let cfg = PathConfig {
                epsilon: eps,
                t_horizon: 1.0,
                ..PathConfig::default()
            };
            moment_mc(
                &spec,
                &pert,
                &cfg,
                &[0.0],
                |_| 1.0,
                1.0,
                1,
                500,
                RngStream::new(42, 0),
            )
            .unwrap()
        };
        let coarse = run(0.5);
        let fine = run(0.25);
        let finer = run(0.125);
        assert_eq!(coarse, fine);
        assert_eq!(coarse, finer);
    }

    #[test]
    fn compound_poisson_fk_closed_form() {
        // Oracle: with F = c 1{|h| >= delta} on the constant-kernel
        // baseline, A_t = c N_t with N_t Poisson of rate
        // lambda = 2C * 2 delta^-alpha / alpha, so
        // E[exp(-A_t)] = exp(-lambda t (1 - exp(-c))).
        let (spec, cfg) = baseline();
        let c = 0.1;
        let delta = 0.5;
        let pert = PerturbationF::threshold(c, delta);
        let lambda = FRAC_1_PI * 2.0 * delta.powf(-1.0) / 1.0;
        let exact = (-lambda * 1.0 * (1.0 - (-c as f64).exp())).exp();
        let (est, se) = feynman_kac_mc(
            &spec,
            &pert,
            &cfg,
            &[0.0],
            |_| 1.0,
            1.0,
            30_000,
            RngStream::new(123, 0),
        )
        .unwrap();
        assert!(
            (est - exact).abs() <= 3.0 * se,
            "est {est} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn higher_moments_match_the_poisson_oracle() {
        // A_t = c N_t with N_t Poisson(lambda t); raw Poisson moments:
        // E N^3 = u + 3u^2 + u^3, E N^4 = u + 7u^2 + 6u^3 + u^4.
        let (spec, cfg) = baseline();
        let c = 0.1;
        let pert = PerturbationF::threshold(c, 0.5);
        let u = large_jump_rate(&spec, 0.5).unwrap() * 1.0;
        let exact = [
            c.powi(3) * (u + 3.0 * u * u + u.powi(3)),
            c.powi(4) * (u + 7.0 * u * u + 6.0 * u.powi(3) + u.powi(4)),
        ];
        for (idx, &want) in exact.iter().enumerate() {
            let n = idx as u32 + 3;
            let (est, se) = moment_mc(
                &spec,
                &pert,
                &cfg,
                &[0.0],
                |_| 1.0,
                1.0,
                n,
                200_000,
                RngStream::new(n as u64, 0),
            )
            .unwrap();
            assert!(
                (est - want).abs() <= 3.0 * se,
                "n={n}: est {est} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn remainder_mode_matches_the_cms_oracle_in_distribution() {
        // Terminal law of the layered construction vs direct CMS sampling
        // of the Cauchy law: compare P(|X_1| <= 1) with a 3-sigma budget.
        let (spec, mut cfg) = baseline();
        cfg.small_jump_mode = SmallJumpMode::StableRemainder;
        cfg.epsilon = 0.25;
        let pert = PerturbationF::zero();
        let n = 20_000u64;
        let layered: Vec<f64> = (0..n)
            .map(|i| {
                let p = sample_path(&spec, &pert, &cfg, &[0.0], RngStream::new(77, i)).unwrap();
                if p.x_terminal[0].abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let direct: Vec<f64> = (0..n)
            .map(|_| {
                if standard_symmetric_stable(1.0, &mut rng).abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let (m1, s1) = mean_and_se(&layered);
        let (m2, s2) = mean_and_se(&direct);
        let combined = (s1 * s1 + s2 * s2).sqrt();
        assert!(
            (m1 - m2).abs() <= 3.0 * combined + 0.01,
            "layered {m1} vs cms {m2} (3s = {})",
            3.0 * combined
        );
        // And the exact value P(|Cauchy| <= 1) = 1/2.
        assert!((m1 - 0.5).abs() <= 4.0 * s1 + 0.01, "layered {m1} vs 0.5");
    }

    #[test]
    fn smallball_estimates_the_density_without_perturbation() {
        let (spec, mut cfg) = baseline();
        cfg.small_jump_mode = SmallJumpMode::StableRemainder;
        cfg.epsilon = 0.25;
        let pert = PerturbationF::zero();
        let est = smallball_density_mc(
            &spec,
            &pert,
            &cfg,
            &[0.0],
            &[0.0],
            0.05,
            1.0,
            60_000,
            RngStream::new(31, 0),
        )
        .unwrap();
        assert!(est.hits > 0);
        let exact = FRAC_1_PI;
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error + 0.01,
            "value {} vs {exact} (se {})",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn smallball_total_mass_with_huge_ball() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::zero();
        let r = 1e6;
        let est = smallball_density_mc(
            &spec,
            &pert,
            &cfg,
            &[0.0],
            &[0.0],
            r,
            1.0,
            500,
            RngStream::new(8, 0),
        )
        .unwrap();
        let mass = ball_mass(&spec, &[0.0], r);
        assert_eq!(est.hits, 500);
        assert!((est.value - 1.0 / mass).abs() < 1e-18);
        // All samples are identical; the spread is float noise at worst.
        assert!(est.std_error < 1e-15 * est.value);
    }

    #[test]
    fn smallball_bias_shrinks_with_the_radius() {
        // Two decades of radius: the ball average converges toward the
        // density value as the radius shrinks.
        let (spec, mut cfg) = baseline();
        cfg.small_jump_mode = SmallJumpMode::StableRemainder;
        cfg.epsilon = 0.25;
        let pert = PerturbationF::zero();
        let exact = FRAC_1_PI;
        let mut biases = Vec::new();
        for &r in &[2.0, 0.2, 0.02] {
            let est = smallball_density_mc(
                &spec,
                &pert,
                &cfg,
                &[0.0],
                &[0.0],
                r,
                1.0,
                40_000,
                RngStream::new(17, 0),
            )
            .unwrap();
            assert!(est.hits > 0);
            biases.push((est.value - exact).abs());
        }
        // The coarse ball averages the density; small radii approach the
        // point value up to Monte Carlo noise.
        assert!(
            biases[1] < 0.25 * biases[0] && biases[2] < 0.5 * biases[0],
            "bias trend not shrinking: {biases:?}"
        );
        assert!(biases[2] < 0.05, "smallest-radius bias {}", biases[2]);
    }

    #[test]
    fn parallel_and_serial_reductions_agree() {
        let (spec, cfg) = baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let run = || {
            feynman_kac_mc(
                &spec,
                &pert,
                &cfg,
                &[0.0],
                |_| 1.0,
                1.0,
                2_000,
                RngStream::new(2024, 0),
            )
            .unwrap()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(run);
        let parallel = run();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn cms_standard_levy_coefficient_at_alpha_one() {
        // Gamma(2) sin(pi/2) / pi = 1/pi.
        assert!((standard_levy_coefficient(1.0) - FRAC_1_PI).abs() < 1e-12);
    }
}
