//! Process model, perturbation functional and their symmetrizations.
//!
//! A model bundles the jump kernel `2C(x,y)`, the reference density `M(x)`
//! of `m(dx) = M(x)dx`, the baseline transition-density mode and the
//! two-sided envelope constants. A perturbation is a bounded two-point
//! function vanishing on the diagonal together with an explicit decay
//! certificate that makes the singular integral `int |F(x,y)| |x-y|^-(d+a) dy`
//! checkable by quadrature.

use std::fmt;
use std::sync::Arc;

/// Maximum spatial dimension supported anywhere in the crate.
pub const MAX_DIM: usize = 3;

/// Euclidean distance between two points given as coordinate slices.
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The jump-kernel factor `2C(x,y)` of the Levy system.
#[derive(Clone)]
pub enum Kernel {
    /// `2C(x,y)` identically equal to the given value.
    Constant(f64),
    /// Arbitrary user kernel; evaluations must stay in `[0, c_bar]`.
    Custom(PairFn),
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Constant(v) => *v,
            Kernel::Custom(f) => f(x, y),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Kernel::Constant(_))
    }

    /// Kernel with swapped arguments, `2C(y,x)`.
    pub fn transpose(&self) -> Kernel {
        match self {
            Kernel::Constant(v) => Kernel::Constant(*v),
            Kernel::Custom(f) => {
                let f = f.clone();
                Kernel::Custom(Arc::new(move |x, y| f(y, x)))
            }
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Constant(v) => write!(f, "Kernel::Constant({v})"),
            Kernel::Custom(_) => write!(f, "Kernel::Custom(..)"),
        }
    }
}

/// Reference density `M(x)` of the measure `m(dx) = M(x)dx`.
#[derive(Clone)]
pub enum RefDensity {
    Constant(f64),
    Custom(PointFn),
}

impl RefDensity {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RefDensity::Constant(v) => *v,
            RefDensity::Custom(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RefDensity::Constant(_))
    }
}

impl fmt::Debug for RefDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefDensity::Constant(v) => write!(f, "RefDensity::Constant({v})"),
            RefDensity::Custom(_) => write!(f, "RefDensity::Custom(..)"),
        }
    }
}

/// How the baseline transition density `p(t,x,y)` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    /// Closed form, only valid for `d = 1`, `alpha = 1`.
    CauchyClosedForm,
    /// Numerical inversion of the characteristic function `exp(-t|w|^a)`.
    FourierInversion1D,
    /// Interpolated user table loaded from CSV.
    UserTable(String),
}

/// The process model: dimension, stability index, jump kernel with its
/// bound, reference density with its bounds, baseline density mode and the
/// envelope constants of the two-sided comparison.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub alpha: f64,
    /// Evaluates `2C(x,y)`.
    pub kernel: Kernel,
    /// Declared upper bound on `2C(x,y)`.
    pub c_bar: f64,
    pub density_m: RefDensity,
    pub m_lo: f64,
    pub m_hi: f64,
    pub baseline: Baseline,
    /// Lower envelope constant (the `M1` of the two-sided bound).
    pub envelope_lo: f64,
    /// Upper envelope constant (the `M2` of the two-sided bound).
    pub envelope_hi: f64,
}

impl ModelSpec {
    /// The standard 1-d Cauchy baseline: constant kernel `2C = 1/pi`,
    /// Lebesgue reference measure, closed-form density, exact envelope
    /// constants `1/(2pi)` and `1/pi`.
    pub fn cauchy_baseline() -> Self {
        let inv_pi = std::f64::consts::FRAC_1_PI;
        ModelSpec {
            dim: 1,
            alpha: 1.0,
            kernel: Kernel::Constant(inv_pi),
            c_bar: inv_pi,
            density_m: RefDensity::Constant(1.0),
            m_lo: 1.0,
            m_hi: 1.0,
            baseline: Baseline::CauchyClosedForm,
            envelope_lo: 0.5 * inv_pi,
            envelope_hi: inv_pi,
        }
    }

    /// Model with the kernel transposed, used to evaluate densities and
    /// perturbation terms with the roles of the two spatial arguments
    /// exchanged.
    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        out.kernel = self.kernel.transpose();
        out
    }
}

/// Decay certificate making the singular integral of `|F|` finite near the
/// diagonal and grading the quadrature mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    /// `F(x,y) = 0` whenever `|x-y| < delta`.
    HardCutoff { delta: f64 },
    /// `|F(x,y)| <= lambda |x-y|^beta` for `|x-y| <= 1`, with `beta > alpha`.
    HolderDecay { beta: f64, lambda: f64 },
}

/// The perturbation functional `F` with its bound `L/2` and certificate.
#[derive(Clone)]
pub struct PerturbationF {
    pub f: PairFn,
    /// Declared bound: `|F| <= half_bound = L/2`.
    pub half_bound: f64,
    pub certificate: Certificate,
    /// Set when `F(x,y)` depends on the two points only through `y - x`;
    /// enables exact analytic tail completion in quadrature.
    pub profile: Option<PerturbProfile>,
}

/// Radial/translation profile of a built-in perturbation, used for analytic
/// tails of the singular integrals. The profile is a function of the signed
/// offset `u = y - x` in one dimension (of `|y - x|` above).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbProfile {
    Zero,
    /// `F(x,y) = c * 1{|x-y| >= delta}`.
    Threshold { c: f64, delta: f64 },
    /// `F(x,y) = c * 1{u >= delta}` (`toward_positive`) or
    /// `c * 1{u <= -delta}` (d = 1 only).
    ThresholdOneSided {
        c: f64,
        delta: f64,
        toward_positive: bool,
    },
    /// `F(x,y) = lambda * min(|x-y|, 1)^beta`, capped at `lambda` beyond
    /// unit distance.
    HolderBump { beta: f64, lambda: f64 },
}

impl PerturbProfile {
    /// Evaluates the profile at the signed offset `u = y - x`.
    pub fn eval_offset(&self, u: f64) -> f64 {
        match *self {
            PerturbProfile::Zero => 0.0,
            PerturbProfile::Threshold { c, delta } => {
                if u.abs() >= delta {
                    c
                } else {
                    0.0
                }
            }
            PerturbProfile::ThresholdOneSided {
                c,
                delta,
                toward_positive,
            } => {
                let hit = if toward_positive { u >= delta } else { u <= -delta };
                if hit {
                    c
                } else {
                    0.0
                }
            }
            PerturbProfile::HolderBump { beta, lambda } => lambda * u.abs().min(1.0).powf(beta),
        }
    }

    /// Profile of the transposed perturbation `F(y,x)`.
    pub fn transpose(&self) -> PerturbProfile {
        match *self {
            PerturbProfile::ThresholdOneSided {
                c,
                delta,
                toward_positive,
            } => PerturbProfile::ThresholdOneSided {
                c,
                delta,
                toward_positive: !toward_positive,
            },
            keep => keep,
        }
    }
}

impl fmt::Debug for PerturbationF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationF")
            .field("half_bound", &self.half_bound)
            .field("certificate", &self.certificate)
            .field("profile", &self.profile)
            .finish()
    }
}

impl PerturbationF {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f)(x, y)
    }

    /// The zero perturbation (conservative semigroup).
    pub fn zero() -> Self {
        PerturbationF {
            f: Arc::new(|_, _| 0.0),
            half_bound: 0.0,
            certificate: Certificate::HardCutoff { delta: 1.0 },
            profile: Some(PerturbProfile::Zero),
        }
    }

    /// `F(x,y) = c * 1{|x-y| >= delta}`, the workhorse baseline: on a
    /// constant-kernel model the functional `A_t` is compound Poisson.
    pub fn threshold(c: f64, delta: f64) -> Self {
        PerturbationF {
            f: Arc::new(move |x, y| if dist(x, y) >= delta { c } else { 0.0 }),
            half_bound: c.abs(),
            certificate: Certificate::HardCutoff { delta },
            profile: Some(PerturbProfile::Threshold { c, delta }),
        }
    }

    /// One-sided variant `F(x,y) = c * 1{y - x >= delta}` (d = 1), whose
    /// symmetrization recovers the two-sided threshold.
    pub fn threshold_one_sided(c: f64, delta: f64) -> Self {
        PerturbationF {
            f: Arc::new(move |x, y| if y[0] - x[0] >= delta { c } else { 0.0 }),
            half_bound: c.abs(),
            certificate: Certificate::HardCutoff { delta },
            profile: Some(PerturbProfile::ThresholdOneSided {
                c,
                delta,
                toward_positive: true,
            }),
        }
    }

    /// `F(x,y) = lambda * min(|x-y|,1)^beta`, Holder certificate.
    pub fn holder_bump(beta: f64, lambda: f64) -> Self {
        PerturbationF {
            f: Arc::new(move |x, y| lambda * dist(x, y).min(1.0).powf(beta)),
            half_bound: lambda.abs(),
            certificate: Certificate::HolderDecay { beta, lambda },
            profile: Some(PerturbProfile::HolderBump { beta, lambda }),
        }
    }

    /// Perturbation with swapped arguments, `F(y,x)`.
    pub fn transpose(&self) -> Self {
        let f = self.f.clone();
        PerturbationF {
            f: Arc::new(move |x, y| f(y, x)),
            half_bound: self.half_bound,
            certificate: self.certificate,
            profile: self.profile.map(|p| p.transpose()),
        }
    }
}

/// Symmetrized data: `Fbar(w,y) = |F(w,y)| + |F(y,w)|`, bounded by
/// `L = 2 * half_bound`.
#[derive(Clone)]
pub struct SymmetrizedModel {
    pub f_bar: PairFn,
    /// `L`, the bound on `Fbar`.
    pub bound_l: f64,
    pub certificate: Certificate,
    /// Radial profile of `Fbar` when the source perturbation has one.
    pub profile: Option<PerturbProfile>,
}

impl fmt::Debug for SymmetrizedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetrizedModel")
            .field("bound_l", &self.bound_l)
            .field("certificate", &self.certificate)
            .field("profile", &self.profile)
            .finish()
    }
}

impl SymmetrizedModel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f_bar)(x, y)
    }
}

/// Builds `Fbar(w,y) = |F(w,y)| + |F(y,w)|`.
pub fn symmetrize(pert: &PerturbationF) -> SymmetrizedModel {
    let f = pert.f.clone();
    let profile = match pert.profile {
        Some(PerturbProfile::Zero) => Some(PerturbProfile::Zero),
        Some(PerturbProfile::Threshold { c, delta }) => Some(PerturbProfile::Threshold {
            c: 2.0 * c.abs(),
            delta,
        }),
        // |F(w,y)| + |F(y,w)| of the one-sided indicator is the two-sided one.
        Some(PerturbProfile::ThresholdOneSided { c, delta, .. }) => {
            Some(PerturbProfile::Threshold { c: c.abs(), delta })
        }
        Some(PerturbProfile::HolderBump { beta, lambda }) => Some(PerturbProfile::HolderBump {
            beta,
            lambda: 2.0 * lambda.abs(),
        }),
        None => None,
    };
    SymmetrizedModel {
        f_bar: Arc::new(move |x, y| f(x, y).abs() + f(y, x).abs()),
        bound_l: 2.0 * pert.half_bound,
        certificate: pert.certificate,
        profile,
    }
}

/// One violated invariant found while probing a model, with a witness point.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: String,
    pub witness: String,
}

/// Probe configuration for `validate_model`: a deterministic set of point
/// pairs in `[-r_probe, r_probe]^d`.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub pairs: usize,
    pub r_probe: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            pairs: 1000,
            r_probe: 10.0,
        }
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Deterministic low-discrepancy probe pairs (Kronecker sequence); the same
/// configuration always yields the same pairs.
fn probe_pairs(dim: usize, cfg: &ProbeConfig) -> Vec<([f64; MAX_DIM], [f64; MAX_DIM])> {
    // Coordinate-wise irrational strides; any fixed set works, these are
    // square roots of small primes.
    const STRIDES: [f64; 6] = [
        0.70710678118654752,  // sqrt(2)/2
        0.86602540378443865,  // sqrt(3)/2
        0.55901699437494742,  // sqrt(5)/4
        0.66143782776614765,  // sqrt(7)/4
        0.82915619758884996,  // sqrt(11)/4
        0.90138781886599728,  // sqrt(13)/4
    ];
    let mut out = Vec::with_capacity(cfg.pairs);
    for i in 0..cfg.pairs {
        let mut x = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        for k in 0..dim {
            x[k] = -cfg.r_probe + 2.0 * cfg.r_probe * frac((i as f64 + 0.5) * STRIDES[k]);
            y[k] = -cfg.r_probe + 2.0 * cfg.r_probe * frac((i as f64 + 0.5) * STRIDES[3 + k]);
        }
        out.push((x, y));
    }
    out
}

fn fmt_point(p: &[f64]) -> String {
    let coords: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
    format!("({})", coords.join(", "))
}

/// Samples every declared invariant of the model and the perturbation on a
/// deterministic probe grid and reports each violation with a witness.
/// An empty report means all sampled invariants hold.
pub fn validate_model(
    spec: &ModelSpec,
    pert: &PerturbationF,
    probe: &ProbeConfig,
) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |invariant: &str, witness: String| {
        report.push(Violation {
            invariant: invariant.to_string(),
            witness,
        });
    };

    if spec.dim == 0 || spec.dim > MAX_DIM {
        push("dimension in 1..=3", format!("d = {}", spec.dim));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 2.0) {
        push("alpha in (0, 2)", format!("alpha = {}", spec.alpha));
    }
    if !(spec.envelope_lo > 0.0 && spec.envelope_lo <= spec.envelope_hi) {
        push(
            "0 < envelope_lo <= envelope_hi",
            format!("M1 = {}, M2 = {}", spec.envelope_lo, spec.envelope_hi),
        );
    }
    if !(spec.m_lo > 0.0 && spec.m_lo <= spec.m_hi) {
        push(
            "0 < m_lo <= m_hi",
            format!("m_lo = {}, m_hi = {}", spec.m_lo, spec.m_hi),
        );
    }
    if spec.baseline == Baseline::CauchyClosedForm && (spec.dim != 1 || spec.alpha != 1.0) {
        push(
            "CauchyClosedForm requires d = 1 and alpha = 1",
            format!("d = {}, alpha = {}", spec.dim, spec.alpha),
        );
    }
    if let Certificate::HolderDecay { beta, .. } = pert.certificate {
        if beta <= spec.alpha {
            push(
                "Holder certificate requires beta > alpha",
                format!("beta = {}, alpha = {}", beta, spec.alpha),
            );
        }
    }

    let dim = spec.dim.clamp(1, MAX_DIM);
    for (x, y) in probe_pairs(dim, &ProbeConfig {
        pairs: probe.pairs,
        r_probe: probe.r_probe,
    }) {
        let xs = &x[..dim];
        let ys = &y[..dim];
        let kv = spec.kernel.eval(xs, ys);
        if !kv.is_finite() {
            push("kernel evaluates to a finite value", fmt_point(xs));
            break;
        }
        if kv < 0.0 || kv > spec.c_bar * (1.0 + 1e-12) {
            push(
                "kernel values lie in [0, c_bar]",
                format!("2C{} = {kv}", fmt_point(xs)),
            );
            break;
        }
        let mv = spec.density_m.eval(xs);
        if !mv.is_finite() {
            push("reference density evaluates to a finite value", fmt_point(xs));
            break;
        }
        if mv < spec.m_lo * (1.0 - 1e-12) || mv > spec.m_hi * (1.0 + 1e-12) {
            push(
                "reference density lies in [m_lo, m_hi]",
                format!("M{} = {mv}", fmt_point(xs)),
            );
            break;
        }
        let fd = pert.eval(xs, xs);
        if !fd.is_finite() {
            push(
                "perturbation evaluates to a finite value",
                fmt_point(xs),
            );
            break;
        }
        if fd != 0.0 {
            push(
                "F vanishes on the diagonal",
                format!("F{}{} = {fd}", fmt_point(xs), fmt_point(xs)),
            );
            break;
        }
        let fv = pert.eval(xs, ys);
        if !fv.is_finite() {
            push(
                "perturbation evaluates to a finite value",
                format!("{} -> {}", fmt_point(xs), fmt_point(ys)),
            );
            break;
        }
        if fv.abs() > pert.half_bound * (1.0 + 1e-12) {
            push(
                "half_bound violated",
                format!("|F{}{}| = {}", fmt_point(xs), fmt_point(ys), fv.abs()),
            );
            break;
        }
        let r = dist(xs, ys);
        match pert.certificate {
            Certificate::HardCutoff { delta } => {
                if r < delta && fv != 0.0 {
                    push(
                        "hard-cutoff certificate violated",
                        format!("|x-y| = {r} < {delta}, F = {fv}"),
                    );
                    break;
                }
            }
            Certificate::HolderDecay { beta, lambda } => {
                if r <= 1.0 && fv.abs() > lambda * r.powf(beta) * (1.0 + 1e-9) + 1e-300 {
                    push(
                        "Holder certificate violated",
                        format!("|F| = {} > lambda |x-y|^beta = {}", fv.abs(), lambda * r.powf(beta)),
                    );
                    break;
                }
            }
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_zero_perturbation_validates_clean() {
        let spec = ModelSpec::cauchy_baseline();
        let pert = PerturbationF::zero();
        let report = validate_model(&spec, &pert, &ProbeConfig::default());
        assert!(report.is_empty(), "unexpected violations: {report:?}");
    }

    #[test]
    fn threshold_satisfies_its_own_certificate() {
        let spec = ModelSpec::cauchy_baseline();
        let pert = PerturbationF::threshold(0.1, 0.5);
        let report = validate_model(&spec, &pert, &ProbeConfig::default());
        assert!(report.is_empty(), "unexpected violations: {report:?}");
    }

    #[test]
    fn undersized_half_bound_is_reported_with_witness() {
        let spec = ModelSpec::cauchy_baseline();
        let mut pert = PerturbationF::threshold(0.1, 0.5);
        pert.half_bound = 0.05;
        let report = validate_model(&spec, &pert, &ProbeConfig::default());
        assert!(
            report.iter().any(|v| v.invariant == "half_bound violated"),
            "expected a half_bound violation, got {report:?}"
        );
    }

    #[test]
    fn validation_is_deterministic() {
        let spec = ModelSpec::cauchy_baseline();
        let mut pert = PerturbationF::threshold(0.1, 0.5);
        pert.half_bound = 0.05;
        let a = validate_model(&spec, &pert, &ProbeConfig::default());
        let b = validate_model(&spec, &pert, &ProbeConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_threshold_doubles() {
        let pert = PerturbationF::threshold(0.1, 0.5);
        let sym = symmetrize(&pert);
        assert_eq!(sym.eval(&[0.0], &[1.0]), 0.2);
        assert_eq!(sym.eval(&[0.0], &[0.2]), 0.0);
        assert_eq!(sym.bound_l, 0.2);
    }

    #[test]
    fn one_sided_threshold_symmetrizes_to_two_sided() {
        let pert = PerturbationF::threshold_one_sided(0.1, 0.5);
        let sym = symmetrize(&pert);
        // |F(w,y)| + |F(y,w)| picks up exactly one ordering.
        assert_eq!(sym.eval(&[0.0], &[1.0]), 0.1);
        assert_eq!(sym.eval(&[1.0], &[0.0]), 0.1);
        assert_eq!(sym.eval(&[0.0], &[0.3]), 0.0);
        assert_eq!(
            sym.profile,
            Some(PerturbProfile::Threshold { c: 0.1, delta: 0.5 })
        );
    }

    #[test]
    fn zero_symmetrizes_to_zero() {
        let sym = symmetrize(&PerturbationF::zero());
        assert_eq!(sym.eval(&[0.3], &[-2.0]), 0.0);
        assert_eq!(sym.bound_l, 0.0);
    }

    #[test]
    fn symmetrization_is_symmetric_and_dominating_on_probes() {
        let pert = PerturbationF::threshold_one_sided(0.07, 0.25);
        let sym = symmetrize(&pert);
        for (x, y) in probe_pairs(1, &ProbeConfig::default()) {
            let xs = &x[..1];
            let ys = &y[..1];
            let fb = sym.eval(xs, ys);
            assert_eq!(fb, sym.eval(ys, xs));
            assert!(pert.eval(xs, ys).abs() <= fb);
            assert!(fb <= sym.bound_l);
        }
    }
}
