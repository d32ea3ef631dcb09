//! Exact finite-sum algebra for discontinuous additive functionals.
//!
//! A path of the driving process carries finitely many recorded jumps; the
//! additive functional `A_t` is the running sum of the per-jump values
//! `f_j = F(X_{s_j-}, X_{s_j})`. Integrals against `dA` are finite sums over
//! jumps, so the power-expansion identities for `A_t^n` can be checked
//! exactly. All operations are generic over the scalar so the same code runs
//! on `f64` (production) and on arbitrary-precision rationals (test suite).

use num_traits::{FromPrimitive, One, Zero};
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Scalar ring required by the jump algebra. Implemented by `f64` and by
/// `num_rational::BigRational` among others.
pub trait Scalar:
    Clone
    + Zero
    + One
    + FromPrimitive
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
}

impl<T> Scalar for T where
    T: Clone
        + Zero
        + One
        + FromPrimitive
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + Neg<Output = T>
{
}

#[derive(Debug, Error)]
pub enum JumpError {
    #[error("query time {query} exceeds the horizon {horizon}")]
    BeyondHorizon { query: f64, horizon: f64 },
    #[error("jump times must be strictly increasing and positive (index {0})")]
    UnorderedTimes(usize),
    #[error("binomial ({n}, {i}) outside the exact range 0 <= i <= n <= 60")]
    BinomialRange { n: u32, i: u32 },
}

/// One recorded jump: its time and the value `F(X_{s-}, X_s)` it contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMark<T> {
    pub time: f64,
    pub value: T,
}

/// An ordered finite list of jump marks on `(0, t_horizon]`.
#[derive(Debug, Clone)]
pub struct JumpSequence<T> {
    marks: Vec<JumpMark<T>>,
    t_horizon: f64,
}

impl<T: Scalar> JumpSequence<T> {
    /// Builds a sequence, checking that times are strictly increasing,
    /// positive and within the horizon.
    pub fn new(marks: Vec<JumpMark<T>>, t_horizon: f64) -> Result<Self, JumpError> {
        let mut last = 0.0;
        for (idx, mark) in marks.iter().enumerate() {
            if !(mark.time > last) || mark.time > t_horizon {
                return Err(JumpError::UnorderedTimes(idx));
            }
            last = mark.time;
        }
        Ok(Self { marks, t_horizon })
    }

    pub fn from_pairs(pairs: &[(f64, T)], t_horizon: f64) -> Result<Self, JumpError> {
        Self::new(
            pairs
                .iter()
                .map(|(time, value)| JumpMark {
                    time: *time,
                    value: value.clone(),
                })
                .collect(),
            t_horizon,
        )
    }

    pub fn marks(&self) -> &[JumpMark<T>] {
        &self.marks
    }

    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// The piecewise-constant cadlag path of prefix sums.
    pub fn functional_path(&self) -> FunctionalPath<T> {
        let mut running = T::zero();
        let mut post = Vec::with_capacity(self.marks.len());
        for mark in &self.marks {
            running = running + mark.value.clone();
            post.push(running.clone());
        }
        FunctionalPath {
            times: self.marks.iter().map(|m| m.time).collect(),
            post,
        }
    }

    /// The reversed sequence with marks at `t_horizon - s_j`, reordered
    /// increasingly; used by the time-reversal duality between the two
    /// power expansions.
    pub fn reversed(&self) -> Self {
        let mut marks: Vec<JumpMark<T>> = self
            .marks
            .iter()
            .map(|m| JumpMark {
                time: self.t_horizon - m.time,
                value: m.value.clone(),
            })
            .collect();
        marks.reverse();
        Self {
            marks,
            t_horizon: self.t_horizon,
        }
    }
}

/// Prefix sums of a jump sequence: `A_{s_j}` post-jump and `A_{s_j-}`
/// pre-jump, with `A_0 = 0` and `A` constant between jumps.
#[derive(Debug, Clone)]
pub struct FunctionalPath<T> {
    times: Vec<f64>,
    post: Vec<T>,
}

impl<T: Scalar> FunctionalPath<T> {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `A_{s_j}` (post-jump value at the j-th jump).
    pub fn post(&self, j: usize) -> T {
        self.post[j].clone()
    }

    /// `A_{s_j-}` (value just before the j-th jump).
    pub fn pre(&self, j: usize) -> T {
        if j == 0 {
            T::zero()
        } else {
            self.post[j - 1].clone()
        }
    }

    /// `A_t` = value of the path at time `t`.
    pub fn at(&self, t: f64) -> T {
        let mut value = T::zero();
        for (idx, &time) in self.times.iter().enumerate() {
            if time <= t {
                value = self.post[idx].clone();
            } else {
                break;
            }
        }
        value
    }
}

/// View of one jump handed to a Stieltjes integrand: index, time, both the
/// pre- and post-jump values of `A`, and the jump increment itself.
#[derive(Debug, Clone)]
pub struct JumpView<T> {
    pub index: usize,
    pub time: f64,
    pub pre: T,
    pub post: T,
    pub increment: T,
}

/// `A_t = sum_{s_j <= t} f_j`.
pub fn additive_functional<T: Scalar>(seq: &JumpSequence<T>, t: f64) -> Result<T, JumpError> {
    if t > seq.t_horizon {
        return Err(JumpError::BeyondHorizon {
            query: t,
            horizon: seq.t_horizon,
        });
    }
    let mut total = T::zero();
    for mark in &seq.marks {
        if mark.time <= t {
            total = total + mark.value.clone();
        }
    }
    Ok(total)
}

/// `int_0^t g dA = sum_{s_j <= t} g(jump_j) * f_j`, with the integrand free
/// to read the pre-jump value, the post-jump value, or the increment.
pub fn stieltjes_integral<T: Scalar>(
    seq: &JumpSequence<T>,
    mut integrand: impl FnMut(&JumpView<T>) -> T,
    t: f64,
) -> Result<T, JumpError> {
    if t > seq.t_horizon {
        return Err(JumpError::BeyondHorizon {
            query: t,
            horizon: seq.t_horizon,
        });
    }
    let mut running = T::zero();
    let mut total = T::zero();
    for (index, mark) in seq.marks.iter().enumerate() {
        if mark.time > t {
            break;
        }
        let pre = running.clone();
        running = running + mark.value.clone();
        let view = JumpView {
            index,
            time: mark.time,
            pre,
            post: running.clone(),
            increment: mark.value.clone(),
        };
        total = total + integrand(&view) * mark.value.clone();
    }
    Ok(total)
}

/// Exact binomial coefficient `n!/(i!(n-i)!)` by the Pascal rule.
/// Values fit in `u64` for `n <= 60`.
pub fn binomial(n: u32, i: u32) -> Result<u64, JumpError> {
    if i > n || n > 60 {
        return Err(JumpError::BinomialRange { n, i });
    }
    let mut row = vec![1u64; 1];
    for m in 1..=n as usize {
        let mut next = vec![1u64; m + 1];
        for k in 1..m {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    Ok(row[i as usize])
}

fn binomial_scalar<T: Scalar>(n: u32, i: u32) -> Result<T, JumpError> {
    let value = binomial(n, i)?;
    T::from_u64(value).ok_or(JumpError::BinomialRange { n, i })
}

fn int_pow<T: Scalar>(base: &T, exp: u32) -> T {
    let mut out = T::one();
    for _ in 0..exp {
        out = out * base.clone();
    }
    out
}

/// Powers `base^0..=base^max` by repeated multiplication.
fn pow_table<T: Scalar>(base: &T, max: u32) -> Vec<T> {
    let mut table = Vec::with_capacity(max as usize + 1);
    table.push(T::one());
    for k in 1..=max {
        let next = table[k as usize - 1].clone() * base.clone();
        table.push(next);
    }
    table
}

fn expansion_terms<T: Scalar>(
    seq: &JumpSequence<T>,
    n: u32,
    t: f64,
    base_of: impl Fn(&JumpView<T>) -> T,
) -> Result<Vec<T>, JumpError> {
    // inner[i-1] = int_0^t base^{n-i} F^{i-1} dA, with all powers of one
    // jump drawn from a shared table.
    let mut inner = vec![T::zero(); n as usize];
    if t > seq.t_horizon {
        return Err(JumpError::BeyondHorizon {
            query: t,
            horizon: seq.t_horizon,
        });
    }
    let mut running = T::zero();
    for (index, mark) in seq.marks.iter().enumerate() {
        if mark.time > t {
            break;
        }
        let pre = running.clone();
        running = running + mark.value.clone();
        let view = JumpView {
            index,
            time: mark.time,
            pre,
            post: running.clone(),
            increment: mark.value.clone(),
        };
        let base_pows = pow_table(&base_of(&view), n - 1);
        let incr_pows = pow_table(&view.increment, n); // one extra for dA itself
        for i in 1..=n {
            let term = base_pows[(n - i) as usize].clone() * incr_pows[i as usize].clone();
            inner[i as usize - 1] = inner[i as usize - 1].clone() + term;
        }
    }
    Ok(inner)
}

/// Forward power expansion:
/// `A_t^n = sum_{i=1}^n (-1)^{i-1} C_n^i int_0^t A_s^{n-i} F^{i-1} dA_s`
/// with `A` taken post-jump. Returns `(lhs, rhs)` for residual inspection.
pub fn power_forward<T: Scalar>(
    seq: &JumpSequence<T>,
    n: u32,
    t: f64,
) -> Result<(T, T), JumpError> {
    assert!(n >= 1, "power expansion requires n >= 1");
    let a_t = additive_functional(seq, t)?;
    let lhs = int_pow(&a_t, n);
    let inner = expansion_terms(seq, n, t, |view| view.post.clone())?;
    let mut rhs = T::zero();
    for i in 1..=n {
        let term = binomial_scalar::<T>(n, i)? * inner[i as usize - 1].clone();
        rhs = if i % 2 == 1 { rhs + term } else { rhs - term };
    }
    Ok((lhs, rhs))
}

/// Backward power expansion:
/// `A_t^n = sum_{i=1}^n C_n^i int_0^t (A_t - A_s)^{n-i} F^{i-1} dA_s`,
/// all signs positive, `A` post-jump. Returns `(lhs, rhs)`.
pub fn power_backward<T: Scalar>(
    seq: &JumpSequence<T>,
    n: u32,
    t: f64,
) -> Result<(T, T), JumpError> {
    assert!(n >= 1, "power expansion requires n >= 1");
    let a_t = additive_functional(seq, t)?;
    let lhs = int_pow(&a_t, n);
    let inner = expansion_terms(seq, n, t, |view| a_t.clone() - view.post.clone())?;
    let mut rhs = T::zero();
    for i in 1..=n {
        rhs = rhs + binomial_scalar::<T>(n, i)? * inner[i as usize - 1].clone();
    }
    Ok((lhs, rhs))
}

/// Relative residual `|lhs - rhs| / max(1, |lhs|)` of a floating-point
/// identity check.
pub fn relative_residual(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

/// Conditioning scale of the degree-`n` expansion on a float sequence: the
/// alternating sums carry terms up to `(sum |f_j|)^n`, so residuals are
/// meaningful relative to `max(1, (sum |f_j|)^n)`.
pub fn identity_scale(seq: &JumpSequence<f64>, n: u32, t: f64) -> f64 {
    let total: f64 = seq
        .marks
        .iter()
        .filter(|m| m.time <= t)
        .map(|m| m.value.abs())
        .sum();
    total.powi(n as i32).max(1.0)
}

/// Residual of the identity normalized by its conditioning scale.
pub fn scaled_residual(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mark_seq() -> JumpSequence<f64> {
        JumpSequence::from_pairs(&[(0.3, 1.0), (0.7, 2.0)], 1.0).unwrap()
    }

    #[test]
    fn additive_functional_counts_jumps_up_to_t() {
        let seq = two_mark_seq();
        assert_eq!(additive_functional(&seq, 0.5).unwrap(), 1.0);
        assert_eq!(additive_functional(&seq, 1.0).unwrap(), 3.0);
        let empty = JumpSequence::<f64>::from_pairs(&[], 1.0).unwrap();
        assert_eq!(additive_functional(&empty, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn additive_functional_rejects_beyond_horizon() {
        let seq = two_mark_seq();
        assert!(matches!(
            additive_functional(&seq, 1.5),
            Err(JumpError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn stieltjes_hand_examples() {
        let seq = two_mark_seq();
        // integrand = post-jump A: 1*1 + 3*2 = 7
        let post = stieltjes_integral(&seq, |v| v.post, 1.0).unwrap();
        assert_eq!(post, 7.0);
        // integrand = increment: 1*1 + 2*2 = 5
        let incr = stieltjes_integral(&seq, |v| v.increment, 1.0).unwrap();
        assert_eq!(incr, 5.0);
        // integrand = 1 integrates dA to A_t
        let one = stieltjes_integral(&seq, |_| 1.0, 1.0).unwrap();
        assert_eq!(one, 3.0);
    }

    #[test]
    fn power_forward_hand_examples() {
        let seq = two_mark_seq();
        let (lhs, rhs) = power_forward(&seq, 2, 1.0).unwrap();
        assert_eq!((lhs, rhs), (9.0, 9.0)); // 2*7 - 5
        let (lhs, rhs) = power_forward(&seq, 3, 1.0).unwrap();
        assert_eq!((lhs, rhs), (27.0, 27.0)); // 3*19 - 3*13 + 9
    }

    #[test]
    fn power_backward_hand_examples() {
        let seq = two_mark_seq();
        let (lhs, rhs) = power_backward(&seq, 2, 1.0).unwrap();
        assert_eq!((lhs, rhs), (9.0, 9.0)); // 2*(2*1 + 0*2) + 5
        let empty = JumpSequence::<f64>::from_pairs(&[], 1.0).unwrap();
        for n in 1..=5 {
            let (lhs, rhs) = power_backward(&empty, n, 1.0).unwrap();
            assert_eq!((lhs, rhs), (0.0, 0.0));
        }
    }

    #[test]
    fn single_mark_collapses_to_pure_power() {
        let f: f64 = 1.75;
        let seq = JumpSequence::from_pairs(&[(0.5, f)], 1.0).unwrap();
        for n in 1..=6 {
            let (lhs, rhs) = power_forward(&seq, n, 1.0).unwrap();
            assert!((lhs - f.powi(n as i32)).abs() < 1e-12);
            assert!((lhs - rhs).abs() < 1e-12);
            let (lhs_b, rhs_b) = power_backward(&seq, n, 1.0).unwrap();
            assert!((lhs_b - rhs_b).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_table_values() {
        assert_eq!(binomial(4, 2).unwrap(), 6);
        assert_eq!(binomial(10, 0).unwrap(), 1);
        assert_eq!(binomial(10, 3).unwrap(), 120);
        assert_eq!(binomial(60, 30).unwrap(), 118264581564861424);
        assert!(binomial(61, 2).is_err());
        assert!(binomial(5, 6).is_err());
    }

    #[test]
    fn pascal_identity_full_range() {
        for m in 2..=60u32 {
            for i in 1..m {
                let lhs = binomial(m - 1, i).unwrap() + binomial(m - 1, i - 1).unwrap();
                assert_eq!(lhs, binomial(m, i).unwrap());
            }
        }
    }

    #[test]
    fn functional_path_conventions() {
        let seq = two_mark_seq();
        let path = seq.functional_path();
        assert_eq!(path.pre(0), 0.0);
        assert_eq!(path.post(0), 1.0);
        assert_eq!(path.pre(1), 1.0);
        assert_eq!(path.post(1), 3.0);
        assert_eq!(path.at(0.0), 0.0);
        assert_eq!(path.at(0.65), 1.0);
        assert_eq!(path.at(0.9), 3.0);
    }

    #[test]
    fn pre_jump_convention_breaks_the_square_identity() {
        // The n = 2 identity pins the post-jump convention: replacing A_s by
        // A_{s-} in the forward formula yields -f^2 on a single jump.
        let f = 2.0;
        let seq = JumpSequence::from_pairs(&[(0.5, f)], 1.0).unwrap();
        let wrong = 2.0 * stieltjes_integral(&seq, |v| v.pre, 1.0).unwrap()
            - stieltjes_integral(&seq, |v| v.increment, 1.0).unwrap();
        assert_eq!(wrong, -f * f);
        let (lhs, rhs) = power_forward(&seq, 2, 1.0).unwrap();
        assert_eq!(lhs, f * f);
        assert_eq!(rhs, f * f);
    }
}
