//! Spectral machinery: stationary distributions by power iteration, second
//! eigenvalues by dense eigensolve, the lazy chain, time reversal, additive
//! reversibilization and the total-variation convergence bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{StochasticMatrix, Stochasticity};
use crate::scalar::{real, to_f64, Scalar};

/// Residual tolerance for power iteration on the transpose.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Iteration cap for power iteration.
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;
/// Full dense eigensolves are refused above this dimension.
pub const EIGEN_DIM_CAP: usize = 2000;

#[derive(Debug, Clone)]
pub struct SpectralReport<T: Scalar> {
    /// Modulus of the second-largest-in-modulus eigenvalue.
    pub lambda2: T,
    /// Stationary distribution of the row-stochastic chain.
    pub stationary: DVector<T>,
    /// `1 - lambda2`.
    pub gap: T,
}

/// Stationary distribution of a row-stochastic chain by power iteration on
/// the transpose. The caller guarantees irreducibility and aperiodicity;
/// reducible support is detected up front and non-convergence (e.g. a
/// periodic chain) errors out at the iteration cap with the best residual.
pub fn stationary_distribution<T: Scalar>(p: &StochasticMatrix<T>) -> Result<DVector<T>> {
    stationary_distribution_with(p, real(STATIONARY_TOL), STATIONARY_MAX_ITERS)
}

pub fn stationary_distribution_with<T: Scalar>(
    p: &StochasticMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<DVector<T>> {
    if !p.is_row_stochastic() {
        return Err(Error::NotStochastic {
            expected: "row",
            detail: format!("stationary distribution needs a row-stochastic tag, got {}", p.tag().label()),
        });
    }
    if !p.walk_support().is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = p.dim();
    if n == 1 {
        return Ok(DVector::from_element(1, T::one()));
    }
    let pt = p.as_matrix().transpose();
    let mut x = DVector::from_element(n, T::one() / real::<T>(n as f64));
    let mut best = T::max_value().unwrap();
    let mut stagnant = 0usize;
    for iter in 0..max_iters {
        let mut y = &pt * &x;
        let mass = y.iter().fold(T::zero(), |a, &v| a + v);
        y /= mass;
        let residual = (0..n)
            .map(|i| (y[i] - x[i]).abs())
            .fold(T::zero(), |a, v| a.max(v));
        x = y;
        if residual < best {
            best = residual;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        // once under the contract tolerance, keep refining until the
        // iteration hits its floating-point floor
        if residual <= tol && (stagnant >= 20 || residual == T::zero()) {
            return Ok(x);
        }
        if iter + 1 == max_iters && best <= tol {
            return Ok(x);
        }
        if stagnant >= 200 && best > tol {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: to_f64(best),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: to_f64(best),
    })
}

/// Modulus of the second-largest-in-modulus eigenvalue, by full dense
/// eigensolve with deterministic ordering (modulus descending, then real
/// part descending). Dimension 1 reports 0.
pub fn second_eigenvalue<T: Scalar>(p: &StochasticMatrix<T>) -> Result<T> {
    second_eigenvalue_raw(p.as_matrix())
}

pub fn second_eigenvalue_raw<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("eigensolve needs a square matrix".into()));
    }
    if m.nrows() > EIGEN_DIM_CAP {
        return Err(Error::Dimension(format!(
            "dimension {} exceeds the dense eigensolve cap {EIGEN_DIM_CAP}; use the power-iteration path",
            m.nrows()
        )));
    }
    if m.nrows() <= 1 {
        return Ok(T::zero());
    }
    let ev = m.clone().complex_eigenvalues();
    let mut sorted: Vec<(T, T)> = ev.iter().map(|c| (c.re.hypot(c.im), c.re)).collect();
    sorted.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
    });
    Ok(sorted[1].0)
}

/// Second-largest eigenvalue (signed, real spectrum) of a chain `u` that is
/// reversible with respect to `pi`, via the similarity transform
/// `S = D^{1/2} U D^{-1/2}` and a symmetric eigensolve. Much faster than the
/// general path on the large augmented systems.
pub fn second_eigenvalue_reversible<T: Scalar>(u: &DMatrix<T>, pi: &DVector<T>) -> Result<T> {
    let n = u.nrows();
    if n != u.ncols() || pi.len() != n {
        return Err(Error::Dimension(
            "reversible eigensolve needs square matrix and matching pi".into(),
        ));
    }
    if n > EIGEN_DIM_CAP {
        return Err(Error::Dimension(format!(
            "dimension {n} exceeds the dense eigensolve cap {EIGEN_DIM_CAP}"
        )));
    }
    if n <= 1 {
        return Ok(T::zero());
    }
    if pi.iter().any(|&x| x <= T::zero()) {
        return Err(Error::invalid("stationary entries must be positive"));
    }
    let sqrt_pi: Vec<T> = pi.iter().map(|&x| x.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = sqrt_pi[i] * u[(i, j)] / sqrt_pi[j];
        }
    }
    // detailed balance makes S symmetric up to rounding; fold the residue
    let s = (&s + s.transpose()) * real::<T>(0.5);
    let mut ev: Vec<T> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(ev[1])
}

/// Lazy chain `(I + P) / 2`: strongly aperiodic, same stationary distribution.
pub fn lazy<T: Scalar>(p: &StochasticMatrix<T>) -> Result<StochasticMatrix<T>> {
    if !p.is_row_stochastic() {
        return Err(Error::NotStochastic {
            expected: "row",
            detail: format!("lazy chain needs a row-stochastic tag, got {}", p.tag().label()),
        });
    }
    let n = p.dim();
    let half = real::<T>(0.5);
    let data = (p.as_matrix() + DMatrix::<T>::identity(n, n)) * half;
    StochasticMatrix::new(data, p.tag())
}

/// Time-reversed chain `P~(i, j) = pi_j p_ji / pi_i`.
pub fn time_reversal<T: Scalar>(
    p: &StochasticMatrix<T>,
    pi: &DVector<T>,
) -> Result<StochasticMatrix<T>> {
    if !p.is_row_stochastic() {
        return Err(Error::NotStochastic {
            expected: "row",
            detail: format!("time reversal needs a row-stochastic tag, got {}", p.tag().label()),
        });
    }
    let n = p.dim();
    if pi.len() != n {
        return Err(Error::Dimension("pi length must match matrix".into()));
    }
    if let Some(i) = pi.iter().position(|&x| x <= T::zero()) {
        return Err(Error::invalid(format!(
            "stationary entry {i} is not positive; time reversal undefined"
        )));
    }
    let data = DMatrix::from_fn(n, n, |i, j| pi[j] * p.get(j, i) / pi[i]);
    // pi must be stationary for p; allow a little slack over the tag
    // tolerance for the division by small pi entries
    StochasticMatrix::with_tol(data, Stochasticity::Row, real(1e-9))
}

/// Additive reversibilization `U(P) = (P + P~) / 2`; reversible with respect
/// to `pi`, real spectrum.
pub fn additive_reversibilization<T: Scalar>(
    p: &StochasticMatrix<T>,
    pi: &DVector<T>,
) -> Result<StochasticMatrix<T>> {
    let rev = time_reversal(p, pi)?;
    let data = (p.as_matrix() + rev.as_matrix()) * real::<T>(0.5);
    StochasticMatrix::with_tol(data, Stochasticity::Row, real(1e-9))
}

/// Squared total-variation bound `lambda2(U)^t / (4 pi_i)`.
pub fn tv_bound<T: Scalar>(u_lambda2: T, pi_i: T, t: u32) -> Result<T> {
    if pi_i <= T::zero() {
        return Err(Error::invalid("pi_i must be positive"));
    }
    if u_lambda2 < T::zero() || u_lambda2 >= T::one() {
        return Err(Error::invalid("u_lambda2 must lie in [0, 1)"));
    }
    Ok(u_lambda2.powi(t as i32) / (real::<T>(4.0) * pi_i))
}

/// Total-variation distance `0.5 * sum |a_i - b_i|`.
pub fn tv_distance<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> T {
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs();
    }
    acc * real::<T>(0.5)
}

/// Stationary distribution, second eigenvalue and spectral gap in one report.
pub fn spectral_report<T: Scalar>(p: &StochasticMatrix<T>) -> Result<SpectralReport<T>> {
    let stationary = stationary_distribution(p)?;
    let lambda2 = second_eigenvalue(p)?;
    Ok(SpectralReport {
        lambda2,
        stationary,
        gap: T::one() - lambda2,
    })
}
