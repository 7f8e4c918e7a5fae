//! Finite-dimensional normed spaces.
//!
//! Elements are plain `nalgebra` column vectors. The norm is not baked into
//! the type; every operation that measures size takes a [`NormKind`], so the
//! same problem can be studied under the l1, l2 and l∞ geometries.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const POWER_ITERATION_TOL: f64 = 1e-10;
const POWER_ITERATION_CAP: usize = 10_000;
const SQUARE_AFTER: usize = 25;
const MAX_SQUARINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    /// The norm of the dual space under the standard pairing.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::Linf,
            NormKind::L2 => NormKind::L2,
            NormKind::Linf => NormKind::L1,
        }
    }

    pub const ALL: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::Linf];
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

impl FromStr for NormKind {
    type Err = DsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(NormKind::L1),
            "l2" | "2" => Ok(NormKind::L2),
            "linf" | "inf" | "l-inf" => Ok(NormKind::Linf),
            other => Err(DsmError::input(format!("unknown norm '{other}' (expected l1, l2 or linf)"))),
        }
    }
}

/// Fails with the offending coordinates if any entry is NaN or infinite.
pub fn check_finite(v: &Vector, what: &str) -> Result<()> {
    let bad: Vec<usize> = v
        .iter()
        .enumerate()
        .filter(|(_, x)| !x.is_finite())
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(DsmError::NonFinite {
            message: what.to_string(),
            coordinates: bad,
        })
    }
}

pub fn check_dims(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DsmError::input(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        )))
    }
}

pub fn norm(v: &Vector, kind: NormKind) -> Result<f64> {
    check_finite(v, "norm argument")?;
    Ok(norm_unchecked(v, kind))
}

/// Norm without the finiteness check, for inner loops on validated data.
pub(crate) fn norm_unchecked(v: &Vector, kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        NormKind::L2 => v.norm(),
        NormKind::Linf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    }
}

/// Value of the functional `h` on `u`: the bilinear pairing `Σ h_i u_i`.
pub fn dual_pair(h: &Vector, u: &Vector) -> Result<f64> {
    check_dims(h.len(), u.len(), "dual pairing")?;
    Ok(h.dot(u))
}

/// Operator norm of a square matrix induced by the vector norm `kind`.
///
/// l1 and l∞ use the exact column/row-sum formulas. For l2 the largest
/// singular value is found by power iteration on `MᵀM` started from the
/// normalized all-ones vector, with a dense SVD as the fallback when the
/// iteration hits its cap; diagonal matrices short-circuit to
/// `max |m_ii|`, which is exact in every p-norm.
pub fn induced_matrix_norm(m: &Matrix, kind: NormKind) -> Result<f64> {
    if !m.is_square() {
        return Err(DsmError::input(format!(
            "induced norm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(DsmError::NonFinite {
            message: "matrix entries".into(),
            coordinates: Vec::new(),
        });
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if is_diagonal(m) {
        return Ok(m.diagonal().iter().fold(0.0_f64, |a, x| a.max(x.abs())));
    }
    match kind {
        NormKind::L1 => Ok(m
            .column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormKind::Linf => Ok(m
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormKind::L2 => spectral_norm(m),
    }
}

pub(crate) fn is_diagonal(m: &Matrix) -> bool {
    let n = m.nrows();
    (0..m.ncols()).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0))
}

fn spectral_norm(m: &Matrix) -> Result<f64> {
    let n = m.ncols();
    let mut v = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma = (m * &v).norm();
    if sigma == 0.0 {
        // The all-ones start lies in the kernel; restart on the heaviest column.
        let j = (0..n)
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
            .unwrap_or(0);
        if m.column(j).norm() == 0.0 {
            return Ok(0.0);
        }
        v = Vector::zeros(n);
        v[j] = 1.0;
        sigma = m.column(j).norm();
    }
    // Clustered top singular values stall the plain iteration; after every
    // SQUARE_AFTER steps without convergence the operator MᵀM is replaced by
    // its normalized square, raising all eigenvalue ratios to the power two.
    let mut op: Option<Matrix> = None;
    let mut squarings = 0;
    let mut prev_delta: Option<f64> = None;
    for it in 1..=POWER_ITERATION_CAP {
        let w = match &op {
            None => m.tr_mul(&(m * &v)),
            Some(b) => b * &v,
        };
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(sigma);
        }
        v = w / wn;
        let next = (m * &v).norm();
        let delta = (next - sigma).abs();
        // The estimates approach σ geometrically, so the remaining error is
        // about delta·q/(1-q) with q the observed contraction of the changes.
        let remaining = match prev_delta {
            _ if delta == 0.0 => 0.0,
            Some(p) if p > 0.0 && delta < p => {
                let q = delta / p;
                delta * q / (1.0 - q)
            }
            _ => f64::INFINITY,
        };
        if delta <= POWER_ITERATION_TOL * next && remaining <= POWER_ITERATION_TOL * next {
            return Ok(next.max(sigma));
        }
        prev_delta = Some(delta);
        sigma = next;
        if it % SQUARE_AFTER == 0 && squarings < MAX_SQUARINGS {
            let b = op.take().unwrap_or_else(|| m.tr_mul(m));
            let sq = &b * &b;
            let scale = sq.amax();
            op = Some(if scale > 0.0 { sq / scale } else { sq });
            squarings += 1;
            prev_delta = None;
        }
    }
    // A cluster tighter than the tolerance never separates; fall back to a
    // dense SVD before giving up.
    log::debug!("power iteration stalled at {sigma}; falling back to SVD");
    match m.clone().try_svd(false, false, f64::EPSILON, 0) {
        Some(svd) => Ok(svd.singular_values.max().max(sigma)),
        None => Err(DsmError::PowerIteration {
            iterations: POWER_ITERATION_CAP,
            last_estimate: sigma,
        }),
    }
}

/// A random direction scaled to unit length in `kind`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize, kind: NormKind) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let len = norm_unchecked(&v, kind);
        if len > 0.0 {
            return v / len;
        }
    }
}

/// A point drawn uniformly from the closed ball `B(center, radius)` of `kind`.
pub fn sample_ball<R: Rng + ?Sized>(
    rng: &mut R,
    center: &Vector,
    radius: f64,
    kind: NormKind,
) -> Vector {
    let n = center.len();
    let offset = match kind {
        NormKind::L2 => {
            let dir = random_unit(rng, n, NormKind::L2);
            let u: f64 = rng.random();
            dir * (radius * u.powf(1.0 / n as f64))
        }
        NormKind::Linf => Vector::from_fn(n, |_, _| radius * rng.random_range(-1.0..=1.0)),
        NormKind::L1 => {
            // n+1 exponentials normalized by their total give a uniform point
            // of the simplex interior; random signs spread it over the l1 ball.
            let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            Vector::from_fn(n, |i, _| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * radius * e[i] / total
            })
        }
    };
    center + offset
}

/// Serde adapter that writes a vector as a flat JSON array.
pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(Vector::from_vec(data))
    }

    pub mod option {
        use super::Vector;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<Vector>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => s.collect_seq(v.iter()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vector>, D::Error> {
            Ok(Option::<Vec<f64>>::deserialize(d)?.map(Vector::from_vec))
        }
    }

    pub mod list {
        use super::Vector;
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(vs.len()))?;
            for v in vs {
                seq.serialize_element(v.as_slice())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
            Ok(Vec::<Vec<f64>>::deserialize(d)?
                .into_iter()
                .map(Vector::from_vec)
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&dvector![3.0, 4.0], NormKind::L2).unwrap(), 5.0);
        assert_eq!(norm(&dvector![3.0, 4.0], NormKind::L1).unwrap(), 7.0);
        assert_eq!(norm(&dvector![3.0, -4.0], NormKind::Linf).unwrap(), 4.0);
        assert_eq!(norm(&dvector![0.0, 0.0], NormKind::L1).unwrap(), 0.0);
    }

    #[test]
    fn norm_rejects_non_finite() {
        let err = norm(&dvector![1.0, f64::NAN, f64::INFINITY], NormKind::L2).unwrap_err();
        match err {
            DsmError::NonFinite { coordinates, .. } => assert_eq!(coordinates, vec![1, 2]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dual_norms() {
        assert_eq!(NormKind::L1.dual(), NormKind::Linf);
        assert_eq!(NormKind::Linf.dual(), NormKind::L1);
        assert_eq!(NormKind::L2.dual(), NormKind::L2);
    }

    #[test]
    fn pairing_examples() {
        assert_eq!(dual_pair(&dvector![1.0, 0.0], &dvector![5.0, 7.0]).unwrap(), 5.0);
        assert_eq!(dual_pair(&dvector![1.0, 1.0], &dvector![2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(dual_pair(&dvector![0.0, 0.0], &dvector![-2.5, 9.0]).unwrap(), 0.0);
        assert!(dual_pair(&dvector![1.0], &dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn matrix_norm_examples() {
        let d = dmatrix![2.0, 0.0; 0.0, 3.0];
        assert_eq!(induced_matrix_norm(&d, NormKind::L2).unwrap(), 3.0);
        let u = dmatrix![1.0, 1.0; 0.0, 1.0];
        assert_eq!(induced_matrix_norm(&u, NormKind::Linf).unwrap(), 2.0);
        assert_eq!(induced_matrix_norm(&u, NormKind::L1).unwrap(), 2.0);
        // Hand SVD: [[0,1],[0,0]] has singular values {1, 0}.
        let nil = dmatrix![0.0, 1.0; 0.0, 0.0];
        let s = induced_matrix_norm(&nil, NormKind::L2).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn spectral_norm_matches_golden_ratio() {
        // [[1,1],[0,1]] has largest singular value (1+√5)/2.
        let u = dmatrix![1.0, 1.0; 0.0, 1.0];
        let s = induced_matrix_norm(&u, NormKind::L2).unwrap();
        let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((s - golden).abs() < 1e-9 * golden, "{s}");
    }

    #[test]
    fn spectral_norm_when_start_vector_is_in_kernel() {
        let m = dmatrix![1.0, -1.0; 1.0, -1.0];
        let s = induced_matrix_norm(&m, NormKind::L2).unwrap();
        assert!((s - 2.0).abs() < 1e-9, "{s}");
        assert_eq!(induced_matrix_norm(&Matrix::zeros(3, 3), NormKind::L2).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_with_clustered_top_singular_values() {
        // (H + 0.01 I)⁻¹ for the 8x8 Hilbert matrix has its three largest
        // singular values within 1e-4 of each other.
        let h = Matrix::from_fn(8, 8, |i, j| 1.0 / (i + j + 1) as f64);
        let m = (h + Matrix::identity(8, 8) * 0.01).try_inverse().unwrap();
        let oracle = m.singular_values().max();
        let s = induced_matrix_norm(&m, NormKind::L2).unwrap();
        assert!((s - oracle).abs() <= 1e-9 * oracle, "{s} vs {oracle}");
    }

    #[test]
    fn non_square_rejected() {
        assert!(induced_matrix_norm(&Matrix::zeros(2, 3), NormKind::L1).is_err());
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = dvector![1.0, -2.0, 0.5];
        for kind in NormKind::ALL {
            for _ in 0..500 {
                let p = sample_ball(&mut rng, &c, 0.3, kind);
                assert!(norm_unchecked(&(p - &c), kind) <= 0.3 + 1e-15);
            }
            let d = random_unit(&mut rng, 4, kind);
            assert!((norm_unchecked(&d, kind) - 1.0).abs() < 1e-15);
        }
    }

    fn kind_strategy() -> impl Strategy<Value = NormKind> {
        prop_oneof![Just(NormKind::L1), Just(NormKind::L2), Just(NormKind::Linf)]
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vector> {
        proptest::collection::vec(-1e3..1e3_f64, n).prop_map(Vector::from_vec)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn norm_axioms(kind in kind_strategy(), (u, v) in (1usize..8).prop_flat_map(|n| (vec_strategy(n), vec_strategy(n))), a in -50.0..50.0_f64) {
            let nu = norm(&u, kind).unwrap();
            let nv = norm(&v, kind).unwrap();
            let nsum = norm(&(&u + &v), kind).unwrap();
            prop_assert!(nsum <= nu + nv + 1e-9 * (nu + nv));
            let scaled = norm(&(&u * a), kind).unwrap();
            prop_assert!((scaled - a.abs() * nu).abs() <= 1e-9 * (1.0 + scaled));
            prop_assert!(nu >= 0.0);
            prop_assert_eq!(nu == 0.0, u.iter().all(|x| *x == 0.0));
        }

        #[test]
        fn holder_inequality(kind in kind_strategy(), (h, u) in (1usize..8).prop_flat_map(|n| (vec_strategy(n), vec_strategy(n)))) {
            let pair = dual_pair(&h, &u).unwrap().abs();
            let bound = norm(&h, kind.dual()).unwrap() * norm(&u, kind).unwrap();
            prop_assert!(pair <= bound * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn induced_norm_dominates_ratios(
            kind in kind_strategy(),
            (m, v) in (1usize..6).prop_flat_map(|n| (
                proptest::collection::vec(-10.0..10.0_f64, n * n).prop_map(move |d| Matrix::from_vec(n, n, d)),
                vec_strategy(n),
            )),
        ) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let op = induced_matrix_norm(&m, kind).unwrap();
            let ratio = norm(&(&m * &v), kind).unwrap() / norm(&v, kind).unwrap();
            prop_assert!(ratio <= op * (1.0 + 1e-9) + 1e-12, "ratio {} > norm {}", ratio, op);
        }
    }
}
