//! Built-in test problems and CSV ingestion of user linear problems.
//!
//! | name             | operator                                  | known root        |
//! |------------------|-------------------------------------------|-------------------|
//! | `linear-diag`    | `Λu - f`, `Λ = diag(λ_i) ≥ 0`             | min-norm `Λ⁺f`    |
//! | `linear-hilbert` | `Hu - H·1`, `H_ij = 1/(i+j-1)`            | all-ones          |
//! | `cubic`          | `u + u³` componentwise                    | `0`               |
//! | `manufactured`   | `A0(u-y) + B[u-y, u-y]`, `A0` spd         | `y = A0 ψ`        |
//! | `counterexample` | `Λu - f`, `λ_i = i⁻²`, `f_i = i^(-β)`     | `i^(2-β)`         |

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::operator::{AnalyticConstants, ProblemOp};
use crate::space::{induced_matrix_norm, norm, random_unit, Matrix, NormKind, Vector};

pub struct ParamInfo {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub struct ProblemInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamInfo],
}

const RADIUS: ParamInfo = ParamInfo {
    key: "radius",
    default: "10(1+|y|) for linear problems, 1 otherwise",
    help: "radius of the domain ball",
};

pub const REGISTRY: &[ProblemInfo] = &[
    ProblemInfo {
        name: "linear-diag",
        summary: "F(u) = diag(lambda) u - f with lambda_i >= 0",
        params: &[
            ParamInfo { key: "lambda_min", default: "0", help: "smallest eigenvalue of the linear spacing" },
            ParamInfo { key: "lambda_max", default: "1", help: "largest eigenvalue of the linear spacing" },
            ParamInfo { key: "lambda_<i>", default: "-", help: "explicit eigenvalues, i = 1..n (all or none)" },
            ParamInfo { key: "f_<i>", default: "diag(lambda) 1", help: "explicit right-hand side, i = 1..n (all or none)" },
            RADIUS,
        ],
    },
    ProblemInfo {
        name: "linear-hilbert",
        summary: "F(u) = H u - H 1 with the n x n Hilbert matrix",
        params: &[RADIUS],
    },
    ProblemInfo {
        name: "cubic",
        summary: "F(u) = u + u^3 componentwise, root 0",
        params: &[RADIUS],
    },
    ProblemInfo {
        name: "manufactured",
        summary: "F(u) = A0 (u-y) + B[u-y, u-y] with spd A0, diagonal B and y = A0 psi",
        params: &[
            ParamInfo { key: "lambda_min", default: "0.5", help: "smallest eigenvalue of A0 (> 0)" },
            ParamInfo { key: "lambda_max", default: "2", help: "largest eigenvalue of A0" },
            ParamInfo { key: "b", default: "0.5", help: "magnitude of the diagonal quadratic term; M2 = 2|b|" },
            ParamInfo { key: "psi_norm", default: "0.1", help: "norm of the source element psi" },
            RADIUS,
        ],
    },
    ProblemInfo {
        name: "counterexample",
        summary: "F(u) = diag(i^-2) u - f with f_i = i^-beta",
        params: &[
            ParamInfo { key: "beta", default: "2", help: "decay exponent of the right-hand side" },
            RADIUS,
        ],
    },
];

pub fn problem_info(name: &str) -> Option<&'static ProblemInfo> {
    REGISTRY.iter().find(|p| p.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub norm: NormKind,
}

impl ProblemSpec {
    pub fn new(name: impl Into<String>, n: usize) -> Self {
        ProblemSpec {
            name: name.into(),
            n,
            params: BTreeMap::new(),
            seed: None,
            norm: NormKind::default(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }
}

/// Keyed access to a spec's parameters that rejects anything not consumed.
struct Params<'a> {
    spec: &'a ProblemSpec,
    used: Vec<String>,
}

impl<'a> Params<'a> {
    fn new(spec: &'a ProblemSpec) -> Result<Self> {
        if let Some((k, v)) = spec.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(DsmError::Spec(format!("parameter {k} = {v} is not finite")));
        }
        Ok(Params { spec, used: Vec::new() })
    }

    fn get(&mut self, key: &str) -> Option<f64> {
        let v = self.spec.params.get(key).copied();
        if v.is_some() {
            self.used.push(key.to_string());
        }
        v
    }

    fn or(&mut self, key: &str, default: f64) -> f64 {
        self.get(key).unwrap_or(default)
    }

    /// `prefix_1 ..= prefix_n`, all present or all absent.
    fn indexed(&mut self, prefix: &str) -> Result<Option<Vector>> {
        let n = self.spec.n;
        let vals: Vec<Option<f64>> = (1..=n).map(|i| self.get(&format!("{prefix}_{i}"))).collect();
        let present = vals.iter().filter(|v| v.is_some()).count();
        match present {
            0 => Ok(None),
            p if p == n => Ok(Some(Vector::from_iterator(n, vals.into_iter().flatten()))),
            p => Err(DsmError::Spec(format!(
                "{prefix}_<i> must be given for all i = 1..{n} or not at all ({p} given)"
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self.spec.params.keys().filter(|k| !self.used.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(DsmError::Spec(format!(
                "unknown parameter(s) for '{}': {:?}",
                self.spec.name, unknown
            )))
        }
    }
}

pub fn load_problem(spec: &ProblemSpec) -> Result<ProblemOp> {
    if spec.n == 0 {
        return Err(DsmError::Spec("dimension n must be at least 1".into()));
    }
    let mut p = Params::new(spec)?;
    let op = match spec.name.as_str() {
        "linear-diag" => linear_diag(spec, &mut p)?,
        "linear-hilbert" => linear_hilbert(spec, &mut p)?,
        "cubic" => cubic(spec, &mut p)?,
        "manufactured" => manufactured(spec, &mut p)?,
        "counterexample" => counterexample(spec, &mut p)?,
        other => {
            let names: Vec<&str> = REGISTRY.iter().map(|p| p.name).collect();
            return Err(DsmError::Spec(format!("unknown problem '{other}'; registered: {names:?}")));
        }
    };
    p.finish()?;
    Ok(op)
}

fn linear_radius(p: &mut Params, y_norm: f64) -> Result<f64> {
    positive(p.or("radius", 10.0 * (1.0 + y_norm)), "radius")
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(DsmError::Spec(format!("{what} must be positive, got {v}")))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vector {
    if n == 1 {
        return Vector::from_element(1, lo);
    }
    Vector::from_fn(n, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Diagonal linear problem with analytic data. `y` is attached when `f` lies
/// in the range of `Λ`.
fn diagonal_problem(name: &str, spec: &ProblemSpec, p: &mut Params, lam: Vector, f: Vector) -> Result<ProblemOp> {
    let n = spec.n;
    let solvable = (0..n).all(|i| lam[i] != 0.0 || f[i] == 0.0);
    let y = solvable.then(|| Vector::from_fn(n, |i, _| if lam[i] == 0.0 { 0.0 } else { f[i] / lam[i] }));
    let y_norm = y.as_ref().map_or(norm(&f, spec.norm)?, |y| norm(y, spec.norm).unwrap_or(0.0));
    let radius = linear_radius(p, y_norm)?;
    let m1 = lam.amax();
    let mut op = ProblemOp::linear(name, Matrix::from_diagonal(&lam), f)?
        .with_norm(spec.norm)
        .with_ball(Vector::zeros(n), radius)?
        .with_constants(AnalyticConstants {
            m1: Some(m1),
            m2: Some(0.0),
            m3: Some(0.0),
            c0: Some(1.0),
            k: Some(1.0),
        });
    if let Some(y) = y {
        let psi = Vector::from_fn(n, |i, _| if lam[i] == 0.0 { 0.0 } else { y[i] / lam[i] });
        op = op.with_solution(y)?.with_source(psi)?;
    }
    Ok(op)
}

fn linear_diag(spec: &ProblemSpec, p: &mut Params) -> Result<ProblemOp> {
    let n = spec.n;
    let lam = match p.indexed("lambda")? {
        Some(l) => {
            if p.get("lambda_min").is_some() || p.get("lambda_max").is_some() {
                return Err(DsmError::Spec("give either lambda_<i> or lambda_min/lambda_max, not both".into()));
            }
            l
        }
        None => {
            let lo = p.or("lambda_min", 0.0);
            let hi = p.or("lambda_max", 1.0);
            if hi < lo {
                return Err(DsmError::Spec(format!("lambda_max = {hi} < lambda_min = {lo}")));
            }
            linspace(lo, hi, n)
        }
    };
    if lam.iter().any(|l| *l < 0.0) {
        return Err(DsmError::Spec("linear-diag needs lambda_i >= 0".into()));
    }
    let f = match p.indexed("f")? {
        Some(f) => f,
        None => lam.clone(),
    };
    diagonal_problem("linear-diag", spec, p, lam, f)
}

pub fn hilbert_matrix(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

fn linear_hilbert(spec: &ProblemSpec, p: &mut Params) -> Result<ProblemOp> {
    let n = spec.n;
    let h = hilbert_matrix(n);
    let y = Vector::from_element(n, 1.0);
    let f = &h * &y;
    let radius = linear_radius(p, norm(&y, spec.norm)?)?;
    let m1 = induced_matrix_norm(&h, spec.norm)?;
    ProblemOp::linear("linear-hilbert", h, f)?
        .with_norm(spec.norm)
        .with_ball(Vector::zeros(n), radius)?
        .with_constants(AnalyticConstants {
            m1: Some(m1),
            m2: Some(0.0),
            m3: Some(0.0),
            c0: Some(1.0),
            k: Some(1.0),
        })
        .with_solution(y)
}

fn cubic(spec: &ProblemSpec, p: &mut Params) -> Result<ProblemOp> {
    let n = spec.n;
    let r = positive(p.or("radius", 1.0), "radius")?;
    ProblemOp::new("cubic", n, |u| u.map(|x| x + x * x * x))?
        .with_jacobian(|u| Matrix::from_diagonal(&u.map(|x| 1.0 + 3.0 * x * x)))
        .with_norm(spec.norm)
        .with_ball(Vector::zeros(n), r)?
        .with_constants(AnalyticConstants {
            m1: Some(1.0 + 3.0 * r * r),
            m2: Some(6.0 * r),
            m3: Some(6.0),
            // F'(u) ≥ I, so ‖(F'(u) + εI)⁻¹‖ ≤ 1 ≤ ε⁻¹.
            c0: Some(1.0),
            k: Some(1.0),
        })
        .with_solution(Vector::zeros(n))?
        .with_source(Vector::zeros(n))
}

/// Orthogonal factor of a QR decomposition of a Gaussian matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the result does not depend on the QR sign convention.
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn manufactured(spec: &ProblemSpec, p: &mut Params) -> Result<ProblemOp> {
    let n = spec.n;
    let lo = positive(p.or("lambda_min", 0.5), "lambda_min")?;
    let hi = p.or("lambda_max", 2.0);
    if hi < lo {
        return Err(DsmError::Spec(format!("lambda_max = {hi} < lambda_min = {lo}")));
    }
    let b = p.or("b", 0.5);
    let psi_norm = p.or("psi_norm", 0.1);
    if psi_norm < 0.0 {
        return Err(DsmError::Spec(format!("psi_norm must be >= 0, got {psi_norm}")));
    }
    let radius = positive(p.or("radius", 1.0), "radius")?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
    let q = random_orthogonal(&mut rng, n);
    let lam = linspace(lo, hi, n);
    let a0 = &q * Matrix::from_diagonal(&lam) * q.transpose();
    let a0 = (&a0 + a0.transpose()) * 0.5;
    let bdiag = Vector::from_fn(n, |_, _| if rng.random::<bool>() { b } else { -b });
    let psi = random_unit(&mut rng, n, spec.norm) * psi_norm;
    let y = &a0 * &psi;

    // ‖(A0 + εI)⁻¹‖ ≤ ‖Q‖ ‖Qᵀ‖ / (λ_min + ε); the factor is exactly 1 in L2.
    let c0 = match spec.norm {
        NormKind::L2 => 1.0,
        kind => induced_matrix_norm(&q, kind)? * induced_matrix_norm(&q.transpose(), kind)?,
    };
    let m1 = induced_matrix_norm(&a0, spec.norm)? + 2.0 * b.abs() * radius;

    let (ya, yj, a0j, ba, bj) = (y.clone(), y.clone(), a0.clone(), bdiag.clone(), bdiag);
    ProblemOp::new("manufactured", n, move |u| {
        let d = u - &ya;
        &a0 * &d + ba.component_mul(&d).component_mul(&d)
    })?
    .with_jacobian(move |u| {
        let d = u - &yj;
        &a0j + Matrix::from_diagonal(&(bj.component_mul(&d) * 2.0))
    })
    .with_norm(spec.norm)
    .with_ball(y.clone(), radius)?
    .with_constants(AnalyticConstants {
        m1: Some(m1),
        m2: Some(2.0 * b.abs()),
        m3: Some(0.0),
        c0: Some(c0),
        k: Some(1.0),
    })
    .with_solution(y)?
    .with_source(psi)
}

fn counterexample(spec: &ProblemSpec, p: &mut Params) -> Result<ProblemOp> {
    let n = spec.n;
    let beta = p.or("beta", 2.0);
    let lam = Vector::from_fn(n, |i, _| ((i + 1) as f64).powi(-2));
    let f = Vector::from_fn(n, |i, _| ((i + 1) as f64).powf(-beta));
    diagonal_problem("counterexample", spec, p, lam, f)
}

/// Reads an `n x n` matrix followed by one right-hand-side row. Blank lines
/// and lines starting with `#` are skipped.
pub fn load_linear_csv(path: &Path, norm_kind: NormKind) -> Result<ProblemOp> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut last_line = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        last_line = line;
        if let Some(first) = rows.first() {
            if record.len() != first.len() {
                return Err(DsmError::Parse {
                    line,
                    column: record.len().min(first.len()) + 1,
                    message: format!("row has {} fields, expected {}", record.len(), first.len()),
                });
            }
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DsmError::Parse {
                    line,
                    column: j + 1,
                    message: format!("'{cell}' is not a finite decimal number"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.first().map_or(0, |r| r.len());
    if n == 0 || rows.len() != n + 1 {
        return Err(DsmError::Parse {
            line: last_line,
            column: 1,
            message: format!(
                "expected an n x n matrix and one right-hand-side row; got {} rows of {} fields",
                rows.len(),
                n
            ),
        });
    }
    let m = Matrix::from_fn(n, n, |i, j| rows[i][j]);
    let f = Vector::from_row_slice(&rows[n]);
    let name = format!(
        "csv:{}",
        path.file_stem().map_or_else(|| "matrix".into(), |s| s.to_string_lossy())
    );
    let radius = 10.0 * (1.0 + norm(&f, norm_kind)?);
    ProblemOp::linear(name, m, f)?
        .with_norm(norm_kind)
        .with_ball(Vector::zeros(n), radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::jacobian;
    use nalgebra::dvector;

    #[test]
    fn cubic_values() {
        let op = load_problem(&ProblemSpec::new("cubic", 1)).unwrap();
        assert_eq!(op.eval(&dvector![2.0]).unwrap(), dvector![10.0]);
        assert_eq!(jacobian(&op, &dvector![1.0]).unwrap()[(0, 0)], 4.0);
        let c = op.constants();
        assert_eq!((c.m1, c.m2, c.m3), (Some(4.0), Some(6.0), Some(6.0)));
    }

    #[test]
    fn hilbert_entries() {
        let h = hilbert_matrix(3);
        let expected = Matrix::from_row_slice(3, 3, &[1.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 2.0, 1.0 / 3.0, 0.25, 1.0 / 3.0, 0.25, 0.2]);
        assert_eq!(h, expected);
    }

    #[test]
    fn linear_diag_attaches_root() {
        let spec = ProblemSpec::new("linear-diag", 2)
            .param("lambda_1", 1.0)
            .param("lambda_2", 0.5)
            .param("f_1", 1.0)
            .param("f_2", 0.5);
        let op = load_problem(&spec).unwrap();
        assert_eq!(op.known_solution().unwrap(), &dvector![1.0, 1.0]);
        assert_eq!(op.known_source().unwrap(), &dvector![1.0, 2.0]);
    }

    #[test]
    fn linear_diag_min_norm_root_with_zero_eigenvalue() {
        let op = load_problem(&ProblemSpec::new("linear-diag", 5)).unwrap();
        let y = op.known_solution().unwrap();
        assert_eq!(y, &dvector![0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unsolvable_diagonal_has_no_root() {
        let spec = ProblemSpec::new("linear-diag", 2)
            .param("lambda_1", 0.0)
            .param("lambda_2", 1.0)
            .param("f_1", 1.0)
            .param("f_2", 1.0);
        assert!(load_problem(&spec).unwrap().known_solution().is_none());
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(load_problem(&ProblemSpec::new("nope", 2)), Err(DsmError::Spec(_))));
        assert!(matches!(
            load_problem(&ProblemSpec::new("cubic", 2).param("gamma", 1.0)),
            Err(DsmError::Spec(_))
        ));
        assert!(matches!(
            load_problem(&ProblemSpec::new("linear-diag", 2).param("lambda_1", 1.0)),
            Err(DsmError::Spec(_))
        ));
        assert!(matches!(
            load_problem(&ProblemSpec::new("linear-diag", 2).param("lambda_min", -1.0)),
            Err(DsmError::Spec(_))
        ));
        assert!(matches!(
            load_problem(&ProblemSpec::new("manufactured", 2).param("lambda_min", 0.0)),
            Err(DsmError::Spec(_))
        ));
        assert!(matches!(load_problem(&ProblemSpec::new("cubic", 0)), Err(DsmError::Spec(_))));
    }

    #[test]
    fn every_builtin_root_is_a_root() {
        for info in REGISTRY {
            for n in [1, 4, 12] {
                for norm in NormKind::ALL {
                    let op = load_problem(&ProblemSpec::new(info.name, n).with_norm(norm)).unwrap();
                    let y = op.known_solution().unwrap();
                    let r = op.norm(&op.eval(y).unwrap());
                    assert!(r <= 1e-10 * (1.0 + op.norm(y)), "{} n={n}: {r}", info.name);
                }
            }
        }
    }

    #[test]
    fn manufactured_is_reproducible_and_consistent() {
        let spec = ProblemSpec::new("manufactured", 6).with_seed(3);
        let a = load_problem(&spec).unwrap();
        let b = load_problem(&spec).unwrap();
        assert_eq!(a.known_solution(), b.known_solution());
        let y = a.known_solution().unwrap();
        let psi = a.known_source().unwrap();
        assert!((a.norm(psi) - 0.1).abs() < 1e-14);
        let j = jacobian(&a, y).unwrap();
        assert!((&j * psi - y).amax() < 1e-14);
        assert!((&j - j.transpose()).amax() < 1e-15);
        assert!(j.clone().symmetric_eigenvalues().min() > 0.49);
        let other = load_problem(&spec.clone().with_seed(4)).unwrap();
        assert_ne!(other.known_solution(), a.known_solution());
    }

    #[test]
    fn counterexample_roots() {
        let op = load_problem(&ProblemSpec::new("counterexample", 4).param("beta", 4.0)).unwrap();
        let y = op.known_solution().unwrap();
        assert!((y - dvector![1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0]).amax() < 1e-15);
        assert!((op.known_source().unwrap() - Vector::from_element(4, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_orthogonal(&mut rng, 7);
        assert!((q.transpose() * &q - Matrix::identity(7, 7)).amax() < 1e-13);
    }
}
