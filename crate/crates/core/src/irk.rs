//! Gauss-Legendre implicit Runge-Kutta tableaux and the stage-prediction
//! operators used by discrete-time training.
//!
//! Tableaux are generated in 512-bit software arithmetic because the
//! coefficient systems are hopelessly ill-conditioned in f64 beyond a few
//! dozen stages, then rounded to f64 and cached as text files keyed by the
//! stage count. The a-matrix comes from a Legendre-series form of the
//! Lagrange basis rather than a Vandermonde solve:
//!
//!   a_ij = b_j · (c_i + 1/2 · Σ_{k=1}^{q-1} P_k(x_j)(P_{k+1}(x_i) − P_{k−1}(x_i)))
//!
//! where x = 2c − 1 are the Legendre roots. The sum is the exact integral of
//! the j-th Lagrange basis polynomial over [0, c_i], expanded in Legendre
//! polynomials via the quadrature rule's own discrete orthogonality.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::precision::Scalar;
use crate::tape::{Tape, Tensor};

const PREC: usize = 512;
const RM: RoundingMode = RoundingMode::ToEven;

/// Coefficients of one q-stage implicit Runge-Kutta scheme; `a` is row-major
/// [q, q], nodes `c` strictly increase inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub q: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.q + j]
    }

    /// Worst absolute defect of the order conditions
    /// Σ_j b_j c_j^(k−1) = 1/k and Σ_j a_ij c_j^(k−1) = c_i^k / k
    /// over k = 1..=k_max, evaluated in f64.
    pub fn order_condition_defects(&self, k_max: usize) -> (f64, f64) {
        let q = self.q;
        let mut worst_b = 0.0f64;
        let mut worst_a = 0.0f64;
        for k in 1..=k_max {
            let pow = |x: f64| x.powi(k as i32 - 1);
            let sb: f64 = (0..q).map(|j| self.b[j] * pow(self.c[j])).sum();
            worst_b = worst_b.max((sb - 1.0 / k as f64).abs());
            for i in 0..q {
                let sa: f64 = (0..q).map(|j| self.a(i, j) * pow(self.c[j])).sum();
                worst_a = worst_a.max((sa - self.c[i].powi(k as i32) / k as f64).abs());
            }
        }
        (worst_b, worst_a)
    }

    /// Worst |c_i + c_{q+1−i} − 1| over the node pairs.
    pub fn node_symmetry_defect(&self) -> f64 {
        (0..self.q)
            .map(|i| (self.c[i] + self.c[self.q - 1 - i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// One scheme step for the scalar ODE u' = λu: solves the stage system
    /// (I − Δt λ A) U = u0 and returns u0 + Δt λ bᵀU.
    pub fn apply_linear_ode(&self, lambda: f64, dt: f64, u0: f64) -> f64 {
        let q = self.q;
        let mut m = vec![0.0f64; q * q];
        for i in 0..q {
            for j in 0..q {
                m[i * q + j] = -dt * lambda * self.a(i, j);
            }
            m[i * q + i] += 1.0;
        }
        let mut rhs = vec![u0; q];
        solve_dense(q, &mut m, &mut rhs);
        let quad: f64 = (0..q).map(|j| self.b[j] * rhs[j]).sum();
        u0 + dt * lambda * quad
    }
}

/// In-place Gaussian elimination with partial pivoting; `m` is row-major
/// [n, n] and `rhs` becomes the solution.
fn solve_dense(n: usize, m: &mut [f64], rhs: &mut [f64]) {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))
            .unwrap();
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            rhs.swap(col, pivot);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    for col in (0..n).rev() {
        rhs[col] /= m[col * n + col];
        for row in 0..col {
            rhs[row] -= m[row * n + col] * rhs[col];
        }
    }
}

struct Big {
    cc: Consts,
}

impl Big {
    fn new() -> Self {
        Self {
            cc: Consts::new().expect("constants cache"),
        }
    }

    fn from(v: f64) -> BigFloat {
        BigFloat::from_f64(v, PREC)
    }

    fn int(v: usize) -> BigFloat {
        BigFloat::from_f64(v as f64, PREC)
    }

    fn to_f64(&mut self, v: &BigFloat) -> f64 {
        if v.is_zero() {
            return 0.0;
        }
        let s = v
            .format(Radix::Dec, RM, &mut self.cc)
            .expect("finite tableau value");
        s.parse::<f64>().expect("formatted float parses")
    }
}

fn add(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.add(b, PREC, RM)
}
fn sub(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.sub(b, PREC, RM)
}
fn mul(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.mul(b, PREC, RM)
}
fn div(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.div(b, PREC, RM)
}

/// P_0..P_n at x via the three-term recurrence k·P_k = (2k−1)x·P_{k−1} − (k−1)P_{k−2}.
fn legendre_all(n: usize, x: &BigFloat) -> Vec<BigFloat> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(Big::from(1.0));
    if n == 0 {
        return p;
    }
    p.push(x.clone());
    for k in 2..=n {
        let t1 = mul(&mul(&Big::int(2 * k - 1), x), &p[k - 1]);
        let t2 = mul(&Big::int(k - 1), &p[k - 2]);
        p.push(div(&sub(&t1, &t2), &Big::int(k)));
    }
    p
}

/// Newton refinement of one Legendre root from an f64 Chebyshev guess, to
/// |Δx| < 1e-40.
fn newton_root(q: usize, guess: f64) -> BigFloat {
    let one = Big::from(1.0);
    let qf = Big::int(q);
    let mut x = Big::from(guess);
    for _ in 0..120 {
        let p = legendre_all(q, &x);
        // P'_q = q(x·P_q − P_{q−1})/(x² − 1)
        let num = mul(&qf, &sub(&mul(&x, &p[q]), &p[q - 1]));
        let den = sub(&mul(&x, &x), &one);
        let dp = div(&num, &den);
        let delta = div(&p[q], &dp);
        x = sub(&x, &delta);
        let done = delta.is_zero() || delta.exponent().map_or(true, |e| e <= -140);
        if done {
            break;
        }
    }
    x
}

/// Generates the q-stage Gauss-Legendre tableau in 512-bit arithmetic and
/// rounds to f64. Supported stage counts are 1..=500.
pub fn gauss_legendre_tableau(q: usize) -> Result<ButcherTableau> {
    if !(1..=500).contains(&q) {
        return Err(Error::StageCountOutOfRange(q));
    }
    let mut big = Big::new();
    let one = Big::from(1.0);
    let half = Big::from(0.5);

    // Positive roots by Newton, then mirrored so symmetry is exact.
    let mut pos = Vec::new();
    for i in 0..q / 2 {
        let theta = std::f64::consts::PI * (4 * i + 3) as f64 / (4 * q + 2) as f64;
        pos.push(newton_root(q, theta.cos()));
    }
    let mut roots: Vec<BigFloat> = pos.iter().map(|r| r.neg()).collect();
    if q % 2 == 1 {
        roots.push(Big::from(0.0));
    }
    roots.extend(pos.into_iter().rev());

    // b_i = 1/((1 − x_i²)·P'_q(x_i)²), half the interval-[-1,1] weight.
    let qf = Big::int(q);
    let mut b_bf = Vec::with_capacity(q);
    let mut c_bf = Vec::with_capacity(q);
    let mut ptab: Vec<Vec<BigFloat>> = Vec::with_capacity(q);
    for x in &roots {
        let p = legendre_all(q, x);
        let num = mul(&qf, &sub(&mul(x, &p[q]), &p[q - 1]));
        let den = sub(&mul(x, x), &one);
        let dp = div(&num, &den);
        let omx2 = sub(&one, &mul(x, x));
        b_bf.push(div(&one, &mul(&omx2, &mul(&dp, &dp))));
        c_bf.push(mul(&half, &add(&one, x)));
        ptab.push(p);
    }

    let c: Vec<f64> = c_bf.iter().map(|v| big.to_f64(v)).collect();
    let b: Vec<f64> = b_bf.iter().map(|v| big.to_f64(v)).collect();

    let mut a = vec![0.0f64; q * q];
    for i in 0..q {
        let diff: Vec<BigFloat> = (1..q)
            .map(|k| sub(&ptab[i][k + 1], &ptab[i][k - 1]))
            .collect();
        for j in 0..q {
            let mut acc = Big::from(0.0);
            for (k, d) in diff.iter().enumerate() {
                acc = add(&acc, &mul(&ptab[j][k + 1], d));
            }
            let inner = add(&c_bf[i], &mul(&half, &acc));
            a[i * q + j] = big.to_f64(&mul(&b_bf[j], &inner));
        }
    }
    Ok(ButcherTableau { q, a, b, c })
}

/// Writes a tableau as text: first line q, then q lines `c b`, then q lines
/// of q a-entries, 25 significant digits each.
pub fn save_tableau(t: &ButcherTableau, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{}", t.q).unwrap();
    for i in 0..t.q {
        writeln!(out, "{:.24e} {:.24e}", t.c[i], t.b[i]).unwrap();
    }
    for i in 0..t.q {
        let row: Vec<String> = (0..t.q).map(|j| format!("{:.24e}", t.a(i, j))).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_tableau(path: &Path) -> Result<ButcherTableau> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| Error::CorruptDataset(format!("tableau file ends before {what}")))?
            .parse::<f64>()
            .map_err(|e| Error::CorruptDataset(format!("tableau {what}: {e}")))
    };
    let q = next("stage count")? as usize;
    if !(1..=500).contains(&q) {
        return Err(Error::StageCountOutOfRange(q));
    }
    let mut c = Vec::with_capacity(q);
    let mut b = Vec::with_capacity(q);
    for i in 0..q {
        c.push(next(&format!("c[{i}]"))?);
        b.push(next(&format!("b[{i}]"))?);
    }
    let mut a = Vec::with_capacity(q * q);
    for i in 0..q {
        for j in 0..q {
            a.push(next(&format!("a[{i},{j}]"))?);
        }
    }
    if tokens.next().is_some() {
        return Err(Error::CorruptDataset("trailing tokens in tableau file".into()));
    }
    if c.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::CorruptDataset("tableau nodes not increasing".into()));
    }
    Ok(ButcherTableau { q, a, b, c })
}

/// File name a stage count is cached under.
pub fn tableau_path(dir: &Path, q: usize) -> PathBuf {
    dir.join(format!("gauss_legendre_q{q}.txt"))
}

/// Loads the cached tableau for q, generating and caching it on a miss.
pub fn cached_gauss_legendre(q: usize, dir: &Path) -> Result<ButcherTableau> {
    let path = tableau_path(dir, q);
    if path.exists() {
        let t = load_tableau(&path)?;
        if t.q == q {
            return Ok(t);
        }
        return Err(Error::CorruptDataset(format!(
            "cached tableau at {} has q={}, expected {q}",
            path.display(),
            t.q
        )));
    }
    let t = gauss_legendre_tableau(q)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_tableau(&t, &path)?;
    Ok(t)
}

/// Directory the shipped tableau files live in; `PINN_DATA_DIR` overrides the
/// build-time workspace location.
pub fn default_tableau_dir() -> PathBuf {
    match std::env::var_os("PINN_DATA_DIR") {
        Some(dir) => PathBuf::from(dir).join("tableaux"),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/tableaux"),
    }
}

/// One implicit step t0 → t1 with a fixed tableau.
#[derive(Debug, Clone)]
pub struct DiscreteStep {
    pub t0: f64,
    pub t1: f64,
    pub tableau: ButcherTableau,
}

impl DiscreteStep {
    pub fn new(t0: f64, t1: f64, tableau: ButcherTableau) -> Result<Self> {
        if !(t1 - t0).is_finite() || t1 <= t0 {
            return Err(Error::InvalidShape {
                op: "discrete_step",
                message: format!("need t0 < t1, got {t0} -> {t1}"),
            });
        }
        Ok(Self { t0, t1, tableau })
    }

    pub fn dt(&self) -> f64 {
        self.t1 - self.t0
    }

    fn const_dt_a<S: Scalar>(&self, tape: &Tape<S>) -> Tensor {
        let q = self.tableau.q;
        let dt = self.dt();
        tape.constant(Array::from_fn(q, q, |i, j| {
            S::from_f64(dt * self.tableau.a(i, j))
        }))
    }
}

/// Forward-problem predictions at t^n from stage columns [u^{n+c_1..q}, u^{n+1}]
/// and stage residuals f: u_i^n = u^{n+c_i} − Δt Σ_j a_ij f_j for the q stage
/// columns and u_{q+1}^n = u^{n+1} − Δt Σ_j b_j f_j for the last.
pub fn discrete_forward_predictions<S: Scalar>(
    tape: &Tape<S>,
    stages: Tensor,
    f: Tensor,
    step: &DiscreteStep,
) -> Result<Tensor> {
    let q = step.tableau.q;
    if stages.cols() != q + 1 || f.cols() != q || stages.rows() != f.rows() {
        return Err(Error::ShapeMismatch {
            op: "discrete_forward_predictions",
            lhs: stages.shape(),
            rhs: f.shape(),
        });
    }
    let dt = step.dt();
    let stage_part = tape.slice_cols(stages, 0, q)?;
    let u0_stages = tape.sub(stage_part, tape.matmul_nt(f, step.const_dt_a(tape))?)?;
    let b_col = tape.constant(Array::from_fn(q, 1, |j, _| S::from_f64(dt * step.tableau.b[j])));
    let last = tape.slice_cols(stages, q, 1)?;
    let u0_last = tape.sub(last, tape.matmul(f, b_col)?)?;
    tape.concat(&[u0_stages, u0_last])
}

/// Inverse-problem predictions at both snapshot times from stage columns
/// u^{n+c_i} and residuals f: u_i^n = u^{n+c_i} − Δt Σ_j a_ij f_j and
/// u_i^{n+1} = u^{n+c_i} + Δt Σ_j (b_j − a_ij) f_j.
pub fn discrete_inverse_predictions<S: Scalar>(
    tape: &Tape<S>,
    stages: Tensor,
    f: Tensor,
    step: &DiscreteStep,
) -> Result<(Tensor, Tensor)> {
    let q = step.tableau.q;
    if stages.cols() != q || f.cols() != q || stages.rows() != f.rows() {
        return Err(Error::ShapeMismatch {
            op: "discrete_inverse_predictions",
            lhs: stages.shape(),
            rhs: f.shape(),
        });
    }
    let dt = step.dt();
    let at_t0 = tape.sub(stages, tape.matmul_nt(f, step.const_dt_a(tape))?)?;
    let b_minus_a = tape.constant(Array::from_fn(q, q, |i, j| {
        S::from_f64(dt * (step.tableau.b[j] - step.tableau.a(i, j)))
    }));
    let at_t1 = tape.add(stages, tape.matmul_nt(f, b_minus_a)?)?;
    Ok((at_t0, at_t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stage_is_the_midpoint_rule() {
        let t = gauss_legendre_tableau(1).unwrap();
        assert_eq!(t.c, vec![0.5]);
        assert_eq!(t.b, vec![1.0]);
        assert_eq!(t.a, vec![0.5]);
    }

    #[test]
    fn two_stage_matches_closed_form() {
        let t = gauss_legendre_tableau(2).unwrap();
        let s6 = 3.0f64.sqrt() / 6.0;
        let want_c = [0.5 - s6, 0.5 + s6];
        let want_a = [0.25, 0.25 - s6, 0.25 + s6, 0.25];
        for (got, want) in t.c.iter().zip(want_c) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(t.b, vec![0.5, 0.5]);
        for (got, want) in t.a.iter().zip(want_a) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn order_conditions_hold_for_generated_tableaux() {
        for q in [1usize, 2, 4, 7, 8] {
            let t = gauss_legendre_tableau(q).unwrap();
            let (wb, wa) = t.order_condition_defects(q.min(20));
            assert!(wb < 1e-14, "q={q} b-defect {wb:e}");
            assert!(wa < 1e-14, "q={q} a-defect {wa:e}");
            assert!(t.node_symmetry_defect() < 1e-15, "q={q}");
            assert!(t.c.windows(2).all(|w| w[0] < w[1]));
            let bsum: f64 = t.b.iter().sum();
            assert!((bsum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn row_sums_of_a_equal_nodes() {
        let t = gauss_legendre_tableau(8).unwrap();
        for i in 0..t.q {
            let s: f64 = (0..t.q).map(|j| t.a(i, j)).sum();
            assert!((s - t.c[i]).abs() < 1e-14, "row {i}");
        }
    }

    #[test]
    fn stage_count_bounds_are_enforced() {
        assert!(matches!(
            gauss_legendre_tableau(0),
            Err(Error::StageCountOutOfRange(0))
        ));
        assert!(matches!(
            gauss_legendre_tableau(501),
            Err(Error::StageCountOutOfRange(501))
        ));
    }

    #[test]
    fn tableau_file_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let t = gauss_legendre_tableau(4).unwrap();
        let path = tableau_path(dir.path(), 4);
        save_tableau(&t, &path).unwrap();
        let back = load_tableau(&path).unwrap();
        assert_eq!(t, back);

        // Cache miss generates and stores; second call loads the same bits.
        let c1 = cached_gauss_legendre(3, dir.path()).unwrap();
        assert!(tableau_path(dir.path(), 3).exists());
        let c2 = cached_gauss_legendre(3, dir.path()).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn high_stage_counts_integrate_exponential_decay_exactly() {
        // Gauss schemes superconverge at order 2q; by q=8 one 0.8-wide step
        // of u' = -u reaches f64 roundoff.
        let want = (-0.8f64).exp();
        for q in [8usize, 12] {
            let t = gauss_legendre_tableau(q).unwrap();
            let got = t.apply_linear_ode(-1.0, 0.8, 1.0);
            assert!((got - want).abs() < 1e-15, "q={q} defect {:e}", got - want);
        }
    }

    #[test]
    fn four_stage_decay_defect_is_order_eight_not_roundoff() {
        // Order 8 over a 0.8-wide step leaves a ~2.4e-9 one-step defect.
        let t = gauss_legendre_tableau(4).unwrap();
        let defect = (t.apply_linear_ode(-1.0, 0.8, 1.0) - (-0.8f64).exp()).abs();
        assert!(
            (1e-10..1e-8).contains(&defect),
            "expected order-8 truncation scale, got {defect:e}"
        );
    }

    #[test]
    fn forward_predictions_with_zero_residual_are_the_stages() {
        let tape = Tape::<f64>::new();
        let step = DiscreteStep::new(0.1, 0.9, gauss_legendre_tableau(3).unwrap()).unwrap();
        let stages = tape.input(Array::from_fn(5, 4, |i, j| (i * 4 + j) as f64));
        let f = tape.input(Array::zeros(5, 3));
        let u0 = discrete_forward_predictions(&tape, stages, f, &step).unwrap();
        assert_eq!(
            tape.value(u0).unwrap().as_slice(),
            tape.value(stages).unwrap().as_slice()
        );
    }

    #[test]
    fn one_stage_forward_prediction_hand_arithmetic() {
        let tape = Tape::<f64>::new();
        let step = DiscreteStep::new(0.1, 0.9, gauss_legendre_tableau(1).unwrap()).unwrap();
        let stages = tape.input(Array::from_vec(1, 2, vec![2.0, 3.0]).unwrap());
        let f = tape.input(Array::from_vec(1, 1, vec![1.0]).unwrap());
        let u0 = discrete_forward_predictions(&tape, stages, f, &step).unwrap();
        let v = tape.value(u0).unwrap();
        assert!((v.get(0, 0) - 1.6).abs() < 1e-15);
        assert!((v.get(0, 1) - 2.2).abs() < 1e-15);
    }

    #[test]
    fn one_stage_inverse_prediction_hand_arithmetic() {
        let tape = Tape::<f64>::new();
        let step = DiscreteStep::new(0.0, 0.8, gauss_legendre_tableau(1).unwrap()).unwrap();
        let stages = tape.input(Array::from_vec(1, 1, vec![2.0]).unwrap());
        let f = tape.input(Array::from_vec(1, 1, vec![1.0]).unwrap());
        let (u0, u1) = discrete_inverse_predictions(&tape, stages, f, &step).unwrap();
        // u^n = 2 − 0.8·(1/2)·1 = 1.6; u^{n+1} = 2 + 0.8·(1 − 1/2)·1 = 2.4.
        assert!((tape.value(u0).unwrap().item() - 1.6).abs() < 1e-15);
        assert!((tape.value(u1).unwrap().item() - 2.4).abs() < 1e-15);
    }

    #[test]
    fn exact_collocation_stages_predict_both_snapshots() {
        // Stages solved exactly for u' = -u make every t0 prediction equal
        // u(t0) by construction and every t1 prediction equal the scheme's
        // one-step value, which is within 1e-10 of e^{-dt/2} here.
        let q = 4;
        let (lambda, dt, u0) = (-1.0, 0.5, 1.0);
        let t = gauss_legendre_tableau(q).unwrap();
        let mut m = vec![0.0f64; q * q];
        for i in 0..q {
            for j in 0..q {
                m[i * q + j] = -dt * lambda * t.a(i, j);
            }
            m[i * q + i] += 1.0;
        }
        let mut stages = vec![u0; q];
        solve_dense(q, &mut m, &mut stages);
        let fvals: Vec<f64> = stages.iter().map(|u| lambda * u).collect();

        let tape = Tape::<f64>::new();
        let step = DiscreteStep::new(0.0, dt, t).unwrap();
        let st = tape.input(Array::from_vec(1, q, stages).unwrap());
        let fr = tape.input(Array::from_vec(1, q, fvals).unwrap());
        let (p0, p1) = discrete_inverse_predictions(&tape, st, fr, &step).unwrap();
        let v0 = tape.value(p0).unwrap();
        let v1 = tape.value(p1).unwrap();
        let want1 = (lambda * dt).exp() * u0;
        for j in 0..q {
            assert!((v0.get(0, j) - u0).abs() < 1e-13, "t0 stage {j}");
            assert!((v1.get(0, j) - want1).abs() < 1e-10, "t1 stage {j}");
        }
    }

    #[test]
    fn constant_residual_shifts_predictions_by_row_sums() {
        // With f ≡ κ the t0 predictions are stages − Δt·κ·c (row sums of a
        // equal c) and the last forward column is stages − Δt·κ.
        let tape = Tape::<f64>::new();
        let t = gauss_legendre_tableau(3).unwrap();
        let c = t.c.clone();
        let step = DiscreteStep::new(0.0, 2.0, t).unwrap();
        let kappa = 1.5;
        let stages = tape.input(Array::zeros(2, 4));
        let f = tape.input(Array::from_fn(2, 3, |_, _| kappa));
        let u0 = discrete_forward_predictions(&tape, stages, f, &step).unwrap();
        let v = tape.value(u0).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((v.get(i, j) + 2.0 * kappa * c[j]).abs() < 1e-14);
            }
            assert!((v.get(i, 3) + 2.0 * kappa).abs() < 1e-14);
        }
    }

    #[test]
    fn prediction_shape_mismatches_error() {
        let tape = Tape::<f64>::new();
        let step = DiscreteStep::new(0.0, 1.0, gauss_legendre_tableau(2).unwrap()).unwrap();
        let stages = tape.input(Array::zeros(4, 2));
        let f = tape.input(Array::zeros(4, 2));
        assert!(discrete_forward_predictions(&tape, stages, f, &step).is_err());
        let stages3 = tape.input(Array::zeros(4, 3));
        assert!(discrete_inverse_predictions(&tape, stages3, f, &step).is_err());
        assert!(DiscreteStep::new(0.9, 0.1, gauss_legendre_tableau(1).unwrap()).is_err());
    }
}
