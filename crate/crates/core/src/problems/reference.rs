//! Reference solutions for the registered problems: a quadrature-evaluated
//! closed form for the viscous advection equation, spectral time stepping
//! for the one-dimensional stiff equations, and classical decaying-flow
//! closed forms for the incompressible problems.
//!
//! Every generator is deterministic, so a saved dataset equals a fresh one
//! bit for bit.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::{GridAxis, GridDataset};
use crate::error::Result;
use crate::problems::residual::{BURGERS_NU, NS3D_PECLET, NS3D_REYNOLDS};
use crate::problems::{ProblemId, ProblemSpec};

type C64 = Complex<f64>;

// ---- quadrature-evaluated closed form -------------------------------------

/// Nodes and weights of n-point Hermite quadrature for ∫f(y)e^{−y²}dy,
/// computed by Newton iteration on the orthonormal recurrence. Nodes come
/// out in descending-magnitude mirrored pairs.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "quadrature needs at least two nodes");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut z = 0.0f64;
    let m = n.div_ceil(2);
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Viscous advection solution with u(0,x) = −sin(πx) on x ∈ [−1,1]: the
/// heat-kernel integral of the transformed problem, evaluated by Hermite
/// quadrature after the substitution η = x − 2√(νt)·y.
pub fn burgers_value(gh: &(Vec<f64>, Vec<f64>), t: f64, x: f64, nu: f64) -> f64 {
    if t <= 0.0 {
        return -(PI * x).sin();
    }
    let (nodes, weights) = gh;
    let s = 2.0 * (nu * t).sqrt();
    let inv = 1.0 / (2.0 * PI * nu);
    // Shift by the largest exponent so e^{a−m} never overflows.
    let mut m = f64::NEG_INFINITY;
    for &y in nodes {
        m = m.max(-(PI * (x - s * y)).cos() * inv);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&y, &w) in nodes.iter().zip(weights) {
        let xi = x - s * y;
        let e = (-(PI * xi).cos() * inv - m).exp();
        num += w * (PI * xi).sin() * e;
        den += w * e;
    }
    -num / den
}

// ---- spectral time stepping ------------------------------------------------

/// Periodic grid of n points on [lo, hi) with signed wavenumbers.
struct Spectral {
    n: usize,
    x: Vec<f64>,
    k: Vec<f64>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Spectral {
    fn new(n: usize, lo: f64, hi: f64) -> Self {
        let len = hi - lo;
        let x = (0..n).map(|j| lo + len * j as f64 / n as f64).collect();
        let k = (0..n)
            .map(|j| {
                let s = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * s / len
            })
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            n,
            x,
            k,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn fft(&self, f: &mut [C64]) {
        self.fwd.process(f);
    }

    /// Inverse transform including the 1/n normalization.
    fn ifft(&self, f: &mut [C64]) {
        self.inv.process(f);
        let scale = 1.0 / self.n as f64;
        for v in f.iter_mut() {
            *v *= scale;
        }
    }

    /// Zeroes the top third of the spectrum (quadratic dealiasing).
    fn dealias(&self, f: &mut [C64]) {
        let cut = self.n as f64 / 3.0;
        for (j, v) in f.iter_mut().enumerate() {
            let s = if j <= self.n / 2 {
                j as f64
            } else {
                (self.n - j) as f64
            };
            if s > cut {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
}

/// Classical fourth-order step of û' = L·û + N̂(û) in the integrating-factor
/// variable w = e^{−Lτ}û, which removes the stiff linear part exactly.
fn if_rk4_step<N>(spec: &Spectral, l: &[C64], dt: f64, uhat: &mut [C64], mut nhat: N)
where
    N: FnMut(&Spectral, &[C64]) -> Vec<C64>,
{
    let n = spec.n;
    let e1: Vec<C64> = l.iter().map(|&v| (v * (dt / 2.0)).exp()).collect();
    let i1: Vec<C64> = l.iter().map(|&v| (-v * (dt / 2.0)).exp()).collect();
    let e2: Vec<C64> = e1.iter().map(|&v| v * v).collect();
    let i2: Vec<C64> = i1.iter().map(|&v| v * v).collect();

    let k1 = nhat(spec, uhat);
    let stage = |base: &[C64], coef: f64, k: &[C64], fac: &[C64]| -> Vec<C64> {
        (0..n).map(|j| fac[j] * (base[j] + coef * k[j])).collect()
    };
    let mul = |a: &[C64], b: &[C64]| -> Vec<C64> { (0..n).map(|j| a[j] * b[j]).collect() };

    let a = stage(uhat, dt / 2.0, &k1, &e1);
    let k2 = mul(&i1, &nhat(spec, &a));
    let b = stage(uhat, dt / 2.0, &k2, &e1);
    let k3 = mul(&i1, &nhat(spec, &b));
    let c = stage(uhat, dt, &k3, &e2);
    let k4 = mul(&i2, &nhat(spec, &c));

    for j in 0..n {
        let w = uhat[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        uhat[j] = e2[j] * w;
    }
}

/// Integrates a real field spectrally from `u0`, returning the grid and the
/// requested snapshots (by step index).
fn integrate_real<N>(
    spec: &Spectral,
    l: &[C64],
    dt: f64,
    steps: usize,
    capture: &[usize],
    u0: impl Fn(f64) -> f64,
    nhat: N,
) -> Vec<Vec<f64>>
where
    N: FnMut(&Spectral, &[C64]) -> Vec<C64> + Copy,
{
    let mut uhat: Vec<C64> = spec.x.iter().map(|&x| C64::new(u0(x), 0.0)).collect();
    spec.fft(&mut uhat);
    let grab = |uhat: &[C64]| -> Vec<f64> {
        let mut f = uhat.to_vec();
        spec.ifft(&mut f);
        f.iter().map(|c| c.re).collect()
    };
    let mut out = Vec::new();
    if capture.contains(&0) {
        out.push(grab(&uhat));
    }
    for step in 1..=steps {
        if_rk4_step(spec, l, dt, &mut uhat, nhat);
        if capture.contains(&step) {
            out.push(grab(&uhat));
        }
    }
    out
}

/// One Strang step of i·h_t + ½·h_xx + |h|²·h = 0: exact nonlinear phase
/// rotation for dt/2, exact linear phase in spectrum for dt, nonlinear again.
fn strang_step(spec: &Spectral, dt: f64, h: &mut Vec<C64>, linear: &[C64]) {
    let rotate = |h: &mut [C64], tau: f64| {
        for v in h.iter_mut() {
            let phase = v.norm_sqr() * tau;
            *v *= C64::new(phase.cos(), phase.sin());
        }
    };
    rotate(h, dt / 2.0);
    spec.fft(h);
    for (v, &f) in h.iter_mut().zip(linear) {
        *v *= f;
    }
    spec.ifft(h);
    rotate(h, dt / 2.0);
}

// ---- closed-form flows ------------------------------------------------------

/// Decaying planar vortex on [0,π]²: ψ = −cos x·cos y·e^{−2νt} with
/// u = ψ_y, v = −ψ_x and the matching pressure. Solves the planar momentum
/// equations with unit advection coefficient and viscosity ν.
pub fn ns2d_fields(t: f64, x: f64, y: f64, nu: f64) -> (f64, f64, f64, f64) {
    let e = (-2.0 * nu * t).exp();
    let u = x.cos() * y.sin() * e;
    let v = -(x.sin() * y.cos() * e);
    let p = -0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * e * e;
    let psi = -(x.cos() * y.cos() * e);
    (u, v, p, psi)
}

/// Exponential-trigonometric eigenflow (unit parameters) with viscosity
/// 1/Re, plus a diffusing scalar that the flow transports. The velocities
/// and pressure solve the momentum equations exactly; the scalar balances
/// its own diffusion and is carried by the flow.
pub fn ns3d_fields(t: f64, x: f64, y: f64, z: f64) -> (f64, f64, f64, f64, f64) {
    let nu = 1.0 / NS3D_REYNOLDS;
    let e = (-nu * t).exp();
    let u = -((x.exp() * (y + z).sin() + z.exp() * (x + y).cos()) * e);
    let v = -((y.exp() * (z + x).sin() + x.exp() * (y + z).cos()) * e);
    let w = -((z.exp() * (x + y).sin() + y.exp() * (z + x).cos()) * e);
    let p = -0.5
        * ((2.0 * x).exp()
            + (2.0 * y).exp()
            + (2.0 * z).exp()
            + 2.0 * (x + y).sin() * (z + x).cos() * (y + z).exp()
            + 2.0 * (y + z).sin() * (x + y).cos() * (z + x).exp()
            + 2.0 * (z + x).sin() * (y + z).cos() * (x + y).exp())
        * e
        * e;
    let c = (-3.0 * t / NS3D_PECLET).exp() * x.sin() * y.sin() * z.sin();
    (c, u, v, w, p)
}

// ---- dataset assembly -------------------------------------------------------

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn axis(name: &str, values: Vec<f64>) -> GridAxis {
    GridAxis {
        name: name.into(),
        values,
    }
}

fn tag(ds: &mut GridDataset, generator: &str) {
    ds.meta.insert("synthetic".into(), "true".into());
    ds.meta.insert("generator".into(), generator.into());
}

fn burgers_grid(spec: &ProblemSpec, ts: Vec<f64>) -> Result<GridDataset> {
    let gh = gauss_hermite(64);
    let xs = linspace(-1.0, 1.0, 256);
    let mut u = Vec::with_capacity(ts.len() * xs.len());
    for &t in &ts {
        for &x in &xs {
            u.push(burgers_value(&gh, t, x, BURGERS_NU));
        }
    }
    let mut ds = GridDataset::new(
        spec.name,
        vec![axis("t", ts), axis("x", xs)],
        vec![("u".into(), u)],
    )?;
    tag(&mut ds, "heat-kernel-quadrature-64");
    Ok(ds)
}

fn schrodinger_grid(spec: &ProblemSpec) -> Result<GridDataset> {
    let n = 512;
    let sp = Spectral::new(n, -5.0, 5.0);
    let steps = 20_000;
    let every = 200;
    let t_end = PI / 2.0;
    let dt = t_end / steps as f64;
    let linear: Vec<C64> = sp
        .k
        .iter()
        .map(|&k| {
            let phase = -0.5 * k * k * dt;
            C64::new(phase.cos(), phase.sin())
        })
        .collect();
    let mut h: Vec<C64> = sp
        .x
        .iter()
        .map(|&x| C64::new(2.0 / x.cosh(), 0.0))
        .collect();
    let mut ts = Vec::new();
    let (mut u, mut v) = (Vec::new(), Vec::new());
    let mut snap = |h: &[C64], t: f64, ts: &mut Vec<f64>, u: &mut Vec<f64>, v: &mut Vec<f64>| {
        ts.push(t);
        u.extend(h.iter().map(|c| c.re));
        v.extend(h.iter().map(|c| c.im));
    };
    snap(&h, 0.0, &mut ts, &mut u, &mut v);
    for step in 1..=steps {
        strang_step(&sp, dt, &mut h, &linear);
        if step % every == 0 {
            snap(&h, step as f64 * dt, &mut ts, &mut u, &mut v);
        }
    }
    let mut ds = GridDataset::new(
        spec.name,
        vec![axis("t", ts), axis("x", sp.x.clone())],
        vec![("u".into(), u), ("v".into(), v)],
    )?;
    tag(&mut ds, "strang-splitting-512");
    Ok(ds)
}

/// Nonlinear term 5u − 5u³ of the bistable equation, in spectrum.
fn ac_nhat(sp: &Spectral, uhat: &[C64]) -> Vec<C64> {
    let mut u = uhat.to_vec();
    sp.ifft(&mut u);
    for v in u.iter_mut() {
        let r = v.re;
        *v = C64::new(5.0 * r - 5.0 * r * r * r, 0.0);
    }
    sp.fft(&mut u);
    sp.dealias(&mut u);
    u
}

/// Nonlinear term −λ₁·u·u_x = −(λ₁/2)·(u²)_x of the dispersive equation.
fn kdv_nhat(sp: &Spectral, uhat: &[C64]) -> Vec<C64> {
    let mut u = uhat.to_vec();
    sp.ifft(&mut u);
    for v in u.iter_mut() {
        let r = v.re;
        *v = C64::new(r * r, 0.0);
    }
    sp.fft(&mut u);
    for (j, v) in u.iter_mut().enumerate() {
        *v *= C64::new(0.0, -0.5 * sp.k[j]);
    }
    sp.dealias(&mut u);
    u
}

fn spectral_two_slice(
    spec: &ProblemSpec,
    lo: f64,
    hi: f64,
    l_of_k: impl Fn(f64) -> C64,
    u0: impl Fn(f64) -> f64,
    nhat: impl FnMut(&Spectral, &[C64]) -> Vec<C64> + Copy,
    dt: f64,
    generator: &str,
) -> Result<GridDataset> {
    let d = spec
        .discrete
        .as_ref()
        .expect("spectral two-slice generators serve discrete problems");
    let sp = Spectral::new(512, lo, hi);
    let l: Vec<C64> = sp.k.iter().map(|&k| l_of_k(k)).collect();
    let s0 = (d.t0 / dt).round() as usize;
    let s1 = (d.t1 / dt).round() as usize;
    let snaps = integrate_real(&sp, &l, dt, s1, &[s0, s1], u0, nhat);
    let mut u = snaps[0].clone();
    u.extend_from_slice(&snaps[1]);
    let mut ds = GridDataset::new(
        spec.name,
        vec![axis("t", vec![d.t0, d.t1]), axis("x", sp.x.clone())],
        vec![("u".into(), u)],
    )?;
    tag(&mut ds, generator);
    Ok(ds)
}

fn ns2d_grid(spec: &ProblemSpec) -> Result<GridDataset> {
    let nu = spec.inverse[1].truth;
    let ts = linspace(0.0, 2.0, 21);
    let xs = linspace(0.0, PI, 26);
    let ys = linspace(0.0, PI, 26);
    let cells = ts.len() * xs.len() * ys.len();
    let mut u = Vec::with_capacity(cells);
    let (mut v, mut p, mut psi) = (u.clone(), u.clone(), u.clone());
    for &t in &ts {
        for &x in &xs {
            for &y in &ys {
                let (uu, vv, pp, ps) = ns2d_fields(t, x, y, nu);
                u.push(uu);
                v.push(vv);
                p.push(pp);
                psi.push(ps);
            }
        }
    }
    let mut ds = GridDataset::new(
        spec.name,
        vec![axis("t", ts), axis("x", xs), axis("y", ys)],
        vec![
            ("u".into(), u),
            ("v".into(), v),
            ("p".into(), p),
            ("psi".into(), psi),
        ],
    )?;
    tag(&mut ds, "decaying-vortex");
    Ok(ds)
}

fn ns3d_grid(spec: &ProblemSpec) -> Result<GridDataset> {
    let ts = linspace(0.0, 1.0, 3);
    let xs = linspace(-1.0, 1.0, 9);
    let cells = ts.len() * xs.len().pow(3);
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(cells)).collect();
    for &t in &ts {
        for &x in &xs {
            for &y in &xs {
                for &z in &xs {
                    let (c, u, v, w, p) = ns3d_fields(t, x, y, z);
                    for (col, val) in cols.iter_mut().zip([c, u, v, w, p]) {
                        col.push(val);
                    }
                }
            }
        }
    }
    let names = ["c", "u", "v", "w", "p"];
    let vars = names
        .iter()
        .zip(cols)
        .map(|(n, c)| (n.to_string(), c))
        .collect();
    let mut ds = GridDataset::new(
        spec.name,
        vec![
            axis("t", ts),
            axis("x", xs.clone()),
            axis("y", xs.clone()),
            axis("z", xs),
        ],
        vars,
    )?;
    tag(&mut ds, "eigenflow-transport");
    Ok(ds)
}

/// Builds the reference dataset for a problem. Deterministic.
pub fn generate(spec: &ProblemSpec) -> Result<GridDataset> {
    match spec.id {
        ProblemId::BurgersContFwd | ProblemId::BurgersContInv => {
            burgers_grid(spec, linspace(0.0, 1.0, 100))
        }
        ProblemId::BurgersDiscFwd | ProblemId::BurgersDiscInv => {
            let d = spec.discrete.as_ref().expect("discrete");
            burgers_grid(spec, vec![d.t0, d.t1])
        }
        ProblemId::SchrodingerContFwd => schrodinger_grid(spec),
        ProblemId::AcDiscFwd => spectral_two_slice(
            spec,
            -1.0,
            1.0,
            |k| C64::new(-crate::problems::residual::AC_DIFFUSION * k * k, 0.0),
            |x| x * x * (PI * x).cos(),
            ac_nhat,
            1e-4,
            "integrating-factor-rk4-512",
        ),
        ProblemId::KdvDiscInv => spectral_two_slice(
            spec,
            -1.0,
            1.0,
            |k| C64::new(0.0, spec.inverse[1].truth * k * k * k),
            |x| (PI * x).cos(),
            kdv_nhat,
            1e-4,
            "integrating-factor-rk4-512",
        ),
        ProblemId::Ns2dContInv => ns2d_grid(spec),
        ProblemId::Ns3dContFwd => ns3d_grid(spec),
    }
}

/// Default on-disk location for generated reference datasets.
pub fn default_reference_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("PINN_DATA_DIR") {
        return PathBuf::from(dir).join("reference");
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join("reference")
}

/// Loads `<dir>/<problem>.pgd` if present, generating and saving it first
/// when missing.
pub fn load_or_generate(spec: &ProblemSpec, dir: &Path) -> Result<GridDataset> {
    let path = dir.join(format!("{}.pgd", spec.name));
    if path.exists() {
        return GridDataset::load(&path);
    }
    let ds = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    ds.save(&path)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::get_problem;

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let (x, w) = gauss_hermite(64);
        let total: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        let m1: f64 = x.iter().zip(&w).map(|(x, w)| w * x).sum();
        let rt = PI.sqrt();
        assert!((total - rt).abs() < 1e-12);
        assert!((m2 - rt / 2.0).abs() < 1e-12);
        assert!((m4 - 0.75 * rt).abs() < 1e-11);
        assert!(m1.abs() < 1e-13);
    }

    #[test]
    fn burgers_closed_form_properties() {
        let gh = gauss_hermite(64);
        // Initial slice is the exact sine.
        for &x in &[-0.73, -0.2, 0.0, 0.41, 0.99] {
            assert_eq!(burgers_value(&gh, 0.0, x, BURGERS_NU), -(PI * x).sin());
        }
        // The solution stays odd in x and pinned at the walls.
        for &t in &[0.1, 0.5, 0.9] {
            for &x in &[0.3, 0.62, 0.95] {
                let a = burgers_value(&gh, t, x, BURGERS_NU);
                let b = burgers_value(&gh, t, -x, BURGERS_NU);
                assert!((a + b).abs() < 1e-12, "odd symmetry broke at ({t},{x})");
            }
            assert!(burgers_value(&gh, t, 1.0, BURGERS_NU).abs() < 1e-12);
            assert!(burgers_value(&gh, t, -1.0, BURGERS_NU).abs() < 1e-12);
        }
        // Node-count self-convergence away from the sharp layer.
        let gh96 = gauss_hermite(96);
        for &(t, x) in &[(0.25, 0.5), (0.5, 0.3), (0.9, -0.7)] {
            let d = burgers_value(&gh, t, x, BURGERS_NU) - burgers_value(&gh96, t, x, BURGERS_NU);
            assert!(d.abs() < 1e-9, "quadrature not converged at ({t},{x}): {d:e}");
        }
    }

    #[test]
    fn wave_splitting_conserves_mass_and_self_converges() {
        let n = 128;
        let sp = Spectral::new(n, -5.0, 5.0);
        let run = |steps: usize, t_end: f64| -> Vec<C64> {
            let dt = t_end / steps as f64;
            let linear: Vec<C64> = sp
                .k
                .iter()
                .map(|&k| {
                    let ph = -0.5 * k * k * dt;
                    C64::new(ph.cos(), ph.sin())
                })
                .collect();
            let mut h: Vec<C64> = sp.x.iter().map(|&x| C64::new(2.0 / x.cosh(), 0.0)).collect();
            for _ in 0..steps {
                strang_step(&sp, dt, &mut h, &linear);
            }
            h
        };
        let mass = |h: &[C64]| -> f64 { h.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64 };
        let h0: Vec<C64> = sp.x.iter().map(|&x| C64::new(2.0 / x.cosh(), 0.0)).collect();
        let h1 = run(800, 0.1);
        assert!((mass(&h1) - mass(&h0)).abs() / mass(&h0) < 1e-12);
        let h2 = run(1600, 0.1);
        let diff = h1
            .iter()
            .zip(&h2)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-7, "splitting error too large: {diff:e}");
    }

    #[test]
    fn stiff_steppers_self_converge() {
        let sp = Spectral::new(128, -1.0, 1.0);
        let run = |dt: f64, l_of_k: &dyn Fn(f64) -> C64,
                   u0: &dyn Fn(f64) -> f64,
                   nhat: fn(&Spectral, &[C64]) -> Vec<C64>|
         -> Vec<f64> {
            let l: Vec<C64> = sp.k.iter().map(|&k| l_of_k(k)).collect();
            let steps = (0.1 / dt).round() as usize;
            integrate_real(&sp, &l, dt, steps, &[steps], u0, nhat)
                .pop()
                .unwrap()
        };
        let sup = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };

        let acl = |k: f64| C64::new(-1e-4 * k * k, 0.0);
        let acu = |x: f64| x * x * (PI * x).cos();
        let a1 = run(2e-4, &acl, &acu, ac_nhat);
        let a2 = run(1e-4, &acl, &acu, ac_nhat);
        assert!(sup(&a1, &a2) < 1e-9, "bistable stepper: {:e}", sup(&a1, &a2));

        let kl = |k: f64| C64::new(0.0, 0.0025 * k * k * k);
        let ku = |x: f64| (PI * x).cos();
        let k1 = run(2e-4, &kl, &ku, kdv_nhat);
        let k2 = run(1e-4, &kl, &ku, kdv_nhat);
        assert!(sup(&k1, &k2) < 1e-8, "dispersive stepper: {:e}", sup(&k1, &k2));
        // Mode zero is untouched by both L and the x-derivative nonlinearity,
        // so the mean is conserved to roundoff.
        let mean = |u: &[f64]| u.iter().sum::<f64>() / u.len() as f64;
        let mean0 = mean(&sp.x.iter().map(|&x| ku(x)).collect::<Vec<_>>());
        assert!((mean(&k2) - mean0).abs() < 1e-12);
    }

    #[test]
    fn generated_grids_are_valid_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["burgers-disc-fwd", "kdv-disc-inv"] {
            let spec = get_problem(name).unwrap();
            let ds = load_or_generate(&spec, dir.path()).unwrap();
            let d = spec.discrete.as_ref().unwrap();
            assert_eq!(ds.axis("t").unwrap().values, vec![d.t0, d.t1]);
            // Second load hits the file and must agree bitwise.
            let again = load_or_generate(&spec, dir.path()).unwrap();
            assert_eq!(ds, again);
        }
    }

    #[test]
    fn continuous_burgers_grid_matches_problem_bounds() {
        let spec = get_problem("burgers-cont-fwd").unwrap();
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.bounds().unwrap(), spec.bounds);
        let u = ds.var("u").unwrap();
        let xs = &ds.axis("x").unwrap().values;
        for (j, &x) in xs.iter().enumerate() {
            assert_eq!(u[j], -(PI * x).sin());
        }
    }
}
