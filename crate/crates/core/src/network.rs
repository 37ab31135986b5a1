//! Shared fully-connected network: Xavier-initialized parameters, the
//! tape-level forward pass with domain normalization, trainable scalar
//! inverse parameters, and flat-binary checkpoints.
//!
//! Parameters are host arrays bound to a tape as inputs each step, so a
//! traced training graph treats them as feeds and one compiled kernel serves
//! every iteration.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::precision::{Precision, Scalar};
use crate::tape::{Tape, Tensor};

/// Per-coordinate bounds of the space-time box the network is trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBounds {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl DomainBounds {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Result<Self> {
        if lb.len() != ub.len() || lb.is_empty() {
            return Err(Error::InvalidShape {
                op: "domain_bounds",
                message: format!("lb has {} coordinates, ub has {}", lb.len(), ub.len()),
            });
        }
        for (i, (&l, &u)) in lb.iter().zip(&ub).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidShape {
                    op: "domain_bounds",
                    message: format!("coordinate {i}: need finite lb < ub, got [{l}, {u}]"),
                });
            }
        }
        Ok(Self { lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }
}

/// Reparameterization of a trainable scalar: the optimizer sees θ, the
/// residual sees λ(θ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reparam {
    /// λ = θ.
    Identity,
    /// λ = exp(θ); keeps λ positive and lets small magnitudes move fast.
    Exp,
}

/// One named trainable scalar of an inverse problem.
#[derive(Debug, Clone)]
pub struct InverseParam {
    pub name: String,
    pub init_theta: f64,
    pub reparam: Reparam,
}

impl InverseParam {
    /// Maps the raw optimizer variable to λ on the tape.
    pub fn lambda<S: Scalar>(&self, tape: &Tape<S>, theta: Tensor) -> Tensor {
        match self.reparam {
            Reparam::Identity => theta,
            Reparam::Exp => tape.exp(theta),
        }
    }

    /// Host-side λ value for a raw θ.
    pub fn lambda_value(&self, theta: f64) -> f64 {
        match self.reparam {
            Reparam::Identity => theta,
            Reparam::Exp => theta.exp(),
        }
    }
}

/// Weights and biases of a tanh MLP; weights are [fan_in, fan_out], biases
/// [1, fan_out].
#[derive(Debug, Clone)]
pub struct MlpParams<S: Scalar> {
    pub sizes: Vec<usize>,
    pub weights: Vec<Array<S>>,
    pub biases: Vec<Array<S>>,
}

/// Tape handles for one binding of [`MlpParams`]; feed order is all weights
/// then all biases.
#[derive(Debug, Clone)]
pub struct MlpBinding {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl<S: Scalar> MlpParams<S> {
    /// Xavier/Glorot-normal initialization: weight std = sqrt(2/(fan_in +
    /// fan_out)), biases zero. Deterministic per seed; draws are made in f64
    /// and cast, so f32 parameters are rounded f64 ones.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidShape {
                op: "init_mlp",
                message: format!("need at least 2 layer sizes, got {}", sizes.len()),
            });
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidShape {
                op: "init_mlp",
                message: "layer sizes must be >= 1".into(),
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fi, fo) = (pair[0], pair[1]);
            let std = (2.0 / (fi + fo) as f64).sqrt();
            let mut w = Array::zeros(fi, fo);
            for v in w.as_mut_slice() {
                *v = S::from_f64(std * normal_draw(&mut rng));
            }
            weights.push(w);
            biases.push(Array::zeros(1, fo));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Binds every parameter as a tape input (weights first, then biases).
    pub fn bind(&self, tape: &Tape<S>) -> MlpBinding {
        MlpBinding {
            weights: self.weights.iter().map(|w| tape.input(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.input(b.clone())).collect(),
        }
    }

    /// Parameter arrays in binding order, for feeding a compiled kernel.
    pub fn flat(&self) -> Vec<Array<S>> {
        let mut v = self.weights.clone();
        v.extend(self.biases.iter().cloned());
        v
    }
}

/// One standard normal draw via Box-Muller; only the cosine branch is used so
/// the stream consumes exactly two uniforms per draw.
fn normal_draw(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    r * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rejects host data containing NaN or infinities before it reaches a tape.
pub fn finite_input<S: Scalar>(tape: &Tape<S>, value: Array<S>) -> Result<Tensor> {
    if !value.all_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(tape.input(value))
}

/// MLP forward pass on a tape: inputs are mapped to [-1, 1] per coordinate
/// as H = 2(X - lb)/(ub - lb) - 1, then affine + tanh layers with an affine
/// output layer.
///
/// The normalization divides the tape-computed (X - lb) by the host-computed
/// span, so lb maps to exactly -1 and ub to exactly +1 in floating point.
pub fn mlp_forward<S: Scalar>(
    tape: &Tape<S>,
    binding: &MlpBinding,
    x: Tensor,
    bounds: &DomainBounds,
) -> Result<Tensor> {
    if x.cols() != bounds.dim() {
        return Err(Error::ShapeMismatch {
            op: "mlp_forward",
            lhs: x.shape(),
            rhs: (1, bounds.dim()),
        });
    }
    let n = x.rows();
    let d = bounds.dim();
    let lb = tape.constant(Array::from_fn(1, d, |_, j| S::from_f64(bounds.lb[j])));
    let span = tape.constant(Array::from_fn(1, d, |_, j| {
        S::from_f64(bounds.ub[j]) - S::from_f64(bounds.lb[j])
    }));
    let centered = tape.sub(x, tape.broadcast_row(lb, n)?)?;
    let unit = tape.div(centered, tape.broadcast_row(span, n)?)?;
    let mut h = tape.add_scalar(tape.mul_scalar(unit, 2.0), -1.0);

    let last = binding.weights.len() - 1;
    for (i, (&w, &b)) in binding.weights.iter().zip(&binding.biases).enumerate() {
        let z = tape.add(tape.matmul(h, w)?, tape.broadcast_row(b, n)?)?;
        h = if i < last { tape.tanh(z) } else { z };
    }
    Ok(h)
}

/// Sidecar metadata stored next to the flat parameter binary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub layers: Vec<usize>,
    pub precision: String,
    pub seed: u64,
    pub iteration: u64,
    pub param_count: usize,
    /// Raw θ per inverse parameter, in declaration order.
    pub inverse: Vec<(String, f64)>,
}

/// Writes parameters as little-endian f64 in binding order (weights row-major
/// per layer, then biases, then inverse θ), plus a JSON sidecar at
/// `path.with_extension("json")`.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &MlpParams<S>,
    thetas: &[(String, f64)],
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    for w in params.weights.iter().chain(&params.biases) {
        for v in w.as_slice() {
            buf.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    for (_, th) in thetas {
        buf.extend_from_slice(&th.to_le_bytes());
    }
    std::fs::write(path, &buf)?;

    let meta = CheckpointMeta {
        layers: params.sizes.clone(),
        precision: match S::PRECISION {
            Precision::F32 => "f32".into(),
            Precision::F64 => "f64".into(),
        },
        seed,
        iteration,
        param_count: params.param_count(),
        inverse: thetas.to_vec(),
    };
    let sidecar = path.with_extension("json");
    let mut f = std::fs::File::create(sidecar)?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]. The sidecar's layer
/// sizes must describe the binary exactly.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(MlpParams<S>, CheckpointMeta)> {
    let sidecar = path.with_extension("json");
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;

    let expect = (meta.param_count + meta.inverse.len()) * 8;
    if bytes.len() != expect {
        return Err(Error::CheckpointMismatch(format!(
            "binary is {} bytes, sidecar declares {expect}",
            bytes.len()
        )));
    }
    let mut vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next = |n: usize| -> Vec<S> { (0..n).map(|_| S::from_f64(vals.next().unwrap())).collect() };

    let sizes = meta.layers.clone();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in sizes.windows(2) {
        weights.push(Array::from_vec(pair[0], pair[1], next(pair[0] * pair[1]))?);
    }
    for pair in sizes.windows(2) {
        biases.push(Array::from_vec(1, pair[1], next(pair[1]))?);
    }
    let params = MlpParams {
        sizes,
        weights,
        biases,
    };
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::finite_difference_check;

    #[test]
    fn init_two_layer_shapes_and_zero_bias() {
        let p = MlpParams::<f64>::init(&[2, 1], 0).unwrap();
        assert_eq!(p.weights[0].shape(), (2, 1));
        assert_eq!(p.biases[0].shape(), (1, 1));
        assert!(p.biases[0].as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn burgers_network_has_3021_parameters() {
        let sizes = [vec![2], vec![20; 8], vec![1]].concat();
        let p = MlpParams::<f64>::init(&sizes, 1).unwrap();
        assert_eq!(p.param_count(), 3021);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = MlpParams::<f64>::init(&[3, 7, 2], 42).unwrap();
        let b = MlpParams::<f64>::init(&[3, 7, 2], 42).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert_eq!(wa.as_slice(), wb.as_slice());
        }
        let c = MlpParams::<f64>::init(&[3, 7, 2], 43).unwrap();
        assert_ne!(a.weights[0].as_slice(), c.weights[0].as_slice());
    }

    #[test]
    fn init_rejects_degenerate_layer_lists() {
        assert!(MlpParams::<f64>::init(&[], 0).is_err());
        assert!(MlpParams::<f64>::init(&[4], 0).is_err());
        assert!(MlpParams::<f64>::init(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn xavier_std_tracks_fan_sizes() {
        // Sample std over a wide layer should be within 10% of the target.
        let p = MlpParams::<f64>::init(&[100, 100], 7).unwrap();
        let vals = p.weights[0].as_slice();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let target = (2.0 / 200.0_f64).sqrt();
        assert!((var.sqrt() - target).abs() < 0.1 * target);
    }

    #[test]
    fn normalization_hits_corners_exactly() {
        let bounds = DomainBounds::new(vec![0.1, -5.0], vec![std::f64::consts::PI, 5.0]).unwrap();
        // Identity "network": single layer with zero weight keeps only the
        // normalized input visible through finite differences; instead probe
        // the normalization directly with a passthrough weight.
        let tape = Tape::<f64>::new();
        let p = MlpParams::<f64> {
            sizes: vec![2, 2],
            weights: vec![Array::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 })],
            biases: vec![Array::zeros(1, 2)],
        };
        let b = p.bind(&tape);
        let x = tape.input(Array::from_vec(
            3,
            2,
            vec![
                0.1,
                -5.0,
                (0.1 + std::f64::consts::PI) / 2.0,
                0.0,
                std::f64::consts::PI,
                5.0,
            ],
        ).unwrap());
        let y = mlp_forward(&tape, &b, x, &bounds).unwrap();
        let v = tape.value(y).unwrap();
        assert_eq!(v.get(0, 0), -1.0);
        assert_eq!(v.get(0, 1), -1.0);
        assert_eq!(v.get(1, 0), 0.0);
        assert_eq!(v.get(1, 1), 0.0);
        assert_eq!(v.get(2, 0), 1.0);
        assert_eq!(v.get(2, 1), 1.0);
    }

    #[test]
    fn zero_weights_forward_is_bias() {
        let bounds = DomainBounds::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let tape = Tape::<f64>::new();
        let p = MlpParams::<f64> {
            sizes: vec![2, 4, 1],
            weights: vec![Array::zeros(2, 4), Array::zeros(4, 1)],
            biases: vec![Array::zeros(1, 4), Array::zeros(1, 1)],
        };
        let b = p.bind(&tape);
        let x = tape.input(Array::from_vec(5, 2, vec![0.3; 10]).unwrap());
        let y = mlp_forward(&tape, &b, x, &bounds).unwrap();
        assert!(tape.value(y).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_input_derivative_matches_finite_differences() {
        let bounds = DomainBounds::new(vec![-1.0], vec![1.0]).unwrap();
        let params = MlpParams::<f64>::init(&[1, 8, 8, 1], 11).unwrap();
        let x0 = Array::from_fn(4, 1, |i, _| -0.5 + 0.25 * (i as f64));
        let worst = finite_difference_check(
            |tape, x| {
                let b = params.bind(tape);
                mlp_forward(tape, &b, x, &bounds)
            },
            &x0,
            1,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-6, "fd mismatch {worst}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let tape = Tape::<f64>::new();
        let bad = Array::from_vec(1, 2, vec![0.0, f64::NAN]).unwrap();
        match finite_input(&tape, bad) {
            Err(Error::NonFiniteInput) => {}
            other => panic!("expected NonFiniteInput, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let p = MlpParams::<f64>::init(&[2, 5, 1], 3).unwrap();
        let thetas = vec![("lambda_1".to_string(), 0.25), ("lambda_2".to_string(), -6.0)];
        save_checkpoint(&path, &p, &thetas, 3, 123).unwrap();
        let (q, meta) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(meta.iteration, 123);
        assert_eq!(meta.inverse, thetas);
        assert_eq!(meta.param_count, p.param_count());
        for (a, b) in p.weights.iter().zip(&q.weights) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        for (a, b) in p.biases.iter().zip(&q.biases) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn exp_reparam_maps_theta_to_positive_lambda() {
        let ip = InverseParam {
            name: "lambda_2".into(),
            init_theta: -6.0,
            reparam: Reparam::Exp,
        };
        assert!((ip.lambda_value(-6.0) - (-6.0f64).exp()).abs() < 1e-18);
        let tape = Tape::<f64>::new();
        let th = tape.input(Array::scalar(-6.0));
        let lam = ip.lambda(&tape, th);
        assert!((tape.value(lam).unwrap().item() - (-6.0f64).exp()).abs() < 1e-18);
    }
}
