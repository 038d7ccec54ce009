//! Dense MLP layers with smooth activations and cached forward traces.
//!
//! Each [`DenseLayer`] computes `act(W x + b)`. The trace returned by
//! [`forward`] keeps every pre-activation, which is what the geometry module
//! needs to evaluate the per-layer derivative blocks without re-running the
//! network.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Activation kinds. SiLU is the training activation; Quadratic exists to
/// reproduce the integer-exact two-layer check; Linear is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Silu,
    Quadratic,
    Linear,
}

/// Numerically stable logistic function.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Scalar activation derivative of the given order.
///
/// The SiLU derivatives are expressed through `s = logistic(u)` alone
/// (`e^{-u} s^2 = s(1-s)` and so on), which stays finite for any finite `u`;
/// the raw `e^{-u}` form overflows for large negative inputs.
pub(crate) fn act_scalar(act: ActivationKind, u: f64, order: u8) -> f64 {
    match act {
        ActivationKind::Linear => match order {
            0 => u,
            1 => 1.0,
            _ => 0.0,
        },
        ActivationKind::Quadratic => match order {
            0 => u * u,
            1 => 2.0 * u,
            2 => 2.0,
            _ => 0.0,
        },
        ActivationKind::Silu => {
            let s = logistic(u);
            let q = 1.0 - s; // q = E*s with E = e^{-u}
            let sq = s * q;
            match order {
                0 => u * s,
                1 => s + u * sq,
                2 => sq * (2.0 + u - 2.0 * u * s),
                3 => sq * (-3.0 + u + 6.0 * q - 6.0 * u * q + 6.0 * u * q * q),
                4 => {
                    sq * ((4.0 - u)
                        + (14.0 * u - 24.0) * q
                        + (24.0 - 36.0 * u) * q * q
                        + 24.0 * u * q * q * q)
                }
                _ => unreachable!("activation order > 4"),
            }
        }
    }
}

/// Entrywise activation value or derivative (orders 0 through 3) at `u`.
pub fn activation_eval(act: ActivationKind, u: &Tensor, order: u8) -> Result<Tensor> {
    if order > 3 {
        return Err(Error::spec(format!("activation order {order} out of range 0..=3")));
    }
    Ok(u.map(|v| act_scalar(act, v, order)))
}

/// One dense layer: `W` is `(out x in)`, `b` is `(out)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub act: ActivationKind,
}

impl DenseLayer {
    pub fn new(w: Tensor, b: Tensor, act: ActivationKind) -> Result<Self> {
        if w.rank() != 2 || b.rank() != 1 || w.shape()[0] != b.shape()[0] {
            return Err(Error::shape(format!(
                "layer weight {:?} inconsistent with bias {:?}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(DenseLayer { w, b, act })
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// Pre-activation `u = W x + b` for a single input vector.
    pub fn preactivation(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 1 || x.shape()[0] != self.in_dim() {
            return Err(Error::shape(format!(
                "layer input {:?}, expected [{}]",
                x.shape(),
                self.in_dim()
            )));
        }
        let (o, i) = (self.out_dim(), self.in_dim());
        let mut u = vec![0.0; o];
        let w = self.w.data();
        let xv = x.data();
        for r in 0..o {
            let mut acc = self.b.data()[r];
            for c in 0..i {
                acc += w[r * i + c] * xv[c];
            }
            u[r] = acc;
        }
        Ok(Tensor::new(vec![o], u).expect("finite preactivation"))
    }
}

/// Ordered dense layers; adjacent dimensions must compose.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::spec("empty layer list"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// True when every layer maps dimension n to n.
    pub fn constant_width(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.in_dim() == self.in_dim() && l.out_dim() == self.in_dim())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Cached intermediates of one forward pass: the input, each layer's
/// pre-activation `u`, and each layer's output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub preactivations: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().unwrap()
    }

    /// Input seen by layer `n` (the previous layer's output).
    pub fn layer_input(&self, n: usize) -> &Tensor {
        if n == 0 {
            &self.input
        } else {
            &self.outputs[n - 1]
        }
    }
}

/// Evaluates the network on a single vector, caching every intermediate.
pub fn forward(mlp: &Mlp, x: &Tensor) -> Result<ForwardTrace> {
    let mut preactivations = Vec::with_capacity(mlp.layers.len());
    let mut outputs = Vec::with_capacity(mlp.layers.len());
    let mut cur = x.clone();
    for layer in &mlp.layers {
        let u = layer.preactivation(&cur)?;
        let y = u.map(|v| act_scalar(layer.act, v, 0));
        preactivations.push(u);
        outputs.push(y.clone());
        cur = y;
    }
    Ok(ForwardTrace {
        input: x.clone(),
        preactivations,
        outputs,
    })
}

/// Builds an MLP with Glorot-style uniform weights (`±sqrt(6/(fan_in+fan_out))`)
/// and zero biases, deterministic per seed.
pub fn init_params(sizes: &[usize], act: ActivationKind, seed: u64) -> Result<Mlp> {
    if sizes.len() < 2 {
        return Err(Error::spec("need at least input and output sizes"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::spec("zero layer size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let w = Tensor::new(vec![fan_out, fan_in], data)?;
        let b = Tensor::zeros(&[fan_out]);
        layers.push(DenseLayer::new(w, b, act)?);
    }
    Ok(Mlp { layers })
}

// --- JSON parameter format -------------------------------------------------
//
// {"layers":[{"w":[[...]],"b":[...],"act":"silu"}]}
// Decimal round-trip is exact: serde_json emits shortest representations that
// parse back to the identical f64.

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: ActivationKind,
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layers: Vec<LayerDoc>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = MlpDoc {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let (o, i) = (l.out_dim(), l.in_dim());
                    let w = (0..o)
                        .map(|r| l.w.data()[r * i..(r + 1) * i].to_vec())
                        .collect();
                    LayerDoc {
                        w,
                        b: l.b.data().to_vec(),
                        act: l.act,
                    }
                })
                .collect(),
        };
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = MlpDoc::deserialize(d)?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            let w = Tensor::from_rows(&l.w).map_err(serde::de::Error::custom)?;
            let b = Tensor::vector(&l.b).map_err(serde::de::Error::custom)?;
            layers.push(DenseLayer::new(w, b, l.act).map_err(serde::de::Error::custom)?);
        }
        Mlp::new(layers).map_err(serde::de::Error::custom)
    }
}
