//! Feed-forward tanh networks and their derivative propagation on a tape.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Mat, ParamId, Tape, Var};
use super::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Mat,
    /// `1 × out`
    pub bias: Mat,
}

/// Tanh on every hidden layer, identity on the scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Xavier-normal weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(input: usize, depth: usize, width: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(rng)),
                    bias: Mat::zeros((1, fan_out)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, AutodiffError> {
        if layers.is_empty() {
            return Err(AutodiffError::InvalidNetwork("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.dim() != (1, l.weight.nrows()) {
                return Err(AutodiffError::InvalidNetwork(format!("bias shape in layer {i}")));
            }
            if i > 0 && l.weight.ncols() != layers[i - 1].weight.nrows() {
                return Err(AutodiffError::InvalidNetwork(format!("width mismatch at layer {i}")));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(AutodiffError::InvalidNetwork(format!(
                    "non-finite parameter in layer {i}"
                )));
            }
        }
        if layers[layers.len() - 1].weight.nrows() != 1 {
            return Err(AutodiffError::InvalidNetwork("output must be scalar".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    /// Count of tanh layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.nrows())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, len: usize) -> Result<(), AutodiffError> {
        if len != self.input_width() {
            return Err(AutodiffError::ShapeMismatch {
                expected: self.input_width(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64, AutodiffError> {
        self.check_input(input.len())?;
        let mut h: Vec<f64> = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut next: Vec<f64> = (0..l.weight.nrows())
                .map(|o| l.bias[[0, o]] + l.weight.row(o).iter().zip(&h).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if li < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        Ok(h[0])
    }

    /// Exact `∂out/∂input_j` for every input.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        self.check_input(input.len())?;
        let mut tape = Tape::new();
        let b = tape.bind_frozen(self);
        let z = tape.constant(Mat::from_shape_vec((1, input.len()), input.to_vec()).expect("row"));
        let dirs: Vec<Tangent> = (0..input.len()).map(Tangent::Unit).collect();
        let jet = b.jet(&mut tape, z, &dirs, None);
        Ok(jet.first.iter().map(|&v| tape.scalar(v)).collect())
    }

    /// `(∂out/∂t, ∂²out/∂t², [∂²out/∂t∂x_j])` with `t` the input at `t_index`.
    /// The mixed vector covers every input, including `t` itself.
    pub fn second_time_derivatives(&self, input: &[f64], t_index: usize) -> Result<TimeDerivatives, AutodiffError> {
        self.check_input(input.len())?;
        if t_index >= input.len() {
            return Err(AutodiffError::ShapeMismatch {
                expected: input.len(),
                got: t_index,
            });
        }
        let mut tape = Tape::new();
        let b = tape.bind_frozen(self);
        let z = tape.constant(Mat::from_shape_vec((1, input.len()), input.to_vec()).expect("row"));
        let dirs: Vec<Tangent> = (0..input.len()).map(Tangent::Unit).collect();
        let jet = b.jet(&mut tape, z, &dirs, Some(t_index));
        let mixed: Vec<f64> = jet.mixed.iter().map(|&v| tape.scalar(v)).collect();
        Ok(TimeDerivatives {
            d_t: tape.scalar(jet.first[t_index]),
            d_tt: mixed[t_index],
            d_tx: mixed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDerivatives {
    pub d_t: f64,
    pub d_tt: f64,
    pub d_tx: Vec<f64>,
}

/// Direction along which to propagate a first derivative.
#[derive(Debug, Clone, Copy)]
pub enum Tangent {
    /// Unit vector on input column `j`.
    Unit(usize),
    /// Arbitrary `n × input` direction held on the tape.
    Along(Var),
}

/// Network output together with directional derivatives.
#[derive(Debug, Clone)]
pub struct Jet {
    /// `n × 1`
    pub value: Var,
    /// One `n × 1` node per requested tangent.
    pub first: Vec<Var>,
    /// `∂²/∂(tangent t)∂(tangent j)` per tangent; empty unless requested.
    pub mixed: Vec<Var>,
}

/// A network's parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct NetBinding {
    weights: Vec<Var>,
    biases: Vec<Var>,
    ids: Vec<ParamId>,
}

impl Tape {
    /// Binds parameters as trainable leaves with ids `base, base+1, ...`
    /// (weight then bias, layer by layer).
    pub fn bind_trainable(&mut self, net: &Mlp, base: usize) -> NetBinding {
        let mut b = NetBinding {
            weights: Vec::new(),
            biases: Vec::new(),
            ids: Vec::new(),
        };
        for (i, l) in net.layers.iter().enumerate() {
            let wid = ParamId(base + 2 * i);
            let bid = ParamId(base + 2 * i + 1);
            b.weights.push(self.param(wid, l.weight.clone()));
            b.biases.push(self.param(bid, l.bias.clone()));
            b.ids.push(wid);
            b.ids.push(bid);
        }
        b
    }

    /// Binds parameters as constants; they receive no gradients.
    pub fn bind_frozen(&mut self, net: &Mlp) -> NetBinding {
        let mut b = NetBinding {
            weights: Vec::new(),
            biases: Vec::new(),
            ids: Vec::new(),
        };
        for l in &net.layers {
            b.weights.push(self.constant(l.weight.clone()));
            b.biases.push(self.constant(l.bias.clone()));
        }
        b
    }
}

impl NetBinding {
    /// Ids of the trainable arrays in layer order; empty when frozen.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Plain batched forward pass; `input` is `n × in`.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Var {
        let last = self.weights.len() - 1;
        let mut h = input;
        for li in 0..=last {
            let lin = tape.matmul_t(h, self.weights[li]);
            let a = tape.add_row(lin, self.biases[li]);
            h = if li < last { tape.tanh(a) } else { a };
        }
        h
    }

    /// Forward pass carrying first derivatives along `tangents` and, when
    /// `time_dir` is set, second derivatives `∂²/∂(time_dir)∂(j)`.
    ///
    /// Tangent directions are treated as constant, so second-order input
    /// terms vanish; this is exact for `Tangent::Unit`.
    pub fn jet(&self, tape: &mut Tape, input: Var, tangents: &[Tangent], time_dir: Option<usize>) -> Jet {
        let n = tape.value(input).nrows();
        let last = self.weights.len() - 1;
        let mut h = input;
        let mut dh: Vec<Var> = Vec::with_capacity(tangents.len());
        // None means identically zero.
        let mut mh: Vec<Option<Var>> = vec![None; tangents.len()];

        for li in 0..=last {
            let w = self.weights[li];
            let lin = tape.matmul_t(h, w);
            let a = tape.add_row(lin, self.biases[li]);
            let da: Vec<Var> = if li == 0 {
                tangents
                    .iter()
                    .map(|t| match *t {
                        Tangent::Unit(j) => tape.column_rows(w, j, n),
                        Tangent::Along(v) => tape.matmul_t(v, w),
                    })
                    .collect()
            } else {
                dh.iter().map(|&d| tape.matmul_t(d, w)).collect()
            };
            let ma: Vec<Option<Var>> = if time_dir.is_some() {
                mh.iter().map(|m| m.map(|m| tape.matmul_t(m, w))).collect()
            } else {
                Vec::new()
            };

            if li == last {
                h = a;
                dh = da;
                mh = ma;
                break;
            }

            let y = tape.tanh(a);
            let y2 = tape.mul(y, y);
            let neg = tape.scale(y2, -1.0);
            let slope = tape.add_scalar(neg, 1.0);
            let next_dh: Vec<Var> = da.iter().map(|&d| tape.mul(slope, d)).collect();
            if let Some(td) = time_dir {
                // tanh'' = -2 y (1 - y²)
                let ys = tape.mul(y, slope);
                let curv = tape.scale(ys, -2.0);
                let c = tape.mul(curv, da[td]);
                mh = da
                    .iter()
                    .zip(&ma)
                    .map(|(&d, m)| {
                        let first = tape.mul(c, d);
                        Some(match m {
                            Some(m) => {
                                let second = tape.mul(slope, *m);
                                tape.add(first, second)
                            }
                            None => first,
                        })
                    })
                    .collect();
            }
            h = y;
            dh = next_dh;
        }

        let mixed = if time_dir.is_some() {
            mh.into_iter()
                .map(|m| m.unwrap_or_else(|| tape.constant(Mat::zeros((n, 1)))))
                .collect()
        } else {
            Vec::new()
        };
        Jet {
            value: h,
            first: dh,
            mixed,
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub const MLP_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    schema_version: u32,
    /// Input width, hidden widths, then 1.
    widths: Vec<usize>,
    /// Row-major `out × in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut widths = vec![self.input_width()];
        widths.extend(self.layers.iter().map(|l| l.weight.nrows()));
        MlpRepr {
            schema_version: MLP_SCHEMA_VERSION,
            widths,
            weights: self.layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: self.layers.iter().map(|l| l.bias.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = MlpRepr::deserialize(d)?;
        if r.schema_version != MLP_SCHEMA_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported network schema {}",
                r.schema_version
            )));
        }
        if r.widths.len() < 2 || r.weights.len() != r.widths.len() - 1 || r.biases.len() != r.weights.len() {
            return Err(D::Error::custom("inconsistent layer count"));
        }
        let layers = r
            .widths
            .windows(2)
            .zip(r.weights.into_iter().zip(r.biases))
            .map(|(w, (wt, b))| {
                Ok(Layer {
                    weight: Array2::from_shape_vec((w[1], w[0]), wt).map_err(D::Error::custom)?,
                    bias: Array2::from_shape_vec((1, w[1]), b).map_err(D::Error::custom)?,
                })
            })
            .collect::<Result<Vec<_>, D::Error>>()?;
        Mlp::from_layers(layers).map_err(D::Error::custom)
    }
}
