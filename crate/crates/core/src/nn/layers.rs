//! Dense, 2-D convolution and LSTM layers over the [`Tape`].
//!
//! A layer is a named view into a [`ParamStore`]: it owns no weights,
//! only the prefix under which they live and the expected shapes.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::init::{InitKind, ParamSpec};
use super::tape::{conv_out_dim, Tape, Var};
use super::{NnError, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

fn check_shape(store: &ParamStore, name: &str, expected: &[usize]) -> Result<(), NnError> {
    let found = store.value(name)?.shape();
    if found != expected {
        return Err(NnError::Dimension {
            param: name.to_string(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

/// Fully-connected layer `act(W·x + b)` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
            activation,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(self.weight_name(), &[self.output, self.input], InitKind::Xavier),
            ParamSpec::new(self.bias_name(), &[self.output], InitKind::Zero),
        ]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        check_shape(store, &self.weight_name(), &[self.output, self.input])?;
        check_shape(store, &self.bias_name(), &[self.output])?;
        if tape.value(x).len() != self.input {
            return Err(NnError::Dimension {
                param: self.weight_name(),
                expected: vec![self.input],
                found: tape.shape(x).to_vec(),
            });
        }
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let wx = tape.matvec(w, x);
        let z = tape.add(wx, b);
        Ok(self.activation.apply(tape, z))
    }
}

/// Stride-`stride`, zero-padded 2-D convolution over `[H, W, C]` inputs,
/// weights `[out, k, k, in]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl Conv2d {
    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel;
        vec![
            ParamSpec::new(
                self.weight_name(),
                &[self.out_channels, k, k, self.in_channels],
                InitKind::Xavier,
            ),
            ParamSpec::new(self.bias_name(), &[self.out_channels], InitKind::Zero),
        ]
    }

    /// Output spatial size for an input of `h × w`.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let oh = conv_out_dim(h, self.kernel, self.stride, self.padding);
        let ow = conv_out_dim(w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(NnError::Config(format!(
                "{}: {k}×{k} kernel does not fit a {h}×{w} input with padding {p} and stride {s}",
                self.prefix,
                k = self.kernel,
                p = self.padding,
                s = self.stride
            ))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let k = self.kernel;
        check_shape(store, &self.weight_name(), &[self.out_channels, k, k, self.in_channels])?;
        check_shape(store, &self.bias_name(), &[self.out_channels])?;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(NnError::Dimension {
                param: self.weight_name(),
                expected: vec![0, 0, self.in_channels],
                found: shape,
            });
        }
        self.output_dims(shape[0], shape[1])?;
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let z = tape.conv2d(x, w, b, self.stride, self.padding);
        Ok(self.activation.apply(tape, z))
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmCellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[hidden]),
            cell: Tensor::zeros(&[hidden]),
        }
    }
}

/// LSTM state living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub hidden: Var,
    pub cell: Var,
}

/// LSTM cell with gate order (input, forget, candidate, output).
///
/// Parameters: `w_ih: [4H, in]`, `w_hh: [4H, H]`, `b: [4H]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    pub fn w_ih(&self) -> String {
        format!("{}.w_ih", self.prefix)
    }

    pub fn w_hh(&self) -> String {
        format!("{}.w_hh", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let g = 4 * self.hidden;
        vec![
            ParamSpec::new(self.w_ih(), &[g, self.input], InitKind::LstmUniform),
            ParamSpec::new(self.w_hh(), &[g, self.hidden], InitKind::LstmUniform),
            ParamSpec::new(self.bias(), &[g], InitKind::Zero),
        ]
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            hidden: tape.constant(Tensor::zeros(&[self.hidden])),
            cell: tape.constant(Tensor::zeros(&[self.hidden])),
        }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: LstmVars,
    ) -> Result<LstmVars, NnError> {
        let (h, g) = (self.hidden, 4 * self.hidden);
        check_shape(store, &self.w_ih(), &[g, self.input])?;
        check_shape(store, &self.w_hh(), &[g, h])?;
        check_shape(store, &self.bias(), &[g])?;
        if tape.value(x).len() != self.input {
            return Err(NnError::Dimension {
                param: self.w_ih(),
                expected: vec![self.input],
                found: tape.shape(x).to_vec(),
            });
        }
        for (v, what) in [(state.hidden, "hidden"), (state.cell, "cell")] {
            if tape.value(v).len() != h {
                return Err(NnError::Dimension {
                    param: format!("{}.{what}", self.prefix),
                    expected: vec![h],
                    found: tape.shape(v).to_vec(),
                });
            }
        }
        let w_ih = tape.param(store, &self.w_ih())?;
        let w_hh = tape.param(store, &self.w_hh())?;
        let b = tape.param(store, &self.bias())?;
        let zx = tape.matvec(w_ih, x);
        let zh = tape.matvec(w_hh, state.hidden);
        let z = tape.add(zx, zh);
        let z = tape.add(z, b);
        let zi = tape.slice(z, 0, h);
        let zf = tape.slice(z, h, h);
        let zg = tape.slice(z, 2 * h, h);
        let zo = tape.slice(z, 3 * h, h);
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let cand = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let keep = tape.mul(f, state.cell);
        let write = tape.mul(i, cand);
        let cell = tape.add(keep, write);
        let tc = tape.tanh(cell);
        let hidden = tape.mul(o, tc);
        Ok(LstmVars { hidden, cell })
    }
}

/// Single LSTM step on plain values.
pub fn lstm_step(
    x: &Tensor,
    state: &LstmCellState,
    params: &ParamStore,
    prefix: &str,
) -> Result<LstmCellState, NnError> {
    let hidden = state.hidden.len();
    let lstm = Lstm::new(prefix, x.len(), hidden);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = LstmVars {
        hidden: tape.constant(state.hidden.clone()),
        cell: tape.constant(state.cell.clone()),
    };
    let out = lstm.step(&mut tape, params, xv, s)?;
    Ok(LstmCellState {
        hidden: tape.value(out.hidden).clone(),
        cell: tape.value(out.cell).clone(),
    })
}

/// Fully-connected forward on plain values.
pub fn fc_forward(
    input: &Tensor,
    params: &ParamStore,
    prefix: &str,
    activation: Activation,
) -> Result<Tensor, NnError> {
    let w = params.value(&format!("{prefix}.weight"))?;
    let out = w.shape().first().copied().unwrap_or(0);
    let layer = Dense::new(prefix, input.len(), out, activation);
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = layer.forward(&mut tape, params, x)?;
    Ok(tape.value(y).clone())
}

/// Convolution forward on a plain `[H, W, C]` tensor.
pub fn conv2d_forward(
    input: &Tensor,
    params: &ParamStore,
    prefix: &str,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let w = params.value(&format!("{prefix}.weight"))?;
    if w.shape().len() != 4 {
        return Err(NnError::Dimension {
            param: format!("{prefix}.weight"),
            expected: vec![0, 0, 0, 0],
            found: w.shape().to_vec(),
        });
    }
    let layer = Conv2d {
        prefix: prefix.to_string(),
        in_channels: w.shape()[3],
        out_channels: w.shape()[0],
        kernel: w.shape()[1],
        stride,
        padding,
        activation: Activation::Identity,
    };
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = layer.forward(&mut tape, params, x)?;
    Ok(tape.value(y).clone())
}
