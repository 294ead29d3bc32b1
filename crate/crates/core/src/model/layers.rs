//! Parameter registry and the layer descriptors built on it.
//!
//! Parameters and batchnorm buffers live in flat name-indexed sets; layers
//! hold ids into them. Declaration order is stable, which fixes both the
//! optimizer's iteration order and the checkpoint layout.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered name -> tensor registry.
#[derive(Clone, Debug, Default)]
pub struct NamedTensors<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> NamedTensors<S> {
    pub fn new() -> Self {
        NamedTensors {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, tensor: Tensor<S>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate name {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter_mut())
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn total_elems(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

pub(crate) struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        params: &mut NamedTensors<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::kaiming(&[cout, cin, k, k], cin * k * k, rng).requires_grad(true),
        );
        let bias = bias.then(|| {
            params.add(
                format!("{name}.bias"),
                Tensor::zeros(&[cout]).requires_grad(true),
            )
        });
        Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &[VarId], x: VarId) -> Result<VarId> {
        tape.conv2d(
            x,
            bound[self.weight.0],
            self.bias.map(|b| bound[b.0]),
            self.stride,
            self.padding,
        )
    }
}

pub(crate) struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;

impl BatchNormLayer {
    pub fn new<S: Scalar>(
        params: &mut NamedTensors<S>,
        bufs: &mut NamedTensors<S>,
        name: &str,
        c: usize,
    ) -> Self {
        BatchNormLayer {
            gamma: params.add(
                format!("{name}.gamma"),
                Tensor::full(&[c], S::ONE).requires_grad(true),
            ),
            beta: params.add(
                format!("{name}.beta"),
                Tensor::zeros(&[c]).requires_grad(true),
            ),
            mean: bufs.add(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: bufs.add(format!("{name}.running_var"), Tensor::full(&[c], S::ONE)),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &[VarId],
        bufs: &mut NamedTensors<S>,
        x: VarId,
        training: bool,
    ) -> Result<VarId> {
        // split borrows: running mean and var are distinct registry slots
        let (mean_id, var_id) = (self.mean.0, self.var.0);
        if mean_id == var_id {
            return Err(Error::value("batchnorm", "invalid buffer wiring"));
        }
        let (lo, hi, mean_first) = if mean_id < var_id {
            (mean_id, var_id, true)
        } else {
            (var_id, mean_id, false)
        };
        let (head, tail) = bufs.tensors_mut().split_at_mut(hi);
        let (mean_t, var_t) = if mean_first {
            (&mut head[lo], &mut tail[0])
        } else {
            (&mut tail[0], &mut head[lo])
        };
        tape.batchnorm2d(
            x,
            bound[self.gamma.0],
            bound[self.beta.0],
            mean_t,
            var_t,
            training,
            S::of(BN_MOMENTUM),
            S::of(BN_EPS),
        )
    }
}

pub(crate) struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<S: Scalar>(
        params: &mut NamedTensors<S>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut Rng,
    ) -> Self {
        LinearLayer {
            weight: params.add(
                format!("{name}.weight"),
                Tensor::kaiming(&[dout, din], din, rng).requires_grad(true),
            ),
            bias: params.add(
                format!("{name}.bias"),
                Tensor::zeros(&[dout]).requires_grad(true),
            ),
        }
    }
}
