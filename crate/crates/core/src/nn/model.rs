use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec, Parameter};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Everything needed to rebuild a model's shape: per-example input shape,
/// layer stack and embedding tap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// The embedding is the activation after `layers[..embed_tap]`; the layers
    /// from `embed_tap` on form the projection head.
    pub embed_tap: usize,
}

impl Architecture {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, embed_tap: usize) -> Self {
        Self {
            input_shape,
            layers,
            embed_tap,
        }
    }

    /// Per-example shapes of every activation, `layers.len() + 1` entries.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Build("architecture has no layers".into()));
        }
        if self.embed_tap == 0 || self.embed_tap >= self.layers.len() {
            return Err(Error::Build(format!(
                "embed_tap must be in 1..{}, got {}",
                self.layers.len(),
                self.embed_tap
            )));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Build(format!(
                "input shape must have positive extents, got {:?}",
                self.input_shape
            )));
        }
        if self.param_count() == 0 {
            return Err(Error::Build("architecture has no trainable layer".into()));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, spec) in self.layers.iter().enumerate() {
            let input = shapes.last().expect("non-empty");
            let out = spec.output_shape(input).map_err(|why| {
                let prev = if i == 0 {
                    "model input".to_string()
                } else {
                    format!("layer {} ({})", i - 1, self.layers[i - 1])
                };
                Error::Build(format!(
                    "{prev} produces {input:?}, incompatible with layer {i} ({spec}): {why}"
                ))
            })?;
            shapes.push(out);
        }
        match shapes.last().map(Vec::as_slice) {
            Some([_]) => Ok(shapes),
            other => Err(Error::Build(format!(
                "final layer must produce a logit vector, got {other:?}"
            ))),
        }
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.activation_shapes()?.last().expect("non-empty")[0])
    }

    pub fn embedding_width(&self) -> Result<usize> {
        Ok(self.activation_shapes()?[self.embed_tap].iter().product())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Sequential model with an embedding tap. Forward caches activations for a
/// single subsequent `backward`.
#[derive(Debug, Clone)]
pub struct Model {
    arch: Architecture,
    layers: Vec<Layer>,
    cache: Option<Vec<Tensor>>,
}

impl Model {
    /// Builds and initializes a model. Equal `(arch, seed)` give bitwise-equal
    /// parameters.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.activation_shapes()?;
        let mut rng = rng::stream(seed, "init", &[]);
        let mut next_id = 0;
        let layers = arch
            .layers
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let layer = Layer::init(spec, shapes[i].clone(), shapes[i + 1].clone(), next_id, &mut rng);
                next_id += layer.params.len();
                layer
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
            cache: None,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_shape[0]
    }

    pub fn embedding_width(&self) -> usize {
        self.layers[self.arch.embed_tap].in_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(|p| p.value.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
        expected.extend_from_slice(&self.arch.input_shape);
        if x.shape() != expected.as_slice() {
            return Err(Error::shape("model input", &expected, x.shape()));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor) -> Vec<Tensor> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }

    fn split(&self, acts: &[Tensor]) -> (Tensor, Tensor) {
        let e = acts[self.arch.embed_tap].clone().flatten_rows();
        let z = acts.last().expect("non-empty").clone();
        (e, z)
    }

    /// Forward pass returning `(embeddings [B, E], logits [B, C])` and caching
    /// activations for `backward`.
    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let acts = self.run(x);
        let out = self.split(&acts);
        self.cache = Some(acts);
        Ok(out)
    }

    /// Forward pass without caching; never mutates the model.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        Ok(self.split(&self.run(x)))
    }

    /// Accumulates gradients of the scalar whose partials w.r.t. the logits are
    /// `dz` and w.r.t. the embedding are `de`. Consumes the forward cache.
    pub fn backward(&mut self, dz: &Tensor, de: Option<&Tensor>) -> Result<()> {
        let acts = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let z = acts.last().expect("non-empty");
        if dz.shape() != z.shape() {
            let err = Error::shape("backward dz", z.shape(), dz.shape());
            self.cache = Some(acts);
            return Err(err);
        }
        let tap = self.arch.embed_tap;
        let e_shape = [acts[tap].rows(), acts[tap].row_len()];
        if let Some(de) = de {
            if de.shape() != e_shape {
                let err = Error::shape("backward de", &e_shape, de.shape());
                self.cache = Some(acts);
                return Err(err);
            }
        }
        let mut grad = dz.clone();
        for i in (0..self.layers.len()).rev() {
            match self.layers[i].backward(&acts[i], &grad, i > 0) {
                Some(g) => grad = g,
                None => break,
            }
            if i == tap {
                if let Some(de) = de {
                    for (g, d) in grad.data_mut().iter_mut().zip(de.data()) {
                        *g += d;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Plain SGD: `value -= lr * grad`. Gradients are left in place.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        for p in self.parameters_mut() {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
        Ok(())
    }

    /// All parameter values flattened in ordinal order.
    pub fn params(&self) -> Tensor {
        let data: Vec<f64> = self.parameters().flat_map(|p| p.value.data().iter().copied()).collect();
        Tensor::new(vec![data.len()], data).expect("built models have parameters")
    }

    /// All parameter gradients flattened in ordinal order.
    pub fn grads(&self) -> Vec<f64> {
        self.parameters().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &Tensor) -> Result<()> {
        self.set_params_slice(flat.data())
    }

    pub fn set_params_slice(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::shape("set_params", &[n], &[flat.len()]));
        }
        let mut offset = 0;
        for p in self.parameters_mut() {
            let len = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}
