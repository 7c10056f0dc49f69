//! Reference architectures.
//!
//! `Mnist` (also used for Fashion-MNIST): two conv blocks, a 64-wide embedding
//! and a single dense classifier. `Cifar`: three conv blocks and a 128-wide
//! embedding. `Mlp`: two hidden dense layers for vector data. The
//! heterogeneous client variant drops the last conv block (the first hidden
//! layer for `Mlp`) and keeps the embedding width unchanged.

use serde::{Deserialize, Serialize};

use super::{Architecture, LayerSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mlp,
    #[serde(alias = "fashion")]
    Mnist,
    Cifar,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Mlp => "mlp",
            Preset::Mnist => "mnist",
            Preset::Cifar => "cifar",
        }
    }

    pub fn embedding_width(self) -> usize {
        match self {
            Preset::Mlp => 32,
            Preset::Mnist => 64,
            Preset::Cifar => 128,
        }
    }

    pub fn architecture(self, input_shape: &[usize], classes: usize, hetero: bool) -> Result<Architecture> {
        let embed = self.embedding_width();
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        let push = |spec: LayerSpec, layers: &mut Vec<LayerSpec>, shape: &mut Vec<usize>| -> Result<()> {
            *shape = spec.output_shape(shape).map_err(|why| {
                Error::Build(format!("{} preset cannot take input {input_shape:?}: {spec}: {why}", self.name()))
            })?;
            layers.push(spec);
            Ok(())
        };
        match self {
            Preset::Mlp => {
                if shape.len() > 1 {
                    push(LayerSpec::Flatten, &mut layers, &mut shape)?;
                }
                if !hetero {
                    push(LayerSpec::dense(shape[0], 64), &mut layers, &mut shape)?;
                    push(LayerSpec::Relu, &mut layers, &mut shape)?;
                }
            }
            Preset::Mnist | Preset::Cifar => {
                let channels: &[usize] = if self == Preset::Mnist { &[8, 16] } else { &[16, 32, 64] };
                let blocks = if hetero { channels.len() - 1 } else { channels.len() };
                for &out in &channels[..blocks] {
                    let in_ch = *shape.first().ok_or_else(|| Error::Build("empty input shape".into()))?;
                    push(LayerSpec::conv2d(in_ch, out, 3), &mut layers, &mut shape)?;
                    push(LayerSpec::Relu, &mut layers, &mut shape)?;
                    push(LayerSpec::maxpool2d(), &mut layers, &mut shape)?;
                }
                push(LayerSpec::Flatten, &mut layers, &mut shape)?;
            }
        }
        push(LayerSpec::dense(shape[0], embed), &mut layers, &mut shape)?;
        push(LayerSpec::Relu, &mut layers, &mut shape)?;
        let embed_tap = layers.len();
        push(LayerSpec::dense(embed, classes), &mut layers, &mut shape)?;
        let arch = Architecture::new(input_shape.to_vec(), layers, embed_tap);
        arch.activation_shapes()?;
        Ok(arch)
    }
}
