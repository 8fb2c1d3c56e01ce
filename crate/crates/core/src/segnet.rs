//! Miniature encoder-decoder segmentation network.
//!
//! Two 3×3 conv blocks at full resolution, two at half, one at quarter
//! resolution, then two upsample+conv stages and a 1×1 classifier. Every
//! convolution except the classifier is followed by ReLU.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::grid::{Tape, Tensor, Var};
use crate::image::NUM_CLASSES;

#[derive(Clone, Copy, Debug)]
enum Stage {
    Conv { layer: usize, relu: bool },
    Down,
    Up,
}

/// (in channels, out channels, kernel size) per convolution.
const CONVS: [(usize, usize, usize); 8] = [
    (1, 16, 3),
    (16, 16, 3),
    (16, 32, 3),
    (32, 32, 3),
    (32, 64, 3),
    (64, 32, 3),
    (32, 16, 3),
    (16, NUM_CLASSES, 1),
];

const STAGES: [Stage; 12] = [
    Stage::Conv {
        layer: 0,
        relu: true,
    },
    Stage::Conv {
        layer: 1,
        relu: true,
    },
    Stage::Down,
    Stage::Conv {
        layer: 2,
        relu: true,
    },
    Stage::Conv {
        layer: 3,
        relu: true,
    },
    Stage::Down,
    Stage::Conv {
        layer: 4,
        relu: true,
    },
    Stage::Up,
    Stage::Conv {
        layer: 5,
        relu: true,
    },
    Stage::Up,
    Stage::Conv {
        layer: 6,
        relu: true,
    },
    Stage::Conv {
        layer: 7,
        relu: false,
    },
];

/// Spatial dims must be divisible by this.
pub const SPATIAL_MULTIPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNetParams {
    layers: Vec<ConvLayer>,
    init_seed: u64,
}

/// Parameters recorded on a tape for one step.
pub struct BoundNet<'t> {
    vars: Vec<(Var<'t>, Var<'t>)>,
}

impl SegNetParams {
    /// He-normal kernels (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = CONVS
            .iter()
            .map(|&(cin, cout, k)| {
                let fan_in = (cin * k * k) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let data = (0..cout * cin * k * k)
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                ConvLayer {
                    kernel: Tensor::new(&[cout, cin, k, k], data)
                        .expect("shape")
                        .requiring_grad(),
                    bias: Tensor::zeros(&[cout]).requiring_grad(),
                }
            })
            .collect();
        SegNetParams {
            layers,
            init_seed: seed,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    /// Kernel then bias for each layer, in forward order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.kernel, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
    }

    /// Records the parameters on `tape`. With `trainable == false` they enter
    /// as constants and backward never reaches them.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundNet<'t> {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(&l.kernel), tape.leaf(&l.bias))
                } else {
                    (
                        tape.constant(l.kernel.clone()),
                        tape.constant(l.bias.clone()),
                    )
                }
            })
            .collect();
        BoundNet { vars }
    }

    /// Softmax probabilities for `[N, 1, H, W]` input, computed without gradients.
    pub fn predict_probs(&self, batch: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let net = self.bind(&tape, false);
        let x = tape.leaf(batch);
        let probs = tape.softmax_channels(net.forward(x)?)?;
        Ok(probs.value())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            seed: self.init_seed,
            layers: self.tensors().map(|t| t.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(5 + 4 + json.len() + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::new(ErrorKind::Checkpoint, m.to_string());
        if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(bad("missing CKPT1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(9..9 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let mut params = SegNetParams::init(header.seed);
        let expected: Vec<Vec<usize>> = params.tensors().map(|t| t.shape().to_vec()).collect();
        if header.layers != expected {
            return Err(bad("layer shapes do not match this network"));
        }
        let mut values = bytes[9 + hlen..].chunks_exact(8);
        if values.len() != params.param_count() || !values.remainder().is_empty() {
            return Err(bad("parameter payload has the wrong length"));
        }
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = f64::from_le_bytes(
                    values
                        .next()
                        .expect("length checked")
                        .try_into()
                        .expect("8 bytes"),
                );
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
            .map_err(|e| Error::new(e.kind(), format!("{}: {}", path.display(), e.message())))
    }
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"CKPT1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    seed: u64,
    layers: Vec<Vec<usize>>,
}

impl<'t> BoundNet<'t> {
    /// Rebuilds a bound network from vars laid out as kernel, bias per layer.
    pub fn from_vars(vars: &[Var<'t>]) -> Result<Self> {
        if vars.len() != 2 * CONVS.len() {
            return Err(Error::shape(format!(
                "expected {} parameter vars, got {}",
                2 * CONVS.len(),
                vars.len()
            )));
        }
        Ok(BoundNet {
            vars: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    pub fn vars(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.vars.iter().flat_map(|&(k, b)| [k, b])
    }

    /// Raw logits `[N, 4, H, W]` for `[N, 1, H, W]` input.
    pub fn forward(&self, input: Var<'t>) -> Result<Var<'t>> {
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape(format!(
                "network input must be [N,1,H,W], got {shape:?}"
            )));
        }
        if shape[2] % SPATIAL_MULTIPLE != 0 || shape[3] % SPATIAL_MULTIPLE != 0 {
            return Err(Error::shape(format!(
                "spatial dims {}x{} not divisible by {SPATIAL_MULTIPLE}",
                shape[2], shape[3]
            )));
        }
        let tape = input.tape();
        let mut x = input;
        for stage in STAGES {
            x = match stage {
                Stage::Conv { layer, relu } => {
                    let (k, b) = self.vars[layer];
                    let y = tape.conv2d(x, k, b)?;
                    if relu {
                        y.relu()
                    } else {
                        y
                    }
                }
                Stage::Down => tape.pool2(x)?,
                Stage::Up => tape.upsample2(x)?,
            };
        }
        Ok(x)
    }

    pub fn predict_probs(&self, input: Var<'t>) -> Result<Var<'t>> {
        input.tape().softmax_channels(self.forward(input)?)
    }
}
