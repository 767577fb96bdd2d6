//! MLP feature extractor onto the unit sphere, plus its checkpoint format.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::benchmark::DomainSample;
use crate::error::{Error, Result};
use crate::rng::stream;

const CHECKPOINT_MAGIC: &[u8; 8] = b"CDRCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 32,
            hidden_dims: vec![64, 64],
            output_dim: 16,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Encoder weights. `params` alternates weight (`fan_in × fan_out`) and
/// bias (`1 × fan_out`) per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: Vec<Tensor>,
}

impl Encoder {
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for (layer, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream(config.init_seed, layer as u64);
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            params.push(Tensor::new(fan_in, fan_out, w)?);
            params.push(Tensor::zeros(1, fan_out));
        }
        Ok(Encoder {
            config: config.clone(),
            params,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    /// Puts the parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Forward pass without gradients.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(batch.clone());
        let out = forward(&mut g, &params, x)?;
        Ok(g.value(out).clone())
    }

    pub fn encode_samples(&self, samples: &[DomainSample]) -> Result<Tensor> {
        self.encode(&observables(samples)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.config;
        let mut put = |v: u64| out.extend_from_slice(&v.to_le_bytes());
        put(c.input_dim as u64);
        put(c.hidden_dims.len() as u64);
        for &h in &c.hidden_dims {
            put(h as u64);
        }
        put(c.output_dim as u64);
        put(c.init_seed);
        for p in &self.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Contract(format!("malformed checkpoint: {msg}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut u64_at = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap())) };
        let input_dim = u64_at()? as usize;
        let n_hidden = u64_at()? as usize;
        if n_hidden > 1024 {
            return Err(bad("implausible layer count"));
        }
        let hidden_dims = (0..n_hidden)
            .map(|_| u64_at().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let output_dim = u64_at()? as usize;
        let init_seed = u64_at()?;
        let config = EncoderConfig {
            input_dim,
            hidden_dims,
            output_dim,
            init_seed,
        };
        config.validate().map_err(|_| bad("zero dimension"))?;

        let mut params = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            for (r, c) in [(fan_in, fan_out), (1, fan_out)] {
                let raw = take(8 * r * c)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                params.push(Tensor::new(r, c, data)?);
            }
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Encoder { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Encoder::from_bytes(&bytes).map_err(|e| Error::parse(path, e))
    }
}

/// Affine+tanh hidden layers, a final affine layer, then projection onto
/// the unit sphere.
pub fn forward(g: &mut Graph, params: &[Var], batch: Var) -> Result<Var> {
    debug_assert!(params.len() >= 2 && params.len().is_multiple_of(2));
    let layers = params.len() / 2;
    let mut h = batch;
    for (i, wb) in params.chunks_exact(2).enumerate() {
        let lin = g.matmul(h, wb[0])?;
        h = g.add_row_bias(lin, wb[1])?;
        if i + 1 < layers {
            h = g.tanh(h);
        }
    }
    g.row_l2_normalize(h).map_err(|e| match e {
        Error::DegenerateInput { row, norm, .. } => Error::DegenerateInput {
            op: "encoder output",
            row,
            norm,
        },
        other => other,
    })
}

/// Stacks the observables of `samples` into a matrix.
pub fn observables(samples: &[DomainSample]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.vec.as_slice()).collect();
    Tensor::from_rows(&rows)
}
