//! Small multilayer generator and discriminator.
//!
//! The generator adds a λ-weighted projection of the class embedding to the
//! output of the mapping network's first layer, so λ = 0 gives a purely
//! unconditional model. The discriminator has an affine unconditional head
//! and a bias-free projection head (feature · class embedding).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{leaky_relu, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Negative slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub data_dim: usize,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub mapping_layers: usize,
    pub mapping_units: usize,
    pub synthesis_layers: usize,
    pub synthesis_units: usize,
    pub trunk_layers: usize,
    pub trunk_units: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            num_classes: 8,
            latent_dim: 8,
            embed_dim: 8,
            mapping_layers: 2,
            mapping_units: 64,
            synthesis_layers: 3,
            synthesis_units: 64,
            trunk_layers: 3,
            trunk_units: 64,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("data_dim", self.data_dim),
            ("num_classes", self.num_classes),
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("mapping_layers", self.mapping_layers),
            ("mapping_units", self.mapping_units),
            ("synthesis_units", self.synthesis_units),
            ("trunk_layers", self.trunk_layers),
            ("trunk_units", self.trunk_units),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Ok(Self {
            weight: Tensor::matrix(fan_in, fan_out, w)?,
            bias: Tensor::zeros(vec![fan_out])?,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn unit_normal_table(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// Mapping network S; the first layer's output receives the class injection.
    pub style_layers: Vec<Linear>,
    pub class_embedding_table: Tensor,
    /// E: projects a class embedding to the first mapping layer's width.
    pub embedding_projection: Linear,
    /// Hidden synthesis layers followed by the output layer into data space.
    pub synthesis_layers: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub trunk_layers: Vec<Linear>,
    pub uncond_head: Linear,
    pub class_projection_table: Tensor,
}

/// Draws fresh generator and discriminator weights. Weights are normal with
/// std `1/sqrt(fan_in)`, biases zero, embedding tables unit normal.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<(GeneratorParams, DiscriminatorParams)> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut style_layers = Vec::with_capacity(arch.mapping_layers);
    let mut fan_in = arch.latent_dim;
    for _ in 0..arch.mapping_layers {
        style_layers.push(Linear::init(fan_in, arch.mapping_units, &mut rng)?);
        fan_in = arch.mapping_units;
    }
    let class_embedding_table = unit_normal_table(arch.num_classes, arch.embed_dim, &mut rng)?;
    let embedding_projection = Linear::init(arch.embed_dim, arch.mapping_units, &mut rng)?;
    let mut synthesis_layers = Vec::with_capacity(arch.synthesis_layers + 1);
    for _ in 0..arch.synthesis_layers {
        synthesis_layers.push(Linear::init(fan_in, arch.synthesis_units, &mut rng)?);
        fan_in = arch.synthesis_units;
    }
    synthesis_layers.push(Linear::init(fan_in, arch.data_dim, &mut rng)?);

    let mut trunk_layers = Vec::with_capacity(arch.trunk_layers);
    let mut fan_in = arch.data_dim;
    for _ in 0..arch.trunk_layers {
        trunk_layers.push(Linear::init(fan_in, arch.trunk_units, &mut rng)?);
        fan_in = arch.trunk_units;
    }
    let uncond_head = Linear::init(fan_in, 1, &mut rng)?;
    let class_projection_table = unit_normal_table(arch.num_classes, fan_in, &mut rng)?;

    Ok((
        GeneratorParams {
            style_layers,
            class_embedding_table,
            embedding_projection,
            synthesis_layers,
        },
        DiscriminatorParams {
            trunk_layers,
            uncond_head,
            class_projection_table,
        },
    ))
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: String, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: String, l: &'a mut Linear) {
    out.push((format!("{prefix}.weight"), &mut l.weight));
    out.push((format!("{prefix}.bias"), &mut l.bias));
}

/// Bound tape variables of one linear layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

fn bind_linear(tape: &mut Tape, l: &Linear, trainable: bool) -> Result<LinearVars> {
    let bind = |tape: &mut Tape, t: &Tensor| {
        if trainable {
            tape.param(t)
        } else {
            tape.constant(t.clone())
        }
    };
    Ok(LinearVars {
        weight: bind(tape, &l.weight)?,
        bias: bind(tape, &l.bias)?,
    })
}

fn apply_linear(tape: &mut Tape, x: Var, l: LinearVars) -> Result<Var> {
    let h = tape.matmul(x, l.weight)?;
    tape.add_bias(h, l.bias)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Index {
            what: "class id",
            index: bad,
            len: num_classes,
        });
    }
    Ok(())
}

/// Generator parameters recorded on a tape, in [`GeneratorParams::named`] order.
#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub style_layers: Vec<LinearVars>,
    pub class_embedding_table: Var,
    pub embedding_projection: LinearVars,
    pub synthesis_layers: Vec<LinearVars>,
}

impl GeneratorVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in &self.style_layers {
            v.extend([l.weight, l.bias]);
        }
        v.push(self.class_embedding_table);
        v.extend([self.embedding_projection.weight, self.embedding_projection.bias]);
        for l in &self.synthesis_layers {
            v.extend([l.weight, l.bias]);
        }
        v
    }
}

/// Values produced by one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTrace {
    /// First mapping layer output after the class injection, before activation.
    pub injected_preactivation: Var,
    pub style_code: Var,
    pub output: Var,
}

impl GeneratorParams {
    pub fn num_classes(&self) -> usize {
        self.class_embedding_table.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.style_layers[0].fan_in()
    }

    pub fn data_dim(&self) -> usize {
        self.synthesis_layers.last().unwrap().fan_out()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.style_layers.iter().enumerate() {
            push_linear(&mut out, format!("g.style.{i}"), l);
        }
        out.push(("g.class_embedding".into(), &self.class_embedding_table));
        push_linear(&mut out, "g.embedding_projection".into(), &self.embedding_projection);
        for (i, l) in self.synthesis_layers.iter().enumerate() {
            push_linear(&mut out, format!("g.synthesis.{i}"), l);
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.style_layers.iter_mut().enumerate() {
            push_linear_mut(&mut out, format!("g.style.{i}"), l);
        }
        out.push(("g.class_embedding".into(), &mut self.class_embedding_table));
        push_linear_mut(&mut out, "g.embedding_projection".into(), &mut self.embedding_projection);
        for (i, l) in self.synthesis_layers.iter_mut().enumerate() {
            push_linear_mut(&mut out, format!("g.synthesis.{i}"), l);
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<GeneratorVars> {
        let style_layers = self
            .style_layers
            .iter()
            .map(|l| bind_linear(tape, l, trainable))
            .collect::<Result<_>>()?;
        let class_embedding_table = if trainable {
            tape.param(&self.class_embedding_table)?
        } else {
            tape.constant(self.class_embedding_table.clone())?
        };
        let embedding_projection = bind_linear(tape, &self.embedding_projection, trainable)?;
        let synthesis_layers = self
            .synthesis_layers
            .iter()
            .map(|l| bind_linear(tape, l, trainable))
            .collect::<Result<_>>()?;
        Ok(GeneratorVars {
            style_layers,
            class_embedding_table,
            embedding_projection,
            synthesis_layers,
        })
    }

    /// Samples for a batch of latents (`batch × latent_dim`) and class ids.
    pub fn sample(&self, z: &Tensor, labels: &[usize], lambda: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let zv = tape.constant(z.clone())?;
        let trace = generator_forward_batch(&mut tape, &vars, zv, labels, lambda)?;
        Ok(tape.value(trace.output).clone())
    }
}

/// Batched generator pass: `S1(z) + lambda * E(c)`, activation, remaining
/// mapping layers, then synthesis into data space.
pub fn generator_forward_batch(
    tape: &mut Tape,
    params: &GeneratorVars,
    z: Var,
    labels: &[usize],
    lambda: f64,
) -> Result<GeneratorTrace> {
    check_lambda(lambda)?;
    let (batch, zdim) = tape.value(z).dims2()?;
    let num_classes = tape.value(params.class_embedding_table).shape()[0];
    check_labels(labels, num_classes)?;
    if labels.len() != batch {
        return Err(Error::Dimension {
            op: "generator labels",
            lhs: vec![batch, zdim],
            rhs: vec![labels.len()],
        });
    }

    let first = params.style_layers[0];
    let s1 = apply_linear(tape, z, first)?;
    let emb = tape.gather_rows(params.class_embedding_table, labels)?;
    let projected = apply_linear(tape, emb, params.embedding_projection)?;
    let weighted = tape.scale(projected, lambda)?;
    let injected = tape.add(s1, weighted)?;

    let mut h = tape.leaky_relu(injected, LEAKY_SLOPE)?;
    for &l in &params.style_layers[1..] {
        let a = apply_linear(tape, h, l)?;
        h = tape.leaky_relu(a, LEAKY_SLOPE)?;
    }
    let style_code = h;

    let (last, hidden) = params.synthesis_layers.split_last().unwrap();
    for &l in hidden {
        let a = apply_linear(tape, h, l)?;
        h = tape.leaky_relu(a, LEAKY_SLOPE)?;
    }
    let output = apply_linear(tape, h, *last)?;
    Ok(GeneratorTrace {
        injected_preactivation: injected,
        style_code,
        output,
    })
}

fn single_latent(params: &GeneratorParams, z: &[f64]) -> Result<Tensor> {
    if z.len() != params.latent_dim() {
        return Err(Error::Dimension {
            op: "generator latent",
            lhs: vec![params.latent_dim()],
            rhs: vec![z.len()],
        });
    }
    Tensor::matrix(1, z.len(), z.to_vec())
}

/// One sample for latent `z`, class `c` and conditioning weight `lambda`.
pub fn generator_forward(params: &GeneratorParams, z: &[f64], c: usize, lambda: f64) -> Result<Vec<f64>> {
    let z = single_latent(params, z)?;
    Ok(params.sample(&z, &[c], lambda)?.into_data())
}

/// First mapping layer output after injection, for a single latent.
pub fn generator_preactivation(params: &GeneratorParams, z: &[f64], c: usize, lambda: f64) -> Result<Vec<f64>> {
    let z = single_latent(params, z)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let zv = tape.constant(z)?;
    let trace = generator_forward_batch(&mut tape, &vars, zv, &[c], lambda)?;
    Ok(tape.value(trace.injected_preactivation).data().to_vec())
}

/// Discriminator parameters recorded on a tape, in [`DiscriminatorParams::named`] order.
#[derive(Debug, Clone)]
pub struct DiscriminatorVars {
    pub trunk_layers: Vec<LinearVars>,
    pub uncond_head: LinearVars,
    pub class_projection_table: Var,
}

impl DiscriminatorVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in &self.trunk_layers {
            v.extend([l.weight, l.bias]);
        }
        v.extend([self.uncond_head.weight, self.uncond_head.bias]);
        v.push(self.class_projection_table);
        v
    }
}

/// Values produced by one discriminator pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    /// `batch × 1` unconditional scores.
    pub uncond: Var,
    /// `batch × 1` projection scores against the requested classes.
    pub cond: Var,
    pub features: Var,
    /// Pre-activations of each trunk layer, used by the input-gradient penalty.
    pub preactivations: Vec<Var>,
}

impl DiscriminatorParams {
    pub fn num_classes(&self) -> usize {
        self.class_projection_table.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.class_projection_table.shape()[1]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk_layers.iter().enumerate() {
            push_linear(&mut out, format!("d.trunk.{i}"), l);
        }
        push_linear(&mut out, "d.uncond_head".into(), &self.uncond_head);
        out.push(("d.class_projection".into(), &self.class_projection_table));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk_layers.iter_mut().enumerate() {
            push_linear_mut(&mut out, format!("d.trunk.{i}"), l);
        }
        push_linear_mut(&mut out, "d.uncond_head".into(), &mut self.uncond_head);
        out.push(("d.class_projection".into(), &mut self.class_projection_table));
        out
    }

    /// Records the parameters; frozen bindings still pass gradients through
    /// to the inputs but accumulate none for the weights.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<DiscriminatorVars> {
        let trunk_layers = self
            .trunk_layers
            .iter()
            .map(|l| bind_linear(tape, l, trainable))
            .collect::<Result<_>>()?;
        let uncond_head = bind_linear(tape, &self.uncond_head, trainable)?;
        let class_projection_table = if trainable {
            tape.param(&self.class_projection_table)?
        } else {
            tape.constant(self.class_projection_table.clone())?
        };
        Ok(DiscriminatorVars {
            trunk_layers,
            uncond_head,
            class_projection_table,
        })
    }
}

/// Batched discriminator pass returning both heads.
pub fn discriminator_forward_batch(
    tape: &mut Tape,
    params: &DiscriminatorVars,
    x: Var,
    labels: &[usize],
) -> Result<DiscriminatorTrace> {
    let (batch, _) = tape.value(x).dims2()?;
    let num_classes = tape.value(params.class_projection_table).shape()[0];
    check_labels(labels, num_classes)?;
    if labels.len() != batch {
        return Err(Error::Dimension {
            op: "discriminator labels",
            lhs: tape.value(x).shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let mut h = x;
    let mut preactivations = Vec::with_capacity(params.trunk_layers.len());
    for &l in &params.trunk_layers {
        let a = apply_linear(tape, h, l)?;
        preactivations.push(a);
        h = tape.leaky_relu(a, LEAKY_SLOPE)?;
    }
    let features = h;
    let uncond = apply_linear(tape, features, params.uncond_head)?;
    let rows = tape.gather_rows(params.class_projection_table, labels)?;
    let prod = tape.mul(features, rows)?;
    let cond = tape.row_sum(prod)?;
    Ok(DiscriminatorTrace {
        uncond,
        cond,
        features,
        preactivations,
    })
}

/// `(uncond_score, cond_score)` for a single sample.
pub fn discriminator_forward(params: &DiscriminatorParams, x: &[f64], c: usize) -> Result<(f64, f64)> {
    let in_dim = params.trunk_layers[0].fan_in();
    if x.len() != in_dim {
        return Err(Error::Dimension {
            op: "discriminator input",
            lhs: vec![in_dim],
            rhs: vec![x.len()],
        });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true)?;
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?)?;
    let trace = discriminator_forward_batch(&mut tape, &vars, xv, &[c])?;
    Ok((tape.scalar_value(trace.uncond)?, tape.scalar_value(trace.cond)?))
}

/// Trunk features φ(x) for a single sample, computed without a tape.
pub fn discriminator_features(params: &DiscriminatorParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &params.trunk_layers {
        let (fi, fo) = (l.fan_in(), l.fan_out());
        let w = l.weight.data();
        let mut out = l.bias.data().to_vec();
        for i in 0..fi {
            for j in 0..fo {
                out[j] += h[i] * w[i * fo + j];
            }
        }
        h = out.into_iter().map(|v| leaky_relu(v, LEAKY_SLOPE)).collect();
    }
    h
}
