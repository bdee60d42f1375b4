//! Encoder/decoder networks over the partitioned latent space
//! z = [z_pr1, z_sh, z_pr2].
//!
//! Each modality owns a private head (posterior over its own private
//! block) and a shared head (posterior over z_sh); each head is a
//! one-hidden-layer tanh MLP emitting [mean, logvar]. Decoders map
//! concat(z_pr_m, z_sh) back to feature space with a free per-feature
//! log-variance. A linear label head on z_sh serves the supervised
//! variants.
//!
//! Parameters are a flat, ordered list of named f64 arrays; the order and
//! names are stable and are what the checkpoint format serializes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dist::DiagGaussian;
use crate::rng::{normal_vec, Stream};
use crate::tensor::{Gradients, Tape, Tensor};
use crate::{math, Error, Result};

/// Latent layout dims(z_pr1, z_sh, z_pr2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    pub d_pr1: usize,
    pub d_sh: usize,
    pub d_pr2: usize,
}

impl PartitionSpec {
    pub fn new(d_pr1: usize, d_sh: usize, d_pr2: usize) -> Result<Self> {
        if d_sh == 0 {
            return Err(Error::InvalidConfig(String::from(
                "partition requires d_sh >= 1",
            )));
        }
        Ok(PartitionSpec { d_pr1, d_sh, d_pr2 })
    }

    pub fn total(&self) -> usize {
        self.d_pr1 + self.d_sh + self.d_pr2
    }

    /// Width of modality m's private block.
    pub fn d_pr(&self, m: Modality) -> usize {
        match m {
            Modality::One => self.d_pr1,
            Modality::Two => self.d_pr2,
        }
    }
}

/// One of the two views. All experiments use exactly M = 2; extending to
/// more views means widening this enum and the model layout it indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    One,
    Two,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::One, Modality::Two];

    pub fn index(self) -> usize {
        match self {
            Modality::One => 0,
            Modality::Two => 1,
        }
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::One => Modality::Two,
            Modality::Two => Modality::One,
        }
    }
}

/// Input widths, latent layout and hidden width of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub x1: usize,
    pub x2: usize,
    pub hidden: usize,
    pub partition: PartitionSpec,
}

impl ModelDims {
    pub fn new(x1: usize, x2: usize, hidden: usize, partition: PartitionSpec) -> Result<Self> {
        if x1 == 0 || x2 == 0 || hidden == 0 {
            return Err(Error::InvalidConfig(String::from(
                "feature and hidden widths must be >= 1",
            )));
        }
        Ok(ModelDims {
            x1,
            x2,
            hidden,
            partition,
        })
    }

    pub fn x_dim(&self, m: Modality) -> usize {
        match m {
            Modality::One => self.x1,
            Modality::Two => self.x2,
        }
    }
}

/// One named parameter array.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Ordered set of named parameter arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), rows * cols);
        self.entries.push(ParamEntry {
            name,
            rows,
            cols,
            values,
        });
    }
}

/// How an un-encoded private block is filled when a decoder needs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    /// Prior mean: zeros. The default everywhere.
    Mean,
    /// Standard-normal draw, off-tape.
    Sample,
}

/// Fill for a private latent block that no encoder produced.
///
/// Mean mode returns the prior mean (zeros); sample mode returns the
/// provided standard-normal draw. Either way the result is a constant:
/// no gradient flows into a prior fill.
pub fn prior_fill(rows: usize, cols: usize, mode: FillMode, noise: Option<&Tensor>) -> Result<Tensor> {
    match mode {
        FillMode::Mean => Ok(Tensor::zeros(rows, cols)),
        FillMode::Sample => {
            let noise = noise.ok_or_else(|| {
                Error::InvalidConfig(String::from("prior_fill sample mode requires noise"))
            })?;
            if noise.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    op: "prior_fill",
                    left: (rows, cols),
                    right: noise.shape(),
                });
            }
            // detach defensively; fills must stay constant
            Ok(Tensor::constant(rows, cols, noise.values().to_vec())?)
        }
    }
}

/// A full model: dims plus its parameter arrays.
#[derive(Debug, Clone)]
pub struct Model {
    dims: ModelDims,
    params: ParamSet,
}

fn head_names(m: Modality, which: &str) -> [String; 4] {
    let n = m.number();
    [
        format!("enc{n}.{which}.l1.w"),
        format!("enc{n}.{which}.l1.b"),
        format!("enc{n}.{which}.out.w"),
        format!("enc{n}.{which}.out.b"),
    ]
}

fn decoder_names(m: Modality) -> [String; 5] {
    let n = m.number();
    [
        format!("dec{n}.l1.w"),
        format!("dec{n}.l1.b"),
        format!("dec{n}.out.w"),
        format!("dec{n}.out.b"),
        format!("dec{n}.feat_logvar"),
    ]
}

/// (name, rows, cols, fan_in) for every parameter, in serialization order.
fn layout(dims: &ModelDims) -> Vec<(String, usize, usize, usize)> {
    let h = dims.hidden;
    let mut out = Vec::new();
    for m in Modality::BOTH {
        let d_x = dims.x_dim(m);
        for (which, d_out) in [("private", dims.partition.d_pr(m)), ("shared", dims.partition.d_sh)] {
            let names = head_names(m, which);
            out.push((names[0].clone(), d_x, h, d_x));
            out.push((names[1].clone(), 1, h, 0));
            out.push((names[2].clone(), h, 2 * d_out, h));
            out.push((names[3].clone(), 1, 2 * d_out, 0));
        }
    }
    for m in Modality::BOTH {
        let d_x = dims.x_dim(m);
        let d_z = dims.partition.d_pr(m) + dims.partition.d_sh;
        let names = decoder_names(m);
        out.push((names[0].clone(), d_z, h, d_z));
        out.push((names[1].clone(), 1, h, 0));
        out.push((names[2].clone(), h, d_x, h));
        out.push((names[3].clone(), 1, d_x, 0));
        out.push((names[4].clone(), 1, d_x, 0));
    }
    out.push((String::from("label.w"), dims.partition.d_sh, 1, dims.partition.d_sh));
    out.push((String::from("label.b"), 1, 1, 0));
    out
}

impl Model {
    /// Fresh model with weights ~ N(0, 1/fan_in), biases and feature
    /// log-variances zero. Draws happen in serialization order, so a seed
    /// fully determines the parameters.
    pub fn init(dims: ModelDims, rng: &mut Stream) -> Model {
        let mut params = ParamSet::default();
        for (name, rows, cols, fan_in) in layout(&dims) {
            let values = if fan_in == 0 {
                alloc::vec![0.0; rows * cols]
            } else {
                let std = 1.0 / math::sqrt(fan_in as f64);
                normal_vec(rng, rows * cols)
                    .into_iter()
                    .map(|v| v * std)
                    .collect()
            };
            params.push(name, rows, cols, values);
        }
        Model { dims, params }
    }

    /// Rebuild a model from dims and a parameter set (checkpoint load);
    /// names and shapes must match the canonical layout exactly.
    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Model> {
        let expect = layout(&dims);
        if expect.len() != params.entries.len() {
            return Err(Error::InvalidConfig(format!(
                "parameter set has {} arrays, layout wants {}",
                params.entries.len(),
                expect.len()
            )));
        }
        for ((name, rows, cols, _), entry) in expect.iter().zip(&params.entries) {
            if name != &entry.name || *rows != entry.rows || *cols != entry.cols {
                return Err(Error::InvalidConfig(format!(
                    "parameter {} ({}x{}) does not match layout entry {} ({}x{})",
                    entry.name, entry.rows, entry.cols, name, rows, cols
                )));
            }
        }
        Ok(Model { dims, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Total scalar parameter count (reported in run manifests).
    pub fn param_count(&self) -> usize {
        self.params.value_count()
    }

    /// Bind parameters onto a tape as differentiable leaves.
    pub fn bind<'m>(&'m self, tape: &Tape) -> Result<BoundModel<'m>> {
        let tensors = self
            .params
            .entries
            .iter()
            .map(|e| tape.leaf(e.rows, e.cols, &e.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            model: self,
            tensors,
        })
    }

    /// Bind parameters as constants (deterministic evaluation path).
    pub fn bind_const(&self) -> BoundModel<'_> {
        let tensors = self
            .params
            .entries
            .iter()
            .map(|e| {
                Tensor::constant(e.rows, e.cols, e.values.clone()).expect("layout shapes are valid")
            })
            .collect();
        BoundModel {
            model: self,
            tensors,
        }
    }
}

/// Model parameters materialized as tensors (leaves or constants).
pub struct BoundModel<'m> {
    model: &'m Model,
    tensors: Vec<Tensor>,
}

impl<'m> BoundModel<'m> {
    pub fn dims(&self) -> &ModelDims {
        &self.model.dims
    }

    fn named(&self, name: &str) -> &Tensor {
        let idx = self
            .model
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from layout"));
        &self.tensors[idx]
    }

    fn mlp_head(&self, names: &[String; 4], x: &Tensor) -> Result<DiagGaussian> {
        let h = x
            .matmul(self.named(&names[0]))?
            .add(self.named(&names[1]))?
            .tanh();
        let out = h.matmul(self.named(&names[2]))?.add(self.named(&names[3]))?;
        let d = out.cols() / 2;
        let mean = out.slice_cols(0, d)?;
        let logvar = out.slice_cols(d, 2 * d)?;
        DiagGaussian::new(mean, logvar)
    }

    /// Posterior pair (private block, shared block) for modality m.
    pub fn encode(&self, m: Modality, x: &Tensor) -> Result<(DiagGaussian, DiagGaussian)> {
        if x.cols() != self.model.dims.x_dim(m) {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: (x.rows(), self.model.dims.x_dim(m)),
                right: x.shape(),
            });
        }
        let q_pr = self.mlp_head(&head_names(m, "private"), x)?;
        let q_sh = self.mlp_head(&head_names(m, "shared"), x)?;
        Ok((q_pr, q_sh))
    }

    /// Likelihood parameters for modality m from (z_pr_m, z_sh):
    /// per-sample means and the shared per-feature log-variance row.
    pub fn decode(&self, m: Modality, z_pr: &Tensor, z_sh: &Tensor) -> Result<(Tensor, Tensor)> {
        let part = &self.model.dims.partition;
        if z_pr.cols() != part.d_pr(m) || z_sh.cols() != part.d_sh {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: (part.d_pr(m), part.d_sh),
                right: (z_pr.cols(), z_sh.cols()),
            });
        }
        let names = decoder_names(m);
        let z = z_pr.hcat(z_sh)?;
        let h = z
            .matmul(self.named(&names[0]))?
            .add(self.named(&names[1]))?
            .tanh();
        let mean = h.matmul(self.named(&names[2]))?.add(self.named(&names[3]))?;
        let logvar = self.named(&names[4]).clamp(0.0, 0.0);
        Ok((mean, logvar))
    }

    /// Bernoulli logit of the linear label head on z_sh, as N × 1.
    pub fn label_logit(&self, z_sh: &Tensor) -> Result<Tensor> {
        z_sh.matmul(self.named("label.w"))?.add(self.named("label.b"))
    }

    /// Gradients aligned with the parameter entry order (trainer use).
    pub fn gradient_arrays(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| grads.wrt(t)).collect()
    }

    /// Leaf tensor for a named parameter (tests).
    pub fn param_tensor(&self, name: &str) -> &Tensor {
        self.named(name)
    }
}
