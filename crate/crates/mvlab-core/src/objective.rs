//! Training objectives over the partitioned latent space: MVAE, MMVAE,
//! MoPoE and MMVAE++, plus the supervised label augmentation.
//!
//! The product-of-experts objectives (MVAE, MoPoE) are sums of
//! generalized bound terms L_{M←I} that encode the modalities in I and
//! decode the modalities in M. The mixture objectives (MMVAE, MMVAE++)
//! are stratified over per-modality components; MMVAE++ differs from
//! MMVAE only by passing the shared sample through stop-gradient in
//! same-view reconstruction terms, so the two are forward-identical and
//! differ purely in which gradients reach the shared encoder heads.
//!
//! Noise is drawn up front into a [`NoiseBundle`] with a fixed layout
//! (terms in canonical order; partitions pr1, sh, pr2 within a term), so
//! objectives that share a term prefix see identical noise — the
//! structural identities between objectives are exact, not statistical.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dist::{gaussian_log_prob, poe_combine, DiagGaussian};
use crate::net::{prior_fill, BoundModel, FillMode, Modality, ModelDims};
use crate::rng::{normal_vec, Stream};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which multimodal objective to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Mvae,
    Mmvae,
    MoPoe,
    MmvaePp,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Mvae,
        ObjectiveKind::Mmvae,
        ObjectiveKind::MoPoe,
        ObjectiveKind::MmvaePp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mvae => "mvae",
            ObjectiveKind::Mmvae => "mmvae",
            ObjectiveKind::MoPoe => "mopoe",
            ObjectiveKind::MmvaePp => "mmvaepp",
        }
    }

    pub fn parse(s: &str) -> Result<ObjectiveKind> {
        match s {
            "mvae" => Ok(ObjectiveKind::Mvae),
            "mmvae" => Ok(ObjectiveKind::Mmvae),
            "mopoe" => Ok(ObjectiveKind::MoPoe),
            "mmvaepp" => Ok(ObjectiveKind::MmvaePp),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown objective kind '{other}'"
            ))),
        }
    }
}

/// Objective plus its supervision and mixture settings.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub supervised: bool,
    /// Weight of the label log-likelihood term.
    pub beta: f64,
    /// Mixture weights α_m; must sum to 1.
    pub moe_weights: [f64; 2],
    /// Fill for un-encoded private blocks in cross-modal decodes.
    pub cross_fill: FillMode,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveConfig {
            kind,
            supervised: false,
            beta: 0.0,
            moe_weights: [0.5, 0.5],
            cross_fill: FillMode::Mean,
        }
    }

    pub fn supervised(kind: ObjectiveKind, beta: f64) -> Self {
        ObjectiveConfig {
            supervised: true,
            beta,
            ..ObjectiveConfig::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig(String::from("beta must be >= 0")));
        }
        if !self.supervised && self.beta != 0.0 {
            return Err(Error::InvalidConfig(String::from(
                "beta > 0 requires the supervised flag",
            )));
        }
        let sum = self.moe_weights[0] + self.moe_weights[1];
        if self.moe_weights.iter().any(|&w| w < 0.0) || crate::math::abs(sum - 1.0) > 1e-12 {
            return Err(Error::InvalidConfig(String::from(
                "moe_weights must be non-negative and sum to 1",
            )));
        }
        Ok(())
    }
}

/// Subset of the two modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);
    pub const M1: ModalitySet = ModalitySet(0b01);
    pub const M2: ModalitySet = ModalitySet(0b10);
    pub const BOTH: ModalitySet = ModalitySet(0b11);

    pub fn single(m: Modality) -> ModalitySet {
        ModalitySet(1 << m.index())
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::BOTH.into_iter().filter(move |&m| self.contains(m))
    }
}

/// One minibatch: aligned feature matrices and optional binary labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x1: Tensor,
    pub x2: Tensor,
    /// N × 1 of {0, 1}.
    pub y: Option<Tensor>,
}

impl Batch {
    pub fn new(x1: Tensor, x2: Tensor, y: Option<Tensor>) -> Result<Batch> {
        if x1.rows() != x2.rows() {
            return Err(Error::RowCountMismatch {
                what: "batch",
                left: x1.rows(),
                right: x2.rows(),
            });
        }
        if let Some(y) = &y {
            if y.rows() != x1.rows() || y.cols() != 1 {
                return Err(Error::RowCountMismatch {
                    what: "batch labels",
                    left: x1.rows(),
                    right: y.rows(),
                });
            }
        }
        Ok(Batch { x1, x2, y })
    }

    pub fn n(&self) -> usize {
        self.x1.rows()
    }

    pub fn x(&self, m: Modality) -> &Tensor {
        match m {
            Modality::One => &self.x1,
            Modality::Two => &self.x2,
        }
    }
}

/// Noise for one bound term or stratified component, by latent partition.
#[derive(Debug, Clone, Default)]
pub struct TermNoise {
    pub pr1: Option<Tensor>,
    pub sh: Option<Tensor>,
    pub pr2: Option<Tensor>,
}

impl TermNoise {
    pub fn pr(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::One => self.pr1.as_ref(),
            Modality::Two => self.pr2.as_ref(),
        }
    }

    fn sh(&self) -> Result<&Tensor> {
        self.sh.as_ref().ok_or(Error::InvalidConfig(String::from(
            "noise bundle missing shared-partition noise",
        )))
    }

    fn pr_required(&self, m: Modality) -> Result<&Tensor> {
        self.pr(m).ok_or(Error::InvalidConfig(String::from(
            "noise bundle missing private-partition noise",
        )))
    }
}

/// All reparameterization noise for one optimization step.
///
/// Terms appear in the canonical order of the objective (see
/// [`poe_term_specs`]; the mixture objectives use one entry per modality
/// component). Within a term the partitions draw in order pr1, sh, pr2.
/// Objectives whose term lists share a prefix therefore consume
/// identical noise for those terms.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub terms: Vec<TermNoise>,
}

/// Canonical (decode set, encode set) lists for the PoE objectives.
pub fn poe_term_specs(kind: ObjectiveKind) -> Vec<(ModalitySet, ModalitySet)> {
    let mut specs = alloc::vec![
        (ModalitySet::BOTH, ModalitySet::BOTH),
        (ModalitySet::M1, ModalitySet::M1),
        (ModalitySet::M2, ModalitySet::M2),
    ];
    if kind == ObjectiveKind::MoPoe {
        specs.push((ModalitySet::M1, ModalitySet::M2));
        specs.push((ModalitySet::M2, ModalitySet::M1));
    }
    specs
}

fn maybe_normal(rng: &mut Stream, needed: bool, rows: usize, cols: usize) -> Option<Tensor> {
    if needed {
        Some(
            Tensor::constant(rows, cols, normal_vec(rng, rows * cols))
                .expect("normal_vec length matches"),
        )
    } else {
        None
    }
}

/// Draw the full noise bundle for one step, in the documented order.
pub fn draw_noise(
    cfg: &ObjectiveConfig,
    dims: &ModelDims,
    n: usize,
    rng: &mut Stream,
) -> NoiseBundle {
    let part = &dims.partition;
    let sample_fill = cfg.cross_fill == FillMode::Sample;
    let mut terms = Vec::new();
    match cfg.kind {
        ObjectiveKind::Mvae | ObjectiveKind::MoPoe => {
            for (decode, encode) in poe_term_specs(cfg.kind) {
                let need_pr = |m: Modality| {
                    encode.contains(m) || (decode.contains(m) && sample_fill)
                };
                terms.push(TermNoise {
                    pr1: maybe_normal(rng, need_pr(Modality::One), n, part.d_pr1),
                    sh: maybe_normal(rng, true, n, part.d_sh),
                    pr2: maybe_normal(rng, need_pr(Modality::Two), n, part.d_pr2),
                });
            }
        }
        ObjectiveKind::Mmvae | ObjectiveKind::MmvaePp => {
            for m in Modality::BOTH {
                let need_pr = |p: Modality| p == m || sample_fill;
                terms.push(TermNoise {
                    pr1: maybe_normal(rng, need_pr(Modality::One), n, part.d_pr1),
                    sh: maybe_normal(rng, true, n, part.d_sh),
                    pr2: maybe_normal(rng, need_pr(Modality::Two), n, part.d_pr2),
                });
            }
        }
    }
    NoiseBundle { terms }
}

/// Both modalities' posterior pairs, encoded once per step.
pub struct EncodedViews {
    /// Per modality: (private posterior, shared posterior).
    pub q: [(DiagGaussian, DiagGaussian); 2],
}

/// Run both modality encoders on the batch.
pub fn encode_all(bound: &BoundModel, batch: &Batch) -> Result<EncodedViews> {
    let q1 = bound.encode(Modality::One, &batch.x1)?;
    let q2 = bound.encode(Modality::Two, &batch.x2)?;
    Ok(EncodedViews { q: [q1, q2] })
}

/// One generalized bound term L_{M←I}; all three values are batch means.
#[derive(Debug, Clone)]
pub struct BoundTerm {
    pub decode_set: ModalitySet,
    pub encode_set: ModalitySet,
    pub recon: Tensor,
    pub kl: Tensor,
    pub value: Tensor,
}

/// L_{M←I} from precomputed encodings.
///
/// Per latent partition the posterior is the product of experts with the
/// prior: the shared block fuses every encoding modality's shared head;
/// private block m fuses modality m's private head iff m ∈ I, else the
/// partition is prior-only (KL 0, value filled per `fill` when decoded).
pub fn bound_term_from(
    bound: &BoundModel,
    enc: &EncodedViews,
    decode_set: ModalitySet,
    encode_set: ModalitySet,
    batch: &Batch,
    noise: &TermNoise,
    fill: FillMode,
) -> Result<BoundTerm> {
    if encode_set.is_empty() {
        return Err(Error::EmptyEncodeSet);
    }
    let n = batch.n();
    let part = &bound.dims().partition;

    let shared_experts: Vec<DiagGaussian> = encode_set
        .iter()
        .map(|m| enc.q[m.index()].1.clone())
        .collect();
    let q_sh = poe_combine(&shared_experts, true, (n, part.d_sh))?;
    let z_sh = q_sh.sample(noise.sh()?)?;
    let mut kl = q_sh.kl_to_standard()?;

    let mut z_pr: [Option<Tensor>; 2] = [None, None];
    for m in Modality::BOTH {
        let d = part.d_pr(m);
        if encode_set.contains(m) {
            let q_pr = poe_combine(
                core::slice::from_ref(&enc.q[m.index()].0),
                true,
                (n, d),
            )?;
            z_pr[m.index()] = Some(q_pr.sample(noise.pr_required(m)?)?);
            kl = kl.add(&q_pr.kl_to_standard()?)?;
        } else if decode_set.contains(m) {
            z_pr[m.index()] = Some(prior_fill(n, d, fill, noise.pr(m))?);
        }
    }

    let mut recon: Option<Tensor> = None;
    for m in decode_set.iter() {
        let z = z_pr[m.index()]
            .as_ref()
            .expect("decoded blocks are always filled");
        let (mean, logvar) = bound.decode(m, z, &z_sh)?;
        let lp = gaussian_log_prob(batch.x(m), &mean, &logvar)?;
        recon = Some(match recon {
            None => lp,
            Some(acc) => acc.add(&lp)?,
        });
    }
    let recon = recon.ok_or_else(|| {
        Error::InvalidConfig(String::from("bound term requires a non-empty decode set"))
    })?;

    let recon_mean = recon.mean_all();
    let kl_mean = kl.mean_all();
    let value = recon.sub(&kl)?.mean_all();
    Ok(BoundTerm {
        decode_set,
        encode_set,
        recon: recon_mean,
        kl: kl_mean,
        value,
    })
}

/// L_{M←I} encoding from scratch (test-friendly entry point).
pub fn bound_term(
    bound: &BoundModel,
    decode_set: ModalitySet,
    encode_set: ModalitySet,
    batch: &Batch,
    noise: &TermNoise,
    fill: FillMode,
) -> Result<BoundTerm> {
    let enc = encode_all(bound, batch)?;
    bound_term_from(bound, &enc, decode_set, encode_set, batch, noise, fill)
}

/// The PoE-objective terms in canonical order (MVAE: 3 terms, MoPoE: 5).
pub fn poe_terms(
    bound: &BoundModel,
    cfg: &ObjectiveConfig,
    batch: &Batch,
    noise: &NoiseBundle,
) -> Result<Vec<BoundTerm>> {
    let enc = encode_all(bound, batch)?;
    let specs = poe_term_specs(cfg.kind);
    if noise.terms.len() < specs.len() {
        return Err(Error::InvalidConfig(String::from(
            "noise bundle has fewer terms than the objective",
        )));
    }
    specs
        .into_iter()
        .zip(&noise.terms)
        .map(|((decode, encode), tn)| {
            bound_term_from(bound, &enc, decode, encode, batch, tn, cfg.cross_fill)
        })
        .collect()
}

/// Everything a training step needs from one objective evaluation.
pub struct ObjectiveOutput {
    /// Scalar loss to minimize (negated bound, plus label term if any).
    pub loss: Tensor,
    /// Per-modality shared posteriors (raw heads).
    pub q_sh: [DiagGaussian; 2],
}

fn bernoulli_log_likelihood(y: &Tensor, logit: &Tensor) -> Result<Tensor> {
    // y·log σ(l) + (1−y)·log(1−σ(l)) = −y·softplus(−l) − (1−y)·softplus(l)
    let ones = Tensor::full(y.rows(), y.cols(), 1.0);
    let pos = y.mul(&logit.neg().softplus())?;
    let neg = ones.sub(y)?.mul(&logit.softplus())?;
    Ok(pos.add(&neg)?.neg())
}

/// Subtract β · Σ_m α_m E[log p(y | z_sh^{(m)})] from the loss.
///
/// The expectation reuses the shared-partition samples already drawn by
/// the objective (one per modality), so supervision adds no extra noise.
pub fn supervised_augment(
    bound: &BoundModel,
    loss: Tensor,
    z_sh_samples: &[Tensor; 2],
    y: &Tensor,
    beta: f64,
    weights: [f64; 2],
) -> Result<Tensor> {
    if beta == 0.0 {
        return Ok(loss);
    }
    let mut term: Option<Tensor> = None;
    for (m, z) in Modality::BOTH.into_iter().zip(z_sh_samples) {
        let logit = bound.label_logit(z)?;
        let ll = bernoulli_log_likelihood(y, &logit)?
            .mean_all()
            .scale(weights[m.index()]);
        term = Some(match term {
            None => ll,
            Some(acc) => acc.add(&ll)?,
        });
    }
    loss.sub(&term.expect("two modalities").scale(beta))
}

fn require_labels(batch: &Batch) -> Result<&Tensor> {
    batch.y.as_ref().ok_or(Error::MissingLabels)
}

fn sum_values(terms: &[BoundTerm]) -> Result<Tensor> {
    let mut acc = terms[0].value.clone();
    for t in &terms[1..] {
        acc = acc.add(&t.value)?;
    }
    Ok(acc)
}

fn poe_objective(
    bound: &BoundModel,
    cfg: &ObjectiveConfig,
    batch: &Batch,
    noise: &NoiseBundle,
) -> Result<ObjectiveOutput> {
    let enc = encode_all(bound, batch)?;
    let specs = poe_term_specs(cfg.kind);
    if noise.terms.len() < specs.len() {
        return Err(Error::InvalidConfig(String::from(
            "noise bundle has fewer terms than the objective",
        )));
    }
    let mut terms = Vec::with_capacity(specs.len());
    for ((decode, encode), tn) in specs.into_iter().zip(&noise.terms) {
        terms.push(bound_term_from(
            bound,
            &enc,
            decode,
            encode,
            batch,
            tn,
            cfg.cross_fill,
        )?);
    }
    let mut loss = sum_values(&terms)?.neg();

    if cfg.supervised {
        let y = require_labels(batch)?;
        // Raw per-modality shared samples, reusing the noise of the
        // unimodal terms L_{m←m} (canonical indices 1 and 2).
        let z1 = enc.q[0].1.sample(noise.terms[1].sh()?)?;
        let z2 = enc.q[1].1.sample(noise.terms[2].sh()?)?;
        loss = supervised_augment(bound, loss, &[z1, z2], y, cfg.beta, cfg.moe_weights)?;
    }
    Ok(ObjectiveOutput {
        loss,
        q_sh: [enc.q[0].1.clone(), enc.q[1].1.clone()],
    })
}

fn mixture_objective(
    bound: &BoundModel,
    cfg: &ObjectiveConfig,
    batch: &Batch,
    noise: &NoiseBundle,
    stop_grad_same_view: bool,
) -> Result<ObjectiveOutput> {
    if noise.terms.len() < 2 {
        return Err(Error::InvalidConfig(String::from(
            "mixture objectives need one noise term per modality",
        )));
    }
    let enc = encode_all(bound, batch)?;
    let n = batch.n();
    let part = &bound.dims().partition;

    let mut bound_total: Option<Tensor> = None;
    let mut z_sh_samples: Vec<Tensor> = Vec::with_capacity(2);
    for m in Modality::BOTH {
        let mi = m.index();
        let tn = &noise.terms[mi];
        let (q_pr, q_sh) = (&enc.q[mi].0, &enc.q[mi].1);
        let z_pr = q_pr.sample(tn.pr_required(m)?)?;
        let z_sh = q_sh.sample(tn.sh()?)?;

        // same-view reconstruction; MMVAE++ freezes the shared sample here
        let z_sh_same = if stop_grad_same_view {
            z_sh.stop_gradient()
        } else {
            z_sh.clone()
        };
        let (mean_same, lv_same) = bound.decode(m, &z_pr, &z_sh_same)?;
        let lp_same = gaussian_log_prob(batch.x(m), &mean_same, &lv_same)?;

        // cross-view reconstruction through the live shared sample
        let other = m.other();
        let z_pr_other = prior_fill(n, part.d_pr(other), cfg.cross_fill, tn.pr(other))?;
        let (mean_cross, lv_cross) = bound.decode(other, &z_pr_other, &z_sh)?;
        let lp_cross = gaussian_log_prob(batch.x(other), &mean_cross, &lv_cross)?;

        let kl = q_sh.kl_to_standard()?.add(&q_pr.kl_to_standard()?)?;
        let component = lp_same
            .add(&lp_cross)?
            .sub(&kl)?
            .mean_all()
            .scale(cfg.moe_weights[mi]);
        bound_total = Some(match bound_total {
            None => component,
            Some(acc) => acc.add(&component)?,
        });
        z_sh_samples.push(z_sh);
    }

    let mut loss = bound_total.expect("two components").neg();
    if cfg.supervised {
        let y = require_labels(batch)?;
        let samples: [Tensor; 2] = [z_sh_samples[0].clone(), z_sh_samples[1].clone()];
        loss = supervised_augment(bound, loss, &samples, y, cfg.beta, cfg.moe_weights)?;
    }
    Ok(ObjectiveOutput {
        loss,
        q_sh: [enc.q[0].1.clone(), enc.q[1].1.clone()],
    })
}

/// Evaluate the configured objective on one batch.
pub fn objective_loss(
    bound: &BoundModel,
    cfg: &ObjectiveConfig,
    batch: &Batch,
    noise: &NoiseBundle,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    match cfg.kind {
        ObjectiveKind::Mvae | ObjectiveKind::MoPoe => poe_objective(bound, cfg, batch, noise),
        ObjectiveKind::Mmvae => mixture_objective(bound, cfg, batch, noise, false),
        ObjectiveKind::MmvaePp => mixture_objective(bound, cfg, batch, noise, true),
    }
}
