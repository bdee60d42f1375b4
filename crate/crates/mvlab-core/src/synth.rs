//! Synthetic multi-view benchmark with ground-truth shared/private
//! structure.
//!
//! Latent coordinates are standard-normal; every feature is a function
//! drawn from a GP prior with an RBF kernel over its driving latent block
//! (shared features over z_sh, private features of modality m over
//! z_pr_m), observed with additive Gaussian noise and z-scored per
//! column. Shared features therefore carry cross-modality signal by
//! construction, private features none.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{FeatureRole, Matrix, MultimodalDataset};
use crate::net::PartitionSpec;
use crate::rng::{self, normal_vec};
use crate::{math, Error, Result};

/// Base diagonal jitter added to every kernel matrix.
pub const KERNEL_JITTER: f64 = 1e-6;

/// Columns whose pre-noise sample standard deviation falls below this
/// multiple of sqrt(jitter)·s carry jitter artifacts rather than kernel
/// signal and are rejected (degenerate kernels, e.g. lengthscale → ∞).
const JITTER_FLOOR_MULTIPLE: f64 = 10.0;

/// Generator configuration.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n: usize,
    pub true_dims: PartitionSpec,
    /// Shared-feature counts per modality.
    pub p1: usize,
    pub p2: usize,
    /// Private-feature counts per modality.
    pub q1: usize,
    pub q2: usize,
    pub lengthscale: f64,
    pub variance: f64,
    pub obs_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Correctly specified scenario: true structure 2+2+2, 10 shared
    /// features per modality, 100 private features per modality.
    pub fn default_preset() -> SynthConfig {
        SynthConfig {
            n: 500,
            true_dims: PartitionSpec::new(2, 2, 2).expect("valid partition"),
            p1: 10,
            p2: 10,
            q1: 100,
            q2: 100,
            lengthscale: 1.0,
            variance: 1.0,
            obs_noise: 0.1,
            seed: 1,
        }
    }

    /// Misspecified scenario: data generated from 4+2+4 while models are
    /// trained at 2+2+2. Only the true dims differ from the default.
    pub fn misspecified_preset() -> SynthConfig {
        SynthConfig {
            true_dims: PartitionSpec::new(4, 2, 4).expect("valid partition"),
            ..SynthConfig::default_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > 5000 {
            return Err(Error::InvalidConfig(format!(
                "synthetic n must lie in [2, 5000], got {}",
                self.n
            )));
        }
        if self.p1 + self.q1 == 0 || self.p2 + self.q2 == 0 {
            return Err(Error::InvalidConfig(String::from(
                "each modality needs at least one feature",
            )));
        }
        if !(self.lengthscale > 0.0) || !(self.variance > 0.0) || !(self.obs_noise > 0.0) {
            return Err(Error::InvalidConfig(String::from(
                "lengthscale, variance and obs_noise must be positive",
            )));
        }
        Ok(())
    }
}

/// The latent coordinates the data was generated from.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub z_sh: Matrix,
    pub z_pr1: Matrix,
    pub z_pr2: Matrix,
}

/// Binary label aligned with the first shared latent: y = 1{z_sh[:,0] > 0}.
pub fn label_from_shared(gt: &GroundTruth) -> Vec<u8> {
    (0..gt.z_sh.rows())
        .map(|r| u8::from(gt.z_sh.get(r, 0) > 0.0))
        .collect()
}

/// RBF kernel matrix k(z, z') = s² exp(−‖z−z'‖² / (2ℓ²)) with jitter.
fn rbf_kernel(z: &Matrix, lengthscale: f64, variance: f64, jitter: f64) -> Matrix {
    let n = z.rows();
    let mut k = Matrix::zeros(n, n);
    let inv = 1.0 / (2.0 * lengthscale * lengthscale);
    for i in 0..n {
        k.set(i, i, variance + jitter);
        for j in 0..i {
            let mut d2 = 0.0;
            for (a, b) in z.row(i).iter().zip(z.row(j)) {
                let d = a - b;
                d2 += d * d;
            }
            let v = variance * math::exp(-d2 * inv);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Lower-triangular Cholesky factor; fails on non-positive pivots.
fn cholesky(k: &Matrix) -> Option<Matrix> {
    let n = k.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = k.get(j, j);
        for p in 0..j {
            let v = l.get(j, p);
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = math::sqrt(d);
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut s = k.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            l.set(i, j, s / dj);
        }
    }
    Some(l)
}

/// Cholesky with jitter escalation: start at `KERNEL_JITTER`, multiply by
/// 10 up to 3 times, then fail. Returns the factor and the jitter used.
fn kernel_cholesky(z: &Matrix, lengthscale: f64, variance: f64) -> Result<(Matrix, f64)> {
    let mut jitter = KERNEL_JITTER;
    for _ in 0..4 {
        let k = rbf_kernel(z, lengthscale, variance, jitter * variance);
        if let Some(l) = cholesky(&k) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::CholeskyFailed {
        size: z.rows(),
        attempts: 3,
    })
}

fn matvec_lower(l: &Matrix, x: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, &xv) in x.iter().enumerate().take(i + 1) {
            s += l.get(i, j) * xv;
        }
        *o = s;
    }
    out
}

struct FeatureBlock {
    count: usize,
    role: FeatureRole,
    kernel: usize, // 0 = shared, 1 = pr1, 2 = pr2
}

/// Generate from explicit latent coordinates.
///
/// Feature j (global index over modality 1 shared, modality 1 private,
/// modality 2 shared, modality 2 private) draws its GP function and its
/// observation noise from the substream `TAG_FEATURE_BASE + j` of the
/// config seed, so shared-feature columns depend only on z_sh and the
/// seed, never on the private latents.
pub fn generate_from_latents(
    config: &SynthConfig,
    gt: &GroundTruth,
) -> Result<MultimodalDataset> {
    config.validate()?;
    let n = config.n;
    for (what, z, d) in [
        ("z_sh", &gt.z_sh, config.true_dims.d_sh),
        ("z_pr1", &gt.z_pr1, config.true_dims.d_pr1),
        ("z_pr2", &gt.z_pr2, config.true_dims.d_pr2),
    ] {
        if z.rows() != n || z.cols() != d {
            return Err(Error::InvalidConfig(format!(
                "{what} must be {n}x{d}, got {}x{}",
                z.rows(),
                z.cols()
            )));
        }
    }

    let (l_sh, j_sh) = kernel_cholesky(&gt.z_sh, config.lengthscale, config.variance)?;
    let (l_pr1, j_pr1) = kernel_cholesky(&gt.z_pr1, config.lengthscale, config.variance)?;
    let (l_pr2, j_pr2) = kernel_cholesky(&gt.z_pr2, config.lengthscale, config.variance)?;
    let factors = [(&l_sh, j_sh), (&l_pr1, j_pr1), (&l_pr2, j_pr2)];

    let blocks_m1 = [
        FeatureBlock {
            count: config.p1,
            role: FeatureRole::SharedProxy,
            kernel: 0,
        },
        FeatureBlock {
            count: config.q1,
            role: FeatureRole::Other,
            kernel: 1,
        },
    ];
    let blocks_m2 = [
        FeatureBlock {
            count: config.p2,
            role: FeatureRole::SharedProxy,
            kernel: 0,
        },
        FeatureBlock {
            count: config.q2,
            role: FeatureRole::Other,
            kernel: 2,
        },
    ];

    struct BuiltModality {
        x: Matrix,
        roles: Vec<FeatureRole>,
        names: Vec<String>,
        degenerate: Vec<usize>,
    }

    let mut global_index: u64 = 0;
    let mut build_modality = |blocks: &[FeatureBlock; 2]| -> BuiltModality {
        let d: usize = blocks.iter().map(|b| b.count).sum();
        let mut x = Matrix::zeros(n, d);
        let mut roles = Vec::with_capacity(d);
        let mut names = Vec::with_capacity(d);
        let mut degenerate = Vec::new();
        let mut col = 0;
        for block in blocks {
            let (l, jitter) = factors[block.kernel];
            let floor = JITTER_FLOOR_MULTIPLE * math::sqrt(jitter * config.variance);
            for k in 0..block.count {
                let mut stream = rng::stream(config.seed, rng::TAG_FEATURE_BASE + global_index);
                let eps = normal_vec(&mut stream, n);
                let f = matvec_lower(l, &eps);
                // a pre-noise column whose spread sits at the jitter
                // scale carries factorization artifacts, not kernel
                // signal: the degenerate-kernel case
                let mean: f64 = f.iter().sum::<f64>() / n as f64;
                let sd = math::sqrt(
                    f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64,
                );
                if sd < floor {
                    degenerate.push(col);
                }
                let obs = normal_vec(&mut stream, n);
                for r in 0..n {
                    x.set(r, col, f[r] + config.obs_noise * obs[r]);
                }
                roles.push(block.role);
                let role_tag = match block.role {
                    FeatureRole::SharedProxy => "shared",
                    FeatureRole::Other => "other",
                };
                names.push(format!("{}_{:04}", role_tag, k));
                col += 1;
                global_index += 1;
            }
        }
        BuiltModality {
            x,
            roles,
            names,
            degenerate,
        }
    };

    let m1 = build_modality(&blocks_m1);
    let m2 = build_modality(&blocks_m2);
    for (built, context) in [
        (&m1, "synthetic modality-1 features"),
        (&m2, "synthetic modality-2 features"),
    ] {
        if !built.degenerate.is_empty() {
            return Err(Error::ZeroVarianceColumns {
                context,
                columns: built.degenerate.clone(),
            });
        }
    }
    let BuiltModality {
        x: mut x1,
        roles: roles1,
        names: names1,
        ..
    } = m1;
    let BuiltModality {
        x: mut x2,
        roles: roles2,
        names: names2,
        ..
    } = m2;
    x1.zscore_columns("synthetic modality-1 features")?;
    x2.zscore_columns("synthetic modality-2 features")?;

    let names1 = names1.into_iter().map(|s| format!("v1_{s}")).collect();
    let names2 = names2.into_iter().map(|s| format!("v2_{s}")).collect();
    MultimodalDataset::new(x1, x2, None, roles1, roles2, names1, names2)
}

/// Draw latents from the seed's substreams and generate the dataset.
pub fn generate(config: &SynthConfig) -> Result<(MultimodalDataset, GroundTruth)> {
    config.validate()?;
    let n = config.n;
    let dims = config.true_dims;
    let draw = |tag: u64, d: usize| -> Matrix {
        Matrix::new(n, d, normal_vec(&mut rng::stream(config.seed, tag), n * d))
            .expect("length matches")
    };
    let gt = GroundTruth {
        z_sh: draw(rng::TAG_LATENT_SHARED, dims.d_sh),
        z_pr1: draw(rng::TAG_LATENT_PRIVATE_1, dims.d_pr1),
        z_pr2: draw(rng::TAG_LATENT_PRIVATE_2, dims.d_pr2),
    };
    let ds = generate_from_latents(config, &gt)?;
    Ok((ds, gt))
}

/// Fig-1B-style sweep values for the private-feature count of modality 1.
pub fn q1_sweep_values() -> Vec<usize> {
    let mut v = vec![20, 50];
    let mut q = 100;
    while q <= 1000 {
        v.push(q);
        q += 100;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            n: 40,
            p1: 3,
            p2: 3,
            q1: 4,
            q2: 5,
            seed: 11,
            ..SynthConfig::default_preset()
        }
    }

    #[test]
    fn misspecified_preset_differs_only_in_true_dims() {
        let d = SynthConfig::default_preset();
        let m = SynthConfig::misspecified_preset();
        assert_eq!(m.true_dims, PartitionSpec::new(4, 2, 4).unwrap());
        assert_eq!((m.p1, m.p2), (10, 10));
        assert_eq!((m.n, m.q1, m.q2), (d.n, d.q1, d.q2));
        assert_eq!(
            (m.lengthscale, m.variance, m.obs_noise, m.seed),
            (d.lengthscale, d.variance, d.obs_noise, d.seed)
        );
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let cfg = tiny_config();
        let (a, gta) = generate(&cfg).unwrap();
        let (b, gtb) = generate(&cfg).unwrap();
        assert_eq!(a.x1.values(), b.x1.values());
        assert_eq!(a.x2.values(), b.x2.values());
        assert_eq!(gta.z_sh.values(), gtb.z_sh.values());
    }

    #[test]
    fn columns_are_exactly_zscored() {
        let (ds, _) = generate(&tiny_config()).unwrap();
        for x in [&ds.x1, &ds.x2] {
            let all: Vec<usize> = (0..x.rows()).collect();
            let (mean, sd) = x.column_stats(&all);
            for c in 0..x.cols() {
                assert!(mean[c].abs() < 1e-12);
                assert!((sd[c] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_columns_depend_only_on_shared_latents() {
        let cfg = tiny_config();
        let (_, gt) = generate(&cfg).unwrap();
        let a = generate_from_latents(&cfg, &gt).unwrap();
        // resample private latents, keep z_sh
        let n = cfg.n;
        let resampled = GroundTruth {
            z_sh: gt.z_sh.clone(),
            z_pr1: Matrix::new(
                n,
                2,
                normal_vec(&mut rng::stream(999, 0), n * 2),
            )
            .unwrap(),
            z_pr2: Matrix::new(
                n,
                2,
                normal_vec(&mut rng::stream(999, 1), n * 2),
            )
            .unwrap(),
        };
        let b = generate_from_latents(&cfg, &resampled).unwrap();
        for (c, role) in a.roles1.iter().enumerate() {
            let same = a.x1.column(c) == b.x1.column(c);
            match role {
                FeatureRole::SharedProxy => assert!(same, "shared col {c} changed"),
                FeatureRole::Other => assert!(!same, "private col {c} did not change"),
            }
        }
    }

    #[test]
    fn degenerate_kernel_is_rejected() {
        let cfg = SynthConfig {
            lengthscale: 1e12,
            obs_noise: 1e-12,
            ..tiny_config()
        };
        match generate(&cfg) {
            Err(Error::ZeroVarianceColumns { .. }) => {}
            other => panic!("expected zero-variance rejection, got {other:?}"),
        }
    }

    #[test]
    fn q1_sweep_matches_published_grid() {
        let v = q1_sweep_values();
        assert_eq!(v[..3], [20, 50, 100]);
        assert_eq!(*v.last().unwrap(), 1000);
        assert_eq!(v.len(), 12);
    }

    #[test]
    fn label_from_shared_thresholds_first_latent() {
        let gt = GroundTruth {
            z_sh: Matrix::new(3, 2, vec![0.5, -1.0, -0.2, 3.0, 1.5, 0.0]).unwrap(),
            z_pr1: Matrix::zeros(3, 1),
            z_pr2: Matrix::zeros(3, 1),
        };
        assert_eq!(label_from_shared(&gt), vec![1, 0, 1]);
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = tiny_config();
        cfg.n = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.obs_noise = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.p1 = 0;
        cfg.q1 = 0;
        assert!(cfg.validate().is_err());
    }
}
