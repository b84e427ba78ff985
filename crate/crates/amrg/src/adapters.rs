//! Low-rank adaptation of linear maps.
//!
//! A [`LoraLinear`] wraps a frozen base matrix `W` (d x k) with trainable
//! factors `A` (d x r) and `B` (r x k); the adapted map is
//! `W' = W + s * A * B`. The scaling `s` is the raw scaling factor alpha
//! by default, with the `alpha / r` convention available as an opt-in.
//! `W` has no public mutator: training can only ever touch `A` and `B`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmrgError, Result};
use crate::linalg::Mat;

/// Default dropout on the adapter input path.
pub const DEFAULT_ADAPTER_DROPOUT: f64 = 0.05;

/// Standard deviation of the Gaussian initialization of `A`.
pub const INIT_STD: f64 = 0.02;

/// A linear layer with a frozen base and a trainable low-rank update.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    w: Mat,
    a: Mat,
    b: Mat,
    rank: usize,
    alpha: f64,
    dropout_p: f64,
    scale_by_rank: bool,
}

impl LoraLinear {
    /// Output dimension d.
    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// Input dimension k.
    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    /// Frozen base matrix.
    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    /// Effective scaling of the low-rank update: alpha, or alpha / r when
    /// rank scaling is enabled.
    pub fn scaling(&self) -> f64 {
        if self.scale_by_rank {
            self.alpha / self.rank as f64
        } else {
            self.alpha
        }
    }

    /// Switches to the `alpha / r` scaling convention.
    pub fn with_rank_scaling(mut self, enabled: bool) -> Self {
        self.scale_by_rank = enabled;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(AmrgError::InvalidInput(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        self.dropout_p = p;
        Ok(self)
    }

    /// Accumulates `scale * delta` into the trainable factor `A`.
    pub fn update_a(&mut self, delta: &Mat, scale: f64) {
        self.a.add_scaled(delta, scale);
    }

    /// Accumulates `scale * delta` into the trainable factor `B`.
    pub fn update_b(&mut self, delta: &Mat, scale: f64) {
        self.b.add_scaled(delta, scale);
    }

    pub fn set_a(&mut self, a: Mat) {
        assert_eq!((a.rows(), a.cols()), (self.a.rows(), self.a.cols()));
        self.a = a;
    }

    pub fn set_b(&mut self, b: Mat) {
        assert_eq!((b.rows(), b.cols()), (self.b.rows(), self.b.cols()));
        self.b = b;
    }

    /// Row-batch eval-mode forward: for row-vector inputs X (n x k),
    /// returns `X W^T + s (X B^T) A^T` (n x d).
    pub fn apply_rows(&self, x: &Mat) -> Mat {
        assert_eq!(x.cols(), self.in_dim(), "input width must equal k");
        let mut out = x.matmul(&self.w.transpose());
        let low = x.matmul(&self.b.transpose());
        out.add_scaled(&low.matmul(&self.a.transpose()), self.scaling());
        out
    }
}

/// Initializes an adapter around the frozen base `w`.
///
/// `A` is sampled i.i.d. Gaussian with standard deviation 0.02 from the
/// seeded generator; `B` starts at zero, so a fresh layer computes
/// exactly the base map.
pub fn lora_init(w: Mat, rank: usize, alpha: f64, seed: u64) -> Result<LoraLinear> {
    let (d, k) = (w.rows(), w.cols());
    if rank == 0 || rank > d.min(k) {
        return Err(AmrgError::InvalidInput(format!(
            "rank {rank} invalid for a {d}x{k} base (need 1 <= r <= {})",
            d.min(k)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(LoraLinear {
        a: Mat::gaussian(d, rank, INIT_STD, &mut rng),
        b: Mat::zeros(rank, k),
        w,
        rank,
        alpha,
        dropout_p: DEFAULT_ADAPTER_DROPOUT,
        scale_by_rank: false,
    })
}

/// Inverted-dropout mask applied to the adapter input path: kept entries
/// carry `1 / (1 - p)` so eval mode needs no rescaling.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Forward pass `y = W x + s A (B x~)`.
///
/// In training mode, `x~` applies inverted dropout to the adapter path
/// only (the frozen path always sees the raw input); in eval mode
/// `x~ = x`.
pub fn lora_forward(layer: &LoraLinear, x: &[f64], training: bool, seed: u64) -> Result<Vec<f64>> {
    if x.len() != layer.in_dim() {
        return Err(AmrgError::Dimension(format!(
            "input length {} does not match k = {}",
            x.len(),
            layer.in_dim()
        )));
    }
    let mut y = layer.w.matvec(x);
    let adapter_in: Vec<f64> = if training && layer.dropout_p > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = dropout_mask(x.len(), layer.dropout_p, &mut rng);
        x.iter().zip(&mask).map(|(&v, &m)| v * m).collect()
    } else {
        x.to_vec()
    };
    let low = layer.b.matvec(&adapter_in);
    let update = layer.a.matvec(&low);
    let s = layer.scaling();
    for (yi, ui) in y.iter_mut().zip(&update) {
        *yi += s * ui;
    }
    Ok(y)
}

/// Dense merged weight matrix `W + s A B`.
pub fn lora_merge(layer: &LoraLinear) -> Mat {
    let mut merged = layer.w.clone();
    merged.add_scaled(&layer.a.matmul(&layer.b), layer.scaling());
    merged
}

/// Analytic gradients of a scalar loss with respect to the trainable
/// factors, given the upstream gradient `dL/dy` in eval mode:
/// `dA = s * u * (B x)^T` and `dB = s * (A^T u) * x^T`. The frozen base
/// never receives a gradient.
pub fn lora_grads(layer: &LoraLinear, x: &[f64], upstream: &[f64]) -> Result<(Mat, Mat)> {
    if x.len() != layer.in_dim() || upstream.len() != layer.out_dim() {
        return Err(AmrgError::Dimension(format!(
            "gradient shapes: x has {}, upstream has {}, layer is {}x{}",
            x.len(),
            upstream.len(),
            layer.out_dim(),
            layer.in_dim()
        )));
    }
    let s = layer.scaling();
    let bx = layer.b.matvec(x);
    let da = Mat::from_fn(layer.out_dim(), layer.rank, |i, j| s * upstream[i] * bx[j]);
    let atu = layer.a.transpose().matvec(upstream);
    let db = Mat::from_fn(layer.rank, layer.in_dim(), |i, j| s * atu[i] * x[j]);
    Ok((da, db))
}

/// Grid of (rank, alpha) settings to sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ranks: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            ranks: vec![16, 32, 64],
            alphas: vec![8.0, 16.0],
        }
    }
}

/// Expands the grid into (rank, alpha) configurations, alpha-major:
/// all ranks at the first alpha, then all ranks at the next.
pub fn sweep_plan(grid: &SweepGrid) -> Result<Vec<(usize, f64)>> {
    if grid.ranks.is_empty() || grid.alphas.is_empty() {
        return Err(AmrgError::InvalidInput(
            "sweep grid needs at least one rank and one alpha".into(),
        ));
    }
    let mut plan = Vec::with_capacity(grid.ranks.len() * grid.alphas.len());
    for &alpha in &grid.alphas {
        for &rank in &grid.ranks {
            plan.push((rank, alpha));
        }
    }
    Ok(plan)
}

/// Names of decoder projection sites that receive adapters. The default
/// wraps every attention projection, mirroring the all-linear-layers
/// injection policy; the embedding table and output head train directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementManifest {
    pub sites: Vec<String>,
}

impl Default for PlacementManifest {
    fn default() -> Self {
        PlacementManifest {
            sites: [
                "self_attn.query",
                "self_attn.key",
                "self_attn.value",
                "cross_attn.query",
                "cross_attn.key",
                "cross_attn.value",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl PlacementManifest {
    pub fn contains(&self, site: &str) -> bool {
        self.sites.iter().any(|s| s == site)
    }
}

/// Serialized form of a [`LoraLinear`]: shapes plus flat row-major
/// matrices.
#[derive(Debug, Serialize, Deserialize)]
struct LoraLayerFile {
    d: usize,
    k: usize,
    r: usize,
    alpha: f64,
    dropout_p: f64,
    scale_by_rank: bool,
    w: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LoraLinear {
    pub fn to_json(&self) -> Result<String> {
        let file = LoraLayerFile {
            d: self.out_dim(),
            k: self.in_dim(),
            r: self.rank,
            alpha: self.alpha,
            dropout_p: self.dropout_p,
            scale_by_rank: self.scale_by_rank,
            w: self.w.as_slice().to_vec(),
            a: self.a.as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: LoraLayerFile = serde_json::from_str(json)?;
        if file.r == 0 || file.r > file.d.min(file.k) {
            return Err(AmrgError::InvalidInput(format!(
                "serialized rank {} invalid for {}x{}",
                file.r, file.d, file.k
            )));
        }
        if file.w.len() != file.d * file.k
            || file.a.len() != file.d * file.r
            || file.b.len() != file.r * file.k
        {
            return Err(AmrgError::Dimension("serialized matrix sizes disagree".into()));
        }
        Ok(LoraLinear {
            w: Mat::from_vec(file.d, file.k, file.w),
            a: Mat::from_vec(file.d, file.r, file.a),
            b: Mat::from_vec(file.r, file.k, file.b),
            rank: file.r,
            alpha: file.alpha,
            dropout_p: file.dropout_p,
            scale_by_rank: file.scale_by_rank,
        })
    }
}
