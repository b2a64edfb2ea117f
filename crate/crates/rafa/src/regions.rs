//! Region pooling and additive region attention.
//!
//! The upsampled feature grid is cut into non-overlapping `delta x delta`
//! patches, each reduced to a channel vector by spatial mean. Every ordered
//! pair of regions (i, j) is scored through a tanh/sigmoid bottleneck, the
//! scores are softmax-normalized over j, and each region is replaced by its
//! attention-weighted mixture of all regions, followed by layer
//! normalization.

use crate::backbone::FeatureGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{layer_norm, pairwise_row_sum, Tensor};

/// Epsilon inside the layer-norm square root, shared across the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Ordered sequence of region descriptors over a square region grid.
#[derive(Debug, Clone)]
pub struct RegionSequence {
    /// Number of regions R (a perfect square).
    pub region_count: usize,
    /// Side of the region grid, sqrt(R).
    pub grid_side: usize,
    pub channels: usize,
    /// `R x channels`, rows ordered row-major over the region grid.
    pub descriptors: Tensor,
}

impl RegionSequence {
    pub fn from_descriptors(descriptors: Tensor, grid_side: usize) -> Result<RegionSequence> {
        let shape = descriptors.shape();
        if shape.len() != 2 || shape[0] != grid_side * grid_side {
            return Err(Error::Contract(format!(
                "descriptor matrix {}x{} does not match grid side {grid_side}",
                shape[0],
                shape.get(1).copied().unwrap_or(0)
            )));
        }
        Ok(RegionSequence {
            region_count: shape[0],
            grid_side,
            channels: shape[1],
            descriptors,
        })
    }

    /// Sequence index -> (grid row, grid col).
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.grid_side, index % self.grid_side)
    }
}

/// Cut the grid into `delta x delta` patches and reduce each to its spatial
/// mean, row-major over the region grid.
pub fn pool_regions(grid: &FeatureGrid, delta: usize) -> Result<RegionSequence> {
    if grid.height != grid.width {
        return Err(Error::Config(format!(
            "region pooling needs a square grid, got {}x{}",
            grid.height, grid.width
        )));
    }
    let side = grid.height;
    if delta == 0 || side % delta != 0 {
        return Err(Error::Config(format!(
            "grid side {side} not divisible by region size {delta}"
        )));
    }
    let g = side / delta;
    let regions = g * g;
    let cells = side * side;
    // Fixed averaging matrix; matmul provides the backward pass.
    let mut pool = vec![0.0; regions * cells];
    let weight = 1.0 / (delta * delta) as f64;
    for ry in 0..g {
        for rx in 0..g {
            let region = ry * g + rx;
            for dy in 0..delta {
                for dx in 0..delta {
                    let cell = (ry * delta + dy) * side + (rx * delta + dx);
                    pool[region * cells + cell] = weight;
                }
            }
        }
    }
    let pool_t = Tensor::new(vec![regions, cells], pool)?;
    let flat = grid.values.reshape(vec![cells, grid.channels])?;
    RegionSequence::from_descriptors(pool_t.matmul(&flat)?, g)
}

/// Learnable weights of the region-attention block.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// `c x c`, projects the query region.
    pub w_g: Tensor,
    /// `c x c`, projects the candidate region.
    pub w_g_prime: Tensor,
    /// `c`, bias of the pair embedding.
    pub b_g: Tensor,
    /// `c x 1`, collapses a pair embedding to a scalar score.
    pub w_h: Tensor,
    /// scalar bias of the score.
    pub b_h: Tensor,
    /// scalar scale on the score logits.
    pub w_m: Tensor,
    /// scalar shift on the score logits.
    pub b_m: Tensor,
    /// `c`, layer-norm gain shared across regions.
    pub ln_gain: Tensor,
    /// `c`, layer-norm bias shared across regions.
    pub ln_bias: Tensor,
}

impl AttentionParams {
    pub fn init(channels: usize, rng: &mut Rng) -> AttentionParams {
        let c = channels;
        let bound = 1.0 / (c as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| -> Tensor {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
            Tensor::param(vec![rows, cols], data).unwrap()
        };
        let w_g = mat(c, c);
        let w_g_prime = mat(c, c);
        let w_h = mat(c, 1);
        AttentionParams {
            w_g,
            w_g_prime,
            b_g: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
            w_h,
            b_h: Tensor::param(vec![1], vec![0.0]).unwrap(),
            w_m: Tensor::param(vec![1], vec![rng.uniform(-1.0, 1.0)]).unwrap(),
            b_m: Tensor::param(vec![1], vec![0.0]).unwrap(),
            ln_gain: Tensor::param(vec![c], vec![1.0; c]).unwrap(),
            ln_bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_g"), self.w_g.clone()),
            (format!("{prefix}.w_g_prime"), self.w_g_prime.clone()),
            (format!("{prefix}.b_g"), self.b_g.clone()),
            (format!("{prefix}.w_h"), self.w_h.clone()),
            (format!("{prefix}.b_h"), self.b_h.clone()),
            (format!("{prefix}.w_m"), self.w_m.clone()),
            (format!("{prefix}.b_m"), self.b_m.clone()),
            (format!("{prefix}.ln_gain"), self.ln_gain.clone()),
            (format!("{prefix}.ln_bias"), self.ln_bias.clone()),
        ]
    }
}

/// Region attention plus the row-stochastic mixing matrix it produced.
pub struct AttentionOutput {
    pub regions: RegionSequence,
    /// `R x R`; row i holds the mixture weights over candidate regions j.
    pub mixing: Tensor,
}

/// Additive region attention followed by shared layer normalization.
///
/// For every ordered pair (i, j): a tanh embedding of the projected pair,
/// a sigmoid scalar score, an affine logit, softmax over j, and finally
/// each output row i is the weighted sum over j of the input descriptors.
pub fn region_attention_detailed(
    regions: &RegionSequence,
    p: &AttentionParams,
) -> Result<AttentionOutput> {
    let f = &regions.descriptors;
    let r = regions.region_count;
    let query = f.matmul(&p.w_g)?;
    let candidate = f.matmul(&p.w_g_prime)?;
    let pair = pairwise_row_sum(&query, &candidate)?.add(&p.b_g)?.tanh();
    let score = pair.matmul(&p.w_h)?.add_scalar_param(&p.b_h)?.sigmoid();
    let logits = score
        .mul_scalar_param(&p.w_m)?
        .add_scalar_param(&p.b_m)?
        .reshape(vec![r, r])?;
    let mixing = logits.softmax_last();
    let mixed = mixing.matmul(f)?;
    let normed = layer_norm(&mixed, &p.ln_gain, &p.ln_bias, LAYER_NORM_EPS)?;
    Ok(AttentionOutput {
        regions: RegionSequence::from_descriptors(normed, regions.grid_side)?,
        mixing,
    })
}

pub fn region_attention(regions: &RegionSequence, p: &AttentionParams) -> Result<RegionSequence> {
    Ok(region_attention_detailed(regions, p)?.regions)
}
