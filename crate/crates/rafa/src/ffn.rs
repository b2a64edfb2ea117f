//! The two pooled feed-forward paths and their fusion.
//!
//! Path A pools the region grid into a fixed-length spatial pyramid, path B
//! smooths the region sequence with a window-3 average, both run a
//! depthwise-separable 1-D convolution, and their globally averaged outputs
//! are added and layer-normalized into one channel vector. Path B keeps its
//! full `R x c` sequence alive for the downstream attention weighting.

use crate::error::{Error, Result};
use crate::regions::{RegionSequence, LAYER_NORM_EPS};
use crate::rng::Rng;
use crate::tensor::{avgpool1d, layer_norm, Padding, Tensor};

/// Pyramid levels for spatial pyramid pooling. The default `[1, 2, 3]`
/// yields 1 + 4 + 9 = 14 bins.
#[derive(Debug, Clone)]
pub struct PyramidConfig {
    pub levels: Vec<usize>,
    pub aggregation: BinAgg,
}

/// How a pyramid bin combines its member region descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAgg {
    Mean,
    Max,
}

impl std::str::FromStr for BinAgg {
    type Err = Error;
    fn from_str(s: &str) -> Result<BinAgg> {
        match s {
            "mean" => Ok(BinAgg::Mean),
            "max" => Ok(BinAgg::Max),
            other => Err(Error::Config(format!("unknown bin aggregation '{other}'"))),
        }
    }
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            levels: vec![1, 2, 3],
            aggregation: BinAgg::Mean,
        }
    }
}

impl PyramidConfig {
    pub fn bin_count(&self) -> usize {
        self.levels.iter().map(|n| n * n).sum()
    }

    pub fn validate(&self, grid_side: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("pyramid needs at least one level".to_string()));
        }
        for &n in &self.levels {
            if n == 0 || n > grid_side {
                return Err(Error::Config(format!(
                    "pyramid level {n} invalid for grid side {grid_side}"
                )));
            }
        }
        Ok(())
    }
}

/// Member region indices of every bin, level-major, row-major within each
/// level. Cell windows use floor(G k / n) .. ceil(G (k+1) / n), so cells of
/// a level overlap when the grid does not divide evenly and every region
/// contributes to every level.
fn bin_members(grid_side: usize, levels: &[usize]) -> Vec<Vec<usize>> {
    let g = grid_side;
    let mut bins = Vec::new();
    for &n in levels {
        let bound = |k: usize| -> (usize, usize) {
            let start = (g * k) / n;
            let end = (g * (k + 1)).div_ceil(n);
            (start, end)
        };
        for ky in 0..n {
            let (y0, y1) = bound(ky);
            for kx in 0..n {
                let (x0, x1) = bound(kx);
                let mut members = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        members.push(y * g + x);
                    }
                }
                bins.push(members);
            }
        }
    }
    bins
}

/// Pool the region grid into the pyramid's fixed-length `B x c` output.
/// The row count depends only on the levels, never on the grid side.
pub fn spatial_pyramid_pool(regions: &RegionSequence, cfg: &PyramidConfig) -> Result<Tensor> {
    cfg.validate(regions.grid_side)?;
    let bins = bin_members(regions.grid_side, &cfg.levels);
    let (r, c) = (regions.region_count, regions.channels);
    match cfg.aggregation {
        BinAgg::Mean => {
            let mut pool = vec![0.0; bins.len() * r];
            for (b, members) in bins.iter().enumerate() {
                let w = 1.0 / members.len() as f64;
                for &m in members {
                    pool[b * r + m] = w;
                }
            }
            let pool_t = Tensor::new(vec![bins.len(), r], pool)?;
            pool_t.matmul(&regions.descriptors)
        }
        BinAgg::Max => {
            let desc = &regions.descriptors;
            let values = desc.to_vec();
            let mut out = vec![0.0; bins.len() * c];
            let mut argmax = vec![0usize; bins.len() * c];
            for (b, members) in bins.iter().enumerate() {
                for ch in 0..c {
                    let (mut best, mut best_row) = (f64::NEG_INFINITY, 0);
                    for &m in members {
                        let v = values[m * c + ch];
                        if v > best {
                            best = v;
                            best_row = m;
                        }
                    }
                    out[b * c + ch] = best;
                    argmax[b * c + ch] = best_row;
                }
            }
            let parent = desc.clone();
            let n_bins = bins.len();
            Ok(Tensor::from_op(
                vec![n_bins, c],
                out,
                vec![desc.clone()],
                move |g| {
                    let mut gx = vec![0.0; r * c];
                    for b in 0..n_bins {
                        for ch in 0..c {
                            gx[argmax[b * c + ch] * c + ch] += g[b * c + ch];
                        }
                    }
                    parent.accumulate_grad(&gx);
                },
            ))
        }
    }
}

/// Weights of one depthwise-separable convolution block.
#[derive(Debug, Clone)]
pub struct SepConvParams {
    pub depthwise: Tensor,
    pub pointwise: Tensor,
    pub bias: Tensor,
}

impl SepConvParams {
    pub fn init(channels: usize, rng: &mut Rng) -> SepConvParams {
        let c = channels;
        let db = 1.0 / 3f64.sqrt();
        let pb = 1.0 / (c as f64).sqrt();
        SepConvParams {
            depthwise: Tensor::param(
                vec![3, c],
                (0..3 * c).map(|_| rng.uniform(-db, db)).collect(),
            )
            .unwrap(),
            pointwise: Tensor::param(
                vec![c, c],
                (0..c * c).map(|_| rng.uniform(-pb, pb)).collect(),
            )
            .unwrap(),
            bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
        }
    }

    /// An identity block: delta depthwise kernel, identity pointwise, zero
    /// bias. Composed with relu it passes non-negative inputs through.
    pub fn identity(channels: usize) -> SepConvParams {
        let c = channels;
        let mut depthwise = vec![0.0; 3 * c];
        depthwise[c..2 * c].fill(1.0);
        let mut pointwise = vec![0.0; c * c];
        for i in 0..c {
            pointwise[i * c + i] = 1.0;
        }
        SepConvParams {
            depthwise: Tensor::param(vec![3, c], depthwise).unwrap(),
            pointwise: Tensor::param(vec![c, c], pointwise).unwrap(),
            bias: Tensor::param(vec![c], vec![0.0; c]).unwrap(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.depthwise"), self.depthwise.clone()),
            (format!("{prefix}.pointwise"), self.pointwise.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

/// Weights of both feed-forward paths and the fusion layer norm.
#[derive(Debug, Clone)]
pub struct FfnParams {
    pub sep_a: SepConvParams,
    pub sep_b: SepConvParams,
    pub fuse_gain: Tensor,
    pub fuse_bias: Tensor,
}

impl FfnParams {
    pub fn init(channels: usize, rng: &mut Rng) -> FfnParams {
        FfnParams {
            sep_a: SepConvParams::init(channels, rng),
            sep_b: SepConvParams::init(channels, rng),
            fuse_gain: Tensor::param(vec![channels], vec![1.0; channels]).unwrap(),
            fuse_bias: Tensor::param(vec![channels], vec![0.0; channels]).unwrap(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = self.sep_a.named(&format!("{prefix}.sep_a"));
        out.extend(self.sep_b.named(&format!("{prefix}.sep_b")));
        out.push((format!("{prefix}.fuse_gain"), self.fuse_gain.clone()));
        out.push((format!("{prefix}.fuse_bias"), self.fuse_bias.clone()));
        out
    }
}

fn global_avg_rows(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let (l, c) = (shape[0], shape[1]);
    avgpool1d(x, l, l, Padding::None)?.reshape(vec![c])
}

/// Pyramid path: SPP, separable convolution over the bin sequence, global
/// average over positions.
pub fn path_a(regions: &RegionSequence, cfg: &PyramidConfig, p: &FfnParams) -> Result<Tensor> {
    let pooled = spatial_pyramid_pool(regions, cfg)?;
    let conv = pooled.conv1d_separable(&p.sep_a.depthwise, &p.sep_a.pointwise, &p.sep_a.bias)?;
    global_avg_rows(&conv)
}

/// Average path: window-3 same-padded mean along the region sequence,
/// separable convolution, then global average. Returns both the full
/// `R x c` sequence (consumed by the attention weighting downstream) and
/// its global average.
pub fn path_b(regions: &RegionSequence, p: &FfnParams) -> Result<(Tensor, Tensor)> {
    let smoothed = avgpool1d(&regions.descriptors, 3, 1, Padding::Same)?;
    let seq = smoothed.conv1d_separable(&p.sep_b.depthwise, &p.sep_b.pointwise, &p.sep_b.bias)?;
    let pooled = global_avg_rows(&seq)?;
    Ok((seq, pooled))
}

/// Add the two path outputs and layer-normalize the sum.
pub fn fuse_paths(path_a_out: &Tensor, path_b_out: &Tensor, p: &FfnParams) -> Result<Tensor> {
    let sum = path_a_out.add(path_b_out)?;
    layer_norm(&sum, &p.fuse_gain, &p.fuse_bias, LAYER_NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;

    fn regions_from(data: Vec<f64>, grid_side: usize, c: usize) -> RegionSequence {
        RegionSequence::from_descriptors(
            Tensor::param(vec![grid_side * grid_side, c], data).unwrap(),
            grid_side,
        )
        .unwrap()
    }

    fn counting_regions() -> RegionSequence {
        regions_from((1..=9).map(|v| v as f64).collect(), 3, 1)
    }

    #[test]
    fn single_level_is_global_mean() {
        let regions = counting_regions();
        let cfg = PyramidConfig {
            levels: vec![1],
            aggregation: BinAgg::Mean,
        };
        let out = spatial_pyramid_pool(&regions, &cfg).unwrap();
        assert_eq!(out.shape(), vec![1, 1]);
        assert_eq!(out.to_vec(), vec![5.0]);
    }

    #[test]
    fn level_matching_grid_is_identity() {
        let regions = counting_regions();
        let cfg = PyramidConfig {
            levels: vec![3],
            aggregation: BinAgg::Mean,
        };
        let out = spatial_pyramid_pool(&regions, &cfg).unwrap();
        assert_eq!(out.to_vec(), (1..=9).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn default_pyramid_on_counting_grid() {
        // Level 1: global mean 5. Level 2 on a 3x3 grid: overlapping 2x2
        // quadrants {1,2,4,5} {2,3,5,6} {4,5,7,8} {5,6,8,9} with means
        // 3, 4, 6, 7. Level 3: the regions themselves. 14 rows total.
        let regions = counting_regions();
        let out = spatial_pyramid_pool(&regions, &PyramidConfig::default()).unwrap();
        assert_eq!(out.shape(), vec![14, 1]);
        let v = out.to_vec();
        assert_eq!(v[0], 5.0);
        assert_eq!(&v[1..5], &[3.0, 4.0, 6.0, 7.0]);
        assert_eq!(&v[5..], &(1..=9).map(|x| x as f64).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn bin_count_invariant_to_grid_side() {
        let mut rng = Rng::new(11);
        for side in [3usize, 6] {
            let data: Vec<f64> = (0..side * side * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let regions = regions_from(data, side, 2);
            let out = spatial_pyramid_pool(&regions, &PyramidConfig::default()).unwrap();
            assert_eq!(out.shape(), vec![14, 2]);
        }
    }

    #[test]
    fn level_above_grid_side_rejected() {
        let regions = counting_regions();
        let cfg = PyramidConfig {
            levels: vec![1, 4],
            aggregation: BinAgg::Mean,
        };
        assert!(matches!(
            spatial_pyramid_pool(&regions, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bins_stay_within_descriptor_bounds() {
        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let c = 3;
            let data: Vec<f64> = (0..9 * c).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let regions = regions_from(data.clone(), 3, c);
            let out = spatial_pyramid_pool(&regions, &PyramidConfig::default()).unwrap();
            let v = out.to_vec();
            for ch in 0..c {
                let lo = (0..9).map(|r| data[r * c + ch]).fold(f64::INFINITY, f64::min);
                let hi = (0..9)
                    .map(|r| data[r * c + ch])
                    .fold(f64::NEG_INFINITY, f64::max);
                for b in 0..14 {
                    let x = v[b * c + ch];
                    assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn max_aggregation_picks_maxima() {
        let regions = counting_regions();
        let cfg = PyramidConfig {
            levels: vec![1, 2],
            aggregation: BinAgg::Max,
        };
        let out = spatial_pyramid_pool(&regions, &cfg).unwrap();
        assert_eq!(out.to_vec(), vec![9.0, 5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn path_a_identity_on_constants() {
        let v = 0.75;
        let regions = regions_from(vec![v; 9 * 2], 3, 2);
        let p = FfnParams {
            sep_a: SepConvParams::identity(2),
            sep_b: SepConvParams::identity(2),
            fuse_gain: Tensor::param(vec![2], vec![1.0; 2]).unwrap(),
            fuse_bias: Tensor::param(vec![2], vec![0.0; 2]).unwrap(),
        };
        let out = path_a(&regions, &PyramidConfig::default(), &p).unwrap();
        assert_eq!(out.shape(), vec![2]);
        for x in out.to_vec() {
            assert!((x - v).abs() < 1e-12);
        }
    }

    #[test]
    fn path_a_zero_pointwise_gives_relu_bias() {
        let mut rng = Rng::new(13);
        let data: Vec<f64> = (0..9 * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let regions = regions_from(data, 3, 2);
        let mut p = FfnParams::init(2, &mut rng);
        p.sep_a.pointwise = Tensor::param(vec![2, 2], vec![0.0; 4]).unwrap();
        p.sep_a.bias = Tensor::param(vec![2], vec![0.4, -0.9]).unwrap();
        let out = path_a(&regions, &PyramidConfig::default(), &p).unwrap();
        let v = out.to_vec();
        assert!((v[0] - 0.4).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn path_b_constants_and_single_region() {
        let v = 1.5;
        let regions = regions_from(vec![v; 9], 3, 1);
        let p = FfnParams {
            sep_a: SepConvParams::identity(1),
            sep_b: SepConvParams::identity(1),
            fuse_gain: Tensor::param(vec![1], vec![1.0]).unwrap(),
            fuse_bias: Tensor::param(vec![1], vec![0.0]).unwrap(),
        };
        let (seq, pooled) = path_b(&regions, &p).unwrap();
        assert_eq!(seq.shape(), vec![9, 1]);
        assert!(seq.to_vec().iter().all(|x| (x - v).abs() < 1e-12));
        assert!((pooled.to_vec()[0] - v).abs() < 1e-12);

        let one = regions_from(vec![2.0], 1, 1);
        let (seq1, _) = path_b(&one, &p).unwrap();
        assert_eq!(seq1.shape(), vec![1, 1]);
        assert!((seq1.to_vec()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_cancellation_yields_bias() {
        let mut rng = Rng::new(14);
        let a: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let s = Tensor::new(vec![4], a.clone()).unwrap();
        let t = Tensor::new(vec![4], a.iter().map(|x| -x).collect()).unwrap();
        let p = FfnParams {
            sep_a: SepConvParams::identity(4),
            sep_b: SepConvParams::identity(4),
            fuse_gain: Tensor::param(vec![4], vec![1.0; 4]).unwrap(),
            fuse_bias: Tensor::param(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        };
        let out = fuse_paths(&s, &t, &p).unwrap();
        let v = out.to_vec();
        for (got, want) in v.iter().zip(&[0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Symmetry of the fusion.
        let ab = fuse_paths(&s, &t, &p).unwrap().to_vec();
        let ba = fuse_paths(&t, &s, &p).unwrap().to_vec();
        assert_eq!(ab, ba);
    }

    #[test]
    fn fuse_normalization_contract() {
        let mut rng = Rng::new(15);
        let s = Tensor::new(vec![8], (0..8).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let t = Tensor::new(vec![8], (0..8).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let p = FfnParams {
            sep_a: SepConvParams::identity(8),
            sep_b: SepConvParams::identity(8),
            fuse_gain: Tensor::param(vec![8], vec![1.0; 8]).unwrap(),
            fuse_bias: Tensor::param(vec![8], vec![0.0; 8]).unwrap(),
        };
        let out = fuse_paths(&s, &t, &p).unwrap().to_vec();
        let mean: f64 = out.iter().sum::<f64>() / 8.0;
        let var: f64 = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn both_paths_gradient_check() {
        let mut rng = Rng::new(16);
        let c = 3;
        let data: Vec<f64> = (0..9 * c).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let regions = regions_from(data, 3, c);
        let p = FfnParams::init(c, &mut rng);
        let cfg = PyramidConfig::default();
        let probe = Tensor::new(vec![c], vec![0.7, -1.1, 0.4]).unwrap();
        let f = || {
            let s = path_a(&regions, &cfg, &p)?;
            let (_, t) = path_b(&regions, &p)?;
            let x = fuse_paths(&s, &t, &p)?;
            Ok(x.mul(&probe)?.sum())
        };
        let mut params = p.named("ffn");
        params.push(("input".to_string(), regions.descriptors.clone()));
        let report = gradient_check(f, &params, 1e-6).unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err());
    }
}
