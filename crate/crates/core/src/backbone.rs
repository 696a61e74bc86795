//! Isometric convolutional backbone.
//!
//! A 40-pixel-high grayscale line is folded by a 4×4 space-to-depth into a
//! 10-row grid at quarter width, lifted to the trunk width by a 1×1 conv,
//! passed through a stack of fused inverted bottlenecks that keep the grid
//! resolution constant, and finally collapsed to a single row:
//!
//! ```text
//! [40×W×1] → s2d(4) → [10×W/4×16] → 1×1 → [10×W/4×64]
//!          → 11 × (x + project(relu(norm(expand3×3(x))))) → collapse → [W/4×64]
//! ```
//!
//! The collapse block is a full-height `10×1` valid convolution plus a
//! residual path that averages the grid rows and applies a 1×1 projection.
//! Normalization is the inference-time affine fold of batch renormalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, space_to_depth, Padding, Tensor};
use crate::weights::{Params, WeightSpec, WeightStore};

pub const INPUT_HEIGHT: usize = 40;
pub const STEM_BLOCK: usize = 4;
pub const GRID_HEIGHT: usize = INPUT_HEIGHT / STEM_BLOCK;
const EXPAND_KERNEL: usize = 3;
const COLLAPSE_KERNEL_WIDTH: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub layers: usize,
    pub channels: usize,
    pub expansion: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 11,
            channels: 64,
            expansion: 8,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expansion == 0 {
            return Err(Error::Config("backbone channels and expansion must be positive".into()));
        }
        Ok(())
    }

    fn expanded(&self) -> usize {
        self.channels * self.expansion
    }
}

#[derive(Clone, Debug)]
pub struct FusedIbnParams {
    pub expand_w: Tensor,
    pub expand_b: Tensor,
    pub norm_scale: Tensor,
    pub norm_shift: Tensor,
    pub project_w: Tensor,
    pub project_b: Tensor,
}

impl FusedIbnParams {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = conv2d(x, &self.expand_w, (1, 1), Padding::Same)?
            .add_bias(&self.expand_b)?
            .affine(&self.norm_scale, &self.norm_shift)?
            .relu();
        conv2d(&h, &self.project_w, (1, 1), Padding::Same)?
            .add_bias(&self.project_b)?
            .add(x)
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub stem_w: Tensor,
    pub stem_b: Tensor,
    pub layers: Vec<FusedIbnParams>,
    pub collapse_w: Tensor,
    pub collapse_b: Tensor,
    pub collapse_res_w: Tensor,
    pub collapse_res_b: Tensor,
}

fn layer_specs(cfg: &BackboneConfig, i: usize) -> [WeightSpec; 6] {
    let (c, e) = (cfg.channels, cfg.expanded());
    let p = format!("bb.L{i}");
    [
        WeightSpec::new(format!("{p}.expand.w"), &[EXPAND_KERNEL, EXPAND_KERNEL, c, e]),
        WeightSpec::new(format!("{p}.expand.b"), &[e]),
        WeightSpec::new(format!("{p}.norm.scale"), &[e]),
        WeightSpec::new(format!("{p}.norm.shift"), &[e]),
        WeightSpec::new(format!("{p}.project.w"), &[1, 1, e, c]),
        WeightSpec::new(format!("{p}.project.b"), &[c]),
    ]
}

impl Params for BackboneParams {
    type Config = BackboneConfig;

    fn specs(cfg: &BackboneConfig) -> Vec<WeightSpec> {
        let c = cfg.channels;
        let stem_in = STEM_BLOCK * STEM_BLOCK;
        let mut specs = vec![
            WeightSpec::new("bb.stem.w", &[1, 1, stem_in, c]),
            WeightSpec::new("bb.stem.b", &[c]),
        ];
        for i in 0..cfg.layers {
            specs.extend(layer_specs(cfg, i));
        }
        specs.extend([
            WeightSpec::new("bb.collapse.w", &[GRID_HEIGHT, COLLAPSE_KERNEL_WIDTH, c, c]),
            WeightSpec::new("bb.collapse.b", &[c]),
            WeightSpec::new("bb.collapse.res.w", &[1, 1, c, c]),
            WeightSpec::new("bb.collapse.res.b", &[c]),
        ]);
        specs
    }

    fn load(store: &WeightStore, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let specs = Self::specs(cfg);
        let get = |name: &str| {
            let spec = specs.iter().find(|s| s.name == name).expect("known weight name");
            store.fetch(spec)
        };
        let layers = (0..cfg.layers)
            .map(|i| {
                let [ew, eb, ns, nh, pw, pb] = layer_specs(cfg, i);
                Ok(FusedIbnParams {
                    expand_w: store.fetch(&ew)?,
                    expand_b: store.fetch(&eb)?,
                    norm_scale: store.fetch(&ns)?,
                    norm_shift: store.fetch(&nh)?,
                    project_w: store.fetch(&pw)?,
                    project_b: store.fetch(&pb)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            stem_w: get("bb.stem.w")?,
            stem_b: get("bb.stem.b")?,
            layers,
            collapse_w: get("bb.collapse.w")?,
            collapse_b: get("bb.collapse.b")?,
            collapse_res_w: get("bb.collapse.res.w")?,
            collapse_res_b: get("bb.collapse.res.b")?,
        })
    }
}

impl BackboneParams {
    /// Maps a normalized `[40×W×1]` image to `[W/4 × channels]` frames.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != INPUT_HEIGHT || shape[2] != 1 {
            return Err(Error::Dimension(format!(
                "backbone expects [{INPUT_HEIGHT}×W×1], got {shape:?}"
            )));
        }
        if shape[1] % STEM_BLOCK != 0 {
            return Err(Error::Dimension(format!(
                "image width {} is not a multiple of {STEM_BLOCK}",
                shape[1]
            )));
        }
        let frames = shape[1] / STEM_BLOCK;
        let c = self.config.channels;

        let grid = space_to_depth(image, STEM_BLOCK)?;
        let mut x = conv2d(&grid, &self.stem_w, (1, 1), Padding::Valid)?.add_bias(&self.stem_b)?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }

        let collapsed = conv2d(&x, &self.collapse_w, (1, 1), Padding::Valid)?.add_bias(&self.collapse_b)?;
        let mut mean = vec![0.0f32; frames * c];
        for row in 0..GRID_HEIGHT {
            let src = &x.data()[row * frames * c..(row + 1) * frames * c];
            for (m, v) in mean.iter_mut().zip(src) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= GRID_HEIGHT as f32;
        }
        let mean = Tensor::new(vec![1, frames, c], mean)?;
        let residual = conv2d(&mean, &self.collapse_res_w, (1, 1), Padding::Valid)?
            .add_bias(&self.collapse_res_b)?;
        collapsed.add(&residual)?.reshape(vec![frames, c])
    }

    pub fn receptive_field_radius(&self) -> usize {
        receptive_field_radius(&self.config)
    }
}

/// One-sided radius, in input pixels, of the window that can influence an
/// output frame: the largest distance between an influencing pixel column
/// and any column of the frame's own 4-pixel block.
///
/// Each `k`-wide conv on the stride-4 grid widens the window by `(k-1)/2`
/// grid columns per side; the stem block itself spans `STEM_BLOCK - 1`.
pub fn receptive_field_radius(cfg: &BackboneConfig) -> usize {
    let grid_radius = cfg.layers * (EXPAND_KERNEL - 1) / 2 + (COLLAPSE_KERNEL_WIDTH - 1) / 2;
    STEM_BLOCK * grid_radius + STEM_BLOCK - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_uniform, Rng};

    fn small() -> BackboneConfig {
        BackboneConfig {
            layers: 3,
            channels: 8,
            expansion: 2,
        }
    }

    #[test]
    fn default_geometry() {
        let bb = BackboneParams::random(&BackboneConfig::default(), &mut Rng::new(1));
        assert_eq!(bb.layers.len(), 11);
        let img = rng_uniform(&mut Rng::new(2), &[40, 320, 1], -1.0, 1.0).unwrap();
        assert_eq!(bb.forward(&img).unwrap().shape(), &[80, 64]);
        let img = Tensor::zeros(&[40, 4, 1]);
        assert_eq!(bb.forward(&img).unwrap().shape(), &[1, 64]);
    }

    #[test]
    fn frame_count_is_quarter_width() {
        let bb = BackboneParams::random(&BackboneConfig::default(), &mut Rng::new(3));
        for w in [4usize, 320, 1024, 4096] {
            let img = Tensor::full(&[40, w, 1], 0.25);
            assert_eq!(bb.forward(&img).unwrap().shape(), &[w / 4, 64]);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let bb = BackboneParams::random(&small(), &mut Rng::new(1));
        assert!(matches!(bb.forward(&Tensor::zeros(&[40, 10, 1])), Err(Error::Dimension(_))));
        assert!(matches!(bb.forward(&Tensor::zeros(&[32, 8, 1])), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_image_zero_biases_gives_zero() {
        let cfg = BackboneConfig::default();
        let mut store = WeightStore::random(&BackboneParams::specs(&cfg), &mut Rng::new(4));
        for spec in BackboneParams::specs(&cfg) {
            if spec.name.ends_with(".b") || spec.name.ends_with(".shift") {
                *store.get_mut(&spec.name).unwrap() = Tensor::zeros(&spec.shape);
            }
        }
        let bb = BackboneParams::load(&store, &cfg).unwrap();
        let y = bb.forward(&Tensor::zeros(&[40, 64, 1])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let bb = BackboneParams::random(&small(), &mut Rng::new(5));
        let img = rng_uniform(&mut Rng::new(6), &[40, 96, 1], -1.0, 1.0).unwrap();
        assert_eq!(bb.forward(&img).unwrap(), bb.forward(&img).unwrap());
    }

    #[test]
    fn radius_formula() {
        let mut cfg = BackboneConfig::default();
        assert_eq!(receptive_field_radius(&cfg), 47);
        cfg.layers = 0;
        assert_eq!(receptive_field_radius(&cfg), 3);
        cfg.layers = 22;
        assert_eq!(receptive_field_radius(&cfg) - 3, 2 * 44);
    }

    /// Indices of frames whose output changed after perturbing column `x`.
    fn changed_frames(bb: &BackboneParams, img: &Tensor, base: &Tensor, x: usize, row: usize) -> Vec<usize> {
        let mut pert = img.clone();
        let w = img.shape()[1];
        pert.data_mut()[row * w + x] += 0.75;
        let out = bb.forward(&pert).unwrap();
        (0..out.shape()[0]).filter(|&f| out.row(f) != base.row(f)).collect()
    }

    // Perturbation oracle: the widest observed pixel-to-frame-block distance
    // among frames that react to a single-pixel change.
    #[test]
    fn perturbation_radius_matches_formula() {
        let cfg = BackboneConfig::default();
        let bb = BackboneParams::random(&cfg, &mut Rng::new(7));
        let img = rng_uniform(&mut Rng::new(8), &[40, 192, 1], -1.0, 1.0).unwrap();
        let base = bb.forward(&img).unwrap();
        let mut observed = 0;
        for x in [96usize, 99] {
            for f in changed_frames(&bb, &img, &base, x, 17) {
                let near = 4 * f;
                let far = 4 * f + 3;
                observed = observed.max(x.abs_diff(near)).max(x.abs_diff(far));
            }
        }
        assert_eq!(observed, 47);
        assert_eq!(observed, bb.receptive_field_radius());
    }

    #[test]
    fn locality_random_trials() {
        let cfg = BackboneConfig::default();
        let bb = BackboneParams::random(&cfg, &mut Rng::new(9));
        let img = rng_uniform(&mut Rng::new(10), &[40, 128, 1], -1.0, 1.0).unwrap();
        let base = bb.forward(&img).unwrap();
        let radius = bb.receptive_field_radius() as f64;
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let x = rng.below(128);
            let row = rng.below(40);
            let changed = changed_frames(&bb, &img, &base, x, row);
            for f in changed {
                let center = 4.0 * f as f64 + 1.5;
                assert!(
                    (x as f64 - center).abs() <= radius,
                    "pixel {x} changed frame {f} beyond radius {radius}"
                );
            }
        }
    }
}
