//! Overlapping fixed-width chunks for wide line images.
//!
//! A line of width `W` is covered by cores of `C = 320 - 2P` pixels. Each
//! chunk reads its core plus `P` pixels on both sides, always exactly 320
//! pixels, synthesizing pixels outside the image per [`PaddingPolicy`].
//! After the backbone, only the frames under the core are kept:
//!
//! ```text
//!  read   |<-P->|<------- core ------->|<-P->|
//!  frames        [P/4, P/4 + core/4)
//! ```
//!
//! With `P` at least the backbone's receptive-field radius the kept frames
//! match what the backbone computes on the whole line.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::backbone::{INPUT_HEIGHT, STEM_BLOCK};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHUNK_WIDTH: usize = 320;
pub const DEFAULT_PAD: usize = 48;
pub const CHUNK_FRAMES: usize = CHUNK_WIDTH / STEM_BLOCK;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingPolicy {
    /// Missing pixels are 0 (mid-gray after normalization).
    Zero,
    /// Missing pixels copy the nearest image column.
    #[default]
    EdgeReplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkConfig {
    #[serde(default = "default_pad")]
    pub pad_px: usize,
    #[serde(default)]
    pub policy: PaddingPolicy,
}

fn default_pad() -> usize {
    DEFAULT_PAD
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            pad_px: DEFAULT_PAD,
            policy: PaddingPolicy::EdgeReplicate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub core: Range<usize>,
    /// May start before 0 and end past `W`.
    pub read_start: isize,
    pub read_end: isize,
    /// Frames of this chunk's backbone output that are kept.
    pub valid_frames: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub width: usize,
    pub pad_px: usize,
    pub core_px: usize,
    pub chunks: Vec<Chunk>,
    pub total_frames: usize,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

pub fn plan_chunks(width: usize, pad_px: usize) -> Result<ChunkPlan> {
    if width == 0 || width % STEM_BLOCK != 0 {
        return Err(Error::Input(format!("line width {width} must be a positive multiple of 4")));
    }
    if pad_px % STEM_BLOCK != 0 {
        return Err(Error::Parameter(format!("chunk pad {pad_px} must be a multiple of 4")));
    }
    if 2 * pad_px >= CHUNK_WIDTH {
        return Err(Error::Parameter(format!("chunk pad {pad_px} leaves no core")));
    }
    let core_px = CHUNK_WIDTH - 2 * pad_px;
    let chunks = (0..width.div_ceil(core_px))
        .map(|i| {
            let start = i * core_px;
            let end = (start + core_px).min(width);
            let read_start = start as isize - pad_px as isize;
            let lead = pad_px / STEM_BLOCK;
            Chunk {
                core: start..end,
                read_start,
                read_end: read_start + CHUNK_WIDTH as isize,
                valid_frames: lead..lead + (end - start) / STEM_BLOCK,
            }
        })
        .collect();
    Ok(ChunkPlan {
        width,
        pad_px,
        core_px,
        chunks,
        total_frames: width / STEM_BLOCK,
    })
}

/// Columns `start..end` of `image[40×W×1]`; out-of-range columns follow
/// `policy`.
fn read_columns(image: &Tensor, start: isize, end: isize, policy: PaddingPolicy) -> Tensor {
    let w = image.shape()[1] as isize;
    let n = (end - start) as usize;
    Tensor::from_fn(&[INPUT_HEIGHT, n, 1], |idx| {
        let (y, x) = (idx / n, start + (idx % n) as isize);
        let src = match policy {
            PaddingPolicy::Zero if x < 0 || x >= w => return 0.0,
            _ => x.clamp(0, w - 1) as usize,
        };
        image.data()[y * w as usize + src]
    })
}

fn check_image(image: &Tensor) -> Result<usize> {
    match image.shape() {
        &[INPUT_HEIGHT, w, 1] => Ok(w),
        s => Err(Error::Dimension(format!("expected a [40×W×1] line, got {s:?}"))),
    }
}

/// One `[40×320×1]` tensor per chunk.
pub fn split(image: &Tensor, plan: &ChunkPlan, policy: PaddingPolicy) -> Result<Vec<Tensor>> {
    let w = check_image(image)?;
    if w != plan.width {
        return Err(Error::Input(format!("plan is for width {}, image has {w}", plan.width)));
    }
    Ok(plan
        .chunks
        .iter()
        .map(|c| read_columns(image, c.read_start, c.read_end, policy))
        .collect())
}

/// Widens `image` by `left` and `right` columns under `policy`.
pub fn pad_image(image: &Tensor, left: usize, right: usize, policy: PaddingPolicy) -> Result<Tensor> {
    let w = check_image(image)?;
    Ok(read_columns(image, -(left as isize), (w + right) as isize, policy))
}

/// Concatenates the valid frames of each chunk's `[80×d]` features.
pub fn merge_valid(features: &[Tensor], plan: &ChunkPlan) -> Result<Tensor> {
    if features.len() != plan.chunks.len() {
        return Err(Error::Input(format!(
            "{} feature blocks for {} chunks",
            features.len(),
            plan.chunks.len()
        )));
    }
    let mut parts = Vec::with_capacity(features.len());
    for (f, c) in features.iter().zip(&plan.chunks) {
        if f.rank() != 2 || f.rows() != CHUNK_FRAMES {
            return Err(Error::Input(format!(
                "chunk features must be [{CHUNK_FRAMES}×d], got {:?}",
                f.shape()
            )));
        }
        parts.push(f.slice_rows(c.valid_frames.start, c.valid_frames.end)?);
    }
    Tensor::concat_rows(&parts)
}
