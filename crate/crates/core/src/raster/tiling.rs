//! Patch tiling on a regular grid. Trailing windows that would overhang
//! the raster are shifted inward so the union of footprints covers every
//! pixel without padding.

use super::{LabelMask, RasterStack};
use crate::error::{Error, Result};

/// Patch origins along one axis of length `extent`.
pub fn tile_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if size == 0 || stride == 0 || size > extent {
        return out;
    }
    let mut o = 0;
    while o + size <= extent {
        out.push(o);
        o += stride;
    }
    let last = extent - size;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Patches cut from a stack, each `T x B x S x S`, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub stride: usize,
    pub timesteps: usize,
    pub bands: usize,
    /// Nodata sentinel of the source stack; patches keep it verbatim.
    pub nodata: f32,
    pub origins: Vec<(usize, usize)>,
    pub patches: Vec<Vec<f32>>,
    pub labels: Option<Vec<Vec<u8>>>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.timesteps * self.bands * self.size * self.size
    }

    /// Subset by index list, preserving order.
    pub fn select(&self, idx: &[usize]) -> PatchSet {
        PatchSet {
            size: self.size,
            stride: self.stride,
            timesteps: self.timesteps,
            bands: self.bands,
            nodata: self.nodata,
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
            patches: idx.iter().map(|&i| self.patches[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Concatenates patch sets with identical geometry.
    pub fn concat(sets: &[PatchSet]) -> Result<PatchSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidArgument("no patch sets to concatenate".into()))?;
        let mut out = PatchSet {
            labels: first.labels.as_ref().map(|_| Vec::new()),
            origins: Vec::new(),
            patches: Vec::new(),
            ..first.clone()
        };
        for s in sets {
            if (s.size, s.timesteps, s.bands) != (first.size, first.timesteps, first.bands)
                || s.labels.is_some() != first.labels.is_some()
            {
                return Err(Error::ShapeMismatch("patch sets differ in geometry".into()));
            }
            out.origins.extend_from_slice(&s.origins);
            out.patches.extend(s.patches.iter().cloned());
            if let (Some(dst), Some(src)) = (out.labels.as_mut(), s.labels.as_ref()) {
                dst.extend(src.iter().cloned());
            }
        }
        Ok(out)
    }
}

/// Copies one `T x B x S x S` window.
pub fn extract_patch(stack: &RasterStack, row: usize, col: usize, size: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(stack.timesteps() * stack.bands() * size * size);
    let w = stack.width();
    for t in 0..stack.timesteps() {
        for b in 0..stack.bands() {
            let plane = stack.plane(t, b);
            for r in row..row + size {
                out.extend_from_slice(&plane[r * w + col..r * w + col + size]);
            }
        }
    }
    out
}

pub fn extract_labels(mask: &LabelMask, row: usize, col: usize, size: usize) -> Vec<u8> {
    let w = mask.width();
    let mut out = Vec::with_capacity(size * size);
    for r in row..row + size {
        out.extend_from_slice(&mask.codes()[r * w + col..r * w + col + size]);
    }
    out
}

pub fn tile_patches(
    stack: &RasterStack,
    labels: Option<&LabelMask>,
    size: usize,
    stride: usize,
) -> Result<PatchSet> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if size > stack.height().min(stack.width()) {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds raster extent {}x{}",
            stack.height(),
            stack.width()
        )));
    }
    if let Some(m) = labels {
        if m.height() != stack.height() || m.width() != stack.width() {
            return Err(Error::ShapeMismatch("labels and stack differ in extent".into()));
        }
    }
    let rows = tile_origins(stack.height(), size, stride);
    let cols = tile_origins(stack.width(), size, stride);
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let patches = origins
        .iter()
        .map(|&(r, c)| extract_patch(stack, r, c, size))
        .collect();
    let labels = labels.map(|m| {
        origins
            .iter()
            .map(|&(r, c)| extract_labels(m, r, c, size))
            .collect()
    });
    Ok(PatchSet {
        size,
        stride,
        timesteps: stack.timesteps(),
        bands: stack.bands(),
        nodata: stack.nodata,
        origins,
        patches,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(h: usize, w: usize) -> RasterStack {
        let vals = (0..h * w).map(|v| v as f32).collect();
        RasterStack::new(1, 1, h, w, vals, -1.0).unwrap()
    }

    #[test]
    fn exact_tiling() {
        let p = tile_patches(&stack(128, 128), None, 64, 64).unwrap();
        assert_eq!(p.origins, vec![(0, 0), (0, 64), (64, 0), (64, 64)]);
    }

    #[test]
    fn trailing_windows_shift_inward() {
        // Enumerate: 0 fits, 64 would overhang (128 > 100), so 100 - 64 = 36.
        let p = tile_patches(&stack(100, 100), None, 64, 64).unwrap();
        assert_eq!(p.origins, vec![(0, 0), (0, 36), (36, 0), (36, 36)]);
    }

    #[test]
    fn single_patch_raster() {
        let s = stack(64, 64);
        let p = tile_patches(&s, None, 64, 64).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.patches[0], s.values());
    }

    #[test]
    fn oversize_patch_errors() {
        assert!(tile_patches(&stack(40, 80), None, 64, 64).is_err());
    }

    #[test]
    fn patch_contents_follow_origin() {
        let s = stack(5, 6);
        let p = tile_patches(&s, None, 2, 3).unwrap();
        let (r, c) = p.origins[1];
        assert_eq!(p.patches[1][0], (r * 6 + c) as f32);
        assert_eq!(p.patches[1][3], ((r + 1) * 6 + c + 1) as f32);
    }

    proptest! {
        #[test]
        fn footprints_cover_raster(h in 1usize..70, w in 1usize..70, size in 1usize..20, stride in 1usize..25) {
            prop_assume!(size <= h.min(w) && stride <= size);
            let p = tile_patches(&stack(h, w), None, size, stride).unwrap();
            let mut covered = vec![false; h * w];
            for &(r, c) in &p.origins {
                prop_assert!(r + size <= h && c + size <= w);
                for rr in r..r + size {
                    for cc in c..c + size {
                        covered[rr * w + cc] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|&x| x));
        }
    }
}
