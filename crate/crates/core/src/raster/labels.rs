//! Label hygiene for training masks: per-class erosion of boundary pixels
//! followed by removal of small connected fragments. Removed pixels become
//! cropland/others.

use super::components::{label_components, Connectivity};
use super::{LabelMask, CLASS_CROPLAND, NODATA_CODE, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErodeParams {
    /// Half-width of the square structuring element.
    pub radius: usize,
    /// Components with fewer pixels are relabeled.
    pub min_component: usize,
}

impl Default for ErodeParams {
    fn default() -> Self {
        Self {
            radius: 2,
            min_component: 30,
        }
    }
}

/// `true` where every in-bounds pixel of the 1-D window is set.
fn erode_line(bits: &[bool], radius: usize) -> Vec<bool> {
    let n = bits.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &b) in bits.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(b);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            prefix[hi] - prefix[lo] == hi - lo
        })
        .collect()
}

fn erode_square(bits: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; bits.len()];
    for r in 0..height {
        let line = erode_line(&bits[r * width..(r + 1) * width], radius);
        rows[r * width..(r + 1) * width].copy_from_slice(&line);
    }
    let mut out = vec![false; bits.len()];
    let mut col = vec![false; height];
    for c in 0..width {
        for r in 0..height {
            col[r] = rows[r * width + c];
        }
        for (r, v) in erode_line(&col, radius).into_iter().enumerate() {
            out[r * width + c] = v;
        }
    }
    out
}

/// Erodes every class region with a `(2r+1)x(2r+1)` square and relabels
/// the stripped pixels and all 8-connected fragments smaller than
/// `min_component` as cropland/others. Pixels outside the raster do not
/// erode; nodata pixels do.
pub fn erode_labels(mask: &LabelMask, params: ErodeParams) -> LabelMask {
    let (h, w) = (mask.height(), mask.width());
    let codes = mask.codes();
    let mut out = codes.to_vec();
    for class in 0..NUM_CLASSES as u8 {
        if class == CLASS_CROPLAND {
            continue;
        }
        let bits: Vec<bool> = codes.iter().map(|&c| c == class).collect();
        let kept = erode_square(&bits, h, w, params.radius);
        for i in 0..codes.len() {
            if bits[i] && !kept[i] {
                out[i] = CLASS_CROPLAND;
            }
        }
    }
    let (_, comps) = label_components(h, w, Connectivity::Eight, |i| {
        let c = out[i];
        (c != NODATA_CODE && c != CLASS_CROPLAND).then_some(c)
    });
    for comp in comps.iter().filter(|c| c.pixels.len() < params.min_component) {
        for &p in &comp.pixels {
            out[p] = CLASS_CROPLAND;
        }
    }
    let mut result = LabelMask::new(h, w, out).expect("codes stay valid");
    result.transform = mask.transform;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{CLASS_CASHEW, CLASS_MIXED};
    use proptest::prelude::*;

    /// Direct 2-D window check, independent of the separable implementation.
    fn brute_erode(mask: &LabelMask, radius: usize) -> Vec<u8> {
        let (h, w) = (mask.height() as isize, mask.width() as isize);
        let r = radius as isize;
        let mut out = mask.codes().to_vec();
        for y in 0..h {
            for x in 0..w {
                let c = mask.get(y as usize, x as usize);
                if c == NODATA_CODE || c == CLASS_CROPLAND {
                    continue;
                }
                let mut keep = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && xx >= 0 && yy < h && xx < w && mask.get(yy as usize, xx as usize) != c {
                            keep = false;
                        }
                    }
                }
                if !keep {
                    out[(y * w + x) as usize] = CLASS_CROPLAND;
                }
            }
        }
        out
    }

    #[test]
    fn solid_square_keeps_six_by_six_core() {
        let mut codes = vec![CLASS_CROPLAND; 20 * 20];
        for r in 5..15 {
            for c in 5..15 {
                codes[r * 20 + c] = CLASS_CASHEW;
            }
        }
        let mask = LabelMask::new(20, 20, codes).unwrap();
        let out = erode_labels(&mask, ErodeParams { radius: 2, min_component: 1 });
        assert_eq!(out.codes(), brute_erode(&mask, 2).as_slice());
        assert_eq!(out.count(CLASS_CASHEW), 36);
        for r in 0..20 {
            for c in 0..20 {
                let core = (7..13).contains(&r) && (7..13).contains(&c);
                assert_eq!(out.get(r, c) == CLASS_CASHEW, core, "({r},{c})");
            }
        }
    }

    #[test]
    fn component_of_29_pixels_is_removed_and_30_is_kept() {
        for (n, expect_kept) in [(29usize, false), (30, true)] {
            let mut codes = vec![CLASS_CROPLAND; 40];
            for c in codes.iter_mut().take(n) {
                *c = CLASS_MIXED;
            }
            let mask = LabelMask::new(1, 40, codes).unwrap();
            let out = erode_labels(&mask, ErodeParams { radius: 0, min_component: 30 });
            assert_eq!(out.count(CLASS_MIXED) == n, expect_kept);
        }
    }

    #[test]
    fn all_cropland_is_a_fixpoint() {
        let mask = LabelMask::filled(12, 9, CLASS_CROPLAND).unwrap();
        assert_eq!(erode_labels(&mask, ErodeParams::default()), mask);
    }

    proptest! {
        #[test]
        fn separable_erosion_matches_window_oracle(
            codes in proptest::collection::vec(prop_oneof![Just(0u8), Just(1), Just(2), Just(3), Just(255)], 144),
            radius in 0usize..3,
        ) {
            let mask = LabelMask::new(12, 12, codes).unwrap();
            let out = erode_labels(&mask, ErodeParams { radius, min_component: 0 });
            let expected = brute_erode(&mask, radius);
            prop_assert_eq!(out.codes(), expected.as_slice());
        }

        #[test]
        fn codes_stay_valid_and_count_is_conserved(
            codes in proptest::collection::vec(prop_oneof![Just(0u8), Just(1), Just(2), Just(3), Just(255)], 100),
        ) {
            let mask = LabelMask::new(10, 10, codes).unwrap();
            let out = erode_labels(&mask, ErodeParams::default());
            prop_assert_eq!(out.codes().len(), 100);
            prop_assert!(out.codes().iter().all(|&c| crate::raster::is_valid_code(c)));
            prop_assert_eq!(out.count(NODATA_CODE), mask.count(NODATA_CODE));
        }
    }
}
