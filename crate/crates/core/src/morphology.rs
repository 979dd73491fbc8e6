//! Binary 3D morphology: erosion, dilation, opening, closing and the
//! open-then-close label cleanup.
//!
//! Border rule: nothing outside the volume is foreground, so dilation never
//! grows in from the boundary, and erosion constrains a voxel only through
//! its neighbors that actually lie inside the volume (an all-ones volume is
//! therefore a fixed point of every operation here).

use serde::{Deserialize, Serialize};

use crate::volume::BinaryMask3;

/// Structuring element shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructuringElement {
    /// Face-connected cross: center plus 6 face neighbors.
    #[default]
    Cross,
    /// Full 3x3x3 cube: center plus 26 neighbors.
    Cube,
}

impl StructuringElement {
    /// Offsets of the element, center included.
    pub fn offsets(self) -> Vec<(isize, isize, isize)> {
        match self {
            StructuringElement::Cross => vec![
                (0, 0, 0),
                (-1, 0, 0),
                (1, 0, 0),
                (0, -1, 0),
                (0, 1, 0),
                (0, 0, -1),
                (0, 0, 1),
            ],
            StructuringElement::Cube => {
                let mut offs = Vec::with_capacity(27);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            offs.push((dz, dy, dx));
                        }
                    }
                }
                offs
            }
        }
    }
}

/// A voxel survives erosion iff it is foreground and every element offset
/// that lands inside the volume is foreground too.
pub fn erode(mask: &BinaryMask3, se: StructuringElement) -> BinaryMask3 {
    let (nz, ny, nx) = mask.dims();
    let offsets = se.offsets();
    let mut out = BinaryMask3::zeros(mask.dims());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(z, y, x) == 0 {
                    continue;
                }
                let mut keep = true;
                for &(dz, dy, dx) in &offsets {
                    let zz = z as isize + dz;
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if zz < 0 || yy < 0 || xx < 0
                        || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize
                    {
                        continue;
                    }
                    if mask.get(zz as usize, yy as usize, xx as usize) == 0 {
                        keep = false;
                        break;
                    }
                }
                if keep {
                    out.set(z, y, x, 1);
                }
            }
        }
    }
    out
}

/// A voxel is set by dilation iff any element offset lands on foreground
/// inside the volume.
pub fn dilate(mask: &BinaryMask3, se: StructuringElement) -> BinaryMask3 {
    let (nz, ny, nx) = mask.dims();
    let offsets = se.offsets();
    let mut out = BinaryMask3::zeros(mask.dims());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut hit = false;
                for &(dz, dy, dx) in &offsets {
                    let zz = z as isize + dz;
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if zz < 0 || yy < 0 || xx < 0
                        || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize
                    {
                        continue;
                    }
                    if mask.get(zz as usize, yy as usize, xx as usize) == 1 {
                        hit = true;
                        break;
                    }
                }
                if hit {
                    out.set(z, y, x, 1);
                }
            }
        }
    }
    out
}

pub fn open(mask: &BinaryMask3, se: StructuringElement) -> BinaryMask3 {
    dilate(&erode(mask, se), se)
}

pub fn close(mask: &BinaryMask3, se: StructuringElement) -> BinaryMask3 {
    erode(&dilate(mask, se), se)
}

/// Cleans small artifacts out of a label mask: opening first (removes
/// specks), then closing (fills pinholes).
pub fn cleanup_labels(mask: &BinaryMask3, se: StructuringElement) -> BinaryMask3 {
    close(&open(mask, se), se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> bool) -> BinaryMask3 {
        let mut m = BinaryMask3::zeros(dims);
        for z in 0..dims.0 {
            for y in 0..dims.1 {
                for x in 0..dims.2 {
                    if f(z, y, x) {
                        m.set(z, y, x, 1);
                    }
                }
            }
        }
        m
    }

    fn random_mask(dims: (usize, usize, usize), seed: u64, p: f64) -> BinaryMask3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mask_from_fn(dims, |_, _, _| rng.gen_bool(p))
    }

    fn subset(a: &BinaryMask3, b: &BinaryMask3) -> bool {
        a.data().iter().zip(b.data()).all(|(&x, &y)| x <= y)
    }

    #[test]
    fn erode_isolated_voxel_vanishes() {
        let m = mask_from_fn((5, 5, 5), |z, y, x| (z, y, x) == (2, 2, 2));
        assert_eq!(erode(&m, StructuringElement::Cross).count_ones(), 0);
        assert_eq!(erode(&m, StructuringElement::Cube).count_ones(), 0);
    }

    #[test]
    fn dilate_empty_stays_empty() {
        let m = BinaryMask3::zeros((4, 4, 4));
        assert_eq!(dilate(&m, StructuringElement::Cross).count_ones(), 0);
    }

    #[test]
    fn dilate_interior_voxel_is_cross() {
        let m = mask_from_fn((5, 5, 5), |z, y, x| (z, y, x) == (2, 2, 2));
        let d = dilate(&m, StructuringElement::Cross);
        assert_eq!(d.count_ones(), 7);
        for (dz, dy, dx) in StructuringElement::Cross.offsets() {
            assert_eq!(
                d.get((2 + dz) as usize, (2 + dy) as usize, (2 + dx) as usize),
                1
            );
        }
    }

    #[test]
    fn open_whole_volume_cube_unchanged() {
        let m = mask_from_fn((5, 5, 5), |_, _, _| true);
        assert_eq!(open(&m, StructuringElement::Cross), m);
    }

    // A solid box inside a larger volume is restored exactly by opening
    // with the cube element (erosion peels one shell, dilation puts the
    // same shell back).
    #[test]
    fn open_inner_box_with_cube_element() {
        let m = mask_from_fn((9, 9, 9), |z, y, x| {
            (2..7).contains(&z) && (2..7).contains(&y) && (2..7).contains(&x)
        });
        assert_eq!(open(&m, StructuringElement::Cube), m);
    }

    #[test]
    fn close_fills_single_interior_hole() {
        let m = mask_from_fn((7, 7, 7), |z, y, x| (z, y, x) != (3, 3, 3));
        let c = close(&m, StructuringElement::Cross);
        assert_eq!(c.get(3, 3, 3), 1);
        assert_eq!(c.count_ones(), 7 * 7 * 7);
    }

    #[test]
    fn opening_is_idempotent_on_random_masks() {
        for seed in 0..100 {
            let m = random_mask((8, 8, 8), seed, 0.4);
            for se in [StructuringElement::Cross, StructuringElement::Cube] {
                let once = open(&m, se);
                assert_eq!(open(&once, se), once, "seed {seed}");
                let closed = close(&m, se);
                assert_eq!(close(&closed, se), closed, "seed {seed}");
            }
        }
    }

    #[test]
    fn anti_extensivity_and_extensivity() {
        for seed in 0..50 {
            let m = random_mask((8, 8, 8), seed, 0.5);
            for se in [StructuringElement::Cross, StructuringElement::Cube] {
                assert!(subset(&open(&m, se), &m));
                assert!(subset(&m, &close(&m, se)));
            }
        }
    }

    #[test]
    fn erosion_of_complement_is_complement_of_dilation() {
        for seed in 0..20 {
            let m = random_mask((8, 8, 8), seed, 0.5);
            for se in [StructuringElement::Cross, StructuringElement::Cube] {
                let complement = mask_from_fn(m.dims(), |z, y, x| m.get(z, y, x) == 0);
                let lhs = erode(&complement, se);
                let dil = dilate(&m, se);
                let rhs = mask_from_fn(m.dims(), |z, y, x| dil.get(z, y, x) == 0);
                assert_eq!(lhs, rhs, "seed {seed}");
            }
        }
    }

    #[test]
    fn cleanup_empty_and_full() {
        let empty = BinaryMask3::zeros((6, 6, 6));
        assert_eq!(cleanup_labels(&empty, StructuringElement::Cross), empty);
        let full = mask_from_fn((6, 6, 6), |_, _, _| true);
        assert_eq!(cleanup_labels(&full, StructuringElement::Cross), full);
    }

    #[test]
    fn cleanup_removes_distant_speck() {
        let cube = |z: usize, y: usize, x: usize| z < 5 && y < 5 && x < 5;
        let m = mask_from_fn((9, 9, 9), |z, y, x| cube(z, y, x) || (z, y, x) == (8, 8, 8));
        let cleaned = cleanup_labels(&m, StructuringElement::Cross);
        assert_eq!(cleaned.get(8, 8, 8), 0);
        // Interior of the cube untouched; result contains no voxels outside it.
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    assert_eq!(cleaned.get(z, y, x), 1);
                }
            }
        }
        assert!(cleaned
            .data()
            .iter()
            .zip(mask_from_fn((9, 9, 9), |z, y, x| cube(z, y, x)).data())
            .all(|(&c, &cube_v)| c <= cube_v));
    }
}
