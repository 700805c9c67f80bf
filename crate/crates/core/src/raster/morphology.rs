use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuringElement {
    /// All offsets with `dx² + dy² <= radius²`.
    Disc { radius: u32 },
    /// Centre plus its four 4-neighbours.
    Cross3,
    /// Full 3x3 block.
    Square3,
}

impl StructuringElement {
    pub fn disc(radius: u32) -> Result<Self> {
        if radius == 0 {
            return Err(Error::param("disc radius must be >= 1"));
        }
        Ok(StructuringElement::Disc { radius })
    }

    pub fn offsets(&self) -> Vec<(isize, isize)> {
        match *self {
            StructuringElement::Disc { radius } => {
                let r = radius as isize;
                let mut out = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy <= r * r {
                            out.push((dx, dy));
                        }
                    }
                }
                out
            }
            StructuringElement::Cross3 => vec![(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)],
            StructuringElement::Square3 => {
                let mut out = Vec::with_capacity(9);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        out.push((dx, dy));
                    }
                }
                out
            }
        }
    }
}

pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate_offsets(mask, &se.offsets())
}

pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    erode_offsets(mask, &se.offsets())
}

/// Minkowski dilation by an arbitrary offset set; outside the grid is background.
pub(crate) fn dilate_offsets(mask: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        offsets
            .iter()
            .any(|&(dx, dy)| mask.get_padded(x as isize - dx, y as isize - dy))
    })
}

/// Minkowski erosion by an arbitrary offset set; outside the grid is background.
pub(crate) fn erode_offsets(mask: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        offsets
            .iter()
            .all(|&(dx, dy)| mask.get_padded(x as isize + dx, y as isize + dy))
    })
}
