//! Image-normalized boxes and the 12-component subject/object position embedding.
//!
//! Component layout of [`PairGeometry`]:
//!
//! | idx | value            | idx | value                |
//! |-----|------------------|-----|----------------------|
//! | 0   | x_s - x_o        | 6   | dx / w_s             |
//! | 1   | y_s - y_o        | 7   | dy / h_s             |
//! | 2   | w_o              | 8   | (dx / w_s)^2         |
//! | 3   | w_s              | 9   | (dy / h_s)^2         |
//! | 4   | h_o              | 10  | ln(w_o / w_s)        |
//! | 5   | h_s              | 11  | ln(h_o / h_s)        |
//!
//! where `(dx, dy)` is subject center minus object center. Offsets 0 and 1
//! use top-left corners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgdata::BBox;

pub const PAIR_DIM: usize = 12;

/// Box with x and w divided by image width, y and h by image height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let valid = (0.0..=1.0).contains(&x)
            && (0.0..=1.0).contains(&y)
            && w > 0.0
            && w <= 1.0
            && h > 0.0
            && h <= 1.0;
        if valid {
            Ok(NormBox { x, y, w, h })
        } else {
            Err(Error::invalid(format!(
                "invalid normalized box ({x}, {y}, {w}, {h})"
            )))
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

pub fn normalize_box(bbox: &BBox, image_width: f64, image_height: f64) -> Result<NormBox> {
    if !(image_width > 0.0 && image_height > 0.0) {
        return Err(Error::invalid(format!(
            "image extent {image_width}x{image_height} must be positive"
        )));
    }
    // Boxes that fit the image can still overshoot 1.0 by an ulp after division.
    let clip = |v: f64| v.min(1.0);
    NormBox::new(
        clip(bbox.x / image_width),
        clip(bbox.y / image_height),
        clip(bbox.w / image_width),
        clip(bbox.h / image_height),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry(pub [f64; PAIR_DIM]);

impl PairGeometry {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn pair_embedding(subject: &NormBox, object: &NormBox) -> Result<PairGeometry> {
    if !(subject.w > 0.0 && subject.h > 0.0) {
        return Err(Error::invalid("subject box has zero extent"));
    }
    if !(object.w > 0.0 && object.h > 0.0) {
        return Err(Error::invalid("object box has zero extent"));
    }
    let (csx, csy) = subject.center();
    let (cox, coy) = object.center();
    let rx = (csx - cox) / subject.w;
    let ry = (csy - coy) / subject.h;
    Ok(PairGeometry([
        subject.x - object.x,
        subject.y - object.y,
        object.w,
        subject.w,
        object.h,
        subject.h,
        rx,
        ry,
        rx * rx,
        ry * ry,
        (object.w / subject.w).ln(),
        (object.h / subject.h).ln(),
    ]))
}
