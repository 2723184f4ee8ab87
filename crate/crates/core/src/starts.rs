//! Start-point meshes in the boundary layer.
//!
//! All meshes lie along the bottom edge of the cell `(0, pi)^2` and its
//! mirror across `x2 = 0`; the lattice symmetries make every edge equivalent.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{classify_region, FlowParams, Point, RegionTag};

/// The point with abscissa `x1` near `x2 = 0` on the level set `{h = level}`.
pub fn edge_point(x1: f64, level: f64) -> Result<Point> {
    let s = x1.sin();
    if !(s > 0.0) || level.abs() > s {
        return Err(Error::InvalidParameter(format!(
            "level {level} is not attained at x1 = {x1} near the bottom edge"
        )));
    }
    Ok(Point::new(x1, (level / s).asin()))
}

/// Named start-point meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedMesh {
    /// 16 points: four positions from mid-edge towards the corner, each at
    /// `h / delta` in `{0, 1/4, 1/2, 3/4}`.
    Layer16,
}

impl NamedMesh {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "layer16" => Ok(Self::Layer16),
            other => Err(Error::InvalidParameter(format!("unknown start mesh {other:?}"))),
        }
    }

    pub fn points(self, params: &FlowParams) -> Result<Vec<Point>> {
        match self {
            Self::Layer16 => layer16(params),
        }
    }
}

pub fn layer16(params: &FlowParams) -> Result<Vec<Point>> {
    params.validate_layer()?;
    let delta = params.delta();
    let mut out = Vec::with_capacity(16);
    for x1 in [FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI / 32.0] {
        for frac in [0.0, 0.25, 0.5, 0.75] {
            out.push(edge_point(x1, frac * delta)?);
        }
    }
    Ok(out)
}

/// `along` positions spread over the part of the bottom edge that lies in
/// the edge region away from the fattened corners, at each level fraction
/// of `delta`. Points whose classification is not `EdgeLayer` are dropped.
pub fn edge_prime_mesh(params: &FlowParams, along: usize, level_fracs: &[f64]) -> Result<Vec<Point>> {
    params.validate_layer()?;
    if along < 2 {
        return Err(Error::InvalidParameter("need at least two positions along the edge".into()));
    }
    let delta = params.delta();
    // the fattened corner boundary meets x2 = 0 at this abscissa
    let reach = FRAC_PI_2 * (1.0 - (FRAC_PI_4 - params.beta0_prime).tan());
    let (lo, hi) = (reach + 0.05, PI - reach - 0.05);
    let mut out = Vec::new();
    for k in 0..along {
        let x1 = lo + (hi - lo) * k as f64 / (along - 1) as f64;
        for &f in level_fracs {
            let p = edge_point(x1, f * delta)?;
            if classify_region(p, params) == RegionTag::EdgeLayer {
                out.push(p);
            }
        }
    }
    Ok(out)
}
