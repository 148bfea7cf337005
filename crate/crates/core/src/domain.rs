//! The spatial domain: a centered box `[-l/2, l/2)ᵈ` with opposite faces
//! identified (a torus), or all of ℝᵈ.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    Torus { side: f64 },
    FreeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainMode {
    kind: DomainKind,
    dim: usize,
}

/// Wrap a scalar into `[-l/2, l/2)`. The reduction is exact: the result is
/// the true real remainder of `x` modulo `l`, with no rounding.
#[inline]
pub fn wrap_scalar(side: f64, x: f64) -> f64 {
    let half = 0.5 * side;
    let r = libm::fmod(x, side);
    if r >= half {
        r - side
    } else if r < -half {
        r + side
    } else {
        r
    }
}

impl DomainMode {
    pub fn torus(side: f64, dim: usize) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidSpec(alloc::format!(
                "torus side length must be positive, got {side}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidSpec("dimension must be at least 1".into()));
        }
        Ok(DomainMode {
            kind: DomainKind::Torus { side },
            dim,
        })
    }

    pub fn free(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("dimension must be at least 1".into()));
        }
        Ok(DomainMode {
            kind: DomainKind::FreeSpace,
            dim,
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> Option<f64> {
        match self.kind {
            DomainKind::Torus { side } => Some(side),
            DomainKind::FreeSpace => None,
        }
    }

    fn require_torus(&self, what: &'static str) -> Result<f64> {
        self.side().ok_or(Error::ModeMismatch(what))
    }

    /// Representative of `x` modulo `l` with every component in `[-l/2, l/2)`.
    pub fn wrap(&self, x: &[f64]) -> Result<Vec<f64>> {
        let side = self.require_torus("wrap needs a torus")?;
        Ok(x.iter().map(|&xi| wrap_scalar(side, xi)).collect())
    }

    /// `[sin(2πx/l); cos(2πx/l)]`, evaluated after wrapping so periodicity is
    /// exact in floating point.
    pub fn embed_periodic(&self, x: &[f64]) -> Result<Vec<f64>> {
        let side = self.require_torus("periodic embedding needs a torus")?;
        let w: Vec<f64> = x.iter().map(|&xi| wrap_scalar(side, xi)).collect();
        let k = 2.0 * PI / side;
        let mut out: Vec<f64> = w.iter().map(|&xi| libm::sin(k * xi)).collect();
        out.extend(w.iter().map(|&xi| libm::cos(k * xi)));
        Ok(out)
    }

    /// `x - y`, taking the shorter way around on a torus.
    pub fn min_displacement(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self.kind {
            DomainKind::FreeSpace => x.iter().zip(y).map(|(a, b)| a - b).collect(),
            DomainKind::Torus { side } => x
                .iter()
                .zip(y)
                .map(|(a, b)| wrap_scalar(side, a - b))
                .collect(),
        }
    }
}
