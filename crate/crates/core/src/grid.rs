//! Delay structure and uniform time meshes on `[-τ, T]`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::math;

const ALIGN_TOL: f64 = 1e-9;

/// Snaps `x` to the nearest integer if it is one within tolerance.
fn as_integer(x: f64) -> Option<usize> {
    let r = math::round(x);
    if r >= 0.0 && (x - r).abs() <= ALIGN_TOL * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

/// Delay length `tau`, horizon `T` and the offsets `s_1 = 0 > s_2 > … > s_k = -tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySpec {
    tau: f64,
    horizon: f64,
    offsets: Vec<f64>,
}

impl DelaySpec {
    pub fn new(tau: f64, horizon: f64, offsets: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(config_err(format!("tau must be positive, got {tau}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(config_err(format!("horizon must be positive, got {horizon}")));
        }
        if offsets.is_empty() || offsets[0] != 0.0 {
            return Err(config_err("delay offsets must start with s_1 = 0"));
        }
        if offsets.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(config_err("delay offsets must be strictly decreasing"));
        }
        if offsets.iter().any(|&s| s < -tau * (1.0 + ALIGN_TOL)) {
            return Err(config_err("delay offsets must lie in [-tau, 0]"));
        }
        if offsets.len() > 1 {
            let last = offsets[offsets.len() - 1];
            if (last + tau).abs() > ALIGN_TOL * tau {
                return Err(config_err(format!("last delay offset must be -tau, got {last}")));
            }
        }
        Ok(Self {
            tau,
            horizon,
            offsets,
        })
    }

    /// `k` offsets evenly spaced over `[-tau, 0]`; `k = 1` means no delay.
    pub fn uniform(tau: f64, horizon: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(config_err("k must be at least 1"));
        }
        let offsets = if k == 1 {
            alloc::vec![0.0]
        } else {
            (0..k)
                .map(|l| if l == k - 1 { -tau } else { -(l as f64) * tau / (k - 1) as f64 })
                .collect()
        };
        Self::new(tau, horizon, offsets)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    /// Offsets expressed as whole numbers of grid steps; fails if any offset is off-grid.
    pub fn offset_steps(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        if (grid.tau() - self.tau).abs() > ALIGN_TOL * self.tau
            || (grid.horizon() - self.horizon).abs() > ALIGN_TOL * self.horizon
        {
            return Err(config_err("grid and delay spec disagree on tau or horizon"));
        }
        self.offsets
            .iter()
            .map(|&s| {
                as_integer(-s / grid.mesh()).ok_or_else(|| {
                    config_err(format!(
                        "delay offset {s} is not a multiple of the mesh {}",
                        grid.mesh()
                    ))
                })
            })
            .collect()
    }

    /// Fails unless every offset lies on `grid`.
    pub fn validate_against(&self, grid: &TimeGrid) -> Result<()> {
        self.offset_steps(grid).map(|_| ())
    }
}

/// Uniform mesh `δ = T/M = τ/M'` on `[-τ, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    tau: f64,
    steps: usize,
    delay_steps: usize,
    level: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, tau: f64, steps: usize, level: usize) -> Result<Self> {
        if steps == 0 {
            return Err(config_err("a grid needs at least one step"));
        }
        if !(horizon > 0.0 && tau > 0.0) {
            return Err(config_err("horizon and tau must be positive"));
        }
        let delay_steps = as_integer(tau * steps as f64 / horizon)
            .filter(|&m| m >= 1)
            .ok_or_else(|| {
                config_err(format!(
                    "tau = {tau} is not a positive multiple of the mesh {}",
                    horizon / steps as f64
                ))
            })?;
        Ok(Self {
            horizon,
            tau,
            steps,
            delay_steps,
            level,
        })
    }

    pub fn mesh(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `M`, the number of steps on `[0, T]`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `M'`, the number of steps on `[-τ, 0]`.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn time(&self, node: isize) -> f64 {
        node as f64 * self.mesh()
    }

    /// The grid with every step halved (level + 1).
    pub fn refined(&self) -> Self {
        Self {
            steps: self.steps * 2,
            delay_steps: self.delay_steps * 2,
            level: self.level + 1,
            ..*self
        }
    }

    /// Number of steps of `fine` inside one step of `self`.
    pub fn ratio_to(&self, fine: &TimeGrid) -> Result<usize> {
        if fine.steps % self.steps != 0 || fine.delay_steps % self.delay_steps != 0 {
            return Err(config_err("grids are not nested"));
        }
        Ok(fine.steps / self.steps)
    }
}

/// Level hierarchy with `M_l = M_0 · 2^l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelHierarchy {
    pub horizon: f64,
    pub tau: f64,
    pub base_steps: usize,
}

impl LevelHierarchy {
    pub fn new(horizon: f64, tau: f64, base_steps: usize) -> Result<Self> {
        TimeGrid::new(horizon, tau, base_steps, 0)?;
        Ok(Self {
            horizon,
            tau,
            base_steps,
        })
    }

    pub fn steps(&self, level: usize) -> usize {
        self.base_steps << level
    }

    pub fn grid(&self, level: usize) -> TimeGrid {
        // base grid validated in `new`; refinement keeps alignment
        let mut g = TimeGrid::new(self.horizon, self.tau, self.base_steps, 0)
            .expect("validated base grid");
        for _ in 0..level {
            g = g.refined();
        }
        g
    }
}
