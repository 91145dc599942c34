//! Immutable problem data shared by the expansion: frequency, forcing, scales and truncation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::ForcingModel;
use crate::frequency::{AlphaTable, FrequencyVector, LatticeBudget, ScaleSequences};
use crate::scalefun::{CutoffThresholds, PartitionParams, DEFAULT_SHARPNESS};

/// Truncation parameters of the resummed expansion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Truncation {
    /// Maximal tree order `K`.
    pub max_order: usize,
    /// Maximal line scale `p_max`.
    pub p_max: i32,
    /// Largest `m` for which `alpha_m` is computed.
    pub m_max: u32,
    /// Cap on the number of generated subtrees and cluster skeletons.
    pub max_count: usize,
    /// l1 radius of Fourier compositions; 0 selects `K + 1` times the largest forcing mode.
    pub mode_radius: u32,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { max_order: 4, p_max: 2, m_max: 10, max_count: 2_000_000, mode_radius: 0 }
    }
}

/// Frequency, forcing and derived scale data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub omega: FrequencyVector,
    pub model: ForcingModel,
    pub alpha: AlphaTable,
    pub sequences: ScaleSequences,
    pub partition: PartitionParams,
    pub truncation: Truncation,
}

impl Problem {
    pub fn new(omega: FrequencyVector, model: ForcingModel, truncation: Truncation) -> Result<Self> {
        Self::with_budget(omega, model, truncation, &LatticeBudget::default())
    }

    pub fn with_budget(
        omega: FrequencyVector,
        model: ForcingModel,
        truncation: Truncation,
        budget: &LatticeBudget,
    ) -> Result<Self> {
        if omega.dim() != model.d() {
            return Err(Error::Invalid(format!(
                "frequency dimension {} does not match forcing dimension {}",
                omega.dim(),
                model.d()
            )));
        }
        if truncation.max_order == 0 || truncation.p_max < 0 {
            return Err(Error::Invalid("need max_order >= 1 and p_max >= 0".into()));
        }
        let alpha = AlphaTable::compute(&omega, truncation.m_max, budget)?;
        // one scale beyond p_max is needed for the cutoff thresholds
        let sequences = ScaleSequences::resolve(&alpha, truncation.p_max as usize + 1)?;
        let partition = PartitionParams::new(sequences.rho.clone(), DEFAULT_SHARPNESS)?;
        Ok(Self { omega, model, alpha, sequences, partition, truncation })
    }

    pub fn r(&self) -> usize {
        self.model.r()
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }

    pub fn max_order(&self) -> usize {
        self.truncation.max_order
    }

    pub fn p_max(&self) -> i32 {
        self.truncation.p_max
    }

    /// Thresholds of `xi_n`; `None` for `n = -1`.
    pub fn cutoff(&self, n: i32) -> Result<Option<CutoffThresholds>> {
        if n < 0 {
            return Ok(None);
        }
        CutoffThresholds::for_scale(&self.sequences, n as usize).map(Some)
    }

    /// Fourier radius for compositions.
    pub fn mode_radius(&self) -> u32 {
        if self.truncation.mode_radius > 0 {
            return self.truncation.mode_radius;
        }
        ((self.max_order() as u32 + 1) * self.model.max_mode_norm()).max(1)
    }
}
