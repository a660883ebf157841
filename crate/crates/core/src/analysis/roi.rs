//! Named voxel sets.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::tensor_io::VoxelStats;

pub const DEFAULT_T_THRESHOLD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoiSource {
    TStatThreshold { threshold: f64 },
    ExplicitList,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiMask {
    pub name: String,
    /// Sorted, unique voxel indices.
    pub voxel_ids: Vec<usize>,
    pub source: RoiSource,
}

impl RoiMask {
    /// Voxels with `t > threshold` (strict).
    pub fn from_tstat(name: impl Into<String>, stats: &VoxelStats, threshold: f64) -> Self {
        let name = name.into();
        let voxel_ids: Vec<usize> = stats
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t as f64 > threshold).then_some(i))
            .collect();
        if voxel_ids.is_empty() {
            log::warn!("ROI {name:?} is empty at t > {threshold}");
        }
        Self {
            name,
            voxel_ids,
            source: RoiSource::TStatThreshold { threshold },
        }
    }

    /// An explicit voxel list; ids are sorted and must be unique and `< voxels`.
    pub fn explicit(name: impl Into<String>, mut ids: Vec<usize>, voxels: usize) -> Result<Self, AnalysisError> {
        let name = name.into();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(AnalysisError::RoiDuplicate { name, id: w[0] });
        }
        if let Some(&id) = ids.last().filter(|&&id| id >= voxels) {
            return Err(AnalysisError::RoiRange { name, id, voxels });
        }
        Ok(Self {
            name,
            voxel_ids: ids,
            source: RoiSource::ExplicitList,
        })
    }

    /// Every voxel.
    pub fn whole_brain(voxels: usize) -> Self {
        Self {
            name: "whole_brain".to_string(),
            voxel_ids: (0..voxels).collect(),
            source: RoiSource::ExplicitList,
        }
    }

    pub fn len(&self) -> usize {
        self.voxel_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxel_ids.is_empty()
    }

    pub fn contains(&self, voxel: usize) -> bool {
        self.voxel_ids.binary_search(&voxel).is_ok()
    }

    pub(crate) fn require_nonempty(&self) -> Result<(), AnalysisError> {
        if self.is_empty() {
            Err(AnalysisError::EmptyRoi(self.name.clone()))
        } else {
            Ok(())
        }
    }
}

/// [`RoiMask::from_tstat`] with a generic name.
pub fn roi_from_tstat(stats: &VoxelStats, threshold: f64) -> RoiMask {
    RoiMask::from_tstat("roi", stats, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(v: &[f32]) -> VoxelStats {
        VoxelStats::new(v.to_vec()).unwrap()
    }

    #[test]
    fn strict_threshold() {
        let m = roi_from_tstat(&stats(&[1.9, 2.0, 2.1]), 2.0);
        assert_eq!(m.voxel_ids, vec![2]);
    }

    #[test]
    fn empty_and_everything() {
        assert!(roi_from_tstat(&stats(&[0.0, 1.0]), 2.0).is_empty());
        let all = roi_from_tstat(&stats(&[-1e30, 0.0, 5.0]), f64::NEG_INFINITY);
        assert_eq!(all.voxel_ids, vec![0, 1, 2]);
    }

    #[test]
    fn explicit_validation() {
        let m = RoiMask::explicit("a", vec![3, 1], 4).unwrap();
        assert_eq!(m.voxel_ids, vec![1, 3]);
        assert!(m.contains(3) && !m.contains(2));
        assert!(matches!(
            RoiMask::explicit("a", vec![1, 1], 4),
            Err(AnalysisError::RoiDuplicate { id: 1, .. })
        ));
        assert!(matches!(
            RoiMask::explicit("a", vec![4], 4),
            Err(AnalysisError::RoiRange { id: 4, .. })
        ));
    }
}
