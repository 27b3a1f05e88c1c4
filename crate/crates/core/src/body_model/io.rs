//! JSON model documents and content hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body_model::model::{BodyModel, BodyModelParts, NUM_BETAS};
use crate::error::{Error, Result};
use crate::kinematics::KinematicTree;
use crate::linalg::Vec3;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk layout: nested row-major arrays.
///
/// `shape_basis[v][c]` has `NUM_BETAS` entries, `pose_basis[v][c]` has one
/// entry per pose feature, `skinning_weights[v]` one per part and
/// `joint_regressor[j]` one per vertex. `parents` uses `-1` for the root.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub template: Vec<[f64; 3]>,
    pub shape_basis: Vec<[Vec<f64>; 3]>,
    pub pose_basis: Vec<[Vec<f64>; 3]>,
    pub skinning_weights: Vec<Vec<f64>>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub parents: Vec<i64>,
    pub part_labels: Vec<usize>,
    pub units: String,
    pub version: u32,
}

impl ModelFile {
    pub fn from_model(model: &BodyModel<f64>) -> Self {
        let v = model.num_vertices();
        let k = model.num_parts();
        let feat = model.pose_feature_dim();
        let rows = |data: &[f64], width: usize| -> Vec<[Vec<f64>; 3]> {
            (0..v).map(|i| std::array::from_fn(|c| data[(i * 3 + c) * width..(i * 3 + c + 1) * width].to_vec())).collect()
        };
        ModelFile {
            template: model.template().iter().map(|p| p.0).collect(),
            shape_basis: rows(model.shape_basis(), NUM_BETAS),
            pose_basis: rows(model.pose_basis(), feat),
            skinning_weights: model.skinning_weights().chunks_exact(k).map(<[f64]>::to_vec).collect(),
            joint_regressor: model.joint_regressor().chunks_exact(v).map(<[f64]>::to_vec).collect(),
            parents: model.tree().to_signed(),
            part_labels: model.part_labels().to_vec(),
            units: "mm".into(),
            version: MODEL_FORMAT_VERSION,
        }
    }

    /// Validates shapes and every model invariant.
    pub fn into_model(self) -> Result<BodyModel<f64>> {
        if self.units != "mm" {
            return Err(Error::InvalidModel(format!("unsupported units {:?}", self.units)));
        }
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported model version {}", self.version)));
        }
        let tree = KinematicTree::from_signed(&self.parents)?;
        let v = self.template.len();
        let k = tree.len();
        let feat = 9 * k.saturating_sub(1);
        let flatten = |rows: Vec<[Vec<f64>; 3]>, width: usize, what: &str| -> Result<Vec<f64>> {
            if rows.len() != v || rows.iter().flatten().any(|r| r.len() != width) {
                return Err(Error::InvalidModel(format!("{what} has the wrong shape")));
            }
            Ok(rows.into_iter().flatten().flatten().collect())
        };
        let shape_basis = flatten(self.shape_basis, NUM_BETAS, "shape basis")?;
        let pose_basis = flatten(self.pose_basis, feat, "pose basis")?;
        if self.skinning_weights.len() != v || self.skinning_weights.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidModel("skinning weights have the wrong shape".into()));
        }
        if self.joint_regressor.len() != k || self.joint_regressor.iter().any(|r| r.len() != v) {
            return Err(Error::InvalidModel("joint regressor has the wrong shape".into()));
        }
        BodyModel::new(BodyModelParts {
            template: self.template.into_iter().map(Vec3).collect(),
            shape_basis,
            pose_basis,
            skinning_weights: self.skinning_weights.into_iter().flatten().collect(),
            joint_regressor: self.joint_regressor.into_iter().flatten().collect(),
            tree,
            part_labels: self.part_labels,
        })
    }
}

impl BodyModel<f64> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hex SHA-256 of the canonical JSON document.
pub fn model_hash(model: &BodyModel<f64>) -> String {
    crate::manifest::sha256_hex(model.to_json().as_bytes())
}
