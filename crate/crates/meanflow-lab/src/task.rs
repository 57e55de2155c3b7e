//! Synthetic conditional data tasks.
//!
//! Two task families cover the experiments: a single isotropic Gaussian
//! (where analytic velocity oracles exist) and compositional mixtures, where
//! each attribute controls one data coordinate and every attribute-value
//! combination is one mixture component. Condition ids are canonical strings
//! like `c01` (attribute 0 at value 0, attribute 1 at value 1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::GaussianTask;
use crate::numcore::{Rng, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    Gaussian {
        mean: Vec<f64>,
        std: f64,
    },
    Mixture {
        n_attributes: usize,
        values_per_attribute: usize,
        /// Half-width of the mean lattice along each coordinate.
        arm: f64,
        component_std: f64,
    },
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Gaussian { mean, std } => {
                if mean.is_empty() {
                    return Err(Error::InvalidArg("gaussian task needs a mean vector".into()));
                }
                if *std <= 0.0 {
                    return Err(Error::InvalidArg(format!("std must be positive, got {std}")));
                }
            }
            TaskConfig::Mixture {
                n_attributes,
                values_per_attribute,
                arm,
                component_std,
            } => {
                if *n_attributes == 0 || *values_per_attribute == 0 {
                    return Err(Error::InvalidArg(
                        "mixture needs at least one attribute and one value".into(),
                    ));
                }
                if *values_per_attribute > 10 {
                    return Err(Error::InvalidArg(
                        "condition id scheme supports at most 10 values per attribute".into(),
                    ));
                }
                if *arm <= 0.0 || *component_std <= 0.0 {
                    return Err(Error::InvalidArg(
                        "mixture arm and component_std must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        match self {
            TaskConfig::Gaussian { mean, .. } => mean.len(),
            TaskConfig::Mixture { n_attributes, .. } => *n_attributes,
        }
    }

    /// Canonical condition ids in lexicographic order.
    pub fn condition_ids(&self) -> Vec<String> {
        match self {
            TaskConfig::Gaussian { .. } => vec!["g0".to_string()],
            TaskConfig::Mixture {
                n_attributes,
                values_per_attribute,
                ..
            } => all_value_tuples(*n_attributes, *values_per_attribute)
                .iter()
                .map(|vals| condition_id(vals))
                .collect(),
        }
    }

    /// Mean of the component commanded by each condition id.
    pub fn component_means(&self) -> BTreeMap<String, Vec<f64>> {
        match self {
            TaskConfig::Gaussian { mean, .. } => {
                BTreeMap::from([("g0".to_string(), mean.clone())])
            }
            TaskConfig::Mixture {
                n_attributes,
                values_per_attribute,
                arm,
                ..
            } => all_value_tuples(*n_attributes, *values_per_attribute)
                .iter()
                .map(|vals| {
                    (
                        condition_id(vals),
                        vals.iter()
                            .map(|&v| lattice_coord(v, *values_per_attribute, *arm))
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn parse_condition(&self, id: &str) -> Result<Vec<usize>> {
        match self {
            TaskConfig::Gaussian { .. } => {
                if id == "g0" {
                    Ok(vec![])
                } else {
                    Err(Error::UnknownCondition(id.to_string()))
                }
            }
            TaskConfig::Mixture {
                n_attributes,
                values_per_attribute,
                ..
            } => {
                let body = id
                    .strip_prefix('c')
                    .ok_or_else(|| Error::UnknownCondition(id.to_string()))?;
                let vals: Option<Vec<usize>> = body
                    .chars()
                    .map(|ch| ch.to_digit(10).map(|d| d as usize))
                    .collect();
                let vals = vals.ok_or_else(|| Error::UnknownCondition(id.to_string()))?;
                if vals.len() != *n_attributes
                    || vals.iter().any(|&v| v >= *values_per_attribute)
                {
                    return Err(Error::UnknownCondition(id.to_string()));
                }
                Ok(vals)
            }
        }
    }

    /// Draws one data point for the given condition id.
    pub fn sample_point(&self, id: &str, rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            TaskConfig::Gaussian { mean, std } => {
                self.parse_condition(id)?;
                Ok(mean.iter().map(|m| m + std * rng.normal()).collect())
            }
            TaskConfig::Mixture { component_std, .. } => {
                let mean = self
                    .component_means()
                    .remove(id)
                    .ok_or_else(|| Error::UnknownCondition(id.to_string()))?;
                Ok(mean.iter().map(|m| m + component_std * rng.normal()).collect())
            }
        }
    }

    /// Samples a batch for the listed condition ids (one row each).
    pub fn sample_batch(&self, ids: &[String], rng: &mut Rng) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            rows.push(self.sample_point(id, rng)?);
        }
        Tensor::from_rows(&rows)
    }

    /// The Gaussian task behind this config, when that is what it is.
    pub fn as_gaussian(&self) -> Option<GaussianTask> {
        match self {
            TaskConfig::Gaussian { mean, std } => Some(GaussianTask {
                mean: mean.clone(),
                std: *std,
            }),
            TaskConfig::Mixture { .. } => None,
        }
    }
}

fn lattice_coord(value: usize, values_per_attribute: usize, arm: f64) -> f64 {
    if values_per_attribute == 1 {
        0.0
    } else {
        arm * (2.0 * value as f64 / (values_per_attribute - 1) as f64 - 1.0)
    }
}

fn all_value_tuples(n_attributes: usize, values_per_attribute: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n_attributes {
        let mut next = Vec::new();
        for prefix in &out {
            for v in 0..values_per_attribute {
                let mut tuple = prefix.clone();
                tuple.push(v);
                next.push(tuple);
            }
        }
        out = next;
    }
    out
}

pub fn condition_id(values: &[usize]) -> String {
    let mut s = String::from("c");
    for v in values {
        s.push(char::from_digit(*v as u32, 10).expect("value < 10"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture() -> TaskConfig {
        TaskConfig::Mixture {
            n_attributes: 2,
            values_per_attribute: 2,
            arm: 1.5,
            component_std: 0.3,
        }
    }

    #[test]
    fn three_by_three_has_nine_conditions() {
        let t = TaskConfig::Mixture {
            n_attributes: 2,
            values_per_attribute: 3,
            arm: 1.0,
            component_std: 0.2,
        };
        let ids = t.condition_ids();
        assert_eq!(ids.len(), 9);
        assert_eq!(ids[0], "c00");
        assert_eq!(ids[8], "c22");
        // Canonical order is sorted.
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn component_means_sit_on_the_lattice() {
        let means = mixture().component_means();
        assert_eq!(means["c00"], vec![-1.5, -1.5]);
        assert_eq!(means["c01"], vec![-1.5, 1.5]);
        assert_eq!(means["c10"], vec![1.5, -1.5]);
        assert_eq!(means["c11"], vec![1.5, 1.5]);
    }

    #[test]
    fn unknown_condition_rejected() {
        assert!(mixture().parse_condition("c77").is_err());
        assert!(mixture().parse_condition("x01").is_err());
        assert!(mixture().sample_point("c7", &mut Rng::seed(1)).is_err());
    }

    #[test]
    fn sample_mean_tracks_component_mean() {
        let t = mixture();
        let mut rng = Rng::seed(42);
        let n = 4000;
        let ids = vec!["c11".to_string(); n];
        let batch = t.sample_batch(&ids, &mut rng).unwrap();
        for k in 0..2 {
            let mean: f64 = (0..n).map(|i| batch.row_slice(i)[k]).sum::<f64>() / n as f64;
            // CLT bound: 4 sigma / sqrt(n)
            assert!((mean - 1.5).abs() < 4.0 * 0.3 / (n as f64).sqrt());
        }
    }

    #[test]
    fn gaussian_task_has_single_condition() {
        let t = TaskConfig::Gaussian {
            mean: vec![0.4, -0.7],
            std: 0.8,
        };
        assert_eq!(t.condition_ids(), vec!["g0".to_string()]);
        assert_eq!(t.data_dim(), 2);
        assert!(t.as_gaussian().is_some());
    }
}
