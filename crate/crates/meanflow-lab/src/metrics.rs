//! Desk-scale sample-quality metrics: energy distance, condition fidelity,
//! trajectory curvature.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{distance, Tensor};
use crate::sampler::SampleRun;

/// Energy distance `2 E||a - b|| - E||a - a'|| - E||b - b'||` between two
/// sample sets, computed with all pairs (V-statistic: within-set expectations
/// include the zero diagonal, so identical multisets score exactly zero and
/// the statistic is non-negative). Kernel-free, no bandwidth to tune;
/// quadratic in the set sizes.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.numel() == 0 || b.numel() == 0 || a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArg("energy_distance: empty sample set".into()));
    }
    if a.last_dim() != b.last_dim() {
        return Err(Error::Shape {
            op: "energy_distance",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let between = mean_pairwise(a, b);
    let within_a = mean_pairwise(a, a);
    let within_b = mean_pairwise(b, b);
    Ok(2.0 * between - within_a - within_b)
}

fn mean_pairwise(a: &Tensor, b: &Tensor) -> f64 {
    let (n, m) = (a.rows(), b.rows());
    let mut sum = 0.0;
    for i in 0..n {
        let ai = a.row_slice(i);
        for j in 0..m {
            sum += distance(ai, b.row_slice(j));
        }
    }
    sum / (n as f64 * m as f64)
}

/// Fidelity of conditional samples: each sample is classified to the nearest
/// component mean, and per-condition accuracy is the fraction assigned to the
/// commanded component.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityReport {
    pub per_condition: BTreeMap<String, f64>,
    pub overall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
}

/// Classifies every sample against the full set of component means.
/// `components` maps condition id -> component mean; `samples_by_condition`
/// holds the generated samples per commanded condition. Ties in the nearest
/// mean go to the first component in id order.
pub fn condition_fidelity(
    samples_by_condition: &BTreeMap<String, Tensor>,
    components: &BTreeMap<String, Vec<f64>>,
) -> Result<FidelityReport> {
    let means: Vec<(&String, &Vec<f64>)> = components.iter().collect();
    let mut per_condition = BTreeMap::new();
    let mut correct_total = 0usize;
    let mut count_total = 0usize;
    for (cond, samples) in samples_by_condition {
        if !components.contains_key(cond) {
            return Err(Error::UnknownCondition(cond.clone()));
        }
        let mut correct = 0usize;
        for i in 0..samples.rows() {
            let row = samples.row_slice(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, (_, mean)) in means.iter().enumerate() {
                let d = distance(row, mean);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            if means[best].0 == cond {
                correct += 1;
            }
        }
        per_condition.insert(cond.clone(), correct as f64 / samples.rows() as f64);
        correct_total += correct;
        count_total += samples.rows();
    }
    if count_total == 0 {
        return Err(Error::InvalidArg("condition_fidelity: no samples".into()));
    }
    Ok(FidelityReport {
        per_condition,
        overall: correct_total as f64 / count_total as f64,
        energy_distance: None,
        curvature: None,
    })
}

/// Excess path length of recorded trajectories: mean over trajectories of
/// `path_length / chord_length - 1`, zero for straight paths.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurvatureStat {
    pub mean: f64,
    /// Trajectories skipped because their endpoint chord was degenerate.
    pub skipped: usize,
    pub used: usize,
}

pub fn trajectory_curvature(run: &SampleRun) -> Result<CurvatureStat> {
    let Some(states) = &run.trajectory else {
        return Err(Error::InvalidArg(
            "trajectory_curvature needs a run recorded with intermediate states".into(),
        ));
    };
    if states.len() < 3 {
        return Err(Error::InvalidArg(format!(
            "trajectory_curvature needs at least 3 recorded states, got {}",
            states.len()
        )));
    }
    let n = states[0].rows();
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for i in 0..n {
        let mut path = 0.0;
        for w in states.windows(2) {
            path += distance(w[0].row_slice(i), w[1].row_slice(i));
        }
        let chord = distance(states[0].row_slice(i), states[states.len() - 1].row_slice(i));
        if chord < 1e-12 {
            skipped += 1;
            continue;
        }
        sum += path / chord - 1.0;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArg(
            "trajectory_curvature: all trajectories had degenerate chords".into(),
        ));
    }
    Ok(CurvatureStat {
        mean: sum / used as f64,
        skipped,
        used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn identical_multisets_have_zero_energy_distance() {
        let mut rng = Rng::seed(1);
        let a = rng.normal_tensor(&[50, 3]);
        let d = energy_distance(&a, &a.clone()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn two_point_masses_score_twice_their_distance() {
        let a = Tensor::from_rows(&vec![vec![0.0, 0.0]; 4]).unwrap();
        let b = Tensor::from_rows(&vec![vec![3.0, 4.0]; 6]).unwrap();
        let d = energy_distance(&a, &b).unwrap();
        assert!((d - 10.0).abs() < 1e-12); // 2 * 5 - 0 - 0
    }

    #[test]
    fn matched_gaussians_score_near_zero() {
        let mut rng = Rng::seed(2);
        let a = rng.normal_tensor(&[10_000, 1]);
        let b = rng.normal_tensor(&[10_000, 1]);
        let d = energy_distance(&a, &b).unwrap();
        assert!(d.abs() < 0.01, "energy distance {d}");
    }

    #[test]
    fn energy_distance_rejects_empty_and_mismatched() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(energy_distance(&a, &b).is_err());
    }

    fn components() -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([
            ("c0".to_string(), vec![-1.0, -1.0]),
            ("c1".to_string(), vec![1.0, 1.0]),
        ])
    }

    #[test]
    fn samples_at_commanded_means_score_one() {
        let samples = BTreeMap::from([
            ("c0".to_string(), Tensor::from_rows(&vec![vec![-1.0, -1.0]; 5]).unwrap()),
            ("c1".to_string(), Tensor::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap()),
        ]);
        let rep = condition_fidelity(&samples, &components()).unwrap();
        assert_eq!(rep.overall, 1.0);
        assert!(rep.per_condition.values().all(|&v| v == 1.0));
    }

    #[test]
    fn samples_at_wrong_means_score_zero() {
        let samples = BTreeMap::from([(
            "c0".to_string(),
            Tensor::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap(),
        )]);
        let rep = condition_fidelity(&samples, &components()).unwrap();
        assert_eq!(rep.per_condition["c0"], 0.0);
    }

    #[test]
    fn unknown_condition_rejected() {
        let samples = BTreeMap::from([(
            "zz".to_string(),
            Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap(),
        )]);
        assert!(matches!(
            condition_fidelity(&samples, &components()),
            Err(Error::UnknownCondition(_))
        ));
    }

    fn run_from_states(states: Vec<Tensor>) -> SampleRun {
        SampleRun {
            steps: states.len() - 1,
            grid: (0..states.len())
                .map(|i| 1.0 - i as f64 / (states.len() - 1) as f64)
                .collect(),
            samples: states.last().unwrap().clone(),
            trajectory: Some(states),
        }
    }

    #[test]
    fn straight_trajectory_has_zero_curvature() {
        let states = vec![
            Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap(),
            Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        ];
        let c = trajectory_curvature(&run_from_states(states)).unwrap();
        assert!(c.mean.abs() < 1e-12);
        assert_eq!(c.used, 1);
    }

    #[test]
    fn right_angle_path_curvature() {
        // Legs 1 and 1, chord sqrt(2): curvature 2/sqrt(2) - 1.
        let states = vec![
            Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        ];
        let c = trajectory_curvature(&run_from_states(states)).unwrap();
        let expect = 2.0 / 2.0_f64.sqrt() - 1.0;
        assert!((c.mean - expect).abs() < 1e-12, "{} vs {expect}", c.mean);
    }

    #[test]
    fn zero_chord_trajectories_are_skipped_and_counted() {
        let states = vec![
            Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(),
        ];
        let c = trajectory_curvature(&run_from_states(states)).unwrap();
        assert_eq!(c.skipped, 1);
        assert_eq!(c.used, 1);
    }

    #[test]
    fn too_few_states_rejected() {
        let states = vec![
            Tensor::from_rows(&[vec![0.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0]]).unwrap(),
        ];
        assert!(trajectory_curvature(&run_from_states(states)).is_err());
    }
}
