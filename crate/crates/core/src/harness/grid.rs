//! Validation-set hyperparameter search over the configured grid.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::HarnessError;
use crate::corpus::SplitDataset;
use crate::models::{build_model, train, Model, ModelKind, TrainConfig, TrainInputs, TrainOutcome};

/// Grid axes; axes a model kind does not use are collapsed to one
/// canonical value so no duplicate trials run.
#[derive(Debug, Clone)]
pub struct GridAxes {
    pub latent_dims: Vec<usize>,
    pub l2_weights: Vec<f64>,
    pub dropouts: Vec<f64>,
}

impl GridAxes {
    pub fn single(latent: usize, l2: f64, dropout: f64) -> Self {
        Self {
            latent_dims: vec![latent],
            l2_weights: vec![l2],
            dropouts: vec![dropout],
        }
    }

    /// The grid actually run for a given model kind.
    fn for_kind(&self, kind: ModelKind) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let latent = if kind.uses_latent_dim() {
            self.latent_dims.clone()
        } else {
            vec![self.latent_dims[0]]
        };
        // the bias model has no regularized parameters, so the L2 axis
        // is inert for it
        let l2 = if kind == ModelKind::Bias {
            vec![self.l2_weights[0]]
        } else {
            self.l2_weights.clone()
        };
        let dropout = if kind.uses_dropout() {
            self.dropouts.clone()
        } else {
            vec![0.0]
        };
        (latent, l2, dropout)
    }
}

/// One grid trial's outcome row.
#[derive(Debug, Clone)]
pub struct TrialRow {
    pub config: TrainConfig,
    pub config_id: String,
    pub val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

pub struct GridOutcome {
    pub model: Box<dyn Model>,
    pub outcome: TrainOutcome,
    pub best_config: TrainConfig,
    pub trials: Vec<TrialRow>,
}

/// Trains every grid point, selects the minimum validation MSE (ties
/// break toward the smaller latent dimension, then smaller L2, then
/// smaller dropout), and re-trains the winner deterministically so its
/// parameters are returned. Trials run on up to `max_jobs` threads.
pub fn grid_search(
    kind: ModelKind,
    split: &SplitDataset,
    inputs: &TrainInputs,
    axes: &GridAxes,
    base: &TrainConfig,
    max_jobs: usize,
) -> Result<GridOutcome, HarnessError> {
    let (latents, l2s, dropouts) = axes.for_kind(kind);
    let mut configs = Vec::new();
    for &latent in &latents {
        for &l2 in &l2s {
            for &dropout in &dropouts {
                configs.push(TrainConfig {
                    latent_dim: latent,
                    l2,
                    dropout,
                    ..base.clone()
                });
            }
        }
    }

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..configs.len()).collect());
    let results: Mutex<Vec<Option<TrialRow>>> = Mutex::new(vec![None; configs.len()]);
    let workers = max_jobs.max(1).min(configs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some(idx) = job else { break };
                let config = configs[idx].clone();
                let config_id = config.config_id();
                let row = match run_trial(kind, split, inputs, &config) {
                    Ok(outcome) => TrialRow {
                        config,
                        config_id,
                        val_mse: Some(outcome.best_val_mse),
                        best_epoch: Some(outcome.best_epoch),
                        error: None,
                    },
                    Err(e) => TrialRow {
                        config,
                        config_id,
                        val_mse: None,
                        best_epoch: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().unwrap()[idx] = Some(row);
            });
        }
    });
    let trials: Vec<TrialRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every trial filled"))
        .collect();

    let Some(winner) = select_winner(&trials) else {
        return Err(HarnessError::AllTrialsFailed(
            trials
                .iter()
                .map(|t| format!("{}: {}", t.config_id, t.error.as_deref().unwrap_or("?")))
                .collect(),
        ));
    };

    // deterministic re-train of the winning configuration
    let mut model = build_model(kind, split, inputs, winner.config.clone())?;
    let outcome = train(model.as_mut(), split)?;
    Ok(GridOutcome {
        model,
        outcome,
        best_config: winner.config,
        trials,
    })
}

fn run_trial(
    kind: ModelKind,
    split: &SplitDataset,
    inputs: &TrainInputs,
    config: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    let mut model = build_model(kind, split, inputs, config.clone())?;
    Ok(train(model.as_mut(), split)?)
}

/// Minimum validation MSE; exact ties go to the smaller latent
/// dimension, then smaller L2, then smaller dropout.
fn select_winner(trials: &[TrialRow]) -> Option<TrialRow> {
    trials
        .iter()
        .filter(|t| t.val_mse.is_some())
        .min_by(|a, b| {
            let key = |t: &TrialRow| {
                (
                    t.val_mse.unwrap(),
                    t.config.latent_dim as f64,
                    t.config.l2,
                    t.config.dropout,
                )
            };
            key(a).partial_cmp(&key(b)).unwrap()
        })
        .cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split as make_split;
    use crate::synth::{planted_factor, PlantedConfig};
    use std::sync::Arc;

    fn tiny_base(seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 6,
            patience: 2,
            batch_size: 128,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_grid_point_is_selected() {
        let data = planted_factor(&PlantedConfig {
            n_users: 60,
            n_items: 20,
            n_interactions: 600,
            cold_items: 0,
            ..Default::default()
        });
        let s = make_split(Arc::new(data), 5).unwrap();
        let out = grid_search(
            ModelKind::Bias,
            &s,
            &TrainInputs::default(),
            &GridAxes::single(4, 1e-5, 0.2),
            &tiny_base(3),
            1,
        )
        .unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best_config.latent_dim, 4);
    }

    #[test]
    fn irrelevant_axes_collapse() {
        let data = planted_factor(&PlantedConfig {
            n_users: 60,
            n_items: 20,
            n_interactions: 600,
            cold_items: 0,
            ..Default::default()
        });
        let s = make_split(Arc::new(data), 5).unwrap();
        let axes = GridAxes {
            latent_dims: vec![2, 4],
            l2_weights: vec![1e-5, 1e-6],
            dropouts: vec![0.2, 0.4],
        };
        // bias: all axes inert → 1 trial
        let bias = grid_search(
            ModelKind::Bias,
            &s,
            &TrainInputs::default(),
            &axes,
            &tiny_base(3),
            2,
        )
        .unwrap();
        assert_eq!(bias.trials.len(), 1);
        // mf: dropout inert → 4 trials
        let mf = grid_search(
            ModelKind::Mf,
            &s,
            &TrainInputs::default(),
            &axes,
            &tiny_base(3),
            2,
        )
        .unwrap();
        assert_eq!(mf.trials.len(), 4);
    }

    #[test]
    fn ties_break_toward_the_smaller_configuration() {
        let trial = |latent: usize, l2: f64, dropout: f64, val: f64| {
            let config = TrainConfig {
                latent_dim: latent,
                l2,
                dropout,
                ..Default::default()
            };
            TrialRow {
                config_id: config.config_id(),
                config,
                val_mse: Some(val),
                best_epoch: Some(0),
                error: None,
            }
        };
        // exact tie on val MSE → smaller latent dim wins
        let w = select_winner(&[trial(8, 1e-5, 0.2, 0.5), trial(4, 1e-5, 0.2, 0.5)]).unwrap();
        assert_eq!(w.config.latent_dim, 4);
        // tie on val and latent → smaller l2 wins
        let w = select_winner(&[trial(4, 1e-5, 0.2, 0.5), trial(4, 1e-7, 0.2, 0.5)]).unwrap();
        assert_eq!(w.config.l2, 1e-7);
        // tie through l2 → smaller dropout wins
        let w = select_winner(&[trial(4, 1e-5, 0.4, 0.5), trial(4, 1e-5, 0.2, 0.5)]).unwrap();
        assert_eq!(w.config.dropout, 0.2);
        // a strictly better val MSE beats every tie rule
        let w = select_winner(&[trial(1, 1e-7, 0.0, 0.6), trial(50, 1e-4, 0.8, 0.4)]).unwrap();
        assert_eq!(w.config.latent_dim, 50);
        // failed trials are never selected
        let mut failed = trial(1, 1e-7, 0.0, f64::NAN);
        failed.val_mse = None;
        failed.error = Some("diverged".into());
        assert!(select_winner(&[failed]).is_none());
    }

    #[test]
    fn planted_dimension_is_recovered_within_one_doubling() {
        let data = planted_factor(&PlantedConfig {
            n_users: 300,
            n_items: 60,
            n_interactions: 6_000,
            true_dim: 4,
            cold_items: 0,
            ..Default::default()
        });
        let s = make_split(Arc::new(data), 11).unwrap();
        let axes = GridAxes {
            latent_dims: vec![1, 4, 8],
            l2_weights: vec![1e-6],
            dropouts: vec![0.0],
        };
        let base = TrainConfig {
            max_epochs: 25,
            patience: 4,
            batch_size: 256,
            learning_rate: 5e-3,
            seed: 13,
            ..Default::default()
        };
        let out = grid_search(ModelKind::Mf, &s, &TrainInputs::default(), &axes, &base, 3).unwrap();
        assert!(
            out.best_config.latent_dim == 4 || out.best_config.latent_dim == 8,
            "selected {}",
            out.best_config.latent_dim
        );
    }
}
