//! Random search over dotted config paths with median-rule pruning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{apply_override, Distribution, PipelineConfig, SearchSpace};
use crate::trainer::{train_datasets, Dataset, EpochReport, TrainObserver};

pub type Assignment = BTreeMap<String, Value>;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for one trial; depends only on the global seed and trial id.
    pub fn for_trial(global_seed: u64, trial_id: u64) -> Self {
        Self::new(global_seed ^ trial_id.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA).rotate_left(17))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

pub fn sample_distribution(dist: &Distribution, rng: &mut SplitMix64) -> Value {
    let u = rng.next_f64();
    match dist {
        Distribution::Uniform { lo, hi } => Value::from((lo + u * (hi - lo)).clamp(*lo, *hi)),
        Distribution::LogUniform { lo, hi } => {
            let (a, b) = (lo.ln(), hi.ln());
            Value::from((a + u * (b - a)).exp().clamp(*lo, *hi))
        }
        Distribution::Choice(values) => {
            let i = ((u * values.len() as f64) as usize).min(values.len() - 1);
            values[i].clone()
        }
        Distribution::RandInt { lo, hi } => {
            let span = (*hi as i128 - *lo as i128) as f64;
            let k = ((u * span) as i128).min(*hi as i128 - *lo as i128 - 1);
            Value::from((*lo as i128 + k) as i64)
        }
    }
}

/// Draws one value per path, in sorted path order, from the trial's stream.
pub fn sample(space: &SearchSpace, global_seed: u64, trial_id: u64) -> Assignment {
    let mut rng = SplitMix64::for_trial(global_seed, trial_id);
    space
        .entries
        .iter()
        .map(|(path, dist)| (path.clone(), sample_distribution(dist, &mut rng)))
        .collect()
}

fn running_mean(curve: &[f64], t: usize) -> f64 {
    let n = t.min(curve.len());
    curve[..n].iter().sum::<f64>() / n as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median stopping rule for a higher-is-better metric: with at least
/// `min_completed` finished trials, stop iff the current trial's best value
/// so far is strictly below the median of the finished trials' running
/// means over the same number of epochs.
pub fn median_stop_decision(current: &[f64], completed: &[Vec<f64>], min_completed: usize) -> bool {
    let usable: Vec<&Vec<f64>> = completed.iter().filter(|c| !c.is_empty()).collect();
    if current.is_empty() || usable.len() < min_completed {
        return false;
    }
    let t = current.len();
    let best = current.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut means: Vec<f64> = usable.iter().map(|c| running_mean(c, t)).collect();
    best < median(&mut means)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Completed,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u64,
    pub assignment: Assignment,
    pub curve: Vec<f64>,
    pub status: TrialStatus,
    /// Last value for completed trials, best value for pruned ones.
    pub final_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Something that can be trained epoch by epoch under an assignment.
pub trait Objective {
    /// Runs up to `epochs` epochs, calling `on_epoch` with each epoch's
    /// metric; stops early when it returns `false`. Returns the metrics seen.
    fn run(
        &mut self,
        assignment: &Assignment,
        epochs: usize,
        on_epoch: &mut dyn FnMut(f64) -> bool,
    ) -> Result<Vec<f64>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub max_trials: usize,
    pub epochs: usize,
    pub seed: u64,
    pub median_stopping: bool,
    pub min_completed: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_trials: 16,
            epochs: 10,
            seed: 42,
            median_stopping: true,
            min_completed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Option<Trial>,
    pub trials: Vec<Trial>,
    pub total_epochs: usize,
}

/// Sequential random search. Failed trials are recorded and skipped.
pub fn run_search(objective: &mut dyn Objective, space: &SearchSpace, opts: &SearchOptions) -> SearchResult {
    let mut trials: Vec<Trial> = Vec::with_capacity(opts.max_trials);
    let mut completed: Vec<Vec<f64>> = Vec::new();
    let mut total_epochs = 0;
    for trial_id in 0..opts.max_trials as u64 {
        let assignment = sample(space, opts.seed, trial_id);
        let mut seen: Vec<f64> = Vec::new();
        let mut pruned = false;
        let result = objective.run(&assignment, opts.epochs, &mut |metric| {
            seen.push(metric);
            if opts.median_stopping && seen.len() < opts.epochs && median_stop_decision(&seen, &completed, opts.min_completed) {
                pruned = true;
                return false;
            }
            true
        });
        let trial = match result {
            Ok(curve) => {
                total_epochs += curve.len();
                let (status, final_metric) = if pruned {
                    (TrialStatus::Pruned, curve.iter().copied().reduce(f64::max))
                } else {
                    (TrialStatus::Completed, curve.last().copied())
                };
                if status == TrialStatus::Completed {
                    completed.push(curve.clone());
                }
                Trial {
                    trial_id,
                    assignment,
                    curve,
                    status,
                    final_metric,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("trial {trial_id} failed: {e}");
                total_epochs += seen.len();
                Trial {
                    trial_id,
                    assignment,
                    curve: seen,
                    status: TrialStatus::Failed,
                    final_metric: None,
                    error: Some(e),
                }
            }
        };
        log::info!("trial {trial_id}: {:?} metric {:?}", trial.status, trial.final_metric);
        trials.push(trial);
    }
    let best = trials
        .iter()
        .filter(|t| t.final_metric.is_some_and(f64::is_finite))
        .fold(None::<&Trial>, |best, t| match best {
            Some(b) if b.final_metric >= t.final_metric => Some(b),
            _ => Some(t),
        })
        .cloned();
    SearchResult {
        best,
        trials,
        total_epochs,
    }
}

/// Trains the pipeline model per trial; the metric is eval AUC, or negated
/// logloss when AUC is undefined.
pub struct TrainerObjective<'a> {
    pub base: PipelineConfig,
    pub train: &'a Dataset,
    pub eval: &'a Dataset,
}

struct EpochHook<'f> {
    on_epoch: &'f mut dyn FnMut(f64) -> bool,
    curve: Vec<f64>,
}

impl TrainObserver for EpochHook<'_> {
    fn on_epoch(&mut self, r: &EpochReport) -> bool {
        let Some(metric) = r.auc.or(r.logloss.map(|l| -l)) else {
            return true;
        };
        self.curve.push(metric);
        (self.on_epoch)(metric)
    }
}

impl Objective for TrainerObjective<'_> {
    fn run(
        &mut self,
        assignment: &Assignment,
        epochs: usize,
        on_epoch: &mut dyn FnMut(f64) -> bool,
    ) -> Result<Vec<f64>, String> {
        let mut cfg = self.base.clone();
        for (path, value) in assignment {
            cfg = apply_override(&cfg, path, value).map_err(|e| e.to_string())?;
        }
        cfg.train_config.num_epochs = epochs;
        cfg.eval_config.eval_interval = 1;
        let mut hook = EpochHook {
            on_epoch,
            curve: Vec::new(),
        };
        train_datasets(&cfg, self.train, self.eval, None, &mut hook).map_err(|e| e.to_string())?;
        Ok(hook.curve)
    }
}

/// Synthetic objective over one log-scaled parameter: the converged metric
/// is `-(ln λ - ln λ*)²`, approached from below as `-d² - c/e` at epoch `e`.
#[derive(Debug, Clone)]
pub struct ToyObjective {
    pub path: String,
    pub optimum: f64,
    pub c: f64,
}

impl ToyObjective {
    pub fn converged(&self, lambda: f64) -> f64 {
        let d = lambda.ln() - self.optimum.ln();
        -d * d
    }
}

impl Objective for ToyObjective {
    fn run(
        &mut self,
        assignment: &Assignment,
        epochs: usize,
        on_epoch: &mut dyn FnMut(f64) -> bool,
    ) -> Result<Vec<f64>, String> {
        let lambda = assignment
            .get(&self.path)
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("assignment lacks numeric `{}`", self.path))?;
        let mut curve = Vec::with_capacity(epochs);
        for e in 1..=epochs {
            let metric = self.converged(lambda) - self.c / e as f64;
            curve.push(metric);
            if !on_epoch(metric) {
                break;
            }
        }
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_search_space;

    fn toy_space() -> SearchSpace {
        parse_search_space(r#"{"model_config.embedding_regularization": {"_type":"loguniform","_value":[1e-6,1e-4]}}"#)
            .unwrap()
    }

    fn toy() -> ToyObjective {
        ToyObjective {
            path: "model_config.embedding_regularization".into(),
            optimum: 1e-5,
            c: 1.0,
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // Published reference outputs for seed 1234567.
        let mut r = SplitMix64::new(1234567);
        let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(got, vec![6457827717110365317, 3203168211198807973, 9817491932198370423]);
    }

    #[test]
    fn uniform_snippet_bounds() {
        let space =
            parse_search_space(r#"{"model_config.embedding_regularization": {"_type":"uniform","_value":[1e-6,1e-4]}}"#)
                .unwrap();
        for t in 0..1000 {
            let v = sample(&space, 7, t)["model_config.embedding_regularization"].as_f64().unwrap();
            assert!((1e-6..=1e-4).contains(&v));
        }
    }

    #[test]
    fn singleton_choice() {
        let space = parse_search_space(r#"{"p": {"_type":"choice","_value":[8]}}"#).unwrap();
        for t in 0..100 {
            assert_eq!(sample(&space, 1, t)["p"], Value::from(8));
        }
    }

    #[test]
    fn every_kind_stays_in_bounds() {
        let mut rng = SplitMix64::new(99);
        let u = Distribution::Uniform { lo: -2.0, hi: 3.0 };
        let l = Distribution::LogUniform { lo: 1e-3, hi: 10.0 };
        let c = Distribution::Choice(vec![Value::from(1), Value::from("x"), Value::from(2.5)]);
        let r = Distribution::RandInt { lo: -3, hi: 4 };
        let mut seen_int = [false; 7];
        let mut seen_choice = [0usize; 3];
        for _ in 0..100_000 {
            let x = sample_distribution(&u, &mut rng).as_f64().unwrap();
            assert!((-2.0..=3.0).contains(&x));
            let x = sample_distribution(&l, &mut rng).as_f64().unwrap();
            assert!((1e-3..=10.0).contains(&x));
            let x = sample_distribution(&c, &mut rng);
            let i = [Value::from(1), Value::from("x"), Value::from(2.5)].iter().position(|v| *v == x).unwrap();
            seen_choice[i] += 1;
            let x = sample_distribution(&r, &mut rng).as_i64().unwrap();
            assert!((-3..4).contains(&x));
            seen_int[(x + 3) as usize] = true;
        }
        assert!(seen_int.iter().all(|&s| s));
        assert!(seen_choice.iter().all(|&n| n > 30_000));
    }

    #[test]
    fn loguniform_is_uniform_in_log_space() {
        let space = toy_space();
        let (a, b) = (1e-6f64.ln(), 1e-4f64.ln());
        let mut xs: Vec<f64> = (0..10_000)
            .map(|t| {
                let v = sample(&space, 3, t)["model_config.embedding_regularization"].as_f64().unwrap();
                (v.ln() - a) / (b - a)
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn median_rule_examples() {
        assert!(!median_stop_decision(&[0.1], &[vec![0.5], vec![0.6]], 3));
        // Running means at t=3 of 0.70, 0.72, 0.74.
        let completed = vec![vec![0.70, 0.70, 0.70, 0.9], vec![0.72, 0.72, 0.72, 0.9], vec![0.74, 0.74, 0.74, 0.9]];
        assert!(median_stop_decision(&[0.60, 0.71, 0.65], &completed, 3));
        // Tie with the median does not stop; single epoch keeps the means exact.
        let firsts: Vec<Vec<f64>> = [0.70, 0.72, 0.74].iter().map(|&v| vec![v, 0.0]).collect();
        assert!(!median_stop_decision(&[0.72], &firsts, 3));
        assert!(median_stop_decision(&[0.7199], &firsts, 3));
        // Even count: mean of the middle two.
        let four = vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]];
        assert!(median_stop_decision(&[0.24], &four, 3));
        assert!(!median_stop_decision(&[0.25], &four, 3));
    }

    #[test]
    fn single_trial_is_best() {
        let opts = SearchOptions {
            max_trials: 1,
            ..Default::default()
        };
        let r = run_search(&mut toy(), &toy_space(), &opts);
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best.as_ref(), r.trials.first());
        assert_eq!(r.trials[0].status, TrialStatus::Completed);
        assert_eq!(r.total_epochs, 10);
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let opts = SearchOptions::default();
        let a = run_search(&mut toy(), &toy_space(), &opts);
        let b = run_search(&mut toy(), &toy_space(), &opts);
        assert_eq!(a, b);
        // Assignments do not depend on earlier outcomes.
        let short = run_search(&mut toy(), &toy_space(), &SearchOptions { max_trials: 5, median_stopping: false, ..opts });
        for (x, y) in short.trials.iter().zip(&a.trials) {
            assert_eq!(x.assignment, y.assignment);
        }
    }

    #[test]
    fn pruned_curves_are_shorter() {
        let r = run_search(&mut toy(), &toy_space(), &SearchOptions { max_trials: 30, ..Default::default() });
        assert!(r.trials.iter().any(|t| t.status == TrialStatus::Pruned));
        for t in &r.trials {
            match t.status {
                TrialStatus::Pruned => assert!(t.curve.len() < 10),
                TrialStatus::Completed => assert_eq!(t.curve.len(), 10),
                _ => unreachable!(),
            }
        }
    }

    struct Failing;

    impl Objective for Failing {
        fn run(&mut self, a: &Assignment, _: usize, _: &mut dyn FnMut(f64) -> bool) -> Result<Vec<f64>, String> {
            if a["p"].as_f64().unwrap() < 0.5 {
                Err("diverged".into())
            } else {
                Ok(vec![a["p"].as_f64().unwrap()])
            }
        }
    }

    #[test]
    fn failed_trials_do_not_stop_search() {
        let space = parse_search_space(r#"{"p": {"_type":"uniform","_value":[0,1]}}"#).unwrap();
        let r = run_search(&mut Failing, &space, &SearchOptions { max_trials: 12, epochs: 1, ..Default::default() });
        assert_eq!(r.trials.len(), 12);
        assert!(r.trials.iter().any(|t| t.status == TrialStatus::Failed));
        assert!(r.best.unwrap().final_metric.unwrap() >= 0.5);
    }
}
