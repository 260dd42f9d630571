//! Repeated stratified cross-validation.

use rayon::prelude::*;

use crate::bag::PrototypeBag;
use crate::error::{Error, Result};
use crate::model::{Mixer, MixerConfig};
use crate::seed;
use crate::train::config::TrainConfig;
use crate::train::fit::{evaluate, fit, samples, EpochLog};
use crate::train::folds::{split, stratified_kfold};
use crate::train::metrics::MetricsReport;

/// A model trained on one split, with its loss curve and held-out metrics.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub model: Mixer<f64>,
    pub losses: Vec<EpochLog>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub metrics: MetricsReport,
    pub losses: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation (zero for a single run).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossvalReport {
    pub outcomes: Vec<FoldOutcome>,
    pub macro_f1: Summary,
    pub auroc: Summary,
}

impl CrossvalReport {
    pub fn seconds_per_epoch(&self) -> f64 {
        let (sum, n) = self
            .outcomes
            .iter()
            .flat_map(|o| &o.losses)
            .fold((0.0, 0usize), |(s, n), e| (s + e.seconds, n + 1));
        sum / n.max(1) as f64
    }

    /// `repeat,fold,macro_f1,auroc,accuracy,absent_classes`
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("repeat,fold,macro_f1,auroc,accuracy,absent_classes\n");
        for o in &self.outcomes {
            out.push_str(&metrics_row(
                &format!("{},{}", o.repeat, o.fold),
                &o.metrics,
            ));
        }
        out
    }

    /// `repeat,fold,epoch,class_loss,domain_loss,lambda`
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("repeat,fold,epoch,class_loss,domain_loss,lambda\n");
        for o in &self.outcomes {
            for e in &o.losses {
                out.push_str(&format!(
                    "{},{},{},{:.17e},{:.17e},{:.17e}\n",
                    o.repeat, o.fold, e.epoch, e.class_loss, e.domain_loss, e.lambda
                ));
            }
        }
        out
    }
}

pub(crate) fn metrics_row(prefix: &str, m: &MetricsReport) -> String {
    let absent: Vec<String> = m.absent_classes.iter().map(|c| c.to_string()).collect();
    format!(
        "{prefix},{:.17e},{:.17e},{:.17e},{}\n",
        m.macro_f1,
        m.auroc,
        m.accuracy,
        absent.join(";")
    )
}

/// Checks that every bag matches the prototype table shape of `config`.
pub fn check_bags(bags: &[&PrototypeBag], config: &MixerConfig) -> Result<()> {
    for b in bags {
        if b.prototypes.shape() != (config.tokens, config.channels) {
            return Err(Error::Dimension {
                op: "training data",
                lhs: format!("slide `{}` is {}x{}", b.slide_id, b.k(), b.dim()),
                rhs: format!(
                    "model expects k x N = {}x{}",
                    config.tokens, config.channels
                ),
            });
        }
        if b.class_label >= config.num_classes {
            return Err(Error::Data(format!(
                "slide `{}` has class {} but the model has {} classes",
                b.slide_id, b.class_label, config.num_classes
            )));
        }
    }
    Ok(())
}

/// Fresh model from `init_seed`, trained on `train`, evaluated on `test`.
/// The domain branch is sized by the training bags' domain targets.
pub fn run_fold(
    train: &[&PrototypeBag],
    test: &[&PrototypeBag],
    mixer: &MixerConfig,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<FoldRun> {
    check_bags(train, mixer)?;
    check_bags(test, mixer)?;
    let (items, num_domains) = samples(train, config.domain_source);
    let arch = MixerConfig {
        num_domains,
        dropout_rate: config.dropout_rate,
        ..mixer.clone()
    };
    let mut model = Mixer::new(arch, init_seed)?;
    let losses = fit(&mut model, &items, config, seed::derive(init_seed, &[1]))?;
    let metrics = evaluate(&model, test)?;
    Ok(FoldRun {
        model,
        losses,
        metrics,
    })
}

/// For each repeat `r` (folds from seed `(seed, r)`) and fold `f`, trains a
/// model initialized from seed `(seed, r, f)` on the other folds and scores
/// the held-out fold. `jobs` bounds the worker threads; `None` uses rayon's
/// default pool.
pub fn run_crossval(
    bags: &[PrototypeBag],
    mixer: &MixerConfig,
    config: &TrainConfig,
    jobs: Option<usize>,
) -> Result<CrossvalReport> {
    config.validate()?;
    mixer.validate()?;
    let labels: Vec<usize> = bags.iter().map(|b| b.class_label).collect();
    let mut tasks = Vec::new();
    for r in 0..config.repeats {
        let assignment = stratified_kfold(
            &labels,
            config.folds,
            seed::derive(config.seed, &[r as u64]),
        )?;
        let limit = config.fold_limit.unwrap_or(config.folds).min(config.folds);
        for f in 0..limit {
            let (train, test) = split(&assignment, f);
            tasks.push((r, f, train, test));
        }
    }
    let run =
        |(r, f, train, test): &(usize, usize, Vec<usize>, Vec<usize>)| -> Result<FoldOutcome> {
            let train_bags: Vec<&PrototypeBag> = train.iter().map(|&i| &bags[i]).collect();
            let test_bags: Vec<&PrototypeBag> = test.iter().map(|&i| &bags[i]).collect();
            let init = seed::derive(config.seed, &[*r as u64, *f as u64]);
            let out = run_fold(&train_bags, &test_bags, mixer, config, init)?;
            Ok(FoldOutcome {
                repeat: *r,
                fold: *f,
                train_ids: train_bags.iter().map(|b| b.slide_id.clone()).collect(),
                test_ids: test_bags.iter().map(|b| b.slide_id.clone()).collect(),
                metrics: out.metrics,
                losses: out.losses,
            })
        };
    let outcomes: Vec<FoldOutcome> = match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| tasks.par_iter().map(run).collect::<Result<_>>())?
        }
        None => tasks.par_iter().map(run).collect::<Result<_>>()?,
    };
    let f1: Vec<f64> = outcomes.iter().map(|o| o.metrics.macro_f1).collect();
    let auc: Vec<f64> = outcomes.iter().map(|o| o.metrics.auroc).collect();
    Ok(CrossvalReport {
        macro_f1: Summary::of(&f1),
        auroc: Summary::of(&auc),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn bags(n: usize) -> Vec<PrototypeBag> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                PrototypeBag {
                    slide_id: format!("s{i}"),
                    class_label: label,
                    domain_id: i % 3,
                    prototypes: Matrix::from_fn(2, 4, |r, c| {
                        sign * (1.0 + 0.2 * c as f64) + 0.03 * (r * i) as f64
                    }),
                    cluster_sizes: vec![1, 1],
                }
            })
            .collect()
    }

    fn mixer() -> MixerConfig {
        MixerConfig {
            tokens: 2,
            channels: 4,
            token_hidden: 3,
            channel_hidden: 6,
            blocks: 1,
            num_classes: 2,
            domain_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn bookkeeping_and_disjointness() {
        let data = bags(12);
        let cfg = TrainConfig {
            epochs: 3,
            folds: 3,
            repeats: 2,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let r = run_crossval(&data, &mixer(), &cfg, Some(2)).unwrap();
        assert_eq!(r.outcomes.len(), 6);
        for o in &r.outcomes {
            assert!(o.test_ids.iter().all(|t| !o.train_ids.contains(t)));
            assert_eq!(o.train_ids.len() + o.test_ids.len(), 12);
            assert_eq!(o.losses.len(), 3);
        }
        assert_eq!(r.metrics_csv().lines().count(), 7);
        assert_eq!(r.losses_csv().lines().count(), 1 + 6 * 3);
    }

    #[test]
    fn single_run_has_zero_std() {
        let data = bags(12);
        let cfg = TrainConfig {
            epochs: 2,
            folds: 3,
            fold_limit: Some(1),
            ..Default::default()
        };
        let r = run_crossval(&data, &mixer(), &cfg, None).unwrap();
        assert_eq!(r.outcomes.len(), 1);
        assert_eq!(r.macro_f1.std, 0.0);
        assert_eq!(r.auroc.std, 0.0);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let data = bags(12);
        let cfg = TrainConfig {
            epochs: 2,
            folds: 3,
            ..Default::default()
        };
        let a = run_crossval(&data, &mixer(), &cfg, Some(1)).unwrap();
        let b = run_crossval(&data, &mixer(), &cfg, Some(3)).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.losses_csv(), b.losses_csv());
    }

    #[test]
    fn shape_mismatch_names_slide() {
        let data = bags(12);
        let wrong = MixerConfig {
            tokens: 3,
            ..mixer()
        };
        let cfg = TrainConfig {
            epochs: 1,
            folds: 3,
            ..Default::default()
        };
        let err = run_crossval(&data, &wrong, &cfg, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("slide `s") && err.contains("3x4"), "{err}");
    }
}
