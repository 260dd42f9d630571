//! Per-bag training with the adversarial branch, and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::bag::PrototypeBag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Mixer, Mode};
use crate::ops::{softmax, softmax_cross_entropy};
use crate::scalar::Scalar;
use crate::seed;
use crate::train::config::{DomainSource, TrainConfig};
use crate::train::metrics::{classification_report, MetricsReport};
use crate::train::optim::{Optimizer, OptimizerSettings};

/// One training bag as the loop sees it. `domain: None` leaves the
/// adversarial branch without a target for this bag.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T: Scalar = f64> {
    pub prototypes: &'a Matrix<T>,
    pub class_label: usize,
    pub domain: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub class_loss: f64,
    pub domain_loss: f64,
    pub lambda: f64,
    pub seconds: f64,
}

/// Domain targets for `bags` and the number of domains the branch predicts.
pub fn domain_targets<T: Scalar>(
    bags: &[&PrototypeBag<T>],
    source: DomainSource,
) -> (Vec<usize>, usize) {
    match source {
        DomainSource::Slide => ((0..bags.len()).collect(), bags.len().max(1)),
        DomainSource::Manifest => {
            let ids: Vec<usize> = bags.iter().map(|b| b.domain_id).collect();
            let n = ids.iter().max().map_or(1, |&m| m + 1);
            (ids, n)
        }
    }
}

/// Samples for training on `bags` with targets from `source`.
pub fn samples<'a, T: Scalar>(
    bags: &[&'a PrototypeBag<T>],
    source: DomainSource,
) -> (Vec<Sample<'a, T>>, usize) {
    let (domains, n) = domain_targets(bags, source);
    let s = bags
        .iter()
        .zip(domains)
        .map(|(b, d)| Sample {
            prototypes: &b.prototypes,
            class_label: b.class_label,
            domain: Some(d),
        })
        .collect();
    (s, n)
}

/// One pass over `samples` in an order shuffled by `rng`, one optimizer step
/// per `batch_size` bags. Returns mean class loss and mean domain loss.
pub fn train_epoch<T: Scalar>(
    model: &mut Mixer<T>,
    samples: &[Sample<'_, T>],
    optimizer: &mut Optimizer<T>,
    lambda: f64,
    batch_size: usize,
    rng: &mut seed::Rng,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("no training bags".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let lambda_t = T::of(lambda);
    let (mut class_total, mut domain_total, mut domain_count) = (0.0, 0.0, 0usize);
    for batch in order.chunks(batch_size.max(1)) {
        let mut grads = model.params().zeros_like();
        for &i in batch {
            let s = &samples[i];
            let out = model.forward(s.prototypes, Mode::Train(&mut *rng))?;
            let (lc, dc) = softmax_cross_entropy(&out.class_logits, s.class_label)?;
            class_total += lc.as_f64();
            let dd = match s.domain {
                Some(d) => {
                    let (ld, dd) = softmax_cross_entropy(&out.domain_logits, d)?;
                    domain_total += ld.as_f64();
                    domain_count += 1;
                    dd
                }
                None => vec![T::zero(); out.domain_logits.len()],
            };
            let g = model.backward(out.cache, &dc, &dd, lambda_t)?;
            grads.axpy(T::one(), &g)?;
        }
        if batch.len() > 1 {
            grads.scale(T::one() / T::of_usize(batch.len()));
        }
        optimizer.step(model.params_mut(), &grads)?;
    }
    let domain_mean = if domain_count == 0 {
        0.0
    } else {
        domain_total / domain_count as f64
    };
    Ok((class_total / samples.len() as f64, domain_mean))
}

/// Trains for `config.epochs` epochs. Epoch `e` shuffles with a generator
/// seeded from `(seed, e)` and uses `config.lambda_at(e)`.
pub fn fit<T: Scalar>(
    model: &mut Mixer<T>,
    samples: &[Sample<'_, T>],
    config: &TrainConfig,
    seed_value: u64,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    let mut optimizer = Optimizer::new(OptimizerSettings::from(config));
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = std::time::Instant::now();
        let mut rng = seed::rng(seed::derive(seed_value, &[epoch as u64]));
        let lambda = config.lambda_at(epoch);
        let (class_loss, domain_loss) = train_epoch(
            model,
            samples,
            &mut optimizer,
            lambda,
            config.batch_size,
            &mut rng,
        )?;
        log.push(EpochLog {
            epoch,
            class_loss,
            domain_loss,
            lambda,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

/// Class probabilities for each bag, eval mode, bags in parallel.
pub fn predict<T: Scalar>(model: &Mixer<T>, bags: &[&PrototypeBag<T>]) -> Result<Vec<Vec<f64>>> {
    bags.par_iter()
        .map(|b| {
            let out = model.forward(&b.prototypes, Mode::Eval)?;
            Ok(softmax(&out.class_logits)
                .iter()
                .map(|v| v.as_f64())
                .collect())
        })
        .collect()
}

/// Pooled representations in eval mode.
pub fn embed<T: Scalar>(model: &Mixer<T>, bags: &[&PrototypeBag<T>]) -> Result<Vec<Vec<f64>>> {
    bags.par_iter()
        .map(|b| {
            Ok(model
                .embed(&b.prototypes)?
                .iter()
                .map(|v| v.as_f64())
                .collect())
        })
        .collect()
}

pub fn evaluate<T: Scalar>(model: &Mixer<T>, bags: &[&PrototypeBag<T>]) -> Result<MetricsReport> {
    let scores = predict(model, bags)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.class_label).collect();
    classification_report(&labels, &scores, model.config().num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixerConfig;

    fn config() -> MixerConfig {
        MixerConfig {
            tokens: 3,
            channels: 6,
            token_hidden: 4,
            channel_hidden: 8,
            blocks: 1,
            num_classes: 2,
            num_domains: 4,
            domain_hidden: 5,
            ..Default::default()
        }
    }

    fn bag(i: usize) -> PrototypeBag {
        let label = i % 2;
        let sign = if label == 0 { 1.0 } else { -1.0 };
        PrototypeBag {
            slide_id: format!("s{i}"),
            class_label: label,
            domain_id: i,
            prototypes: Matrix::from_fn(3, 6, |r, c| {
                sign * (1.0 + c as f64 * 0.1) + 0.05 * (r + i) as f64
            }),
            cluster_sizes: vec![1; 3],
        }
    }

    #[test]
    fn single_bag_overfits() {
        let b = bag(0);
        let mut m = Mixer::<f64>::new(
            MixerConfig {
                num_domains: 1,
                ..config()
            },
            3,
        )
        .unwrap();
        let (s, _) = samples(&[&b], DomainSource::Slide);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let log = fit(&mut m, &s, &cfg, 1).unwrap();
        assert!(log.last().unwrap().class_loss < 0.01, "{:?}", log.last());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let bags: Vec<PrototypeBag> = (0..4).map(bag).collect();
        let refs: Vec<&PrototypeBag> = bags.iter().collect();
        let (s, _) = samples(&refs, DomainSource::Slide);
        let cfg = TrainConfig {
            epochs: 5,
            dropout_rate: 0.2,
            ..Default::default()
        };
        let run = || {
            let mut m = Mixer::<f64>::new(
                MixerConfig {
                    dropout_rate: 0.2,
                    ..config()
                },
                9,
            )
            .unwrap();
            fit(&mut m, &s, &cfg, 4)
                .unwrap()
                .iter()
                .map(|e| (e.class_loss, e.domain_loss))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn detached_branch_matches_branchless_class_trajectory() {
        let bags: Vec<PrototypeBag> = (0..4).map(bag).collect();
        let refs: Vec<&PrototypeBag> = bags.iter().collect();
        let (with_domains, _) = samples(&refs, DomainSource::Slide);
        let without: Vec<Sample> = with_domains
            .iter()
            .map(|s| Sample { domain: None, ..*s })
            .collect();
        let cfg = TrainConfig {
            epochs: 6,
            fixed_lambda: Some(0.0),
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut a = Mixer::<f64>::new(config(), 2).unwrap();
        let mut b = a.clone();
        let la = fit(&mut a, &with_domains, &cfg, 5).unwrap();
        let lb = fit(&mut b, &without, &cfg, 5).unwrap();
        let ca: Vec<f64> = la.iter().map(|e| e.class_loss).collect();
        let cb: Vec<f64> = lb.iter().map(|e| e.class_loss).collect();
        assert_eq!(ca, cb);
        // the domain predictor still trains through its own loss
        assert_ne!(a.params().dom_w3, b.params().dom_w3);
        assert_eq!(a.params().cls_w, b.params().cls_w);
    }

    #[test]
    fn evaluation_of_separable_bags() {
        let bags: Vec<PrototypeBag> = (0..8).map(bag).collect();
        let refs: Vec<&PrototypeBag> = bags.iter().collect();
        let (s, n) = samples(&refs, DomainSource::Slide);
        let mut m = Mixer::<f64>::new(
            MixerConfig {
                num_domains: n,
                ..config()
            },
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            ..Default::default()
        };
        fit(&mut m, &s, &cfg, 0).unwrap();
        let r = evaluate(&m, &refs).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.auroc, 1.0);
    }
}
