use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use protomixer::io::{self, load_prototype_bags, Manifest, SyntheticSpec};
use protomixer::kmeans::KMeansOptions;
use protomixer::model::{load_checkpoint, load_checkpoint_for, save_checkpoint, MixerConfig};
use protomixer::reduce::reduce_dataset;
use protomixer::train::{
    check_bags, domain_targets, evaluate, run_crossval, run_fold, CostProfile, CrossvalReport,
    MetricsReport, TrainConfig,
};
use protomixer::PrototypeBag;

use crate::record::RunRecord;
use crate::{
    ArchArgs, CrossvalArgs, CvArgs, EvalArgs, FitArgs, GenArgs, KMeansArgs, ReduceArgs, SweepArgs,
    TrainArgs,
};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write(path: &Path, text: &str, record: &mut RunRecord) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    record.artifact(path);
    Ok(())
}

fn kmeans_options(a: &KMeansArgs) -> KMeansOptions {
    KMeansOptions {
        max_iters: a.max_iters,
        rel_tol: a.rel_tol,
        restarts: a.restarts,
    }
}

fn train_config(fit: &FitArgs, cv: Option<&CvArgs>) -> Result<TrainConfig> {
    let mut c = TrainConfig {
        epochs: fit.epochs,
        batch_size: fit.batch_size,
        optimizer: fit.optimizer,
        learning_rate: fit.learning_rate,
        beta1: fit.beta1,
        beta2: fit.beta2,
        adam_eps: fit.adam_eps,
        momentum: fit.momentum,
        alpha: fit.alpha,
        lambda_offset: fit.lambda_offset,
        fixed_lambda: fit.fixed_lambda,
        seed: fit.seed,
        dropout_rate: fit.dropout,
        domain_source: fit.domain_source,
        ..TrainConfig::default()
    };
    if let Some(cv) = cv {
        c.folds = cv.folds;
        c.repeats = cv.repeats;
        c.fold_limit = cv.fold_limit;
    }
    c.validate()?;
    Ok(c)
}

/// Architecture for `bags`: k and N from the first prototype table, the
/// class count from the manifest. The domain count is fixed at training time.
fn mixer_config(
    arch: &ArchArgs,
    manifest: &Manifest,
    bags: &[PrototypeBag],
    dropout: f64,
) -> Result<MixerConfig> {
    let Some(first) = bags.first() else {
        bail!(protomixer::Error::Data("manifest lists no bags".into()));
    };
    let c = MixerConfig {
        tokens: first.k(),
        channels: first.dim(),
        token_hidden: arch.token_hidden,
        channel_hidden: arch.channel_hidden,
        blocks: arch.blocks,
        num_classes: manifest.num_classes,
        num_domains: 1,
        domain_hidden: arch.domain_hidden,
        dropout_rate: dropout,
        final_norm: !arch.no_final_norm,
    };
    c.validate()?;
    Ok(c)
}

fn load_prototypes(path: &Path) -> Result<(Manifest, Vec<PrototypeBag>)> {
    let manifest = Manifest::read(path)?;
    let bags = load_prototype_bags(&manifest)?;
    Ok((manifest, bags))
}

/// `scope,precision,recall,f1,support,auroc,accuracy`: one row per class,
/// then `all` with the macro averages.
fn report_csv(m: &MetricsReport) -> String {
    let mut s = String::from("scope,precision,recall,f1,support,auroc,accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.17e}"));
    for (c, pc) in m.per_class.iter().enumerate() {
        let _ = writeln!(
            s,
            "class{c},{:.17e},{:.17e},{:.17e},{},{},",
            pc.precision,
            pc.recall,
            pc.f1,
            pc.support,
            opt(pc.auroc)
        );
    }
    let total: usize = m.per_class.iter().map(|c| c.support).sum();
    let _ = writeln!(
        s,
        "all,,,{:.17e},{total},{},{:.17e}",
        m.macro_f1,
        opt(m.auroc.is_finite().then_some(m.auroc)),
        m.accuracy
    );
    s
}

fn summary_line(m: &MetricsReport) -> String {
    let mut line = format!(
        "macro_f1={:.4} auroc={:.4} accuracy={:.4}",
        m.macro_f1, m.auroc, m.accuracy
    );
    if !m.absent_classes.is_empty() {
        let _ = write!(line, " absent_classes={:?}", m.absent_classes);
    }
    line
}

fn profile(config: &MixerConfig, seconds_per_epoch: f64, record: &mut RunRecord) {
    let p = CostProfile::measure(config, seconds_per_epoch);
    let c = config.param_count();
    println!("profile: {p}");
    println!(
        "param_count: per_block={} blocks={} final_norm={} classifier={} domain_branch={} \
         (weights, biases and layer-norm gains and shifts)",
        c.per_block, c.blocks, c.final_norm, c.classifier, c.domain_branch
    );
    record.note("param_count", p.param_count);
    record.note("inference_param_count", c.inference());
    record.note(
        "peak_rss_bytes",
        p.peak_resident_bytes
            .map_or("unavailable".into(), |b| b.to_string()),
    );
    record.note("seconds_per_epoch", p.seconds_per_epoch);
}

pub fn gen_synthetic(a: GenArgs, argv: &[String]) -> Result<()> {
    let spec = SyntheticSpec {
        num_bags: a.bags,
        num_classes: a.classes,
        num_domains: a.domains.unwrap_or(a.bags),
        min_patches: a.min_patches,
        max_patches: a.max_patches,
        dim: a.n,
        signal_fraction: a.signal_fraction,
        domain_shift_magnitude: a.domain_shift,
        noise_sigma: a.noise,
        background_centers: a.background_centers,
        center_scale: a.center_scale,
        confounding: a.confounding,
        seed: a.seed,
    };
    let mut record = RunRecord::new(argv.to_vec());
    record.seed(spec.seed);
    for (k, v) in [
        ("bags", spec.num_bags.to_string()),
        ("classes", spec.num_classes.to_string()),
        ("domains", spec.num_domains.to_string()),
        ("n", spec.dim.to_string()),
        ("min_patches", spec.min_patches.to_string()),
        ("max_patches", spec.max_patches.to_string()),
        ("signal_fraction", spec.signal_fraction.to_string()),
        ("domain_shift", spec.domain_shift_magnitude.to_string()),
        ("noise", spec.noise_sigma.to_string()),
        ("background_centers", spec.background_centers.to_string()),
        ("center_scale", spec.center_scale.to_string()),
        ("confounding", spec.confounding.to_string()),
    ] {
        record.set(k, v);
    }
    let (manifest, _) = io::gen_synthetic(&spec, &a.out)?;
    record.artifact(&a.out.join("manifest.tsv"));
    record.artifact(&a.out.join("bags"));
    record.artifact(&a.out.join("truth"));
    record.write(&a.out)?;
    println!(
        "wrote {} bags to {}",
        manifest.entries.len(),
        a.out.display()
    );
    Ok(())
}

pub fn reduce(a: ReduceArgs, argv: &[String]) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let options = kmeans_options(&a.kmeans);
    let mut record = RunRecord::new(argv.to_vec());
    record.seed(a.seed);
    record.set("k", a.k);
    record.set("restarts", options.restarts);
    record.set("max_iters", options.max_iters);
    record.set("rel_tol", options.rel_tol);
    record.input_manifest(&a.manifest, &manifest);
    create_dir(&a.out)?;
    let report = reduce_dataset(&manifest, a.k, a.seed, &options, &a.out)?;
    record.artifact(&a.out.join("manifest.tsv"));
    record.artifact(&a.out.join("prototypes"));
    record.artifact(&a.out.join("report.csv"));
    let padded = report.rows.iter().filter(|r| r.flag == "padded").count();
    record.note("bags", report.rows.len());
    record.note("padded", padded);
    record.note("failed", report.failures());
    record.write(&a.out)?;
    println!(
        "reduced {} bags to k={} ({} padded, {} failed)",
        report.rows.len() - report.failures(),
        a.k,
        padded,
        report.failures()
    );
    Ok(())
}

pub fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let cfg = train_config(&a.fit, None)?;
    let (manifest, bags) = load_prototypes(&a.manifest)?;
    let mixer = mixer_config(&a.arch, &manifest, &bags, cfg.dropout_rate)?;
    let mut record = RunRecord::new(argv.to_vec());
    record.input_manifest(&a.manifest, &manifest);
    create_dir(&a.out)?;

    let all: Vec<&PrototypeBag> = bags.iter().collect();
    let run = run_fold(&all, &all, &mixer, &cfg, cfg.seed)?;
    record.mixer(run.model.config());
    record.set("num_domains", run.model.config().num_domains);
    record.train(&cfg);

    let ckpt = a.out.join("checkpoint.pmx");
    save_checkpoint(&run.model, &ckpt)?;
    record.artifact(&ckpt);
    let mut losses = String::from("epoch,class_loss,domain_loss,lambda\n");
    for e in &run.losses {
        let _ = writeln!(
            losses,
            "{},{:.17e},{:.17e},{:.17e}",
            e.epoch, e.class_loss, e.domain_loss, e.lambda
        );
    }
    write(&a.out.join("losses.csv"), &losses, &mut record)?;
    write(
        &a.out.join("metrics.csv"),
        &report_csv(&run.metrics),
        &mut record,
    )?;
    record.note("train_macro_f1", run.metrics.macro_f1);
    record.note("train_auroc", run.metrics.auroc);
    if a.fit.profile {
        let spe =
            run.losses.iter().map(|e| e.seconds).sum::<f64>() / run.losses.len().max(1) as f64;
        profile(run.model.config(), spe, &mut record);
    }
    record.write(&a.out)?;
    println!("train set: {}", summary_line(&run.metrics));
    Ok(())
}

/// Writes the per-fold tables of `report` into `dir`.
fn write_crossval(report: &CrossvalReport, dir: &Path, record: &mut RunRecord) -> Result<()> {
    write(&dir.join("metrics.csv"), &report.metrics_csv(), record)?;
    write(&dir.join("losses.csv"), &report.losses_csv(), record)?;
    let mut folds = String::from("repeat,fold,test_ids\n");
    for o in &report.outcomes {
        let _ = writeln!(folds, "{},{},{}", o.repeat, o.fold, o.test_ids.join(";"));
    }
    write(&dir.join("folds.csv"), &folds, record)
}

/// The architecture of the first fold's model, domain branch included.
fn first_fold_config(
    report: &CrossvalReport,
    bags: &[PrototypeBag],
    mixer: &MixerConfig,
    cfg: &TrainConfig,
) -> MixerConfig {
    let train: Vec<&PrototypeBag> = match report.outcomes.first() {
        Some(o) => bags
            .iter()
            .filter(|b| o.train_ids.contains(&b.slide_id))
            .collect(),
        None => Vec::new(),
    };
    MixerConfig {
        num_domains: domain_targets(&train, cfg.domain_source).1,
        ..mixer.clone()
    }
}

pub fn crossval(a: CrossvalArgs, argv: &[String]) -> Result<()> {
    let cfg = train_config(&a.fit, Some(&a.cv))?;
    let (manifest, bags) = load_prototypes(&a.manifest)?;
    let mixer = mixer_config(&a.arch, &manifest, &bags, cfg.dropout_rate)?;
    let mut record = RunRecord::new(argv.to_vec());
    record.input_manifest(&a.manifest, &manifest);
    record.mixer(&mixer);
    record.train(&cfg);
    record.set(
        "jobs",
        a.cv.jobs.map_or("default".into(), |j| j.to_string()),
    );
    create_dir(&a.out)?;

    let report = run_crossval(&bags, &mixer, &cfg, a.cv.jobs)?;
    write_crossval(&report, &a.out, &mut record)?;
    record.note("macro_f1_mean", report.macro_f1.mean);
    record.note("macro_f1_std", report.macro_f1.std);
    record.note("auroc_mean", report.auroc.mean);
    record.note("auroc_std", report.auroc.std);
    if a.fit.profile {
        profile(
            &first_fold_config(&report, &bags, &mixer, &cfg),
            report.seconds_per_epoch(),
            &mut record,
        );
    }
    record.write(&a.out)?;
    println!(
        "{} folds: macro_f1={:.4}±{:.4} auroc={:.4}±{:.4}",
        report.outcomes.len(),
        report.macro_f1.mean,
        report.macro_f1.std,
        report.auroc.mean,
        report.auroc.std
    );
    Ok(())
}

pub fn sweep_k(a: SweepArgs, argv: &[String]) -> Result<()> {
    if a.k_list.is_empty() {
        bail!(protomixer::Error::Config("k-list is empty".into()));
    }
    let cfg = train_config(&a.fit, Some(&a.cv))?;
    let manifest = Manifest::read(&a.manifest)?;
    let options = kmeans_options(&a.kmeans);
    let mut record = RunRecord::new(argv.to_vec());
    record.input_manifest(&a.manifest, &manifest);
    let ks: Vec<String> = a.k_list.iter().map(|k| k.to_string()).collect();
    record.set("k_list", ks.join(","));
    record.set("restarts", options.restarts);
    record.set("max_iters", options.max_iters);
    record.set("rel_tol", options.rel_tol);
    record.set("token_hidden", a.arch.token_hidden);
    record.set("channel_hidden", a.arch.channel_hidden);
    record.set("blocks", a.arch.blocks);
    record.set("domain_hidden", a.arch.domain_hidden);
    record.set("final_norm", !a.arch.no_final_norm);
    record.train(&cfg);
    record.set(
        "jobs",
        a.cv.jobs.map_or("default".into(), |j| j.to_string()),
    );
    create_dir(&a.out)?;

    let mut table = String::from(
        "k,macro_f1_mean,macro_f1_std,auroc_mean,auroc_std,padded_bags,seconds_per_epoch\n",
    );
    for &k in &a.k_list {
        let dir = a.out.join(format!("k{k}"));
        let started = Instant::now();
        let reduced = reduce_dataset(&manifest, k, cfg.seed, &options, &dir)?;
        let padded = reduced.rows.iter().filter(|r| r.flag == "padded").count();
        let (m, bags) = load_prototypes(&dir.join("manifest.tsv"))?;
        let mixer = mixer_config(&a.arch, &m, &bags, cfg.dropout_rate)?;
        let report = run_crossval(&bags, &mixer, &cfg, a.cv.jobs)?;
        record.artifact(&dir.join("report.csv"));
        write_crossval(&report, &dir, &mut record)?;
        let _ = writeln!(
            table,
            "{k},{:.17e},{:.17e},{:.17e},{:.17e},{padded},{:.6e}",
            report.macro_f1.mean,
            report.macro_f1.std,
            report.auroc.mean,
            report.auroc.std,
            report.seconds_per_epoch()
        );
        println!(
            "k={k}: macro_f1={:.4}±{:.4} auroc={:.4}±{:.4} ({:.1}s)",
            report.macro_f1.mean,
            report.macro_f1.std,
            report.auroc.mean,
            report.auroc.std,
            started.elapsed().as_secs_f64()
        );
    }
    write(&a.out.join("sweep.csv"), &table, &mut record)?;
    record.write(&a.out)?;
    Ok(())
}

pub fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let (manifest, bags) = load_prototypes(&a.manifest)?;
    let stored = load_checkpoint(&a.checkpoint)?.config().clone();
    let expected = match bags.first() {
        Some(b) => MixerConfig {
            tokens: b.k(),
            channels: b.dim(),
            num_classes: manifest.num_classes,
            ..stored
        },
        None => bail!(protomixer::Error::Data("manifest lists no bags".into())),
    };
    let model = load_checkpoint_for(&a.checkpoint, &expected)?;
    let all: Vec<&PrototypeBag> = bags.iter().collect();
    check_bags(&all, model.config())?;
    let metrics = evaluate(&model, &all)?;
    println!("{}", summary_line(&metrics));
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut record = RunRecord::new(argv.to_vec());
        record.input_file(&a.checkpoint);
        record.input_manifest(&a.manifest, &manifest);
        record.mixer(model.config());
        record.set("num_domains", model.config().num_domains);
        write(&out.join("metrics.csv"), &report_csv(&metrics), &mut record)?;
        record.note("macro_f1", metrics.macro_f1);
        record.note("auroc", metrics.auroc);
        record.write(out)?;
    }
    Ok(())
}
