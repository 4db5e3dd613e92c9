use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;
use tractmil::geodata::{
    holdout_city_split, load_dataset, stratified_split, Dataset, Partition, SplitPlan,
};
use tractmil::metrics::{dump_attention, emit_prediction_map, evaluate, write_attention, EvalReport};
use tractmil::synth::{generate, write_dataset};
use tractmil::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainOutcome};
use tractmil::{GatedAttentionModel, TractBag};

use crate::args::{
    AttentionArgs, DataArgs, EvalArgs, HoldoutArgs, MapArgs, PrepareArgs, SynthArgs, TrainArgs,
};
use crate::manifest::{beside, RunManifest};

fn load(data: &DataArgs) -> Result<Dataset> {
    let ds = load_dataset(&data.paths())?;
    if ds.bags.bags.is_empty() {
        bail!("no images fall inside any tract boundary");
    }
    Ok(ds)
}

fn load_model(path: &Path, data: &DataArgs) -> Result<GatedAttentionModel> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.fusion.is_some() && data.income.is_none() {
        warn!("checkpoint uses income fusion but no --income was given; every tract gets the mean income");
    }
    Ok(ckpt.model)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn labeled(bags: &[TractBag]) -> Vec<&TractBag> {
    bags.iter().filter(|b| b.label.is_some()).collect()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = args.resolve();
    let ds = generate(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let files = write_dataset(&ds, &args.out)?;

    let mut manifest = RunManifest::new("synth", cfg.seed, json!({ "synth": cfg }))?;
    for f in [&files.embeddings, &files.boundaries, &files.atlas, &files.income, &files.witnesses] {
        manifest.output(f);
    }
    manifest.write(&args.out.join("manifest.json"))?;
    let positives = ds.bags.iter().filter(|b| b.label.is_some_and(|l| l.is_insecure())).count();
    println!(
        "wrote {} tracts ({positives} food-insecure, {} images) to {}",
        ds.bags.len(),
        ds.bags.iter().map(TractBag::len).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let ratios = (args.ratios[0], args.ratios[1], args.ratios[2]);
    let plan = stratified_split(&ds.bags.bags, ratios, args.seed)?;
    plan.save(&args.out)?;

    let config = json!({ "data": args.data, "ratios": args.ratios, "seed": args.seed });
    let mut manifest =
        RunManifest::new("prepare", args.seed, config)?.with_inputs(&args.data.inputs())?;
    manifest.output(&args.out);
    manifest.write(&beside(&args.out))?;
    println!(
        "{} tracts ({} labeled, {} images unassigned, {} labeled tracts without images): train {}, validation {}, test {}",
        ds.bags.bags.len(),
        labeled(&ds.bags.bags).len(),
        ds.bags.unassigned_instances,
        ds.bags.empty_labeled_tracts.len(),
        plan.train.len(),
        plan.validation.len(),
        plan.test.len()
    );
    Ok(())
}

fn fit(bags: &[TractBag], plan: &SplitPlan, cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    let outcome = train(bags, plan, cfg)?;
    save_checkpoint(out, &outcome.model, Some(cfg))?;
    let best = outcome.history.epochs[outcome.best_epoch - 1];
    info!(
        "selected epoch {} of {}: validation accuracy {:.4}, macro-F1 {:.4}",
        outcome.best_epoch,
        outcome.history.epochs.len(),
        best.val_accuracy,
        best.val_macro_f1
    );
    Ok(outcome)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.train.resolve();
    let ds = load(&args.data)?;
    let plan = SplitPlan::load(&args.split)?;
    let outcome = fit(&ds.bags.bags, &plan, &cfg, &args.out)?;
    let history_path = args.out.with_extension("history.json");
    write_json(
        &history_path,
        &json!({
            "best_epoch": outcome.best_epoch,
            "pos_weight": outcome.pos_weight,
            "epochs": outcome.history.epochs,
        }),
    )?;

    let config = json!({ "data": args.data, "split": args.split, "train": cfg });
    let mut inputs = args.data.inputs();
    inputs.push(args.split.clone());
    let mut manifest = RunManifest::new("train", cfg.seed, config)?.with_inputs(&inputs)?;
    manifest.output(&args.out);
    manifest.output(&history_path);
    manifest.write(&beside(&args.out))?;
    let best = outcome.history.epochs[outcome.best_epoch - 1];
    println!(
        "checkpoint {} (epoch {}, validation macro-F1 {:.4})",
        args.out.display(),
        outcome.best_epoch,
        best.val_macro_f1
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let model = load_model(&args.checkpoint, &args.data)?;
    let plan = SplitPlan::load(&args.split)?;
    let bags = plan.select(&ds.bags.bags, args.partition.into())?;
    if bags.is_empty() {
        bail!("the {:?} partition of {} is empty", args.partition, args.split.display());
    }
    let report = evaluate(&model, &bags, args.threshold)?;
    println!("{report}");

    if let Some(out) = &args.out {
        write_json(out, &report)?;
        let config = json!({
            "data": args.data,
            "checkpoint": args.checkpoint,
            "split": args.split,
            "partition": args.partition,
            "threshold": args.threshold,
        });
        let mut inputs = args.data.inputs();
        inputs.extend([args.checkpoint.clone(), args.split.clone()]);
        let mut manifest = RunManifest::new("eval", plan.seed, config)?.with_inputs(&inputs)?;
        manifest.output(out);
        manifest.write(&beside(out))?;
    }
    Ok(())
}

pub fn attention(args: &AttentionArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let model = load_model(&args.checkpoint, &args.data)?;
    let (bags, seed): (Vec<&TractBag>, u64) = match (&args.split, args.partition) {
        (Some(split), Some(part)) => {
            let plan = SplitPlan::load(split)?;
            (plan.select(&ds.bags.bags, part.into())?, plan.seed)
        }
        _ => (ds.bags.bags.iter().collect(), 0),
    };
    let records = dump_attention(&model, &bags, args.top_k)?;
    write_attention(&args.out, &records)?;

    let config = json!({
        "data": args.data,
        "checkpoint": args.checkpoint,
        "split": args.split,
        "partition": args.partition,
        "top_k": args.top_k,
    });
    let mut inputs = args.data.inputs();
    inputs.push(args.checkpoint.clone());
    inputs.extend(args.split.clone());
    let mut manifest = RunManifest::new("attention", seed, config)?.with_inputs(&inputs)?;
    manifest.output(&args.out);
    manifest.write(&beside(&args.out))?;
    println!(
        "{} attention rows for {} tracts written to {}",
        records.len(),
        bags.len(),
        args.out.display()
    );
    Ok(())
}

pub fn map(args: &MapArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let model = load_model(&args.checkpoint, &args.data)?;
    let bags: Vec<&TractBag> = ds.bags.bags.iter().collect();
    let summary = emit_prediction_map(&model, &bags, &ds.boundaries, args.threshold, &args.out)?;

    let config = json!({
        "data": args.data,
        "checkpoint": args.checkpoint,
        "threshold": args.threshold,
    });
    let mut inputs = args.data.inputs();
    inputs.push(args.checkpoint.clone());
    let mut manifest = RunManifest::new("map", 0, config)?.with_inputs(&inputs)?;
    manifest.output(&args.out);
    manifest.write(&beside(&args.out))?;
    println!(
        "{} tract features written to {} ({} tracts without a boundary skipped)",
        summary.features,
        args.out.display(),
        summary.skipped
    );
    Ok(())
}

pub fn holdout_city(args: &HoldoutArgs) -> Result<()> {
    let cfg = args.train.resolve();
    let ds = load(&args.data)?;
    let plan = holdout_city_split(&ds.bags.bags, &args.city, args.val_fraction, cfg.seed)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let split_path = args.out.join("split.json");
    let ckpt_path = args.out.join("checkpoint.json");
    let report_path = args.out.join("report.json");
    plan.save(&split_path)?;

    let outcome = fit(&ds.bags.bags, &plan, &cfg, &ckpt_path)?;
    let test = plan.select(&ds.bags.bags, Partition::Test)?;
    let report: EvalReport = evaluate(&outcome.model, &test, args.threshold)?;
    write_json(&report_path, &report)?;
    println!("held-out city {} ({} tracts)\n{report}", args.city, test.len());

    let config = json!({
        "data": args.data,
        "city": args.city,
        "val_fraction": args.val_fraction,
        "threshold": args.threshold,
        "train": cfg,
    });
    let mut manifest =
        RunManifest::new("holdout-city", cfg.seed, config)?.with_inputs(&args.data.inputs())?;
    for p in [&split_path, &ckpt_path, &report_path] {
        manifest.output(p);
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
