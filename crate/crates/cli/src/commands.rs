//! One function per subcommand. Each reads its inputs, checks their config
//! hash, writes its artifact, and leaves a `.provenance` file next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dispad_core::entropy::Criterion;
use dispad_core::eval::ErrorReport;
use dispad_core::io::{load_dataset, load_session, manifest_config_hash, save_dataset, MANIFEST};
use dispad_core::lstm::{fit, init, load_checkpoint, save_checkpoint, Checkpoint, TrainReport};
use dispad_core::pipeline::{
    evaluate as score, predict_session, prepare, prepare_all, prepare_with_stats, windows_all, Prepared,
};
use dispad_core::preprocess::{partition, NormStats};
use dispad_core::sim::gen_sessions;
use dispad_core::transfer::{select_source, transfer_fit, DomainBatch};
use dispad_core::types::{Dataset, Placement, Session, Split, CHANNELS};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

pub struct Context {
    pub cfg: RunConfig,
    pub force: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String, Failure> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Digest over a dataset directory: the manifest, then every listed file.
fn dataset_digest(dir: &Path) -> Result<String, Failure> {
    let manifest = fs::read(dir.join(MANIFEST))?;
    let mut h = Sha256::new();
    h.update(&manifest);
    for line in String::from_utf8_lossy(&manifest).lines().skip_while(|l| l.starts_with('#')).skip(1) {
        if let Some(name) = line.split(',').next().filter(|n| !n.is_empty()) {
            let csv = dir.join(name);
            h.update(fs::read(&csv)?);
            h.update(fs::read(dispad_core::io::meta_path(&csv))?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn name_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Provenance record: stage, seed, config hash, and content digests of the
/// inputs and outputs. Paths are reduced to file names so reruns in another
/// directory produce the same record.
fn write_provenance(
    at: &Path,
    stage: &str,
    ctx: &Context,
    hash: &str,
    inputs: &[(String, String)],
    outputs: &[(String, String)],
) -> Result<(), Failure> {
    let mut s = String::new();
    let _ = writeln!(s, "stage={stage}");
    let _ = writeln!(s, "seed={}", ctx.cfg.seed);
    let _ = writeln!(s, "config_hash={hash}");
    for (name, digest) in inputs {
        let _ = writeln!(s, "input={name} sha256={digest}");
    }
    for (name, digest) in outputs {
        let _ = writeln!(s, "output={name} sha256={digest}");
    }
    fs::write(at, s)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_hash(ctx: &Context, what: &Path, found: Option<&str>, expected: &str) -> Result<(), Failure> {
    match found {
        Some(h) if h != expected => {
            if ctx.force {
                log::warn!("{}: config hash {h} differs from {expected}; continuing (--force)", what.display());
                Ok(())
            } else {
                Err(Failure::Data(format!(
                    "{} was produced with config hash {h}, current config hashes to {expected}; rerun the producing command or pass --force",
                    what.display()
                )))
            }
        }
        Some(_) => Ok(()),
        None => {
            log::warn!("{} carries no config hash", what.display());
            Ok(())
        }
    }
}

fn require_dataset(dir: &Path) -> Result<(), Failure> {
    if dir.join(MANIFEST).is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "no dataset at {}; run `dispad sim gen --out {}` first",
            dir.display(),
            dir.display()
        )))
    }
}

fn require_model(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "no model at {}; run `dispad train --out {}` first",
            path.display(),
            path.display()
        )))
    }
}

fn open_dataset(ctx: &Context, dir: &Path) -> Result<Dataset, Failure> {
    require_dataset(dir)?;
    let found = manifest_config_hash(dir)?;
    check_hash(ctx, &dir.join(MANIFEST), found.as_deref(), &ctx.cfg.data_hash())?;
    Ok(load_dataset(dir)?)
}

fn open_model(ctx: &Context, path: &Path) -> Result<Checkpoint, Failure> {
    require_model(path)?;
    let ck = load_checkpoint(path)?;
    check_hash(ctx, path, ck.config_hash.as_deref(), &ctx.cfg.model_hash())?;
    Ok(ck)
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("{what} must look like ETA,BETA, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn sim_gen(
    mut ctx: Context,
    out: &Path,
    grid: Option<&str>,
    placement: Option<&str>,
    duration: Option<f64>,
) -> Result<(), Failure> {
    if let Some(g) = grid {
        let (e, b) = parse_pair(g, "--grid")?;
        ctx.cfg.sim.eta_step = e;
        ctx.cfg.sim.beta_step = b;
    }
    if let Some(d) = duration {
        ctx.cfg.sim.duration_s = d;
    }
    let placements = match placement {
        Some(p) => {
            let (e, b) = parse_pair(p, "--placement")?;
            vec![Placement::new(e, b).map_err(|e| Failure::Usage(e.to_string()))?]
        }
        None => ctx.cfg.grid().placements().map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let hash = ctx.cfg.data_hash();
    let user = ctx.cfg.user();
    user.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut sessions = gen_sessions(&placements, &ctx.cfg.templates()?, &[user], &ctx.cfg.sim_spec())?;
    for s in &mut sessions {
        s.config_hash = Some(hash.clone());
    }
    let ds = Dataset::new(sessions);
    save_dataset(&ds, out, Some(&hash))?;
    let digest = dataset_digest(out)?;
    write_provenance(&out.join("dataset.provenance"), "sim gen", &ctx, &hash, &[], &[(name_of(out), digest)])?;
    println!("wrote {} sessions to {}", ds.sessions.len(), out.display());
    Ok(())
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn rank(ctx: &Context, data: &Path, out: &Path) -> Result<(), Failure> {
    let ds = open_dataset(ctx, data)?;
    let pipeline = ctx.cfg.pipeline()?;
    let sessions: Vec<&Session> = ds.sessions.iter().collect();
    let prepared = prepare_all(&sessions, &pipeline)?;
    let hash = ctx.cfg.model_hash();
    let mut s = format!("# config_hash={hash}\n");
    s.push_str("session,eta_cm,beta_deg,criterion,order");
    for k in 0..CHANNELS {
        let _ = write!(s, ",value_s{}", k + 1);
    }
    s.push('\n');
    for (i, p) in prepared.iter().enumerate() {
        let pl = p.session.placement;
        let _ = write!(s, "{i},{},{},{},{}", pl.eta(), pl.beta(), p.ranking.criterion.as_str(), join_usize(&p.ranking.order));
        for v in p.ranking.entropies {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(out, &s)?;
    write_provenance(
        &sidecar(out, ".provenance"),
        "rank",
        ctx,
        &hash,
        &[(name_of(data), dataset_digest(data)?)],
        &[(name_of(out), sha256_hex(s.as_bytes()))],
    )?;
    println!("ranked {} sessions into {}", prepared.len(), out.display());
    Ok(())
}

fn encode_placements(ps: &[Placement]) -> String {
    ps.iter().map(|p| format!("{}:{}", p.eta(), p.beta())).collect::<Vec<_>>().join(",")
}

fn decode_placements(s: &str) -> Result<Vec<Placement>, Failure> {
    s.split(',')
        .filter(|x| !x.is_empty())
        .map(|x| {
            let (e, b) = x
                .split_once(':')
                .ok_or_else(|| Failure::Data(format!("bad placement '{x}' in checkpoint")))?;
            let parse = |v: &str| v.parse::<f64>().map_err(|_| Failure::Data(format!("bad placement '{x}' in checkpoint")));
            Ok(Placement::new(parse(e)?, parse(b)?)?)
        })
        .collect()
}

fn history_csv(r: &TrainReport) -> String {
    let mut s = String::from("epoch,learning_rate,train_mse,val_mse\n");
    for e in 0..r.train_mse.len() {
        let _ = writeln!(s, "{e},{},{},{}", r.learning_rate[e], r.train_mse[e], r.val_mse[e]);
    }
    s
}

pub fn train(ctx: &Context, data: &Path, out: &Path) -> Result<(), Failure> {
    let ds = open_dataset(ctx, data)?;
    let pipeline = ctx.cfg.pipeline()?;
    let mc = ctx.cfg.model_config()?;
    let ds = partition(&ds, ctx.cfg.preprocess.split, ctx.cfg.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let train = prepare_all(&ds.sessions_in(Split::Train), &pipeline)?;
    let val = prepare_all(&ds.sessions_in(Split::Validate), &pipeline)?;
    let stride = ctx.cfg.model.train_stride;
    let tw = windows_all(&train, &pipeline, stride);
    let vw = windows_all(&val, &pipeline, stride);
    if tw.is_empty() || vw.is_empty() {
        return Err(Failure::Data("sessions are too short for the configured window".into()));
    }
    let mut params = init(&mc, ctx.cfg.seed)?;
    params.calibrate(&tw)?;
    let (params, report) = fit(params, &tw, &vw, &mc)?;
    let hash = ctx.cfg.model_hash();
    let mut ck = Checkpoint::new(params);
    ck.config_hash = Some(hash.clone());
    ck.meta.insert("criterion".into(), pipeline.rank.criterion.as_str().into());
    ck.meta.insert("best_epoch".into(), report.best_epoch.to_string());
    ck.meta.insert("train_placements".into(), encode_placements(&ds.placements_in(Split::Train)));
    ck.meta.insert("test_placements".into(), encode_placements(&ds.placements_in(Split::Test)));
    save_checkpoint(&ck, out)?;
    let history = sidecar(out, ".history.csv");
    let hist = format!("# config_hash={hash}\n{}", history_csv(&report));
    fs::write(&history, &hist)?;
    write_provenance(
        &sidecar(out, ".provenance"),
        "train",
        ctx,
        &hash,
        &[(name_of(data), dataset_digest(data)?)],
        &[(name_of(out), file_digest(out)?), (name_of(&history), sha256_hex(hist.as_bytes()))],
    )?;
    println!(
        "trained on {} windows; best validation mse {:.4} at epoch {}; wrote {}",
        tw.len(),
        report.val_mse[report.best_epoch],
        report.best_epoch,
        out.display()
    );
    Ok(())
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn split_f64(s: &str) -> Result<[f64; CHANNELS], Failure> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| Failure::Data(format!("bad number '{x}' in checkpoint"))))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| Failure::Data("expected six normalization values".into()))
}

/// Normalization stored by `transfer` for the placement it adapted to.
fn stored_norm(ck: &Checkpoint) -> Result<Option<(Placement, NormStats)>, Failure> {
    let (Some(p), Some(min), Some(max)) = (ck.meta.get("norm_placement"), ck.meta.get("norm_min"), ck.meta.get("norm_max")) else {
        return Ok(None);
    };
    let placement = decode_placements(p)?
        .pop()
        .ok_or_else(|| Failure::Data("empty norm_placement in checkpoint".into()))?;
    Ok(Some((placement, NormStats { min: split_f64(min)?, max: split_f64(max)? })))
}

fn prepare_for(ck: &Checkpoint, session: &Session, pipeline: &dispad_core::pipeline::PipelineConfig) -> Result<Prepared, Failure> {
    match stored_norm(ck)? {
        Some((pl, stats)) if pl == session.placement => Ok(prepare_with_stats(session, &stats, pipeline)?),
        _ => Ok(prepare(session, pipeline)?),
    }
}

pub fn transfer(ctx: &Context, model: &Path, source: &Path, target: &Path, out: &Path) -> Result<(), Failure> {
    let ck = open_model(ctx, model)?;
    let ds = open_dataset(ctx, source)?;
    if !target.is_file() {
        return Err(Failure::Data(format!("no target session at {}", target.display())));
    }
    // the target comes from a new wearer or motion; its hash is not checked
    let target_session = load_session(target)?;
    let pipeline = ctx.cfg.pipeline()?;
    let tc = ctx.cfg.transfer_config()?;
    let sessions: Vec<&Session> = ds.sessions.iter().collect();
    let prepared = prepare_all(&sessions, &pipeline)?;
    let reference = ds.sessions.iter().find(|s| s.placement == target_session.placement);
    let stats = match reference {
        Some(s) => NormStats::from_session(s),
        None => NormStats::from_session(&target_session),
    };
    let tprep = prepare_with_stats(&target_session, &stats, &pipeline)?;
    let rankings: Vec<_> = prepared.iter().map(|p| p.ranking.clone()).collect();
    let selected: Vec<usize> = if ctx.cfg.transfer.select_all || pipeline.rank.criterion == Criterion::None {
        (0..prepared.len()).collect()
    } else {
        select_source(&rankings, &tprep.ranking)?
    };
    let chosen: Vec<Prepared> = selected.iter().map(|&i| prepared[i].clone()).collect();
    let mut tw = windows_all(std::slice::from_ref(&tprep), &pipeline, 1);
    tw.truncate(tc.budget);
    let batch = DomainBatch::new(windows_all(&chosen, &pipeline, ctx.cfg.transfer.source_stride), tw)?;
    let (params, report) = transfer_fit(&ck.params, &batch, &tc)?;

    let hash = ctx.cfg.model_hash();
    let mut out_ck = Checkpoint { params, config_hash: Some(hash.clone()), meta: ck.meta.clone() };
    out_ck.meta.insert("transfer_hash".into(), ctx.cfg.full_hash());
    out_ck.meta.insert("norm_placement".into(), encode_placements(&[target_session.placement]));
    out_ck.meta.insert("norm_min".into(), join_f64(&stats.min));
    out_ck.meta.insert("norm_max".into(), join_f64(&stats.max));
    out_ck.meta.insert("target_windows".into(), batch.target.len().to_string());
    save_checkpoint(&out_ck, out)?;

    let mut sel = format!("# config_hash={hash}\neta_cm,beta_deg,top2,selected\n");
    for (i, p) in prepared.iter().enumerate() {
        let pl = p.session.placement;
        let _ = writeln!(sel, "{},{},{},{}", pl.eta(), pl.beta(), join_usize(&p.ranking.top2()), selected.contains(&i));
    }
    let sel_path = sidecar(out, ".selected.csv");
    fs::write(&sel_path, &sel)?;
    let loss = format!("# config_hash={hash}\n{}", report.to_csv());
    let loss_path = sidecar(out, ".loss.csv");
    fs::write(&loss_path, &loss)?;
    write_provenance(
        &sidecar(out, ".provenance"),
        "transfer",
        ctx,
        &hash,
        &[
            (name_of(model), file_digest(model)?),
            (name_of(source), dataset_digest(source)?),
            (name_of(target), file_digest(target)?),
        ],
        &[
            (name_of(out), file_digest(out)?),
            (name_of(&sel_path), sha256_hex(sel.as_bytes())),
            (name_of(&loss_path), sha256_hex(loss.as_bytes())),
        ],
    )?;
    println!(
        "selected {} of {} source sessions, {} target windows, {} steps; wrote {}",
        selected.len(),
        prepared.len(),
        batch.target.len(),
        report.steps.len(),
        out.display()
    );
    Ok(())
}

pub fn predict(ctx: &Context, model: &Path, input: &Path, out: &Path, smooth: bool) -> Result<(), Failure> {
    let ck = open_model(ctx, model)?;
    if !input.is_file() {
        return Err(Failure::Data(format!("no session at {}", input.display())));
    }
    let session = load_session(input)?;
    let pipeline = ctx.cfg.pipeline()?;
    let prepared = prepare_for(&ck, &session, &pipeline)?;
    let kalman = ctx.cfg.kalman();
    let pred = predict_session(&ck.params, &prepared, &pipeline, smooth.then_some(&kalman))?;
    let hash = ctx.cfg.full_hash();
    let mut s = format!("# config_hash={hash}\ntimestamp_ms,angle_deg\n");
    for (f, p) in session.frames.iter().zip(&pred) {
        match p {
            Some(v) => {
                let _ = writeln!(s, "{},{v}", f.timestamp_ms);
            }
            None => {
                let _ = writeln!(s, "{},", f.timestamp_ms);
            }
        }
    }
    fs::write(out, &s)?;
    write_provenance(
        &sidecar(out, ".provenance"),
        "predict",
        ctx,
        &hash,
        &[(name_of(model), file_digest(model)?), (name_of(input), file_digest(input)?)],
        &[(name_of(out), sha256_hex(s.as_bytes()))],
    )?;
    println!("wrote {} estimates to {}", pred.iter().flatten().count(), out.display());
    Ok(())
}

fn bins_csv(hash: &str, bins: &[dispad_core::eval::Bin]) -> String {
    let mut s = format!("# config_hash={hash}\nlo,hi,mae,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.mae, b.count);
    }
    s
}

fn summary_json(r: &ErrorReport, hash: &str) -> String {
    let bins = |bs: &[dispad_core::eval::Bin]| -> Vec<serde_json::Value> {
        bs.iter()
            .map(|b| serde_json::json!({ "lo": b.lo, "hi": b.hi, "mae": b.mae, "count": b.count }))
            .collect()
    };
    let per: Vec<serde_json::Value> = r
        .per_placement
        .iter()
        .map(|p| serde_json::json!({ "eta_cm": p.placement.eta(), "beta_deg": p.placement.beta(), "mae": p.mae, "count": p.count }))
        .collect();
    let v = serde_json::json!({
        "config_hash": hash,
        "overall_mae": r.overall_mae,
        "samples": r.samples,
        "per_placement": per,
        "angle_bins": bins(&r.angle_bins),
        "velocity_bins": bins(&r.velocity_bins),
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn evaluate(
    ctx: &Context,
    model: &Path,
    data: &Path,
    out: &Path,
    split: &str,
    smooth: bool,
    json: bool,
) -> Result<(), Failure> {
    let ck = open_model(ctx, model)?;
    let ds = open_dataset(ctx, data)?;
    let pipeline = ctx.cfg.pipeline()?;
    let wanted: Option<Vec<Placement>> = match split {
        "all" => None,
        "test" => match ck.meta.get("test_placements") {
            Some(s) => Some(decode_placements(s)?),
            None => {
                log::warn!("model records no test placements; evaluating on every session");
                None
            }
        },
        other => return Err(Failure::Usage(format!("--split must be 'test' or 'all', got '{other}'"))),
    };
    let sessions: Vec<&Session> = ds
        .sessions
        .iter()
        .filter(|s| wanted.as_ref().is_none_or(|w| w.contains(&s.placement)))
        .collect();
    if sessions.is_empty() {
        return Err(Failure::Data(format!("no sessions in {} match the {split} placements", data.display())));
    }
    let prepared: Vec<Prepared> = sessions
        .iter()
        .map(|s| prepare_for(&ck, s, &pipeline))
        .collect::<Result<_, _>>()?;
    let kalman = ctx.cfg.kalman();
    let report = score(&ck.params, &prepared, &pipeline, smooth.then_some(&kalman))?;
    let hash = ctx.cfg.full_hash();
    fs::create_dir_all(out)?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    if json {
        files.insert("summary.json".into(), summary_json(&report, &hash));
    } else {
        let mut s = format!("# config_hash={hash}\n");
        let _ = writeln!(s, "overall_mae_deg {}", report.overall_mae);
        let _ = writeln!(s, "samples {}", report.samples);
        let _ = writeln!(s, "sessions {}", prepared.len());
        let _ = writeln!(s, "smoothed {smooth}");
        files.insert("summary.txt".into(), s);
    }
    let mut per = format!("# config_hash={hash}\neta_cm,beta_deg,mae,count\n");
    for p in &report.per_placement {
        let _ = writeln!(per, "{},{},{},{}", p.placement.eta(), p.placement.beta(), p.mae, p.count);
    }
    files.insert("per_placement.csv".into(), per);
    files.insert("angle_bins.csv".into(), bins_csv(&hash, &report.angle_bins));
    files.insert("velocity_bins.csv".into(), bins_csv(&hash, &report.velocity_bins));
    let mut outputs = Vec::new();
    for (name, body) in &files {
        fs::write(out.join(name), body)?;
        outputs.push((name.clone(), sha256_hex(body.as_bytes())));
    }
    write_provenance(
        &out.join("evaluate.provenance"),
        "evaluate",
        ctx,
        &hash,
        &[(name_of(model), file_digest(model)?), (name_of(data), dataset_digest(data)?)],
        &outputs,
    )?;
    println!("mae {:.3} deg over {} samples; wrote {}", report.overall_mae, report.samples, out.display());
    Ok(())
}
