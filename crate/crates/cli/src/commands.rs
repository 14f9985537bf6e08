//! Subcommand implementations.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use sparq_core::imaging::load_gray;
use sparq_core::ksvd::{save_dictionary, DictionaryHeader};
use sparq_core::metric::psnr;
use sparq_core::{evaluate, sparq_index, train_reference_dictionary, Dictionary, PreparedReference, ScorePairs, SparqParams};

use crate::args::{Cli, Command, EvaluateArgs, Format, ParamArgs, ScoreArgs, SweepArgs, TrainArgs};
use crate::cache::{load_checked, DictionaryCache, Origin};
use crate::manifest::DatasetManifest;
use crate::report::{self, sig6, EvaluationReport, GroupRow, RecordRow, SweepPoint};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some records or images failed; the rest were processed.
    Partial,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Maps a failure to its exit status: unreadable or unwritable files give
/// [`EXIT_IO`], everything else [`EXIT_USAGE`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use sparq_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            if matches!(e, E::Io(_) | E::Image { .. } | E::MalformedFile(_) | E::InvalidDictionary(_)) {
                return EXIT_IO;
            }
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            if e.is_io_error() {
                return EXIT_IO;
            }
        }
    }
    EXIT_USAGE
}

pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> anyhow::Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("starting worker threads")?;
    let cache = DictionaryCache::new(cli.cache_dir.clone())?;
    let format = cli.format;
    pool.install(|| match cli.command {
        Command::Train(a) => train(a, &cache, format, out),
        Command::Score(a) => score(a, &cache, format, out),
        Command::Evaluate(a) => evaluate_manifest(a, &cache, format, out),
        Command::Sweep(a) => sweep(a, &cache, format, out),
    })
}

fn error_text(e: &anyhow::Error) -> String {
    format!("{e:#}")
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Debug, Serialize)]
struct TrainRow {
    reference: String,
    key: Option<String>,
    status: &'static str,
    path: Option<String>,
    error: Option<String>,
}

fn train(args: TrainArgs, cache: &DictionaryCache, format: Option<Format>, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let config = args.params.train();
    args.params.sparq().validate()?;
    let images = match &args.manifest {
        Some(m) => DatasetManifest::load(m, Default::default())?.references(),
        None => args.images.clone(),
    };
    if let Some(output) = &args.output {
        if images.len() != 1 {
            bail!("--output takes exactly one image, got {}", images.len());
        }
        let img = load_gray(&images[0])?;
        let trained = train_reference_dictionary(&img, &config)?;
        let header = DictionaryHeader {
            tau: u32::try_from(config.learn.sparsity)?,
            patch_side: u32::try_from(config.learn.patch_side)?,
        };
        save_dictionary(output, &trained.dictionary, header)
            .with_context(|| format!("writing {}", output.display()))?;
        let row = TrainRow {
            reference: display(&images[0]),
            key: None,
            status: "trained",
            path: Some(display(output)),
            error: None,
        };
        write_train_rows(out, &[row], format)?;
        return Ok(Outcome::Success);
    }
    if cache.dir().is_none() {
        bail!("train needs --cache-dir or --output");
    }
    let rows: Vec<TrainRow> = images
        .par_iter()
        .map(|path| {
            let result = load_gray(path)
                .map_err(anyhow::Error::from)
                .and_then(|img| cache.get_or_train(&img, &config));
            match result {
                Ok((key, _, origin)) => TrainRow {
                    reference: display(path),
                    path: cache.path_for(&key).map(|p| display(&p)),
                    key: Some(key),
                    status: match origin {
                        Origin::Trained => "trained",
                        Origin::Cached => "cached",
                    },
                    error: None,
                },
                Err(e) => {
                    log::error!("{}: {}", path.display(), error_text(&e));
                    TrainRow {
                        reference: display(path),
                        key: None,
                        status: "failed",
                        path: None,
                        error: Some(error_text(&e)),
                    }
                }
            }
        })
        .collect();
    write_train_rows(out, &rows, format)?;
    Ok(if rows.iter().any(|r| r.error.is_some()) {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

fn write_train_rows(out: &mut dyn Write, rows: &[TrainRow], format: Option<Format>) -> anyhow::Result<()> {
    if format == Some(Format::Json) {
        serde_json::to_writer_pretty(&mut *out, rows)?;
        writeln!(out)?;
        return Ok(());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["reference", "key", "status", "path", "error"])?;
    for r in rows {
        w.write_record([
            r.reference.as_str(),
            r.key.as_deref().unwrap_or(""),
            r.status,
            r.path.as_deref().unwrap_or(""),
            r.error.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dictionary_for(
    reference: &sparq_core::GrayImage,
    explicit: Option<&Path>,
    params: &ParamArgs,
    cache: &DictionaryCache,
) -> anyhow::Result<std::sync::Arc<Dictionary>> {
    match explicit {
        Some(p) => Ok(std::sync::Arc::new(load_checked(p, params.patch_side)?)),
        None => Ok(cache.get_or_train(reference, &params.train())?.1),
    }
}

fn score(args: ScoreArgs, cache: &DictionaryCache, format: Option<Format>, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let params = args.params.sparq();
    params.validate()?;
    let reference = load_gray(&args.reference)?;
    let distorted = load_gray(&args.distorted)?;
    if !reference.same_shape(&distorted) {
        bail!(
            "image sizes differ: reference is {}x{}, distorted is {}x{}",
            reference.rows(),
            reference.cols(),
            distorted.rows(),
            distorted.cols()
        );
    }
    let dict = dictionary_for(&reference, args.dictionary.as_deref(), &args.params, cache)?;
    let result = sparq_index(&reference, &distorted, &dict, &params)?;
    let psnr = if args.with_psnr {
        Some(psnr(&reference, &distorted)?)
    } else {
        None
    };
    match format {
        None => {
            writeln!(out, "{:.6}", result.sparq)?;
            if let Some(p) = psnr {
                writeln!(out, "{p:.6}")?;
            }
        }
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(out);
            let mut header = vec!["reference", "distorted", "sparq"];
            let mut row = vec![display(&args.reference), display(&args.distorted), format!("{:.6}", result.sparq)];
            if let Some(p) = psnr {
                header.push("psnr");
                row.push(sig6(p));
            }
            w.write_record(header)?;
            w.write_record(row)?;
            w.flush()?;
        }
        Some(Format::Json) => {
            #[derive(Serialize)]
            struct Detail<'a> {
                reference: String,
                distorted: String,
                psnr: Option<f64>,
                #[serde(flatten)]
                result: &'a sparq_core::QualityResult,
            }
            let detail = Detail {
                reference: display(&args.reference),
                distorted: display(&args.distorted),
                psnr,
                result: &result,
            };
            serde_json::to_writer_pretty(&mut *out, &detail)?;
            writeln!(out)?;
        }
    }
    Ok(Outcome::Success)
}

/// Scores of one record: SPARQ at each requested fraction, optional PSNR.
#[derive(Debug, Clone)]
struct Scored {
    sparq: Vec<f64>,
    psnr: Option<f64>,
}

/// Scores every record, preparing each reference once. `fractions` must not
/// exceed `params.salient_fraction`.
fn score_records(
    manifest: &DatasetManifest,
    params: &ParamArgs,
    fractions: &[f64],
    with_psnr: bool,
    cache: &DictionaryCache,
) -> Vec<Result<Scored, String>> {
    let sparq = params.sparq();
    let mut by_reference: HashMap<&PathBuf, Vec<usize>> = HashMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_reference.entry(&r.reference).or_default().push(i);
    }
    let references = manifest.references();
    let mut scored: Vec<(usize, Result<Scored, String>)> = references
        .par_iter()
        .flat_map_iter(|reference| {
            let indices = &by_reference[reference];
            let prepared = load_gray(reference)
                .map_err(anyhow::Error::from)
                .and_then(|img| {
                    let dict = cache.get_or_train(&img, &params.train())?.1;
                    Ok((img, dict))
                });
            let results: Vec<_> = match prepared {
                Err(e) => {
                    log::error!("{}: {}", reference.display(), error_text(&e));
                    indices.iter().map(|&i| (i, Err(error_text(&e)))).collect()
                }
                Ok((img, dict)) => match PreparedReference::new(&img, &dict, &sparq) {
                    Err(e) => {
                        let e = anyhow::Error::from(e);
                        indices.iter().map(|&i| (i, Err(error_text(&e)))).collect()
                    }
                    Ok(prep) => indices
                        .iter()
                        .map(|&i| {
                            let record = &manifest.records[i];
                            let r = score_one(&prep, &img, &record.distorted, fractions, with_psnr);
                            if let Err(e) = &r {
                                log::error!("{}: {}", record.distorted.display(), error_text(e));
                            }
                            (i, r.map_err(|e| error_text(&e)))
                        })
                        .collect(),
                },
            };
            results.into_iter()
        })
        .collect();
    scored.sort_by_key(|(i, _)| *i);
    scored.into_iter().map(|(_, r)| r).collect()
}

fn score_one(
    prep: &PreparedReference<'_>,
    reference: &sparq_core::GrayImage,
    distorted: &Path,
    fractions: &[f64],
    with_psnr: bool,
) -> anyhow::Result<Scored> {
    let img = load_gray(distorted)?;
    let sparq = prep.score_fractions(&img, fractions)?;
    let psnr = if with_psnr { Some(psnr(reference, &img)?) } else { None };
    Ok(Scored { sparq, psnr })
}

fn group_row(metric: &'static str, tag: Option<String>, objective: Vec<f64>, subjective: Vec<f64>) -> GroupRow {
    let n = objective.len();
    match ScorePairs::new(objective, subjective).and_then(|p| evaluate(&p)) {
        Ok(stats) => GroupRow {
            metric,
            tag,
            n,
            stats: Some(stats),
            error: None,
        },
        Err(e) => GroupRow {
            metric,
            tag,
            n,
            stats: None,
            error: Some(e.to_string()),
        },
    }
}

fn params_json(params: &ParamArgs) -> serde_json::Value {
    serde_json::json!({
        "patch_side": params.patch_side,
        "train_patches": params.train_patches,
        "atoms": params.atoms,
        "sparsity": params.sparsity,
        "iterations": params.iterations,
        "c": params.c,
        "salient_fraction": params.salient_fraction,
        "seed": params.seed,
    })
}

fn evaluate_manifest(
    args: EvaluateArgs,
    cache: &DictionaryCache,
    format: Option<Format>,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    args.params.sparq().validate()?;
    let manifest = DatasetManifest::load(&args.manifest, args.polarity)?;
    let results = score_records(&manifest, &args.params, &[args.params.salient_fraction], args.with_psnr, cache);

    let records: Vec<RecordRow> = manifest
        .records
        .iter()
        .zip(&results)
        .map(|(r, s)| RecordRow {
            reference: display(&r.reference),
            distorted: display(&r.distorted),
            tag: r.tag.clone(),
            subjective: r.score,
            sparq: s.as_ref().ok().map(|s| s.sparq[0]),
            psnr: s.as_ref().ok().and_then(|s| s.psnr),
            error: s.as_ref().err().cloned(),
        })
        .collect();

    let mut metrics: Vec<(&'static str, fn(&Scored) -> f64)> = vec![("sparq", |s| s.sparq[0])];
    if args.with_psnr {
        metrics.push(("psnr", |s| s.psnr.expect("psnr requested")));
    }
    let mut groups = Vec::new();
    let mut pools: Vec<Option<String>> = vec![None];
    pools.extend(manifest.tags().into_iter().map(Some));
    for (name, metric) in &metrics {
        for tag in &pools {
            let (objective, subjective): (Vec<f64>, Vec<f64>) = manifest
                .records
                .iter()
                .zip(&results)
                .filter(|(r, _)| tag.as_ref().is_none_or(|t| &r.tag == t))
                .filter_map(|(r, s)| s.as_ref().ok().map(|s| (metric(s), manifest.oriented_score(r))))
                .unzip();
            groups.push(group_row(name, tag.clone(), objective, subjective));
        }
    }

    let report = EvaluationReport {
        dataset: manifest.name.clone(),
        polarity: manifest.polarity,
        params: params_json(&args.params),
        groups,
        records,
    };
    if let Some(path) = &args.records {
        let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        report::write_records_csv(std::io::BufWriter::new(file), &report.records)?;
    }
    report::write_evaluation(out, &report, format.unwrap_or(Format::Csv))?;

    if let Some(err) = &report.groups[0].error {
        bail!("overall statistics unavailable: {err}");
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} of {} records failed", results.len());
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Success)
}

/// Sorted, de-duplicated fractions; at least two are required.
pub fn sweep_fractions(requested: &[f64]) -> anyhow::Result<Vec<f64>> {
    for &f in requested {
        if !(f > 0.0 && f <= 1.0) {
            bail!("fraction {f} is outside (0, 1]");
        }
    }
    let mut fractions = requested.to_vec();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    if fractions.len() < requested.len() {
        log::warn!("dropped {} duplicate fraction(s)", requested.len() - fractions.len());
    }
    if fractions.len() < 2 {
        bail!("a sweep needs at least two distinct fractions");
    }
    Ok(fractions)
}

fn sweep(args: SweepArgs, cache: &DictionaryCache, format: Option<Format>, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let fractions = sweep_fractions(&args.fractions)?;
    let mut params = args.params.clone();
    params.salient_fraction = *fractions.last().expect("two fractions");
    SparqParams::validate(&params.sparq())?;
    let manifest = DatasetManifest::load(&args.manifest, args.polarity)?;
    let results = score_records(&manifest, &params, &fractions, false, cache);
    let ok: Vec<(&Scored, f64)> = manifest
        .records
        .iter()
        .zip(&results)
        .filter_map(|(r, s)| s.as_ref().ok().map(|s| (s, manifest.oriented_score(r))))
        .collect();
    let points: Vec<SweepPoint> = fractions
        .iter()
        .enumerate()
        .map(|(k, &fraction)| {
            let objective = ok.iter().map(|(s, _)| s.sparq[k]).collect();
            let subjective = ok.iter().map(|(_, y)| *y).collect();
            let srocc = ScorePairs::new(objective, subjective).and_then(|p| sparq_core::eval::srocc(&p));
            SweepPoint {
                fraction,
                n: ok.len(),
                srocc: srocc.as_ref().ok().copied(),
                error: srocc.err().map(|e| e.to_string()),
            }
        })
        .collect();
    report::write_sweep(out, &manifest.name, &points, format.unwrap_or(Format::Csv))?;
    if points.iter().all(|p| p.srocc.is_none()) {
        bail!("no fraction produced a correlation: {}", points[0].error.as_deref().unwrap_or("unknown"));
    }
    Ok(if ok.len() < results.len() {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}
