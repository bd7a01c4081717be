use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use qaware::degradation::{apply_plan, count_space, read_plan_manifest, sample_plan, write_plan_manifest, PlanRecord};
use qaware::eval::{export_bench, gen_corpus as make_corpus, gen_synthetic_bench};
use qaware::imgproc::{load_image, save_image};
use qaware::model::EncoderParams;
use qaware::train::{
    category_grid_variants, finetune as run_finetune, init_state, linear_probe, load_checkpoint, load_image_dir,
    negative_variants, pretrain as run_pretrain, run_ablation, strategy_variants, CategoryGrid, MetricsReport,
};
use qaware::RngStream;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{report as rep, CliError, Suite};

/// Writes the resolved config and appends a timestamped line to the
/// `run.log` sidecar, the only place wall-clock time is recorded.
fn start_run(cfg: &RunConfig, out: &Path, command: &str) -> Result<(), CliError> {
    cfg.write_to(out)?;
    let path = out.join("run.log");
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    writeln!(f, "{secs}\t{command}").map_err(|e| CliError::io(&path, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn degrade(cfg: &RunConfig, input: &Path, count: usize, replay: Option<&Path>, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "degrade")?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    let records: Vec<PlanRecord> = match replay {
        Some(manifest) => {
            let file = File::open(manifest).map_err(|e| CliError::io(manifest, e))?;
            let records = read_plan_manifest(BufReader::new(file))?;
            records
                .par_iter()
                .map(|r| {
                    let src = load_image(&input.join(&r.source))?;
                    save_image(&apply_plan(&r.plan, &src)?, &out.join(&r.output))
                })
                .collect::<qaware::Result<()>>()?;
            records
        }
        None => {
            let sources = load_image_dir(input)?;
            let space = cfg.train.effective_space();
            let seed = cfg.train.seed;
            let jobs: Vec<(usize, usize)> = (0..sources.len()).flat_map(|i| (0..count).map(move |k| (i, k))).collect();
            jobs.par_iter()
                .map(|&(i, k)| {
                    let (path, img) = &sources[i];
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                    let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
                    let rng = RngStream::new(seed).at("degrade", i as u64).derive_index(k as u64);
                    let plan = sample_plan(&rng, &space)?;
                    let output = format!("images/{stem}_{k:03}.png");
                    save_image(&apply_plan(&plan, img)?, &out.join(&output))?;
                    Ok(PlanRecord {
                        id: (i * count + k) as u64,
                        source: name,
                        output,
                        seed,
                        plan,
                    })
                })
                .collect::<qaware::Result<Vec<_>>>()?
        }
    };
    let path = out.join("manifest.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
    write_plan_manifest(&mut w, &records).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(format!("wrote {} degraded images and {}\n", records.len(), path.display()))
}

/// Exact count plus a note on the commonly quoted approximation.
pub fn count_space_text(num_ops: u32, max_order: u32) -> Result<String, CliError> {
    let n = count_space(num_ops, max_order)?;
    let mut s = format!("count_space({num_ops}, {max_order}) = {n}\n");
    if (num_ops, max_order) == (9, 2) {
        let _ = writeln!(
            s,
            "note: this space is often described as holding about 2x10^7 compositions; \
             the exact count is {n} (about {:.1}x10^6), an order of magnitude fewer",
            n as f64 / 1e6
        );
    }
    Ok(s)
}

pub fn gen_bench(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "gen-bench")?;
    let set = gen_synthetic_bench(&cfg.bench.spec, cfg.bench.n_base, cfg.bench.levels)?;
    let manifest = export_bench(&set, out)?;
    Ok(format!("wrote {} items, manifest {}\n", set.len(), manifest.display()))
}

pub fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "gen-corpus")?;
    let c = &cfg.train.corpus;
    let images = make_corpus(c.seed, c.count, c.size);
    let dir = out.join("corpus");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| save_image(img, &dir.join(format!("{i:05}.png"))))
        .collect::<qaware::Result<()>>()?;
    Ok(format!("wrote {} images to {}\n", images.len(), dir.display()))
}

pub fn pretrain(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "pretrain")?;
    let (state, trace) = run_pretrain(&cfg.train, Some(out))?;
    let last: Vec<f64> = trace.iter().filter(|r| r.epoch + 1 == state.epochs_done).map(|r| r.loss).collect();
    let mean = last.iter().sum::<f64>() / last.len().max(1) as f64;
    Ok(format!(
        "pretrained {} epochs ({} steps); last-epoch mean loss {mean:.4}; checkpoint {}\n",
        state.epochs_done,
        state.step,
        out.join("final.ckpt").display()
    ))
}

fn encoder_for(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EncoderParams, CliError> {
    Ok(match checkpoint {
        Some(p) => load_checkpoint(p)?.encoder.query,
        None => init_state(&cfg.train)?.encoder.query,
    })
}

fn metrics_text(name: &str, m: &MetricsReport) -> String {
    let mut s = String::from("seed\tsrcc\tplcc\n");
    for r in &m.per_seed {
        let _ = writeln!(s, "{}\t{:.4}\t{:.4}", r.seed, r.srcc, r.plcc);
    }
    let _ = writeln!(s, "{name}: median SRCC {:.4}, median PLCC {:.4}", m.median_srcc, m.median_plcc);
    s
}

pub fn probe(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "probe")?;
    let params = encoder_for(cfg, checkpoint)?;
    let report = linear_probe(&params, &cfg.bench.load()?, &cfg.probe)?;
    write_json(&report, &out.join("probe_metrics.json"))?;
    Ok(metrics_text("linear probe", &report))
}

pub fn finetune(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "finetune")?;
    let params = encoder_for(cfg, checkpoint)?;
    let report = run_finetune(&params, &cfg.bench.load()?, &cfg.finetune)?;
    write_json(&report, &out.join("finetune_metrics.json"))?;
    Ok(metrics_text("fine-tune", &report))
}

pub fn ablate(cfg: &RunConfig, suite: Suite, out: &Path) -> Result<String, CliError> {
    start_run(cfg, out, "ablate")?;
    let base = &cfg.train;
    let mut variants = Vec::new();
    if matches!(suite, Suite::Negatives | Suite::All) {
        variants.extend(negative_variants(base));
    }
    if matches!(suite, Suite::Strategy | Suite::All) {
        variants.extend(strategy_variants(base));
    }
    if matches!(suite, Suite::Grid | Suite::All) {
        variants.extend(category_grid_variants(base));
    }
    let results = run_ablation(&variants, &cfg.bench.load()?, &cfg.probe, Some(out))?;
    let mut s = String::from("variant\tmedian_srcc\tmedian_plcc\n");
    for r in &results {
        let _ = writeln!(s, "{}\t{:.4}\t{:.4}", r.name, r.probe.median_srcc, r.probe.median_plcc);
    }
    if matches!(suite, Suite::Grid | Suite::All) {
        let table = CategoryGrid::from_results(&results).to_table();
        let path = out.join("grid.tsv");
        fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
        s.push_str(&table);
    }
    Ok(s)
}

pub fn report(run: &Path, out: &Path) -> Result<String, CliError> {
    let res = rep::report(run, out)?;
    let mut s = res.summary;
    for f in &res.files {
        let _ = writeln!(s, "wrote {}", f.display());
    }
    Ok(s)
}
