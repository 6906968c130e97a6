use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmncd_core::agents::Model;
use mmncd_core::datagen::{drop_modalities, generate_dataset, load_dataset, save_dataset, Dataset, LabelState};
use mmncd_core::evalkit::{embeddings_csv, fmt_sig6, pca_project, pr_curve_csv, EvalError, Evaluator};
use mmncd_core::stlclu::{calibrate_with, dbscan_with, relax, ClusterParams, PseudoLabelStore};
use mmncd_core::trainer::{cluster_csv, iterations_csv, metrics_csv, EpochEval, Trainer};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::RunDir;

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn snapshot(dir: &mut RunDir, config: &RunConfig) -> Result<(), CliError> {
    dir.write("config.toml", config.to_toml().as_bytes())?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| match e {
        mmncd_core::datagen::DataError::Io(io) => CliError::Io(format!("cannot read {}: {io}", path.display())),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })
}

pub fn generate(root: &Path, config: &RunConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let mut ds = generate_dataset(&config.generator())?;
    if config.drop_probability > 0.0 {
        ds = drop_modalities(&ds, config.drop_probability, config.seed)?;
    }
    let mut dir = RunDir::new(root, "generate", "", config, &[])?;
    dir.time("generate", seconds_since(start));
    snapshot(&mut dir, config)?;
    let target = out.map_or_else(|| dir.path().join("dataset.ds"), Path::to_path_buf);
    std::fs::create_dir_all(dir.path())?;
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, &target)?;
    dir.record("dataset", &target);
    dir.finish()
}

pub struct TrainOptions<'a> {
    pub data: &'a Path,
    pub resume: Option<&'a Path>,
    pub stop_after: Option<u32>,
}

pub fn train(root: &Path, config: &RunConfig, opts: &TrainOptions<'_>) -> Result<PathBuf, CliError> {
    let ds = read_dataset(opts.data)?;
    let view = ds.training_view();
    let wanted = config.training();
    let mut trainer = match opts.resume {
        Some(ckpt) => {
            let t = Trainer::load_checkpoint(ckpt, &view)?;
            if t.config.digest() != wanted.digest() {
                return Err(CliError::Incompatible(format!(
                    "{} was written with a different training config",
                    ckpt.display()
                )));
            }
            t
        }
        None => Trainer::new(wanted, &view)?,
    };
    let mut inputs = vec![opts.data];
    inputs.extend(opts.resume);
    let options = format!("resume={} stop_after={:?}", opts.resume.is_some(), opts.stop_after);
    let mut dir = RunDir::new(root, "train", &options, config, &inputs)?;
    let start = Instant::now();
    while !trainer.is_finished() {
        trainer.run_epoch(&view, None)?;
        if Some(trainer.epochs_done()) == opts.stop_after {
            break;
        }
    }
    dir.time("train", seconds_since(start));
    snapshot(&mut dir, config)?;
    let ckpt = dir.path().join("checkpoint.ckpt");
    std::fs::create_dir_all(dir.path())?;
    trainer.save_checkpoint(&ckpt)?;
    dir.record("checkpoint", &ckpt);
    dir.write("metrics.csv", metrics_csv(trainer.history()).as_bytes())?;
    dir.write("iterations.csv", iterations_csv(trainer.iterations()).as_bytes())?;
    dir.write("clusters.csv", cluster_csv(trainer.history()).as_bytes())?;
    dir.finish()
}

pub const SUMMARY_HEADER: &str = "map,nn,ndcg,anmrr,ncd_accuracy";

pub fn eval(
    root: &Path,
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    drop: &[usize],
) -> Result<PathBuf, CliError> {
    let mut ds = read_dataset(data)?;
    for &j in drop {
        ds = ds.without_modality(j)?;
    }
    let trainer = Trainer::load_checkpoint(checkpoint, &ds.training_view())?;
    let mut dir = RunDir::new(root, "eval", &format!("drop={drop:?}"), config, &[checkpoint, data])?;
    let start = Instant::now();
    let evaluator = Evaluator::new(&ds, config.queries_per_class, config.seed)?;
    let report = evaluator.report(&trainer.model, trainer.pseudo_labels())?;
    dir.time("eval", seconds_since(start));
    snapshot(&mut dir, config)?;

    let r = &report.retrieval;
    let summary = format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{}\n",
        fmt_sig6(r.map),
        fmt_sig6(r.nn),
        fmt_sig6(r.ndcg),
        fmt_sig6(r.anmrr),
        fmt_sig6(report.ncd_accuracy)
    );
    dir.write("summary.csv", summary.as_bytes())?;
    dir.write("pr_curve.csv", pr_curve_csv(&report.pr_curve).as_bytes())?;

    // labels a downstream clustering run may calibrate on
    let known: Vec<Option<usize>> = ds
        .samples()
        .iter()
        .map(|s| match s.label {
            LabelState::GroundTruth(c) => Some(c),
            _ => None,
        })
        .collect();
    dir.write("embeddings.csv", embeddings_csv(&report.ids, &report.actions, &known)?.as_bytes())?;

    let pca = pca_project(&report.actions, 2)?;
    if let Some(w) = &pca.rank_warning {
        eprintln!("warning: {w}");
    }
    let classes: Vec<Option<usize>> = report.classes.iter().map(|&c| Some(c)).collect();
    dir.write("embeddings_pca.csv", embeddings_csv(&report.ids, &pca.coords, &classes)?.as_bytes())?;
    dir.finish()
}

/// Rows of an embeddings CSV: `id,c0,…,label`, label -1 for none.
#[derive(Debug)]
pub struct Embeddings {
    pub ids: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Option<usize>>,
}

pub fn parse_embeddings(text: &str) -> Result<Embeddings, CliError> {
    let bad = |line: usize, msg: String| CliError::Usage(format!("embeddings line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
        return Err(bad(1, format!("expected header id,c0,...,label, got {header:?}")));
    }
    let dims = cols.len() - 2;
    let mut out = Embeddings {
        ids: Vec::new(),
        points: Vec::new(),
        labels: Vec::new(),
    };
    for (i, line) in lines {
        let n = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dims + 2 {
            return Err(bad(n, format!("expected {} fields, got {}", dims + 2, fields.len())));
        }
        let id = fields[0]
            .parse()
            .map_err(|_| bad(n, format!("bad id {:?}", fields[0])))?;
        let point = fields[1..=dims]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(n, "coordinates must be finite numbers".into()))?;
        let label: i64 = fields[dims + 1]
            .parse()
            .map_err(|_| bad(n, format!("bad label {:?}", fields[dims + 1])))?;
        out.ids.push(id);
        out.points.push(point);
        out.labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(bad(n, format!("label {l} is neither -1 nor a class id"))),
        });
    }
    Ok(out)
}

pub struct ClusterOptions<'a> {
    pub embeddings: &'a Path,
    pub params: Option<ClusterParams>,
    pub epochs: u32,
}

pub fn cluster(root: &Path, config: &RunConfig, opts: &ClusterOptions<'_>) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(opts.embeddings)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", opts.embeddings.display())))?;
    let emb = parse_embeddings(&text)?;
    let base = match opts.params {
        Some(p) => p,
        None => {
            let (points, labels): (Vec<Vec<f64>>, Vec<usize>) = emb
                .points
                .iter()
                .zip(&emb.labels)
                .filter_map(|(p, l)| l.map(|l| (p.clone(), l)))
                .unzip();
            if labels.is_empty() {
                return Err(CliError::Usage(
                    "no labeled rows to calibrate on; pass --eps and --min-pts".into(),
                ));
            }
            calibrate_with(&points, &labels, config.metric)?
        }
    };
    let mut dir = RunDir::new(
        root,
        "cluster",
        &format!("params={:?} epochs={}", opts.params, opts.epochs),
        config,
        &[opts.embeddings],
    )?;
    snapshot(&mut dir, config)?;
    let start = Instant::now();
    let schedule = config.schedule();
    let mut stats = String::from("epoch,eps,min_pts,clusters,noise\n");
    for epoch in 0..opts.epochs {
        let params = relax(base, &schedule, epoch);
        let assignment = dbscan_with(&emb.points, params, config.metric);
        let mut csv = String::from("id,label\n");
        for (id, a) in emb.ids.iter().zip(&assignment) {
            match a {
                Some(c) => writeln!(csv, "{id},{c}").unwrap(),
                None => writeln!(csv, "{id},-1").unwrap(),
            }
        }
        dir.write(&format!("assignments_e{}.csv", epoch + 1), csv.as_bytes())?;
        let clusters = assignment.iter().flatten().max().map_or(0, |m| m + 1);
        let noise = assignment.iter().filter(|a| a.is_none()).count();
        writeln!(
            stats,
            "{},{},{},{clusters},{noise}",
            epoch + 1,
            fmt_sig6(params.eps),
            params.min_pts
        )
        .unwrap();
    }
    dir.time("cluster", seconds_since(start));
    dir.write("cluster_stats.csv", stats.as_bytes())?;
    dir.finish()
}

/// The loss/pseudo-labeling grid: cross-entropy always on, the other three
/// components toggled.
pub fn ablation_grid() -> Vec<(bool, bool, bool)> {
    let mut rows = Vec::new();
    for td in [false, true] {
        for ss in [false, true] {
            for stlclu in [false, true] {
                rows.push((td, ss, stlclu));
            }
        }
    }
    rows
}

pub struct AblateOptions<'a> {
    pub data: &'a Path,
    pub seeds: &'a [u64],
    /// Training epochs (1-based) at which retrieval mAP is reported.
    pub milestones: &'a [u32],
}

pub fn ablate(root: &Path, config: &RunConfig, opts: &AblateOptions<'_>) -> Result<PathBuf, CliError> {
    let ds = read_dataset(opts.data)?;
    let view = ds.training_view();
    if let Some(&m) = opts.milestones.iter().find(|&&m| m == 0 || m > config.train_epochs) {
        return Err(CliError::Usage(format!(
            "milestone {m} outside training epochs 1..={}",
            config.train_epochs
        )));
    }
    let mut dir = RunDir::new(
        root,
        "ablate",
        &format!("seeds={:?} milestones={:?}", opts.seeds, opts.milestones),
        config,
        &[opts.data],
    )?;
    let start = Instant::now();
    let mut header = String::from("ce,td,ss,stlclu,seed");
    for m in opts.milestones {
        write!(header, ",map_e{m}").unwrap();
    }
    header.push_str(",final_map,final_ncd_accuracy\n");
    let mut rows = header.clone();
    let mut means = header.replace(",seed", "");
    for (td, ss, stlclu) in ablation_grid() {
        let mut sums = vec![0.0; opts.milestones.len() + 2];
        for &seed in opts.seeds {
            let mut cfg = config.clone();
            cfg.seed = seed;
            cfg.ce = true;
            cfg.td = td;
            cfg.ss = ss;
            cfg.stlclu = stlclu;
            let evaluator = Evaluator::new(&ds, cfg.queries_per_class, seed)?;
            let mut trainer = Trainer::new(cfg.training(), &view)?;
            let mut observer =
                |m: &Model, s: &PseudoLabelStore| -> Result<EpochEval, EvalError> { evaluator.evaluate(m, s) };
            trainer.train(&view, Some(&mut observer))?;
            let history = trainer.history();
            let eval_at = |index: usize| {
                history
                    .get(index)
                    .and_then(|r| r.eval)
                    .ok_or_else(|| CliError::Internal(format!("no evaluation recorded for epoch {}", index + 1)))
            };
            let mut values = Vec::with_capacity(opts.milestones.len() + 2);
            for &m in opts.milestones {
                values.push(eval_at((cfg.pretrain_epochs + m - 1) as usize)?.map);
            }
            let last = eval_at(history.len() - 1)?;
            values.push(last.map);
            values.push(last.ncd_accuracy);
            let flag = |b: bool| u8::from(b);
            write!(rows, "1,{},{},{},{seed}", flag(td), flag(ss), flag(stlclu)).unwrap();
            for (s, v) in sums.iter_mut().zip(&values) {
                *s += v;
                write!(rows, ",{}", fmt_sig6(*v)).unwrap();
            }
            rows.push('\n');
        }
        write!(means, "1,{},{},{}", u8::from(td), u8::from(ss), u8::from(stlclu)).unwrap();
        for s in sums {
            write!(means, ",{}", fmt_sig6(s / opts.seeds.len() as f64)).unwrap();
        }
        means.push('\n');
    }
    dir.time("ablate", seconds_since(start));
    snapshot(&mut dir, config)?;
    dir.write("ablation.csv", rows.as_bytes())?;
    dir.write("ablation_mean.csv", means.as_bytes())?;
    dir.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_parse_noise_and_labels() {
        let e = parse_embeddings("id,c0,c1,label\n0,1,2,3\n5,0.5,-1,-1\n").unwrap();
        assert_eq!(e.ids, vec![0, 5]);
        assert_eq!(e.points[1], vec![0.5, -1.0]);
        assert_eq!(e.labels, vec![Some(3), None]);
    }

    #[test]
    fn malformed_embeddings_name_the_line() {
        for bad in ["", "x,c0,label\n", "id,c0,label\n0,abc,1\n", "id,c0,label\n0,1\n", "id,c0,label\n0,1,-3\n"] {
            let err = parse_embeddings(bad).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{bad:?}");
        }
        let err = parse_embeddings("id,c0,label\n0,1,1\n1,nan,1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn grid_has_eight_rows_with_distinct_switches() {
        let g = ablation_grid();
        assert_eq!(g.len(), 8);
        let unique: std::collections::BTreeSet<_> = g.iter().collect();
        assert_eq!(unique.len(), 8);
    }
}
