use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use slogan_core::datasets::{load_csv, LabeledDataset, ScaleMode};
use slogan_core::metrics::{accuracy, assign_rows, evaluate, EvalReport, Matching, NmiNorm};
use slogan_core::numerics::{Mat, Rng};
use slogan_core::stein::verify::{self, Fault, VerifyConfig};
use slogan_core::trainer::{continue_training, manipulate_attributes, Observer, Quiet, StepReport, TrainState};
use slogan_core::Error;

use crate::config::{load_verify_config, RunConfig};
use crate::error::CliError;
use crate::svg::{scatter, Scatter};

/// Samples per component drawn for the scatter plot.
const PLOT_SAMPLES: usize = 250;

fn load_state(path: &Path) -> Result<TrainState, CliError> {
    TrainState::load_json(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step}.json"))
}

struct RunWriter {
    dir: PathBuf,
    history: BufWriter<File>,
}

impl Observer for RunWriter {
    fn on_history(&mut self, report: &StepReport) -> slogan_core::Result<()> {
        serde_json::to_writer(&mut self.history, report)?;
        self.history.write_all(b"\n")?;
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> slogan_core::Result<()> {
        state.save_json(&checkpoint_path(&self.dir, state.step))
    }
}

fn summary(r: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let pi: Vec<String> = r.pi.iter().map(|p| format!("{p:.3}")).collect();
    format!(
        "ari {} nmi {} fid {:.4} icfid {} pi [{}]",
        opt(r.ari),
        opt(r.nmi),
        r.fid,
        opt(r.icfid),
        pi.join(" ")
    )
}

fn component_samples(state: &TrainState, n: usize, rng: &mut Rng) -> Result<Vec<Mat>, CliError> {
    (0..state.prior.k())
        .map(|c| {
            let z = state.prior.sample_component(c, n, rng)?;
            Ok(state.generate(&Mat::from_rows(&z)?)?)
        })
        .collect()
}

fn plot(state: &TrainState, real: Option<&Mat>, seed: u64) -> Result<String, CliError> {
    let mut rng = Rng::new(seed);
    let comps = component_samples(state, PLOT_SAMPLES, &mut rng)?;
    let means = state.generate_means()?;
    Ok(scatter(&Scatter { real, components: &comps, means: Some(&means) }))
}

pub fn train(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let ds = cfg.load_dataset(config_path)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &cfg)?;

    let mut state = TrainState::new(cfg.train.clone(), ds.dim())?;
    let mut writer = RunWriter { dir: dir.clone(), history: BufWriter::new(File::create(dir.join("history.jsonl"))?) };
    continue_training(&mut state, &ds, &mut writer)?;
    writer.history.flush()?;
    let last = checkpoint_path(&dir, state.step);
    if !last.exists() {
        state.save_json(&last)?;
    }

    let report = evaluate(&state, &ds, &cfg.eval)?;
    write_json(&dir.join("eval.json"), &report)?;
    if ds.dim() == 2 {
        fs::write(dir.join("scatter.svg"), plot(&state, Some(&ds.x), cfg.seed)?)?;
    }
    println!("step {} {}", state.step, summary(&report));
    Ok(())
}

pub struct EvalArgs {
    pub out: Option<PathBuf>,
    pub n_gen: Option<usize>,
    pub print_assignment: bool,
    pub matching: Option<Matching>,
    pub nmi: Option<NmiNorm>,
}

pub fn eval(checkpoint: &Path, config_path: &Path, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let state = load_state(checkpoint)?;
    let ds = cfg.load_dataset(config_path)?;
    if ds.dim() != state.data_dim {
        return Err(Error::DimMismatch(format!("dataset has {} columns, checkpoint expects {}", ds.dim(), state.data_dim)).into());
    }
    let mut opts = cfg.eval;
    if let Some(n) = args.n_gen {
        opts.n_gen_per_cluster = n;
    }
    if let Some(m) = args.matching {
        opts.matching = m;
    }
    if let Some(n) = args.nmi {
        opts.nmi = n;
    }
    let report = evaluate(&state, &ds, &opts)?;
    let out = args.out.clone().unwrap_or_else(|| checkpoint.with_file_name("eval.json"));
    write_json(&out, &report)?;
    println!("{}", summary(&report));
    if args.print_assignment {
        for (class, cluster) in &report.assignment {
            println!("class {class} -> component {cluster}");
        }
    }
    Ok(())
}

enum Which {
    One(usize),
    All,
    Mix,
}

fn parse_component(s: &str, k: usize) -> Result<Which, CliError> {
    match s {
        "all" => Ok(Which::All),
        "mix" => Ok(Which::Mix),
        _ => {
            let c: usize =
                s.parse().map_err(|_| CliError::User(format!("component must be an index, `all` or `mix`, got {s:?}")))?;
            if c >= k {
                return Err(Error::BadComponent { component: c, k }.into());
            }
            Ok(Which::One(c))
        }
    }
}

fn write_samples(path: &Path, rows: &[(Vec<f64>, usize)], dim: usize) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..dim).map(|j| format!("x{j}")).chain(["component".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (x, c) in rows {
        let vals: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{c}", vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate(
    checkpoint: &Path,
    component: &str,
    n: usize,
    means: bool,
    seed: u64,
    out: &Path,
    svg: Option<&Path>,
) -> Result<(), CliError> {
    let state = load_state(checkpoint)?;
    let k = state.prior.k();
    let which = parse_component(component, k)?;
    if n == 0 && !means {
        return Err(CliError::User("n must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    if means {
        let g = state.generate_means()?;
        let keep: Vec<usize> = match which {
            Which::One(c) => vec![c],
            _ => (0..k).collect(),
        };
        rows.extend(keep.into_iter().map(|c| (g.row(c).to_vec(), c)));
    } else {
        match which {
            Which::One(c) => {
                let z = state.prior.sample_component(c, n, &mut rng)?;
                rows.extend(state.generate(&Mat::from_rows(&z)?)?.row_vecs().into_iter().map(|x| (x, c)));
            }
            Which::All => {
                for (c, m) in component_samples(&state, n, &mut rng)?.into_iter().enumerate() {
                    rows.extend(m.row_vecs().into_iter().map(|x| (x, c)));
                }
            }
            Which::Mix => {
                let pi = state.prior.pi();
                let mut comps = Vec::with_capacity(n);
                let mut z = Vec::with_capacity(n);
                for _ in 0..n {
                    let c = rng.categorical(&pi);
                    comps.push(c);
                    z.push(state.prior.sample_from(c, &mut rng));
                }
                let x = state.generate(&Mat::from_rows(&z)?)?;
                rows.extend(x.row_vecs().into_iter().zip(comps));
            }
        }
    }
    write_samples(out, &rows, state.data_dim)?;
    if let Some(path) = svg {
        if state.data_dim != 2 {
            return Err(CliError::User(format!("scatter plots need 2-dimensional data, model has {}", state.data_dim)));
        }
        fs::write(path, plot(&state, None, seed)?)?;
    }
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TargetReport {
    component: usize,
    probes: usize,
    accuracy_before: f64,
    accuracy_after: f64,
}

#[derive(Serialize)]
struct ManipulationReport {
    steps: u64,
    targets: Vec<TargetReport>,
    probe_loss_first: Option<f64>,
    probe_loss_last: Option<f64>,
}

fn load_probes(spec: &str, k: usize, ds: &LabeledDataset) -> Result<(usize, Mat), CliError> {
    let (c, path) = spec
        .split_once('=')
        .ok_or_else(|| CliError::User(format!("probe must look like COMPONENT=PATH, got {spec:?}")))?;
    let c: usize = c.trim().parse().map_err(|_| CliError::User(format!("bad component in probe {spec:?}")))?;
    if c >= k {
        return Err(Error::BadComponent { component: c, k }.into());
    }
    let path = Path::new(path);
    let raw = load_csv(path, false, ScaleMode::None).map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
    if raw.dim() != ds.dim() {
        return Err(Error::DimMismatch(format!("{}: probes have {} columns, data has {}", path.display(), raw.dim(), ds.dim())).into());
    }
    let mut x = raw.x;
    ds.scaling.apply(&mut x);
    Ok((c, x))
}

fn hit_rate(state: &TrainState, x: &Mat, c: usize) -> Result<f64, CliError> {
    let pred = assign_rows(state, x)?;
    Ok(accuracy(&pred, &vec![c; pred.len()])?)
}

pub fn manipulate(
    checkpoint: &Path,
    config_path: &Path,
    probes: &[String],
    steps: Option<u64>,
    mixup_rounds: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let mut state = load_state(checkpoint)?;
    let ds = cfg.load_dataset(config_path)?;
    if ds.dim() != state.data_dim {
        return Err(Error::DimMismatch(format!("dataset has {} columns, checkpoint expects {}", ds.dim(), state.data_dim)).into());
    }
    let k = state.prior.k();
    let mut sets: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    let mut targets = Vec::new();
    for spec in probes {
        let (c, x) = load_probes(spec, k, &ds)?;
        if !sets[c].is_empty() {
            return Err(CliError::User(format!("component {c} has more than one probe file")));
        }
        targets.push((c, x.clone(), hit_rate(&state, &x, c)?));
        sets[c] = x.row_vecs();
    }

    let mut mcfg = cfg.manipulation.clone();
    if let Some(s) = steps {
        mcfg.steps = s;
    }
    if let Some(t) = mixup_rounds {
        mcfg.mixup_rounds = t;
    }
    let reports = manipulate_attributes(&mut state, &sets, &ds, &mcfg, &mut Quiet)?;

    let dir = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    state.save_json(&dir.join("checkpoint_manipulated.json"))?;
    let mut target_reports = Vec::new();
    for (c, x, before) in targets {
        target_reports.push(TargetReport { component: c, probes: x.rows(), accuracy_before: before, accuracy_after: hit_rate(&state, &x, c)? });
    }
    let report = ManipulationReport {
        steps: mcfg.steps,
        targets: target_reports,
        probe_loss_first: reports.first().map(|r| r.probe_loss),
        probe_loss_last: reports.last().map(|r| r.probe_loss),
    };
    write_json(&dir.join("manipulation.json"), &report)?;
    for t in &report.targets {
        println!(
            "component {}: {} probes, assigned {:.3} before, {:.3} after",
            t.component, t.probes, t.accuracy_before, t.accuracy_after
        );
    }
    Ok(())
}

pub fn verify(config: Option<&Path>, quick: bool, json: Option<&Path>, fault: Fault) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => load_verify_config(p)?,
        None if quick => VerifyConfig::quick(),
        None => VerifyConfig::default(),
    };
    let report = verify::run(&cfg, fault)?;
    print!("{}", report.table());
    if let Some(p) = json {
        write_json(p, &report)?;
    }
    if report.passed {
        println!("all checks passed");
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.pass).count();
        Err(CliError::Verification(format!("{failed} of {} checks failed", report.checks.len())))
    }
}
