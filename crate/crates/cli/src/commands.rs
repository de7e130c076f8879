//! The subcommands. Each one reads its settings, does its work through the
//! core library and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use besim_core::codec::{fit_bins, BinSpec};
use besim_core::dataset::{
    load_trials, make_batches, normalize_writers, save_trial, subsample_labels, synth_handwriting,
    trial_dirs, BatchOptions, HandwritingConfig, SubsampleOptions, TrialData, WriterStats, PEN_DIM,
};
use besim_core::fly::{synthfly_generate, Chamber, FlyPose, SynthFlyConfig};
use besim_core::kv::{join_list, KvMap};
use besim_core::metrics::{
    mean_durations, predict_frames, sequence_loglik, Baseline, BaselineKind, F1Accumulator,
};
use besim_core::model::{
    evaluate, train_epoch, BehaviorModel, LabelMode, LossReport, ModelConfig, TrainOptions,
    UnitOverride, Variant,
};
use besim_core::numerics::AdamConfig;
use besim_core::scalar::Scalar;
use besim_core::simulator::{
    containment, export_hidden_states, read_poses, save_fly_simulation, simulate_flies,
    simulate_handwriting, Decode, FlyAgentInit, FlyWorld, SimConfig, POSES_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::render::{fly_svg, strokes_svg};
use crate::settings::{settings, Settings};
use crate::CliError;

type Res<T = ()> = Result<T, CliError>;

pub const MODEL_FILE: &str = "model.bin";
pub const BINS_FILE: &str = "bins.csv";
pub const RUN_FILE: &str = "run.cfg";
pub const LOSS_FILE: &str = "loss.csv";
pub const STROKES_FILE: &str = "strokes.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Fly,
    Handwriting,
}

impl Domain {
    fn of(trials: &[TrialData]) -> Res<Domain> {
        let hw = trials
            .iter()
            .filter(|t| t.attrs.get("domain").map(String::as_str) == Some("handwriting"))
            .count();
        match hw {
            0 => Ok(Domain::Fly),
            n if n == trials.len() => Ok(Domain::Handwriting),
            _ => Err(CliError::data("mixed handwriting and fly trials")),
        }
    }

    fn parse(s: &str) -> Res<Domain> {
        match s {
            "fly" => Ok(Domain::Fly),
            "handwriting" => Ok(Domain::Handwriting),
            _ => Err(CliError::usage(format!("unknown domain {s:?}; expected fly or handwriting"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Domain::Fly => "fly",
            Domain::Handwriting => "handwriting",
        }
    }
}

/// Loads trials; handwriting strokes are normalized per writer.
pub fn load_data(path: &Path) -> Res<(Vec<TrialData>, Domain)> {
    let mut trials = load_trials(path).map_err(|e| {
        let mut e = CliError::from(e);
        e.msg = format!("{}: {}", path.display(), e.msg);
        e
    })?;
    let domain = Domain::of(&trials)?;
    if domain == Domain::Handwriting {
        normalize_writers(&mut trials)?;
    }
    Ok((trials, domain))
}

/// Per-agent flattened bin rows.
fn bin_sequences(trials: &[TrialData], spec: &BinSpec) -> Res<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for t in trials {
        for a in &t.agents {
            let mut seq = Vec::with_capacity(a.frames() * spec.dims());
            for r in 0..a.frames() {
                seq.extend(spec.encode(a.x.row(r))?);
            }
            out.push(seq);
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Res {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::data(e.to_string())
}

/// A trained model directory.
pub struct Run {
    pub model: BehaviorModel<f32>,
    pub spec: BinSpec,
    pub info: KvMap,
}

impl Run {
    pub fn load(dir: &Path) -> Res<Run> {
        let model = BehaviorModel::load(&dir.join(MODEL_FILE))?;
        let spec = BinSpec::load(&dir.join(BINS_FILE))?;
        let info = KvMap::load(&dir.join(RUN_FILE))?;
        Ok(Run { model, spec, info })
    }

    pub fn domain(&self) -> Res<Domain> {
        Domain::parse(self.info.require("domain")?)
    }

    pub fn durations(&self) -> Res<Vec<f64>> {
        Ok(self.info.parse_list("durations")?.unwrap_or_default())
    }

    fn check_classes(&self, trials: &[TrialData]) -> Res {
        let classes = &self.model.config().classes;
        match trials.iter().find(|t| t.classes != *classes) {
            Some(t) => Err(CliError::data(format!(
                "trial {} has classes {:?}, the model {:?}",
                t.trial_id, t.classes, classes
            ))),
            None => Ok(()),
        }
    }
}

settings!(
    GensynthArgs {
        out: "out" = "synth", "output directory; one subdirectory per trial";
        domain: "domain" = "fly", "fly or handwriting";
        trials: "trials" = "1", "fly trials to generate";
        frames: "frames" = "1000", "frames per fly trial";
        seed: "seed" = "0", "random seed; fly trial k uses seed + k";
        chamber: "chamber" = "rect:120x80", "fly chamber, rect:WxH or circle:R (mm)";
        writers: "writers" = "4", "handwriting writers";
        trials_per_writer: "trials-per-writer" = "3", "handwriting trials per writer";
        chars: "chars" = "40", "characters per handwriting trial";
    }
);

pub fn gensynth(s: &Settings) -> Res {
    let out = s.path("out")?;
    let seed: u64 = s.get("seed")?;
    match Domain::parse(s.str("domain"))? {
        Domain::Fly => {
            let cfg = SynthFlyConfig {
                chamber: s.get("chamber")?,
                ..SynthFlyConfig::default()
            };
            for k in 0..s.get::<u64>("trials")? {
                let mut g = synthfly_generate(s.get("frames")?, seed.wrapping_add(k), &cfg)?;
                g.trial.attrs.insert("chamber".into(), cfg.chamber.to_string());
                let dir = out.join(&g.trial.trial_id);
                save_trial(&g.trial, &dir)?;
                besim_core::simulator::write_poses(&dir.join(POSES_FILE), &[(0, g.poses.as_slice())])?;
                log::info!("wrote {} ({} frames, {} events)", dir.display(), g.trial.frames(), g.events.len());
            }
        }
        Domain::Handwriting => {
            let cfg = HandwritingConfig {
                writers: s.get("writers")?,
                trials_per_writer: s.get("trials-per-writer")?,
                chars_per_trial: s.get("chars")?,
                seed,
                ..HandwritingConfig::default()
            };
            for t in synth_handwriting(&cfg)? {
                save_trial(&t, &out.join(&t.trial_id))?;
            }
            log::info!("wrote {} handwriting trials to {}", cfg.writers * cfg.trials_per_writer, out.display());
        }
    }
    Ok(())
}

settings!(
    TrainArgs {
        data: "data" = "synth", "training trials (a trial directory or a directory of trials)";
        valid: "valid" = "", "validation trials, scored after every epoch";
        out: "out" = "run", "output run directory";
        variant: "variant" = "besnet", "besnet, benet or stacked_rnn";
        label_mode: "label-mode" = "", "multitask or multiclass (empty: multiclass for handwriting)";
        levels: "levels" = "2", "recurrent levels per stack";
        units: "units" = "64", "units per level";
        bins: "bins" = "21", "bins per motion dimension (the pen state always gets 2)";
        lambda: "lambda" = "0.5", "weight of the label loss";
        window: "window" = "50", "BPTT window length";
        batch: "batch" = "20", "parallel streams per minibatch";
        segment: "segment" = "1000", "longest stretch of a track fed as one stream";
        epochs: "epochs" = "10", "passes over the training data";
        lr: "lr" = "0.001", "Adam learning rate";
        clip: "clip" = "5", "global gradient-norm limit";
        labels: "labels" = "1", "fraction of labeled frames kept";
        label_chunk: "label-chunk" = "200", "frames per kept label chunk";
        precision: "precision" = "f32", "training arithmetic, f32 or f64";
        seed: "seed" = "0", "random seed";
    }
);

/// Edges for every motion dimension; the pen state of handwriting gets two
/// fixed bins.
fn fit_spec(trials: &[TrialData], domain: Domain, bins: usize) -> Res<BinSpec> {
    let d = trials[0].motion_dims();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            trials
                .iter()
                .flat_map(|t| t.agents.iter())
                .flat_map(|a| (0..a.frames()).map(move |r| a.x.get(r, k)))
                .collect()
        })
        .collect();
    let mut counts = vec![bins; d];
    if domain == Domain::Handwriting {
        counts[PEN_DIM] = 2;
    }
    let (spec, report) = fit_bins(&cols, &counts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if domain != Domain::Handwriting {
        return Ok(spec);
    }
    let mut edges: Vec<Vec<f64>> = (0..d).map(|k| spec.edges(k).to_vec()).collect();
    edges[PEN_DIM] = vec![-0.5, 0.5, 1.5];
    Ok(BinSpec::from_edges(edges)?)
}

pub fn train(s: &Settings) -> Res {
    match s.str("precision") {
        "f32" => train_as::<f32>(s),
        "f64" => train_as::<f64>(s),
        p => Err(CliError::usage(format!("unknown precision {p:?}; expected f32 or f64"))),
    }
}

fn train_as<T: Scalar>(s: &Settings) -> Res {
    let seed: u64 = s.get("seed")?;
    let (mut trials, domain) = load_data(&s.path("data")?)?;
    let valid = s.opt_path("valid").map(|p| load_data(&p)).transpose()?;
    let label_mode: LabelMode = match s.opt("label-mode")? {
        Some(m) => m,
        None if domain == Domain::Handwriting => LabelMode::Multiclass,
        None => LabelMode::Multitask,
    };
    let fraction: f64 = s.get("labels")?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CliError::usage("labels must be in [0, 1]"));
    }
    if fraction < 1.0 {
        let opts = SubsampleOptions {
            chunk: s.get("label-chunk")?,
            seed,
        };
        let kept = subsample_labels(&mut trials, fraction, &opts)?;
        log::info!("kept {kept} labeled frames");
    }
    let spec = fit_spec(&trials, domain, s.get("bins")?)?;
    let first = &trials[0];
    let cfg = ModelConfig {
        units: vec![s.get("units")?; s.get("levels")?],
        classes: first.classes.clone(),
        motion_dims: first.motion_dims(),
        sensory_dims: first.sensory_dims(),
        bins: spec.bin_counts(),
        lambda: s.get("lambda")?,
        variant: s.get::<Variant>("variant")?,
        label_mode,
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BehaviorModel::<T>::new(cfg.clone(), &mut rng)?;
    let inputs: Vec<_> = trials.iter().flat_map(|t| t.agents.iter().map(|a| a.inputs())).collect();
    model.fit_input_norm(inputs.iter().flat_map(|m| (0..m.rows()).map(move |r| m.row(r))))?;

    let batch_opts = BatchOptions {
        window: s.get("window")?,
        batch: s.get("batch")?,
        segment: s.get("segment")?,
        seed,
        shuffle: true,
    };
    let valid_batches = match &valid {
        Some((v, _)) => Some(
            make_batches::<T>(
                v,
                &spec,
                &BatchOptions {
                    shuffle: false,
                    ..batch_opts
                },
            )?
            .windows,
        ),
        None => None,
    };
    let opts = TrainOptions {
        adam: AdamConfig {
            lr: s.get("lr")?,
            ..AdamConfig::default()
        },
        clip: s.get("clip")?,
    };
    let out = s.path("out")?;
    fs::create_dir_all(&out)?;
    let mut curve = String::from("epoch,loss,motion_loss_per_frame,label_loss_per_frame,valid_motion_loss_per_frame,valid_label_loss_per_frame\n");
    let per_frame = |r: &LossReport| (r.c_x_per_frame(), r.c_y_per_frame());
    for epoch in 0..s.get::<u64>("epochs")? {
        let batches = make_batches::<T>(
            &trials,
            &spec,
            &BatchOptions {
                seed: seed.wrapping_add(epoch),
                ..batch_opts
            },
        )?;
        let r = train_epoch(&mut model, &batches.windows, &opts)?;
        let (tx, ty) = per_frame(&r);
        let (vx, vy) = match &valid_batches {
            Some(w) => per_frame(&evaluate(&model, w)?),
            None => (f64::NAN, f64::NAN),
        };
        log::info!("epoch {epoch}: loss {:.4e}, motion/frame {tx:.4}, label/frame {ty:.4}, valid motion/frame {vx:.4}", r.c);
        curve.push_str(&format!("{epoch},{},{tx},{ty},{vx},{vy}\n", r.c));
    }
    write(&out.join(LOSS_FILE), &curve)?;
    model.cast::<f32>().save(&out.join(MODEL_FILE))?;
    spec.save(&out.join(BINS_FILE))?;
    let mut info = s.kv().clone();
    info.insert("domain", domain.name());
    info.insert("durations", join_list(&mean_durations(&trials, cfg.classes.len())));
    write(&out.join(RUN_FILE), &info.to_text())?;
    log::info!("wrote {}", out.display());
    Ok(())
}

settings!(
    EvalArgs {
        run: "run" = "run", "trained run directory";
        data: "data" = "", "labeled trials to score";
        out: "out" = "f1.csv", "output CSV";
    }
);

pub fn eval(s: &Settings) -> Res {
    let run = Run::load(&s.path("run")?)?;
    let (trials, _) = load_data(&s.path("data")?)?;
    run.check_classes(&trials)?;
    let cfg = run.model.config();
    let durations = run.durations()?;
    let mut acc = F1Accumulator::new(cfg.classes.clone());
    for (t, outs) in trials.iter().zip(run.model.run_trials(&trials, false)?) {
        for (a, o) in t.agents.iter().zip(&outs) {
            acc.add(&predict_frames(&o.y_hat, cfg.label_mode, &durations), a)?;
        }
    }
    let report = acc.report();
    write(&s.path("out")?, &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

settings!(
    LoglikArgs {
        run: "run" = "run", "trained run directory";
        data: "data" = "", "held-out trials to score";
        train: "train" = "", "trials for fitting PRIOR (empty: the run's training data)";
        valid: "valid" = "", "trials for choosing the SMOOTH_CONSTANT widths (empty: the run's validation data, else training data)";
        out: "out" = "loglik.csv", "output CSV";
    }
);

/// Per-frame log-likelihood rows: the model, then every baseline.
pub fn loglik_table(run: &Run, test: &[TrialData], train: &[TrialData], valid: &[TrialData]) -> Res<Vec<(String, f64, f64, usize)>> {
    let cfg = run.model.config();
    if !cfg.predicts_motion() {
        return Err(CliError::usage(format!("variant {} does not predict motion", cfg.variant)));
    }
    let layout = run.spec.layout();
    let test_bins = bin_sequences(test, &run.spec)?;
    let mut rows = Vec::new();
    let (mut sum, mut steps) = (0.0, 0usize);
    let mut seqs = test_bins.iter();
    for outs in run.model.run_trials(test, false)? {
        for o in outs {
            let (ll, n) = sequence_loglik(&o.x_hat, seqs.next().expect("one sequence per agent"), &layout)?;
            sum += ll;
            steps += n;
        }
    }
    rows.push((cfg.variant.to_string().to_uppercase(), sum, steps));
    let train_bins = bin_sequences(train, &run.spec)?;
    let valid_bins = bin_sequences(valid, &run.spec)?;
    let tr: Vec<&[usize]> = train_bins.iter().map(Vec::as_slice).collect();
    let va: Vec<&[usize]> = valid_bins.iter().map(Vec::as_slice).collect();
    for kind in BaselineKind::ALL {
        let b = Baseline::fit(kind, layout.clone(), &tr, &va)?;
        let (mut sum, mut steps) = (0.0, 0usize);
        for seq in &test_bins {
            let (ll, n) = b.loglik(seq)?;
            sum += ll;
            steps += n;
        }
        if kind == BaselineKind::SmoothConstant {
            log::info!("SMOOTH_CONSTANT widths {:?}", b.sigma());
        }
        rows.push((kind.to_string(), sum, steps));
    }
    Ok(rows
        .into_iter()
        .map(|(name, sum, steps)| (name, sum / steps.max(1) as f64, sum, steps))
        .collect())
}

pub fn loglik(s: &Settings) -> Res {
    let run_dir = s.path("run")?;
    let run = Run::load(&run_dir)?;
    let (test, _) = load_data(&s.path("data")?)?;
    run.check_classes(&test)?;
    let train_path = match s.opt_path("train") {
        Some(p) => p,
        None => PathBuf::from(run.info.require("data")?),
    };
    let (train, _) = load_data(&train_path)?;
    let valid_path = s
        .opt_path("valid")
        .or_else(|| run.info.get("valid").filter(|v| !v.is_empty()).map(PathBuf::from));
    let valid = match valid_path {
        Some(p) => load_data(&p)?.0,
        None => Vec::new(),
    };
    let rows = loglik_table(&run, &test, &train, &valid)?;
    let mut csv = String::from("policy,loglik_per_frame,loglik_total,steps\n");
    println!("{:<16} {:>18} {:>10}", "policy", "loglik/frame", "steps");
    for (name, per, sum, steps) in &rows {
        csv.push_str(&format!("{name},{per},{sum},{steps}\n"));
        println!("{name:<16} {per:>18.6} {steps:>10}");
    }
    write(&s.path("out")?, &csv)
}

settings!(
    SimulateArgs {
        run: "run" = "run", "trained run directory";
        out: "out" = "sim", "output directory";
        agents: "agents" = "20", "flies simulated together";
        steps: "steps" = "1000", "closed-loop steps";
        seed: "seed" = "0", "random seed";
        warmup: "warmup" = "50", "real frames replayed before going closed-loop (needs data)";
        decode: "decode" = "sample", "sample or argmax";
        overrides: "override" = "", "comma list of CLASS=VALUE or LEVEL:UNIT=VALUE unit overrides";
        data: "data" = "", "fly: trials with poses.csv to start from; handwriting: trials for writer statistics";
        writer: "writer" = "", "handwriting: writer whose statistics de-normalize the output (empty: first)";
        chamber: "chamber" = "", "fly chamber (empty: from the data, else rect:120x80)";
        object: "object" = "true", "fly: place the SynthFly disc object at the chamber center";
    }
);

/// Parses `CLASS=VALUE` (a label unit) or `LEVEL:UNIT=VALUE`.
pub fn parse_overrides(spec: &str, cfg: &ModelConfig) -> Res<Vec<UnitOverride>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let bad = || CliError::usage(format!("bad override {item:?}"));
        let (target, value) = item.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let (level, unit) = match target.split_once(':') {
            Some((l, u)) => (l.trim().parse().map_err(|_| bad())?, u.trim().parse().map_err(|_| bad())?),
            None => {
                let k = cfg
                    .classes
                    .iter()
                    .position(|c| c == target.trim())
                    .ok_or_else(|| CliError::usage(format!("unknown class {target:?} in override")))?;
                (cfg.label_level(), k)
            }
        };
        out.push(UnitOverride { level, unit, value });
    }
    Ok(out)
}

fn parse_decode(s: &str) -> Res<Decode> {
    match s {
        "sample" => Ok(Decode::Sample),
        "argmax" => Ok(Decode::Argmax),
        _ => Err(CliError::usage(format!("unknown decode {s:?}; expected sample or argmax"))),
    }
}

/// Uniform start poses at least 8 mm from the walls, 10 mm from obstacles
/// and 4 mm from each other.
pub fn place_agents(n: usize, world: &FlyWorld, rng: &mut ChaCha8Rng) -> Res<Vec<FlyPose>> {
    let (hw, hh) = match world.chamber {
        Chamber::Rect { width, height } => (width / 2.0, height / 2.0),
        Chamber::Circle { radius } => (radius, radius),
    };
    let mut poses: Vec<FlyPose> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..100_000 {
            let p = (rng.random_range(-hw..hw), rng.random_range(-hh..hh));
            let clear = world.chamber.clearance(p) > 8.0
                && world.obstacles.iter().all(|b| (p.0 - b.x).hypot(p.1 - b.y) - b.radius > 10.0)
                && poses.iter().all(|q| (p.0 - q.x).hypot(p.1 - q.y) > 4.0);
            if clear {
                poses.push(FlyPose::new(p.0, p.1, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CliError::data(format!("no room for {n} agents in the chamber")));
        }
    }
    Ok(poses)
}

/// Start states drawn from recorded trials: agent `k` starts at a
/// deterministic frame of trial `k mod trials`, primed with the frames
/// before it.
fn primed_agents(data: &Path, n: usize, warmup: usize) -> Res<(Vec<FlyAgentInit>, Option<Chamber>)> {
    let dirs = trial_dirs(data)?;
    let mut chamber = None;
    let mut sources = Vec::new();
    for d in &dirs {
        let trial = besim_core::dataset::load_trial(d)?;
        if let Some(c) = trial.attrs.get("chamber") {
            chamber.get_or_insert(c.parse::<Chamber>()?);
        }
        let poses = read_poses(&d.join(POSES_FILE))?;
        for (a, (id, p)) in trial.agents.iter().zip(poses) {
            if a.id as u64 != id || p.len() != a.frames() {
                return Err(CliError::data(format!("{}: poses do not match agent tracks", d.display())));
            }
            sources.push((a.inputs(), p));
        }
    }
    let mut agents = Vec::with_capacity(n);
    for k in 0..n {
        let (inputs, poses) = &sources[k % sources.len()];
        let frames = poses.len();
        let lo = warmup.clamp(1, frames) - 1;
        let f = lo + (k / sources.len() * 7919 + 101 * k) % (frames - lo);
        let start = (f + 1).saturating_sub(warmup.max(1));
        let hist = besim_core::numerics::Matrix::from_fn(f + 1 - start, inputs.cols(), |r, c| inputs.get(start + r, c));
        agents.push(FlyAgentInit {
            id: k as u64,
            pose: poses[f],
            history: Some(hist),
        });
    }
    Ok((agents, chamber))
}

pub fn simulate(s: &Settings) -> Res {
    let run = Run::load(&s.path("run")?)?;
    let cfg = run.model.config();
    let sim = SimConfig {
        steps: s.get("steps")?,
        seed: s.get("seed")?,
        overrides: parse_overrides(s.str("override"), cfg)?,
        warmup: s.get("warmup")?,
        decode: parse_decode(s.str("decode"))?,
    };
    let out = s.path("out")?;
    fs::create_dir_all(&out)?;
    match run.domain()? {
        Domain::Fly => {
            let (agents, data_chamber) = match s.opt_path("data") {
                Some(d) => {
                    let (a, c) = primed_agents(&d, s.get("agents")?, sim.warmup)?;
                    (Some(a), c)
                }
                None => (None, None),
            };
            let chamber = match s.opt::<Chamber>("chamber")? {
                Some(c) => c,
                None => data_chamber.unwrap_or_default(),
            };
            let sf = SynthFlyConfig {
                chamber,
                ..SynthFlyConfig::default()
            };
            let mut world = FlyWorld::synthfly(&sf);
            if !s.get::<bool>("object")? {
                world.obstacles.clear();
            }
            let agents = match agents {
                Some(a) => a,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
                    place_agents(s.get("agents")?, &world, &mut rng)?
                        .into_iter()
                        .enumerate()
                        .map(|(k, pose)| FlyAgentInit {
                            id: k as u64,
                            pose,
                            history: None,
                        })
                        .collect()
                }
            };
            let trajs = simulate_flies(&run.model, &run.spec, &agents, &world, &sim, None)?;
            log::info!(
                "{:.1}% of agent-frames inside the chamber + 5%",
                100.0 * containment(&trajs, &chamber, 0.05)
            );
            save_fly_simulation(&trajs, &cfg.classes, &chamber, "simulation", &out)?;
        }
        Domain::Handwriting => {
            let stats = match s.opt_path("data") {
                Some(d) => {
                    let mut trials = load_trials(&d)?;
                    let all = normalize_writers(&mut trials)?;
                    match s.opt::<String>("writer")? {
                        Some(w) => *all.get(&w).ok_or_else(|| CliError::data(format!("no writer {w:?} in the data")))?,
                        None => *all.values().next().expect("at least one trial"),
                    }
                }
                None => WriterStats::IDENTITY,
            };
            let res = simulate_handwriting(&run.model, &run.spec, &sim, &stats, None)?;
            let mut w = csv::Writer::from_path(out.join(STROKES_FILE)).map_err(csv_err)?;
            w.write_record(["dx", "dy", "z"]).map_err(csv_err)?;
            for r in 0..res.strokes.rows() {
                w.write_record(res.strokes.row(r).iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out.join("scores.csv")).map_err(csv_err)?;
            let mut header = vec!["frame".to_string()];
            header.extend(cfg.classes.iter().map(|c| format!("score_{c}")));
            w.write_record(&header).map_err(csv_err)?;
            for r in 0..res.y_hat.rows() {
                let mut row = vec![r.to_string()];
                row.extend(res.y_hat.row(r).iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

settings!(
    ExportArgs {
        run: "run" = "run", "trained run directory";
        data: "data" = "", "trials to run through the model";
        out: "out" = "states.csv", "output CSV";
    }
);

pub fn export_states(s: &Settings) -> Res {
    let run = Run::load(&s.path("run")?)?;
    let (trials, _) = load_data(&s.path("data")?)?;
    run.check_classes(&trials)?;
    let out = s.path("out")?;
    write(&out, "")?;
    let rows = export_hidden_states(&run.model, &trials, std::io::BufWriter::new(fs::File::create(&out)?))?;
    log::info!("wrote {rows} rows to {}", out.display());
    Ok(())
}

settings!(
    RenderArgs {
        input: "input" = "", "simulation or trial directory, or a strokes CSV";
        out: "out" = "plot.svg", "output SVG";
        mode: "mode" = "", "fly or handwriting (empty: fly when the input has poses.csv)";
        width: "width" = "800", "canvas width in pixels";
        chamber: "chamber" = "", "fly chamber when the input does not record one";
    }
);

pub fn read_strokes(path: &Path) -> Res<Vec<[f64; 3]>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = || CliError::data(format!("{}:{}: expected dx,dy,z", path.display(), i + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        let mut row = [0.0; 3];
        for (k, v) in rec.iter().enumerate() {
            row[k] = v.trim().parse().map_err(|_| bad())?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn render(s: &Settings) -> Res {
    let input = s.path("input")?;
    let width: f64 = s.get("width")?;
    if !(width > 0.0) {
        return Err(CliError::usage("width must be positive"));
    }
    let mode = match s.opt::<String>("mode")? {
        Some(m) => Domain::parse(&m)?,
        None if input.join(POSES_FILE).exists() => Domain::Fly,
        None => Domain::Handwriting,
    };
    let svg = match mode {
        Domain::Fly => {
            let tracks = read_poses(&input.join(POSES_FILE))?;
            let recorded = KvMap::load(&input.join(besim_core::dataset::TRIAL_FILE))
                .ok()
                .and_then(|kv| kv.get("attr.chamber").map(str::to_string));
            let chamber = match (s.opt::<Chamber>("chamber")?, recorded) {
                (Some(c), _) => c,
                (None, Some(c)) => c.parse()?,
                (None, None) => Chamber::default(),
            };
            let pts: Vec<(u64, Vec<(f64, f64)>)> =
                tracks.into_iter().map(|(id, p)| (id, p.iter().map(FlyPose::position).collect())).collect();
            fly_svg(&pts, &chamber, width)
        }
        Domain::Handwriting => {
            let rows = if input.is_file() {
                read_strokes(&input)?
            } else if input.join(STROKES_FILE).exists() {
                read_strokes(&input.join(STROKES_FILE))?
            } else {
                let trials = load_trials(&input)?;
                let a = &trials[0].agents[0];
                if a.x.cols() != 3 {
                    return Err(CliError::data("handwriting rows need 3 motion columns"));
                }
                (0..a.frames()).map(|r| [a.x.get(r, 0), a.x.get(r, 1), a.x.get(r, 2)]).collect()
            };
            strokes_svg(&rows, width)
        }
    };
    write(&s.path("out")?, &svg)
}
