//! Closed-loop generation: sampled motion is fed back as the next input and
//! sensory input is recomputed from the new scene. Also exports hidden
//! states for offline embedding.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{argmax_motion, sample_motion, BinSpec};
use crate::dataset::{save_trial, AgentTrack, TrialData, WriterStats, PEN_DIM};
use crate::error::{Error, Result};
use crate::fly::{apply_motion, compute_retina_bodies, Body, Chamber, FlyPose, RetinaConfig, SynthFlyConfig, MOTION_DIMS};
use crate::model::{BehaviorModel, ModelConfig, ModelState, UnitOverride};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decode {
    /// Draw a bin per dimension, then a value uniformly inside it.
    Sample,
    /// Center of the most likely bin.
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub steps: usize,
    pub seed: u64,
    pub overrides: Vec<UnitOverride>,
    /// Real frames run through the model before going closed-loop.
    pub warmup: usize,
    pub decode: Decode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps: 1000,
            seed: 0,
            overrides: Vec::new(),
            warmup: 50,
            decode: Decode::Sample,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !model.predicts_motion() {
            return Err(Error::Config(format!("variant {} has no motion output", model.variant)));
        }
        let widths = model.disc_widths();
        for o in &self.overrides {
            let w = widths.get(o.level).ok_or_else(|| {
                Error::Config(format!("override level {} >= {} levels", o.level, widths.len()))
            })?;
            if o.unit >= *w {
                return Err(Error::Config(format!("override unit {} >= width {w}", o.unit)));
            }
            if !(-1.0..=1.0).contains(&o.value) {
                return Err(Error::Config(format!("override value {} outside [-1, 1]", o.value)));
            }
        }
        Ok(())
    }
}

/// Independent stream per agent, so the number of agents does not change
/// any one agent's draws.
pub fn agent_rng(seed: u64, agent_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent_id);
    rng
}

/// Rewrites a step's flat motion distribution before decoding (test and
/// analysis hook). Arguments: agent index, step, distribution.
pub type MotionHook<'a> = &'a mut dyn FnMut(usize, usize, &mut [f64]);

fn decode<R: rand::Rng>(x_hat: &[f64], spec: &BinSpec, mode: Decode, rng: &mut R) -> Result<Vec<f64>> {
    match mode {
        Decode::Sample => sample_motion(x_hat, spec, rng),
        Decode::Argmax => Ok(argmax_motion(x_hat, spec)),
    }
}

/// Runs `history` (rows of `[x, v]`) through the model from a zero state,
/// leaving the last row unconsumed. Returns the state and that last row.
fn prime<T: Scalar>(
    model: &BehaviorModel<T>,
    history: &Matrix<f64>,
    warmup: usize,
) -> Result<(ModelState<T>, Vec<f64>)> {
    let rows = history.rows();
    if rows == 0 {
        return Err(Error::data("empty warmup history"));
    }
    let start = rows.saturating_sub(warmup.max(1));
    let mut state = ModelState::zeros(model.config(), 1);
    for r in start..rows - 1 {
        let row: Vec<T> = history.row(r).iter().map(|&v| T::lit(v)).collect();
        state = model.step(&Matrix::row_vector(&row), &state, &[])?.state;
    }
    Ok((state, history.row(rows - 1).to_vec()))
}

/// Static parts of the fly scene.
#[derive(Clone, Debug, PartialEq)]
pub struct FlyWorld {
    pub chamber: Chamber,
    pub retina: RetinaConfig,
    /// Fixed objects seen on the fly channel.
    pub obstacles: Vec<Body>,
}

impl FlyWorld {
    pub fn synthfly(cfg: &SynthFlyConfig) -> Self {
        FlyWorld {
            chamber: cfg.chamber,
            retina: cfg.retina,
            obstacles: vec![cfg.object()],
        }
    }

    /// Retina of agent `a` among `poses`.
    pub fn retina_of(&self, a: usize, poses: &[FlyPose]) -> Vec<f64> {
        let mut bodies: Vec<Body> = poses
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != a)
            .map(|(_, p)| Body {
                x: p.x,
                y: p.y,
                radius: self.retina.fly_body_radius,
            })
            .collect();
        bodies.extend_from_slice(&self.obstacles);
        compute_retina_bodies(&poses[a], &bodies, &self.chamber, &self.retina)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlyAgentInit {
    /// Selects the agent's random stream.
    pub id: u64,
    pub pose: FlyPose,
    /// Real `[x, v]` rows ending at `pose`; the last `warmup` are replayed.
    pub history: Option<Matrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrajectory {
    pub id: u64,
    /// `steps + 1` poses; pose `s + 1` results from the motion sampled at
    /// step `s`.
    pub poses: Vec<FlyPose>,
    /// Per step, the motion and sensory input consumed.
    pub x: Matrix<f64>,
    pub v: Matrix<f64>,
    /// Per step, action scores (before any override).
    pub y_hat: Matrix<f64>,
    /// Per step, flattened discriminative then generative states.
    pub states: Matrix<f64>,
}

/// Simulates all agents together. At each step every agent reads its
/// current input, the model proposes a motion distribution, a motion is
/// decoded and applied; only after all agents have moved are their retinas
/// recomputed.
pub fn simulate_flies<T: Scalar>(
    model: &BehaviorModel<T>,
    spec: &BinSpec,
    agents: &[FlyAgentInit],
    world: &FlyWorld,
    cfg: &SimConfig,
    mut hook: Option<MotionHook<'_>>,
) -> Result<Vec<AgentTrajectory>> {
    let mc = model.config();
    cfg.validate(mc)?;
    if mc.motion_dims != MOTION_DIMS || mc.sensory_dims != world.retina.len() {
        return Err(Error::Config(format!(
            "model expects {}+{} inputs, fly world provides {}+{}",
            mc.motion_dims,
            mc.sensory_dims,
            MOTION_DIMS,
            world.retina.len()
        )));
    }
    if spec.bin_counts() != mc.bins {
        return Err(Error::Config("bin spec does not match the model".into()));
    }
    let n = agents.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (dx, dv) = (mc.motion_dims, mc.sensory_dims);
    let mut poses: Vec<FlyPose> = agents.iter().map(|a| a.pose).collect();
    let mut states = Vec::with_capacity(n);
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, a) in agents.iter().enumerate() {
        match a.history.as_ref().filter(|_| cfg.warmup > 0) {
            Some(h) => {
                if h.cols() != dx + dv {
                    return Err(Error::data(format!("agent {}: history has {} columns", a.id, h.cols())));
                }
                let (s, last) = prime(model, h, cfg.warmup)?;
                states.push(s);
                inputs.push(last);
            }
            None => {
                states.push(ModelState::zeros(mc, 1));
                let mut x = vec![0.0; dx];
                x[3] = a.pose.wing_angle_left;
                x[4] = a.pose.wing_angle_right;
                x.extend(world.retina_of(i, &poses));
                inputs.push(x);
            }
        }
    }
    let mut state = ModelState::stack(&states)?;
    let mut rngs: Vec<ChaCha8Rng> = agents.iter().map(|a| agent_rng(cfg.seed, a.id)).collect();
    let state_width: usize = mc.disc_widths().iter().chain(&mc.gen_widths()).sum();
    let mut out: Vec<AgentTrajectory> = agents
        .iter()
        .map(|a| AgentTrajectory {
            id: a.id,
            poses: vec![a.pose],
            x: Matrix::zeros(cfg.steps, dx),
            v: Matrix::zeros(cfg.steps, dv),
            y_hat: Matrix::zeros(cfg.steps, mc.n_actions()),
            states: Matrix::zeros(cfg.steps, state_width),
        })
        .collect();

    for step in 0..cfg.steps {
        let batch = Matrix::from_fn(n, dx + dv, |b, j| T::lit(inputs[b][j]));
        let res = model.step(&batch, &state, &cfg.overrides)?;
        if !res.state.is_finite() {
            return Err(Error::Simulation {
                step,
                msg: "non-finite recurrent state".into(),
            });
        }
        for (a, traj) in out.iter_mut().enumerate() {
            traj.x.row_mut(step).copy_from_slice(&inputs[a][..dx]);
            traj.v.row_mut(step).copy_from_slice(&inputs[a][dx..]);
            for k in 0..mc.n_actions() {
                traj.y_hat.set(step, k, res.y_hat.get(a, k).as_f64());
            }
            traj.states.row_mut(step).copy_from_slice(&res.state.flatten_row(a));
            let mut dist: Vec<f64> = res.x_hat.row(a).iter().map(|v| v.as_f64()).collect();
            if let Some(h) = hook.as_mut() {
                h(a, step, &mut dist);
            }
            let m = decode(&dist, spec, cfg.decode, &mut rngs[a])?;
            let next = apply_motion(&poses[a], &m);
            if !next.is_finite() {
                return Err(Error::Simulation {
                    step,
                    msg: format!("agent {} reached a non-finite pose", traj.id),
                });
            }
            poses[a] = next;
            traj.poses.push(next);
            inputs[a][..dx].copy_from_slice(&m);
        }
        for (a, inp) in inputs.iter_mut().enumerate() {
            inp[dx..].copy_from_slice(&world.retina_of(a, &poses));
        }
        state = res.state;
    }
    Ok(out)
}

/// Fraction of recorded poses inside `chamber` scaled by `1 + margin`.
pub fn containment(trajs: &[AgentTrajectory], chamber: &Chamber, margin: f64) -> f64 {
    let big = chamber.scaled(1.0 + margin);
    let (mut inside, mut total) = (0usize, 0usize);
    for t in trajs {
        for p in &t.poses {
            total += 1;
            inside += big.contains(p.position()) as usize;
        }
    }
    if total == 0 {
        1.0
    } else {
        inside as f64 / total as f64
    }
}

/// Writes simulated flies as a trial directory (motion and retina per agent)
/// plus `poses.csv` and `scores.csv`.
pub fn save_fly_simulation(
    trajs: &[AgentTrajectory],
    classes: &[String],
    chamber: &Chamber,
    trial_id: &str,
    dir: &Path,
) -> Result<()> {
    let agents = trajs
        .iter()
        .map(|t| AgentTrack::unlabeled(t.id as usize, t.x.clone(), t.v.clone(), classes.len()))
        .collect::<Result<Vec<_>>>()?;
    let mut trial = TrialData::new(trial_id.to_string(), classes.to_vec(), agents)?;
    trial.attrs.insert("chamber".into(), chamber.to_string());
    trial.attrs.insert("domain".into(), "fly".into());
    save_trial(&trial, dir)?;

    let tracks: Vec<(u64, &[FlyPose])> = trajs.iter().map(|t| (t.id, t.poses.as_slice())).collect();
    write_poses(&dir.join(POSES_FILE), &tracks)?;

    let mut w = csv::Writer::from_path(dir.join("scores.csv")).map_err(csv_io)?;
    let mut header = vec!["agent".to_string(), "frame".to_string()];
    header.extend(classes.iter().map(|c| format!("score_{c}")));
    w.write_record(&header).map_err(csv_io)?;
    for t in trajs {
        for f in 0..t.y_hat.rows() {
            let mut row = vec![t.id.to_string(), f.to_string()];
            row.extend(t.y_hat.row(f).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const POSES_FILE: &str = "poses.csv";
const POSE_HEADER: [&str; 10] = [
    "agent",
    "frame",
    "x",
    "y",
    "heading",
    "wing_angle_left",
    "wing_angle_right",
    "wing_len_left",
    "wing_len_right",
    "body_len",
];

/// Writes pose tracks as `agent,frame,x,y,heading,...`.
pub fn write_poses(path: &Path, tracks: &[(u64, &[FlyPose])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(POSE_HEADER).map_err(csv_io)?;
    for (id, poses) in tracks {
        for (f, p) in poses.iter().enumerate() {
            let vals = [
                p.x,
                p.y,
                p.heading,
                p.wing_angle_left,
                p.wing_angle_right,
                p.wing_len_left,
                p.wing_len_right,
                p.body_len,
            ];
            let mut row = vec![id.to_string(), f.to_string()];
            row.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_poses`]; tracks come back in agent order.
pub fn read_poses(path: &Path) -> Result<Vec<(u64, Vec<FlyPose>)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let header = r.headers().map_err(csv_io)?.clone();
    if header.iter().ne(POSE_HEADER) {
        return Err(Error::parse(path, 1, format!("expected header {}", POSE_HEADER.join(","))));
    }
    let mut tracks: std::collections::BTreeMap<u64, Vec<FlyPose>> = Default::default();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad {} {:?}", POSE_HEADER[k], &rec[k])))
        };
        let id: u64 = rec[0].trim().parse().map_err(|_| Error::parse(path, line, "bad agent id"))?;
        let frame: usize = rec[1].trim().parse().map_err(|_| Error::parse(path, line, "bad frame"))?;
        let track = tracks.entry(id).or_default();
        if frame != track.len() {
            return Err(Error::parse(path, line, format!("agent {id}: frame {frame} out of order")));
        }
        track.push(FlyPose {
            x: num(2)?,
            y: num(3)?,
            heading: num(4)?,
            wing_angle_left: num(5)?,
            wing_angle_right: num(6)?,
            wing_len_left: num(7)?,
            wing_len_right: num(8)?,
            body_len: num(9)?,
        });
    }
    Ok(tracks.into_iter().collect())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrokeSim {
    /// `steps x 3` rows of `(dx, dy, z)` in the writer's original units.
    pub strokes: Matrix<f64>,
    /// Per step, action scores (before any override).
    pub y_hat: Matrix<f64>,
}

/// Generates one `(dx, dy, z)` row per step from a model trained on
/// normalized strokes, then maps `dx, dy` back with `stats`. The pen state
/// is the index of its sampled bin.
pub fn simulate_handwriting<T: Scalar>(
    model: &BehaviorModel<T>,
    spec: &BinSpec,
    cfg: &SimConfig,
    stats: &WriterStats,
    primer: Option<&Matrix<f64>>,
) -> Result<StrokeSim> {
    let mc = model.config();
    cfg.validate(mc)?;
    if mc.motion_dims != 3 || mc.sensory_dims != 0 || mc.bins[PEN_DIM] != 2 {
        return Err(Error::Config(
            "handwriting needs 3 motion dims (dx, dy, z with 2 bins) and no sensory input".into(),
        ));
    }
    let (mut state, mut input) = match primer.filter(|_| cfg.warmup > 0) {
        Some(h) => prime(model, h, cfg.warmup)?,
        None => (ModelState::zeros(mc, 1), vec![0.0; 3]),
    };
    let mut rng = agent_rng(cfg.seed, 0);
    let mut strokes = Matrix::zeros(cfg.steps, 3);
    let mut y_hat = Matrix::zeros(cfg.steps, mc.n_actions());
    for step in 0..cfg.steps {
        let row: Vec<T> = input.iter().map(|&v| T::lit(v)).collect();
        let res = model.step(&Matrix::row_vector(&row), &state, &cfg.overrides)?;
        if !res.state.is_finite() {
            return Err(Error::Simulation {
                step,
                msg: "non-finite recurrent state".into(),
            });
        }
        for k in 0..mc.n_actions() {
            y_hat.set(step, k, res.y_hat.get(0, k).as_f64());
        }
        let dist: Vec<f64> = res.x_hat.row(0).iter().map(|v| v.as_f64()).collect();
        let m = decode(&dist, spec, cfg.decode, &mut rng)?;
        let z = spec.encode_value(PEN_DIM, m[PEN_DIM]).min(1) as f64;
        input = vec![m[0], m[1], z];
        strokes.set(step, 0, m[0] * stats.scale[0] + stats.mean[0]);
        strokes.set(step, 1, m[1] * stats.scale[1] + stats.mean[1]);
        strokes.set(step, 2, z);
        state = res.state;
    }
    Ok(StrokeSim { strokes, y_hat })
}

/// Column names of [`export_hidden_states`] after the metadata columns.
pub fn state_columns(cfg: &ModelConfig) -> Vec<String> {
    let mut cols = Vec::new();
    for (l, &w) in cfg.disc_widths().iter().enumerate() {
        cols.extend((0..w).map(|u| format!("h{l}_{u}")));
    }
    for (l, &w) in cfg.gen_widths().iter().enumerate() {
        cols.extend((0..w).map(|u| format!("g{l}_{u}")));
    }
    cols
}

/// One CSV row per agent-frame: `trial, agent, frame`, one label column per
/// class (`1`/`0`, empty when unlabeled), then every hidden unit after
/// consuming that frame. Returns the number of rows written.
pub fn export_hidden_states<T: Scalar, W: Write>(
    model: &BehaviorModel<T>,
    trials: &[TrialData],
    out: W,
) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let classes = &model.config().classes;
    let mut header = vec!["trial".to_string(), "agent".to_string(), "frame".to_string()];
    header.extend(classes.iter().map(|c| format!("label_{c}")));
    header.extend(state_columns(model.config()));
    w.write_record(&header).map_err(csv_io)?;
    if let Some(t) = trials.iter().find(|t| t.classes != *classes) {
        return Err(Error::data(format!("trial {} classes differ from the model's", t.trial_id)));
    }
    let mut rows = 0;
    for (t, outs) in trials.iter().zip(model.run_trials(trials, true)?) {
        for (a, o) in t.agents.iter().zip(&outs) {
            let states = o.states.as_ref().expect("states requested");
            for f in 0..a.frames() {
                let mut rec = vec![t.trial_id.clone(), a.id.to_string(), f.to_string()];
                for k in 0..classes.len() {
                    rec.push(if a.label_mask[f] {
                        (a.label(f, k) as u8).to_string()
                    } else {
                        String::new()
                    });
                }
                rec.extend(states.row(f).iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_io)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}
