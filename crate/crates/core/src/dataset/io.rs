//! On-disk trial layout. A trial is a directory holding
//!
//! * `trial.cfg`: `key=value` metadata (`trial_id`, `classes`, `agents`,
//!   `motion_dims`, `sensory_dims`, `frames`, and `attr.<name>` entries);
//! * `agent_<id>.csv`: `frame,x0..,v0..` with one row per frame;
//! * `labels.csv`: bouts as `agent_id,class_name,start,end` (end exclusive);
//! * `labeled.csv` (optional): labeled intervals as `agent_id,start,end`.
//!
//! Without `labeled.csv`, an agent counts as fully labeled when it has at
//! least one bout and as unlabeled otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{bouts_to_frames, frames_to_bouts, AgentTrack, Bout, TrialData};
use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::numerics::Matrix;

pub const TRIAL_FILE: &str = "trial.cfg";
const LABELS_FILE: &str = "labels.csv";
const MASK_FILE: &str = "labeled.csv";

fn agent_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("agent_{id}.csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn field<V: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path, what: &str) -> Result<V> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let s = rec
        .get(i)
        .ok_or_else(|| Error::parse(path, line, format!("missing column {what}")))?;
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} {s:?}")))
}

/// Writes `trial` into directory `dir`, creating it if needed.
pub fn save_trial(trial: &TrialData, dir: &Path) -> Result<()> {
    trial.validate()?;
    fs::create_dir_all(dir)?;
    let mut cfg = KvMap::new();
    cfg.insert("trial_id", &trial.trial_id);
    cfg.insert("classes", trial.classes.join(","));
    let ids: Vec<usize> = trial.agents.iter().map(|a| a.id).collect();
    cfg.insert("agents", join_list(&ids));
    cfg.insert("motion_dims", trial.motion_dims());
    cfg.insert("sensory_dims", trial.sensory_dims());
    cfg.insert("frames", trial.frames());
    for (k, v) in &trial.attrs {
        if k.contains(['=', '#', '\n']) || v.contains(['#', '\n']) {
            return Err(Error::data(format!("attribute {k:?} cannot be stored")));
        }
        cfg.insert(format!("attr.{k}"), v);
    }
    fs::write(dir.join(TRIAL_FILE), cfg.to_text())?;

    let (dx, dv) = (trial.motion_dims(), trial.sensory_dims());
    let mut header = vec!["frame".to_string()];
    header.extend((0..dx).map(|j| format!("x{j}")));
    header.extend((0..dv).map(|j| format!("v{j}")));
    for a in &trial.agents {
        let path = agent_file(dir, a.id);
        let mut w = writer(&path)?;
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        let mut row = Vec::with_capacity(1 + dx + dv);
        for f in 0..a.frames() {
            row.clear();
            row.push(f.to_string());
            row.extend(a.x.row(f).iter().map(|v| v.to_string()));
            row.extend(a.v.row(f).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush()?;
    }

    let path = dir.join(LABELS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["agent_id", "class_name", "start", "end"])
        .map_err(|e| csv_err(&path, e))?;
    for a in &trial.agents {
        for b in a.bouts() {
            w.write_record([
                a.id.to_string(),
                trial.classes[b.class].clone(),
                b.start.to_string(),
                b.end.to_string(),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush()?;

    let path = dir.join(MASK_FILE);
    let mut w = writer(&path)?;
    w.write_record(["agent_id", "start", "end"]).map_err(|e| csv_err(&path, e))?;
    for a in &trial.agents {
        for b in frames_to_bouts(&a.label_mask, 0) {
            w.write_record([a.id.to_string(), b.start.to_string(), b.end.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_agent(path: &Path, dx: usize, dv: usize) -> Result<(Matrix<f64>, Matrix<f64>)> {
    let mut r = reader(path)?;
    let width = 1 + dx + dv;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() != width {
        return Err(Error::parse(
            path,
            1,
            format!("header has {} columns, expected {width}", header.len()),
        ));
    }
    let (mut xs, mut vs) = (Vec::new(), Vec::new());
    let mut frames = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::parse(
                path,
                line,
                format!("row has {} columns, expected {width}", rec.len()),
            ));
        }
        let f: usize = field(&rec, 0, path, "frame")?;
        if f != frames {
            return Err(Error::parse(path, line, format!("frame {f}, expected {frames}")));
        }
        for j in 0..dx {
            xs.push(field::<f64>(&rec, 1 + j, path, "value")?);
        }
        for j in 0..dv {
            vs.push(field::<f64>(&rec, 1 + dx + j, path, "value")?);
        }
        frames += 1;
    }
    Ok((Matrix::from_vec(frames, dx, xs)?, Matrix::from_vec(frames, dv, vs)?))
}

/// Interval rows keyed by agent; `class_col` selects bout files.
fn read_intervals(
    path: &Path,
    classes: Option<&[String]>,
    ids: &[usize],
    frames: usize,
) -> Result<Vec<(usize, Bout)>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let expect = if classes.is_some() { 4 } else { 3 };
        if rec.len() != expect {
            return Err(Error::parse(
                path,
                line,
                format!("row has {} columns, expected {expect}", rec.len()),
            ));
        }
        let agent: usize = field(&rec, 0, path, "agent_id")?;
        if !ids.contains(&agent) {
            return Err(Error::parse(path, line, format!("unknown agent {agent}")));
        }
        let (class, off) = match classes {
            Some(names) => {
                let name = rec.get(1).unwrap_or("");
                let c = names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::parse(path, line, format!("unknown class name {name:?}")))?;
                (c, 2)
            }
            None => (0, 1),
        };
        let start: usize = field(&rec, off, path, "start")?;
        let end: usize = field(&rec, off + 1, path, "end")?;
        if start >= end || end > frames {
            return Err(Error::parse(
                path,
                line,
                format!("interval [{start}, {end}) invalid for {frames} frames"),
            ));
        }
        out.push((agent, Bout { class, start, end }));
    }
    Ok(out)
}

/// Reads a trial directory written by [`save_trial`] or by a converter
/// following the same layout.
pub fn load_trial(dir: &Path) -> Result<TrialData> {
    let cfg_path = dir.join(TRIAL_FILE);
    let cfg = KvMap::load(&cfg_path)?;
    for k in cfg.keys() {
        let known = matches!(
            k,
            "trial_id" | "classes" | "agents" | "motion_dims" | "sensory_dims" | "frames"
        ) || k.starts_with("attr.");
        if !known {
            return Err(Error::Config(format!("{}: unknown key '{k}'", cfg_path.display())));
        }
    }
    let trial_id = cfg.require("trial_id")?.to_string();
    let classes: Vec<String> = match cfg.get("classes") {
        None | Some("") => Vec::new(),
        Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
    };
    let ids: Vec<usize> = cfg.parse_list("agents")?.unwrap_or_default();
    let dx: usize = cfg
        .parse_value("motion_dims")?
        .ok_or_else(|| Error::Config("missing key 'motion_dims'".into()))?;
    let dv: usize = cfg.parse_value("sensory_dims")?.unwrap_or(0);
    let n = classes.len();

    let mut tracks = Vec::new();
    for &id in &ids {
        let (x, v) = read_agent(&agent_file(dir, id), dx, dv)?;
        tracks.push((id, x, v));
    }
    let frames = tracks.first().map_or(0, |t| t.1.rows());
    if let Some(expect) = cfg.parse_value::<usize>("frames")? {
        if expect != frames && !tracks.is_empty() {
            return Err(Error::data(format!("trial {trial_id}: {frames} frames, config says {expect}")));
        }
    }
    for t in &tracks {
        if t.1.rows() != frames {
            return Err(Error::data(format!(
                "trial {trial_id}: agent {} has {} frames, expected {frames}",
                t.0,
                t.1.rows()
            )));
        }
    }

    let labels_path = dir.join(LABELS_FILE);
    let bouts = if labels_path.exists() {
        read_intervals(&labels_path, Some(&classes), &ids, frames)?
    } else {
        Vec::new()
    };
    let mask_path = dir.join(MASK_FILE);
    let mask_rows = if mask_path.exists() {
        Some(read_intervals(&mask_path, None, &ids, frames)?)
    } else {
        None
    };

    let mut agents = Vec::new();
    for (id, x, v) in tracks {
        let mine: Vec<Bout> = bouts.iter().filter(|(a, _)| *a == id).map(|(_, b)| *b).collect();
        let mask = match &mask_rows {
            Some(rows) => {
                let ivs: Vec<Bout> = rows.iter().filter(|(a, _)| *a == id).map(|(_, b)| *b).collect();
                bouts_to_frames(&ivs, 0, frames)?
            }
            None => vec![!mine.is_empty(); frames],
        };
        let mut labels = vec![false; frames * n];
        for c in 0..n {
            for (f, on) in bouts_to_frames(&mine, c, frames)?.into_iter().enumerate() {
                labels[f * n + c] = on;
            }
        }
        if let Some(f) = (0..frames).find(|&f| !mask[f] && labels[f * n..(f + 1) * n].contains(&true)) {
            return Err(Error::parse(
                &labels_path,
                0,
                format!("agent {id} has a bout at unlabeled frame {f}"),
            ));
        }
        agents.push(AgentTrack::new(id, x, v, labels, mask, n)?);
    }
    let mut trial = TrialData::new(trial_id, classes, agents)?;
    for (k, v) in cfg.iter() {
        if let Some(name) = k.strip_prefix("attr.") {
            trial.attrs.insert(name.to_string(), v.to_string());
        }
    }
    Ok(trial)
}

/// Loads every subdirectory of `root` that holds a trial, sorted by name.
pub fn load_trials(root: &Path) -> Result<Vec<TrialData>> {
    trial_dirs(root)?.iter().map(|d| load_trial(d)).collect()
}

/// `root` itself when it is a trial directory, else its trial
/// subdirectories in name order.
pub fn trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(TRIAL_FILE).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRIAL_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(format!("no trials under {}", root.display())));
    }
    Ok(dirs)
}
