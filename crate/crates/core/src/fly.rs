//! Fly kinematics, the artificial retina, and the SynthFly generator.
//!
//! Motion vector layout (8 dims): forward step, sideways step (mm), heading
//! change (rad), left and right wing angle (rad, absolute), change of left
//! and right wing length and of body length (mm). Translation uses the
//! heading before the turn. Positive heading changes turn left
//! (counterclockwise).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{AgentTrack, TrialData};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MOTION_DIMS: usize = 8;
pub const MOTION_NAMES: [&str; MOTION_DIMS] = [
    "forward",
    "sideways",
    "turn",
    "wing_angle_left",
    "wing_angle_right",
    "wing_len_left",
    "wing_len_right",
    "body_len",
];
pub const CLASS_LEFT_WING: &str = "left_wing_ext";
pub const CLASS_RIGHT_WING: &str = "right_wing_ext";

/// Motion components below this magnitude are rounding residue of pose
/// differencing and are written as exact zeros.
pub const SNAP_EPS: f64 = 1e-12;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w += TAU;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlyPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub wing_angle_left: f64,
    pub wing_angle_right: f64,
    pub wing_len_left: f64,
    pub wing_len_right: f64,
    pub body_len: f64,
}

impl FlyPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        FlyPose {
            x,
            y,
            heading: wrap_angle(heading),
            wing_angle_left: 0.0,
            wing_angle_right: 0.0,
            wing_len_left: 2.5,
            wing_len_right: 2.5,
            body_len: 2.5,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.heading,
            self.wing_angle_left,
            self.wing_angle_right,
            self.wing_len_left,
            self.wing_len_right,
            self.body_len,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Moves `pose` by motion vector `m`.
pub fn apply_motion(pose: &FlyPose, m: &[f64]) -> FlyPose {
    debug_assert_eq!(m.len(), MOTION_DIMS);
    let (s, c) = pose.heading.sin_cos();
    FlyPose {
        x: pose.x + m[0] * c - m[1] * s,
        y: pose.y + m[0] * s + m[1] * c,
        heading: wrap_angle(pose.heading + m[2]),
        wing_angle_left: m[3].clamp(0.0, FRAC_PI_2),
        wing_angle_right: m[4].clamp(0.0, FRAC_PI_2),
        wing_len_left: (pose.wing_len_left + m[5]).max(0.0),
        wing_len_right: (pose.wing_len_right + m[6]).max(0.0),
        body_len: (pose.body_len + m[7]).max(0.0),
    }
}

/// Motion vector taking `a` to `b` (inverse of [`apply_motion`]).
pub fn motion_between(a: &FlyPose, b: &FlyPose) -> [f64; MOTION_DIMS] {
    let (s, c) = a.heading.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    [
        dx * c + dy * s,
        -dx * s + dy * c,
        wrap_angle(b.heading - a.heading),
        b.wing_angle_left,
        b.wing_angle_right,
        b.wing_len_left - a.wing_len_left,
        b.wing_len_right - a.wing_len_right,
        b.body_len - a.body_len,
    ]
}

/// Chamber centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Chamber {
    Rect { width: f64, height: f64 },
    Circle { radius: f64 },
}

impl Default for Chamber {
    fn default() -> Self {
        Chamber::Rect {
            width: 120.0,
            height: 80.0,
        }
    }
}

/// `rect:<width>x<height>` or `circle:<radius>`.
impl std::fmt::Display for Chamber {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Chamber::Rect { width, height } => write!(f, "rect:{width}x{height}"),
            Chamber::Circle { radius } => write!(f, "circle:{radius}"),
        }
    }
}

impl std::str::FromStr for Chamber {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad chamber {s:?}; expected rect:WxH or circle:R"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let c = match s.trim().split_once(':').ok_or_else(bad)? {
            ("rect", dims) => {
                let (w, h) = dims.split_once('x').ok_or_else(bad)?;
                Chamber::Rect {
                    width: num(w)?,
                    height: num(h)?,
                }
            }
            ("circle", r) => Chamber::Circle { radius: num(r)? },
            _ => return Err(bad()),
        };
        c.validate()?;
        Ok(c)
    }
}

impl Chamber {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Chamber::Rect { width, height } => width > 0.0 && height > 0.0,
            Chamber::Circle { radius } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("chamber dimensions must be positive: {self:?}")))
        }
    }

    /// Same shape scaled by `factor` about the center.
    pub fn scaled(&self, factor: f64) -> Chamber {
        match *self {
            Chamber::Rect { width, height } => Chamber::Rect {
                width: width * factor,
                height: height * factor,
            },
            Chamber::Circle { radius } => Chamber::Circle {
                radius: radius * factor,
            },
        }
    }

    /// Signed distance from `p` to the boundary, positive inside.
    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        match *self {
            Chamber::Rect { width, height } => {
                (width / 2.0 - p.0.abs()).min(height / 2.0 - p.1.abs())
            }
            Chamber::Circle { radius } => radius - p.0.hypot(p.1),
        }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        self.clearance(p) >= 0.0
    }

    /// Distance from `p` along direction `angle` to the boundary; 0 when `p`
    /// is outside.
    pub fn ray_distance(&self, p: (f64, f64), angle: f64) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        let (s, c) = angle.sin_cos();
        match *self {
            Chamber::Rect { width, height } => {
                let (a, b) = (width / 2.0, height / 2.0);
                let tx = if c > 0.0 {
                    (a - p.0) / c
                } else if c < 0.0 {
                    (-a - p.0) / c
                } else {
                    f64::INFINITY
                };
                let ty = if s > 0.0 {
                    (b - p.1) / s
                } else if s < 0.0 {
                    (-b - p.1) / s
                } else {
                    f64::INFINITY
                };
                tx.min(ty).max(0.0)
            }
            Chamber::Circle { radius } => {
                let pu = p.0 * c + p.1 * s;
                let pp = p.0 * p.0 + p.1 * p.1;
                (-pu + (pu * pu - (pp - radius * radius)).max(0.0).sqrt()).max(0.0)
            }
        }
    }

    /// Polygon outline (closed), for rendering.
    pub fn outline(&self, segments: usize) -> Vec<(f64, f64)> {
        match *self {
            Chamber::Rect { width, height } => {
                let (a, b) = (width / 2.0, height / 2.0);
                vec![(-a, -b), (a, -b), (a, b), (-a, b), (-a, -b)]
            }
            Chamber::Circle { radius } => (0..=segments)
                .map(|k| {
                    let t = TAU * k as f64 / segments as f64;
                    (radius * t.cos(), radius * t.sin())
                })
                .collect(),
        }
    }
}

/// A round body seen on the fly channel of the retina.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetinaConfig {
    pub sectors: usize,
    /// Degrees.
    pub sector_width: f64,
    pub fly_decay: f64,
    pub wall_decay: f64,
    pub fly_body_radius: f64,
}

impl Default for RetinaConfig {
    fn default() -> Self {
        RetinaConfig {
            sectors: 72,
            sector_width: 5.0,
            fly_decay: 20.0,
            wall_decay: 20.0,
            fly_body_radius: 1.0,
        }
    }
}

impl RetinaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sectors == 0 || (self.sectors as f64 * self.sector_width - 360.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{} sectors of {} degrees do not cover 360",
                self.sectors, self.sector_width
            )));
        }
        if !(self.fly_decay > 0.0 && self.wall_decay > 0.0 && self.fly_body_radius > 0.0) {
            return Err(Error::Config("retina decays and body radius must be > 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        2 * self.sectors
    }

    pub fn is_empty(&self) -> bool {
        self.sectors == 0
    }
}

/// Retina with other flies only.
pub fn compute_retina(
    agent: &FlyPose,
    others: &[FlyPose],
    chamber: &Chamber,
    cfg: &RetinaConfig,
) -> Vec<f64> {
    let bodies: Vec<Body> = others
        .iter()
        .map(|o| Body {
            x: o.x,
            y: o.y,
            radius: cfg.fly_body_radius,
        })
        .collect();
    compute_retina_bodies(agent, &bodies, chamber, cfg)
}

/// Retina of `agent`: first `sectors` entries are the body channel, the
/// next `sectors` the wall channel. Sector `k` is centered at
/// `heading + k * sector_width`.
pub fn compute_retina_bodies(
    agent: &FlyPose,
    bodies: &[Body],
    chamber: &Chamber,
    cfg: &RetinaConfig,
) -> Vec<f64> {
    let n = cfg.sectors;
    let w = cfg.sector_width.to_radians();
    let mut v = vec![0.0f64; 2 * n];
    for body in bodies {
        let (dx, dy) = (body.x - agent.x, body.y - agent.y);
        let d = dx.hypot(dy);
        let intensity = (-d / cfg.fly_decay).exp();
        if d <= 1e-12 {
            for s in v[..n].iter_mut() {
                *s = s.max(1.0);
            }
            continue;
        }
        let alpha = wrap_angle(dy.atan2(dx) - agent.heading);
        let half = (body.radius / d).atan();
        for (k, s) in v[..n].iter_mut().enumerate() {
            let gap = wrap_angle(k as f64 * w - alpha).abs();
            // Positive-measure overlap of the sector span and the body span.
            if gap < half + w / 2.0 {
                *s = s.max(intensity);
            }
        }
    }
    let p = agent.position();
    let inside = chamber.contains(p);
    for k in 0..n {
        v[n + k] = if inside {
            let dw = chamber.ray_distance(p, agent.heading + k as f64 * w);
            (-dw / cfg.wall_decay).exp()
        } else {
            1.0
        };
    }
    v
}

/// Parameters of the synthetic single-fly world.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFlyConfig {
    pub chamber: Chamber,
    pub retina: RetinaConfig,
    pub object_radius: f64,
    /// Distance to the object surface that triggers avoidance.
    pub object_trigger: f64,
    /// Clearance along the heading that triggers wall avoidance.
    pub wall_trigger: f64,
    /// Degrees per frame.
    pub wall_turn: f64,
    pub object_turn: f64,
    pub heading_jitter: f64,
    pub speed_mean: f64,
    pub speed_sd: f64,
    pub speed_max: f64,
    pub speed_autocorr: f64,
    pub sideways_sd: f64,
    pub sideways_autocorr: f64,
    pub wing_event_rate: f64,
    /// Degrees.
    pub wing_ext_angle: f64,
    pub wing_ramp: usize,
    pub wing_hold: usize,
    /// Resting wing angle (degrees) and its frame-to-frame variation.
    pub wing_rest_mean: f64,
    pub wing_rest_sd: f64,
    /// Posture fluctuation of wing and body lengths (mm).
    pub length_sd: f64,
    pub length_autocorr: f64,
    /// Minimum distance kept from walls and the object surface.
    pub min_gap: f64,
}

impl Default for SynthFlyConfig {
    fn default() -> Self {
        SynthFlyConfig {
            chamber: Chamber::default(),
            retina: RetinaConfig::default(),
            object_radius: 5.0,
            object_trigger: 10.0,
            wall_trigger: 8.0,
            wall_turn: 15.0,
            object_turn: 10.0,
            heading_jitter: 5.0,
            speed_mean: 1.0,
            speed_sd: 0.3,
            speed_max: 2.0,
            speed_autocorr: 0.95,
            sideways_sd: 0.1,
            sideways_autocorr: 0.9,
            wing_event_rate: 0.01,
            wing_ext_angle: 60.0,
            wing_ramp: 5,
            wing_hold: 20,
            wing_rest_mean: 5.0,
            wing_rest_sd: 1.5,
            length_sd: 0.05,
            length_autocorr: 0.9,
            min_gap: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthEvent {
    /// A wing extension starting at `start`, lasting `len` frames.
    WingExtension { start: usize, len: usize, side: Side },
    /// An object encounter beginning at `frame`, resolved by turning `side`.
    ObjectTurn { frame: usize, side: Side },
}

#[derive(Clone, Debug)]
pub struct SynthFlyTrial {
    pub trial: TrialData,
    pub poses: Vec<FlyPose>,
    pub events: Vec<SynthEvent>,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) step: keeps marginal `N(mean, sd)` with lag-1
/// correlation `rho`.
fn ar1<R: Rng + ?Sized>(prev: f64, mean: f64, sd: f64, rho: f64, rng: &mut R) -> f64 {
    mean + rho * (prev - mean) + sd * (1.0 - rho * rho).sqrt() * gauss(rng)
}

struct WingEvent {
    side: Side,
    frame: usize,
}

impl SynthFlyConfig {
    pub fn object(&self) -> Body {
        Body {
            x: 0.0,
            y: 0.0,
            radius: self.object_radius,
        }
    }

    pub fn wing_event_len(&self) -> usize {
        2 * self.wing_ramp + self.wing_hold
    }

    /// Wing angle (degrees above rest) at frame `f` of an event.
    fn wing_profile(&self, f: usize, rest: f64) -> f64 {
        let (ramp, hold) = (self.wing_ramp, self.wing_hold);
        let peak = self.wing_ext_angle;
        if f < ramp {
            rest + (peak - rest) * (f + 1) as f64 / ramp as f64
        } else if f < ramp + hold {
            peak
        } else {
            let k = f - ramp - hold;
            peak - (peak - rest) * (k + 1) as f64 / ramp as f64
        }
    }

    fn object_clearance(&self, p: (f64, f64)) -> f64 {
        p.0.hypot(p.1) - self.object_radius
    }

    fn is_safe(&self, p: (f64, f64)) -> bool {
        self.chamber.clearance(p) >= self.min_gap && self.object_clearance(p) >= self.min_gap
    }

    pub fn validate(&self) -> Result<()> {
        self.chamber.validate()?;
        self.retina.validate()?;
        if !(self.wing_event_rate >= 0.0 && self.wing_event_rate <= 1.0) {
            return Err(Error::Config("wing_event_rate outside [0, 1]".into()));
        }
        if self.wing_ramp == 0 {
            return Err(Error::Config("wing_ramp must be >= 1".into()));
        }
        Ok(())
    }
}

/// Simulates one fly for `frames` frames under the SynthFly laws.
///
/// 1. Forward speed: AR(1) around `speed_mean`, clipped to `[0, speed_max]`.
/// 2. Heading jitter `N(0, heading_jitter)` degrees per frame.
/// 3. Wall avoidance: clearance along the heading below `wall_trigger` turns
///    `wall_turn` per frame toward the side with more room.
/// 4. Object avoidance: within `object_trigger` of the central disc, pick
///    left or right with p = 0.5 and keep turning that way until clear.
/// 5. Wing extension: with `wing_event_rate` per frame, extend the left or
///    right wing with p = 0.5 (ramp, hold, retract); all frames labeled.
///
/// Sideways steps, resting wing angles and apparent lengths follow small
/// autocorrelated posture fluctuations. Steps are shortened so the fly keeps
/// `min_gap` from walls and the object.
pub fn synthfly_generate(frames: usize, seed: u64, cfg: &SynthFlyConfig) -> Result<SynthFlyTrial> {
    cfg.validate()?;
    if frames == 0 {
        return Err(Error::Config("need at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = loop {
        let (w, h) = match cfg.chamber {
            Chamber::Rect { width, height } => (width, height),
            Chamber::Circle { radius } => (2.0 * radius, 2.0 * radius),
        };
        let p = (rng.random_range(-w / 2.0..w / 2.0), rng.random_range(-h / 2.0..h / 2.0));
        if cfg.chamber.clearance(p) > cfg.wall_trigger && cfg.object_clearance(p) > cfg.object_trigger {
            break p;
        }
    };
    let rest = cfg.wing_rest_mean;
    let mut pose = FlyPose::new(start.0, start.1, rng.random_range(-PI..PI));
    pose.wing_angle_left = rest.to_radians();
    pose.wing_angle_right = rest.to_radians();
    let (len0, body0) = (pose.wing_len_left, pose.body_len);

    let mut speed = cfg.speed_mean;
    let mut side_step = 0.0;
    let mut rest_l = rest;
    let mut rest_r = rest;
    let mut dlen = [0.0f64; 3];
    let mut object_side: Option<Side> = None;
    let mut wing: Option<WingEvent> = None;
    let mut events = Vec::new();
    let mut poses = Vec::with_capacity(frames);
    let mut left_lab = vec![false; frames];
    let mut right_lab = vec![false; frames];
    let event_len = cfg.wing_event_len();

    poses.push(pose);
    for i in 1..frames {
        let p = pose.position();
        speed = ar1(speed, cfg.speed_mean, cfg.speed_sd, cfg.speed_autocorr, &mut rng)
            .clamp(0.0, cfg.speed_max);
        side_step = ar1(side_step, 0.0, cfg.sideways_sd, cfg.sideways_autocorr, &mut rng);

        let mut turn = cfg.heading_jitter * gauss(&mut rng);
        let ahead = cfg.chamber.ray_distance(p, pose.heading);
        let near_object = cfg.object_clearance(p) < cfg.object_trigger;
        if !near_object {
            object_side = None;
        }
        if ahead < cfg.wall_trigger {
            let left = cfg.chamber.ray_distance(p, pose.heading + FRAC_PI_2);
            let right = cfg.chamber.ray_distance(p, pose.heading - FRAC_PI_2);
            turn += if left >= right { cfg.wall_turn } else { -cfg.wall_turn };
        } else if near_object {
            let side = *object_side.get_or_insert_with(|| {
                let s = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
                events.push(SynthEvent::ObjectTurn { frame: i, side: s });
                s
            });
            turn += match side {
                Side::Left => cfg.object_turn,
                Side::Right => -cfg.object_turn,
            };
        }

        if wing.is_none() && rng.random_bool(cfg.wing_event_rate) {
            let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
            events.push(SynthEvent::WingExtension {
                start: i,
                len: event_len.min(frames - i),
                side,
            });
            wing = Some(WingEvent { side, frame: 0 });
        }
        rest_l = ar1(rest_l, rest, cfg.wing_rest_sd, 0.9, &mut rng);
        rest_r = ar1(rest_r, rest, cfg.wing_rest_sd, 0.9, &mut rng);
        let (mut ang_l, mut ang_r) = (rest_l, rest_r);
        if let Some(ev) = wing.as_mut() {
            let a = cfg.wing_profile(ev.frame, rest);
            match ev.side {
                Side::Left => {
                    ang_l = a;
                    left_lab[i] = true;
                }
                Side::Right => {
                    ang_r = a;
                    right_lab[i] = true;
                }
            }
            ev.frame += 1;
            if ev.frame >= event_len {
                wing = None;
            }
        }

        let lens = [pose.wing_len_left, pose.wing_len_right, pose.body_len];
        let targets = [len0, len0, body0];
        for k in 0..3 {
            // Smooth length changes that revert to the nominal length.
            dlen[k] = cfg.length_autocorr * dlen[k] - 0.05 * (lens[k] - targets[k])
                + cfg.length_sd * (1.0 - cfg.length_autocorr * cfg.length_autocorr).sqrt() * gauss(&mut rng);
        }

        let mut m = [
            speed,
            side_step,
            turn.to_radians(),
            ang_l.max(0.0).to_radians(),
            ang_r.max(0.0).to_radians(),
            dlen[0],
            dlen[1],
            dlen[2],
        ];
        let mut next = apply_motion(&pose, &m);
        let mut shrink = 0;
        while !cfg.is_safe(next.position()) && shrink < 30 {
            m[0] *= 0.5;
            m[1] *= 0.5;
            next = apply_motion(&pose, &m);
            shrink += 1;
        }
        if !cfg.is_safe(next.position()) {
            m[0] = 0.0;
            m[1] = 0.0;
            next = apply_motion(&pose, &m);
        }
        pose = next;
        poses.push(pose);
    }

    let n = cfg.retina.len();
    let object = [cfg.object()];
    let mut x = Matrix::zeros(frames, MOTION_DIMS);
    let mut v = Matrix::zeros(frames, n);
    for i in 0..frames {
        let row: [f64; MOTION_DIMS] = if i == 0 {
            let p = &poses[0];
            [0.0, 0.0, 0.0, p.wing_angle_left, p.wing_angle_right, 0.0, 0.0, 0.0]
        } else {
            motion_between(&poses[i - 1], &poses[i])
        };
        for (j, val) in row.iter().enumerate() {
            x.set(i, j, if val.abs() < SNAP_EPS { 0.0 } else { *val });
        }
        v.row_mut(i)
            .copy_from_slice(&compute_retina_bodies(&poses[i], &object, &cfg.chamber, &cfg.retina));
    }
    let mut labels = Vec::with_capacity(frames * 2);
    for i in 0..frames {
        labels.push(left_lab[i]);
        labels.push(right_lab[i]);
    }
    let track = AgentTrack::new(0, x, v, labels, vec![true; frames], 2)?;
    let mut trial = TrialData::new(
        format!("synthfly_{seed}"),
        vec![CLASS_LEFT_WING.to_string(), CLASS_RIGHT_WING.to_string()],
        vec![track],
    )?;
    trial.attrs.insert("seed".into(), seed.to_string());
    trial.attrs.insert("domain".into(), "fly".into());
    Ok(SynthFlyTrial {
        trial,
        poses,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, h: f64) -> FlyPose {
        FlyPose::new(x, y, h)
    }

    #[test]
    fn zero_motion_keeps_pose() {
        let mut p = pose(3.0, -1.0, 0.4);
        p.wing_angle_left = 0.2;
        let m = [0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(apply_motion(&p, &m), p);
    }

    #[test]
    fn forward_along_heading() {
        let q = apply_motion(&pose(0.0, 0.0, 0.0), &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!((q.x, q.y), (2.0, 0.0));
    }

    #[test]
    fn turns_compose_like_complex_rotation() {
        // Oracle: position and heading as complex numbers.
        let quarter = [1.0, 0.5, FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0];
        let q = apply_motion(&apply_motion(&pose(0.0, 0.0, 0.0), &quarter), &quarter);
        let mut z = (0.0f64, 0.0f64);
        let mut dir = (1.0f64, 0.0f64);
        for _ in 0..2 {
            let step = (1.0 * dir.0 - 0.5 * dir.1, 1.0 * dir.1 + 0.5 * dir.0);
            z = (z.0 + step.0, z.1 + step.1);
            dir = (-dir.1, dir.0);
        }
        assert!((q.x - z.0).abs() < 1e-12 && (q.y - z.1).abs() < 1e-12);
        assert!((q.heading - PI).abs() < 1e-12);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_has_dark_fly_channel() {
        let v = compute_retina(&pose(1.0, 2.0, 0.3), &[], &Chamber::default(), &RetinaConfig::default());
        assert_eq!(v.len(), 144);
        assert!(v[..72].iter().all(|&s| s == 0.0));
        assert!(v[72..].iter().all(|&s| s > 0.0 && s <= 1.0));
    }

    #[test]
    fn square_chamber_wall_channel_has_fourfold_symmetry() {
        let ch = Chamber::Rect {
            width: 50.0,
            height: 50.0,
        };
        let v = compute_retina(&pose(0.0, 0.0, 0.0), &[], &ch, &RetinaConfig::default());
        let wall = &v[72..];
        for k in 0..72 {
            assert!((wall[k] - wall[(k + 18) % 72]).abs() < 1e-12);
        }
    }

    /// Dense angular sampling: a sector is occupied when any sample inside it
    /// lies within the body's angular half-width.
    fn sampled_sectors(rel_angle: f64, half: f64, cfg: &RetinaConfig) -> Vec<usize> {
        let w = cfg.sector_width.to_radians();
        (0..cfg.sectors)
            .filter(|&k| {
                (0..=2000).any(|j| {
                    let a = k as f64 * w - w / 2.0 + w * (j as f64 + 0.5) / 2001.0;
                    wrap_angle(a - rel_angle).abs() < half
                })
            })
            .collect()
    }

    #[test]
    fn fly_dead_ahead_matches_sampling_oracle() {
        let cfg = RetinaConfig::default();
        let agent = pose(0.0, 0.0, 0.7);
        let d = 5.67;
        let other = pose(d * 0.7f64.cos(), d * 0.7f64.sin(), 0.0);
        let v = compute_retina(&agent, &[other], &Chamber::default(), &cfg);
        let lit: Vec<usize> = (0..72).filter(|&k| v[k] > 0.0).collect();
        let oracle = sampled_sectors(0.0, (1.0f64 / d).atan(), &cfg);
        assert_eq!(lit, oracle);
        // atan(1 / 5.67) is just over 10 degrees, reaching into sectors ±2.
        assert_eq!(lit, vec![0, 1, 2, 70, 71]);
        for &k in &lit {
            assert!((v[k] - (-d / 20.0f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_fly_wins_each_sector() {
        let cfg = RetinaConfig::default();
        let agent = pose(0.0, 0.0, 0.0);
        let v = compute_retina(&agent, &[pose(10.0, 0.0, 0.0), pose(4.0, 0.0, 0.0)], &Chamber::default(), &cfg);
        assert!((v[0] - (-4.0f64 / 20.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn outside_chamber_sees_full_walls() {
        let v = compute_retina(&pose(100.0, 0.0, 0.0), &[], &Chamber::default(), &RetinaConfig::default());
        assert!(v[72..].iter().all(|&s| s == 1.0));
    }

    #[test]
    fn circle_ray_distance() {
        let ch = Chamber::Circle { radius: 10.0 };
        assert!((ch.ray_distance((3.0, 0.0), 0.0) - 7.0).abs() < 1e-12);
        assert!((ch.ray_distance((3.0, 0.0), PI) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthFlyConfig::default();
        let a = synthfly_generate(500, 3, &cfg).unwrap();
        let b = synthfly_generate(500, 3, &cfg).unwrap();
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.trial.agents[0].x, b.trial.agents[0].x);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn generator_events_are_balanced_and_fly_stays_inside() {
        // The fly spends most of its time along the walls, so 1e5 frames hold
        // only about 100 object encounters; ten runs are pooled to make the
        // +-0.05 band meaningful (binomial sd about 0.016).
        let cfg = SynthFlyConfig::default();
        let (mut wl, mut wn, mut ol, mut on) = (0, 0, 0, 0);
        for seed in 0..10 {
            let t = synthfly_generate(100_000, seed, &cfg).unwrap();
            for e in &t.events {
                match *e {
                    SynthEvent::WingExtension { side, .. } => {
                        wn += 1;
                        wl += (side == Side::Left) as usize;
                    }
                    SynthEvent::ObjectTurn { side, .. } => {
                        on += 1;
                        ol += (side == Side::Left) as usize;
                    }
                }
            }
            if seed == 0 {
                let fl = wl as f64 / wn as f64;
                assert!(wn > 500, "{wn} wing events");
                assert!((fl - 0.5).abs() <= 0.05, "left wing fraction {fl}");
            }
            for p in &t.poses {
                assert!(cfg.chamber.clearance(p.position()) > 0.0);
                assert!(p.x.hypot(p.y) > cfg.object_radius);
            }
        }
        assert!(on > 500, "{on} object encounters");
        let fo = ol as f64 / on as f64;
        assert!((fo - 0.5).abs() <= 0.05, "left object-turn fraction {fo}");
    }

    #[test]
    fn generator_labels_whole_wing_events() {
        let cfg = SynthFlyConfig::default();
        let t = synthfly_generate(5_000, 4, &cfg).unwrap();
        let track = &t.trial.agents[0];
        for e in &t.events {
            if let SynthEvent::WingExtension { start, len, side } = *e {
                let k = if side == Side::Left { 0 } else { 1 };
                assert!((start..start + len).all(|f| track.label(f, k)));
                let peak = track.x.get(start + cfg.wing_ramp, 3 + k);
                if len == cfg.wing_event_len() {
                    assert!((peak - 60f64.to_radians()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generator_motion_replays_through_kinematics() {
        let t = synthfly_generate(2_000, 8, &SynthFlyConfig::default()).unwrap();
        let x = &t.trial.agents[0].x;
        let mut p = t.poses[0];
        for i in 1..t.poses.len() {
            p = apply_motion(&p, x.row(i));
            let q = t.poses[i];
            assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            assert!(wrap_angle(p.heading - q.heading).abs() < 1e-9);
            p = q;
        }
    }

    proptest! {
        #[test]
        fn retina_is_egocentric(
            ax in -30.0f64..30.0, ay in -20.0f64..20.0, h in -3.0f64..3.0, rot in -3.0f64..3.0,
            others in proptest::collection::vec((-40.0f64..40.0, -40.0f64..40.0), 0..5),
        ) {
            let cfg = RetinaConfig::default();
            let agent = pose(ax, ay, h);
            let flies: Vec<FlyPose> = others.iter().map(|&(x, y)| pose(x, y, 0.0)).collect();
            // Rotate everything about the agent; walls are excluded since the
            // chamber does not rotate with the scene.
            let (s, c) = rot.sin_cos();
            let rotated: Vec<FlyPose> = flies.iter().map(|f| {
                let (dx, dy) = (f.x - ax, f.y - ay);
                pose(ax + dx * c - dy * s, ay + dx * s + dy * c, 0.0)
            }).collect();
            let big = Chamber::Circle { radius: 1e6 };
            let v1 = compute_retina(&agent, &flies, &big, &cfg);
            let v2 = compute_retina(&pose(ax, ay, h + rot), &rotated, &big, &cfg);
            for k in 0..72 {
                prop_assert!((v1[k] - v2[k]).abs() < 1e-6, "sector {}: {} vs {}", k, v1[k], v2[k]);
            }
            prop_assert!(v1.iter().all(|&s| (0.0..=1.0).contains(&s)));
        }

        #[test]
        fn differencing_inverts_apply_motion(
            x in -50.0f64..50.0, y in -50.0f64..50.0, h in -3.1f64..3.1,
            f in -2.0f64..2.0, s in -1.0f64..1.0, t in -0.5f64..0.5,
            wl in 0.0f64..1.5, wr in 0.0f64..1.5, dl in -0.1f64..0.1,
        ) {
            let p = pose(x, y, h);
            let m = [f, s, t, wl, wr, dl, -dl, dl / 2.0];
            let back = motion_between(&p, &apply_motion(&p, &m));
            for k in 0..MOTION_DIMS {
                prop_assert!((back[k] - m[k]).abs() < 1e-9);
            }
        }
    }
}
