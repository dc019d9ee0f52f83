//! Procedural corridor-navigation tasks.
//!
//! Each task is a corridor of fixed half-width around a seeded
//! piecewise-linear centerline. The agent is a unicycle moving at constant
//! speed; each discrete action selects a curvature, index 0 turning hardest
//! to the left. A scripted pure-pursuit controller acts as the expert: it
//! labels every visited state and takes over whenever the agent drifts too
//! far from the centerline.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Encoder, Theme};
use crate::error::{check_len, invalid, Result};
use crate::policy::{PolicyParams, Sample};

/// Environment family settings shared by every task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// State dimension `d`: lateral offset, heading error and `d - 2` rays.
    pub dim: usize,
    /// Number of discrete actions; odd so that the middle one drives straight.
    pub actions: usize,
    pub episode_len: usize,
    /// Lateral deviation, in corridor widths, that triggers an override.
    pub override_threshold: f64,
    pub half_width: f64,
    pub speed: f64,
    pub max_curvature: f64,
    pub lookahead: f64,
    pub ray_range: f64,
    /// Total angular spread of the ray fan, radians.
    pub ray_fov: f64,
    pub min_segment: f64,
    pub max_segment: f64,
    /// Largest heading change at a waypoint, radians.
    pub max_turn: f64,
    /// Largest heading of the centerline relative to the start direction.
    pub max_track_heading: f64,
    /// Tasks are split round-robin (by seed) into this many theme families;
    /// 0 makes every theme independent.
    pub theme_families: usize,
    /// Distance of each family's shared mix from the identity.
    pub family_shift: f64,
    /// Per-task perturbation on top of the family mix.
    pub theme_shift: f64,
    pub theme_gain_spread: f64,
    pub noise_scale: f64,
    /// Start offsets are drawn uniformly from `[-jitter, jitter]` (lateral)
    /// and `[-jitter/2, jitter/2]` radians (heading).
    pub start_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dim: 8,
            actions: 5,
            episode_len: 100,
            override_threshold: 0.25,
            half_width: 1.0,
            speed: 0.25,
            max_curvature: 0.6,
            lookahead: 1.2,
            ray_range: 3.0,
            ray_fov: 150f64.to_radians(),
            min_segment: 1.5,
            max_segment: 3.0,
            max_turn: 60f64.to_radians(),
            max_track_heading: 80f64.to_radians(),
            theme_families: 0,
            family_shift: 0.5,
            theme_shift: 0.05,
            theme_gain_spread: 0.2,
            noise_scale: 0.05,
            start_jitter: 0.2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(invalid("d", format!("need at least 3 features, got {}", self.dim)));
        }
        if self.actions < 3 || self.actions.is_multiple_of(2) {
            return Err(invalid(
                "A",
                format!("need an odd action count >= 3, got {}", self.actions),
            ));
        }
        if self.episode_len == 0 {
            return Err(invalid("episode_len", "must be positive"));
        }
        let positive = [
            ("override_threshold", self.override_threshold),
            ("half_width", self.half_width),
            ("speed", self.speed),
            ("max_curvature", self.max_curvature),
            ("lookahead", self.lookahead),
            ("ray_range", self.ray_range),
            ("min_segment", self.min_segment),
            ("max_turn", self.max_turn),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.max_segment < self.min_segment {
            return Err(invalid("max_segment", "must be at least min_segment"));
        }
        Ok(())
    }

    /// Curvature commanded by an action: `+max` for index 0 down to `-max`.
    pub fn action_curvature(&self, action: usize) -> f64 {
        let half = (self.actions - 1) as f64 / 2.0;
        self.max_curvature * (half - action as f64) / half
    }

    /// Relative angles of the ray fan, left to right is not implied.
    pub fn ray_angles(&self) -> Vec<f64> {
        let n = self.dim - 2;
        if n == 1 {
            return vec![0.0];
        }
        (0..n)
            .map(|i| -self.ray_fov / 2.0 + self.ray_fov * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Piecewise-linear centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    waypoints: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

/// Closest point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    pub progress: f64,
    /// Positive to the left of the direction of travel.
    pub lateral: f64,
    pub distance: f64,
    pub tangent: f64,
}

impl Track {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(invalid("track", "need at least two waypoints"));
        }
        let mut cumulative = vec![0.0];
        for w in waypoints.windows(2) {
            let len = dist(w[0], w[1]);
            if len <= 0.0 {
                return Err(invalid("track", "consecutive waypoints must differ"));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(Track { waypoints, cumulative })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_dir(&self, i: usize) -> [f64; 2] {
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    pub fn project(&self, pos: [f64; 2]) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.waypoints.len() - 1 {
            let a = self.waypoints[i];
            let dir = self.segment_dir(i);
            let seg_len = self.cumulative[i + 1] - self.cumulative[i];
            let rel = [pos[0] - a[0], pos[1] - a[1]];
            let t = (rel[0] * dir[0] + rel[1] * dir[1]).clamp(0.0, seg_len);
            let foot = [a[0] + t * dir[0], a[1] + t * dir[1]];
            let d = dist(pos, foot);
            if best.is_none_or(|b| d < b.distance) {
                let cross = dir[0] * rel[1] - dir[1] * rel[0];
                best = Some(Projection {
                    segment: i,
                    progress: self.cumulative[i] + t,
                    lateral: if cross >= 0.0 { d } else { -d },
                    distance: d,
                    tangent: dir[1].atan2(dir[0]),
                });
            }
        }
        best.expect("track has a segment")
    }

    /// Centerline point at arc length `s`, clamped to the track.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.iter().rposition(|c| *c <= s) {
            Some(i) if i + 1 < self.waypoints.len() => i,
            _ => self.waypoints.len() - 2,
        };
        let dir = self.segment_dir(i);
        let t = s - self.cumulative[i];
        let a = self.waypoints[i];
        [a[0] + t * dir[0], a[1] + t * dir[1]]
    }

    /// Heading of the centerline at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self
            .cumulative
            .iter()
            .rposition(|c| *c <= s)
            .unwrap_or(0)
            .min(self.waypoints.len() - 2);
        let dir = self.segment_dir(i);
        dir[1].atan2(dir[0])
    }
}

/// One seeded task: a themed corridor plus its episode settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_seed: u64,
    pub theme: Theme,
    pub track: Track,
    pub episode_len: usize,
    pub override_threshold: f64,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: [f64; 2],
    /// In `[-pi, pi)`.
    pub heading: f64,
    /// Arc length of the closest centerline point.
    pub progress: f64,
}

/// Everything recorded during one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    /// Encoded state and expert label for every step.
    pub samples: Vec<Sample>,
    /// Action the learner proposed at every step, whether or not it was executed.
    pub agent_actions: Vec<usize>,
    /// Steps at which the expert took control.
    pub overrides: Vec<usize>,
    pub task_id: u64,
    pub trajectory: Vec<AgentState>,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Steps where the learner's proposal matched the expert label.
    pub fn correct(&self) -> usize {
        self.samples
            .iter()
            .zip(&self.agent_actions)
            .filter(|(s, a)| s.action == **a)
            .count()
    }
}

/// Anything that can drive the agent.
pub trait Actor {
    fn act(&mut self, task: &TaskSpec, agent: &AgentState, state: &[f64]) -> Result<usize>;
}

impl Actor for PolicyParams {
    fn act(&mut self, _task: &TaskSpec, _agent: &AgentState, state: &[f64]) -> Result<usize> {
        self.predict(state)
    }
}

impl Actor for &PolicyParams {
    fn act(&mut self, _task: &TaskSpec, _agent: &AgentState, state: &[f64]) -> Result<usize> {
        self.predict(state)
    }
}

/// The scripted expert used as a policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertActor;

impl Actor for ExpertActor {
    fn act(&mut self, task: &TaskSpec, agent: &AgentState, _state: &[f64]) -> Result<usize> {
        Ok(expert_action(task, agent))
    }
}

/// Picks actions uniformly at random.
#[derive(Debug, Clone)]
pub struct UniformActor {
    rng: ChaCha8Rng,
}

impl UniformActor {
    pub fn new(seed: u64) -> Self {
        UniformActor {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Actor for UniformActor {
    fn act(&mut self, task: &TaskSpec, _agent: &AgentState, _state: &[f64]) -> Result<usize> {
        Ok(self.rng.gen_range(0..task.env.actions))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Builds the task for `task_seed`. The track is long enough that an episode
/// never runs off its end.
pub fn make_task(task_seed: u64, env: &EnvConfig) -> Result<TaskSpec> {
    env.validate()?;
    let theme = if env.theme_families > 0 {
        Theme::in_family(
            task_seed,
            task_seed % env.theme_families as u64,
            env.dim,
            env.family_shift,
            env.theme_shift,
            env.theme_gain_spread,
            env.noise_scale,
        )?
    } else {
        Theme::new(
            task_seed,
            env.dim,
            env.theme_shift,
            env.theme_gain_spread,
            env.noise_scale,
        )?
    };
    // separate stream from the theme so the two can be varied independently
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed ^ 0x7472_6163_6b00_0000);
    let needed = env.speed * env.episode_len as f64 + env.lookahead + env.ray_range + env.max_segment;
    let mut waypoints = vec![[0.0, 0.0]];
    let mut heading: f64 = 0.0;
    let mut length = 0.0;
    // straight run-in so every episode starts on a straight
    let first = env.max_segment.max(2.0 * env.lookahead);
    waypoints.push([first, 0.0]);
    length += first;
    while length < needed {
        let turn = rng.gen_range(-env.max_turn..=env.max_turn);
        heading = (heading + turn).clamp(-env.max_track_heading, env.max_track_heading);
        let seg = rng.gen_range(env.min_segment..=env.max_segment);
        let last = *waypoints.last().unwrap();
        waypoints.push([last[0] + seg * heading.cos(), last[1] + seg * heading.sin()]);
        length += seg;
    }
    Ok(TaskSpec {
        task_seed,
        theme,
        track: Track::new(waypoints)?,
        episode_len: env.episode_len,
        override_threshold: env.override_threshold,
        env: env.clone(),
    })
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        self.env.dim
    }

    pub fn actions(&self) -> usize {
        self.env.actions
    }

    pub fn with_override_threshold(mut self, threshold: f64) -> Self {
        self.override_threshold = threshold;
        self
    }

    pub fn start_state(&self, rng: &mut dyn RngCore) -> AgentState {
        let j = self.env.start_jitter;
        let (lat, head) = if j > 0.0 {
            (rng.gen_range(-j..=j), rng.gen_range(-j / 2.0..=j / 2.0))
        } else {
            (0.0, 0.0)
        };
        let position = [0.5 * self.env.lookahead, lat];
        AgentState {
            position,
            heading: wrap_angle(head),
            progress: self.track.project(position).progress,
        }
    }

    /// Lateral deviation from the centerline in corridor widths.
    pub fn deviation(&self, agent: &AgentState) -> f64 {
        self.track.project(agent.position).distance / (2.0 * self.env.half_width)
    }

    fn inside(&self, p: [f64; 2]) -> bool {
        self.track.project(p).distance <= self.env.half_width
    }

    /// Distance along a ray to the corridor wall, capped at `ray_range`.
    pub fn ray_distance(&self, origin: [f64; 2], angle: f64) -> f64 {
        if !self.inside(origin) {
            return 0.0;
        }
        let dir = [angle.cos(), angle.sin()];
        let at = |s: f64| [origin[0] + s * dir[0], origin[1] + s * dir[1]];
        let step = 0.1 * self.env.half_width;
        let mut lo = 0.0;
        let mut s = step;
        while s < self.env.ray_range {
            if !self.inside(at(s)) {
                let mut hi = s;
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    if self.inside(at(mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
            lo = s;
            s += step;
        }
        if self.inside(at(self.env.ray_range)) {
            self.env.ray_range
        } else {
            lo
        }
    }

    /// Raw observation before theme encoding: signed lateral offset, heading
    /// error, then the ray distances.
    pub fn observe(&self, agent: &AgentState) -> Vec<f64> {
        let proj = self.track.project(agent.position);
        let mut obs = Vec::with_capacity(self.env.dim);
        obs.push(proj.lateral);
        obs.push(wrap_angle(agent.heading - proj.tangent));
        for a in self.env.ray_angles() {
            obs.push(self.ray_distance(agent.position, agent.heading + a));
        }
        obs
    }

    /// Unicycle update under the action's curvature.
    pub fn step(&self, agent: &AgentState, action: usize) -> AgentState {
        let v = self.env.speed;
        let heading = wrap_angle(agent.heading + v * self.env.action_curvature(action));
        let position = [
            agent.position[0] + v * heading.cos(),
            agent.position[1] + v * heading.sin(),
        ];
        let progress = self.track.project(position).progress.clamp(0.0, self.track.length());
        AgentState {
            position,
            heading,
            progress,
        }
    }
}

/// Pure pursuit toward the centerline point one lookahead ahead, with the
/// commanded curvature snapped to the nearest action.
pub fn expert_action(task: &TaskSpec, agent: &AgentState) -> usize {
    let env = &task.env;
    let target = task.track.point_at(agent.progress + env.lookahead);
    let dx = target[0] - agent.position[0];
    let dy = target[1] - agent.position[1];
    let range = (dx * dx + dy * dy).sqrt().max(1e-9);
    let alpha = wrap_angle(dy.atan2(dx) - agent.heading);
    let curvature = 2.0 * alpha.sin() / range;
    nearest_action(env, curvature)
}

fn nearest_action(env: &EnvConfig, curvature: f64) -> usize {
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for a in 0..env.actions {
        let err = (env.action_curvature(a) - curvature).abs();
        if err < best_err {
            best = a;
            best_err = err;
        }
    }
    best
}

/// Runs one episode. The actor drives; every visited state is encoded and
/// labelled by the expert. Once deviation exceeds the task's threshold the
/// expert drives until it drops below half of it.
pub fn rollout(actor: &mut dyn Actor, task: &TaskSpec, rng: &mut dyn RngCore) -> Result<RolloutLog> {
    let t_max = task.episode_len;
    let mut log = RolloutLog {
        samples: Vec::with_capacity(t_max),
        agent_actions: Vec::with_capacity(t_max),
        overrides: Vec::new(),
        task_id: task.task_seed,
        trajectory: Vec::with_capacity(t_max),
    };
    let mut agent = task.start_state(rng);
    let mut overriding = false;
    for step in 0..t_max {
        let raw = task.observe(&agent);
        let state = task.theme.encode(&raw, rng)?;
        check_len("encoded state", task.dim(), state.len())?;
        let label = expert_action(task, &agent);
        let proposed = actor.act(task, &agent, &state)?;
        if proposed >= task.actions() {
            return Err(invalid("action", format!("actor chose {proposed}")));
        }
        let deviation = task.deviation(&agent);
        if overriding && deviation < task.override_threshold / 2.0 {
            overriding = false;
        }
        if !overriding && deviation > task.override_threshold {
            overriding = true;
            log.overrides.push(step);
        }
        let executed = if overriding { label } else { proposed };
        log.samples.push(Sample::new(state, label, task.task_seed));
        log.agent_actions.push(proposed);
        log.trajectory.push(agent);
        agent = task.step(&agent, executed);
    }
    Ok(log)
}

/// Corrupts exactly `floor(fraction * N)` labels, chosen uniformly without
/// replacement; each gets a uniformly drawn wrong label.
pub fn corrupt_labels(samples: &[Sample], fraction: f64, actions: usize, rng: &mut dyn RngCore) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid("corrupt_frac", format!("must lie in [0, 1], got {fraction}")));
    }
    let count = (fraction * samples.len() as f64).floor() as usize;
    corrupt_count(samples, count, actions, rng)
}

/// Corrupts exactly `count` labels.
pub fn corrupt_count(samples: &[Sample], count: usize, actions: usize, rng: &mut dyn RngCore) -> Result<Vec<Sample>> {
    if count > samples.len() {
        return Err(invalid(
            "corruption count",
            format!("{count} exceeds {} samples", samples.len()),
        ));
    }
    if actions < 2 && count > 0 {
        return Err(invalid("A", "need two actions to corrupt a label"));
    }
    let mut out = samples.to_vec();
    if count == 0 {
        return Ok(out);
    }
    let mut chosen = sample_indices(rng, samples.len(), count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let s = &mut out[i];
        let shift = rng.gen_range(1..actions);
        s.action = (s.action + shift) % actions;
        s.corrupted = true;
    }
    Ok(out)
}
