//! Run configuration: preset, then `key=value` file, then flags.

use std::fmt;
use std::path::PathBuf;

use iwil::dagger::TrainConfig;
use iwil::envs::EnvConfig;
use iwil::experiments::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub preset: Preset,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Keys accepted in config files; flags use the same names with `-`.
pub const KEYS: &[&str] = &[
    "alpha",
    "beta",
    "gamma",
    "K",
    "tau",
    "tau_hat",
    "n_train_tasks",
    "trajectories_per_task",
    "seed",
    "d",
    "A",
    "episode_len",
    "override_threshold",
    "corrupt_frac",
    "test_trials",
    "eval_trials",
    "out_dir",
    "preset",
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut env = EnvConfig::default();
        let train = match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => {
                env.episode_len *= 10;
                TrainConfig::paper()
            }
        };
        RunConfig {
            train,
            env,
            preset,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            env: self.env.clone(),
            train: self.train.clone(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e| ConfigError(format!("bad value {v:?} for {key}: {e}")))
        }
        let t = &mut self.train;
        let e = &mut self.env;
        match key {
            "alpha" => t.alpha = num(key, value)?,
            "beta" => t.beta = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "K" | "k" => t.k = num(key, value)?,
            "tau" => t.tau = num(key, value)?,
            "tau_hat" => t.tau_hat = num(key, value)?,
            "n_train_tasks" => t.n_train_tasks = num(key, value)?,
            "trajectories_per_task" => t.trajectories_per_task = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "d" => e.dim = num(key, value)?,
            "A" | "a" => e.actions = num(key, value)?,
            "episode_len" => e.episode_len = num(key, value)?,
            "override_threshold" => e.override_threshold = num(key, value)?,
            "corrupt_frac" => t.corrupt_frac = num(key, value)?,
            "test_trials" => t.test_trials = num(key, value)?,
            "eval_trials" => t.eval_trials = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "preset" => return Err(ConfigError("preset must be the first setting applied".into())),
            other => return Err(ConfigError(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.env.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.train.eval_trials == 0 {
            return Err(ConfigError("eval_trials must be positive".into()));
        }
        Ok(())
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) && k != "k" && k != "a" {
            return Err(ConfigError(format!("line {}: unknown config key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Layers the preset, file settings and flag settings, in that order.
pub fn resolve(
    preset_flag: Option<Preset>,
    file: &[(String, String)],
    flags: &[(&str, String)],
) -> Result<RunConfig, ConfigError> {
    let file_preset = file
        .iter()
        .rev()
        .find(|(k, _)| k == "preset")
        .map(|(_, v)| v.parse::<Preset>().map_err(ConfigError))
        .transpose()?;
    let mut cfg = RunConfig::preset(preset_flag.or(file_preset).unwrap_or(Preset::Desk));
    for (k, v) in file.iter().filter(|(k, _)| k != "preset") {
        cfg.set(k, v)?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_preset_file_flags() {
        let file = parse_file("# comment\npreset = paper\ntau = 10\nalpha=0.5\n").unwrap();
        let cfg = resolve(None, &file, &[("alpha", "0.25".into())]).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.train.tau, 10);
        assert_eq!(cfg.train.tau_hat, 4000);
        assert_eq!(cfg.train.alpha, 0.25);
        let cfg = resolve(Some(Preset::Desk), &file, &[]).unwrap();
        assert_eq!((cfg.train.tau, cfg.train.tau_hat, cfg.train.alpha), (10, 400, 0.5));
    }

    #[test]
    fn presets_differ_by_a_factor_of_ten() {
        let desk = RunConfig::preset(Preset::Desk);
        let paper = RunConfig::preset(Preset::Paper);
        assert_eq!(paper.train.tau, 10 * desk.train.tau);
        assert_eq!(paper.train.tau_hat, 10 * desk.train.tau_hat);
        assert_eq!(paper.env.episode_len, 10 * desk.env.episode_len);
        assert_eq!((paper.train.n_train_tasks, paper.train.trajectories_per_task), (6, 4));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(parse_file("nonsense = 1").is_err());
        assert!(parse_file("tau 3").is_err());
        assert!(resolve(None, &parse_file("tau = -1").unwrap(), &[]).is_err());
        assert!(resolve(None, &[], &[("alpha", "0".into())]).is_err());
        assert!(resolve(None, &[], &[("A", "4".into())]).is_err());
        assert!(resolve(None, &parse_file("preset = huge").unwrap(), &[]).is_err());
    }
}
