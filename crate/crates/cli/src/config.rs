//! Run configuration files: UTF-8 `key = value` lines grouped under `[env]`, `[algo]`,
//! `[train]` and `[log]` headers, with `#` comments. Every key has a default, so an empty
//! document is valid; unknown sections and keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;

use metasaclag::diffcore::OptKind;
use metasaclag::trainer::RunConfig;

use crate::error::{CliError, CliResult};
use crate::presets::Preset;

pub const SECTIONS: [&str; 4] = ["env", "algo", "train", "log"];

/// One `key = value` line, or a command-line override in the same form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub section: String,
    pub key: String,
    pub value: String,
    /// Where the assignment came from, for error messages.
    pub origin: String,
}

impl Assignment {
    pub fn new(section: &str, key: &str, value: impl ToString, origin: &str) -> Self {
        Self {
            section: section.into(),
            key: key.into(),
            value: value.to_string(),
            origin: origin.into(),
        }
    }

    /// Parses a `section.key=value` override.
    pub fn from_override(text: &str) -> CliResult<Self> {
        let err = || CliError::Usage(format!("override `{text}` must have the form section.key=value"));
        let (path, value) = text.split_once('=').ok_or_else(err)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(err)?;
        Ok(Self::new(section, key, value.trim(), "command line"))
    }

    fn error(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("{}: [{}] {}: {msg}", self.origin, self.section, self.key))
    }

    fn parse<T: std::str::FromStr>(&self) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e| self.error(format!("cannot parse `{}`: {e}", self.value)))
    }

    fn parse_bool(&self) -> CliResult<bool> {
        match self.value.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(self.error(format!("expected true or false, got `{v}`"))),
        }
    }
}

/// Splits a document into assignments. `sections` lists the accepted headers.
pub fn parse_document(text: &str, origin: &str, sections: &[&str]) -> CliResult<Vec<Assignment>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("{origin}:{}", i + 1);
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| CliError::Config(format!("{at}: malformed section header `{line}`")))?
                .trim();
            if !sections.contains(&name) {
                return Err(CliError::Config(format!(
                    "{at}: unknown section [{name}] (expected one of {})",
                    sections.join(", ")
                )));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{at}: expected `key = value`, got `{line}`")))?;
        let section = section
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{at}: `{}` appears before any section header", key.trim())))?;
        out.push(Assignment::new(section, key.trim(), value.trim(), &at));
    }
    Ok(out)
}

/// Everything a `train` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub preset: Option<String>,
    pub log_dir: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            preset: None,
            log_dir: None,
            checkpoint_every: 0,
        }
    }
}

impl Settings {
    /// Resolves assignments in order over the defaults. A preset (from `[algo] preset`)
    /// is applied first, for the final variant, so explicit keys always win over it.
    pub fn resolve(assignments: &[Assignment]) -> CliResult<Self> {
        let mut settings = Settings::default();
        let last = |key: &str| assignments.iter().rev().find(|a| a.section == "algo" && a.key == key);
        if let Some(a) = last("variant") {
            settings.run.hyper.variant = a.parse()?;
        }
        if let Some(a) = last("preset") {
            let preset = Preset::named(&a.value).map_err(|e| a.error(e))?;
            preset.apply(&mut settings.run.hyper);
            settings.preset = Some(preset.name);
        }
        for a in assignments {
            settings.set(a)?;
        }
        settings.run.validate()?;
        Ok(settings)
    }

    fn set(&mut self, a: &Assignment) -> CliResult<()> {
        let run = &mut self.run;
        let h = &mut run.hyper;
        match (a.section.as_str(), a.key.as_str()) {
            ("env", "name") => run.env = a.value.clone(),
            ("algo", "variant") => h.variant = a.parse()?,
            ("algo", "preset") => {}
            ("algo", "beta_nu") => h.beta_nu = a.parse()?,
            ("algo", "beta_phi") => h.beta_phi = a.parse()?,
            ("algo", "beta_eps") => h.beta_eps = a.parse()?,
            ("algo", "beta_alpha") => h.beta_alpha = a.parse()?,
            ("algo", "critic_lr") => h.critic_lr = a.parse()?,
            ("algo", "tau") => h.tau = a.parse()?,
            ("algo", "batch_size") => h.batch_size = a.parse()?,
            ("algo", "init_nu") => h.init_nu = a.parse()?,
            ("algo", "init_eps") => h.init_eps = a.parse()?,
            ("algo", "init_alpha") => h.init_alpha = a.parse()?,
            ("algo", "gamma_r") => h.gamma_r = a.parse()?,
            ("algo", "gamma_c") => h.gamma_c = a.parse()?,
            ("algo", "hidden") => {
                h.hidden = a
                    .value
                    .split(',')
                    .map(|w| w.trim().parse().map_err(|e| a.error(format!("bad layer width `{w}`: {e}"))))
                    .collect::<CliResult<_>>()?
            }
            ("algo", "optimizer") => {
                h.optimizer = match a.value.as_str() {
                    "sgd" => OptKind::Sgd,
                    "rmsprop" => OptKind::RmsProp,
                    v => return Err(a.error(format!("expected sgd or rmsprop, got `{v}`"))),
                }
            }
            ("algo", "rms_decay") => h.rms_decay = a.parse()?,
            ("algo", "rms_eps") => h.rms_eps = a.parse()?,
            ("algo", "meta_rms_eps") => h.meta_rms_eps = a.parse()?,
            ("algo", "alpha_min") => h.alpha_min = a.parse()?,
            ("algo", "eps_min") => h.eps_min = a.parse()?,
            ("algo", "target_entropy") => {
                h.target_entropy = if a.value == "auto" { None } else { Some(a.parse()?) }
            }
            ("algo", "expanded_actor_gradient") => h.expanded_actor_gradient = a.parse_bool()?,
            ("train", "total_steps") => run.total_steps = a.parse()?,
            ("train", "eval_every") => run.eval_every = a.parse()?,
            ("train", "eval_episodes") => run.eval_episodes = a.parse()?,
            ("train", "violation_window") => run.violation_window = a.parse()?,
            ("train", "seed") => run.seed = a.parse()?,
            ("train", "warmup") => run.warmup = a.parse()?,
            ("train", "init_prefill") => run.init_prefill = a.parse()?,
            ("train", "transition_capacity") => run.transition_capacity = a.parse()?,
            ("train", "safety_capacity") => run.safety_capacity = a.parse()?,
            ("train", "init_capacity") => run.init_capacity = a.parse()?,
            ("log", "dir") => self.log_dir = Some(PathBuf::from(&a.value)),
            ("log", "checkpoint_every") => self.checkpoint_every = a.parse()?,
            (section, key) if SECTIONS.contains(&section) => {
                return Err(CliError::Config(format!("{}: unknown key `{key}` in [{section}]", a.origin)))
            }
            (section, _) => return Err(CliError::Config(format!("{}: unknown section [{section}]", a.origin))),
        }
        Ok(())
    }

    /// A complete document that resolves back to these settings.
    pub fn render(&self) -> String {
        let r = &self.run;
        let h = &r.hyper;
        let mut out = String::from("# metasaclag run configuration\n\n[env]\n");
        let _ = writeln!(out, "name = {}", r.env);
        out.push_str("\n[algo]\n");
        let _ = writeln!(out, "variant = {}", h.variant);
        let floats = [
            ("beta_nu", h.beta_nu),
            ("beta_phi", h.beta_phi),
            ("beta_eps", h.beta_eps),
            ("beta_alpha", h.beta_alpha),
            ("critic_lr", h.critic_lr),
            ("tau", h.tau),
            ("init_nu", h.init_nu),
            ("init_eps", h.init_eps),
            ("init_alpha", h.init_alpha),
            ("gamma_r", h.gamma_r),
            ("gamma_c", h.gamma_c),
            ("rms_decay", h.rms_decay),
            ("rms_eps", h.rms_eps),
            ("meta_rms_eps", h.meta_rms_eps),
            ("alpha_min", h.alpha_min),
            ("eps_min", h.eps_min),
        ];
        for (k, v) in floats {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "batch_size = {}", h.batch_size);
        let hidden: Vec<String> = h.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "hidden = {}", hidden.join(","));
        let _ = writeln!(
            out,
            "optimizer = {}",
            match h.optimizer {
                OptKind::Sgd => "sgd",
                OptKind::RmsProp => "rmsprop",
            }
        );
        match h.target_entropy {
            Some(t) => writeln!(out, "target_entropy = {t:?}"),
            None => writeln!(out, "target_entropy = auto"),
        }
        .ok();
        let _ = writeln!(out, "expanded_actor_gradient = {}", h.expanded_actor_gradient);
        out.push_str("\n[train]\n");
        for (k, v) in [
            ("total_steps", r.total_steps),
            ("eval_every", r.eval_every),
            ("eval_episodes", r.eval_episodes),
            ("violation_window", r.violation_window),
            ("warmup", r.warmup),
            ("init_prefill", r.init_prefill),
            ("transition_capacity", r.transition_capacity),
            ("safety_capacity", r.safety_capacity),
            ("init_capacity", r.init_capacity),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "seed = {}", r.seed);
        out.push_str("\n[log]\n");
        if let Some(dir) = &self.log_dir {
            let _ = writeln!(out, "dir = {}", dir.display());
        }
        let _ = writeln!(out, "checkpoint_every = {}", self.checkpoint_every);
        out
    }
}
