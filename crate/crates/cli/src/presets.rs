//! Baseline threshold and multiplier presets, shipped as small configuration files.

use std::fmt::Write as _;

use metasaclag::algo::{HyperParams, Variant};

use crate::config::parse_document;
use crate::error::{CliError, CliResult};

/// `(name, file contents)` of every bundled preset.
pub const BUNDLED: [(&str, &str); 5] = [
    ("table1_humanoid", include_str!("../presets/table1_humanoid.conf")),
    ("table1_franka", include_str!("../presets/table1_franka.conf")),
    ("table1_carcircle", include_str!("../presets/table1_carcircle.conf")),
    ("table1_fetch", include_str!("../presets/table1_fetch.conf")),
    ("table1_egg", include_str!("../presets/table1_egg.conf")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    /// Fixed threshold of the baselines.
    pub eps: f64,
    /// Initial multiplier of the Lagrangian variants.
    pub nu_lagrangian: f64,
    /// Initial multiplier of the RCPO variants.
    pub nu_rcpo: f64,
}

impl Preset {
    /// Parses a preset document: one `[preset]` section with `eps`, `nu_lagrangian` and
    /// `nu_rcpo`.
    pub fn parse(name: &str, text: &str) -> CliResult<Self> {
        let (mut eps, mut nu_lag, mut nu_rcpo) = (None, None, None);
        for a in parse_document(text, name, &["preset"])? {
            let v: f64 = a
                .value
                .parse()
                .map_err(|e| CliError::Config(format!("{}: `{}`: {e}", a.origin, a.value)))?;
            match a.key.as_str() {
                "eps" => eps = Some(v),
                "nu_lagrangian" => nu_lag = Some(v),
                "nu_rcpo" => nu_rcpo = Some(v),
                k => return Err(CliError::Config(format!("{}: unknown preset key `{k}`", a.origin))),
            }
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| CliError::Config(format!("preset {name}: missing `{k}`")));
        Ok(Self {
            name: name.to_string(),
            eps: need(eps, "eps")?,
            nu_lagrangian: need(nu_lag, "nu_lagrangian")?,
            nu_rcpo: need(nu_rcpo, "nu_rcpo")?,
        })
    }

    pub fn named(name: &str) -> CliResult<Self> {
        let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
        })?;
        Self::parse(name, text)
    }

    pub fn all() -> CliResult<Vec<Self>> {
        BUNDLED.iter().map(|(n, t)| Self::parse(n, t)).collect()
    }

    /// Initial values for `hyper.variant`: the meta variants tune ε from 1 and start from
    /// the Lagrangian multiplier; the baselines take the fixed threshold.
    pub fn apply(&self, hyper: &mut HyperParams) {
        match hyper.variant {
            Variant::MetaSacLag | Variant::MetaSacLagJnl => hyper.init_nu = self.nu_lagrangian,
            Variant::SacV2Lag => {
                hyper.init_eps = self.eps;
                hyper.init_nu = self.nu_lagrangian;
            }
            Variant::RcpoSacV2 | Variant::RcpoMetaSac => {
                hyper.init_eps = self.eps;
                hyper.init_nu = self.nu_rcpo;
            }
        }
    }
}

/// Table of all presets with the values each variant would start from.
pub fn listing() -> CliResult<String> {
    let mut out = format!("{:<18} {:>5} {:>14} {:>8}\n", "preset", "eps", "nu_lagrangian", "nu_rcpo");
    for p in Preset::all()? {
        let _ = writeln!(out, "{:<18} {:>5} {:>14} {:>8}", p.name, p.eps, p.nu_lagrangian, p.nu_rcpo);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_presets_parse_with_expected_values() {
        let got: Vec<(String, f64, f64, f64)> = Preset::all()
            .unwrap()
            .into_iter()
            .map(|p| (p.name, p.eps, p.nu_lagrangian, p.nu_rcpo))
            .collect();
        let want = [
            ("table1_humanoid", 0.4, 10.0, 10.0),
            ("table1_franka", 0.6, 10.0, 10.0),
            ("table1_carcircle", 0.5, 100.0, 1.0),
            ("table1_fetch", 0.5, 1000.0, 10.0),
            ("table1_egg", 0.5, 100.0, 1.0),
        ];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_eq!((g.0.as_str(), g.1, g.2, g.3), w);
        }
    }

    #[test]
    fn variants_pick_their_column() {
        let p = Preset::named("table1_fetch").unwrap();
        let mut h = HyperParams {
            variant: Variant::MetaSacLag,
            ..HyperParams::default()
        };
        p.apply(&mut h);
        assert_eq!((h.init_eps, h.init_nu), (1.0, 1000.0));
        h.variant = Variant::RcpoMetaSac;
        p.apply(&mut h);
        assert_eq!((h.init_eps, h.init_nu), (0.5, 10.0));
    }

    #[test]
    fn malformed_presets_are_rejected() {
        assert!(Preset::named("table2").is_err());
        assert!(Preset::parse("x", "[preset]\neps = 0.5\n").is_err());
        assert!(Preset::parse("x", "[preset]\neps = 0.5\nnu_lagrangian = 1\nnu_rcpo = 1\nextra = 2\n").is_err());
    }
}
