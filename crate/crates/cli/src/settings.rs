//! Layered command settings: built-in defaults, then an optional key=value
//! file, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use besim_core::kv::KvMap;

use crate::CliError;

/// Declares a command's settings: a clap argument struct with one optional
/// `--key VALUE` flag per setting, plus the table of defaults.
macro_rules! settings {
    ($(#[$meta:meta])* $name:ident { $($field:ident : $key:literal = $default:literal, $help:literal;)* }) => {
        $(#[$meta])*
        #[derive(clap::Args, Debug, Clone, Default)]
        pub struct $name {
            /// key=value settings file; flags take precedence over it
            #[arg(long, value_name = "FILE")]
            pub config: Option<std::path::PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE", help = concat!($help, " [default: ", $default, "]"))]
                pub $field: Option<String>,
            )*
        }

        impl $name {
            pub const DEFAULTS: &'static [(&'static str, &'static str)] = &[$(($key, $default)),*];

            pub fn resolve(&self) -> Result<$crate::settings::Settings, $crate::CliError> {
                let flags: Vec<(&str, Option<&String>)> = vec![$(($key, self.$field.as_ref())),*];
                $crate::settings::Settings::resolve(Self::DEFAULTS, self.config.as_deref(), &flags)
            }

            /// Like `resolve`, and prints every effective setting to stderr.
            pub fn resolve_printed(&self) -> Result<$crate::settings::Settings, $crate::CliError> {
                let s = self.resolve()?;
                eprint!("# settings\n{}", s.to_text());
                Ok(s)
            }
        }
    };
}
pub(crate) use settings;

#[derive(Clone, Debug)]
pub struct Settings {
    kv: KvMap,
}

impl Settings {
    pub fn resolve(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        flags: &[(&str, Option<&String>)],
    ) -> Result<Settings, CliError> {
        let mut kv = KvMap::new();
        for (k, v) in defaults {
            kv.insert(*k, v);
        }
        if let Some(path) = file {
            let loaded = KvMap::load(path).map_err(CliError::from)?;
            let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
            loaded
                .reject_unknown(&allowed)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            for (k, v) in loaded.iter() {
                kv.insert(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                kv.insert(*k, v);
            }
        }
        Ok(Settings { kv })
    }

    /// Every effective setting, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.kv.to_text()
    }

    pub fn kv(&self) -> &KvMap {
        &self.kv
    }

    pub fn str(&self, key: &str) -> &str {
        self.kv.get(key).unwrap_or_else(|| panic!("undeclared setting '{key}'"))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V, CliError> {
        let raw = self.str(key);
        raw.parse()
            .map_err(|_| CliError::usage(format!("invalid value {raw:?} for '{key}'")))
    }

    /// Empty values mean "not set".
    pub fn opt<V: FromStr>(&self, key: &str) -> Result<Option<V>, CliError> {
        if self.str(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        match self.str(key) {
            "" => Err(CliError::usage(format!("'{key}' is required"))),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        match self.str(key) {
            "" => None,
            p => Some(PathBuf::from(p)),
        }
    }
}
