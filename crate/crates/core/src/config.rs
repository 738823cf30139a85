//! Generator selection and tunables.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chanvese::ChanVeseParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Static,
    Knn,
    ContentAware,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Static, Method::Knn, Method::ContentAware];

    /// Tag byte used in density files.
    pub fn code(self) -> u8 {
        match self {
            Method::Static => 0,
            Method::Knn => 1,
            Method::ContentAware => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::Knn => "knn",
            Method::ContentAware => "content-aware",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Method::Static),
            "knn" => Ok(Method::Knn),
            "content-aware" | "content_aware" => Ok(Method::ContentAware),
            other => Err(Error::InvalidParameter(format!(
                "unknown method {other:?} (expected static, knn or content-aware)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub method: Method,
    /// Spread of the static baseline, in pixels.
    pub static_sigma: f64,
    /// kNN baseline: sigma = f * mean distance to the 3 nearest heads.
    pub knn_f: f64,
    /// Content-aware: sigma = mean boundary radius / extent_factor.
    pub extent_factor: f64,
    /// Kernels are cut off at `truncation * sigma` from the center.
    pub truncation: f64,
    /// Window half-width = window_scale * nearest-neighbor distance.
    pub window_scale: f64,
    pub chan_vese: ChanVeseParams,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            method: Method::ContentAware,
            static_sigma: 15.0,
            knn_f: 0.3,
            extent_factor: 2.0,
            truncation: 3.0,
            window_scale: 1.0,
            chan_vese: ChanVeseParams::default(),
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.static_sigma),
            ("f", self.knn_f),
            ("extent", self.extent_factor),
            ("truncation", self.truncation),
            ("window_scale", self.window_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
        }
        self.chan_vese.validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("{key}: invalid number {value:?}")))
        };
        let int = || -> Result<u64> {
            value
                .parse::<u64>()
                .map_err(|_| Error::InvalidParameter(format!("{key}: invalid integer {value:?}")))
        };
        match key {
            "method" => self.method = value.parse()?,
            "sigma" | "static_sigma" => self.static_sigma = num()?,
            "f" | "knn_f" => self.knn_f = num()?,
            "extent" | "extent_factor" => self.extent_factor = num()?,
            "truncation" => self.truncation = num()?,
            "window_scale" => self.window_scale = num()?,
            "lambda1" => self.chan_vese.lambda1 = num()?,
            "lambda2" => self.chan_vese.lambda2 = num()?,
            "mu" => self.chan_vese.mu = num()?,
            "nu" => self.chan_vese.nu = num()?,
            "max_iterations" => self.chan_vese.max_iterations = int()? as usize,
            "convergence_patience" | "patience" => self.chan_vese.convergence_patience = int()? as usize,
            "seed" => self.seed = int()?,
            other => return Err(Error::InvalidParameter(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a plain `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, found {raw:?}"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }
}
