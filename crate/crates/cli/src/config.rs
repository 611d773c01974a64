//! Layered configuration: command-line flags over a JSON file over defaults.

use clap::{Args, ValueEnum};
use serde::Deserialize;
use sketchfill::dsl::DEFAULT_MAX_ITERS;
use sketchfill::objective::LossWeights;
use sketchfill::optimizer::OptimizerConfig;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceKind {
    File,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlmKind {
    Live,
    Record,
    Replay,
}

/// One configuration layer. Every field is optional so layers can be merged;
/// the same struct is read from `--config` files and from flags.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Number of strokes to generate.
    #[arg(long)]
    pub n_strokes: Option<usize>,
    /// Optimization steps in stage 1.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_width: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Weight of the embedding similarity term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the perceptual term.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the overlap penalty.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Where guidance images come from.
    #[arg(long, value_enum)]
    pub guidance: Option<GuidanceKind>,
    /// Guidance image for `--guidance file`.
    #[arg(long)]
    pub guide: Option<PathBuf>,
    /// Generation service for `--guidance http` (env GUIDANCE_ENDPOINT).
    #[arg(long)]
    pub guidance_endpoint: Option<String>,
    #[arg(long, value_enum)]
    pub vlm: Option<VlmKind>,
    /// Recorded VLM exchanges for record and replay modes.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Rounds of the style adjustment loop.
    #[arg(long)]
    pub max_adjust_iters: Option<usize>,
    /// Per-request timeout for remote services, in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(
            self, base, n_strokes, iterations, lr_position, lr_width, lr_opacity, beta1, beta2, epsilon, alpha, beta, gamma, seed,
            snapshot_every, guidance, guide, guidance_endpoint, vlm, fixtures, out_dir, max_adjust_iters, timeout_secs
        )
    }

    /// Fills every unset field from defaults. `env` looks up environment
    /// variables and sits between the layers and the defaults.
    pub fn resolve(self, env: impl Fn(&str) -> Option<String>) -> Result<Resolved, String> {
        let d = OptimizerConfig::default();
        let w = LossWeights::default();
        let optimizer = OptimizerConfig {
            n_strokes: self.n_strokes.unwrap_or(d.n_strokes),
            iterations: self.iterations.unwrap_or(d.iterations),
            lr_position: self.lr_position.unwrap_or(d.lr_position),
            lr_width: self.lr_width.unwrap_or(d.lr_width),
            lr_opacity: self.lr_opacity.unwrap_or(d.lr_opacity),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            weights: LossWeights {
                alpha: self.alpha.unwrap_or(w.alpha),
                beta: self.beta.unwrap_or(w.beta),
                gamma: self.gamma.unwrap_or(w.gamma),
            },
            rng_seed: self.seed.unwrap_or(d.rng_seed),
            snapshot_every: self.snapshot_every.unwrap_or(d.snapshot_every),
        };
        optimizer.validate().map_err(|e| e.to_string())?;
        let guidance_endpoint = self.guidance_endpoint.or_else(|| env("GUIDANCE_ENDPOINT"));
        let guidance = self.guidance.unwrap_or(if self.guide.is_none() && guidance_endpoint.is_some() {
            GuidanceKind::Http
        } else {
            GuidanceKind::File
        });
        Ok(Resolved {
            optimizer,
            guidance,
            guide: self.guide,
            guidance_endpoint,
            vlm: self.vlm.unwrap_or(VlmKind::Live),
            fixtures: self.fixtures.unwrap_or_else(|| PathBuf::from("fixtures")),
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            max_adjust_iters: self.max_adjust_iters.unwrap_or(DEFAULT_MAX_ITERS),
            timeout: Duration::from_secs(self.timeout_secs.unwrap_or(120)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub optimizer: OptimizerConfig,
    pub guidance: GuidanceKind,
    pub guide: Option<PathBuf>,
    pub guidance_endpoint: Option<String>,
    pub vlm: VlmKind,
    pub fixtures: PathBuf,
    pub out_dir: PathBuf,
    pub max_adjust_iters: usize,
    pub timeout: Duration,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_are_concrete() {
        let r = Settings::default().resolve(no_env).unwrap();
        assert_eq!(r.optimizer, OptimizerConfig::default());
        assert_eq!(r.optimizer.n_strokes, 512);
        assert_eq!(r.optimizer.iterations, 1000);
        assert_eq!(r.vlm, VlmKind::Live);
        assert_eq!(r.guidance, GuidanceKind::File);
        assert_eq!(r.max_adjust_iters, 5);
    }

    #[test]
    fn flags_beat_file_beat_defaults_per_field() {
        let file: Settings = serde_json::from_str(
            r#"{"n_strokes": 64, "iterations": 200, "lr_position": 0.5, "lr_width": 0.2, "lr_opacity": 0.02,
                "beta1": 0.8, "beta2": 0.99, "epsilon": 1e-6, "alpha": 2.0, "beta": 3.0, "gamma": 4.0, "seed": 11,
                "snapshot_every": 5, "guidance": "http", "guide": "g.png", "guidance_endpoint": "http://file",
                "vlm": "record", "fixtures": "fx", "out_dir": "o", "max_adjust_iters": 2, "timeout_secs": 9}"#,
        )
        .unwrap();
        let from_file = file.clone().resolve(no_env).unwrap();
        assert_eq!(from_file.optimizer.n_strokes, 64);
        assert_eq!(from_file.optimizer.weights, LossWeights::new(2.0, 3.0, 4.0));
        assert_eq!(from_file.vlm, VlmKind::Record);

        let flags = Settings {
            n_strokes: Some(8),
            iterations: Some(3),
            lr_position: Some(0.25),
            lr_width: Some(0.05),
            lr_opacity: Some(0.005),
            beta1: Some(0.7),
            beta2: Some(0.9),
            epsilon: Some(1e-9),
            alpha: Some(0.5),
            beta: Some(0.6),
            gamma: Some(0.7),
            seed: Some(99),
            snapshot_every: Some(1),
            guidance: Some(GuidanceKind::File),
            guide: Some("flag.png".into()),
            guidance_endpoint: Some("http://flag".into()),
            vlm: Some(VlmKind::Replay),
            fixtures: Some("ffx".into()),
            out_dir: Some("fo".into()),
            max_adjust_iters: Some(1),
            timeout_secs: Some(1),
        };
        let r = flags.clone().over(file.clone()).resolve(no_env).unwrap();
        let expect = Resolved {
            optimizer: OptimizerConfig {
                n_strokes: 8,
                iterations: 3,
                lr_position: 0.25,
                lr_width: 0.05,
                lr_opacity: 0.005,
                beta1: 0.7,
                beta2: 0.9,
                epsilon: 1e-9,
                weights: LossWeights::new(0.5, 0.6, 0.7),
                rng_seed: 99,
                snapshot_every: 1,
            },
            guidance: GuidanceKind::File,
            guide: Some("flag.png".into()),
            guidance_endpoint: Some("http://flag".into()),
            vlm: VlmKind::Replay,
            fixtures: "ffx".into(),
            out_dir: "fo".into(),
            max_adjust_iters: 1,
            timeout: Duration::from_secs(1),
        };
        assert_eq!(r, expect);

        // a single flag only replaces its own field
        let one = Settings {
            seed: Some(5),
            ..Default::default()
        };
        let r = one.over(file).resolve(no_env).unwrap();
        assert_eq!(r.optimizer.rng_seed, 5);
        assert_eq!(r.optimizer.n_strokes, 64);
        assert_eq!(r.fixtures, PathBuf::from("fx"));
    }

    #[test]
    fn environment_fills_guidance_endpoint() {
        let env = |k: &str| (k == "GUIDANCE_ENDPOINT").then(|| "http://env".to_string());
        let r = Settings::default().resolve(env).unwrap();
        assert_eq!(r.guidance_endpoint.as_deref(), Some("http://env"));
        assert_eq!(r.guidance, GuidanceKind::Http);
        let flagged = Settings {
            guidance_endpoint: Some("http://flag".into()),
            ..Default::default()
        };
        assert_eq!(flagged.resolve(env).unwrap().guidance_endpoint.as_deref(), Some("http://flag"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<Settings>(r#"{"strokes": 3}"#).is_err());
        let bad = Settings {
            beta1: Some(1.5),
            ..Default::default()
        };
        assert!(bad.resolve(no_env).is_err());
    }
}
