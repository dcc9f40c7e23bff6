//! Flat `key = value` pipeline configuration. Relative paths are resolved
//! against the config file's directory; command-line flags override.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vore::pipeline::PipelineParams;
use vore::search::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Voronoi,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: PipelineParams,
    pub train_manifest: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub models: PathBuf,
    pub index: Option<PathBuf>,
    pub quantized: bool,
    pub level_projection: bool,
    pub sign_limit: bool,
    pub method: Method,
    pub layout: Layout,
    pub bench_m: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            params: PipelineParams::default(),
            train_manifest: None,
            manifest: None,
            ground_truth: None,
            queries: None,
            models: PathBuf::from("models"),
            index: None,
            quantized: false,
            level_projection: false,
            sign_limit: false,
            method: Method::Fast,
            layout: Layout::Voronoi,
            bench_m: vec![8, 16, 32, 64],
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("expected a boolean, found {v:?}"),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    v.parse::<T>().with_context(|| format!("bad number {v:?}"))
}

pub fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

impl PipelineConfig {
    pub fn model_path(&self, name: &str) -> PathBuf {
        self.models.join(name)
    }

    pub fn index_path(&self) -> PathBuf {
        self.index.clone().unwrap_or_else(|| self.model_path("index.vidx"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig {
            models: base.join("models"),
            ..Default::default()
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", n + 1);
            };
            cfg.set(key.trim(), value.trim(), base)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        let p = &mut self.params;
        match key {
            "vocab_k" => p.vocab_k = parse_num(value)?,
            "levels" => p.levels = parse_num(value)?,
            "branching" => p.branching = parse_num(value)?,
            "pca_dim" => p.pca_dim = parse_num(value)?,
            "pq_m" => p.pq_m = parse_num(value)?,
            "pq_zp" => p.pq_zp = parse_num(value)?,
            "subquery_levels" => p.subquery_levels = parse_num(value)?,
            "subquery_branching" => p.subquery_branching = parse_num(value)?,
            "ssr" => p.ssr = parse_bool(value)?,
            "vocab_sample" => p.vocab_sample = parse_num(value)?,
            "pca_sample" => p.pca_sample = parse_num(value)?,
            "seed" => p.seed = parse_num(value)?,
            "train_manifest" => self.train_manifest = path(),
            "manifest" => self.manifest = path(),
            "ground_truth" => self.ground_truth = path(),
            "queries" => self.queries = path(),
            "models" => self.models = base.join(value),
            "index" => self.index = path(),
            "quantized" => self.quantized = parse_bool(value)?,
            "level_projection" => self.level_projection = parse_bool(value)?,
            "sign_limit" => self.sign_limit = parse_bool(value)?,
            "method" => self.method = value.parse()?,
            "layout" => {
                self.layout = match value {
                    "voronoi" => Layout::Voronoi,
                    "grid" => Layout::Grid,
                    _ => bail!("layout must be voronoi or grid, found {value:?}"),
                }
            }
            "bench_m" => self.bench_m = parse_list(value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.sign_limit && self.params.pq_m != self.params.pca_dim {
            bail!(
                "sign_limit needs pq_m == pca_dim ({} != {})",
                self.params.pq_m,
                self.params.pca_dim
            );
        }
        if self.level_projection && self.layout == Layout::Grid {
            bail!("level projection applies to the Voronoi layout only");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.params.vocab_k, 64);
        assert_eq!((cfg.params.levels, cfg.params.branching), (3, 3));
        assert_eq!(cfg.params.pca_dim, 128);
        assert_eq!(cfg.params.pq_zp, 256);
        cfg.validate().unwrap();
    }

    #[test]
    fn parses_keys_and_paths() {
        let text = "# experiment\nvocab_k = 16\npca_dim=64 # trailing\nmanifest = data/m.tsv\nmethod = subquery\nbench_m = 4, 8\nquantized = yes\n";
        let cfg = PipelineConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.params.vocab_k, 16);
        assert_eq!(cfg.params.pca_dim, 64);
        assert_eq!(cfg.manifest, Some(PathBuf::from("/base/data/m.tsv")));
        assert_eq!(cfg.models, PathBuf::from("/base/models"));
        assert_eq!(cfg.method, Method::Subquery);
        assert_eq!(cfg.bench_m, vec![4, 8]);
        assert!(cfg.quantized);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PipelineConfig::parse("nonsense", Path::new(".")).is_err());
        assert!(PipelineConfig::parse("colour = red", Path::new(".")).is_err());
        assert!(PipelineConfig::parse("levels = three", Path::new(".")).is_err());
        let cfg = PipelineConfig::parse("pq_m = 7", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
    }
}
