//! Job configuration: a JSON config file overlaid with command-line flags,
//! validated fully before any backend call. The digest of the validated
//! config stamps every output and guards checkpoint resume.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tagsynth::backends::BackendSuiteConfig;
use tagsynth::dataset::{config_digest, DEFAULT_CHECKPOINT_EVERY};
use tagsynth::filter::{FilterConfig, FilterTarget};
use tagsynth::path::{resolve_path, NodeId, SampleVariant, SynthesisPath};
use tagsynth::policy::{ImagePolicy, ImageStyle, TemplateRegistry, TextPolicy};

/// A user template registered under the custom namespace; the ten builtin
/// templates stay frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomTemplateConfig {
    pub text: String,
    #[serde(default)]
    pub requires_original_text: bool,
}

/// A policy either inline in the config or referenced by file path.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyRef<T> {
    File(String),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> PolicyRef<T> {
    pub fn load(&self, base_dir: &Path) -> Result<T> {
        match self {
            PolicyRef::Inline(policy) => Ok(policy.clone()),
            PolicyRef::File(path) => {
                let full = base_dir.join(path);
                let raw = fs::read_to_string(&full)
                    .with_context(|| format!("reading policy file {}", full.display()))?;
                // Whole-file JSON, or the first non-empty line of a
                // line-delimited policy file.
                if let Ok(policy) = serde_json::from_str(&raw) {
                    return Ok(policy);
                }
                let line = raw
                    .lines()
                    .map(str::trim)
                    .find(|l| !l.is_empty())
                    .unwrap_or("");
                serde_json::from_str(line)
                    .with_context(|| format!("parsing policy file {}", full.display()))
            }
        }
    }
}

/// The raw config file shape. Everything is optional so flags can fill in
/// the gaps; validation happens in [`JobConfig::resolve`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub backends: Option<BackendSuiteConfig>,
    #[serde(default)]
    pub image_store_dir: Option<PathBuf>,
    #[serde(default)]
    pub job_dir: Option<PathBuf>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub text_policy: Option<PolicyRef<TextPolicy>>,
    #[serde(default)]
    pub image_policy: Option<PolicyRef<ImagePolicy>>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub custom_templates: std::collections::BTreeMap<String, CustomTemplateConfig>,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub shards: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub input_manifest: Option<PathBuf>,
    #[serde(default)]
    pub output_manifest: Option<PathBuf>,
    #[serde(default)]
    pub mock: Option<bool>,
    #[serde(default)]
    pub mock_latency_ms: Option<u64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// The validated, fully resolved job configuration.
#[derive(Debug, Clone)]
pub struct JobConfig {
    pub backends: Option<BackendSuiteConfig>,
    pub mock: bool,
    pub mock_latency_ms: u64,
    pub image_store_dir: PathBuf,
    pub job_dir: PathBuf,
    pub path: SynthesisPath,
    pub path_spec: String,
    pub variant: SampleVariant,
    pub registry: TemplateRegistry,
    pub text_policy: TextPolicy,
    pub image_policy: ImagePolicy,
    pub filter: FilterConfig,
    pub shards: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub input_manifest: PathBuf,
    pub output_manifest: PathBuf,
    pub digest: String,
}

/// The canonical serialized form the digest is computed over.
#[derive(Serialize)]
struct DigestView<'a> {
    mock: bool,
    backends: &'a Option<BackendSuiteConfig>,
    path: String,
    variant: &'a str,
    custom_templates: &'a std::collections::BTreeMap<String, CustomTemplateConfig>,
    text_policy: &'a TextPolicy,
    image_policy: &'a ImagePolicy,
    filter: &'a FilterConfig,
    seed: u64,
    input_manifest: &'a str,
}

impl JobConfig {
    /// Overlay flags onto the config file and validate everything. No
    /// backend is contacted here.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        file: ConfigFile,
        base_dir: &Path,
        path_flag: Option<&str>,
        variant_flag: Option<&str>,
        input_flag: Option<&Path>,
        output_flag: Option<&Path>,
        seed_flag: Option<u64>,
        shards_flag: Option<usize>,
        p_f_flag: Option<f64>,
        mock_flag: bool,
        mock_latency_flag: Option<u64>,
    ) -> Result<Self> {
        let path_spec = path_flag
            .map(str::to_string)
            .or(file.path)
            .context("no synthesis path given (config `path` or --path)")?;
        let path = resolve_path(&path_spec)
            .map_err(|e| anyhow::anyhow!("invalid path \"{path_spec}\": {e}"))?;

        let variant: SampleVariant = variant_flag
            .map(str::to_string)
            .or(file.variant)
            .unwrap_or_else(|| "cap".to_string())
            .parse()
            .map_err(|e: String| anyhow::anyhow!(e))?;

        let mut registry = TemplateRegistry::new();
        for (name, template) in &file.custom_templates {
            registry
                .register_custom(name, &template.text, template.requires_original_text)
                .map_err(|e| anyhow::anyhow!("custom template: {e}"))?;
        }

        let text_policy: TextPolicy = match &file.text_policy {
            Some(policy) => policy.load(base_dir)?,
            None => TextPolicy::builtin(1),
        };
        // Forces template-id validation (range and custom-name lookup).
        registry
            .requires_original_text(&text_policy.template_id)
            .map_err(|e| anyhow::anyhow!("text policy: {e}"))?;
        let image_policy = match &file.image_policy {
            Some(policy) => policy.load(base_dir)?,
            None => ImagePolicy::style(ImageStyle::Real),
        };
        image_policy
            .validate()
            .map_err(|e| anyhow::anyhow!("image policy: {e}"))?;

        let mut filter = file.filter.unwrap_or_else(|| default_filter_for(variant));
        if let Some(p_f) = p_f_flag {
            filter.p_f = p_f;
        }
        filter.validate().map_err(|e| anyhow::anyhow!("filter: {e}"))?;

        let mock = mock_flag || file.mock.unwrap_or(false);
        let backends = file.backends;
        if !mock {
            let suite = backends
                .as_ref()
                .context("no backends configured; pass --mock or add `backends` to the config")?;
            suite
                .validate()
                .map_err(|e| anyhow::anyhow!("backends: {e}"))?;
        }

        let input_manifest = input_flag
            .map(Path::to_path_buf)
            .or(file.input_manifest)
            .context("no input manifest (config `input_manifest` or --input)")?;
        let output_manifest = output_flag
            .map(Path::to_path_buf)
            .or(file.output_manifest)
            .context("no output manifest (config `output_manifest` or --output)")?;
        if input_manifest == output_manifest {
            bail!("input and output manifest are the same file");
        }

        let shards = shards_flag.or(file.shards).unwrap_or(4);
        if shards < 1 {
            bail!("shards must be >= 1");
        }
        let seed = seed_flag.or(file.seed).unwrap_or(0);
        let checkpoint_every = file.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY);
        if checkpoint_every < 1 {
            bail!("checkpoint_every must be >= 1");
        }

        let canonical_path = path.literal();
        let digest = config_digest(&DigestView {
            mock,
            backends: &backends,
            path: canonical_path,
            variant: variant.name(),
            custom_templates: &file.custom_templates,
            text_policy: &text_policy,
            image_policy: &image_policy,
            filter: &filter,
            seed,
            input_manifest: &input_manifest.display().to_string(),
        });

        let job_dir = file
            .job_dir
            .unwrap_or_else(|| base_dir.join("jobs").join(&digest[..12]));
        let image_store_dir = file
            .image_store_dir
            .unwrap_or_else(|| base_dir.join("store"));

        Ok(Self {
            backends,
            mock,
            mock_latency_ms: mock_latency_flag.or(file.mock_latency_ms).unwrap_or(0),
            image_store_dir,
            job_dir,
            path,
            path_spec,
            variant,
            registry,
            text_policy,
            image_policy,
            filter,
            shards,
            seed,
            checkpoint_every,
            input_manifest,
            output_manifest,
            digest,
        })
    }

    /// Check that the synthesis path and the text policy agree about the
    /// original caption: a caption-bearing template needs text to flow into
    /// the text controller (side attachment or a text edge), and a side
    /// caption is pointless when the template ignores it.
    pub fn validate_path_policy(&self) -> Result<()> {
        if !self.path.visits(NodeId::TextController) {
            return Ok(());
        }
        let requires = self
            .registry
            .requires_original_text(&self.text_policy.template_id)
            .map_err(|e| anyhow::anyhow!("text policy: {e}"))?;
        let text_flows_in = self.path.nodes().windows(2).any(|pair| {
            pair[1] == NodeId::TextController
                && matches!(pair[0], NodeId::RealText | NodeId::SyntheticText)
        });
        let supplies = self.path.has_side_caption() || text_flows_in;
        if requires && !supplies {
            bail!(
                "template {} embeds the original caption, but path {} never supplies text at 3a (attach +1b@3a or start from a text node)",
                self.text_policy.template_id,
                self.path.literal()
            );
        }
        if self.path.has_side_caption() && !requires {
            bail!(
                "path {} attaches the original text at 3a, but template {} does not use a caption (pick a template in 6..=10 or a caption-bearing custom template)",
                self.path.literal(),
                self.text_policy.template_id
            );
        }
        Ok(())
    }
}

/// Which checks a variant needs when the config does not say: text samples
/// check text, image samples re-check the image, combined samples check
/// both.
pub fn default_filter_for(variant: SampleVariant) -> FilterConfig {
    let targets: BTreeSet<FilterTarget> = match variant {
        SampleVariant::Cap => [FilterTarget::Text].into(),
        SampleVariant::Img => [FilterTarget::Image].into(),
        SampleVariant::CapImg => [FilterTarget::Text, FilterTarget::Image].into(),
    };
    FilterConfig {
        apply_to: targets,
        ..FilterConfig::default()
    }
}
