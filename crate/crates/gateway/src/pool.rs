//! Asset files behind `/sessions/{id}/assets/{kind}`. Missing files are
//! generated on first request: the shared pool for non-personalized
//! conditions, the approved script's text for personalized ones.

use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use asafeplace_core::personalize::{
    fill_template, parse_template, AssetRef, FillOptions, GenerationClient, GenerationJob,
    MarkerClient, MockGenerationClient, DEFAULT_TEMPLATE,
};
use asafeplace_core::session::Assets;

use crate::GatewayError;

const POOL_TRANSCRIPT: &str = "[place: the safe island] [visual: soft morning light] \
[tactile: warm sand] [auditory: slow waves] [olfactory: sea air] \
[memory: a quiet afternoon] [activity: rest in the shade]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetKind {
    Script,
    Panorama,
    Audio,
}

impl AssetKind {
    pub fn content_type(self) -> &'static str {
        match self {
            AssetKind::Script => "text/plain; charset=utf-8",
            AssetKind::Panorama => "image/png",
            AssetKind::Audio => "audio/wav",
        }
    }

    fn path_in(self, assets: &Assets) -> Option<&str> {
        match self {
            AssetKind::Script => assets.script.as_deref(),
            AssetKind::Panorama => assets.panorama.as_deref(),
            AssetKind::Audio => assets.audio.as_deref(),
        }
    }
}

impl FromStr for AssetKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "script" => Ok(AssetKind::Script),
            "panorama" => Ok(AssetKind::Panorama),
            "audio" => Ok(AssetKind::Audio),
            other => Err(GatewayError::NotFound(format!("asset kind {other}"))),
        }
    }
}

/// Joins a relative asset path under `root`, refusing anything that could
/// escape it.
pub fn resolve(root: &Path, rel: &str) -> Option<PathBuf> {
    let p = Path::new(rel);
    let safe = !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    safe.then(|| root.join(p))
}

/// The guidance script every non-personalized session hears.
pub fn pool_script() -> Result<String, GatewayError> {
    let profile = MarkerClient::profile_of(POOL_TRANSCRIPT);
    let template = parse_template(DEFAULT_TEMPLATE)?;
    let snippets = MockGenerationClient::snippets_for(&profile);
    let script = fill_template(
        &template,
        &profile.place_name,
        &snippets,
        &FillOptions::default(),
    )?;
    Ok(script.text)
}

/// Returns the file for `kind`, generating it first if it does not exist.
/// `None` when the session names no such asset.
pub fn materialize(
    root: &Path,
    assets: &Assets,
    script_text: Option<&str>,
    kind: AssetKind,
    client: &dyn GenerationClient,
) -> Result<Option<PathBuf>, GatewayError> {
    let Some(path) = kind.path_in(assets).and_then(|r| resolve(root, r)) else {
        return Ok(None);
    };
    if path.exists() {
        return Ok(Some(path));
    }
    let Some(text) = script_text else {
        return Ok(None);
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let job = match kind {
        AssetKind::Script => {
            std::fs::write(&path, text)?;
            return Ok(Some(path));
        }
        AssetKind::Panorama => GenerationJob::panorama_final(text, None),
        AssetKind::Audio => GenerationJob::tts(text),
    };
    let out = client
        .run(&job, &root.join(".generate"))
        .map_err(|e| GatewayError::Generation(e.to_string()))?;
    match out {
        AssetRef::Image { path: src, .. } | AssetRef::Audio { path: src, .. } => {
            std::fs::rename(src, &path)?;
            Ok(Some(path))
        }
        AssetRef::Snippets { .. } => Err(GatewayError::Generation("unexpected snippets".into())),
    }
}
