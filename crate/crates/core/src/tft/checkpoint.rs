//! Checkpoint directory layout: parameter binary plus JSON sidecars for the
//! model config, window layout, normalization statistics, and catalog.

use std::path::Path;

use super::model::TftModel;
use super::TftConfig;
use crate::dataset::{FeatureCatalog, NormStats, WindowLayout};
use crate::error::{Error, Result};
use crate::neuralcore::params::ParamStore;

pub struct Checkpoint {
    pub model: TftModel,
    pub stats: NormStats,
    pub catalog: FeatureCatalog,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &TftModel,
    stats: &NormStats,
    catalog: &FeatureCatalog,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    model.store.save(&dir.join("params.bin"))?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&model.store.manifest())?,
    )?;
    std::fs::write(
        dir.join("tft_config.json"),
        serde_json::to_string_pretty(&model.config)?,
    )?;
    std::fs::write(
        dir.join("layout.json"),
        serde_json::to_string_pretty(&model.layout)?,
    )?;
    stats.save(&dir.join("norm_stats.json"))?;
    std::fs::write(dir.join("catalog.json"), catalog.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config: TftConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join("tft_config.json"))?)?;
    let layout: WindowLayout =
        serde_json::from_str(&std::fs::read_to_string(dir.join("layout.json"))?)?;
    let stats = NormStats::load(&dir.join("norm_stats.json"))?;
    let catalog = FeatureCatalog::from_json(&std::fs::read_to_string(dir.join("catalog.json"))?)?;
    let mut model = TftModel::new(config, layout, &stats)?;
    let loaded = ParamStore::load(&dir.join("params.bin"))?;
    copy_params(&mut model.store, &loaded)?;
    Ok(Checkpoint {
        model,
        stats,
        catalog,
    })
}

/// Moves values from a loaded store into a freshly constructed one; names
/// and shapes must match exactly.
fn copy_params(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::data(format!(
            "checkpoint has {} parameters, model expects {}",
            source.len(),
            target.len()
        )));
    }
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.name(id).to_string();
        let src = source
            .id_of(&name)
            .ok_or_else(|| Error::data(format!("checkpoint missing parameter `{name}`")))?;
        if source.value(src).shape() != target.value(id).shape() {
            return Err(Error::data(format!("parameter `{name}` shape mismatch")));
        }
        *target.value_mut(id) = source.value(src).clone();
    }
    Ok(())
}
