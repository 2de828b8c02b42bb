//! On-disk artifact helpers: PAM image trees with JSON manifests,
//! append-only CSV ledgers, and report serialization.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use triggerforge::pam;
use triggerforge::synth::{FaceDataset, Repository, TriggerObject};
use triggerforge::{Error, Image, Result};

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    image_size: usize,
    n_classes: usize,
    entries: Vec<DatasetEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetEntry {
    file: String,
    label: usize,
    split: String,
}

pub fn write_dataset(dir: &Path, dataset: &FaceDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, data) in [("train", &dataset.train), ("val", &dataset.val)] {
        for (i, (img, label)) in data.iter().enumerate() {
            let file = format!("{split}_{i:04}.pam");
            pam::write_pam(&dir.join(&file), img)?;
            entries.push(DatasetEntry { file, label: *label, split: split.to_string() });
        }
    }
    let manifest = DatasetManifest {
        image_size: dataset.image_size,
        n_classes: dataset.n_classes,
        entries,
    };
    write_json(&dir.join("dataset.json"), &manifest)
}

#[derive(Debug, Serialize, Deserialize)]
struct RepoManifest {
    name: String,
    objects: Vec<RepoEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RepoEntry {
    id: String,
    object_class: triggerforge::synth::ObjectClass,
    color_label: triggerforge::synth::ColorLabel,
    native_size: usize,
    file: String,
}

pub fn write_repo(dir: &Path, repo: &Repository) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut objects = Vec::new();
    for obj in &repo.objects {
        let file = format!("{}.pam", obj.id);
        pam::write_pam(&dir.join(&file), &obj.patch)?;
        objects.push(RepoEntry {
            id: obj.id.clone(),
            object_class: obj.object_class,
            color_label: obj.color_label,
            native_size: obj.native_size,
            file,
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &RepoManifest { name: repo.name.clone(), objects },
    )
}

pub fn load_repo(dir: &Path) -> Result<Repository> {
    let manifest: RepoManifest = read_json(&dir.join("manifest.json"))?;
    let objects = manifest
        .objects
        .into_iter()
        .map(|e| {
            Ok(TriggerObject {
                id: e.id,
                object_class: e.object_class,
                color_label: e.color_label,
                native_size: e.native_size,
                patch: pam::read_pam(&dir.join(&e.file))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Repository { name: manifest.name, objects })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Format(format!("json encode failed: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("json decode failed for {}: {e}", path.display())))
}

/// Append a row to a CSV ledger, writing the header first when the file
/// does not exist yet.
pub fn append_csv(path: &Path, header: &str, row: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let exists = path.exists();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if !exists {
        writeln!(file, "{header}")?;
    }
    writeln!(file, "{row}")?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Side-by-side composite: the clean image and the same image with the
/// trigger applied.
pub fn write_composite(path: &Path, clean: &Image, poisoned: &Image) -> Result<()> {
    let mut combined = Image::new(clean.height, clean.width * 2 + 1, 3);
    for r in 0..clean.height {
        for c in 0..clean.width {
            for ch in 0..3 {
                combined.set(r, c, ch, clean.get(r, c, ch));
                combined.set(r, clean.width + 1 + c, ch, poisoned.get(r, c, ch));
            }
        }
        combined.set(r, clean.width, 0, 1.0);
    }
    pam::write_pam(path, &combined)
}
