//! Dataset serialization.
//!
//! Layout: `<root>/manifest.json` plus one directory per sample holding
//! `whole.xyz`, `part_<i>.xyz` (ASCII, one `x y z` triple per line, 9
//! significant digits — enough to round-trip f32 exactly) and `labels.json`
//! (per part: 9 row-major rotation entries, translation, centroid, plus the
//! cut/shape enums).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AssemblySample, CutType, GenConfig, ShapeType};
use crate::correlation::PartCloud;
use crate::geometry::{Mat3, PointCloud, Pose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest lists {listed} samples but {found} sample directories exist")]
    CountMismatch { listed: usize, found: usize },
    #[error("sample {dir}: labels describe {labels} parts but {files} part files exist")]
    PartCountMismatch {
        dir: String,
        labels: usize,
        files: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub config: GenConfig,
    pub sample_dirs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelsFile {
    cut_type: CutType,
    shape_type: ShapeType,
    parts: Vec<PartLabel>,
}

#[derive(Serialize, Deserialize)]
struct PartLabel {
    rotation: Vec<f32>,
    translation: [f32; 3],
    centroid: [f32; 3],
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Format a cloud with 9 significant digits per coordinate.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    out
}

/// Parse an xyz file body; errors carry the byte offset of the offending
/// token.
pub fn parse_xyz(body: &str, path: &Path) -> Result<PointCloud, DataError> {
    let mut points = Vec::new();
    let mut offset = 0usize;
    for line in body.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if !content.trim().is_empty() {
            let mut coords = [0.0f32; 3];
            let mut seen = 0usize;
            let mut cursor = 0usize;
            for token in content.split_whitespace() {
                let tok_off = offset + content[cursor..].find(token).map_or(0, |p| cursor + p);
                cursor = tok_off - offset + token.len();
                if seen == 3 {
                    return Err(DataError::Parse {
                        path: path.to_path_buf(),
                        offset: tok_off,
                        message: format!("expected 3 coordinates per line, found extra {token:?}"),
                    });
                }
                coords[seen] = token.parse::<f32>().map_err(|e| DataError::Parse {
                    path: path.to_path_buf(),
                    offset: tok_off,
                    message: format!("bad float {token:?}: {e}"),
                })?;
                seen += 1;
            }
            if seen != 3 {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    offset,
                    message: format!("expected 3 coordinates per line, found {seen}"),
                });
            }
            points.push(coords);
        }
        offset += line.len();
    }
    Ok(PointCloud::new(points))
}

fn read_xyz(path: &Path) -> Result<PointCloud, DataError> {
    let body = fs::read_to_string(path).map_err(io_err(path))?;
    parse_xyz(&body, path)
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Write the dataset under `root`; `read_dataset(root)` reproduces it
/// bit-exactly, and a fixed generation seed reproduces identical bytes.
pub fn write_dataset(
    root: &Path,
    config: &GenConfig,
    samples: &[AssemblySample],
) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut sample_dirs = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let dir_name = sample_dir_name(i);
        let dir = root.join(&dir_name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let whole_path = dir.join("whole.xyz");
        fs::write(&whole_path, format_xyz(&sample.whole)).map_err(io_err(&whole_path))?;
        for (pi, part) in sample.parts.iter().enumerate() {
            let part_path = dir.join(format!("part_{pi}.xyz"));
            fs::write(&part_path, format_xyz(&part.points)).map_err(io_err(&part_path))?;
        }
        let labels = LabelsFile {
            cut_type: sample.cut_type,
            shape_type: sample.shape_type,
            parts: sample
                .parts
                .iter()
                .zip(&sample.gt_poses)
                .map(|(part, pose)| PartLabel {
                    rotation: pose.rotation.flat().to_vec(),
                    translation: pose.translation,
                    centroid: part.centroid,
                })
                .collect(),
        };
        let labels_path = dir.join("labels.json");
        let body = serde_json::to_string_pretty(&labels).expect("labels serialize");
        fs::write(&labels_path, body).map_err(io_err(&labels_path))?;
        sample_dirs.push(dir_name);
    }
    let manifest = Manifest {
        config: config.clone(),
        sample_dirs,
    };
    let manifest_path = root.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    fs::write(&manifest_path, body).map_err(io_err(&manifest_path))?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DataError> {
    let path = root.join("manifest.json");
    let body = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&body).map_err(|source| DataError::Json { path, source })
}

pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<AssemblySample>), DataError> {
    let manifest = read_manifest(root)?;
    let mut found = 0usize;
    if let Ok(entries) = fs::read_dir(root) {
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().starts_with("sample_") {
                found += 1;
            }
        }
    }
    if found != manifest.sample_dirs.len() {
        return Err(DataError::CountMismatch {
            listed: manifest.sample_dirs.len(),
            found,
        });
    }
    let mut samples = Vec::with_capacity(manifest.sample_dirs.len());
    for dir_name in &manifest.sample_dirs {
        let dir = root.join(dir_name);
        let whole = read_xyz(&dir.join("whole.xyz"))?;
        let labels_path = dir.join("labels.json");
        let body = fs::read_to_string(&labels_path).map_err(io_err(&labels_path))?;
        let labels: LabelsFile = serde_json::from_str(&body).map_err(|source| DataError::Json {
            path: labels_path,
            source,
        })?;
        let mut part_files = 0usize;
        while dir.join(format!("part_{part_files}.xyz")).exists() {
            part_files += 1;
        }
        if part_files != labels.parts.len() {
            return Err(DataError::PartCountMismatch {
                dir: dir_name.clone(),
                labels: labels.parts.len(),
                files: part_files,
            });
        }
        let mut parts = Vec::with_capacity(labels.parts.len());
        let mut gt_poses = Vec::with_capacity(labels.parts.len());
        for (pi, label) in labels.parts.iter().enumerate() {
            let points = read_xyz(&dir.join(format!("part_{pi}.xyz")))?;
            parts.push(PartCloud {
                points,
                centroid: label.centroid,
                index: pi,
            });
            gt_poses.push(Pose {
                rotation: Mat3::from_flat(&label.rotation),
                translation: label.translation,
            });
        }
        samples.push(AssemblySample {
            whole,
            parts,
            gt_poses,
            cut_type: labels.cut_type,
            shape_type: labels.shape_type,
        });
    }
    Ok((manifest, samples))
}
