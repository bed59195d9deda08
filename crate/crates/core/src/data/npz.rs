use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::npy::{parse_npy, NpyArray};
use super::DataError;

/// Read access to the `.npy` members of an `.npz` (zip) archive.
pub struct NpzArchive {
    path: PathBuf,
    zip: zip::ZipArchive<File>,
}

impl NpzArchive {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        let zip = zip::ZipArchive::new(file).map_err(|e| DataError::Zip(e.to_string()))?;
        Ok(Self {
            path: path.to_path_buf(),
            zip,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.zip.file_names().map(str::to_string).collect()
    }

    pub fn has(&self, name: &str) -> bool {
        let member = member_name(name);
        self.zip.file_names().any(|n| n == member)
    }

    /// Member by array name, with or without the `.npy` suffix.
    pub fn member(&mut self, name: &str) -> Result<NpyArray, DataError> {
        let member = member_name(name);
        let mut entry = self.zip.by_name(&member).map_err(|e| match e {
            zip::result::ZipError::FileNotFound => DataError::MissingMember(member.clone()),
            other => DataError::Zip(other.to_string()),
        })?;
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut bytes)
            .map_err(|e| DataError::io(&self.path, e))?;
        parse_npy(&bytes)
    }
}

fn member_name(name: &str) -> String {
    if name.ends_with(".npy") {
        name.to_string()
    } else {
        format!("{name}.npy")
    }
}

pub fn load_npz_member(path: &Path, name: &str) -> Result<NpyArray, DataError> {
    NpzArchive::open(path)?.member(name)
}
