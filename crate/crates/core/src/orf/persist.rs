//! Model files: an 8-byte magic, a little-endian `u32` format version, then
//! the bincode encoding of the [`ForestModel`].

use std::fs;
use std::io::Write;
use std::path::Path;

use super::ForestModel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OTLFORST";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = MAGIC.len() + 4;

pub(crate) fn to_bytes(model: &ForestModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bincode::serialize_into(&mut out, model).expect("in-memory serialization cannot fail");
    out
}

pub(crate) fn from_bytes(bytes: &[u8]) -> std::result::Result<ForestModel, String> {
    if bytes.len() < HEADER_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err("not a forest model file".into());
    }
    let version = u32::from_le_bytes(bytes[MAGIC.len()..HEADER_LEN].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        ));
    }
    let model: ForestModel =
        bincode::deserialize(&bytes[HEADER_LEN..]).map_err(|e| format!("corrupt model: {e}"))?;
    model.params.validate().map_err(|e| e.to_string())?;
    if model.trees.len() != model.params.num_trees {
        return Err("tree count does not match parameters".into());
    }
    Ok(model)
}

/// Writes the model through a temporary file in the same directory, so a
/// reader never observes a partial checkpoint.
pub fn save(model: &ForestModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&to_bytes(model))
        .map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ForestModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|message| Error::ModelLoad {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orf::ForestParams;

    fn trained() -> ForestModel {
        let mut m = ForestModel::new(ForestParams {
            num_trees: 5,
            feature_count: 3,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let data: Vec<_> = (0..80)
            .map(|i| (vec![(i % 9) as f64, (i % 5) as f64, i as f64], i % 3))
            .collect();
        m.update_batch(&data).unwrap();
        m
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.otl");
        let m = trained();
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty");
        fs::write(&path, b"").unwrap();
        assert!(matches!(load(&path), Err(Error::ModelLoad { .. })));
    }

    #[test]
    fn version_mismatch_fails() {
        let mut bytes = to_bytes(&trained());
        bytes[MAGIC.len()] = 99;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.contains("version 99"), "{err}");
    }

    #[test]
    fn truncated_payload_fails() {
        let bytes = to_bytes(&trained());
        assert!(from_bytes(&bytes[..bytes.len() / 2]).is_err());
    }
}
