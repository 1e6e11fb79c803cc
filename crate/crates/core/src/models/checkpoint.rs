use std::fs;
use std::path::Path;

use crate::autograd::ParamStore;
use crate::data::{read_tnsr, write_tnsr};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Writes `manifest.txt` plus one `<name>.tnsr` per stored tensor
/// (parameters and buffers) into `dir`.
pub fn save_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    manifest: &str,
    store: &ParamStore<T>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    for (_, p) in store.iter() {
        write_tnsr(dir.join(format!("{}.tnsr", p.name)), &p.value)?;
    }
    Ok(())
}

/// Overwrites every tensor in `store` from `dir`; shapes must match.
pub fn load_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    store: &mut ParamStore<T>,
) -> Result<String> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let t = read_tnsr::<T>(dir.join(format!("{name}.tnsr")))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok(manifest)
}
