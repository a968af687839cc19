//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "NCCK" | version u32 | layers u32 | momentum f64 | eps f64
//! per layer: activation u32 (0 relu, 1 identity)
//!            tensor weight | tensor gamma | tensor beta
//!            tensor running_mean | tensor running_var
//! tensor classifier
//! ```
//!
//! where `tensor = rows u64 | cols u64 | rows*cols f64`.

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::Matrix;

use super::{Activation, Layer, Model, ModelParams, NormState, RunningStats};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor(w: &mut Writer, m: &Matrix) {
    w.u64(m.rows() as u64);
    w.u64(m.cols() as u64);
    w.f64s(m.data());
}

fn get_tensor(r: &mut Reader<'_>, what: &str) -> Result<Matrix> {
    let rows = r.len(what)?;
    let cols = r.len(what)?;
    let n = rows.checked_mul(cols).ok_or_else(|| r.truncated(format!("{what}: shape overflow")))?;
    let data = r.f64s(n, what)?;
    Matrix::new(rows, cols, data)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let layers = model.params.layers();
    w.u32(layers.len() as u32);
    w.f64s(&[model.norm.momentum, model.norm.eps]);
    for (l, rs) in layers.iter().zip(&model.norm.layers) {
        w.u32(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        put_tensor(&mut w, &l.weight);
        put_tensor(&mut w, &l.gamma);
        put_tensor(&mut w, &l.beta);
        put_tensor(&mut w, &Matrix::row_vector(&rs.mean));
        put_tensor(&mut w, &Matrix::row_vector(&rs.var));
    }
    put_tensor(&mut w, model.params.classifier());
    write_file(path, &w.finish())
}

/// Loads a checkpoint; any inconsistency is reported before a model is built.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n_layers = r.u32("layer count")? as usize;
    let ms = r.f64s(2, "norm settings")?;
    let mut layers = Vec::new();
    let mut stats = Vec::new();
    for i in 0..n_layers {
        let activation = match r.u32("activation")? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            code => return Err(r.truncated(format!("layer {i}: unknown activation code {code}"))),
        };
        let weight = get_tensor(&mut r, "weight")?;
        let gamma = get_tensor(&mut r, "gamma")?;
        let beta = get_tensor(&mut r, "beta")?;
        let mean = get_tensor(&mut r, "running mean")?.into_data();
        let var = get_tensor(&mut r, "running variance")?.into_data();
        layers.push(Layer { weight, gamma, beta, activation });
        stats.push(RunningStats { mean, var });
    }
    let classifier = get_tensor(&mut r, "classifier")?;
    r.finish()?;
    let malformed = |e: Error| Error::Truncated { path: path.to_path_buf(), detail: e.to_string() };
    let params = ModelParams::new(layers, classifier).map_err(malformed)?;
    let norm = NormState { layers: stats, momentum: ms[0], eps: ms[1] };
    Model::new(params, norm).map_err(malformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Mode};
    use crate::tensor::Rng;

    fn trained_ish() -> Model {
        let mut m = Model::init(&Architecture::reference(4, 3), 9).unwrap();
        let mut rng = Rng::new(9);
        let x = Matrix::from_fn(6, 4, |_, _| rng.normal());
        m.forward(&x, Mode::Train).unwrap();
        m
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.params
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .chain(
                m.norm.layers.iter().flat_map(|s| s.mean.iter().chain(&s.var).map(|v| v.to_bits()).collect::<Vec<_>>()),
            )
            .collect()
    }

    #[test]
    fn round_trip_is_bit_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ncck");
        let m = trained_ish();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn corrupted_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ncck");
        save_checkpoint(&trained_ish(), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[1] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::UnsupportedVersion { found: 2, supported: 1, .. })));

        for cut in [10, good.len() / 2, good.len() - 8] {
            std::fs::write(&path, &good[..cut]).unwrap();
            assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })), "cut {cut}");
        }

        let mut long = good.clone();
        long.push(0);
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_checkpoint(Path::new("/nonexistent/m.ncck")), Err(Error::Io { .. })));
    }
}
