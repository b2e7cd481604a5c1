//! Binary on-disk container for trained observer models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  b"GMON"
//! version u32      container format version (currently 1)
//! kind    u8       1 = geometric observer, 2 = thermodynamic observer
//! meta    u64 len + JSON bytes (kind-specific metadata, serde-encoded)
//! count   u32      number of tensors
//! tensor  repeated: u16 name len + name bytes, u64 rows, u64 cols,
//!                   rows*cols f64 values in row-major order
//! digest  32 bytes SHA-256 of everything before it
//! ```
//!
//! Serialization is fully deterministic: saving the same model twice
//! produces byte-identical files, which downstream reproducibility checks
//! rely on.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdae::{Cdae, CdaeConfig};
use crate::error::{Error, Result};
use crate::grbm::{ConditioningReport, Grbm, GrbmConfig};
use crate::population::RobustScaler;

const MAGIC: &[u8; 4] = b"GMON";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Geometric,
    Thermodynamic,
}

impl ModelKind {
    fn to_u8(self) -> u8 {
        match self {
            ModelKind::Geometric => 1,
            ModelKind::Thermodynamic => 2,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Geometric),
            2 => Ok(ModelKind::Thermodynamic),
            other => Err(Error::model(format!("unknown model kind tag {other}"))),
        }
    }
}

/// Raw decoded container: metadata bytes plus named tensors in file order.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: ModelKind,
    pub meta_json: Vec<u8>,
    pub tensors: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::model(format!("model file is missing tensor '{name}'")))
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_slice(&self.meta_json)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.to_u8());
        out.extend_from_slice(&(self.meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.meta_json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 1 + 8 + 4 + 32 {
            return Err(Error::model("model file truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let expect = Sha256::digest(body);
        if digest != expect.as_slice() {
            return Err(Error::model("model file checksum mismatch"));
        }
        let mut cur = Cursor::new(body);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::model("not a model file (bad magic)"));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(Error::model(format!(
                "unsupported model file version {version}"
            )));
        }
        let mut kind_byte = [0u8; 1];
        cur.read_exact(&mut kind_byte)?;
        let kind = ModelKind::from_u8(kind_byte[0])?;
        let meta_len = read_u64(&mut cur)? as usize;
        let mut meta_json = vec![0u8; meta_len];
        cur.read_exact(&mut meta_json)?;
        let count = read_u32(&mut cur)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(&mut cur)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            cur.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::model("tensor name is not valid UTF-8"))?;
            let rows = read_u64(&mut cur)? as usize;
            let cols = read_u64(&mut cur)? as usize;
            let mut m = DMatrix::zeros(rows, cols);
            let mut buf = [0u8; 8];
            for r in 0..rows {
                for c in 0..cols {
                    cur.read_exact(&mut buf)?;
                    m[(r, c)] = f64::from_le_bytes(buf);
                }
            }
            tensors.push((name, m));
        }
        Ok(Container {
            kind,
            meta_json,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode();
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes)
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn vec_to_row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

fn row_to_vec(m: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    if m.nrows() != 1 {
        return Err(Error::model(format!("{what}: expected a 1-row tensor")));
    }
    Ok(m.row(0).iter().copied().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CdaeMeta {
    schema_hash: String,
    trained_from: NaiveDate,
    trained_to: NaiveDate,
    activation: String,
    frozen: bool,
    config: CdaeConfig,
    final_reconstruction_error: f64,
    final_jacobian_norm_sq: f64,
    scaler_frozen: bool,
}

/// Saves the geometric observer together with the clean-feature scaler that
/// produced its training inputs, so inference can consume raw snapshots.
pub fn save_cdae(model: &Cdae, scaler: &RobustScaler, path: &Path) -> Result<()> {
    if scaler.width() != model.input_dim() {
        return Err(Error::model(
            "scaler width does not match model input dimension",
        ));
    }
    let meta = CdaeMeta {
        schema_hash: model.schema_hash.clone(),
        trained_from: model.trained_from,
        trained_to: model.trained_to,
        activation: model.activation.clone(),
        frozen: model.frozen,
        config: model.config.clone(),
        final_reconstruction_error: model.final_reconstruction_error,
        final_jacobian_norm_sq: model.final_jacobian_norm_sq,
        scaler_frozen: scaler.frozen,
    };
    let container = Container {
        kind: ModelKind::Geometric,
        meta_json: serde_json::to_vec(&meta)?,
        tensors: vec![
            ("w1".into(), model.w1.clone()),
            ("b1".into(), vec_to_row(model.b1.as_slice())),
            ("w2".into(), model.w2.clone()),
            ("b2".into(), vec_to_row(model.b2.as_slice())),
            ("w3".into(), model.w3.clone()),
            ("b3".into(), vec_to_row(model.b3.as_slice())),
            ("w4".into(), model.w4.clone()),
            ("b4".into(), vec_to_row(model.b4.as_slice())),
            ("scaler_center".into(), vec_to_row(&scaler.center)),
            ("scaler_spread".into(), vec_to_row(&scaler.spread)),
        ],
    };
    container.save(path)
}

pub fn load_cdae(path: &Path) -> Result<(Cdae, RobustScaler)> {
    let container = Container::load(path)?;
    if container.kind != ModelKind::Geometric {
        return Err(Error::model("expected a geometric observer model file"));
    }
    let meta: CdaeMeta = container.meta()?;
    let b1 = row_to_vec(container.tensor("b1")?, "b1")?;
    let b2 = row_to_vec(container.tensor("b2")?, "b2")?;
    let b3 = row_to_vec(container.tensor("b3")?, "b3")?;
    let b4 = row_to_vec(container.tensor("b4")?, "b4")?;
    let model = Cdae {
        w1: container.tensor("w1")?.clone(),
        b1: nalgebra::DVector::from_vec(b1),
        w2: container.tensor("w2")?.clone(),
        b2: nalgebra::DVector::from_vec(b2),
        w3: container.tensor("w3")?.clone(),
        b3: nalgebra::DVector::from_vec(b3),
        w4: container.tensor("w4")?.clone(),
        b4: nalgebra::DVector::from_vec(b4),
        activation: meta.activation,
        frozen: meta.frozen,
        schema_hash: meta.schema_hash,
        trained_from: meta.trained_from,
        trained_to: meta.trained_to,
        config: meta.config,
        final_reconstruction_error: meta.final_reconstruction_error,
        final_jacobian_norm_sq: meta.final_jacobian_norm_sq,
    };
    if model.w1.nrows() != model.b1.len()
        || model.w2.nrows() != model.b2.len()
        || model.w3.nrows() != model.b3.len()
        || model.w4.nrows() != model.b4.len()
        || model.w2.ncols() != model.w1.nrows()
        || model.w3.ncols() != model.w2.nrows()
        || model.w4.ncols() != model.w3.nrows()
        || model.w4.nrows() != model.w1.ncols()
    {
        return Err(Error::model("geometric observer tensors are inconsistent"));
    }
    let scaler = RobustScaler {
        center: row_to_vec(container.tensor("scaler_center")?, "scaler_center")?,
        spread: row_to_vec(container.tensor("scaler_spread")?, "scaler_spread")?,
        frozen: meta.scaler_frozen,
    };
    if scaler.width() != model.input_dim() {
        return Err(Error::model("scaler width does not match model input"));
    }
    Ok((model, scaler))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GrbmMeta {
    schema_hash: String,
    trained_from: NaiveDate,
    trained_to: NaiveDate,
    frozen: bool,
    config: GrbmConfig,
    report: ConditioningReport,
    scaler_frozen: bool,
}

/// Saves the thermodynamic observer with the full-width scaler that feeds it.
pub fn save_grbm(model: &Grbm, scaler: &RobustScaler, path: &Path) -> Result<()> {
    if scaler.width() != model.visible_dim() {
        return Err(Error::model(
            "scaler width does not match model visible dimension",
        ));
    }
    let meta = GrbmMeta {
        schema_hash: model.schema_hash.clone(),
        trained_from: model.trained_from,
        trained_to: model.trained_to,
        frozen: model.frozen,
        config: model.config.clone(),
        report: model.report.clone(),
        scaler_frozen: scaler.frozen,
    };
    let container = Container {
        kind: ModelKind::Thermodynamic,
        meta_json: serde_json::to_vec(&meta)?,
        tensors: vec![
            ("weights".into(), model.weights.clone()),
            ("visible_bias".into(), vec_to_row(model.visible_bias.as_slice())),
            (
                "visible_sigma".into(),
                vec_to_row(model.visible_sigma.as_slice()),
            ),
            ("hidden_bias".into(), vec_to_row(model.hidden_bias.as_slice())),
            ("scaler_center".into(), vec_to_row(&scaler.center)),
            ("scaler_spread".into(), vec_to_row(&scaler.spread)),
        ],
    };
    container.save(path)
}

pub fn load_grbm(path: &Path) -> Result<(Grbm, RobustScaler)> {
    let container = Container::load(path)?;
    if container.kind != ModelKind::Thermodynamic {
        return Err(Error::model("expected a thermodynamic observer model file"));
    }
    let meta: GrbmMeta = container.meta()?;
    let visible_bias = row_to_vec(container.tensor("visible_bias")?, "visible_bias")?;
    let visible_sigma = row_to_vec(container.tensor("visible_sigma")?, "visible_sigma")?;
    let hidden_bias = row_to_vec(container.tensor("hidden_bias")?, "hidden_bias")?;
    let weights = container.tensor("weights")?.clone();
    if weights.nrows() != visible_bias.len()
        || weights.ncols() != hidden_bias.len()
        || visible_sigma.len() != visible_bias.len()
    {
        return Err(Error::model(
            "thermodynamic observer tensors are inconsistent",
        ));
    }
    if visible_sigma.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::model("visible spread must be positive"));
    }
    let model = Grbm {
        visible_bias: nalgebra::DVector::from_vec(visible_bias),
        visible_sigma: nalgebra::DVector::from_vec(visible_sigma),
        weights,
        hidden_bias: nalgebra::DVector::from_vec(hidden_bias),
        frozen: meta.frozen,
        schema_hash: meta.schema_hash,
        trained_from: meta.trained_from,
        trained_to: meta.trained_to,
        config: meta.config,
        report: meta.report,
    };
    let scaler = RobustScaler {
        center: row_to_vec(container.tensor("scaler_center")?, "scaler_center")?,
        spread: row_to_vec(container.tensor("scaler_spread")?, "scaler_spread")?,
        frozen: meta.scaler_frozen,
    };
    if scaler.width() != model.visible_dim() {
        return Err(Error::model("scaler width does not match model input"));
    }
    Ok((model, scaler))
}
