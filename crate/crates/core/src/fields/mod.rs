//! Displacement-field data model, ingestion, normalization, synthetic
//! corpus generation and the FTC1 tensor container.

pub mod ftc;
mod ingest;
mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{Scalar, Tensor};
use ftc::{FtcData, FtcEntry};

pub use ingest::{grid_scatter, ingest_scatter_csv, read_scatter_csv, GridSpec, ScatterPoint};
pub use synth::{mode1_displacement, synth_corpus, synth_mode1_field, SynthCorpusSpec, SynthFieldSpec};

/// Per-channel extrema used by min-max scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl ScaleRecord {
    /// The identity record for data that already lives in [-1, 1].
    pub const UNIT: ScaleRecord = ScaleRecord {
        min: [-1.0, -1.0],
        max: [1.0, 1.0],
    };

    /// Channels whose min equals max were mapped to zeros.
    pub fn degenerate(&self) -> [bool; 2] {
        [self.min[0] == self.max[0], self.min[1] == self.max[1]]
    }
}

/// Planar displacement field on a regular pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    ux: Vec<f64>,
    uy: Vec<f64>,
    pixel_pitch: f64,
    scale: Option<ScaleRecord>,
}

impl DisplacementField {
    pub fn new(height: usize, width: usize, ux: Vec<f64>, uy: Vec<f64>, pixel_pitch: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty field grid {height}x{width}")));
        }
        if ux.len() != height * width || uy.len() != height * width {
            return Err(Error::Shape(format!(
                "field {height}x{width} needs {} values per channel, got {} and {}",
                height * width,
                ux.len(),
                uy.len()
            )));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(Error::Data(format!("pixel pitch must be positive, got {pixel_pitch}")));
        }
        Ok(DisplacementField {
            height,
            width,
            ux,
            uy,
            pixel_pitch,
            scale: None,
        })
    }

    /// A field already in scaled units, carrying its scale record.
    pub fn new_scaled(
        height: usize,
        width: usize,
        ux: Vec<f64>,
        uy: Vec<f64>,
        pixel_pitch: f64,
        record: ScaleRecord,
    ) -> Result<Self> {
        let mut f = Self::new(height, width, ux, uy, pixel_pitch)?;
        if f.ux.iter().chain(&f.uy).any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Data("scaled field has values outside [-1, 1]".into()));
        }
        f.scale = Some(record);
        Ok(f)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.ux
        } else {
            &self.uy
        }
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn is_scaled(&self) -> bool {
        self.scale.is_some()
    }

    pub fn scale_record(&self) -> Option<&ScaleRecord> {
        self.scale.as_ref()
    }

    /// Map each channel onto [-1, 1] with its own min and max. A constant
    /// channel becomes all zeros and is flagged degenerate in the record.
    pub fn minmax_scale(&self) -> Result<DisplacementField> {
        let record = ScaleRecord {
            min: [min_of(&self.ux), min_of(&self.uy)],
            max: [max_of(&self.ux), max_of(&self.uy)],
        };
        self.scale_with(record)
    }

    /// Scale with externally supplied extrema (per-dataset mode).
    pub fn scale_with(&self, record: ScaleRecord) -> Result<DisplacementField> {
        if self.is_scaled() {
            return Err(Error::Data("field is already scaled".into()));
        }
        let map = |v: &[f64], c: usize| -> Vec<f64> {
            let (lo, hi) = (record.min[c], record.max[c]);
            if hi == lo {
                return vec![0.0; v.len()];
            }
            v.iter()
                .map(|&x| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
                .collect()
        };
        Ok(DisplacementField {
            ux: map(&self.ux, 0),
            uy: map(&self.uy, 1),
            scale: Some(record),
            ..self.clone()
        })
    }

    /// Inverse of [`minmax_scale`](Self::minmax_scale).
    pub fn unscale(&self) -> Result<DisplacementField> {
        let record = self
            .scale
            .ok_or_else(|| Error::Data("field is not scaled".into()))?;
        let map = |v: &[f64], c: usize| -> Vec<f64> {
            let (lo, hi) = (record.min[c], record.max[c]);
            v.iter().map(|&s| lo + (s + 1.0) * 0.5 * (hi - lo)).collect()
        };
        Ok(DisplacementField {
            ux: map(&self.ux, 0),
            uy: map(&self.uy, 1),
            scale: None,
            ..self.clone()
        })
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Experimental,
    Synthetic,
    Generated,
}

/// Provenance of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub specimen: String,
    pub sigma_max_mpa: Option<f64>,
    pub load_ratio: Option<f64>,
    pub extent_mm: f64,
    pub source: DataSource,
    pub seed: Option<u64>,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.load_ratio {
            if !(r > -1.0 && r < 1.0) {
                return Err(Error::Data(format!("load ratio {r} outside (-1, 1)")));
            }
        }
        if !(self.extent_mm > 0.0) {
            return Err(Error::Data(format!("region extent {} must be positive", self.extent_mm)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    PerSample,
    PerDataset,
}

/// Ordered collection of equally shaped fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDataset {
    fields: Vec<DisplacementField>,
    pub meta: DatasetMeta,
}

impl FieldDataset {
    pub fn new(fields: Vec<DisplacementField>, meta: DatasetMeta) -> Result<Self> {
        meta.validate()?;
        if let Some(first) = fields.first() {
            let shape = (first.height, first.width);
            if let Some(bad) = fields.iter().position(|f| (f.height, f.width) != shape) {
                return Err(Error::Shape(format!(
                    "sample {bad} has shape {}x{}, expected {}x{}",
                    fields[bad].height, fields[bad].width, shape.0, shape.1
                )));
            }
        }
        Ok(FieldDataset { fields, meta })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[DisplacementField] {
        &self.fields
    }

    pub fn get(&self, i: usize) -> &DisplacementField {
        &self.fields[i]
    }

    /// (height, width) of every sample.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.fields.first().map(|f| (f.height, f.width))
    }

    /// Fails on an empty dataset.
    pub fn require_non_empty(&self) -> Result<(usize, usize)> {
        self.grid()
            .ok_or_else(|| Error::Data("dataset is empty".into()))
    }

    pub fn is_scaled(&self) -> bool {
        !self.fields.is_empty() && self.fields.iter().all(|f| f.is_scaled())
    }

    pub fn scale(&self, mode: ScaleMode) -> Result<FieldDataset> {
        let fields = match mode {
            ScaleMode::PerSample => self
                .fields
                .iter()
                .map(|f| f.minmax_scale())
                .collect::<Result<Vec<_>>>()?,
            ScaleMode::PerDataset => {
                let record = ScaleRecord {
                    min: [0, 1].map(|c| {
                        self.fields.iter().map(|f| min_of(f.channel(c))).fold(f64::INFINITY, f64::min)
                    }),
                    max: [0, 1].map(|c| {
                        self.fields
                            .iter()
                            .map(|f| max_of(f.channel(c)))
                            .fold(f64::NEG_INFINITY, f64::max)
                    }),
                };
                self.fields
                    .iter()
                    .map(|f| f.scale_with(record))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(FieldDataset {
            fields,
            meta: self.meta.clone(),
        })
    }

    /// N×2×H×W tensor of all samples.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let (h, w) = self.require_non_empty()?;
        let mut data = Vec::with_capacity(self.len() * 2 * h * w);
        for f in &self.fields {
            data.extend(f.ux.iter().chain(&f.uy).map(|&v| T::of(v)));
        }
        Tensor::new(vec![self.len(), 2, h, w], data)
    }

    /// Samples `indices` as an N×2×H×W tensor.
    pub fn batch_tensor<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = self.require_non_empty()?;
        let mut data = Vec::with_capacity(indices.len() * 2 * h * w);
        for &i in indices {
            let f = &self.fields[i];
            data.extend(f.ux.iter().chain(&f.uy).map(|&v| T::of(v)));
        }
        Tensor::new(vec![indices.len(), 2, h, w], data)
    }

    /// Flattened (u_x, u_y) vector of sample `i`.
    pub fn flat_sample(&self, i: usize) -> Vec<f64> {
        let f = &self.fields[i];
        f.ux.iter().chain(&f.uy).copied().collect()
    }

    /// Build from an N×2×H×W tensor of scaled values.
    pub fn from_scaled_tensor<T: Scalar>(
        t: &Tensor<T>,
        pixel_pitch: f64,
        meta: DatasetMeta,
    ) -> Result<FieldDataset> {
        let [n, c, h, w] = t.dims4("dataset tensor")?;
        if c != 2 {
            return Err(Error::Shape(format!("dataset tensor needs 2 channels, got {c}")));
        }
        let hw = h * w;
        let fields = (0..n)
            .map(|i| {
                let s = &t.data()[i * 2 * hw..(i + 1) * 2 * hw];
                DisplacementField::new_scaled(
                    h,
                    w,
                    s[..hw].iter().map(|v| v.f64()).collect(),
                    s[hw..].iter().map(|v| v.f64()).collect(),
                    pixel_pitch,
                    ScaleRecord::UNIT,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        FieldDataset::new(fields, meta)
    }
}

/// Sidecar JSON stored next to a dataset's FTC1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetSidecar {
    meta: DatasetMeta,
    pixel_pitch: f64,
    scaled: bool,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `bytes` to `path` through a temporary file and a rename, creating
/// missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Save a dataset as `path` (FTC1: `fields`, and `scale` when scaled) plus
/// `path.json` holding its metadata. Scaled data is stored as f32.
pub fn save_dataset(path: &Path, ds: &FieldDataset) -> Result<()> {
    let (h, w) = ds.require_non_empty()?;
    let scaled = ds.is_scaled();
    let n = ds.len();
    let mut values = Vec::with_capacity(n * 2 * h * w);
    for f in ds.fields() {
        values.extend(f.ux.iter().chain(&f.uy));
    }
    let data = if scaled {
        FtcData::F32(values.iter().map(|&v| v as f32).collect())
    } else {
        FtcData::F64(values)
    };
    let mut entries = vec![FtcEntry {
        name: "fields".into(),
        shape: vec![n, 2, h, w],
        data,
    }];
    if scaled {
        let rec: Vec<f64> = ds
            .fields()
            .iter()
            .flat_map(|f| {
                let r = f.scale.unwrap();
                [r.min[0], r.max[0], r.min[1], r.max[1]]
            })
            .collect();
        entries.push(FtcEntry::f64("scale", vec![n, 2, 2], rec));
    }
    ftc::save_ftc(path, &entries)?;
    let side = DatasetSidecar {
        meta: ds.meta.clone(),
        pixel_pitch: ds.get(0).pixel_pitch,
        scaled,
    };
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&side).expect("serializable"))
}

/// Load a dataset written by [`save_dataset`]. Without a sidecar the data is
/// taken as scaled generator output with unit pitch.
pub fn load_dataset(path: &Path) -> Result<FieldDataset> {
    let entries = ftc::load_ftc(path)?;
    let fields = ftc::find(&entries, "fields")?;
    let side_path = sidecar_path(path);
    let side: DatasetSidecar = if side_path.exists() {
        let bytes = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("{}: {e}", side_path.display())))?
    } else {
        DatasetSidecar {
            meta: DatasetMeta {
                specimen: String::new(),
                sigma_max_mpa: None,
                load_ratio: None,
                extent_mm: 1.0,
                source: DataSource::Generated,
                seed: None,
            },
            pixel_pitch: 1.0,
            scaled: true,
        }
    };
    let (n, h, w) = match fields.shape[..] {
        [n, 2, h, w] if n > 0 && h > 0 && w > 0 => (n, h, w),
        ref s => return Err(Error::Data(format!("`fields` must be N×2×H×W, got {s:?}"))),
    };
    let values = fields.values_f64();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("dataset contains non-finite values".into()));
    }
    let scale = if side.scaled {
        match ftc::find(&entries, "scale") {
            Ok(e) if e.shape == [n, 2, 2] => Some(e.values_f64()),
            Ok(e) => return Err(Error::Data(format!("`scale` entry has shape {:?}", e.shape))),
            Err(_) => None,
        }
    } else {
        None
    };
    let hw = h * w;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = &values[i * 2 * hw..(i + 1) * 2 * hw];
        let (ux, uy) = (s[..hw].to_vec(), s[hw..].to_vec());
        let f = if side.scaled {
            let rec = match &scale {
                Some(r) => ScaleRecord {
                    min: [r[4 * i], r[4 * i + 2]],
                    max: [r[4 * i + 1], r[4 * i + 3]],
                },
                None => ScaleRecord::UNIT,
            };
            DisplacementField::new_scaled(h, w, ux, uy, side.pixel_pitch, rec)?
        } else {
            DisplacementField::new(h, w, ux, uy, side.pixel_pitch)?
        };
        out.push(f);
    }
    FieldDataset::new(out, side.meta)
}
