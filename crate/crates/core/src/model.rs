//! Linear 3D morphable models: storage, validation, shape synthesis and the
//! `H2HM` binary container.
//!
//! A shape is `mean + id_basis * id_coeffs + exp_basis * exp_coeffs`, flattened
//! as `[x0, y0, z0, x1, ...]`. Coefficients multiply the raw basis columns; the
//! per-component sigmas only enter the prior and the box bounds of the fit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

/// Number of sparse facial landmarks the fitting stage consumes.
pub const NUM_LANDMARKS: usize = 68;

/// Tolerance on `max |UᵀU − I|` before a basis is reported as non-orthonormal.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-6;

const MODEL_MAGIC: &[u8; 4] = b"H2HM";
const MODEL_VERSION: u32 = 1;

/// Per-vertex 3D positions in model units (millimetres).
pub type Vertices = Vec<Vector3<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    /// Length `3N`, identity and expression means already summed.
    pub mean_shape: DVector<f64>,
    /// `3N × n_i`.
    pub id_basis: DMatrix<f64>,
    /// `3N × n_e`.
    pub exp_basis: DMatrix<f64>,
    pub id_sigma: DVector<f64>,
    pub exp_sigma: DVector<f64>,
    pub triangles: Vec<[u32; 3]>,
    pub landmark_indices: Vec<u32>,
    pub left_eye_region: Vec<u32>,
    pub right_eye_region: Vec<u32>,
}

/// Identity and expression coefficients of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub id_coeffs: DVector<f64>,
    pub exp_coeffs: DVector<f64>,
}

impl ShapeParams {
    pub fn zeros(model: &MorphableModel) -> Self {
        ShapeParams {
            id_coeffs: DVector::zeros(model.num_id()),
            exp_coeffs: DVector::zeros(model.num_exp()),
        }
    }
}

/// Largest deviation from orthonormality of each basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalityReport {
    pub id_deviation: f64,
    pub exp_deviation: f64,
}

impl OrthonormalityReport {
    pub fn within_tolerance(&self) -> bool {
        self.id_deviation <= ORTHONORMALITY_TOLERANCE
            && self.exp_deviation <= ORTHONORMALITY_TOLERANCE
    }
}

impl MorphableModel {
    pub fn num_vertices(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn num_id(&self) -> usize {
        self.id_basis.ncols()
    }

    pub fn num_exp(&self) -> usize {
        self.exp_basis.ncols()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Checks every structural invariant. Duplicate landmark indices and
    /// non-orthonormal bases are logged rather than rejected.
    pub fn validate(&self) -> Result<()> {
        let len = self.mean_shape.len();
        if len == 0 || len % 3 != 0 {
            return Err(Error::validation(
                "mean_shape",
                format!("length {len} is not a positive multiple of 3"),
            ));
        }
        let n = len / 3;
        if self.id_basis.nrows() != len {
            return Err(Error::validation(
                "id_basis",
                format!("has {} rows, expected {len}", self.id_basis.nrows()),
            ));
        }
        if self.exp_basis.nrows() != len {
            return Err(Error::validation(
                "exp_basis",
                format!("has {} rows, expected {len}", self.exp_basis.nrows()),
            ));
        }
        if self.id_sigma.len() != self.num_id() {
            return Err(Error::validation(
                "id_sigma",
                format!(
                    "has {} entries, expected {}",
                    self.id_sigma.len(),
                    self.num_id()
                ),
            ));
        }
        if self.exp_sigma.len() != self.num_exp() {
            return Err(Error::validation(
                "exp_sigma",
                format!(
                    "has {} entries, expected {}",
                    self.exp_sigma.len(),
                    self.num_exp()
                ),
            ));
        }
        if let Some(s) = self.id_sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::validation(
                "id_sigma",
                format!("non-positive entry {s}"),
            ));
        }
        if let Some(s) = self
            .exp_sigma
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::validation(
                "exp_sigma",
                format!("non-positive entry {s}"),
            ));
        }
        let finite = self.mean_shape.iter().all(|v| v.is_finite())
            && self.id_basis.iter().all(|v| v.is_finite())
            && self.exp_basis.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation(
                "mean_shape",
                "non-finite coordinate or basis entry",
            ));
        }
        for (m, tri) in self.triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(Error::validation(
                    "triangles",
                    format!("triangle {m} references vertex {i} but the model has {n} vertices"),
                ));
            }
        }
        if self.landmark_indices.len() != NUM_LANDMARKS {
            return Err(Error::validation(
                "landmark_indices",
                format!(
                    "has {} entries, expected {NUM_LANDMARKS}",
                    self.landmark_indices.len()
                ),
            ));
        }
        check_indices("landmark_indices", &self.landmark_indices, n)?;
        check_indices("left_eye_region", &self.left_eye_region, n)?;
        check_indices("right_eye_region", &self.right_eye_region, n)?;

        let mut sorted = self.landmark_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.landmark_indices.len() {
            warn!(
                "landmark_indices contains {} duplicate vertex indices",
                self.landmark_indices.len() - sorted.len()
            );
        }
        Ok(())
    }

    pub fn orthonormality(&self) -> OrthonormalityReport {
        OrthonormalityReport {
            id_deviation: gram_deviation(&self.id_basis),
            exp_deviation: gram_deviation(&self.exp_basis),
        }
    }

    pub fn check_params(&self, params: &ShapeParams) -> Result<()> {
        Error::check_len(
            "identity coefficients",
            self.num_id(),
            params.id_coeffs.len(),
        )?;
        Error::check_len(
            "expression coefficients",
            self.num_exp(),
            params.exp_coeffs.len(),
        )
    }

    /// Evaluates the linear model and reshapes the result into vertices.
    pub fn synthesize(&self, params: &ShapeParams) -> Result<Vertices> {
        self.check_params(params)?;
        let flat = &self.mean_shape
            + &self.id_basis * &params.id_coeffs
            + &self.exp_basis * &params.exp_coeffs;
        Ok(to_vertices(&flat))
    }

    /// Synthesizes only the listed vertices, without evaluating the full mesh.
    pub fn synthesize_subset(&self, params: &ShapeParams, indices: &[u32]) -> Result<Vertices> {
        self.check_params(params)?;
        Ok(indices
            .iter()
            .map(|&i| {
                let mut v = Vector3::zeros();
                for axis in 0..3 {
                    let row = 3 * i as usize + axis;
                    v[axis] = self.mean_shape[row]
                        + self.id_basis.row(row).dot(&params.id_coeffs.transpose())
                        + self.exp_basis.row(row).dot(&params.exp_coeffs.transpose());
                }
                v
            })
            .collect())
    }

    pub fn mean_vertices(&self) -> Vertices {
        to_vertices(&self.mean_shape)
    }

    pub fn landmark_vertices(&self, params: &ShapeParams) -> Result<Vertices> {
        self.synthesize_subset(params, &self.landmark_indices)
    }

    /// Mean face normalized per axis into `[0, 1]`, and the per-triangle
    /// centroid colours derived from it.
    pub fn normalized_mean_face(&self) -> Result<NormalizedMeanFace> {
        let verts = self.mean_vertices();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &verts {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let extent = hi - lo;
        for axis in 0..3 {
            if !(extent[axis] > 0.0) {
                return Err(Error::DegenerateModel(format!(
                    "mean shape has zero extent along axis {axis}"
                )));
            }
        }
        let vertices: Vertices = verts
            .iter()
            .map(|v| {
                let mut out = Vector3::zeros();
                for axis in 0..3 {
                    // Pin the extremes so each axis spans exactly [0, 1].
                    out[axis] = if v[axis] == lo[axis] {
                        0.0
                    } else if v[axis] == hi[axis] {
                        1.0
                    } else {
                        ((v[axis] - lo[axis]) / extent[axis]).clamp(0.0, 1.0)
                    };
                }
                out
            })
            .collect();
        let triangle_colors = self
            .triangles
            .iter()
            .map(|t| {
                let c =
                    (vertices[t[0] as usize] + vertices[t[1] as usize] + vertices[t[2] as usize])
                        / 3.0;
                [c.x, c.y, c.z]
            })
            .collect();
        Ok(NormalizedMeanFace {
            vertices,
            triangle_colors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMeanFace {
    pub vertices: Vertices,
    /// One RGB colour in `[0, 1]³` per triangle.
    pub triangle_colors: Vec<[f64; 3]>,
}

fn check_indices(field: &'static str, indices: &[u32], n: usize) -> Result<()> {
    match indices.iter().find(|&&i| i as usize >= n) {
        Some(i) => Err(Error::validation(
            field,
            format!("vertex index {i} out of range for {n} vertices"),
        )),
        None => Ok(()),
    }
}

fn gram_deviation(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let mut worst = 0.0f64;
    for (r, c) in (0..gram.nrows()).flat_map(|r| (0..gram.ncols()).map(move |c| (r, c))) {
        let target = if r == c { 1.0 } else { 0.0 };
        worst = worst.max((gram[(r, c)] - target).abs());
    }
    worst
}

pub(crate) fn to_vertices(flat: &DVector<f64>) -> Vertices {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// Size in bytes of the `H2HM` encoding for the given dimensions.
pub fn encoded_model_size(
    vertices: usize,
    num_id: usize,
    num_exp: usize,
    triangles: usize,
    left_eye: usize,
    right_eye: usize,
) -> usize {
    let header = 4 + 4 + 4 * 4;
    let floats = 3 * vertices * (1 + num_id + num_exp) + num_id + num_exp;
    let ints = 3 * triangles + NUM_LANDMARKS + 1 + left_eye + 1 + right_eye;
    header + 8 * floats + 4 * ints
}

pub fn encode_model(model: &MorphableModel) -> Vec<u8> {
    let n = model.num_vertices();
    let mut out = Vec::with_capacity(encoded_model_size(
        n,
        model.num_id(),
        model.num_exp(),
        model.num_triangles(),
        model.left_eye_region.len(),
        model.right_eye_region.len(),
    ));
    out.extend_from_slice(MODEL_MAGIC);
    for v in [
        MODEL_VERSION,
        n as u32,
        model.num_id() as u32,
        model.num_exp() as u32,
        model.num_triangles() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // nalgebra storage is column-major, which is the on-disk basis layout.
    for slice in [
        model.mean_shape.as_slice(),
        model.id_basis.as_slice(),
        model.exp_basis.as_slice(),
        model.id_sigma.as_slice(),
        model.exp_sigma.as_slice(),
    ] {
        for v in slice {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for tri in &model.triangles {
        for i in tri {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    for i in &model.landmark_indices {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for ring in [&model.left_eye_region, &model.right_eye_region] {
        out.extend_from_slice(&(ring.len() as u32).to_le_bytes());
        for i in ring.iter() {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

/// Decodes and validates an `H2HM` buffer.
pub fn decode_model(bytes: &[u8]) -> Result<MorphableModel> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(r.error_at(r.offset - 4, format!("unsupported model version {version}")));
    }
    let n = r.u32()? as usize;
    let num_id = r.u32()? as usize;
    let num_exp = r.u32()? as usize;
    let num_tri = r.u32()? as usize;

    let mean_shape = DVector::from_vec(r.f64s(3 * n)?);
    let id_basis = DMatrix::from_vec(3 * n, num_id, r.f64s(3 * n * num_id)?);
    let exp_basis = DMatrix::from_vec(3 * n, num_exp, r.f64s(3 * n * num_exp)?);
    let id_sigma = DVector::from_vec(r.f64s(num_id)?);
    let exp_sigma = DVector::from_vec(r.f64s(num_exp)?);
    let triangles = r
        .u32s(3 * num_tri)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let landmark_indices = r.u32s(NUM_LANDMARKS)?;
    let left_len = r.u32()? as usize;
    let left_eye_region = r.u32s(left_len)?;
    let right_len = r.u32()? as usize;
    let right_eye_region = r.u32s(right_len)?;
    if r.offset != bytes.len() {
        return Err(r.error_at(
            r.offset,
            format!(
                "{} trailing bytes after model payload",
                bytes.len() - r.offset
            ),
        ));
    }
    let model = MorphableModel {
        mean_shape,
        id_basis,
        exp_basis,
        id_sigma,
        exp_sigma,
        triangles,
        landmark_indices,
        left_eye_region,
        right_eye_region,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let model = decode_model(&bytes)?;
    let report = model.orthonormality();
    if !report.within_tolerance() {
        warn!(
            "{}: bases are not orthonormal (identity deviation {:.3e}, expression deviation {:.3e})",
            path.display(),
            report.id_deviation,
            report.exp_deviation
        );
    }
    Ok(model)
}

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) offset: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, offset: 0 }
    }

    pub(crate) fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .offset
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.offset,
                format!(
                    "unexpected end of data: needed {len} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            )),
        }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(self.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        let bytes = self.take(count.checked_mul(4).unwrap_or(usize::MAX))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).unwrap_or(usize::MAX))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect())
    }
}
