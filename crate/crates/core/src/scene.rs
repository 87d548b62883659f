//! World-space Gaussians, cameras and scene ingestion.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType,
    ScalarType,
};
use ply_rs::writer::Writer;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Degree-0 real spherical harmonic, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Vertex properties a 3DGS checkpoint must provide.
pub const PLY_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

const QUAT_NORM_TOLERANCE: f64 = 1e-6;

/// A world-space Gaussian primitive with factored covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    /// Semi-axis lengths.
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err("mean is not finite".into());
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(format!("scale {:?} must be strictly positive", self.scale));
        }
        let norm = self.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= QUAT_NORM_TOLERANCE) {
            return Err(format!("rotation quaternion has norm {norm}, expected 1"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(format!("opacity {} outside (0, 1]", self.opacity));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(format!("color {:?} outside [0, 1]", self.color));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }
}

/// `Sigma = R diag(scale^2) R^T`, evaluated as `M M^T` with `M = R diag(scale)`
/// so that the result is exactly symmetric.
pub fn covariance_of(g: &Gaussian3D) -> Matrix3<f64> {
    let m = g.rotation_matrix() * Matrix3::from_diagonal(&Vector3::from(g.scale));
    let mut cov = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            cov[(i, j)] = (0..3).map(|k| m[(i, k)] * m[(j, k)]).sum();
        }
    }
    cov
}

/// Pinhole camera with a row-major world-to-camera transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub view: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.2
}

impl Camera {
    /// Camera at the origin looking down `+z` with `x` right and `y` down.
    pub fn looking_down_z(width: u32, height: u32, focal: f64) -> Self {
        #[rustfmt::skip]
        let view = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        Camera {
            view,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: default_near(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera width and height must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("camera focal lengths must be positive".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::Validation("camera near clip must be positive".into()));
        }
        if self.view.iter().chain([&self.cx, &self.cy]).any(|v| !v.is_finite()) {
            return Err(Error::Validation("camera parameters must be finite".into()));
        }
        Ok(())
    }

    /// Rotation part `W` of the view transform.
    pub fn rotation(&self) -> Matrix3<f64> {
        let v = &self.view;
        Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10])
    }

    pub fn to_camera_space(&self, p: [f64; 3]) -> Vector3<f64> {
        let v = &self.view;
        self.rotation() * Vector3::from(p) + Vector3::new(v[3], v[7], v[11])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cam: Camera = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }
}

/// An ordered, immutable collection of Gaussians.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub source_path: String,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    gaussians: Vec<Gaussian3D>,
}

impl Scene {
    /// Build a scene, validating every Gaussian. An empty list is allowed and
    /// renders black.
    pub fn new(gaussians: Vec<Gaussian3D>, source_path: impl Into<String>) -> Result<Self> {
        for (index, g) in gaussians.iter().enumerate() {
            g.validate().map_err(|reason| Error::InvalidGaussian { index, reason })?;
        }
        Ok(Scene { gaussians, source_path: source_path.into() })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Load a scene from JSON, or from a PLY checkpoint when the extension is
    /// `.ply`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => load_ply(path),
            _ => load_synthetic(path),
        }
    }
}

/// Read a JSON scene; values are taken verbatim.
pub fn load_synthetic(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: SceneFile = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    Scene::new(parsed.gaussians, path.display().to_string())
}

pub fn write_synthetic(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let doc = SceneFile { gaussians: scene.gaussians.clone() };
    serde_json::to_writer(BufWriter::new(file), &doc)?;
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        _ => return None,
    })
}

/// Read a 3DGS checkpoint. Opacity goes through the logistic sigmoid, scales
/// through `exp`, rotations are normalized and color is the degree-0 SH
/// evaluation `0.5 + SH_C0 * f_dc`, clamped to `[0, 1]`.
pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let format_err = |message: String| Error::Format { path: path.into(), message };
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut BufReader::new(file))
        .map_err(|e| format_err(e.to_string()))?;
    let vertex_def = ply
        .header
        .elements
        .get("vertex")
        .ok_or_else(|| format_err("missing element 'vertex'".into()))?;
    for name in PLY_PROPERTIES {
        if !vertex_def.properties.contains_key(name) {
            return Err(format_err(format!("missing vertex property '{name}'")));
        }
    }
    let vertices = ply.payload.get("vertex").map(Vec::as_slice).unwrap_or(&[]);
    if vertices.is_empty() {
        return Err(Error::EmptyScene(path.display().to_string()));
    }

    let mut gaussians = Vec::with_capacity(vertices.len());
    for (index, vertex) in vertices.iter().enumerate() {
        let get = |name: &str| -> Result<f64> {
            vertex
                .get(name)
                .and_then(scalar)
                .ok_or_else(|| format_err(format!("vertex {index}: property '{name}' is not a scalar")))
        };
        let mut rot = [get("rot_0")?, get("rot_1")?, get("rot_2")?, get("rot_3")?];
        let norm = rot.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidGaussian { index, reason: "zero rotation quaternion".into() });
        }
        rot.iter_mut().for_each(|q| *q /= norm);
        let dc = [get("f_dc_0")?, get("f_dc_1")?, get("f_dc_2")?];
        gaussians.push(Gaussian3D {
            mean: [get("x")?, get("y")?, get("z")?],
            scale: [get("scale_0")?.exp(), get("scale_1")?.exp(), get("scale_2")?.exp()],
            rotation: rot,
            opacity: sigmoid(get("opacity")?),
            color: dc.map(|f| (0.5 + SH_C0 * f).clamp(0.0, 1.0)),
        });
    }
    Scene::new(gaussians, path.display().to_string())
}

/// Write a binary little-endian checkpoint holding the inverse activations of
/// each Gaussian, readable by [`load_ply`].
pub fn write_ply(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = Encoding::BinaryLittleEndian;
    let mut element = ElementDef::new("vertex".to_string());
    for name in PLY_PROPERTIES {
        element
            .properties
            .add(PropertyDef::new(name.to_string(), PropertyType::Scalar(ScalarType::Float)));
    }
    ply.header.elements.add(element);

    let vertices = scene
        .gaussians
        .iter()
        .map(|g| {
            let logit = (g.opacity / (1.0 - g.opacity)).ln();
            let values = [
                g.mean[0],
                g.mean[1],
                g.mean[2],
                (g.color[0] - 0.5) / SH_C0,
                (g.color[1] - 0.5) / SH_C0,
                (g.color[2] - 0.5) / SH_C0,
                logit,
                g.scale[0].ln(),
                g.scale[1].ln(),
                g.scale[2].ln(),
                g.rotation[0],
                g.rotation[1],
                g.rotation[2],
                g.rotation[3],
            ];
            let mut e = DefaultElement::new();
            for (name, v) in PLY_PROPERTIES.iter().zip(values) {
                e.insert(name.to_string(), Property::Float(v as f32));
            }
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), vertices);
    ply.make_consistent().map_err(|e| Error::Format { path: path.into(), message: e.to_string() })?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Writer::new()
        .write_ply(&mut BufWriter::new(file), &mut ply)
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}
