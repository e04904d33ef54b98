//! Real-image collections and a rasterized toy stand-in.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::body::{deform, BodyModel};
use crate::error::{bad_data, invalid, Error, Result};
use crate::geometry::Camera;
use crate::io::{read_png, RgbImage};
use crate::math::Vec3;
use crate::raster::rasterize;
use crate::sampler::{load_metadata, synthetic_records, DatasetMeta, MetaRecord};

/// Images paired with their pose metadata, all at one resolution.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub meta: DatasetMeta,
    pub images: Vec<RgbImage>,
    pub width: usize,
    pub height: usize,
}

impl TrainingSet {
    pub fn new(meta: DatasetMeta, images: Vec<RgbImage>) -> Result<Self> {
        if meta.is_empty() {
            bad_data!("training set is empty");
        }
        if images.len() != meta.len() {
            bad_data!("{} images for {} records", images.len(), meta.len());
        }
        let (width, height) = (images[0].width, images[0].height);
        if let Some(i) = images.iter().position(|im| (im.width, im.height) != (width, height)) {
            bad_data!("image {} is {}x{}, expected {}x{}", meta.records[i].id, images[i].height, images[i].width, height, width);
        }
        Ok(Self { meta, images, width, height })
    }

    /// Reads JSON Lines metadata whose records name PNG files, relative to
    /// the metadata file unless absolute.
    pub fn load(model: &BodyModel, meta_path: &Path, bins: usize) -> Result<Self> {
        let records = load_metadata(meta_path)?;
        let base = meta_path.parent().unwrap_or(Path::new("."));
        let mut images = Vec::with_capacity(records.len());
        for r in &records {
            let Some(name) = &r.image else { bad_data!("record {} has no image", r.id) };
            images.push(read_png(&base.join(name))?);
        }
        Self::new(DatasetMeta::new(model, records, bins)?, images)
    }

    pub fn camera(&self, i: usize) -> Result<Camera> {
        self.meta.records[i].cam.to_camera(self.width, self.height)
    }

    /// Image `i` as an (H*W) x 3 tensor.
    pub fn tensor(&self, i: usize) -> Tensor {
        Tensor::new(self.width * self.height, 3, self.images[i].data.clone())
    }
}

/// Distinct flat color per body part.
pub fn part_color(k: usize) -> Vec3 {
    const PALETTE: [[f64; 3]; 8] = [
        [0.85, 0.33, 0.24],
        [0.22, 0.49, 0.72],
        [0.30, 0.69, 0.29],
        [0.60, 0.31, 0.64],
        [1.00, 0.50, 0.00],
        [0.65, 0.34, 0.16],
        [0.97, 0.51, 0.75],
        [0.40, 0.40, 0.40],
    ];
    Vec3::from(PALETTE[k % PALETTE.len()])
}

/// Rasterizes the body in each record's shape, pose and camera, coloring
/// every part flat on a white background.
pub fn render_records(model: &BodyModel, records: &[MetaRecord], width: usize, height: usize) -> Result<Vec<RgbImage>> {
    let colors: Vec<Vec3> = model.faces.iter().map(|f| part_color(model.vertex_part[f[0]])).collect();
    records
        .iter()
        .map(|r| {
            let posed = deform(model, &r.shape(), &r.pose()).map_err(|e| Error::Data(format!("record {}: {e}", r.id)))?;
            let cam = r.cam.to_camera(width, height)?;
            Ok(rasterize(&posed.posed_vertices, &model.faces, &colors, &cam, &Vec3::repeat(1.0)).image)
        })
        .collect()
}

/// Toy collection: the body turned to each yaw, seen by the frontal camera.
pub fn synthetic_set(model: &BodyModel, yaws: &[f64], width: usize, height: usize, bins: usize) -> Result<TrainingSet> {
    if yaws.is_empty() {
        invalid!("need at least one view");
    }
    let records = synthetic_records(model, yaws, &Camera::full_body(width, height));
    let images = render_records(model, &records, width, height)?;
    TrainingSet::new(DatasetMeta::new(model, records, bins)?, images)
}
