use ndarray::Array2;

use super::idx::{IdxKind, IdxTensor};
use crate::{Error, Result};

pub const N_CLASSES: usize = 10;

/// Flattened images scaled to `[0, 1]` with integer and one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub one_hot: Array2<f64>,
}

impl Dataset {
    /// Builds a dataset from already-normalized rows.
    pub fn from_parts(inputs: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{n_classes}")));
        }
        let mut one_hot = Array2::zeros((labels.len(), n_classes));
        for (r, &l) in labels.iter().enumerate() {
            one_hot[[r, l]] = 1.0;
        }
        Ok(Self {
            inputs,
            labels,
            one_hot,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Takes items `[offset, offset + count)`, flattening each image and
/// dividing pixels by 255.
pub fn make_dataset(images: &IdxTensor, labels: &IdxTensor, offset: usize, count: usize) -> Result<Dataset> {
    if images.kind != IdxKind::Images || labels.kind != IdxKind::Labels {
        return Err(Error::Data("expected an image tensor and a label vector".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let end = offset
        .checked_add(count)
        .filter(|&e| e <= images.len())
        .ok_or_else(|| {
            Error::Data(format!(
                "slice [{offset}, {offset}+{count}) exceeds the {} available items",
                images.len()
            ))
        })?;
    let width = images.item_size();
    let pixels = &images.data[offset * width..end * width];
    let inputs = Array2::from_shape_vec((count, width), pixels.iter().map(|&p| f64::from(p) / 255.0).collect())
        .expect("slice length matches shape");
    let labels = labels.data[offset..end].iter().map(|&l| l as usize).collect();
    Dataset::from_parts(inputs, labels, N_CLASSES)
}
