use autodiff::DenseArray;

use crate::{Error, Result};

/// Labeled images `(N, C, H, W)` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: DenseArray<f32>,
    pub labels: Vec<usize>,
    pub provenance: String,
}

impl ImageDataset {
    pub fn new(
        images: DenseArray<f32>,
        labels: Vec<usize>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.images.shape();
        if s.len() != 4 {
            return Err(Error::Data(format!(
                "images must be (N, C, H, W), got {:?}",
                s
            )));
        }
        if s[0] != self.labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                s[0],
                self.labels.len()
            )));
        }
        if let Some(v) = self
            .images
            .data()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Data(format!("pixel value {} outside [0, 1]", v)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Self {
            images: DenseArray::new(vec![indices.len(), c, h, w], data).expect("sizes agree"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Splits off the first `n` images; the rest form the second half.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}
