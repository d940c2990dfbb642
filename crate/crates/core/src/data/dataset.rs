use std::ops::Range;
use std::sync::Arc;

use ndarray::Array2;

use crate::model::LabeledBatch;
use crate::{Error, Result};

/// `b / 255` for every byte value.
static PIXEL_SCALE: [f64; 256] = {
    let mut t = [0.0; 256];
    let mut b = 0;
    while b < 256 {
        t[b] = b as f64 / 255.0;
        b += 1;
    }
    t
};

/// Immutable image bytes and labels as loaded from disk.
#[derive(Debug, PartialEq, Eq)]
pub struct RawSplit {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    n_features: usize,
    n_classes: usize,
}

impl RawSplit {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::Config("features and classes must be positive".into()));
        }
        if pixels.len() != labels.len() * n_features {
            return Err(Error::Consistency(format!(
                "{} pixel bytes do not hold {} images of {n_features} pixels",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= n_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(Self {
            pixels,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// A view of labeled images with pixel values in `[0, 1]` (`byte / 255`).
///
/// Views share the loaded bytes and describe derived datasets by a row
/// selection, a pixel permutation and a label map, so building many tasks
/// never copies images. Observable behavior is that of an owned `N × d`
/// matrix plus labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    base: Arc<RawSplit>,
    rows: Option<Arc<Vec<u32>>>,
    /// `out[j] = in[permutation[j]]`
    permutation: Option<Arc<Vec<u32>>>,
    /// Raw label -> exposed label.
    label_map: Option<Arc<Vec<Option<usize>>>>,
    n_classes: usize,
}

impl Dataset {
    pub fn from_raw(base: Arc<RawSplit>) -> Self {
        let n_classes = base.n_classes;
        Self {
            base,
            rows: None,
            permutation: None,
            label_map: None,
            n_classes,
        }
    }

    /// Builds an owned dataset from bytes; mainly for tests and tools.
    pub fn from_bytes(pixels: Vec<u8>, labels: Vec<u8>, n_features: usize, n_classes: usize) -> Result<Self> {
        Ok(Self::from_raw(Arc::new(RawSplit::new(pixels, labels, n_features, n_classes)?)))
    }

    pub fn len(&self) -> usize {
        self.rows.as_ref().map_or(self.base.len(), |r| r.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.base.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn raw_index(&self, i: usize) -> usize {
        match &self.rows {
            Some(r) => r[i] as usize,
            None => i,
        }
    }

    pub fn label(&self, i: usize) -> usize {
        let raw = usize::from(self.base.labels[self.raw_index(i)]);
        match &self.label_map {
            Some(m) => m[raw].expect("rows are restricted to mapped labels"),
            None => raw,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Pixel bytes of example `i` after permutation.
    pub fn image_bytes(&self, i: usize) -> Vec<u8> {
        let row = self.base.row(self.raw_index(i));
        match &self.permutation {
            Some(p) => p.iter().map(|&j| row[j as usize]).collect(),
            None => row.to_vec(),
        }
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        self.write_image(i, &mut out);
        out
    }

    fn write_image(&self, i: usize, out: &mut [f64]) {
        let row = self.base.row(self.raw_index(i));
        match &self.permutation {
            Some(p) => {
                for (o, &j) in out.iter_mut().zip(p.iter()) {
                    *o = PIXEL_SCALE[usize::from(row[j as usize])];
                }
            }
            None => {
                for (o, &b) in out.iter_mut().zip(row) {
                    *o = PIXEL_SCALE[usize::from(b)];
                }
            }
        }
    }

    /// Materializes the given examples as a batch, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<LabeledBatch> {
        let d = self.n_features();
        let mut inputs = Array2::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Usage(format!("example {i} out of range for {} examples", self.len())));
            }
            let row = inputs.row_mut(r);
            self.write_image(i, row.into_slice().expect("standard layout"));
            labels.push(self.label(i));
        }
        // Pixels come from the table above and are in range by construction.
        LabeledBatch::from_parts_unchecked(inputs, labels)
    }

    pub fn batch_range(&self, range: Range<usize>) -> Result<LabeledBatch> {
        self.batch(&range.collect::<Vec<_>>())
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> Result<LabeledBatch> {
        self.batch_range(0..self.len())
    }

    /// Applies a pixel permutation (`out[j] = in[perm[j]]`) on top of any
    /// existing one.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.n_features();
        if perm.len() != d {
            return Err(Error::Config(format!("permutation of length {} for {d} pixels", perm.len())));
        }
        let mut seen = vec![false; d];
        for &j in perm {
            if j >= d || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Config("pixel map is not a permutation".into()));
            }
        }
        let composed: Vec<u32> = match &self.permutation {
            Some(old) => perm.iter().map(|&j| old[j]).collect(),
            None => perm.iter().map(|&j| j as u32).collect(),
        };
        Ok(Self {
            permutation: Some(Arc::new(composed)),
            ..self.clone()
        })
    }

    /// Keeps only examples whose label is in `classes` and relabels them to
    /// their position in `classes`, preserving example order.
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<Self> {
        let mut raw_map: Vec<Option<usize>> = vec![None; self.base.n_classes];
        for (new, &c) in classes.iter().enumerate() {
            if c >= self.n_classes {
                return Err(Error::Config(format!("class {c} out of range for {} classes", self.n_classes)));
            }
            // exposed label c comes from these raw labels
            for (raw, slot) in raw_map.iter_mut().enumerate() {
                if self.exposed_label_of_raw(raw) == Some(c) {
                    *slot = Some(new);
                }
            }
        }
        let rows: Vec<u32> = (0..self.len())
            .filter(|&i| raw_map[usize::from(self.base.labels[self.raw_index(i)])].is_some())
            .map(|i| self.raw_index(i) as u32)
            .collect();
        Ok(Self {
            base: self.base.clone(),
            rows: Some(Arc::new(rows)),
            permutation: self.permutation.clone(),
            label_map: Some(Arc::new(raw_map)),
            n_classes: classes.len(),
        })
    }

    fn exposed_label_of_raw(&self, raw: usize) -> Option<usize> {
        match &self.label_map {
            Some(m) => m[raw],
            None => Some(raw),
        }
    }

    /// Number of examples per exposed label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for i in 0..self.len() {
            h[self.label(i)] += 1;
        }
        h
    }

    /// Pixel permutation in effect, if any.
    pub fn permutation(&self) -> Option<&[u32]> {
        self.permutation.as_deref().map(|v| v.as_slice())
    }

    /// True when both views read the same loaded bytes.
    pub fn shares_storage_with(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.base, &other.base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        // 5 images of 3 pixels, labels over 4 classes
        let pixels = vec![0, 51, 255, 1, 2, 3, 10, 20, 30, 4, 5, 6, 7, 8, 9];
        Dataset::from_bytes(pixels, vec![2, 0, 3, 2, 1], 3, 4).unwrap()
    }

    #[test]
    fn images_scale_to_unit_interval() {
        let d = toy();
        assert_eq!(d.image(0), vec![0.0, 0.2, 1.0]);
        assert_eq!(d.labels(), vec![2, 0, 3, 2, 1]);
    }

    #[test]
    fn permutation_moves_pixels() {
        let d = toy().permuted(&[2, 0, 1]).unwrap();
        assert_eq!(d.image_bytes(0), vec![255, 0, 51]);
        let dd = d.permuted(&[2, 0, 1]).unwrap();
        // composing the 3-cycle twice more returns to identity after 3
        let ddd = dd.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(ddd.image_bytes(3), toy().image_bytes(3));
        assert!(toy().permuted(&[0, 0, 1]).is_err());
        assert!(toy().permuted(&[0, 1]).is_err());
    }

    #[test]
    fn restriction_keeps_order_and_relabels() {
        let d = toy().restrict_classes(&[2, 3]).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels(), vec![0, 1, 0]);
        assert_eq!(d.image_bytes(1), vec![10, 20, 30]);
        assert_eq!(d.n_classes(), 2);
        assert_eq!(d.label_histogram(), vec![2, 1]);
        let p = d.permuted(&[1, 2, 0]).unwrap();
        assert_eq!(p.image_bytes(2), vec![5, 6, 4]);
    }

    #[test]
    fn batch_bounds() {
        let d = toy();
        let b = d.batch(&[4, 0]).unwrap();
        assert_eq!(b.labels(), &[1, 2]);
        assert!(d.batch(&[5]).is_err());
    }
}
