//! Masks from an external object tracker, merged with static masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{MaskMap, SceneDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMaskSet {
    pub masks: Vec<MaskMap>,
    /// Free-form name of the tool that produced the masks.
    pub source: String,
    /// Views that had no mask file.
    pub missing: Vec<String>,
}

/// Reads one mask per dataset view from `dir`, matching file names under
/// `images/`. Views without a file get an all-zero mask and a warning.
pub fn ingest_track_masks(dir: &Path, dataset: &SceneDataset, source: &str) -> Result<TrackMaskSet> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "track mask directory not found")));
    }
    let mut masks = Vec::with_capacity(dataset.views.len());
    let mut missing = Vec::new();
    for view in &dataset.views {
        let (w, h) = view.image.dims();
        let path = dir.join(&view.name);
        if !path.is_file() {
            log::warn!("no track mask for {}; using an empty mask", view.name);
            missing.push(view.name.clone());
            masks.push(MaskMap::zeros(w, h));
            continue;
        }
        let mask = MaskMap::load_png(&path)?;
        if mask.dims() != (w, h) {
            return Err(Error::dims(path.display().to_string(), (w, h), mask.dims()));
        }
        masks.push(mask);
    }
    Ok(TrackMaskSet {
        masks,
        source: source.to_string(),
        missing,
    })
}

/// Per-pixel maximum of static and tracker masks.
pub fn union_masks(static_masks: &[MaskMap], dynamic: &TrackMaskSet) -> Result<Vec<MaskMap>> {
    if static_masks.len() != dynamic.masks.len() {
        return Err(Error::CountMismatch {
            expected: static_masks.len(),
            found: dynamic.masks.len(),
        });
    }
    static_masks
        .iter()
        .zip(&dynamic.masks)
        .map(|(a, b)| {
            if a.dims() != b.dims() {
                return Err(Error::dims("track mask", a.dims(), b.dims()));
            }
            Ok(MaskMap {
                width: a.width,
                height: a.height,
                data: a.data.iter().zip(&b.data).map(|(x, y)| x.max(*y)).collect(),
            })
        })
        .collect()
}

/// Copy of `dataset` whose masks are the union of its own masks and the
/// tracker masks.
pub fn apply_track_masks(dataset: &SceneDataset, dynamic: &TrackMaskSet) -> Result<SceneDataset> {
    let merged = union_masks(&dataset.masks(), dynamic)?;
    let mut out = dataset.clone();
    for (view, mask) in out.views.iter_mut().zip(merged) {
        view.mask = mask;
    }
    Ok(out)
}

/// Intersection over union of the `> 0.5` regions of two masks.
pub fn mask_iou(a: &MaskMap, b: &MaskMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims("mask", a.dims(), b.dims()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (p, q) = (*x > 0.5, *y > 0.5);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{CameraView, ImageBuffer, SceneView};
    use proptest::prelude::*;

    fn set(masks: Vec<MaskMap>) -> TrackMaskSet {
        TrackMaskSet {
            masks,
            source: "test".into(),
            missing: vec![],
        }
    }

    fn dataset(n: usize) -> SceneDataset {
        let cam = CameraView {
            id: 0,
            fx: 4.0,
            fy: 4.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
            qw: 1.0,
            qx: 0.0,
            qy: 0.0,
            qz: 0.0,
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
        };
        SceneDataset {
            name: "t".into(),
            views: (0..n)
                .map(|i| SceneView {
                    camera: CameraView { id: i as u32, ..cam.clone() },
                    image: ImageBuffer::new(4, 4),
                    mask: MaskMap::zeros(4, 4),
                    name: format!("frame_{i:03}.png"),
                })
                .collect(),
            sfm_points: vec![],
        }
    }

    #[test]
    fn missing_frames_default_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(5);
        let full = MaskMap::filled(4, 4, 1.0);
        for i in [0, 2] {
            full.save_png(&dir.path().join(format!("frame_{i:03}.png"))).unwrap();
        }
        let set = ingest_track_masks(dir.path(), &ds, "tracker").unwrap();
        assert_eq!(set.masks.len(), 5);
        assert_eq!(set.missing.len(), 3);
        assert!(set.masks[1].is_all_zero() && set.masks[3].is_all_zero() && set.masks[4].is_all_zero());
        assert_eq!(set.masks[2], full);
    }

    #[test]
    fn wrong_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        MaskMap::zeros(3, 4).save_png(&dir.path().join("frame_000.png")).unwrap();
        assert!(matches!(
            ingest_track_masks(dir.path(), &dataset(1), "t"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn union_examples() {
        let a = MaskMap::from_raw(2, 1, vec![1.0, 0.0]).unwrap();
        let b = MaskMap::from_raw(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(union_masks(&[a.clone()], &set(vec![MaskMap::zeros(2, 1)])).unwrap()[0], a);
        assert_eq!(union_masks(&[a.clone()], &set(vec![b.clone()])).unwrap()[0].data, vec![1.0, 1.0]);
        assert_eq!(union_masks(&[a.clone()], &set(vec![a.clone()])).unwrap()[0], a);
        assert!(union_masks(&[a.clone(), b], &set(vec![a])).is_err());
    }

    fn mask_strategy() -> impl Strategy<Value = MaskMap> {
        proptest::collection::vec(0.0f64..=1.0, 6).prop_map(|d| MaskMap::from_raw(3, 2, d).unwrap())
    }

    proptest! {
        #[test]
        fn union_is_commutative_idempotent_monotone(a in mask_strategy(), b in mask_strategy(), bump in 0.0f64..0.5) {
            let ab = union_masks(&[a.clone()], &set(vec![b.clone()])).unwrap();
            let ba = union_masks(&[b.clone()], &set(vec![a.clone()])).unwrap();
            prop_assert_eq!(&ab, &ba);
            prop_assert_eq!(&union_masks(&[a.clone()], &set(vec![a.clone()])).unwrap()[0], &a);
            let bigger = MaskMap { data: a.data.iter().map(|v| (v + bump).min(1.0)).collect(), ..a.clone() };
            let ab2 = union_masks(&[bigger], &set(vec![b.clone()])).unwrap();
            for (x, y) in ab[0].data.iter().zip(&ab2[0].data) {
                prop_assert!(y >= x);
                prop_assert!(*y <= 1.0);
            }
        }
    }
}
