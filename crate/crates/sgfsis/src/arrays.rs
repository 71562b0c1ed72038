//! Array-in, array-out entry points for callers outside Rust.
//!
//! Every argument is an [`Sgt`] (extents plus a dtype-coded buffer owned by
//! the caller's copy) and is validated before any library call. Results
//! are fresh buffers; nothing refers back to the inputs once a call
//! returns. The command-line tool reads its probability maps through the
//! same validation.

use sgfsis_core::labels::{convert_labels, ConversionRadii, InstanceLabelMap};
use sgfsis_core::metrics::{evaluate, ClassSets, EvalOptions, MetricsReport};
use sgfsis_core::watershed::{derive_markers, watershed_segment, WatershedConfig};
use sgfsis_core::{BinaryMask, LabelRaster, Tensor};

use crate::error::{Error, Result};
use crate::formats::{labels_from_rows, SidecarRow};
use crate::sgt::{Dtype, Sgt, SgtData};

fn dtype_error(name: &str, want: &[Dtype], a: &Sgt) -> Error {
    let want: Vec<String> = want.iter().map(|d| format!("{} ({d:?})", d.code())).collect();
    Error::Array(format!(
        "{name}: expected dtype code {}, found {} ({:?})",
        want.join(" or "),
        a.data.dtype().code(),
        a.data.dtype()
    ))
}

/// `(H, W)` of a rank-2 array or a rank-3 array with one leading channel.
fn plane_dims(name: &str, a: &Sgt) -> Result<(usize, usize)> {
    match a.dims[..] {
        [h, w] | [1, h, w] => Ok((h, w)),
        ref d => Err(Error::Array(format!("{name}: expected an H×W array, found extents {d:?}"))),
    }
}

/// An H×W probability map: f32 values, or a u8 mask read as 0/1.
pub(crate) fn plane(name: &str, a: &Sgt) -> Result<Tensor<f32>> {
    let (h, w) = plane_dims(name, a)?;
    let v = match &a.data {
        SgtData::F32(v) => v.clone(),
        SgtData::U8(v) => v.iter().map(|&b| f32::from(u8::from(b != 0))).collect(),
        SgtData::U32(_) => return Err(dtype_error(name, &[Dtype::F32, Dtype::U8], a)),
    };
    Ok(Tensor::new(&[h, w], v)?)
}

fn raster(name: &str, a: &Sgt) -> Result<LabelRaster> {
    let (h, w) = plane_dims(name, a)?;
    match &a.data {
        SgtData::U32(v) => Ok(LabelRaster::new(w, h, v.clone())?),
        _ => Err(dtype_error(name, &[Dtype::U32], a)),
    }
}

/// Label map from a u32 instance raster and its class table.
pub fn label_map(name: &str, ids: &Sgt, table: &[SidecarRow]) -> Result<InstanceLabelMap> {
    labels_from_rows(raster(name, ids)?, table).map_err(|m| Error::Array(format!("{name}: {m}")))
}

/// Marker-controlled watershed on foreground, boundary and centroid
/// probability maps; returns the u32 instance raster.
pub fn watershed(fg: &Sgt, bd: &Sgt, ct: &Sgt, cfg: &WatershedConfig) -> Result<Sgt> {
    let (f, b, c) = (plane("foreground", fg)?, plane("boundary", bd)?, plane("centroid", ct)?);
    if b.dims() != f.dims() || c.dims() != f.dims() {
        return Err(Error::Array(format!(
            "foreground, boundary and centroid extents differ: {:?}, {:?}, {:?}",
            f.dims(),
            b.dims(),
            c.dims()
        )));
    }
    cfg.thresholds.validate()?;
    let markers = derive_markers(&f, &b, &c, cfg.thresholds, cfg.extra_erosion)?;
    let instances = watershed_segment(&markers, &f, cfg.thresholds.foreground, cfg.relief)?;
    Ok(Sgt::from(&instances.labels))
}

/// Supervision channels of one label map as u8 arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvertedArrays {
    pub foreground: Sgt,
    pub boundary: Sgt,
    pub centroid: Sgt,
    /// `N×H×W`, one channel per class present.
    pub classes: Sgt,
    /// `(class id, class name)` per channel of `classes`.
    pub class_table: Vec<(u32, String)>,
}

pub fn convert(ids: &Sgt, table: &[SidecarRow], radii: ConversionRadii) -> Result<ConvertedArrays> {
    let labels = label_map("labels", ids, table)?;
    let ch = convert_labels(&labels, radii)?;
    let (w, h) = (ch.foreground.width(), ch.foreground.height());
    let bytes = |m: &BinaryMask| m.data().iter().map(|&b| u8::from(b)).collect::<Vec<u8>>();
    let stack: Vec<u8> = ch.class_masks.iter().flat_map(bytes).collect();
    Ok(ConvertedArrays {
        foreground: Sgt::from(&ch.foreground),
        boundary: Sgt::from(&ch.boundary),
        centroid: Sgt::from(&ch.centroid),
        classes: Sgt::new(vec![ch.class_masks.len(), h, w], SgtData::U8(stack)).map_err(Error::Array)?,
        class_table: ch.class_ids.iter().copied().zip(ch.class_names.iter().cloned()).collect(),
    })
}

/// All metrics for one image given as two labelled rasters.
pub fn metrics(
    gt: &Sgt,
    gt_table: &[SidecarRow],
    pred: &Sgt,
    pred_table: &[SidecarRow],
    classes: &ClassSets,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    let g = label_map("ground truth", gt, gt_table)?;
    let p = label_map("prediction", pred, pred_table)?;
    Ok(evaluate(&g, &p, classes, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f32_plane(rows: &[&str]) -> Sgt {
        let data = rows.iter().flat_map(|r| r.bytes().map(|b| if b == b'#' { 0.9 } else { 0.1 })).collect();
        Sgt::new(vec![rows.len(), rows[0].len()], SgtData::F32(data)).unwrap()
    }

    fn ids(rows: &[&str]) -> (Sgt, Vec<SidecarRow>) {
        let data: Vec<u32> = rows.iter().flat_map(|r| r.chars().map(|c| c.to_digit(10).unwrap_or(0))).collect();
        let mut present: Vec<u32> = data.iter().copied().filter(|&v| v != 0).collect();
        present.sort_unstable();
        present.dedup();
        let table = present
            .into_iter()
            .map(|id| SidecarRow { id, class_id: 2, class_name: "EPI".into() })
            .collect();
        (Sgt::new(vec![rows.len(), rows[0].len()], SgtData::U32(data)).unwrap(), table)
    }

    #[test]
    fn watershed_splits_two_blobs() {
        let fg = f32_plane(&["##..##", "##..##", "......"]);
        let none = f32_plane(&["......", "......", "......"]);
        let out = watershed(&fg, &none, &none, &WatershedConfig::default()).unwrap();
        assert_eq!(out.dims, [3, 6]);
        assert_eq!(out.data, SgtData::U32(vec![1, 1, 0, 0, 2, 2, 1, 1, 0, 0, 2, 2, 0, 0, 0, 0, 0, 0]));
    }

    #[test]
    fn u8_masks_match_f32_maps() {
        let rows = ["##..##", "##..##", "......"];
        let mask: Vec<u8> = rows.iter().flat_map(|r| r.bytes().map(|b| u8::from(b == b'#'))).collect();
        let mask = Sgt::new(vec![1, 3, 6], SgtData::U8(mask)).unwrap();
        let zero = Sgt::new(vec![3, 6], SgtData::U8(vec![0; 18])).unwrap();
        let cfg = WatershedConfig::default();
        let none = f32_plane(&["......", "......", "......"]);
        assert_eq!(
            watershed(&mask, &zero, &zero, &cfg).unwrap(),
            watershed(&f32_plane(&rows), &none, &none, &cfg).unwrap()
        );
    }

    #[test]
    fn empty_masks_give_zero_raster() {
        let none = f32_plane(&["....", "...."]);
        let out = watershed(&none, &none, &none, &WatershedConfig::default()).unwrap();
        assert_eq!(out.data, SgtData::U32(vec![0; 8]));
    }

    #[test]
    fn wrong_dtype_names_expected_code() {
        let none = f32_plane(&["..", ".."]);
        let words = Sgt::new(vec![2, 2], SgtData::U32(vec![0; 4])).unwrap();
        let e = watershed(&none, &words, &none, &WatershedConfig::default()).unwrap_err().to_string();
        assert!(e.contains("boundary") && e.contains("dtype code 0") && e.contains("found 1"), "{e}");
        let (_, table) = ids(&["1."]);
        let e = label_map("gt", &none, &table).unwrap_err().to_string();
        assert!(e.contains("dtype code 1"), "{e}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = f32_plane(&["..", ".."]);
        let b = f32_plane(&["...", "..."]);
        assert!(watershed(&a, &b, &a, &WatershedConfig::default()).is_err());
        let cube = Sgt::new(vec![2, 2, 2], SgtData::F32(vec![0.0; 8])).unwrap();
        assert!(watershed(&cube, &cube, &cube, &WatershedConfig::default()).is_err());
        let (g, gt) = ids(&["11", ".."]);
        let (p, pt) = ids(&["11.", "..."]);
        assert!(metrics(&g, &gt, &p, &pt, &ClassSets::default(), EvalOptions::default()).is_err());
    }

    #[test]
    fn metrics_of_identical_maps_are_one() {
        let (g, t) = ids(&["11..", "11.2", "...2"]);
        let classes = ClassSets { novel: vec!["EPI".into()], base: vec![] };
        let r = metrics(&g, &t, &g, &t, &classes, EvalOptions::default()).unwrap();
        assert_eq!((r.aji, r.mpq, r.f1_novel, r.dice), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.f1_base, None);
    }

    #[test]
    fn aji_fixture() {
        let (g, gt) = ids(&["11..", "11..", "..22", "..22"]);
        let (p, pt) = ids(&["11..", "....", "..22", ".222"]);
        let r = metrics(&g, &gt, &p, &pt, &ClassSets::default(), EvalOptions::default()).unwrap();
        assert!((r.aji.unwrap() - 6.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn convert_square() {
        let (g, t) = ids(&[".......", ".......", "..111..", "..111..", "..111..", ".......", "......."]);
        let radii = ConversionRadii { boundary: 1, centroid: 0 };
        let c = convert(&g, &t, radii).unwrap();
        let count = |s: &Sgt| match &s.data {
            SgtData::U8(v) => v.iter().filter(|&&b| b != 0).count(),
            _ => unreachable!(),
        };
        assert_eq!((count(&c.foreground), count(&c.boundary), count(&c.centroid)), (9, 8, 1));
        assert_eq!(c.classes.dims, [1, 7, 7]);
        assert_eq!(c.class_table, [(2, "EPI".to_string())]);
    }
}
