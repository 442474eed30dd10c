//! Occupancy evaluation: per-class IoU, mIoU, geometry IoU and range-masked
//! variants (radius from the ego origin, or annular sectors).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::SemanticGrid;

/// Radii (m) of the radius sweep protocol.
pub const RADIUS_SWEEP: [f64; 7] = [20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];
/// Annular bands (m) of the sector protocol.
pub const SECTOR_BANDS: [(f64, f64); 5] = [(0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, 50.0)];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    /// `None` when the class is absent from both prediction and ground truth.
    pub fn iou(&self) -> Option<f64> {
        let denom = self.tp + self.fp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Per semantic class (1..=C) counts plus binarized occupied/empty counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    /// Index `c − 1` holds class `c`.
    pub classes: Vec<Counts>,
    pub geometry: Counts,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts { classes: vec![Counts::default(); num_classes], geometry: Counts::default() }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&mut self, pred: u8, gt: u8) {
        let (p, g) = (pred as usize, gt as usize);
        if p == g {
            if p != 0 {
                self.classes[p - 1].tp += 1;
            }
        } else {
            if p != 0 {
                self.classes[p - 1].fp += 1;
            }
            if g != 0 {
                self.classes[g - 1].fn_ += 1;
            }
        }
        match (p != 0, g != 0) {
            (true, true) => self.geometry.tp += 1,
            (true, false) => self.geometry.fp += 1,
            (false, true) => self.geometry.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn merge(&mut self, o: &ConfusionCounts) {
        for (a, b) in self.classes.iter_mut().zip(&o.classes) {
            a.add(b);
        }
        self.geometry.add(&o.geometry);
    }
}

fn check_pair(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<()> {
    if pred.spec != gt.spec {
        return Err(Error::invalid("prediction and ground truth grids have different specs"));
    }
    if pred.num_classes != gt.num_classes {
        return Err(Error::invalid("prediction and ground truth grids have different class counts"));
    }
    Ok(())
}

pub fn confusion(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<ConfusionCounts> {
    confusion_masked(pred, gt, |_| true)
}

/// Confusion over the voxels for which `keep(linear_index)` holds.
pub fn confusion_masked(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    keep: impl Fn(usize) -> bool,
) -> Result<ConfusionCounts> {
    check_pair(pred, gt)?;
    let (p, g) = (pred.labels(), gt.labels());
    let mut counts = ConfusionCounts::new(gt.num_classes);
    for (idx, (a, b)) in p.iter().zip(&g).enumerate() {
        if keep(idx) {
            counts.record(*a, *b);
        }
    }
    Ok(counts)
}

/// IoU of semantic class `class` (1-based).
pub fn iou(counts: &ConfusionCounts, class: usize) -> Option<f64> {
    counts.classes.get(class.wrapping_sub(1)).and_then(Counts::iou)
}

/// Mean IoU over semantic classes present in the prediction or ground truth.
pub fn miou(counts: &ConfusionCounts) -> Option<f64> {
    let ious: Vec<f64> = counts.classes.iter().filter_map(Counts::iou).collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn geometry_iou(counts: &ConfusionCounts) -> Option<f64> {
    counts.geometry.iou()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RangeMode {
    /// Horizontal distance `d < radius`.
    Radius(f64),
    /// `lo ≤ d < hi`.
    Sector(f64, f64),
}

impl RangeMode {
    fn keeps(&self, d: f64) -> bool {
        match *self {
            RangeMode::Radius(r) => d < r,
            RangeMode::Sector(lo, hi) => d >= lo && d < hi,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            RangeMode::Radius(r) => format!("r<{r}"),
            RangeMode::Sector(lo, hi) => format!("{lo}-{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeReport {
    pub mode: RangeMode,
    pub voxels: usize,
    pub counts: ConfusionCounts,
    /// `None` when undefined (empty mask or no class present).
    pub iou: Option<f64>,
    pub miou: Option<f64>,
}

/// Metrics restricted to voxels whose centre's horizontal distance from
/// `origin` satisfies `mode`.
pub fn range_masked_eval(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    mode: RangeMode,
    origin: &Vec3,
) -> Result<RangeReport> {
    check_pair(pred, gt)?;
    if !gt.spec.bounds().contains(origin) {
        return Err(Error::invalid("evaluation origin must lie inside the grid"));
    }
    match mode {
        RangeMode::Radius(r) if !(r > 0.0) => return Err(Error::invalid("radius must be positive")),
        RangeMode::Sector(lo, hi) if !(lo >= 0.0 && lo < hi) => {
            return Err(Error::invalid("sector bounds must satisfy 0 <= lo < hi"))
        }
        _ => {}
    }
    let spec = gt.spec;
    let keep = |idx: usize| {
        let c = spec.center_of(idx);
        mode.keeps((c[0] - origin[0]).hypot(c[1] - origin[1]))
    };
    let voxels = (0..spec.len()).filter(|i| keep(*i)).count();
    let counts = confusion_masked(pred, gt, keep)?;
    let (iou, miou) = if voxels == 0 { (None, None) } else { (geometry_iou(&counts), miou(&counts)) };
    Ok(RangeReport { mode, voxels, counts, iou, miou })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".to_string())
}

/// `range,voxels,iou,miou` rows.
pub fn reports_to_csv(reports: &[RangeReport]) -> String {
    let mut out = String::from("range,voxels,iou,miou\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{}", r.mode.label(), r.voxels, fmt_opt(r.iou), fmt_opt(r.miou));
    }
    out
}

/// Per-class table for one confusion.
pub fn class_table(counts: &ConfusionCounts, class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>10} {:>10} {:>10} {:>10}", "class", "tp", "fp", "fn", "iou");
    for (i, c) in counts.classes.iter().enumerate() {
        let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class_{}", i + 1));
        let _ = writeln!(out, "{:<20} {:>10} {:>10} {:>10} {:>10}", name, c.tp, c.fp, c.fn_, fmt_opt(c.iou()));
    }
    let _ = writeln!(out, "{:<20} {:>43}", "geometry IoU", fmt_opt(geometry_iou(counts)));
    let _ = writeln!(out, "{:<20} {:>43}", "mIoU", fmt_opt(miou(counts)));
    out
}
