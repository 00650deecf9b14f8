use crate::data::binary::Grid;

use super::QualityError;

/// Stack of depth maps in meters. Every value is finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid(Grid);

impl DepthGrid {
    pub fn new(grid: Grid) -> Result<Self, QualityError> {
        if let Some((index, &value)) = grid
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(QualityError::NonPositiveDepth { index, value });
        }
        Ok(Self(grid))
    }

    pub fn from_values(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, QualityError> {
        let g = Grid::new(frames, height, width, values).map_err(|e| QualityError::ShapeMismatch(e.to_string()))?;
        Self::new(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }
}

/// Scale-aligned depth errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    /// Factor applied to the prediction before comparison.
    pub scale: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if v.len() % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Compares predicted and ground-truth depth after rescaling the prediction
/// so that its median matches the ground truth's.
pub fn depth_metrics(pred: &DepthGrid, gt: &DepthGrid) -> Result<DepthMetrics, QualityError> {
    let (p, g) = (pred.grid(), gt.grid());
    if (p.frames, p.height, p.width) != (g.frames, g.height, g.width) {
        return Err(QualityError::ShapeMismatch(format!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            p.frames, p.height, p.width, g.frames, g.height, g.width
        )));
    }
    if p.values.is_empty() {
        return Err(QualityError::ShapeMismatch("empty depth grid".into()));
    }
    let scale = median(&g.values) / median(&p.values);
    let n = p.values.len() as f64;
    let (mut sq, mut abs_rel, mut sq_rel) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.values.iter().zip(&g.values) {
        let diff = scale * pv - gv;
        sq += diff * diff;
        abs_rel += diff.abs() / gv;
        sq_rel += diff * diff / gv;
    }
    Ok(DepthMetrics {
        rmse: (sq / n).sqrt(),
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        scale,
    })
}
