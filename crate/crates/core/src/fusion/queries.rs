use crate::nncore::{LinearParams, NnError, Tensor};

/// Which query landed in which grid cell. Cells are filled row-major;
/// `cells[k]` is the query index stored in cell `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryLayout {
    pub cells: Vec<usize>,
    pub grid_cells: usize,
}

impl QueryLayout {
    pub fn padded_cells(&self) -> usize {
        self.grid_cells - self.cells.len()
    }
}

/// Projects each query to `C` channels and scatters the rows onto the
/// `H*W` grid.
///
/// With more queries than cells, the highest-scoring ones are kept (ties by
/// index) when `scores` is given, otherwise the first `H*W`. Kept queries
/// are placed in index order; unused cells are zero.
pub fn reshape_queries(
    x_q: &Tensor,
    target: [usize; 3],
    projection: &LinearParams,
    scores: Option<&[f64]>,
) -> Result<(Tensor, QueryLayout), NnError> {
    let (n, _) = x_q.dims2()?;
    let [c, h, w] = target;
    if projection.out_features() != c {
        return Err(NnError::Shape(format!(
            "query projection yields {} channels, map has {c}",
            projection.out_features()
        )));
    }
    if let Some(s) = scores {
        if s.len() != n {
            return Err(NnError::Shape(format!("{} scores for {n} queries", s.len())));
        }
    }
    let projected = projection.apply_rows(x_q)?;
    let plane = h * w;
    let mut kept: Vec<usize> = (0..n).collect();
    if n > plane {
        if let Some(s) = scores {
            kept.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
        }
        kept.truncate(plane);
        kept.sort_unstable();
    }
    let mut grid = vec![0.0; c * plane];
    for (cell, q) in kept.iter().enumerate() {
        for ch in 0..c {
            grid[ch * plane + cell] = projected.at2(*q, ch);
        }
    }
    Ok((
        Tensor::from_vec(&[c, h, w], grid)?,
        QueryLayout {
            cells: kept,
            grid_cells: plane,
        },
    ))
}

/// Inverse of the scatter: one `[C]` row per occupied cell, in cell order.
pub fn gather_queries(grid: &Tensor, layout: &QueryLayout) -> Result<Tensor, NnError> {
    let (c, h, w) = grid.dims3()?;
    let plane = h * w;
    if plane != layout.grid_cells {
        return Err(NnError::Shape(format!("layout has {} cells, grid {plane}", layout.grid_cells)));
    }
    let k = layout.cells.len();
    let mut out = vec![0.0; k * c];
    for cell in 0..k {
        for ch in 0..c {
            out[cell * c + ch] = grid.data()[ch * plane + cell];
        }
    }
    Tensor::from_vec(&[k, c], out)
}
