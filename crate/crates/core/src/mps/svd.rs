use nalgebra::DMatrix;

use super::Charge;
use crate::error::{Error, Result};
use crate::C64;

/// Bond truncation rule: keep at most `max_bond` Schmidt values and drop any
/// whose relative squared weight is below `tol`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub max_bond: usize,
    pub tol: f64,
}

impl Truncation {
    pub fn new(max_bond: usize, tol: f64) -> Self {
        Self { max_bond, tol }
    }

    /// No bond limit; only numerically zero values are removed.
    pub fn exact() -> Self {
        Self {
            max_bond: usize::MAX,
            tol: 1e-28,
        }
    }
}

/// One charge sector of a matrix to be split; `rows` records the
/// `(charge, occupation, dim)` row blocks in stacking order.
pub(super) struct Sector {
    pub charge: Charge,
    pub rows: Vec<(Charge, u8, usize)>,
    pub matrix: DMatrix<C64>,
}

pub(super) struct KeptSector {
    pub charge: Charge,
    pub rows: Vec<(Charge, u8, usize)>,
    pub u: DMatrix<C64>,
    pub values: Vec<f64>,
    pub vt: DMatrix<C64>,
}

pub(super) struct Decomposition {
    pub kept: Vec<KeptSector>,
    /// Kept Schmidt values over all sectors, normalized, descending.
    pub schmidt: Vec<f64>,
    /// Relative squared weight of the dropped values.
    pub discarded: f64,
}

struct ThinSvd {
    u: DMatrix<C64>,
    values: Vec<f64>,
    vt: DMatrix<C64>,
}

/// Thin SVD through faer. nalgebra's complex SVD loses accuracy on nearly
/// rank-deficient blocks, which is the common case here.
fn thin_svd(m: &DMatrix<C64>) -> Result<ThinSvd> {
    let (r, c) = m.shape();
    let a = faer::Mat::<C64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::invalid(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let k = r.min(c);
    Ok(ThinSvd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        values: (0..k).map(|j| svd.S()[j].re).collect(),
        vt: DMatrix::from_fn(k, c, |i, j| v[(j, i)].conj()),
    })
}

/// Block-wise SVD with a global truncation across sectors.
///
/// With `renormalize` the kept values are rescaled to carry the full weight;
/// otherwise the norm lost to truncation stays lost.
pub(super) fn decompose(
    sectors: Vec<Sector>,
    trunc: &Truncation,
    renormalize: bool,
) -> Result<Decomposition> {
    let mut svds = Vec::with_capacity(sectors.len());
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (k, sector) in sectors.into_iter().enumerate() {
        let svd = thin_svd(&sector.matrix)?;
        for (j, &s) in svd.values.iter().enumerate() {
            if s > 0.0 {
                all.push((s, k, j));
            }
        }
        svds.push((sector.charge, sector.rows, svd));
    }
    let total: f64 = all.iter().map(|(s, _, _)| s * s).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::ZeroNorm(total.sqrt()));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let keep = all
        .iter()
        .take(trunc.max_bond.max(1))
        .take_while(|(s, _, _)| s * s / total >= trunc.tol)
        .count()
        .max(1);
    let kept_weight: f64 = all[..keep].iter().map(|(s, _, _)| s * s).sum();
    let discarded = ((total - kept_weight) / total).max(0.0);
    let rescale = if renormalize {
        (total / kept_weight).sqrt()
    } else {
        1.0
    };

    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); svds.len()];
    for &(_, k, j) in &all[..keep] {
        chosen[k].push(j);
    }
    let mut kept = Vec::new();
    for ((charge, rows, svd), cols) in svds.into_iter().zip(chosen) {
        if cols.is_empty() {
            continue;
        }
        let values: Vec<f64> = cols.iter().map(|&j| svd.values[j] * rescale).collect();
        kept.push(KeptSector {
            charge,
            rows,
            u: svd.u.select_columns(&cols),
            values,
            vt: svd.vt.select_rows(&cols),
        });
    }
    let norm = kept_weight.sqrt();
    let schmidt = all[..keep].iter().map(|(s, _, _)| s / norm).collect();
    Ok(Decomposition {
        kept,
        schmidt,
        discarded,
    })
}
