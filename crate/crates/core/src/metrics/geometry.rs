use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::Vec3;
use crate::spatial::UniformGrid;

pub const DEFAULT_TAU_CM: f64 = 1.0;
const CM: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chamfer {
    pub cd_p2s: f64,
    pub cd_s2p: f64,
    pub nc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub cd_p2s: f64,
    pub cd_s2p: f64,
    pub nc: f64,
    pub fscore: f64,
    pub tau_cm: f64,
    pub pred_samples: usize,
    pub truth_samples: usize,
    /// How the point sets were obtained, e.g. "gaussian centers vs surface samples".
    pub sampling: String,
}

impl GeometryReport {
    pub fn evaluate(pred: (&[Vec3], &[Vec3]), truth: (&[Vec3], &[Vec3]), tau_cm: f64, sampling: &str) -> Result<Self> {
        let c = chamfer(pred.0, pred.1, truth.0, truth.1)?;
        let f = fscore(pred.0, truth.0, tau_cm)?;
        Ok(GeometryReport {
            cd_p2s: c.cd_p2s,
            cd_s2p: c.cd_s2p,
            nc: c.nc,
            fscore: f,
            tau_cm,
            pred_samples: pred.0.len(),
            truth_samples: truth.0.len(),
            sampling: sampling.to_string(),
        })
    }
}

fn nonempty(what: &str, p: &[Vec3]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} point set is empty")));
    }
    Ok(())
}

/// For every query, the index of and distance to its nearest target point.
pub fn nearest_distances(queries: &[Vec3], targets: &[Vec3]) -> Result<Vec<(usize, f64)>> {
    nonempty("target", targets)?;
    let grid = UniformGrid::new(targets);
    Ok(queries
        .par_iter()
        .map(|q| grid.nearest(q).expect("nonempty grid"))
        .collect())
}

fn directional(q: &[Vec3], qn: &[Vec3], t: &[Vec3], tn: &[Vec3]) -> Result<(f64, f64)> {
    let nn = nearest_distances(q, t)?;
    let n = q.len() as f64;
    let dist = nn.iter().map(|(_, d)| d).sum::<f64>() / n * CM;
    let cos = nn
        .iter()
        .enumerate()
        .map(|(i, (j, _))| qn[i].dot(&tn[*j]).abs())
        .sum::<f64>()
        / n;
    Ok((dist, cos))
}

/// Chamfer distances in both directions plus normal consistency.
pub fn chamfer(pred: &[Vec3], pred_normals: &[Vec3], truth: &[Vec3], truth_normals: &[Vec3]) -> Result<Chamfer> {
    nonempty("predicted", pred)?;
    nonempty("truth", truth)?;
    crate::error::check_len("predicted normals", pred.len(), pred_normals.len())?;
    crate::error::check_len("truth normals", truth.len(), truth_normals.len())?;
    let (cd_p2s, nc_p) = directional(pred, pred_normals, truth, truth_normals)?;
    let (cd_s2p, nc_s) = directional(truth, truth_normals, pred, pred_normals)?;
    Ok(Chamfer {
        cd_p2s,
        cd_s2p,
        nc: 0.5 * (nc_p + nc_s),
    })
}

/// F-score in percent at threshold `tau_cm`.
pub fn fscore(pred: &[Vec3], truth: &[Vec3], tau_cm: f64) -> Result<f64> {
    nonempty("predicted", pred)?;
    nonempty("truth", truth)?;
    if !(tau_cm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "f-score threshold must be positive, got {tau_cm}"
        )));
    }
    let tau = tau_cm / CM;
    let within = |q: &[Vec3], t: &[Vec3]| -> Result<f64> {
        let hits = nearest_distances(q, t)?.iter().filter(|(_, d)| *d <= tau).count();
        Ok(hits as f64 / q.len() as f64)
    };
    let p = within(pred, truth)?;
    let r = within(truth, pred)?;
    Ok(if p + r > 0.0 { 200.0 * p * r / (p + r) } else { 0.0 })
}

/// Gaussian centers with the axis of smallest extent as normal.
pub fn gaussian_samples(g: &GaussianSet) -> (Vec<Vec3>, Vec<Vec3>) {
    let normals = (0..g.len())
        .map(|i| {
            let s = &g.raw_scale[i];
            let minor = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b))).unwrap();
            g.rotation_matrix(i).column(minor).into_owned()
        })
        .collect();
    (g.centers.clone(), normals)
}
