//! Least-squares fit of `log d` against `log ε`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// `(ε, d(ε))` in the order supplied.
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Discretization or sampling floor below which distances are not used.
    pub floor: f64,
    /// Reference exponent to compare against, when one is known.
    pub theta_report: Option<f64>,
}

/// Fits `log d = slope · log ε + intercept` over the pairs with
/// `d > 10 · floor`; needs at least three of them.
pub fn fit_rate(pairs: &[(f64, f64)], floor: f64) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(e, d)| e > 0.0 && d.is_finite() && d > 10.0 * floor && d > 0.0)
        .map(|(e, d)| (e.ln(), d.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::TooFewPoints(usable.len()));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        r_squared,
        floor,
        theta_report: None,
    })
}

/// One row of a rate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub eps: f64,
    pub distance: f64,
    pub norm_kind: String,
    pub mesh_h: f64,
    /// `ok`, `below_floor`, `discretization_dominated`, `incomplete`.
    pub flag: String,
    pub theta_report: Option<f64>,
}

/// Rows of a sweep plus the fit over them (absent when fewer than three
/// usable points).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub fit: Option<RateFit>,
    pub floor: f64,
}

impl RateTable {
    /// Builds rows and the fit from `(ε, d)` pairs; rows at or below
    /// `10 · floor` are flagged `below_floor`.
    pub fn from_pairs(pairs: &[(f64, f64)], norm_kind: &str, mesh_h: f64, floor: f64) -> Self {
        let rows = pairs
            .iter()
            .map(|&(eps, distance)| RateRow {
                eps,
                distance,
                norm_kind: norm_kind.to_string(),
                mesh_h,
                flag: if distance > 10.0 * floor { "ok" } else { "below_floor" }.to_string(),
                theta_report: None,
            })
            .collect();
        Self {
            rows,
            fit: fit_rate(pairs, floor).ok(),
            floor,
        }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.eps, r.distance)).collect()
    }

    pub fn flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flag == "discretization_dominated" || r.flag == "incomplete")
    }

    /// CSV with header `eps,distance,norm_kind,mesh_h,flag,slope,r_squared,floor`
    /// and, when `with_theta`, a trailing `theta_report` column. The fit
    /// columns repeat on every row and stay empty when no fit exists.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, with_theta: bool) -> std::io::Result<()> {
        write!(w, "eps,distance,norm_kind,mesh_h,flag,slope,r_squared,floor")?;
        if with_theta {
            write!(w, ",theta_report")?;
        }
        writeln!(w)?;
        let fit = match &self.fit {
            Some(f) => format!("{:.6},{:.6}", f.slope, f.r_squared),
            None => ",".to_string(),
        };
        for r in &self.rows {
            write!(w, "{:e},{:e},{},{:e},{},{},{:e}", r.eps, r.distance, r.norm_kind, r.mesh_h, r.flag, fit, self.floor)?;
            if with_theta {
                match r.theta_report {
                    Some(t) => write!(w, ",{t:e}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

impl RateFit {
    /// Distances strictly decrease as ε decreases (pairs sorted by ε
    /// descending).
    pub fn strictly_decreasing(&self) -> bool {
        let mut p = self.pairs.clone();
        p.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        p.windows(2).all(|w| w[1].1 < w[0].1)
    }
}
