//! Reference solutions, named validation cases and benchmark harnesses.

pub mod cases;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{FloodError, Result};
use crate::grid::Terrain;

pub use cases::{run_case, CaseOptions, CASE_NAMES};
pub use oracle::{exact_riemann_flux, exact_riemann_sample, ritter_solution, RiemannState};

/// One measured quantity with the bound it is checked against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`; empty for informational values.
    pub op: String,
    pub threshold: f64,
}

impl Metric {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            op: "<=".into(),
            threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            op: ">=".into(),
            threshold,
        }
    }

    pub fn info(name: &str, value: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            op: String::new(),
            threshold: f64::NAN,
        }
    }

    pub fn passed(&self) -> bool {
        match self.op.as_str() {
            "<=" => self.value <= self.threshold,
            ">=" => self.value >= self.threshold,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub case: String,
    pub metrics: Vec<Metric>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(case: &str, metrics: Vec<Metric>) -> Self {
        let passed = metrics.iter().all(Metric::passed);
        ValidationReport {
            case: case.into(),
            metrics,
            passed,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// Human-readable report, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("case {}: {}\n", self.case, if self.passed { "PASS" } else { "FAIL" });
        for m in &self.metrics {
            if m.op.is_empty() {
                out.push_str(&format!("  {:<28} {:.6e}\n", m.name, m.value));
            } else {
                out.push_str(&format!(
                    "  {:<28} {:.6e}  ({} {:e}) {}\n",
                    m.name,
                    m.value,
                    m.op,
                    m.threshold,
                    if m.passed() { "ok" } else { "FAILED" }
                ));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,metric,value,op,threshold,passed\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{:e},{},{},{}\n",
                self.case,
                m.name,
                m.value,
                m.op,
                if m.threshold.is_nan() { String::new() } else { format!("{:e}", m.threshold) },
                m.passed()
            ));
        }
        out
    }
}

/// Smooth random bed: a sum of ten cosines with random direction,
/// wavelength and phase, scaled so that `|b| <= amplitude`.
pub fn seeded_bathymetry(nx: usize, ny: usize, h: f64, seed: u64, amplitude: f64) -> Result<Terrain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = (nx.max(ny) as f64) * h;
    let modes: Vec<(f64, f64, f64, f64)> = (0..10)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let wavelength = extent * rng.gen_range(0.15..1.0);
            let k = std::f64::consts::TAU / wavelength;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let weight = rng.gen_range(0.5..1.0);
            (k * angle.cos(), k * angle.sin(), phase, weight)
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m.3).sum();
    Terrain::from_fn(nx, ny, h, |x, y| {
        amplitude / norm * modes.iter().map(|&(kx, ky, p, w)| w * (kx * x + ky * y + p).cos()).sum::<f64>()
    })
}

/// Mean over 2x2 cells.
pub fn restrict_2x2(field: &[f64], nx: usize, ny: usize) -> Result<Vec<f64>> {
    if !nx.is_multiple_of(2) || !ny.is_multiple_of(2) || field.len() != nx * ny {
        return Err(FloodError::config(format!("cannot restrict a {nx}x{ny} field by 2")));
    }
    let (cx, cy) = (nx / 2, ny / 2);
    let mut out = vec![0.0; cx * cy];
    for j in 0..cy {
        for i in 0..cx {
            let a = 2 * i + 2 * j * nx;
            out[i + j * cx] = 0.25 * (field[a] + field[a + 1] + field[a + nx] + field[a + nx + 1]);
        }
    }
    Ok(out)
}

/// Cell-area weighted L1 distance.
pub fn l1_distance(a: &[f64], b: &[f64], cell_area: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * cell_area
}

/// Observed order from solutions on `N`, `2N`, `4N` grids (`N x N` cells,
/// each array on its own grid) of a domain with side `extent`.
pub fn self_convergence_order(coarse: &[f64], mid: &[f64], fine: &[f64], n: usize, extent: f64) -> Result<f64> {
    let mid_on_coarse = restrict_2x2(mid, 2 * n, 2 * n)?;
    let fine_on_mid = restrict_2x2(fine, 4 * n, 4 * n)?;
    let e1 = l1_distance(coarse, &mid_on_coarse, (extent / n as f64).powi(2));
    let e2 = l1_distance(mid, &fine_on_mid, (extent / (2 * n) as f64).powi(2));
    Ok((e1 / e2).log2())
}
