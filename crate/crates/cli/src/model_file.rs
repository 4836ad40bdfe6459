//! JSON model files.
//!
//! Matrices are nested arrays of rows. Generators follow the column-sum-zero
//! convention, so `C[i][j]` is the rate from driver state `j` to `i`. Cost
//! matrices `L`, `Phi` and the value matrix `V` are `n × r` with entry
//! `[x][z]`.

use cascade_mdp::bellman::CostMatrix;
use cascade_mdp::model::check_admissible;
use cascade_mdp::zoo::ZooEntry;
use cascade_mdp::{CascadeModel, CostSpec, Generator, Psi};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub r: usize,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    #[serde(rename = "Phi", default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Rows>,
    /// `zero`, `quad` or `custom`; the last means `Σ_j (u_j + ½)²`.
    #[serde(default = "default_psi")]
    pub psi: String,
    #[serde(default)]
    pub alpha: f64,
}

fn default_psi() -> String {
    "zero".into()
}

#[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default)]
    pub self_financing: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub dims: Dims,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "A0")]
    pub a0: Rows,
    #[serde(rename = "A")]
    pub a: Vec<Rows>,
    /// `B[j][z]`; may be omitted when `p = 0`.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<Rows>>>,
    pub bounds: Vec<[f64; 2]>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSection>,
    #[serde(default)]
    pub flags: Flags,
}

/// `Σ_j (u_j + ½)²`, the shifted quadratic transaction cost.
pub fn shifted_quadratic() -> Psi {
    Psi::custom(|u| u.iter().map(|v| (v + 0.5) * (v + 0.5)).sum())
}

pub fn parse_psi(kind: &str) -> Result<Psi, CliError> {
    match kind {
        "zero" => Ok(Psi::Zero),
        "quad" | "quadratic" => Ok(Psi::Quadratic),
        "custom" => Ok(shifted_quadratic()),
        other => Err(CliError::Parse(format!("unknown psi kind '{other}' (expected zero, quad or custom)"))),
    }
}

fn psi_name(psi: &Psi) -> &'static str {
    match psi {
        Psi::Zero => "zero",
        Psi::Quadratic => "quad",
        Psi::Custom { .. } => "custom",
    }
}

fn matrix(rows: &Rows, nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != nrows {
        return Err(CliError::Parse(format!("{name}: expected {nrows} rows, found {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CliError::Parse(format!("{name}: row {i} has {} entries, expected {ncols}", row.len())));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// First column of a would-be generator that breaks the zero-sum or sign rules.
fn generator_column_fault(m: &DMatrix<f64>) -> Option<(usize, String)> {
    let tol = 1e-12 * (1.0 + m.amax());
    for j in 0..m.ncols() {
        let sum: f64 = m.column(j).iter().sum();
        if !sum.is_finite() || sum.abs() > tol {
            return Some((j, format!("column sums to {sum}")));
        }
        if let Some(i) = (0..m.nrows()).find(|&i| i != j && m[(i, j)] < -tol) {
            return Some((j, format!("negative rate {} in row {i}", m[(i, j)])));
        }
    }
    None
}

/// Parses model file text into a checked model with its cost.
pub fn parse_model(text: &str) -> Result<ZooEntry, CliError> {
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| CliError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
    from_file(file)
}

fn from_file(file: ModelFile) -> Result<ZooEntry, CliError> {
    let Dims { r, n, p } = file.dims;
    if r == 0 || n == 0 {
        return Err(CliError::Parse("dims: r and n must be positive".into()));
    }
    let c = matrix(&file.c, r, r, "C")?;
    let a0 = matrix(&file.a0, n, n, "A0")?;
    if file.a.len() != r {
        return Err(CliError::Parse(format!("A: expected {r} matrices, found {}", file.a.len())));
    }
    let a = file.a.iter().enumerate().map(|(z, m)| matrix(m, n, n, &format!("A[{z}]"))).collect::<Result<Vec<_>, _>>()?;
    let b_rows = match file.b {
        Some(b) => b,
        None if p == 0 => Vec::new(),
        None => return Err(CliError::Parse(format!("missing B section for p = {p} controls"))),
    };
    if b_rows.len() != p {
        return Err(CliError::Parse(format!("B: expected {p} controls, found {}", b_rows.len())));
    }
    let mut b = Vec::with_capacity(p);
    for (j, bj) in b_rows.iter().enumerate() {
        if bj.len() != r {
            return Err(CliError::Parse(format!("B[{j}]: expected {r} matrices, found {}", bj.len())));
        }
        b.push(bj.iter().enumerate().map(|(z, m)| matrix(m, n, n, &format!("B[{j}][{z}]"))).collect::<Result<Vec<_>, _>>()?);
    }
    if file.bounds.len() != p {
        return Err(CliError::Parse(format!("bounds: expected {p} intervals, found {}", file.bounds.len())));
    }
    let bounds: Vec<(f64, f64)> = file.bounds.iter().map(|&[lo, hi]| (lo, hi)).collect();
    let v = file.v.as_ref().map(|m| matrix(m, n, r, "V")).transpose()?;

    if let Some((col, detail)) = generator_column_fault(&c) {
        return Err(CliError::Admissibility(format!("C column {col}: {detail}")));
    }
    let c = Generator::with_tolerance(c, 1e-12 * (1.0 + file.c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))))
        .map_err(|e| CliError::Admissibility(format!("C: {e}")))?;
    let model = CascadeModel::new(c, a0, a, b, bounds).map_err(|e| CliError::Parse(e.to_string()))?;
    if let Some(v) = check_admissible(&model).first() {
        return Err(CliError::Admissibility(v.to_string()));
    }

    let cost = match file.cost {
        None => CostSpec::zero(n, r),
        Some(cs) => {
            let l = cs.l.as_ref().map(|m| matrix(m, n, r, "cost.L")).transpose()?.unwrap_or_else(|| DMatrix::zeros(n, r));
            let phi = cs.phi.as_ref().map(|m| matrix(m, n, r, "cost.Phi")).transpose()?.unwrap_or_else(|| DMatrix::zeros(n, r));
            if !(cs.alpha >= 0.0) {
                return Err(CliError::Parse(format!("cost.alpha must be nonnegative, got {}", cs.alpha)));
            }
            CostSpec::terminal(phi)
                .with_running(CostMatrix::Constant(l))
                .with_psi(parse_psi(&cs.psi)?)
                .with_alpha(cs.alpha)
        }
    };
    let self_financing = file.flags.self_financing;
    if self_financing {
        let v = v.as_ref().ok_or_else(|| CliError::Parse("self_financing needs a V section".into()))?;
        if let Some((z, from, to)) = cascade_mdp::zoo::value_jumps(&model, v).first() {
            return Err(CliError::Admissibility(format!("move {from} -> {to} under z = {z} changes the value")));
        }
    }
    Ok(ZooEntry { name: file.name, description: file.description, model, v, self_financing, cost })
}

/// Model file text for an entry. Time-varying running costs are sampled at `t = 0`.
pub fn export_model(entry: &ZooEntry) -> String {
    let m = &entry.model;
    let (r, p) = (m.r(), m.p());
    let cost = &entry.cost;
    let file = ModelFile {
        name: entry.name.clone(),
        description: entry.description.clone(),
        dims: Dims { r, n: m.n(), p },
        c: rows(m.c().matrix()),
        a0: rows(m.a0()),
        a: (0..r).map(|z| rows(m.a(z))).collect(),
        b: Some((0..p).map(|j| (0..r).map(|z| rows(m.b(j, z))).collect()).collect()),
        bounds: m.bounds().iter().map(|&(lo, hi)| [lo, hi]).collect(),
        v: entry.v.as_ref().map(rows),
        cost: Some(CostSection {
            l: Some(rows(&cost.l.at(0.0))),
            phi: Some(rows(&cost.phi)),
            psi: psi_name(&cost.psi).into(),
            alpha: cost.alpha,
        }),
        flags: Flags { self_financing: entry.self_financing },
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model files serialize");
    text.push('\n');
    text
}
