//! Model persistence.
//!
//! Layout: magic `FABRMODL`, format version u32 LE, header length u64 LE,
//! a UTF-8 `key=value` header block, then binary matrix sections in a fixed
//! order. Each matrix section is `rows u64 LE, cols u64 LE, rows*cols f64
//! LE`. Per member: label means (1 x K), then the solver payload (exact:
//! one `n_m x K` dual weight matrix per grid point; rank-capped: the basis
//! `V`, its eigenvalues, and the projected labels `V^T Y`), then optionally
//! one `P x K` coefficient matrix per grid point.
//!
//! The exact path stores dual weights rather than coefficients because
//! `beta` is `P x K` per grid point and can be huge while blocks are cheap
//! to regenerate; `--store-beta` materializes the coefficients anyway.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use fabr_core::error::{Error, Result};
use fabr_core::feature_gen::{Activation, FeaturePlan};
use fabr_core::ridge_spectral::{EigPairs, ResolventMode, RidgeGrid};

const MAGIC: &[u8; 8] = b"FABRMODL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Full,
    Lowrank { nu: usize },
}

#[derive(Debug, Clone)]
pub enum MemberBody {
    /// Dual weights per grid point, each `n_m x K`.
    Full { q: Vec<Array2<f64>> },
    /// Rank-capped basis (`n_m x r`), eigenvalues in the unnormalized Gram
    /// scale, and projected labels `V^T Y` (`r x K`).
    Lowrank { v: Array2<f64>, d: Vec<f64>, vty: Array2<f64> },
}

#[derive(Debug, Clone)]
pub struct MemberPayload {
    pub label_means: Vec<f64>,
    pub body: MemberBody,
    /// Stacked coefficients per grid point (`P x K`), when materialized.
    pub beta: Option<Vec<Array2<f64>>>,
}

impl MemberPayload {
    pub fn rows(&self) -> usize {
        match &self.body {
            MemberBody::Full { q } => q.first().map_or(0, |m| m.nrows()),
            MemberBody::Lowrank { v, .. } => v.nrows(),
        }
    }

    /// Dual weights per grid point; the rank-capped payload reconstructs
    /// them through the same projection arithmetic the fit used.
    pub fn dual_weights(&self, grid: &RidgeGrid) -> Result<Vec<Array2<f64>>> {
        match &self.body {
            MemberBody::Full { q } => Ok(q.clone()),
            MemberBody::Lowrank { v, d, vty } => {
                let n = v.nrows();
                let eig = EigPairs {
                    vectors: v.clone(),
                    values: d.iter().map(|&x| x / n as f64).collect(),
                };
                fabr_core::ridge_spectral::multi_z_from_projection(&eig, vty.view(), grid, n)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub solver: SolverKind,
    pub mode: ResolventMode,
    pub demean: bool,
    pub n_train: usize,
    pub num_classes: usize,
    /// Rows per ensemble batch; equals `n_train` for a single-member model.
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub checkpoints: Vec<usize>,
    pub plan: FeaturePlan,
    pub grid: RidgeGrid,
    pub members: Vec<MemberPayload>,
}

impl ModelFile {
    pub fn store_beta(&self) -> bool {
        self.members.iter().all(|m| m.beta.is_some())
    }
}

fn fmt_f64_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn fmt_usize_list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn header_text(m: &ModelFile) -> String {
    let mut s = String::new();
    let (solver, nu) = match m.solver {
        SolverKind::Full => ("full", 0),
        SolverKind::Lowrank { nu } => ("lowrank", nu),
    };
    s.push_str(&format!("solver={solver}\n"));
    s.push_str(&format!("nu={nu}\n"));
    let mode = match m.mode {
        ResolventMode::Exact => "exact",
        ResolventMode::Annihilate => "annihilate",
    };
    s.push_str(&format!("mode={mode}\n"));
    s.push_str(&format!("demean={}\n", m.demean));
    s.push_str(&format!("n_train={}\n", m.n_train));
    s.push_str(&format!("num_classes={}\n", m.num_classes));
    s.push_str(&format!("batch_size={}\n", m.batch_size));
    s.push_str(&format!("shuffle_seed={}\n", m.shuffle_seed));
    s.push_str(&format!("members={}\n", m.members.len()));
    s.push_str(&format!("store_beta={}\n", m.store_beta()));
    s.push_str(&format!("checkpoints={}\n", fmt_usize_list(&m.checkpoints)));
    s.push_str(&format!("master_seed={}\n", m.plan.master_seed));
    s.push_str(&format!("p={}\n", m.plan.total_features));
    s.push_str(&format!("p1={}\n", m.plan.block_width));
    s.push_str(&format!("activation={}\n", m.plan.activation));
    s.push_str(&format!("weight_scale={}\n", m.plan.weight_scale));
    s.push_str(&format!("input_dim={}\n", m.plan.input_dim));
    s.push_str(&format!("z={}\n", fmt_f64_list(m.grid.values())));
    s
}

fn write_matrix(w: &mut impl Write, m: &Array2<f64>) -> std::io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(m: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let header = header_text(m);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    let io_err = |e: std::io::Error| Error::io(path, e);
    for member in &m.members {
        let means = Array2::from_shape_vec((1, member.label_means.len()), member.label_means.clone())
            .expect("shape");
        write_matrix(&mut buf, &means).map_err(io_err)?;
        match &member.body {
            MemberBody::Full { q } => {
                if q.len() != m.grid.len() {
                    return Err(Error::Data("dual weight count does not match the grid".into()));
                }
                for qz in q {
                    write_matrix(&mut buf, qz).map_err(io_err)?;
                }
            }
            MemberBody::Lowrank { v, d, vty } => {
                write_matrix(&mut buf, v).map_err(io_err)?;
                let d_row = Array2::from_shape_vec((1, d.len()), d.clone()).expect("shape");
                write_matrix(&mut buf, &d_row).map_err(io_err)?;
                write_matrix(&mut buf, vty).map_err(io_err)?;
            }
        }
        if let Some(betas) = &member.beta {
            if betas.len() != m.grid.len() {
                return Err(Error::Data("beta count does not match the grid".into()));
            }
            for b in betas {
                write_matrix(&mut buf, b).map_err(io_err)?;
            }
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("model file truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix too large".into()))?;
        let body = self.take(count * 8)?;
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Format(format!("bad matrix section: {e}")))
    }
}

fn parse_header(text: &str) -> Result<std::collections::HashMap<&str, &str>> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line '{line}'")))?;
        map.insert(key, value);
    }
    Ok(map)
}

fn header_get<'a>(map: &std::collections::HashMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    map.get(key)
        .copied()
        .ok_or_else(|| Error::Format(format!("model header is missing '{key}'")))
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse header value {key}='{s}'")))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let header_len = r.u64()? as usize;
    let header_bytes = r.take(header_len)?;
    let header_text = std::str::from_utf8(header_bytes)
        .map_err(|_| Error::Format("model header is not utf-8".into()))?;
    let map = parse_header(header_text)?;

    let nu: usize = parse_num(header_get(&map, "nu")?, "nu")?;
    let solver = match header_get(&map, "solver")? {
        "full" => SolverKind::Full,
        "lowrank" => SolverKind::Lowrank { nu },
        other => return Err(Error::Format(format!("unknown solver kind '{other}'"))),
    };
    let mode = match header_get(&map, "mode")? {
        "exact" => ResolventMode::Exact,
        "annihilate" => ResolventMode::Annihilate,
        other => return Err(Error::Format(format!("unknown mode '{other}'"))),
    };
    let demean: bool = parse_num(header_get(&map, "demean")?, "demean")?;
    let n_train: usize = parse_num(header_get(&map, "n_train")?, "n_train")?;
    let num_classes: usize = parse_num(header_get(&map, "num_classes")?, "num_classes")?;
    let batch_size: usize = parse_num(header_get(&map, "batch_size")?, "batch_size")?;
    let shuffle_seed: u64 = parse_num(header_get(&map, "shuffle_seed")?, "shuffle_seed")?;
    let member_count: usize = parse_num(header_get(&map, "members")?, "members")?;
    let store_beta: bool = parse_num(header_get(&map, "store_beta")?, "store_beta")?;
    let checkpoints_raw = header_get(&map, "checkpoints")?;
    let checkpoints: Vec<usize> = if checkpoints_raw.is_empty() {
        Vec::new()
    } else {
        checkpoints_raw
            .split(',')
            .map(|s| parse_num(s, "checkpoints"))
            .collect::<Result<_>>()?
    };
    let plan = FeaturePlan {
        master_seed: parse_num(header_get(&map, "master_seed")?, "master_seed")?,
        total_features: parse_num(header_get(&map, "p")?, "p")?,
        block_width: parse_num(header_get(&map, "p1")?, "p1")?,
        activation: header_get(&map, "activation")?.parse::<Activation>()?,
        weight_scale: parse_num(header_get(&map, "weight_scale")?, "weight_scale")?,
        input_dim: parse_num(header_get(&map, "input_dim")?, "input_dim")?,
    };
    let z_values: Vec<f64> = header_get(&map, "z")?
        .split(',')
        .map(|s| parse_num(s, "z"))
        .collect::<Result<_>>()?;
    let grid = RidgeGrid::new(z_values)?;

    let mut members = Vec::with_capacity(member_count);
    for _ in 0..member_count {
        let means_matrix = r.matrix()?;
        if means_matrix.nrows() != 1 {
            return Err(Error::Format("label means must be a single row".into()));
        }
        let label_means: Vec<f64> = means_matrix.row(0).iter().copied().collect();
        let body = match solver {
            SolverKind::Full => {
                let mut q = Vec::with_capacity(grid.len());
                for _ in 0..grid.len() {
                    q.push(r.matrix()?);
                }
                MemberBody::Full { q }
            }
            SolverKind::Lowrank { .. } => {
                let v = r.matrix()?;
                let d_row = r.matrix()?;
                let d: Vec<f64> = d_row.row(0).iter().copied().collect();
                let vty = r.matrix()?;
                MemberBody::Lowrank { v, d, vty }
            }
        };
        let beta = if store_beta {
            let mut betas = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                betas.push(r.matrix()?);
            }
            Some(betas)
        } else {
            None
        };
        members.push(MemberPayload { label_means, body, beta });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    Ok(ModelFile {
        solver,
        mode,
        demean,
        n_train,
        num_classes,
        batch_size,
        shuffle_seed,
        checkpoints,
        plan,
        grid,
        members,
    })
}
