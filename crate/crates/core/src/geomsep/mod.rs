//! Convex sets with Euclidean projection, support evaluation and the
//! minimum-distance (separation) solver, plus the parametric separation
//! problem for signal sets.
//!
//! Every set is compiled to a lifted polyhedron
//! `{M y + b : G y ≤ h, E y = f}` and the geometric queries become small
//! quadratic or linear programs over `y`.

mod signal;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{Matrix, NumError};

pub use signal::{feasibility_sup, opt_kj, opt_kj_generic, rho_for_delta, separator_at, SignalTemplate};
pub use solve::{
    feasible_point, min_distance, min_distance_with, project, support, DistanceMethod, SeparatorCert, SupportAudit,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("set is empty: {0}")]
    Infeasible(String),
    #[error("sets intersect (distance {distance:.3e})")]
    IntersectingSets { distance: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

mod bounds {
    use serde::{Deserialize, Deserializer, Serializer};

    fn ser<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        serde::Serialize::serialize(&opt, s)
    }

    fn de<'de, D: Deserializer<'de>>(d: D, missing: f64) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(missing)).collect())
    }

    /// `null` entries stand for −∞.
    pub mod lower {
        pub fn serialize<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            super::ser(v, s)
        }
        pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            super::de(d, f64::NEG_INFINITY)
        }
    }

    /// `null` entries stand for +∞.
    pub mod upper {
        pub fn serialize<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            super::ser(v, s)
        }
        pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            super::de(d, f64::INFINITY)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSet {
    /// Coordinate bounds; infinite entries are allowed.
    Box {
        #[serde(with = "bounds::lower")]
        lower: Vec<f64>,
        #[serde(with = "bounds::upper")]
        upper: Vec<f64>,
    },
    /// `{x : normals·x ≤ offsets}`
    Halfspaces {
        normals: Matrix,
        offsets: Vec<f64>,
    },
    /// `{map·x + offset : x ∈ base}`
    AffineImage {
        base: Box<ConvexSet>,
        map: Matrix,
        offset: Vec<f64>,
    },
    Singleton {
        point: Vec<f64>,
    },
    /// `{c·direction : min_scale ≤ c ≤ max_scale}`
    RayGenerated {
        direction: Vec<f64>,
        min_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_scale: Option<f64>,
    },
    /// `{v + ρw : v ∈ drag, w ∈ shape, v + ρw ∈ cap}`
    SignalSet {
        drag: Box<ConvexSet>,
        shape: Box<ConvexSet>,
        rho: f64,
        cap: Box<ConvexSet>,
    },
    /// Closed convex hull of the members.
    ConvexHull {
        members: Vec<ConvexSet>,
    },
}

/// `{map·y + offset : g·y ≤ h, e·y = f}`
#[derive(Clone, Debug)]
pub(crate) struct Lifted {
    pub map: Matrix,
    pub offset: Vec<f64>,
    pub g: Matrix,
    pub h: Vec<f64>,
    pub e: Matrix,
    pub f: Vec<f64>,
}

impl Lifted {
    fn identity(n: usize) -> Self {
        Self {
            map: Matrix::identity(n),
            offset: vec![0.0; n],
            g: Matrix::zeros(0, n),
            h: vec![],
            e: Matrix::zeros(0, n),
            f: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.map.rows()
    }

    pub fn vars(&self) -> usize {
        self.map.cols()
    }

    pub fn point(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.map.matvec(y);
        for (xi, bi) in x.iter_mut().zip(&self.offset) {
            *xi += bi;
        }
        x
    }

    /// Largest constraint violation at `y`.
    pub fn violation(&self, y: &[f64]) -> f64 {
        let gy = self.g.matvec(y);
        let ey = self.e.matvec(y);
        let ineq = gy.iter().zip(&self.h).map(|(a, b)| (a - b).max(0.0)).fold(0.0, f64::max);
        let eq = ey.iter().zip(&self.f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ineq.max(eq)
    }

    pub fn constraint_scale(&self) -> f64 {
        1.0 + crate::numkit::matrix::max_abs(&self.h).max(crate::numkit::matrix::max_abs(&self.f))
    }

    /// Whether the set is given directly by inequalities on `x`.
    fn is_plain_polyhedron(&self) -> bool {
        self.vars() == self.dim()
            && self.e.rows() == 0
            && self.offset.iter().all(|v| *v == 0.0)
            && self.map == Matrix::identity(self.dim())
    }
}

/// Block-diagonal placement of `a` and `b`.
pub(crate) fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows() + b.rows(), a.cols() + b.cols());
    out.set_block(0, 0, a);
    out.set_block(a.rows(), a.cols(), b);
    out
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

impl ConvexSet {
    pub fn singleton(point: Vec<f64>) -> Self {
        ConvexSet::Singleton { point }
    }

    pub fn origin(n: usize) -> Self {
        ConvexSet::Singleton { point: vec![0.0; n] }
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        ConvexSet::Box { lower: vec![lo; n], upper: vec![hi; n] }
    }

    pub fn image(self, map: Matrix) -> Self {
        let offset = vec![0.0; map.rows()];
        ConvexSet::AffineImage { base: Box::new(self), map, offset }
    }

    /// Ambient dimension.
    pub fn dim(&self) -> Result<usize, GeomError> {
        Ok(self.lift()?.dim())
    }

    /// Whether the set is the single point 0.
    pub fn is_origin(&self) -> bool {
        matches!(self, ConvexSet::Singleton { point } if point.iter().all(|v| *v == 0.0))
    }

    pub(crate) fn lift(&self) -> Result<Lifted, GeomError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                let n = lower.len();
                if upper.len() != n {
                    return Err(GeomError::Dimension("box bounds differ in length".into()));
                }
                if lower.iter().chain(upper).any(|v| v.is_nan()) {
                    return Err(GeomError::Numeric(NumError::NonFinite));
                }
                let mut rows = Vec::new();
                let mut h = Vec::new();
                for i in 0..n {
                    if upper[i].is_finite() {
                        let mut r = vec![0.0; n];
                        r[i] = 1.0;
                        rows.push(r);
                        h.push(upper[i]);
                    }
                    if lower[i].is_finite() {
                        let mut r = vec![0.0; n];
                        r[i] = -1.0;
                        rows.push(r);
                        h.push(-lower[i]);
                    }
                }
                let mut l = Lifted::identity(n);
                l.g = if rows.is_empty() { Matrix::zeros(0, n) } else { Matrix::from_rows(&rows)? };
                l.h = h;
                Ok(l)
            }
            ConvexSet::Halfspaces { normals, offsets } => {
                if normals.rows() != offsets.len() {
                    return Err(GeomError::Dimension("one offset per normal".into()));
                }
                let mut l = Lifted::identity(normals.cols());
                l.g = normals.clone();
                l.h = offsets.clone();
                Ok(l)
            }
            ConvexSet::AffineImage { base, map, offset } => {
                let b = base.lift()?;
                if map.cols() != b.dim() || offset.len() != map.rows() {
                    return Err(GeomError::Dimension(format!(
                        "map {}x{} over a set in dimension {} with offset of length {}",
                        map.rows(),
                        map.cols(),
                        b.dim(),
                        offset.len()
                    )));
                }
                let mut off = map.matvec(&b.offset);
                for (o, v) in off.iter_mut().zip(offset) {
                    *o += v;
                }
                Ok(Lifted { map: map.matmul(&b.map), offset: off, ..b })
            }
            ConvexSet::Singleton { point } => Ok(Lifted {
                map: Matrix::zeros(point.len(), 0),
                offset: point.clone(),
                g: Matrix::zeros(0, 0),
                h: vec![],
                e: Matrix::zeros(0, 0),
                f: vec![],
            }),
            ConvexSet::RayGenerated { direction, min_scale, max_scale } => {
                let mut g = vec![vec![-1.0]];
                let mut h = vec![-min_scale];
                if let Some(m) = max_scale {
                    if m < min_scale {
                        return Err(GeomError::Infeasible("ray scale range is empty".into()));
                    }
                    g.push(vec![1.0]);
                    h.push(*m);
                }
                Ok(Lifted {
                    map: Matrix::column(direction),
                    offset: vec![0.0; direction.len()],
                    g: Matrix::from_rows(&g)?,
                    h,
                    e: Matrix::zeros(0, 1),
                    f: vec![],
                })
            }
            ConvexSet::SignalSet { drag, shape, rho, cap } => {
                let (d, s, c) = (drag.lift()?, shape.lift()?, cap.lift()?);
                let n = d.dim();
                if s.dim() != n || c.dim() != n {
                    return Err(GeomError::Dimension("drag, shape and cap must share a dimension".into()));
                }
                let map = d.map.hstack(&s.map.scale(*rho));
                let offset: Vec<f64> = d.offset.iter().zip(&s.offset).map(|(a, b)| a + rho * b).collect();
                let mut g = block_diag(&d.g, &s.g);
                let mut h = concat(&d.h, &s.h);
                let mut e = block_diag(&d.e, &s.e);
                let mut f = concat(&d.f, &s.f);
                if c.is_plain_polyhedron() {
                    g = g.vstack(&c.g.matmul(&map));
                    let shift = c.g.matvec(&offset);
                    h.extend(c.h.iter().zip(&shift).map(|(a, b)| a - b));
                    return Ok(Lifted { map, offset, g, h, e, f });
                }
                // General cap: extra variables with map·y + offset = cap point.
                let pc = c.vars();
                let full_map = map.hstack(&Matrix::zeros(n, pc));
                let coupling = map.hstack(&c.map.scale(-1.0));
                g = block_diag(&g, &c.g);
                h.extend_from_slice(&c.h);
                e = block_diag(&e, &c.e).vstack(&coupling);
                f.extend_from_slice(&c.f);
                f.extend(c.offset.iter().zip(&offset).map(|(a, b)| a - b));
                Ok(Lifted { map: full_map, offset, g, h, e, f })
            }
            ConvexSet::ConvexHull { members } => {
                if members.is_empty() {
                    return Err(GeomError::Infeasible("hull of no sets".into()));
                }
                let lifted: Vec<Lifted> = members.iter().map(ConvexSet::lift).collect::<Result<_, _>>()?;
                let n = lifted[0].dim();
                if lifted.iter().any(|l| l.dim() != n) {
                    return Err(GeomError::Dimension("hull members differ in dimension".into()));
                }
                let total: usize = lifted.iter().map(|l| l.vars() + 1).sum();
                let nq: usize = lifted.iter().map(|l| l.g.rows() + 1).sum();
                let ne: usize = lifted.iter().map(|l| l.e.rows()).sum::<usize>() + 1;
                let mut map = Matrix::zeros(n, total);
                let mut g = Matrix::zeros(nq, total);
                let mut e = Matrix::zeros(ne, total);
                let mut f = vec![0.0; ne];
                let (mut col, mut gr, mut er) = (0, 0, 0);
                for l in &lifted {
                    let p = l.vars();
                    let t = col + p;
                    map.set_block(0, col, &l.map);
                    map.set_col(t, &l.offset);
                    g.set_block(gr, col, &l.g);
                    for (i, hv) in l.h.iter().enumerate() {
                        g[(gr + i, t)] = -hv;
                    }
                    g[(gr + l.g.rows(), t)] = -1.0;
                    gr += l.g.rows() + 1;
                    e.set_block(er, col, &l.e);
                    for (i, fv) in l.f.iter().enumerate() {
                        e[(er + i, t)] = -fv;
                    }
                    er += l.e.rows();
                    e[(ne - 1, t)] = 1.0;
                    col += p + 1;
                }
                f[ne - 1] = 1.0;
                Ok(Lifted { map, offset: vec![0.0; n], g, h: vec![0.0; nq], e, f })
            }
        }
    }
}
