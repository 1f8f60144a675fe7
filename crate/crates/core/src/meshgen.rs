//! Structured box meshes of hexahedral spectral elements.
//!
//! Every element carries a tensor-product lattice of `(p+1)^3` Gauss-Lobatto
//! points. Global node identifiers come from the structured lattice: the node
//! at global lattice coordinate `(I, J, K)`, with `I = ex*p + lx`, has id
//! `I + n*(J + n*K)` where `n = E*p + 1`. Nodes on shared element faces
//! therefore receive the same id without any floating-point matching.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GLL_TOL: f64 = 1e-14;
const GLL_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub elements_per_axis: usize,
    pub poly_order: usize,
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
}

impl MeshConfig {
    /// Unit cube `[0,1]^3` with `elements` elements per axis.
    pub fn unit_cube(elements: usize, order: usize) -> Self {
        Self {
            elements_per_axis: elements,
            poly_order: order,
            domain_min: [0.0; 3],
            domain_max: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements_per_axis == 0 {
            return Err(Error::InvalidMesh("elements_per_axis must be at least 1".into()));
        }
        if self.poly_order == 0 {
            return Err(Error::InvalidOrder(0));
        }
        for axis in 0..3 {
            let (lo, hi) = (self.domain_min[axis], self.domain_max[axis]);
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidMesh(format!(
                    "domain_max must exceed domain_min on axis {axis} (got {lo} .. {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Points per lattice axis, `E*p + 1`.
    pub fn lattice_size(&self) -> usize {
        self.elements_per_axis * self.poly_order + 1
    }

    pub fn num_elements(&self) -> usize {
        self.elements_per_axis.pow(3)
    }

    pub fn nodes_per_element(&self) -> usize {
        (self.poly_order + 1).pow(3)
    }

    pub fn num_unique_nodes(&self) -> usize {
        self.lattice_size().pow(3)
    }

    /// Largest extent of the domain box, used to scale position tolerances.
    pub fn extent(&self) -> f64 {
        (0..3)
            .map(|a| self.domain_max[a] - self.domain_min[a])
            .fold(0.0, f64::max)
    }
}

/// Gauss-Lobatto-Legendre points on `[-1, 1]` for polynomial order `p`.
///
/// Newton iteration on `(1 - x^2) P'_p(x)` seeded with the Chebyshev-Lobatto
/// points. The result is symmetrized so that `x[k] == -x[p-k]` exactly.
pub fn gll_points(p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::InvalidOrder(p));
    }
    let n = p;
    let mut x: Vec<f64> = (0..=n)
        .map(|k| -(std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    let mut legendre = vec![0.0; n + 1];

    for _ in 0..GLL_MAX_ITERS {
        let mut max_step = 0.0_f64;
        for xi in x.iter_mut() {
            legendre[0] = 1.0;
            if n >= 1 {
                legendre[1] = *xi;
            }
            for k in 2..=n {
                let kf = k as f64;
                legendre[k] =
                    ((2.0 * kf - 1.0) * *xi * legendre[k - 1] - (kf - 1.0) * legendre[k - 2]) / kf;
            }
            let step = (*xi * legendre[n] - legendre[n - 1]) / ((n + 1) as f64 * legendre[n]);
            *xi -= step;
            max_step = max_step.max(step.abs());
        }
        if max_step < GLL_TOL {
            break;
        }
    }

    x.sort_by(|a, b| a.total_cmp(b));
    for k in 0..=n / 2 {
        let m = 0.5 * (x[n - k] - x[k]);
        x[k] = -m;
        x[n - k] = m;
    }
    x[0] = -1.0;
    x[n] = 1.0;
    if n.is_multiple_of(2) {
        x[n / 2] = 0.0;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub config: MeshConfig,
    pub element_origins: Vec<[f64; 3]>,
    pub gll_1d: Vec<f64>,
    /// Flattened per element: `nodes_per_element` entries for element 0, then element 1, ...
    pub node_positions: Vec<[f64; 3]>,
    pub global_ids: Vec<usize>,
    /// Structured `(ex, ey, ez)` of each element.
    pub element_coords: Vec<[usize; 3]>,
    lattice_coords: [Vec<f64>; 3],
}

impl Mesh {
    pub fn num_elements(&self) -> usize {
        self.element_origins.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.config.nodes_per_element()
    }

    pub fn element_global_ids(&self, element: usize) -> &[usize] {
        let n = self.nodes_per_element();
        &self.global_ids[element * n..(element + 1) * n]
    }

    pub fn element_positions(&self, element: usize) -> &[[f64; 3]] {
        let n = self.nodes_per_element();
        &self.node_positions[element * n..(element + 1) * n]
    }

    /// Mesh restricted to `elements`, keeping their global ids and positions.
    pub fn sub_mesh(&self, elements: &[usize]) -> Mesh {
        let mut out = Mesh {
            config: self.config,
            element_origins: Vec::new(),
            gll_1d: self.gll_1d.clone(),
            node_positions: Vec::new(),
            global_ids: Vec::new(),
            element_coords: Vec::new(),
            lattice_coords: self.lattice_coords.clone(),
        };
        for &el in elements {
            out.element_origins.push(self.element_origins[el]);
            out.node_positions.extend_from_slice(self.element_positions(el));
            out.global_ids.extend_from_slice(self.element_global_ids(el));
            out.element_coords.push(self.element_coords[el]);
        }
        out
    }

    /// Global lattice coordinates `(I, J, K)` of a global node id.
    pub fn lattice_of(&self, gid: usize) -> [usize; 3] {
        let n = self.config.lattice_size();
        [gid % n, (gid / n) % n, gid / (n * n)]
    }

    /// Physical position of a global node id.
    pub fn position_of(&self, gid: usize) -> [f64; 3] {
        let l = self.lattice_of(gid);
        [
            self.lattice_coords[0][l[0]],
            self.lattice_coords[1][l[1]],
            self.lattice_coords[2][l[2]],
        ]
    }
}

/// Builds the `E^3` element box mesh described by `config`.
pub fn build_box_mesh(config: MeshConfig) -> Result<Mesh> {
    config.validate()?;
    let e = config.elements_per_axis;
    let p = config.poly_order;
    let gll = gll_points(p)?;
    let n = config.lattice_size();

    // Coordinates are tabulated once per lattice line so that coincident
    // nodes from different elements get bitwise identical positions.
    let lattice_coords: [Vec<f64>; 3] = std::array::from_fn(|axis| {
        let lo = config.domain_min[axis];
        let h = (config.domain_max[axis] - lo) / e as f64;
        (0..n)
            .map(|i| {
                let el = (i / p).min(e - 1);
                let l = i - el * p;
                lo + h * el as f64 + 0.5 * h * (gll[l] + 1.0)
            })
            .collect()
    });

    let npe = config.nodes_per_element();
    let num_el = config.num_elements();
    let mut element_origins = Vec::with_capacity(num_el);
    let mut node_positions = Vec::with_capacity(num_el * npe);
    let mut global_ids = Vec::with_capacity(num_el * npe);
    let mut element_coords = Vec::with_capacity(num_el);
    let h: [f64; 3] =
        std::array::from_fn(|a| (config.domain_max[a] - config.domain_min[a]) / e as f64);

    for ez in 0..e {
        for ey in 0..e {
            for ex in 0..e {
                element_coords.push([ex, ey, ez]);
                element_origins.push([
                    config.domain_min[0] + h[0] * ex as f64,
                    config.domain_min[1] + h[1] * ey as f64,
                    config.domain_min[2] + h[2] * ez as f64,
                ]);
                for lz in 0..=p {
                    for ly in 0..=p {
                        for lx in 0..=p {
                            let (gi, gj, gk) = (ex * p + lx, ey * p + ly, ez * p + lz);
                            global_ids.push(gi + n * (gj + n * gk));
                            node_positions.push([
                                lattice_coords[0][gi],
                                lattice_coords[1][gj],
                                lattice_coords[2][gk],
                            ]);
                        }
                    }
                }
            }
        }
    }

    Ok(Mesh {
        config,
        element_origins,
        gll_1d: gll,
        node_positions,
        global_ids,
        element_coords,
        lattice_coords,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    /// Cut along one axis into `R` slabs.
    Slab { axis: usize },
    /// Cut into `rx * ry * rz` sub-boxes. A zero factor list means "pick the
    /// most cube-like factorization that divides the element count".
    Block { ranks: [usize; 3] },
}

impl PartitionStrategy {
    pub fn slab() -> Self {
        PartitionStrategy::Slab { axis: 0 }
    }

    pub fn block() -> Self {
        PartitionStrategy::Block { ranks: [0; 3] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PartitionStrategy::Slab { .. } => "slab",
            PartitionStrategy::Block { .. } => "block",
        }
    }
}

impl std::str::FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slab" => Ok(Self::slab()),
            "block" => Ok(Self::block()),
            other => {
                // block:2x2x2
                if let Some(spec) = other.strip_prefix("block:") {
                    let f: Vec<usize> = spec
                        .split('x')
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Config(format!("bad block factors `{spec}`")))?;
                    if f.len() == 3 {
                        return Ok(PartitionStrategy::Block { ranks: [f[0], f[1], f[2]] });
                    }
                }
                Err(Error::Config(format!(
                    "unknown partition strategy `{other}` (expected slab, block or block:AxBxC)"
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    pub num_ranks: usize,
    pub element_to_rank: Vec<usize>,
}

impl PartitionMap {
    pub fn elements_of(&self, rank: usize) -> impl Iterator<Item = usize> + '_ {
        self.element_to_rank
            .iter()
            .enumerate()
            .filter(move |(_, &r)| r == rank)
            .map(|(e, _)| e)
    }
}

/// Most cube-like `(rx, ry, rz)` with `rx*ry*rz == ranks` and each factor
/// dividing `elements`. Ties resolve toward larger leading factors.
pub fn block_factors(ranks: usize, elements: usize) -> Option<[usize; 3]> {
    let mut best: Option<([usize; 3], usize)> = None;
    for rx in 1..=ranks {
        if !ranks.is_multiple_of(rx) || !elements.is_multiple_of(rx) {
            continue;
        }
        for ry in 1..=ranks / rx {
            if !(ranks / rx).is_multiple_of(ry) || !elements.is_multiple_of(ry) {
                continue;
            }
            let rz = ranks / rx / ry;
            if !elements.is_multiple_of(rz) || !(rx >= ry && ry >= rz) {
                continue;
            }
            let spread = rx - rz;
            if best.is_none_or(|(_, s)| spread < s) {
                best = Some(([rx, ry, rz], spread));
            }
        }
    }
    best.map(|(f, _)| f)
}

/// Assigns every element of `mesh` to one of `ranks` ranks.
pub fn partition_mesh(mesh: &Mesh, ranks: usize, strategy: PartitionStrategy) -> Result<PartitionMap> {
    let e = mesh.config.elements_per_axis;
    if ranks == 0 {
        return Err(Error::Partition("rank count must be at least 1".into()));
    }
    let element_to_rank = match strategy {
        PartitionStrategy::Slab { axis } => {
            if axis > 2 {
                return Err(Error::Partition(format!("slab axis {axis} out of range")));
            }
            if ranks > e {
                return Err(Error::Partition(format!(
                    "slab strategy needs R <= E along the split axis (R={ranks}, E={e})"
                )));
            }
            if !e.is_multiple_of(ranks) {
                return Err(Error::Partition(format!(
                    "slab strategy needs R to divide E (R={ranks}, E={e})"
                )));
            }
            let per = e / ranks;
            (0..mesh.num_elements())
                .map(|el| mesh.element_coords[el][axis] / per)
                .collect()
        }
        PartitionStrategy::Block { ranks: factors } => {
            let f = if factors == [0; 3] {
                block_factors(ranks, e).ok_or_else(|| {
                    Error::Partition(format!(
                        "block strategy needs R = Rx*Ry*Rz with each factor dividing E (R={ranks}, E={e})"
                    ))
                })?
            } else {
                factors
            };
            if f.iter().product::<usize>() != ranks {
                return Err(Error::Partition(format!(
                    "block factors {}x{}x{} do not multiply to R={ranks}",
                    f[0], f[1], f[2]
                )));
            }
            if let Some(bad) = f.iter().find(|&&k| k == 0 || !e.is_multiple_of(k)) {
                return Err(Error::Partition(format!(
                    "block factor {bad} does not divide E={e}"
                )));
            }
            let sub = [e / f[0], e / f[1], e / f[2]];
            (0..mesh.num_elements())
                .map(|el| {
                    let c = mesh.element_coords[el];
                    let b = [c[0] / sub[0], c[1] / sub[1], c[2] / sub[2]];
                    b[0] + f[0] * (b[1] + f[1] * b[2])
                })
                .collect()
        }
    };
    Ok(PartitionMap {
        num_ranks: ranks,
        element_to_rank,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementRecord {
    origin: [f64; 3],
    global_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshDump {
    config: MeshConfig,
    gll_1d: Vec<f64>,
    elements: Vec<ElementRecord>,
}

pub fn write_mesh_json(mesh: &Mesh, path: impl AsRef<Path>, embed_positions: bool) -> Result<()> {
    let dump = MeshDump {
        config: mesh.config,
        gll_1d: mesh.gll_1d.clone(),
        elements: (0..mesh.num_elements())
            .map(|el| ElementRecord {
                origin: mesh.element_origins[el],
                global_ids: mesh.element_global_ids(el).to_vec(),
                positions: embed_positions.then(|| mesh.element_positions(el).to_vec()),
            })
            .collect(),
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &dump)?;
    Ok(())
}

/// Reads a mesh dump, rebuilding positions from the stored configuration and
/// checking the stored identifiers against the structured lattice.
pub fn read_mesh_json(path: impl AsRef<Path>) -> Result<Mesh> {
    let dump: MeshDump = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let mesh = build_box_mesh(dump.config)?;
    if dump.elements.len() != mesh.num_elements() {
        return Err(Error::Format(format!(
            "mesh dump has {} elements, config implies {}",
            dump.elements.len(),
            mesh.num_elements()
        )));
    }
    for (el, rec) in dump.elements.iter().enumerate() {
        if rec.global_ids != mesh.element_global_ids(el) {
            return Err(Error::Format(format!("global ids of element {el} disagree with lattice")));
        }
    }
    Ok(mesh)
}
