//! Pixel lattices and their stratifications.
//!
//! A [`PixelLattice`] is a 2D or 3D index space stored row-major (the last
//! axis varies fastest) with a class id per pixel and an optional per-pixel
//! payload vector. A [`Stratification`] partitions its pixels into disjoint
//! [`Stratum`]s, each carrying its centroid and a precomputed reflection
//! table used by antithetic sampling.

mod io;

pub use io::{load_lattice, save_lattice, LatticeHeader};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    dim: usize,
    values: Vec<f64>,
}

impl Payload {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.dim..(pixel + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelLattice {
    dims: Vec<usize>,
    num_classes: usize,
    classes: Vec<usize>,
    payload: Option<Payload>,
}

impl PixelLattice {
    pub fn new(dims: Vec<usize>, num_classes: usize, classes: Vec<usize>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::invalid(format!(
                "lattice must be 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "empty lattice: every axis needs at least one pixel",
            ));
        }
        if num_classes == 0 {
            return Err(Error::invalid("number of classes must be at least 1"));
        }
        let len: usize = dims.iter().product();
        if classes.len() != len {
            return Err(Error::invalid(format!(
                "class map has {} entries, lattice has {} pixels",
                classes.len(),
                len
            )));
        }
        if let Some(bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::invalid(format!(
                "class id {bad} out of range for K = {num_classes}"
            )));
        }
        Ok(PixelLattice {
            dims,
            num_classes,
            classes,
            payload: None,
        })
    }

    /// A lattice where every pixel is class 0.
    pub fn uniform(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, 1, vec![0; len])
    }

    pub fn with_payload(mut self, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("payload dimension must be positive"));
        }
        if values.len() != dim * self.len() {
            return Err(Error::invalid(format!(
                "payload has {} values, expected {} x {}",
                values.len(),
                self.len(),
                dim
            )));
        }
        self.payload = Some(Payload { dim, values });
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn class_of(&self, pixel: usize) -> usize {
        self.classes[pixel]
    }

    pub fn payload(&self) -> Option<&Payload> {
        self.payload.as_ref()
    }

    /// Replaces the class map, keeping geometry and payload.
    pub fn with_classes(&self, num_classes: usize, classes: Vec<usize>) -> Result<Self> {
        let mut out = PixelLattice::new(self.dims.clone(), num_classes, classes)?;
        out.payload = self.payload.clone();
        Ok(out)
    }

    pub fn coords(&self, pixel: usize) -> Vec<usize> {
        coords_of(&self.dims, pixel)
    }

    pub fn index_of(&self, coords: &[usize]) -> Option<usize> {
        index_of(&self.dims, coords)
    }

    /// Number of pixels carrying each class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.classes {
            counts[c] += 1;
        }
        counts
    }
}

pub(crate) fn coords_of(dims: &[usize], mut pixel: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        out[axis] = pixel % dims[axis];
        pixel /= dims[axis];
    }
    out
}

pub(crate) fn index_of(dims: &[usize], coords: &[usize]) -> Option<usize> {
    if coords.len() != dims.len() {
        return None;
    }
    let mut idx = 0;
    for (&c, &d) in coords.iter().zip(dims) {
        if c >= d {
            return None;
        }
        idx = idx * d + c;
    }
    Some(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Grid,
    Class,
    GridClass,
    /// Caller-supplied groups.
    Custom,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Scheme::Grid),
            "class" => Ok(Scheme::Class),
            "grid_class" | "grid-class" | "gridxclass" => Ok(Scheme::GridClass),
            other => Err(Error::Parse(format!(
                "unknown stratification scheme `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub id: usize,
    /// Member pixels in ascending linear order.
    pub pixels: Vec<usize>,
    pub center: Vec<f64>,
    pub class_id: Option<usize>,
    /// `reflection[i]` is the partner of `pixels[i]`.
    reflection: Vec<usize>,
    snapped: usize,
}

impl Stratum {
    fn new(id: usize, mut pixels: Vec<usize>, dims: &[usize], class_id: Option<usize>) -> Self {
        pixels.sort_unstable();
        let coords: Vec<Vec<usize>> = pixels.iter().map(|&p| coords_of(dims, p)).collect();
        let mut center = vec![0.0; dims.len()];
        for c in &coords {
            for (acc, &x) in center.iter_mut().zip(c) {
                *acc += x as f64;
            }
        }
        for acc in &mut center {
            *acc /= pixels.len() as f64;
        }

        let mut reflection = Vec::with_capacity(pixels.len());
        let mut snapped = 0;
        for c in &coords {
            let target: Vec<f64> = center
                .iter()
                .zip(c)
                .map(|(&m, &x)| 2.0 * m - x as f64)
                .collect();
            match exact_member(&target, dims, &pixels) {
                Some(p) => reflection.push(p),
                None => {
                    snapped += 1;
                    reflection.push(nearest_member(&target, &coords, &pixels));
                }
            }
        }
        Stratum {
            id,
            pixels,
            center,
            class_id,
            reflection,
            snapped,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }

    /// Position of `pixel` inside `pixels`.
    pub fn position(&self, pixel: usize) -> Option<usize> {
        self.pixels.binary_search(&pixel).ok()
    }

    /// Reflection of `pixel` through the stratum center.
    ///
    /// Returns `2c - p` when that point is a member, otherwise the member
    /// nearest to it in Euclidean distance (lowest linear index on ties).
    pub fn reflect(&self, pixel: usize) -> Result<usize> {
        self.position(pixel)
            .map(|i| self.reflection[i])
            .ok_or_else(|| Error::invalid(format!("pixel {pixel} is not in stratum {}", self.id)))
    }

    /// Reflection of the member at position `i`.
    pub fn reflect_at(&self, i: usize) -> usize {
        self.reflection[i]
    }

    /// Members whose exact reflection fell outside the stratum.
    pub fn snapped_count(&self) -> usize {
        self.snapped
    }
}

fn exact_member(target: &[f64], dims: &[usize], members: &[usize]) -> Option<usize> {
    let mut coords = Vec::with_capacity(target.len());
    for &t in target {
        let r = t.round();
        if (t - r).abs() > 1e-9 || r < 0.0 {
            return None;
        }
        coords.push(r as usize);
    }
    let idx = index_of(dims, &coords)?;
    members.binary_search(&idx).ok().map(|_| idx)
}

fn nearest_member(target: &[f64], coords: &[Vec<usize>], members: &[usize]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    // members are ascending, so strict `<` keeps the lowest index on ties
    for (c, &p) in coords.iter().zip(members) {
        let d: f64 = c
            .iter()
            .zip(target)
            .map(|(&x, &t)| (x as f64 - t) * (x as f64 - t))
            .sum();
        if d < best.0 - 1e-12 {
            best = (d, p);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratification {
    dims: Vec<usize>,
    total: usize,
    strata: Vec<Stratum>,
    scheme: Scheme,
}

impl Stratification {
    /// Builds a stratification from explicit pixel groups, checking that they
    /// are nonempty, disjoint and cover the lattice.
    pub fn from_groups(lattice: &PixelLattice, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; lattice.len()];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::invalid("strata must be nonempty"));
            }
            for &p in g {
                if p >= lattice.len() {
                    return Err(Error::invalid(format!("pixel {p} outside lattice")));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(Error::invalid(format!("pixel {p} appears in two strata")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("strata do not cover the lattice"));
        }
        let strata = groups
            .into_iter()
            .enumerate()
            .map(|(id, g)| Stratum::new(id, g, lattice.dims(), None))
            .collect();
        Ok(Stratification {
            dims: lattice.dims().to_vec(),
            total: lattice.len(),
            strata,
            scheme: Scheme::Custom,
        })
    }

    /// The whole lattice as one stratum.
    pub fn single(lattice: &PixelLattice) -> Self {
        Self::from_groups(lattice, vec![(0..lattice.len()).collect()])
            .expect("a single full group is always a valid partition")
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of pixels in the parent lattice.
    pub fn population(&self) -> usize {
        self.total
    }

    /// `w_m = |P_m| / |P|`.
    pub fn weights(&self) -> Vec<f64> {
        self.strata
            .iter()
            .map(|s| s.len() as f64 / self.total as f64)
            .collect()
    }

    pub fn get(&self, id: usize) -> Option<&Stratum> {
        match self.strata.get(id) {
            Some(s) if s.id == id => Some(s),
            _ => self.strata.iter().find(|s| s.id == id),
        }
    }

    /// Stratum id for every pixel.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.total];
        for s in &self.strata {
            for &p in &s.pixels {
                out[p] = s.id;
            }
        }
        out
    }

    pub fn snapped_count(&self) -> usize {
        self.strata.iter().map(Stratum::snapped_count).sum()
    }

    /// Same strata in a different order; ids are preserved.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.strata.len()).collect::<Vec<_>>() {
            return Err(Error::invalid(
                "order must be a permutation of stratum positions",
            ));
        }
        Ok(Stratification {
            strata: order.iter().map(|&i| self.strata[i].clone()).collect(),
            ..self.clone()
        })
    }
}

fn validate_cells(lattice: &PixelLattice, cell_shape: &[usize]) -> Result<()> {
    if lattice.is_empty() {
        return Err(Error::invalid("empty lattice"));
    }
    if cell_shape.len() != lattice.ndim() {
        return Err(Error::invalid(format!(
            "cell shape has {} axes, lattice has {}",
            cell_shape.len(),
            lattice.ndim()
        )));
    }
    for (&c, &d) in cell_shape.iter().zip(lattice.dims()) {
        if c == 0 || c > d {
            return Err(Error::invalid(format!(
                "cell extent {c} must be in 1..={d}"
            )));
        }
    }
    Ok(())
}

/// Grid cell index (row-major over cells) of every pixel, plus the number of cells.
fn cell_assignment(lattice: &PixelLattice, cell_shape: &[usize]) -> (Vec<usize>, usize) {
    let cells_per_axis: Vec<usize> = lattice
        .dims()
        .iter()
        .zip(cell_shape)
        .map(|(&d, &c)| d.div_ceil(c))
        .collect();
    let n_cells = cells_per_axis.iter().product();
    let cells = (0..lattice.len())
        .map(|p| {
            let coords = lattice.coords(p);
            coords
                .iter()
                .zip(cell_shape)
                .zip(&cells_per_axis)
                .fold(0, |acc, ((&x, &c), &n)| acc * n + x / c)
        })
        .collect();
    (cells, n_cells)
}

/// Axis-aligned grid cells; boundary cells may be smaller than `cell_shape`.
pub fn build_grid_stratification(
    lattice: &PixelLattice,
    cell_shape: &[usize],
) -> Result<Stratification> {
    validate_cells(lattice, cell_shape)?;
    let (cells, n_cells) = cell_assignment(lattice, cell_shape);
    let mut groups = vec![Vec::new(); n_cells];
    for (p, &c) in cells.iter().enumerate() {
        groups[c].push(p);
    }
    let strata = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .enumerate()
        .map(|(id, g)| Stratum::new(id, g, lattice.dims(), None))
        .collect();
    Ok(Stratification {
        dims: lattice.dims().to_vec(),
        total: lattice.len(),
        strata,
        scheme: Scheme::Grid,
    })
}

/// Nonempty intersections of grid cells with class regions, ordered by cell
/// then class.
pub fn build_class_grid_stratification(
    lattice: &PixelLattice,
    cell_shape: &[usize],
) -> Result<Stratification> {
    validate_cells(lattice, cell_shape)?;
    let (cells, n_cells) = cell_assignment(lattice, cell_shape);
    let k = lattice.num_classes();
    let mut groups = vec![Vec::new(); n_cells * k];
    for (p, &c) in cells.iter().enumerate() {
        groups[c * k + lattice.class_of(p)].push(p);
    }
    let strata = groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .enumerate()
        .map(|(id, (slot, g))| Stratum::new(id, g, lattice.dims(), Some(slot % k)))
        .collect();
    Ok(Stratification {
        dims: lattice.dims().to_vec(),
        total: lattice.len(),
        strata,
        scheme: Scheme::GridClass,
    })
}

/// One stratum per class present in the lattice.
pub fn build_class_stratification(lattice: &PixelLattice) -> Result<Stratification> {
    if lattice.is_empty() {
        return Err(Error::invalid("empty lattice"));
    }
    let mut groups = vec![Vec::new(); lattice.num_classes()];
    for (p, &c) in lattice.classes().iter().enumerate() {
        groups[c].push(p);
    }
    let strata = groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .enumerate()
        .map(|(id, (class, g))| Stratum::new(id, g, lattice.dims(), Some(class)))
        .collect();
    Ok(Stratification {
        dims: lattice.dims().to_vec(),
        total: lattice.len(),
        strata,
        scheme: Scheme::Class,
    })
}

/// Dispatches on `scheme`; `cell_shape` is ignored for [`Scheme::Class`].
pub fn build_stratification(
    lattice: &PixelLattice,
    scheme: Scheme,
    cell_shape: &[usize],
) -> Result<Stratification> {
    match scheme {
        Scheme::Grid => build_grid_stratification(lattice, cell_shape),
        Scheme::GridClass => build_class_grid_stratification(lattice, cell_shape),
        Scheme::Class => build_class_stratification(lattice),
        Scheme::Custom => Err(Error::invalid(
            "custom stratifications are built with Stratification::from_groups",
        )),
    }
}
