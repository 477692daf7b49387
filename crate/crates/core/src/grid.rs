//! Uniform Cartesian grids on symmetric boxes and scalar fields on them.
//!
//! A grid always has an odd number of nodes per axis so the origin is a
//! node. Fields carry an [`ExteriorRule`] that defines their value at any
//! point outside the box; the convolution reads through it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default node budget for [`make_grid`].
pub const DEFAULT_NODE_BUDGET: usize = 50_000_000;

/// Point in ℝ^N stored in a fixed array; unused trailing axes are zero.
pub type Point = [f64; 3];

pub fn norm(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_count: usize,
    spacing: f64,
    requested_spacing: f64,
}

/// Grid on `[-half_width, half_width]^dim` with spacing as close to
/// `spacing` as an integer number of cells allows.
pub fn make_grid(dim: usize, half_width: f64, spacing: f64) -> Result<Grid> {
    make_grid_with_budget(dim, half_width, spacing, DEFAULT_NODE_BUDGET)
}

pub fn make_grid_with_budget(dim: usize, half_width: f64, spacing: f64, budget: usize) -> Result<Grid> {
    if !(1..=3).contains(&dim) {
        return Err(invalid("grid.dim", format!("must be 1, 2 or 3, got {dim}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid("grid.spacing", format!("must be positive, got {spacing}")));
    }
    if !(half_width >= spacing && half_width.is_finite()) {
        return Err(invalid(
            "grid.half_width",
            format!("must be at least the spacing {spacing}, got {half_width}"),
        ));
    }
    let half_count = (half_width / spacing).round().max(1.0) as usize;
    let grid = Grid {
        dim,
        half_count,
        spacing: half_width / half_count as f64,
        requested_spacing: spacing,
    };
    grid.check_budget(budget)?;
    Ok(grid)
}

impl Grid {
    /// Grid with exactly `2·half_count + 1` nodes per axis at the given
    /// spacing (no rounding).
    pub fn from_half_count(dim: usize, half_count: usize, spacing: f64) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(invalid("grid.dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if half_count == 0 || !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid("grid.spacing", "need positive spacing and at least one cell"));
        }
        let grid = Grid {
            dim,
            half_count,
            spacing,
            requested_spacing: spacing,
        };
        grid.check_budget(DEFAULT_NODE_BUDGET)?;
        Ok(grid)
    }

    fn check_budget(&self, budget: usize) -> Result<()> {
        let nodes = (self.points_per_axis() as u128).pow(self.dim as u32);
        if nodes > budget as u128 {
            return Err(Error::GridTooLarge { nodes, budget });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn requested_spacing(&self) -> f64 {
        self.requested_spacing
    }

    pub fn half_count(&self) -> usize {
        self.half_count
    }

    pub fn half_width(&self) -> f64 {
        self.half_count as f64 * self.spacing
    }

    pub fn points_per_axis(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn len(&self) -> usize {
        self.points_per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Flat index of the origin node.
    pub fn origin_index(&self) -> usize {
        let n = self.points_per_axis();
        (0..self.dim).fold(0, |acc, _| acc * n + self.half_count)
    }

    /// Per-axis node indices of a flat index (row-major, last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let n = self.points_per_axis();
        let mut out = [0usize; 3];
        for d in (0..self.dim).rev() {
            out[d] = flat % n;
            flat /= n;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let n = self.points_per_axis();
        idx.iter().take(self.dim).fold(0, |acc, &i| acc * n + i)
    }

    /// Flat index of the node at signed lattice coordinates, if inside.
    pub fn flat_index_signed(&self, lattice: &[isize]) -> Option<usize> {
        let n = self.points_per_axis() as isize;
        let c = self.half_count as isize;
        let mut flat = 0usize;
        for &k in lattice.iter().take(self.dim) {
            let i = k + c;
            if i < 0 || i >= n {
                return None;
            }
            flat = flat * n as usize + i as usize;
        }
        Some(flat)
    }

    /// Signed lattice coordinates (`x = k·h`) of a flat index.
    pub fn lattice(&self, flat: usize) -> [isize; 3] {
        let idx = self.multi_index(flat);
        let mut out = [0isize; 3];
        for d in 0..self.dim {
            out[d] = idx[d] as isize - self.half_count as isize;
        }
        out
    }

    pub fn point(&self, flat: usize) -> Point {
        let k = self.lattice(flat);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = k[d] as f64 * self.spacing;
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Whether `other` has the same spacing (to 1e-12 relative) and dimension.
    pub fn compatible_with(&self, other: &Grid) -> bool {
        self.dim == other.dim && same_spacing(self.spacing, other.spacing)
    }
}

pub(crate) fn same_spacing(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Value of a field at points outside its box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExteriorRule {
    Zero,
    Constant {
        value: f64,
    },
    /// `min(cap, amplitude·|x|^{-alpha})`.
    PowerTail {
        amplitude: f64,
        alpha: f64,
        cap: f64,
    },
    /// Radial piecewise-linear table; the last value holds beyond the table.
    RadialTable {
        radii: Vec<f64>,
        values: Vec<f64>,
    },
}

impl ExteriorRule {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { value } => *value,
            Self::PowerTail { amplitude, alpha, cap } => power_tail(*amplitude, *alpha, *cap, norm(x)),
            Self::RadialTable { radii, values } => radial_table(radii, values, norm(x)),
        }
    }

    /// Supremum of the rule over all of ℝ^N.
    pub fn sup(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { value } => *value,
            Self::PowerTail { cap, .. } => *cap,
            Self::RadialTable { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }
}

pub(crate) fn power_tail(amplitude: f64, alpha: f64, cap: f64, r: f64) -> f64 {
    if r == 0.0 {
        return cap;
    }
    cap.min(amplitude * r.powf(-alpha))
}

pub(crate) fn radial_table(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let last = radii.len() - 1;
    if r >= radii[last] {
        return values[last];
    }
    if r <= radii[0] {
        return values[0];
    }
    let j = radii.partition_point(|&q| q <= r).clamp(1, last);
    let theta = (r - radii[j - 1]) / (radii[j] - radii[j - 1]);
    values[j - 1] + theta * (values[j] - values[j - 1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    exterior: ExteriorRule,
}

/// Samples `f` at every node. `f` receives the first `dim` coordinates.
pub fn sample_field(grid: &Grid, f: impl Fn(&[f64]) -> f64, exterior: ExteriorRule) -> Result<Field> {
    let dim = grid.dim();
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.point(i);
        let v = f(&x[..dim]);
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i, value: v });
        }
        values.push(v);
    }
    Ok(Field {
        grid: *grid,
        values,
        exterior,
    })
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>, exterior: ExteriorRule) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(invalid(
                "field.values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Field { grid, values, exterior })
    }

    pub fn zeros(grid: &Grid, exterior: ExteriorRule) -> Field {
        Field {
            grid: *grid,
            values: vec![0.0; grid.len()],
            exterior,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn exterior(&self) -> &ExteriorRule {
        &self.exterior
    }

    pub fn with_exterior(mut self, exterior: ExteriorRule) -> Field {
        self.exterior = exterior;
        self
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ u·h^N`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Value at an arbitrary point: node values inside the box, the exterior
    /// rule outside. Uses the node at `x` exactly when `x` is a node.
    pub fn value_at_lattice(&self, lattice: &[isize]) -> f64 {
        match self.grid.flat_index_signed(lattice) {
            Some(i) => self.values[i],
            None => {
                let mut x = [0.0; 3];
                for d in 0..self.grid.dim() {
                    x[d] = lattice[d] as f64 * self.grid.spacing();
                }
                self.exterior.eval(&x)
            }
        }
    }
}

/// Nodes strictly inside the open ball `|x| < radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallMask {
    grid: Grid,
    radius: f64,
    inside: Vec<bool>,
}

impl BallMask {
    pub fn new(grid: &Grid, radius: f64) -> BallMask {
        let inside = grid.points().map(|x| norm(&x) < radius).collect();
        BallMask {
            grid: *grid,
            radius,
            inside,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.inside[flat]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

fn ball_values(field: &Field, radius: f64) -> Result<impl Iterator<Item = f64> + '_> {
    let grid = field.grid();
    if radius > grid.half_width() * (1.0 + 1e-12) + grid.spacing() {
        return Err(invalid(
            "radius",
            format!("{radius} exceeds the box half width {}", grid.half_width()),
        ));
    }
    let any = (0..grid.len()).any(|i| norm(&grid.point(i)) < radius);
    if !any {
        return Err(Error::EmptyBall { radius });
    }
    Ok((0..grid.len())
        .filter(move |&i| norm(&grid.point(i)) < radius)
        .map(move |i| field.values()[i]))
}

pub fn sup_over_ball(field: &Field, radius: f64) -> Result<f64> {
    Ok(ball_values(field, radius)?.fold(f64::NEG_INFINITY, f64::max))
}

pub fn inf_over_ball(field: &Field, radius: f64) -> Result<f64> {
    Ok(ball_values(field, radius)?.fold(f64::INFINITY, f64::min))
}

pub mod io {
    //! Field dumps: a JSON metadata document plus the node values as
    //! little-endian `f64`, inline or in a sibling `.bin` file.

    use std::fs;
    use std::path::{Path, PathBuf};

    use serde::{Deserialize, Serialize};

    use super::{ExteriorRule, Field, Grid};
    use crate::error::{Error, Result};

    /// Fields with at most this many nodes are written inline.
    pub const INLINE_LIMIT: usize = 4096;

    #[derive(Debug, Serialize, Deserialize)]
    struct FieldHeader {
        dim: usize,
        half_width: f64,
        spacing: f64,
        points_per_axis: usize,
        exterior_rule: ExteriorRule,
        time_stamp: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        values: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        data_file: Option<String>,
    }

    fn sibling_bin(path: &Path) -> PathBuf {
        path.with_extension("bin")
    }

    /// Writes `field` to `path` (JSON). Large fields go to `path.bin`.
    /// Both files are written to temporaries and renamed into place.
    pub fn write_field(path: &Path, field: &Field, time_stamp: f64) -> Result<()> {
        let grid = field.grid();
        let inline = field.values().len() <= INLINE_LIMIT;
        let mut header = FieldHeader {
            dim: grid.dim(),
            half_width: grid.half_width(),
            spacing: grid.spacing(),
            points_per_axis: grid.points_per_axis(),
            exterior_rule: field.exterior().clone(),
            time_stamp,
            values: None,
            data_file: None,
        };
        if inline {
            header.values = Some(field.values().to_vec());
        } else {
            let bin = sibling_bin(path);
            let mut bytes = Vec::with_capacity(field.values().len() * 8);
            for v in field.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            write_atomic(&bin, &bytes)?;
            header.data_file = bin.file_name().map(|s| s.to_string_lossy().into_owned());
        }
        let mut json = serde_json::to_vec_pretty(&header)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }

    pub fn read_field(path: &Path) -> Result<(Field, f64)> {
        let header: FieldHeader = serde_json::from_slice(&fs::read(path)?)?;
        if header.points_per_axis.is_multiple_of(2) {
            return Err(Error::MalformedDump("even node count per axis".into()));
        }
        let grid = Grid::from_half_count(header.dim, header.points_per_axis / 2, header.spacing)?;
        let values = match (header.values, header.data_file) {
            (Some(v), _) => v,
            (None, Some(name)) => {
                let bin = path.with_file_name(name);
                let bytes = fs::read(&bin)?;
                if bytes.len() != grid.len() * 8 {
                    return Err(Error::MalformedDump(format!(
                        "{} holds {} bytes, expected {}",
                        bin.display(),
                        bytes.len(),
                        grid.len() * 8
                    )));
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect()
            }
            (None, None) => return Err(Error::MalformedDump("no values and no data file".into())),
        };
        Ok((Field::new(grid, values, header.exterior_rule)?, header.time_stamp))
    }

    pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
