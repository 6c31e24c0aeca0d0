//! Point-cloud ingestion, grid subsampling, and radius neighbor search.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Positions plus per-point features at one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S> {
    positions: Vec<[S; 3]>,
    features: Mat<S>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn new(positions: Vec<[S; 3]>, features: Mat<S>) -> Result<Self> {
        if positions.len() != features.rows() {
            return Err(Error::shape(format!(
                "positions ({}) and features ({}) row counts differ",
                positions.len(),
                features.rows()
            )));
        }
        if !positions.iter().all(|p| p.iter().all(|c| c.is_finite())) || !features.all_finite() {
            return Err(Error::invalid("point cloud contains non-finite values"));
        }
        Ok(PointCloud {
            positions,
            features,
        })
    }

    /// Cloud with a single all-ones feature column.
    pub fn from_positions(positions: Vec<[S; 3]>) -> Result<Self> {
        let n = positions.len();
        let features = Mat::from_fn(n, 1, |_, _| S::one());
        PointCloud::new(positions, features)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn positions(&self) -> &[[S; 3]] {
        &self.positions
    }

    pub fn features(&self) -> &Mat<S> {
        &self.features
    }

    pub fn position(&self, i: usize) -> [S; 3] {
        self.positions[i]
    }

    /// Same positions, different feature matrix.
    pub fn with_features(&self, features: Mat<S>) -> Result<Self> {
        PointCloud::new(self.positions.clone(), features)
    }
}

/// File formats accepted by [`load_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One point per line: `x y z [f1 f2 ...]`, `#` comments ignored.
    AsciiXyz,
    /// Little-endian: header `u32 n, u32 d`, then n*(3+d) f32 values laid out
    /// per point as x, y, z, f1..fd.
    BinaryF32,
}

pub fn load_cloud<S: Scalar>(path: &Path, format: CloudFormat) -> Result<PointCloud<S>> {
    match format {
        CloudFormat::AsciiXyz => load_ascii(path),
        CloudFormat::BinaryF32 => load_binary(path),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn load_ascii<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let text = std::fs::read_to_string(path)?;
    let mut positions = Vec::new();
    let mut feature_rows: Vec<Vec<S>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("non-finite value `{tok}`")));
            }
            vals.push(S::from_f64_lossy(v));
        }
        if vals.len() < 3 {
            return Err(parse_err(path, line_no, "expected at least x y z"));
        }
        let d = vals.len() - 3;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("inconsistent feature count: expected {w}, got {d}"),
                ))
            }
            _ => {}
        }
        positions.push([vals[0], vals[1], vals[2]]);
        feature_rows.push(vals[3..].to_vec());
    }
    let d = width.unwrap_or(0);
    if d == 0 {
        PointCloud::from_positions(positions)
    } else {
        let features = Mat::from_rows(feature_rows);
        PointCloud::new(positions, features)
    }
}

fn load_binary<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(parse_err(path, 0, "missing 8-byte header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * (3 + d) * 4;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            0,
            format!("expected {expected} bytes for n={n} d={d}, got {}", bytes.len()),
        ));
    }
    let mut at = 8;
    let mut next = |offset: usize| -> Result<S> {
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        at += 4;
        if !v.is_finite() {
            return Err(parse_err(path, offset, format!("non-finite value `{v}`")));
        }
        Ok(S::from_f64_lossy(v as f64))
    };
    let mut positions = Vec::with_capacity(n);
    let mut features = Mat::zeros(n, d.max(1));
    for i in 0..n {
        positions.push([next(i)?, next(i)?, next(i)?]);
        if d == 0 {
            features.set(i, 0, S::one());
        } else {
            for j in 0..d {
                let v = next(i)?;
                features.set(i, j, v);
            }
        }
    }
    PointCloud::new(positions, features)
}

/// Serialize in the `binary_f32` layout.
pub fn write_binary<S: Scalar>(cloud: &PointCloud<S>, out: &mut Vec<u8>) {
    out.extend_from_slice(&(cloud.n() as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.d() as u32).to_le_bytes());
    for i in 0..cloud.n() {
        for c in cloud.position(i) {
            out.extend_from_slice(&(c.to_f64_lossy() as f32).to_le_bytes());
        }
        for j in 0..cloud.d() {
            out.extend_from_slice(&(cloud.features().get(i, j).to_f64_lossy() as f32).to_le_bytes());
        }
    }
}

/// Barycenter-per-cell subsampling over axis-aligned cubes of side `cell`.
///
/// Cubes are anchored at the componentwise minimum corner of the cloud, so
/// the partition (and therefore the whole downstream hierarchy) is invariant
/// under rigid translation of the input. Output is ordered by ascending
/// lexicographic cube coordinate.
pub fn grid_subsample<S: Scalar>(cloud: &PointCloud<S>, cell: S) -> Result<PointCloud<S>> {
    if !(cell > S::zero()) || !cell.is_finite() {
        return Err(Error::invalid(format!("cell must be positive, got {cell}")));
    }
    if cloud.n() == 0 {
        return Ok(cloud.clone());
    }
    let mut origin = cloud.position(0);
    for p in cloud.positions() {
        for a in 0..3 {
            if p[a] < origin[a] {
                origin[a] = p[a];
            }
        }
    }
    let d = cloud.d();
    struct Acc<S> {
        count: usize,
        pos: [f64; 3],
        feat: Vec<f64>,
        _marker: std::marker::PhantomData<S>,
    }
    let mut cells: BTreeMap<(i64, i64, i64), Acc<S>> = BTreeMap::new();
    for i in 0..cloud.n() {
        let p = cloud.position(i);
        let key = (
            ((p[0] - origin[0]) / cell).floor().to_i64().unwrap_or(0),
            ((p[1] - origin[1]) / cell).floor().to_i64().unwrap_or(0),
            ((p[2] - origin[2]) / cell).floor().to_i64().unwrap_or(0),
        );
        let acc = cells.entry(key).or_insert_with(|| Acc {
            count: 0,
            pos: [0.0; 3],
            feat: vec![0.0; d],
            _marker: std::marker::PhantomData,
        });
        acc.count += 1;
        for a in 0..3 {
            acc.pos[a] += p[a].to_f64_lossy();
        }
        for j in 0..d {
            acc.feat[j] += cloud.features().get(i, j).to_f64_lossy();
        }
    }
    let mut positions = Vec::with_capacity(cells.len());
    let mut features = Mat::zeros(cells.len(), d);
    for (row, acc) in cells.into_values().enumerate() {
        let inv = 1.0 / acc.count as f64;
        positions.push([
            S::from_f64_lossy(acc.pos[0] * inv),
            S::from_f64_lossy(acc.pos[1] * inv),
            S::from_f64_lossy(acc.pos[2] * inv),
        ]);
        for j in 0..d {
            features.set(row, j, S::from_f64_lossy(acc.feat[j] * inv));
        }
    }
    PointCloud::new(positions, features)
}

/// Fixed-width neighbor lists; `shadow` (= support size) pads short rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    max_n: usize,
    indices: Vec<usize>,
    counts: Vec<usize>,
    shadow: usize,
}

impl NeighborIndex {
    pub fn n_queries(&self) -> usize {
        self.counts.len()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn shadow(&self) -> usize {
        self.shadow
    }

    pub fn count(&self, query: usize) -> usize {
        self.counts[query]
    }

    /// Valid (non-shadow) neighbor indices of one query.
    pub fn neighbors(&self, query: usize) -> &[usize] {
        let start = query * self.max_n;
        &self.indices[start..start + self.counts[query]]
    }

    /// Full padded row including shadow slots.
    pub fn row(&self, query: usize) -> &[usize] {
        let start = query * self.max_n;
        &self.indices[start..start + self.max_n]
    }
}

/// For each query point, the support points within distance `r`, sorted by
/// ascending distance then index, truncated to `max_n`.
///
/// Backed by a uniform hash grid with cell = r; correctness is defined by the
/// exhaustive scan (see the property tests).
pub fn radius_neighbors<S: Scalar>(
    queries: &PointCloud<S>,
    support: &PointCloud<S>,
    r: S,
    max_n: usize,
) -> Result<NeighborIndex> {
    if !(r > S::zero()) || !r.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let shadow = support.n();
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let key_of = |p: &[S; 3]| -> (i64, i64, i64) {
        (
            (p[0] / r).floor().to_i64().unwrap_or(0),
            (p[1] / r).floor().to_i64().unwrap_or(0),
            (p[2] / r).floor().to_i64().unwrap_or(0),
        )
    };
    for (i, p) in support.positions().iter().enumerate() {
        grid.entry(key_of(p)).or_default().push(i);
    }

    let r2 = r * r;
    let mut indices = Vec::with_capacity(queries.n() * max_n);
    let mut counts = Vec::with_capacity(queries.n());
    let mut found: Vec<(S, usize)> = Vec::new();
    for q in queries.positions() {
        found.clear();
        let (kx, ky, kz) = key_of(q);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in cell {
                            let s = support.position(i);
                            let ddx = q[0] - s[0];
                            let ddy = q[1] - s[1];
                            let ddz = q[2] - s[2];
                            let d2 = ddx * ddx + ddy * ddy + ddz * ddz;
                            if d2 <= r2 {
                                found.push((d2, i));
                            }
                        }
                    }
                }
            }
        }
        found.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let kept = found.len().min(max_n);
        counts.push(kept);
        for &(_, i) in &found[..kept] {
            indices.push(i);
        }
        for _ in kept..max_n {
            indices.push(shadow);
        }
    }
    Ok(NeighborIndex {
        max_n,
        indices,
        counts,
        shadow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ascii_defaults_to_ones_feature() {
        let f = write_temp("# comment\n0 0 0\n1 0 0\n2.5 -1 0.5\n");
        let cloud: PointCloud<f64> = load_cloud(f.path(), CloudFormat::AsciiXyz).unwrap();
        assert_eq!(cloud.n(), 3);
        assert_eq!(cloud.d(), 1);
        for i in 0..3 {
            assert_eq!(cloud.features().get(i, 0), 1.0);
        }
    }

    #[test]
    fn ascii_with_features() {
        let f = write_temp("0 0 0 2 3\n1 1 1 4 5\n");
        let cloud: PointCloud<f64> = load_cloud(f.path(), CloudFormat::AsciiXyz).unwrap();
        assert_eq!(cloud.d(), 2);
        assert_eq!(cloud.features().get(1, 1), 5.0);
    }

    #[test]
    fn ascii_empty_file() {
        let f = write_temp("");
        let cloud: PointCloud<f64> = load_cloud(f.path(), CloudFormat::AsciiXyz).unwrap();
        assert_eq!(cloud.n(), 0);
    }

    #[test]
    fn ascii_nan_rejected_with_line() {
        let f = write_temp("0 0 0\n1 nan 0\n");
        let err = load_cloud::<f64>(f.path(), CloudFormat::AsciiXyz).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn ascii_ragged_rows_rejected() {
        let f = write_temp("0 0 0 1\n1 1 1\n");
        assert!(load_cloud::<f64>(f.path(), CloudFormat::AsciiXyz).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let cloud = PointCloud::<f64>::new(
            vec![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]],
            Mat::from_rows(vec![vec![0.5, -1.5], vec![2.0, 7.0]]),
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_binary(&cloud, &mut bytes);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&bytes).unwrap();
        let back: PointCloud<f64> = load_cloud(f.path(), CloudFormat::BinaryF32).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn binary_truncated_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&5u32.to_le_bytes()).unwrap();
        assert!(load_cloud::<f64>(f.path(), CloudFormat::BinaryF32).is_err());
    }

    #[test]
    fn subsample_two_points_one_cube() {
        let cloud = PointCloud::<f64>::from_positions(vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]]).unwrap();
        let out = grid_subsample(&cloud, 1.0).unwrap();
        assert_eq!(out.n(), 1);
        assert_eq!(out.position(0), [0.1, 0.0, 0.0]);
    }

    #[test]
    fn subsample_unit_cube_corners() {
        // brute-force oracle: mean of the 8 corners is (0.5, 0.5, 0.5)
        let mut corners = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    corners.push([x, y, z]);
                }
            }
        }
        let expected = {
            let mut s = [0.0f64; 3];
            for c in &corners {
                for a in 0..3 {
                    s[a] += c[a];
                }
            }
            [s[0] / 8.0, s[1] / 8.0, s[2] / 8.0]
        };
        let cloud = PointCloud::<f64>::from_positions(corners).unwrap();
        let out = grid_subsample(&cloud, 10.0).unwrap();
        assert_eq!(out.n(), 1);
        assert_eq!(out.position(0), expected);
        assert_eq!(expected, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn subsample_never_grows() {
        let cloud =
            PointCloud::<f64>::from_positions(vec![[0.0; 3], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]])
                .unwrap();
        let out = grid_subsample(&cloud, 0.5).unwrap();
        assert_eq!(out.n(), 3);
        let again = grid_subsample(&out, 0.5).unwrap();
        assert!(again.n() <= out.n());
    }

    #[test]
    fn subsample_rejects_bad_cell() {
        let cloud = PointCloud::<f64>::from_positions(vec![[0.0; 3]]).unwrap();
        assert!(grid_subsample(&cloud, 0.0).is_err());
        assert!(grid_subsample(&cloud, -1.0).is_err());
    }

    #[test]
    fn neighbors_single_hit() {
        let queries = PointCloud::<f64>::from_positions(vec![[0.0; 3]]).unwrap();
        let support =
            PointCloud::<f64>::from_positions(vec![[0.0; 3], [10.0, 0.0, 0.0]]).unwrap();
        let idx = radius_neighbors(&queries, &support, 0.5, 4).unwrap();
        assert_eq!(idx.count(0), 1);
        assert_eq!(idx.neighbors(0), &[0]);
        assert_eq!(idx.row(0), &[0, 2, 2, 2]);
        assert_eq!(idx.shadow(), 2);
    }

    #[test]
    fn neighbors_none_in_range() {
        let queries = PointCloud::<f64>::from_positions(vec![[0.0; 3]]).unwrap();
        let support = PointCloud::<f64>::from_positions(vec![[5.0, 0.0, 0.0]]).unwrap();
        let idx = radius_neighbors(&queries, &support, 1.0, 3).unwrap();
        assert_eq!(idx.count(0), 0);
        assert_eq!(idx.row(0), &[1, 1, 1]);
    }

    #[test]
    fn neighbors_sorted_by_distance_then_index() {
        let queries = PointCloud::<f64>::from_positions(vec![[0.0; 3]]).unwrap();
        let support = PointCloud::<f64>::from_positions(vec![
            [0.3, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.0, 0.3, 0.0], // tie with index 0 by distance
            [0.2, 0.0, 0.0],
        ])
        .unwrap();
        let idx = radius_neighbors(&queries, &support, 1.0, 10).unwrap();
        assert_eq!(idx.neighbors(0), &[1, 3, 0, 2]);
    }
}
