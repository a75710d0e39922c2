use std::path::Path;

use rayon::prelude::*;

use super::contour::{extract_boundary, largest_component};
use super::fractal::{fractal_dimension, lacunarity};
use super::geometry::geometry_features;
use super::moments::moment_features;
use crate::data::Mask;
use crate::error::{Error, Result};

/// A named feature and the scalar columns it expands to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

/// The thirteen named shape features and their scalar columns.
pub const GROUP_COLUMNS: [(&str, &[&str]); 13] = [
    ("fractal_dimension", &["fractal_dimension"]),
    ("lacunarity", &["lacunarity"]),
    ("convex_hull", &["solidity"]),
    ("convexity", &["convexity"]),
    ("circularity", &["circularity"]),
    ("area", &["area"]),
    ("perimeter", &["perimeter"]),
    ("centroid", &["centroid_x", "centroid_y"]),
    ("major_axis", &["major_axis"]),
    ("minor_axis", &["minor_axis"]),
    ("smoothness", &["smoothness"]),
    ("hu_moments", &["hu_1", "hu_2", "hu_3", "hu_4", "hu_5", "hu_6"]),
    ("central_moments", &["eta_11", "eta_20", "eta_02", "eta_21", "eta_12", "eta_30", "eta_03"]),
];

/// Raw Hu values written alongside the compressed ones; not a selection input.
pub const RAW_HU_COLUMNS: [&str; 6] = ["hu_1_raw", "hu_2_raw", "hu_3_raw", "hu_4_raw", "hu_5_raw", "hu_6_raw"];

/// Scalar column names in file order.
pub fn feature_columns() -> Vec<String> {
    GROUP_COLUMNS
        .iter()
        .flat_map(|(_, cols)| cols.iter().map(|c| c.to_string()))
        .chain(RAW_HU_COLUMNS.iter().map(|c| c.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub fractal_dimension: f64,
    pub fractal_degenerate: bool,
    pub lacunarity: f64,
    pub solidity: f64,
    pub convexity: f64,
    pub circularity: f64,
    pub area: f64,
    pub perimeter: f64,
    pub centroid: (f64, f64),
    pub major_axis: f64,
    pub minor_axis: f64,
    pub smoothness: f64,
    /// `sign·log10(1+|φ|·10¹²)` of φ1..φ6.
    pub hu: [f64; 6],
    pub hu_raw: [f64; 6],
    /// η11, η20, η02, η21, η12, η30, η03.
    pub central: [f64; 7],
}

impl FeatureVector {
    /// Scalars in [`feature_columns`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.fractal_dimension,
            self.lacunarity,
            self.solidity,
            self.convexity,
            self.circularity,
            self.area,
            self.perimeter,
            self.centroid.0,
            self.centroid.1,
            self.major_axis,
            self.minor_axis,
            self.smoothness,
        ];
        v.extend(self.hu);
        v.extend(self.central);
        v.extend(self.hu_raw);
        v
    }
}

/// Shape features of the largest foreground component of `mask`.
pub fn extract_features(mask: &Mask) -> Result<FeatureVector> {
    let region = largest_component(mask)?;
    let boundary = extract_boundary(&region)?;
    let fd = fractal_dimension(&boundary);
    let geo = geometry_features(&region, &boundary);
    let mom = moment_features(&region);
    Ok(FeatureVector {
        fractal_dimension: fd.value,
        fractal_degenerate: fd.degenerate,
        lacunarity: lacunarity(&region)?,
        solidity: geo.solidity,
        convexity: geo.convexity,
        circularity: geo.circularity,
        area: geo.area,
        perimeter: geo.perimeter,
        centroid: (geo.centroid_x, geo.centroid_y),
        major_axis: geo.major_axis,
        minor_axis: geo.minor_axis,
        smoothness: geo.smoothness,
        hu: mom.hu_log,
        hu_raw: mom.hu,
        central: mom.eta.values(),
    })
}

/// Sample ids with a dense feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn from_masks(masks: &[(String, Mask)]) -> Result<Self> {
        let rows = masks
            .par_iter()
            .map(|(id, m)| extract_features(m).map(|f| f.to_vec()).map_err(|e| Error::Data(format!("{id}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: masks.iter().map(|(id, _)| id.clone()).collect(),
            columns: feature_columns(),
            rows,
        })
    }

    /// Selection groups for this table's columns. Known shape-feature
    /// columns form the thirteen named groups; any other column (except the
    /// raw Hu copies) is a group of its own.
    pub fn groups(&self) -> Vec<FeatureGroup> {
        let find = |name: &str| self.columns.iter().position(|c| c == name);
        let known: Vec<FeatureGroup> = GROUP_COLUMNS
            .iter()
            .filter_map(|(g, cols)| {
                let idx: Option<Vec<usize>> = cols.iter().map(|c| find(c)).collect();
                idx.map(|columns| FeatureGroup {
                    name: g.to_string(),
                    columns,
                })
            })
            .collect();
        let claimed: Vec<usize> = known.iter().flat_map(|g| g.columns.clone()).collect();
        let mut groups = known;
        for (i, c) in self.columns.iter().enumerate() {
            if !claimed.contains(&i) && !RAW_HU_COLUMNS.contains(&c.as_str()) {
                groups.push(FeatureGroup {
                    name: c.clone(),
                    columns: vec![i],
                });
            }
        }
        groups
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(std::iter::once("id").chain(self.columns.iter().map(String::as_str)))?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("id") || header.len() < 2 {
            return Err(Error::Data(format!("{}: expected header `id,<feature>...`", path.display())));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Data(format!("{}: row {} has {} fields", path.display(), line + 2, rec.len())));
            }
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("{}: row {}: `{v}` is not a number", path.display(), line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { ids, columns, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse(w: usize, a: f64, b: f64) -> Mask {
        Mask::from_fn(w, w, |x, y| {
            let (dx, dy) = (x as f64 - w as f64 / 2.0, y as f64 - w as f64 / 2.0);
            dx * dx / (a * a) + dy * dy / (b * b) <= 1.0
        })
    }

    #[test]
    fn thirteen_groups_cover_columns() {
        let t = FeatureTable::from_masks(&[("a".into(), ellipse(64, 20.0, 10.0))]).unwrap();
        let g = t.groups();
        assert_eq!(g.len(), 13);
        assert_eq!(g.iter().map(|g| g.columns.len()).sum::<usize>(), 1 + 1 + 1 + 1 + 1 + 1 + 1 + 2 + 1 + 1 + 1 + 6 + 7);
        assert_eq!(t.rows[0].len(), t.columns.len());
    }

    #[test]
    fn csv_round_trip() {
        let t = FeatureTable::from_masks(&[("b".into(), ellipse(48, 15.0, 9.0)), ("a".into(), ellipse(48, 9.0, 9.0))]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(FeatureTable::read_csv(&p).unwrap(), t);
    }

    #[test]
    fn unknown_columns_are_single_groups() {
        let t = FeatureTable {
            ids: vec!["x".into()],
            columns: vec!["f0".into(), "f1".into()],
            rows: vec![vec![0.0, 1.0]],
        };
        let names: Vec<String> = t.groups().into_iter().map(|g| g.name).collect();
        assert_eq!(names, ["f0", "f1"]);
    }

    #[test]
    fn elongation_shows_in_axes() {
        let f = extract_features(&ellipse(64, 24.0, 8.0)).unwrap();
        assert!(f.major_axis > 2.5 * f.minor_axis);
        assert!(f.solidity > 0.9 && f.solidity <= 1.0);
    }
}
