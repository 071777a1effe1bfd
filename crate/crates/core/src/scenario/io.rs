//! Panel directory layout:
//!
//! | file              | content                                                       |
//! |-------------------|---------------------------------------------------------------|
//! | `panel.csv`       | `courier_id,day,y,c_0..c_{K-1},p_0..p_{M-1},a_0..a_3`         |
//! | `schema.json`     | sizes, split boundaries, and the kind of every `c_k` column   |
//! | `centroids.txt`   | `district_id x y`                                             |
//! | `road_nodes.txt`  | `node_id x y`                                                 |
//! | `road_edges.txt`  | `node_u node_v length_meters`                                 |
//!
//! `c_k` columns hold raw values; categorical columns carry the level index
//! and are one-hot encoded by [`prepare`](super::prepare).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, Panel, PanelRow, Splits, ANOMALY_DIM};
use crate::error::{Error, Result};
use crate::graphs::{read_centroids, write_centroids, RoadNetwork};

pub const PANEL_FILE: &str = "panel.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CENTROIDS_FILE: &str = "centroids.txt";
pub const ROAD_NODES_FILE: &str = "road_nodes.txt";
pub const ROAD_EDGES_FILE: &str = "road_edges.txt";

#[derive(Debug, Serialize, Deserialize)]
struct PanelMeta {
    n_couriers: usize,
    n_days: usize,
    n_districts: usize,
    splits: Splits,
    #[serde(flatten)]
    schema: FeatureSchema,
}

/// Writes the panel files into `dir` and returns their paths.
pub fn export_panel(panel: &Panel, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let k = panel.schema.raw_width();
    let mut s = String::from("courier_id,day,y");
    for i in 0..k {
        write!(s, ",c_{i}").unwrap();
    }
    for j in 0..panel.n_districts {
        write!(s, ",p_{j}").unwrap();
    }
    for i in 0..ANOMALY_DIM {
        write!(s, ",a_{i}").unwrap();
    }
    s.push('\n');
    for r in &panel.rows {
        write!(s, "{},{},{}", r.courier, r.day, r.y).unwrap();
        for v in r.c.iter().chain(&r.p).chain(&r.a) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    let paths: Vec<_> = [PANEL_FILE, SCHEMA_FILE, CENTROIDS_FILE, ROAD_NODES_FILE, ROAD_EDGES_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    fs::write(&paths[0], s)?;
    let meta = PanelMeta {
        n_couriers: panel.n_couriers,
        n_days: panel.n_days,
        n_districts: panel.n_districts,
        splits: panel.splits,
        schema: panel.schema.clone(),
    };
    fs::write(&paths[1], serde_json::to_string_pretty(&meta)?)?;
    write_centroids(&paths[2], &panel.centroids)?;
    panel.roads.write(&paths[3], &paths[4])?;
    Ok(paths)
}

pub fn import_panel(dir: &Path) -> Result<Panel> {
    let schema_path = dir.join(SCHEMA_FILE);
    if !schema_path.exists() {
        return Err(Error::Missing(schema_path));
    }
    let meta: PanelMeta = serde_json::from_str(&fs::read_to_string(&schema_path)?)?;
    let (n, days, m) = (meta.n_couriers, meta.n_days, meta.n_districts);
    let k = meta.schema.raw_width();

    let panel_path = dir.join(PANEL_FILE);
    if !panel_path.exists() {
        return Err(Error::Missing(panel_path));
    }
    let mut reader = csv::Reader::from_path(&panel_path).map_err(|e| Error::Data(e.to_string()))?;
    let width = 3 + k + m + ANOMALY_DIM;
    let headers = reader.headers().map_err(|e| Error::Data(e.to_string()))?;
    if headers.len() != width {
        return Err(Error::Data(format!(
            "{}: expected {width} columns, found {}",
            panel_path.display(),
            headers.len()
        )));
    }

    let mut slots: Vec<Option<PanelRow>> = vec![None; n * days];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let parse = |idx: usize| -> Result<f64> {
            rec[idx].trim().parse::<f64>().map_err(|_| Error::Parse {
                path: panel_path.clone(),
                line: line + 2,
                msg: format!("column {idx}: not a number {:?}", &rec[idx]),
            })
        };
        let courier = parse(0)? as usize;
        let day = parse(1)? as usize;
        if courier >= n || day >= days {
            return Err(Error::Data(format!("row for courier {courier}, day {day} outside panel bounds")));
        }
        let y = parse(2)?;
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::Range(format!("label {y} for courier {courier}, day {day} outside (0, 1)")));
        }
        let c = (3..3 + k).map(parse).collect::<Result<Vec<_>>>()?;
        let p = (3 + k..3 + k + m).map(parse).collect::<Result<Vec<_>>>()?;
        let mut a = [0.0; ANOMALY_DIM];
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = parse(3 + k + m + i)?;
        }
        let slot = &mut slots[day * n + courier];
        if slot.is_some() {
            return Err(Error::Data(format!("duplicate row for courier {courier}, day {day}")));
        }
        *slot = Some(PanelRow { courier, day, y, c, p, a });
    }
    let rows = slots
        .into_iter()
        .enumerate()
        .map(|(idx, r)| {
            r.ok_or_else(|| Error::Data(format!("missing row for courier {}, day {}", idx % n, idx / n)))
        })
        .collect::<Result<Vec<_>>>()?;

    let centroids = read_centroids(&dir.join(CENTROIDS_FILE))?;
    let roads = RoadNetwork::read(&dir.join(ROAD_NODES_FILE), &dir.join(ROAD_EDGES_FILE))?;
    let panel = Panel {
        n_couriers: n,
        n_days: days,
        n_districts: m,
        schema: meta.schema,
        splits: meta.splits,
        rows,
        centroids,
        roads,
    };
    panel.validate()?;
    Ok(panel)
}
