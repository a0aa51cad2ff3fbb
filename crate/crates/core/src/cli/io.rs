use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{Dataset, FamilyConfig, Normalization, QuantityPrior, Trajectory};

/// Sidecar describing a long-format trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMetadata {
    pub horizon: usize,
    pub dim: usize,
    /// Physical `[lo, hi]` per coordinate used for normalization.
    pub coordinate_ranges: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<QuantityPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Generating quantity per trajectory, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantities: Option<Vec<f64>>,
}

impl TrajectoryMetadata {
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let quantities: Option<Vec<f64>> = dataset.trajectories().iter().map(Trajectory::quantity_true).collect();
        Self {
            horizon: dataset.horizon(),
            dim: dataset.dim(),
            coordinate_ranges: dataset.normalization().ranges().to_vec(),
            family: Some(dataset.family().clone()),
            prior: Some(dataset.prior().clone()),
            seed: dataset.seed(),
            quantities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.dim == 0 {
            return Err(Error::config("metadata", "horizon and dim must be positive"));
        }
        if self.coordinate_ranges.len() != self.dim {
            return Err(Error::config(
                "metadata.coordinate_ranges",
                format!("has {} entries, dim is {}", self.coordinate_ranges.len(), self.dim),
            ));
        }
        Ok(())
    }
}

/// Long format `traj_id,t,c0[,c1…]`, one row per state, shortest round-trip floats.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let dim = trajectories.first().map_or(1, Trajectory::dim);
    write!(out, "traj_id,t")?;
    for c in 0..dim {
        write!(out, ",c{c}")?;
    }
    writeln!(out)?;
    for (i, x) in trajectories.iter().enumerate() {
        for t in 0..x.horizon() {
            write!(out, "{i},{t}")?;
            for v in x.state(t) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_metadata(path: &Path, metadata: &TrajectoryMetadata) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(metadata)? + "\n")?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<TrajectoryMetadata> {
    let text = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let m: TrajectoryMetadata = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::ConfigParse(format!("metadata at `{}`: {}", e.path(), e.inner())))?;
    m.validate()?;
    Ok(m)
}

/// Trajectories in first-appearance order of their ids.
#[derive(Debug, Clone)]
pub struct TrajectoryTable {
    pub ids: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

/// Read a long-format CSV whose trajectories must each have exactly the
/// timesteps `0..horizon` with `dim` coordinates.
pub fn read_trajectories_csv(path: &Path, horizon: usize, dim: usize) -> Result<TrajectoryTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = ["traj_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((0..dim).map(|c| format!("c{c}")))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Malformed(format!(
            "header is `{}`, expected `{}`",
            headers.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 2 {
            return Err(Error::Malformed(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                dim + 2
            )));
        }
        let id = record[0].to_string();
        let t: usize = record[1]
            .parse()
            .map_err(|_| Error::Malformed(format!("row {row}: timestep `{}` is not a non-negative integer", &record[1])))?;
        let k = *slot.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            values.push(vec![0.0; horizon * dim]);
            seen.push(vec![false; horizon]);
            ids.len() - 1
        });
        if t >= horizon {
            return Err(Error::RaggedTrajectory {
                id,
                message: format!("timestep {t} is outside the horizon {horizon}"),
            });
        }
        if seen[k][t] {
            return Err(Error::RaggedTrajectory {
                id,
                message: format!("timestep {t} appears twice"),
            });
        }
        seen[k][t] = true;
        for c in 0..dim {
            let v: f64 = record[c + 2]
                .parse()
                .map_err(|_| Error::Malformed(format!("row {row}: `{}` is not a number", &record[c + 2])))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            values[k][t * dim + c] = v;
        }
    }
    if ids.is_empty() {
        return Err(Error::Empty(format!("{} has no trajectories", path.display())));
    }
    for (k, id) in ids.iter().enumerate() {
        if let Some(t) = seen[k].iter().position(|s| !s) {
            return Err(Error::RaggedTrajectory {
                id: id.clone(),
                message: format!("missing timestep {t}"),
            });
        }
    }
    let trajectories = values.into_iter().map(|v| Trajectory::new(v, horizon, dim)).collect();
    Ok(TrajectoryTable { ids, trajectories })
}

/// Read a trajectory CSV and its metadata into a dataset normalized by the
/// declared coordinate ranges.
pub fn ingest_trajectories(
    csv_path: &Path,
    metadata_path: &Path,
    family: &FamilyConfig,
    prior: &QuantityPrior,
) -> Result<Dataset> {
    ingest_with_ids(csv_path, metadata_path, family, prior).map(|(_, d)| d)
}

/// [`ingest_trajectories`] that also returns the trajectory ids in dataset order.
pub fn ingest_with_ids(
    csv_path: &Path,
    metadata_path: &Path,
    family: &FamilyConfig,
    prior: &QuantityPrior,
) -> Result<(Vec<String>, Dataset)> {
    let meta = read_metadata(metadata_path)?;
    if meta.horizon != family.horizon {
        return Err(Error::config(
            "metadata.horizon",
            format!("is {}, the family horizon is {}", meta.horizon, family.horizon),
        ));
    }
    if meta.dim != family.dim() {
        return Err(Error::config(
            "metadata.dim",
            format!("is {}, the family state dimension is {}", meta.dim, family.dim()),
        ));
    }
    let TrajectoryTable { ids, trajectories } = read_trajectories_csv(csv_path, meta.horizon, meta.dim)?;
    let trajectories = match &meta.quantities {
        Some(q) if q.len() == trajectories.len() => {
            trajectories.into_iter().zip(q).map(|(x, &r)| x.with_quantity(r)).collect()
        }
        _ => trajectories,
    };
    let normalization = Normalization::new(meta.coordinate_ranges.clone())
        .map_err(|e| Error::config("metadata.coordinate_ranges", e.to_string()))?;
    let ds = Dataset::with_normalization(family.clone(), prior.clone(), trajectories, normalization, meta.seed)?;
    Ok((ids, ds))
}
