use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use topk_core::rng::SeedSplitter;
use topk_core::types::Dataset;

use crate::config::{DataSource, SyntheticKind, SyntheticRecipe};
use crate::io::write_atomic;
use crate::CliError;

/// Cluster centres are picked among `CENTER_SCALE · N(0, I)` draws.
const CENTER_SCALE: f64 = 1.0;
const CANDIDATES_PER_CLASS: usize = 8;
/// With zero overlap, offsets are clipped to this fraction of the smallest
/// centre distance, which keeps every point inside its centre's Voronoi
/// cell and hence linearly separable.
const SEPARABLE_RADIUS: f64 = 0.45;

/// Gaussian blobs with uneven spread.
///
/// Class `y` has standard deviation
/// `cluster_spread · (1 + overlap_factor · (y / (n - 1))²)`, so low-index
/// classes stay tight while high-index ones overlap their neighbours.
/// Labels are drawn uniformly.
pub fn gaussian_clusters(recipe: &SyntheticRecipe, seed: u64) -> Result<Dataset, CliError> {
    recipe.validate()?;
    let SyntheticKind::GaussianClusters = recipe.kind;
    let split = SeedSplitter::new(seed);
    let (n, d) = (recipe.n_classes, recipe.dim);
    let mut rng = split.stream("centers");
    let centers = spread_centers(&mut rng, n, d);
    let mut dmin = f64::INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            dmin = dmin.min(dist(&centers[a], &centers[b]));
        }
    }
    let mut rng = split.stream("samples");
    let mut features = Vec::with_capacity(recipe.samples * d);
    let mut labels = Vec::with_capacity(recipe.samples);
    for _ in 0..recipe.samples {
        let y = rng.random_range(0..n);
        let grade = y as f64 / (n - 1) as f64;
        let sigma = recipe.cluster_spread * (1.0 + recipe.overlap_factor * grade * grade);
        let mut z = normal_vec(&mut rng, d, sigma);
        if recipe.overlap_factor == 0.0 {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cap = SEPARABLE_RADIUS * dmin;
            if norm > cap {
                z.iter_mut().for_each(|v| *v *= cap / norm);
            }
        }
        features.extend(centers[y].iter().zip(&z).map(|(c, v)| c + v));
        labels.push(y);
    }
    Ok(Dataset::new(features, d, labels, n)?)
}

/// Greedy max-min selection from `CANDIDATES_PER_CLASS · n` Gaussian draws,
/// so no two centres land on top of each other.
fn spread_centers<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    let pool: Vec<Vec<f64>> = (0..CANDIDATES_PER_CLASS * n).map(|_| normal_vec(rng, d, CENTER_SCALE)).collect();
    let mut nearest: Vec<f64> = pool.iter().map(|p| dist(p, &pool[0])).collect();
    let mut chosen = vec![0];
    while chosen.len() < n {
        let next =
            (0..pool.len()).max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a))).expect("non-empty pool");
        chosen.push(next);
        for (m, p) in nearest.iter_mut().zip(&pool) {
            *m = m.min(dist(p, &pool[next]));
        }
    }
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Reads `f0,..,f{d-1},label`. `n_classes` defaults to `max label + 1`.
pub fn read_csv(path: &Path, n_classes: Option<usize>) -> Result<Dataset, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| csv_err(path, "need >= 1 feature column"))?;
    for (i, h) in header.iter().enumerate() {
        let want = if i < d { format!("f{i}") } else { "label".into() };
        if h != want {
            return Err(csv_err(path, format!("header column {i} is {h:?}, expected {want:?}")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for j in 0..d {
            features.push(rec[j].parse::<f64>().map_err(|e| csv_err(path, format!("row {line}, f{j}: {e}")))?);
        }
        labels.push(rec[d].parse::<usize>().map_err(|e| csv_err(path, format!("row {line}, label: {e}")))?);
    }
    let n = n_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    Ok(Dataset::new(features, d, labels, n)?)
}

/// Writes the dataset with full round-trip precision.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.label(i).to_string());
        wtr.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| csv_err(path, e))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F32Sidecar {
    pub rows: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub labels: Vec<usize>,
}

pub fn read_f32(path: &Path, sidecar: Option<&Path>) -> Result<Dataset, CliError> {
    let side_path = match sidecar {
        Some(p) => p.to_path_buf(),
        None => {
            let mut s = path.as_os_str().to_owned();
            s.push(".json");
            s.into()
        }
    };
    let text = std::fs::read_to_string(&side_path).map_err(|e| CliError::io(&side_path, e))?;
    let side: F32Sidecar = serde_json::from_str(&text).map_err(|e| csv_err(&side_path, e))?;
    if side.labels.len() != side.rows {
        return Err(csv_err(&side_path, format!("{} labels for {} rows", side.labels.len(), side.rows)));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::io(path, e))?;
    if bytes.len() != side.rows * side.dim * 4 {
        return Err(csv_err(path, format!("{} bytes, expected {}", bytes.len(), side.rows * side.dim * 4)));
    }
    let features = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Ok(Dataset::new(features, side.dim, side.labels, side.n_classes)?)
}

/// Loads the configured source; synthetic data without its own seed uses
/// the `synth` stream of `seed`.
pub fn load(source: &DataSource, seed: u64) -> Result<Dataset, CliError> {
    match source {
        DataSource::Csv { path, n_classes } => read_csv(path, *n_classes),
        DataSource::F32 { path, sidecar } => read_f32(path, sidecar.as_deref()),
        DataSource::Synthetic { recipe } => {
            let s = recipe.seed.unwrap_or_else(|| SeedSplitter::new(seed).derive("synth"));
            gaussian_clusters(recipe, s)
        }
    }
}
