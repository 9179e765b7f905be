//! Lesion candidates from probability maps and their matching against
//! ground-truth lesions.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Grid, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }
}

/// Foreground voxels partitioned into connected components. Labels run
/// `1..=count` in order of each component's first voxel in scan order;
/// background is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub grid: Grid,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Voxel indices of every component, ascending within each.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims;
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; grid.voxel_count()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..labels.len() {
        if labels[seed] != 0 || !mask.contains(seed) {
            continue;
        }
        count += 1;
        labels[seed] = count;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = grid.coords(i);
            for d in &offsets {
                let (qx, qy, qz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                    continue;
                }
                let j = grid.linear_index(qx as usize, qy as usize, qz as usize);
                if labels[j] == 0 && mask.contains(j) {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    Components {
        grid,
        labels,
        count: count as usize,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionCandidate {
    /// Ascending voxel indices.
    pub voxels: Vec<usize>,
    pub score: f64,
    /// First voxel in scan order attaining `score`.
    pub peak: usize,
    /// Mean voxel coordinate.
    pub centroid: [f64; 3],
    pub volume_mm3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionProtocol {
    pub threshold: f64,
    pub min_volume_mm3: f64,
    pub iou_threshold: f64,
    pub connectivity: Connectivity,
}

impl Default for DetectionProtocol {
    fn default() -> Self {
        DetectionProtocol {
            threshold: 0.5,
            min_volume_mm3: 10.0,
            iou_threshold: 0.1,
            connectivity: Connectivity::TwentySix,
        }
    }
}

fn by_score(a: &LesionCandidate, b: &LesionCandidate) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.peak.cmp(&b.peak))
}

/// Components of `{prob ≥ threshold}` of at least `min_volume_mm3`, scored
/// by their maximum, highest score first (ties in scan order).
pub fn extract_candidates(prob: &Volume3D, threshold: f64, min_volume_mm3: f64) -> Result<Vec<LesionCandidate>> {
    extract_with(prob, threshold, min_volume_mm3, Connectivity::TwentySix)
}

pub fn extract_with(
    prob: &Volume3D,
    threshold: f64,
    min_volume_mm3: f64,
    connectivity: Connectivity,
) -> Result<Vec<LesionCandidate>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("candidate threshold {threshold} must lie in (0, 1)")));
    }
    if prob.channels() != 1 {
        return Err(Error::Shape("probability map must have one channel".into()));
    }
    let grid = *prob.grid();
    let values = prob.data();
    let bits: Vec<bool> = values.iter().map(|&v| v >= threshold).collect();
    let comps = connected_components(&BinaryMask::from_bools(grid, &bits)?, connectivity);
    let voxel_volume = grid.voxel_volume();
    let mut out = Vec::new();
    for voxels in comps.members() {
        let volume_mm3 = voxels.len() as f64 * voxel_volume;
        if volume_mm3 < min_volume_mm3 {
            continue;
        }
        let mut peak = voxels[0];
        let mut sum = [0.0; 3];
        for &i in &voxels {
            if values[i] > values[peak] {
                peak = i;
            }
            let c = grid.coords(i);
            for a in 0..3 {
                sum[a] += c[a] as f64;
            }
        }
        let n = voxels.len() as f64;
        out.push(LesionCandidate {
            score: values[peak],
            peak,
            centroid: sum.map(|s| s / n),
            volume_mm3,
            voxels,
        });
    }
    out.sort_by(by_score);
    Ok(out)
}

/// A candidate with its match outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCandidate {
    pub candidate: LesionCandidate,
    pub tp: bool,
    /// Index of the ground-truth lesion it hit (label − 1).
    pub gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Highest score first.
    pub candidates: Vec<MatchedCandidate>,
    pub gt_hit: Vec<bool>,
}

fn iou(a: &[usize], b: &[usize]) -> f64 {
    // Both sorted ascending.
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// A candidate is a true positive when its peak lies in a ground-truth
/// lesion, or its voxel IoU with one reaches `iou_threshold`. Candidates are
/// processed by descending score; a lesion may be hit more than once.
pub fn match_candidates(candidates: &[LesionCandidate], gt: &Components, iou_threshold: f64) -> Result<MatchResult> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(by_score);
    let lesions = gt.members();
    let mut gt_hit = vec![false; gt.count];
    let mut out = Vec::with_capacity(sorted.len());
    for c in sorted {
        if c.voxels.iter().any(|&v| v >= gt.labels.len()) {
            return Err(Error::GridMismatch("candidate lies outside the ground-truth grid".into()));
        }
        let peak_label = gt.labels[c.peak];
        let hit = if peak_label > 0 {
            Some(peak_label as usize - 1)
        } else {
            let mut best: Option<(usize, f64)> = None;
            let mut touched: Vec<usize> = c
                .voxels
                .iter()
                .filter(|&&v| gt.labels[v] > 0)
                .map(|&v| gt.labels[v] as usize - 1)
                .collect();
            touched.sort_unstable();
            touched.dedup();
            for k in touched {
                let score = iou(&c.voxels, &lesions[k]);
                if score >= iou_threshold && best.is_none_or(|(_, b)| score > b) {
                    best = Some((k, score));
                }
            }
            best.map(|(k, _)| k)
        };
        if let Some(k) = hit {
            gt_hit[k] = true;
        }
        out.push(MatchedCandidate {
            candidate: c,
            tp: hit.is_some(),
            gt: hit,
        });
    }
    Ok(MatchResult {
        candidates: out,
        gt_hit,
    })
}

/// Candidates and ground truth of one case, ready for FROC pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDetections {
    pub case_id: String,
    pub n_gt: usize,
    pub candidates: Vec<MatchedCandidate>,
}

pub fn detect_case(
    case_id: &str,
    prob: &Volume3D,
    lesion: &BinaryMask,
    protocol: &DetectionProtocol,
) -> Result<CaseDetections> {
    if !prob.grid().same_lattice(lesion.grid()) {
        return Err(Error::GridMismatch("prediction and lesion mask grids differ".into()));
    }
    let cands = extract_with(prob, protocol.threshold, protocol.min_volume_mm3, protocol.connectivity)?;
    let gt = connected_components(lesion, protocol.connectivity);
    let m = match_candidates(&cands, &gt, protocol.iou_threshold)?;
    Ok(CaseDetections {
        case_id: case_id.to_string(),
        n_gt: gt.count,
        candidates: m.candidates,
    })
}

#[derive(Serialize)]
struct CandidateRow<'a> {
    case_id: &'a str,
    candidate_id: usize,
    score: f64,
    centroid_x: f64,
    centroid_y: f64,
    centroid_z: f64,
    volume_mm3: f64,
    tp_flag: u8,
}

pub fn write_candidates_csv(path: &Path, cases: &[CaseDetections]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for case in cases {
        for (k, m) in case.candidates.iter().enumerate() {
            let c = &m.candidate;
            w.serialize(CandidateRow {
                case_id: &case.case_id,
                candidate_id: k,
                score: c.score,
                centroid_x: c.centroid[0],
                centroid_y: c.centroid[1],
                centroid_z: c.centroid[2],
                volume_mm3: c.volume_mm3,
                tp_flag: m.tp as u8,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
