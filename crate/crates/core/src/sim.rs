//! Synthetic phantoms and measurement synthesis.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cem::{CemModel, CurrentFrame, MeasurementPattern};
use crate::error::{EitError, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Disk { center, radius } => (x - center[0]).hypot(y - center[1]) < *radius,
            Shape::Polygon { vertices } => point_in_polygon(vertices, x, y),
        }
    }

    /// Largest distance from the origin reached by the shape.
    fn extent(&self) -> f64 {
        match self {
            Shape::Disk { center, radius } => center[0].hypot(center[1]) + radius,
            Shape::Polygon { vertices } => vertices
                .iter()
                .map(|v| v[0].hypot(v[1]))
                .fold(0.0, f64::max),
        }
    }
}

/// Even-odd ray casting along +x.
pub fn point_in_polygon(vertices: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[(i + n - 1) % n];
        if (yi > y) != (yj > y) {
            let cross = xi + (y - yi) * (xj - xi) / (yj - yi);
            if x < cross {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub shape: Shape,
    pub conductivity: f64,
}

/// Piecewise-constant conductivity: background plus inclusions (later ones on top).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub background: f64,
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    pub fn homogeneous(background: f64) -> Self {
        Phantom { background, inclusions: Vec::new() }
    }

    /// One conductive disk and one resistive square, both clear of the electrodes that
    /// are dropped first when the number of active electrodes is reduced.
    pub fn two_inclusions(background: f64) -> Self {
        Phantom {
            background,
            inclusions: vec![
                Inclusion {
                    shape: Shape::Disk { center: [-0.35, 0.3], radius: 0.3 },
                    conductivity: 5.0 * background,
                },
                Inclusion {
                    shape: Shape::Polygon {
                        vertices: vec![[0.15, 0.2], [0.65, 0.2], [0.65, 0.6], [0.15, 0.6]],
                    },
                    conductivity: 0.2 * background,
                },
            ],
        }
    }

    pub fn by_name(name: &str, background: f64) -> Result<Self> {
        match name {
            "two-inclusions" => Ok(Self::two_inclusions(background)),
            "homogeneous" | "empty" => Ok(Self::homogeneous(background)),
            _ => Err(EitError::Config(format!(
                "unknown phantom `{name}` (expected two-inclusions or homogeneous)"
            ))),
        }
    }

    pub fn validate(&self, domain_radius: f64) -> Result<()> {
        if !(self.background > 0.0) || !self.background.is_finite() {
            return Err(EitError::Validation(format!(
                "background conductivity must be positive, got {}",
                self.background
            )));
        }
        for (k, inc) in self.inclusions.iter().enumerate() {
            if !(inc.conductivity > 0.0) || !inc.conductivity.is_finite() {
                return Err(EitError::Validation(format!(
                    "inclusion {k} has nonpositive conductivity {}",
                    inc.conductivity
                )));
            }
            if let Shape::Polygon { vertices } = &inc.shape {
                if vertices.len() < 3 {
                    return Err(EitError::Validation(format!("inclusion {k}: polygon needs 3 vertices")));
                }
            }
            if let Shape::Disk { radius, .. } = inc.shape {
                if !(radius > 0.0) {
                    return Err(EitError::Validation(format!("inclusion {k}: radius must be positive")));
                }
            }
            if inc.shape.extent() >= domain_radius {
                return Err(EitError::Validation(format!(
                    "inclusion {k} touches the boundary of the radius-{domain_radius} domain"
                )));
            }
        }
        Ok(())
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.inclusions
            .iter()
            .rev()
            .find(|inc| inc.shape.contains(x, y))
            .map_or(self.background, |inc| inc.conductivity)
    }

    /// Nodal contrast `ξ` at the interior nodes of `mesh`; boundary nodes stay at the background.
    pub fn rasterize(&self, mesh: &Mesh) -> Result<DVector<f64>> {
        self.validate(domain_radius(mesh))?;
        Ok(DVector::from_iterator(
            mesh.n_interior(),
            mesh.nodes()
                .iter()
                .filter(|n| !n.is_boundary)
                .map(|n| self.value_at(n.x, n.y) - self.background),
        ))
    }
}

/// Largest boundary node distance from the origin.
pub fn domain_radius(mesh: &Mesh) -> f64 {
    mesh.nodes()
        .iter()
        .filter(|n| n.is_boundary)
        .map(|n| n.x.hypot(n.y))
        .fold(0.0, f64::max)
}

/// Number of injections for each supported count of active electrodes.
pub const INJECTION_COUNTS: [(usize, usize); 7] =
    [(32, 76), (30, 56), (28, 52), (26, 48), (24, 44), (22, 30), (20, 27)];

/// Injections and measurements when the first `l_active` of 32 electrodes are in use.
/// Every other active electrode injects; pairs of injectors are taken at cyclic skip
/// distance 1, 2, ... until the tabulated count is reached. Measurements are adjacent
/// differences among active electrodes, the same set for every injection.
pub fn ktc_injection_schedule(
    l_active: usize,
    amplitude: f64,
) -> Result<(CurrentFrame, MeasurementPattern, Vec<(usize, usize)>)> {
    const TOTAL: usize = 32;
    let n_inj = INJECTION_COUNTS
        .iter()
        .find(|(l, _)| *l == l_active)
        .map(|(_, n)| *n)
        .ok_or_else(|| {
            EitError::Config(format!(
                "unsupported number of active electrodes {l_active} (expected one of 32, 30, 28, 26, 24, 22, 20)"
            ))
        })?;
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(EitError::Config(format!("current amplitude must be positive, got {amplitude}")));
    }
    let injectors: Vec<usize> = (0..l_active).step_by(2).collect();
    let k = injectors.len();
    let mut pairs = Vec::with_capacity(n_inj);
    'outer: for d in 1..k {
        for i in 0..k {
            if pairs.len() == n_inj {
                break 'outer;
            }
            let pair = (injectors[i], injectors[(i + d) % k]);
            if !pairs.iter().any(|&(a, b)| (a, b) == (pair.1, pair.0)) {
                pairs.push(pair);
            }
        }
    }
    if pairs.len() != n_inj {
        return Err(EitError::Config(format!(
            "only {} distinct injection pairs available for {l_active} electrodes",
            pairs.len()
        )));
    }
    let frame = CurrentFrame::from_pairs(TOTAL, &pairs, amplitude)?;
    let meas_pairs: Vec<(usize, usize)> = (0..l_active).map(|l| (l, (l + 1) % l_active)).collect();
    let meas = MeasurementPattern::from_pairs(TOTAL, &meas_pairs)?;
    Ok((frame, meas, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMesh {
    pub radius: f64,
    pub target_h: f64,
    pub nodes: usize,
}

/// Synthetic measurements with their full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub n_electrodes: usize,
    pub l_active: Option<usize>,
    pub sigma0: f64,
    pub contact_impedance: Vec<f64>,
    /// One L-vector of currents per injection.
    pub currents: Vec<Vec<f64>>,
    /// Measured differences `U_a - U_b`.
    pub measurement_pairs: Vec<(usize, usize)>,
    pub noise_scale: f64,
    pub seed: u64,
    pub data: Vec<f64>,
    /// Same acquisition on the homogeneous background with its own noise, the analogue of
    /// a water-tank measurement.
    pub reference: Vec<f64>,
    pub phantom: Phantom,
    pub generation_mesh: GenerationMesh,
}

impl SyntheticDataset {
    pub fn current_frame(&self) -> Result<CurrentFrame> {
        let k = self.currents.len();
        let l = self.n_electrodes;
        if self.currents.iter().any(|c| c.len() != l) {
            return Err(EitError::Validation(format!("every injection needs {l} currents")));
        }
        CurrentFrame::new(DMatrix::from_fn(l, k, |r, c| self.currents[c][r]))
    }

    pub fn measurement_pattern(&self) -> Result<MeasurementPattern> {
        MeasurementPattern::from_pairs(self.n_electrodes, &self.measurement_pairs)
    }

    pub fn data_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn reference_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reference)
    }

    /// `b - b_ref + F(0)`: swaps the homogeneous part of the data for the model's own,
    /// cancelling discretization error that the inclusions do not cause.
    pub fn reference_corrected(&self, model_background: &DVector<f64>) -> Result<DVector<f64>> {
        if model_background.len() != self.data.len() {
            return Err(EitError::Validation(format!(
                "background prediction has {} values, dataset has {}",
                model_background.len(),
                self.data.len()
            )));
        }
        Ok(self.data_vector() - self.reference_vector() + model_background)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| EitError::Validation(format!("cannot serialize dataset: {e}")))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let ds: SyntheticDataset = serde_json::from_str(text)
            .map_err(|e| EitError::parse(origin, e.line(), e.to_string()))?;
        let expected = ds.currents.len() * ds.measurement_pairs.len();
        if ds.data.len() != expected {
            return Err(EitError::Validation(format!(
                "{}: dataset holds {} values, its patterns produce {expected}",
                origin.display(),
                ds.data.len()
            )));
        }
        if ds.reference.len() != expected {
            return Err(EitError::Validation(format!(
                "{}: reference holds {} values, expected {expected}",
                origin.display(),
                ds.reference.len()
            )));
        }
        ds.current_frame()?;
        ds.measurement_pattern()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| EitError::io(path, e))
    }
}

/// Inputs to [`synthesize`] besides the phantom and mesh.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub currents: CurrentFrame,
    pub meas: MeasurementPattern,
    pub contact_impedance: Vec<f64>,
    pub noise_scale: f64,
    pub seed: u64,
    pub l_active: Option<usize>,
}

/// `b = F(ξ_true) + ω g` on the generation mesh with seeded standard normal `g`. The
/// reference `F(0) + ω g'` draws `g'` from the same stream after `g`.
pub fn synthesize(
    phantom: &Phantom,
    gen_mesh: &Mesh,
    target_h: f64,
    acq: &Acquisition,
) -> Result<SyntheticDataset> {
    if !(acq.noise_scale >= 0.0) || !acq.noise_scale.is_finite() {
        return Err(EitError::Config(format!(
            "noise scale must be nonnegative, got {}",
            acq.noise_scale
        )));
    }
    let xi = phantom.rasterize(gen_mesh)?;
    let model = CemModel::new(gen_mesh, phantom.background, acq.contact_impedance.clone())?;
    let clean = model.forward(&xi, &acq.currents, &acq.meas)?;
    let background = model.forward(
        &DVector::zeros(gen_mesh.n_interior()),
        &acq.currents,
        &acq.meas,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
    let mut noisy = |clean: &DVector<f64>| -> Vec<f64> {
        clean
            .iter()
            .map(|v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                v + acq.noise_scale * g
            })
            .collect()
    };
    let data = noisy(&clean);
    let reference = noisy(&background);
    let pairs = acq.meas.pairs().map(<[_]>::to_vec).ok_or_else(|| {
        EitError::Config("datasets store difference measurements given as electrode pairs".into())
    })?;
    Ok(SyntheticDataset {
        n_electrodes: model.n_electrodes(),
        l_active: acq.l_active,
        sigma0: phantom.background,
        contact_impedance: acq.contact_impedance.clone(),
        currents: acq
            .currents
            .patterns()
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
        measurement_pairs: pairs,
        noise_scale: acq.noise_scale,
        seed: acq.seed,
        data,
        reference,
        phantom: phantom.clone(),
        generation_mesh: GenerationMesh {
            radius: domain_radius(gen_mesh),
            target_h,
            nodes: gen_mesh.nodes().len(),
        },
    })
}
