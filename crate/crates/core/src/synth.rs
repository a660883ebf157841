//! Synthetic fixtures with planted structure.
//!
//! # Generator equations
//!
//! All directions live in `R^M`; `ξ` denotes a fresh standard-normal vector
//! scaled by `1/√M` (so `‖ξ‖ ≈ 1`) and `n(·)` is L2 normalization.
//!
//! - Five semantic groups (person, place, food, animal, vehicle) get random
//!   unit directions `g_c`; each group has two subgroups
//!   `s_{c,u} = n(g_c + 0.5·ξ)`.
//! - Caption `j` in subgroup `(c, u)` has latent `d_j = n(s_{c,u} + a·ξ_j)`
//!   with `a = caption_spread`, and text embedding
//!   `t_j = n(d_j + γ_t·h)` where `h` is a shared text offset.
//! - Image embeddings (training stimuli and bank rows) pick a caption `j`
//!   uniformly and use `n(d_j + σ·ξ + γ_i·o)` with `σ = image_noise` and a
//!   shared image offset `o`. Bank rows are scaled by a norm drawn from
//!   `U[bank_norm_min, bank_norm_max]`; stimuli stay unit-norm.
//! - Voxel `v` belongs to group `⌊5v/N⌋` and subgroup `v mod 2`, and is
//!   planted on a random caption `j(v)` of that subgroup:
//!   `W_v = β_v·n(d_{j(v)} + γ_w·q + ε·ξ_v)` with `β_v ~ U[2, 4]`, a shared
//!   weight offset `q` (the modality gap) and `ε = weight_noise`;
//!   `b_v ~ N(0, 0.5²)`.
//! - Activations are `Y = XW + b + E`. With a finite `snr` each voxel's noise
//!   is Gaussian with variance `Var_s(X W_v) / snr`; without one `E = 0`.
//!   Training activations are then z-scored per voxel and the planted
//!   `(W, b)` are transformed by the same affine map, so the linear model
//!   holds exactly for the stored files. Test activations use the training
//!   moments.
//! - ROI t-statistics: voxels of the ROI's group draw `t ~ U[2.5, 6]`, all
//!   others `t ~ U[−2, 1.5]`. ROIs are EBA (person), PPA (place) and FOOD.
//! - Category prompts are `n(g_c + γ_t·h)`, one per group.
//!
//! Caption texts come from per-subgroup templates whose vocabulary is
//! covered by the bundled lexicon; person captions mention people and no
//! other group does.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::tensor_io::{
    column_moments, ActivationMatrix, CaptionTable, EmbeddingMatrix, IoError, Matrix, VoxelStats,
};

pub const GROUPS: [&str; 5] = ["person", "place", "food", "animal", "vehicle"];
/// (ROI name, group index)
pub const ROIS: [(&str, usize); 3] = [("EBA", 0), ("PPA", 1), ("FOOD", 2)];

pub const TRAIN_EMBEDDINGS: &str = "train_embeddings.bscb";
pub const TRAIN_ACTIVATIONS: &str = "train_activations.bscb";
pub const TEST_EMBEDDINGS: &str = "test_embeddings.bscb";
pub const TEST_ACTIVATIONS: &str = "test_activations.bscb";
pub const PLANTED_WEIGHT: &str = "planted_weight.bscb";
pub const PLANTED_BIAS: &str = "planted_bias.bscb";
pub const PLANTED_CSV: &str = "planted.csv";
pub const CAPTIONS: &str = "captions.tsv";
pub const CAPTION_EMBEDDINGS: &str = "caption_embeddings.bscb";
pub const CATEGORIES: &str = "categories.txt";
pub const CATEGORY_EMBEDDINGS: &str = "category_embeddings.bscb";

pub fn bank_file(r: usize) -> String {
    format!("bank_{r}.bscb")
}

pub fn roi_file(name: &str) -> String {
    format!("tstat_{name}.bscb")
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub stimuli: usize,
    pub test_stimuli: usize,
    pub voxels: usize,
    pub dim: usize,
    pub captions_per_subgroup: usize,
    pub bank_size: usize,
    pub banks: usize,
    /// Signal-to-noise variance ratio; `None` means noiseless.
    pub snr: Option<f64>,
    pub caption_spread: f64,
    pub image_noise: f64,
    pub text_offset: f64,
    pub image_offset: f64,
    pub weight_offset: f64,
    pub weight_noise: f64,
    pub bank_norm_min: f64,
    pub bank_norm_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stimuli: 1024,
            test_stimuli: 256,
            voxels: 256,
            dim: 64,
            captions_per_subgroup: 60,
            bank_size: 20_000,
            banks: 5,
            snr: None,
            caption_spread: 0.6,
            image_noise: 0.3,
            text_offset: 0.5,
            image_offset: 0.5,
            weight_offset: 0.5,
            weight_noise: 0.1,
            bank_norm_min: 9.5,
            bank_norm_max: 10.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.stimuli < 2 || self.test_stimuli < 2 {
            return bad("stimuli and test_stimuli must be >= 2");
        }
        if self.voxels == 0 || self.dim < 2 {
            return bad("voxels must be >= 1 and dim >= 2");
        }
        if self.bank_size == 0 || self.banks == 0 {
            return bad("bank_size and banks must be >= 1");
        }
        let cap = max_captions_per_subgroup();
        if self.captions_per_subgroup == 0 || self.captions_per_subgroup > cap {
            return bad(&format!("captions_per_subgroup must be in 1..={cap}"));
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return bad("snr must be > 0 (omit it for noiseless data)");
            }
        }
        if !(self.bank_norm_min > 0.0 && self.bank_norm_min <= self.bank_norm_max) {
            return bad("need 0 < bank_norm_min <= bank_norm_max");
        }
        let scales = [
            self.caption_spread,
            self.image_noise,
            self.text_offset,
            self.image_offset,
            self.weight_offset,
            self.weight_noise,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("spread, noise and offset scales must be finite and >= 0");
        }
        Ok(())
    }
}

/// Subject phrases × continuation phrases for one subgroup.
struct Template {
    subjects: &'static [&'static str],
    rests: &'static [&'static str],
}

const PERSON_ACTIONS: &[&str] = &[
    "riding a horse",
    "holding an umbrella",
    "standing on a street",
    "playing with a frisbee",
    "flying a kite",
    "sitting on a bench",
    "walking on a beach",
    "talking on a phone",
    "posing for a picture",
    "crossing a busy street",
    "eating a sandwich",
    "riding a wave",
    "skiing down a snowy hill",
    "looking at the camera",
    "playing tennis",
    "standing next to a red bus",
    "cooking in a kitchen",
    "throwing a ball",
];
const INDOOR_DETAILS: &[&str] = &[
    "with wooden cabinets",
    "with a large window",
    "with a white bed",
    "filled with furniture",
    "with a couch and a table",
    "at night",
    "with a clock on the wall",
    "with a green wall",
    "with a wooden table",
    "with several chairs",
];
const OUTDOOR_DETAILS: &[&str] = &[
    "at night",
    "under a cloudy sky",
    "next to a river",
    "on a sunny day",
    "covered in snow",
    "lined with trees",
    "with a clock tower",
    "near the ocean",
    "with tall trees",
    "in the city",
];
const FOOD_SERVINGS: &[&str] = &[
    "a plate of fresh fruit",
    "a bowl of broccoli",
    "a box of donuts",
    "a tray of pizza",
    "a pile of oranges",
    "a close-up of bananas",
    "a plate of rice and vegetables",
    "a bowl of apples",
    "a close-up of a salad",
    "a plate of meat and cheese",
];
const FOOD_PLACEMENTS: &[&str] = &[
    "on a table",
    "on a wooden counter",
    "with a fork",
    "next to a cup of coffee",
    "in a kitchen",
    "on a tray",
];
const FOOD_DISHES: &[&str] = &[
    "a slice of pizza",
    "a sandwich",
    "a large cake",
    "a fresh salad",
    "a cup of coffee",
    "a bowl of soup",
    "a white plate of food",
    "a colorful salad",
    "a slice of cake",
    "a small pizza",
];
const FOOD_EXTRAS: &[&str] = &[
    "topped with cheese",
    "on a white plate",
    "with a fork",
    "on a wooden table",
    "next to a bowl of fruit",
    "with bread",
    "on a tray",
    "with carrots",
];
const ANIMAL_HOME: &[&str] = &[
    "sitting on a couch",
    "lying on a bed",
    "running on the grass",
    "standing in a field",
    "eating grass",
    "drinking water",
    "looking at the camera",
    "standing next to a tree",
];
const ANIMAL_WILD: &[&str] = &[
    "standing in a field",
    "walking through a forest",
    "eating grass",
    "drinking water",
    "standing next to a tree",
    "walking near a lake",
    "standing in the grass",
    "looking at the camera",
];
const ROAD_PLACES: &[&str] = &[
    "parked on a street",
    "driving down a road",
    "next to a building",
    "parked near a sign",
    "on a busy street",
    "in the city",
    "under a bridge",
    "in front of a house",
];
const TRANSIT_PLACES: &[&str] = &[
    "on the tracks",
    "at a station",
    "flying in the sky",
    "in the water",
    "on a lake",
    "next to a river",
    "under a cloudy sky",
    "at night",
];

/// `[group][subgroup]`
const TEMPLATES: [[Template; 2]; 5] = [
    [
        Template {
            subjects: &[
                "a man",
                "a woman",
                "a young boy",
                "a little girl",
                "a child",
                "a skier",
                "a surfer",
                "a chef",
                "a tennis player",
                "an old man",
                "a young woman",
                "a skateboarder",
                "a smiling woman",
                "a girl",
            ],
            rests: PERSON_ACTIONS,
        },
        Template {
            subjects: &[
                "two men",
                "two women",
                "a group of people",
                "three children",
                "several skiers",
                "two girls",
                "a couple of kids",
                "some tourists",
                "a crowd of people",
                "two boys",
                "four friends",
                "several players",
                "a man and a woman",
                "a family of three people",
            ],
            rests: PERSON_ACTIONS,
        },
    ],
    [
        Template {
            subjects: &[
                "a kitchen",
                "a bedroom",
                "a bathroom",
                "a living room",
                "a small room",
                "a modern kitchen",
                "a cozy bedroom",
                "an empty room",
                "a large restaurant",
                "a clean bathroom",
            ],
            rests: INDOOR_DETAILS,
        },
        Template {
            subjects: &[
                "a city street",
                "a tall building",
                "a large tower",
                "an old bridge",
                "a busy market",
                "a park",
                "a beach",
                "a mountain lake",
                "a narrow road",
                "a train station",
            ],
            rests: OUTDOOR_DETAILS,
        },
    ],
    [
        Template {
            subjects: FOOD_SERVINGS,
            rests: FOOD_PLACEMENTS,
        },
        Template {
            subjects: FOOD_DISHES,
            rests: FOOD_EXTRAS,
        },
    ],
    [
        Template {
            subjects: &[
                "a dog",
                "a black dog",
                "a brown cat",
                "a small cat",
                "a white horse",
                "a brown cow",
                "a sheep",
                "a little dog",
                "an old horse",
                "a white cat",
            ],
            rests: ANIMAL_HOME,
        },
        Template {
            subjects: &[
                "a giraffe",
                "a tall giraffe",
                "an elephant",
                "a large elephant",
                "a zebra",
                "two zebras",
                "a brown bear",
                "a black bear",
                "a bird",
                "a small bird",
            ],
            rests: ANIMAL_WILD,
        },
    ],
    [
        Template {
            subjects: &[
                "a red bus",
                "a white truck",
                "a black car",
                "a yellow bus",
                "a blue truck",
                "a motorcycle",
                "a bicycle",
                "an old car",
                "a large truck",
                "a small car",
            ],
            rests: ROAD_PLACES,
        },
        Template {
            subjects: &[
                "a train",
                "a red train",
                "a long train",
                "an airplane",
                "a large airplane",
                "a white boat",
                "a small boat",
                "a plane",
                "an old train",
                "a blue boat",
            ],
            rests: TRANSIT_PLACES,
        },
    ],
];

/// Largest `captions_per_subgroup` the templates can fill with distinct texts.
pub fn max_captions_per_subgroup() -> usize {
    TEMPLATES
        .iter()
        .flatten()
        .map(|t| t.subjects.len() * t.rests.len())
        .min()
        .expect("templates are nonempty")
}

/// Every text the templates can produce, `[group][subgroup]`.
pub fn all_template_texts() -> Vec<Vec<Vec<String>>> {
    TEMPLATES
        .iter()
        .map(|g| {
            g.iter()
                .map(|t| {
                    t.subjects
                        .iter()
                        .flat_map(|s| t.rests.iter().map(move |r| format!("{s} {r}")))
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard-normal vector scaled by `1/√dim`.
pub fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let s = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| normal(rng) * s)
        .collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yv, xv)| yv + a * xv).collect()
}

pub fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    normalize(&gaussian(rng, dim))
}

/// Rotates unit vector `v` by exactly `angle` radians towards a random
/// direction orthogonal to it.
pub fn rotate_by(v: &[f64], angle: f64, rng: &mut Rng) -> Vec<f64> {
    let g = gaussian(rng, v.len());
    let proj: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    let u = normalize(&axpy(-proj, v, &g));
    v.iter()
        .zip(&u)
        .map(|(a, b)| angle.cos() * a + angle.sin() * b)
        .collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Matrix, IoError> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::new(rows.len(), cols, rows.iter().flatten().map(|&v| v as f32).collect())
}

fn unit_matrix(rows: &[Vec<f64>]) -> Result<EmbeddingMatrix, IoError> {
    EmbeddingMatrix::raw(to_matrix(rows)?).normalize_rows()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantedVoxel {
    pub group: usize,
    pub subgroup: usize,
    /// Row of the planted caption in the caption table.
    pub caption_index: usize,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub config: SynthConfig,
    pub seed: u64,
    pub train_x: EmbeddingMatrix,
    pub train_y: ActivationMatrix,
    pub test_x: EmbeddingMatrix,
    pub test_y: ActivationMatrix,
    /// M×N planted weights in the units of the stored activations.
    pub planted_weight: Matrix,
    pub planted_bias: Vec<f32>,
    pub banks: Vec<EmbeddingMatrix>,
    pub captions: CaptionTable,
    pub caption_embeddings: EmbeddingMatrix,
    /// `(group, subgroup)` per caption row.
    pub caption_groups: Vec<(usize, usize)>,
    pub planted: Vec<PlantedVoxel>,
    pub rois: Vec<(String, VoxelStats)>,
    pub category_names: Vec<String>,
    pub category_embeddings: EmbeddingMatrix,
}

struct Latents {
    groups: Vec<Vec<f64>>,
    /// Caption latents `d_j`.
    captions: Vec<Vec<f64>>,
    text_offset: Vec<f64>,
    image_offset: Vec<f64>,
    weight_offset: Vec<f64>,
}

fn image_direction(lat: &Latents, cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let j = rng.random_range(0..lat.captions.len());
    let noisy = axpy(cfg.image_noise, &gaussian(rng, cfg.dim), &lat.captions[j]);
    normalize(&axpy(cfg.image_offset, &lat.image_offset, &noisy))
}

fn image_bank(lat: &Latents, cfg: &SynthConfig, rng: &mut Rng) -> Result<EmbeddingMatrix, IoError> {
    let rows: Vec<Vec<f64>> = (0..cfg.bank_size)
        .map(|_| {
            let dir = image_direction(lat, cfg, rng);
            let r = rng.random_range(cfg.bank_norm_min..=cfg.bank_norm_max);
            dir.into_iter().map(|v| v * r).collect()
        })
        .collect();
    Ok(EmbeddingMatrix::raw(to_matrix(&rows)?))
}

/// Builds a fixture from `cfg`; identical `(cfg, seed)` give identical output.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Fixture, SynthError> {
    cfg.validate()?;
    let m = cfg.dim;
    let n = cfg.voxels;

    // geometry
    let mut geo = rng::substream(seed, "synth/geometry");
    let groups: Vec<Vec<f64>> = (0..GROUPS.len()).map(|_| random_unit(&mut geo, m)).collect();
    let subgroups: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|g| {
            (0..2)
                .map(|_| normalize(&axpy(0.5, &gaussian(&mut geo, m), g)))
                .collect()
        })
        .collect();
    let text_offset = random_unit(&mut geo, m);
    let image_offset = random_unit(&mut geo, m);
    let weight_offset = random_unit(&mut geo, m);

    // captions
    let mut crng = rng::substream(seed, "synth/captions");
    let texts = all_template_texts();
    let mut caption_texts = Vec::new();
    let mut caption_latents = Vec::new();
    let mut caption_groups = Vec::new();
    for (c, subs) in texts.iter().enumerate() {
        for (u, pool) in subs.iter().enumerate() {
            let mut pool = pool.clone();
            pool.shuffle(&mut crng);
            for t in pool.into_iter().take(cfg.captions_per_subgroup) {
                caption_texts.push(t);
                caption_latents.push(normalize(&axpy(
                    cfg.caption_spread,
                    &gaussian(&mut crng, m),
                    &subgroups[c][u],
                )));
                caption_groups.push((c, u));
            }
        }
    }
    let lat = Latents {
        groups,
        captions: caption_latents,
        text_offset,
        image_offset,
        weight_offset,
    };
    let caption_embeddings = unit_matrix(
        &lat.captions
            .iter()
            .map(|d| axpy(cfg.text_offset, &lat.text_offset, d))
            .collect::<Vec<_>>(),
    )?;
    let captions = CaptionTable::from_texts(caption_texts)?;

    // stimuli
    let mut srng = rng::substream(seed, "synth/stimuli");
    let train_rows: Vec<Vec<f64>> = (0..cfg.stimuli).map(|_| image_direction(&lat, cfg, &mut srng)).collect();
    let test_rows: Vec<Vec<f64>> = (0..cfg.test_stimuli)
        .map(|_| image_direction(&lat, cfg, &mut srng))
        .collect();

    // voxels
    let mut vrng = rng::substream(seed, "synth/voxels");
    let per_sub = cfg.captions_per_subgroup;
    let mut planted = Vec::with_capacity(n);
    let mut w_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut bias = Vec::with_capacity(n);
    for v in 0..n {
        let group = v * GROUPS.len() / n;
        let subgroup = v % 2;
        let caption_index = (group * 2 + subgroup) * per_sub + vrng.random_range(0..per_sub);
        let dir = axpy(cfg.weight_offset, &lat.weight_offset, &lat.captions[caption_index]);
        let dir = normalize(&axpy(cfg.weight_noise, &gaussian(&mut vrng, m), &dir));
        let beta = vrng.random_range(2.0..4.0);
        w_cols.push(dir.into_iter().map(|x| x * beta).collect());
        bias.push(0.5 * normal(&mut vrng));
        planted.push(PlantedVoxel {
            group,
            subgroup,
            caption_index,
        });
    }

    // activations (f64 until the affine z-score map is applied)
    let predict = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|x| {
                w_cols
                    .iter()
                    .zip(&bias)
                    .map(|(w, b)| x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b)
                    .collect()
            })
            .collect()
    };
    let mut train_y = predict(&train_rows);
    let mut test_y = predict(&test_rows);
    if let Some(snr) = cfg.snr {
        let mut nrng = rng::substream(seed, "synth/noise");
        for v in 0..n {
            let col: Vec<f64> = train_y.iter().map(|r| r[v]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            let sd = (var / snr).sqrt();
            for row in train_y.iter_mut().chain(test_y.iter_mut()) {
                row[v] += sd * normal(&mut nrng);
            }
        }
    }
    let (mean, var) = column_moments_f64(&train_y);
    let sd: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    for row in train_y.iter_mut().chain(test_y.iter_mut()) {
        for v in 0..n {
            row[v] = (row[v] - mean[v]) / sd[v];
        }
    }
    let planted_weight = {
        let mut data = vec![0f32; m * n];
        for (v, w) in w_cols.iter().enumerate() {
            for (i, x) in w.iter().enumerate() {
                data[i * n + v] = (x / sd[v]) as f32;
            }
        }
        Matrix::new(m, n, data)?
    };
    let planted_bias: Vec<f32> = (0..n).map(|v| ((bias[v] - mean[v]) / sd[v]) as f32).collect();

    let train_y = to_matrix(&train_y)?;
    let z_ok = {
        let (mu, var) = column_moments(&train_y);
        mu.iter().zip(&var).all(|(m, v)| m.abs() <= 1e-3 && (v - 1.0).abs() <= 1e-3)
    };

    // banks
    let banks = (0..cfg.banks)
        .map(|r| image_bank(&lat, cfg, &mut rng::indexed_substream(seed, "synth/bank", r as u64)))
        .collect::<Result<Vec<_>, _>>()?;

    // localizer statistics
    let rois = ROIS
        .iter()
        .map(|&(name, g)| {
            let mut trng = rng::substream(seed, &format!("synth/roi/{name}"));
            let t: Vec<f32> = planted
                .iter()
                .map(|p| {
                    if p.group == g {
                        trng.random_range(2.5f32..6.0)
                    } else {
                        trng.random_range(-2.0f32..1.5)
                    }
                })
                .collect();
            Ok((name.to_string(), VoxelStats::new(t)?))
        })
        .collect::<Result<Vec<_>, IoError>>()?;

    let category_embeddings = unit_matrix(
        &lat.groups
            .iter()
            .map(|g| axpy(cfg.text_offset, &lat.text_offset, g))
            .collect::<Vec<_>>(),
    )?;

    Ok(Fixture {
        config: cfg.clone(),
        seed,
        train_x: unit_matrix(&train_rows)?,
        train_y: ActivationMatrix::new(train_y, z_ok)?,
        test_x: unit_matrix(&test_rows)?,
        test_y: ActivationMatrix::raw(to_matrix(&test_y)?),
        planted_weight,
        planted_bias,
        banks,
        captions,
        caption_embeddings,
        caption_groups,
        planted,
        rois,
        category_names: GROUPS.iter().map(|s| s.to_string()).collect(),
        category_embeddings,
    })
}

fn column_moments_f64(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows[0].len();
    let t = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; n];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= t);
    (mean, var)
}

impl Fixture {
    /// Caption row planted on each voxel.
    pub fn planted_caption_ids(&self) -> Vec<u64> {
        self.planted
            .iter()
            .map(|p| self.captions.get(p.caption_index).id)
            .collect()
    }

    pub fn planted_csv(&self) -> String {
        let mut out = String::from("voxel_id,group,subgroup,caption_id\n");
        for (v, (p, id)) in self.planted.iter().zip(self.planted_caption_ids()).enumerate() {
            out.push_str(&format!("{v},{},{},{id}\n", GROUPS[p.group], p.subgroup));
        }
        out
    }

    /// Writes every fixture file into `dir` (created if missing).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), IoError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let write_text = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|source| IoError::Io { path: p, source })
        };
        self.train_x.save(dir.join(TRAIN_EMBEDDINGS))?;
        self.train_y.save(dir.join(TRAIN_ACTIVATIONS))?;
        self.test_x.save(dir.join(TEST_EMBEDDINGS))?;
        self.test_y.save(dir.join(TEST_ACTIVATIONS))?;
        crate::tensor_io::save_matrix(dir.join(PLANTED_WEIGHT), &self.planted_weight, 0)?;
        VoxelStats::new(self.planted_bias.clone())?.save(dir.join(PLANTED_BIAS))?;
        write_text(PLANTED_CSV, &self.planted_csv())?;
        for (r, b) in self.banks.iter().enumerate() {
            b.save(dir.join(bank_file(r)))?;
        }
        self.captions.save(dir.join(CAPTIONS))?;
        self.caption_embeddings.save(dir.join(CAPTION_EMBEDDINGS))?;
        for (name, stats) in &self.rois {
            stats.save(dir.join(roi_file(name)))?;
        }
        write_text(CATEGORIES, &(self.category_names.join("\n") + "\n"))?;
        self.category_embeddings.save(dir.join(CATEGORY_EMBEDDINGS))?;
        Ok(())
    }
}

/// Isotropic planted linear model for encoder checks.
#[derive(Clone, Debug)]
pub struct PlantedLinear {
    pub x: EmbeddingMatrix,
    pub y: ActivationMatrix,
    /// M×N
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

/// `T` uniformly random unit stimuli in `R^M`, weights with i.i.d.
/// `N(0, weight_scale²)` entries, biases `N(0, 0.5²)`, and optional
/// per-voxel Gaussian noise at the given signal-to-noise variance ratio.
pub fn planted_linear(
    t: usize,
    m: usize,
    n: usize,
    weight_scale: f64,
    snr: Option<f64>,
    seed: u64,
) -> Result<PlantedLinear, IoError> {
    let mut rng = rng::substream(seed, "synth/planted_linear");
    let x_rows: Vec<Vec<f64>> = (0..t).map(|_| random_unit(&mut rng, m)).collect();
    let w: Vec<f64> = (0..m * n)
        .map(|_| weight_scale * normal(&mut rng))
        .collect();
    let b: Vec<f64> = (0..n).map(|_| 0.5 * normal(&mut rng)).collect();
    let mut y: Vec<Vec<f64>> = x_rows
        .iter()
        .map(|x| {
            (0..n)
                .map(|v| (0..m).map(|i| x[i] * w[i * n + v]).sum::<f64>() + b[v])
                .collect()
        })
        .collect();
    if let Some(snr) = snr {
        let (_, var) = column_moments_f64(&y);
        for row in y.iter_mut() {
            for v in 0..n {
                row[v] += (var[v] / snr).sqrt() * normal(&mut rng);
            }
        }
    }
    Ok(PlantedLinear {
        x: unit_matrix(&x_rows)?,
        y: ActivationMatrix::raw(to_matrix(&y)?),
        weight: Matrix::new(m, n, w.iter().map(|&v| v as f32).collect())?,
        bias: b.iter().map(|&v| v as f32).collect(),
    })
}

/// `per` points around each of the given unit centers, each rotated away
/// from its center by `spread` radians; returns rows and true labels.
pub fn direction_clusters(
    centers: &[Vec<f64>],
    per: usize,
    spread: f64,
    seed: u64,
) -> Result<(EmbeddingMatrix, Vec<usize>), IoError> {
    let mut rng = rng::substream(seed, "synth/direction_clusters");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            let angle = spread * rng.random::<f64>();
            rows.push(rotate_by(center, angle, &mut rng));
            labels.push(c);
        }
    }
    Ok((unit_matrix(&rows)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{tokenize, Lexicon};

    fn small() -> SynthConfig {
        SynthConfig {
            stimuli: 64,
            test_stimuli: 16,
            voxels: 20,
            dim: 16,
            captions_per_subgroup: 4,
            bank_size: 50,
            banks: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn template_vocabulary_is_in_the_lexicon() {
        let lex = Lexicon::default_english();
        for (g, subs) in all_template_texts().iter().enumerate() {
            for t in subs.iter().flatten() {
                for tok in tokenize(t) {
                    assert!(lex.contains_surface(&tok), "{tok:?} in {t:?}");
                }
                let person = crate::analysis::person_mention(t, &lex) != crate::analysis::PersonMention::None;
                assert_eq!(person, g == 0, "{t:?}");
            }
        }
        assert!(max_captions_per_subgroup() >= 60);
    }

    #[test]
    fn same_seed_same_fixture() {
        let a = generate(&small(), 7).unwrap();
        let b = generate(&small(), 7).unwrap();
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.train_y, b.train_y);
        assert_eq!(a.banks, b.banks);
        assert_eq!(a.captions, b.captions);
        let c = generate(&small(), 8).unwrap();
        assert_ne!(a.train_x, c.train_x);
    }

    #[test]
    fn stored_model_is_exact_when_noiseless() {
        let f = generate(&small(), 3).unwrap();
        assert!(f.train_y.is_z_scored());
        let n = f.config.voxels;
        for s in 0..f.config.stimuli {
            let x = f.train_x.row(s);
            for v in 0..n {
                let pred: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, &xi)| xi as f64 * f.planted_weight.get(i, v) as f64)
                    .sum::<f64>()
                    + f.planted_bias[v] as f64;
                assert!((pred - f.train_y.get(s, v) as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn shapes_and_flags() {
        let f = generate(&small(), 1).unwrap();
        assert_eq!(f.captions.len(), 5 * 2 * 4);
        assert_eq!(f.caption_embeddings.rows(), f.captions.len());
        assert!(f.caption_embeddings.is_unit_norm());
        assert_eq!(f.banks.len(), 2);
        assert_eq!(f.banks[0].rows(), 50);
        let norm = crate::tensor_io::row_norm(f.banks[0].row(0));
        assert!(norm > 9.5 - 1e-4 && norm < 10.5 + 1e-4);
        assert_eq!(f.rois.len(), 3);
        for (v, p) in f.planted.iter().enumerate() {
            let t = f.rois[0].1.values()[v];
            assert_eq!(t > 2.0, p.group == 0);
        }
    }

    #[test]
    fn rotate_by_exact_angle() {
        let mut rng = rng::substream(0, "t");
        let v = random_unit(&mut rng, 8);
        let r = rotate_by(&v, 10f64.to_radians(), &mut rng);
        let c: f64 = v.iter().zip(&r).map(|(a, b)| a * b).sum();
        assert!((c - 10f64.to_radians().cos()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            snr: Some(0.0),
            ..small()
        };
        assert!(generate(&bad, 0).is_err());
        let bad = SynthConfig {
            captions_per_subgroup: 10_000,
            ..small()
        };
        assert!(generate(&bad, 0).is_err());
    }
}
