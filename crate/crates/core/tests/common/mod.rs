#![allow(dead_code)]

use cast_core::corpus::{CrystalSystem, DropReason, FilterDecision, GlobalTags, PropertyRecord, SharingMode};
use cast_core::crystal::{build_periodic_graph, AtomSite, CrystalStructure, Element, Lattice};
use cast_core::encoders::{StructureEncoderConfig, TextEncoderConfig, CLS};
use cast_core::fusion::{contrastive_loss, AttentionMap, Model, ModelConfig, ModelInput, Variant};
use cast_core::nn::{finite_diff_check, Activation, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor};

pub fn tags() -> GlobalTags {
    GlobalTags {
        crystal_system: CrystalSystem::Orthorhombic,
        space_group_label: "Pbcn".into(),
        sharing_mode: SharingMode {
            edge_sharing: true,
            ..Default::default()
        },
        bond_range: (2.14, 2.24),
        octahedral_tilt: None,
    }
}

pub fn structure(lattice: Lattice, sites: &[(&str, [f64; 3])]) -> CrystalStructure {
    let sites = sites
        .iter()
        .map(|(s, f)| AtomSite::new(Element::from_symbol(s).unwrap(), *f).unwrap())
        .collect();
    CrystalStructure::new("fixture", lattice, sites, tags()).unwrap()
}

/// Three-site cell used by the small-model gradient checks.
pub fn three_site() -> CrystalStructure {
    structure(
        Lattice::from_parameters(4.1, 4.4, 4.7, 88.0, 93.0, 91.0).unwrap(),
        &[("Pb", [0.1, 0.2, 0.3]), ("O", [0.55, 0.45, 0.6]), ("Ti", [0.8, 0.9, 0.05])],
    )
}

/// Fusion model with node width 16, text width 32 and two fusion layers.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        structure: StructureEncoderConfig {
            dim: 16,
            layers: 2,
            cutoff: 4.0,
            rbf_k: 8,
            activation: Activation::Silu,
        },
        text: TextEncoderConfig {
            dim: 32,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            max_len: 16,
            activation: Activation::Gelu,
        },
        fusion_layers: 2,
        fusion_heads: 2,
        ffn_mult: 2,
        head_hidden: 8,
        contrastive_dim: 8,
    }
}

pub fn tiny_input(cfg: &ModelConfig, tokens: Vec<u32>) -> ModelInput {
    let s = three_site();
    let graph = build_periodic_graph(&s, cfg.structure.cutoff, &cfg.structure.rbf()).unwrap();
    ModelInput {
        id: "fixture".into(),
        graph,
        tokens,
        descriptors: vec![0.3, -1.2, 0.7, 1.5],
    }
}

pub fn record(targets: &[(&str, f64)], aux: &[(&str, f64)]) -> PropertyRecord {
    PropertyRecord {
        targets: targets.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        aux: aux.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Twelve records, one per filter rule plus keeps, boundary cases and two
/// records where several rules fire. The expected decision for each was
/// worked out by hand from the rule list.
pub fn filter_fixture() -> Vec<(&'static str, PropertyRecord, Vec<Element>, FilterDecision)> {
    use DropReason::*;
    use FilterDecision::{Drop, Keep};
    let el = |s: &[&str]| s.iter().map(|x| Element::from_symbol(x).unwrap()).collect::<Vec<_>>();
    let g = [("G_vrh", 20.0), ("K_vrh", 50.0)];
    let base = [
        ("G_reuss", 10.0),
        ("G_voigt", 30.0),
        ("K_reuss", 40.0),
        ("K_voigt", 60.0),
        ("e_above_hull", 0.01),
        ("formation_energy", -2.0),
    ];
    let with = |changes: &[(&'static str, f64)]| {
        let mut aux: Vec<(&str, f64)> = base.to_vec();
        let mut tg: Vec<(&str, f64)> = g.to_vec();
        for (k, v) in changes {
            if let Some(e) = aux.iter_mut().find(|e| e.0 == *k) {
                e.1 = *v;
            } else if let Some(e) = tg.iter_mut().find(|e| e.0 == *k) {
                e.1 = *v;
            }
        }
        record(&tg, &aux)
    };
    vec![
        ("nominal", with(&[]), el(&["Pb", "O"]), Keep),
        ("hull", with(&[("e_above_hull", 0.2)]), el(&["Pb", "O"]), Drop(EnergyTooHigh)),
        ("formation-high", with(&[("formation_energy", 0.2)]), el(&["Ti", "O"]), Drop(EnergyTooHigh)),
        ("negative-reuss", with(&[("G_reuss", -1.0)]), el(&["Ti", "O"]), Drop(NonPositiveModulus)),
        ("k-order", with(&[("K_reuss", 55.0)]), el(&["Na", "Cl"]), Drop(ModulusOrdering)),
        ("xenon", with(&[]), el(&["Xe", "F"]), Drop(NobleGas)),
        ("formation-low", with(&[("formation_energy", -12.0)]), el(&["Li", "F"]), Drop(FormationEnergyTooLow)),
        (
            "stiff",
            with(&[("G_vrh", 1500.0), ("G_reuss", 1400.0), ("G_voigt", 1600.0)]),
            el(&["Fe"]),
            Drop(ModulusTooLarge),
        ),
        ("hull-and-xenon", with(&[("e_above_hull", 0.3)]), el(&["Xe"]), Drop(EnergyTooHigh)),
        ("xenon-and-low", with(&[("formation_energy", -12.0)]), el(&["Ar", "O"]), Drop(NobleGas)),
        ("unknown-fields", record(&[], &[]), el(&["Cu"]), Keep),
        (
            "boundaries",
            with(&[
                ("e_above_hull", 0.15),
                ("formation_energy", -10.0),
                ("G_vrh", 1000.0),
                ("G_reuss", 900.0),
                ("G_voigt", 1100.0),
            ]),
            el(&["Ba", "O"]),
            Keep,
        ),
    ]
}

/// Every (src, dst, offset, distance) with 0 < distance ≤ cutoff, found by
/// looping over a supercell wide enough to reach the cutoff. With a cutoff
/// below every plane spacing this is the 3×3×3 supercell.
pub fn supercell_neighbors(s: &CrystalStructure, cutoff: f64) -> Vec<(usize, usize, [i32; 3], f64)> {
    let lat = &s.lattice;
    let reach: Vec<i32> = lat.plane_spacings().iter().map(|d| (cutoff / d).floor() as i32 + 1).collect();
    let b = lat.basis();
    let mut out = Vec::new();
    for (i, si) in s.sites().iter().enumerate() {
        for (j, sj) in s.sites().iter().enumerate() {
            for x in -reach[0]..=reach[0] {
                for y in -reach[1]..=reach[1] {
                    for z in -reach[2]..=reach[2] {
                        let fi = si.frac();
                        let fj = sj.frac();
                        let df = [fj[0] - fi[0] + x as f64, fj[1] - fi[1] + y as f64, fj[2] - fi[2] + z as f64];
                        let mut d2 = 0.0;
                        for k in 0..3 {
                            let c = df[0] * b[0][k] + df[1] * b[1][k] + df[2] * b[2][k];
                            d2 += c * c;
                        }
                        let d = d2.sqrt();
                        if d > 1e-8 && d <= cutoff {
                            out.push((i, j, [x, y, z], d));
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|a| (a.0, a.1, a.2));
    out
}

pub const TINY_VOCAB: usize = 16;

/// `[CLS]` followed by seven ordinary tokens.
pub fn eight_tokens() -> Vec<u32> {
    vec![CLS, 4, 9, 5, 12, 7, 4, 15]
}

/// Finite-difference check of a freshly initialized tiny `variant` under its
/// training loss: masked-node cross-entropy plus the regression output for
/// the fused and graph-only models, absolute error against a distant target
/// for the rest. `min_coords = None` probes every parameter coordinate.
pub fn model_gradcheck(variant: Variant, seed: u64, min_coords: Option<usize>) -> GradCheckReport {
    let cfg = tiny_config();
    let x = tiny_input(&cfg, eight_tokens());
    let mut store = ParamStore::new(seed);
    let model = Model::new(&mut store, variant, &cfg, TINY_VOCAB, x.descriptors.len()).unwrap();
    let labels: Vec<usize> = x.graph.node_elements.iter().map(|e| e.id()).collect();
    let masked = [true, false, true];
    let objective = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let loss = match variant {
            Variant::Cast | Variant::GraphOnly => {
                let logits = model.mnp_logits(&mut g, &x, &masked)?;
                let rows: Vec<usize> = (0..3).filter(|&i| masked[i]).map(|i| labels[i]).collect();
                let ce = g.cross_entropy_masked(logits, &rows, &vec![true; rows.len()])?;
                let p = model.predict(&mut g, &x)?;
                g.add(ce, p)?
            }
            _ => {
                let p = model.predict(&mut g, &x)?;
                g.mae(p, &[10.0])?
            }
        };
        Ok((g.value(loss).item(), g.backward(loss)?))
    };
    let opts = GradCheckOptions {
        min_coords: min_coords.unwrap_or(usize::MAX),
        ..Default::default()
    };
    finite_diff_check(&mut store, objective, &opts).unwrap()
}

/// Largest relative error over coordinates whose analytic gradient is at
/// least `floor` in magnitude.
pub fn max_rel_error_above(r: &GradCheckReport, floor: f64) -> f64 {
    r.coords
        .iter()
        .filter(|c| c.analytic.abs() >= floor)
        .map(|c| c.rel_error)
        .fold(0.0, f64::max)
}

/// A generated structure of up to six sites with a random token sequence
/// (some ending in PAD), both built for `cfg`.
pub fn random_input(cfg: &ModelConfig, seed: u64) -> ModelInput {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gen = cast_core::corpus::GenConfig {
        max_sites: 6,
        ..Default::default()
    };
    let s = cast_core::corpus::generate_crystal(seed, &gen).unwrap();
    let graph = build_periodic_graph(&s, cfg.structure.cutoff, &cfg.structure.rbf()).unwrap();
    let len = rng.gen_range(1..=12);
    let mut tokens: Vec<u32> = std::iter::once(CLS)
        .chain((1..len).map(|_| rng.gen_range(3..TINY_VOCAB as u32)))
        .collect();
    if rng.gen_bool(0.3) {
        tokens.extend(std::iter::repeat_n(cast_core::encoders::PAD, rng.gen_range(1..4)));
    }
    ModelInput {
        id: format!("r{seed}"),
        graph,
        tokens,
        descriptors: vec![0.3, -1.2, 0.7, 1.5],
    }
}

pub fn tiny_dataset(size: usize, seed: u64) -> cast_core::trainer::Dataset {
    let corpus = cast_core::corpus::generate_corpus(&cast_core::corpus::CorpusConfig {
        size,
        seed,
        ..Default::default()
    })
    .unwrap();
    cast_core::trainer::Dataset::prepare(&corpus, &tiny_config(), &Default::default()).unwrap()
}

pub fn short_run(task: cast_core::trainer::Task, steps: usize) -> cast_core::trainer::TrainConfig {
    cast_core::trainer::TrainConfig {
        task,
        batch_size: Some(8),
        warmup_steps: 5,
        peak_lr: 1e-3,
        total_steps: steps,
        eval_interval: 5,
        ..Default::default()
    }
}

/// `samples` synthetic single-map samples whose `nodes × tokens` rows are
/// drawn uniformly from the probability simplex.
pub fn simplex_samples(samples: usize, nodes: usize, tokens: usize, seed: u64) -> Vec<cast_core::analysis::SampleAttention> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp1};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|s| {
            let mut data = Vec::with_capacity(nodes * tokens);
            for _ in 0..nodes {
                let row: Vec<f64> = (0..tokens).map(|_| Exp1.sample(&mut rng)).collect();
                let sum: f64 = row.iter().sum();
                data.extend(row.iter().map(|v| v / sum));
            }
            cast_core::analysis::SampleAttention {
                sample_id: format!("s{s:04}"),
                tokens: (0..tokens).map(|t| format!("t{t}")).collect(),
                maps: vec![AttentionMap {
                    layer: 0,
                    head: 0,
                    weights: Tensor::matrix(nodes, tokens, data).unwrap(),
                }],
            }
        })
        .collect()
}

/// Bin probabilities of the cosine between two independent uniform points
/// of the `tokens`-simplex, from `draws` pairs. Points come from the gaps
/// between sorted uniforms, independently of the exponential construction
/// above.
pub fn simplex_cosine_oracle(tokens: usize, draws: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut cuts: Vec<f64> = (0..tokens - 1).map(|_| rng.gen::<f64>()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2).map(|w| w[1] - w[0]).collect::<Vec<f64>>()
    };
    let bins = cast_core::analysis::NUM_BINS;
    let mut counts = vec![0u64; bins];
    for _ in 0..draws {
        let a = point(&mut rng);
        let b = point(&mut rng);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = dot / (na * nb);
        counts[((c * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

/// Largest per-bin gap between a report histogram and oracle probabilities.
pub fn max_bin_gap(hist: &[u64], oracle: &[f64]) -> f64 {
    let total: u64 = hist.iter().sum();
    hist.iter()
        .zip(oracle)
        .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
        .fold(0.0, f64::max)
}

/// InfoNCE by direct summation over unit-normalized rows, averaged over
/// both directions.
pub fn info_nce_oracle(zs: &[Vec<f64>], zt: &[Vec<f64>], tau: f64) -> f64 {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let zs: Vec<_> = zs.iter().map(unit).collect();
    let zt: Vec<_> = zt.iter().map(unit).collect();
    let b = zs.len();
    let s = |i: usize, j: usize| zs[i].iter().zip(&zt[j]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        let denom_r: f64 = (0..b).map(|j| s(i, j).exp()).sum();
        rows += -(s(i, i).exp() / denom_r).ln();
        let denom_c: f64 = (0..b).map(|j| s(j, i).exp()).sum();
        cols += -(s(i, i).exp() / denom_c).ln();
    }
    0.5 * (rows / b as f64 + cols / b as f64)
}

/// The library loss on the same inputs with temperature `tau`.
pub fn info_nce_loss(zs: &[Vec<f64>], zt: &[Vec<f64>], tau: f64) -> cast_core::Result<f64> {
    let store = ParamStore::new(0);
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::from_rows(zs).unwrap());
    let b = g.input(Tensor::from_rows(zt).unwrap());
    let t = g.input(Tensor::scalar(tau.ln()));
    let l = contrastive_loss(&mut g, a, b, t)?;
    Ok(g.value(l).item())
}
