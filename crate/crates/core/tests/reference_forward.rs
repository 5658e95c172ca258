//! The attention layers against a straight-line re-implementation on plain
//! row-major vectors, plus shape checks for every block layout.

mod common;

use common::{random_tensor, rng};
use tcm_core::model::{
    block_forward, mhsa_forward, prepend_cls, tcm_forward, AblationVariant, BlockKind, Classifier, Dropout, ModelConfig,
};
use tcm_core::{Tape, Tensor};

type Mat = Vec<Vec<f64>>;

fn rows(t: &Tensor) -> Mat {
    let (_, c) = t.dims2().unwrap();
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().zip(w).map(|(xi, wi)| xi * wi[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn mean(x: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; x[0].len()];
    for row in x {
        for (a, v) in m.iter_mut().zip(row) {
            *a += v / x.len() as f64;
        }
    }
    m
}

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))
}

struct Lin {
    w: Mat,
    b: Vec<f64>,
}

struct Mhsa {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
}

fn reference_mhsa(x: &Mat, p: &Mhsa, heads: usize) -> Mat {
    let (q, k, v) = (
        affine(x, &p.q.w, &p.q.b),
        affine(x, &p.k.w, &p.k.b),
        affine(x, &p.v.w, &p.v.b),
    );
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; x.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..x.len() {
            let logits: Vec<f64> = (0..x.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                out[i][c] = (0..x.len()).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    affine(&out, &p.o.w, &p.o.b)
}

fn reference_tcm(x: &Mat, p: &Mhsa, proj: &Lin, emb: Option<&Mat>, cfg: &ModelConfig) -> Mat {
    let t = cfg.toggles;
    let len = x.len() - 1;
    let pooled = if cfg.head_pool_includes_cls || len == 0 {
        mean(x)
    } else {
        mean(&x[1..])
    };
    let d = pooled.len();
    let segments: Mat = pooled.chunks(d / cfg.heads).map(|s| s.to_vec()).collect();
    let mut head: Mat = affine(&segments, &proj.w, &proj.b)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    if t.ht_embedding {
        for (row, e) in head.iter_mut().zip(emb.unwrap()) {
            for (a, b) in row.iter_mut().zip(e) {
                *a += b;
            }
        }
    }
    let (mut temporal, head_out) = if t.ht_in_mhsa {
        let joint: Mat = x.iter().chain(&head).cloned().collect();
        let out = reference_mhsa(&joint, p, cfg.heads);
        (out[..=len].to_vec(), out[len + 1..].to_vec())
    } else {
        (reference_mhsa(x, p, cfg.heads), head)
    };
    let mut cls = temporal[0].clone();
    if t.add_mean_ht_to_cls {
        cls.iter_mut().zip(mean(&head_out)).for_each(|(a, b)| *a += b);
    }
    let first = if cfg.mean_tt_includes_cls { 0 } else { 1 };
    if t.add_mean_tt_to_cls && len + 1 > first {
        cls.iter_mut().zip(mean(&temporal[first..])).for_each(|(a, b)| *a += b);
    }
    temporal[0] = cls;
    temporal
}

fn tiny(kind: BlockKind) -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        model_dim: 12,
        heads: 3,
        blocks: 1,
        block_kind: kind,
        conv_kernel: 3,
        ..ModelConfig::desk_scale()
    }
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.len(), a[0].len()), (b.len(), b[0].len()));
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn attention_layers_match_the_reference() {
    for (seed, variant) in AblationVariant::ALL.into_iter().enumerate() {
        for t in [0usize, 1, 6] {
            for (pool_cls, tt_cls) in [(true, false), (false, true)] {
                let cfg = ModelConfig {
                    head_pool_includes_cls: pool_cls,
                    mean_tt_includes_cls: tt_cls,
                    ..tiny(BlockKind::Transformer).with_toggles(variant.toggles())
                };
                let model = Classifier::new(cfg.clone(), seed as u64).unwrap();
                let mut tape = Tape::new();
                let (params, _) = model.bind(&mut tape, false).unwrap();
                let attn = params.blocks[0].attention();
                let val = |tape: &Tape, v| rows(tape.value(v));
                let lin = |tape: &Tape, l: &tcm_core::model::Linear<tcm_core::Var>| Lin {
                    w: val(tape, l.weight),
                    b: tape.value(l.bias).data().to_vec(),
                };
                let m = &attn.mhsa;
                let reference = Mhsa {
                    q: lin(&tape, &m.query),
                    k: lin(&tape, &m.key),
                    v: lin(&tape, &m.value),
                    o: lin(&tape, &m.output),
                };
                let input = random_tensor(&mut rng(seed as u64 * 10 + t as u64), &[t + 1, 12], 1.0);
                let x = rows(&input);
                let xv = tape.constant(input);

                let plain = mhsa_forward(&mut tape, xv, m, cfg.heads).unwrap();
                assert!(max_diff(&val(&tape, plain), &reference_mhsa(&x, &reference, cfg.heads)) <= 1e-12);

                let Some(hp) = attn.head_tokens.as_ref() else { continue };
                let proj = lin(&tape, &hp.proj);
                let emb = hp.embedding.map(|e| val(&tape, e));
                let seq = tcm_core::model::TokenSequence { tokens: xv, len: t };
                let out = tcm_forward(&mut tape, &seq, m, hp, &cfg).unwrap();
                let expected = reference_tcm(&x, &reference, &proj, emb.as_ref(), &cfg);
                let diff = max_diff(&val(&tape, out.tokens), &expected);
                assert!(diff <= 1e-12, "{variant:?} T={t} pool_cls={pool_cls}: {diff:e}");
            }
        }
    }
}

#[test]
fn every_block_keeps_its_shape() {
    for kind in [BlockKind::Conformer, BlockKind::Transformer] {
        for variant in AblationVariant::ALL {
            let cfg = tiny(kind).with_toggles(variant.toggles());
            let model = Classifier::new(cfg.clone(), 5).unwrap();
            for t in [0usize, 1, 2, 9] {
                let mut tape = Tape::new();
                let (params, _) = model.bind(&mut tape, false).unwrap();
                let x = tape.constant(random_tensor(&mut rng(t as u64), &[t, 12], 1.0));
                let cls = tape.constant(random_tensor(&mut rng(99), &[12], 1.0));
                let seq = prepend_cls(&mut tape, x, cls).unwrap();
                let out = block_forward(&mut tape, &seq, &params.blocks[0], &cfg, &mut Dropout::off()).unwrap();
                assert_eq!(out.len, t);
                assert_eq!(tape.shape(out.tokens), &[t + 1, 12], "{kind:?} {variant:?} T={t}");
                assert!(tape.value(out.tokens).data().iter().all(|v| v.is_finite()));
            }
        }
    }
}
