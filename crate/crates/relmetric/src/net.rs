//! The table-shaped network core: bilinear metric tables G, the dependency
//! table D, the position table P, the recursive convolution-pooling stack,
//! and the softmax output with its table cross-entropy loss.
//!
//! Layer widths: hidden layers pool with the configured odd window and emit
//! the channel count; the output layer is a per-cell 1x1 projection to the
//! label-space size, so a depth of lambda pools through lambda-1 windows
//! and the receptive field of one output cell is (2*lambda-1) squared.

use serde::{Deserialize, Serialize};

use crate::corpus::DepEdge;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, CellSrc, NodeId, Phase, Tape};

/// Reserved row for dependency tags unseen at training time. Row 0 is UNK;
/// named tags start at 1. The null-relation vector is separate.
pub const DEP_UNK: usize = 0;

/// Vocabulary of syntactic dependency tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepVocab {
    tags: Vec<String>,
}

impl DepVocab {
    pub fn from_examples(examples: &[crate::corpus::SentenceExample]) -> Self {
        let mut tags: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for ex in examples {
            for e in &ex.dep_edges {
                if seen.insert(e.tag.clone()) {
                    tags.push(e.tag.clone());
                }
            }
        }
        tags.sort();
        DepVocab { tags }
    }

    pub fn from_list(tags: Vec<String>) -> Self {
        DepVocab { tags }
    }

    /// Table rows: UNK plus the named tags.
    pub fn len(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn id(&self, tag: &str) -> usize {
        self.tags
            .iter()
            .position(|t| t == tag)
            .map(|i| i + 1)
            .unwrap_or(DEP_UNK)
    }
}

/// Bilinear metric tables: G[i,j,k] = h_i . R_k . h_j, assembled from
/// per-channel matmuls as H R_k H^T and stacked along the channel axis.
pub fn metric_tables(
    tape: &mut Tape,
    h: NodeId,
    metric: NodeId,
    channels: usize,
    rho: usize,
) -> Result<NodeId> {
    let hs = tape.shape(h).to_vec();
    if hs.len() != 2 || hs[1] != rho {
        return Err(Error::shape(format!(
            "metric_tables: H is {:?}, expected n x {}",
            hs, rho
        )));
    }
    let ms = tape.shape(metric).to_vec();
    if ms != vec![channels, rho, rho] {
        return Err(Error::shape(format!(
            "metric_tables: metric bank is {:?}, expected [{}, {}, {}]",
            ms, channels, rho, rho
        )));
    }
    let mut per_channel = Vec::with_capacity(channels);
    for k in 0..channels {
        let rk = tape.slice(metric, k * rho * rho, &[rho, rho])?;
        let tmp = tape.matmul(h, rk)?;
        per_channel.push(tape.matmul_transb(tmp, h)?);
    }
    tape.stack_last(&per_channel)
}

/// Cell sources for the dependency table: a tag row where an edge connects
/// (i, j) in either direction, the null vector otherwise. Unknown tags were
/// already mapped to the UNK row by `DepVocab::id`.
pub fn dep_cells(edges: &[DepEdge], vocab: &DepVocab, n: usize) -> Result<Vec<CellSrc>> {
    let mut cells = vec![CellSrc::Null; n * n];
    for e in edges {
        if e.head >= n || e.dep >= n {
            return Err(Error::contract(format!(
                "dependency edge ({}, {}) out of range for n={}",
                e.head, e.dep, n
            )));
        }
        let row = CellSrc::Row(vocab.id(&e.tag));
        cells[e.head * n + e.dep] = row;
        cells[e.dep * n + e.head] = row;
    }
    Ok(cells)
}

/// D: n x n x beta with D[i,j] = D[j,i] = the edge tag embedding, or the
/// trainable null vector where no edge exists.
pub fn dependency_table(
    tape: &mut Tape,
    dep_emb: NodeId,
    dep_null: NodeId,
    cells: &[CellSrc],
    n: usize,
) -> Result<NodeId> {
    tape.pair_embed(dep_emb, Some(dep_null), cells, n)
}

/// Cell sources for the position table: the signed offset i-j, clamped to
/// +-n_max with a logged warning for overlong sentences.
pub fn position_cells(n: usize, n_max: usize) -> Vec<CellSrc> {
    let mut warned = false;
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let off = i as i64 - j as i64;
            let clamped = off.clamp(-(n_max as i64), n_max as i64);
            if clamped != off && !warned {
                log::warn!(
                    "sentence length {} exceeds position table range +-{}; clamping offsets",
                    n,
                    n_max
                );
                warned = true;
            }
            cells.push(CellSrc::Row((clamped + n_max as i64) as usize));
        }
    }
    cells
}

/// P: n x n x gamma with P[i,j] = the embedding of offset i-j.
pub fn position_table(tape: &mut Tape, pos_emb: NodeId, n: usize, n_max: usize) -> Result<NodeId> {
    let cells = position_cells(n, n_max);
    tape.pair_embed(pos_emb, None, &cells, n)
}

/// Convolution parameters of one pooling layer on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Per-layer normalization: trainable scale/shift nodes plus the running
/// state they update. Bank 0 normalizes G; bank i normalizes layer i for
/// i < lambda-1. Absent when normalization is disabled.
pub struct NormNodes<'a> {
    pub gamma: Vec<NodeId>,
    pub beta: Vec<NodeId>,
    pub states: &'a mut [BatchNormState],
}

/// Runs the pooling stack over G ++ D ++ P. Returns every layer's output,
/// L^1..L^lambda, the last of which feeds the softmax.
pub fn pool_forward(
    tape: &mut Tape,
    g: NodeId,
    d: NodeId,
    p: NodeId,
    layers: &[LayerNodes],
    window: usize,
    mut norm: Option<NormNodes<'_>>,
    phase: Phase,
) -> Result<Vec<NodeId>> {
    let lambda = layers.len();
    if lambda < 2 {
        return Err(Error::config(format!(
            "pooling stack needs at least a base and an output layer, got lambda={}",
            lambda
        )));
    }
    let g = match norm.as_mut() {
        Some(nn) => tape.batch_norm(g, nn.gamma[0], nn.beta[0], &mut nn.states[0], phase)?,
        None => g,
    };
    let mut prev = g;
    let mut out = Vec::with_capacity(lambda);
    for (i, layer) in layers.iter().enumerate() {
        let x = tape.concat_last(&[prev, d, p])?;
        let last = i + 1 == lambda;
        let conv = tape.conv2d_padded(x, layer.weight, layer.bias, if last { 1 } else { window })?;
        let l = if last {
            conv
        } else {
            let act = tape.relu(conv);
            match norm.as_mut() {
                Some(nn) => tape.batch_norm(
                    act,
                    nn.gamma[i + 1],
                    nn.beta[i + 1],
                    &mut nn.states[i + 1],
                    phase,
                )?,
                None => act,
            }
        };
        out.push(l);
        prev = l;
    }
    Ok(out)
}

/// Softmax over the tag axis of the output layer.
pub fn output_distribution(tape: &mut Tape, last_layer: NodeId) -> Result<NodeId> {
    tape.softmax_last(last_layer)
}

/// Table cross-entropy of Q against gold tags, normalized by word count.
pub fn table_loss(tape: &mut Tape, q: NodeId, gold: &crate::codec::TagTable) -> Result<NodeId> {
    tape.cross_entropy_table(q, gold.cells(), gold.n)
}

/// Loss against an explicit one-hot tensor, validating its shape and
/// one-hot structure.
pub fn table_loss_one_hot(
    tape: &mut Tape,
    q: NodeId,
    y: &[f64],
    n: usize,
    z: usize,
) -> Result<NodeId> {
    if y.len() != n * n * z {
        return Err(Error::shape(format!(
            "one-hot tensor has {} values, expected {}",
            y.len(),
            n * n * z
        )));
    }
    let mut targets = Vec::with_capacity(n * n);
    for cell in 0..n * n {
        let row = &y[cell * z..(cell + 1) * z];
        let hot: Vec<usize> = (0..z).filter(|&k| row[k] != 0.0).collect();
        if hot.len() != 1 || row[hot[0]] != 1.0 {
            return Err(Error::contract(format!(
                "cell {} is not one-hot along the tag axis",
                cell
            )));
        }
        targets.push(hot[0]);
    }
    tape.cross_entropy_table(q, &targets, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_metric_is_dot_product() {
        let mut tape = Tape::new();
        let h =
            tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let metric = tape.constant(Tensor::new(vec![1, 3, 3], eye).unwrap());
        let g = metric_tables(&mut tape, h, metric, 1, 3).unwrap();
        assert_eq!(tape.shape(g), &[2, 2, 1]);
        let hv = [[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = (0..3).map(|k| hv[i][k] * hv[j][k]).sum();
                assert!((tape.value(g)[i * 2 + j] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_a_context_vector_scales_its_rows() {
        let mut tape = Tape::new();
        let base = vec![0.3, -0.7, 1.1, 0.9, 0.2, -0.4];
        let h1 = tape.constant(Tensor::new(vec![2, 3], base.clone()).unwrap());
        let mut scaled = base.clone();
        for v in scaled[..3].iter_mut() {
            *v *= 2.5;
        }
        let h2 = tape.constant(Tensor::new(vec![2, 3], scaled).unwrap());
        let rvals: Vec<f64> = (0..9).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let m1 = tape.constant(Tensor::new(vec![1, 3, 3], rvals.clone()).unwrap());
        let g1 = metric_tables(&mut tape, h1, m1, 1, 3).unwrap();
        let m2 = tape.constant(Tensor::new(vec![1, 3, 3], rvals).unwrap());
        let g2 = metric_tables(&mut tape, h2, m2, 1, 3).unwrap();
        // Row 0 scales by 2.5 exactly (bilinearity); cell (0,0) by 2.5^2.
        let v1 = tape.value(g1).to_vec();
        let v2 = tape.value(g2).to_vec();
        assert!((v2[1] - 2.5 * v1[1]).abs() < 1e-12);
        assert!((v2[2] - 2.5 * v1[2]).abs() < 1e-12);
        assert!((v2[0] - 2.5 * 2.5 * v1[0]).abs() < 1e-12);
    }

    #[test]
    fn metric_tables_match_per_cell_bilinear_forms() {
        use rand::{Rng, SeedableRng};
        // The matmul-based construction must agree with the naive
        // per-cell h_i · R_k · h_j evaluation.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let n = rng.gen_range(1..6);
            let rho = rng.gen_range(1..7);
            let kappa = rng.gen_range(1..4);
            let h: Vec<f64> = (0..n * rho).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m: Vec<f64> = (0..kappa * rho * rho)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut tape = Tape::new();
            let hn = tape.constant(Tensor::new(vec![n, rho], h.clone()).unwrap());
            let mn = tape.constant(Tensor::new(vec![kappa, rho, rho], m.clone()).unwrap());
            let g = metric_tables(&mut tape, hn, mn, kappa, rho).unwrap();
            let gv = tape.value(g);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..kappa {
                        let mut want = 0.0;
                        for a in 0..rho {
                            for b in 0..rho {
                                want += h[i * rho + a]
                                    * m[k * rho * rho + a * rho + b]
                                    * h[j * rho + b];
                            }
                        }
                        let got = gv[(i * n + j) * kappa + k];
                        assert!(
                            (got - want).abs() < 1e-10,
                            "cell ({}, {}, {}): {} vs {}",
                            i,
                            j,
                            k,
                            got,
                            want
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn metric_table_shape_matches_channels() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(vec![7, 4]));
        let metric = tape.constant(Tensor::zeros(vec![15, 4, 4]));
        let g = metric_tables(&mut tape, h, metric, 15, 4).unwrap();
        assert_eq!(tape.shape(g), &[7, 7, 15]);
    }

    #[test]
    fn dependency_table_is_symmetric_with_null_default() {
        let vocab = DepVocab::from_list(vec!["nsubj".into(), "pobj".into()]);
        let edges = vec![DepEdge {
            head: 2,
            dep: 5,
            tag: "nsubj".into(),
        }];
        let n = 6;
        let cells = dep_cells(&edges, &vocab, n).unwrap();
        let mut tape = Tape::new();
        let beta = 3;
        let emb_data: Vec<f64> = (0..vocab.len() * beta).map(|i| i as f64).collect();
        let emb = tape.constant(Tensor::new(vec![vocab.len(), beta], emb_data.clone()).unwrap());
        let null = tape.constant(Tensor::new(vec![beta], vec![-1.0, -2.0, -3.0]).unwrap());
        let d = dependency_table(&mut tape, emb, null, &cells, n).unwrap();
        let dv = tape.value(d);
        let row = vocab.id("nsubj");
        let expected = &emb_data[row * beta..(row + 1) * beta];
        assert_eq!(&dv[(2 * n + 5) * beta..(2 * n + 5) * beta + beta], expected);
        assert_eq!(&dv[(5 * n + 2) * beta..(5 * n + 2) * beta + beta], expected);
        // No self-edge: diagonal stays on the null vector.
        assert_eq!(&dv[0..beta], &[-1.0, -2.0, -3.0]);
        // Full symmetry.
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    &dv[(i * n + j) * beta..(i * n + j + 1) * beta],
                    &dv[(j * n + i) * beta..(j * n + i + 1) * beta]
                );
            }
        }
    }

    #[test]
    fn unknown_dep_tag_maps_to_unk_row() {
        let vocab = DepVocab::from_list(vec!["nsubj".into()]);
        assert_eq!(vocab.id("mystery"), DEP_UNK);
        assert_eq!(vocab.id("nsubj"), 1);
    }

    #[test]
    fn dep_edge_out_of_range_is_error() {
        let vocab = DepVocab::from_list(vec![]);
        let edges = vec![DepEdge {
            head: 0,
            dep: 9,
            tag: "x".into(),
        }];
        assert!(dep_cells(&edges, &vocab, 3).is_err());
    }

    #[test]
    fn position_cells_follow_signed_offsets() {
        let n_max = 10;
        let cells = position_cells(5, n_max);
        let row = |i: usize, j: usize| match cells[i * 5 + j] {
            CellSrc::Row(r) => r as i64 - n_max as i64,
            CellSrc::Null => unreachable!(),
        };
        for i in 0..5 {
            assert_eq!(row(i, i), 0);
        }
        assert_eq!(row(1, 4), -3);
        assert_eq!(row(4, 1), 3);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(row(i, j), -row(j, i));
            }
        }
    }

    #[test]
    fn position_cells_clamp_beyond_range() {
        let cells = position_cells(4, 2);
        match cells[3 * 4] {
            // offset 3-0 = 3 clamps to +2
            CellSrc::Row(r) => assert_eq!(r, 4),
            CellSrc::Null => unreachable!(),
        }
    }

    #[test]
    fn loss_matches_double_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let (n, z) = (3usize, 4usize);
        // Random normalized Q and one-hot Y on a 3×3×4 table.
        let mut q: Vec<f64> = vec![0.0; n * n * z];
        let mut y: Vec<f64> = vec![0.0; n * n * z];
        let mut targets = vec![0usize; n * n];
        for cell in 0..n * n {
            let mut s = 0.0;
            for k in 0..z {
                q[cell * z + k] = rng.gen_range(0.01..1.0);
                s += q[cell * z + k];
            }
            for k in 0..z {
                q[cell * z + k] /= s;
            }
            let t = rng.gen_range(0..z);
            targets[cell] = t;
            y[cell * z + t] = 1.0;
        }
        // Independent double-loop cross-entropy.
        let mut oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..z {
                    oracle -= y[(i * n + j) * z + k] * q[(i * n + j) * z + k].ln();
                }
            }
        }
        oracle /= n as f64;

        let mut tape = Tape::new();
        let qn = tape.constant(crate::tensor::Tensor::new(vec![n, n, z], q.clone()).unwrap());
        let l = table_loss_one_hot(&mut tape, qn, &y, n, z).unwrap();
        assert!((tape.value(l)[0] - oracle).abs() < 1e-10);
    }

    #[test]
    fn pool_stack_rejects_single_layer() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::zeros(vec![3, 3, 2]));
        let d = tape.constant(Tensor::zeros(vec![3, 3, 1]));
        let p = tape.constant(Tensor::zeros(vec![3, 3, 1]));
        let w = tape.constant(Tensor::zeros(vec![5, 1, 1, 4]));
        let b = tape.constant(Tensor::zeros(vec![5]));
        let layers = vec![LayerNodes { weight: w, bias: b }];
        assert!(matches!(
            pool_forward(&mut tape, g, d, p, &layers, 3, None, Phase::Infer),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn q_cells_are_distributions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let (n, kappa, beta, gamma, z) = (4usize, 3usize, 2usize, 2usize, 6usize);
        let mut tape = Tape::new();
        let mut randn = |shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            tape.constant(Tensor::new(shape, data).unwrap())
        };
        let g = randn(vec![n, n, kappa]);
        let d = randn(vec![n, n, beta]);
        let p = randn(vec![n, n, gamma]);
        let in_ch = kappa + beta + gamma;
        let layers = vec![
            LayerNodes {
                weight: randn(vec![kappa, 3, 3, in_ch]),
                bias: randn(vec![kappa]),
            },
            LayerNodes {
                weight: randn(vec![kappa, 3, 3, in_ch]),
                bias: randn(vec![kappa]),
            },
            LayerNodes {
                weight: randn(vec![z, 1, 1, in_ch]),
                bias: randn(vec![z]),
            },
        ];
        let ls = pool_forward(&mut tape, g, d, p, &layers, 3, None, Phase::Infer).unwrap();
        assert_eq!(ls.len(), 3);
        let q = output_distribution(&mut tape, ls[2]).unwrap();
        assert_eq!(tape.shape(q), &[n, n, z]);
        for cell in 0..n * n {
            let s: f64 = tape.value(q)[cell * z..(cell + 1) * z].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_permutation_leaves_q_unchanged() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let (n, rho, kappa, beta, gamma, z) = (3usize, 4usize, 3usize, 2usize, 2usize, 6usize);
        let perm = [2usize, 0, 1];

        let h_data: Vec<f64> = (0..n * rho).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let metric_data: Vec<f64> = (0..kappa * rho * rho)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let d_data: Vec<f64> = (0..n * n * beta).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let p_data: Vec<f64> = (0..n * n * gamma).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let in_ch = kappa + beta + gamma;
        let w1: Vec<f64> = (0..kappa * 9 * in_ch)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let b1: Vec<f64> = (0..kappa).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w2: Vec<f64> = (0..z * in_ch).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b2: Vec<f64> = (0..z).map(|_| rng.gen_range(-0.5..0.5)).collect();

        // Permuted variant: metric banks reordered, first-layer filters'
        // input channels (the leading kappa of in_ch) reordered in tandem.
        let mut metric_perm = vec![0.0; metric_data.len()];
        for (k, &src) in perm.iter().enumerate() {
            metric_perm[k * rho * rho..(k + 1) * rho * rho]
                .copy_from_slice(&metric_data[src * rho * rho..(src + 1) * rho * rho]);
        }
        let mut w1_perm = w1.clone();
        for f in 0..kappa {
            for pos in 0..9 {
                for (k, &src) in perm.iter().enumerate() {
                    w1_perm[(f * 9 + pos) * in_ch + k] = w1[(f * 9 + pos) * in_ch + src];
                }
            }
        }

        let run = |metric_d: &[f64], w1_d: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let h = tape.constant(Tensor::new(vec![n, rho], h_data.clone()).unwrap());
            let metric =
                tape.constant(Tensor::new(vec![kappa, rho, rho], metric_d.to_vec()).unwrap());
            let g = metric_tables(&mut tape, h, metric, kappa, rho).unwrap();
            let d = tape.constant(Tensor::new(vec![n, n, beta], d_data.clone()).unwrap());
            let p = tape.constant(Tensor::new(vec![n, n, gamma], p_data.clone()).unwrap());
            let layers = vec![
                LayerNodes {
                    weight: tape
                        .constant(Tensor::new(vec![kappa, 3, 3, in_ch], w1_d.to_vec()).unwrap()),
                    bias: tape.constant(Tensor::new(vec![kappa], b1.clone()).unwrap()),
                },
                LayerNodes {
                    weight: tape.constant(Tensor::new(vec![z, 1, 1, in_ch], w2.clone()).unwrap()),
                    bias: tape.constant(Tensor::new(vec![z], b2.clone()).unwrap()),
                },
            ];
            let ls = pool_forward(&mut tape, g, d, p, &layers, 3, None, Phase::Infer).unwrap();
            let q = output_distribution(&mut tape, *ls.last().unwrap()).unwrap();
            tape.value(q).to_vec()
        };

        let q_base = run(&metric_data, &w1);
        let q_perm = run(&metric_perm, &w1_perm);
        for (a, b) in q_base.iter().zip(&q_perm) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
