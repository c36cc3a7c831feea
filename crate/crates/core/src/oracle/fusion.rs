//! Straight-line fusion forwards over nested vectors.
//!
//! Written without any `nncore` operator: every convolution, attention and
//! gate is an explicit loop, and parameters are read by raw index. Used only
//! to cross-check the composed implementation.

use crate::fusion::{AdapterParams, VsfmParams};
use crate::nncore::{ConvParams, LinearParams, MhaParams, Tensor};

type Map = Vec<Vec<Vec<f64>>>;
type Mat = Vec<Vec<f64>>;

fn to_map(t: &Tensor) -> Map {
    let s = t.shape();
    (0..s[0])
        .map(|c| (0..s[1]).map(|y| (0..s[2]).map(|x| t.data()[(c * s[1] + y) * s[2] + x]).collect()).collect())
        .collect()
}

fn to_mat(t: &Tensor) -> Mat {
    let s = t.shape();
    (0..s[0]).map(|r| t.data()[r * s[1]..(r + 1) * s[1]].to_vec()).collect()
}

fn map_to_tensor(m: &Map) -> Tensor {
    let (c, h, w) = (m.len(), m[0].len(), m[0][0].len());
    let data = m.iter().flat_map(|p| p.iter().flat_map(|r| r.iter().copied())).collect();
    Tensor::from_vec(&[c, h, w], data).expect("consistent map")
}

fn mat_to_tensor(m: &Mat) -> Tensor {
    let data = m.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::from_vec(&[m.len(), m[0].len()], data).expect("consistent matrix")
}

fn mirror(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn dense(p: &LinearParams, x: &[f64]) -> Vec<f64> {
    let (o, i) = (p.weight.shape()[0], p.weight.shape()[1]);
    (0..o)
        .map(|r| {
            let mut acc = p.bias.data()[r];
            for k in 0..i {
                acc += p.weight.data()[r * i + k] * x[k];
            }
            acc
        })
        .collect()
}

fn conv(x: &Map, p: &ConvParams, dil: usize) -> Map {
    let s = p.weight.shape();
    let (co, ci, k) = (s[0], s[1], s[2]);
    let (h, w) = (x[0].len(), x[0][0].len());
    let half = (k / 2) as isize;
    let mut out = vec![vec![vec![0.0; w]; h]; co];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = p.bias.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = mirror(y as isize + (ky as isize - half) * dil as isize, h);
                            let sx = mirror(xx as isize + (kx as isize - half) * dil as isize, w);
                            acc += p.weight.data()[((o * ci + c) * k + ky) * k + kx] * x[c][sy][sx];
                        }
                    }
                }
                out[o][y][xx] = acc;
            }
        }
    }
    out
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn attention(tokens: &Mat, p: &MhaParams) -> Mat {
    let l = tokens.len();
    let d = tokens[0].len();
    let q: Mat = tokens.iter().map(|t| dense(&p.query, t)).collect();
    let k: Mat = tokens.iter().map(|t| dense(&p.key, t)).collect();
    let v: Mat = tokens.iter().map(|t| dense(&p.value, t)).collect();
    let dh = d / p.heads;
    let mut cat = vec![vec![0.0; d]; l];
    for head in 0..p.heads {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..l {
            let logits: Vec<f64> = (0..l)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..l).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    cat.iter().map(|r| dense(&p.output, r)).collect()
}

fn attention_map(x: &Map, p: &MhaParams) -> Map {
    let (c, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let tokens: Mat = (0..h * w).map(|t| (0..c).map(|ch| x[ch][t / w][t % w]).collect()).collect();
    let out = attention(&tokens, p);
    (0..c)
        .map(|ch| (0..h).map(|y| (0..w).map(|xx| out[y * w + xx][ch]).collect()).collect())
        .collect()
}

fn channel_branch(x: &Map, p: &AdapterParams) -> Map {
    let cp = &p.channel;
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hidden: Vec<f64> = dense(&cp.squeeze, v).into_iter().map(|a| a.max(0.0)).collect();
        dense(&cp.excite, &hidden)
    };
    let n = (x[0].len() * x[0][0].len()) as f64;
    let avg: Vec<f64> = x.iter().map(|p| p.iter().flatten().sum::<f64>() / n).collect();
    let max: Vec<f64> = x.iter().map(|p| p.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let (a, m) = (mlp(&avg), mlp(&max));
    x.iter()
        .enumerate()
        .map(|(c, plane)| {
            let g = sig(a[c] + m[c]);
            plane.iter().map(|r| r.iter().map(|v| v * g).collect()).collect()
        })
        .collect()
}

fn spatial_branch(x: &Map, p: &AdapterParams) -> Map {
    let (c, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let mut summary = vec![vec![vec![0.0; w]; h]; 2];
    for y in 0..h {
        for xx in 0..w {
            summary[0][y][xx] = (0..c).map(|ch| x[ch][y][xx]).sum::<f64>() / c as f64;
            summary[1][y][xx] = (0..c).map(|ch| x[ch][y][xx]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let logits = conv(&summary, &p.spatial.conv, 1);
    x.iter()
        .map(|plane| {
            (0..h)
                .map(|y| (0..w).map(|xx| plane[y][xx] * sig(logits[0][y][xx])).collect())
                .collect()
        })
        .collect()
}

fn hadamard(a: &Map, b: &Map) -> Map {
    a.iter()
        .zip(b)
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect()).collect())
        .collect()
}

/// `F_as` from grid-form queries `x_q` and semantics `x_s`.
pub fn adapter(x_q: &Tensor, x_s: &Tensor, p: &AdapterParams) -> Tensor {
    let q = to_map(x_q);
    let s = to_map(x_s);
    let f_c = attention_map(&hadamard(&channel_branch(&q, p), &channel_branch(&s, p)), &p.mha_channel);
    let f_s = attention_map(&hadamard(&spatial_branch(&q, p), &spatial_branch(&s, p)), &p.mha_spatial);
    let mut out = s.clone();
    for c in 0..out.len() {
        for y in 0..out[0].len() {
            for x in 0..out[0][0].len() {
                out[c][y][x] = s[c][y][x] + (f_c[c][y][x] + f_s[c][y][x]);
            }
        }
    }
    map_to_tensor(&out)
}

/// Grid-form queries, first `H*W` queries in index order, zero padded.
pub fn query_grid(x_q: &Tensor, projection: &LinearParams, c: usize, h: usize, w: usize) -> Tensor {
    let q = to_mat(x_q);
    let mut grid = vec![vec![vec![0.0; w]; h]; c];
    for (cell, row) in q.iter().enumerate().take(h * w) {
        let v = dense(projection, row);
        for ch in 0..c {
            grid[ch][cell / w][cell % w] = v[ch];
        }
    }
    map_to_tensor(&grid)
}

/// `F_fq` from adapted semantics `x_as` and the query matrix `x_q`.
pub fn vsfm(x_as: &Tensor, x_q: &Tensor, p: &VsfmParams) -> Tensor {
    let a = to_map(x_as);
    let (c, h, w) = (a.len(), a[0].len(), a[0][0].len());
    let rq = to_map(&query_grid(x_q, &p.query_projection, c, h, w));

    let mut cat = attention_map(&a, &p.mha_semantic);
    cat.extend(attention_map(&rq, &p.mha_query));

    let mut branches = conv(&cat, &p.aspp.project, 1);
    for b in &p.aspp.atrous {
        branches.extend(conv(&cat, &b.conv, b.rate));
    }
    let pooled_in: Map = cat
        .iter()
        .map(|plane| vec![vec![plane.iter().flatten().sum::<f64>() / (h * w) as f64]])
        .collect();
    for plane in conv(&pooled_in, &p.aspp.pooled, 1) {
        branches.push(vec![vec![plane[0][0]; w]; h]);
    }
    let f_sq = conv(&branches, &p.aspp.merge, 1);

    let logits = conv(&f_sq, &p.gate_conv, 1);
    let mut gate = logits.clone();
    for y in 0..h {
        for x in 0..w {
            let top = (0..c).map(|ch| logits[ch][y][x]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|ch| (logits[ch][y][x] - top).exp()).sum();
            for ch in 0..c {
                gate[ch][y][x] = (logits[ch][y][x] - top).exp() / z;
            }
        }
    }
    let mut fused = gate.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let g = gate[ch][y][x];
                fused[ch][y][x] = g * a[ch][y][x] + (1.0 - g) * rq[ch][y][x];
            }
        }
    }

    let mut feat = attention_map(&fused, &p.mha_fused);
    for layer in &p.extract_convs {
        feat = conv(&feat, layer, 1)
            .into_iter()
            .map(|pl| pl.into_iter().map(|r| r.into_iter().map(|v| v * sig(v)).collect()).collect())
            .collect();
    }
    let flat: Vec<f64> = feat.iter().flatten().flatten().copied().collect();
    let e = dense(&p.extract_fc, &flat);
    let q = to_mat(x_q);
    let m = q[0].len();
    let out: Mat = q
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, v)| v + e[i * m + j]).collect())
        .collect();
    mat_to_tensor(&out)
}

/// Adapter then VSFM, sharing the query projection.
pub fn fused(x_s: &Tensor, x_q: &Tensor, adapter_params: &AdapterParams, vsfm_params: &VsfmParams) -> Tensor {
    let s = x_s.shape();
    let grid = query_grid(x_q, &vsfm_params.query_projection, s[0], s[1], s[2]);
    let f_as = adapter(&grid, x_s, adapter_params);
    vsfm(&f_as, x_q, vsfm_params)
}
