//! One Mixer block over a `k x N` prototype table.
//!
//! ```text
//! U = LN(X)                        rows normalized over channels
//! Y = X + W2 · gelu(W1 · U + b1) + b2        token mixing, per column
//! V = LN(Y)
//! Z = Y + gelu(V · W3ᵀ + b3) · W4ᵀ + b4      channel mixing, per row
//! ```

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::params::BlockParams;
use crate::ops::{
    gelu, gelu_grad, layer_norm_rows, layer_norm_rows_backward, LayerNormCache, LAYER_NORM_EPS,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BlockCache<T: Scalar> {
    token_ln: LayerNormCache<T>,
    /// `LN(X)`, `k x N`
    u: Matrix<T>,
    /// token pre-activation, `D_S x N`
    h: Matrix<T>,
    /// token hidden activation, `D_S x N`
    a: Matrix<T>,
    token_mask: Option<Matrix<T>>,
    channel_ln: LayerNormCache<T>,
    /// `LN(Y)`, `k x N`
    v: Matrix<T>,
    /// channel pre-activation, `k x D_C`
    h2: Matrix<T>,
    a2: Matrix<T>,
    channel_mask: Option<Matrix<T>>,
}

/// Adds `bias[r]` to every entry of row `r`.
fn add_row_bias<T: Scalar>(m: &mut Matrix<T>, bias: &[T]) {
    for (r, &b) in bias.iter().enumerate() {
        m.row_mut(r).iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Adds `bias[c]` to column `c` of every row.
fn add_col_bias<T: Scalar>(m: &mut Matrix<T>, bias: &[T]) {
    for r in 0..m.rows() {
        for (v, &b) in m.row_mut(r).iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate` and
/// `1/(1-rate)` otherwise.
pub(crate) fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut dyn rand::RngCore,
) -> Matrix<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

fn apply_mask<T: Scalar>(m: &mut Matrix<T>, mask: &Option<Matrix<T>>) {
    if let Some(mask) = mask {
        for (v, &k) in m.data_mut().iter_mut().zip(mask.data()) {
            *v = *v * k;
        }
    }
}

/// Forward pass. `dropout` supplies a generator and rate in train mode.
pub fn block_forward<T: Scalar>(
    x: &Matrix<T>,
    p: &BlockParams<T>,
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<(Matrix<T>, BlockCache<T>)> {
    let (k, n) = x.shape();
    if p.w1.cols() != k || p.token_gain.cols() != n {
        return Err(Error::Dimension {
            op: "block_forward",
            lhs: format!("input {k}x{n}"),
            rhs: format!("block expects {}x{}", p.w1.cols(), p.token_gain.cols()),
        });
    }
    let eps = T::of(LAYER_NORM_EPS);

    let (u, token_ln) = layer_norm_rows(x, p.token_gain.data(), p.token_bias.data(), eps)?;
    let mut h = p.w1.matmul(&u)?;
    add_row_bias(&mut h, p.b1.data());
    let a = h.map(gelu);
    let mut o = p.w2.matmul(&a)?;
    add_row_bias(&mut o, p.b2.data());
    let token_mask = match dropout.as_mut() {
        Some((rate, rng)) if *rate > 0.0 => Some(dropout_mask(k, n, *rate, &mut **rng)),
        _ => None,
    };
    apply_mask(&mut o, &token_mask);
    let mut y = x.clone();
    y.add_assign(&o)?;

    let (v, channel_ln) = layer_norm_rows(&y, p.channel_gain.data(), p.channel_bias.data(), eps)?;
    let mut h2 = v.matmul_t(&p.w3)?;
    add_col_bias(&mut h2, p.b3.data());
    let a2 = h2.map(gelu);
    let mut o2 = a2.matmul_t(&p.w4)?;
    add_col_bias(&mut o2, p.b4.data());
    let channel_mask = match dropout.as_mut() {
        Some((rate, rng)) if *rate > 0.0 => Some(dropout_mask(k, n, *rate, &mut **rng)),
        _ => None,
    };
    apply_mask(&mut o2, &channel_mask);
    let mut z = y;
    z.add_assign(&o2)?;

    Ok((
        z,
        BlockCache {
            token_ln,
            u,
            h,
            a,
            token_mask,
            channel_ln,
            v,
            h2,
            a2,
            channel_mask,
        },
    ))
}

fn gelu_backward<T: Scalar>(upstream: &Matrix<T>, pre: &Matrix<T>) -> Matrix<T> {
    upstream
        .zip_map(pre, |d, x| d * gelu_grad(x))
        .expect("activation shapes agree")
}

fn add_into<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>) {
    dst.add_assign(src).expect("gradient shapes agree");
}

/// Backward pass: returns `dL/dX` and accumulates parameter gradients into
/// `grads`.
pub fn block_backward<T: Scalar>(
    dz: &Matrix<T>,
    p: &BlockParams<T>,
    cache: &BlockCache<T>,
    grads: &mut BlockParams<T>,
) -> Matrix<T> {
    // channel mixing
    let mut do2 = dz.clone();
    apply_mask(&mut do2, &cache.channel_mask);
    add_into(&mut grads.w4, &do2.t_matmul(&cache.a2).expect("shapes"));
    accumulate_col_sums(&mut grads.b4, &do2);
    let da2 = do2.matmul(&p.w4).expect("shapes");
    let dh2 = gelu_backward(&da2, &cache.h2);
    add_into(&mut grads.w3, &dh2.t_matmul(&cache.v).expect("shapes"));
    accumulate_col_sums(&mut grads.b3, &dh2);
    let dv = dh2.matmul(&p.w3).expect("shapes");
    let mut dy = layer_norm_rows_backward(
        &dv,
        p.channel_gain.data(),
        &cache.channel_ln,
        grads.channel_gain.data_mut(),
        grads.channel_bias.data_mut(),
    );
    dy.add_assign(dz).expect("shapes");

    // token mixing
    let mut d_o = dy.clone();
    apply_mask(&mut d_o, &cache.token_mask);
    add_into(&mut grads.w2, &d_o.matmul_t(&cache.a).expect("shapes"));
    accumulate_row_sums(&mut grads.b2, &d_o);
    let da = p.w2.t_matmul(&d_o).expect("shapes");
    let dh = gelu_backward(&da, &cache.h);
    add_into(&mut grads.w1, &dh.matmul_t(&cache.u).expect("shapes"));
    accumulate_row_sums(&mut grads.b1, &dh);
    let du = p.w1.t_matmul(&dh).expect("shapes");
    let mut dx = layer_norm_rows_backward(
        &du,
        p.token_gain.data(),
        &cache.token_ln,
        grads.token_gain.data_mut(),
        grads.token_bias.data_mut(),
    );
    dx.add_assign(&dy).expect("shapes");
    dx
}

fn accumulate_col_sums<T: Scalar>(dst: &mut Matrix<T>, m: &Matrix<T>) {
    let out = dst.data_mut();
    for row in m.row_iter() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

fn accumulate_row_sums<T: Scalar>(dst: &mut Matrix<T>, m: &Matrix<T>) {
    for (o, row) in dst.data_mut().iter_mut().zip(m.row_iter()) {
        *o = *o + row.iter().copied().sum::<T>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::MixerConfig;
    use crate::model::params::MixerParams;
    use crate::ops::layer_norm;
    use crate::seed;

    fn cfg(k: usize, n: usize) -> MixerConfig {
        MixerConfig {
            tokens: k,
            channels: n,
            token_hidden: 5,
            channel_hidden: 7,
            blocks: 1,
            num_classes: 2,
            num_domains: 2,
            domain_hidden: 3,
            ..Default::default()
        }
    }

    fn random_input(k: usize, n: usize, s: u64) -> Matrix {
        let mut rng = seed::rng(s);
        Matrix::from_fn(k, n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn zero_weights_are_identity() {
        let c = cfg(3, 4);
        let p = MixerParams::<f64>::zeros(&c);
        let x = random_input(3, 4, 1);
        let (z, _) = block_forward(&x, &p.blocks[0], None).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn single_token_is_finite() {
        let c = cfg(1, 6);
        let p = MixerParams::<f64>::init(&c, 3).unwrap();
        let (z, _) = block_forward(&random_input(1, 6, 2), &p.blocks[0], None).unwrap();
        assert_eq!(z.shape(), (1, 6));
        assert!(z.is_finite());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let p = MixerParams::<f64>::init(&cfg(3, 4), 0).unwrap();
        assert!(matches!(
            block_forward(&random_input(2, 4, 0), &p.blocks[0], None),
            Err(Error::Dimension { .. })
        ));
    }

    /// Straight-line per-column / per-row evaluation of the block equations.
    fn naive_block(x: &Matrix, p: &BlockParams<f64>) -> Matrix {
        let (k, n) = x.shape();
        let ds = p.w1.rows();
        let dc = p.w3.rows();
        let ln = |row: &[f64], g: &Matrix, b: &Matrix| {
            layer_norm(row, g.data(), b.data(), 1e-5).unwrap()
        };
        let gelu_ref = |t: f64| 0.5 * t * (1.0 + libm::erf(t / 2f64.sqrt()));

        let u: Vec<Vec<f64>> = (0..k)
            .map(|j| ln(x.row(j), &p.token_gain, &p.token_bias))
            .collect();
        let mut y = x.clone();
        for i in 0..n {
            let col: Vec<f64> = (0..k).map(|j| u[j][i]).collect();
            let hidden: Vec<f64> = (0..ds)
                .map(|d| {
                    gelu_ref((0..k).map(|j| p.w1[(d, j)] * col[j]).sum::<f64>() + p.b1.data()[d])
                })
                .collect();
            for j in 0..k {
                y[(j, i)] +=
                    (0..ds).map(|d| p.w2[(j, d)] * hidden[d]).sum::<f64>() + p.b2.data()[j];
            }
        }
        let mut z = y.clone();
        for j in 0..k {
            let v = ln(y.row(j), &p.channel_gain, &p.channel_bias);
            let hidden: Vec<f64> = (0..dc)
                .map(|d| {
                    gelu_ref((0..n).map(|c| p.w3[(d, c)] * v[c]).sum::<f64>() + p.b3.data()[d])
                })
                .collect();
            for c in 0..n {
                z[(j, c)] +=
                    (0..dc).map(|d| p.w4[(c, d)] * hidden[d]).sum::<f64>() + p.b4.data()[c];
            }
        }
        z
    }

    #[test]
    fn matches_straight_line_oracle() {
        let c = cfg(2, 3);
        let mut p = MixerParams::<f64>::init(&c, 8).unwrap();
        let mut rng = seed::rng(99);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.1 * rng.gen_range(-1.0..1.0);
            }
        }
        let x = random_input(2, 3, 4);
        let (z, _) = block_forward(&x, &p.blocks[0], None).unwrap();
        let oracle = naive_block(&x, &p.blocks[0]);
        assert!(
            z.max_abs_diff(&oracle) < 1e-12,
            "{}",
            z.max_abs_diff(&oracle)
        );
    }

    #[test]
    fn dropout_masks_only_in_train_mode() {
        let c = cfg(3, 4);
        let p = MixerParams::<f64>::init(&c, 1).unwrap();
        let x = random_input(3, 4, 5);
        let (plain, _) = block_forward(&x, &p.blocks[0], None).unwrap();
        let mut rng = seed::rng(0);
        let (dropped, cache) = block_forward(&x, &p.blocks[0], Some((0.5, &mut rng))).unwrap();
        assert!(cache.token_mask.is_some() && cache.channel_mask.is_some());
        assert_ne!(plain, dropped);
        let mut rng = seed::rng(0);
        let (no_rate, cache) = block_forward(&x, &p.blocks[0], Some((0.0, &mut rng))).unwrap();
        assert!(cache.token_mask.is_none());
        assert_eq!(no_rate, plain);
    }
}
