use super::*;
use crate::rng::Rng;

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_dual(rng: &mut Rng, rows: usize, cols: usize) -> DualBatch {
    DualBatch::new(random_matrix(rng, rows, cols, 1.0), random_matrix(rng, rows, cols, 1.0)).unwrap()
}

fn shifted(x: &DualBatch, h: f64) -> DualBatch {
    DualBatch::constant(x.value.zip_map(&x.tangent, |v, d| v + h * d).unwrap())
}

fn central_difference(f: impl Fn(&DualBatch) -> Matrix, x: &DualBatch, h: f64) -> Matrix {
    let plus = f(&shifted(x, h));
    let minus = f(&shifted(x, -h));
    plus.zip_map(&minus, |p, m| (p - m) / (2.0 * h)).unwrap()
}

fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

fn fwd(prim: Primitive, params: &[Matrix], x: &DualBatch, mode: Mode, rng: &Rng) -> (DualBatch, PrimitiveCache) {
    let mut r = rng.clone();
    dual_forward(&prim, params, x, mode, &mut r).unwrap()
}

fn bn_params(rng: &mut Rng, cols: usize) -> Vec<Matrix> {
    vec![
        random_matrix(rng, 1, cols, 1.0),
        random_matrix(rng, 1, cols, 1.0),
        random_matrix(rng, 1, cols, 0.3),
        random_matrix(rng, 1, cols, 0.3).map(|v| 0.5 + v * v),
    ]
}

#[test]
fn swish_at_zero() {
    let x = DualBatch::variable(Matrix::zeros(1, 1));
    let (y, _) = fwd(Primitive::Swish, &[], &x, Mode::Train, &Rng::from_seed(0));
    assert_eq!(y.value[(0, 0)], 0.0);
    assert_eq!(y.tangent[(0, 0)], 0.5);
}

#[test]
fn swish_at_one_matches_finite_difference() {
    let h = 1e-6;
    let oracle = (swish(1.0 + h) - swish(1.0 - h)) / (2.0 * h);
    let x = DualBatch::variable(Matrix::filled(1, 1, 1.0));
    let (y, _) = fwd(Primitive::Swish, &[], &x, Mode::Train, &Rng::from_seed(0));
    let t = y.tangent[(0, 0)];
    assert!((t - oracle).abs() < 1e-8, "{t} vs {oracle}");
    assert!((t - 0.92767).abs() < 1e-5);
}

#[test]
fn swish_second_derivative_matches_finite_difference() {
    let h = 1e-6;
    for &x in &[-6.0, -2.5, -1.0, -0.1, 0.0, 0.3, 1.0, 2.0, 7.5] {
        let fd = (swish_d1(x + h) - swish_d1(x - h)) / (2.0 * h);
        assert!((swish_d2(x) - fd).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn affine_identity_is_transparent() {
    let mut rng = Rng::from_seed(1);
    let x = random_dual(&mut rng, 5, 3);
    let params = vec![Matrix::identity(3), Matrix::zeros(1, 3)];
    let (y, cache) = fwd(Primitive::Affine, &params, &x, Mode::Train, &rng);
    assert_eq!(y, x);
    let av = random_matrix(&mut rng, 5, 3, 1.0);
    let at = random_matrix(&mut rng, 5, 3, 1.0);
    let adj = dual_backward(&Primitive::Affine, &cache, &av, &at).unwrap();
    assert_eq!(adj.value, av);
    assert_eq!(adj.tangent, at);
}

#[test]
fn zero_adjoints_give_zero_gradients() {
    let mut rng = Rng::from_seed(2);
    let x = random_dual(&mut rng, 6, 4);
    let z = Matrix::zeros(6, 4);
    let cases: Vec<(Primitive, Vec<Matrix>)> = vec![
        (Primitive::Affine, vec![random_matrix(&mut rng, 4, 4, 1.0), random_matrix(&mut rng, 1, 4, 1.0)]),
        (Primitive::Swish, vec![]),
        (Primitive::BatchNorm { epsilon: 1e-5 }, bn_params(&mut rng, 4)),
        (Primitive::Dropout { rate: 0.3 }, vec![]),
        (Primitive::Sigmoid, vec![]),
        (Primitive::Identity, vec![]),
    ];
    for (prim, params) in cases {
        let (_, cache) = fwd(prim, &params, &x, Mode::Train, &rng);
        let adj = dual_backward(&prim, &cache, &z, &z).unwrap();
        assert_eq!(adj.value.max_abs(), 0.0, "{}", prim.name());
        assert_eq!(adj.tangent.max_abs(), 0.0, "{}", prim.name());
        for p in &adj.params {
            assert_eq!(p.max_abs(), 0.0, "{}", prim.name());
        }
    }
}

#[test]
fn tangents_match_finite_differences_for_every_primitive() {
    let h = 1e-6;
    let mut rng = Rng::from_seed(3);
    for trial in 0..20 {
        let x = random_dual(&mut rng, 7, 5);
        let affine = vec![random_matrix(&mut rng, 5, 5, 1.0), random_matrix(&mut rng, 1, 5, 1.0)];
        let bn = bn_params(&mut rng, 5);
        let drop_rng = Rng::from_seed(100 + trial);
        let cases: Vec<(Primitive, Vec<Matrix>, Mode)> = vec![
            (Primitive::Affine, affine, Mode::Train),
            (Primitive::Swish, vec![], Mode::Train),
            (Primitive::Sigmoid, vec![], Mode::Train),
            (Primitive::Identity, vec![], Mode::Train),
            (Primitive::Dropout { rate: 0.25 }, vec![], Mode::Train),
            (Primitive::BatchNorm { epsilon: 1e-5 }, bn.clone(), Mode::Eval),
        ];
        for (prim, params, mode) in cases {
            let (y, _) = fwd(prim, &params, &x, mode, &drop_rng);
            let fd = central_difference(|z| fwd(prim, &params, z, mode, &drop_rng).0.value, &x, h);
            let err = max_rel(&y.tangent, &fd);
            assert!(err <= 1e-5, "{} trial {trial}: {err}", prim.name());
        }

        // Train-mode batch norm: statistics held at their batch values.
        let prim = Primitive::BatchNorm { epsilon: 1e-5 };
        let (y, cache) = fwd(prim, &bn, &x, Mode::Train, &drop_rng);
        let (mean, var) = cache.batch_statistics().unwrap();
        let frozen = vec![
            bn[0].clone(),
            bn[1].clone(),
            Matrix::from_vec(1, 5, mean.to_vec()).unwrap(),
            Matrix::from_vec(1, 5, var.to_vec()).unwrap(),
        ];
        let fd = central_difference(|z| fwd(prim, &frozen, z, Mode::Eval, &drop_rng).0.value, &x, h);
        let err = max_rel(&y.tangent, &fd);
        assert!(err <= 1e-5, "train batch-norm trial {trial}: {err}");
    }
}

/// Layers of a small chain used for the reverse-pass oracle.
fn chain() -> Vec<Primitive> {
    vec![
        Primitive::Affine,
        Primitive::Swish,
        Primitive::Affine,
        Primitive::BatchNorm { epsilon: 1e-5 },
        Primitive::Swish,
        Primitive::Dropout { rate: 0.2 },
        Primitive::Affine,
        Primitive::Sigmoid,
    ]
}

fn chain_params(rng: &mut Rng) -> Vec<Vec<Matrix>> {
    vec![
        vec![random_matrix(rng, 3, 6, 0.7), random_matrix(rng, 1, 6, 0.3)],
        vec![],
        vec![random_matrix(rng, 6, 5, 0.5), random_matrix(rng, 1, 5, 0.3)],
        bn_params(rng, 5),
        vec![],
        vec![],
        vec![random_matrix(rng, 5, 2, 0.5), random_matrix(rng, 1, 2, 0.3)],
        vec![],
    ]
}

/// sum(value) + sum(tangent) of the chain output; dropout masks come from `rng`.
fn chain_loss(params: &[Vec<Matrix>], x: &DualBatch, rng: &Rng) -> f64 {
    let mut r = rng.clone();
    let mut h = x.clone();
    for (prim, p) in chain().iter().zip(params) {
        h = dual_forward(prim, p, &h, Mode::Train, &mut r).unwrap().0;
    }
    h.value.sum() + h.tangent.sum()
}

fn chain_grads(params: &[Vec<Matrix>], x: &DualBatch, rng: &Rng) -> (Vec<Vec<Matrix>>, Matrix) {
    let mut r = rng.clone();
    let mut h = x.clone();
    let mut caches = Vec::new();
    for (prim, p) in chain().iter().zip(params) {
        let (out, cache) = dual_forward(prim, p, &h, Mode::Train, &mut r).unwrap();
        caches.push(cache);
        h = out;
    }
    let mut av = Matrix::filled(h.rows(), h.cols(), 1.0);
    let mut at = Matrix::filled(h.rows(), h.cols(), 1.0);
    let mut grads = vec![Vec::new(); params.len()];
    for (i, (prim, cache)) in chain().iter().zip(&caches).enumerate().rev() {
        let adj = dual_backward(prim, cache, &av, &at).unwrap();
        grads[i] = adj.params;
        av = adj.value;
        at = adj.tangent;
    }
    (grads, av)
}

/// Relative error, with a floor at the roundoff level of a central difference
/// (about 1e-16 · |loss| / h ≈ 1e-10 here) so near-zero entries are not judged on noise.
fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[test]
fn chain_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut rng = Rng::from_seed(4);
    for _ in 0..3 {
        let params = chain_params(&mut rng);
        let x = random_dual(&mut rng, 9, 3);
        let drop_rng = Rng::from_seed(rng.next_u64());
        let (grads, adj_x) = chain_grads(&params, &x, &drop_rng);
        let mut worst: f64 = 0.0;
        for (layer, block) in params.iter().enumerate() {
            // Running statistics (batch-norm params 2 and 3) are not trainable.
            for (k, m) in block.iter().enumerate().take(grads[layer].len()) {
                for idx in 0..m.as_slice().len() {
                    let eval = |delta: f64| {
                        let mut p = params.clone();
                        p[layer][k].as_mut_slice()[idx] += delta;
                        chain_loss(&p, &x, &drop_rng)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    worst = worst.max(scaled_error(grads[layer][k].as_slice()[idx], fd));
                }
            }
        }
        for idx in 0..x.value.as_slice().len() {
            let eval = |delta: f64| {
                let mut xv = x.clone();
                xv.value.as_mut_slice()[idx] += delta;
                chain_loss(&params, &xv, &drop_rng)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(scaled_error(adj_x.as_slice()[idx], fd));
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }
}

#[test]
fn backward_is_additive_in_adjoints() {
    let mut rng = Rng::from_seed(5);
    let x = random_dual(&mut rng, 6, 4);
    let cases: Vec<(Primitive, Vec<Matrix>)> = vec![
        (Primitive::Affine, vec![random_matrix(&mut rng, 4, 3, 1.0), random_matrix(&mut rng, 1, 3, 1.0)]),
        (Primitive::Swish, vec![]),
        (Primitive::BatchNorm { epsilon: 1e-5 }, bn_params(&mut rng, 4)),
        (Primitive::Sigmoid, vec![]),
    ];
    for (prim, params) in cases {
        let (y, cache) = fwd(prim, &params, &x, Mode::Train, &rng);
        let (r, c) = y.shape();
        let a1 = (random_matrix(&mut rng, r, c, 1.0), random_matrix(&mut rng, r, c, 1.0));
        let a2 = (random_matrix(&mut rng, r, c, 1.0), random_matrix(&mut rng, r, c, 1.0));
        let sum_v = a1.0.zip_map(&a2.0, |a, b| a + b).unwrap();
        let sum_t = a1.1.zip_map(&a2.1, |a, b| a + b).unwrap();
        let g1 = dual_backward(&prim, &cache, &a1.0, &a1.1).unwrap();
        let g2 = dual_backward(&prim, &cache, &a2.0, &a2.1).unwrap();
        let g = dual_backward(&prim, &cache, &sum_v, &sum_t).unwrap();
        let close = |a: &Matrix, b: &Matrix, c: &Matrix| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .zip(c.as_slice())
                .all(|((x, y), z)| (x + y - z).abs() <= 1e-12 * (1.0 + z.abs()))
        };
        assert!(close(&g1.value, &g2.value, &g.value), "{}", prim.name());
        assert!(close(&g1.tangent, &g2.tangent, &g.tangent), "{}", prim.name());
        for ((p1, p2), p) in g1.params.iter().zip(&g2.params).zip(&g.params) {
            assert!(close(p1, p2, p), "{}", prim.name());
        }
    }
}

#[test]
fn contract_errors() {
    let mut rng = Rng::from_seed(6);
    let x = random_dual(&mut rng, 3, 2);
    let w = vec![Matrix::zeros(3, 2)];
    let err = dual_forward(&Primitive::Affine, &w, &x, Mode::Train, &mut rng).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));

    let mut bad = x.clone();
    bad.value[(0, 0)] = f64::NAN;
    let err = dual_forward(&Primitive::Swish, &[], &bad, Mode::Train, &mut rng).unwrap_err();
    assert!(matches!(err, crate::Error::NumericDomain { .. }));

    let (_, cache) = dual_forward(&Primitive::Swish, &[], &x, Mode::Train, &mut rng).unwrap();
    let z = Matrix::zeros(3, 2);
    let err = dual_backward(&Primitive::Sigmoid, &cache, &z, &z).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn forward_is_deterministic_for_equal_seeds() {
    let mut rng = Rng::from_seed(7);
    let x = random_dual(&mut rng, 8, 4);
    let a = fwd(Primitive::Dropout { rate: 0.5 }, &[], &x, Mode::Train, &Rng::from_seed(11)).0;
    let b = fwd(Primitive::Dropout { rate: 0.5 }, &[], &x, Mode::Train, &Rng::from_seed(11)).0;
    assert_eq!(a, b);
    // Same mask on both channels.
    for i in 0..8 {
        for j in 0..4 {
            assert_eq!(a.value[(i, j)] == 0.0, a.tangent[(i, j)] == 0.0);
        }
    }
}

#[test]
fn concat_round_trip() {
    let t = DualBatch::variable(Matrix::column(&[0.1, 0.2]));
    let e = DualBatch::constant(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let (joined, cache) = concat_forward(&[&t, &e]).unwrap();
    assert_eq!(joined.value.row(1), &[0.2, 4.0, 5.0, 6.0]);
    assert_eq!(joined.tangent.row(0), &[1.0, 0.0, 0.0, 0.0]);
    let parts = concat_backward(&cache, &joined.value, &joined.tangent).unwrap();
    assert_eq!(parts[0].0, t.value);
    assert_eq!(parts[1].1, e.tangent);
}
