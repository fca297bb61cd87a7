use latentmap_autodiff::{AutodiffError, Graph, NormMode, OpKind};

#[test]
fn add_is_elementwise() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(vec![1.0, 2.0], &[2]).unwrap();
    let b = g.constant(vec![3.0, 4.0], &[2]).unwrap();
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c), &[4.0, 6.0]);
}

#[test]
fn identity_matmul_returns_vector() {
    let mut g = Graph::<f64>::new();
    let eye = g.constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
    let v = g.constant(vec![0.5, -7.0, 3.25], &[3, 1]).unwrap();
    let out = g.matmul(eye, v).unwrap();
    assert_eq!(g.value(out), &[0.5, -7.0, 3.25]);
}

#[test]
fn conv_of_ones_counts_window_overlap() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![1.0; 16], &[1, 1, 4, 4]).unwrap();
    let w = g.constant(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
    let y = g.conv2d(x, w, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 4]);
    let v = g.value(y);
    // interior pixels see the full 3x3 window, corners 2x2, edges 2x3
    assert_eq!(v[5], 9.0);
    assert_eq!(v[10], 9.0);
    assert_eq!(v[0], 4.0);
    assert_eq!(v[1], 6.0);
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![0.3, -1.0, 2.0, 5.0, 1.5, -0.25], &[2, 3]).unwrap();
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn l2_gradient_is_twice_input() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![1.0, -2.0], &[2]).unwrap();
    let r = g.l2_norm_squared(x);
    g.backward(r).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
}

#[test]
fn repeated_backward_accumulates_until_reset() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![1.0, -2.0], &[2]).unwrap();
    let r = g.l2_norm_squared(x);
    g.backward(r).unwrap();
    g.backward(r).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, -8.0]);
    g.zero_grad();
    g.backward(r).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
}

#[test]
fn backward_rejects_non_scalar_root_and_empty_tape() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![1.0, 2.0], &[2]).unwrap();
    assert_eq!(g.backward(x), Err(AutodiffError::NonScalarRoot(vec![2])));

    let mut empty = Graph::<f64>::new();
    let mut other = Graph::<f64>::new();
    let s = other.constant(vec![1.0], &[1]).unwrap();
    assert_eq!(empty.backward(s), Err(AutodiffError::EmptyTape));
}

#[test]
fn shape_mismatch_names_op_and_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let b = g.constant(vec![0.0; 6], &[3, 2]).unwrap();
    let err = g.add(a, b).unwrap_err();
    assert_eq!(err, AutodiffError::ShapeMismatch { op: OpKind::Add, lhs: vec![2, 3], rhs: vec![3, 2] });
    assert!(err.to_string().contains("add"));

    let c = g.constant(vec![0.0; 4], &[2, 2]).unwrap();
    let err = g.matmul(a, c).unwrap_err();
    assert!(matches!(err, AutodiffError::ShapeMismatch { op: OpKind::MatMul, .. }));
}

#[test]
fn op_kind_parsing() {
    assert_eq!("conv2d".parse::<OpKind>().unwrap(), OpKind::Conv2d);
    assert_eq!("L2-norm-squared".parse::<OpKind>().unwrap(), OpKind::L2NormSquared);
    assert_eq!(
        "softmax".parse::<OpKind>(),
        Err(AutodiffError::UnknownOp("softmax".into()))
    );
    for k in OpKind::ALL {
        assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
    }
}

#[test]
fn tape_is_topological_and_backward_visits_each_op_once() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![0.5, -1.5, 2.0, 1.0], &[2, 2]).unwrap();
    let w = g.param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let y = g.matmul(x, w).unwrap();
    let t = g.tanh(y);
    let s = g.square(t);
    let z = g.add(s, y).unwrap();
    let r = g.sum(z);
    assert_eq!(g.tensor(r).id(), g.len() - 1);
    for v in [y, t, s, z, r] {
        assert!(g.inputs(v).iter().all(|i| i.id() < v.id()));
    }
    g.backward(r).unwrap();
    // matmul, tanh, square, add, sum
    assert_eq!(g.last_backward_visits(), 5);
}

#[test]
fn detached_values_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![3.0], &[1]).unwrap();
    let d = g.detach(x);
    let p = g.mul(x, d).unwrap();
    g.backward(p).unwrap();
    // d(x * stop(x))/dx = stop(x) = 3
    assert_eq!(g.grad(x).unwrap(), &[3.0]);
    assert!(g.grad(d).is_none());
}

#[test]
fn max_pool_and_upsample_shapes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant((0..32).map(f64::from).collect(), &[1, 2, 4, 4]).unwrap();
    let p = g.max_pool2x2(x).unwrap();
    assert_eq!(g.shape(p), &[1, 2, 2, 2]);
    assert_eq!(g.value(p), &[5.0, 7.0, 13.0, 15.0, 21.0, 23.0, 29.0, 31.0]);
    let u = g.upsample2x(p).unwrap();
    assert_eq!(g.shape(u), &[1, 2, 4, 4]);
    // a constant plane stays constant under bilinear upsampling
    let c = g.constant(vec![0.75; 9], &[1, 1, 3, 3]).unwrap();
    let cu = g.upsample2x(c).unwrap();
    assert!(g.value(cu).iter().all(|&v| (v - 0.75).abs() < 1e-15));
    let odd = g.constant(vec![0.0; 9], &[1, 1, 3, 3]).unwrap();
    assert!(g.max_pool2x2(odd).is_err());
}

#[test]
fn transposed_conv_output_size() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(vec![1.0; 8], &[2, 4, 1, 1]).unwrap();
    let w = g.constant(vec![0.1; 4 * 3 * 16], &[4, 3, 4, 4]).unwrap();
    let y = g.conv_transpose2d(z, w, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 4, 4]);
    let w2 = g.constant(vec![0.1; 3 * 2 * 16], &[3, 2, 4, 4]).unwrap();
    let y2 = g.conv_transpose2d(y, w2, 2, 1).unwrap();
    assert_eq!(g.shape(y2), &[2, 2, 8, 8]);
}

#[test]
fn batch_norm_batch_mode_normalizes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0], &[3, 2]).unwrap();
    let gamma = g.constant(vec![1.0, 1.0], &[2]).unwrap();
    let beta = g.constant(vec![0.0, 0.0], &[2]).unwrap();
    let (y, m) = g.batch_norm(x, gamma, beta, NormMode::Batch, 0.0).unwrap();
    let m = m.unwrap();
    assert_eq!(m.mean, vec![(1.0 + 3.0 + 20.0) / 3.0, (2.0 + 10.0 + 30.0) / 3.0]);
    assert_eq!(m.count, 3);
    let v = g.value(y);
    for ch in 0..2 {
        let col: Vec<f64> = (0..3).map(|r| v[r * 2 + ch]).collect();
        let mean: f64 = col.iter().sum::<f64>() / 3.0;
        let var: f64 = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_inference_is_affine() {
    // superposition on the normalized form: bn(a x1 + b x2) - beta
    //   = a (bn(x1) - beta) + b (bn(x2) - beta)   whenever the running mean is zero
    // and, with a nonzero mean, bn(x) - bn(0) is linear in x.
    let mean = [0.4, -1.0, 2.0];
    let var = [1.5, 0.25, 4.0];
    let gamma = vec![0.7, -1.2, 2.0];
    let beta = vec![0.1, 0.2, -0.3];
    let x1: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let x2: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
    let (a, b) = (1.7, -0.6);
    let run = |x: Vec<f64>| {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x, &[2, 3, 2]).unwrap();
        let gv = g.constant(gamma.clone(), &[3]).unwrap();
        let bv = g.constant(beta.clone(), &[3]).unwrap();
        let (y, m) = g
            .batch_norm(xv, gv, bv, NormMode::Running { mean: &mean, var: &var }, 1e-5)
            .unwrap();
        assert!(m.is_none());
        g.value(y).to_vec()
    };
    let zero = run(vec![0.0; 12]);
    let y1 = run(x1.clone());
    let y2 = run(x2.clone());
    let mix = run(x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect());
    for i in 0..12 {
        let lin = a * (y1[i] - zero[i]) + b * (y2[i] - zero[i]);
        assert!((mix[i] - zero[i] - lin).abs() < 1e-12);
    }
}

#[test]
fn leaves_validate_shape_and_length() {
    let mut g = Graph::<f32>::new();
    assert!(matches!(g.param(vec![1.0; 3], &[2, 2]), Err(AutodiffError::LengthMismatch { .. })));
    assert!(matches!(g.param(vec![], &[0]), Err(AutodiffError::InvalidShape(_))));
    let x = g.param(vec![1.0; 4], &[2, 2]).unwrap();
    assert!(g.reshape(x, &[4, 1]).is_ok());
    assert!(g.reshape(x, &[3]).is_err());
}
