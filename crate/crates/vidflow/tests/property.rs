//! Property tests for the numeric invariants that must hold on arbitrary
//! finite inputs, not just hand-picked cases.

use proptest::prelude::*;

use vidflow::graph::Graph;
use vidflow::tensor::Tensor;
use vidflow::video::{read_vvf, write_vvf, Video};

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Softmax rows are nonnegative and sum to 1 within 1e-6, including for
    /// rows with large spread (max subtraction keeps exp in range).
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9,
                               scale in 1.0f64..300.0, raw in finite_vec(32, -1.0, 1.0)) {
        let data: Vec<f64> = (0..rows * cols).map(|i| raw[i % raw.len()] * scale).collect();
        let g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![rows, cols], data).unwrap());
        let y = g.softmax_lastdim(x).unwrap();
        let out = g.value(y);
        for row in out.data().chunks_exact(cols) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row sum {sum}");
        }
    }

    /// Rotary rotation preserves the L2 norm of every channel pair.
    #[test]
    fn rope_preserves_pair_norms(s in 1usize..6, half in 1usize..5,
                                 xs in finite_vec(64, -3.0, 3.0),
                                 angs in finite_vec(32, -7.0, 7.0)) {
        let d = 2 * half;
        let x_data: Vec<f64> = (0..s * d).map(|i| xs[i % xs.len()]).collect();
        let a_data: Vec<f64> = (0..s * half).map(|i| angs[i % angs.len()]).collect();
        let x = Tensor::from_vec(vec![1, s, d], x_data.clone()).unwrap();
        let angles = Tensor::from_vec(vec![s, half], a_data).unwrap();
        let g = Graph::new();
        let y = g.rope_rotate(g.constant(x), &angles).unwrap();
        let out = g.value(y);
        for (orow, xrow) in out.data().chunks_exact(d).zip(x_data.chunks_exact(d)) {
            for i in 0..half {
                let n_out = orow[2 * i].hypot(orow[2 * i + 1]);
                let n_in = xrow[2 * i].hypot(xrow[2 * i + 1]);
                prop_assert!((n_out - n_in).abs() <= 1e-6, "pair norm {n_in} -> {n_out}");
            }
        }
    }

    /// VVF round-trips arbitrary in-range videos bit-exactly.
    #[test]
    fn vvf_roundtrip(f in 1usize..4, h in 1usize..6, w in 1usize..6,
                     vals in finite_vec(128, 0.0, 1.0)) {
        let n = f * h * w * 3;
        let data: Vec<f32> = (0..n).map(|i| vals[i % vals.len()] as f32).collect();
        let video = Video::from_data(f, h, w, 3, data).unwrap();
        let dir = std::env::temp_dir().join(format!("vidflow-prop-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.vvf");
        write_vvf(&path, &video).unwrap();
        prop_assert!(read_vvf(&path).unwrap().bit_eq(&video));
    }

    /// The flow interpolant is exact at both endpoints for any operands.
    #[test]
    fn flow_endpoints_exact(z in finite_vec(16, -2.0, 2.0), e in finite_vec(16, -2.0, 2.0)) {
        let z0 = Tensor::from_vec(vec![16], z).unwrap();
        let eps = Tensor::from_vec(vec![16], e).unwrap();
        let s0 = vidflow::flow::noisy_interpolate(&z0, &eps, 0.0).unwrap();
        prop_assert!(s0.zt.bit_eq(&z0));
        let s1 = vidflow::flow::noisy_interpolate(&z0, &eps, 1.0).unwrap();
        prop_assert!(s1.zt.bit_eq(&eps));
    }
}
