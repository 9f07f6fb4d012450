//! Randomized invariants across modules.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coocc::fusion::{extract_nonempty, fuse_baseline_concat, gs_fuse, knn_search, CoordSource};
use coocc::geometry::{
    lidar_depth_map, lift_views, pool_points, DepthBins, DepthDistribution, LiftPlan, LiftView,
};
use coocc::losses::{lovasz_softmax_loss, occupancy_loss, total_loss, LossComponents};
use coocc::metrics::{confusion, iou, miou};
use coocc::nn::{softmax_row, AdamW};
use coocc::pipeline::sensors::{march_step, simulate_lidar};
use coocc::pipeline::{generate_scene, SceneParams};
use coocc::render::{composite_color, generate_rays, opacity, ray_weights, sample_features};
use coocc::{
    Activation, Branch, CameraModel, CoordList, DenseArray, GridSpec, Mlp, PointCloud,
    SemanticOccGrid, SparseFeatureGrid,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_grid(spec: GridSpec, c: usize, fill: f64, r: &mut ChaCha8Rng) -> SparseFeatureGrid {
    let mut g = SparseFeatureGrid::empty(spec, c).unwrap();
    for v in 0..spec.n_cells() {
        if r.gen_bool(fill) {
            let f: Vec<f64> = (0..c).map(|_| r.gen_range(-2.0..2.0)).collect();
            g.set(v, &f).unwrap();
        }
    }
    g
}

fn random_labels(spec: GridSpec, n_c: usize, r: &mut ChaCha8Rng) -> SemanticOccGrid {
    let labels = (0..spec.n_cells())
        .map(|_| r.gen_range(0..n_c as u8))
        .collect();
    SemanticOccGrid::new(spec, n_c, labels).unwrap()
}

fn small_spec(r: &mut ChaCha8Rng) -> GridSpec {
    let dims = [r.gen_range(1..5), r.gen_range(1..7), r.gen_range(1..7)];
    GridSpec::new([-1.0, -1.5, -0.5], 0.5, dims).unwrap()
}

fn brute_knn(q: [i32; 3], targets: &[[i32; 3]], k: usize, r: f64) -> Vec<(usize, u64)> {
    let mut all: Vec<(u64, [i32; 3], usize)> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let d: i64 = (0..3)
                .map(|a| (q[a] - t[a]) as i64 * (q[a] - t[a]) as i64)
                .sum();
            (d as u64, *t, i)
        })
        .filter(|&(d, _, _)| (d as f64) <= r * r)
        .collect();
    all.sort();
    all.into_iter().take(k).map(|(d, _, i)| (i, d)).collect()
}

fn unique_coords(n: usize, dims: [i32; 3], r: &mut ChaCha8Rng) -> Vec<[i32; 3]> {
    let mut set = std::collections::BTreeSet::new();
    let cap = (dims[0] * dims[1] * dims[2]) as usize;
    while set.len() < n.min(cap) {
        set.insert([
            r.gen_range(0..dims[0]),
            r.gen_range(0..dims[1]),
            r.gen_range(0..dims[2]),
        ]);
    }
    set.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let mut out = vec![0.0; xs.len()];
        softmax_row(&xs, &mut out);
        prop_assert!(out.iter().all(|&p| p >= 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adamw_with_zero_gradient_and_decay_is_identity(
        params in prop::collection::vec(-5.0f64..5.0, 1..30),
        lr in 1e-5f64..1.0,
        steps in 1usize..5,
    ) {
        let mut p = params.clone();
        let g = vec![0.0; p.len()];
        let mut opt = AdamW::new(lr, 0.0);
        for _ in 0..steps {
            opt.step(vec![("p".into(), &mut p[..])], vec![("p".into(), &g[..])]).unwrap();
        }
        prop_assert_eq!(p, params);
    }

    #[test]
    fn zero_mlp_gives_half_under_sigmoid_and_zero_under_relu(seed: u64, rows in 1usize..6, din in 1usize..6) {
        let mut r = rng(seed);
        let x = DenseArray::new(vec![rows, din], (0..rows * din).map(|_| r.gen_range(-3.0..3.0)).collect()).unwrap();
        let sig = Mlp::zeros(&[din, 4, 3], &[Activation::Relu, Activation::Sigmoid]).unwrap();
        prop_assert!(sig.forward(&x).unwrap().data().iter().all(|&v| v == 0.5));
        let relu = Mlp::zeros(&[din, 3], &[Activation::Relu]).unwrap();
        prop_assert!(relu.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn voxelize_conserves_points(seed: u64, n in 0usize..300) {
        let mut r = rng(seed);
        let spec = GridSpec::toy();
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0), r.gen_range(-2.0..4.0)])
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let pooled = pool_points(&cloud, &spec);
        prop_assert_eq!(pooled.binned + pooled.dropped, n);
        let enc = Mlp::init(&[4, 8, 8], &[Activation::Relu, Activation::Identity], &mut r).unwrap();
        let g = coocc::geometry::voxelize(&cloud, &spec, &enc).unwrap();
        prop_assert!(g.invariants_hold());
        prop_assert_eq!(g.nonempty_count(), pooled.cells.len());
    }

    #[test]
    fn lift_is_a_partition_of_unity_and_keeps_the_mask_invariant(seed: u64, n_bins in 2usize..24) {
        let mut r = rng(seed);
        let spec = GridSpec::toy();
        let cam = CameraModel::looking_at_yaw([0.0, 0.0, 0.5], r.gen_range(-3.0..3.0), 1.6, 48, 24, 0)
            .unwrap()
            .downsampled(8)
            .unwrap();
        let (h, w) = (cam.image_h, cam.image_w);
        let bins = DepthBins::new(n_bins, 0.5, 12.0).unwrap();
        let mut probs = Vec::new();
        for _ in 0..h * w {
            let logits: Vec<f64> = (0..n_bins).map(|_| r.gen_range(-4.0..4.0)).collect();
            let mut p = vec![0.0; n_bins];
            softmax_row(&logits, &mut p);
            probs.extend(p);
        }
        let depth = DepthDistribution::new(h, w, bins, probs.clone()).unwrap();
        let feats = DenseArray::new(vec![h, w, 3], (0..h * w * 3).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let plan = LiftPlan::new(&cam, &spec, bins);
        let lifted = lift_views(&[LiftView { feats: &feats, depth: &depth, plan: &plan }], &spec, 3, 1e-3).unwrap();
        prop_assert!(lifted.grid.invariants_hold());
        let mut inside = 0.0;
        for px in 0..h * w {
            let row = &probs[px * n_bins..(px + 1) * n_bins];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            inside += (0..n_bins).filter(|&b| plan.target(px, b).is_some()).map(|b| row[b]).sum::<f64>();
        }
        prop_assert!((lifted.weights.iter().sum::<f64>() - inside).abs() < 1e-6);
    }

    #[test]
    fn project_then_unproject_round_trips(seed: u64) {
        let mut r = rng(seed);
        let cam = CameraModel::looking_at_yaw(
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(0.0..2.0)],
            r.gen_range(-3.1..3.1),
            r.gen_range(0.5..2.5),
            64,
            32,
            0,
        ).unwrap();
        let p = [r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0), r.gen_range(-3.0..5.0)];
        let pr = cam.project(p);
        prop_assume!(pr.depth > 1e-3);
        let back = cam.unproject(pr.u, pr.v, pr.depth);
        for a in 0..3 {
            prop_assert!((back[a] - p[a]).abs() < 1e-6);
        }
    }

    #[test]
    fn lidar_depth_is_positive_where_valid(seed: u64, n in 0usize..200) {
        let mut r = rng(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0), r.gen_range(-2.0..3.0)])
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let cam = CameraModel::looking_at_yaw([0.0, 0.0, 0.5], r.gen_range(-3.0..3.0), 1.7, 32, 16, 0).unwrap();
        let m = lidar_depth_map(&cloud, &cam, 8, 16).unwrap();
        for (d, &ok) in m.depth.iter().zip(&m.mask) {
            prop_assert!(!ok || *d > 0.0);
        }
    }

    #[test]
    fn knn_matches_brute_force_and_ignores_target_order(
        seed: u64,
        nq in 0usize..40,
        nt in 0usize..80,
        k in 1usize..4,
        r in 0.5f64..5.0,
    ) {
        let mut g = rng(seed);
        let dims = [4, 10, 10];
        let queries = unique_coords(nq, dims, &mut g);
        let targets = unique_coords(nt, dims, &mut g);
        let t = knn_search(
            &CoordList::new(queries.clone(), CoordSource::Lidar),
            &CoordList::new(targets.clone(), CoordSource::Camera),
            k,
            r,
        ).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let got: Vec<(usize, u64)> = t.neighbors(qi).collect();
            prop_assert_eq!(&got, &brute_knn(*q, &targets, k, r));
            prop_assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(got.iter().all(|&(_, d)| d as f64 <= r * r));
        }
        let mut shuffled: Vec<usize> = (0..targets.len()).collect();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut g);
        let perm: Vec<[i32; 3]> = shuffled.iter().map(|&i| targets[i]).collect();
        let t2 = knn_search(
            &CoordList::new(queries.clone(), CoordSource::Lidar),
            &CoordList::new(perm.clone(), CoordSource::Camera),
            k,
            r,
        ).unwrap();
        for qi in 0..queries.len() {
            let a: Vec<([i32; 3], u64)> = t.neighbors(qi).map(|(i, d)| (targets[i], d)).collect();
            let b: Vec<([i32; 3], u64)> = t2.neighbors(qi).map(|(i, d)| (perm[i], d)).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn gs_fuse_blocks_recover_inputs(seed: u64, c in 1usize..5) {
        let mut r = rng(seed);
        let spec = small_spec(&mut r);
        let f_i = random_grid(spec, c, 0.4, &mut r);
        let f_l = random_grid(spec, c, 0.4, &mut r);
        let lidar = extract_nonempty(&f_l, CoordSource::Lidar);
        let omega = DenseArray::new(vec![lidar.len(), 1], (0..lidar.len()).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let fused = gs_fuse(&f_i, &f_l, &omega, &lidar).unwrap();
        prop_assert_eq!(fused.channels(), 3 * c);
        let (b0, b1) = (fused.channel_block(0, c).unwrap(), fused.channel_block(c, 2 * c).unwrap());
        prop_assert_eq!(b0.features(), f_i.features());
        prop_assert_eq!(b1.features(), f_l.features());
        let concat = fuse_baseline_concat(&f_i, &f_l).unwrap();
        let first_two = fused.channel_block(0, 2 * c).unwrap();
        prop_assert_eq!(concat.features(), first_two.features());
    }

    #[test]
    fn compositing_invariants(seed: u64, n_s in 1usize..40) {
        let mut r = rng(seed);
        let sigma: Vec<f64> = (0..n_s).map(|_| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(0.0..8.0) }).collect();
        let delta = r.gen_range(0.01..1.0);
        let mut w = vec![0.0; n_s];
        ray_weights(&sigma, delta, &mut w);
        let mut t = 1.0;
        let mut prev = 1.0;
        for &wi in &w {
            prop_assert!(t <= prev + 1e-15 && t >= -1e-15);
            prev = t;
            t -= wi;
        }
        let c1: Vec<f64> = (0..3 * n_s).map(|_| r.gen_range(0.0..1.0)).collect();
        let c2: Vec<f64> = (0..3 * n_s).map(|_| r.gen_range(0.0..1.0)).collect();
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let o = opacity(&sigma, n_s, delta).unwrap()[0];
        prop_assert!((0.0..=1.0).contains(&o));
        let a = composite_color(&sigma, &c1, n_s, delta).unwrap();
        let b = composite_color(&sigma, &c2, n_s, delta).unwrap();
        let s = composite_color(&sigma, &sum, n_s, delta).unwrap();
        for ch in 0..3 {
            prop_assert!(a[ch] <= o + 1e-12);
            prop_assert!((a[ch] + b[ch] - s[ch]).abs() < 1e-9);
        }
    }

    #[test]
    fn trilinear_weights_are_a_partition_of_unity(seed: u64) {
        let mut r = rng(seed);
        let spec = GridSpec::new([-2.0, -2.0, -1.0], 0.5, [4, 8, 8]).unwrap();
        let mut ones = SparseFeatureGrid::empty(spec, 1).unwrap();
        for v in 0..spec.n_cells() {
            ones.set(v, &[1.0]).unwrap();
        }
        let cam = CameraModel::looking_at_yaw(
            [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-0.5..0.5)],
            r.gen_range(-3.0..3.0),
            1.5,
            16,
            8,
            0,
        ).unwrap();
        let rays = generate_rays(&cam, 4, 0.1, 4.0, 16).unwrap();
        let f = sample_features(&ones, &rays).unwrap();
        for (s, t) in f.taps.iter().enumerate() {
            if t.is_some() {
                prop_assert!((f.sample(s)[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative_and_totals_add_up(seed: u64, n_c in 2usize..6) {
        let mut r = rng(seed);
        let spec = small_spec(&mut r);
        let gt = random_labels(spec, n_c, &mut r);
        let logits = DenseArray::new(
            vec![spec.n_cells(), n_c],
            (0..spec.n_cells() * n_c).map(|_| r.gen_range(-4.0..4.0)).collect(),
        ).unwrap();
        let occ = occupancy_loss(&logits, &gt).unwrap();
        prop_assert!(occ.l_ce >= 0.0 && (0.0..=1.0 + 1e-12).contains(&occ.l_ls));
        let mut probs = DenseArray::zeros(logits.shape().to_vec());
        for v in 0..logits.rows() {
            softmax_row(logits.row(v), probs.row_mut(v));
        }
        let ls = lovasz_softmax_loss(&probs, &gt).unwrap().value;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ls));
        // rendering terms arrive already weighted
        let (l_d, l_rc, l_rd) = (r.gen_range(0.0..3.0), r.gen_range(0.0..1.0), r.gen_range(0.0..2.0));
        let (lrc, lrd) = (r.gen_range(0.0..2.0), r.gen_range(0.0..2.0));
        let rep = total_loss(
            LossComponents { l_ce: occ.l_ce, l_ls: occ.l_ls, l_d: Some(l_d), l_rc: Some(l_rc), l_rd: Some(l_rd) },
            Branch::LidarCamera,
            true,
            lrc,
            lrd,
        ).unwrap();
        prop_assert!((rep.total - (occ.l_ce + occ.l_ls + l_d + l_rc + l_rd)).abs() < 1e-9);
        let lidar = total_loss(
            LossComponents { l_ce: occ.l_ce, l_ls: occ.l_ls, l_d: None, l_rc: None, l_rd: Some(l_rd) },
            Branch::LidarOnly,
            true,
            lrc,
            lrd,
        ).unwrap();
        prop_assert!((lidar.total - (occ.l_ce + occ.l_ls + l_rd)).abs() < 1e-9);
    }

    #[test]
    fn metrics_are_invariant_under_class_relabeling(seed: u64, n_c in 2usize..7) {
        let mut r = rng(seed);
        let spec = small_spec(&mut r);
        let gt = random_labels(spec, n_c, &mut r);
        let pred = random_labels(spec, n_c, &mut r);
        let m = confusion(&pred, &gt).unwrap();
        prop_assert_eq!(m.total() as usize, spec.n_cells());
        let mut perm: Vec<u8> = (1..n_c as u8).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let map = |g: &SemanticOccGrid| {
            let labels = g.labels.iter().map(|&l| if l == 0 { 0 } else { perm[l as usize - 1] }).collect();
            SemanticOccGrid::new(spec, n_c, labels).unwrap()
        };
        let m2 = confusion(&map(&pred), &map(&gt)).unwrap();
        prop_assert!((iou(&m) - iou(&m2)).abs() < 1e-12);
        prop_assert!((miou(&m) - miou(&m2)).abs() < 1e-12);
    }

    #[test]
    fn lidar_points_lie_near_occupied_voxels(seed in 0u64..1000) {
        let spec = GridSpec::toy();
        let scene = generate_scene(seed, &spec, 4, &SceneParams::default()).unwrap();
        let params = coocc::pipeline::LidarParams { n_azimuth: 90, n_elevation: 8, ..Default::default() };
        let cloud = simulate_lidar(&scene, [0.0, 0.0, 1.0], &params, seed).unwrap();
        prop_assert!(cloud.len() <= 90 * 8);
        let step = march_step(&spec);
        for p in &cloud.points {
            let idx = spec.locate(*p).unwrap();
            let c = spec.center(idx);
            let half = spec.voxel_size / 2.0;
            prop_assert!(scene.gt_occ.is_occupied(spec.flat(idx)));
            let to_face = (0..3).map(|a| half - (p[a] - c[a]).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(to_face <= step + 1e-9);
        }
    }
}
