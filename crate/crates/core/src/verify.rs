//! Finite-difference gradient suite over every differentiable kernel.
//!
//! Each check draws a small random instance from its seed, contracts the op's
//! output with random upstream weights to a scalar, and compares the analytic
//! backward pass against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{
    extract_nonempty, gather_backward, gather_neighbor_features, gs_fuse, gs_fuse_backward,
    knn_gate, knn_gate_backward, knn_search, CoordSource, GateMode, GateNet,
};
use crate::geometry::{
    lift_backward, lift_views, pool_points, voxelize_backward, voxelize_cached, CameraModel,
    DepthBins, DepthDistribution, GridSpec, LiftPlan, LiftView, PointCloud, SparseFeatureGrid,
};
use crate::losses::{
    cross_entropy_loss, explicit_depth_loss, lovasz_softmax_loss, occupancy_loss,
    rendering_color_loss, rendering_depth_loss, SemanticOccGrid,
};
use crate::nn::{grad_check, softmax_row, Activation, DenseArray, LinearLayer, Mlp};
use crate::render::{
    composite_backward, composite_color, composite_depth, density_color_heads,
    density_color_heads_backward, render_view, render_view_backward, sample_features,
    sample_features_backward, upsample_bilinear, upsample_bilinear_backward, CompositeGrads,
    DepthMode, FrustumFeatures, RayBundle, RenderHeads,
};
use crate::{Error, Result};

/// Tolerance for single kernels and losses.
pub const KERNEL_TOLERANCE: f64 = 1e-5;
/// Tolerance for the chained render path.
pub const RENDER_CHAIN_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;
/// The chained render path sums many terms; a wider step keeps roundoff small
/// next to its smallest gradients while staying well inside `KINK_MARGIN`.
const CHAIN_EPS: f64 = 1e-4;
/// Instances with a ReLU input closer than this to zero are redrawn.
const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 64;

/// Redraws `draw` until its instance sits clear of ReLU kinks.
fn clear_of_kinks<T>(
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<(T, f64)>,
) -> Result<T> {
    for _ in 0..MAX_REDRAWS {
        let (t, margin) = draw(rng)?;
        if margin > KINK_MARGIN {
            return Ok(t);
        }
    }
    Err(Error::Numerical {
        index: 0,
        message: "could not draw an instance clear of activation kinks".into(),
    })
}

type Check = fn(&mut ChaCha8Rng) -> Result<f64>;

/// Worst relative error of one check over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub worst_seed: u64,
    pub seeds: u64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn checks() -> Vec<(&'static str, f64, Check)> {
    vec![
        ("linear", KERNEL_TOLERANCE, check_linear),
        ("activation.relu", KERNEL_TOLERANCE, check_relu),
        ("activation.sigmoid", KERNEL_TOLERANCE, check_sigmoid),
        ("activation.softmax", KERNEL_TOLERANCE, check_softmax),
        ("mlp", KERNEL_TOLERANCE, check_mlp),
        ("voxelize.encoder", KERNEL_TOLERANCE, check_voxelize),
        ("lift", KERNEL_TOLERANCE, check_lift),
        ("knn_gate", KERNEL_TOLERANCE, check_gate),
        ("gs_fuse", KERNEL_TOLERANCE, check_gs_fuse),
        ("gather_gate_fuse", KERNEL_TOLERANCE, check_gather_gate_fuse),
        ("trilinear_sampling", KERNEL_TOLERANCE, check_sampling),
        ("render_heads", KERNEL_TOLERANCE, check_heads),
        ("composite.color", KERNEL_TOLERANCE, check_composite_color),
        ("composite.paper_literal", KERNEL_TOLERANCE, |r| {
            check_composite_depth(r, DepthMode::PaperLiteral)
        }),
        ("composite.expected_depth", KERNEL_TOLERANCE, |r| {
            check_composite_depth(r, DepthMode::ExpectedDepth)
        }),
        ("upsample_bilinear", KERNEL_TOLERANCE, check_upsample),
        ("loss.cross_entropy", KERNEL_TOLERANCE, check_ce),
        ("loss.lovasz_softmax", KERNEL_TOLERANCE, check_lovasz),
        ("loss.occupancy", KERNEL_TOLERANCE, check_occupancy),
        (
            "loss.explicit_depth",
            KERNEL_TOLERANCE,
            check_explicit_depth,
        ),
        ("loss.rendering_color", KERNEL_TOLERANCE, check_color_loss),
        ("loss.rendering_depth", KERNEL_TOLERANCE, check_depth_loss),
        ("render_chain", RENDER_CHAIN_TOLERANCE, check_render_chain),
    ]
}

/// Runs every check at seeds `base_seed..base_seed + n_seeds`.
pub fn gradient_suite(n_seeds: u64, base_seed: u64) -> Result<Vec<CheckOutcome>> {
    checks()
        .into_iter()
        .map(|(name, tolerance, f)| {
            let mut worst = (0.0f64, base_seed);
            for s in base_seed..base_seed + n_seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(s ^ fxhash(name));
                let e = f(&mut rng)?;
                if e > worst.0 || e.is_nan() {
                    worst = (e, s);
                }
            }
            Ok(CheckOutcome {
                name,
                tolerance,
                max_rel_err: worst.0,
                worst_seed: worst.1,
                seeds: n_seeds,
            })
        })
        .collect()
}

/// Stable per-check seed salt.
fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

pub fn format_outcomes(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&format!(
            "{:<26} {}  max_rel_err={:.3e}  tol={:.0e}  seeds={}  worst_seed={}\n",
            o.name,
            if o.passed() { "ok  " } else { "FAIL" },
            o.max_rel_err,
            o.tolerance,
            o.seeds,
            o.worst_seed
        ));
    }
    s
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values with magnitude in `[0.1, 1]`, random sign: clear of the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn contract(y: &[f64], g: &[f64]) -> f64 {
    y.iter().zip(g).map(|(a, b)| a * b).sum()
}

fn mlp_params(m: &Mlp) -> Vec<f64> {
    m.tensors()
        .into_iter()
        .flat_map(|(_, t)| t.to_vec())
        .collect()
}

fn set_mlp_params(m: &mut Mlp, v: &[f64]) {
    let mut off = 0;
    for (_, t) in m.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

fn random_mlp(rng: &mut ChaCha8Rng, dims: &[usize], acts: &[Activation]) -> Result<Mlp> {
    let mut m = Mlp::init(dims, acts, rng)?;
    for (_, t) in m.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    Ok(m)
}

fn check_linear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, i, o) = (
        rng.gen_range(1..4),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let x = uniform(rng, n * i, -1.0, 1.0);
    let w = uniform(rng, o * i, -1.0, 1.0);
    let b = uniform(rng, o, -1.0, 1.0);
    let g = uniform(rng, n * o, -1.0, 1.0);
    let gd = DenseArray::new(vec![n, o], g.clone())?;
    let layer = LinearLayer::from_parts(i, o, w.clone(), b.clone())?;
    let xa = DenseArray::new(vec![n, i], x.clone())?;
    let lg = layer.backward(&xa, &gd)?;
    let mut packed = x.clone();
    packed.extend(&w);
    packed.extend(&b);
    let mut analytic = lg.grad_x.into_data();
    analytic.extend(&lg.grad_weight);
    analytic.extend(&lg.grad_bias);
    grad_check(
        |p| {
            let l = LinearLayer::from_parts(
                i,
                o,
                p[n * i..n * i + o * i].to_vec(),
                p[n * i + o * i..].to_vec(),
            )?;
            let y = l.forward(&DenseArray::new(vec![n, i], p[..n * i].to_vec())?)?;
            Ok(contract(y.data(), &g))
        },
        &packed,
        &analytic,
        EPS,
    )
}

fn check_activation(
    rng: &mut ChaCha8Rng,
    act: Activation,
    x: Vec<f64>,
    cols: usize,
) -> Result<f64> {
    let rows = x.len() / cols;
    let g = uniform(rng, x.len(), -1.0, 1.0);
    let xa = DenseArray::new(vec![rows, cols], x.clone())?;
    let y = act.forward(&xa);
    let analytic = act.backward(&xa, &y, &DenseArray::new(vec![rows, cols], g.clone())?)?;
    grad_check(
        |p| {
            Ok(contract(
                act.forward(&DenseArray::new(vec![rows, cols], p.to_vec())?)
                    .data(),
                &g,
            ))
        },
        &x,
        analytic.data(),
        EPS,
    )
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = off_kink(rng, 12);
    check_activation(rng, Activation::Relu, x, 4)
}

fn check_sigmoid(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = uniform(rng, 12, -4.0, 4.0);
    check_activation(rng, Activation::Sigmoid, x, 4)
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = uniform(rng, 12, -3.0, 3.0);
    check_activation(rng, Activation::Softmax, x, 4)
}

fn check_mlp(rng: &mut ChaCha8Rng) -> Result<f64> {
    let dims = [3, 5, 4, 2];
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    let (m, x, cache) = clear_of_kinks(rng, |rng| {
        let m = random_mlp(rng, &dims, &acts)?;
        let x = uniform(rng, 3 * 3, -1.0, 1.0);
        let cache = m.forward_cached(&DenseArray::new(vec![3, 3], x.clone())?)?;
        let margin = m.relu_margin(&cache);
        Ok(((m, x, cache), margin))
    })?;
    let g = uniform(rng, 3 * 2, -1.0, 1.0);
    let (gx, grads) = m.backward(&cache, &DenseArray::new(vec![3, 2], g.clone())?)?;
    let mut packed = x;
    packed.extend(mlp_params(&m));
    let mut analytic = gx.into_data();
    analytic.extend(mlp_params(&grads));
    grad_check(
        |p| {
            let mut mm = m.clone();
            set_mlp_params(&mut mm, &p[9..]);
            Ok(contract(
                mm.forward(&DenseArray::new(vec![3, 3], p[..9].to_vec())?)?
                    .data(),
                &g,
            ))
        },
        &packed,
        &analytic,
        EPS,
    )
}

fn small_spec(rng: &mut ChaCha8Rng) -> Result<GridSpec> {
    GridSpec::new(
        [0.0, 0.0, 0.0],
        1.0,
        [
            rng.gen_range(2..4),
            rng.gen_range(2..4),
            rng.gen_range(2..4),
        ],
    )
}

fn check_voxelize(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = small_spec(rng)?;
    let (lo, hi) = spec.bounds();
    let pts: Vec<[f64; 3]> = (0..8)
        .map(|_| std::array::from_fn(|a| rng.gen_range(lo[a]..hi[a])))
        .collect();
    let inten = uniform(rng, 8, 0.0, 1.0);
    let cloud = PointCloud::new(pts, Some(inten))?;
    let pooled = pool_points(&cloud, &spec);
    let (enc, vox) = clear_of_kinks(rng, |rng| {
        let enc = random_mlp(rng, &[4, 3, 3], &[Activation::Relu, Activation::Identity])?;
        let vox = voxelize_cached(pooled.clone(), &enc)?;
        let margin = enc.relu_margin(&vox.cache);
        Ok(((enc, vox), margin))
    })?;
    let g = uniform(rng, vox.grid.features().len(), -1.0, 1.0);
    let mut grads = enc.zeros_like();
    voxelize_backward(&vox, &enc, &g, &mut grads)?;
    grad_check(
        |p| {
            let mut e = enc.clone();
            set_mlp_params(&mut e, p);
            Ok(contract(
                voxelize_cached(pooled.clone(), &e)?.grid.features(),
                &g,
            ))
        },
        &mlp_params(&enc),
        &mlp_params(&grads),
        EPS,
    )
}

fn softmax_rows(logits: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (src, dst) in logits.chunks(n).zip(out.chunks_mut(n)) {
        softmax_row(src, dst);
    }
    out
}

/// Chains a probability gradient through a row softmax.
fn softmax_rows_backward(probs: &[f64], grad: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((p, g), o) in probs.chunks(n).zip(grad.chunks(n)).zip(out.chunks_mut(n)) {
        let s = contract(p, g);
        for i in 0..n {
            o[i] = p[i] * (g[i] - s);
        }
    }
    out
}

fn check_lift(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = GridSpec::new([0.0, -2.0, -1.0], 1.0, [2, 4, 6])?;
    let cam = CameraModel::looking_at_yaw([0.0, 0.0, 0.0], 0.0, 1.4, 3, 2, 0)?;
    let bins = DepthBins::new(4, 0.5, 6.0)?;
    let (h, w, c, nb) = (2, 3, 2, 4);
    let plan = LiftPlan::new(&cam, &spec, bins);
    let feats = uniform(rng, h * w * c, -1.0, 1.0);
    let logits = uniform(rng, h * w * nb, -1.0, 1.0);
    let eval = |feats: &[f64],
                logits: &[f64]|
     -> Result<(crate::geometry::Lifted, DenseArray, DepthDistribution)> {
        let fa = DenseArray::new(vec![h, w, c], feats.to_vec())?;
        let dd = DepthDistribution::new(h, w, bins, softmax_rows(logits, nb))?;
        let view = LiftView {
            feats: &fa,
            depth: &dd,
            plan: &plan,
        };
        Ok((lift_views(&[view], &spec, c, 1e-3)?, fa, dd))
    };
    let (lifted, fa, dd) = eval(&feats, &logits)?;
    let g = uniform(rng, lifted.grid.features().len(), -1.0, 1.0);
    let view = LiftView {
        feats: &fa,
        depth: &dd,
        plan: &plan,
    };
    let back = lift_backward(&[view], &lifted, &g)?;
    let (gf, gp) = &back[0];
    let mut analytic = gf.data().to_vec();
    analytic.extend(softmax_rows_backward(dd.probs(), gp, nb));
    let mut packed = feats.clone();
    packed.extend(&logits);
    let n = feats.len();
    grad_check(
        |p| Ok(contract(eval(&p[..n], &p[n..])?.0.grid.features(), &g)),
        &packed,
        &analytic,
        EPS,
    )
}

fn dense_grid(
    rng: &mut ChaCha8Rng,
    spec: GridSpec,
    c: usize,
    fill: f64,
) -> Result<SparseFeatureGrid> {
    let n = spec.n_cells();
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(fill)).collect();
    let feats = uniform(rng, n * c, -1.0, 1.0);
    SparseFeatureGrid::from_parts(spec, c, feats, mask)
}

fn with_features(g: &SparseFeatureGrid, f: &[f64]) -> Result<SparseFeatureGrid> {
    SparseFeatureGrid::from_parts(*g.spec(), g.channels(), f.to_vec(), g.mask().to_vec())
}

fn check_gate(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (k, c, q) = (2, 3, 4);
    let mode = if rng.gen_bool(0.5) {
        GateMode::Scalar
    } else {
        GateMode::Channel
    };
    let mut gate = GateNet::new(k, c, mode, Activation::Sigmoid, rng)?;
    for v in gate.linear.weight_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let rows = uniform(rng, q * k * c, -1.0, 1.0);
    let ra = DenseArray::new(vec![q, k * c], rows.clone())?;
    let out = knn_gate(&ra, &gate)?;
    let g = uniform(rng, out.omega.len(), -1.0, 1.0);
    let mut grads = gate.linear.zeros_like();
    let gx = knn_gate_backward(
        &gate,
        &ra,
        &out,
        &DenseArray::new(out.omega.shape().to_vec(), g.clone())?,
        &mut grads,
    )?;
    let mut packed = rows;
    packed.extend(gate.linear.weight());
    packed.extend(gate.linear.bias());
    let mut analytic = gx.into_data();
    analytic.extend(grads.weight());
    analytic.extend(grads.bias());
    let (nr, nw) = (q * k * c, gate.linear.weight().len());
    grad_check(
        |p| {
            let mut gt = gate.clone();
            gt.linear = LinearLayer::from_parts(
                k * c,
                gate.out_dim(),
                p[nr..nr + nw].to_vec(),
                p[nr + nw..].to_vec(),
            )?;
            Ok(contract(
                knn_gate(&DenseArray::new(vec![q, k * c], p[..nr].to_vec())?, &gt)?
                    .omega
                    .data(),
                &g,
            ))
        },
        &packed,
        &analytic,
        EPS,
    )
}

fn check_gs_fuse(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = small_spec(rng)?;
    let c = 2;
    let fi = dense_grid(rng, spec, c, 0.6)?;
    let fl = dense_grid(rng, spec, c, 0.5)?;
    let lidar = extract_nonempty(&fl, CoordSource::Lidar);
    let wdim = if rng.gen_bool(0.5) { 1 } else { c };
    let omega = uniform(rng, lidar.len() * wdim, 0.0, 1.0);
    let oa = DenseArray::new(vec![lidar.len(), wdim], omega.clone())?;
    let fused = gs_fuse(&fi, &fl, &oa, &lidar)?;
    let g = uniform(rng, fused.features().len(), -1.0, 1.0);
    let gr = gs_fuse_backward(&fl, &oa, &lidar, &g)?;
    let (ni, nl) = (fi.features().len(), fl.features().len());
    let mut packed = fi.features().to_vec();
    packed.extend(fl.features());
    packed.extend(&omega);
    // Unset voxels are not inputs: their features are structurally zero.
    let keep = |m: &[bool], grad: &[f64]| -> Vec<f64> {
        grad.iter()
            .enumerate()
            .map(|(i, &v)| if m[i / c] { v } else { 0.0 })
            .collect()
    };
    let mut analytic = keep(fi.mask(), &gr.grad_camera);
    analytic.extend(keep(fl.mask(), &gr.grad_lidar));
    analytic.extend(gr.grad_omega.data());
    let set_i: Vec<usize> = (0..ni).filter(|&i| fi.mask()[i / c]).collect();
    let set_l: Vec<usize> = (0..nl)
        .filter(|&i| fl.mask()[i / c])
        .map(|i| ni + i)
        .collect();
    let free: Vec<usize> = set_i
        .into_iter()
        .chain(set_l)
        .chain(ni + nl..packed.len())
        .collect();
    let sub_x: Vec<f64> = free.iter().map(|&i| packed[i]).collect();
    let sub_a: Vec<f64> = free.iter().map(|&i| analytic[i]).collect();
    grad_check(
        |p| {
            let mut full = packed.clone();
            for (&i, &v) in free.iter().zip(p) {
                full[i] = v;
            }
            let a = with_features(&fi, &full[..ni])?;
            let b = with_features(&fl, &full[ni..ni + nl])?;
            let o = DenseArray::new(vec![lidar.len(), wdim], full[ni + nl..].to_vec())?;
            Ok(contract(gs_fuse(&a, &b, &o, &lidar)?.features(), &g))
        },
        &sub_x,
        &sub_a,
        EPS,
    )
}

fn check_gather_gate_fuse(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = GridSpec::new([0.0; 3], 1.0, [2, 3, 3])?;
    let (c, k) = (2, 2);
    let cam = dense_grid(rng, spec, c, 0.5)?;
    let lid = dense_grid(rng, spec, c, 0.4)?;
    let targets = extract_nonempty(&cam, CoordSource::Camera);
    let queries = extract_nonempty(&lid, CoordSource::Lidar);
    let table = knn_search(&queries, &targets, k, 2.0)?;
    let mut gate = GateNet::new(k, c, GateMode::Scalar, Activation::Sigmoid, rng)?;
    for v in gate.linear.weight_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    let forward = |cam: &SparseFeatureGrid, lid: &SparseFeatureGrid| -> Result<SparseFeatureGrid> {
        let rows = gather_neighbor_features(&table, &targets, cam)?;
        let omega = knn_gate(&rows, &gate)?.omega;
        gs_fuse(cam, lid, &omega, &queries)
    };
    let fused = forward(&cam, &lid)?;
    let g = uniform(rng, fused.features().len(), -1.0, 1.0);
    let rows = gather_neighbor_features(&table, &targets, &cam)?;
    let go = knn_gate(&rows, &gate)?;
    let fg = gs_fuse_backward(&lid, &go.omega, &queries, &g)?;
    let mut lin = gate.linear.zeros_like();
    let grows = knn_gate_backward(&gate, &rows, &go, &fg.grad_omega, &mut lin)?;
    let mut gcam = fg.grad_camera.clone();
    gather_backward(&table, &targets, &cam, &grows, &mut gcam)?;
    let idx_c: Vec<usize> = (0..cam.features().len())
        .filter(|&i| cam.mask()[i / c])
        .collect();
    let idx_l: Vec<usize> = (0..lid.features().len())
        .filter(|&i| lid.mask()[i / c])
        .collect();
    let mut x: Vec<f64> = idx_c.iter().map(|&i| cam.features()[i]).collect();
    x.extend(idx_l.iter().map(|&i| lid.features()[i]));
    let mut analytic: Vec<f64> = idx_c.iter().map(|&i| gcam[i]).collect();
    analytic.extend(idx_l.iter().map(|&i| fg.grad_lidar[i]));
    grad_check(
        |p| {
            let mut fc = cam.features().to_vec();
            let mut fl = lid.features().to_vec();
            for (&i, &v) in idx_c.iter().zip(p) {
                fc[i] = v;
            }
            for (&i, &v) in idx_l.iter().zip(&p[idx_c.len()..]) {
                fl[i] = v;
            }
            Ok(contract(
                forward(&with_features(&cam, &fc)?, &with_features(&lid, &fl)?)?.features(),
                &g,
            ))
        },
        &x,
        &analytic,
        EPS,
    )
}

fn random_rays(rng: &mut ChaCha8Rng, spec: &GridSpec, h: usize, w: usize, n_s: usize) -> RayBundle {
    let (lo, hi) = spec.bounds();
    let mut origins = Vec::new();
    let mut directions = Vec::new();
    for _ in 0..h * w {
        let o: [f64; 3] = std::array::from_fn(|a| rng.gen_range(lo[a]..hi[a]));
        let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-3);
        origins.push(o);
        directions.push([d[0] / n, d[1] / n, d[2] / n]);
    }
    let near = 0.1;
    let delta = rng.gen_range(0.15..0.35);
    RayBundle {
        h,
        w,
        origins,
        directions,
        cam_z: vec![1.0; h * w],
        t_values: (0..n_s).map(|i| near + (i as f64 + 0.5) * delta).collect(),
        delta,
    }
}

fn set_indices(g: &SparseFeatureGrid) -> Vec<usize> {
    let c = g.channels();
    (0..g.features().len())
        .filter(|&i| g.mask()[i / c])
        .collect()
}

fn check_sampling(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = small_spec(rng)?;
    let grid = dense_grid(rng, spec, 2, 0.7)?;
    let rays = random_rays(rng, &spec, 2, 2, 6);
    let fr = sample_features(&grid, &rays)?;
    let g = uniform(rng, fr.samples.len(), -1.0, 1.0);
    let mut gg = vec![0.0; grid.features().len()];
    sample_features_backward(&grid, &fr, &g, &mut gg)?;
    let idx = set_indices(&grid);
    let x: Vec<f64> = idx.iter().map(|&i| grid.features()[i]).collect();
    let a: Vec<f64> = idx.iter().map(|&i| gg[i]).collect();
    grad_check(
        |p| {
            let mut f = grid.features().to_vec();
            for (&i, &v) in idx.iter().zip(p) {
                f[i] = v;
            }
            Ok(contract(
                &sample_features(&with_features(&grid, &f)?, &rays)?.samples,
                &g,
            ))
        },
        &x,
        &a,
        EPS,
    )
}

fn random_heads(rng: &mut ChaCha8Rng, c: usize) -> Result<RenderHeads> {
    let mut h = RenderHeads::init(c, 5, 3, rng)?;
    for (_, t) in h
        .density
        .tensors_mut()
        .into_iter()
        .chain(h.color.tensors_mut())
    {
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    // Moderate, mostly active densities: rays stay partly transparent so no
    // coordinate's gradient sinks below finite-difference roundoff.
    for v in h.density.layers_mut()[0].weight_mut() {
        *v *= 0.5;
    }
    h.density.layers_mut()[0].bias_mut()[0] = 0.6;
    Ok(h)
}

fn heads_params(h: &RenderHeads) -> Vec<f64> {
    let mut v = mlp_params(&h.density);
    v.extend(mlp_params(&h.color));
    v
}

fn set_heads_params(h: &mut RenderHeads, v: &[f64]) {
    let n = h.density.param_count();
    set_mlp_params(&mut h.density, &v[..n]);
    set_mlp_params(&mut h.color, &v[n..]);
}

fn check_heads(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, n) = (3, 10);
    let frustum = |s: &[f64]| FrustumFeatures {
        h: 1,
        w: 1,
        n_s: n,
        channels: c,
        samples: s.to_vec(),
        taps: vec![None; n],
        zero: vec![false; n],
    };
    let (heads, samples, out) = clear_of_kinks(rng, |rng| {
        let heads = random_heads(rng, c)?;
        let samples = uniform(rng, n * c, -1.0, 1.0);
        let out = density_color_heads(&frustum(&samples), &heads.density, &heads.color)?;
        let margin = out.relu_margin(&heads.density, &heads.color);
        Ok(((heads, samples, out), margin))
    })?;
    let gs = uniform(rng, n, -1.0, 1.0);
    let gc = uniform(rng, 3 * n, -1.0, 1.0);
    let mut grads = heads.zeros_like();
    let gx =
        density_color_heads_backward(&heads.density, &heads.color, &out, &gs, &gc, &mut grads)?;
    let mut x = samples.clone();
    x.extend(heads_params(&heads));
    let mut a = gx;
    a.extend(heads_params(&grads));
    let ns = samples.len();
    grad_check(
        |p| {
            let mut hh = heads.clone();
            set_heads_params(&mut hh, &p[ns..]);
            let o = density_color_heads(&frustum(&p[..ns]), &hh.density, &hh.color)?;
            Ok(contract(&o.sigma, &gs) + contract(&o.color, &gc))
        },
        &x,
        &a,
        EPS,
    )
}

fn check_composite_color(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (rays, n_s) = (3, 7);
    let delta = rng.gen_range(0.1..0.4);
    let sigma = uniform(rng, rays * n_s, 0.05, 1.0);
    let color = uniform(rng, rays * n_s * 3, 0.0, 1.0);
    let t: Vec<f64> = (0..n_s).map(|i| 0.5 + (i as f64 + 0.5) * delta).collect();
    let g = uniform(rng, rays * 3, -1.0, 1.0);
    let (gs, gc) = composite_backward(
        &sigma,
        &color,
        n_s,
        delta,
        &t,
        CompositeGrads {
            color: Some(&g),
            ..Default::default()
        },
    )?;
    let mut x = sigma.clone();
    x.extend(&color);
    let mut a = gs;
    a.extend(gc);
    let ns = sigma.len();
    grad_check(
        |p| {
            Ok(contract(
                &composite_color(&p[..ns], &p[ns..], n_s, delta)?,
                &g,
            ))
        },
        &x,
        &a,
        EPS,
    )
}

fn check_composite_depth(rng: &mut ChaCha8Rng, mode: DepthMode) -> Result<f64> {
    let (rays, n_s) = (3, 8);
    let delta = rng.gen_range(0.1..0.4);
    let sigma = uniform(rng, rays * n_s, 0.05, 1.0);
    let color = vec![0.0; rays * n_s * 3];
    let t: Vec<f64> = (0..n_s).map(|i| 0.5 + (i as f64 + 0.5) * delta).collect();
    let g = uniform(rng, rays, -1.0, 1.0);
    let (gs, _) = composite_backward(
        &sigma,
        &color,
        n_s,
        delta,
        &t,
        CompositeGrads {
            depth: Some((&g, mode)),
            ..Default::default()
        },
    )?;
    grad_check(
        |p| Ok(contract(&composite_depth(p, n_s, delta, &t, mode)?, &g)),
        &sigma,
        &gs,
        EPS,
    )
}

fn check_upsample(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..3),
    );
    let (h2, w2) = (h + rng.gen_range(0..4), w + rng.gen_range(0..4));
    let x = uniform(rng, h * w * c, -1.0, 1.0);
    let g = uniform(rng, h2 * w2 * c, -1.0, 1.0);
    let a = upsample_bilinear_backward(&[h, w, c], &DenseArray::new(vec![h2, w2, c], g.clone())?)?;
    grad_check(
        |p| {
            Ok(contract(
                upsample_bilinear(&DenseArray::new(vec![h, w, c], p.to_vec())?, h2, w2)?.data(),
                &g,
            ))
        },
        &x,
        a.data(),
        EPS,
    )
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, n_c: usize) -> Result<SemanticOccGrid> {
    let spec = GridSpec::new([0.0; 3], 1.0, [1, 1, n])?;
    let labels = (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                255
            } else {
                rng.gen_range(0..n_c) as u8
            }
        })
        .collect();
    SemanticOccGrid::new(spec, n_c, labels)
}

fn check_ce(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, n_c) = (8, 4);
    let y = random_labels(rng, n, n_c)?;
    let x = uniform(rng, n * n_c, -2.0, 2.0);
    let a = cross_entropy_loss(&DenseArray::new(vec![n, n_c], x.clone())?, &y)?.grad;
    grad_check(
        |p| Ok(cross_entropy_loss(&DenseArray::new(vec![n, n_c], p.to_vec())?, &y)?.value),
        &x,
        a.data(),
        EPS,
    )
}

fn check_lovasz(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, n_c) = (8, 3);
    let y = random_labels(rng, n, n_c)?;
    let logits = uniform(rng, n * n_c, -2.0, 2.0);
    let probs = softmax_rows(&logits, n_c);
    let a = lovasz_softmax_loss(&DenseArray::new(vec![n, n_c], probs.clone())?, &y)?.grad;
    grad_check(
        |p| Ok(lovasz_softmax_loss(&DenseArray::new(vec![n, n_c], p.to_vec())?, &y)?.value),
        &probs,
        a.data(),
        EPS,
    )
}

fn check_occupancy(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, n_c) = (10, 4);
    let y = random_labels(rng, n, n_c)?;
    let x = uniform(rng, n * n_c, -2.0, 2.0);
    let a = occupancy_loss(&DenseArray::new(vec![n, n_c], x.clone())?, &y)?.grad;
    grad_check(
        |p| Ok(occupancy_loss(&DenseArray::new(vec![n, n_c], p.to_vec())?, &y)?.value()),
        &x,
        a.data(),
        EPS,
    )
}

fn check_explicit_depth(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, nb) = (2, 3, 5);
    let bins = DepthBins::new(nb, 1.0, 6.0)?;
    let lidar = crate::geometry::DepthMap {
        h,
        w,
        depth: uniform(rng, h * w, 0.5, 6.5),
        mask: (0..h * w).map(|_| rng.gen_bool(0.7)).collect(),
    };
    let x = uniform(rng, h * w * nb, -2.0, 2.0);
    let eval = |logits: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let probs = softmax_rows(logits, nb);
        let d = DepthDistribution::new(h, w, bins, probs.clone())?;
        let l = explicit_depth_loss(&d, &lidar)?;
        Ok((l.loss.value, l.loss.grad.into_data(), probs))
    };
    let (_, gp, probs) = eval(&x)?;
    let a = softmax_rows_backward(&probs, &gp, nb);
    grad_check(|p| Ok(eval(p)?.0), &x, &a, EPS)
}

fn check_color_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = vec![2, 3, 3];
    let img = DenseArray::new(shape.clone(), uniform(rng, 18, 0.0, 1.0))?;
    let x = uniform(rng, 18, 0.0, 1.0);
    let lambda = rng.gen_range(0.5..2.0);
    let a = rendering_color_loss(&DenseArray::new(shape.clone(), x.clone())?, &img, lambda)?.grad;
    grad_check(
        |p| {
            Ok(
                rendering_color_loss(&DenseArray::new(shape.clone(), p.to_vec())?, &img, lambda)?
                    .value,
            )
        },
        &x,
        a.data(),
        EPS,
    )
}

fn check_depth_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w) = (3, 4);
    let depth = uniform(rng, h * w, 1.0, 8.0);
    let mut mask: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.6)).collect();
    mask[0] = true;
    // Rendered values at least 0.05 m from the target, away from the L1 kink.
    let x: Vec<f64> = depth
        .iter()
        .map(|&d| d + if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.05..1.0))
        .collect();
    let target = crate::geometry::DepthMap { h, w, depth, mask };
    let lambda = rng.gen_range(0.5..2.0);
    let a = rendering_depth_loss(&DenseArray::new(vec![h, w], x.clone())?, &target, lambda)?.grad;
    grad_check(
        |p| {
            Ok(
                rendering_depth_loss(&DenseArray::new(vec![h, w], p.to_vec())?, &target, lambda)?
                    .value,
            )
        },
        &x,
        a.data(),
        EPS,
    )
}

/// Sampling, heads, both composites and upsampling on a 4x4x4 grid with 4 channels.
fn check_render_chain(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = GridSpec::new([0.0; 3], 1.0, [4, 4, 4])?;
    let c = 4;
    let rays = random_rays(rng, &spec, 2, 2, 8);
    // Voxels the rays barely touch have gradients below finite-difference
    // resolution; they are left unset so they are not inputs of the check.
    let mut seen = vec![0.0; spec.n_cells()];
    for ray in 0..rays.n_rays() {
        for i in 0..rays.n_samples() {
            if let Some(t) = crate::render::trilinear_taps(&spec, rays.point(ray, i)) {
                for (&v, &w) in t.index.iter().zip(&t.weight) {
                    seen[v as usize] += w;
                }
            }
        }
    }
    let drawn = dense_grid(rng, spec, c, 0.8)?;
    let mask: Vec<bool> = drawn
        .mask()
        .iter()
        .zip(&seen)
        .map(|(&m, &w)| m && w >= 1e-2)
        .collect();
    let grid = SparseFeatureGrid::from_parts(spec, c, drawn.features().to_vec(), mask)?;
    let (heads, pass) = clear_of_kinks(rng, |rng| {
        let heads = random_heads(rng, c)?;
        let pass = render_view(&grid, &rays, &heads, DepthMode::PaperLiteral, 3, 4)?;
        let margin = pass.heads.relu_margin(&heads.density, &heads.color);
        Ok(((heads, pass), margin))
    })?;
    let mode = if rng.gen_bool(0.5) {
        DepthMode::PaperLiteral
    } else {
        DepthMode::ExpectedDepth
    };
    let (oh, ow) = (3, 4);
    let gc = uniform(rng, oh * ow * 3, -1.0, 1.0);
    let gd = uniform(rng, oh * ow, -1.0, 1.0);
    let objective = |g: &SparseFeatureGrid, h: &RenderHeads| -> Result<f64> {
        let pass = render_view(g, &rays, h, mode, oh, ow)?;
        Ok(contract(pass.views.color_up.data(), &gc) + contract(pass.views.depth_up.data(), &gd))
    };
    drop(pass);
    let pass = render_view(&grid, &rays, &heads, mode, oh, ow)?;
    let mut hg = heads.zeros_like();
    let mut gg = vec![0.0; grid.features().len()];
    render_view_backward(
        &grid,
        &rays,
        &heads,
        &pass,
        Some(&DenseArray::new(vec![oh, ow, 3], gc.clone())?),
        Some(&DenseArray::new(vec![oh, ow], gd.clone())?),
        &mut hg,
        &mut gg,
    )?;
    let idx = set_indices(&grid);
    let mut x: Vec<f64> = idx.iter().map(|&i| grid.features()[i]).collect();
    x.extend(heads_params(&heads));
    let mut a: Vec<f64> = idx.iter().map(|&i| gg[i]).collect();
    a.extend(heads_params(&hg));
    let ni = idx.len();
    grad_check(
        |p| {
            let mut f = grid.features().to_vec();
            for (&i, &v) in idx.iter().zip(p) {
                f[i] = v;
            }
            let mut hh = heads.clone();
            set_heads_params(&mut hh, &p[ni..]);
            objective(&with_features(&grid, &f)?, &hh)
        },
        &x,
        &a,
        CHAIN_EPS,
    )
}

/// Fails with a readable message if any outcome exceeds its tolerance.
pub fn require_all(outcomes: &[CheckOutcome]) -> Result<()> {
    let bad: Vec<_> = outcomes.iter().filter(|o| !o.passed()).collect();
    if bad.is_empty() {
        return Ok(());
    }
    Err(Error::Numerical {
        index: 0,
        message: format!(
            "gradient checks failed: {}",
            bad.iter()
                .map(|o| format!(
                    "{} ({:.3e} at seed {})",
                    o.name, o.max_rel_err, o.worst_seed
                ))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_a_few_seeds() {
        let out = gradient_suite(3, 0).unwrap();
        assert_eq!(out.len(), checks().len());
        require_all(&out).unwrap();
    }
}
