//! End-to-end forward pass with losses, and its exact backward.
//!
//! voxelize LiDAR -> lift camera features -> fuse -> per-voxel occupancy head,
//! with the render path (training only) reading the same fused volume.

use super::config::RunConfig;
use super::dataset::PreparedScene;
use super::model::Model;
use crate::fusion::{
    concat_backward, extract_nonempty, fuse_baseline_concat, gather_backward,
    gather_neighbor_features, gs_fuse, gs_fuse_backward, knn_gate, knn_gate_backward, knn_search,
    CoordList, CoordSource, GateOutput, NeighborTable,
};
use crate::geometry::{
    lift_backward, lift_views, voxelize_cached, DepthDistribution, LiftView, Lifted,
    SparseFeatureGrid, Voxelized,
};
use crate::losses::{
    explicit_depth_loss, occupancy_loss, rendering_color_loss, rendering_depth_loss, total_loss,
    Branch, LossComponents, LossReport, SemanticOccGrid,
};
use crate::nn::{DenseArray, Mlp, MlpCache};
use crate::render::{render_view, render_view_backward, RenderPass, RenderedViews};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForwardOptions {
    /// Run the render path and its losses.
    pub render: bool,
    /// Replace the gate output with this constant.
    pub omega_override: Option<f64>,
}

impl ForwardOptions {
    pub fn training() -> Self {
        Self {
            render: true,
            omega_override: None,
        }
    }

    pub fn inference() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `[n_cells, n_classes]`.
    pub logits: DenseArray,
    pub fused: SparseFeatureGrid,
    /// One entry per camera when the render path ran, else empty.
    pub rendered: Vec<RenderedViews>,
    pub report: LossReport,
}

impl Forward {
    pub fn prediction(&self) -> Result<SemanticOccGrid> {
        SemanticOccGrid::from_logits(*self.fused.spec(), &self.logits)
    }
}

struct CameraState {
    enc: Vec<MlpCache>,
    depth: Vec<MlpCache>,
    /// `[h, w, C]` per view.
    feats: Vec<DenseArray>,
    dists: Vec<DepthDistribution>,
    lifted: Lifted,
}

struct GateState {
    lidar: CoordList,
    camera: CoordList,
    table: NeighborTable,
    gathered: DenseArray,
    gate: Option<GateOutput>,
    omega: DenseArray,
}

struct HeadState {
    /// Compact row of every voxel.
    row_of: Vec<u32>,
    zero_row: Option<u32>,
    cache: MlpCache,
}

struct State {
    vox: Option<Voxelized>,
    cam: Option<CameraState>,
    gate: Option<GateState>,
    head: HeadState,
    passes: Vec<RenderPass>,
    /// Gradients w.r.t. the upsampled maps, per view.
    render_grads: Vec<(Option<DenseArray>, Option<DenseArray>)>,
    grad_logits: Option<DenseArray>,
    /// Gradients w.r.t. each view's depth probabilities from the depth-bin loss.
    depth_prob_grads: Vec<Vec<f64>>,
}

fn views_of<'a>(input: &'a PreparedScene, cam: &'a CameraState) -> Vec<LiftView<'a>> {
    input
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| LiftView {
            feats: &cam.feats[i],
            depth: &cam.dists[i],
            plan: &v.plan,
        })
        .collect()
}

fn camera_forward(input: &PreparedScene, model: &Model, cfg: &RunConfig) -> Result<CameraState> {
    let enc = model
        .image_encoder
        .as_ref()
        .ok_or_else(|| Error::config("model has no image encoder"))?;
    let dnet = model
        .depth_net
        .as_ref()
        .ok_or_else(|| Error::config("model has no depth network"))?;
    let bins = cfg.depth_bin_spec()?;
    let mut state = CameraState {
        enc: Vec::new(),
        depth: Vec::new(),
        feats: Vec::new(),
        dists: Vec::new(),
        lifted: Lifted {
            grid: SparseFeatureGrid::empty(cfg.grid, cfg.channels)?,
            weights: Vec::new(),
            stats: Default::default(),
        },
    };
    for v in &input.views {
        let [h, w, d] = <[usize; 3]>::try_from(v.pixel_input.shape())
            .map_err(|_| Error::dim("[h, w, 5]", "other"))?;
        let x = v.pixel_input.clone().reshape(vec![h * w, d])?;
        let ec = enc.forward_cached(&x)?;
        let dc = dnet.forward_cached(&x)?;
        state
            .feats
            .push(ec.output().clone().reshape(vec![h, w, cfg.channels])?);
        state.dists.push(DepthDistribution::new(
            h,
            w,
            bins,
            dc.output().data().to_vec(),
        )?);
        state.enc.push(ec);
        state.depth.push(dc);
    }
    let lifted = lift_views(
        &views_of(input, &state),
        &cfg.grid,
        cfg.channels,
        cfg.lift_threshold,
    )?;
    state.lifted = lifted;
    Ok(state)
}

/// Per-voxel head with every unset voxel sharing one zero row.
fn head_forward(head: &Mlp, fused: &SparseFeatureGrid) -> Result<(DenseArray, HeadState)> {
    let n = fused.spec().n_cells();
    let c = fused.channels();
    let mut compact = Vec::new();
    let mut row_of = Vec::with_capacity(n);
    let mut zero_row = None;
    let mut rows = 0u32;
    for v in 0..n {
        if fused.is_set(v) {
            compact.extend_from_slice(fused.feature(v));
            row_of.push(rows);
            rows += 1;
        } else {
            let r = *zero_row.get_or_insert_with(|| {
                compact.extend(std::iter::repeat(0.0).take(c));
                rows += 1;
                rows - 1
            });
            row_of.push(r);
        }
    }
    let cache = head.forward_cached(&DenseArray::new(vec![rows as usize, c], compact)?)?;
    let k = head.output_dim();
    let out = cache.output();
    let mut logits = DenseArray::zeros(vec![n, k]);
    for (v, &r) in row_of.iter().enumerate() {
        logits.row_mut(v).copy_from_slice(out.row(r as usize));
    }
    Ok((
        logits,
        HeadState {
            row_of,
            zero_row,
            cache,
        },
    ))
}

fn check_inputs(input: &PreparedScene, model: &Model, cfg: &RunConfig) -> Result<()> {
    if cfg.branch.uses_camera() && input.views.is_empty() {
        return Err(Error::config(format!(
            "{} branch needs camera images",
            cfg.branch
        )));
    }
    if cfg.branch.uses_lidar() && model.lidar_encoder.is_none() {
        return Err(Error::config(format!(
            "{} branch needs a lidar encoder",
            cfg.branch
        )));
    }
    if input.scene.gt_occ.spec != cfg.grid || input.pooled.spec != cfg.grid {
        return Err(Error::config(
            "scene grid does not match the configured grid",
        ));
    }
    if input.scene.gt_occ.n_classes != cfg.n_classes {
        return Err(Error::config(format!(
            "scene has {} classes, config {}",
            input.scene.gt_occ.n_classes, cfg.n_classes
        )));
    }
    Ok(())
}

fn run(
    input: &PreparedScene,
    model: &Model,
    cfg: &RunConfig,
    opts: ForwardOptions,
) -> Result<(Forward, State)> {
    check_inputs(input, model, cfg)?;
    let branch = cfg.branch;
    let vox = match &model.lidar_encoder {
        Some(enc) if branch.uses_lidar() => Some(voxelize_cached(input.pooled.clone(), enc)?),
        _ => None,
    };
    let cam = if branch.uses_camera() {
        Some(camera_forward(input, model, cfg)?)
    } else {
        None
    };

    let mut gate_state = None;
    let fused = match (branch, &vox, &cam) {
        (Branch::LidarCamera, Some(vox), Some(cam)) => {
            let f_l = &vox.grid;
            let f_i = &cam.lifted.grid;
            if cfg.use_gsfusion {
                let lidar = extract_nonempty(f_l, CoordSource::Lidar);
                let camera = extract_nonempty(f_i, CoordSource::Camera);
                let table = knn_search(&lidar, &camera, cfg.k, cfg.radius)?;
                let gathered = gather_neighbor_features(&table, &camera, f_i)?;
                let (gate, omega) = match opts.omega_override {
                    Some(w) => {
                        let dim = model.gate.as_ref().map_or(1, |g| g.out_dim());
                        (None, DenseArray::filled(vec![lidar.len(), dim], w))
                    }
                    None => {
                        let g = model
                            .gate
                            .as_ref()
                            .ok_or_else(|| Error::config("model has no gate"))?;
                        let out = knn_gate(&gathered, g)?;
                        let omega = out.omega.clone();
                        (Some(out), omega)
                    }
                };
                let fused = gs_fuse(f_i, f_l, &omega, &lidar)?;
                gate_state = Some(GateState {
                    lidar,
                    camera,
                    table,
                    gathered,
                    gate,
                    omega,
                });
                fused
            } else {
                fuse_baseline_concat(f_i, f_l)?
            }
        }
        (Branch::LidarOnly, Some(vox), _) => vox.grid.clone(),
        (Branch::CameraOnly, _, Some(cam)) => cam.lifted.grid.clone(),
        _ => {
            return Err(Error::config(format!(
                "inputs do not match the {branch} branch"
            )))
        }
    };

    let (logits, head) = head_forward(&model.occ_head, &fused)?;
    let occ = occupancy_loss(&logits, &input.scene.gt_occ)?;

    let (d_ok, rc_ok, rd_ok) = branch.allowed(cfg.has_gt_depth);
    let use_rc = opts.render && cfg.use_rc && rc_ok && !input.views.is_empty();
    let use_rd = opts.render && cfg.use_rd && rd_ok && !input.views.is_empty();
    let n_views = input.views.len().max(1) as f64;

    let mut l_d = None;
    let mut depth_prob_grads = Vec::new();
    if let (true, Some(cam)) = (d_ok, &cam) {
        let mut total = 0.0;
        for (v, dist) in input.views.iter().zip(&cam.dists) {
            let dl = explicit_depth_loss(dist, &v.lidar_depth_lo)?;
            total += dl.loss.value / n_views;
            depth_prob_grads.push(
                dl.loss
                    .grad
                    .into_data()
                    .into_iter()
                    .map(|g| g / n_views)
                    .collect(),
            );
        }
        l_d = Some(total);
    }

    let mut passes = Vec::new();
    let mut render_grads = Vec::new();
    let (mut l_rc, mut l_rd) = (None, None);
    if use_rc || use_rd {
        let (mut rc, mut rd) = (0.0, 0.0);
        for v in &input.views {
            let (hh, ww) = (v.camera.image_h, v.camera.image_w);
            let pass = render_view(&fused, &v.rays, &model.render, cfg.depth_mode, hh, ww)?;
            let gc = if use_rc {
                let l = rendering_color_loss(&pass.views.color_up, &v.gt.image, cfg.lambda_rc)?;
                rc += l.value / n_views;
                Some(l.grad.map(|g| g / n_views))
            } else {
                None
            };
            let gd = if use_rd {
                let l =
                    rendering_depth_loss(&pass.views.depth_up, &v.lidar_depth_full, cfg.lambda_rd)?;
                rd += l.value / n_views;
                Some(l.grad.map(|g| g / n_views))
            } else {
                None
            };
            render_grads.push((gc, gd));
            passes.push(pass);
        }
        l_rc = use_rc.then_some(rc);
        l_rd = use_rd.then_some(rd);
    }

    let report = total_loss(
        LossComponents {
            l_ce: occ.l_ce,
            l_ls: occ.l_ls,
            l_d,
            l_rc,
            l_rd,
        },
        branch,
        cfg.has_gt_depth,
        cfg.lambda_rc,
        cfg.lambda_rd,
    )?;
    let rendered = passes.iter().map(|p| p.views.clone()).collect();
    Ok((
        Forward {
            logits,
            fused,
            rendered,
            report,
        },
        State {
            vox,
            cam,
            gate: gate_state,
            head,
            passes,
            render_grads,
            grad_logits: Some(occ.grad),
            depth_prob_grads,
        },
    ))
}

/// Forward pass and loss report; no gradients.
pub fn forward_pipeline(
    input: &PreparedScene,
    model: &Model,
    cfg: &RunConfig,
    opts: ForwardOptions,
) -> Result<Forward> {
    Ok(run(input, model, cfg, opts)?.0)
}

/// Forward pass plus gradients of `report.total` w.r.t. every model parameter.
pub fn forward_backward(
    input: &PreparedScene,
    model: &Model,
    cfg: &RunConfig,
    opts: ForwardOptions,
) -> Result<(Forward, Model)> {
    let (fwd, mut st) = run(input, model, cfg, opts)?;
    let mut grads = model.zeros_like();
    let n = cfg.grid.n_cells();
    let fc = fwd.fused.channels();
    let mut grad_fused = vec![0.0; n * fc];

    // occupancy head
    let gl = st
        .grad_logits
        .take()
        .expect("forward stores logit gradients");
    let rows = st.head.cache.output().rows();
    let k = model.occ_head.output_dim();
    let mut gc = DenseArray::zeros(vec![rows, k]);
    for (v, &r) in st.head.row_of.iter().enumerate() {
        let dst = gc.row_mut(r as usize);
        for (d, &g) in dst.iter_mut().zip(gl.row(v)) {
            *d += g;
        }
    }
    let gx = model
        .occ_head
        .backward_into(&st.head.cache, &gc, &mut grads.occ_head)?;
    for (v, &r) in st.head.row_of.iter().enumerate() {
        if Some(r) != st.head.zero_row {
            grad_fused[v * fc..(v + 1) * fc].copy_from_slice(gx.row(r as usize));
        }
    }

    // render path
    for (i, pass) in st.passes.iter().enumerate() {
        let (gc, gd) = &st.render_grads[i];
        render_view_backward(
            &fwd.fused,
            &input.views[i].rays,
            &model.render,
            pass,
            gc.as_ref(),
            gd.as_ref(),
            &mut grads.render,
            &mut grad_fused,
        )?;
    }

    // fusion
    let c = cfg.channels;
    let (grad_camera, grad_lidar) = match cfg.branch {
        Branch::LidarCamera => {
            let vox = st.vox.as_ref().expect("lidar state");
            let cam = st.cam.as_ref().expect("camera state");
            if let Some(gs) = &st.gate {
                let fg = gs_fuse_backward(&vox.grid, &gs.omega, &gs.lidar, &grad_fused)?;
                let mut grad_camera = fg.grad_camera;
                if let (Some(out), Some(gate), Some(gate_grads)) =
                    (&gs.gate, &model.gate, grads.gate.as_mut())
                {
                    let g_rows = knn_gate_backward(
                        gate,
                        &gs.gathered,
                        out,
                        &fg.grad_omega,
                        &mut gate_grads.linear,
                    )?;
                    gather_backward(
                        &gs.table,
                        &gs.camera,
                        &cam.lifted.grid,
                        &g_rows,
                        &mut grad_camera,
                    )?;
                }
                (Some(grad_camera), Some(fg.grad_lidar))
            } else {
                let (gi, gl) = concat_backward(c, &grad_fused);
                (Some(gi), Some(gl))
            }
        }
        Branch::LidarOnly => (None, Some(grad_fused)),
        Branch::CameraOnly => (Some(grad_fused), None),
    };

    if let (Some(g), Some(vox), Some(enc)) = (grad_lidar, &st.vox, &model.lidar_encoder) {
        let enc_grads = grads
            .lidar_encoder
            .as_mut()
            .expect("gradient buffer mirrors the model");
        crate::geometry::voxelize_backward(vox, enc, &g, enc_grads)?;
    }

    if let Some(cam) = &st.cam {
        let zero = vec![0.0; n * c];
        let g = grad_camera.as_deref().unwrap_or(&zero);
        let per_view = lift_backward(&views_of(input, cam), &cam.lifted, g)?;
        let enc = model.image_encoder.as_ref().expect("camera branch");
        let dnet = model.depth_net.as_ref().expect("camera branch");
        for (i, (gf, mut gp)) in per_view.into_iter().enumerate() {
            if let Some(extra) = st.depth_prob_grads.get(i) {
                for (a, b) in gp.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            let rows = cam.depth[i].output().rows();
            let gp = DenseArray::new(vec![rows, cfg.depth_bins], gp)?;
            dnet.backward_into(
                &cam.depth[i],
                &gp,
                grads.depth_net.as_mut().expect("buffer"),
            )?;
            let gf = gf.reshape(vec![rows, c])?;
            enc.backward_into(
                &cam.enc[i],
                &gf,
                grads.image_encoder.as_mut().expect("buffer"),
            )?;
        }
    }
    Ok((fwd, grads))
}
