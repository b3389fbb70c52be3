use nn_core::gradcheck::grad_check;
use nn_core::rng::stream;
use nn_core::{Module, Tensor};
use occ_core::{BevLayout, GridSpec, LabelSchema, LayoutSpec, SemanticOccupancyGrid};
use rand::Rng;
use stoccdit::bev::{pool_weights, BevEncoder};
use stoccdit::config::{VaeConfig, VaeTrainConfig};
use stoccdit::experiment::reconstruction_report;
use stoccdit::train::train_vae;
use stoccdit::vae::{vae_flatten, OccVae};

fn random_grid(dims: [usize; 3], classes: u8, rng: &mut impl Rng) -> SemanticOccupancyGrid {
    let spec = GridSpec::centered(dims, 0.4, 0.0);
    let mut g = SemanticOccupancyGrid::filled(spec, 0);
    for l in g.labels.iter_mut() {
        *l = rng.random_range(0..classes);
    }
    g
}

#[test]
fn flatten_single_layer_is_embedding_lookup() {
    let mut rng = stream(0, "flatten");
    let emb = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let g = random_grid([4, 4, 1], 6, &mut rng);
    let f = vae_flatten(&g, &emb).unwrap();
    assert_eq!(f.shape(), &[16, 3]);
    for x in 0..4 {
        for y in 0..4 {
            assert_eq!(f.row(x * 4 + y), emb.row(g.get(x, y, 0) as usize));
        }
    }
}

#[test]
fn flatten_uniform_grid_repeats_embedding() {
    let mut rng = stream(1, "flatten");
    let emb = Tensor::randn(&[6, 2], 1.0, &mut rng);
    let g = SemanticOccupancyGrid::filled(GridSpec::centered([2, 2, 3], 0.4, 0.0), 4);
    let f = vae_flatten(&g, &emb).unwrap();
    for c in 0..4 {
        assert_eq!(f.row(c), [emb.row(4), emb.row(4), emb.row(4)].concat());
    }
}

#[test]
fn swapping_two_bottom_layers_permutes_first_blocks() {
    let mut rng = stream(2, "flatten");
    let emb = Tensor::randn(&[6, 2], 1.0, &mut rng);
    let g = random_grid([3, 3, 3], 6, &mut rng);
    let mut swapped = g.clone();
    for x in 0..3 {
        for y in 0..3 {
            swapped.set(x, y, 0, g.get(x, y, 1));
            swapped.set(x, y, 1, g.get(x, y, 0));
        }
    }
    let a = vae_flatten(&g, &emb).unwrap();
    let b = vae_flatten(&swapped, &emb).unwrap();
    for c in 0..9 {
        assert_eq!(&a.row(c)[0..2], &b.row(c)[2..4]);
        assert_eq!(&a.row(c)[2..4], &b.row(c)[0..2]);
        assert_eq!(&a.row(c)[4..], &b.row(c)[4..]);
    }
    let bad = SemanticOccupancyGrid::filled(GridSpec::centered([2, 2, 1], 0.4, 0.0), 9);
    assert!(vae_flatten(&bad, &emb).is_err());
}

#[test]
fn toy_shapes_round_trip() {
    let vae = OccVae::new(VaeConfig::toy(), &mut stream(3, "init")).unwrap();
    let mut rng = stream(4, "grid");
    let g = random_grid([32, 32, 8], 6, &mut rng);
    let (mu, logvar, _) = vae.encode(&g).unwrap();
    assert_eq!(mu.shape(), &[64, 8]);
    assert_eq!(logvar.shape(), &[64, 8]);
    let z = OccVae::reparameterize(&mu, &logvar, &Tensor::zeros(mu.shape()));
    assert_eq!(z, mu);
    let (logits, _) = vae.decode(&z).unwrap();
    assert_eq!(logits.shape(), &[32 * 32 * 8, 6]);
    let r = vae.reconstruct(&g).unwrap();
    assert_eq!(r.spec, g.spec);
    assert!(vae.decode(&Tensor::zeros(&[63, 8])).is_err());
}

fn small_vae() -> VaeConfig {
    VaeConfig {
        grid_dims: [8, 8, 2],
        num_classes: 3,
        class_embed_dim: 2,
        latent_channels: 2,
        spatial_downsample: 4,
        stage_widths: vec![8, 8],
        heads: 2,
        mlp_mult: 2,
    }
}

#[test]
fn vae_loss_gradients_match_finite_differences() {
    let mut vae = OccVae::new(small_vae(), &mut stream(5, "init")).unwrap();
    let mut rng = stream(6, "randomize");
    vae.visit_mut("", &mut |_, p| p.value = Tensor::randn(p.value.shape(), 0.4, &mut rng));
    let g = random_grid([8, 8, 2], 3, &mut rng);
    // Lovász is piecewise linear in the sort order; the smooth terms are
    // checked here and Lovász has its own check.
    let cfg = VaeTrainConfig { lambda_lovasz: 0.0, lambda_kl: 0.3, ..VaeTrainConfig::toy() };
    let loss = |m: &mut OccVae| m.loss_and_grad(&g, &cfg, &mut stream(7, "noise")).unwrap().total;
    vae.zero_grad();
    loss(&mut vae);
    let mut names = Vec::new();
    vae.visit("", &mut |n, p| names.push((n.to_string(), p.value.len())));
    for (name, len) in &names {
        for i in (0..*len.min(&3)).map(|k| (k * 7919) % len) {
            let mut analytic = 0.0;
            let mut x0 = 0.0;
            vae.visit("", &mut |n, p| {
                if n == name {
                    analytic = p.grad.data()[i];
                    x0 = p.value.data()[i];
                }
            });
            let err = grad_check(
                |x| {
                    let mut m = vae.clone();
                    m.visit_mut("", &mut |n, p| {
                        if n == name {
                            p.value.data_mut()[i] = x[0];
                        }
                    });
                    loss(&mut m)
                },
                &[x0],
                &[analytic],
                1e-5,
            );
            assert!(err < 1e-5, "{name}[{i}]: rel err {err}");
        }
    }
}

#[test]
fn vae_checkpoint_round_trip() {
    let vae = OccVae::new(small_vae(), &mut stream(8, "init")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.pkpt");
    vae.save(&path, 1.75).unwrap();
    let (loaded, scale) = OccVae::load(&path).unwrap();
    assert_eq!(scale, 1.75);
    let g = random_grid([8, 8, 2], 3, &mut stream(9, "grid"));
    assert_eq!(vae.encode(&g).unwrap().0, loaded.encode(&g).unwrap().0);
}

fn layout(w: usize, h: usize) -> BevLayout {
    BevLayout::empty(LayoutSpec { width: w, height: h, channels: 5, resolution: 0.4 })
}

#[test]
fn empty_layout_tokens_come_from_empty_embedding() {
    let enc = BevEncoder::new(5, 4, 6, 2, &mut stream(10, "bev"));
    let pooled = enc.pooled(&layout(4, 4)).unwrap();
    for t in 0..4 {
        assert_eq!(pooled.row(t), enc.empty_embed.value.row(0));
    }
    let (tokens, _) = enc.forward(&layout(4, 4)).unwrap();
    assert!(tokens.row(0) == tokens.row(3));
}

#[test]
fn single_channel_token_is_that_embedding() {
    let enc = BevEncoder::new(5, 4, 6, 2, &mut stream(11, "bev"));
    let mut l = layout(4, 4);
    for x in 0..2 {
        for y in 0..2 {
            l.set(x, y, 2);
        }
    }
    // Half of token 3 carries channel 0, half is empty.
    l.set(2, 2, 0);
    l.set(3, 2, 0);
    let pooled = enc.pooled(&l).unwrap();
    assert_eq!(pooled.row(0), enc.channel_embed.value.row(2));
    let w = pool_weights(&l, 5, 2).unwrap();
    assert_eq!(w.row(3), &[0.5, 0.0, 0.0, 0.0, 0.0, 0.5]);
    assert!(pool_weights(&l, 5, 3).is_err());
}

#[test]
fn multi_hot_cell_sums_embeddings() {
    let enc = BevEncoder::new(5, 3, 6, 1, &mut stream(12, "bev"));
    let mut l = layout(1, 1);
    l.set(0, 0, 1);
    l.set(0, 0, 4);
    let pooled = enc.pooled(&l).unwrap();
    for k in 0..3 {
        let want = enc.channel_embed.value.row(1)[k] + enc.channel_embed.value.row(4)[k];
        assert!((pooled.row(0)[k] - want).abs() < 1e-15);
    }
}

/// Ground plane plus one to three axis-aligned blocks, class 0 on free 1.
fn two_class_scene(rng: &mut impl Rng) -> SemanticOccupancyGrid {
    let spec = GridSpec::centered([16, 16, 4], 0.4, 0.0);
    let mut g = SemanticOccupancyGrid::filled(spec, 1);
    for x in 0..16 {
        for y in 0..16 {
            g.set(x, y, 0, 0);
        }
    }
    for _ in 0..rng.random_range(1..=3) {
        let (x0, y0) = (rng.random_range(0..12), rng.random_range(0..12));
        let (w, l, h) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(1..=3));
        for x in x0..x0 + w {
            for y in y0..y0 + l {
                for z in 1..=h {
                    g.set(x, y, z, 0);
                }
            }
        }
    }
    g
}

#[test]
fn two_class_toy_training_reconstructs_held_out_scenes() {
    let cfg = VaeConfig {
        grid_dims: [16, 16, 4],
        num_classes: 2,
        class_embed_dim: 2,
        latent_channels: 4,
        spatial_downsample: 4,
        stage_widths: vec![16, 24],
        heads: 2,
        mlp_mult: 2,
    };
    let mut rng = stream(21, "scenes");
    let grids: Vec<SemanticOccupancyGrid> = (0..60).map(|_| two_class_scene(&mut rng)).collect();
    let (train, val) = grids.split_at(48);
    let mut vae = OccVae::new(cfg, &mut stream(22, "init")).unwrap();
    let train_cfg = VaeTrainConfig { epochs: 30, batch_size: 8, warmup_steps: 20, ..VaeTrainConfig::toy() };
    let log = train_vae(&mut vae, train, &train_cfg, 1, |_| {}).unwrap();
    let schema = LabelSchema {
        name: "binary".into(),
        class_names: vec!["occupied".into(), "free".into()],
        free_class: 1,
        ..LabelSchema::toy()
    };
    let report = reconstruction_report(&vae, &val.iter().collect::<Vec<_>>(), &schema).unwrap();
    let miou = report.miou.unwrap();
    assert!(miou > 0.9, "held-out miou {miou}, epoch losses {:?}", log.epoch_means);
}
