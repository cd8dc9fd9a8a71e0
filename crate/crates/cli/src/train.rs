use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spgs::io::{load_ply, save_checkpoint};
use spgs::model::RenderPath;
use spgs::train::{init::random_cloud, mean_psnr, train_nonrigid_stage, train_spgs, LossRecord, NonRigidConfig};

use crate::{load_dataset, write_json, GlobalArgs, ProfileArg};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write. The loss trace goes next to it as
    /// `<out>.loss.csv`, held-out PSNR as `<out>.psnr.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Total iterations; every schedule is rescaled proportionally.
    #[arg(long)]
    iters: Option<usize>,
    /// Number of superpoints.
    #[arg(long)]
    sp: Option<usize>,
    /// Candidate superpoints per Gaussian.
    #[arg(long)]
    knn: Option<usize>,
    /// Maximum SH degree.
    #[arg(long)]
    sh: Option<usize>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    no_warmup: bool,
    #[arg(long)]
    no_prop_loss: bool,
    /// Initial Gaussians; random points in a cube otherwise.
    #[arg(long, value_name = "PLY")]
    init: Option<PathBuf>,
    /// Held-out PSNR every this many iterations (0 disables).
    #[arg(long, default_value_t = 1000)]
    test_interval: usize,
    /// Iterations of the per-Gaussian residual stage after training.
    #[arg(long, default_value_t = 0)]
    nonrigid_iters: usize,
}

#[derive(Serialize)]
struct Summary {
    iterations: usize,
    gaussians: usize,
    superpoints: usize,
    test_psnr_network: Option<f64>,
    test_psnr_interp: Option<f64>,
}

pub fn run(g: &GlobalArgs, a: TrainArgs) -> Result<()> {
    let mut cfg = g.config(a.profile)?;
    let t = &mut cfg.train;
    if let Some(n) = a.iters {
        *t = t.clone().scaled_to(n);
    }
    if let Some(m) = a.sp {
        t.superpoints = m;
    }
    if let Some(k) = a.knn {
        t.knn = k;
    }
    if let Some(d) = a.sh {
        t.sh_degree = d;
    }
    if a.no_warmup {
        t.warmup = false;
    }
    if a.no_prop_loss {
        *t = t.clone().without_property_losses();
    }
    t.test_interval = a.test_interval;
    t.validate()?;
    let train = cfg.train;

    let dataset = load_dataset(&a.data)?;
    let init = match &a.init {
        Some(p) => load_ply(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
            random_cloud(train.init_points, train.init_extent, train.sh_degree, &mut rng)?
        }
    };
    info!("{} training frames, {} test frames, {} initial Gaussians", dataset.train.len(), dataset.test.len(), init.len());

    let loss_path = a.out.with_extension("loss.csv");
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut csv = csv::Writer::from_path(&loss_path).with_context(|| format!("writing {}", loss_path.display()))?;
    let mut header = vec!["iter", "warmup", "total", "image", "position", "rotation", "translation", "gaussians"];
    if !g.deterministic {
        header.push("seconds");
    }
    csv.write_record(&header)?;
    let start = Instant::now();
    let mut failure = None;
    let mut observer = |r: &LossRecord| {
        let mut row = vec![
            r.iter.to_string(),
            u8::from(r.warmup).to_string(),
            r.total.to_string(),
            r.image.to_string(),
            r.position.to_string(),
            r.rotation.to_string(),
            r.translation.to_string(),
            r.gaussians.to_string(),
        ];
        if !g.deterministic {
            row.push(format!("{:.3}", start.elapsed().as_secs_f64()));
        }
        if let Err(e) = csv.write_record(&row) {
            failure.get_or_insert(e);
        }
        if r.iter % 1000 == 0 {
            info!("iter {} loss {:.5} gaussians {}", r.iter, r.total, r.gaussians);
        }
    };
    let (mut model, log) = train_spgs(&dataset, &train, init, &mut observer)?;
    let mut test_psnr = log.test_psnr;
    if a.nonrigid_iters > 0 {
        let nr = NonRigidConfig { iters: a.nonrigid_iters, seed: train.seed, render: train.render.clone(), ..NonRigidConfig::default() };
        let (m, _) = train_nonrigid_stage(model, &dataset, &train, &nr, &mut observer)?;
        model = m;
    }
    if let Some(e) = failure {
        return Err(e).context("writing loss trace");
    }
    csv.flush()?;
    model.build_cache()?;
    save_checkpoint(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let (net, interp) = if dataset.test.is_empty() {
        (None, None)
    } else {
        let n = mean_psnr(&model, &dataset.test, &dataset, &train.render, RenderPath::Network)?;
        let i = mean_psnr(&model, &dataset.test, &dataset, &train.render, RenderPath::Interp)?;
        let last = train.total_iters + a.nonrigid_iters;
        test_psnr.retain(|&(i, _)| i != last);
        test_psnr.push((last, n));
        (Some(n), Some(i))
    };
    let mut psnr_csv = csv::Writer::from_path(a.out.with_extension("psnr.csv"))?;
    psnr_csv.write_record(["iter", "psnr"])?;
    for (iter, p) in &test_psnr {
        psnr_csv.write_record([iter.to_string(), p.to_string()])?;
    }
    psnr_csv.flush()?;

    let summary = Summary {
        iterations: train.total_iters + a.nonrigid_iters,
        gaussians: model.cloud.len(),
        superpoints: model.superpoints()?.len(),
        test_psnr_network: net,
        test_psnr_interp: interp,
    };
    write_json(&a.out.with_extension("summary.json"), &summary)?;
    info!("wrote {}", a.out.display());
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
