use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use slownav::agent::{
    evaluate, train, write_episode_csv, EvalStats, Extractor, IdentityExtractor, ModelPolicy,
    NavTask, PolicyModel, RandomPolicy,
};
use slownav::analysis::{
    evaluate_heading, feature_map, fit_pca_extractor, heading_sections, location_decode,
    PcaExtractor,
};
use slownav::hsfa::{fit_network, HsfaNetwork};
use slownav::sfa::{lra_weights, LraConfig, TimeStructure};
use slownav::worldsim::{
    collect_random, occupancy, Action, Layout, LayoutConfig, LayoutKind, TimeSeriesDataset,
    FRAME_LEN,
};

use crate::config::ExperimentConfig;
use crate::{
    AnalyzeArgs, Cli, CollectArgs, Command, EvalArgs, ExtractorKind, FitPcaArgs, FitSfaArgs,
    LayoutArgs, PolicyKind, TrainArgs,
};

const DEFAULT_COLLECT_STEPS: usize = 80_000;
const DEFAULT_TRAIN_STEPS: usize = 100_000;
/// Training episodes averaged when no separate evaluation is requested.
const FINAL_EPISODES: usize = 100;

struct Context_ {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Context_ {
    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context_ { cfg, out };
    match cli.command {
        Command::Collect(a) => collect(&ctx, a),
        Command::FitSfa(a) => fit_sfa(&ctx, a),
        Command::FitPca(a) => fit_pca(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::Train(a) => train_agents(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create_parent(path)?;
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn resolve_layout(args: &LayoutArgs, cfg: &ExperimentConfig) -> Result<Arc<Layout>> {
    let file = args.layout_file.as_ref().or(cfg.layout_file.as_ref());
    let mut lc = if let Some(path) = file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading layout file {}", path.display()))?;
        LayoutConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
    } else {
        let name = args
            .layout
            .as_ref()
            .or(cfg.layout.as_ref())
            .ok_or_else(|| anyhow!("no layout given; use --layout or --layout-file"))?;
        LayoutConfig::new(name.parse::<LayoutKind>()?)
    };
    if let Some(n) = args.max_steps.map(|n| n as usize).or(cfg.max_steps) {
        lc = lc.with_max_steps(n);
    }
    Ok(Arc::new(lc.build()?))
}

fn load_dataset(path: &Path) -> Result<TimeSeriesDataset> {
    TimeSeriesDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn collect(ctx: &Context_, a: CollectArgs) -> Result<()> {
    let layout = resolve_layout(&a.layout, &ctx.cfg)?;
    let d = &ctx.cfg.dataset;
    let steps = a
        .steps
        .map(|n| n as usize)
        .or(d.n_steps)
        .unwrap_or(DEFAULT_COLLECT_STEPS);
    let reset = a
        .reset_every
        .map(|n| n as usize)
        .or(d.reset_every)
        .unwrap_or(layout.max_steps());
    let seed = a.seed.or(d.seed).unwrap_or(0);
    let path = a
        .output
        .unwrap_or_else(|| ctx.path(format!("{}-{}-s{}.tsd", layout.kind().name(), steps, seed)));

    let ds = collect_random(&layout, steps, reset, seed, !a.empty);
    create_parent(&path)?;
    ds.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let (hit, free) = occupancy(&layout, ds.poses(), 20);
    println!(
        "wrote {} frames ({} episodes) to {}",
        ds.len(),
        ds.boundaries().len() + 1,
        path.display()
    );
    println!(
        "occupancy: {hit}/{free} free cells visited ({:.1}%)",
        100.0 * hit as f64 / free.max(1) as f64
    );
    Ok(())
}

/// Parses `left=4,right=4,forward=1`; missing actions get weight 1.
fn parse_lra(spec: &str) -> Result<LraConfig> {
    let mut w = vec![1.0; Action::COUNT];
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("LRA entry `{part}` is not action=weight"))?;
        let action: Action = name.trim().parse()?;
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("LRA weight `{value}`"))?;
        w[action.id() as usize] = v;
    }
    Ok(LraConfig::new(w)?)
}

fn fit_sfa(ctx: &Context_, a: FitSfaArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let net_cfg = ctx.cfg.network(seed);
    let weights = match &a.lra {
        Some(spec) => Some(lra_weights(&ds.action_ids(), &parse_lra(spec)?)?),
        None => None,
    };
    let skip = !a.keep_boundaries && ctx.cfg.hsfa.skip_boundaries.unwrap_or(true);
    let timing = TimeStructure::new(ds.boundaries(), weights.as_ref()).with_skip(skip);
    let (net, report) = fit_network(ds.frames(), &net_cfg, timing)?;

    let path = a
        .output
        .unwrap_or_else(|| ctx.path(format!("{}.hsfa", stem(&a.data))));
    create_parent(&path)?;
    net.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    for (k, (layer, shape)) in report.layers.iter().zip(&report.shapes).enumerate() {
        println!("layer {k} -> {shape:?}");
        println!("  reduce:  {}", layer.reduce);
        println!("  extract: {}", layer.extract);
        println!("  clipped: {:.3}%", 100.0 * layer.clip_fraction);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn fit_pca(ctx: &Context_, a: FitPcaArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let pca = fit_pca_extractor(
        ds.frames(),
        FRAME_LEN,
        a.components as usize,
        a.seed.unwrap_or(0),
    )?;
    let path = a
        .output
        .unwrap_or_else(|| ctx.path(format!("{}.pca", stem(&a.data))));
    create_parent(&path)?;
    pca.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let ratios = pca.explained_variance_ratio();
    let head: Vec<String> = ratios.iter().take(6).map(|r| format!("{r:.3}")).collect();
    println!(
        "explained variance: {:.1}% over {} components (first: {})",
        100.0 * pca.cumulative_explained(),
        ratios.len(),
        head.join(", ")
    );
    println!("wrote {}", path.display());
    Ok(())
}

enum Model {
    Hsfa(HsfaNetwork),
    Pca(PcaExtractor),
}

impl Model {
    fn load(path: &Path) -> Result<Self> {
        let mut magic = [0u8; 8];
        File::open(path)
            .and_then(|mut f| f.read_exact(&mut magic))
            .with_context(|| format!("reading {}", path.display()))?;
        let model = match &magic {
            b"SLOWHSFA" => Model::Hsfa(HsfaNetwork::load(path)?),
            b"SLOWPCA\0" => Model::Pca(PcaExtractor::load(path)?),
            _ => bail!("{} is neither an hSFA nor a PCA model", path.display()),
        };
        Ok(model)
    }

    fn transform_batch(&self, frames: &[u8]) -> Result<Array2<f64>> {
        Ok(match self {
            Model::Hsfa(m) => m.transform_batch(frames)?,
            Model::Pca(m) => m.transform_batch(frames)?,
        })
    }

    fn into_extractor(self) -> Arc<dyn Extractor> {
        match self {
            Model::Hsfa(m) => Arc::new(m),
            Model::Pca(m) => Arc::new(m),
        }
    }
}

/// `0..5` (inclusive), `3`, or `0,3,4`.
fn parse_features(spec: &str, dim: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: usize = lo
                .trim()
                .parse()
                .with_context(|| format!("feature range `{part}`"))?;
            let hi: usize = hi
                .trim()
                .parse()
                .with_context(|| format!("feature range `{part}`"))?;
            if lo > hi {
                bail!("empty feature range `{part}`");
            }
            out.extend(lo..=hi);
        } else {
            out.push(
                part.parse()
                    .with_context(|| format!("feature index `{part}`"))?,
            );
        }
    }
    if let Some(&bad) = out.iter().find(|&&i| i >= dim) {
        bail!("feature {bad} out of range (model has {dim})");
    }
    Ok(out)
}

fn analyze(ctx: &Context_, a: AnalyzeArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let layout = match &a.layout_file {
        Some(path) => resolve_layout(
            &LayoutArgs {
                layout_file: Some(path.clone()),
                ..LayoutArgs::default()
            },
            &ctx.cfg,
        )?,
        None => Arc::new(Layout::new(ds.layout)),
    };
    let features = model.transform_batch(ds.frames())?;
    let indices = parse_features(&a.feature, features.ncols())?;
    let dir = a.output.unwrap_or_else(|| ctx.path("analysis"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let bounds = layout.bounds();
    let mut report = Vec::new();

    for &i in &indices {
        let map = feature_map(ds.poses(), features.view(), i, None)?;
        map.write_csv(create_file(&dir.join(format!("feature{i}.csv")))?)?;
        map.write_ppm(
            create_file(&dir.join(format!("feature{i}.ppm")))?,
            bounds,
            a.size,
        )?;
        if let Some(n) = a.sections {
            for (s, section) in heading_sections(n).into_iter().enumerate() {
                let map = feature_map(ds.poses(), features.view(), i, Some(section))?;
                let name = format!("feature{i}-section{s}");
                map.write_csv(create_file(&dir.join(format!("{name}.csv")))?)?;
                map.write_ppm(
                    create_file(&dir.join(format!("{name}.ppm")))?,
                    bounds,
                    a.size,
                )?;
            }
        }
    }
    writeln!(report, "maps: {} features", indices.len())?;

    if a.heading {
        let headings: Vec<f64> = ds.poses().iter().map(|p| p.heading).collect();
        let eval = evaluate_heading(features.view(), &headings)?;
        eval.write_csv(create_file(&dir.join("heading.csv"))?)?;
        writeln!(
            report,
            "heading mean error: {:.2} deg",
            eval.mean_error_deg()
        )?;
    }
    if a.location {
        let loc = location_decode(features.view(), ds.poses(), layout.diameter())?;
        writeln!(
            report,
            "location rmse: {:.3} ({:.1}% of diameter {:.3})",
            loc.rmse,
            100.0 * loc.fraction_of_diameter,
            layout.diameter()
        )?;
    }
    fs::write(dir.join("report.txt"), &report)?;
    std::io::stdout().write_all(&report)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_extractor(kind: ExtractorKind, model: Option<&Path>) -> Result<Arc<dyn Extractor>> {
    if kind == ExtractorKind::Identity {
        return Ok(Arc::new(IdentityExtractor));
    }
    let path = model.ok_or_else(|| anyhow!("--model is required for this extractor"))?;
    let m = Model::load(path)?;
    match (kind, &m) {
        (ExtractorKind::Hsfa, Model::Hsfa(_)) | (ExtractorKind::Pca, Model::Pca(_)) => {}
        _ => bail!("{} does not match --extractor {kind:?}", path.display()),
    }
    Ok(m.into_extractor())
}

fn extractor_name(kind: ExtractorKind) -> &'static str {
    match kind {
        ExtractorKind::Hsfa => "hsfa",
        ExtractorKind::Pca => "pca",
        ExtractorKind::Identity => "identity",
    }
}

fn train_agents(ctx: &Context_, a: TrainArgs) -> Result<()> {
    let layout = resolve_layout(&a.layout, &ctx.cfg)?;
    let extractor = load_extractor(a.extractor, a.model.as_deref())?;
    let t = &ctx.cfg.train;
    let steps = a
        .steps
        .map(|n| n as usize)
        .or(t.total_steps)
        .unwrap_or(DEFAULT_TRAIN_STEPS);
    let seeds = a.seeds.map(|n| n as usize).or(t.seeds).unwrap_or(1);
    let base = a.seed.or(t.seed).unwrap_or(0);
    let eval_episodes = a.eval_episodes.or(t.eval_episodes).unwrap_or(0);
    let ppo = ctx.cfg.ppo();
    let dir = a.output.unwrap_or_else(|| {
        ctx.path(format!(
            "train-{}-{}",
            layout.kind().name(),
            extractor_name(a.extractor)
        ))
    });
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut summary = String::from("seed,mean_length,min_length,max_length,episodes\n");
    let mut means = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let seed = base + k;
        let mut task = NavTask::new(Arc::clone(&layout), Arc::clone(&extractor), seed);
        let outcome = train(&mut task, &ppo, steps, seed)?;
        outcome.model.save(dir.join(format!("agent-s{seed}.ppo")))?;
        write_episode_csv(
            create_file(&dir.join(format!("log-s{seed}.csv")))?,
            &outcome.episodes,
        )?;

        let stats = if eval_episodes > 0 {
            let mut policy = ModelPolicy {
                model: outcome.model.clone(),
                greedy: false,
            };
            evaluate(
                &mut policy,
                &extractor,
                &layout,
                eval_episodes,
                seed ^ 0xe7a1_0000,
            )?
        } else {
            let tail = &outcome.episodes[outcome.episodes.len().saturating_sub(FINAL_EPISODES)..];
            let lengths: Vec<usize> = if tail.is_empty() {
                // No episode finished: report the steps taken as one
                // unfinished episode.
                vec![steps.min(layout.max_steps())]
            } else {
                tail.iter().map(|e| e.length).collect()
            };
            EvalStats::from_lengths(lengths, 0)?
        };
        println!("seed {seed}: {stats}");
        summary.push_str(&format!(
            "{seed},{},{},{},{}\n",
            stats.mean,
            stats.min,
            stats.max,
            stats.lengths.len()
        ));
        means.push(stats.mean);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("all: {mean:.1} ({lo:.1}, {hi:.1})");
    summary.push_str(&format!("all,{mean},{lo},{hi},{}\n", means.len()));
    fs::write(dir.join("summary.csv"), summary)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(ctx: &Context_, a: EvalArgs) -> Result<()> {
    let layout = resolve_layout(&a.layout, &ctx.cfg)?;
    let seed = a.seed.unwrap_or(0);
    let episodes = a.episodes as usize;
    let stats = match a.policy {
        PolicyKind::Random => evaluate(
            &mut RandomPolicy,
            &IdentityExtractor,
            &layout,
            episodes,
            seed,
        )?,
        PolicyKind::Agent => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| anyhow!("--checkpoint is required for --policy agent"))?;
            let model =
                PolicyModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            let extractor = load_extractor(a.extractor, a.model.as_deref())?;
            if model.shape().input != extractor.dim() {
                bail!(
                    "checkpoint expects {} features, extractor gives {}",
                    model.shape().input,
                    extractor.dim()
                );
            }
            let mut policy = ModelPolicy {
                model,
                greedy: a.greedy,
            };
            evaluate(&mut policy, &extractor, &layout, episodes, seed)?
        }
    };
    println!(
        "{}: {stats} over {} episodes, {} reached the target",
        layout.kind().name(),
        stats.lengths.len(),
        stats.successes
    );
    if let Some(path) = &a.output {
        let mut w = create_file(path)?;
        writeln!(w, "episode,length")?;
        for (i, l) in stats.lengths.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lra_spec() {
        let c = parse_lra("left=4,right=4,forward=1").unwrap();
        let w = lra_weights(&[0, 2, 1], &c).unwrap();
        assert_eq!(w.len(), 2);
        assert!(parse_lra("left").is_err());
        assert!(parse_lra("jump=2").is_err());
        assert!(parse_lra("left=-1").is_err());
    }

    #[test]
    fn feature_lists() {
        assert_eq!(parse_features("0..5", 32).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(parse_features("3, 7", 32).unwrap(), vec![3, 7]);
        assert!(parse_features("30..33", 32).is_err());
        assert!(parse_features("5..2", 32).is_err());
    }
}
