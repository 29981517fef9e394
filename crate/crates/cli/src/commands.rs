//! One function per subcommand. Each writes its artifacts and a `<name>.log`
//! into the output directory and returns the log text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use paramequiv::artifact::{
    self, bins_report, describe_columns, export_embedding_input, read_equivalents, read_eset_csv, read_grid_binary,
    read_param_rows, write_equivalents, write_eset_csv, write_grid_binary, write_grid_csv, write_projection_csv,
    write_text, Preamble,
};
use paramequiv::{
    anchor_binning, classify_against_targets, connected_components, epsilon_filter, evaluate_grid, gram_schmidt,
    locate_markers, naive_binning, pca_fit, select_independent, sgd_search, ModelArch, ParamVector, SampleSet, Target,
};
use serde::Serialize;

use crate::config::{BinMethod, ModelKind, PlaneOrigin, RunConfig, PRESETS};
use crate::error::CliError;

/// Which coordinates of an epsilon-set artifact to reduce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Space {
    Params,
    Coeffs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReduceMethod {
    Pca,
    Export,
}

struct Log {
    name: &'static str,
    text: String,
}

impl Log {
    fn new(name: &'static str, cfg_hash: &str) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# paramequiv {name} config={cfg_hash}");
        Self { name, text }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn finish(self, out: &Path) -> Result<String, CliError> {
        write_text(&out.join(format!("{}.log", self.name)), &self.text)?;
        Ok(self.text)
    }
}

fn eps_label(e: f64) -> String {
    format!("{e}")
}

fn write_effective_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut text = format!("# effective configuration, hash {}\n", cfg.hash());
    text.push_str(&cfg.effective_toml());
    Ok(write_text(&out.join("effective-config.toml"), &text)?)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    text.push('\n');
    Ok(write_text(path, &text)?)
}

fn samples_for(cfg: &RunConfig) -> Result<SampleSet<f64>, CliError> {
    Ok(SampleSet::generate(cfg.sample_spec()?)?)
}

pub fn search(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let arch = cfg.arch()?;
    let theta_ref = cfg.theta_ref()?;
    let scfg = cfg.search_config()?;
    let samples = samples_for(cfg)?;
    let hash = cfg.hash();

    let result = sgd_search(&arch, &theta_ref, &samples, &scfg)?;

    write_effective_config(cfg, out)?;
    let preamble = Preamble::new("equivalents", &hash).with("accept_threshold", scfg.accept_threshold);
    write_equivalents(&out.join("equivalents.csv"), &preamble, &result, arch.param_count())?;

    let mut log = Log::new("search", &hash);
    log.line(format!("layout {}", describe_columns(&arch.ordering())));
    log.line(format!("samples = {}", samples.len()));
    log.line(format!("starts = {}", scfg.num_starts));
    log.line(format!("accepted = {}", result.found.len()));
    log.line(format!("rejected = {}", result.rejected_count()));
    if result.found.is_empty() {
        log.line("no start reached the acceptance threshold; try more starts or steps");
    }
    for f in &result.found {
        log.line(format!(
            "start {} accepted loss={} steps={} l2_from_reference={}",
            f.start,
            artifact::fmt_real(f.loss),
            f.steps,
            artifact::fmt_real(f.theta.l2_distance(&theta_ref))
        ));
    }
    for r in &result.rejected {
        log.line(format!(
            "start {} rejected loss={} steps={}",
            r.start,
            artifact::fmt_real(r.loss),
            r.steps
        ));
    }
    log.finish(out)
}

#[derive(Serialize)]
struct EpsilonSummary<'a> {
    config: &'a str,
    report: &'a paramequiv::ComponentReport<f64>,
    markers: &'a [paramequiv::MarkerLocation<f64>],
    marker_labels: &'a [String],
}

pub fn grid(
    cfg: &RunConfig,
    out: &Path,
    equivalents: Option<&Path>,
    extra_markers: Option<&Path>,
) -> Result<String, CliError> {
    let arch = cfg.arch()?;
    let theta_ref = cfg.theta_ref()?;
    let spec = cfg.grid_spec()?;
    let epsilons = cfg.epsilons()?.to_vec();
    let hash = cfg.hash();
    let d = arch.param_count();

    let eq_path: PathBuf = equivalents
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("equivalents.csv"));
    if !eq_path.exists() {
        return Err(CliError::Io(format!(
            "{}: no equivalents file; run `search` first or pass --equivalents",
            eq_path.display()
        )));
    }
    let (eq_pre, rows) = read_equivalents::<f64>(&eq_path, d)?;
    let candidates: Vec<&ParamVector<f64>> = rows.iter().map(|r| &r.theta).collect();
    let base = match cfg.grid.origin {
        PlaneOrigin::Reference => theta_ref.clone(),
        PlaneOrigin::FirstFound => candidates.first().map(|t| (*t).clone()).ok_or_else(|| {
            CliError::from(paramequiv::Error::InsufficientIndependent {
                needed: spec.dim,
                found: 0,
            })
        })?,
    };
    let picked = select_independent(&base, &candidates, spec.dim, cfg.grid.independence_tol)?;
    let plane = gram_schmidt(&base, &picked)?;
    let samples = samples_for(cfg)?;
    let eval = evaluate_grid(&arch, &theta_ref, &plane, &spec, &samples)?;

    write_effective_config(cfg, out)?;
    write_grid_binary(&out.join("grid.bin"), &eval, None, &hash)?;
    write_grid_csv(&out.join("grid.csv"), &Preamble::new("grid", &hash), &eval)?;
    write_json(&out.join("plane.json"), &plane)?;

    let mut markers = vec![theta_ref.clone()];
    let mut marker_labels = vec!["reference".to_string()];
    for (i, p) in picked.iter().enumerate() {
        markers.push(p.clone());
        marker_labels.push(format!("source{i}"));
    }
    if let Some(path) = extra_markers {
        for (i, m) in read_param_rows::<f64>(path, d, false)?.into_iter().enumerate() {
            markers.push(m);
            marker_labels.push(format!("extra{i}"));
        }
    }

    let mut log = Log::new("grid", &hash);
    if eq_pre.config_hash != hash {
        log.line(format!("equivalents from config {}", eq_pre.config_hash));
    }
    log.line(format!("equivalents read = {}", rows.len()));
    log.line(format!(
        "plane dim = {} origin = {:?} dropped = {:?}",
        plane.dim(),
        cfg.grid.origin,
        plane.dropped
    ));
    log.line(format!(
        "grid points = {} ({} per axis on [{}, {}])",
        spec.len(),
        spec.points_per_axis,
        spec.lo,
        spec.hi
    ));
    log.line(format!("min grid loss = {}", artifact::fmt_real(eval.min_loss())));

    for &eps in &epsilons {
        let dir = out.join(format!("eps-{}", eps_label(eps)));
        let eset = epsilon_filter(&eval, eps)?;
        let pre = Preamble::new("eset", &hash).with("epsilon", eps_label(eps));
        write_eset_csv(&dir.join("eset.csv"), &pre, &eset)?;
        let mut report = connected_components(&eset, cfg.grid.adjacency.into());
        let mut located = locate_markers(&eset, &markers, cfg.grid.marker_tol)?;
        report.attach_markers(&mut located);
        write_json(
            &dir.join("components.json"),
            &EpsilonSummary {
                config: &hash,
                report: &report,
                markers: &located,
                marker_labels: &marker_labels,
            },
        )?;
        log.line(format!(
            "epsilon {}: members = {} components = {}",
            eps_label(eps),
            eset.len(),
            report.num_components
        ));
        for (m, label) in located.iter().zip(&marker_labels) {
            log.line(format!(
                "  marker {label}: in_set = {} grid_loss = {} residual = {} component = {:?}",
                m.in_set,
                artifact::fmt_real(m.grid_loss),
                artifact::fmt_real(m.residual),
                m.component
            ));
        }
    }
    log.finish(out)
}

fn read_population(path: &Path, d: usize) -> Result<Vec<ParamVector<f64>>, CliError> {
    let pop = read_param_rows::<f64>(path, d, false)?;
    if pop.is_empty() {
        return Err(CliError::Usage(format!("{}: population is empty", path.display())));
    }
    Ok(pop)
}

/// `count` population members, evenly spaced through the list.
fn spread_anchors(pop: &[ParamVector<f64>], count: usize) -> Vec<ParamVector<f64>> {
    let count = count.clamp(1, pop.len());
    (0..count).map(|k| pop[k * pop.len() / count].clone()).collect()
}

pub struct BinsArgs<'a> {
    pub population: &'a Path,
    pub method: BinMethod,
    pub anchors: usize,
    pub anchors_file: Option<&'a Path>,
    pub verify: bool,
}

pub fn bins(cfg: &RunConfig, out: &Path, args: &BinsArgs<'_>) -> Result<String, CliError> {
    let arch = cfg.arch()?;
    let epsilons = cfg.epsilons()?.to_vec();
    let hash = cfg.hash();
    let pop = read_population(args.population, arch.param_count())?;
    let samples = samples_for(cfg)?;
    let anchors = match args.anchors_file {
        Some(f) => read_population(f, arch.param_count())?,
        None => spread_anchors(&pop, args.anchors),
    };

    write_effective_config(cfg, out)?;
    let mut log = Log::new("bins", &hash);
    log.line(format!("population = {}", pop.len()));
    let mut mismatch = Vec::new();
    for &eps in &epsilons {
        let (bins, method, verified) = if args.verify {
            let naive = naive_binning(&arch, &pop, &samples, eps)?;
            let fast = anchor_binning(&arch, &pop, &samples, eps, &anchors)?;
            let same = naive.same_partition(&fast);
            if !same {
                mismatch.push(eps);
            }
            (fast, "anchor (verified against naive)", Some(same))
        } else {
            match args.method {
                BinMethod::Naive => (naive_binning(&arch, &pop, &samples, eps)?, "naive", None),
                BinMethod::Anchor => (anchor_binning(&arch, &pop, &samples, eps, &anchors)?, "anchor", None),
            }
        };
        let pre = Preamble::new("bins", &hash).with("epsilon", eps_label(eps));
        let name = format!("bins-eps-{}.txt", eps_label(eps));
        write_text(&out.join(&name), &bins_report(&pre, &bins, &pop, method, verified))?;
        let mut line = format!(
            "epsilon {}: bins = {} comparisons = {} pruned = {} ({:.1}%)",
            eps_label(eps),
            bins.bins.len(),
            bins.comparisons_made,
            bins.comparisons_pruned,
            100.0 * bins.pruned_fraction()
        );
        match verified {
            Some(true) => line.push_str(" partitions identical"),
            Some(false) => line.push_str(" PARTITIONS DIFFER"),
            None => {}
        }
        log.line(line);
    }
    let text = log.finish(out)?;
    if !mismatch.is_empty() {
        return Err(CliError::Numeric(format!(
            "anchor and naive binning disagree at epsilon {mismatch:?}"
        )));
    }
    Ok(text)
}

pub struct ClassifyArgs<'a> {
    pub population: &'a Path,
    pub targets: Option<&'a Path>,
    pub target_widths: Option<&'a [usize]>,
    pub target_table: Option<&'a Path>,
}

pub fn classify(cfg: &RunConfig, out: &Path, args: &ClassifyArgs<'_>) -> Result<String, CliError> {
    let arch = cfg.arch()?;
    let epsilons = cfg.epsilons()?.to_vec();
    let hash = cfg.hash();
    let pop = read_population(args.population, arch.param_count())?;
    let samples = samples_for(cfg)?;

    let mut targets = Vec::new();
    let mut kinds = Vec::new();
    if let Some(path) = args.targets {
        let tarch = match args.target_widths {
            Some(w) => ModelArch::new(w.to_vec(), arch.activation(), arch.bias_enabled())?,
            None => arch.clone(),
        };
        for theta in read_population(path, tarch.param_count())? {
            targets.push(Target::Model {
                arch: tarch.clone(),
                theta,
            });
            kinds.push("model");
        }
    }
    if let Some(path) = args.target_table {
        let width = samples.len() * arch.output_dim();
        for row in read_param_rows::<f64>(path, width, false)? {
            targets.push(Target::Table(row.into_vec()));
            kinds.push("table");
        }
    }
    if targets.is_empty() {
        return Err(CliError::Usage("classify: pass --targets and/or --target-table".into()));
    }

    write_effective_config(cfg, out)?;
    let mut log = Log::new("classify", &hash);
    log.line(format!("population = {} targets = {}", pop.len(), targets.len()));
    for &eps in &epsilons {
        let matches = classify_against_targets(&arch, &pop, &targets, &samples, eps)?;
        let mut report = format!(
            "# paramequiv artifact=classify version=1 config={hash} epsilon={}\n",
            eps_label(eps)
        );
        for (t, (m, kind)) in matches.iter().zip(&kinds).enumerate() {
            let ids = m.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(report, "target {t} ({kind}) members={}: {ids}", m.len());
        }
        write_text(&out.join(format!("classify-eps-{}.txt", eps_label(eps))), &report)?;
        let counts: Vec<usize> = matches.iter().map(Vec::len).collect();
        log.line(format!("epsilon {}: matches per target = {counts:?}", eps_label(eps)));
    }
    log.finish(out)
}

pub struct ReduceArgs<'a> {
    pub eset: &'a Path,
    pub method: ReduceMethod,
    pub dim: usize,
    pub space: Space,
}

pub fn reduce(out: &Path, args: &ReduceArgs<'_>) -> Result<String, CliError> {
    let rows = read_eset_csv(args.eset)?;
    let hash = rows.preamble.config_hash.clone();
    let mut log = Log::new("reduce", &hash);
    log.line(format!(
        "input = {} members = {}",
        file_label(args.eset),
        rows.losses.len()
    ));
    match args.method {
        ReduceMethod::Export => {
            let d = rows
                .params
                .first()
                .map_or_else(|| count_param_columns(args.eset), |p| Ok::<usize, CliError>(p.len()))?;
            let data = rows
                .params
                .iter()
                .zip(&rows.losses)
                .map(|(p, &l)| Ok((ParamVector::new(p.clone())?, l)))
                .collect::<Result<Vec<_>, paramequiv::Error>>()?;
            let pre = with_source(Preamble::new("embedding-input", &hash), &rows.preamble);
            export_embedding_input(&out.join("embedding-input.csv"), &pre, d, &data)?;
            log.line(format!("wrote embedding-input.csv rows = {}", data.len()));
        }
        ReduceMethod::Pca => {
            let points = match args.space {
                Space::Params => &rows.params,
                Space::Coeffs => &rows.coeffs,
            };
            let proj = pca_fit(points, args.dim)?;
            let coords = points.iter().map(|p| proj.project(p)).collect::<Result<Vec<_>, _>>()?;
            let pre = with_source(Preamble::new("projection", &hash), &rows.preamble).with("dim", args.dim);
            write_projection_csv(&out.join("projection.csv"), &pre, &coords, &rows.losses)?;
            write_json(&out.join("projection.json"), &proj)?;
            log.line(format!(
                "pca dim = {} explained = {:?} residual = {}",
                args.dim,
                proj.explained_variance
                    .iter()
                    .map(|v| artifact::fmt_real(*v))
                    .collect::<Vec<_>>(),
                artifact::fmt_real(proj.residual_variance())
            ));
        }
    }
    log.finish(out)
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn with_source(pre: Preamble, source: &Preamble) -> Preamble {
    match source.extra.get("epsilon") {
        Some(e) => pre.with("epsilon", e),
        None => pre,
    }
}

fn count_param_columns(path: &Path) -> Result<usize, CliError> {
    let table = artifact::read_table(path)?;
    Ok(table.header.iter().filter(|h| h.starts_with('p')).count())
}

pub fn info(cfg: &RunConfig, artifact_path: Option<&Path>) -> Result<String, CliError> {
    let mut s = String::new();
    if let Some(path) = artifact_path {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if bytes.starts_with(b"PEQGRID\0") {
            let g = read_grid_binary(path)?;
            let _ = writeln!(
                s,
                "grid binary: m = {} n = {} bounds = [{}, {}] epsilon = {:?} config = {} points = {}",
                g.spec.dim,
                g.spec.points_per_axis,
                g.spec.lo,
                g.spec.hi,
                g.epsilon,
                g.config_hash,
                g.losses.len()
            );
        } else {
            let t = artifact::read_table(path)?;
            let _ = writeln!(
                s,
                "artifact = {} version = {} config = {} rows = {} columns = {}",
                t.preamble.kind,
                t.preamble.version,
                t.preamble.config_hash,
                t.rows.len(),
                t.header.join(",")
            );
        }
        return Ok(s);
    }
    let _ = writeln!(
        s,
        "presets: {}",
        PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
    );
    if cfg.model.kind == ModelKind::Lenet5 {
        s.push_str("this configuration describes a convolutional network and cannot be run\n");
        s.push_str(&cfg.effective_toml());
        return Ok(s);
    }
    let arch = cfg.arch()?;
    let _ = writeln!(s, "config hash: {}", cfg.hash());
    let _ = writeln!(s, "parameters: {}", arch.param_count());
    let _ = writeln!(s, "layout: {}", describe_columns(&arch.ordering()));
    s.push_str("effective config:\n");
    s.push_str(&cfg.effective_toml());
    Ok(s)
}
