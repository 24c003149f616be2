use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use corsair::error::{Error, Result};
use corsair::features::{extract_fpfh, load_features, write_features, FeatureSet, FpfhParams, DEFAULT_K};
use corsair::geometry::{apply_pose, PointCloud};
use corsair::harness::{report_table, run_evaluation_with, write_dataset, DatasetSpec, EvalConfig};
use corsair::io::{read_cloud, write_ply_with_labels};
use corsair::registration::{
    register_unconstrained, symmetry_aware_register, RansacParams, RegistrationParams,
    RegistrationRecord,
};
use corsair::retrieval::{
    build_database_with, load_database, pooled_embedding, retrieve, IndexOptions, ModelDatabase,
};
use corsair::symmetry::{symmetry_split, SymmetryParams};

#[derive(Parser)]
#[command(name = "corsair", version, about = "Point cloud retrieval and symmetry-aware registration")]
struct Cli {
    /// Seed for every randomized step; overrides seeds stored in spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a dataset spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize a cloud and write its FPFH features.
    Extract {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fpfh: FpfhArgs,
    },
    /// Build and persist the database index for a manifest.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        fpfh: FpfhArgs,
        #[arg(long, default_value_t = 20)]
        split_samples: usize,
    },
    /// Rank database models by embedding distance to a query cloud.
    Retrieve {
        #[arg(long)]
        query: PathBuf,
        /// Index directory written by `index`.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        index: Option<PathBuf>,
        /// Manifest to build the database from.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(short, long, default_value_t = 5)]
        m: usize,
        #[command(flatten)]
        fpfh: FpfhArgs,
    },
    /// Register a model onto a query; both are normalized first and the
    /// pose is reported between the normalized frames.
    Register {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Symmetry class count; 1 runs plain kNN + RANSAC.
        #[arg(long, default_value_t = 1)]
        symmetry: usize,
        #[arg(long)]
        query_features: Option<PathBuf>,
        #[arg(long)]
        model_features: Option<PathBuf>,
        #[command(flatten)]
        ransac: RansacArgs,
        #[command(flatten)]
        fpfh: FpfhArgs,
    },
    /// Run an evaluation config and report the results.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a cloud into symmetry classes and write a labeled PLY.
    Segment {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[command(flatten)]
        fpfh: FpfhArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct FpfhArgs {
    #[arg(long, default_value_t = 0.1)]
    normal_radius: f64,
    #[arg(long, default_value_t = 0.2)]
    feature_radius: f64,
}

impl FpfhArgs {
    fn params(self) -> FpfhParams {
        FpfhParams {
            normal_radius: self.normal_radius,
            feature_radius: self.feature_radius,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct RansacArgs {
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    inlier_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn features_for(cloud: &PointCloud, path: Option<&Path>, fpfh: FpfhParams) -> Result<FeatureSet> {
    match path {
        Some(p) => load_features(p, cloud.len()),
        None => extract_fpfh(cloud, &fpfh),
    }
}

fn synth(spec: &Path, out: &Path, seed: Option<u64>, format: Format) -> Result<String> {
    let mut spec = DatasetSpec::read(spec)?;
    if let Some(s) = seed {
        spec.template.seed = s;
    }
    let r = write_dataset(&spec, out)?;
    Ok(match format {
        Format::Json => to_json(&r),
        Format::Table => {
            let mut s = format!("models   {}\nqueries  {}\nmanifest {}\n", r.models, r.queries, r.manifest.display());
            if let Some(p) = &r.eval_config {
                let _ = writeln!(s, "config   {}", p.display());
            }
            s
        }
    })
}

#[derive(Serialize)]
struct ExtractOut {
    points: usize,
    dim: usize,
    out: PathBuf,
}

fn extract(cloud: &Path, out: &Path, fpfh: FpfhParams, format: Format) -> Result<String> {
    let (cloud, _) = read_cloud(cloud)?.normalized();
    let f = extract_fpfh(&cloud, &fpfh)?;
    write_features(out, &f)?;
    let o = ExtractOut {
        points: f.len(),
        dim: f.dim(),
        out: out.to_path_buf(),
    };
    Ok(match format {
        Format::Json => to_json(&o),
        Format::Table => format!("points {}  dim {}  -> {}\n", o.points, o.dim, o.out.display()),
    })
}

#[derive(Serialize)]
struct EntryOut {
    id: String,
    points: usize,
    symmetry_classes: usize,
    split_sizes: Option<Vec<usize>>,
    split_evenness: Option<f64>,
}

fn describe_db(db: &ModelDatabase, format: Format) -> String {
    let entries: Vec<EntryOut> = db
        .entries()
        .iter()
        .map(|e| EntryOut {
            id: e.id.clone(),
            points: e.cloud.len(),
            symmetry_classes: e.symmetry_classes,
            split_sizes: e.symmetry_split.as_ref().map(|s| s.sizes()),
            split_evenness: e.symmetry_split.as_ref().map(|s| s.evenness()),
        })
        .collect();
    match format {
        Format::Json => to_json(&entries),
        Format::Table => {
            let mut s = format!("{:<12}{:>8}{:>4}  {}\n", "id", "points", "G", "split");
            for e in &entries {
                let split = match (&e.split_sizes, e.split_evenness) {
                    (Some(sizes), Some(sd)) => format!("{sizes:?} sd {sd:.3}"),
                    _ => "-".into(),
                };
                let _ = writeln!(s, "{:<12}{:>8}{:>4}  {}", e.id, e.points, e.symmetry_classes, split);
            }
            s
        }
    }
}

fn index(manifest: &Path, fpfh: FpfhParams, samples: usize, seed: u64, format: Format) -> Result<String> {
    let options = IndexOptions {
        fpfh,
        symmetry: SymmetryParams {
            n_samples: samples,
            k_neighbors: None,
            seed,
        },
    };
    let db = build_database_with(manifest, &options)?;
    Ok(describe_db(&db, format))
}

#[derive(Serialize)]
struct Ranked {
    rank: usize,
    id: String,
    distance: f64,
}

fn retrieve_cmd(
    query: &Path,
    index: Option<&Path>,
    manifest: Option<&Path>,
    m: usize,
    fpfh: FpfhParams,
    format: Format,
) -> Result<String> {
    let db = match (index, manifest) {
        (Some(dir), _) => load_database(dir)?,
        (None, Some(man)) => build_database_with(
            man,
            &IndexOptions {
                fpfh,
                symmetry: SymmetryParams::default(),
            },
        )?,
        (None, None) => return Err(Error::Parameter("either --index or --manifest is required".into())),
    };
    let (cloud, _) = read_cloud(query)?.normalized();
    let emb = pooled_embedding(&extract_fpfh(&cloud, &fpfh)?)?;
    let ranked: Vec<Ranked> = retrieve(&emb, &db, m)?
        .into_iter()
        .enumerate()
        .map(|(i, (id, distance))| Ranked {
            rank: i + 1,
            id,
            distance,
        })
        .collect();
    Ok(match format {
        Format::Json => to_json(&ranked),
        Format::Table => {
            let mut s = format!("{:<6}{:<16}{:>14}\n", "rank", "id", "distance");
            for r in &ranked {
                let _ = writeln!(s, "{:<6}{:<16}{:>14.8}", r.rank, r.id, r.distance);
            }
            s
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn register(
    query: &Path,
    model: &Path,
    g: usize,
    query_features: Option<&Path>,
    model_features: Option<&Path>,
    ransac: RansacArgs,
    fpfh: FpfhParams,
    seed: u64,
    format: Format,
) -> Result<String> {
    if g == 0 {
        return Err(Error::Parameter("--symmetry must be at least 1".into()));
    }
    let (q, _) = read_cloud(query)?.normalized();
    let (m, _) = read_cloud(model)?.normalized();
    let qf = features_for(&q, query_features, fpfh)?;
    let mf = features_for(&m, model_features, fpfh)?;
    let params = RegistrationParams {
        ransac: RansacParams {
            iterations: ransac.iterations,
            inlier_threshold: ransac.inlier_threshold,
            seed,
            ..RansacParams::default()
        },
        k: ransac.k,
        symmetry: SymmetryParams {
            seed,
            ..SymmetryParams::default()
        },
    };
    let result = if g >= 2 {
        symmetry_aware_register(&q, &qf, &m, &mf, g, &params)?
    } else {
        register_unconstrained(&q, &qf, &m, &mf, &params)?
    };
    let r: RegistrationRecord = result.record();
    Ok(match format {
        Format::Json => to_json(&r),
        Format::Table => {
            let mut s = String::from("rotation\n");
            for row in r.rotation.chunks(3) {
                let _ = writeln!(s, "  {:>12.8} {:>12.8} {:>12.8}", row[0], row[1], row[2]);
            }
            let t = r.translation;
            let _ = writeln!(s, "translation {:.8} {:.8} {:.8}", t[0], t[1], t[2]);
            let _ = writeln!(s, "inliers     {}", r.inlier_count);
            let _ = writeln!(s, "hypothesis  {}", r.hypothesis_label);
            let _ = writeln!(s, "scd         {:.8}", r.alignment_scd);
            s
        }
    })
}

fn evaluate(config_path: &Path, out: Option<&Path>, seed: Option<u64>, format: Format) -> Result<String> {
    let mut config = EvalConfig::read(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let report = run_evaluation_with(&config, config_path.parent().unwrap_or(Path::new(".")))?;
    let json = to_json(&report);
    if let Some(o) = out {
        std::fs::write(o, &json).map_err(|e| Error::Io {
            path: o.to_path_buf(),
            source: e,
        })?;
    }
    Ok(match format {
        Format::Json => json,
        Format::Table => report_table(&report),
    })
}

#[derive(Serialize)]
struct SegmentOut {
    classes: usize,
    sizes: Vec<usize>,
    evenness: f64,
    out: PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn segment(
    cloud: &Path,
    g: usize,
    out: &Path,
    features: Option<&Path>,
    samples: usize,
    fpfh: FpfhParams,
    seed: u64,
    format: Format,
) -> Result<String> {
    let raw = read_cloud(cloud)?;
    let (norm, pose) = raw.normalized();
    let f = features_for(&norm, features, fpfh)?;
    let params = SymmetryParams {
        n_samples: samples,
        k_neighbors: None,
        seed,
    };
    let split = symmetry_split(&norm, &f, g, &params)?;
    // labeled output in the input coordinates
    write_ply_with_labels(out, &apply_pose(&norm, &pose), "class", split.assignment())?;
    let o = SegmentOut {
        classes: split.classes(),
        sizes: split.sizes(),
        evenness: split.evenness(),
        out: out.to_path_buf(),
    };
    Ok(match format {
        Format::Json => to_json(&o),
        Format::Table => format!(
            "classes {}  sizes {:?}  evenness {:.4}  -> {}\n",
            o.classes,
            o.sizes,
            o.evenness,
            o.out.display()
        ),
    })
}

fn run(cli: Cli) -> Result<String> {
    let seed = cli.seed.unwrap_or(0);
    let format = cli.format;
    match cli.command {
        Command::Synth { spec, out } => synth(&spec, &out, cli.seed, format),
        Command::Extract { cloud, out, fpfh } => extract(&cloud, &out, fpfh.params(), format),
        Command::Index {
            manifest,
            fpfh,
            split_samples,
        } => index(&manifest, fpfh.params(), split_samples, seed, format),
        Command::Retrieve {
            query,
            index,
            manifest,
            m,
            fpfh,
        } => retrieve_cmd(&query, index.as_deref(), manifest.as_deref(), m, fpfh.params(), format),
        Command::Register {
            query,
            model,
            symmetry,
            query_features,
            model_features,
            ransac,
            fpfh,
        } => register(
            &query,
            &model,
            symmetry,
            query_features.as_deref(),
            model_features.as_deref(),
            ransac,
            fpfh.params(),
            seed,
            format,
        ),
        Command::Evaluate { config, out } => evaluate(&config, out.as_deref(), cli.seed, format),
        Command::Segment {
            cloud,
            classes,
            out,
            features,
            samples,
            fpfh,
        } => segment(&cloud, classes, &out, features.as_deref(), samples, fpfh.params(), seed, format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
