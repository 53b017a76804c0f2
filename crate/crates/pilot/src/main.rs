use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pilot::corpus::{read_jsonl, read_ratings_csv, GroupKey, RatingRecord};
use pilot::pipeline::{
    evaluate_corpus, generate_corpus, load_personas, load_provider_config, write_report, RunConfig,
};
use pilot::provider::Gateway;
use pilot::schema::{
    average_profiles, parse_profile, serialize_profile, variation_report, PilotProfile,
};
use pilot::stats::{kruskal_wallis, likert_summary, one_way_anova, DegreesOfFreedom, RATING_METRICS};

#[derive(Parser)]
#[command(name = "pilot", version, about = "Persona steering and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile elicitation, averaging, validation, and variation checks
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// Generate a response corpus for the configured experiment matrix
    Generate(GenerateArgs),
    /// Evaluate a corpus into a metrics report
    Evaluate(EvaluateArgs),
    /// Likert summary and significance statistics over a ratings file
    Stats(StatsArgs),
}

#[derive(Subcommand)]
enum ProfileAction {
    /// Elicit one profile per catalog persona through the provider
    Elicit {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the emitted profile files
        #[arg(long)]
        out: PathBuf,
    },
    /// Average sub-persona profiles into one base-persona profile
    Average {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a profile file against the canonical schema
    Validate { path: PathBuf },
    /// Check cross-profile variation against the stability-tier limits
    Variation {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Corpus path; defaults to the config's corpus_out
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated grouping fields, e.g. "condition,model_id"
    #[arg(long, default_value = "condition,model_id")]
    group_by: String,
    /// Report path; defaults to the config's report_out
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    ratings: PathBuf,
    /// Factor to group by: rater_id, or a corpus field (condition,
    /// model_id, content_type, base_persona) when --corpus is given
    #[arg(long)]
    factor: String,
    /// Corpus used to resolve response_id -> factor level
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Restrict the significance tests to one metric
    #[arg(long)]
    metric: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Profile { action } => run_profile(action),
        Command::Generate(args) => run_generate(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Stats(args) => run_stats(args),
    }
}

fn load_profiles(paths: &[PathBuf]) -> anyhow::Result<Vec<PilotProfile>> {
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)
                .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", p.display()))?;
            parse_profile(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .collect()
}

fn run_profile(action: ProfileAction) -> anyhow::Result<()> {
    match action {
        ProfileAction::Elicit { config, out } => {
            let config = RunConfig::load(&config)?;
            let provider = load_provider_config(&config.provider)?;
            let gateway = Gateway::from_config(&provider)?;
            let personas = load_personas(&config.persona_catalog)?;
            fs::create_dir_all(&out)?;
            let analyzer = config
                .models
                .first()
                .ok_or_else(|| anyhow::anyhow!("config has no models"))?;
            for persona in &personas {
                let profile = gateway.elicit_profile(
                    &persona.id,
                    std::slice::from_ref(&persona.description),
                    analyzer,
                )?;
                let path = out.join(format!("{}.json", persona.id));
                fs::write(&path, serialize_profile(&profile))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        ProfileAction::Average { inputs, out } => {
            let profiles = load_profiles(&inputs)?;
            let averaged = average_profiles(&profiles)?;
            fs::write(&out, serialize_profile(&averaged))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        ProfileAction::Validate { path } => {
            let profiles = load_profiles(std::slice::from_ref(&path))?;
            println!(
                "{}: valid profile for persona '{}'",
                path.display(),
                profiles[0].persona_id
            );
            Ok(())
        }
        ProfileAction::Variation { paths } => {
            let profiles = load_profiles(&paths)?;
            let report = variation_report(&profiles)?;
            if report.violations.is_empty() {
                println!("no tier violations across {} profiles", profiles.len());
                Ok(())
            } else {
                for v in &report.violations {
                    println!(
                        "violation: {} varies {:.2} > allowed {:.2}",
                        v.path, v.observed, v.allowed
                    );
                }
                anyhow::bail!("{} tier violation(s)", report.violations.len())
            }
        }
    }
}

fn run_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let provider = load_provider_config(&config.provider)?;
    let gateway = Gateway::from_config(&provider)?;
    let corpus = generate_corpus(&config, &gateway)?;
    let failed = corpus.iter().filter(|r| r.error.is_some()).count();
    println!(
        "corpus {}: {} records ({} failed)",
        config.corpus_out.display(),
        corpus.len(),
        failed
    );
    if failed > 0 {
        anyhow::bail!("{failed} generation failure(s) recorded in the corpus");
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let corpus_path = args.corpus.unwrap_or_else(|| config.corpus_out.clone());
    let corpus = read_jsonl(&corpus_path)?;
    let key = GroupKey::parse(&args.group_by)?;
    let report = evaluate_corpus(&corpus, &key, &config)?;
    let out = args.out.unwrap_or_else(|| config.report_out.clone());
    write_report(&out, &report)?;
    println!("report {}: {} groups", out.display(), report.groups.len());
    Ok(())
}

fn level_lookup(
    args: &StatsArgs,
    ratings: &[RatingRecord],
) -> anyhow::Result<HashMap<String, String>> {
    if args.factor == "rater_id" {
        return Ok(ratings
            .iter()
            .map(|r| (r.response_id.clone(), r.rater_id.clone()))
            .collect());
    }
    let corpus_path = args.corpus.as_ref().ok_or_else(|| {
        anyhow::anyhow!("factor '{}' needs --corpus to resolve levels", args.factor)
    })?;
    let corpus = read_jsonl(corpus_path)?;
    let mut map = HashMap::new();
    for record in &corpus {
        let level = match args.factor.as_str() {
            "condition" => record.condition.to_string(),
            "model_id" => record.model_id.clone(),
            "content_type" => record.content_type.as_str().to_owned(),
            "base_persona" => record.base_persona.clone(),
            other => anyhow::bail!("unknown factor: {other}"),
        };
        map.insert(record.id.clone(), level);
    }
    Ok(map)
}

fn run_stats(args: StatsArgs) -> anyhow::Result<()> {
    let ratings = read_ratings_csv(&args.ratings)?;
    let levels = level_lookup(&args, &ratings)?;

    let table = likert_summary(&ratings, |r| levels.get(&r.response_id).cloned())?;
    println!("{:<20} {:<20} {:>8} {:>8} {:>5}", "level", "metric", "mean", "sd", "n");
    for ((level, metric), cell) in &table {
        let sd = cell
            .sd
            .map_or_else(|| "-".to_owned(), |s| format!("{s:.3}"));
        println!(
            "{level:<20} {metric:<20} {:>8.3} {sd:>8} {:>5}",
            cell.mean, cell.n
        );
    }

    let metrics: Vec<&str> = match &args.metric {
        Some(m) => vec![m.as_str()],
        None => RATING_METRICS.to_vec(),
    };
    for metric in metrics {
        let mut by_level: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        for rating in &ratings {
            let Some(level) = levels.get(&rating.response_id) else {
                continue;
            };
            let score = rating
                .score(metric)
                .ok_or_else(|| anyhow::anyhow!("unknown rating metric: {metric}"))?;
            by_level.entry(level.clone()).or_default().push(score as f64);
        }
        let groups: Vec<Vec<f64>> = by_level.into_values().collect();

        let anova = one_way_anova(&groups)?;
        let DegreesOfFreedom::F(d1, d2) = anova.df else {
            unreachable!("ANOVA yields F degrees of freedom")
        };
        println!("{metric}: F({d1},{d2}) = {:.4}", anova.statistic);

        let kw = kruskal_wallis(&groups)?;
        let DegreesOfFreedom::H(dh) = kw.df else {
            unreachable!("Kruskal-Wallis yields H degrees of freedom")
        };
        println!("{metric}: H(df={dh}) = {:.4}", kw.statistic);
    }
    Ok(())
}
