use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use m2ppo::encoder::action_cell;
use m2ppo::engine::{Board, LevelPack, LevelSpec, N_CELLS};
use m2ppo::eval::{self, EvalConfig, EvalReport, HumanData, NetworkModel};
use m2ppo::nn::Checkpoint;
use m2ppo::ppo::{PpoConfig, Trainer};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "m2ppo", version, about = "Train and evaluate PPO agents on match-2 puzzle levels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML); defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated level ids, overriding the config
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; resumes when --checkpoint is given
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Step budget, overriding the config (useful when resuming)
        #[arg(long)]
        total_steps: Option<u64>,
    },
    /// Evaluate a checkpoint alongside the random baseline
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate the uniform random policy only
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Print a level's starting board, optionally replaying actions
    InspectLevel {
        /// Level file
        level: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One action per line: a cell index, or `row col`
        #[arg(long)]
        actions_file: Option<PathBuf>,
    },
    /// Check every level file in a directory (bundled levels if omitted)
    ValidatePack { dir: Option<PathBuf> },
    /// Merge evaluation reports in a directory into CSV and SVG files
    Report {
        input_dir: PathBuf,
        #[arg(long)]
        human_csv: Option<PathBuf>,
        /// Defaults to the input directory
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

// Library errors often embed their source already, so skip causes that are
// already part of the message.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', "; ")
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { common, checkpoint, total_steps } => train(common, checkpoint, total_steps),
        Command::Eval { common, checkpoint } => evaluate(common, Some(checkpoint)),
        Command::Baseline { common } => evaluate(common, None),
        Command::InspectLevel { level, seed, actions_file } => inspect(&level, seed, actions_file.as_deref()),
        Command::ValidatePack { dir } => validate_pack(dir.as_deref()),
        Command::Report { input_dir, human_csv, out_dir } => {
            report(&input_dir, human_csv.as_deref(), out_dir.as_deref().unwrap_or(&input_dir))
        }
    }
}

fn train(common: Common, checkpoint: Option<PathBuf>, total_steps: Option<u64>) -> Result<()> {
    let mut trainer = match checkpoint {
        Some(ck) => {
            if common.config.is_some() || common.seed.is_some() || common.levels.is_some() {
                bail!("--config, --seed and --levels cannot change a resumed run");
            }
            Trainer::resume(&ck, Some(&common.out_dir), total_steps)
                .with_context(|| format!("resuming from {}", ck.display()))?
        }
        None => {
            let mut cfg = match &common.config {
                Some(p) => PpoConfig::load(p)?,
                None => PpoConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(l) = common.levels {
                cfg.train_levels = l;
            }
            if let Some(t) = total_steps {
                cfg.total_steps = t;
            }
            Trainer::new(cfg, Some(&common.out_dir))?
        }
    };
    while !trainer.is_done() {
        let row = trainer.step_update()?.row;
        eprintln!(
            "update {} step {} reward {} entropy {:.3} invalid {:.3}{}",
            row.update,
            row.global_step,
            row.rolling_reward.map_or("-".into(), |r| format!("{r:.3}")),
            row.entropy,
            row.invalid_rate,
            if row.stuck { " stuck" } else { "" }
        );
    }
    let summary = trainer.run()?;
    println!(
        "updates {} steps {}{} checkpoint {}",
        summary.updates,
        summary.global_step,
        summary.halted.map(|h| format!(" halted {h}")).unwrap_or_default(),
        summary.final_checkpoint.map(|p| p.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

fn eval_config(common: &Common) -> Result<EvalConfig> {
    let mut cfg = match &common.config {
        Some(p) => EvalConfig::load(p)?,
        None => EvalConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(l) = &common.levels {
        cfg.levels = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn evaluate(common: Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = eval_config(&common)?;
    let pack = cfg.pack()?;
    let mut models = Vec::new();
    let file = match &checkpoint {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
            let name = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            models.push(eval::evaluate(&NetworkModel::new(name, ck.params), &pack, &cfg)?);
            "eval_report.json"
        }
        None => "baseline_report.json",
    };
    models.push(eval::random_baseline(&pack, &cfg)?);
    let report = EvalReport { config: cfg, models };
    std::fs::create_dir_all(&common.out_dir)?;
    std::fs::write(common.out_dir.join(file), report.to_json())?;
    eval::emit_report(&report.models, None, &common.out_dir, true)?;
    for m in &report.models {
        for l in &m.levels {
            println!(
                "{} level {} competence {} completion {:.3}",
                m.name,
                l.level,
                l.competence.map_or("-".into(), |c| format!("{c:.3}")),
                l.completion_rate
            );
        }
    }
    Ok(())
}

fn parse_actions(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let bad = || anyhow::anyhow!("actions line {}: `{line}`", i + 1);
        let action = match parts[..] {
            [idx] => idx.parse::<usize>().map_err(|_| bad())?,
            [r, c] => {
                let (r, c) = (r.parse::<usize>().map_err(|_| bad())?, c.parse::<usize>().map_err(|_| bad())?);
                m2ppo::encoder::action_index(r, c).map_err(|_| bad())?
            }
            _ => return Err(bad()),
        };
        if action >= N_CELLS {
            return Err(bad());
        }
        out.push(action);
    }
    Ok(out)
}

fn inspect(level: &Path, seed: u64, actions_file: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(level).with_context(|| format!("reading {}", level.display()))?;
    let spec = LevelSpec::parse(&text).with_context(|| level.display().to_string())?;
    let mut board = Board::load(&spec, seed)?;
    print!("{}", board.render());
    let Some(path) = actions_file else { return Ok(()) };
    let actions = parse_actions(&std::fs::read_to_string(path).with_context(|| path.display().to_string())?)?;
    let mut total = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        let (r, c) = action_cell(a)?;
        let result = board.apply_move(a).with_context(|| format!("step {}", i + 1))?;
        total += result.reward;
        println!(
            "step {} action {a} ({r},{c}) valid {} collected {} completed {} reward {} total {}",
            i + 1,
            result.valid,
            result.collected,
            result.completed,
            result.reward,
            total
        );
    }
    print!("{}", board.render());
    Ok(())
}

fn validate_pack(dir: Option<&Path>) -> Result<()> {
    let mut failures = 0;
    match dir {
        Some(dir) => {
            let results = LevelPack::check_dir(dir)?;
            if results.is_empty() {
                bail!("no level files in {}", dir.display());
            }
            let mut ids = std::collections::BTreeMap::new();
            for (path, result) in results {
                match result {
                    Ok(spec) => match ids.insert(spec.id, path.clone()) {
                        Some(other) => {
                            failures += 1;
                            println!("FAIL {}: id {} already used by {}", path.display(), spec.id, other.display());
                        }
                        None => println!("PASS {} (level {})", path.display(), spec.id),
                    },
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {}: {e}", path.display());
                    }
                }
            }
        }
        None => {
            for (name, text) in LevelPack::bundled_sources() {
                match LevelSpec::parse(text) {
                    Ok(spec) => println!("PASS {name} (level {})", spec.id),
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {name}: {e}");
                    }
                }
            }
        }
    }
    if failures > 0 {
        bail!("{failures} level file(s) failed validation");
    }
    Ok(())
}

fn report(input: &Path, human_csv: Option<&Path>, out_dir: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| input.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no report files (*.json) in {}", input.display());
    }
    let mut models = Vec::new();
    for p in &paths {
        let r = EvalReport::from_json(&std::fs::read_to_string(p)?).with_context(|| p.display().to_string())?;
        models.extend(r.models);
    }
    let human = human_csv.map(HumanData::load).transpose()?;
    let files = eval::emit_report(&models, human.as_ref(), out_dir, true)?;
    println!("{}", files.completion.display());
    Ok(())
}
